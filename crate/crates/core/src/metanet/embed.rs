/// Frozen text encoder feeding the MetaNet.
pub trait EmbeddingProvider: Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Vec<f64>;
}

/// Seeded hashed bag-of-tokens embedder.
///
/// Each lowercase alphanumeric token (or `####`) maps to a fixed
/// pseudo-random vector in `[-1, 1]^dim`; a text embeds to the L2-normalized
/// sum of its token vectors. Empty text embeds to the zero vector.
#[derive(Debug, Clone)]
pub struct HashedBagEmbedder {
    dim: usize,
    seed: u64,
}

pub const DEFAULT_EMBED_DIM: usize = 64;

impl HashedBagEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim, seed }
    }

    fn token_component(&self, token: &str, j: usize) -> f64 {
        // FNV-1a over (seed, token, j)
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        feed(&self.seed.to_le_bytes());
        feed(token.as_bytes());
        feed(&(j as u64).to_le_bytes());
        // final avalanche so nearby j differ in high bits
        h ^= h >> 33;
        h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
        h ^= h >> 33;
        (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    }
}

impl Default for HashedBagEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_EMBED_DIM, 0)
    }
}

pub(crate) fn bag_tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !(c.is_alphanumeric() || c == '#'))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

impl EmbeddingProvider for HashedBagEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for token in bag_tokens(text) {
            for (j, x) in v.iter_mut().enumerate() {
                *x += self.token_component(&token, j);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_unit_norm() {
        let e = HashedBagEmbedder::new(16, 3);
        let a = e.embed("Ava has 3 apples");
        assert_eq!(a, e.embed("ava has 3 apples"));
        assert!((a.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        assert_ne!(a, HashedBagEmbedder::new(16, 4).embed("ava has 3 apples"));
        assert!(e.embed("").iter().all(|&x| x == 0.0));
    }

    #[test]
    fn order_does_not_matter() {
        let e = HashedBagEmbedder::default();
        assert_eq!(e.embed("b a c"), e.embed("c b a"));
    }
}
