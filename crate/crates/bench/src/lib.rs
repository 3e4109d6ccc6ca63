//! Seeded inputs shared by the benchmarks under `benches/`.

use rand::Rng;

use cotfuse_core::numeric::seeded_rng;

/// `n` random unit vectors of length `dim`.
pub fn unit_vectors(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = seeded_rng(seed, 0);
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect()
}

/// `k` well separated blobs of `per` points each in `dim` dimensions.
pub fn blobs(k: usize, per: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = seeded_rng(seed, 1);
    (0..k * per)
        .map(|i| {
            let mut p: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            p[(i / per) % dim] += 8.0;
            p
        })
        .collect()
}
