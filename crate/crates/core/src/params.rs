//! Flat parameter storage with named tensor views and a plain-text
//! checkpoint container.
//!
//! Checkpoint layout (UTF-8, line oriented):
//!
//! ```text
//! COTFUSE-CKPT 1
//! meta <key> <value to end of line>
//! tensor <name> <dim0> [<dim1> ...]
//! <space separated values, row-major, shortest round-trip decimal>
//! end
//! ```
//!
//! `meta` lines come first, then one `tensor` header per tensor, each
//! followed by exactly one line of values. Values use Rust's shortest
//! round-trip float formatting, so a write/read cycle is bit exact.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &str = "COTFUSE-CKPT 1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A set of named tensors stored contiguously in one `Vec<f64>`.
///
/// Gradients share the layout of the parameters they belong to, so a
/// gradient buffer is just another `ParamSet` built with [`ParamSet::zeros_like`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    specs: Vec<TensorSpec>,
    data: Vec<f64>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a tensor filled by `init` and returns its offset.
    pub fn push(&mut self, name: &str, shape: &[usize], mut init: impl FnMut() -> f64) -> usize {
        let offset = self.data.len();
        let len: usize = shape.iter().product();
        self.data.extend((0..len).map(|_| init()));
        self.specs.push(TensorSpec {
            name: name.to_string(),
            shape: shape.to_vec(),
            offset,
        });
        offset
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            specs: self.specs.clone(),
            data: vec![0.0; self.data.len()],
        }
    }

    pub fn specs(&self) -> &[TensorSpec] {
        &self.specs
    }

    pub fn spec(&self, name: &str) -> Option<&TensorSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.spec(name)
            .map(|s| &self.data[s.offset..s.offset + s.len()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let (offset, len) = self.spec(name).map(|s| (s.offset, s.len()))?;
        Some(&mut self.data[offset..offset + len])
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_layout(&self, other: &ParamSet) -> bool {
        self.specs == other.specs
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Parameters plus free-form metadata, as persisted on disk.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub params: ParamSet,
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(MAGIC);
        out.push('\n');
        for (k, v) in &self.meta {
            let _ = writeln!(out, "meta {k} {v}");
        }
        for spec in self.params.specs() {
            out.push_str("tensor ");
            out.push_str(&spec.name);
            for d in &spec.shape {
                let _ = write!(out, " {d}");
            }
            out.push('\n');
            let values = &self.params.data()[spec.offset..spec.offset + spec.len()];
            for (i, v) in values.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                let _ = write!(out, "{v:?}");
            }
            out.push('\n');
        }
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let bad = |line: usize, message: &str| Error::Parse {
            line,
            message: message.to_string(),
        };
        match lines.next() {
            Some((_, l)) if l == MAGIC => {}
            _ => return Err(bad(1, "missing checkpoint header")),
        }
        let mut ckpt = Checkpoint::default();
        let mut saw_end = false;
        while let Some((no, line)) = lines.next() {
            if line == "end" {
                saw_end = true;
                break;
            }
            if let Some(rest) = line.strip_prefix("meta ") {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                ckpt.meta.insert(k.to_string(), v.to_string());
            } else if let Some(rest) = line.strip_prefix("tensor ") {
                let mut parts = rest.split_whitespace();
                let name = parts.next().ok_or_else(|| bad(no, "tensor without name"))?;
                let shape = parts
                    .map(|p| p.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| bad(no, "bad tensor dimension"))?;
                let (vno, values) = lines
                    .next()
                    .ok_or_else(|| bad(no + 1, "missing tensor values"))?;
                let values = values
                    .split_whitespace()
                    .map(|v| v.parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| bad(vno, "bad tensor value"))?;
                let expected: usize = shape.iter().product();
                if values.len() != expected {
                    return Err(bad(
                        vno,
                        &format!("tensor `{name}` expects {expected} values, found {}", values.len()),
                    ));
                }
                let mut it = values.into_iter();
                ckpt.params.push(name, &shape, || it.next().unwrap_or(0.0));
            } else {
                return Err(bad(no, "unrecognized line"));
            }
        }
        if !saw_end {
            return Err(Error::Checkpoint("truncated checkpoint (no `end` line)".into()));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_text_round_trip_is_bit_exact() {
        let mut params = ParamSet::new();
        let mut x = 0.1f64;
        params.push("w", &[2, 3], || {
            x = x * 3.7 + 1e-17;
            x
        });
        params.push("b", &[3], || -1.0 / 3.0);
        let mut ckpt = Checkpoint {
            params,
            ..Default::default()
        };
        ckpt.meta.insert("kind".into(), "test model".into());
        let back = Checkpoint::from_text(&ckpt.to_text()).unwrap();
        assert_eq!(back, ckpt);
    }

    #[test]
    fn truncated_checkpoint_is_rejected() {
        let mut params = ParamSet::new();
        params.push("w", &[2], || 1.0);
        let text = Checkpoint {
            params,
            ..Default::default()
        }
        .to_text();
        let cut = text.trim_end_matches("end\n");
        assert!(Checkpoint::from_text(cut).is_err());
    }

    #[test]
    fn zeros_like_keeps_layout() {
        let mut p = ParamSet::new();
        p.push("a", &[4, 2], || 1.0);
        p.push("b", &[2], || 2.0);
        let g = p.zeros_like();
        assert!(g.same_layout(&p));
        assert!(g.data().iter().all(|&v| v == 0.0));
        assert_eq!(g.tensor("b").unwrap().len(), 2);
    }
}
