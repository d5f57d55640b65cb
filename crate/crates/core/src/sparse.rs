use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sparse coefficient vector stored as sorted `(index, value)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    pub len: usize,
    pub entries: Vec<(usize, f64)>,
}

impl SparseVector {
    pub fn zeros(len: usize) -> Self {
        Self {
            len,
            entries: Vec::new(),
        }
    }

    /// Keeps the exactly-nonzero entries of `dense`.
    pub fn from_dense(dense: &[f64]) -> Self {
        Self {
            len: dense.len(),
            entries: dense
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(j, v)| (j, *v))
                .collect(),
        }
    }

    pub fn from_entries(len: usize, mut entries: Vec<(usize, f64)>) -> Result<Self> {
        entries.sort_by_key(|e| e.0);
        if entries.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidArgument("duplicate sparse index".into()));
        }
        if let Some((j, _)) = entries.iter().find(|(j, _)| *j >= len) {
            return Err(Error::InvalidArgument(format!(
                "index {j} out of range for length {len}"
            )));
        }
        entries.retain(|(_, v)| *v != 0.0);
        Ok(Self { len, entries })
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.len];
        for &(j, v) in &self.entries {
            out[j] = v;
        }
        out
    }

    pub fn nonzeros(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, j: usize) -> f64 {
        self.entries
            .binary_search_by_key(&j, |e| e.0)
            .map_or(0.0, |pos| self.entries[pos].1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_round_trip_drops_zeros() {
        let s = SparseVector::from_dense(&[0.0, 1.5, 0.0, -2.0]);
        assert_eq!(s.nonzeros(), 2);
        assert_eq!(s.get(3), -2.0);
        assert_eq!(s.get(0), 0.0);
        assert_eq!(s.to_dense(), vec![0.0, 1.5, 0.0, -2.0]);
        assert!(SparseVector::from_entries(2, vec![(2, 1.0)]).is_err());
    }
}
