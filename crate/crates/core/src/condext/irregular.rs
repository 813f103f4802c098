use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A `(2k-1) x d` array over rows `-(k-1)..=(k-1)` with the peak entry
/// `(0, 0)` removed. Columns are 0-based; column 0 is the conditioning variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrregularMatrix {
    pub k: usize,
    pub d: usize,
    pub values: Vec<f64>,
}

impl IrregularMatrix {
    pub fn len_for(k: usize, d: usize) -> usize {
        (2 * k - 1) * d - 1
    }

    pub fn filled(k: usize, d: usize, v: f64) -> Self {
        Self {
            k,
            d,
            values: vec![v; Self::len_for(k, d)],
        }
    }

    pub fn from_values(k: usize, d: usize, values: Vec<f64>) -> Result<Self> {
        if k == 0 || d == 0 || values.len() != Self::len_for(k, d) {
            return Err(Error::invalid(format!(
                "irregular matrix of order {k} with {d} columns needs {} entries",
                if k == 0 || d == 0 { 0 } else { Self::len_for(k, d) }
            )));
        }
        Ok(Self { k, d, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Position of entry `(i, j)` in `values`.
    ///
    /// # Panics
    /// On the missing peak entry `(0, 0)` or an index outside the matrix.
    pub fn position(&self, i: isize, j: usize) -> usize {
        let km = self.k as isize - 1;
        assert!(i.abs() <= km && j < self.d, "entry ({i}, {j}) outside the matrix");
        assert!(!(i == 0 && j == 0), "the peak entry (0, 0) is not part of the irregular matrix");
        let flat = ((i + km) as usize) * self.d + j;
        if i > 0 || (i == 0 && j > 0) {
            flat - 1
        } else {
            flat
        }
    }

    pub fn get(&self, i: isize, j: usize) -> f64 {
        self.values[self.position(i, j)]
    }

    pub fn set(&mut self, i: isize, j: usize, v: f64) {
        let p = self.position(i, j);
        self.values[p] = v;
    }

    /// Entries in storage order.
    pub fn entries(&self) -> Vec<(isize, usize)> {
        let km = self.k as isize - 1;
        let mut out = Vec::with_capacity(self.len());
        for i in -km..=km {
            for j in 0..self.d {
                if !(i == 0 && j == 0) {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

/// Location and scale parameters of the peak model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HtParams {
    pub alpha: IrregularMatrix,
    pub beta: IrregularMatrix,
}

impl HtParams {
    pub fn new(alpha: IrregularMatrix, beta: IrregularMatrix) -> Result<Self> {
        if alpha.k != beta.k || alpha.d != beta.d {
            return Err(Error::invalid("alpha and beta shapes differ"));
        }
        if let Some(a) = alpha.values.iter().find(|a| !(a.abs() <= 1.0)) {
            return Err(Error::invalid(format!("alpha entry {a} outside [-1, 1]")));
        }
        if let Some(b) = beta.values.iter().find(|b| !(**b < 1.0)) {
            return Err(Error::invalid(format!("beta entry {b} is not below 1")));
        }
        Ok(Self { alpha, beta })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entry_count_and_order() {
        for k in 1..5 {
            for d in 1..4 {
                let m = IrregularMatrix::filled(k, d, 0.0);
                assert_eq!(m.len(), (2 * k - 1) * d - 1);
                for (p, (i, j)) in m.entries().into_iter().enumerate() {
                    assert_eq!(m.position(i, j), p);
                }
            }
        }
    }

    #[test]
    #[should_panic(expected = "peak entry")]
    fn peak_entry_is_absent() {
        IrregularMatrix::filled(2, 2, 0.0).get(0, 0);
    }

    #[test]
    fn bounds_checked_on_construction() {
        let ok = IrregularMatrix::filled(2, 2, 0.5);
        assert!(HtParams::new(ok.clone(), ok.clone()).is_ok());
        assert!(HtParams::new(IrregularMatrix::filled(2, 2, 1.1), ok.clone()).is_err());
        assert!(HtParams::new(ok, IrregularMatrix::filled(2, 2, 1.0)).is_err());
        assert!(IrregularMatrix::from_values(2, 2, vec![0.0; 4]).is_err());
    }
}
