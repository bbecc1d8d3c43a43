use serde::{Deserialize, Serialize};

use super::ChainError;

/// Row sums and column sums are compared against 1 with this slack.
pub const SUM_TOLERANCE: f64 = 1e-12;

/// Sub-stochastic routing matrix over states `0..m`, with the exit
/// probability to the absorbing state implied by each row deficit.
///
/// Stored row-compressed so that truncations of countable chains with
/// thousands of states stay cheap. Rows are sorted by column and hold no
/// explicit zeros, which makes structural equality meaningful.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FiniteChainDocument", into = "FiniteChainDocument")]
pub struct RoutingMatrix {
    m: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl RoutingMatrix {
    pub fn zeros(m: usize) -> Self {
        Self {
            m,
            row_ptr: vec![0; m + 1],
            cols: Vec::new(),
            vals: Vec::new(),
        }
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Result<Self, ChainError> {
        let m = rows.len();
        let sparse = rows
            .iter()
            .enumerate()
            .map(|(i, row)| {
                if row.len() != m {
                    return Err(ChainError::Shape {
                        row: i,
                        len: row.len(),
                        expected: m,
                    });
                }
                Ok(row.iter().copied().enumerate().collect::<Vec<_>>())
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_sparse_rows(m, sparse)
    }

    /// Builds a matrix from per-row `(column, probability)` lists. Duplicate
    /// columns are summed and zero entries dropped.
    pub fn from_sparse_rows(m: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self, ChainError> {
        if rows.len() != m {
            return Err(ChainError::Shape {
                row: rows.len(),
                len: rows.len(),
                expected: m,
            });
        }
        let mut row_ptr = Vec::with_capacity(m + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for (i, mut row) in rows.into_iter().enumerate() {
            row.sort_by_key(|&(j, _)| j);
            let mut sum = 0.0;
            let start = cols.len();
            for (j, p) in row {
                if j >= m {
                    return Err(ChainError::IndexOutOfRange { row: i, col: j, m });
                }
                if !p.is_finite() || p < 0.0 {
                    return Err(ChainError::InvalidEntry {
                        row: i,
                        col: j,
                        value: p,
                    });
                }
                sum += p;
                if p == 0.0 {
                    continue;
                }
                if cols.len() > start && *cols.last().unwrap() == j {
                    *vals.last_mut().unwrap() += p;
                } else {
                    cols.push(j);
                    vals.push(p);
                }
            }
            if sum > 1.0 + SUM_TOLERANCE {
                return Err(ChainError::RowSumExceedsOne { row: i, sum });
            }
            row_ptr.push(cols.len());
        }
        Ok(Self {
            m,
            row_ptr,
            cols,
            vals,
        })
    }

    /// Number of transient states (the absorbing state is not counted).
    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[range.clone()]
            .iter()
            .copied()
            .zip(self.vals[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[range.clone()].binary_search(&j) {
            Ok(k) => self.vals[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.vals[self.row_ptr[i]..self.row_ptr[i + 1]].iter().sum()
    }

    /// `p_{i∞} = 1 − Σ_j p_ij`, clamped at zero against rounding.
    pub fn exit(&self, i: usize) -> f64 {
        (1.0 - self.row_sum(i)).max(0.0)
    }

    pub fn exits(&self) -> Vec<f64> {
        (0..self.m).map(|i| self.exit(i)).collect()
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.m];
        for (&j, &p) in self.cols.iter().zip(&self.vals) {
            sums[j] += p;
        }
        sums
    }

    /// `out = x P` (row vector times matrix).
    pub fn left_mul_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.m);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                out[self.cols[k]] += xi * self.vals[k];
            }
        }
    }

    pub fn left_mul(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        self.left_mul_into(x, &mut out);
        out
    }

    /// `out = P x` (matrix times column vector).
    pub fn right_mul_into(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = (self.row_ptr[i]..self.row_ptr[i + 1])
                .map(|k| self.vals[k] * x[self.cols[k]])
                .sum();
        }
    }

    pub fn right_mul(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        self.right_mul_into(x, &mut out);
        out
    }

    /// Plain transpose; the result may fail the row-sum invariant, which is
    /// why [`super::dual_chain`] checks column sums first.
    pub(crate) fn transpose_unchecked(&self) -> Self {
        let mut counts = vec![0usize; self.m + 1];
        for &j in &self.cols {
            counts[j + 1] += 1;
        }
        for j in 0..self.m {
            counts[j + 1] += counts[j];
        }
        let row_ptr = counts.clone();
        let mut next = counts;
        let mut cols = vec![0; self.nnz()];
        let mut vals = vec![0.0; self.nnz()];
        for i in 0..self.m {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.cols[k];
                let slot = next[j];
                cols[slot] = i;
                vals[slot] = self.vals[k];
                next[j] += 1;
            }
        }
        Self {
            m: self.m,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; self.m]; self.m];
        for (i, row) in dense.iter_mut().enumerate() {
            for (j, p) in self.row(i) {
                row[j] = p;
            }
        }
        dense
    }

    /// True when every row sums to one, i.e. no state can exit.
    pub fn is_stochastic(&self) -> bool {
        (0..self.m).all(|i| (self.row_sum(i) - 1.0).abs() <= SUM_TOLERANCE)
    }

    /// Entry-by-entry 1-based document form used by the chain JSON format.
    pub fn to_document(&self) -> FiniteChainDocument {
        FiniteChainDocument {
            m: self.m,
            rows: (0..self.m)
                .map(|i| self.row(i).map(|(j, p)| (j + 1, p)).collect())
                .collect(),
        }
    }
}

/// `{"m": 2, "rows": [[[1, 0.5], [2, 0.5]], [[1, 0.3], [2, 0.3]]]}` with
/// 1-based state indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiniteChainDocument {
    pub m: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl From<RoutingMatrix> for FiniteChainDocument {
    fn from(p: RoutingMatrix) -> Self {
        p.to_document()
    }
}

impl TryFrom<FiniteChainDocument> for RoutingMatrix {
    type Error = ChainError;

    fn try_from(doc: FiniteChainDocument) -> Result<Self, Self::Error> {
        if doc.rows.len() != doc.m {
            return Err(ChainError::Shape {
                row: doc.rows.len(),
                len: doc.rows.len(),
                expected: doc.m,
            });
        }
        let rows = doc
            .rows
            .into_iter()
            .enumerate()
            .map(|(i, row)| {
                row.into_iter()
                    .map(|(j, p)| {
                        if j == 0 {
                            Err(ChainError::IndexOutOfRange {
                                row: i,
                                col: 0,
                                m: doc.m,
                            })
                        } else {
                            Ok((j - 1, p))
                        }
                    })
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        RoutingMatrix::from_sparse_rows(doc.m, rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference() -> RoutingMatrix {
        RoutingMatrix::from_dense(&[vec![0.5, 0.5], vec![0.3, 0.3]]).unwrap()
    }

    #[test]
    fn exits_and_sums() {
        let p = reference();
        assert_eq!(p.exits(), vec![0.0, 0.4]);
        assert_eq!(p.column_sums(), vec![0.8, 0.8]);
        assert_eq!(p.get(1, 0), 0.3);
        assert_eq!(p.left_mul(&[1.0, 1.0]), vec![0.8, 0.8]);
        assert_eq!(p.right_mul(&[1.0, 1.0]), vec![1.0, 0.6]);
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(matches!(
            RoutingMatrix::from_dense(&[vec![0.9, 0.2], vec![0.0, 0.0]]),
            Err(ChainError::RowSumExceedsOne { row: 0, .. })
        ));
        assert!(matches!(
            RoutingMatrix::from_dense(&[vec![-0.1]]),
            Err(ChainError::InvalidEntry { .. })
        ));
        assert!(matches!(
            RoutingMatrix::from_sparse_rows(1, vec![vec![(3, 0.1)]]),
            Err(ChainError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn transpose_is_structural() {
        let p = RoutingMatrix::from_dense(&[vec![0.1, 0.0, 0.4], vec![0.0, 0.0, 0.2], vec![0.3, 0.5, 0.0]])
            .unwrap();
        let t = p.transpose_unchecked();
        assert_eq!(t.get(2, 0), 0.4);
        assert_eq!(t.get(0, 2), 0.3);
        assert_eq!(t.transpose_unchecked(), p);
    }

    #[test]
    fn document_round_trip() {
        let p = reference();
        let doc = p.to_document();
        assert_eq!(doc.rows[1], vec![(1, 0.3), (2, 0.3)]);
        assert_eq!(RoutingMatrix::try_from(doc).unwrap(), p);
    }
}
