//! Observed entries in row-major order with row-chunked kernels.
//!
//! A fully observed matrix is stored without column indices; anything else
//! keeps one column index per entry. Both layouts visit entries in the same
//! order, so every kernel result is bit-identical between them.

use crate::error::{Error, Result};
use crate::par::{self, Execution, CHUNK};
use crate::types::DataMatrix;

#[derive(Clone, Debug, PartialEq)]
pub struct Observations {
    n: usize,
    p: usize,
    row_ptr: Vec<usize>,
    cols: Option<Vec<u32>>,
    values: Vec<f64>,
    col_counts: Vec<usize>,
}

impl Observations {
    /// Dense layout when every entry is observed, compressed otherwise.
    pub fn from_data(z: &DataMatrix) -> Self {
        if z.n_observed() == z.nrows() * z.ncols() {
            let (n, p) = (z.nrows(), z.ncols());
            Self {
                n,
                p,
                row_ptr: (0..=n).map(|i| i * p).collect(),
                cols: None,
                values: z.values().iter().copied().collect(),
                col_counts: vec![n; p],
            }
        } else {
            Self::from_data_sparse(z)
        }
    }

    /// Compressed layout regardless of the mask.
    pub fn from_data_sparse(z: &DataMatrix) -> Self {
        let (n, p) = (z.nrows(), z.ncols());
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut values = Vec::new();
        let mut col_counts = vec![0; p];
        row_ptr.push(0);
        for i in 0..n {
            for j in 0..p {
                if z.is_observed(i, j) {
                    cols.push(j as u32);
                    values.push(z.values()[[i, j]]);
                    col_counts[j] += 1;
                }
            }
            row_ptr.push(cols.len());
        }
        Self {
            n,
            p,
            row_ptr,
            cols: Some(cols),
            values,
            col_counts,
        }
    }

    /// Builds the store from 0-indexed (row, col, value) triples.
    pub fn from_triplets(n: usize, p: usize, entries: &[(usize, usize, f64)]) -> Result<Self> {
        if n == 0 || p == 0 {
            return Err(Error::Dimension(format!("empty {n}x{p} matrix")));
        }
        if p > u32::MAX as usize {
            return Err(Error::Dimension(format!("{p} columns exceed the supported range")));
        }
        let mut sorted: Vec<(usize, usize, f64)> = entries.to_vec();
        for &(i, j, v) in &sorted {
            if i >= n || j >= p {
                return Err(Error::Index {
                    row: i,
                    col: j,
                    nrows: n,
                    ncols: p,
                });
            }
            if !v.is_finite() {
                return Err(Error::Domain(format!("entry ({i}, {j}) is not finite")));
            }
        }
        sorted.sort_by_key(|&(i, j, _)| (i, j));
        if let Some(w) = sorted.windows(2).find(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1)) {
            return Err(Error::Domain(format!("duplicate entry ({}, {})", w[0].0, w[0].1)));
        }
        let mut row_ptr = vec![0; n + 1];
        let mut col_counts = vec![0; p];
        for &(i, j, _) in &sorted {
            row_ptr[i + 1] += 1;
            col_counts[j] += 1;
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(Self {
            n,
            p,
            row_ptr,
            cols: Some(sorted.iter().map(|e| e.1 as u32).collect()),
            values: sorted.iter().map(|e| e.2).collect(),
            col_counts,
        })
    }

    pub fn nrows(&self) -> usize {
        self.n
    }

    pub fn ncols(&self) -> usize {
        self.p
    }

    pub fn n_observed(&self) -> usize {
        self.values.len()
    }

    pub fn is_dense(&self) -> bool {
        self.cols.is_none()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row_count(&self, i: usize) -> usize {
        self.row_ptr[i + 1] - self.row_ptr[i]
    }

    pub fn col_count(&self, j: usize) -> usize {
        self.col_counts[j]
    }

    /// Entry index range of row `i`.
    #[inline]
    pub fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        self.row_ptr[i]..self.row_ptr[i + 1]
    }

    /// Column of entry `e`, which lies in row `i`.
    #[inline]
    pub fn col(&self, i: usize, e: usize) -> usize {
        match &self.cols {
            None => e - self.row_ptr[i],
            Some(c) => c[e] as usize,
        }
    }

    /// Whether (i, j) is observed.
    pub fn contains(&self, i: usize, j: usize) -> bool {
        match &self.cols {
            None => true,
            Some(c) => c[self.row_range(i)].binary_search(&(j as u32)).is_ok(),
        }
    }

    /// Per-row sums of the pair `f(i, e, j)`.
    pub fn row_sums2<F>(&self, exec: Execution, f: F) -> Vec<(f64, f64)>
    where
        F: Fn(usize, usize, usize) -> (f64, f64) + Sync + Send,
    {
        par::map_range(exec, self.n, |i| {
            let mut acc = (0.0, 0.0);
            for e in self.row_range(i) {
                let (a, b) = f(i, e, self.col(i, e));
                acc.0 += a;
                acc.1 += b;
            }
            acc
        })
    }

    /// Per-column sums of the pair `f(i, e, j)`, accumulated over fixed row
    /// chunks whose partials are added in chunk order.
    pub fn col_sums2<F>(&self, exec: Execution, f: F) -> Vec<(f64, f64)>
    where
        F: Fn(usize, usize, usize) -> (f64, f64) + Sync + Send,
    {
        let partials = par::map_range(exec, self.n.div_ceil(CHUNK), |c| {
            let mut acc = vec![(0.0, 0.0); self.p];
            for i in c * CHUNK..((c + 1) * CHUNK).min(self.n) {
                for e in self.row_range(i) {
                    let j = self.col(i, e);
                    let (a, b) = f(i, e, j);
                    acc[j].0 += a;
                    acc[j].1 += b;
                }
            }
            acc
        });
        let mut total = vec![(0.0, 0.0); self.p];
        for part in partials {
            for (t, v) in total.iter_mut().zip(part) {
                t.0 += v.0;
                t.1 += v.1;
            }
        }
        total
    }

    /// Per-row sums of `f(i, e, j)`.
    pub fn row_sums<F>(&self, exec: Execution, f: F) -> Vec<f64>
    where
        F: Fn(usize, usize, usize) -> f64 + Sync + Send,
    {
        self.row_sums2(exec, |i, e, j| (f(i, e, j), 0.0)).into_iter().map(|v| v.0).collect()
    }

    /// Per-column sums of `f(i, e, j)`.
    pub fn col_sums<F>(&self, exec: Execution, f: F) -> Vec<f64>
    where
        F: Fn(usize, usize, usize) -> f64 + Sync + Send,
    {
        self.col_sums2(exec, |i, e, j| (f(i, e, j), 0.0)).into_iter().map(|v| v.0).collect()
    }

    /// Σ over all entries of `f(i, e, j)`, reduced over fixed row chunks.
    pub fn entry_sum<F>(&self, exec: Execution, f: F) -> f64
    where
        F: Fn(usize, usize, usize) -> f64 + Sync + Send,
    {
        let partials = par::map_range(exec, self.n.div_ceil(CHUNK), |c| {
            let mut acc = 0.0;
            for i in c * CHUNK..((c + 1) * CHUNK).min(self.n) {
                for e in self.row_range(i) {
                    acc += f(i, e, self.col(i, e));
                }
            }
            acc
        });
        partials.into_iter().sum()
    }

    /// Sets `buf[e] = f(i, e, j, buf[e])` for every entry.
    pub fn update_entries<F>(&self, exec: Execution, buf: &mut [f64], f: F)
    where
        F: Fn(usize, usize, usize, f64) -> f64 + Sync + Send,
    {
        let mut pieces: Vec<(usize, &mut [f64])> = Vec::with_capacity(self.n.div_ceil(CHUNK));
        let mut rest = buf;
        for c in 0..self.n.div_ceil(CHUNK) {
            let lo = self.row_ptr[c * CHUNK];
            let hi = self.row_ptr[((c + 1) * CHUNK).min(self.n)];
            let (head, tail) = rest.split_at_mut(hi - lo);
            pieces.push((c, head));
            rest = tail;
        }
        par::for_each_mut(exec, &mut pieces, |_, (c, piece)| {
            let base = self.row_ptr[*c * CHUNK];
            for i in *c * CHUNK..((*c + 1) * CHUNK).min(self.n) {
                for e in self.row_range(i) {
                    let slot = &mut piece[e - base];
                    *slot = f(i, e, self.col(i, e), *slot);
                }
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn layouts_agree() {
        let z = DataMatrix::dense(array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap();
        let d = Observations::from_data(&z);
        let s = Observations::from_data_sparse(&z);
        assert!(d.is_dense() && !s.is_dense());
        let f = |i: usize, e: usize, j: usize| (i * 10 + j) as f64 * d.values()[e];
        assert_eq!(d.row_sums(Execution::Sequential, f), s.row_sums(Execution::Sequential, f));
        assert_eq!(d.col_sums(Execution::Parallel, f), s.col_sums(Execution::Sequential, f));
        assert_eq!(d.entry_sum(Execution::Parallel, f), s.entry_sum(Execution::Parallel, f));
    }

    #[test]
    fn masked_entries_are_skipped() {
        let z = DataMatrix::new(array![[1.0, 2.0], [3.0, 4.0]], array![[true, false], [false, false]]).unwrap();
        let s = Observations::from_data(&z);
        assert_eq!(s.n_observed(), 1);
        assert_eq!(s.row_count(1), 0);
        assert_eq!(s.col_count(0), 1);
        assert!(s.contains(0, 0) && !s.contains(0, 1));
    }

    #[test]
    fn triplets_are_sorted_and_checked() {
        let s = Observations::from_triplets(2, 3, &[(1, 2, 5.0), (0, 1, 1.0), (1, 0, 2.0)]).unwrap();
        assert_eq!(s.values(), &[1.0, 2.0, 5.0]);
        assert_eq!(s.col(1, 2), 2);
        assert!(Observations::from_triplets(2, 2, &[(0, 0, 1.0), (0, 0, 2.0)]).is_err());
        assert!(Observations::from_triplets(2, 2, &[(2, 0, 1.0)]).is_err());
    }

    #[test]
    fn update_entries_touches_every_entry_once() {
        let n = 600;
        let z = DataMatrix::dense(ndarray::Array2::from_elem((n, 3), 1.0)).unwrap();
        let s = Observations::from_data(&z);
        let mut buf = vec![0.0; s.n_observed()];
        s.update_entries(Execution::Parallel, &mut buf, |i, _, j, v| v + (i * 3 + j) as f64);
        assert!(buf.iter().enumerate().all(|(e, &v)| v == e as f64));
    }
}
