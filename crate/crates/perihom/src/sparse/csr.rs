use crate::{Error, Result};
use std::io::Write;

/// Sparse matrix in compressed-row storage.
///
/// The stored pattern is exactly the structural (assembly) pattern; entries
/// whose value happens to be zero are kept, nothing else is.
#[derive(Debug, Clone)]
pub struct SparseOperator {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    values: Vec<f64>,
    symmetric: bool,
}

impl SparseOperator {
    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[u32] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Whether the symmetry flag is set (checked at construction).
    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let lo = self.row_ptr[r];
        let hi = self.row_ptr[r + 1];
        match self.col_idx[lo..hi].binary_search(&(c as u32)) {
            Ok(p) => self.values[lo + p],
            Err(_) => 0.0,
        }
    }

    /// y = A x
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for r in 0..self.nrows {
            let mut s = 0.0;
            for p in self.row_ptr[r]..self.row_ptr[r + 1] {
                s += self.values[p] * x[self.col_idx[p] as usize];
            }
            y[r] = s;
        }
    }

    /// y = A^T x
    pub fn matvec_transpose(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.nrows);
        assert_eq!(y.len(), self.ncols);
        y.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..self.nrows {
            let xr = x[r];
            if xr != 0.0 {
                for p in self.row_ptr[r]..self.row_ptr[r + 1] {
                    y[self.col_idx[p] as usize] += self.values[p] * xr;
                }
            }
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec(x, &mut y);
        y
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols))
            .map(|r| self.get(r, r))
            .collect()
    }

    /// Largest |A[r,c] - A[c,r]| over the stored pattern.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for r in 0..self.nrows {
            for p in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col_idx[p] as usize;
                if c > r {
                    worst = worst.max((self.values[p] - self.get(c, r)).abs());
                }
            }
        }
        worst
    }

    /// C = A + theta * B, requiring equal shapes (patterns may differ).
    pub fn add_scaled(&self, theta: f64, other: &SparseOperator) -> Result<SparseOperator> {
        if self.nrows != other.nrows || self.ncols != other.ncols {
            return Err(Error::shape("operator sum with mismatched shapes"));
        }
        let mut b = TripletBuilder::new(self.nrows, self.ncols);
        for r in 0..self.nrows {
            for p in self.row_ptr[r]..self.row_ptr[r + 1] {
                b.add(r, self.col_idx[p] as usize, self.values[p]);
            }
            for p in other.row_ptr[r]..other.row_ptr[r + 1] {
                b.add(r, other.col_idx[p] as usize, theta * other.values[p]);
            }
        }
        Ok(b.build())
    }

    /// Plain-text matrix-market (coordinate, real, general) export.
    pub fn write_matrix_market(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
        for r in 0..self.nrows {
            for p in self.row_ptr[r]..self.row_ptr[r + 1] {
                writeln!(w, "{} {} {:.17e}", r + 1, self.col_idx[p] + 1, self.values[p])?;
            }
        }
        Ok(())
    }

    pub(crate) fn from_parts(
        nrows: usize,
        ncols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<u32>,
        values: Vec<f64>,
    ) -> SparseOperator {
        let mut m = SparseOperator {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
            symmetric: false,
        };
        m.symmetric = m.nrows == m.ncols && m.max_asymmetry() <= 1e-12;
        m
    }
}

/// Accumulates (row, col, value) triplets and compresses to CSR, summing
/// duplicates. Deterministic for a fixed insertion order.
pub struct TripletBuilder {
    nrows: usize,
    ncols: usize,
    entries: Vec<(u32, u32, f64)>,
}

impl TripletBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        TripletBuilder {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    pub fn with_capacity(nrows: usize, ncols: usize, cap: usize) -> Self {
        TripletBuilder {
            nrows,
            ncols,
            entries: Vec::with_capacity(cap),
        }
    }

    #[inline]
    pub fn add(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.nrows && c < self.ncols);
        self.entries.push((r as u32, c as u32, v));
    }

    pub fn build(mut self) -> SparseOperator {
        self.entries
            .sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; self.nrows + 1];
        let mut col_idx = Vec::with_capacity(self.entries.len());
        let mut values = Vec::with_capacity(self.entries.len());
        let mut it = self.entries.iter().peekable();
        while let Some(&(r, c, v)) = it.next() {
            let mut sum = v;
            while let Some(&&(r2, c2, v2)) = it.peek() {
                if r2 == r && c2 == c {
                    sum += v2;
                    it.next();
                } else {
                    break;
                }
            }
            col_idx.push(c);
            values.push(sum);
            row_ptr[r as usize + 1] += 1;
        }
        for r in 0..self.nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        SparseOperator::from_parts(self.nrows, self.ncols, row_ptr, col_idx, values)
    }
}
