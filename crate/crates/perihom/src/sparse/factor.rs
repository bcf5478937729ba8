use super::{Ordering, SparseOperator};
use crate::{Error, Result};

/// Simplicial LDL^T / LDU factorization without pivoting.
///
/// Requires a structurally symmetric pattern (FEM matrices are; the
/// constructor symmetrizes the pattern with explicit zeros otherwise). When
/// the values are symmetric the U factor aliases L. No pivoting is performed,
/// so the factorization reports a breakdown on small pivots instead of
/// reordering rows; that is adequate for the coercive elliptic operators
/// assembled in this crate.
#[derive(Clone)]
pub struct LduFactor {
    n: usize,
    perm: Option<Vec<u32>>,
    col_ptr: Vec<usize>,
    row_idx: Vec<u32>,
    lx: Vec<f64>,
    /// Column-stored strictly-lower part of U (A = L D U^T); empty when U = L.
    ux: Vec<f64>,
    d: Vec<f64>,
    symmetric: bool,
}

impl LduFactor {
    pub fn new(a: &SparseOperator, ordering: Ordering) -> Result<LduFactor> {
        if a.nrows() != a.ncols() {
            return Err(Error::shape("factorization requires a square matrix"));
        }
        let n = a.nrows();
        let perm = ordering.permutation(n);
        let symmetric = a.is_symmetric();
        let b = match &perm {
            Some(p) => permute_symmetrized(a, p),
            None => symmetrize_pattern(a),
        };
        factorize(&b, symmetric).map(|(col_ptr, row_idx, lx, ux, d)| LduFactor {
            n,
            perm,
            col_ptr,
            row_idx,
            lx,
            ux,
            d,
            symmetric,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz_factor(&self) -> usize {
        self.lx.len()
    }

    /// Solves A x = b.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let mut z = self.apply_perm(b);
        self.forward(&mut z, &self.lx);
        for j in 0..self.n {
            z[j] /= self.d[j];
        }
        self.backward(&mut z, self.u_values());
        self.apply_perm_inv(&z)
    }

    /// Solves A^T x = b.
    pub fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let mut z = self.apply_perm(b);
        self.forward(&mut z, self.u_values());
        for j in 0..self.n {
            z[j] /= self.d[j];
        }
        self.backward(&mut z, &self.lx);
        self.apply_perm_inv(&z)
    }

    /// Signs of the pivots (positive, zero-ish, negative) for inertia checks.
    pub fn pivots(&self) -> &[f64] {
        &self.d
    }

    fn u_values(&self) -> &[f64] {
        if self.symmetric {
            &self.lx
        } else {
            &self.ux
        }
    }

    fn apply_perm(&self, b: &[f64]) -> Vec<f64> {
        match &self.perm {
            Some(p) => p.iter().map(|&old| b[old as usize]).collect(),
            None => b.to_vec(),
        }
    }

    fn apply_perm_inv(&self, z: &[f64]) -> Vec<f64> {
        match &self.perm {
            Some(p) => {
                let mut x = vec![0.0; self.n];
                for (new, &old) in p.iter().enumerate() {
                    x[old as usize] = z[new];
                }
                x
            }
            None => z.to_vec(),
        }
    }

    /// Column-oriented forward substitution with a unit lower factor.
    fn forward(&self, z: &mut [f64], vals: &[f64]) {
        for j in 0..self.n {
            let zj = z[j];
            if zj != 0.0 {
                for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                    z[self.row_idx[p] as usize] -= vals[p] * zj;
                }
            }
        }
    }

    /// Backward substitution with the transpose of a unit lower factor.
    fn backward(&self, z: &mut [f64], vals: &[f64]) {
        for j in (0..self.n).rev() {
            let mut zj = z[j];
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                zj -= vals[p] * z[self.row_idx[p] as usize];
            }
            z[j] = zj;
        }
    }
}

/// B = P A P^T with pattern symmetrized (explicit zeros for missing mates).
fn permute_symmetrized(a: &SparseOperator, perm: &[u32]) -> SparseOperator {
    let n = a.nrows();
    let mut inv = vec![0u32; n];
    for (new, &old) in perm.iter().enumerate() {
        inv[old as usize] = new as u32;
    }
    let mut b = super::TripletBuilder::with_capacity(n, n, 2 * a.nnz());
    for r in 0..n {
        for p in a.row_ptr()[r]..a.row_ptr()[r + 1] {
            let c = a.col_idx()[p] as usize;
            b.add(inv[r] as usize, inv[c] as usize, a.values()[p]);
            if r != c {
                b.add(inv[c] as usize, inv[r] as usize, 0.0);
            }
        }
    }
    b.build()
}

fn symmetrize_pattern(a: &SparseOperator) -> SparseOperator {
    let n = a.nrows();
    let mut b = super::TripletBuilder::with_capacity(n, n, 2 * a.nnz());
    for r in 0..n {
        for p in a.row_ptr()[r]..a.row_ptr()[r + 1] {
            let c = a.col_idx()[p] as usize;
            b.add(r, c, a.values()[p]);
            if r != c {
                b.add(c, r, 0.0);
            }
        }
    }
    b.build()
}

/// Elimination tree of the (structurally symmetric) matrix.
fn etree(a: &SparseOperator) -> Vec<u32> {
    let n = a.nrows();
    let mut parent = vec![u32::MAX; n];
    let mut ancestor = vec![u32::MAX; n];
    for k in 0..n {
        for p in a.row_ptr()[k]..a.row_ptr()[k + 1] {
            let c = a.col_idx()[p] as usize;
            if c >= k {
                break;
            }
            let mut i = c;
            while i != k {
                let next = ancestor[i];
                ancestor[i] = k as u32;
                if next == u32::MAX {
                    parent[i] = k as u32;
                    break;
                }
                if next as usize == k {
                    break;
                }
                i = next as usize;
            }
        }
    }
    parent
}

type Factors = (Vec<usize>, Vec<u32>, Vec<f64>, Vec<f64>, Vec<f64>);

/// Up-looking factorization of a matrix with symmetric pattern. Returns
/// column-stored strictly-lower L (and U when values are nonsymmetric) plus
/// the diagonal D with A = L D U^T.
fn factorize(b: &SparseOperator, symmetric: bool) -> Result<Factors> {
    let n = b.nrows();
    let parent = etree(b);

    // symbolic pass: per-column fill counts via the elimination-tree reach
    let mut flag = vec![u32::MAX; n];
    let mut col_count = vec![0usize; n];
    for k in 0..n {
        flag[k] = k as u32;
        for p in b.row_ptr()[k]..b.row_ptr()[k + 1] {
            let c = b.col_idx()[p] as usize;
            if c >= k {
                break;
            }
            let mut i = c;
            while flag[i] != k as u32 {
                flag[i] = k as u32;
                col_count[i] += 1;
                i = parent[i] as usize;
            }
        }
    }
    let mut col_ptr = vec![0usize; n + 1];
    for j in 0..n {
        col_ptr[j + 1] = col_ptr[j] + col_count[j];
    }
    let total = col_ptr[n];
    let mut row_idx = vec![0u32; total];
    let mut lx = vec![0f64; total];
    let mut ux = if symmetric { Vec::new() } else { vec![0f64; total] };
    let mut d = vec![0f64; n];
    let mut next = col_ptr[..n].to_vec();

    let bt = if symmetric { None } else { Some(transpose(b)) };

    let mut y = vec![0f64; n]; // row k of A (lower part), L-side workspace
    let mut w = vec![0f64; n]; // column k of A (upper part), U-side workspace
    let mut pattern = vec![0u32; n];
    let mut reach = vec![0u32; n];
    let mut flag2 = vec![u32::MAX; n];
    let pivot_floor = 1e-300;

    for k in 0..n {
        let mut top = n;
        flag2[k] = k as u32;
        let mut dk = 0.0;
        for p in b.row_ptr()[k]..b.row_ptr()[k + 1] {
            let c = b.col_idx()[p] as usize;
            if c > k {
                break;
            }
            if c == k {
                dk = b.values()[p];
                continue;
            }
            y[c] = b.values()[p];
            let mut len = 0usize;
            let mut i = c;
            while flag2[i] != k as u32 {
                flag2[i] = k as u32;
                reach[len] = i as u32;
                len += 1;
                i = parent[i] as usize;
            }
            for t in (0..len).rev() {
                top -= 1;
                pattern[top] = reach[t];
            }
        }
        if let Some(bt) = &bt {
            for p in bt.row_ptr()[k]..bt.row_ptr()[k + 1] {
                let c = bt.col_idx()[p] as usize;
                if c >= k {
                    break;
                }
                w[c] = bt.values()[p];
            }
        }
        pattern[top..n].sort_unstable();

        if symmetric {
            for t in top..n {
                let j = pattern[t] as usize;
                let yj = y[j];
                y[j] = 0.0;
                let lkj = yj / d[j];
                let e = next[j];
                for p in col_ptr[j]..e {
                    y[row_idx[p] as usize] -= lx[p] * yj;
                }
                dk -= lkj * yj;
                row_idx[e] = k as u32;
                lx[e] = lkj;
                next[j] = e + 1;
            }
        } else {
            for t in top..n {
                let j = pattern[t] as usize;
                let yj = y[j];
                let wj = w[j];
                y[j] = 0.0;
                w[j] = 0.0;
                let lkj = yj / d[j];
                let ukj = wj / d[j];
                let e = next[j];
                for p in col_ptr[j]..e {
                    let i = row_idx[p] as usize;
                    y[i] -= ux[p] * yj;
                    w[i] -= lx[p] * wj;
                }
                dk -= lkj * wj;
                row_idx[e] = k as u32;
                lx[e] = lkj;
                ux[e] = ukj;
                next[j] = e + 1;
            }
        }
        if dk.abs() <= pivot_floor || !dk.is_finite() {
            return Err(Error::Breakdown(format!(
                "zero or non-finite pivot at elimination step {k}"
            )));
        }
        d[k] = dk;
    }
    Ok((col_ptr, row_idx, lx, ux, d))
}

fn transpose(a: &SparseOperator) -> SparseOperator {
    let n = a.nrows();
    let mut b = super::TripletBuilder::with_capacity(n, n, a.nnz());
    for r in 0..n {
        for p in a.row_ptr()[r]..a.row_ptr()[r + 1] {
            b.add(a.col_idx()[p] as usize, r, a.values()[p]);
        }
    }
    b.build()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::TripletBuilder;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, seed: u64) -> SparseOperator {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = TripletBuilder::new(n, n);
        let mut dense = vec![0.0; n * n];
        for r in 0..n {
            for c in 0..=r {
                if c == r || rng.gen_bool(0.2) {
                    let v = rng.gen_range(-1.0..1.0);
                    dense[r * n + c] = v;
                }
            }
        }
        // A = R R^T + n I  (SPD)
        let mut a = vec![0.0; n * n];
        for r in 0..n {
            for c in 0..n {
                let mut s = if r == c { n as f64 } else { 0.0 };
                for t in 0..n {
                    s += dense[r * n + t] * dense[c * n + t];
                }
                a[r * n + c] = s;
            }
        }
        for r in 0..n {
            for c in 0..n {
                b.add(r, c, a[r * n + c]);
            }
        }
        b.build()
    }

    #[test]
    fn spd_factor_solves_roundtrip() {
        let a = random_spd(40, 7);
        let f = LduFactor::new(&a, Ordering::Natural).unwrap();
        let x_true: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
        let b = a.apply(&x_true);
        let x = f.solve(&b);
        for (xi, ti) in x.iter().zip(&x_true) {
            assert!((xi - ti).abs() < 1e-10, "{xi} vs {ti}");
        }
    }

    #[test]
    fn nonsymmetric_factor_and_transpose_solve() {
        let mut b = TripletBuilder::new(4, 4);
        let dense = [
            [4.0, 1.0, 0.0, 0.5],
            [-1.0, 5.0, 2.0, 0.0],
            [0.0, -2.0, 6.0, 1.0],
            [0.25, 0.0, -1.0, 3.0],
        ];
        for r in 0..4 {
            for c in 0..4 {
                if dense[r][c] != 0.0 {
                    b.add(r, c, dense[r][c]);
                }
            }
        }
        let a = b.build();
        assert!(!a.is_symmetric());
        let f = LduFactor::new(&a, Ordering::Natural).unwrap();
        let x_true = [1.0, -2.0, 0.5, 3.0];
        let x = f.solve(&a.apply(&x_true));
        for (xi, ti) in x.iter().zip(&x_true) {
            assert!((xi - ti).abs() < 1e-12);
        }
        let mut bt = vec![0.0; 4];
        a.matvec_transpose(&x_true, &mut bt);
        let xt = f.solve_transpose(&bt);
        for (xi, ti) in xt.iter().zip(&x_true) {
            assert!((xi - ti).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_ordering_matches_natural_solution() {
        // 2D 5-point Laplacian on a 9x7 interior grid
        let (nx, ny) = (9usize, 7usize);
        let n = nx * ny;
        let idx = |i: usize, j: usize| j * nx + i;
        let mut b = TripletBuilder::new(n, n);
        for j in 0..ny {
            for i in 0..nx {
                let r = idx(i, j);
                b.add(r, r, 4.0);
                if i > 0 {
                    b.add(r, idx(i - 1, j), -1.0);
                }
                if i + 1 < nx {
                    b.add(r, idx(i + 1, j), -1.0);
                }
                if j > 0 {
                    b.add(r, idx(i, j - 1), -1.0);
                }
                if j + 1 < ny {
                    b.add(r, idx(i, j + 1), -1.0);
                }
            }
        }
        let a = b.build();
        let rhs: Vec<f64> = (0..n).map(|i| ((i * 31 % 17) as f64) - 8.0).collect();
        let f0 = LduFactor::new(&a, Ordering::Natural).unwrap();
        let f1 = LduFactor::new(&a, Ordering::Grid { nx, ny, ncomp: 1 }).unwrap();
        let x0 = f0.solve(&rhs);
        let x1 = f1.solve(&rhs);
        for (u, v) in x0.iter().zip(&x1) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn singular_matrix_reports_breakdown() {
        let mut b = TripletBuilder::new(2, 2);
        b.add(0, 0, 1.0);
        b.add(0, 1, 1.0);
        b.add(1, 0, 1.0);
        b.add(1, 1, 1.0);
        let a = b.build();
        assert!(matches!(
            LduFactor::new(&a, Ordering::Natural),
            Err(Error::Breakdown(_))
        ));
    }
}
