use super::SparseOperator;
use crate::{Error, Result};

/// Convergence report of a conjugate-gradient solve.
#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Jacobi-preconditioned conjugate gradients for symmetric positive definite
/// systems. Deterministic: fixed iteration order, no data races.
///
/// Stops when ||b - A x||_2 <= tol_rel * ||b||_2. Signals a breakdown when a
/// non-positive curvature p^T A p shows the matrix is not positive definite.
pub fn solve_cg(
    a: &SparseOperator,
    b: &[f64],
    x0: Option<&[f64]>,
    tol_rel: f64,
    max_iter: usize,
) -> Result<CgOutcome> {
    solve_cg_projected(a, b, x0, tol_rel, max_iter, None)
}

/// CG for consistent positive *semi*definite systems: `project` removes the
/// kernel component from preconditioned residuals and iterates so search
/// directions stay in the range (used for periodic problems whose kernel is
/// spanned by constants).
pub fn solve_cg_projected(
    a: &SparseOperator,
    b: &[f64],
    x0: Option<&[f64]>,
    tol_rel: f64,
    max_iter: usize,
    project: Option<&dyn Fn(&mut [f64])>,
) -> Result<CgOutcome> {
    let n = a.nrows();
    assert_eq!(a.ncols(), n);
    assert_eq!(b.len(), n);
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok(CgOutcome {
            x: vec![0.0; n],
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|&d| if d.abs() > 0.0 { 1.0 / d } else { 1.0 })
        .collect();

    let mut x = match x0 {
        Some(g) => g.to_vec(),
        None => vec![0.0; n],
    };
    let mut r = vec![0.0; n];
    a.matvec(&x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    if let Some(pr) = project {
        pr(&mut z);
    }
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut rnorm = norm(&r);
    let mut iterations = 0;

    while rnorm > tol_rel * bnorm {
        if iterations >= max_iter {
            return Err(Error::NoConvergence {
                solver: "cg",
                iters: iterations,
                residual: rnorm / bnorm,
            });
        }
        a.matvec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::Breakdown(format!(
                "cg curvature p^T A p = {pap:.3e} <= 0; matrix is not positive definite"
            )));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        if let Some(pr) = project {
            pr(&mut z);
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        rnorm = norm(&r);
        iterations += 1;
    }
    Ok(CgOutcome {
        x,
        iterations,
        relative_residual: rnorm / bnorm,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::TripletBuilder;

    #[test]
    fn identity_returns_rhs() {
        let mut b = TripletBuilder::new(5, 5);
        for i in 0..5 {
            b.add(i, i, 1.0);
        }
        let a = b.build();
        let rhs = [1.0, -2.0, 3.0, 0.0, 5.0];
        let out = solve_cg(&a, &rhs, None, 1e-12, 100).unwrap();
        for (x, r) in out.x.iter().zip(&rhs) {
            assert!((x - r).abs() < 1e-12);
        }
    }

    #[test]
    fn indefinite_matrix_breaks_down() {
        let mut b = TripletBuilder::new(2, 2);
        b.add(0, 0, 1.0);
        b.add(1, 1, -1.0);
        let a = b.build();
        let err = solve_cg(&a, &[1.0, 1.0], None, 1e-12, 10).unwrap_err();
        assert!(matches!(err, Error::Breakdown(_)));
    }

    #[test]
    fn zero_rhs_returns_zero() {
        let mut b = TripletBuilder::new(3, 3);
        for i in 0..3 {
            b.add(i, i, 2.0);
        }
        let a = b.build();
        let out = solve_cg(&a, &[0.0; 3], None, 1e-12, 10).unwrap();
        assert_eq!(out.x, vec![0.0; 3]);
        assert_eq!(out.iterations, 0);
    }
}
