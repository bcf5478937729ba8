use super::{LduFactor, SparseOperator};
use crate::{Error, Result};

/// Smallest generalized singular value of `J` with respect to the SPD Gram
/// `G`: the largest `rho` with ||J u||_{G^{-1}} >= rho ||u||_G for all u.
///
/// Runs Lanczos (with full reorthogonalization) in the G-inner product on the
/// G-self-adjoint operator `M = J^{-1} G J^{-T} G`, whose largest eigenvalue
/// is `1 / rho^2`; iteration stops once the top Ritz value is stable to
/// `tol_rel`. Lanczos handles the clustered spectra these pencils produce far
/// better than plain inverse power iteration.
pub fn smallest_singular_value(
    j_factor: &LduFactor,
    gram: &SparseOperator,
    tol_rel: f64,
    max_iter: usize,
) -> Result<(f64, usize)> {
    let n = j_factor.n();
    assert_eq!(gram.nrows(), n);
    if n == 0 {
        return Ok((0.0, 0));
    }
    let apply_m = |z: &[f64], out: &mut Vec<f64>| {
        let mut s = vec![0.0; n];
        gram.matvec(z, &mut s);
        let t = j_factor.solve_transpose(&s);
        gram.matvec(&t, &mut s);
        *out = j_factor.solve(&s);
    };
    let (theta, iters) = lanczos_top(n, gram, apply_m, tol_rel, max_iter)?;
    if theta <= 0.0 || !theta.is_finite() {
        return Err(Error::Breakdown(
            "singular-value Lanczos produced a non-positive Ritz value".into(),
        ));
    }
    Ok((1.0 / theta.sqrt(), iters))
}

/// Smallest eigenvalue estimate of an SPD matrix via Lanczos on `A^{-1}` in
/// the Euclidean inner product (identity Gram).
pub fn smallest_eig_spd(
    a_factor: &LduFactor,
    a: &SparseOperator,
    tol_rel: f64,
    max_iter: usize,
) -> Result<(f64, usize)> {
    let n = a_factor.n();
    let mut id = super::TripletBuilder::new(n, n);
    for i in 0..n {
        id.add(i, i, 1.0);
    }
    let identity = id.build();
    let _ = a;
    let apply = |z: &[f64], out: &mut Vec<f64>| {
        *out = a_factor.solve(z);
    };
    let (theta, iters) = lanczos_top(n, &identity, apply, tol_rel, max_iter)?;
    if theta <= 0.0 || !theta.is_finite() {
        return Err(Error::Breakdown(
            "inverse Lanczos produced a non-positive Ritz value".into(),
        ));
    }
    Ok((1.0 / theta, iters))
}

/// Largest eigenvalue of a G-self-adjoint positive operator by Lanczos with
/// full reorthogonalization in the G-inner product.
fn lanczos_top(
    n: usize,
    gram: &SparseOperator,
    mut apply: impl FnMut(&[f64], &mut Vec<f64>),
    tol_rel: f64,
    max_iter: usize,
) -> Result<(f64, usize)> {
    let g_dot = |x: &[f64], y: &[f64]| -> f64 {
        let mut gy = vec![0.0; n];
        gram.matvec(y, &mut gy);
        dot(x, &gy)
    };
    // deterministic pseudo-random start
    let mut q: Vec<f64> = (0..n)
        .map(|i| ((i as f64 * 12.9898).sin() * 43758.5453).fract() - 0.5)
        .collect();
    let nrm = g_dot(&q, &q).sqrt();
    if nrm == 0.0 {
        return Err(Error::Breakdown("zero start vector".into()));
    }
    q.iter_mut().for_each(|v| *v /= nrm);

    // full reorthogonalization stores the basis; cap it so million-unknown
    // problems stay within memory
    let cap = max_iter.min(n).min(160).max(1);
    let mut basis: Vec<Vec<f64>> = vec![q.clone()];
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut theta_prev = 0.0;
    let mut w = Vec::new();
    for it in 1..=cap {
        apply(basis.last().unwrap(), &mut w);
        let alpha = g_dot(&w, basis.last().unwrap());
        alphas.push(alpha);
        // w -= alpha q_k + beta q_{k-1}, then full reorthogonalization
        for (t, qb) in basis.iter().enumerate() {
            let coeff = if t + 1 == basis.len() {
                alpha
            } else if t + 2 == basis.len() {
                betas.last().copied().unwrap_or(0.0)
            } else {
                0.0
            };
            if coeff != 0.0 {
                for i in 0..n {
                    w[i] -= coeff * qb[i];
                }
            }
        }
        for qb in &basis {
            let c = g_dot(&w, qb);
            if c != 0.0 {
                for i in 0..n {
                    w[i] -= c * qb[i];
                }
            }
        }
        let theta = tridiag_top_eig(&alphas, &betas);
        let beta = g_dot(&w, &w).max(0.0).sqrt();
        let converged = it > 1 && (theta - theta_prev).abs() <= tol_rel * theta.abs().max(1e-300);
        // beta ~ 0 or a full Krylov space means the Ritz value is exact
        let exhausted = beta <= 1e-13 * theta.abs().max(1.0) || it == n;
        if converged || exhausted {
            return Ok((theta, it));
        }
        if it == cap {
            if (theta - theta_prev).abs() > 100.0 * tol_rel * theta.abs() {
                return Err(Error::NoConvergence {
                    solver: "lanczos",
                    iters: it,
                    residual: theta,
                });
            }
            return Ok((theta, it));
        }
        theta_prev = theta;
        betas.push(beta);
        let mut qn = w.clone();
        qn.iter_mut().for_each(|v| *v /= beta);
        basis.push(qn);
    }
    unreachable!()
}

/// Largest eigenvalue of a symmetric tridiagonal matrix by bisection on the
/// Sturm sequence.
fn tridiag_top_eig(alpha: &[f64], beta: &[f64]) -> f64 {
    let k = alpha.len();
    if k == 1 {
        return alpha[0];
    }
    // Gershgorin upper/lower bounds
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..k {
        let b_prev = if i > 0 { beta[i - 1].abs() } else { 0.0 };
        let b_next = if i < k - 1 { beta[i].abs() } else { 0.0 };
        lo = lo.min(alpha[i] - b_prev - b_next);
        hi = hi.max(alpha[i] + b_prev + b_next);
    }
    // count of eigenvalues < x via the Sturm sequence
    let count_below = |x: f64| -> usize {
        let mut count = 0;
        let mut d = 1.0f64;
        for i in 0..k {
            let b2 = if i > 0 { beta[i - 1] * beta[i - 1] } else { 0.0 };
            d = alpha[i] - x - b2 / d;
            if d == 0.0 {
                d = 1e-300;
            }
            if d < 0.0 {
                count += 1;
            }
        }
        count
    };
    let (mut lo, mut hi) = (lo, hi + 1e-12 * hi.abs().max(1.0));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if count_below(mid) >= k {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-14 * hi.abs().max(1e-300) {
            break;
        }
    }
    0.5 * (lo + hi)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::{Ordering, TripletBuilder};

    fn diag(vals: &[f64]) -> SparseOperator {
        let mut b = TripletBuilder::new(vals.len(), vals.len());
        for (i, &v) in vals.iter().enumerate() {
            b.add(i, i, v);
        }
        b.build()
    }

    #[test]
    fn diagonal_pencil_recovers_min_ratio() {
        // J = diag(j), G = I: singular values are |j_i|
        let j = diag(&[3.0, 0.5, 7.0, 2.0]);
        let g = diag(&[1.0, 1.0, 1.0, 1.0]);
        let jf = LduFactor::new(&j, Ordering::Natural).unwrap();
        let (sigma, _) = smallest_singular_value(&jf, &g, 1e-10, 100).unwrap();
        assert!((sigma - 0.5).abs() < 1e-8, "sigma = {sigma}");
    }

    #[test]
    fn gram_scaling_changes_singular_value() {
        // J = diag(j), G = diag(g): ||Ju||_{G^{-1}}/||u||_G has ratios j_i/g_i
        let j = diag(&[4.0, 6.0]);
        let g = diag(&[2.0, 1.0]);
        let jf = LduFactor::new(&j, Ordering::Natural).unwrap();
        let (sigma, _) = smallest_singular_value(&jf, &g, 1e-12, 100).unwrap();
        assert!((sigma - 2.0).abs() < 1e-8, "sigma = {sigma}");
    }

    #[test]
    fn clustered_spectrum_still_converges() {
        // eigenvalues clustered in [2, 2.1]: the regime that stalls plain
        // power iteration
        let vals: Vec<f64> = (0..200).map(|i| 2.0 + 0.1 * (i as f64) / 199.0).collect();
        let j = diag(&vals);
        let g = diag(&vec![1.0; 200]);
        let jf = LduFactor::new(&j, Ordering::Natural).unwrap();
        let (sigma, iters) = smallest_singular_value(&jf, &g, 1e-6, 200).unwrap();
        assert!((sigma - 2.0).abs() <= 2e-6, "sigma {sigma} after {iters} its");
    }

    #[test]
    fn smallest_eig_of_diag() {
        let a = diag(&[5.0, 1.25, 9.0]);
        let f = LduFactor::new(&a, Ordering::Natural).unwrap();
        let (lam, _) = smallest_eig_spd(&f, &a, 1e-12, 100).unwrap();
        assert!((lam - 1.25).abs() < 1e-9);
    }

    #[test]
    fn nonsymmetric_singular_value() {
        // J = [[1, 10], [0, 1]]: smallest singular value is well below 1
        let mut b = TripletBuilder::new(2, 2);
        b.add(0, 0, 1.0);
        b.add(0, 1, 10.0);
        b.add(1, 1, 1.0);
        let j = b.build();
        let g = diag(&[1.0, 1.0]);
        let jf = LduFactor::new(&j, Ordering::Natural).unwrap();
        let (sigma, _) = smallest_singular_value(&jf, &g, 1e-12, 100).unwrap();
        // exact: sqrt of the smaller eigenvalue of J^T J
        let t = 102.0f64;
        let exact = ((t - (t * t - 4.0).sqrt()) / 2.0).sqrt();
        assert!((sigma - exact).abs() <= 1e-9, "{sigma} vs {exact}");
    }
}
