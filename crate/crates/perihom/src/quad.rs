//! Small quadrature helpers: Gauss-Legendre nodes and a product rule on the
//! unit ball (radial Gauss x uniform angles) used for mollifier integrals.

/// Gauss-Legendre nodes and weights on (-1, 1), computed by Newton iteration
/// on the Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-like initial guess
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_and_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_and_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Quadrature points and weights for integrals over the unit ball in
/// dimension `d` (interval in 1D, disc in 2D). The point set is symmetric
/// under reflection through the origin.
pub fn unit_ball_rule(d: usize, n_radial: usize, n_angular: usize) -> Vec<([f64; 2], f64)> {
    match d {
        1 => {
            let (x, w) = gauss_legendre(n_radial);
            x.into_iter().zip(w).map(|(t, w)| ([t, 0.0], w)).collect()
        }
        2 => {
            // int_ball f = int_0^1 int_0^{2pi} f(t cos, t sin) t dtheta dt
            let (tr, wr) = gauss_legendre(n_radial);
            let n_ang = if n_angular % 2 == 0 { n_angular } else { n_angular + 1 };
            let dtheta = 2.0 * std::f64::consts::PI / n_ang as f64;
            let mut out = Vec::with_capacity(n_radial * n_ang);
            for (t, w) in tr.iter().zip(&wr) {
                let r = 0.5 * (t + 1.0); // map (-1,1) -> (0,1)
                let wr = 0.5 * w * r;
                for a in 0..n_ang {
                    let th = dtheta * a as f64;
                    out.push(([r * th.cos(), r * th.sin()], wr * dtheta));
                }
            }
            out
        }
        _ => panic!("unit ball rule supports d in {{1,2}}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(8);
        // int_{-1}^1 t^k dt
        for k in [0usize, 2, 4, 8, 14] {
            let q: f64 = x.iter().zip(&w).map(|(t, w)| w * t.powi(k as i32)).sum();
            let exact = 2.0 / (k as f64 + 1.0);
            assert!((q - exact).abs() < 1e-13, "k={k}: {q} vs {exact}");
        }
    }

    #[test]
    fn ball_rule_area_and_symmetry() {
        let rule = unit_ball_rule(2, 16, 32);
        let area: f64 = rule.iter().map(|(_, w)| w).sum();
        assert!((area - std::f64::consts::PI).abs() < 1e-12);
        // odd integrand integrates to zero by symmetry
        let odd: f64 = rule.iter().map(|(p, w)| w * p[0]).sum();
        assert!(odd.abs() < 1e-13);
        let interval = unit_ball_rule(1, 12, 0);
        let len: f64 = interval.iter().map(|(_, w)| w).sum();
        assert!((len - 2.0).abs() < 1e-13);
    }
}
