//! Steklov smoothing, boundary cutoff families, and the corrector-expansion
//! approximate solutions built from the homogenized solution and the cell
//! correctors.

use crate::assembly::DiscreteField;
use crate::cell::CorrectorSet;
use crate::mesh::DomainMesh;
use crate::quad::unit_ball_rule;
use crate::{Error, Result};
use std::f64::consts::E;
use std::sync::Arc;

/// Normalized C-infinity bump `exp(-1/(1 - |x|^2))` on the unit ball with a
/// fixed product-Gauss quadrature (radial Gauss-Legendre x uniform angles,
/// symmetric under reflection). Weights are scaled so the rule integrates
/// the normalized bump to one exactly.
#[derive(Debug, Clone)]
pub struct Mollifier {
    d: usize,
    /// ball quadrature points with weights w_q * rho(z_q), summing to one
    points: Vec<([f64; 2], f64)>,
    /// bump integral under this rule (the normalization constant)
    raw_integral: f64,
}

fn bump(r2: f64) -> f64 {
    if r2 >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - r2)).exp()
    }
}

impl Mollifier {
    pub fn new(d: usize) -> Self {
        Self::with_orders(d, 32, 64)
    }

    /// Product rule with `n_radial` Gauss points (order >= 4 required). The
    /// normalization constant always comes from a fine 96-point radial rule
    /// so the profile integrates to one regardless of the evaluation order.
    pub fn with_orders(d: usize, n_radial: usize, n_angular: usize) -> Self {
        assert!(n_radial >= 4, "mollifier quadrature order must be >= 4");
        let raw_integral: f64 = unit_ball_rule(d, 96, 192)
            .iter()
            .map(|(z, w)| w * bump(z[0] * z[0] + z[1] * z[1]))
            .sum();
        let points: Vec<([f64; 2], f64)> = unit_ball_rule(d, n_radial, n_angular)
            .into_iter()
            .map(|(z, w)| (z, w * bump(z[0] * z[0] + z[1] * z[1]) / raw_integral))
            .collect();
        Mollifier {
            d,
            points,
            raw_integral,
        }
    }

    pub fn dimension(&self) -> usize {
        self.d
    }

    /// Profile value of the normalized bump.
    pub fn profile(&self, x: &[f64]) -> f64 {
        let r2: f64 = x.iter().take(self.d).map(|t| t * t).sum();
        bump(r2) / self.raw_integral
    }

    /// Integral of the normalized profile under an independent finer
    /// quadrature; equals one up to the normalization rule's error.
    pub fn normalization_check(&self) -> f64 {
        let fine: f64 = unit_ball_rule(self.d, 128, 256)
            .iter()
            .map(|(z, w)| w * bump(z[0] * z[0] + z[1] * z[1]))
            .sum();
        fine / self.raw_integral
    }

    pub fn points(&self) -> &[([f64; 2], f64)] {
        &self.points
    }
}

/// Field sampled on a mesh that Steklov smoothing can integrate: P1 nodal
/// values or piecewise-constant element values (recovered gradients). The
/// field is extended by zero outside the domain.
pub enum SampledField<'a> {
    P1(&'a DomainMesh, &'a [f64]),
    P0(&'a DomainMesh, &'a [f64]),
}

impl SampledField<'_> {
    fn mesh(&self) -> &DomainMesh {
        match self {
            SampledField::P1(m, _) | SampledField::P0(m, _) => m,
        }
    }

    fn eval(&self, x: &[f64]) -> f64 {
        let mesh = self.mesh();
        if !mesh.contains(x) {
            return 0.0;
        }
        match self {
            SampledField::P1(mesh, vals) => {
                let (e, bary) = mesh.locate(x);
                let el = mesh.elem(e);
                el.iter()
                    .enumerate()
                    .map(|(t, &nid)| bary[t] * vals[nid as usize])
                    .sum()
            }
            SampledField::P0(mesh, vals) => {
                let (e, _) = mesh.locate(x);
                vals[e]
            }
        }
    }

    /// L^r norm over the domain by the barycenter rule.
    pub fn lr_norm(&self, r: f64) -> f64 {
        let mesh = self.mesh();
        let mut acc = 0.0;
        for e in 0..mesh.num_elems() {
            let v = match self {
                SampledField::P1(mesh, vals) => {
                    let el = mesh.elem(e);
                    el.iter().map(|&nid| vals[nid as usize]).sum::<f64>() / el.len() as f64
                }
                SampledField::P0(_, vals) => vals[e],
            };
            acc += mesh.volume(e) * v.abs().powf(r);
        }
        acc.powf(1.0 / r)
    }
}

/// `[S_delta u](x) = int rho_delta(x - xi) u(xi) dxi` evaluated through the
/// mollifier's ball quadrature; `u` is extended by zero outside the mesh.
/// Linear in `u`.
pub fn steklov_smooth_at(field: &SampledField, delta: f64, moll: &Mollifier, x: &[f64]) -> f64 {
    debug_assert!(delta > 0.0);
    let mut acc = 0.0;
    let mut xi = [0.0f64; 2];
    for (z, w) in moll.points() {
        xi[0] = x[0] - delta * z[0];
        if moll.dimension() == 2 {
            xi[1] = x[1] - delta * z[1];
        }
        acc += w * field.eval(&xi[..moll.dimension()]);
    }
    acc
}

/// Smooths a field at every mesh node.
pub fn steklov_smooth_nodes(field: &SampledField, delta: f64, moll: &Mollifier) -> Vec<f64> {
    let mesh = field.mesh();
    (0..mesh.num_nodes())
        .map(|node| steklov_smooth_at(field, delta, moll, mesh.node(node)))
        .collect()
}

/// Smoothing radius of the smoothed family: `delta_eps = 1/|ln eps|`, capped
/// at 0.3 for `eps >= 1/e` where the formula stops being meaningful.
pub fn steklov_radius(eps: f64) -> f64 {
    if eps >= 1.0 / E {
        0.3
    } else {
        1.0 / eps.ln().abs()
    }
}

/// Boundary cutoff `eta_eps`: zero on the eps-strip, one outside the
/// 2eps-strip, with the measured gradient bound `eps * max |grad eta|`.
#[derive(Debug, Clone)]
pub struct CutoffFamily {
    eps: f64,
    values: Vec<f64>,
    c_eta: f64,
}

impl CutoffFamily {
    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, node: usize) -> f64 {
        self.values[node]
    }

    /// Measured `eps * max_T |grad eta|_inf`.
    pub fn gradient_bound(&self) -> f64 {
        self.c_eta
    }
}

/// Builds the cutoff: ramp `clamp((dist - eps)/eps, 0, 1)`, one nodal
/// averaging pass, then exact re-clamping so the strip properties hold at
/// the nodes.
pub fn build_cutoff(mesh: &DomainMesh, eps: f64) -> Result<CutoffFamily> {
    if !(eps > 0.0) {
        return Err(Error::invalid("cutoff needs eps > 0"));
    }
    let dist: Vec<f64> = (0..mesh.num_nodes())
        .map(|id| mesh.dist_to_boundary(mesh.node(id)))
        .collect();
    if !dist.iter().any(|&t| t >= 2.0 * eps) {
        return Err(Error::invalid(format!(
            "eps = {eps} too large: the 2-eps strip covers the whole domain"
        )));
    }
    let raw: Vec<f64> = dist
        .iter()
        .map(|&t| ((t - eps) / eps).clamp(0.0, 1.0))
        .collect();
    // one nodal averaging pass over element neighbors
    let neighbors = mesh.node_neighbors();
    let mut values: Vec<f64> = raw
        .iter()
        .enumerate()
        .map(|(id, &v)| {
            let nb = &neighbors[id];
            let sum: f64 = v + nb.iter().map(|&b| raw[b as usize]).sum::<f64>();
            sum / (1 + nb.len()) as f64
        })
        .collect();
    // restore the exact strip properties
    for (id, v) in values.iter_mut().enumerate() {
        if dist[id] < eps {
            *v = 0.0;
        } else if dist[id] >= 2.0 * eps {
            *v = 1.0;
        } else {
            *v = v.clamp(0.0, 1.0);
        }
    }
    let mut gmax = 0.0f64;
    for e in 0..mesh.num_elems() {
        let el = mesh.elem(e);
        let grads = mesh.grads(e);
        let mut g = [0.0f64; 2];
        for (t, &nid) in el.iter().enumerate() {
            for k in 0..mesh.dimension() {
                g[k] += values[nid as usize] * grads[t][k];
            }
        }
        gmax = gmax.max(g[0].abs()).max(g[1].abs());
    }
    Ok(CutoffFamily {
        eps,
        values,
        c_eta: eps * gmax,
    })
}

/// Construction variant of the approximate-solution family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// 2D systems with Steklov-smoothed gradients and `delta_eps = 1/|ln eps|`
    Smoothed2d,
    /// 2D systems with plain recovered gradients (needs regular `u0`)
    Plain2d,
    /// scalar problems, plain recovered gradients
    PlainScalar,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Smoothed2d => "smoothed-2d",
            Variant::Plain2d => "plain-2d",
            Variant::PlainScalar => "plain-scalar",
        }
    }
}

/// Corrector-expansion approximate solution
/// `ubar^a = u0^a + eps eta_eps G_k^g v_k^{g a}(x/eps)` where `G` is the
/// recovered (optionally Steklov-smoothed) gradient of `u0`.
#[derive(Debug)]
pub struct ApproximateSolution {
    field: DiscreteField,
    variant: Variant,
    eps: f64,
    delta: Option<f64>,
    sup_diff: f64,
}

impl ApproximateSolution {
    pub fn field(&self) -> &DiscreteField {
        &self.field
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Steklov radius used (smoothed variant only).
    pub fn delta(&self) -> Option<f64> {
        self.delta
    }

    /// Recorded `||ubar - u0||_inf`.
    pub fn sup_diff(&self) -> f64 {
        self.sup_diff
    }

    /// Replaces the nodal values, keeping the construction metadata; used by
    /// perturbation probes. The replacement must satisfy the Dirichlet mask.
    pub fn with_field(&self, field: DiscreteField) -> Result<ApproximateSolution> {
        if !field.dirichlet_clean() {
            return Err(Error::invalid("field must satisfy the Dirichlet mask"));
        }
        Ok(ApproximateSolution {
            field,
            variant: self.variant,
            eps: self.eps,
            delta: self.delta,
            sup_diff: self.sup_diff,
        })
    }
}

/// Builds the approximate solution for the given variant. `u0` must satisfy
/// the Dirichlet mask; the mesh must resolve `eps` (`h <= eps/floor`).
pub fn build_approximate_solution(
    variant: Variant,
    u0: &DiscreteField,
    correctors: &CorrectorSet,
    eps: f64,
    cutoff: &CutoffFamily,
    mollifier: Option<&Mollifier>,
    resolution_floor: f64,
) -> Result<ApproximateSolution> {
    let mesh = Arc::clone(u0.mesh());
    let d = mesh.dimension();
    let n = u0.components();
    if correctors.dimension() != d || correctors.system_size() != n {
        return Err(Error::shape("correctors do not match the field layout"));
    }
    if (cutoff.eps() - eps).abs() > 1e-14 {
        return Err(Error::invalid("cutoff family built for a different eps"));
    }
    if !u0.dirichlet_clean() {
        return Err(Error::invalid("u0 must satisfy the Dirichlet mask"));
    }
    if mesh.h_max() > eps / resolution_floor {
        return Err(Error::ResolutionFloor {
            h: mesh.h_max(),
            eps,
            floor: resolution_floor,
        });
    }
    if variant == Variant::PlainScalar && n != 1 {
        return Err(Error::shape("plain-scalar variant needs a scalar field"));
    }
    if variant == Variant::Smoothed2d && mollifier.is_none() {
        return Err(Error::invalid("smoothed variant needs a mollifier"));
    }

    // gradient table G[node * (d n) + k n + gamma]
    let raw_grad = u0.recovered_gradient(); // node*(n*d) + gamma*d + k
    let mut grad = vec![0.0; mesh.num_nodes() * d * n];
    match variant {
        Variant::Plain2d | Variant::PlainScalar => {
            for node in 0..mesh.num_nodes() {
                for gamma in 0..n {
                    for k in 0..d {
                        grad[node * d * n + k * n + gamma] = raw_grad[node * n * d + gamma * d + k];
                    }
                }
            }
        }
        Variant::Smoothed2d => {
            let moll = mollifier.expect("checked above");
            let delta = steklov_radius(eps);
            // smooth each P0 gradient component and evaluate at the nodes
            for gamma in 0..n {
                for k in 0..d {
                    let mut p0 = vec![0.0; mesh.num_elems()];
                    for (e, val) in p0.iter_mut().enumerate() {
                        let el = mesh.elem(e);
                        let grads = mesh.grads(e);
                        *val = el
                            .iter()
                            .enumerate()
                            .map(|(t, &nid)| u0.value(nid as usize, gamma) * grads[t][k])
                            .sum();
                    }
                    let sampled = SampledField::P0(&mesh, &p0);
                    let smoothed = steklov_smooth_nodes(&sampled, delta, moll);
                    for (node, v) in smoothed.into_iter().enumerate() {
                        grad[node * d * n + k * n + gamma] = v;
                    }
                }
            }
        }
    }

    let mut field = u0.clone();
    let mut vvals = vec![0.0; d * n * n];
    let mut y = [0.0f64; 2];
    for node in 0..mesh.num_nodes() {
        let eta = cutoff.value(node);
        if eta == 0.0 {
            continue;
        }
        let x = mesh.node(node);
        for k in 0..d {
            y[k] = x[k] / eps;
        }
        correctors.eval_point(&y[..d], &mut vvals);
        for alpha in 0..n {
            let mut corr = 0.0;
            for k in 0..d {
                for gamma in 0..n {
                    corr +=
                        grad[node * d * n + k * n + gamma] * vvals[(k * n + gamma) * n + alpha];
                }
            }
            field.values_mut()[node * n + alpha] += eps * eta * corr;
        }
    }
    let sup_diff = field.sup_diff(u0);
    Ok(ApproximateSolution {
        field,
        variant,
        eps,
        delta: (variant == Variant::Smoothed2d).then(|| steklov_radius(eps)),
        sup_diff,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::solve_cell_problems;
    use crate::coeffs::{CoeffBlock, PeriodicCoefficient};
    use crate::mesh::{build_domain_mesh, build_unit_cell_grid};

    fn unit_square(m: usize) -> Arc<DomainMesh> {
        Arc::new(build_domain_mesh(2, &[[0.0, 1.0], [0.0, 1.0]], m).unwrap())
    }

    #[test]
    fn mollifier_is_normalized_even_and_supported_in_ball() {
        for d in [1usize, 2] {
            let m = Mollifier::new(d);
            let total: f64 = m.points().iter().map(|(_, w)| w).sum();
            assert!((total - 1.0).abs() <= 1e-6, "{total}");
            assert!((m.normalization_check() - 1.0).abs() <= 1e-8);
            assert_eq!(m.profile(&[1.0, 0.0]), 0.0);
            assert_eq!(m.profile(&[0.3, 0.0]), m.profile(&[-0.3, 0.0]));
            assert!(m.points().iter().all(|(_, w)| *w >= 0.0));
        }
    }

    #[test]
    fn steklov_preserves_constants_away_from_boundary() {
        let mesh = unit_square(32);
        let ones = vec![1.0; mesh.num_nodes()];
        let field = SampledField::P1(&mesh, &ones);
        let moll = Mollifier::new(2);
        let v = steklov_smooth_at(&field, 0.2, &moll, &[0.5, 0.5]);
        assert!((v - 1.0).abs() <= 1e-6, "{v}");
    }

    #[test]
    fn steklov_halves_a_step_at_the_jump() {
        let mesh = Arc::new(build_domain_mesh(1, &[[0.0, 1.0]], 256).unwrap());
        let vals: Vec<f64> = (0..mesh.num_nodes())
            .map(|id| if mesh.node(id)[0] < 0.5 { 0.0 } else { 1.0 })
            .collect();
        let field = SampledField::P1(&mesh, &vals);
        let moll = Mollifier::new(1);
        let v = steklov_smooth_at(&field, 0.1, &moll, &[0.5]);
        // P1 interpolation spreads the jump over one element; the symmetric
        // quadrature still averages it to 1/2
        assert!((v - 0.5).abs() <= 1e-6, "{v}");
    }

    #[test]
    fn steklov_is_linear() {
        let mesh = unit_square(16);
        let a: Vec<f64> = (0..mesh.num_nodes())
            .map(|i| (i as f64 * 0.1).sin())
            .collect();
        let b: Vec<f64> = (0..mesh.num_nodes())
            .map(|i| (i as f64 * 0.2).cos())
            .collect();
        let combo: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 2.0 * x - 3.0 * y).collect();
        let moll = Mollifier::new(2);
        let x = [0.4, 0.6];
        let va = steklov_smooth_at(&SampledField::P1(&mesh, &a), 0.15, &moll, &x);
        let vb = steklov_smooth_at(&SampledField::P1(&mesh, &b), 0.15, &moll, &x);
        let vc = steklov_smooth_at(&SampledField::P1(&mesh, &combo), 0.15, &moll, &x);
        assert!((vc - (2.0 * va - 3.0 * vb)).abs() <= 1e-12);
    }

    #[test]
    fn steklov_sup_bound_scales_like_lemma() {
        // u(x) = |x - x0|^{-0.9} is in L^2 but unbounded; the scaled sup
        // delta^{2/r} ||S_delta u||_inf / ||u||_r stays within a band over a
        // dyadic delta ladder
        let mesh = unit_square(256);
        let x0 = [0.5 + 0.37 * mesh.h_max(), 0.5];
        let vals: Vec<f64> = (0..mesh.num_nodes())
            .map(|id| {
                let p = mesh.node(id);
                let r = ((p[0] - x0[0]).powi(2) + (p[1] - x0[1]).powi(2)).sqrt();
                r.powf(-0.9)
            })
            .collect();
        let field = SampledField::P1(&mesh, &vals);
        let moll = Mollifier::new(2);
        let unorm = field.lr_norm(2.0);
        let r = 2.0;
        let mut ratios = Vec::new();
        for k in 2..=6 {
            let delta = 0.5f64.powi(k);
            // the sup of S_delta u sits at x0
            let s = steklov_smooth_at(&field, delta, &moll, &x0);
            ratios.push(delta.powf(2.0 / r) * s / unorm);
        }
        let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = ratios.iter().cloned().fold(0.0f64, f64::max);
        assert!(hi / lo <= 2.0, "ratios {ratios:?}");
    }

    #[test]
    fn cutoff_strip_properties_hold_at_nodes() {
        let mesh = unit_square(64);
        let eps = 0.1;
        let eta = build_cutoff(&mesh, eps).unwrap();
        for node in 0..mesh.num_nodes() {
            let dist = mesh.dist_to_boundary(mesh.node(node));
            let v = eta.value(node);
            assert!((0.0..=1.0).contains(&v));
            if dist < eps {
                assert_eq!(v, 0.0);
            }
            if dist >= 2.0 * eps {
                assert_eq!(v, 1.0);
            }
        }
        let mid = (0..mesh.num_nodes())
            .find(|&id| {
                let p = mesh.node(id);
                (p[0] - 0.5).abs() < 1e-12 && (p[1] - 0.5).abs() < 1e-12
            })
            .unwrap();
        assert_eq!(eta.value(mid), 1.0);
    }

    #[test]
    fn cutoff_rejects_too_large_eps() {
        let mesh = unit_square(16);
        assert!(build_cutoff(&mesh, 0.3).is_err());
    }

    #[test]
    fn cutoff_gradient_bound_is_stable_across_eps() {
        let mesh = unit_square(512);
        let mut bounds = Vec::new();
        for k in 3..=6 {
            let eps = 0.5f64.powi(k);
            let eta = build_cutoff(&mesh, eps).unwrap();
            bounds.push(eta.gradient_bound());
        }
        let lo = bounds.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = bounds.iter().cloned().fold(0.0f64, f64::max);
        assert!(hi / lo <= 2.0, "bounds {bounds:?}");
    }

    #[test]
    fn constant_coefficient_correctors_leave_u0_unchanged() {
        let mesh = unit_square(128);
        let grid = Arc::new(build_unit_cell_grid(2, 8).unwrap());
        let a = PeriodicCoefficient::constant(CoeffBlock::scalar_identity(2, 1, 2.0));
        let v = solve_cell_problems(&grid, &a).unwrap();
        let mut u0 = DiscreteField::from_fn(&mesh, 1, |x, _| x[0] * (1.0 - x[0]) * x[1]);
        u0.clamp_dirichlet();
        let eps = 1.0 / 8.0;
        let eta = build_cutoff(&mesh, eps).unwrap();
        let ubar =
            build_approximate_solution(Variant::Plain2d, &u0, &v, eps, &eta, None, 8.0).unwrap();
        assert!(ubar.sup_diff() <= 1e-12);
        assert!(ubar.field().sup_diff(&u0) <= 1e-12);
    }

    #[test]
    fn dirichlet_trace_identity_on_strip_nodes() {
        let mesh = unit_square(128);
        let grid = Arc::new(build_unit_cell_grid(2, 16).unwrap());
        let a = PeriodicCoefficient::scalar_laminate(2, 2.0, 1.0);
        let v = solve_cell_problems(&grid, &a).unwrap();
        let mut u0 = DiscreteField::from_fn(&mesh, 1, |x, _| {
            (std::f64::consts::PI * x[0]).sin() * (std::f64::consts::PI * x[1]).sin()
        });
        u0.clamp_dirichlet();
        let eps = 1.0 / 8.0;
        let eta = build_cutoff(&mesh, eps).unwrap();
        let ubar =
            build_approximate_solution(Variant::Plain2d, &u0, &v, eps, &eta, None, 8.0).unwrap();
        assert!(ubar.field().dirichlet_clean());
        for node in 0..mesh.num_nodes() {
            if mesh.dist_to_boundary(mesh.node(node)) < eps {
                assert_eq!(ubar.field().value(node, 0), u0.value(node, 0));
            }
        }
        assert!(ubar.sup_diff() > 0.0);
    }

    #[test]
    fn variant_preconditions_are_enforced() {
        let mesh = unit_square(64);
        let grid = Arc::new(build_unit_cell_grid(2, 8).unwrap());
        let a = PeriodicCoefficient::scalar_laminate(2, 2.0, 1.0);
        let v = solve_cell_problems(&grid, &a).unwrap();
        let u0 = DiscreteField::zeros(&mesh, 1);
        let eps = 1.0 / 8.0;
        let eta = build_cutoff(&mesh, eps).unwrap();
        // smoothed without mollifier
        assert!(build_approximate_solution(
            Variant::Smoothed2d,
            &u0,
            &v,
            eps,
            &eta,
            None,
            8.0
        )
        .is_err());
        // mesh too coarse for eps
        let coarse = unit_square(16);
        let uc = DiscreteField::zeros(&coarse, 1);
        let eta_c = build_cutoff(&coarse, eps).unwrap();
        assert!(matches!(
            build_approximate_solution(Variant::Plain2d, &uc, &v, eps, &eta_c, None, 8.0),
            Err(Error::ResolutionFloor { .. })
        ));
    }

    #[test]
    fn smoothed_and_plain_agree_for_affine_u0_in_the_bulk() {
        // affine u0 has constant gradients; Steklov smoothing reproduces
        // them exactly where the ball stays inside the domain
        let mesh = unit_square(128);
        let grid = Arc::new(build_unit_cell_grid(2, 16).unwrap());
        let a = PeriodicCoefficient::scalar_laminate(2, 2.0, 1.0);
        let v = solve_cell_problems(&grid, &a).unwrap();
        let mut u0 = DiscreteField::from_fn(&mesh, 1, |x, _| 0.3 * x[0] - 0.2 * x[1] + 0.1);
        u0.clamp_dirichlet();
        let eps = 1.0 / 8.0;
        let eta = build_cutoff(&mesh, eps).unwrap();
        let moll = Mollifier::new(2);
        let plain =
            build_approximate_solution(Variant::Plain2d, &u0, &v, eps, &eta, None, 8.0).unwrap();
        let smoothed =
            build_approximate_solution(Variant::Smoothed2d, &u0, &v, eps, &eta, Some(&moll), 8.0)
                .unwrap();
        let delta = steklov_radius(eps);
        let mut worst = 0.0f64;
        for node in 0..mesh.num_nodes() {
            let x = mesh.node(node);
            // clamping at the boundary perturbs recovered gradients in the
            // outermost layer; stay clear of it and of the smoothing ball
            let interior = mesh.dist_to_boundary(x) >= delta + 3.0 * mesh.h_max();
            if eta.value(node) == 1.0 && interior {
                worst = worst
                    .max((plain.field().value(node, 0) - smoothed.field().value(node, 0)).abs());
            }
        }
        assert!(worst <= 1e-8, "bulk difference {worst}");
    }

    #[test]
    fn sup_difference_decays_with_eps() {
        let mesh = unit_square(512);
        let grid = Arc::new(build_unit_cell_grid(2, 32).unwrap());
        let a = PeriodicCoefficient::scalar_laminate(2, 2.0, 1.0);
        let v = solve_cell_problems(&grid, &a).unwrap();
        // gradient peaks in the interior so the boundary cutoff does not
        // suppress the sup as eps grows
        let mut u0 = DiscreteField::from_fn(&mesh, 1, |x, _| {
            (2.0 * std::f64::consts::PI * x[0]).sin() * (2.0 * std::f64::consts::PI * x[1]).sin()
        });
        u0.clamp_dirichlet();
        let moll = Mollifier::with_orders(2, 12, 24);
        let mut sup_smoothed = Vec::new();
        let mut sup_plain = Vec::new();
        for k in 3..=5 {
            let eps = 0.5f64.powi(k);
            let eta = build_cutoff(&mesh, eps).unwrap();
            let s = build_approximate_solution(
                Variant::Smoothed2d,
                &u0,
                &v,
                eps,
                &eta,
                Some(&moll),
                8.0,
            )
            .unwrap();
            let p = build_approximate_solution(Variant::Plain2d, &u0, &v, eps, &eta, None, 8.0)
                .unwrap();
            sup_smoothed.push(s.sup_diff());
            sup_plain.push(p.sup_diff());
        }
        // smoothed family: decay (the continuum bound carries a log factor)
        for t in 1..sup_smoothed.len() {
            assert!(sup_smoothed[t] < sup_smoothed[t - 1], "{sup_smoothed:?}");
        }
        // plain family: O(eps), measured slope >= 0.9 on the dyadic ladder
        let slope = (sup_plain[0] / sup_plain[2]).log2() / 2.0;
        assert!(slope >= 0.9, "plain sup-diff slope {slope}: {sup_plain:?}");
    }
}
