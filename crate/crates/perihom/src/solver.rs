//! Newton solution of the homogenized semilinear problem, the frozen-Jacobian
//! contraction iteration for the oscillatory problem, and the
//! local-uniqueness probe.
//!
//! The frozen iteration factors the Jacobian once at the approximate solution
//! and iterates `u <- u - J(ubar)^{-1} F(u)`; contraction ratios and the
//! a-posteriori error bound `(2/rho) ||F(ubar)||` are recorded alongside the
//! solution.

use crate::assembly::{
    assemble_jacobian, assemble_semilinear_residual, AssemblyOptions, DiscreteField, DualNorm,
    Scale,
};
use crate::cell::HomogenizedTensor;
use crate::coeffs::{DefectCoefficient, Nonlinearity, PeriodicCoefficient};
use crate::corrector::ApproximateSolution;
use crate::mesh::DomainMesh;
use crate::sparse::{smallest_singular_value, LduFactor, Ordering};
use crate::{Error, Result};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

/// Solver knobs; the tolerance applies to the residual dual-norm surrogate.
#[derive(Debug, Clone, Copy)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub damping: bool,
    /// consecutive steps with ratio >= 1 before declaring non-contraction
    pub q_window: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-9,
            max_iter: 30,
            damping: false,
            q_window: 3,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::invalid("solver tolerance must be positive"));
        }
        if self.max_iter < 1 {
            return Err(Error::invalid("solver needs max_iter >= 1"));
        }
        Ok(())
    }
}

/// Per-mesh solve context: the H^1 Gram with its factorization, shared by
/// residual monitoring, H^1 norms and singular-value estimates.
#[derive(Clone)]
pub struct SolveContext {
    dual: DualNorm,
}

impl SolveContext {
    pub fn new(mesh: &DomainMesh, n: usize) -> Result<Self> {
        Ok(SolveContext {
            dual: DualNorm::new(mesh, n)?,
        })
    }

    pub fn dual(&self) -> &DualNorm {
        &self.dual
    }
}

/// Report of a full Newton run.
#[derive(Debug, Clone)]
pub struct NewtonReport {
    pub iterations: usize,
    /// residual surrogate at each iterate, starting with the initial guess
    pub residuals: Vec<f64>,
    /// smallest singular value of the final Jacobian w.r.t. the Gram
    /// (nondegeneracy certificate)
    pub rho_hat: f64,
    pub converged: bool,
}

fn grid_ordering(mesh: &DomainMesh, n: usize) -> Ordering {
    let (nx, ny) = mesh.interior_grid_dims();
    Ordering::Grid { nx, ny, ncomp: n }
}

fn sup_norm_components(v: &[f64], n: usize) -> f64 {
    (0..n)
        .map(|c| {
            v.iter()
                .skip(c)
                .step_by(n)
                .fold(0.0f64, |m, t| m.max(t.abs()))
        })
        .sum()
}

/// Full Newton iteration on the discrete semilinear problem; the Jacobian is
/// re-assembled and re-factored every step.
#[allow(clippy::too_many_arguments)]
pub fn full_newton(
    mesh: &Arc<DomainMesh>,
    a: &PeriodicCoefficient,
    scale: Scale,
    b: Option<&DefectCoefficient>,
    nl: &Nonlinearity,
    config: &SolverConfig,
    initial: Option<&DiscreteField>,
    ctx: &SolveContext,
    opts: &AssemblyOptions,
) -> Result<(DiscreteField, NewtonReport)> {
    config.validate()?;
    let n = a.system_size();
    let mut u = match initial {
        Some(f) => {
            if !f.dirichlet_clean() {
                return Err(Error::invalid("initial guess violates the Dirichlet mask"));
            }
            f.clone()
        }
        None => DiscreteField::zeros(mesh, n),
    };
    let mut residuals = Vec::new();
    let mut f = assemble_semilinear_residual(mesh, a, scale, b, nl, &u, opts)?;
    let mut res = ctx.dual.dual_norm(&f);
    residuals.push(res);
    let mut iterations = 0;
    let ordering = grid_ordering(mesh, n);
    while res > config.tol {
        if iterations >= config.max_iter {
            return Err(Error::NoConvergence {
                solver: "newton",
                iters: iterations,
                residual: res,
            });
        }
        let j = assemble_jacobian(mesh, a, scale, b, nl, &u, opts)?;
        let factor = LduFactor::new(&j, ordering.clone()).map_err(|e| {
            Error::Breakdown(format!("singular Jacobian (degenerate solution): {e}"))
        })?;
        let delta = factor.solve(&f);
        let base = u.interior_vector();
        let mut step = 1.0;
        loop {
            let trial: Vec<f64> = base
                .iter()
                .zip(&delta)
                .map(|(ui, di)| ui - step * di)
                .collect();
            u.set_interior(&trial);
            f = assemble_semilinear_residual(mesh, a, scale, b, nl, &u, opts)?;
            let next = ctx.dual.dual_norm(&f);
            if !config.damping || next < res || step < 1.0 / 256.0 {
                res = next;
                break;
            }
            step *= 0.5;
        }
        residuals.push(res);
        iterations += 1;
    }
    // nondegeneracy certificate at the converged point
    let j = assemble_jacobian(mesh, a, scale, b, nl, &u, opts)?;
    let factor = LduFactor::new(&j, ordering)
        .map_err(|e| Error::Breakdown(format!("singular Jacobian (degenerate solution): {e}")))?;
    let (rho_hat, _) = smallest_singular_value(&factor, ctx.dual.gram(), 1e-6, 500)?;
    Ok((
        u,
        NewtonReport {
            iterations,
            residuals,
            rho_hat,
            converged: true,
        },
    ))
}

/// Newton solve of the homogenized problem with the constant tensor.
pub fn newton_homogenized(
    mesh: &Arc<DomainMesh>,
    hat: &HomogenizedTensor,
    nl: &Nonlinearity,
    config: &SolverConfig,
    initial: Option<&DiscreteField>,
    ctx: &SolveContext,
) -> Result<(DiscreteField, NewtonReport)> {
    if hat.coercivity() <= 0.0 {
        return Err(Error::NonCoercive {
            min: hat.coercivity(),
        });
    }
    let a = hat.as_coefficient();
    full_newton(
        mesh,
        &a,
        Scale::Infinite,
        None,
        nl,
        config,
        initial,
        ctx,
        &AssemblyOptions::default(),
    )
}

/// Report of a frozen-Jacobian contraction run.
#[derive(Debug)]
pub struct FrozenNewtonReport {
    pub eps: f64,
    pub iterations: usize,
    /// residual surrogate at each iterate, starting at ubar
    pub residuals: Vec<f64>,
    /// step ratios q_k = |u_{k+1} - u_k| / |u_k - u_{k-1}| (sup norm),
    /// recorded from the second step on
    pub step_ratios: Vec<f64>,
    pub converged: bool,
    /// smallest singular value of the frozen Jacobian w.r.t. the Gram
    pub rho_hat: f64,
    /// a-posteriori bound (2/rho) ||F(ubar)||
    pub error_bound: f64,
    /// measured ||u - ubar|| in the discrete H^1 norm
    pub h1_distance: f64,
    /// h1_distance / error_bound (<= 1 up to estimation slack when the
    /// contraction holds)
    pub bound_ratio: f64,
    pub final_field: DiscreteField,
}

/// Frozen-Jacobian iteration `u <- u - J(ubar)^{-1} F(u)` started at `ubar`
/// with the Jacobian factored once. Divergence (persistent step ratios >= 1
/// or tenfold residual growth) reports a non-contraction error: `eps` is not
/// small enough for the contraction regime.
#[allow(clippy::too_many_arguments)]
pub fn frozen_newton_solve(
    mesh: &Arc<DomainMesh>,
    a: &PeriodicCoefficient,
    eps: f64,
    b: Option<&DefectCoefficient>,
    nl: &Nonlinearity,
    ubar: &ApproximateSolution,
    config: &SolverConfig,
    ctx: &SolveContext,
    opts: &AssemblyOptions,
) -> Result<FrozenNewtonReport> {
    config.validate()?;
    let n = a.system_size();
    let scale = Scale::Eps(eps);
    let j = assemble_jacobian(mesh, a, scale, b, nl, ubar.field(), opts)?;
    let factor = LduFactor::new(&j, grid_ordering(mesh, n))
        .map_err(|e| Error::Breakdown(format!("Jacobian at ubar is not factorizable: {e}")))?;

    let mut u = ubar.field().clone();
    let mut f = assemble_semilinear_residual(mesh, a, scale, b, nl, &u, opts)?;
    let res0 = ctx.dual.dual_norm(&f);
    let mut residuals = vec![res0];
    let mut step_ratios = Vec::new();
    let mut prev_step: Option<f64> = None;
    let mut bad_ratios = 0usize;
    let mut iterations = 0;
    let mut res = res0;

    while res > config.tol {
        if iterations >= config.max_iter {
            return Err(Error::NoConvergence {
                solver: "frozen newton",
                iters: iterations,
                residual: res,
            });
        }
        let delta = factor.solve(&f);
        let step = sup_norm_components(&delta, n);
        if let Some(prev) = prev_step {
            if prev > 0.0 {
                let q = step / prev;
                step_ratios.push(q);
                if q >= 1.0 {
                    bad_ratios += 1;
                    if bad_ratios >= config.q_window {
                        return Err(Error::NonContractive {
                            consecutive: bad_ratios,
                        });
                    }
                } else {
                    bad_ratios = 0;
                }
            }
        }
        prev_step = Some(step);
        let next: Vec<f64> = u
            .interior_vector()
            .iter()
            .zip(&delta)
            .map(|(ui, di)| ui - di)
            .collect();
        u.set_interior(&next);
        f = assemble_semilinear_residual(mesh, a, scale, b, nl, &u, opts)?;
        res = ctx.dual.dual_norm(&f);
        residuals.push(res);
        iterations += 1;
        if res > 10.0 * res0 {
            return Err(Error::NonContractive { consecutive: 0 });
        }
    }

    let (rho_hat, _) = smallest_singular_value(&factor, ctx.dual.gram(), 1e-6, 500)?;
    let error_bound = 2.0 / rho_hat * res0;
    let diff: Vec<f64> = u
        .interior_vector()
        .iter()
        .zip(ubar.field().interior_vector())
        .map(|(x, y)| x - y)
        .collect();
    let h1_distance = ctx.dual.h1_norm(&diff);
    Ok(FrozenNewtonReport {
        eps,
        iterations,
        residuals,
        step_ratios,
        converged: true,
        rho_hat,
        error_bound,
        h1_distance,
        bound_ratio: if error_bound > 0.0 {
            h1_distance / error_bound
        } else {
            0.0
        },
        final_field: u,
    })
}

/// Outcome of the local-uniqueness probe.
#[derive(Debug)]
pub struct ProbeReport {
    pub trials: usize,
    pub converged_trials: usize,
    /// indices of trials whose iteration did not converge
    pub diverged: Vec<usize>,
    /// max nodal sup distance between converged trial solutions
    pub max_spread: f64,
}

/// Restarts the frozen iteration from random sup-norm perturbations of `ubar`
/// and reports the spread of the resulting solutions. Diverged trials are
/// recorded, not fatal.
#[allow(clippy::too_many_arguments)]
pub fn local_uniqueness_probe(
    mesh: &Arc<DomainMesh>,
    a: &PeriodicCoefficient,
    eps: f64,
    b: Option<&DefectCoefficient>,
    nl: &Nonlinearity,
    ubar: &ApproximateSolution,
    config: &SolverConfig,
    ctx: &SolveContext,
    opts: &AssemblyOptions,
    delta: f64,
    trials: usize,
    seed: u64,
) -> Result<ProbeReport> {
    if delta < 0.0 {
        return Err(Error::invalid("probe radius must be nonnegative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut finals: Vec<DiscreteField> = Vec::new();
    let mut diverged = Vec::new();
    for t in 0..trials {
        let mut field = ubar.field().clone();
        if delta > 0.0 {
            let mut interior = field.interior_vector();
            for v in interior.iter_mut() {
                *v += rng.gen_range(-delta..=delta);
            }
            field.set_interior(&interior);
        }
        let perturbed = ubar.with_field(field)?;
        match frozen_newton_solve(mesh, a, eps, b, nl, &perturbed, config, ctx, opts) {
            Ok(report) => finals.push(report.final_field),
            Err(Error::NonContractive { .. }) | Err(Error::NoConvergence { .. }) => {
                diverged.push(t);
            }
            Err(other) => return Err(other),
        }
    }
    let mut max_spread = 0.0f64;
    for i in 0..finals.len() {
        for j in (i + 1)..finals.len() {
            max_spread = max_spread.max(finals[i].sup_diff(&finals[j]));
        }
    }
    Ok(ProbeReport {
        trials,
        converged_trials: finals.len(),
        diverged,
        max_spread,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble_mass, assemble_stiffness, solve_spd};
    use crate::cell::{homogenized_tensor, solve_cell_problems};
    use crate::coeffs::{CoeffBlock, SourceTerm};
    use crate::corrector::{build_approximate_solution, build_cutoff, Variant};
    use crate::mesh::{build_domain_mesh, build_unit_cell_grid};

    fn unit_square(m: usize) -> Arc<DomainMesh> {
        Arc::new(build_domain_mesh(2, &[[0.0, 1.0], [0.0, 1.0]], m).unwrap())
    }

    fn constant_tensor(s: f64) -> HomogenizedTensor {
        let grid = Arc::new(build_unit_cell_grid(2, 4).unwrap());
        let a = PeriodicCoefficient::constant(CoeffBlock::scalar_identity(2, 1, s));
        let v = solve_cell_problems(&grid, &a).unwrap();
        homogenized_tensor(&grid, &a, &v).unwrap()
    }

    #[test]
    fn zero_nonlinearity_gives_zero_solution() {
        let mesh = unit_square(16);
        let ctx = SolveContext::new(&mesh, 1).unwrap();
        let hat = constant_tensor(2.0);
        let nl = Nonlinearity::zero(2, 1);
        let (u, report) =
            newton_homogenized(&mesh, &hat, &nl, &SolverConfig::default(), None, &ctx).unwrap();
        assert!(u.sup_norm() == 0.0);
        assert!(report.converged);
        assert_eq!(report.iterations, 0);
        assert!(report.rho_hat > 0.0);
    }

    #[test]
    fn linear_problem_converges_in_one_step() {
        let mesh = unit_square(24);
        let ctx = SolveContext::new(&mesh, 1).unwrap();
        let hat = constant_tensor(1.0);
        let nl = Nonlinearity::reaction(2, 1, 1.0, 0.0, SourceTerm::SinProduct { amplitude: 5.0 });
        let (u, report) =
            newton_homogenized(&mesh, &hat, &nl, &SolverConfig::default(), None, &ctx).unwrap();
        assert_eq!(report.iterations, 1);
        assert!(u.sup_norm() > 0.0);
    }

    #[test]
    fn manufactured_cubic_solution_is_recovered() {
        // build a P1 source g so the chosen target field solves the discrete
        // homogenized problem exactly, then ask Newton to find it
        let mesh = unit_square(24);
        let ctx = SolveContext::new(&mesh, 1).unwrap();
        let hat = constant_tensor(2.0);
        let mut w = DiscreteField::from_fn(&mesh, 1, |x, _| {
            (std::f64::consts::PI * x[0]).sin() * (std::f64::consts::PI * x[1]).sin()
        });
        w.clamp_dirichlet();
        // t = K w + barycenter-rule integral of (w^3 + w)
        let k = assemble_stiffness(
            &mesh,
            &hat.as_coefficient(),
            Scale::Infinite,
            None,
            &AssemblyOptions::default(),
        )
        .unwrap();
        let mut t = k.apply(&w.interior_vector());
        for e in 0..mesh.num_elems() {
            let el = mesh.elem(e);
            let wbar: f64 =
                el.iter().map(|&nid| w.value(nid as usize, 0)).sum::<f64>() / el.len() as f64;
            let load = mesh.volume(e) * (wbar.powi(3) + wbar) / 3.0;
            for &nid in el {
                if let Some(p) = mesh.interior_index(nid as usize) {
                    t[p] += load;
                }
            }
        }
        // g as a P1 field: interior barycenter mass inverse applied to t
        let mass = assemble_mass(&mesh, 1);
        let g_int = solve_spd(&mass, &t).unwrap();
        let mut g = DiscreteField::zeros(&mesh, 1);
        g.set_interior(&g_int);
        let g = Arc::new(g);
        let src = {
            let g = Arc::clone(&g);
            SourceTerm::Custom(Arc::new(move |x: &[f64]| g.eval(x)[0]))
        };
        let nl = Nonlinearity::reaction(2, 1, 1.0, 1.0, src);
        let config = SolverConfig {
            tol: 1e-12,
            ..Default::default()
        };
        let (u, report) = newton_homogenized(&mesh, &hat, &nl, &config, None, &ctx).unwrap();
        assert!(report.converged);
        assert!(
            u.sup_diff(&w) <= 1e-8,
            "recovered target within {}",
            u.sup_diff(&w)
        );
    }

    fn laminate_cubic_fixture(
        m: usize,
        eps: f64,
    ) -> (
        Arc<DomainMesh>,
        PeriodicCoefficient,
        Nonlinearity,
        ApproximateSolution,
        SolveContext,
        DiscreteField,
    ) {
        let mesh = unit_square(m);
        let a = PeriodicCoefficient::scalar_laminate(2, 2.0, 1.0);
        let nl = Nonlinearity::reaction(2, 1, 1.0, 1.0, SourceTerm::SinProduct { amplitude: 40.0 });
        let grid = Arc::new(build_unit_cell_grid(2, 64).unwrap());
        let v = solve_cell_problems(&grid, &a).unwrap();
        let hat = homogenized_tensor(&grid, &a, &v).unwrap();
        let ctx = SolveContext::new(&mesh, 1).unwrap();
        let config = SolverConfig {
            tol: 1e-10,
            ..Default::default()
        };
        let (u0, _) = newton_homogenized(&mesh, &hat, &nl, &config, None, &ctx).unwrap();
        let eta = build_cutoff(&mesh, eps).unwrap();
        let ubar =
            build_approximate_solution(Variant::Plain2d, &u0, &v, eps, &eta, None, 8.0).unwrap();
        (mesh, a, nl, ubar, ctx, u0)
    }

    #[test]
    fn frozen_iteration_is_exact_for_linear_problems() {
        let mesh = unit_square(64);
        let a = PeriodicCoefficient::scalar_laminate(2, 2.0, 1.0);
        let nl = Nonlinearity::reaction(2, 1, 1.0, 0.0, SourceTerm::SinProduct { amplitude: 3.0 });
        let ctx = SolveContext::new(&mesh, 1).unwrap();
        let eps = 0.25;
        let grid = Arc::new(build_unit_cell_grid(2, 32).unwrap());
        let v = solve_cell_problems(&grid, &a).unwrap();
        let hat = homogenized_tensor(&grid, &a, &v).unwrap();
        let config = SolverConfig {
            tol: 1e-9,
            ..Default::default()
        };
        let (u0, _) = newton_homogenized(&mesh, &hat, &nl, &config, None, &ctx).unwrap();
        let eta = build_cutoff(&mesh, eps).unwrap();
        let ubar =
            build_approximate_solution(Variant::Plain2d, &u0, &v, eps, &eta, None, 8.0).unwrap();
        let report = frozen_newton_solve(
            &mesh,
            &a,
            eps,
            None,
            &nl,
            &ubar,
            &config,
            &ctx,
            &AssemblyOptions::default(),
        )
        .unwrap();
        assert_eq!(report.iterations, 1, "linear: G is exact in one step");
    }

    #[test]
    fn frozen_matches_full_newton_and_contracts() {
        let eps = 1.0 / 8.0;
        let (mesh, a, nl, ubar, ctx, _) = laminate_cubic_fixture(128, eps);
        let config = SolverConfig {
            tol: 1e-10,
            ..Default::default()
        };
        let opts = AssemblyOptions::default();
        let frozen =
            frozen_newton_solve(&mesh, &a, eps, None, &nl, &ubar, &config, &ctx, &opts).unwrap();
        assert!(frozen.converged);
        for &q in &frozen.step_ratios {
            assert!(q <= 0.5, "step ratio {q} above 1/2");
        }
        let (full, _) = full_newton(
            &mesh,
            &a,
            Scale::Eps(eps),
            None,
            &nl,
            &config,
            Some(ubar.field()),
            &ctx,
            &opts,
        )
        .unwrap();
        assert!(
            frozen.final_field.sup_diff(&full) <= 1e-8,
            "frozen vs full {}",
            frozen.final_field.sup_diff(&full)
        );
        // a-posteriori bound with measured constants
        assert!(frozen.rho_hat > 0.0);
        assert!(
            frozen.bound_ratio <= 1.1,
            "bound ratio {} out of range",
            frozen.bound_ratio
        );
    }

    #[test]
    fn reported_residual_matches_reassembly() {
        let eps = 1.0 / 8.0;
        let (mesh, a, nl, ubar, ctx, _) = laminate_cubic_fixture(128, eps);
        let config = SolverConfig {
            tol: 1e-10,
            ..Default::default()
        };
        let opts = AssemblyOptions::default();
        let report =
            frozen_newton_solve(&mesh, &a, eps, None, &nl, &ubar, &config, &ctx, &opts).unwrap();
        let f = assemble_semilinear_residual(
            &mesh,
            &a,
            Scale::Eps(eps),
            None,
            &nl,
            &report.final_field,
            &opts,
        )
        .unwrap();
        let res = ctx.dual().dual_norm(&f);
        let reported = *report.residuals.last().unwrap();
        assert!(
            (res - reported).abs() <= 1e-12 + 1e-9 * reported,
            "{res} vs {reported}"
        );
    }

    #[test]
    fn probe_with_zero_radius_has_zero_spread() {
        let eps = 1.0 / 8.0;
        let (mesh, a, nl, ubar, ctx, _) = laminate_cubic_fixture(128, eps);
        let config = SolverConfig {
            tol: 1e-10,
            ..Default::default()
        };
        let report = local_uniqueness_probe(
            &mesh,
            &a,
            eps,
            None,
            &nl,
            &ubar,
            &config,
            &ctx,
            &AssemblyOptions::default(),
            0.0,
            3,
            7,
        )
        .unwrap();
        assert_eq!(report.converged_trials, 3);
        assert_eq!(report.max_spread, 0.0);
    }

    #[test]
    fn probe_trials_land_on_the_same_solution() {
        let eps = 1.0 / 8.0;
        let (mesh, a, nl, ubar, ctx, _) = laminate_cubic_fixture(128, eps);
        let config = SolverConfig {
            tol: 1e-10,
            max_iter: 40,
            ..Default::default()
        };
        let report = local_uniqueness_probe(
            &mesh,
            &a,
            eps,
            None,
            &nl,
            &ubar,
            &config,
            &ctx,
            &AssemblyOptions::default(),
            0.1,
            4,
            13,
        )
        .unwrap();
        assert_eq!(report.converged_trials, 4, "diverged: {:?}", report.diverged);
        assert!(report.max_spread <= 1e-6, "spread {}", report.max_spread);
    }
}
