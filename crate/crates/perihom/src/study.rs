//! Epsilon-ladder experiments: convergence-rate measurement of the solution
//! family against the homogenized solution, defect-operator decay, and
//! residual decay of the approximate solutions, with log-log least-squares
//! fits.

use crate::assembly::{assemble_defect_residual, AssemblyOptions, DiscreteField};
use crate::cell::{homogenized_tensor, solve_cell_problems, CorrectorSet, HomogenizedTensor};
use crate::coeffs::{DefectCoefficient, Nonlinearity, PeriodicCoefficient};
use crate::corrector::{build_approximate_solution, build_cutoff, Mollifier, Variant};
use crate::mesh::{build_unit_cell_grid, DomainMesh, UnitCellGrid};
use crate::solver::{
    frozen_newton_solve, newton_homogenized, NewtonReport, SolveContext, SolverConfig,
};
use crate::{Error, Result};
use rayon::prelude::*;
use std::sync::Arc;

/// Ordinary least squares on `(ln eps, ln value)`.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct FitResult {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Which ladder points enter the fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitWindow {
    /// drop the largest eps (pre-asymptotic) - the default
    DropLargest,
    All,
}

/// Log-log least-squares fit of positive samples.
pub fn fit_loglog(points: &[(f64, f64)]) -> Result<FitResult> {
    if points.len() < 2 {
        return Err(Error::invalid("fit needs at least two points"));
    }
    if points.iter().any(|&(e, v)| e <= 0.0 || v <= 0.0) {
        return Err(Error::invalid("fit needs positive eps and values"));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let xbar = xs.iter().sum::<f64>() / n;
    let ybar = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xbar) * (x - xbar)).sum();
    let sxy: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - xbar) * (y - ybar))
        .sum();
    if sxx == 0.0 {
        return Err(Error::invalid("fit needs distinct eps values"));
    }
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let ss_tot: f64 = ys.iter().map(|y| (y - ybar) * (y - ybar)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let fit = intercept + slope * x;
            (y - fit) * (y - fit)
        })
        .sum();
    let r_squared = if ss_tot == 0.0 {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    };
    Ok(FitResult {
        slope,
        intercept,
        r_squared,
    })
}

fn validate_ladder(ladder: &[f64]) -> Result<()> {
    if ladder.is_empty() {
        return Err(Error::invalid("empty eps ladder"));
    }
    if ladder.iter().any(|&e| e <= 0.0) {
        return Err(Error::invalid("eps ladder must be positive"));
    }
    if ladder.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::invalid("eps ladder must be strictly decreasing"));
    }
    Ok(())
}

fn apply_window(points: &[(f64, f64)], window: FitWindow) -> Vec<(f64, f64)> {
    match window {
        FitWindow::All => points.to_vec(),
        FitWindow::DropLargest if points.len() > 1 => points[1..].to_vec(),
        FitWindow::DropLargest => points.to_vec(),
    }
}

/// Fits windowed study entries; `None` when fewer than four ladder points
/// survive the window.
pub fn fit_entries(points: &[(f64, f64)], window: FitWindow) -> Result<Option<FitResult>> {
    let windowed = apply_window(points, window);
    if windowed.len() < 4 {
        return Ok(None);
    }
    fit_loglog(&windowed).map(Some)
}

/// Problem description shared by the studies: one fine mesh for the whole
/// ladder, the periodic coefficient, an optional defect, and the semilinear
/// terms.
#[derive(Debug, Clone)]
pub struct StudyProblem {
    pub mesh: Arc<DomainMesh>,
    pub cell_m: usize,
    pub a: PeriodicCoefficient,
    pub defect: Option<DefectCoefficient>,
    pub nl: Nonlinearity,
}

/// Study knobs.
#[derive(Debug, Clone, Copy)]
pub struct StudyOptions {
    pub solver: SolverConfig,
    pub assembly: AssemblyOptions,
    pub window: FitWindow,
    /// ladder points run in parallel when > 1
    pub threads: usize,
}

impl Default for StudyOptions {
    fn default() -> Self {
        StudyOptions {
            solver: SolverConfig::default(),
            assembly: AssemblyOptions::default(),
            window: FitWindow::DropLargest,
            threads: 1,
        }
    }
}

/// Everything the per-eps runs share: correctors, homogenized tensor, the
/// Gram context and the homogenized solution on the study mesh.
pub struct Pipeline {
    pub problem: StudyProblem,
    pub grid: Arc<UnitCellGrid>,
    pub correctors: CorrectorSet,
    pub hat: HomogenizedTensor,
    pub ctx: SolveContext,
    pub u0: DiscreteField,
    pub u0_report: NewtonReport,
}

impl Pipeline {
    /// Shares the eps-independent work (correctors, tensor, Gram, u0) with a
    /// different defect; correctors and the homogenized solution do not
    /// depend on the localized defect.
    pub fn with_defect(&self, defect: Option<DefectCoefficient>) -> Pipeline {
        Pipeline {
            problem: StudyProblem {
                defect,
                ..self.problem.clone()
            },
            grid: Arc::clone(&self.grid),
            correctors: self.correctors.clone(),
            hat: self.hat.clone(),
            ctx: self.ctx.clone(),
            u0: self.u0.clone(),
            u0_report: self.u0_report.clone(),
        }
    }

    pub fn new(problem: StudyProblem, solver: &SolverConfig) -> Result<Pipeline> {
        let d = problem.mesh.dimension();
        let n = problem.a.system_size();
        let grid = Arc::new(build_unit_cell_grid(d, problem.cell_m)?);
        let correctors = solve_cell_problems(&grid, &problem.a)?;
        let hat = homogenized_tensor(&grid, &problem.a, &correctors)?;
        let ctx = SolveContext::new(&problem.mesh, n)?;
        let (u0, u0_report) =
            newton_homogenized(&problem.mesh, &hat, &problem.nl, solver, None, &ctx)?;
        Ok(Pipeline {
            problem,
            grid,
            correctors,
            hat,
            ctx,
            u0,
            u0_report,
        })
    }
}

/// One ladder point of a rate study.
#[derive(Debug, Clone, serde::Serialize)]
pub struct RateEntry {
    pub eps: f64,
    pub converged: bool,
    /// sup-norm error ||u_eps - u0||_inf (nodal)
    pub err_sup: Option<f64>,
    /// dual-norm surrogate of F_eps(ubar_eps)
    pub resid_dual: Option<f64>,
    pub q_max: Option<f64>,
    pub iters: usize,
    pub rho_hat: Option<f64>,
    /// ||u_eps - ubar||_{H1} / ((2/rho) ||F(ubar)||)
    pub bound_ratio: Option<f64>,
    pub warning: Option<String>,
}

/// Result of a convergence-rate study.
#[derive(Debug)]
pub struct RateStudyResult {
    pub entries: Vec<RateEntry>,
    pub lambda: Option<FitResult>,
    pub window: FitWindow,
    pub variant: Variant,
    pub notes: Vec<String>,
}

fn run_ladder<T: Send>(
    ladder: &[f64],
    threads: usize,
    f: impl Fn(f64) -> T + Sync,
) -> Result<Vec<T>> {
    if threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
        Ok(pool.install(|| ladder.par_iter().map(|&eps| f(eps)).collect()))
    } else {
        Ok(ladder.iter().map(|&eps| f(eps)).collect())
    }
}

/// Convergence-rate study: for each ladder eps build the approximate
/// solution, run the frozen-Jacobian solve, and record the sup-norm error
/// against the homogenized solution; fit the rate on the windowed ladder.
pub fn rate_study(
    pipeline: &Pipeline,
    ladder: &[f64],
    variant: Variant,
    opts: &StudyOptions,
) -> Result<RateStudyResult> {
    validate_ladder(ladder)?;
    let problem = &pipeline.problem;
    let floor = opts.assembly.resolution_floor;
    let moll = (variant == Variant::Smoothed2d).then(|| Mollifier::new(problem.mesh.dimension()));
    let entries = run_ladder(ladder, opts.threads, |eps| -> RateEntry {
        let run = || -> Result<RateEntry> {
            let eta = build_cutoff(&problem.mesh, eps)?;
            let ubar = build_approximate_solution(
                variant,
                &pipeline.u0,
                &pipeline.correctors,
                eps,
                &eta,
                moll.as_ref(),
                floor,
            )?;
            let report = frozen_newton_solve(
                &problem.mesh,
                &problem.a,
                eps,
                problem.defect.as_ref(),
                &problem.nl,
                &ubar,
                &opts.solver,
                &pipeline.ctx,
                &opts.assembly,
            )?;
            Ok(RateEntry {
                eps,
                converged: true,
                err_sup: Some(report.final_field.sup_diff(&pipeline.u0)),
                resid_dual: Some(report.residuals[0]),
                q_max: report
                    .step_ratios
                    .iter()
                    .cloned()
                    .fold(None, |m: Option<f64>, q| Some(m.map_or(q, |t| t.max(q)))),
                iters: report.iterations,
                rho_hat: Some(report.rho_hat),
                bound_ratio: Some(report.bound_ratio),
                warning: None,
            })
        };
        run().unwrap_or_else(|e| RateEntry {
            eps,
            converged: false,
            err_sup: None,
            resid_dual: None,
            q_max: None,
            iters: 0,
            rho_hat: None,
            bound_ratio: None,
            warning: Some(e.to_string()),
        })
    })?;
    let mut notes = Vec::new();
    if problem.mesh.dimension() == 1 {
        notes.push(
            "1D scalar run: the classical O(eps) sup-norm rate is expected for smooth data; \
             whether it persists for general rough scalar problems is an open question"
                .into(),
        );
    }
    for entry in entries.iter().filter(|e| !e.converged) {
        notes.push(format!(
            "eps = {} excluded from the fit: {}",
            entry.eps,
            entry.warning.as_deref().unwrap_or("diverged")
        ));
    }
    let points: Vec<(f64, f64)> = entries
        .iter()
        .filter(|e| e.converged)
        .filter_map(|e| e.err_sup.map(|v| (e.eps, v)))
        .filter(|&(_, v)| v > 0.0)
        .collect();
    let lambda = fit_entries(&points, opts.window)?;
    if lambda.is_none() {
        notes.push("rate not fitted: fewer than four usable ladder points".into());
    }
    Ok(RateStudyResult {
        entries,
        lambda,
        window: opts.window,
        variant,
        notes,
    })
}

/// Norm-pair metadata of a defect-decay study (the discrete surrogate is the
/// same in either case).
#[derive(Debug, Clone, serde::Serialize)]
pub struct NormPair {
    /// "sobolev" for the (r, s) exponent pair, "morrey" for (sigma, rho)
    pub kind: String,
    pub upper: f64,
    pub lower: f64,
}

impl NormPair {
    pub fn sobolev(r: f64, s: f64) -> Self {
        NormPair {
            kind: "sobolev".into(),
            upper: r,
            lower: s,
        }
    }

    pub fn morrey(sigma: f64, rho: f64) -> Self {
        NormPair {
            kind: "morrey".into(),
            upper: sigma,
            lower: rho,
        }
    }
}

/// Result of a defect-decay study: dual-norm surrogates of `B_eps u` for a
/// fixed field `u` over the ladder.
#[derive(Debug)]
pub struct DefectDecayResult {
    pub entries: Vec<(f64, f64)>,
    pub slope: Option<FitResult>,
    pub pair: NormPair,
}

/// Measures `||B_eps u||` surrogates for a fixed `u` and fits the decay.
pub fn defect_decay_study(
    b: &DefectCoefficient,
    u: &DiscreteField,
    ladder: &[f64],
    pair: NormPair,
    opts: &StudyOptions,
) -> Result<DefectDecayResult> {
    validate_ladder(ladder)?;
    let mesh = Arc::clone(u.mesh());
    let ctx = SolveContext::new(&mesh, u.components())?;
    let entries = run_ladder(ladder, opts.threads, |eps| -> (f64, f64) {
        let surrogate = assemble_defect_residual(&mesh, b, eps, u, &opts.assembly)
            .map(|r| ctx.dual().dual_norm(&r))
            .unwrap_or(f64::NAN);
        (eps, surrogate)
    })?;
    let points: Vec<(f64, f64)> = entries
        .iter()
        .filter(|&&(_, v)| v.is_finite() && v > 0.0)
        .cloned()
        .collect();
    let slope = fit_entries(&points, opts.window)?;
    Ok(DefectDecayResult {
        entries,
        slope,
        pair,
    })
}

/// Result of a residual-decay study: `||F_eps(ubar_eps)||` surrogates.
#[derive(Debug)]
pub struct ResidualDecayResult {
    pub entries: Vec<(f64, f64)>,
    pub slope: Option<FitResult>,
    pub variant: Variant,
}

/// Measures the discrepancy of the approximate family over the ladder.
pub fn residual_decay_study(
    pipeline: &Pipeline,
    ladder: &[f64],
    variant: Variant,
    opts: &StudyOptions,
) -> Result<ResidualDecayResult> {
    validate_ladder(ladder)?;
    let problem = &pipeline.problem;
    let floor = opts.assembly.resolution_floor;
    let moll = (variant == Variant::Smoothed2d).then(|| Mollifier::new(problem.mesh.dimension()));
    let entries = run_ladder(ladder, opts.threads, |eps| -> (f64, f64) {
        let run = || -> Result<f64> {
            let eta = build_cutoff(&problem.mesh, eps)?;
            let ubar = build_approximate_solution(
                variant,
                &pipeline.u0,
                &pipeline.correctors,
                eps,
                &eta,
                moll.as_ref(),
                floor,
            )?;
            let f = crate::assembly::assemble_semilinear_residual(
                &problem.mesh,
                &problem.a,
                crate::assembly::Scale::Eps(eps),
                problem.defect.as_ref(),
                &problem.nl,
                ubar.field(),
                &opts.assembly,
            )?;
            Ok(pipeline.ctx.dual().dual_norm(&f))
        };
        (eps, run().unwrap_or(f64::NAN))
    })?;
    let points: Vec<(f64, f64)> = entries
        .iter()
        .filter(|&&(_, v)| v.is_finite() && v > 0.0)
        .cloned()
        .collect();
    let slope = fit_entries(&points, opts.window)?;
    Ok(ResidualDecayResult {
        entries,
        slope,
        variant,
    })
}
