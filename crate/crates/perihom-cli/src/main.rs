//! Batch driver for homogenization experiments: cell problems, frozen-Newton
//! solves, and the epsilon-ladder studies, all configured by a JSON file.
//!
//! Exit codes: 0 success, 2 config error, 3 solver divergence, 4 numerical
//! failure.

use clap::{Parser, Subcommand};
use perihom::cell::{flux_correctors, homogenized_tensor, solve_cell_problems};
use perihom::config::ExperimentConfig;
use perihom::corrector::{build_approximate_solution, build_cutoff, Mollifier, Variant};
use perihom::export;
use perihom::mesh::build_unit_cell_grid;
use perihom::solver::{frozen_newton_solve, local_uniqueness_probe};
use perihom::study::{defect_decay_study, rate_study, residual_decay_study, NormPair, Pipeline, StudyProblem};
use perihom::{Error, Result};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

#[derive(Parser)]
#[command(name = "perihom", version, about = "periodic homogenization experiments")]
struct Cli {
    /// experiment configuration (JSON)
    #[arg(long, global = true, default_value = "experiment.json")]
    config: PathBuf,
    /// output directory for artifacts
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// parallel ladder execution (1 = deterministic single thread)
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// overrides the config seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// solve the cell problems and export correctors and the tensor
    Cell,
    /// build the approximate solution and run the frozen-Jacobian solve
    Solve,
    /// convergence-rate study over the eps ladder
    Rate,
    /// defect-operator decay study
    Defect,
    /// residual decay of the approximate family
    Residual,
    /// local-uniqueness probe with perturbed restarts
    Probe,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::InvalidArg(_) | Error::Shape(_) => ExitCode::from(2),
                Error::NonContractive { .. } | Error::NoConvergence { .. } => ExitCode::from(3),
                _ => ExitCode::from(4),
            }
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = ExperimentConfig::load(&cli.config)?;
    let seed = cli.seed.or(cfg.seed).unwrap_or(0);
    match cli.cmd {
        Cmd::Cell => cmd_cell(&cfg, &cli.out),
        Cmd::Solve => cmd_solve(&cfg, &cli.out),
        Cmd::Rate => cmd_rate(&cfg, &cli.out, cli.threads),
        Cmd::Defect => cmd_defect(&cfg, &cli.out, cli.threads),
        Cmd::Residual => cmd_residual(&cfg, &cli.out, cli.threads),
        Cmd::Probe => cmd_probe(&cfg, &cli.out, seed),
    }
}

fn study_problem(cfg: &ExperimentConfig) -> Result<StudyProblem> {
    Ok(StudyProblem {
        mesh: Arc::new(cfg.build_mesh()?),
        cell_m: cfg.cell_m,
        a: cfg.build_coefficient()?,
        defect: cfg.build_defect()?,
        nl: cfg.build_nonlinearity(),
    })
}

fn require_eps(cfg: &ExperimentConfig) -> Result<f64> {
    cfg.eps
        .ok_or_else(|| Error::config("this command needs an `eps` entry in the config"))
}

fn require_ladder(cfg: &ExperimentConfig) -> Result<&[f64]> {
    if cfg.eps_ladder.is_empty() {
        return Err(Error::config("this command needs a nonempty `eps_ladder`"));
    }
    Ok(&cfg.eps_ladder)
}

fn cmd_cell(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let grid = Arc::new(build_unit_cell_grid(cfg.mesh.d, cfg.cell_m)?);
    let a = cfg.build_coefficient()?;
    let density = cfg.sample_density.unwrap_or(64);
    let c0 = perihom::coeffs::coercivity_constant(&a, density)?;
    let correctors = solve_cell_problems(&grid, &a)?;
    let hat = homogenized_tensor(&grid, &a, &correctors)?;
    let flux = flux_correctors(&grid, &a, &correctors, &hat)?;
    export::write_corrector_csv(&out.join("correctors.csv"), &correctors)?;
    export::write_tensor_json(&out.join("a_hat.json"), &hat)?;
    println!("cell grid: d={} m={} masters={}", cfg.mesh.d, cfg.cell_m, grid.num_masters());
    println!("coefficient coercivity (sampled): {c0:.6}");
    for i in 0..cfg.mesh.d {
        for j in 0..cfg.mesh.d {
            println!("a_hat[{}][{}] = {:.7}", i + 1, j + 1, hat.entry(i, j, 0, 0));
        }
    }
    println!("a_hat coercivity: {:.6}", hat.coercivity());
    println!(
        "flux correctors: antisymmetry defect {:.3e}, weak identity surrogate {:.3e}",
        flux.max_antisymmetry_defect(),
        flux.weak_identity_surrogate()
    );
    Ok(())
}

fn cmd_solve(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let eps = require_eps(cfg)?;
    let problem = study_problem(cfg)?;
    let pipeline = Pipeline::new(problem, &cfg.solver_config())?;
    let variant = cfg.variant_enum()?;
    let moll = (variant == Variant::Smoothed2d).then(|| Mollifier::new(cfg.mesh.d));
    let eta = build_cutoff(&pipeline.problem.mesh, eps)?;
    let ubar = build_approximate_solution(
        variant,
        &pipeline.u0,
        &pipeline.correctors,
        eps,
        &eta,
        moll.as_ref(),
        cfg.assembly_options().resolution_floor,
    )?;
    let report = frozen_newton_solve(
        &pipeline.problem.mesh,
        &pipeline.problem.a,
        eps,
        pipeline.problem.defect.as_ref(),
        &pipeline.problem.nl,
        &ubar,
        &cfg.solver_config(),
        &pipeline.ctx,
        &cfg.assembly_options(),
    )?;
    export::write_solution_csv(&out.join("solution.csv"), &report.final_field)?;
    export::write_approx_csv(&out.join("ubar.csv"), &pipeline.u0, &ubar)?;
    export::write_frozen_report_json(&out.join("frozen_report.json"), &report)?;
    export::write_newton_report_json(&out.join("u0_report.json"), &pipeline.u0_report)?;
    export::write_mesh_summary(&out.join("mesh.json"), &pipeline.problem.mesh)?;
    let q_max = report.step_ratios.iter().cloned().fold(0.0f64, f64::max);
    println!(
        "frozen solve: eps={eps} iterations={} residual={:.3e} q_max={:.3} rho_hat={:.4}",
        report.iterations,
        report.residuals.last().unwrap(),
        q_max,
        report.rho_hat
    );
    println!(
        "a-posteriori: |u - ubar|_H1 = {:.4e} <= {:.4e} (ratio {:.3})",
        report.h1_distance, report.error_bound, report.bound_ratio
    );
    Ok(())
}

fn cmd_rate(cfg: &ExperimentConfig, out: &Path, threads: usize) -> Result<()> {
    let ladder = require_ladder(cfg)?.to_vec();
    let problem = study_problem(cfg)?;
    let opts = cfg.study_options(threads)?;
    let pipeline = Pipeline::new(problem, &opts.solver)?;
    let result = rate_study(&pipeline, &ladder, cfg.variant_enum()?, &opts)?;
    export::write_rate_csv(&out.join("rate.csv"), &result)?;
    export::write_rate_json(
        &out.join("rate.json"),
        &result,
        serde_json::json!({
            "u0_rho_hat": pipeline.u0_report.rho_hat,
            "defect": cfg.defect.is_some(),
        }),
    )?;
    if cfg.svg {
        let pts: Vec<(f64, f64)> = result
            .entries
            .iter()
            .filter_map(|e| e.err_sup.map(|v| (e.eps, v)))
            .collect();
        export::svg_loglog(
            &out.join("rate.svg"),
            "sup-norm error vs eps",
            &pts,
            result.lambda.map(|f| (f.slope, f.intercept)),
        )?;
    }
    for e in &result.entries {
        println!(
            "eps={:.6} err_sup={} resid={} iters={} converged={}",
            e.eps,
            e.err_sup.map_or("nan".into(), |v| format!("{v:.6e}")),
            e.resid_dual.map_or("nan".into(), |v| format!("{v:.6e}")),
            e.iters,
            e.converged
        );
    }
    match &result.lambda {
        Some(fit) => println!(
            "lambda_hat = {:.4} (R^2 = {:.4})",
            fit.slope, fit.r_squared
        ),
        None => println!("lambda_hat not fitted"),
    }
    for note in &result.notes {
        println!("note: {note}");
    }
    Ok(())
}

fn cmd_defect(cfg: &ExperimentConfig, out: &Path, threads: usize) -> Result<()> {
    let ladder = require_ladder(cfg)?.to_vec();
    let problem = study_problem(cfg)?;
    let Some(defect) = problem.defect.clone() else {
        return Err(Error::config("defect study needs a `defect` entry"));
    };
    let opts = cfg.study_options(threads)?;
    // fixed field: the homogenized solution on the study mesh
    let pipeline = Pipeline::new(problem, &opts.solver)?;
    let result = defect_decay_study(
        &defect,
        &pipeline.u0,
        &ladder,
        NormPair::sobolev(f64::INFINITY, 2.0),
        &opts,
    )?;
    export::write_xy_csv(
        &out.join("defect.csv"),
        ("eps", "b_eps_dual"),
        &result.entries,
        result.slope.map(|f| f.slope),
    )?;
    export::write_defect_json(&out.join("defect.json"), &result)?;
    if cfg.svg {
        export::svg_loglog(
            &out.join("defect.svg"),
            "defect operator decay",
            &result.entries,
            result.slope.map(|f| (f.slope, f.intercept)),
        )?;
    }
    match &result.slope {
        Some(fit) => println!("defect decay slope = {:.4} (R^2 = {:.4})", fit.slope, fit.r_squared),
        None => println!("defect decay slope not fitted"),
    }
    Ok(())
}

fn cmd_residual(cfg: &ExperimentConfig, out: &Path, threads: usize) -> Result<()> {
    let ladder = require_ladder(cfg)?.to_vec();
    let problem = study_problem(cfg)?;
    let opts = cfg.study_options(threads)?;
    let pipeline = Pipeline::new(problem, &opts.solver)?;
    let result = residual_decay_study(&pipeline, &ladder, cfg.variant_enum()?, &opts)?;
    export::write_xy_csv(
        &out.join("residual.csv"),
        ("eps", "residual_dual"),
        &result.entries,
        result.slope.map(|f| f.slope),
    )?;
    export::write_residual_json(
        &out.join("residual.json"),
        &result,
        serde_json::json!({"variant": result.variant.as_str()}),
    )?;
    if cfg.svg {
        export::svg_loglog(
            &out.join("residual.svg"),
            "approximate-family residual decay",
            &result.entries,
            result.slope.map(|f| (f.slope, f.intercept)),
        )?;
    }
    for (eps, v) in &result.entries {
        println!("eps={eps:.6} residual={v:.6e}");
    }
    match &result.slope {
        Some(fit) => println!("residual decay slope = {:.4}", fit.slope),
        None => println!("residual decay slope not fitted"),
    }
    Ok(())
}

fn cmd_probe(cfg: &ExperimentConfig, out: &Path, seed: u64) -> Result<()> {
    let eps = require_eps(cfg)?;
    let Some(probe) = cfg.probe else {
        return Err(Error::config("probe command needs a `probe` entry"));
    };
    let problem = study_problem(cfg)?;
    let pipeline = Pipeline::new(problem, &cfg.solver_config())?;
    let variant = cfg.variant_enum()?;
    let moll = (variant == Variant::Smoothed2d).then(|| Mollifier::new(cfg.mesh.d));
    let eta = build_cutoff(&pipeline.problem.mesh, eps)?;
    let ubar = build_approximate_solution(
        variant,
        &pipeline.u0,
        &pipeline.correctors,
        eps,
        &eta,
        moll.as_ref(),
        cfg.assembly_options().resolution_floor,
    )?;
    let report = local_uniqueness_probe(
        &pipeline.problem.mesh,
        &pipeline.problem.a,
        eps,
        pipeline.problem.defect.as_ref(),
        &pipeline.problem.nl,
        &ubar,
        &cfg.solver_config(),
        &pipeline.ctx,
        &cfg.assembly_options(),
        probe.delta,
        probe.trials,
        seed,
    )?;
    export::write_probe_report_json(&out.join("probe.json"), &report)?;
    println!(
        "probe: {}/{} trials converged, max spread {:.3e}",
        report.converged_trials, report.trials, report.max_spread
    );
    if !report.diverged.is_empty() {
        println!("diverged trials: {:?}", report.diverged);
    }
    Ok(())
}
