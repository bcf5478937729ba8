//! Artifact writers: CSV tables, JSON summaries, matrix-market dumps and a
//! minimal static SVG log-log plot for the studies.

use crate::assembly::DiscreteField;
use crate::cell::{CorrectorSet, HomogenizedTensor};
use crate::corrector::ApproximateSolution;
use crate::mesh::DomainMesh;
use crate::solver::{FrozenNewtonReport, NewtonReport, ProbeReport};
use crate::study::{DefectDecayResult, RateStudyResult, ResidualDecayResult};
use crate::Result;
use serde::Serialize;
use std::io::Write;
use std::path::Path;

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    Ok(std::io::BufWriter::new(std::fs::File::create(path)?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}

/// Mesh summary: node count, element count, max element diameter.
pub fn mesh_summary_json(mesh: &DomainMesh) -> serde_json::Value {
    serde_json::json!({
        "nodes": mesh.num_nodes(),
        "elements": mesh.num_elems(),
        "h_max": mesh.h_max(),
        "dimension": mesh.dimension(),
    })
}

pub fn write_mesh_summary(path: &Path, mesh: &DomainMesh) -> Result<()> {
    write_json(path, &mesh_summary_json(mesh))
}

/// Homogenized tensor entries and coercivity estimate.
pub fn write_tensor_json(path: &Path, hat: &HomogenizedTensor) -> Result<()> {
    let d = hat.block().d();
    let n = hat.block().n();
    let mut entries = Vec::new();
    for i in 0..d {
        for j in 0..d {
            for a in 0..n {
                for b in 0..n {
                    entries.push(serde_json::json!({
                        "i": i, "j": j, "alpha": a, "beta": b,
                        "value": hat.entry(i, j, a, b),
                    }));
                }
            }
        }
    }
    write_json(
        path,
        &serde_json::json!({
            "dimension": d,
            "system_size": n,
            "entries": entries,
            "coercivity": hat.coercivity(),
        }),
    )
}

/// Corrector nodal table: cell coordinates then one column per
/// `(direction j, problem beta, component gamma)`.
pub fn write_corrector_csv(path: &Path, correctors: &CorrectorSet) -> Result<()> {
    let grid = correctors.grid();
    let d = correctors.dimension();
    let n = correctors.system_size();
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header: Vec<String> = (0..d).map(|k| format!("y{}", k + 1)).collect();
    for j in 0..d {
        for beta in 0..n {
            for gamma in 0..n {
                header.push(format!("v_{}_{}_{}", j + 1, beta + 1, gamma + 1));
            }
        }
    }
    w.write_record(&header)?;
    for (idx, &master) in grid.masters().iter().enumerate() {
        let y = grid.node(master as usize);
        let mut row: Vec<String> = y.iter().map(|c| format!("{c}")).collect();
        for j in 0..d {
            for beta in 0..n {
                let f = correctors.field(j, beta);
                for gamma in 0..n {
                    row.push(format!("{}", f[idx * n + gamma]));
                }
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Nodal solution table: coordinates, then each component.
pub fn write_solution_csv(path: &Path, u: &DiscreteField) -> Result<()> {
    let mesh = u.mesh();
    let d = mesh.dimension();
    let n = u.components();
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header: Vec<String> = (0..d).map(|k| format!("x{}", k + 1)).collect();
    for c in 0..n {
        header.push(format!("u{}", c + 1));
    }
    w.write_record(&header)?;
    for node in 0..mesh.num_nodes() {
        let x = mesh.node(node);
        let mut row: Vec<String> = x.iter().map(|c| format!("{c}")).collect();
        for c in 0..n {
            row.push(format!("{}", u.value(node, c)));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Approximate-solution table: coordinates, u0, ubar and their difference.
pub fn write_approx_csv(path: &Path, u0: &DiscreteField, ubar: &ApproximateSolution) -> Result<()> {
    let mesh = u0.mesh();
    let d = mesh.dimension();
    let n = u0.components();
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header: Vec<String> = (0..d).map(|k| format!("x{}", k + 1)).collect();
    for c in 0..n {
        header.push(format!("u0_{}", c + 1));
    }
    for c in 0..n {
        header.push(format!("ubar_{}", c + 1));
    }
    for c in 0..n {
        header.push(format!("diff_{}", c + 1));
    }
    w.write_record(&header)?;
    for node in 0..mesh.num_nodes() {
        let x = mesh.node(node);
        let mut row: Vec<String> = x.iter().map(|c| format!("{c}")).collect();
        for c in 0..n {
            row.push(format!("{}", u0.value(node, c)));
        }
        for c in 0..n {
            row.push(format!("{}", ubar.field().value(node, c)));
        }
        for c in 0..n {
            row.push(format!("{}", ubar.field().value(node, c) - u0.value(node, c)));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct FrozenReportJson<'a> {
    eps: f64,
    iterations: usize,
    converged: bool,
    residuals: &'a [f64],
    step_ratios: &'a [f64],
    rho_hat: f64,
    error_bound: f64,
    h1_distance: f64,
    bound_ratio: f64,
}

pub fn write_frozen_report_json(path: &Path, report: &FrozenNewtonReport) -> Result<()> {
    write_json(
        path,
        &FrozenReportJson {
            eps: report.eps,
            iterations: report.iterations,
            converged: report.converged,
            residuals: &report.residuals,
            step_ratios: &report.step_ratios,
            rho_hat: report.rho_hat,
            error_bound: report.error_bound,
            h1_distance: report.h1_distance,
            bound_ratio: report.bound_ratio,
        },
    )
}

#[derive(Serialize)]
struct NewtonReportJson<'a> {
    iterations: usize,
    converged: bool,
    residuals: &'a [f64],
    rho_hat: f64,
}

pub fn write_newton_report_json(path: &Path, report: &NewtonReport) -> Result<()> {
    write_json(
        path,
        &NewtonReportJson {
            iterations: report.iterations,
            converged: report.converged,
            residuals: &report.residuals,
            rho_hat: report.rho_hat,
        },
    )
}

pub fn write_probe_report_json(path: &Path, report: &ProbeReport) -> Result<()> {
    write_json(
        path,
        &serde_json::json!({
            "trials": report.trials,
            "converged_trials": report.converged_trials,
            "diverged": report.diverged,
            "max_spread": report.max_spread,
        }),
    )
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".into(), |t| format!("{t}"))
}

/// Rate study CSV: one row per ladder point plus a summary row with the fit.
pub fn write_rate_csv(path: &Path, result: &RateStudyResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record([
        "eps",
        "err_sup",
        "resid_dual",
        "q_max",
        "iters",
        "converged",
        "rho_hat",
        "bound_ratio",
    ])?;
    for e in &result.entries {
        w.write_record(&[
            format!("{}", e.eps),
            fmt_opt(e.err_sup),
            fmt_opt(e.resid_dual),
            fmt_opt(e.q_max),
            format!("{}", e.iters),
            format!("{}", e.converged),
            fmt_opt(e.rho_hat),
            fmt_opt(e.bound_ratio),
        ])?;
    }
    if let Some(fit) = &result.lambda {
        w.write_record(&[
            "lambda_hat".to_string(),
            format!("{}", fit.slope),
            format!("r2={}", fit.r_squared),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_rate_json(
    path: &Path,
    result: &RateStudyResult,
    metadata: serde_json::Value,
) -> Result<()> {
    write_json(
        path,
        &serde_json::json!({
            "variant": result.variant.as_str(),
            "entries": result.entries,
            "lambda": result.lambda,
            "notes": result.notes,
            "metadata": metadata,
        }),
    )
}

/// Two-column study CSV (eps, value) with an optional fitted-slope footer.
pub fn write_xy_csv(
    path: &Path,
    header: (&str, &str),
    entries: &[(f64, f64)],
    slope: Option<f64>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record([header.0, header.1])?;
    for (e, v) in entries {
        w.write_record(&[format!("{e}"), format!("{v}")])?;
    }
    if let Some(s) = slope {
        w.write_record(&["slope".to_string(), format!("{s}")])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_defect_json(path: &Path, result: &DefectDecayResult) -> Result<()> {
    write_json(
        path,
        &serde_json::json!({
            "entries": result.entries,
            "slope": result.slope,
            "pair": result.pair,
        }),
    )
}

pub fn write_residual_json(
    path: &Path,
    result: &ResidualDecayResult,
    metadata: serde_json::Value,
) -> Result<()> {
    write_json(
        path,
        &serde_json::json!({
            "variant": result.variant.as_str(),
            "entries": result.entries,
            "slope": result.slope,
            "metadata": metadata,
        }),
    )
}

/// Minimal static SVG log-log scatter with a fitted line.
pub fn svg_loglog(
    path: &Path,
    title: &str,
    points: &[(f64, f64)],
    fit: Option<(f64, f64)>,
) -> Result<()> {
    let (width, height, margin) = (640.0, 460.0, 60.0);
    let finite: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .cloned()
        .collect();
    let mut w = create(path)?;
    writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    )?;
    writeln!(
        w,
        r#"<rect width="{width}" height="{height}" fill="white"/>"#
    )?;
    writeln!(
        w,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="monospace" font-size="16">{title}</text>"#,
        width / 2.0
    )?;
    if finite.len() >= 2 {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for &(x, y) in &finite {
            x0 = x0.min(x.log10());
            x1 = x1.max(x.log10());
            y0 = y0.min(y.log10());
            y1 = y1.max(y.log10());
        }
        let pad = 0.15;
        x0 -= pad;
        x1 += pad;
        y0 -= pad;
        y1 += pad;
        let sx = |x: f64| margin + (x.log10() - x0) / (x1 - x0) * (width - 2.0 * margin);
        let sy = |y: f64| height - margin - (y.log10() - y0) / (y1 - y0) * (height - 2.0 * margin);
        // frame and decade ticks
        writeln!(
            w,
            r#"<rect x="{margin}" y="{margin}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            width - 2.0 * margin,
            height - 2.0 * margin
        )?;
        for dec in (x0.ceil() as i64)..=(x1.floor() as i64) {
            let x = margin + (dec as f64 - x0) / (x1 - x0) * (width - 2.0 * margin);
            writeln!(
                w,
                r#"<line x1="{x}" y1="{margin}" x2="{x}" y2="{}" stroke="lightgray"/>"#,
                height - margin
            )?;
            writeln!(
                w,
                r#"<text x="{x}" y="{}" text-anchor="middle" font-family="monospace" font-size="11">1e{dec}</text>"#,
                height - margin + 18.0
            )?;
        }
        for dec in (y0.ceil() as i64)..=(y1.floor() as i64) {
            let y = height - margin - (dec as f64 - y0) / (y1 - y0) * (height - 2.0 * margin);
            writeln!(
                w,
                r#"<line x1="{margin}" y1="{y}" x2="{}" y2="{y}" stroke="lightgray"/>"#,
                width - margin
            )?;
            writeln!(
                w,
                r#"<text x="{}" y="{y}" text-anchor="end" font-family="monospace" font-size="11">1e{dec}</text>"#,
                margin - 6.0
            )?;
        }
        if let Some((slope, intercept)) = fit {
            // line in natural-log coordinates: ln y = intercept + slope ln x
            let ya = (intercept + slope * (10f64.powf(x0 + pad)).ln()).exp();
            let yb = (intercept + slope * (10f64.powf(x1 - pad)).ln()).exp();
            writeln!(
                w,
                r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="steelblue" stroke-width="1.5"/>"#,
                sx(10f64.powf(x0 + pad)),
                sy(ya),
                sx(10f64.powf(x1 - pad)),
                sy(yb)
            )?;
            writeln!(
                w,
                r#"<text x="{}" y="44" text-anchor="middle" font-family="monospace" font-size="13">slope {slope:.4}</text>"#,
                width / 2.0
            )?;
        }
        for &(x, y) in &finite {
            writeln!(
                w,
                r#"<circle cx="{}" cy="{}" r="4" fill="crimson"/>"#,
                sx(x),
                sy(y)
            )?;
        }
    } else {
        writeln!(
            w,
            r#"<text x="{}" y="{}" text-anchor="middle" font-family="monospace" font-size="13">not enough positive data</text>"#,
            width / 2.0,
            height / 2.0
        )?;
    }
    writeln!(w, "</svg>")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_domain_mesh;
    use std::sync::Arc;

    #[test]
    fn solution_csv_roundtrip_row_count() {
        let dir = std::env::temp_dir().join("perihom-export-test");
        let mesh = Arc::new(build_domain_mesh(2, &[[0.0, 1.0], [0.0, 1.0]], 4).unwrap());
        let u = DiscreteField::from_fn(&mesh, 1, |x, _| x[0] + x[1]);
        let path = dir.join("solution.csv");
        write_solution_csv(&path, &u).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1 + mesh.num_nodes());
        assert!(text.starts_with("x1,x2,u1"));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn svg_plot_is_written() {
        let dir = std::env::temp_dir().join("perihom-svg-test");
        let path = dir.join("plot.svg");
        svg_loglog(
            &path,
            "study",
            &[(0.125, 0.02), (0.0625, 0.011), (0.03125, 0.005)],
            Some((0.9, 0.1)),
        )
        .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("<svg"));
        assert!(text.contains("circle"));
        std::fs::remove_dir_all(&dir).ok();
    }
}
