//! Periodic diffusion tensors, localized defects, semilinear terms, and the
//! sampled coercivity checks applied to them.
//!
//! Every evaluator is pure and reentrant; coefficients can be shared across
//! threads. The built-in gallery (constant, laminate, checkerboard, smooth
//! trig) carries independent analytic oracles used by the verification suite.

use crate::{Error, Result};
use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

const TWO_PI: f64 = 2.0 * PI;

/// Dense coefficient block `a[i][j][alpha][beta]` at a point: `i`, `j` are
/// space indices (`< d`), `alpha`, `beta` system components (`< n`).
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffBlock {
    d: usize,
    n: usize,
    v: Vec<f64>,
}

impl CoeffBlock {
    pub fn zeros(d: usize, n: usize) -> Self {
        CoeffBlock {
            d,
            n,
            v: vec![0.0; d * d * n * n],
        }
    }

    /// Isotropic scalar block `s * delta_ij` (n = 1 components embed as
    /// `alpha = beta = 0`).
    pub fn scalar_identity(d: usize, n: usize, s: f64) -> Self {
        let mut b = CoeffBlock::zeros(d, n);
        for i in 0..d {
            for a in 0..n {
                *b.at_mut(i, i, a, a) = s;
            }
        }
        b
    }

    #[inline]
    fn idx(&self, i: usize, j: usize, a: usize, b: usize) -> usize {
        ((i * self.d + j) * self.n + a) * self.n + b
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, a: usize, b: usize) -> f64 {
        self.v[self.idx(i, j, a, b)]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize, a: usize, b: usize) -> &mut f64 {
        let p = self.idx(i, j, a, b);
        &mut self.v[p]
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn fill_zero(&mut self) {
        self.v.iter_mut().for_each(|x| *x = 0.0);
    }

    pub fn scale(&mut self, s: f64) {
        self.v.iter_mut().for_each(|x| *x *= s);
    }

    pub fn add_scaled(&mut self, s: f64, other: &CoeffBlock) {
        assert_eq!(self.v.len(), other.v.len());
        for (x, y) in self.v.iter_mut().zip(&other.v) {
            *x += s * y;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    /// Smallest eigenvalue of the symmetrized Legendre form
    /// `Q[(i,a),(j,b)] = (a_ij^{ab} + a_ji^{ba}) / 2`, i.e. the exact minimum
    /// of the quadratic form over unit vectors at this point.
    pub fn legendre_min(&self) -> f64 {
        let dim = self.d * self.n;
        let mut q = vec![0.0; dim * dim];
        for i in 0..self.d {
            for a in 0..self.n {
                for j in 0..self.d {
                    for b in 0..self.n {
                        let r = i * self.n + a;
                        let c = j * self.n + b;
                        q[r * dim + c] = 0.5 * (self.at(i, j, a, b) + self.at(j, i, b, a));
                    }
                }
            }
        }
        min_eig_sym(&mut q, dim)
    }
}

/// Smallest eigenvalue of a small dense symmetric matrix (cyclic Jacobi).
pub(crate) fn min_eig_sym(q: &mut [f64], dim: usize) -> f64 {
    assert_eq!(q.len(), dim * dim);
    if dim == 1 {
        return q[0];
    }
    for _sweep in 0..64 {
        let mut off = 0.0;
        for r in 0..dim {
            for c in (r + 1)..dim {
                off += q[r * dim + c].abs();
            }
        }
        if off < 1e-14 {
            break;
        }
        for r in 0..dim {
            for c in (r + 1)..dim {
                let apq = q[r * dim + c];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = q[r * dim + r];
                let aqq = q[c * dim + c];
                let theta = 0.5 * (aqq - app) / apq;
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let cs = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * cs;
                for k in 0..dim {
                    let akp = q[k * dim + r];
                    let akq = q[k * dim + c];
                    q[k * dim + r] = cs * akp - sn * akq;
                    q[k * dim + c] = sn * akp + cs * akq;
                }
                for k in 0..dim {
                    let apk = q[r * dim + k];
                    let aqk = q[c * dim + k];
                    q[r * dim + k] = cs * apk - sn * aqk;
                    q[c * dim + k] = sn * apk + cs * aqk;
                }
            }
        }
    }
    (0..dim).map(|k| q[k * dim + k]).fold(f64::INFINITY, f64::min)
}

type CoeffFn = Arc<dyn Fn(&[f64], &mut CoeffBlock) + Send + Sync>;

/// Z^d-periodic bounded tensor `a_ij^{ab}(y)`.
#[derive(Clone)]
pub struct PeriodicCoefficient {
    d: usize,
    n: usize,
    kind: PeriodicKind,
}

#[derive(Clone)]
enum PeriodicKind {
    Constant(CoeffBlock),
    /// scalar isotropic `base + amp sin(2 pi y_1)`
    ScalarLaminate { base: f64, amp: f64 },
    /// scalar isotropic `base + amp sin(2 pi y_1) sin(2 pi y_2)` (d = 2),
    /// `base + amp sin(2 pi y)` in 1D
    ScalarTrig { base: f64, amp: f64 },
    /// two-phase bar laminate: `phase0` for frac(y_1) < 1/2, else `phase1`
    BarLaminate { phase0: f64, phase1: f64 },
    /// two-phase checkerboard with period-1 cells split at 1/2 (d = 2)
    Checkerboard { phase0: f64, phase1: f64 },
    /// `diag(base + amp sin(2 pi y_1), beta0)` (d = 2, scalar system)
    DiagLaminate { base: f64, amp: f64, beta0: f64 },
    /// scalar table on a uniform periodic lattice, bilinear interpolation
    Table(Arc<ScalarTable>),
    Custom(CoeffFn),
}

impl fmt::Debug for PeriodicCoefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match &self.kind {
            PeriodicKind::Constant(_) => "constant",
            PeriodicKind::ScalarLaminate { .. } => "laminate",
            PeriodicKind::BarLaminate { .. } => "bar-laminate",
            PeriodicKind::ScalarTrig { .. } => "trig",
            PeriodicKind::Checkerboard { .. } => "checkerboard",
            PeriodicKind::DiagLaminate { .. } => "diag-laminate",
            PeriodicKind::Table(_) => "table",
            PeriodicKind::Custom(_) => "custom",
        };
        write!(f, "PeriodicCoefficient[{name}, d={}, n={}]", self.d, self.n)
    }
}

impl PeriodicCoefficient {
    pub fn constant(block: CoeffBlock) -> Self {
        PeriodicCoefficient {
            d: block.d(),
            n: block.n(),
            kind: PeriodicKind::Constant(block),
        }
    }

    pub fn identity(d: usize, n: usize) -> Self {
        Self::constant(CoeffBlock::scalar_identity(d, n, 1.0))
    }

    /// `a(y) = base + amp sin(2 pi y_1)` times the identity.
    pub fn scalar_laminate(d: usize, base: f64, amp: f64) -> Self {
        PeriodicCoefficient {
            d,
            n: 1,
            kind: PeriodicKind::ScalarLaminate { base, amp },
        }
    }

    pub fn scalar_trig(d: usize, base: f64, amp: f64) -> Self {
        PeriodicCoefficient {
            d,
            n: 1,
            kind: PeriodicKind::ScalarTrig { base, amp },
        }
    }

    /// Piecewise-constant laminate `a(y) = phase0` on `frac(y_1) < 1/2`,
    /// `phase1` otherwise, times the identity.
    pub fn bar_laminate(d: usize, phase0: f64, phase1: f64) -> Self {
        PeriodicCoefficient {
            d,
            n: 1,
            kind: PeriodicKind::BarLaminate { phase0, phase1 },
        }
    }

    pub fn checkerboard(phase0: f64, phase1: f64) -> Self {
        PeriodicCoefficient {
            d: 2,
            n: 1,
            kind: PeriodicKind::Checkerboard { phase0, phase1 },
        }
    }

    pub fn diag_laminate(base: f64, amp: f64, beta0: f64) -> Self {
        PeriodicCoefficient {
            d: 2,
            n: 1,
            kind: PeriodicKind::DiagLaminate { base, amp, beta0 },
        }
    }

    pub fn from_table(table: ScalarTable) -> Self {
        PeriodicCoefficient {
            d: table.d,
            n: 1,
            kind: PeriodicKind::Table(Arc::new(table)),
        }
    }

    /// Caller-supplied evaluator; must be Z^d-periodic and bounded.
    pub fn custom(d: usize, n: usize, f: CoeffFn) -> Self {
        PeriodicCoefficient {
            d,
            n,
            kind: PeriodicKind::Custom(f),
        }
    }

    pub fn dimension(&self) -> usize {
        self.d
    }

    pub fn system_size(&self) -> usize {
        self.n
    }

    pub fn block_zeros(&self) -> CoeffBlock {
        CoeffBlock::zeros(self.d, self.n)
    }

    pub fn eval(&self, y: &[f64], out: &mut CoeffBlock) {
        debug_assert_eq!(out.d(), self.d);
        debug_assert_eq!(out.n(), self.n);
        match &self.kind {
            PeriodicKind::Constant(b) => out.v.copy_from_slice(&b.v),
            PeriodicKind::ScalarLaminate { base, amp } => {
                let s = base + amp * (TWO_PI * y[0]).sin();
                out.fill_zero();
                for i in 0..self.d {
                    *out.at_mut(i, i, 0, 0) = s;
                }
            }
            PeriodicKind::ScalarTrig { base, amp } => {
                let s = if self.d == 1 {
                    base + amp * (TWO_PI * y[0]).sin()
                } else {
                    base + amp * (TWO_PI * y[0]).sin() * (TWO_PI * y[1]).sin()
                };
                out.fill_zero();
                for i in 0..self.d {
                    *out.at_mut(i, i, 0, 0) = s;
                }
            }
            PeriodicKind::BarLaminate { phase0, phase1 } => {
                let s = if frac(y[0]) < 0.5 { *phase0 } else { *phase1 };
                out.fill_zero();
                for i in 0..self.d {
                    *out.at_mut(i, i, 0, 0) = s;
                }
            }
            PeriodicKind::Checkerboard { phase0, phase1 } => {
                let fx = frac(y[0]);
                let fy = frac(y[1]);
                let s = if (fx < 0.5) == (fy < 0.5) {
                    *phase0
                } else {
                    *phase1
                };
                out.fill_zero();
                *out.at_mut(0, 0, 0, 0) = s;
                *out.at_mut(1, 1, 0, 0) = s;
            }
            PeriodicKind::DiagLaminate { base, amp, beta0 } => {
                out.fill_zero();
                *out.at_mut(0, 0, 0, 0) = base + amp * (TWO_PI * y[0]).sin();
                *out.at_mut(1, 1, 0, 0) = *beta0;
            }
            PeriodicKind::Table(t) => {
                out.fill_zero();
                let s = t.eval(y);
                for i in 0..self.d {
                    *out.at_mut(i, i, 0, 0) = s;
                }
            }
            PeriodicKind::Custom(f) => {
                out.fill_zero();
                f(y, out);
            }
        }
    }

    /// Samples `a(y + z) - a(y)` over a lattice for integer shifts; analytic
    /// descriptors must match to 1e-12.
    pub fn check_periodicity(&self, density: usize) -> Result<()> {
        let mut b0 = self.block_zeros();
        let mut b1 = self.block_zeros();
        let shifts: &[[f64; 2]] = &[[1.0, 0.0], [0.0, 1.0], [2.0, -1.0]];
        for t in 0..density {
            for s in 0..density {
                let y = [
                    (t as f64 + 0.37) / density as f64,
                    (s as f64 + 0.61) / density as f64,
                ];
                self.eval(&y[..self.d], &mut b0);
                for shift in shifts {
                    let z = [y[0] + shift[0], y[1] + shift[1]];
                    self.eval(&z[..self.d], &mut b1);
                    for (p, q) in b0.v.iter().zip(&b1.v) {
                        if (p - q).abs() > 1e-12 * (1.0 + p.abs()) {
                            return Err(Error::invalid(format!(
                                "coefficient is not Z^d-periodic: mismatch {p} vs {q} at y=({}, {})",
                                y[0], y[1]
                            )));
                        }
                    }
                }
                if self.d == 1 {
                    break;
                }
            }
        }
        Ok(())
    }

    /// Sup of |entries| over a sampling lattice (boundedness certificate).
    pub fn sup_norm(&self, density: usize) -> f64 {
        let mut b = self.block_zeros();
        let mut sup = 0.0f64;
        for_lattice(self.d, density, |y| {
            self.eval(y, &mut b);
            sup = sup.max(b.max_abs());
        });
        sup
    }
}

/// Estimated essential infimum of the Legendre form of `a`: the minimum over
/// a y-lattice of the exact pointwise minimum over unit vectors (a certified
/// upper bound on the ess-inf).
pub fn coercivity_constant(a: &PeriodicCoefficient, sample_density: usize) -> Result<f64> {
    if sample_density < 8 {
        return Err(Error::invalid("sample_density must be at least 8"));
    }
    let mut block = a.block_zeros();
    let mut min = f64::INFINITY;
    for_lattice(a.dimension(), sample_density, |y| {
        a.eval(y, &mut block);
        min = min.min(block.legendre_min());
    });
    if min <= 0.0 {
        return Err(Error::NonCoercive { min });
    }
    Ok(min)
}

/// Same estimate for `a + b`. Samples the periodic lattice for the far field
/// and a lattice over the defect's support box for the perturbed region, so
/// the result never exceeds `coercivity_constant(a, ...)`.
pub fn combined_coercivity(
    a: &PeriodicCoefficient,
    b: &DefectCoefficient,
    sample_density: usize,
) -> Result<f64> {
    if sample_density < 8 {
        return Err(Error::invalid("sample_density must be at least 8"));
    }
    if a.dimension() != b.dimension() || a.system_size() != b.system_size() {
        return Err(Error::shape("coefficient/defect layout mismatch"));
    }
    let mut min = f64::INFINITY;
    let mut ba = a.block_zeros();
    let mut bb = a.block_zeros();
    for_lattice(a.dimension(), sample_density, |y| {
        a.eval(y, &mut ba);
        min = min.min(ba.legendre_min());
    });
    let r = b.support_radius() + 1.0;
    let c = b.center();
    let d = a.dimension();
    let steps = sample_density * (2.0 * r).ceil() as usize;
    let mut y = [0.0f64; 2];
    let mut sweep = |min: &mut f64, y: &mut [f64; 2], i: usize, j: usize| {
        y[0] = c[0] - r + 2.0 * r * (i as f64 + 0.5) / steps as f64;
        if d == 2 {
            y[1] = c[1] - r + 2.0 * r * (j as f64 + 0.5) / steps as f64;
        }
        a.eval(&y[..d], &mut ba);
        b.eval(&y[..d], &mut bb);
        ba.add_scaled(1.0, &bb);
        *min = min.min(ba.legendre_min());
    };
    if d == 1 {
        for i in 0..steps {
            sweep(&mut min, &mut y, i, 0);
        }
    } else {
        for i in 0..steps {
            for j in 0..steps {
                sweep(&mut min, &mut y, i, j);
            }
        }
    }
    if min <= 0.0 {
        return Err(Error::NonCoercive { min });
    }
    Ok(min)
}

fn for_lattice(d: usize, density: usize, mut f: impl FnMut(&[f64])) {
    match d {
        1 => {
            for t in 0..density {
                f(&[t as f64 / density as f64]);
            }
        }
        _ => {
            for t in 0..density {
                for s in 0..density {
                    f(&[t as f64 / density as f64, s as f64 / density as f64]);
                }
            }
        }
    }
}

fn frac(y: f64) -> f64 {
    let f = y - y.floor();
    if f >= 1.0 {
        0.0
    } else {
        f
    }
}

/// Scalar coefficient samples on a uniform `[0,1)^d` lattice with periodic
/// bilinear interpolation, loadable from CSV.
#[derive(Debug)]
pub struct ScalarTable {
    d: usize,
    m: usize,
    values: Vec<f64>,
}

impl ScalarTable {
    pub fn new(d: usize, m: usize, values: Vec<f64>) -> Result<Self> {
        let expect = if d == 1 { m } else { m * m };
        if values.len() != expect {
            return Err(Error::shape(format!(
                "table needs {expect} samples for d={d}, m={m}; got {}",
                values.len()
            )));
        }
        Ok(ScalarTable { d, m, values })
    }

    /// Loads `y1[,y2],value` rows sampled on the uniform lattice `k/m`,
    /// `k = 0..m` (the row order is free, the lattice must be complete).
    pub fn from_csv(path: &Path, d: usize) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
        let mut rows: Vec<(f64, f64, f64)> = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let parse = |s: &str| -> Result<f64> {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::invalid(format!("bad number {s:?} in table: {e}")))
            };
            if rec.len() != d + 1 {
                return Err(Error::invalid(format!(
                    "table rows must have {} columns for d={d}",
                    d + 1
                )));
            }
            let y1 = parse(&rec[0])?;
            let y2 = if d == 2 { parse(&rec[1])? } else { 0.0 };
            let v = parse(&rec[d])?;
            rows.push((y1, y2, v));
        }
        let m = (rows.len() as f64).powf(1.0 / d as f64).round() as usize;
        let expect = if d == 1 { m } else { m * m };
        if expect != rows.len() || m < 2 {
            return Err(Error::invalid(format!(
                "table must sample a full uniform lattice; got {} rows",
                rows.len()
            )));
        }
        let to_index = |y: f64| -> Result<usize> {
            let s = y * m as f64;
            if (s - s.round()).abs() > 1e-9 {
                return Err(Error::invalid(format!(
                    "table coordinate {y} is not on the uniform lattice k/{m}"
                )));
            }
            Ok((s.round() as usize) % m)
        };
        let mut values = vec![f64::NAN; expect];
        for (y1, y2, v) in rows {
            let i = to_index(y1)?;
            let j = if d == 2 { to_index(y2)? } else { 0 };
            values[j * m + i] = v;
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::invalid("table lattice has missing entries"));
        }
        ScalarTable::new(d, m, values)
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        let m = self.m as f64;
        match self.d {
            1 => {
                let s = frac(y[0]) * m;
                let i = (s.floor() as usize).min(self.m - 1);
                let t = s - i as f64;
                let v0 = self.values[i];
                let v1 = self.values[(i + 1) % self.m];
                (1.0 - t) * v0 + t * v1
            }
            _ => {
                let sx = frac(y[0]) * m;
                let sy = frac(y[1]) * m;
                let i = (sx.floor() as usize).min(self.m - 1);
                let j = (sy.floor() as usize).min(self.m - 1);
                let tx = sx - i as f64;
                let ty = sy - j as f64;
                let ip = (i + 1) % self.m;
                let jp = (j + 1) % self.m;
                let v00 = self.values[j * self.m + i];
                let v10 = self.values[j * self.m + ip];
                let v01 = self.values[jp * self.m + i];
                let v11 = self.values[jp * self.m + ip];
                (1.0 - tx) * (1.0 - ty) * v00
                    + tx * (1.0 - ty) * v10
                    + (1.0 - tx) * ty * v01
                    + tx * ty * v11
            }
        }
    }
}

type DefectFn = Arc<dyn Fn(&[f64], &mut CoeffBlock) + Send + Sync>;

/// Localized defect `b_ij^{ab}(y)`: bounded, integrable, and in the shipped
/// variants compactly supported.
#[derive(Clone)]
pub struct DefectCoefficient {
    d: usize,
    n: usize,
    kind: DefectKind,
}

#[derive(Clone)]
enum DefectKind {
    /// constant tensor inside a ball, zero outside
    BallTensor {
        center: [f64; 2],
        radius: f64,
        block: CoeffBlock,
    },
    /// `scale * a(y)` inside a ball, zero outside
    BallScaled {
        center: [f64; 2],
        radius: f64,
        scale: f64,
        base: Arc<PeriodicCoefficient>,
    },
    /// `scale * exp(-||y-c||^2 / width^2) I`, truncated where the tail is
    /// numerically negligible (declared-L1 variant)
    GaussianIdentity {
        center: [f64; 2],
        width: f64,
        scale: f64,
        trunc_radius: f64,
    },
    Custom {
        support_radius: f64,
        center: [f64; 2],
        f: DefectFn,
    },
}

impl fmt::Debug for DefectCoefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match &self.kind {
            DefectKind::BallTensor { .. } => "ball-tensor",
            DefectKind::BallScaled { .. } => "ball-scaled",
            DefectKind::GaussianIdentity { .. } => "gaussian",
            DefectKind::Custom { .. } => "custom",
        };
        write!(f, "DefectCoefficient[{name}, d={}, n={}]", self.d, self.n)
    }
}

impl DefectCoefficient {
    pub fn ball_tensor(center: &[f64], radius: f64, block: CoeffBlock) -> Self {
        DefectCoefficient {
            d: block.d(),
            n: block.n(),
            kind: DefectKind::BallTensor {
                center: pad2(center),
                radius,
                block,
            },
        }
    }

    /// `b(y) = scale * a(y)` inside the ball, zero outside.
    pub fn ball_scaled(center: &[f64], radius: f64, scale: f64, base: PeriodicCoefficient) -> Self {
        DefectCoefficient {
            d: base.dimension(),
            n: base.system_size(),
            kind: DefectKind::BallScaled {
                center: pad2(center),
                radius,
                scale,
                base: Arc::new(base),
            },
        }
    }

    pub fn gaussian_identity(d: usize, center: &[f64], width: f64, scale: f64) -> Self {
        // truncate where the Gaussian underflows any double
        let trunc_radius = width * (700.0f64).sqrt();
        DefectCoefficient {
            d,
            n: 1,
            kind: DefectKind::GaussianIdentity {
                center: pad2(center),
                width,
                scale,
                trunc_radius,
            },
        }
    }

    pub fn custom(d: usize, n: usize, center: &[f64], support_radius: f64, f: DefectFn) -> Self {
        DefectCoefficient {
            d,
            n,
            kind: DefectKind::Custom {
                support_radius,
                center: pad2(center),
                f,
            },
        }
    }

    pub fn dimension(&self) -> usize {
        self.d
    }

    pub fn system_size(&self) -> usize {
        self.n
    }

    pub fn center(&self) -> [f64; 2] {
        match &self.kind {
            DefectKind::BallTensor { center, .. }
            | DefectKind::BallScaled { center, .. }
            | DefectKind::GaussianIdentity { center, .. }
            | DefectKind::Custom { center, .. } => *center,
        }
    }

    /// Radius outside which `b` vanishes exactly.
    pub fn support_radius(&self) -> f64 {
        match &self.kind {
            DefectKind::BallTensor { radius, .. } | DefectKind::BallScaled { radius, .. } => {
                *radius
            }
            DefectKind::GaussianIdentity { trunc_radius, .. } => *trunc_radius,
            DefectKind::Custom { support_radius, .. } => *support_radius,
        }
    }

    pub fn eval(&self, y: &[f64], out: &mut CoeffBlock) {
        out.fill_zero();
        let c = self.center();
        let r2: f64 = (0..self.d).map(|k| (y[k] - c[k]) * (y[k] - c[k])).sum();
        match &self.kind {
            DefectKind::BallTensor { radius, block, .. } => {
                if r2 < radius * radius {
                    out.v.copy_from_slice(&block.v);
                }
            }
            DefectKind::BallScaled {
                radius,
                scale,
                base,
                ..
            } => {
                if r2 < radius * radius {
                    base.eval(y, out);
                    out.scale(*scale);
                }
            }
            DefectKind::GaussianIdentity {
                width,
                scale,
                trunc_radius,
                ..
            } => {
                if r2 < trunc_radius * trunc_radius {
                    let s = scale * (-r2 / (width * width)).exp();
                    for i in 0..self.d {
                        *out.at_mut(i, i, 0, 0) = s;
                    }
                }
            }
            DefectKind::Custom { f, .. } => f(y, out),
        }
    }

    /// Entrywise-L1 mass of |b| integrated over the centered box of half
    /// width `box_half` with `density` samples per unit length.
    pub fn l1_norm_estimate(&self, box_half: f64, density: usize) -> f64 {
        let steps = ((2.0 * box_half) * density as f64).ceil() as usize;
        let hstep = 2.0 * box_half / steps as f64;
        let c = self.center();
        let mut block = CoeffBlock::zeros(self.d, self.n);
        let mut total = 0.0;
        match self.d {
            1 => {
                for i in 0..steps {
                    let y = [c[0] - box_half + (i as f64 + 0.5) * hstep];
                    self.eval(&y, &mut block);
                    total += block.v.iter().map(|v| v.abs()).sum::<f64>() * hstep;
                }
            }
            _ => {
                for i in 0..steps {
                    for j in 0..steps {
                        let y = [
                            c[0] - box_half + (i as f64 + 0.5) * hstep,
                            c[1] - box_half + (j as f64 + 0.5) * hstep,
                        ];
                        self.eval(&y, &mut block);
                        total += block.v.iter().map(|v| v.abs()).sum::<f64>() * hstep * hstep;
                    }
                }
            }
        }
        total
    }
}

fn pad2(c: &[f64]) -> [f64; 2] {
    let mut out = [0.0; 2];
    out[..c.len().min(2)].copy_from_slice(&c[..c.len().min(2)]);
    out
}

type CFn = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;

/// Source term entering `d(x,u)` (and manufactured fixtures).
#[derive(Clone)]
pub enum SourceTerm {
    Zero,
    Constant(f64),
    /// `amplitude * prod_k sin(pi x_k)`
    SinProduct { amplitude: f64 },
    Custom(Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>),
}

impl SourceTerm {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            SourceTerm::Zero => 0.0,
            SourceTerm::Constant(c) => *c,
            SourceTerm::SinProduct { amplitude } => {
                amplitude * x.iter().map(|&t| (PI * t).sin()).product::<f64>()
            }
            SourceTerm::Custom(f) => f(x),
        }
    }
}

impl fmt::Debug for SourceTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SourceTerm::Zero => write!(f, "Zero"),
            SourceTerm::Constant(c) => write!(f, "Constant({c})"),
            SourceTerm::SinProduct { amplitude } => write!(f, "SinProduct({amplitude})"),
            SourceTerm::Custom(_) => write!(f, "Custom"),
        }
    }
}

/// Semilinear terms `c_i^a(x,u)`, `d^a(x,u)` with their u-derivatives,
/// measurable in x and C^1 in u.
#[derive(Clone)]
pub struct Nonlinearity {
    d: usize,
    n: usize,
    kind: NlKind,
}

#[derive(Clone)]
enum NlKind {
    Zero,
    /// `d^a(x,u) = linear u^a + cubic (u^a)^3 - g(x)`, `c = 0`
    Reaction {
        linear: f64,
        cubic: f64,
        source: SourceTerm,
    },
    /// `c_1(x,u) = strength sin(u)`, other components zero;
    /// `d(x,u) = u - g(x)` (scalar only; makes Jacobians nonsymmetric)
    Drift { strength: f64, source: SourceTerm },
    /// `d^a(x,u) = scale sin(freq u^a) + linear u^a - g(x)`, `c = 0`; with
    /// `scale * freq` near the operator's first eigenvalue the linearization
    /// flips sign along the solution path, the regime where the frozen
    /// iteration loses contraction
    SineReaction {
        scale: f64,
        freq: f64,
        linear: f64,
        source: SourceTerm,
    },
    Custom {
        c: CFn,
        dc: CFn,
        d_: CFn,
        dd: CFn,
    },
}

impl fmt::Debug for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match &self.kind {
            NlKind::Zero => "zero",
            NlKind::Reaction { .. } => "reaction",
            NlKind::Drift { .. } => "drift",
            NlKind::SineReaction { .. } => "sine-reaction",
            NlKind::Custom { .. } => "custom",
        };
        write!(f, "Nonlinearity[{name}, d={}, n={}]", self.d, self.n)
    }
}

impl Nonlinearity {
    pub fn zero(d: usize, n: usize) -> Self {
        Nonlinearity {
            d,
            n,
            kind: NlKind::Zero,
        }
    }

    pub fn reaction(d: usize, n: usize, linear: f64, cubic: f64, source: SourceTerm) -> Self {
        Nonlinearity {
            d,
            n,
            kind: NlKind::Reaction {
                linear,
                cubic,
                source,
            },
        }
    }

    pub fn drift(d: usize, strength: f64, source: SourceTerm) -> Self {
        Nonlinearity {
            d,
            n: 1,
            kind: NlKind::Drift { strength, source },
        }
    }

    pub fn sine_reaction(d: usize, scale: f64, freq: f64, linear: f64, source: SourceTerm) -> Self {
        Nonlinearity {
            d,
            n: 1,
            kind: NlKind::SineReaction {
                scale,
                freq,
                linear,
                source,
            },
        }
    }

    /// Caller-supplied evaluators `(x, u, out)` for c, dc/du, d, dd/du with
    /// layouts `c[(i n + a)]`, `dc[((i n + a) n + g)]`, `d[a]`, `dd[(a n + g)]`.
    pub fn custom(d: usize, n: usize, c: CFn, dc: CFn, d_: CFn, dd: CFn) -> Self {
        Nonlinearity {
            d,
            n,
            kind: NlKind::Custom { c, dc, d_, dd },
        }
    }

    pub fn dimension(&self) -> usize {
        self.d
    }

    pub fn system_size(&self) -> usize {
        self.n
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kind, NlKind::Zero)
    }

    /// Whether both terms are affine in u (one Newton step suffices).
    pub fn is_affine(&self) -> bool {
        match &self.kind {
            NlKind::Zero => true,
            NlKind::Reaction { cubic, .. } => *cubic == 0.0,
            _ => false,
        }
    }

    /// Flux term `c_i^a(x,u)`, layout `out[i n + a]`.
    pub fn eval_c(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.d * self.n);
        out.iter_mut().for_each(|v| *v = 0.0);
        match &self.kind {
            NlKind::Zero | NlKind::Reaction { .. } | NlKind::SineReaction { .. } => {}
            NlKind::Drift { strength, .. } => out[0] = strength * u[0].sin(),
            NlKind::Custom { c, .. } => c(x, u, out),
        }
    }

    /// `d/du^g of c_i^a`, layout `out[(i n + a) n + g]`.
    pub fn eval_dc(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.d * self.n * self.n);
        out.iter_mut().for_each(|v| *v = 0.0);
        match &self.kind {
            NlKind::Zero | NlKind::Reaction { .. } | NlKind::SineReaction { .. } => {}
            NlKind::Drift { strength, .. } => out[0] = strength * u[0].cos(),
            NlKind::Custom { dc, .. } => dc(x, u, out),
        }
    }

    /// Reaction term `d^a(x,u)`, layout `out[a]`.
    pub fn eval_d(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.n);
        out.iter_mut().for_each(|v| *v = 0.0);
        match &self.kind {
            NlKind::Zero => {}
            NlKind::Reaction {
                linear,
                cubic,
                source,
            } => {
                let g = source.eval(x);
                for a in 0..self.n {
                    out[a] = linear * u[a] + cubic * u[a] * u[a] * u[a] - g;
                }
            }
            NlKind::Drift { source, .. } => out[0] = u[0] - source.eval(x),
            NlKind::SineReaction {
                scale,
                freq,
                linear,
                source,
            } => out[0] = scale * (freq * u[0]).sin() + linear * u[0] - source.eval(x),
            NlKind::Custom { d_, .. } => d_(x, u, out),
        }
    }

    /// `d/du^g of d^a`, layout `out[a n + g]`.
    pub fn eval_dd(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.n * self.n);
        out.iter_mut().for_each(|v| *v = 0.0);
        match &self.kind {
            NlKind::Zero => {}
            NlKind::Reaction { linear, cubic, .. } => {
                for a in 0..self.n {
                    out[a * self.n + a] = linear + 3.0 * cubic * u[a] * u[a];
                }
            }
            NlKind::Drift { .. } => out[0] = 1.0,
            NlKind::SineReaction {
                scale,
                freq,
                linear,
                ..
            } => out[0] = scale * freq * (freq * u[0]).cos() + linear,
            NlKind::Custom { dd, .. } => dd(x, u, out),
        }
    }

    /// Max relative error of the supplied partials against centered finite
    /// differences over the given sample points.
    pub fn derivative_check(&self, xs: &[Vec<f64>], us: &[Vec<f64>]) -> f64 {
        let (d, n) = (self.d, self.n);
        let eps = 1e-6;
        let mut worst = 0.0f64;
        let mut cp = vec![0.0; d * n];
        let mut cm = vec![0.0; d * n];
        let mut dp = vec![0.0; n];
        let mut dm = vec![0.0; n];
        let mut dc = vec![0.0; d * n * n];
        let mut dd = vec![0.0; n * n];
        for x in xs {
            for u in us {
                self.eval_dc(x, u, &mut dc);
                self.eval_dd(x, u, &mut dd);
                for g in 0..n {
                    let mut up = u.clone();
                    let mut um = u.clone();
                    up[g] += eps;
                    um[g] -= eps;
                    self.eval_c(x, &up, &mut cp);
                    self.eval_c(x, &um, &mut cm);
                    self.eval_d(x, &up, &mut dp);
                    self.eval_d(x, &um, &mut dm);
                    for t in 0..d * n {
                        let fd = (cp[t] - cm[t]) / (2.0 * eps);
                        let an = dc[t * n + g];
                        worst = worst.max((fd - an).abs() / (1.0 + an.abs()));
                    }
                    for a in 0..n {
                        let fd = (dp[a] - dm[a]) / (2.0 * eps);
                        let an = dd[a * n + g];
                        worst = worst.max((fd - an).abs() / (1.0 + an.abs()));
                    }
                }
            }
        }
        worst
    }
}
