//! Periodic cell problems on the unit cell, the homogenized tensor, flux
//! correctors, and the periodic-average bound diagnostic.
//!
//! Correctors do not depend on the localized defect, so everything here sees
//! only the periodic part of the coefficient.

use crate::coeffs::{CoeffBlock, PeriodicCoefficient};
use crate::mesh::UnitCellGrid;
use crate::quad::unit_ball_rule;
use crate::sparse::{solve_cg, LduFactor, Ordering, SparseOperator, TripletBuilder};
use crate::{Error, Result};
use std::sync::Arc;

/// Mean-zero periodic P1 corrector fields `v_j^{.beta}` on the master DOFs of
/// a cell grid, with cached element gradients.
#[derive(Debug, Clone)]
pub struct CorrectorSet {
    grid: Arc<UnitCellGrid>,
    d: usize,
    n: usize,
    /// fields[j*n + beta][master*n + gamma]
    fields: Vec<Vec<f64>>,
    /// grads[j*n + beta][(elem*n + gamma)*d + k]
    grads: Vec<Vec<f64>>,
}

impl CorrectorSet {
    pub fn grid(&self) -> &Arc<UnitCellGrid> {
        &self.grid
    }

    pub fn dimension(&self) -> usize {
        self.d
    }

    pub fn system_size(&self) -> usize {
        self.n
    }

    /// Nodal master values of corrector `(j, beta)`.
    pub fn field(&self, j: usize, beta: usize) -> &[f64] {
        &self.fields[j * self.n + beta]
    }

    /// Cached element gradients of corrector `(j, beta)`.
    pub fn grad(&self, j: usize, beta: usize) -> &[f64] {
        &self.grads[j * self.n + beta]
    }

    /// Integral over the cell of each component of corrector `(j, beta)`.
    pub fn mean(&self, j: usize, beta: usize) -> Vec<f64> {
        self.grid
            .integrate_master_field(self.n, self.field(j, beta))
    }

    /// Periodic point evaluation of all correctors: layout
    /// `out[(k*n + beta)*n + alpha]` = component alpha of `v_k^beta` at y.
    pub fn eval_point(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.d * self.n * self.n);
        for j in 0..self.d {
            for beta in 0..self.n {
                let vals = self
                    .grid
                    .interpolate_periodic(self.n, self.field(j, beta), y);
                for alpha in 0..self.n {
                    out[(j * self.n + beta) * self.n + alpha] = vals[alpha];
                }
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.fields
            .iter()
            .flat_map(|f| f.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Constant homogenized tensor with its sampled coercivity estimate.
#[derive(Debug, Clone)]
pub struct HomogenizedTensor {
    block: CoeffBlock,
    coercivity: f64,
}

impl HomogenizedTensor {
    pub fn block(&self) -> &CoeffBlock {
        &self.block
    }

    pub fn entry(&self, i: usize, j: usize, alpha: usize, beta: usize) -> f64 {
        self.block.at(i, j, alpha, beta)
    }

    pub fn coercivity(&self) -> f64 {
        self.coercivity
    }

    /// The tensor as a constant coefficient (the homogenized operator).
    pub fn as_coefficient(&self) -> PeriodicCoefficient {
        PeriodicCoefficient::constant(self.block.clone())
    }
}

/// Periodic Galerkin matrix of the coefficient on master DOFs (element nodes
/// mapped through the slave-to-master identification).
pub fn assemble_periodic_stiffness(
    grid: &UnitCellGrid,
    a: &PeriodicCoefficient,
) -> Result<SparseOperator> {
    if a.dimension() != grid.dimension() {
        return Err(Error::shape("coefficient/grid dimension mismatch"));
    }
    let d = grid.dimension();
    let n = a.system_size();
    let ndof = grid.num_masters() * n;
    let per = (d + 1) * (d + 1) * n * n;
    let mut trip = TripletBuilder::with_capacity(ndof, ndof, grid.num_elems() * per);
    let mut block = CoeffBlock::zeros(d, n);
    for e in 0..grid.num_elems() {
        let el = grid.elem(e);
        let grads = grid.grads(e);
        let vol = grid.volume(e);
        let bc = grid.barycenter(e);
        a.eval(&bc[..d], &mut block);
        for (ta, &na) in el.iter().enumerate() {
            let pa = grid.master_index(na as usize) as usize;
            for alpha in 0..n {
                for (tb, &nb) in el.iter().enumerate() {
                    let pb = grid.master_index(nb as usize) as usize;
                    for beta in 0..n {
                        let mut acc = 0.0;
                        for i in 0..d {
                            for k in 0..d {
                                acc += block.at(i, k, alpha, beta) * grads[tb][k] * grads[ta][i];
                            }
                        }
                        trip.add(pa * n + alpha, pb * n + beta, vol * acc);
                    }
                }
            }
        }
    }
    Ok(trip.build())
}

/// Periodic H^1 Gram (unit stiffness + barycenter mass) on master DOFs.
pub fn periodic_gram(grid: &UnitCellGrid, n: usize) -> SparseOperator {
    let d = grid.dimension();
    let id = PeriodicCoefficient::constant(CoeffBlock::scalar_identity(d, n, 1.0));
    let k = assemble_periodic_stiffness(grid, &id).expect("unit coefficient");
    let ndof = grid.num_masters() * n;
    let mut trip =
        TripletBuilder::with_capacity(ndof, ndof, grid.num_elems() * (d + 1) * (d + 1) * n);
    let w = 1.0 / ((d + 1) * (d + 1)) as f64;
    for e in 0..grid.num_elems() {
        let el = grid.elem(e);
        let vol = grid.volume(e);
        for &na in el {
            let pa = grid.master_index(na as usize) as usize;
            for &nb in el {
                let pb = grid.master_index(nb as usize) as usize;
                for c in 0..n {
                    trip.add(pa * n + c, pb * n + c, vol * w);
                }
            }
        }
    }
    k.add_scaled(1.0, &trip.build()).expect("same shape")
}

/// Solves a consistent singular periodic system (constants in the kernel):
/// CG for symmetric operators, a pinned direct factorization otherwise. The
/// result is not mean-corrected here.
fn solve_periodic(k: &SparseOperator, rhs: &[f64], n: usize) -> Result<Vec<f64>> {
    // pin the n DOFs of master node 0 to remove the constant kernel; the
    // caller restores the mean-zero normalization afterwards
    let nd = k.nrows();
    let mut trip = TripletBuilder::with_capacity(nd, nd, k.nnz() + n);
    for r in 0..nd {
        for p in k.row_ptr()[r]..k.row_ptr()[r + 1] {
            let c = k.col_idx()[p] as usize;
            if r < n || c < n {
                continue;
            }
            trip.add(r, c, k.values()[p]);
        }
    }
    for t in 0..n {
        trip.add(t, t, 1.0);
    }
    let pinned = trip.build();
    let mut b = rhs.to_vec();
    for t in 0..n {
        b[t] = 0.0;
    }
    if pinned.is_symmetric() {
        let out = solve_cg(&pinned, &b, None, 1e-11, 8 * nd + 2000).map_err(|e| match e {
            Error::Breakdown(msg) => Error::Breakdown(format!("non-coercive cell problem: {msg}")),
            other => other,
        })?;
        Ok(out.x)
    } else {
        let f = LduFactor::new(&pinned, Ordering::Natural)?;
        Ok(f.solve(&b))
    }
}

/// Solves the periodic cell problems for all `(j, beta)` pairs and returns
/// mean-zero correctors (the mean is removed by post-projection).
pub fn solve_cell_problems(
    grid: &Arc<UnitCellGrid>,
    a: &PeriodicCoefficient,
) -> Result<CorrectorSet> {
    let d = grid.dimension();
    let n = a.system_size();
    if a.dimension() != d {
        return Err(Error::shape("coefficient/grid dimension mismatch"));
    }
    let k = assemble_periodic_stiffness(grid, a)?;
    let ndof = grid.num_masters() * n;
    let mut fields = Vec::with_capacity(d * n);
    let mut grads_all = Vec::with_capacity(d * n);
    let mut block = CoeffBlock::zeros(d, n);
    for j in 0..d {
        for beta in 0..n {
            // load <-div(a e_j^beta), phi>
            let mut rhs = vec![0.0; ndof];
            for e in 0..grid.num_elems() {
                let el = grid.elem(e);
                let egr = grid.grads(e);
                let vol = grid.volume(e);
                let bc = grid.barycenter(e);
                a.eval(&bc[..d], &mut block);
                for (ta, &na) in el.iter().enumerate() {
                    let pa = grid.master_index(na as usize) as usize;
                    for alpha in 0..n {
                        let mut acc = 0.0;
                        for i in 0..d {
                            acc += block.at(i, j, alpha, beta) * egr[ta][i];
                        }
                        rhs[pa * n + alpha] -= vol * acc;
                    }
                }
            }
            let mut v = solve_periodic(&k, &rhs, n)?;
            // mean-zero post-projection (the cell has unit volume)
            let mean = grid.integrate_master_field(n, &v);
            for master in 0..grid.num_masters() {
                for c in 0..n {
                    v[master * n + c] -= mean[c];
                }
            }
            let mut grads = vec![0.0; grid.num_elems() * n * d];
            for e in 0..grid.num_elems() {
                let el = grid.elem(e);
                let egr = grid.grads(e);
                for (t, &nid) in el.iter().enumerate() {
                    let p = grid.master_index(nid as usize) as usize;
                    for gamma in 0..n {
                        let val = v[p * n + gamma];
                        for kk in 0..d {
                            grads[(e * n + gamma) * d + kk] += val * egr[t][kk];
                        }
                    }
                }
            }
            fields.push(v);
            grads_all.push(grads);
        }
    }
    Ok(CorrectorSet {
        grid: Arc::clone(grid),
        d,
        n,
        fields,
        grads: grads_all,
    })
}

/// Element-barycenter quadrature of the homogenized tensor
/// `a_hat = int (a + a grad v) dy`, with its coercivity estimate.
pub fn homogenized_tensor(
    grid: &UnitCellGrid,
    a: &PeriodicCoefficient,
    correctors: &CorrectorSet,
) -> Result<HomogenizedTensor> {
    let d = grid.dimension();
    let n = a.system_size();
    if correctors.d != d || correctors.n != n {
        return Err(Error::shape("correctors do not match coefficient layout"));
    }
    let mut hat = CoeffBlock::zeros(d, n);
    let mut block = CoeffBlock::zeros(d, n);
    for e in 0..grid.num_elems() {
        let vol = grid.volume(e);
        let bc = grid.barycenter(e);
        a.eval(&bc[..d], &mut block);
        for i in 0..d {
            for j in 0..d {
                for alpha in 0..n {
                    for beta in 0..n {
                        let mut val = block.at(i, j, alpha, beta);
                        let g = correctors.grad(j, beta);
                        for k in 0..d {
                            for gamma in 0..n {
                                val += block.at(i, k, alpha, gamma) * g[(e * n + gamma) * d + k];
                            }
                        }
                        *hat.at_mut(i, j, alpha, beta) += vol * val;
                    }
                }
            }
        }
    }
    let coercivity = hat.legendre_min();
    Ok(HomogenizedTensor {
        block: hat,
        coercivity,
    })
}

/// Flux correctors: element-wise `f_ij = a_ij + a_ik d_k v_j - a_hat_ij`,
/// periodic Poisson potentials `g_ij` with `lap g = f`, and
/// `h_ijk = d_i g_jk - d_j g_ik` from the discrete gradients of g.
#[derive(Debug)]
pub struct FluxCorrectorSet {
    d: usize,
    n: usize,
    n_elems: usize,
    /// f[(i*d + j)*n*n + alpha*n + beta][elem]
    f: Vec<Vec<f64>>,
    /// g nodal master values, same (i,j,alpha,beta) indexing
    g: Vec<Vec<f64>>,
    /// element gradients of g: [elem*d + k]
    g_grad: Vec<Vec<f64>>,
    weak_identity: f64,
}

impl FluxCorrectorSet {
    fn fid(&self, i: usize, j: usize, alpha: usize, beta: usize) -> usize {
        (i * self.d + j) * self.n * self.n + alpha * self.n + beta
    }

    pub fn f(&self, i: usize, j: usize, alpha: usize, beta: usize) -> &[f64] {
        &self.f[self.fid(i, j, alpha, beta)]
    }

    pub fn g(&self, i: usize, j: usize, alpha: usize, beta: usize) -> &[f64] {
        &self.g[self.fid(i, j, alpha, beta)]
    }

    /// `h_ijk` on element `e`; antisymmetric in the two derivative slots
    /// `(i, j)` exactly by construction.
    pub fn h(&self, i: usize, j: usize, k: usize, alpha: usize, beta: usize, e: usize) -> f64 {
        let gjk = &self.g_grad[self.fid(j, k, alpha, beta)];
        let gik = &self.g_grad[self.fid(i, k, alpha, beta)];
        gjk[e * self.d + i] - gik[e * self.d + j]
    }

    pub fn num_elems(&self) -> usize {
        self.n_elems
    }

    /// Max dual-norm surrogate over `(j,k,alpha,beta)` of the weak residual
    /// of `d_i h_ijk = f_jk` on the cell grid.
    pub fn weak_identity_surrogate(&self) -> f64 {
        self.weak_identity
    }

    /// Largest violation of the definitional antisymmetry (exact zero
    /// expected).
    pub fn max_antisymmetry_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.d {
            for j in 0..self.d {
                for k in 0..self.d {
                    for alpha in 0..self.n {
                        for beta in 0..self.n {
                            for e in 0..self.n_elems {
                                let s = self.h(i, j, k, alpha, beta, e)
                                    + self.h(j, i, k, alpha, beta, e);
                                worst = worst.max(s.abs());
                            }
                        }
                    }
                }
            }
        }
        worst
    }
}

pub fn flux_correctors(
    grid: &UnitCellGrid,
    a: &PeriodicCoefficient,
    correctors: &CorrectorSet,
    hat: &HomogenizedTensor,
) -> Result<FluxCorrectorSet> {
    let d = grid.dimension();
    let n = a.system_size();
    let ne = grid.num_elems();
    let nfields = d * d * n * n;
    let mut f = vec![vec![0.0; ne]; nfields];
    let mut block = CoeffBlock::zeros(d, n);
    for e in 0..ne {
        let bc = grid.barycenter(e);
        a.eval(&bc[..d], &mut block);
        for i in 0..d {
            for j in 0..d {
                for alpha in 0..n {
                    for beta in 0..n {
                        let mut val = block.at(i, j, alpha, beta) - hat.entry(i, j, alpha, beta);
                        let g = correctors.grad(j, beta);
                        for k in 0..d {
                            for gamma in 0..n {
                                val += block.at(i, k, alpha, gamma) * g[(e * n + gamma) * d + k];
                            }
                        }
                        f[(i * d + j) * n * n + alpha * n + beta][e] = val;
                    }
                }
            }
        }
    }
    // compatibility: int f = 0 holds by construction of a_hat
    for (t, ft) in f.iter().enumerate() {
        let total: f64 = (0..ne).map(|e| grid.volume(e) * ft[e]).sum();
        if total.abs() > 1e-8 {
            return Err(Error::invalid(format!(
                "flux field {t} has nonzero mean {total:.3e}; tensor and correctors are inconsistent"
            )));
        }
    }
    // scalar periodic Poisson problems: int grad g . grad phi = -int f phi
    let scalar_id = PeriodicCoefficient::constant(CoeffBlock::scalar_identity(d, 1, 1.0));
    let kp = assemble_periodic_stiffness(grid, &scalar_id)?;
    let nmast = grid.num_masters();
    let mut g = Vec::with_capacity(nfields);
    let mut g_grad = Vec::with_capacity(nfields);
    let w = 1.0 / (d + 1) as f64;
    for ft in &f {
        let mut rhs = vec![0.0; nmast];
        for e in 0..ne {
            let el = grid.elem(e);
            let load = -grid.volume(e) * ft[e] * w;
            for &nid in el {
                rhs[grid.master_index(nid as usize) as usize] += load;
            }
        }
        let mut sol = solve_periodic(&kp, &rhs, 1)?;
        let mean = grid.integrate_master_field(1, &sol);
        for v in sol.iter_mut() {
            *v -= mean[0];
        }
        let mut grads = vec![0.0; ne * d];
        for e in 0..ne {
            let el = grid.elem(e);
            let egr = grid.grads(e);
            for (t, &nid) in el.iter().enumerate() {
                let val = sol[grid.master_index(nid as usize) as usize];
                for k in 0..d {
                    grads[e * d + k] += val * egr[t][k];
                }
            }
        }
        g.push(sol);
        g_grad.push(grads);
    }
    let mut set = FluxCorrectorSet {
        d,
        n,
        n_elems: ne,
        f,
        g,
        g_grad,
        weak_identity: 0.0,
    };
    set.weak_identity = weak_identity_surrogate(grid, &set)?;
    Ok(set)
}

/// Dual-norm surrogate (periodic cell Gram) of the residual of the weak
/// identity `d_i h_ijk = f_jk`, maximized over `(j, k, alpha, beta)`.
fn weak_identity_surrogate(grid: &UnitCellGrid, set: &FluxCorrectorSet) -> Result<f64> {
    let d = set.d;
    let n = set.n;
    let gram = periodic_gram(grid, 1);
    let nmast = grid.num_masters();
    let w = 1.0 / (d + 1) as f64;
    let mut worst = 0.0f64;
    for j in 0..d {
        for k in 0..d {
            for alpha in 0..n {
                for beta in 0..n {
                    let mut r = vec![0.0; nmast];
                    let f = set.f(j, k, alpha, beta);
                    for e in 0..grid.num_elems() {
                        let el = grid.elem(e);
                        let egr = grid.grads(e);
                        let vol = grid.volume(e);
                        for (t, &nid) in el.iter().enumerate() {
                            let p = grid.master_index(nid as usize) as usize;
                            let mut acc = -f[e] * w;
                            for i in 0..d {
                                acc -= set.h(i, j, k, alpha, beta, e) * egr[t][i];
                            }
                            r[p] += vol * acc;
                        }
                    }
                    if r.iter().all(|&v| v == 0.0) {
                        continue;
                    }
                    let z = solve_cg(&gram, &r, None, 1e-10, 4 * nmast + 2000)?;
                    let nrm: f64 = r
                        .iter()
                        .zip(&z.x)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                        .max(0.0)
                        .sqrt();
                    worst = worst.max(nrm);
                }
            }
        }
    }
    Ok(worst)
}

/// Samples `(r + eps)^{-d} int_{|xi - x| < r} w(xi/eps) dxi` over the given
/// radii, scales and centers; the sup is finite for periodic integrable `w`.
pub fn periodic_average_bound_check(
    grid: &UnitCellGrid,
    w_field: &[f64],
    radii: &[f64],
    scales: &[f64],
    centers: &[[f64; 2]],
) -> Result<f64> {
    let d = grid.dimension();
    if w_field.len() != grid.num_masters() {
        return Err(Error::shape("w must be a scalar master-DOF field"));
    }
    if w_field.iter().any(|&v| v < 0.0) {
        return Err(Error::invalid("w must be nonnegative"));
    }
    let rule = unit_ball_rule(d, 24, 48);
    let mut sup = 0.0f64;
    for &r in radii {
        for &eps in scales {
            for c in centers {
                // int_{|xi-x|<r} w(xi/eps) dxi = r^d int_ball w((x + r z)/eps) dz
                let mut acc = 0.0;
                for (z, wt) in &rule {
                    let y = [(c[0] + r * z[0]) / eps, (c[1] + r * z[1]) / eps];
                    let v = grid.interpolate_periodic(1, w_field, &y[..d]);
                    acc += wt * v[0];
                }
                let integral = acc * r.powi(d as i32);
                sup = sup.max(integral / (r + eps).powi(d as i32));
            }
        }
    }
    Ok(sup)
}

/// Independent Voigt-Reuss bracket for scalar coefficients: barycenter-rule
/// harmonic and arithmetic means of `a(y)` over the cell.
pub fn voigt_reuss_bounds(grid: &UnitCellGrid, a: &PeriodicCoefficient) -> (f64, f64) {
    assert_eq!(a.system_size(), 1, "scalar coefficients only");
    let d = grid.dimension();
    let mut block = CoeffBlock::zeros(d, 1);
    let mut harm = 0.0;
    let mut arith = 0.0;
    for e in 0..grid.num_elems() {
        let vol = grid.volume(e);
        let bc = grid.barycenter(e);
        a.eval(&bc[..d], &mut block);
        let s = block.at(0, 0, 0, 0);
        harm += vol / s;
        arith += vol * s;
    }
    (1.0 / harm, arith)
}
