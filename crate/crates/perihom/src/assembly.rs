//! P1 finite-element assembly of the oscillatory, defect and homogenized
//! operators, the semilinear residual and Jacobian, Dirichlet elimination,
//! sparse solves, and the discrete `W^{-1,2}` dual-norm surrogate.
//!
//! Quadrature is the one-point barycenter rule throughout, which is why
//! oscillating coefficients require `h <= eps / resolution_floor` (checked,
//! overridable). All operators are assembled on the interior DOF block unless
//! the `_full` variant is used; fields in a `W_0^{1,2}` role keep exact zeros
//! on the Dirichlet mask.

use crate::coeffs::{CoeffBlock, DefectCoefficient, Nonlinearity, PeriodicCoefficient};
use crate::mesh::DomainMesh;
use crate::sparse::{solve_cg, LduFactor, Ordering, SparseOperator, TripletBuilder};
use crate::{Error, Result};
use std::sync::Arc;

/// Scale argument of the oscillatory operators: `Eps(e)` samples coefficients
/// at `x/e`; `Infinite` is the homogenized case (constant tensor, no
/// oscillation, no resolution-floor constraint).
#[derive(Debug, Clone, Copy)]
pub enum Scale {
    Eps(f64),
    Infinite,
}

impl Scale {
    fn map(&self, x: &[f64; 2]) -> [f64; 2] {
        match self {
            Scale::Eps(e) => [x[0] / e, x[1] / e],
            Scale::Infinite => [0.0, 0.0],
        }
    }
}

/// Assembly knobs; `resolution_floor` is the minimum number of elements per
/// oscillation period, `allow_coarse` overrides the rejection.
#[derive(Debug, Clone, Copy)]
pub struct AssemblyOptions {
    pub resolution_floor: f64,
    pub allow_coarse: bool,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        AssemblyOptions {
            resolution_floor: 8.0,
            allow_coarse: false,
        }
    }
}

impl AssemblyOptions {
    pub fn check(&self, mesh: &DomainMesh, scale: Scale) -> Result<()> {
        if let Scale::Eps(e) = scale {
            if !(e > 0.0) {
                return Err(Error::invalid(format!("eps must be positive, got {e}")));
            }
            if mesh.h_max() > e / self.resolution_floor && !self.allow_coarse {
                return Err(Error::ResolutionFloor {
                    h: mesh.h_max(),
                    eps: e,
                    floor: self.resolution_floor,
                });
            }
        }
        Ok(())
    }
}

/// Nodal vector field on a domain mesh: `n` components, node-major
/// component-minor storage, homogeneous Dirichlet mask on boundary nodes.
#[derive(Debug, Clone)]
pub struct DiscreteField {
    mesh: Arc<DomainMesh>,
    n: usize,
    values: Vec<f64>,
}

impl DiscreteField {
    pub fn zeros(mesh: &Arc<DomainMesh>, n: usize) -> Self {
        DiscreteField {
            mesh: Arc::clone(mesh),
            n,
            values: vec![0.0; mesh.num_nodes() * n],
        }
    }

    /// Samples a function at the nodes (no Dirichlet clamping).
    pub fn from_fn(mesh: &Arc<DomainMesh>, n: usize, f: impl Fn(&[f64], usize) -> f64) -> Self {
        let mut field = Self::zeros(mesh, n);
        for node in 0..mesh.num_nodes() {
            let x = mesh.node(node);
            for c in 0..n {
                field.values[node * n + c] = f(x, c);
            }
        }
        field
    }

    pub fn mesh(&self) -> &Arc<DomainMesh> {
        &self.mesh
    }

    pub fn components(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn value(&self, node: usize, comp: usize) -> f64 {
        self.values[node * self.n + comp]
    }

    /// Zeroes the Dirichlet-masked entries.
    pub fn clamp_dirichlet(&mut self) {
        for node in 0..self.mesh.num_nodes() {
            if self.mesh.is_boundary(node) {
                for c in 0..self.n {
                    self.values[node * self.n + c] = 0.0;
                }
            }
        }
    }

    /// Whether the Dirichlet-masked entries are exactly zero.
    pub fn dirichlet_clean(&self) -> bool {
        (0..self.mesh.num_nodes()).all(|node| {
            !self.mesh.is_boundary(node)
                || (0..self.n).all(|c| self.values[node * self.n + c] == 0.0)
        })
    }

    /// Sup norm as the sum over components of the per-component nodal max.
    pub fn sup_norm(&self) -> f64 {
        (0..self.n)
            .map(|c| {
                (0..self.mesh.num_nodes())
                    .map(|node| self.values[node * self.n + c].abs())
                    .fold(0.0f64, f64::max)
            })
            .sum()
    }

    /// Nodal sup norm of the difference.
    pub fn sup_diff(&self, other: &DiscreteField) -> f64 {
        assert_eq!(self.values.len(), other.values.len());
        (0..self.n)
            .map(|c| {
                (0..self.mesh.num_nodes())
                    .map(|node| {
                        (self.values[node * self.n + c] - other.values[node * self.n + c]).abs()
                    })
                    .fold(0.0f64, f64::max)
            })
            .sum()
    }

    pub fn interior_vector(&self) -> Vec<f64> {
        let n = self.n;
        let mut out = Vec::with_capacity(self.mesh.num_interior() * n);
        for &node in self.mesh.interior_nodes() {
            for c in 0..n {
                out.push(self.values[node as usize * n + c]);
            }
        }
        out
    }

    pub fn set_interior(&mut self, v: &[f64]) {
        let n = self.n;
        assert_eq!(v.len(), self.mesh.num_interior() * n);
        for (p, &node) in self.mesh.interior_nodes().iter().enumerate() {
            for c in 0..n {
                self.values[node as usize * n + c] = v[p * n + c];
            }
        }
    }

    /// P1 interpolation at an arbitrary point of the rectangle.
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let (e, bary) = self.mesh.locate(x);
        let el = self.mesh.elem(e);
        let mut out = vec![0.0; self.n];
        for (t, &nid) in el.iter().enumerate() {
            for c in 0..self.n {
                out[c] += bary[t] * self.values[nid as usize * self.n + c];
            }
        }
        out
    }

    /// Element-constant gradients averaged to nodes with volume weights.
    pub fn recovered_gradient(&self) -> Vec<f64> {
        let mesh = &self.mesh;
        let (d, n) = (mesh.dimension(), self.n);
        let mut grad = vec![0.0; mesh.num_nodes() * n * d];
        let mut weight = vec![0.0; mesh.num_nodes()];
        for e in 0..mesh.num_elems() {
            let el = mesh.elem(e);
            let grads = mesh.grads(e);
            let vol = mesh.volume(e);
            let mut gel = vec![0.0; n * d];
            for (t, &nid) in el.iter().enumerate() {
                for c in 0..n {
                    let v = self.values[nid as usize * n + c];
                    for k in 0..d {
                        gel[c * d + k] += v * grads[t][k];
                    }
                }
            }
            for &nid in el {
                weight[nid as usize] += vol;
                for t in 0..n * d {
                    grad[nid as usize * n * d + t] += vol * gel[t];
                }
            }
        }
        for node in 0..mesh.num_nodes() {
            let w = weight[node];
            for t in 0..n * d {
                grad[node * n * d + t] /= w;
            }
        }
        grad
    }
}

struct ElementCtx {
    d: usize,
    block: CoeffBlock,
    defect_block: CoeffBlock,
}

impl ElementCtx {
    fn new(d: usize, n: usize) -> Self {
        ElementCtx {
            d,
            block: CoeffBlock::zeros(d, n),
            defect_block: CoeffBlock::zeros(d, n),
        }
    }

    /// Coefficient block a(+b) at the element barycenter mapped by `scale`.
    fn coeff_at(
        &mut self,
        a: &PeriodicCoefficient,
        b: Option<&DefectCoefficient>,
        scale: Scale,
        bc: &[f64; 2],
    ) {
        let y = scale.map(bc);
        a.eval(&y[..self.d], &mut self.block);
        if let Some(b) = b {
            b.eval(&y[..self.d], &mut self.defect_block);
            self.block.add_scaled(1.0, &self.defect_block);
        }
    }
}

fn check_layout(mesh: &DomainMesh, a: &PeriodicCoefficient, n: usize) -> Result<()> {
    if a.dimension() != mesh.dimension() {
        return Err(Error::shape(format!(
            "coefficient dimension {} vs mesh dimension {}",
            a.dimension(),
            mesh.dimension()
        )));
    }
    if a.system_size() != n {
        return Err(Error::shape(format!(
            "coefficient system size {} vs field components {n}",
            a.system_size()
        )));
    }
    Ok(())
}

/// Galerkin matrix of `u -> -div((a + b)(./eps) grad u)` on the interior DOF
/// block, coefficients sampled at element barycenters.
pub fn assemble_stiffness(
    mesh: &DomainMesh,
    a: &PeriodicCoefficient,
    scale: Scale,
    b: Option<&DefectCoefficient>,
    opts: &AssemblyOptions,
) -> Result<SparseOperator> {
    assemble_stiffness_impl(mesh, a, scale, b, opts, true)
}

/// Same operator on all nodes (no Dirichlet elimination); interior rows of
/// the result sum to zero by the partition of unity.
pub fn assemble_stiffness_full(
    mesh: &DomainMesh,
    a: &PeriodicCoefficient,
    scale: Scale,
    b: Option<&DefectCoefficient>,
    opts: &AssemblyOptions,
) -> Result<SparseOperator> {
    assemble_stiffness_impl(mesh, a, scale, b, opts, false)
}

fn assemble_stiffness_impl(
    mesh: &DomainMesh,
    a: &PeriodicCoefficient,
    scale: Scale,
    b: Option<&DefectCoefficient>,
    opts: &AssemblyOptions,
    restrict: bool,
) -> Result<SparseOperator> {
    let n = a.system_size();
    check_layout(mesh, a, n)?;
    opts.check(mesh, scale)?;
    let d = mesh.dimension();
    let ndof = if restrict {
        mesh.num_interior() * n
    } else {
        mesh.num_nodes() * n
    };
    let per_elem = (d + 1) * (d + 1) * n * n;
    let mut trip = TripletBuilder::with_capacity(ndof, ndof, mesh.num_elems() * per_elem);
    let mut ctx = ElementCtx::new(d, n);
    let dof_of = |node: u32, c: usize| -> Option<usize> {
        if restrict {
            mesh.interior_index(node as usize).map(|p| p * n + c)
        } else {
            Some(node as usize * n + c)
        }
    };
    for e in 0..mesh.num_elems() {
        let el = mesh.elem(e);
        let grads = mesh.grads(e);
        let vol = mesh.volume(e);
        let bc = mesh.barycenter(e);
        ctx.coeff_at(a, b, scale, &bc);
        for (ta, &na) in el.iter().enumerate() {
            for alpha in 0..n {
                let Some(row) = dof_of(na, alpha) else { continue };
                for (tb, &nb) in el.iter().enumerate() {
                    for beta in 0..n {
                        let Some(col) = dof_of(nb, beta) else { continue };
                        let mut acc = 0.0;
                        for i in 0..d {
                            for j in 0..d {
                                acc += ctx.block.at(i, j, alpha, beta) * grads[tb][j] * grads[ta][i];
                            }
                        }
                        trip.add(row, col, vol * acc);
                    }
                }
            }
        }
    }
    Ok(trip.build())
}

/// Barycenter-rule P1 mass matrix on the interior DOF block.
pub fn assemble_mass(mesh: &DomainMesh, n: usize) -> SparseOperator {
    let d = mesh.dimension();
    let ndof = mesh.num_interior() * n;
    let mut trip = TripletBuilder::with_capacity(ndof, ndof, mesh.num_elems() * (d + 1) * (d + 1) * n);
    let w = 1.0 / ((d + 1) * (d + 1)) as f64;
    for e in 0..mesh.num_elems() {
        let el = mesh.elem(e);
        let vol = mesh.volume(e);
        for &na in el {
            let Some(pa) = mesh.interior_index(na as usize) else { continue };
            for &nb in el {
                let Some(pb) = mesh.interior_index(nb as usize) else { continue };
                for c in 0..n {
                    trip.add(pa * n + c, pb * n + c, vol * w);
                }
            }
        }
    }
    trip.build()
}

/// Discrete residual `F_eps(u) = (A_eps + B_eps) u + C(u)` restricted to the
/// interior DOFs, barycenter quadrature.
pub fn assemble_semilinear_residual(
    mesh: &DomainMesh,
    a: &PeriodicCoefficient,
    scale: Scale,
    b: Option<&DefectCoefficient>,
    nl: &Nonlinearity,
    u: &DiscreteField,
    opts: &AssemblyOptions,
) -> Result<Vec<f64>> {
    let n = a.system_size();
    check_layout(mesh, a, n)?;
    opts.check(mesh, scale)?;
    if u.components() != n {
        return Err(Error::shape("field component count mismatch"));
    }
    if !u.dirichlet_clean() {
        return Err(Error::invalid(
            "residual requires a field satisfying the homogeneous Dirichlet mask",
        ));
    }
    let d = mesh.dimension();
    let mut r = vec![0.0; mesh.num_interior() * n];
    let mut ctx = ElementCtx::new(d, n);
    let mut grad_u = vec![0.0; d * n];
    let mut u_bar = vec![0.0; n];
    let mut cvals = vec![0.0; d * n];
    let mut dvals = vec![0.0; n];
    let w = 1.0 / (d + 1) as f64;
    for e in 0..mesh.num_elems() {
        let el = mesh.elem(e);
        let grads = mesh.grads(e);
        let vol = mesh.volume(e);
        let bc = mesh.barycenter(e);
        ctx.coeff_at(a, b, scale, &bc);
        grad_u.iter_mut().for_each(|v| *v = 0.0);
        u_bar.iter_mut().for_each(|v| *v = 0.0);
        for (t, &nid) in el.iter().enumerate() {
            for c in 0..n {
                let v = u.value(nid as usize, c);
                u_bar[c] += w * v;
                for k in 0..d {
                    grad_u[c * d + k] += v * grads[t][k];
                }
            }
        }
        nl.eval_c(&bc[..d], &u_bar, &mut cvals);
        nl.eval_d(&bc[..d], &u_bar, &mut dvals);
        for (ta, &na) in el.iter().enumerate() {
            let Some(pa) = mesh.interior_index(na as usize) else { continue };
            for alpha in 0..n {
                let mut acc = 0.0;
                for i in 0..d {
                    let mut flux = cvals[i * n + alpha];
                    for j in 0..d {
                        for beta in 0..n {
                            flux += ctx.block.at(i, j, alpha, beta) * grad_u[beta * d + j];
                        }
                    }
                    acc += flux * grads[ta][i];
                }
                acc += dvals[alpha] * w;
                r[pa * n + alpha] += vol * acc;
            }
        }
    }
    Ok(r)
}

/// Residual of the defect operator alone: `B_eps u` on the interior DOFs.
pub fn assemble_defect_residual(
    mesh: &DomainMesh,
    b: &DefectCoefficient,
    eps: f64,
    u: &DiscreteField,
    opts: &AssemblyOptions,
) -> Result<Vec<f64>> {
    let n = b.system_size();
    opts.check(mesh, Scale::Eps(eps))?;
    let d = mesh.dimension();
    let mut r = vec![0.0; mesh.num_interior() * n];
    let mut block = CoeffBlock::zeros(d, n);
    let mut grad_u = vec![0.0; d * n];
    for e in 0..mesh.num_elems() {
        let el = mesh.elem(e);
        let bc = mesh.barycenter(e);
        let y = [bc[0] / eps, bc[1] / eps];
        block.fill_zero();
        b.eval(&y[..d], &mut block);
        if block.max_abs() == 0.0 {
            continue;
        }
        let grads = mesh.grads(e);
        let vol = mesh.volume(e);
        grad_u.iter_mut().for_each(|v| *v = 0.0);
        for (t, &nid) in el.iter().enumerate() {
            for c in 0..n {
                let v = u.value(nid as usize, c);
                for k in 0..d {
                    grad_u[c * d + k] += v * grads[t][k];
                }
            }
        }
        for (ta, &na) in el.iter().enumerate() {
            let Some(pa) = mesh.interior_index(na as usize) else { continue };
            for alpha in 0..n {
                let mut acc = 0.0;
                for i in 0..d {
                    for j in 0..d {
                        for beta in 0..n {
                            acc += block.at(i, j, alpha, beta)
                                * grad_u[beta * d + j]
                                * grads[ta][i];
                        }
                    }
                }
                r[pa * n + alpha] += vol * acc;
            }
        }
    }
    Ok(r)
}

/// Jacobian `A_eps + B_eps + C'(u)` of the semilinear residual on the
/// interior DOF block; exact derivative of `assemble_semilinear_residual`
/// under the shared barycenter quadrature.
pub fn assemble_jacobian(
    mesh: &DomainMesh,
    a: &PeriodicCoefficient,
    scale: Scale,
    b: Option<&DefectCoefficient>,
    nl: &Nonlinearity,
    u: &DiscreteField,
    opts: &AssemblyOptions,
) -> Result<SparseOperator> {
    let n = a.system_size();
    check_layout(mesh, a, n)?;
    opts.check(mesh, scale)?;
    if !u.dirichlet_clean() {
        return Err(Error::invalid(
            "jacobian requires a field satisfying the homogeneous Dirichlet mask",
        ));
    }
    let d = mesh.dimension();
    let ndof = mesh.num_interior() * n;
    let per_elem = (d + 1) * (d + 1) * n * n;
    let mut trip = TripletBuilder::with_capacity(ndof, ndof, mesh.num_elems() * per_elem);
    let mut ctx = ElementCtx::new(d, n);
    let mut u_bar = vec![0.0; n];
    let mut dc = vec![0.0; d * n * n];
    let mut dd = vec![0.0; n * n];
    let w = 1.0 / (d + 1) as f64;
    for e in 0..mesh.num_elems() {
        let el = mesh.elem(e);
        let grads = mesh.grads(e);
        let vol = mesh.volume(e);
        let bc = mesh.barycenter(e);
        ctx.coeff_at(a, b, scale, &bc);
        u_bar.iter_mut().for_each(|v| *v = 0.0);
        for &nid in el {
            for c in 0..n {
                u_bar[c] += w * u.value(nid as usize, c);
            }
        }
        nl.eval_dc(&bc[..d], &u_bar, &mut dc);
        nl.eval_dd(&bc[..d], &u_bar, &mut dd);
        for (ta, &na) in el.iter().enumerate() {
            for alpha in 0..n {
                let Some(pa) = mesh.interior_index(na as usize) else { continue };
                let row = pa * n + alpha;
                for (tb, &nb) in el.iter().enumerate() {
                    let Some(pb) = mesh.interior_index(nb as usize) else { continue };
                    // diffusion block plus the C'(u) block (the trial
                    // function enters through its barycenter mean)
                    for beta in 0..n {
                        let mut acc = 0.0;
                        for i in 0..d {
                            for j in 0..d {
                                acc += ctx.block.at(i, j, alpha, beta) * grads[tb][j] * grads[ta][i];
                            }
                        }
                        let mut creact = dd[alpha * n + beta] * w;
                        for i in 0..d {
                            creact += dc[(i * n + alpha) * n + beta] * grads[ta][i];
                        }
                        trip.add(row, pb * n + beta, vol * (acc + creact * w));
                    }
                }
            }
        }
    }
    Ok(trip.build())
}

/// Conjugate-gradient solve for SPD operators (relative residual 1e-10),
/// falling back to the direct sparse factorization when the matrix is not
/// symmetric.
pub fn solve_spd(k: &SparseOperator, rhs: &[f64]) -> Result<Vec<f64>> {
    if k.is_symmetric() {
        let max_iter = 4 * k.nrows() + 2000;
        Ok(solve_cg(k, rhs, None, 1e-10, max_iter)?.x)
    } else {
        let f = LduFactor::new(k, Ordering::Natural)?;
        Ok(f.solve(rhs))
    }
}

/// Discrete H^1 Gram (unit-coefficient stiffness plus barycenter mass) on
/// the interior DOF block, with its factorization, defining the discrete
/// `W^{-1,2}` dual norm sqrt(phi^T G^{-1} phi).
#[derive(Clone)]
pub struct DualNorm {
    gram: SparseOperator,
    factor: LduFactor,
}

impl DualNorm {
    pub fn new(mesh: &DomainMesh, n: usize) -> Result<DualNorm> {
        let a = PeriodicCoefficient::constant(CoeffBlock::scalar_identity(
            mesh.dimension(),
            n,
            1.0,
        ));
        let k = assemble_stiffness(mesh, &a, Scale::Infinite, None, &AssemblyOptions::default())?;
        let m = assemble_mass(mesh, n);
        let gram = k.add_scaled(1.0, &m)?;
        let (nx, ny) = mesh.interior_grid_dims();
        let factor = LduFactor::new(&gram, Ordering::Grid { nx, ny, ncomp: n })?;
        Ok(DualNorm { gram, factor })
    }

    pub fn gram(&self) -> &SparseOperator {
        &self.gram
    }

    pub fn factor(&self) -> &LduFactor {
        &self.factor
    }

    pub fn apply_inverse(&self, phi: &[f64]) -> Vec<f64> {
        self.factor.solve(phi)
    }

    /// sqrt(phi^T G^{-1} phi): the dual-norm surrogate.
    pub fn dual_norm(&self, phi: &[f64]) -> f64 {
        if phi.iter().all(|&v| v == 0.0) {
            return 0.0;
        }
        let z = self.factor.solve(phi);
        dot(phi, &z).max(0.0).sqrt()
    }

    /// sqrt(v^T G v): the discrete H^1 norm of an interior field.
    pub fn h1_norm(&self, v: &[f64]) -> f64 {
        let gv = self.gram.apply(v);
        dot(v, &gv).max(0.0).sqrt()
    }
}

/// One-shot dual-norm surrogate of an interior residual vector.
pub fn dual_norm_surrogate(phi: &[f64], mesh: &DomainMesh, n: usize) -> Result<f64> {
    if phi.len() != mesh.num_interior() * n {
        return Err(Error::shape("residual length does not match interior DOFs"));
    }
    Ok(DualNorm::new(mesh, n)?.dual_norm(phi))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::SourceTerm;
    use crate::mesh::build_domain_mesh;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn unit_square(m: usize) -> Arc<DomainMesh> {
        Arc::new(build_domain_mesh(2, &[[0.0, 1.0], [0.0, 1.0]], m).unwrap())
    }

    fn interval(m: usize) -> Arc<DomainMesh> {
        Arc::new(build_domain_mesh(1, &[[0.0, 1.0]], m).unwrap())
    }

    #[test]
    fn stiffness_1d_is_second_difference() {
        let mesh = interval(8);
        let a = PeriodicCoefficient::identity(1, 1);
        let k = assemble_stiffness(&mesh, &a, Scale::Infinite, None, &AssemblyOptions::default())
            .unwrap();
        let h = 1.0 / 8.0;
        for p in 0..mesh.num_interior() {
            assert!((k.get(p, p) - 2.0 / h).abs() < 1e-12);
            if p > 0 {
                assert!((k.get(p, p - 1) + 1.0 / h).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_coefficient_is_scale_independent() {
        let mesh = unit_square(8);
        let a = PeriodicCoefficient::constant(CoeffBlock::scalar_identity(2, 1, 3.0));
        let opts = AssemblyOptions {
            allow_coarse: true,
            ..Default::default()
        };
        let k1 = assemble_stiffness(&mesh, &a, Scale::Eps(0.25), None, &opts).unwrap();
        let k2 = assemble_stiffness(&mesh, &a, Scale::Eps(1.0 / 7.0), None, &opts).unwrap();
        assert_eq!(k1.values(), k2.values());
    }

    #[test]
    fn oscillatory_interior_row_sums_vanish() {
        // eps = 1/4, h = eps/16 -> m = 64 on the unit square
        let mesh = unit_square(64);
        let a = PeriodicCoefficient::scalar_laminate(2, 2.0, 1.0);
        let k = assemble_stiffness_full(
            &mesh,
            &a,
            Scale::Eps(0.25),
            None,
            &AssemblyOptions::default(),
        )
        .unwrap();
        for node in 0..mesh.num_nodes() {
            if mesh.is_boundary(node) {
                continue;
            }
            let lo = k.row_ptr()[node];
            let hi = k.row_ptr()[node + 1];
            let sum: f64 = k.values()[lo..hi].iter().sum();
            assert!(sum.abs() <= 1e-10, "row {node} sums to {sum}");
        }
    }

    #[test]
    fn resolution_floor_rejects_coarse_mesh() {
        let mesh = unit_square(16);
        let a = PeriodicCoefficient::scalar_laminate(2, 2.0, 1.0);
        let err = assemble_stiffness(
            &mesh,
            &a,
            Scale::Eps(1.0 / 16.0),
            None,
            &AssemblyOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::ResolutionFloor { .. }));
        let ok = assemble_stiffness(
            &mesh,
            &a,
            Scale::Eps(1.0 / 16.0),
            None,
            &AssemblyOptions {
                allow_coarse: true,
                ..Default::default()
            },
        );
        assert!(ok.is_ok());
    }

    #[test]
    fn zero_everything_gives_zero_residual() {
        let mesh = unit_square(8);
        let a = PeriodicCoefficient::identity(2, 1);
        let nl = Nonlinearity::zero(2, 1);
        let u = DiscreteField::zeros(&mesh, 1);
        let r = assemble_semilinear_residual(
            &mesh,
            &a,
            Scale::Infinite,
            None,
            &nl,
            &u,
            &AssemblyOptions::default(),
        )
        .unwrap();
        assert!(r.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_reaction_residual_equals_k_plus_m() {
        let mesh = unit_square(12);
        let a = PeriodicCoefficient::identity(2, 1);
        let nl = Nonlinearity::reaction(2, 1, 1.0, 0.0, SourceTerm::Zero);
        let mut u = DiscreteField::from_fn(&mesh, 1, |x, _| (x[0] * (1.0 - x[0]) * x[1]).sin());
        u.clamp_dirichlet();
        let r = assemble_semilinear_residual(
            &mesh,
            &a,
            Scale::Infinite,
            None,
            &nl,
            &u,
            &AssemblyOptions::default(),
        )
        .unwrap();
        let k = assemble_stiffness(&mesh, &a, Scale::Infinite, None, &AssemblyOptions::default())
            .unwrap();
        let m = assemble_mass(&mesh, 1);
        let km = k.add_scaled(1.0, &m).unwrap();
        let expect = km.apply(&u.interior_vector());
        for (x, y) in r.iter().zip(&expect) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_problem_roundtrip_residual_below_tolerance() {
        let mesh = unit_square(16);
        let a = PeriodicCoefficient::scalar_laminate(2, 2.0, 1.0);
        let opts = AssemblyOptions {
            allow_coarse: true,
            ..Default::default()
        };
        let eps = 0.5;
        let nl = Nonlinearity::reaction(2, 1, 0.0, 0.0, SourceTerm::SinProduct { amplitude: 4.0 });
        // solve (A_eps) u = -C  (linear fixture, d(x,u) = -g)
        let k = assemble_stiffness(&mesh, &a, Scale::Eps(eps), None, &opts).unwrap();
        let zero = DiscreteField::zeros(&mesh, 1);
        let c = assemble_semilinear_residual(&mesh, &a, Scale::Eps(eps), None, &nl, &zero, &opts)
            .unwrap();
        let rhs: Vec<f64> = c.iter().map(|v| -v).collect();
        let sol = solve_spd(&k, &rhs).unwrap();
        let mut u = DiscreteField::zeros(&mesh, 1);
        u.set_interior(&sol);
        let r =
            assemble_semilinear_residual(&mesh, &a, Scale::Eps(eps), None, &nl, &u, &opts).unwrap();
        let rn = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        let bn = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(rn <= 2e-10 * bn, "residual {rn} vs rhs {bn}");
    }

    #[test]
    fn jacobian_of_affine_nonlinearity_is_constant() {
        let mesh = unit_square(8);
        let a = PeriodicCoefficient::identity(2, 1);
        let nl = Nonlinearity::reaction(2, 1, 2.0, 0.0, SourceTerm::Constant(1.0));
        let u0 = DiscreteField::zeros(&mesh, 1);
        let mut u1 = DiscreteField::from_fn(&mesh, 1, |x, _| x[0] * x[1]);
        u1.clamp_dirichlet();
        let j0 = assemble_jacobian(
            &mesh,
            &a,
            Scale::Infinite,
            None,
            &nl,
            &u0,
            &AssemblyOptions::default(),
        )
        .unwrap();
        let j1 = assemble_jacobian(
            &mesh,
            &a,
            Scale::Infinite,
            None,
            &nl,
            &u1,
            &AssemblyOptions::default(),
        )
        .unwrap();
        for (x, y) in j0.values().iter().zip(j1.values()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn cubic_jacobian_is_stiffness_plus_weighted_mass() {
        let mesh = unit_square(6);
        let a = PeriodicCoefficient::identity(2, 1);
        let nl = Nonlinearity::reaction(2, 1, 0.0, 1.0, SourceTerm::Zero);
        let mut u = DiscreteField::from_fn(&mesh, 1, |x, _| x[0] + 2.0 * x[1]);
        u.clamp_dirichlet();
        let j = assemble_jacobian(
            &mesh,
            &a,
            Scale::Infinite,
            None,
            &nl,
            &u,
            &AssemblyOptions::default(),
        )
        .unwrap();
        let k = assemble_stiffness(&mesh, &a, Scale::Infinite, None, &AssemblyOptions::default())
            .unwrap();
        // oracle: direct assembly of the 3 u_bar^2 weighted barycenter mass
        let mut trip = TripletBuilder::new(mesh.num_interior(), mesh.num_interior());
        for e in 0..mesh.num_elems() {
            let el = mesh.elem(e);
            let vol = mesh.volume(e);
            let ubar: f64 = el.iter().map(|&nid| u.value(nid as usize, 0)).sum::<f64>() / 3.0;
            for &na in el {
                let Some(pa) = mesh.interior_index(na as usize) else { continue };
                for &nb in el {
                    let Some(pb) = mesh.interior_index(nb as usize) else { continue };
                    trip.add(pa, pb, vol * 3.0 * ubar * ubar / 9.0);
                }
            }
        }
        let mw = trip.build();
        let expect = k.add_scaled(1.0, &mw).unwrap();
        assert_eq!(j.nnz(), expect.nnz());
        for (x, y) in j.values().iter().zip(expect.values()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mesh = unit_square(8);
        let a = PeriodicCoefficient::scalar_laminate(2, 2.0, 1.0);
        let opts = AssemblyOptions {
            allow_coarse: true,
            ..Default::default()
        };
        let scale = Scale::Eps(0.5);
        let nl = Nonlinearity::reaction(2, 1, 1.0, 2.0, SourceTerm::SinProduct { amplitude: 1.0 });
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut u = DiscreteField::zeros(&mesh, 1);
        let mut v = vec![0.0; mesh.num_interior()];
        let ui: Vec<f64> = (0..mesh.num_interior())
            .map(|_| rng.gen_range(-0.5..0.5))
            .collect();
        u.set_interior(&ui);
        v.iter_mut().for_each(|t| *t = rng.gen_range(-1.0..1.0));
        let j = assemble_jacobian(&mesh, &a, scale, None, &nl, &u, &opts).unwrap();
        let jv = j.apply(&v);
        let h = 1e-6;
        let mut up = u.clone();
        let mut um = u.clone();
        let upv: Vec<f64> = ui.iter().zip(&v).map(|(a, b)| a + h * b).collect();
        let umv: Vec<f64> = ui.iter().zip(&v).map(|(a, b)| a - h * b).collect();
        up.set_interior(&upv);
        um.set_interior(&umv);
        let rp = assemble_semilinear_residual(&mesh, &a, scale, None, &nl, &up, &opts).unwrap();
        let rm = assemble_semilinear_residual(&mesh, &a, scale, None, &nl, &um, &opts).unwrap();
        let scale_ref = jv.iter().map(|t| t.abs()).fold(0.0f64, f64::max);
        for i in 0..jv.len() {
            let fd = (rp[i] - rm[i]) / (2.0 * h);
            assert!(
                (fd - jv[i]).abs() <= 1e-5 * scale_ref.max(1.0),
                "entry {i}: fd {fd} vs jv {}",
                jv[i]
            );
        }
    }

    #[test]
    fn galerkin_symmetry_for_symmetric_coefficient() {
        let mesh = unit_square(24);
        let a = PeriodicCoefficient::scalar_laminate(2, 2.0, 1.0);
        let k = assemble_stiffness(
            &mesh,
            &a,
            Scale::Eps(0.5),
            None,
            &AssemblyOptions {
                allow_coarse: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(k.max_asymmetry() <= 1e-12);
        assert!(k.is_symmetric());
    }

    #[test]
    fn solve_spd_identity_returns_rhs() {
        let mut trip = TripletBuilder::new(6, 6);
        for i in 0..6 {
            trip.add(i, i, 1.0);
        }
        let k = trip.build();
        let rhs = [1.0, 2.0, 3.0, -1.0, 0.5, 0.0];
        let x = solve_spd(&k, &rhs).unwrap();
        for (a, b) in x.iter().zip(&rhs) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn solve_spd_1d_poisson_matches_parabola() {
        let mesh = interval(64);
        let a = PeriodicCoefficient::identity(1, 1);
        let k = assemble_stiffness(&mesh, &a, Scale::Infinite, None, &AssemblyOptions::default())
            .unwrap();
        // load for f = 1 with exact P1 integration: h per interior node
        let h = 1.0 / 64.0;
        let rhs = vec![h; mesh.num_interior()];
        let x = solve_spd(&k, &rhs).unwrap();
        for (p, &node) in mesh.interior_nodes().iter().enumerate() {
            let t = mesh.node(node as usize)[0];
            let exact = 0.5 * t * (1.0 - t);
            assert!(
                (x[p] - exact).abs() <= 1e-9,
                "node {t}: {} vs {exact}",
                x[p]
            );
        }
    }

    #[test]
    fn solve_spd_random_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 50;
        let mut dense = vec![0.0; n * n];
        for v in dense.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let mut trip = TripletBuilder::new(n, n);
        for r in 0..n {
            for c in 0..n {
                let mut s = if r == c { n as f64 } else { 0.0 };
                for t in 0..n {
                    s += dense[r * n + t] * dense[c * n + t];
                }
                trip.add(r, c, s);
            }
        }
        let k = trip.build();
        let b: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
        let x = solve_spd(&k, &b).unwrap();
        let kb = k.apply(&x);
        let err = kb
            .iter()
            .zip(&b)
            .map(|(p, q)| (p - q).abs())
            .fold(0.0f64, f64::max);
        assert!(err <= 1e-9, "roundtrip error {err}");
    }

    #[test]
    fn dual_norm_zero_and_gram_roundtrip() {
        let mesh = unit_square(12);
        let dn = DualNorm::new(&mesh, 1).unwrap();
        let zero = vec![0.0; mesh.num_interior()];
        assert_eq!(dn.dual_norm(&zero), 0.0);
        let v: Vec<f64> = (0..mesh.num_interior())
            .map(|i| ((i * 7 % 13) as f64 - 6.0) / 13.0)
            .collect();
        let phi = dn.gram().apply(&v);
        let lhs = dn.dual_norm(&phi);
        let rhs = dn.h1_norm(&v);
        assert!((lhs - rhs).abs() <= 1e-8 * rhs.max(1.0), "{lhs} vs {rhs}");
    }

    #[test]
    fn dual_norm_stabilizes_under_refinement() {
        // phi_a = integral of a fixed smooth f against the basis
        let mut previous: Option<f64> = None;
        for m in [32usize, 64, 128] {
            let mesh = unit_square(m);
            let f = |x: &[f64]| (std::f64::consts::PI * x[0]).sin() * x[1];
            let mut phi = vec![0.0; mesh.num_interior()];
            for e in 0..mesh.num_elems() {
                let el = mesh.elem(e);
                let bc = mesh.barycenter(e);
                let w = mesh.volume(e) / 3.0;
                let val = f(&bc[..2]);
                for &nid in el {
                    if let Some(p) = mesh.interior_index(nid as usize) {
                        phi[p] += w * val;
                    }
                }
            }
            let nrm = dual_norm_surrogate(&phi, &mesh, 1).unwrap();
            if let Some(prev) = previous {
                let change = ((nrm - prev) / prev).abs();
                assert!(change <= 0.02, "m={m}: relative change {change}");
            }
            previous = Some(nrm);
        }
    }

    #[test]
    fn coercivity_transfer_to_stiffness() {
        let a = PeriodicCoefficient::scalar_laminate(2, 2.0, 1.0);
        let c0 = crate::coeffs::coercivity_constant(&a, 64).unwrap();
        for m in [16usize, 32] {
            let mesh = unit_square(m);
            let opts = AssemblyOptions {
                allow_coarse: true,
                ..Default::default()
            };
            let ka = assemble_stiffness(&mesh, &a, Scale::Eps(1.0), None, &opts).unwrap();
            let id = PeriodicCoefficient::identity(2, 1);
            let ki = assemble_stiffness(&mesh, &id, Scale::Infinite, None, &opts).unwrap();
            let (nx, ny) = mesh.interior_grid_dims();
            let fa = LduFactor::new(&ka, Ordering::Grid { nx, ny, ncomp: 1 }).unwrap();
            let fi = LduFactor::new(&ki, Ordering::Grid { nx, ny, ncomp: 1 }).unwrap();
            let (la, _) = crate::sparse::smallest_eig_spd(&fa, &ka, 1e-8, 2000).unwrap();
            let (li, _) = crate::sparse::smallest_eig_spd(&fi, &ki, 1e-8, 2000).unwrap();
            assert!(
                la >= c0 * li * 0.99,
                "m={m}: lambda_a {la} < c0 lambda_I {}",
                c0 * li
            );
        }
    }
}
