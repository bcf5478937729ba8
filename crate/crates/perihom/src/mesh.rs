//! Structured simplicial grids: periodic unit cells for corrector problems
//! and rectangular Lipschitz domains for the boundary value problems, plus
//! exact boundary-strip geometry.
//!
//! All meshes are structured (uniform subdivisions, right-triangle split of
//! squares in 2D). Periodicity on the unit cell is realized by slave/master
//! node elimination so assembled systems stay symmetric positive definite.
//! Meshes are immutable after construction and safe to share across threads.

use crate::{Error, Result};

/// Periodic grid on the unit cell `[0,1]^d`, `d` in {1,2}.
///
/// Nodes on the far faces are slaves identified with their mates on the near
/// faces; the remaining `m^d` nodes carry the master degrees of freedom.
#[derive(Debug)]
pub struct UnitCellGrid {
    d: usize,
    m: usize,
    nodes: Vec<f64>,
    /// Element connectivity, `d + 1` node ids per simplex.
    elems: Vec<u32>,
    volumes: Vec<f64>,
    /// node id -> master node id (identity on masters).
    master_of: Vec<u32>,
    /// master node ids in node order.
    masters: Vec<u32>,
    /// node id -> index into the master numbering (slaves point at their master's index).
    master_index: Vec<u32>,
}

impl UnitCellGrid {
    pub fn dimension(&self) -> usize {
        self.d
    }

    pub fn subdivisions(&self) -> usize {
        self.m
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len() / self.d
    }

    pub fn num_elems(&self) -> usize {
        self.volumes.len()
    }

    pub fn num_masters(&self) -> usize {
        self.masters.len()
    }

    pub fn node(&self, id: usize) -> &[f64] {
        &self.nodes[id * self.d..(id + 1) * self.d]
    }

    pub fn elem(&self, e: usize) -> &[u32] {
        let k = self.d + 1;
        &self.elems[e * k..(e + 1) * k]
    }

    pub fn volume(&self, e: usize) -> f64 {
        self.volumes[e]
    }

    pub fn master_of(&self, node: usize) -> u32 {
        self.master_of[node]
    }

    /// Index of a node's master DOF block in the master numbering.
    pub fn master_index(&self, node: usize) -> u32 {
        self.master_index[node]
    }

    pub fn masters(&self) -> &[u32] {
        &self.masters
    }

    pub fn is_boundary_node(&self, id: usize) -> bool {
        self.node(id).iter().any(|&c| {
            let i = (c * self.m as f64).round() as usize;
            i == 0 || i == self.m
        })
    }

    /// The opposite boundary node: every coordinate at 0 flips to 1 and vice
    /// versa. An involution on boundary nodes; `None` for interior nodes.
    pub fn periodic_partner(&self, id: usize) -> Option<u32> {
        if !self.is_boundary_node(id) {
            return None;
        }
        let m = self.m;
        let mut idx = [0usize; 2];
        for (k, &c) in self.node(id).iter().enumerate() {
            let i = (c * m as f64).round() as usize;
            idx[k] = if i == 0 {
                m
            } else if i == m {
                0
            } else {
                i
            };
        }
        Some(self.node_id(&idx[..self.d]) as u32)
    }

    fn node_id(&self, idx: &[usize]) -> usize {
        match self.d {
            1 => idx[0],
            _ => idx[1] * (self.m + 1) + idx[0],
        }
    }

    /// P1 gradients of the barycentric basis on element `e` (constant per
    /// element), one `[f64; 2]` per local node (second entry unused in 1D).
    pub fn grads(&self, e: usize) -> Vec<[f64; 2]> {
        element_grads(self.d, &self.nodes, self.elem(e))
    }

    /// Barycenter of element `e`.
    pub fn barycenter(&self, e: usize) -> [f64; 2] {
        barycenter(self.d, &self.nodes, self.elem(e))
    }

    /// Integral over the cell of a P1 master-DOF field with `n` components.
    pub fn integrate_master_field(&self, n: usize, values: &[f64]) -> Vec<f64> {
        assert_eq!(values.len(), self.num_masters() * n);
        let mut acc = vec![0.0; n];
        let nodes_per = self.d + 1;
        for e in 0..self.num_elems() {
            let w = self.volumes[e] / nodes_per as f64;
            for &nid in self.elem(e) {
                let mi = self.master_index[nid as usize] as usize;
                for c in 0..n {
                    acc[c] += w * values[mi * n + c];
                }
            }
        }
        acc
    }

    /// Evaluates a master-DOF P1 field at an arbitrary point by periodic
    /// interpolation (the point is wrapped into `[0,1)^d` first; ties at cell
    /// edges resolve by the half-open convention).
    pub fn interpolate_periodic(&self, n: usize, values: &[f64], y: &[f64]) -> Vec<f64> {
        assert_eq!(values.len(), self.num_masters() * n);
        let m = self.m as f64;
        let mut out = vec![0.0; n];
        match self.d {
            1 => {
                let yf = wrap_unit(y[0]);
                let s = yf * m;
                let i = (s.floor() as usize).min(self.m - 1);
                let t = s - i as f64;
                let v0 = self.master_index[i] as usize;
                let v1 = self.master_index[i + 1] as usize;
                for c in 0..n {
                    out[c] = (1.0 - t) * values[v0 * n + c] + t * values[v1 * n + c];
                }
            }
            _ => {
                let yx = wrap_unit(y[0]) * m;
                let yy = wrap_unit(y[1]) * m;
                let i = (yx.floor() as usize).min(self.m - 1);
                let j = (yy.floor() as usize).min(self.m - 1);
                let tx = yx - i as f64;
                let ty = yy - j as f64;
                let stride = self.m + 1;
                let n00 = j * stride + i;
                let n10 = j * stride + i + 1;
                let n01 = (j + 1) * stride + i;
                let n11 = (j + 1) * stride + i + 1;
                // square split along the (0,0)-(1,1) diagonal
                let (ids, l) = if tx >= ty {
                    ([n00, n10, n11], [1.0 - tx, tx - ty, ty])
                } else {
                    ([n00, n11, n01], [1.0 - ty, tx, ty - tx])
                };
                for (t, &nid) in ids.iter().enumerate() {
                    let mi = self.master_index[nid] as usize;
                    for c in 0..n {
                        out[c] += l[t] * values[mi * n + c];
                    }
                }
            }
        }
        out
    }
}

/// Builds the periodic unit-cell grid with `m` subdivisions per axis.
pub fn build_unit_cell_grid(d: usize, m: usize) -> Result<UnitCellGrid> {
    if !(1..=2).contains(&d) {
        return Err(Error::invalid(format!("cell grid dimension {d} not in {{1,2}}")));
    }
    if m < 2 {
        return Err(Error::invalid(format!("cell grid needs m >= 2, got {m}")));
    }
    let h = 1.0 / m as f64;
    match d {
        1 => {
            let nodes: Vec<f64> = (0..=m).map(|i| i as f64 * h).collect();
            let mut elems = Vec::with_capacity(2 * m);
            let mut volumes = Vec::with_capacity(m);
            for i in 0..m {
                elems.push(i as u32);
                elems.push((i + 1) as u32);
                volumes.push(h);
            }
            let mut master_of: Vec<u32> = (0..=m as u32).collect();
            master_of[m] = 0;
            let masters: Vec<u32> = (0..m as u32).collect();
            let mut master_index: Vec<u32> = (0..=m as u32).collect();
            master_index[m] = 0;
            Ok(UnitCellGrid {
                d,
                m,
                nodes,
                elems,
                volumes,
                master_of,
                masters,
                master_index,
            })
        }
        _ => {
            let stride = m + 1;
            let mut nodes = Vec::with_capacity(2 * stride * stride);
            for j in 0..=m {
                for i in 0..=m {
                    nodes.push(i as f64 * h);
                    nodes.push(j as f64 * h);
                }
            }
            let mut elems = Vec::with_capacity(6 * m * m);
            let mut volumes = Vec::with_capacity(2 * m * m);
            let vol = 0.5 * h * h;
            for j in 0..m {
                for i in 0..m {
                    let n00 = (j * stride + i) as u32;
                    let n10 = (j * stride + i + 1) as u32;
                    let n01 = ((j + 1) * stride + i) as u32;
                    let n11 = ((j + 1) * stride + i + 1) as u32;
                    elems.extend_from_slice(&[n00, n10, n11]);
                    volumes.push(vol);
                    elems.extend_from_slice(&[n00, n11, n01]);
                    volumes.push(vol);
                }
            }
            let mut master_of = vec![0u32; stride * stride];
            let mut master_index = vec![0u32; stride * stride];
            let mut masters = Vec::with_capacity(m * m);
            for j in 0..=m {
                for i in 0..=m {
                    let id = j * stride + i;
                    let mi = i % m;
                    let mj = j % m;
                    let master = mj * stride + mi;
                    master_of[id] = master as u32;
                    master_index[id] = (mj * m + mi) as u32;
                    if id == master {
                        masters.push(id as u32);
                    }
                }
            }
            Ok(UnitCellGrid {
                d,
                m,
                nodes,
                elems,
                volumes,
                master_of,
                masters,
                master_index,
            })
        }
    }
}

/// Conforming simplicial mesh of a rectangle (2D) or interval (1D).
#[derive(Debug)]
pub struct DomainMesh {
    d: usize,
    m: usize,
    /// per-axis [lo, hi]; the second axis is unused in 1D.
    extents: [[f64; 2]; 2],
    nodes: Vec<f64>,
    elems: Vec<u32>,
    volumes: Vec<f64>,
    boundary: Vec<bool>,
    h_max: f64,
    interior: Vec<u32>,
    interior_index: Vec<i64>,
}

impl DomainMesh {
    pub fn dimension(&self) -> usize {
        self.d
    }

    pub fn subdivisions(&self) -> usize {
        self.m
    }

    pub fn extents(&self) -> &[[f64; 2]; 2] {
        &self.extents
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len() / self.d
    }

    pub fn num_elems(&self) -> usize {
        self.volumes.len()
    }

    pub fn node(&self, id: usize) -> &[f64] {
        &self.nodes[id * self.d..(id + 1) * self.d]
    }

    pub fn elem(&self, e: usize) -> &[u32] {
        let k = self.d + 1;
        &self.elems[e * k..(e + 1) * k]
    }

    pub fn volume(&self, e: usize) -> f64 {
        self.volumes[e]
    }

    /// Maximum element diameter.
    pub fn h_max(&self) -> f64 {
        self.h_max
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.boundary[node]
    }

    pub fn boundary_flags(&self) -> &[bool] {
        &self.boundary
    }

    /// Interior node ids in node order.
    pub fn interior_nodes(&self) -> &[u32] {
        &self.interior
    }

    pub fn num_interior(&self) -> usize {
        self.interior.len()
    }

    /// Position of a node in the interior numbering, or `None` on the boundary.
    pub fn interior_index(&self, node: usize) -> Option<usize> {
        let v = self.interior_index[node];
        (v >= 0).then_some(v as usize)
    }

    /// Interior nodes form an (m-1) x (m-1) grid in 2D, (m-1) x 1 in 1D.
    pub fn interior_grid_dims(&self) -> (usize, usize) {
        match self.d {
            1 => (self.m - 1, 1),
            _ => (self.m - 1, self.m - 1),
        }
    }

    /// Exact distance to the boundary, computed from the rectangle extents.
    pub fn dist_to_boundary(&self, x: &[f64]) -> f64 {
        let mut dist = f64::INFINITY;
        for k in 0..self.d {
            let [lo, hi] = self.extents[k];
            dist = dist.min(x[k] - lo).min(hi - x[k]);
        }
        dist
    }

    pub fn grads(&self, e: usize) -> Vec<[f64; 2]> {
        element_grads(self.d, &self.nodes, self.elem(e))
    }

    pub fn barycenter(&self, e: usize) -> [f64; 2] {
        barycenter(self.d, &self.nodes, self.elem(e))
    }

    /// Locates the element containing `x` (clamped into the rectangle) and
    /// returns `(element, barycentric coordinates)`.
    pub fn locate(&self, x: &[f64]) -> (usize, [f64; 3]) {
        let m = self.m as f64;
        match self.d {
            1 => {
                let [lo, hi] = self.extents[0];
                let s = ((x[0] - lo) / (hi - lo) * m).clamp(0.0, m - 1e-12);
                let e = (s.floor() as usize).min(self.m - 1);
                let t = s - e as f64;
                (e, [1.0 - t, t, 0.0])
            }
            _ => {
                let sx = ((x[0] - self.extents[0][0])
                    / (self.extents[0][1] - self.extents[0][0])
                    * m)
                    .clamp(0.0, m - 1e-12);
                let sy = ((x[1] - self.extents[1][0])
                    / (self.extents[1][1] - self.extents[1][0])
                    * m)
                    .clamp(0.0, m - 1e-12);
                let i = (sx.floor() as usize).min(self.m - 1);
                let j = (sy.floor() as usize).min(self.m - 1);
                let tx = sx - i as f64;
                let ty = sy - j as f64;
                let cell = 2 * (j * self.m + i);
                if tx >= ty {
                    (cell, [1.0 - tx, tx - ty, ty])
                } else {
                    (cell + 1, [1.0 - ty, tx, ty - tx])
                }
            }
        }
    }

    /// Whether `x` lies inside the closed rectangle.
    pub fn contains(&self, x: &[f64]) -> bool {
        (0..self.d).all(|k| {
            let [lo, hi] = self.extents[k];
            x[k] >= lo && x[k] <= hi
        })
    }

    /// Node-id neighbors (shared element) of each node, for nodal smoothing.
    pub fn node_neighbors(&self) -> Vec<Vec<u32>> {
        let mut nb = vec![Vec::new(); self.num_nodes()];
        let k = self.d + 1;
        for e in 0..self.num_elems() {
            let el = &self.elems[e * k..(e + 1) * k];
            for &a in el {
                for &b in el {
                    if a != b && !nb[a as usize].contains(&b) {
                        nb[a as usize].push(b);
                    }
                }
            }
        }
        nb
    }
}

/// Builds a conforming mesh of the rectangle with `m` subdivisions per axis.
pub fn build_domain_mesh(d: usize, extents: &[[f64; 2]], m: usize) -> Result<DomainMesh> {
    if !(1..=2).contains(&d) {
        return Err(Error::invalid(format!("mesh dimension {d} not in {{1,2}}")));
    }
    if m < 2 {
        return Err(Error::invalid(format!("mesh needs m >= 2, got {m}")));
    }
    if extents.len() < d || extents[..d].iter().any(|&[lo, hi]| !(hi > lo)) {
        return Err(Error::invalid("degenerate rectangle extents"));
    }
    let mut ext = [[0.0, 1.0]; 2];
    ext[..d].copy_from_slice(&extents[..d]);

    match d {
        1 => {
            let [lo, hi] = ext[0];
            let h = (hi - lo) / m as f64;
            let nodes: Vec<f64> = (0..=m).map(|i| lo + i as f64 * h).collect();
            let mut elems = Vec::with_capacity(2 * m);
            let mut volumes = Vec::with_capacity(m);
            for i in 0..m {
                elems.push(i as u32);
                elems.push((i + 1) as u32);
                volumes.push(h);
            }
            let mut boundary = vec![false; m + 1];
            boundary[0] = true;
            boundary[m] = true;
            let interior: Vec<u32> = (1..m as u32).collect();
            let mut interior_index = vec![-1i64; m + 1];
            for (p, &nid) in interior.iter().enumerate() {
                interior_index[nid as usize] = p as i64;
            }
            Ok(DomainMesh {
                d,
                m,
                extents: ext,
                nodes,
                elems,
                volumes,
                boundary,
                h_max: h,
                interior,
                interior_index,
            })
        }
        _ => {
            let hx = (ext[0][1] - ext[0][0]) / m as f64;
            let hy = (ext[1][1] - ext[1][0]) / m as f64;
            let stride = m + 1;
            let mut nodes = Vec::with_capacity(2 * stride * stride);
            for j in 0..=m {
                for i in 0..=m {
                    nodes.push(ext[0][0] + i as f64 * hx);
                    nodes.push(ext[1][0] + j as f64 * hy);
                }
            }
            let mut elems = Vec::with_capacity(6 * m * m);
            let mut volumes = Vec::with_capacity(2 * m * m);
            let vol = 0.5 * hx * hy;
            for j in 0..m {
                for i in 0..m {
                    let n00 = (j * stride + i) as u32;
                    let n10 = (j * stride + i + 1) as u32;
                    let n01 = ((j + 1) * stride + i) as u32;
                    let n11 = ((j + 1) * stride + i + 1) as u32;
                    elems.extend_from_slice(&[n00, n10, n11]);
                    volumes.push(vol);
                    elems.extend_from_slice(&[n00, n11, n01]);
                    volumes.push(vol);
                }
            }
            let mut boundary = vec![false; stride * stride];
            let mut interior = Vec::with_capacity((m - 1) * (m - 1));
            let mut interior_index = vec![-1i64; stride * stride];
            for j in 0..=m {
                for i in 0..=m {
                    let id = j * stride + i;
                    if i == 0 || i == m || j == 0 || j == m {
                        boundary[id] = true;
                    } else {
                        interior_index[id] = interior.len() as i64;
                        interior.push(id as u32);
                    }
                }
            }
            Ok(DomainMesh {
                d,
                m,
                extents: ext,
                nodes,
                elems,
                volumes,
                boundary,
                h_max: (hx * hx + hy * hy).sqrt(),
                interior,
                interior_index,
            })
        }
    }
}

/// Per-node membership of the boundary strip `Omega_eps` (distance to the
/// boundary strictly below `eps`, exact rectangle geometry).
pub fn boundary_strip_indicator(mesh: &DomainMesh, eps: f64) -> Vec<bool> {
    assert!(eps > 0.0, "strip width must be positive");
    (0..mesh.num_nodes())
        .map(|id| mesh.dist_to_boundary(mesh.node(id)) < eps)
        .collect()
}

/// Total volume of elements lying entirely inside the boundary strip
/// (all vertices and the barycenter inside).
pub fn strip_measure(mesh: &DomainMesh, eps: f64) -> f64 {
    let inside = boundary_strip_indicator(mesh, eps);
    let mut total = 0.0;
    for e in 0..mesh.num_elems() {
        let el = mesh.elem(e);
        let all_nodes = el.iter().all(|&nid| inside[nid as usize]);
        let bc = mesh.barycenter(e);
        if all_nodes && mesh.dist_to_boundary(&bc[..mesh.dimension()]) < eps {
            total += mesh.volume(e);
        }
    }
    total
}

fn wrap_unit(y: f64) -> f64 {
    let f = y - y.floor();
    if f >= 1.0 {
        0.0
    } else {
        f
    }
}

fn barycenter(d: usize, nodes: &[f64], elem: &[u32]) -> [f64; 2] {
    let mut bc = [0.0; 2];
    for &nid in elem {
        for k in 0..d {
            bc[k] += nodes[nid as usize * d + k];
        }
    }
    let w = 1.0 / elem.len() as f64;
    bc[0] *= w;
    bc[1] *= w;
    bc
}

/// Constant gradients of the P1 basis functions on a segment or triangle.
fn element_grads(d: usize, nodes: &[f64], elem: &[u32]) -> Vec<[f64; 2]> {
    match d {
        1 => {
            let x0 = nodes[elem[0] as usize];
            let x1 = nodes[elem[1] as usize];
            let inv = 1.0 / (x1 - x0);
            vec![[-inv, 0.0], [inv, 0.0]]
        }
        _ => {
            let p = |t: usize| {
                let id = elem[t] as usize * 2;
                [nodes[id], nodes[id + 1]]
            };
            let (a, b, c) = (p(0), p(1), p(2));
            let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
            let inv = 1.0 / det;
            vec![
                [(b[1] - c[1]) * inv, (c[0] - b[0]) * inv],
                [(c[1] - a[1]) * inv, (a[0] - c[0]) * inv],
                [(a[1] - b[1]) * inv, (b[0] - a[0]) * inv],
            ]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_1d_m4_counts_and_identification() {
        let g = build_unit_cell_grid(1, 4).unwrap();
        assert_eq!(g.num_nodes(), 5);
        assert_eq!(g.num_masters(), 4);
        assert_eq!(g.master_of(4), 0);
        assert_eq!(g.periodic_partner(0), Some(4));
        assert_eq!(g.periodic_partner(4), Some(0));
        assert_eq!(g.periodic_partner(2), None);
    }

    #[test]
    fn cell_2d_m2_counts() {
        let g = build_unit_cell_grid(2, 2).unwrap();
        assert_eq!(g.num_nodes(), 9);
        assert_eq!(g.num_masters(), 4);
        assert_eq!(g.num_elems(), 8);
    }

    #[test]
    fn cell_2d_tiles_exactly() {
        let g = build_unit_cell_grid(2, 64).unwrap();
        let total: f64 = (0..g.num_elems()).map(|e| g.volume(e)).sum();
        assert!((total - 1.0).abs() <= 1e-12);
        assert!((0..g.num_elems()).all(|e| g.volume(e) > 0.0));
    }

    #[test]
    fn cell_rejects_bad_args() {
        assert!(build_unit_cell_grid(3, 4).is_err());
        assert!(build_unit_cell_grid(2, 1).is_err());
    }

    #[test]
    fn periodic_partner_is_involution() {
        let g = build_unit_cell_grid(2, 4).unwrap();
        for id in 0..g.num_nodes() {
            if let Some(p) = g.periodic_partner(id) {
                assert_eq!(g.periodic_partner(p as usize), Some(id as u32));
            }
        }
    }

    #[test]
    fn slave_to_master_is_idempotent() {
        let g = build_unit_cell_grid(2, 4).unwrap();
        for id in 0..g.num_nodes() {
            let m1 = g.master_of(id) as usize;
            assert_eq!(g.master_of(m1), m1 as u32);
        }
    }

    #[test]
    fn domain_unit_square_m4_counts() {
        let mesh = build_domain_mesh(2, &[[0.0, 1.0], [0.0, 1.0]], 4).unwrap();
        assert_eq!(mesh.num_nodes(), 25);
        let boundary = mesh.boundary_flags().iter().filter(|&&b| b).count();
        assert_eq!(boundary, 16);
        assert_eq!(mesh.num_interior(), 9);
    }

    #[test]
    fn domain_1d_counts() {
        let mesh = build_domain_mesh(1, &[[0.0, 1.0]], 10).unwrap();
        assert_eq!(mesh.num_nodes(), 11);
        let boundary = mesh.boundary_flags().iter().filter(|&&b| b).count();
        assert_eq!(boundary, 2);
    }

    #[test]
    fn domain_rectangle_area() {
        let mesh = build_domain_mesh(2, &[[0.0, 2.0], [0.0, 1.0]], 8).unwrap();
        let total: f64 = (0..mesh.num_elems()).map(|e| mesh.volume(e)).sum();
        assert!((total - 2.0).abs() <= 1e-12);
    }

    #[test]
    fn domain_rejects_degenerate_extents() {
        assert!(build_domain_mesh(2, &[[0.0, 0.0], [0.0, 1.0]], 4).is_err());
        assert!(build_domain_mesh(2, &[[1.0, 0.5], [0.0, 1.0]], 4).is_err());
    }

    #[test]
    fn h_max_matches_true_maximum() {
        let mesh = build_domain_mesh(2, &[[0.0, 2.0], [0.0, 1.0]], 8).unwrap();
        let mut truth = 0.0f64;
        for e in 0..mesh.num_elems() {
            let el = mesh.elem(e);
            for s in 0..el.len() {
                for t in (s + 1)..el.len() {
                    let a = mesh.node(el[s] as usize);
                    let b = mesh.node(el[t] as usize);
                    let dd: f64 = (0..2).map(|k| (a[k] - b[k]).powi(2)).sum();
                    truth = truth.max(dd.sqrt());
                }
            }
        }
        assert!((mesh.h_max() - truth).abs() <= 1e-12);
    }

    #[test]
    fn strip_membership_examples() {
        let mesh = build_domain_mesh(2, &[[0.0, 1.0], [0.0, 1.0]], 20).unwrap();
        let strip = boundary_strip_indicator(&mesh, 0.1);
        let find = |x: f64, y: f64| {
            (0..mesh.num_nodes())
                .find(|&id| {
                    let p = mesh.node(id);
                    (p[0] - x).abs() < 1e-12 && (p[1] - y).abs() < 1e-12
                })
                .unwrap()
        };
        assert!(!strip[find(0.5, 0.5)]);
        assert!(strip[find(0.05, 0.5)]);
    }

    #[test]
    fn strip_measure_scales_linearly() {
        let mesh = build_domain_mesh(2, &[[0.0, 1.0], [0.0, 1.0]], 512).unwrap();
        // |Omega_eps| = 4 eps (1 - eps) exactly for the unit square
        for eps in [1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0] {
            let measured = strip_measure(&mesh, eps);
            let exact = 4.0 * eps * (1.0 - eps);
            // inner approximation: misses at most a band of width ~h along
            // the two strip boundaries (perimeter < 8)
            assert!(measured <= exact + 1e-9, "eps={eps}: {measured} vs {exact}");
            assert!(
                measured >= exact - 12.0 * mesh.h_max(),
                "eps={eps}: {measured} vs {exact}"
            );
            assert!(measured / eps <= 4.0);
        }
    }

    #[test]
    fn refinement_halves_diameter_and_quarters_area() {
        let m1 = build_domain_mesh(2, &[[0.0, 1.0], [0.0, 1.0]], 8).unwrap();
        let m2 = build_domain_mesh(2, &[[0.0, 1.0], [0.0, 1.0]], 16).unwrap();
        assert!((m2.h_max() - 0.5 * m1.h_max()).abs() <= 1e-12);
        assert!((m2.volume(0) - 0.25 * m1.volume(0)).abs() <= 1e-12);
        let l1 = build_domain_mesh(1, &[[0.0, 1.0]], 8).unwrap();
        let l2 = build_domain_mesh(1, &[[0.0, 1.0]], 16).unwrap();
        assert!((l2.h_max() - 0.5 * l1.h_max()).abs() <= 1e-12);
    }

    #[test]
    fn periodic_interpolation_of_linear_restriction() {
        // a field equal to sin(2 pi y1) sampled at masters reproduces nodal
        // values at master and slave locations alike
        let g = build_unit_cell_grid(2, 8).unwrap();
        let vals: Vec<f64> = g
            .masters()
            .iter()
            .map(|&id| {
                let p = g.node(id as usize);
                (2.0 * std::f64::consts::PI * p[0]).sin()
            })
            .collect();
        for id in 0..g.num_nodes() {
            let p = g.node(id as usize);
            let v = g.interpolate_periodic(1, &vals, p);
            let expect = (2.0 * std::f64::consts::PI * p[0]).sin();
            assert!(
                (v[0] - expect).abs() < 1e-12,
                "node {id}: {} vs {expect}",
                v[0]
            );
        }
    }
}
