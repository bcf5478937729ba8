/// Fill-reducing ordering for the direct factorization.
#[derive(Debug, Clone)]
pub enum Ordering {
    /// Keep the given numbering.
    Natural,
    /// Nested dissection on an `nx` x `ny` grid of nodes with `ncomp`
    /// consecutive unknowns per node (node-major, component-minor layout).
    Grid { nx: usize, ny: usize, ncomp: usize },
}

impl Ordering {
    /// Permutation as `perm[new] = old`, or `None` for the natural order.
    pub fn permutation(&self, n: usize) -> Option<Vec<u32>> {
        match *self {
            Ordering::Natural => None,
            Ordering::Grid { nx, ny, ncomp } => {
                assert_eq!(nx * ny * ncomp, n, "grid ordering shape mismatch");
                let mut node_perm = Vec::with_capacity(nx * ny);
                dissect(0, nx, 0, ny, nx, &mut node_perm);
                let mut perm = Vec::with_capacity(n);
                for node in node_perm {
                    for c in 0..ncomp {
                        perm.push(node * ncomp as u32 + c as u32);
                    }
                }
                Some(perm)
            }
        }
    }
}

/// Recursive bisection: both halves first, the separator line last.
fn dissect(x0: usize, x1: usize, y0: usize, y1: usize, nx: usize, out: &mut Vec<u32>) {
    let sx = x1 - x0;
    let sy = y1 - y0;
    if sx == 0 || sy == 0 {
        return;
    }
    if sx <= 2 && sy <= 2 {
        for j in y0..y1 {
            for i in x0..x1 {
                out.push((j * nx + i) as u32);
            }
        }
        return;
    }
    if sx >= sy {
        let mid = x0 + sx / 2;
        dissect(x0, mid, y0, y1, nx, out);
        dissect(mid + 1, x1, y0, y1, nx, out);
        for j in y0..y1 {
            out.push((j * nx + mid) as u32);
        }
    } else {
        let mid = y0 + sy / 2;
        dissect(x0, x1, y0, mid, nx, out);
        dissect(x0, x1, mid + 1, y1, nx, out);
        for i in x0..x1 {
            out.push((mid * nx + i) as u32);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_permutation_is_a_bijection() {
        for (nx, ny, nc) in [(7, 5, 1), (8, 8, 2), (13, 1, 1), (1, 9, 3)] {
            let n = nx * ny * nc;
            let perm = Ordering::Grid { nx, ny, ncomp: nc }.permutation(n).unwrap();
            assert_eq!(perm.len(), n);
            let mut seen = vec![false; n];
            for &p in &perm {
                assert!(!seen[p as usize]);
                seen[p as usize] = true;
            }
        }
    }

    #[test]
    fn natural_is_none() {
        assert!(Ordering::Natural.permutation(10).is_none());
    }
}
