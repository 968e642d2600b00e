//! Multifrontal sparse LU for structurally symmetric matrices.
//!
//! Unknowns come in groups (all trace dofs of one face) with a coordinate per
//! group. Groups are ordered by geometric nested dissection; each separator or
//! leaf becomes a front whose fully summed block is factored by dense LU with
//! partial pivoting.

use faer::linalg::matmul::matmul;
use faer::linalg::solvers::PartialPivLu;
use faer::linalg::triangular_solve::{
    solve_lower_triangular_in_place, solve_unit_lower_triangular_in_place,
};
use faer::sparse::SparseColMat;
use faer::{Accum, Mat, Par};

use crate::error::{HdgError, Result};
use crate::reference::Point;

/// Largest group count kept as a single leaf.
const LEAF_GROUPS: usize = 24;
/// Most candidate cut planes tried per bisection.
const MAX_CUTS: usize = 24;

/// One node of the elimination tree; its variables are `start..end` in the
/// permuted numbering and its subtree occupies `subtree_start..end`.
#[derive(Debug, Clone)]
struct TreeNode {
    start: usize,
    end: usize,
    children: Vec<usize>,
}

struct Dissection<'a> {
    coords: &'a [Point],
    adjacency: &'a [Vec<usize>],
    /// Scratch: side of each group during a split (0 left, 1 separator, 2 right, 3 outside).
    side: Vec<u8>,
    order: Vec<usize>,
    /// Group ranges of tree nodes in `order`, children first.
    nodes: Vec<(usize, usize, Vec<usize>)>,
}

impl Dissection<'_> {
    fn leaf(&mut self, groups: &[usize], children: Vec<usize>) -> usize {
        let start = self.order.len();
        self.order.extend_from_slice(groups);
        self.nodes.push((start, self.order.len(), children));
        self.nodes.len() - 1
    }

    fn split(
        &mut self,
        groups: &[usize],
        axis: usize,
        cut: f64,
        tol: f64,
    ) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
        for &g in groups {
            let x = self.coords[g][axis];
            self.side[g] = if x < cut - tol {
                0
            } else if x > cut + tol {
                2
            } else {
                1
            };
        }
        // left groups touching the right side join the separator
        for &g in groups {
            if self.side[g] == 0 && self.adjacency[g].iter().any(|&h| self.side[h] == 2) {
                self.side[g] = 1;
            }
        }
        let (mut l, mut s, mut r) = (Vec::new(), Vec::new(), Vec::new());
        for &g in groups {
            match self.side[g] {
                0 => l.push(g),
                1 => s.push(g),
                _ => r.push(g),
            }
        }
        for &g in groups {
            self.side[g] = 3;
        }
        (l, s, r)
    }

    fn dissect(&mut self, groups: &[usize]) -> usize {
        if groups.len() <= LEAF_GROUPS {
            return self.leaf(groups, Vec::new());
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &g in groups {
            for c in 0..3 {
                lo[c] = lo[c].min(self.coords[g][c]);
                hi[c] = hi[c].max(self.coords[g][c]);
            }
        }
        let extent: Vec<f64> = (0..3).map(|c| hi[c] - lo[c]).collect();
        let tol = 1e-9 * extent.iter().cloned().fold(0.0, f64::max).max(1e-300);
        let mut axes: Vec<usize> = (0..3).filter(|&c| extent[c] > tol).collect();
        axes.sort_by(|&a, &b| extent[b].total_cmp(&extent[a]));

        let mut best: Option<(f64, Vec<usize>, Vec<usize>, Vec<usize>)> = None;
        for &axis in axes.iter().take(1) {
            let mut xs: Vec<f64> = groups.iter().map(|&g| self.coords[g][axis]).collect();
            xs.sort_by(f64::total_cmp);
            let (a, b) = (xs[xs.len() * 3 / 10], xs[xs.len() * 7 / 10]);
            let mut cuts: Vec<f64> = Vec::new();
            for &x in &xs {
                if x >= a && x <= b && cuts.last().is_none_or(|&p| x - p > tol) {
                    cuts.push(x);
                }
            }
            let step = cuts.len().div_ceil(MAX_CUTS).max(1);
            for &cut in cuts.iter().step_by(step) {
                let (l, s, r) = self.split(groups, axis, cut, tol);
                if l.is_empty() || r.is_empty() {
                    continue;
                }
                let score = s.len() as f64 / l.len().min(r.len()) as f64;
                if best.as_ref().is_none_or(|b| score < b.0) {
                    best = Some((score, l, s, r));
                }
            }
        }
        match best {
            Some((_, l, s, r)) => {
                let left = self.dissect(&l);
                let right = self.dissect(&r);
                self.leaf(&s, vec![left, right])
            }
            None => self.leaf(groups, Vec::new()),
        }
    }
}

/// Elimination order of the unknowns and the matching elimination tree.
#[derive(Debug, Clone)]
pub struct NestedDissection {
    /// `perm[new] = old`
    pub perm: Vec<usize>,
    pub inv: Vec<usize>,
    tree: Vec<TreeNode>,
}

impl NestedDissection {
    /// `groups[g]` lists the unknowns of group `g`; `coords[g]` is its
    /// position; `adjacency[g]` its neighbouring groups.
    pub fn new(groups: &[Vec<usize>], coords: &[Point], adjacency: &[Vec<usize>]) -> Result<Self> {
        if groups.len() != coords.len() || groups.len() != adjacency.len() {
            return Err(HdgError::DimensionMismatch {
                expected: groups.len(),
                got: coords.len().min(adjacency.len()),
            });
        }
        let n: usize = groups.iter().map(Vec::len).sum();
        let mut d = Dissection {
            coords,
            adjacency,
            side: vec![3; groups.len()],
            order: Vec::with_capacity(groups.len()),
            nodes: Vec::new(),
        };
        let all: Vec<usize> = (0..groups.len()).collect();
        if !all.is_empty() {
            d.dissect(&all);
        }
        let mut perm = Vec::with_capacity(n);
        let mut group_start = vec![0; d.order.len() + 1];
        for (pos, &g) in d.order.iter().enumerate() {
            perm.extend_from_slice(&groups[g]);
            group_start[pos + 1] = perm.len();
        }
        let mut inv = vec![usize::MAX; n];
        for (new, &old) in perm.iter().enumerate() {
            if old >= n || inv[old] != usize::MAX {
                return Err(HdgError::Numbering(
                    "groups do not partition the unknowns".into(),
                ));
            }
            inv[old] = new;
        }
        let tree = d
            .nodes
            .into_iter()
            .map(|(a, b, children)| TreeNode {
                start: group_start[a],
                end: group_start[b],
                children,
            })
            .collect();
        Ok(Self { perm, inv, tree })
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    /// Number of fronts in the elimination tree.
    pub fn n_fronts(&self) -> usize {
        self.tree.len()
    }
}

struct Front {
    start: usize,
    end: usize,
    boundary: Vec<usize>,
    lu: PartialPivLu<f64>,
    /// `L11^{-1} P F12`
    u12: Mat<f64>,
    /// `(F21 U11^{-1})^T`
    l21t: Mat<f64>,
}

/// LU factors of a permuted sparse matrix, one dense front per tree node.
pub struct MultifrontalLu {
    ordering: NestedDissection,
    fronts: Vec<Front>,
}

/// Permuted compressed columns and rows of `a` (values included).
struct Permuted {
    col_ptr: Vec<usize>,
    col_rows: Vec<usize>,
    col_vals: Vec<f64>,
    row_ptr: Vec<usize>,
    row_cols: Vec<usize>,
    row_vals: Vec<f64>,
}

fn permute(a: &SparseColMat<usize, f64>, inv: &[usize]) -> Permuted {
    let n = a.nrows();
    let sym = a.symbolic();
    let col_ptr_in = sym.col_ptr();
    let row_idx_in = sym.row_idx();
    let vals = a.val();
    let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(vals.len());
    for j in 0..n {
        for p in col_ptr_in[j]..col_ptr_in[j + 1] {
            entries.push((inv[row_idx_in[p]], inv[j], vals[p]));
        }
    }
    let build = |major: &dyn Fn(&(usize, usize, f64)) -> (usize, usize)| {
        let mut ptr = vec![0usize; n + 1];
        for e in &entries {
            ptr[major(e).0 + 1] += 1;
        }
        for i in 0..n {
            ptr[i + 1] += ptr[i];
        }
        let mut next = ptr.clone();
        let mut idx = vec![0usize; entries.len()];
        let mut val = vec![0.0; entries.len()];
        for e in &entries {
            let (m, o) = major(e);
            idx[next[m]] = o;
            val[next[m]] = e.2;
            next[m] += 1;
        }
        (ptr, idx, val)
    };
    let (col_ptr, col_rows, col_vals) = build(&|e| (e.1, e.0));
    let (row_ptr, row_cols, row_vals) = build(&|e| (e.0, e.1));
    Permuted {
        col_ptr,
        col_rows,
        col_vals,
        row_ptr,
        row_cols,
        row_vals,
    }
}

impl MultifrontalLu {
    /// Factor `a`, whose nonzero pattern must be symmetric, in the given order.
    pub fn factor(a: &SparseColMat<usize, f64>, ordering: NestedDissection) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || ordering.len() != n {
            return Err(HdgError::DimensionMismatch {
                expected: n,
                got: ordering.len(),
            });
        }
        let pm = permute(a, &ordering.inv);
        let mut position = vec![usize::MAX; n];
        let mut fronts: Vec<Front> = Vec::with_capacity(ordering.tree.len());
        // update matrices waiting for their parent, indexed by tree node
        let mut pending: Vec<Option<(Vec<usize>, Mat<f64>)>> =
            (0..ordering.tree.len()).map(|_| None).collect();

        for (id, node) in ordering.tree.iter().enumerate() {
            let (start, end) = (node.start, node.end);
            let o = end - start;
            // boundary: later unknowns coupled to this node or its children's boundaries
            let mut boundary: Vec<usize> = Vec::new();
            for v in start..end {
                for p in pm.col_ptr[v]..pm.col_ptr[v + 1] {
                    if pm.col_rows[p] >= end {
                        boundary.push(pm.col_rows[p]);
                    }
                }
                for p in pm.row_ptr[v]..pm.row_ptr[v + 1] {
                    if pm.row_cols[p] >= end {
                        boundary.push(pm.row_cols[p]);
                    }
                }
            }
            let children: Vec<(Vec<usize>, Mat<f64>)> = node
                .children
                .iter()
                .map(|&c| {
                    pending[c].take().ok_or_else(|| {
                        HdgError::Numbering("elimination tree is not postordered".into())
                    })
                })
                .collect::<Result<_>>()?;
            for (b, _) in &children {
                boundary.extend(b.iter().copied().filter(|&i| i >= end));
            }
            boundary.sort_unstable();
            boundary.dedup();
            let f = o + boundary.len();
            for v in start..end {
                position[v] = v - start;
            }
            for (k, &b) in boundary.iter().enumerate() {
                position[b] = o + k;
            }

            let mut front = Mat::<f64>::zeros(f, f);
            for v in start..end {
                let lv = v - start;
                for p in pm.col_ptr[v]..pm.col_ptr[v + 1] {
                    let i = pm.col_rows[p];
                    if i >= start {
                        front[(position[i], lv)] += pm.col_vals[p];
                    }
                }
                for p in pm.row_ptr[v]..pm.row_ptr[v + 1] {
                    let j = pm.row_cols[p];
                    if j >= end {
                        front[(lv, position[j])] += pm.row_vals[p];
                    }
                }
            }
            for (b, upd) in &children {
                let loc: Vec<usize> = b.iter().map(|&i| position[i]).collect();
                for (cj, &fj) in loc.iter().enumerate() {
                    for (ci, &fi) in loc.iter().enumerate() {
                        front[(fi, fj)] += upd[(ci, cj)];
                    }
                }
            }
            drop(children);

            let f11 = front.as_ref().submatrix(0, 0, o, o);
            let scale = (0..o)
                .flat_map(|j| (0..o).map(move |i| (i, j)))
                .fold(0.0f64, |m, (i, j)| m.max(f11[(i, j)].abs()));
            let lu = PartialPivLu::new(f11);
            let u = lu.U();
            for i in 0..o {
                let d = u[(i, i)];
                if !d.is_finite() || d.abs() <= 1e-14 * scale {
                    return Err(HdgError::SingularSystem(format!(
                        "zero pivot in front {id} (pivot {d:.3e}, scale {scale:.3e})"
                    )));
                }
            }
            let nb = boundary.len();
            let mut u12 = Mat::<f64>::zeros(o, nb);
            let mut l21t = Mat::<f64>::zeros(o, nb);
            if nb > 0 {
                let fwd = lu.P().arrays().0;
                for j in 0..nb {
                    for i in 0..o {
                        u12[(i, j)] = front[(fwd[i], o + j)];
                        l21t[(i, j)] = front[(o + j, i)];
                    }
                }
                solve_unit_lower_triangular_in_place(lu.L(), u12.as_mut(), Par::Seq);
                solve_lower_triangular_in_place(lu.U().transpose(), l21t.as_mut(), Par::Seq);
                let mut update = front.as_ref().submatrix(o, o, nb, nb).to_owned();
                matmul(
                    update.as_mut(),
                    Accum::Add,
                    l21t.as_ref().transpose(),
                    u12.as_ref(),
                    -1.0,
                    Par::Seq,
                );
                pending[id] = Some((boundary.clone(), update));
            }
            for v in start..end {
                position[v] = usize::MAX;
            }
            for &b in &boundary {
                position[b] = usize::MAX;
            }
            fronts.push(Front {
                start,
                end,
                boundary,
                lu,
                u12,
                l21t,
            });
        }
        Ok(Self { ordering, fronts })
    }

    /// Solve `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.ordering.len();
        if b.len() != n {
            return Err(HdgError::DimensionMismatch {
                expected: n,
                got: b.len(),
            });
        }
        let mut x: Vec<f64> = self.ordering.perm.iter().map(|&old| b[old]).collect();
        for fr in &self.fronts {
            let o = fr.end - fr.start;
            let fwd = fr.lu.P().arrays().0;
            let mut y = Mat::<f64>::zeros(o, 1);
            for i in 0..o {
                y[(i, 0)] = x[fr.start + fwd[i]];
            }
            solve_unit_lower_triangular_in_place(fr.lu.L(), y.as_mut(), Par::Seq);
            for i in 0..o {
                x[fr.start + i] = y[(i, 0)];
            }
            for (k, &bi) in fr.boundary.iter().enumerate() {
                let mut s = 0.0;
                for i in 0..o {
                    s += fr.l21t[(i, k)] * y[(i, 0)];
                }
                x[bi] -= s;
            }
        }
        for fr in self.fronts.iter().rev() {
            let o = fr.end - fr.start;
            let mut y = Mat::<f64>::zeros(o, 1);
            for i in 0..o {
                let mut s = x[fr.start + i];
                for (k, &bi) in fr.boundary.iter().enumerate() {
                    s -= fr.u12[(i, k)] * x[bi];
                }
                y[(i, 0)] = s;
            }
            faer::linalg::triangular_solve::solve_upper_triangular_in_place(
                fr.lu.U(),
                y.as_mut(),
                Par::Seq,
            );
            for i in 0..o {
                x[fr.start + i] = y[(i, 0)];
            }
        }
        let mut out = vec![0.0; n];
        for (new, &old) in self.ordering.perm.iter().enumerate() {
            out[old] = x[new];
        }
        Ok(out)
    }

    /// Stored factor entries (both triangles and off-diagonal blocks).
    pub fn factor_entries(&self) -> usize {
        self.fronts
            .iter()
            .map(|f| {
                let o = f.end - f.start;
                2 * o * o + 2 * o * f.boundary.len()
            })
            .sum()
    }

    pub fn n_fronts(&self) -> usize {
        self.fronts.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use faer::sparse::Triplet;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    /// Five-point Laplacian plus a random nonsymmetric perturbation on an
    /// `m x m` grid, one unknown per group.
    fn grid_problem(
        m: usize,
        seed: u64,
    ) -> (
        SparseColMat<usize, f64>,
        Vec<Vec<usize>>,
        Vec<Point>,
        Vec<Vec<usize>>,
    ) {
        let mut rng = StdRng::seed_from_u64(seed);
        let id = |i: usize, j: usize| i + m * j;
        let mut trip = Vec::new();
        let mut adjacency = vec![Vec::new(); m * m];
        let mut coords = Vec::new();
        for j in 0..m {
            for i in 0..m {
                coords.push([i as f64, j as f64, 0.0]);
                let v = id(i, j);
                trip.push(Triplet::new(v, v, 4.0 + rng.random_range(0.0..0.5)));
                let mut nb = Vec::new();
                if i > 0 {
                    nb.push(id(i - 1, j));
                }
                if i + 1 < m {
                    nb.push(id(i + 1, j));
                }
                if j > 0 {
                    nb.push(id(i, j - 1));
                }
                if j + 1 < m {
                    nb.push(id(i, j + 1));
                }
                for w in nb {
                    trip.push(Triplet::new(v, w, -1.0 + rng.random_range(-0.3..0.3)));
                    adjacency[v].push(w);
                }
            }
        }
        let a = SparseColMat::try_new_from_triplets(m * m, m * m, &trip).unwrap();
        let groups = (0..m * m).map(|v| vec![v]).collect();
        (a, groups, coords, adjacency)
    }

    fn residual(a: &SparseColMat<usize, f64>, x: &[f64], b: &[f64]) -> f64 {
        let sym = a.symbolic();
        let mut r = b.to_vec();
        for j in 0..a.ncols() {
            for p in sym.col_ptr()[j]..sym.col_ptr()[j + 1] {
                r[sym.row_idx()[p]] -= a.val()[p] * x[j];
            }
        }
        r.iter().map(|v| v * v).sum::<f64>().sqrt() / b.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    #[test]
    fn ordering_is_a_permutation_with_separators() {
        let (_, groups, coords, adjacency) = grid_problem(20, 1);
        let nd = NestedDissection::new(&groups, &coords, &adjacency).unwrap();
        let mut seen = nd.perm.clone();
        seen.sort_unstable();
        assert_eq!(seen, (0..400).collect::<Vec<_>>());
        assert!(nd.n_fronts() > 1);
        // the last front is a separator splitting the grid
        let root = nd.tree.last().unwrap();
        assert_eq!(root.end, 400);
        assert!(root.end - root.start <= 40);
    }

    #[test]
    fn solves_grid_systems() {
        for (m, seed) in [(1, 3), (5, 4), (30, 5)] {
            let (a, groups, coords, adjacency) = grid_problem(m, seed);
            let nd = NestedDissection::new(&groups, &coords, &adjacency).unwrap();
            let lu = MultifrontalLu::factor(&a, nd).unwrap();
            let mut rng = StdRng::seed_from_u64(seed);
            let b: Vec<f64> = (0..m * m).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x = lu.solve(&b).unwrap();
            assert!(residual(&a, &x, &b) < 1e-13, "m={m}");
        }
    }

    #[test]
    fn pivots_inside_fronts() {
        // zero diagonal that needs row exchanges within the leaf
        let trip = vec![
            Triplet::new(0, 1, 1.0),
            Triplet::new(1, 0, 2.0),
            Triplet::new(1, 1, 0.0),
            Triplet::new(0, 0, 0.0),
        ];
        let a = SparseColMat::try_new_from_triplets(2, 2, &trip).unwrap();
        let nd = NestedDissection::new(&[vec![0, 1]], &[[0.0; 3]], &[vec![]]).unwrap();
        let lu = MultifrontalLu::factor(&a, nd).unwrap();
        let x = lu.solve(&[3.0, 4.0]).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-15 && (x[1] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn singular_matrix_is_reported() {
        let trip = vec![Triplet::new(0, 0, 1.0), Triplet::new(1, 1, 0.0)];
        let a = SparseColMat::try_new_from_triplets(2, 2, &trip).unwrap();
        let nd = NestedDissection::new(
            &[vec![0], vec![1]],
            &[[0.0; 3], [1.0, 0.0, 0.0]],
            &[vec![], vec![]],
        )
        .unwrap();
        assert!(matches!(
            MultifrontalLu::factor(&a, nd),
            Err(HdgError::SingularSystem(_))
        ));
    }

    #[test]
    fn bad_groups_are_rejected() {
        assert!(
            NestedDissection::new(&[vec![0], vec![0]], &[[0.0; 3]; 2], &[vec![], vec![]]).is_err()
        );
        assert!(NestedDissection::new(&[vec![0]], &[], &[vec![]]).is_err());
    }
}
