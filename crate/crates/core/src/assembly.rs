//! Global trace numbering, condensed system assembly, sparse solve and
//! recovery of all element fields.

use std::io::Write;

use faer::sparse::{SparseColMat, Triplet};
use nalgebra::DVector;

use crate::error::{HdgError, Result};
use crate::local::{assemble_local_blocks, condense, local_recover, CondensationFactors};
use crate::mesh::SimplicialMesh;
use crate::multifrontal::{MultifrontalLu, NestedDissection};
use crate::par;
use crate::problem::ProblemSpec;
use crate::reference::{make_basis, ReferenceBasis};

/// Which trace variable a global unknown belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceVar {
    State,
    Adjoint,
}

/// Global numbering of `(interior face, face dof, variable)`.
/// State traces come first, adjoint traces second.
#[derive(Debug, Clone, Copy)]
pub struct TraceNumbering {
    pub n_interior_faces: usize,
    pub n_face_dofs: usize,
}

impl TraceNumbering {
    pub fn new(mesh: &SimplicialMesh, basis: &ReferenceBasis) -> Self {
        Self {
            n_interior_faces: mesh.n_interior_faces,
            n_face_dofs: basis.n_trace_dofs(),
        }
    }

    pub fn len(&self) -> usize {
        2 * self.n_interior_faces * self.n_face_dofs
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, interior_face: usize, dof: usize, var: TraceVar) -> usize {
        let base = interior_face * self.n_face_dofs + dof;
        match var {
            TraceVar::State => base,
            TraceVar::Adjoint => self.n_interior_faces * self.n_face_dofs + base,
        }
    }

    /// Global indices of an element's local trace vector `[y_hat; z_hat]`.
    pub fn local_indices(&self, factors: &CondensationFactors) -> Vec<usize> {
        let mut out = Vec::with_capacity(2 * factors.trace_faces.len() * self.n_face_dofs);
        for var in [TraceVar::State, TraceVar::Adjoint] {
            for tf in &factors.trace_faces {
                for m in 0..self.n_face_dofs {
                    out.push(self.index(tf.interior, m, var));
                }
            }
        }
        out
    }
}

/// The condensed, nonsymmetric trace system `K x = F`.
#[derive(Debug, Clone)]
pub struct CondensedSystem {
    pub numbering: TraceNumbering,
    pub matrix: SparseColMat<usize, f64>,
    pub rhs: Vec<f64>,
    /// Elimination order of the trace unknowns.
    pub ordering: NestedDissection,
}

impl CondensedSystem {
    pub fn len(&self) -> usize {
        self.rhs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rhs.is_empty()
    }

    pub fn nnz(&self) -> usize {
        self.matrix.compute_nnz()
    }

    /// `K x`
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        let col_ptr = self.matrix.col_ptr();
        let row_idx = self.matrix.row_idx();
        let val = self.matrix.val();
        for (c, xc) in x.iter().enumerate() {
            for k in col_ptr[c]..col_ptr[c + 1] {
                out[row_idx[k]] += val[k] * xc;
            }
        }
        out
    }

    /// `||K x - F|| / max(||F||, tiny)`
    pub fn relative_residual(&self, x: &[f64]) -> f64 {
        let kx = self.apply(x);
        let r: f64 = kx
            .iter()
            .zip(&self.rhs)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let f: f64 = self.rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
        r / f.max(f64::MIN_POSITIVE)
    }

    /// Coordinate dump: header `n nnz`, then `row col value` lines (0-based),
    /// then a line `rhs` followed by one right-hand-side entry per line.
    pub fn write_coordinate(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "{} {}", self.len(), self.nnz())?;
        let col_ptr = self.matrix.col_ptr();
        let row_idx = self.matrix.row_idx();
        let val = self.matrix.val();
        for c in 0..self.len() {
            for k in col_ptr[c]..col_ptr[c + 1] {
                writeln!(out, "{} {} {:.17e}", row_idx[k], c, val[k])?;
            }
        }
        writeln!(out, "rhs")?;
        for v in &self.rhs {
            writeln!(out, "{v:.17e}")?;
        }
        Ok(())
    }
}

/// Local blocks and condensation for every element (parallel over elements).
pub fn condense_all(
    mesh: &SimplicialMesh,
    spec: &ProblemSpec,
    basis: &ReferenceBasis,
) -> Result<Vec<CondensationFactors>> {
    par::try_map_indexed(mesh.n_elements(), |e| {
        let blocks = assemble_local_blocks(mesh, spec, basis, e)?;
        condense(&blocks, spec.gamma)
    })
}

/// Scatter-add element contributions in ascending element order.
pub fn assemble(
    mesh: &SimplicialMesh,
    basis: &ReferenceBasis,
    factors: &[CondensationFactors],
) -> Result<CondensedSystem> {
    let numbering = TraceNumbering::new(mesh, basis);
    if factors.len() != mesh.n_elements() {
        return Err(HdgError::DimensionMismatch {
            expected: mesh.n_elements(),
            got: factors.len(),
        });
    }
    let n = numbering.len();
    let mut hits = vec![0u8; mesh.n_interior_faces];
    let nnz_estimate: usize = factors
        .iter()
        .map(|f| f.matrix.nrows() * f.matrix.ncols())
        .sum();
    let mut triplets = Vec::with_capacity(nnz_estimate);
    let mut rhs = vec![0.0; n];
    for (e, f) in factors.iter().enumerate() {
        if f.element != e {
            return Err(HdgError::Numbering(format!(
                "factors for element {} found at slot {e}",
                f.element
            )));
        }
        for tf in &f.trace_faces {
            if mesh.element_face(e, tf.local) != tf.face
                || mesh.interior_index(tf.face) != Some(tf.interior)
            {
                return Err(HdgError::Numbering(format!(
                    "element {e} local face {} does not match face {}",
                    tf.local, tf.face
                )));
            }
            hits[tf.interior] += 1;
        }
        let idx = numbering.local_indices(f);
        if idx.len() != f.matrix.nrows() {
            return Err(HdgError::DimensionMismatch {
                expected: f.matrix.nrows(),
                got: idx.len(),
            });
        }
        for (j, &gj) in idx.iter().enumerate() {
            for (i, &gi) in idx.iter().enumerate() {
                let v = f.matrix[(i, j)];
                if v != 0.0 {
                    triplets.push(Triplet::new(gi, gj, v));
                }
            }
        }
        for (i, &gi) in idx.iter().enumerate() {
            rhs[gi] += f.rhs[i];
        }
    }
    if let Some(face) = hits.iter().position(|&h| h != 2) {
        return Err(HdgError::Numbering(format!(
            "interior face {face} received {} element contributions",
            hits[face]
        )));
    }
    let matrix = SparseColMat::try_new_from_triplets(n, n, &triplets)
        .map_err(|e| HdgError::Numbering(format!("sparse assembly failed: {e:?}")))?;
    let ordering = trace_ordering(mesh, &numbering)?;
    Ok(CondensedSystem {
        numbering,
        matrix,
        rhs,
        ordering,
    })
}

/// Nested dissection of interior faces, each face carrying all its trace dofs.
pub fn trace_ordering(
    mesh: &SimplicialMesh,
    numbering: &TraceNumbering,
) -> Result<NestedDissection> {
    let nf = numbering.n_interior_faces;
    let mut face_ids = vec![0; nf];
    let mut adjacency = vec![Vec::new(); nf];
    for e in 0..mesh.n_elements() {
        let local: Vec<usize> = (0..=mesh.dim)
            .filter_map(|lf| {
                let f = mesh.element_face(e, lf);
                mesh.interior_index(f).map(|i| {
                    face_ids[i] = f;
                    i
                })
            })
            .collect();
        for &a in &local {
            adjacency[a].extend(local.iter().copied().filter(|&b| b != a));
        }
    }
    let coords: Vec<_> = face_ids.iter().map(|&f| mesh.face_centroid(f)).collect();
    let groups: Vec<Vec<usize>> = (0..nf)
        .map(|i| {
            (0..numbering.n_face_dofs)
                .flat_map(|m| {
                    [
                        numbering.index(i, m, TraceVar::State),
                        numbering.index(i, m, TraceVar::Adjoint),
                    ]
                })
                .collect()
        })
        .collect();
    NestedDissection::new(&groups, &coords, &adjacency)
}

/// Multifrontal sparse LU with partial pivoting inside each front. The relative residual must reach `1e-10`.
pub fn solve(system: &CondensedSystem) -> Result<Vec<f64>> {
    let n = system.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let lu = MultifrontalLu::factor(&system.matrix, system.ordering.clone())?;
    let x = lu.solve(&system.rhs)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(HdgError::SingularSystem("non-finite solution".into()));
    }
    let res = system.relative_residual(&x);
    if !(res <= 1e-10) && system.rhs.iter().any(|&v| v != 0.0) {
        return Err(HdgError::SingularSystem(format!(
            "relative residual {res:e}"
        )));
    }
    Ok(x)
}

/// Coefficients of all discrete fields. Element fields are stored element by
/// element; flux coefficients are component major inside each element.
#[derive(Debug, Clone)]
pub struct SolutionFields {
    pub dim: usize,
    pub n_scalar: usize,
    pub n_face_dofs: usize,
    pub gamma: f64,
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub u: Vec<f64>,
    pub y_hat: Vec<f64>,
    pub z_hat: Vec<f64>,
}

impl SolutionFields {
    pub fn element_scalar<'a>(&self, field: &'a [f64], e: usize) -> &'a [f64] {
        &field[e * self.n_scalar..(e + 1) * self.n_scalar]
    }

    pub fn element_flux<'a>(&self, field: &'a [f64], e: usize) -> &'a [f64] {
        let nv = self.dim * self.n_scalar;
        &field[e * nv..(e + 1) * nv]
    }

    /// Largest absolute coefficient over all fields.
    pub fn max_abs(&self) -> f64 {
        [
            &self.q,
            &self.p,
            &self.y,
            &self.z,
            &self.u,
            &self.y_hat,
            &self.z_hat,
        ]
        .iter()
        .flat_map(|v| v.iter())
        .fold(0.0, |m: f64, v| m.max(v.abs()))
    }
}

/// Local back-substitution on every element; `u = z / gamma` coefficientwise.
pub fn recover_all(
    mesh: &SimplicialMesh,
    factors: &[CondensationFactors],
    trace: &[f64],
    numbering: &TraceNumbering,
    gamma: f64,
) -> Result<SolutionFields> {
    if trace.len() != numbering.len() {
        return Err(HdgError::DimensionMismatch {
            expected: numbering.len(),
            got: trace.len(),
        });
    }
    let locals = par::try_map_indexed(factors.len(), |e| {
        let f = &factors[e];
        let idx = numbering.local_indices(f);
        let local_trace = DVector::from_iterator(idx.len(), idx.iter().map(|&i| trace[i]));
        local_recover(f, &local_trace, &f.load)
    })?;
    let ns = factors.first().map_or(0, |f| f.n_scalar);
    let nv = mesh.dim * ns;
    let n_el = factors.len();
    let mut fields = SolutionFields {
        dim: mesh.dim,
        n_scalar: ns,
        n_face_dofs: numbering.n_face_dofs,
        gamma,
        q: Vec::with_capacity(n_el * nv),
        p: Vec::with_capacity(n_el * nv),
        y: Vec::with_capacity(n_el * ns),
        z: Vec::with_capacity(n_el * ns),
        u: Vec::with_capacity(n_el * ns),
        y_hat: trace[..trace.len() / 2].to_vec(),
        z_hat: trace[trace.len() / 2..].to_vec(),
    };
    for loc in locals {
        fields.q.extend(loc.q.iter());
        fields.p.extend(loc.p.iter());
        fields.y.extend(loc.y.iter());
        fields.z.extend(loc.z.iter());
        fields.u.extend(loc.z.iter().map(|z| z / gamma));
    }
    Ok(fields)
}

/// A complete solve: fields plus diagnostics of the trace system.
#[derive(Debug, Clone)]
pub struct Solution {
    pub fields: SolutionFields,
    pub n_trace_unknowns: usize,
    pub nnz: usize,
    pub relative_residual: f64,
}

/// Condense, assemble, solve and recover for the given problem and degree.
pub fn solve_problem(
    mesh: &SimplicialMesh,
    spec: &ProblemSpec,
    basis: &ReferenceBasis,
) -> Result<Solution> {
    let factors = condense_all(mesh, spec, basis)?;
    let system = assemble(mesh, basis, &factors)?;
    let trace = solve(&system)?;
    let relative_residual = if system.is_empty() {
        0.0
    } else {
        system.relative_residual(&trace)
    };
    let fields = recover_all(mesh, &factors, &trace, &system.numbering, spec.gamma)?;
    Ok(Solution {
        fields,
        n_trace_unknowns: system.len(),
        nnz: system.nnz(),
        relative_residual,
    })
}

/// Convenience wrapper building the reference basis for degree `k`.
pub fn solve_with_degree(
    mesh: &SimplicialMesh,
    spec: &ProblemSpec,
    degree: usize,
) -> Result<Solution> {
    let basis = make_basis(mesh.dim, degree)?;
    solve_problem(mesh, spec, &basis)
}
