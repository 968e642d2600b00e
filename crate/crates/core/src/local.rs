//! Element-local HDG blocks and static condensation onto interior-face traces.
//!
//! Local unknowns are ordered `[q, p]` (fluxes, `d * n_s` each, component
//! major), `[y, z]` (`n_s` each) and traces `[y_hat, z_hat]` on the
//! element's interior faces (`n_t = n_interior_local_faces * n_f` each).
//! The local system reads
//!
//! ```text
//! | B1    B2  B3 | | alpha |   | b_alpha |
//! | -B2^T B4  B5 | | beta  | = | b_beta  |
//! | B6    B7  B8 | | trace |   | 0       |
//! ```
//!
//! with `alpha = [q; p]`, `beta = [y; z]`, `b_alpha = [-b_g; 0]` and
//! `b_beta = [b_f - b_gy; b_yd]`.

use nalgebra::{DMatrix, DVector};

use crate::error::{HdgError, Result};
use crate::mesh::SimplicialMesh;
use crate::problem::ProblemSpec;
use crate::reference::ReferenceBasis;

/// An interior face seen from one element.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocalTraceFace {
    pub local: usize,
    pub face: usize,
    /// Position of the face among interior faces of the mesh.
    pub interior: usize,
}

/// Dense element matrices of the HDG system.
#[derive(Debug, Clone)]
pub struct LocalBlocks {
    pub element: usize,
    pub n_scalar: usize,
    pub n_flux: usize,
    pub n_face_dofs: usize,
    pub trace_faces: Vec<LocalTraceFace>,
    /// `(r_j, r_i)`, block diagonal over components.
    pub flux_mass: DMatrix<f64>,
    /// `(w_j, div r_i)`, flux rows, scalar columns.
    pub divergence: DMatrix<f64>,
    /// `(w_j, w_i)`
    pub mass: DMatrix<f64>,
    /// `(beta w_j, grad w_i)`
    pub convection: DMatrix<f64>,
    /// `<tau1 w_j, w_i>` over the whole element boundary.
    pub stabilization: DMatrix<f64>,
    /// `<beta.n w_j, w_i>` over the whole element boundary.
    pub boundary_flux: DMatrix<f64>,
    /// State operator `stabilization - convection`.
    pub state_operator: DMatrix<f64>,
    /// Adjoint operator `convection + stabilization - boundary_flux`.
    pub adjoint_operator: DMatrix<f64>,
    /// `<mu_j, r_i.n>` on interior faces.
    pub flux_trace: DMatrix<f64>,
    /// `<(beta.n - tau1) mu_j, w_i>`
    pub state_trace: DMatrix<f64>,
    /// `-<(tau2 + beta.n) mu_j, w_i>`
    pub adjoint_trace: DMatrix<f64>,
    /// `<tau1 w_j, mu_i>`
    pub trace_state: DMatrix<f64>,
    /// `<tau2 w_j, mu_i>`
    pub trace_adjoint: DMatrix<f64>,
    /// `<(beta.n - tau1) mu_j, mu_i>`
    pub trace_trace_state: DMatrix<f64>,
    /// `-<(beta.n + tau2) mu_j, mu_i>`
    pub trace_trace_adjoint: DMatrix<f64>,
    /// `<g, r_i.n>` on boundary faces.
    pub load_boundary_flux: DVector<f64>,
    /// `<(beta.n - tau1) g, w_i>` on boundary faces.
    pub load_boundary_state: DVector<f64>,
    /// `(f, w_i)`
    pub load_source: DVector<f64>,
    /// `(y_d, w_i)`
    pub load_target: DVector<f64>,
}

impl LocalBlocks {
    pub fn n_trace(&self) -> usize {
        self.trace_faces.len() * self.n_face_dofs
    }

    /// Local right-hand side `[b_alpha; b_beta]`.
    pub fn load_vector(&self) -> DVector<f64> {
        let (nv, ns) = (self.n_flux, self.n_scalar);
        let mut b = DVector::zeros(2 * nv + 2 * ns);
        for i in 0..nv {
            b[i] = -self.load_boundary_flux[i];
        }
        for i in 0..ns {
            b[2 * nv + i] = self.load_source[i] - self.load_boundary_state[i];
            b[2 * nv + ns + i] = self.load_target[i];
        }
        b
    }

    /// The complete local matrix over `[alpha, beta, trace]`, used as a dense
    /// reference for the condensed path.
    pub fn full_matrix(&self, gamma: f64) -> DMatrix<f64> {
        let (nv, ns, nt) = (self.n_flux, self.n_scalar, self.n_trace());
        let n = 2 * nv + 2 * ns + 2 * nt;
        let (oq, op, oy, oz, oyh, ozh) = (
            0,
            nv,
            2 * nv,
            2 * nv + ns,
            2 * nv + 2 * ns,
            2 * nv + 2 * ns + nt,
        );
        let mut m = DMatrix::zeros(n, n);
        let mut put = |r: usize, c: usize, b: &DMatrix<f64>, s: f64| {
            for i in 0..b.nrows() {
                for j in 0..b.ncols() {
                    m[(r + i, c + j)] += s * b[(i, j)];
                }
            }
        };
        let dt = self.divergence.transpose();
        let ft = self.flux_trace.transpose();
        put(oq, oq, &self.flux_mass, 1.0);
        put(oq, oy, &self.divergence, -1.0);
        put(oq, oyh, &self.flux_trace, 1.0);
        put(op, op, &self.flux_mass, 1.0);
        put(op, oz, &self.divergence, -1.0);
        put(op, ozh, &self.flux_trace, 1.0);
        put(oy, oq, &dt, 1.0);
        put(oy, oy, &self.state_operator, 1.0);
        put(oy, oz, &self.mass, -1.0 / gamma);
        put(oy, oyh, &self.state_trace, 1.0);
        put(oz, op, &dt, 1.0);
        put(oz, oy, &self.mass, 1.0);
        put(oz, oz, &self.adjoint_operator, 1.0);
        put(oz, ozh, &self.adjoint_trace, 1.0);
        put(oyh, oq, &ft, 1.0);
        put(oyh, oy, &self.trace_state, 1.0);
        put(oyh, oyh, &self.trace_trace_state, 1.0);
        put(ozh, op, &ft, 1.0);
        put(ozh, oz, &self.trace_adjoint, 1.0);
        put(ozh, ozh, &self.trace_trace_adjoint, 1.0);
        m
    }
}

/// Values and physical gradients of the scalar basis at the element's
/// volume quadrature points, plus physical points and weights.
pub(crate) struct ElementQuadrature {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub grads: Vec<Vec<[f64; 3]>>,
}

pub(crate) fn element_quadrature(
    mesh: &SimplicialMesh,
    basis: &ReferenceBasis,
    e: usize,
) -> ElementQuadrature {
    let map = mesh.map(e);
    let jac = map.det.abs();
    ElementQuadrature {
        points: basis
            .volume_rule
            .points
            .iter()
            .map(|xi| map.to_physical(xi))
            .collect(),
        weights: basis.volume_rule.weights.iter().map(|w| w * jac).collect(),
        values: basis.volume_values.clone(),
        grads: basis
            .volume_grads
            .iter()
            .map(|gs| gs.iter().map(|g| map.push_gradient(g)).collect())
            .collect(),
    }
}

/// Interior faces of element `e`, in ascending local-face order.
pub fn trace_faces(mesh: &SimplicialMesh, e: usize) -> Vec<LocalTraceFace> {
    (0..=mesh.dim)
        .filter_map(|local| {
            let face = mesh.element_face(e, local);
            mesh.interior_index(face).map(|interior| LocalTraceFace {
                local,
                face,
                interior,
            })
        })
        .collect()
}

pub fn assemble_local_blocks(
    mesh: &SimplicialMesh,
    spec: &ProblemSpec,
    basis: &ReferenceBasis,
    element: usize,
) -> Result<LocalBlocks> {
    if element >= mesh.n_elements() {
        return Err(HdgError::IndexOutOfRange {
            what: "element",
            index: element,
            len: mesh.n_elements(),
        });
    }
    if mesh.map(element).det.abs() < 1e-14 * mesh.h.powi(mesh.dim as i32) {
        return Err(HdgError::DegenerateElement(element));
    }
    let dim = mesh.dim;
    let ns = basis.n_dofs();
    let nv = dim * ns;
    let nf = basis.n_trace_dofs();
    let faces = trace_faces(mesh, element);
    let nt = faces.len() * nf;
    let tau1 = spec.tau1;
    let tau = spec.tau();

    let mut mass = DMatrix::zeros(ns, ns);
    let mut divergence = DMatrix::zeros(nv, ns);
    let mut convection = DMatrix::zeros(ns, ns);
    let mut load_source = DVector::zeros(ns);
    let mut load_target = DVector::zeros(ns);

    let eq = element_quadrature(mesh, basis, element);
    for q in 0..eq.weights.len() {
        let w = eq.weights[q];
        let x = &eq.points[q];
        let phi = &eq.values[q];
        let grad = &eq.grads[q];
        let b = (spec.beta)(x);
        let fv = (spec.f)(x);
        let ydv = (spec.y_d)(x);
        for i in 0..ns {
            let bgrad = b[0] * grad[i][0] + b[1] * grad[i][1] + b[2] * grad[i][2];
            load_source[i] += w * fv * phi[i];
            load_target[i] += w * ydv * phi[i];
            for j in 0..ns {
                mass[(i, j)] += w * phi[i] * phi[j];
                convection[(i, j)] += w * phi[j] * bgrad;
                for c in 0..dim {
                    divergence[(c * ns + i, j)] += w * phi[j] * grad[i][c];
                }
            }
        }
    }
    let mut flux_mass = DMatrix::zeros(nv, nv);
    for c in 0..dim {
        flux_mass
            .view_mut((c * ns, c * ns), (ns, ns))
            .copy_from(&mass);
    }

    let mut stabilization = DMatrix::zeros(ns, ns);
    let mut boundary_flux = DMatrix::zeros(ns, ns);
    let mut flux_trace = DMatrix::zeros(nv, nt);
    let mut state_trace = DMatrix::zeros(ns, nt);
    let mut adjoint_trace = DMatrix::zeros(ns, nt);
    let mut trace_state = DMatrix::zeros(nt, ns);
    let mut trace_adjoint = DMatrix::zeros(nt, ns);
    let mut trace_trace_state = DMatrix::zeros(nt, nt);
    let mut trace_trace_adjoint = DMatrix::zeros(nt, nt);
    let mut load_boundary_flux = DVector::zeros(nv);
    let mut load_boundary_state = DVector::zeros(ns);

    let mut phi = vec![0.0; ns];
    for local in 0..=dim {
        let fq = mesh.face_quad_points(element, local, &basis.face_rule)?;
        let n = fq.normal;
        let slot = faces.iter().position(|f| f.local == local);
        for q in 0..fq.weights.len() {
            let w = fq.weights[q];
            let x = &fq.points[q];
            basis.space.eval_into(&fq.reference_points[q], &mut phi);
            let bn = spec.beta_dot(x, &n);
            let tau2 = tau.tau2(x, &n);
            for i in 0..ns {
                for j in 0..ns {
                    let pp = w * phi[i] * phi[j];
                    stabilization[(i, j)] += tau1 * pp;
                    boundary_flux[(i, j)] += bn * pp;
                }
            }
            match slot {
                Some(s) => {
                    let psi = &basis.trace_values[q];
                    let off = s * nf;
                    for m in 0..nf {
                        let col = off + m;
                        for i in 0..ns {
                            let pm = w * psi[m] * phi[i];
                            for c in 0..dim {
                                flux_trace[(c * ns + i, col)] += pm * n[c];
                            }
                            state_trace[(i, col)] += (bn - tau1) * pm;
                            adjoint_trace[(i, col)] -= (tau2 + bn) * pm;
                            trace_state[(col, i)] += tau1 * pm;
                            trace_adjoint[(col, i)] += tau2 * pm;
                        }
                        for l in 0..nf {
                            let ml = w * psi[m] * psi[l];
                            trace_trace_state[(col, off + l)] += (bn - tau1) * ml;
                            trace_trace_adjoint[(col, off + l)] -= (bn + tau2) * ml;
                        }
                    }
                }
                None => {
                    let g = (spec.g)(x);
                    for i in 0..ns {
                        let gp = w * g * phi[i];
                        for c in 0..dim {
                            load_boundary_flux[c * ns + i] += gp * n[c];
                        }
                        load_boundary_state[i] += (bn - tau1) * gp;
                    }
                }
            }
        }
    }

    let state_operator = &stabilization - &convection;
    let adjoint_operator = &convection + &stabilization - &boundary_flux;
    Ok(LocalBlocks {
        element,
        n_scalar: ns,
        n_flux: nv,
        n_face_dofs: nf,
        trace_faces: faces,
        flux_mass,
        divergence,
        mass,
        convection,
        stabilization,
        boundary_flux,
        state_operator,
        adjoint_operator,
        flux_trace,
        state_trace,
        adjoint_trace,
        trace_state,
        trace_adjoint,
        trace_trace_state,
        trace_trace_adjoint,
        load_boundary_flux,
        load_boundary_state,
        load_source,
        load_target,
    })
}

/// Local solution operator: `[alpha; beta] = [G1 H1; G2 H2] [trace; b]`,
/// plus the element's contribution to the condensed trace system.
#[derive(Debug, Clone)]
pub struct CondensationFactors {
    pub element: usize,
    pub n_scalar: usize,
    pub n_flux: usize,
    pub n_face_dofs: usize,
    pub trace_faces: Vec<LocalTraceFace>,
    pub g1: DMatrix<f64>,
    pub g2: DMatrix<f64>,
    pub h1: DMatrix<f64>,
    pub h2: DMatrix<f64>,
    /// Local load `b` the right-hand side was built from.
    pub load: DVector<f64>,
    /// `B6 G1 + B7 G2 + B8`
    pub matrix: DMatrix<f64>,
    /// `-(B6 H1 + B7 H2) b`
    pub rhs: DVector<f64>,
}

/// Coefficients of the element-local fields.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalFields {
    pub q: DVector<f64>,
    pub p: DVector<f64>,
    pub y: DVector<f64>,
    pub z: DVector<f64>,
}

fn lu_solve(
    lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    rhs: &DMatrix<f64>,
) -> Option<DMatrix<f64>> {
    lu.solve(rhs)
}

/// `x^T A x > 0` for all `x != 0`, tested through a Cholesky factorization of
/// the symmetric part.
pub fn is_positive_definite(a: &DMatrix<f64>) -> bool {
    let sym = (a + a.transpose()) * 0.5;
    sym.cholesky().is_some()
}

/// Solver for `S = [[C1, -A/gamma], [A, C2]]` using the 2x2 block inverse
/// with `D = C2 + A C1^{-1} A / gamma`.
struct BlockInverse {
    c1: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    d: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    mass: DMatrix<f64>,
    inv_gamma: f64,
    n: usize,
}

impl BlockInverse {
    fn new(
        element: usize,
        c1: DMatrix<f64>,
        c2: DMatrix<f64>,
        mass: &DMatrix<f64>,
        gamma: f64,
    ) -> Result<Self> {
        if !is_positive_definite(&c1) {
            return Err(HdgError::LossOfPositivity {
                element,
                block: "C1",
            });
        }
        let n = c1.nrows();
        let c1 = c1.lu();
        let c1_inv_mass = lu_solve(&c1, mass).ok_or(HdgError::LossOfPositivity {
            element,
            block: "C1",
        })?;
        let d = c2 + (mass * c1_inv_mass) / gamma;
        if !is_positive_definite(&d) {
            return Err(HdgError::LossOfPositivity {
                element,
                block: "D",
            });
        }
        Ok(Self {
            c1,
            d: d.lu(),
            mass: mass.clone(),
            inv_gamma: 1.0 / gamma,
            n,
        })
    }

    /// Solve `S x = r` for a stacked right-hand side `r = [r_y; r_z]`.
    fn solve(&self, element: usize, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n = self.n;
        let fail = || HdgError::LossOfPositivity {
            element,
            block: "D",
        };
        let ry = r.rows(0, n).into_owned();
        let rz = r.rows(n, n).into_owned();
        let t = lu_solve(&self.c1, &ry).ok_or_else(fail)?;
        let xz = lu_solve(&self.d, &(rz - &self.mass * &t)).ok_or_else(fail)?;
        let xy = t + lu_solve(&self.c1, &(&self.mass * &xz)).ok_or_else(fail)? * self.inv_gamma;
        let mut x = DMatrix::zeros(2 * n, r.ncols());
        x.rows_mut(0, n).copy_from(&xy);
        x.rows_mut(n, n).copy_from(&xz);
        Ok(x)
    }
}

fn block_diag2(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols() + b.ncols());
    m.view_mut((0, 0), a.shape()).copy_from(a);
    m.view_mut(a.shape(), b.shape()).copy_from(b);
    m
}

/// Eliminate fluxes and scalars of one element in terms of its trace values
/// and loads.
pub fn condense(blocks: &LocalBlocks, gamma: f64) -> Result<CondensationFactors> {
    if !(gamma > 0.0) {
        return Err(HdgError::InvalidGamma(gamma));
    }
    let e = blocks.element;
    let (nv, ns, nt) = (blocks.n_flux, blocks.n_scalar, blocks.n_trace());

    let a1 = blocks
        .flux_mass
        .clone()
        .cholesky()
        .ok_or(HdgError::LossOfPositivity {
            element: e,
            block: "flux mass",
        })?;
    // A1^{-1} A2 and A1^{-1} A15
    let a1_div = a1.solve(&blocks.divergence);
    let a1_trace = a1.solve(&blocks.flux_trace);
    let schur = blocks.divergence.transpose() * &a1_div;
    let c1 = &blocks.state_operator + &schur;
    let c2 = &blocks.adjoint_operator + &schur;
    let s_inv = BlockInverse::new(e, c1, c2, &blocks.mass, gamma)?;

    // B5 + B2^T B1^{-1} B3
    let coupling = blocks.divergence.transpose() * &a1_trace;
    let r = block_diag2(
        &(&blocks.state_trace - &coupling),
        &(&blocks.adjoint_trace - &coupling),
    );
    let g2 = -s_inv.solve(e, &r)?;

    // G1 = -B1^{-1} (B2 G2 + B3), with B1^{-1} B2 = -diag(A1^{-1} A2)
    let a1_div2 = block_diag2(&a1_div, &a1_div);
    let a1_trace2 = block_diag2(&a1_trace, &a1_trace);
    let g1 = &a1_div2 * &g2 - &a1_trace2;

    // H2 = [S^{-1} B2^T B1^{-1}, S^{-1}], B2^T B1^{-1} = -diag(A2^T A1^{-1})
    let a1_inv = a1.inverse();
    let b2t_b1inv = -block_diag2(
        &(blocks.divergence.transpose() * &a1_inv),
        &(blocks.divergence.transpose() * &a1_inv),
    );
    let nb = 2 * nv + 2 * ns;
    let mut h2 = DMatrix::zeros(2 * ns, nb);
    h2.columns_mut(0, 2 * nv)
        .copy_from(&s_inv.solve(e, &b2t_b1inv)?);
    h2.columns_mut(2 * nv, 2 * ns)
        .copy_from(&s_inv.solve(e, &DMatrix::identity(2 * ns, 2 * ns))?);
    // H1 = [B1^{-1}, 0] - B1^{-1} B2 H2
    let mut h1 = &a1_div2 * &h2;
    {
        let b1_inv = block_diag2(&a1_inv, &a1_inv);
        let mut left = h1.columns_mut(0, 2 * nv);
        left += b1_inv;
    }

    // third block row: B6 = diag(A15^T), B7 = diag(A18, A19), B8 = diag(A20, A21)
    let ft = blocks.flux_trace.transpose();
    let b6 = block_diag2(&ft, &ft);
    let b7 = block_diag2(&blocks.trace_state, &blocks.trace_adjoint);
    let b8 = block_diag2(&blocks.trace_trace_state, &blocks.trace_trace_adjoint);
    let matrix = &b6 * &g1 + &b7 * &g2 + b8;
    let load = blocks.load_vector();
    let rhs = -((&b6 * &h1 + &b7 * &h2) * &load);
    debug_assert_eq!(matrix.nrows(), 2 * nt);

    Ok(CondensationFactors {
        element: e,
        n_scalar: ns,
        n_flux: nv,
        n_face_dofs: blocks.n_face_dofs,
        trace_faces: blocks.trace_faces.clone(),
        g1,
        g2,
        h1,
        h2,
        load,
        matrix,
        rhs,
    })
}

/// Back-substitute trace values and loads into the local unknowns.
pub fn local_recover(
    factors: &CondensationFactors,
    trace: &DVector<f64>,
    load: &DVector<f64>,
) -> Result<LocalFields> {
    if trace.len() != factors.g1.ncols() {
        return Err(HdgError::DimensionMismatch {
            expected: factors.g1.ncols(),
            got: trace.len(),
        });
    }
    if load.len() != factors.h1.ncols() {
        return Err(HdgError::DimensionMismatch {
            expected: factors.h1.ncols(),
            got: load.len(),
        });
    }
    let alpha = &factors.g1 * trace + &factors.h1 * load;
    let beta = &factors.g2 * trace + &factors.h2 * load;
    let (nv, ns) = (factors.n_flux, factors.n_scalar);
    Ok(LocalFields {
        q: alpha.rows(0, nv).into_owned(),
        p: alpha.rows(nv, nv).into_owned(),
        y: beta.rows(0, ns).into_owned(),
        z: beta.rows(ns, ns).into_owned(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_structured_mesh;
    use crate::problem::builtin_example;
    use crate::reference::make_basis;
    use rand::{Rng, SeedableRng};
    use std::sync::Arc;

    fn random_vector(rng: &mut impl Rng, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn constants_without_convection() {
        let mesh = SimplicialMesh::from_elements(
            2,
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![0, 1, 2],
        )
        .unwrap();
        let basis = make_basis(2, 0).unwrap();
        let spec = builtin_example(1).unwrap();
        let zero_beta = crate::problem::ProblemSpec {
            beta: Arc::new(|_| [0.0; 3]),
            ..spec.clone()
        };
        let blocks = assemble_local_blocks(&mesh, &zero_beta, &basis, 0).unwrap();
        let perimeter = 2.0 + 2f64.sqrt();
        // phi_0 = sqrt(2) on the reference triangle
        let phi2 = 2.0;
        assert!(blocks.convection.amax() < 1e-15);
        assert!(blocks.boundary_flux.amax() < 1e-15);
        assert!((blocks.stabilization[(0, 0)] - perimeter * phi2).abs() < 1e-13);
        assert!((blocks.state_operator[(0, 0)] - blocks.stabilization[(0, 0)]).abs() < 1e-15);

        let blocks = assemble_local_blocks(&mesh, &spec, &basis, 0).unwrap();
        assert!((blocks.stabilization[(0, 0)] - perimeter * phi2).abs() < 1e-13);
        assert!(blocks.boundary_flux[(0, 0)].abs() < 1e-14);
    }

    #[test]
    fn mass_is_symmetric_and_operators_positive() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(1);
        for (id, n) in [(1, 3), (2, 3), (3, 1)] {
            let spec = builtin_example(id).unwrap();
            let mesh = build_structured_mesh(spec.dim, n).unwrap();
            for k in 0..=2 {
                let basis = make_basis(spec.dim, k).unwrap();
                for e in 0..mesh.n_elements() {
                    let b = assemble_local_blocks(&mesh, &spec, &basis, e).unwrap();
                    assert!((&b.mass - b.mass.transpose()).amax() < 1e-14);
                    assert!(b.mass.clone().cholesky().is_some());
                    assert!(b.flux_mass.clone().cholesky().is_some());
                    assert!(is_positive_definite(&b.state_operator));
                    assert!(is_positive_definite(&b.adjoint_operator));
                    for _ in 0..5 {
                        let x = random_vector(&mut rng, b.n_scalar);
                        assert!(x.dot(&(&b.state_operator * &x)) > 0.0);
                        assert!(x.dot(&(&b.adjoint_operator * &x)) > 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn condensation_reproduces_local_rows() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(2);
        for (id, n, e) in [(1, 2, 3), (2, 3, 7), (3, 2, 17)] {
            let spec = builtin_example(id).unwrap();
            let mesh = build_structured_mesh(spec.dim, n).unwrap();
            for k in 0..=2 {
                let basis = make_basis(spec.dim, k).unwrap();
                let blocks = assemble_local_blocks(&mesh, &spec, &basis, e).unwrap();
                let factors = condense(&blocks, 0.7).unwrap();
                let full = blocks.full_matrix(0.7);
                let (nv, ns, nt) = (blocks.n_flux, blocks.n_scalar, blocks.n_trace());
                let nl = 2 * nv + 2 * ns;
                for _ in 0..100 {
                    let trace = random_vector(&mut rng, 2 * nt);
                    let load = random_vector(&mut rng, nl);
                    let loc = local_recover(&factors, &trace, &load).unwrap();
                    let mut x = DVector::zeros(nl + 2 * nt);
                    x.rows_mut(0, nv).copy_from(&loc.q);
                    x.rows_mut(nv, nv).copy_from(&loc.p);
                    x.rows_mut(2 * nv, ns).copy_from(&loc.y);
                    x.rows_mut(2 * nv + ns, ns).copy_from(&loc.z);
                    x.rows_mut(nl, 2 * nt).copy_from(&trace);
                    let res = (&full * &x).rows(0, nl) - &load;
                    assert!(
                        res.norm() < 1e-10 * (1.0 + load.norm() + x.norm()),
                        "k={k}: {}",
                        res.norm()
                    );
                }
            }
        }
    }

    #[test]
    fn recovery_is_linear_and_zero_preserving() {
        let spec = builtin_example(2).unwrap();
        let mesh = build_structured_mesh(2, 2).unwrap();
        let basis = make_basis(2, 1).unwrap();
        let blocks = assemble_local_blocks(&mesh, &spec, &basis, 3).unwrap();
        let f = condense(&blocks, 1.0).unwrap();
        let nt = f.g1.ncols();
        let nl = f.h1.ncols();
        let zero = local_recover(&f, &DVector::zeros(nt), &DVector::zeros(nl)).unwrap();
        assert!(zero.q.amax() == 0.0 && zero.y.amax() == 0.0 && zero.z.amax() == 0.0);
        let mut rng = rand::rngs::StdRng::seed_from_u64(4);
        let a = random_vector(&mut rng, nt);
        let b = random_vector(&mut rng, nt);
        let l0 = DVector::zeros(nl);
        let sum = local_recover(&f, &(&a + &b), &l0).unwrap();
        let ra = local_recover(&f, &a, &l0).unwrap();
        let rb = local_recover(&f, &b, &l0).unwrap();
        assert!((sum.q - ra.q - rb.q).amax() < 1e-12);
        assert!((sum.z - ra.z - rb.z).amax() < 1e-12);
        assert!(matches!(
            local_recover(&f, &DVector::zeros(nt + 1), &l0),
            Err(HdgError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn boundary_faces_carry_no_traces() {
        let spec = builtin_example(1).unwrap();
        let mesh = build_structured_mesh(2, 1).unwrap();
        let basis = make_basis(2, 1).unwrap();
        for e in 0..2 {
            let b = assemble_local_blocks(&mesh, &spec, &basis, e).unwrap();
            assert_eq!(b.trace_faces.len(), 1);
            let f = condense(&b, 1.0).unwrap();
            assert_eq!(f.matrix.shape(), (2 * 2, 2 * 2));
        }
    }

    #[test]
    fn zero_convection_gives_mass_coupling_pattern() {
        let spec = crate::problem::ProblemSpec {
            beta: Arc::new(|_| [0.0; 3]),
            ..builtin_example(1).unwrap()
        };
        let mesh = build_structured_mesh(2, 2).unwrap();
        let basis = make_basis(2, 1).unwrap();
        let b = assemble_local_blocks(&mesh, &spec, &basis, 2).unwrap();
        let full = b.full_matrix(1.0);
        let (nv, ns) = (b.n_flux, b.n_scalar);
        let (oy, oz) = (2 * nv, 2 * nv + ns);
        for i in 0..ns {
            for j in 0..ns {
                // the (y, z) coupling is skew: -A4 above, +A4 below
                assert!((full[(oy + i, oz + j)] + full[(oz + i, oy + j)]).abs() < 1e-14);
                // with beta = 0 the diagonal operators are symmetric
                assert!((full[(oy + i, oy + j)] - full[(oy + j, oy + i)]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn rejects_bad_element_and_gamma() {
        let spec = builtin_example(1).unwrap();
        let mesh = build_structured_mesh(2, 1).unwrap();
        let basis = make_basis(2, 0).unwrap();
        assert!(assemble_local_blocks(&mesh, &spec, &basis, 2).is_err());
        let b = assemble_local_blocks(&mesh, &spec, &basis, 0).unwrap();
        assert!(matches!(condense(&b, 0.0), Err(HdgError::InvalidGamma(_))));
    }
}
