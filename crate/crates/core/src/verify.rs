//! Independent checks of the discretization: the HDG bilinear forms evaluated
//! from local blocks, their energy and adjoint identities, a dense monolithic
//! solve used as an oracle for the condensed path, and a suite runner.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::assembly::{solve_problem, SolutionFields};
use crate::error::{HdgError, Result};
use crate::local::{assemble_local_blocks, LocalBlocks};
use crate::mesh::{build_structured_mesh, SimplicialMesh};
use crate::problem::{builtin_example, validate_assumptions, ProblemSpec};
use crate::reference::{make_basis, ReferenceBasis};

/// A discrete triple `(v, w, mu)`: flux and scalar coefficients element by
/// element, trace coefficients per interior face.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteTuple {
    pub flux: Vec<f64>,
    pub scalar: Vec<f64>,
    pub trace: Vec<f64>,
}

impl DiscreteTuple {
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            flux: self.flux.iter().map(|v| s * v).collect(),
            scalar: self.scalar.iter().map(|v| s * v).collect(),
            trace: self.trace.iter().map(|v| s * v).collect(),
        }
    }
}

/// Mesh, basis and local blocks needed to evaluate the bilinear forms.
pub struct OperatorContext<'a> {
    pub mesh: &'a SimplicialMesh,
    pub spec: &'a ProblemSpec,
    pub basis: &'a ReferenceBasis,
    pub blocks: Vec<LocalBlocks>,
}

struct LocalView {
    flux: DVector<f64>,
    scalar: DVector<f64>,
    trace: DVector<f64>,
}

impl<'a> OperatorContext<'a> {
    pub fn new(
        mesh: &'a SimplicialMesh,
        spec: &'a ProblemSpec,
        basis: &'a ReferenceBasis,
    ) -> Result<Self> {
        let blocks = (0..mesh.n_elements())
            .map(|e| assemble_local_blocks(mesh, spec, basis, e))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            mesh,
            spec,
            basis,
            blocks,
        })
    }

    fn sizes(&self) -> (usize, usize, usize) {
        let ns = self.basis.n_dofs();
        (self.mesh.dim * ns, ns, self.basis.n_trace_dofs())
    }

    pub fn random_tuple(&self, rng: &mut impl Rng) -> DiscreteTuple {
        let (nv, ns, nf) = self.sizes();
        let ne = self.mesh.n_elements();
        let mut draw = |n: usize| {
            (0..n)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect::<Vec<f64>>()
        };
        DiscreteTuple {
            flux: draw(ne * nv),
            scalar: draw(ne * ns),
            trace: draw(self.mesh.n_interior_faces * nf),
        }
    }

    fn local(&self, t: &DiscreteTuple, e: usize) -> Result<LocalView> {
        let (nv, ns, nf) = self.sizes();
        let ne = self.mesh.n_elements();
        let nt = self.mesh.n_interior_faces * nf;
        if t.flux.len() != ne * nv || t.scalar.len() != ne * ns || t.trace.len() != nt {
            return Err(HdgError::DimensionMismatch {
                expected: ne * (nv + ns) + nt,
                got: t.flux.len() + t.scalar.len() + t.trace.len(),
            });
        }
        let b = &self.blocks[e];
        let trace = DVector::from_iterator(
            b.n_trace(),
            b.trace_faces
                .iter()
                .flat_map(|f| (0..nf).map(move |m| t.trace[f.interior * nf + m])),
        );
        Ok(LocalView {
            flux: DVector::from_column_slice(&t.flux[e * nv..(e + 1) * nv]),
            scalar: DVector::from_column_slice(&t.scalar[e * ns..(e + 1) * ns]),
            trace,
        })
    }

    /// State form `B1(q, y, y_hat; r, w, mu)`.
    pub fn b1(&self, trial: &DiscreteTuple, test: &DiscreteTuple) -> Result<f64> {
        let mut total = 0.0;
        for (e, b) in self.blocks.iter().enumerate() {
            let u = self.local(trial, e)?;
            let v = self.local(test, e)?;
            let r_row =
                &b.flux_mass * &u.flux - &b.divergence * &u.scalar + &b.flux_trace * &u.trace;
            let w_row = b.divergence.tr_mul(&u.flux)
                + &b.state_operator * &u.scalar
                + &b.state_trace * &u.trace;
            let mu_row = b.flux_trace.tr_mul(&u.flux)
                + &b.trace_state * &u.scalar
                + &b.trace_trace_state * &u.trace;
            total += v.flux.dot(&r_row) + v.scalar.dot(&w_row) - v.trace.dot(&mu_row);
        }
        Ok(total)
    }

    /// Adjoint form `B2(p, z, z_hat; r, w, mu)`.
    pub fn b2(&self, trial: &DiscreteTuple, test: &DiscreteTuple) -> Result<f64> {
        let mut total = 0.0;
        for (e, b) in self.blocks.iter().enumerate() {
            let u = self.local(trial, e)?;
            let v = self.local(test, e)?;
            let r_row =
                &b.flux_mass * &u.flux - &b.divergence * &u.scalar + &b.flux_trace * &u.trace;
            let w_row = b.divergence.tr_mul(&u.flux)
                + &b.adjoint_operator * &u.scalar
                + &b.adjoint_trace * &u.trace;
            let mu_row = b.flux_trace.tr_mul(&u.flux)
                + &b.trace_adjoint * &u.scalar
                + &b.trace_trace_adjoint * &u.trace;
            total += v.flux.dot(&r_row) + v.scalar.dot(&w_row) - v.trace.dot(&mu_row);
        }
        Ok(total)
    }

    /// `||v||^2 + <c (w - mu), w - mu>` on interior faces `+ <c w, w>` on
    /// boundary faces, with `c = tau1 - beta.n/2` (`adjoint = false`) or
    /// `c = tau2 + beta.n/2`, all by quadrature.
    pub fn energy(&self, t: &DiscreteTuple, adjoint: bool) -> Result<f64> {
        let (_, ns, nf) = self.sizes();
        let dim = self.mesh.dim;
        let tau = self.spec.tau();
        let mut total = 0.0;
        for e in 0..self.mesh.n_elements() {
            let lv = self.local(t, e)?;
            let map = self.mesh.map(e);
            let jac = map.det.abs();
            for (w, phi) in self
                .basis
                .volume_rule
                .weights
                .iter()
                .zip(&self.basis.volume_values)
            {
                for c in 0..dim {
                    let v: f64 = (0..ns).map(|i| lv.flux[c * ns + i] * phi[i]).sum();
                    total += w * jac * v * v;
                }
            }
            let faces = &self.blocks[e].trace_faces;
            for local in 0..=dim {
                let fq = self
                    .mesh
                    .face_quad_points(e, local, &self.basis.face_rule)?;
                let n = fq.normal;
                let slot = faces.iter().position(|f| f.local == local);
                for q in 0..fq.weights.len() {
                    let x = &fq.points[q];
                    let phi = self.basis.space.eval(&fq.reference_points[q]);
                    let wv: f64 = (0..ns).map(|i| lv.scalar[i] * phi[i]).sum();
                    let mu = slot.map_or(0.0, |s| {
                        let psi = &self.basis.trace_values[q];
                        (0..nf).map(|m| lv.trace[s * nf + m] * psi[m]).sum()
                    });
                    let bn = self.spec.beta_dot(x, &n);
                    let c = if adjoint {
                        tau.tau2(x, &n) + 0.5 * bn
                    } else {
                        tau.tau1() - 0.5 * bn
                    };
                    total += fq.weights[q] * c * (wv - mu).powi(2);
                }
            }
        }
        Ok(total)
    }
}

fn relative_gap(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Worst relative deviations over `samples` random tuples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityDeviation {
    pub energy_state: f64,
    pub energy_adjoint: f64,
    pub adjoint: f64,
}

pub fn identity_deviations(
    ctx: &OperatorContext,
    samples: usize,
    rng: &mut impl Rng,
) -> Result<IdentityDeviation> {
    let mut dev = IdentityDeviation {
        energy_state: 0.0,
        energy_adjoint: 0.0,
        adjoint: 0.0,
    };
    for _ in 0..samples {
        let a = ctx.random_tuple(rng);
        dev.energy_state = dev
            .energy_state
            .max(relative_gap(ctx.b1(&a, &a)?, ctx.energy(&a, false)?));
        dev.energy_adjoint = dev
            .energy_adjoint
            .max(relative_gap(ctx.b2(&a, &a)?, ctx.energy(&a, true)?));

        let qy = ctx.random_tuple(rng);
        let pz = ctx.random_tuple(rng);
        let test1 = DiscreteTuple {
            flux: pz.flux.clone(),
            scalar: pz.scalar.iter().map(|v| -v).collect(),
            trace: pz.trace.iter().map(|v| -v).collect(),
        };
        let test2 = DiscreteTuple {
            flux: qy.flux.iter().map(|v| -v).collect(),
            scalar: qy.scalar.clone(),
            trace: qy.trace.clone(),
        };
        let s1 = ctx.b1(&qy, &test1)?;
        let s2 = ctx.b2(&pz, &test2)?;
        let scale = s1.abs() + s2.abs();
        if scale > 0.0 {
            dev.adjoint = dev.adjoint.max((s1 + s2).abs() / scale);
        }
    }
    Ok(dev)
}

/// Smallest `x^T A x / x^T x` over `samples` random `x` per element, for the
/// state and adjoint operators.
pub fn operator_positivity(
    ctx: &OperatorContext,
    samples: usize,
    rng: &mut impl Rng,
) -> (f64, f64) {
    let mut min_state = f64::INFINITY;
    let mut min_adjoint = f64::INFINITY;
    for b in &ctx.blocks {
        let ns = b.n_scalar;
        for _ in 0..samples {
            let x = DVector::from_iterator(ns, (0..ns).map(|_| rng.random_range(-1.0..1.0)));
            let nrm = x.norm_squared();
            min_state = min_state.min(x.dot(&(&b.state_operator * &x)) / nrm);
            min_adjoint = min_adjoint.min(x.dot(&(&b.adjoint_operator * &x)) / nrm);
        }
    }
    (min_state, min_adjoint)
}

/// Solution of the uncondensed global system over all element unknowns and
/// traces, factored densely.
#[derive(Debug, Clone)]
pub struct MonolithicSolution {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub y_hat: Vec<f64>,
    pub z_hat: Vec<f64>,
}

impl MonolithicSolution {
    /// Largest `||x - x_ref|| / ||x_ref||` over the coefficient blocks
    /// `q, p, y, z, y_hat, z_hat`.
    pub fn relative_difference(&self, fields: &SolutionFields) -> f64 {
        let reference = [&self.q, &self.p, &self.y, &self.z, &self.y_hat, &self.z_hat];
        let computed = [
            &fields.q,
            &fields.p,
            &fields.y,
            &fields.z,
            &fields.y_hat,
            &fields.z_hat,
        ];
        let mut worst = 0.0f64;
        for (a, b) in reference.iter().zip(computed) {
            if a.len() != b.len() {
                return f64::INFINITY;
            }
            let diff: f64 = a
                .iter()
                .zip(b.iter())
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt();
            let nrm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            worst = worst.max(if nrm == 0.0 { diff } else { diff / nrm });
        }
        worst
    }
}

pub fn monolithic_solve(
    mesh: &SimplicialMesh,
    spec: &ProblemSpec,
    basis: &ReferenceBasis,
) -> Result<MonolithicSolution> {
    let ns = basis.n_dofs();
    let nv = mesh.dim * ns;
    let nf = basis.n_trace_dofs();
    let ne = mesh.n_elements();
    let n_el_dofs = 2 * nv + 2 * ns;
    let half = mesh.n_interior_faces * nf;
    let t0 = ne * n_el_dofs;
    let n = t0 + 2 * half;
    let mut mat = DMatrix::zeros(n, n);
    let mut rhs = DVector::zeros(n);
    for e in 0..ne {
        let b = assemble_local_blocks(mesh, spec, basis, e)?;
        let local = b.full_matrix(spec.gamma);
        let load = b.load_vector();
        let mut idx: Vec<usize> = (0..n_el_dofs).map(|i| e * n_el_dofs + i).collect();
        for off in [0, half] {
            for f in &b.trace_faces {
                idx.extend((0..nf).map(|m| t0 + off + f.interior * nf + m));
            }
        }
        for (i, &gi) in idx.iter().enumerate() {
            if i < n_el_dofs {
                rhs[gi] += load[i];
            }
            for (j, &gj) in idx.iter().enumerate() {
                mat[(gi, gj)] += local[(i, j)];
            }
        }
    }
    let x = mat
        .lu()
        .solve(&rhs)
        .ok_or_else(|| HdgError::SingularSystem("monolithic system".into()))?;
    let mut out = MonolithicSolution {
        q: Vec::with_capacity(ne * nv),
        p: Vec::with_capacity(ne * nv),
        y: Vec::with_capacity(ne * ns),
        z: Vec::with_capacity(ne * ns),
        y_hat: x.as_slice()[t0..t0 + half].to_vec(),
        z_hat: x.as_slice()[t0 + half..].to_vec(),
    };
    for e in 0..ne {
        let s = &x.as_slice()[e * n_el_dofs..(e + 1) * n_el_dofs];
        out.q.extend_from_slice(&s[..nv]);
        out.p.extend_from_slice(&s[nv..2 * nv]);
        out.y.extend_from_slice(&s[2 * nv..2 * nv + ns]);
        out.z.extend_from_slice(&s[2 * nv + ns..]);
    }
    Ok(out)
}

/// One named predicate of the suite.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct VerifyReport {
    pub checks: Vec<CheckOutcome>,
}

impl VerifyReport {
    fn push(&mut self, name: String, passed: bool, detail: String) {
        self.checks.push(CheckOutcome {
            name,
            passed,
            detail,
        });
    }

    pub fn passed(&self) -> usize {
        self.checks.iter().filter(|c| c.passed).count()
    }

    pub fn failed(&self) -> usize {
        self.checks.len() - self.passed()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            writeln!(
                out,
                "{} {}: {}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.detail
            )
            .unwrap();
        }
        writeln!(out, "{} passed, {} failed", self.passed(), self.failed()).unwrap();
        out
    }
}

#[derive(Debug, Clone)]
pub struct SuiteConfig {
    pub examples: Vec<usize>,
    pub degrees: Vec<usize>,
    pub samples: usize,
    pub seed: u64,
    /// Cells per axis; `None` picks a mesh with at most 16 elements.
    pub n: Option<usize>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            examples: vec![1, 2, 3],
            degrees: vec![0, 1],
            samples: 50,
            seed: 7,
            n: None,
        }
    }
}

pub const IDENTITY_TOL: f64 = 1e-10;
pub const MONOLITHIC_TOL: f64 = 1e-9;
pub const TRIVIAL_TOL: f64 = 1e-12;

/// Small mesh with at most 16 elements for each dimension.
pub fn small_mesh(dim: usize) -> Result<SimplicialMesh> {
    build_structured_mesh(dim, if dim == 2 { 2 } else { 1 })
}

/// Identity, positivity, oracle, trivial-solution and assumption checks on
/// small meshes.
pub fn run_suite(config: &SuiteConfig) -> Result<VerifyReport> {
    let mut report = VerifyReport::default();
    let mut rng = StdRng::seed_from_u64(config.seed);
    for &id in &config.examples {
        let spec = builtin_example(id)?;
        let mesh = match config.n {
            Some(n) => build_structured_mesh(spec.dim, n)?,
            None => small_mesh(spec.dim)?,
        };
        for &k in &config.degrees {
            let tag = format!("example{id} k={k}");
            let basis = make_basis(spec.dim, k)?;

            match validate_assumptions(&spec, &mesh, k) {
                Ok(r) => report.push(
                    format!("{tag} assumptions"),
                    true,
                    format!(
                        "min tau1 margin {:.3e}, min tau2 margin {:.3e}",
                        r.min_tau1_margin, r.min_tau2_margin
                    ),
                ),
                Err(e) => report.push(format!("{tag} assumptions"), false, e.to_string()),
            }

            let ctx = OperatorContext::new(&mesh, &spec, &basis)?;
            let dev = identity_deviations(&ctx, config.samples, &mut rng)?;
            report.push(
                format!("{tag} state energy identity"),
                dev.energy_state <= IDENTITY_TOL,
                format!("max rel deviation {:.3e}", dev.energy_state),
            );
            report.push(
                format!("{tag} adjoint energy identity"),
                dev.energy_adjoint <= IDENTITY_TOL,
                format!("max rel deviation {:.3e}", dev.energy_adjoint),
            );
            report.push(
                format!("{tag} adjoint identity"),
                dev.adjoint <= IDENTITY_TOL,
                format!("max rel deviation {:.3e}", dev.adjoint),
            );

            let (ms, ma) = operator_positivity(&ctx, 100, &mut rng);
            report.push(
                format!("{tag} operator positivity"),
                ms > 0.0 && ma > 0.0,
                format!("min Rayleigh quotients {ms:.3e}, {ma:.3e}"),
            );

            let cond = solve_problem(&mesh, &spec, &basis)?;
            let mono = monolithic_solve(&mesh, &spec, &basis)?;
            let rel = mono.relative_difference(&cond.fields);
            report.push(
                format!("{tag} condensed vs monolithic"),
                rel <= MONOLITHIC_TOL,
                format!("relative difference {rel:.3e}"),
            );

            let zero = solve_problem(&mesh, &spec.with_zero_data(), &basis)?;
            let m = zero.fields.max_abs();
            report.push(
                format!("{tag} zero data"),
                m <= TRIVIAL_TOL,
                format!("max |coefficient| {m:.3e}"),
            );
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn energy_identity_on_one_element() {
        let spec = builtin_example(1).unwrap();
        let mesh = build_structured_mesh(2, 1).unwrap();
        let basis = make_basis(2, 1).unwrap();
        let ctx = OperatorContext::new(&mesh, &spec, &basis).unwrap();
        let mut rng = StdRng::seed_from_u64(1);
        let dev = identity_deviations(&ctx, 5, &mut rng).unwrap();
        assert!(dev.energy_state < 1e-12, "{dev:?}");
        assert!(dev.energy_adjoint < 1e-12, "{dev:?}");
        assert!(dev.adjoint < 1e-12, "{dev:?}");
    }

    #[test]
    fn forms_are_bilinear() {
        let spec = builtin_example(2).unwrap();
        let mesh = build_structured_mesh(2, 2).unwrap();
        let basis = make_basis(2, 1).unwrap();
        let ctx = OperatorContext::new(&mesh, &spec, &basis).unwrap();
        let mut rng = StdRng::seed_from_u64(2);
        let a = ctx.random_tuple(&mut rng);
        let b = ctx.random_tuple(&mut rng);
        let lhs = ctx.b1(&a.scaled(3.0), &b).unwrap();
        let rhs = 3.0 * ctx.b1(&a, &b).unwrap();
        assert!((lhs - rhs).abs() < 1e-12 * rhs.abs().max(1.0));
    }

    #[test]
    fn wrong_tuple_size_is_rejected() {
        let spec = builtin_example(1).unwrap();
        let mesh = build_structured_mesh(2, 2).unwrap();
        let basis = make_basis(2, 0).unwrap();
        let ctx = OperatorContext::new(&mesh, &spec, &basis).unwrap();
        let mut rng = StdRng::seed_from_u64(3);
        let mut a = ctx.random_tuple(&mut rng);
        a.trace.pop();
        assert!(ctx.b1(&a, &a).is_err());
    }

    #[test]
    fn monolithic_matches_condensed_small() {
        let spec = builtin_example(1).unwrap();
        let mesh = build_structured_mesh(2, 2).unwrap();
        let basis = make_basis(2, 0).unwrap();
        let cond = solve_problem(&mesh, &spec, &basis).unwrap();
        let mono = monolithic_solve(&mesh, &spec, &basis).unwrap();
        assert!(mono.relative_difference(&cond.fields) < 1e-10);
    }

    #[test]
    fn report_counts() {
        let cfg = SuiteConfig {
            examples: vec![1],
            degrees: vec![0],
            samples: 3,
            seed: 1,
            n: None,
        };
        let r = run_suite(&cfg).unwrap();
        assert_eq!(r.failed(), 0, "{}", r.to_text());
        assert!(r.to_text().ends_with("0 failed\n"));
    }
}
