//! Optimal control problem instances: velocity field, control weight, data,
//! stabilization, and optional exact solutions.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{HdgError, Result};
use crate::mesh::SimplicialMesh;
use crate::reference::{make_quadrature, Point};

pub type ScalarFn = Arc<dyn Fn(&Point) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(&Point) -> [f64; 3] + Send + Sync>;

/// Exact state and adjoint with their gradients.
#[derive(Clone)]
pub struct ExactSolution {
    pub y: ScalarFn,
    pub grad_y: VectorFn,
    pub z: ScalarFn,
    pub grad_z: VectorFn,
}

impl ExactSolution {
    /// `q = -grad y`
    pub fn q(&self, x: &Point) -> [f64; 3] {
        (self.grad_y)(x).map(|v| -v)
    }

    /// `p = -grad z`
    pub fn p(&self, x: &Point) -> [f64; 3] {
        (self.grad_z)(x).map(|v| -v)
    }

    /// Optimal control `u = z / gamma`.
    pub fn u(&self, x: &Point, gamma: f64) -> f64 {
        (self.z)(x) / gamma
    }
}

/// Stabilization on element boundaries: a constant `tau1` and the
/// face-dependent `tau2 = tau1 - beta . n`.
#[derive(Clone)]
pub struct TauField {
    pub tau1: f64,
    beta: VectorFn,
}

impl TauField {
    pub fn tau1(&self) -> f64 {
        self.tau1
    }

    /// `tau2` at `x` on a face with outward normal `n`. Double valued across
    /// interior faces since `n` flips.
    pub fn tau2(&self, x: &Point, n: &Point) -> f64 {
        let b = (self.beta)(x);
        self.tau1 - (b[0] * n[0] + b[1] * n[1] + b[2] * n[2])
    }
}

#[derive(Clone)]
pub struct ProblemSpec {
    pub dim: usize,
    pub beta: VectorFn,
    pub gamma: f64,
    pub f: ScalarFn,
    pub g: ScalarFn,
    pub y_d: ScalarFn,
    pub tau1: f64,
    pub exact: Option<ExactSolution>,
}

impl std::fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("dim", &self.dim)
            .field("gamma", &self.gamma)
            .field("tau1", &self.tau1)
            .field("exact", &self.exact.is_some())
            .finish()
    }
}

impl ProblemSpec {
    pub fn beta_dot(&self, x: &Point, n: &Point) -> f64 {
        let b = (self.beta)(x);
        b[0] * n[0] + b[1] * n[1] + b[2] * n[2]
    }

    pub fn tau(&self) -> TauField {
        TauField {
            tau1: self.tau1,
            beta: self.beta.clone(),
        }
    }

    /// Same problem with all data (f, g, y_d) replaced by zero.
    pub fn with_zero_data(&self) -> Self {
        let zero: ScalarFn = Arc::new(|_| 0.0);
        Self {
            f: zero.clone(),
            g: zero.clone(),
            y_d: zero,
            exact: None,
            ..self.clone()
        }
    }
}

/// Differential data of a manufactured pair, consumed by
/// [`derive_manufactured_data`].
#[derive(Clone)]
pub struct ManufacturedInput {
    pub dim: usize,
    pub y: ScalarFn,
    pub grad_y: VectorFn,
    pub lap_y: ScalarFn,
    pub z: ScalarFn,
    pub grad_z: VectorFn,
    pub lap_z: ScalarFn,
    pub beta: VectorFn,
    /// Caller's declaration that `div beta = 0`.
    pub beta_divergence_free: bool,
    pub gamma: f64,
    pub tau1: f64,
}

/// Points on the boundary of the unit square/cube used to check boundary data.
pub fn boundary_samples(dim: usize, per_side: usize) -> Vec<Point> {
    let mut pts = Vec::new();
    let t = |i: usize| (i as f64 + 0.5) / per_side as f64;
    for axis in 0..dim {
        for side in [0.0, 1.0] {
            for i in 0..per_side {
                for j in 0..if dim == 3 { per_side } else { 1 } {
                    let mut p = [0.0; 3];
                    let others: Vec<usize> = (0..dim).filter(|&c| c != axis).collect();
                    p[axis] = side;
                    p[others[0]] = t(i);
                    if dim == 3 {
                        p[others[1]] = t(j);
                    }
                    pts.push(p);
                }
            }
        }
    }
    // corners
    for mask in 0..(1usize << dim) {
        let mut p = [0.0; 3];
        for (c, pc) in p.iter_mut().enumerate().take(dim) {
            *pc = ((mask >> c) & 1) as f64;
        }
        pts.push(p);
    }
    pts
}

/// Build `f`, `g`, `y_d` so that `(y, z)` solves the optimality system with
/// `u = z / gamma`:
/// `f = -lap y + beta . grad y - u`, `y_d = y - lap z - beta . grad z`, `g = y`.
pub fn derive_manufactured_data(input: ManufacturedInput) -> Result<ProblemSpec> {
    if !(input.gamma > 0.0) {
        return Err(HdgError::InvalidGamma(input.gamma));
    }
    if !input.beta_divergence_free {
        return Err(HdgError::Config(
            "velocity field must be declared divergence free".into(),
        ));
    }
    for p in boundary_samples(input.dim, 7) {
        let v = (input.z)(&p);
        if v.abs() > 1e-12 {
            return Err(HdgError::AdjointBoundary { point: p, value: v });
        }
    }
    let gamma = input.gamma;
    let dotv = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let f: ScalarFn = {
        let (lap_y, grad_y, z, beta) = (
            input.lap_y.clone(),
            input.grad_y.clone(),
            input.z.clone(),
            input.beta.clone(),
        );
        Arc::new(move |x| -lap_y(x) + dotv(beta(x), grad_y(x)) - z(x) / gamma)
    };
    let y_d: ScalarFn = {
        let (y, lap_z, grad_z, beta) = (
            input.y.clone(),
            input.lap_z.clone(),
            input.grad_z.clone(),
            input.beta.clone(),
        );
        Arc::new(move |x| y(x) - lap_z(x) - dotv(beta(x), grad_z(x)))
    };
    Ok(ProblemSpec {
        dim: input.dim,
        beta: input.beta,
        gamma,
        f,
        g: input.y.clone(),
        y_d,
        tau1: input.tau1,
        exact: Some(ExactSolution {
            y: input.y,
            grad_y: input.grad_y,
            z: input.z,
            grad_z: input.grad_z,
        }),
    })
}

/// Built-in examples: 1 and 2 on the unit square, 3 on the unit cube.
/// All use `gamma = 1`, `tau1 = 1`, `y = sin(pi x1)` and `z` the product of
/// `sin(pi x_i)` over all coordinates.
pub fn builtin_example(id: usize) -> Result<ProblemSpec> {
    let (dim, beta): (usize, VectorFn) = match id {
        1 => (2, Arc::new(|_| [1.0, 1.0, 0.0])),
        2 => (2, Arc::new(|x| [x[1], x[0], 0.0])),
        3 => (3, Arc::new(|_| [1.0, 1.0, 1.0])),
        _ => {
            return Err(HdgError::Config(format!(
                "unknown example {id} (expected 1, 2 or 3)"
            )))
        }
    };
    let (y, grad_y, lap_y) = sine_state();
    let (z, grad_z, lap_z) = sine_product(dim);
    derive_manufactured_data(ManufacturedInput {
        dim,
        y,
        grad_y,
        lap_y,
        z,
        grad_z,
        lap_z,
        beta,
        beta_divergence_free: true,
        gamma: 1.0,
        tau1: 1.0,
    })
}

/// Parse `"example1"`, `"1"`, ... into an example id.
pub fn parse_example_name(name: &str) -> Result<usize> {
    let digits = name.trim().trim_start_matches("example");
    match digits.parse::<usize>() {
        Ok(id @ 1..=3) => Ok(id),
        _ => Err(HdgError::Config(format!("unknown example '{name}'"))),
    }
}

fn sine_state() -> (ScalarFn, VectorFn, ScalarFn) {
    (
        Arc::new(|x| (PI * x[0]).sin()),
        Arc::new(|x| [PI * (PI * x[0]).cos(), 0.0, 0.0]),
        Arc::new(|x| -PI * PI * (PI * x[0]).sin()),
    )
}

fn sine_product(dim: usize) -> (ScalarFn, VectorFn, ScalarFn) {
    let z = move |x: &Point| (0..dim).map(|c| (PI * x[c]).sin()).product::<f64>();
    (
        Arc::new(z),
        Arc::new(move |x| {
            let mut g = [0.0; 3];
            for (c, gc) in g.iter_mut().enumerate().take(dim) {
                *gc = (0..dim)
                    .map(|o| {
                        if o == c {
                            PI * (PI * x[o]).cos()
                        } else {
                            (PI * x[o]).sin()
                        }
                    })
                    .product();
            }
            g
        }),
        Arc::new(move |x| -(dim as f64) * PI * PI * z(x)),
    )
}

/// Result of checking the stabilization and velocity assumptions on a mesh.
#[derive(Debug, Clone)]
pub struct AssumptionReport {
    /// `min (tau1 - beta.n / 2)` over all face quadrature points.
    pub min_tau1_margin: f64,
    /// `min (tau2 + beta.n / 2)` over all face quadrature points.
    pub min_tau2_margin: f64,
    /// `max |sum_faces int beta.n|` over elements.
    pub max_net_outflow: f64,
    /// Location of the smallest `tau1` margin, `(element, local face, face)`.
    pub worst_face: (usize, usize, usize),
}

impl AssumptionReport {
    pub fn holds(&self) -> bool {
        self.min_tau1_margin > 0.0 && self.min_tau2_margin > 0.0 && self.max_net_outflow < 1e-10
    }
}

/// Evaluate the stabilization margins and the discrete divergence of `beta`.
pub fn assumption_report(
    spec: &ProblemSpec,
    mesh: &SimplicialMesh,
    degree: usize,
) -> Result<AssumptionReport> {
    let rule = make_quadrature(mesh.dim - 1, 2 * degree + 2)?;
    let tau = spec.tau();
    let mut report = AssumptionReport {
        min_tau1_margin: f64::INFINITY,
        min_tau2_margin: f64::INFINITY,
        max_net_outflow: 0.0,
        worst_face: (0, 0, 0),
    };
    for e in 0..mesh.n_elements() {
        let mut outflow = 0.0;
        for j in 0..=mesh.dim {
            let fq = mesh.face_quad_points(e, j, &rule)?;
            for (x, w) in fq.points.iter().zip(&fq.weights) {
                let bn = spec.beta_dot(x, &fq.normal);
                outflow += w * bn;
                let m1 = tau.tau1() - 0.5 * bn;
                let m2 = tau.tau2(x, &fq.normal) + 0.5 * bn;
                if m1 < report.min_tau1_margin {
                    report.min_tau1_margin = m1;
                    report.worst_face = (e, j, fq.face);
                }
                report.min_tau2_margin = report.min_tau2_margin.min(m2);
            }
        }
        report.max_net_outflow = report.max_net_outflow.max(outflow.abs());
    }
    Ok(report)
}

/// Check the stabilization assumptions and divergence-free `beta`; on failure
/// the error names the offending face or element.
pub fn validate_assumptions(
    spec: &ProblemSpec,
    mesh: &SimplicialMesh,
    degree: usize,
) -> Result<AssumptionReport> {
    if !(spec.gamma > 0.0) {
        return Err(HdgError::InvalidGamma(spec.gamma));
    }
    let report = assumption_report(spec, mesh, degree)?;
    let (element, local_face, face) = report.worst_face;
    if report.min_tau1_margin <= 0.0 {
        return Err(HdgError::AssumptionViolation {
            what: "tau1 - beta.n/2",
            element,
            local_face,
            face,
            value: report.min_tau1_margin,
        });
    }
    if report.min_tau2_margin <= 0.0 {
        return Err(HdgError::AssumptionViolation {
            what: "tau2 + beta.n/2",
            element,
            local_face,
            face,
            value: report.min_tau2_margin,
        });
    }
    if report.max_net_outflow >= 1e-10 {
        // locate the element for the diagnostic
        let rule = make_quadrature(mesh.dim - 1, 2 * degree + 2)?;
        for e in 0..mesh.n_elements() {
            let mut outflow = 0.0;
            for j in 0..=mesh.dim {
                let fq = mesh.face_quad_points(e, j, &rule)?;
                outflow += fq
                    .points
                    .iter()
                    .zip(&fq.weights)
                    .map(|(x, w)| w * spec.beta_dot(x, &fq.normal))
                    .sum::<f64>();
            }
            if outflow.abs() >= 1e-10 {
                return Err(HdgError::NotDivergenceFree {
                    element: e,
                    value: outflow,
                });
            }
        }
    }
    Ok(report)
}
