//! L2 errors against exact solutions and convergence studies.

use std::fmt::Write as _;
use std::time::Instant;

use crate::assembly::{solve_problem, SolutionFields};
use crate::error::{HdgError, Result};
use crate::mesh::{build_structured_mesh, SimplicialMesh};
use crate::par;
use crate::problem::{builtin_example, ProblemSpec};
use crate::reference::{make_basis, make_quadrature, Point, ReferenceBasis};

/// Basis values at a rule one degree above the assembly rule.
struct ErrorRule {
    points: Vec<Point>,
    weights: Vec<f64>,
    values: Vec<Vec<f64>>,
}

fn error_rule(basis: &ReferenceBasis) -> Result<ErrorRule> {
    let rule = make_quadrature(basis.dim, basis.volume_rule.degree + 1)?;
    let values = rule.points.iter().map(|p| basis.space.eval(p)).collect();
    Ok(ErrorRule {
        points: rule.points,
        weights: rule.weights,
        values,
    })
}

fn sum_ordered(parts: Vec<f64>) -> f64 {
    parts.into_iter().sum()
}

/// `sqrt(sum_K int_K (exact - sum_i c_i phi_i)^2)` with `coeffs` stored
/// element by element.
pub fn l2_error_scalar(
    mesh: &SimplicialMesh,
    basis: &ReferenceBasis,
    coeffs: &[f64],
    exact: impl Fn(&Point) -> f64 + Sync,
) -> Result<f64> {
    let ns = basis.n_dofs();
    if coeffs.len() != ns * mesh.n_elements() {
        return Err(HdgError::DimensionMismatch {
            expected: ns * mesh.n_elements(),
            got: coeffs.len(),
        });
    }
    let rule = error_rule(basis)?;
    let parts = par::map_indexed(mesh.n_elements(), |e| {
        let map = mesh.map(e);
        let jac = map.det.abs();
        let c = &coeffs[e * ns..(e + 1) * ns];
        let mut s = 0.0;
        for ((xi, w), phi) in rule.points.iter().zip(&rule.weights).zip(&rule.values) {
            let x = map.to_physical(xi);
            let uh: f64 = c.iter().zip(phi).map(|(a, b)| a * b).sum();
            s += w * jac * (exact(&x) - uh).powi(2);
        }
        s
    });
    Ok(sum_ordered(parts).sqrt())
}

/// Vector version for fluxes, coefficients component major per element.
pub fn l2_error_vector(
    mesh: &SimplicialMesh,
    basis: &ReferenceBasis,
    coeffs: &[f64],
    exact: impl Fn(&Point) -> [f64; 3] + Sync,
) -> Result<f64> {
    let ns = basis.n_dofs();
    let dim = mesh.dim;
    let nv = dim * ns;
    if coeffs.len() != nv * mesh.n_elements() {
        return Err(HdgError::DimensionMismatch {
            expected: nv * mesh.n_elements(),
            got: coeffs.len(),
        });
    }
    let rule = error_rule(basis)?;
    let parts = par::map_indexed(mesh.n_elements(), |e| {
        let map = mesh.map(e);
        let jac = map.det.abs();
        let c = &coeffs[e * nv..(e + 1) * nv];
        let mut s = 0.0;
        for ((xi, w), phi) in rule.points.iter().zip(&rule.weights).zip(&rule.values) {
            let x = map.to_physical(xi);
            let v = exact(&x);
            for comp in 0..dim {
                let cc = &c[comp * ns..(comp + 1) * ns];
                let vh: f64 = cc.iter().zip(phi).map(|(a, b)| a * b).sum();
                s += w * jac * (v[comp] - vh).powi(2);
            }
        }
        s
    });
    Ok(sum_ordered(parts).sqrt())
}

/// L2 errors of the five fields.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldErrors {
    pub q: f64,
    pub p: f64,
    pub y: f64,
    pub z: f64,
    pub u: f64,
}

impl FieldErrors {
    pub fn as_array(&self) -> [f64; 5] {
        [self.q, self.p, self.y, self.z, self.u]
    }
}

pub const FIELD_NAMES: [&str; 5] = ["q", "p", "y", "z", "u"];

pub fn compute_errors(
    mesh: &SimplicialMesh,
    basis: &ReferenceBasis,
    spec: &ProblemSpec,
    fields: &SolutionFields,
) -> Result<FieldErrors> {
    let exact = spec
        .exact
        .as_ref()
        .ok_or_else(|| HdgError::Config("problem has no exact solution".into()))?;
    let gamma = spec.gamma;
    Ok(FieldErrors {
        q: l2_error_vector(mesh, basis, &fields.q, |x| exact.q(x))?,
        p: l2_error_vector(mesh, basis, &fields.p, |x| exact.p(x))?,
        y: l2_error_scalar(mesh, basis, &fields.y, |x| (exact.y)(x))?,
        z: l2_error_scalar(mesh, basis, &fields.z, |x| (exact.z)(x))?,
        u: l2_error_scalar(mesh, basis, &fields.u, |x| exact.u(x, gamma))?,
    })
}

/// One refinement level of a study.
#[derive(Debug, Clone)]
pub struct ErrorRecord {
    pub n: usize,
    /// Reported mesh parameter, `1/n`.
    pub h_over_sqrt2: f64,
    pub errors: FieldErrors,
    /// `log(e_prev / e_this) / log(n_this / n_prev)`, absent on the first level.
    pub orders: Option<[f64; 5]>,
    pub n_trace_unknowns: usize,
    pub relative_residual: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub example: String,
    pub degree: usize,
    pub records: Vec<ErrorRecord>,
}

/// Check that `ns` is strictly increasing and every entry is a power-of-two
/// multiple of the first.
pub fn check_refinements(ns: &[usize]) -> Result<()> {
    if ns.is_empty() {
        return Err(HdgError::Config("empty refinement list".into()));
    }
    if ns[0] == 0 {
        return Err(HdgError::ZeroCells);
    }
    for w in ns.windows(2) {
        if w[1] <= w[0] {
            return Err(HdgError::Config(format!(
                "refinement list must be strictly increasing, got {} after {}",
                w[1], w[0]
            )));
        }
    }
    for &n in ns {
        if n % ns[0] != 0 || !(n / ns[0]).is_power_of_two() {
            return Err(HdgError::Config(format!(
                "{n} is not a power-of-two multiple of {}",
                ns[0]
            )));
        }
    }
    Ok(())
}

/// Solve a single refinement level and measure errors.
pub fn run_level(spec: &ProblemSpec, basis: &ReferenceBasis, n: usize) -> Result<ErrorRecord> {
    let start = Instant::now();
    let mesh = build_structured_mesh(spec.dim, n)?;
    let sol = solve_problem(&mesh, spec, basis)?;
    let errors = compute_errors(&mesh, basis, spec, &sol.fields)?;
    Ok(ErrorRecord {
        n,
        h_over_sqrt2: 1.0 / n as f64,
        errors,
        orders: None,
        n_trace_unknowns: sol.n_trace_unknowns,
        relative_residual: sol.relative_residual,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Study for an arbitrary problem with an exact solution.
pub fn run_study(
    label: &str,
    spec: &ProblemSpec,
    degree: usize,
    ns: &[usize],
) -> Result<ConvergenceReport> {
    check_refinements(ns)?;
    let basis = make_basis(spec.dim, degree)?;
    let mut records: Vec<ErrorRecord> = Vec::with_capacity(ns.len());
    for &n in ns {
        let mut rec = run_level(spec, &basis, n)?;
        if let Some(prev) = records.last() {
            let a = prev.errors.as_array();
            let b = rec.errors.as_array();
            let ratio = (rec.n as f64 / prev.n as f64).log2();
            rec.orders = Some(std::array::from_fn(|i| (a[i] / b[i]).log2() / ratio));
        }
        records.push(rec);
    }
    Ok(ConvergenceReport {
        example: label.to_string(),
        degree,
        records,
    })
}

/// Study for built-in example `id`.
pub fn run_convergence_study(id: usize, degree: usize, ns: &[usize]) -> Result<ConvergenceReport> {
    let spec = builtin_example(id)?;
    run_study(&format!("example{id}"), &spec, degree, ns)
}

pub const CSV_HEADER: &str =
    "n,h_over_sqrt2,err_q,ord_q,err_p,ord_p,err_y,ord_y,err_z,ord_z,err_u,ord_u";

fn fmt_order(o: Option<f64>) -> String {
    o.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"))
}

impl ConvergenceReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{CSV_HEADER}").unwrap();
        for r in &self.records {
            let e = r.errors.as_array();
            write!(out, "{},{:.6e}", r.n, r.h_over_sqrt2).unwrap();
            for i in 0..5 {
                write!(out, ",{:.6e},{}", e[i], fmt_order(r.orders.map(|o| o[i]))).unwrap();
            }
            writeln!(out).unwrap();
        }
        out
    }

    /// Table with one column per refinement level, error and order rows per
    /// field.
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{}, k = {}", self.example, self.degree).unwrap();
        writeln!(out).unwrap();
        write!(out, "| h/sqrt(2) |").unwrap();
        for r in &self.records {
            write!(out, " 1/{} |", r.n).unwrap();
        }
        writeln!(out).unwrap();
        write!(out, "|---|").unwrap();
        for _ in &self.records {
            write!(out, "---|").unwrap();
        }
        writeln!(out).unwrap();
        for (i, name) in FIELD_NAMES.iter().enumerate() {
            write!(out, "| ‖{name}-{name}_h‖ |").unwrap();
            for r in &self.records {
                write!(out, " {:.4e} |", r.errors.as_array()[i]).unwrap();
            }
            writeln!(out).unwrap();
            write!(out, "| order |").unwrap();
            for r in &self.records {
                write!(out, " {} |", fmt_order(r.orders.map(|o| o[i]))).unwrap();
            }
            writeln!(out).unwrap();
        }
        out
    }

    /// Orders of the last refinement step, if there is one.
    pub fn final_orders(&self) -> Option<[f64; 5]> {
        self.records.last().and_then(|r| r.orders)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn polynomial_coefficients_are_exact() {
        let mesh = build_structured_mesh(2, 3).unwrap();
        let basis = make_basis(2, 2).unwrap();
        // L2-project a quadratic; the projection reproduces it
        let poly = |x: &Point| 1.0 + 2.0 * x[0] - x[1] + 3.0 * x[0] * x[1] - x[1] * x[1];
        let ns = basis.n_dofs();
        let mut coeffs = vec![0.0; ns * mesh.n_elements()];
        for e in 0..mesh.n_elements() {
            let map = mesh.map(e);
            for ((xi, w), phi) in basis
                .volume_rule
                .points
                .iter()
                .zip(&basis.volume_rule.weights)
                .zip(&basis.volume_values)
            {
                let v = poly(&map.to_physical(xi));
                for i in 0..ns {
                    coeffs[e * ns + i] += w * v * phi[i];
                }
            }
        }
        let err = l2_error_scalar(&mesh, &basis, &coeffs, poly).unwrap();
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn norms_of_sines() {
        let mesh = build_structured_mesh(2, 16).unwrap();
        let basis = make_basis(2, 1).unwrap();
        let zero = vec![0.0; basis.n_dofs() * mesh.n_elements()];
        let e = l2_error_scalar(&mesh, &basis, &zero, |x| (PI * x[0]).sin()).unwrap();
        assert!((e - 0.5f64.sqrt()).abs() < 1e-8);
        let e = l2_error_scalar(&mesh, &basis, &zero, |x| {
            (PI * x[0]).sin() * (PI * x[1]).sin()
        })
        .unwrap();
        assert!((e - 0.5).abs() < 1e-8);
        let zero_v = vec![0.0; 2 * zero.len()];
        let e = l2_error_vector(&mesh, &basis, &zero_v, |_| [3.0, 4.0, 0.0]).unwrap();
        assert!((e - 5.0).abs() < 1e-12);
    }

    #[test]
    fn refinement_lists_are_validated() {
        assert!(check_refinements(&[8, 16, 32]).is_ok());
        assert!(check_refinements(&[8, 32]).is_ok());
        assert!(check_refinements(&[8, 12]).is_err());
        assert!(check_refinements(&[8, 24]).is_err());
        assert!(check_refinements(&[16, 8]).is_err());
        assert!(check_refinements(&[]).is_err());
        assert!(check_refinements(&[0]).is_err());
    }

    #[test]
    fn single_level_report_has_dashes() {
        let report = run_convergence_study(1, 0, &[2]).unwrap();
        let csv = report.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row.len(), 12);
        for i in [3, 5, 7, 9, 11] {
            assert_eq!(row[i], "-");
        }
        let md = report.to_markdown();
        assert!(md.contains("| 1/2 |"));
    }

    #[test]
    fn control_error_is_scaled_adjoint_error() {
        let report = run_convergence_study(2, 1, &[2, 4]).unwrap();
        for r in &report.records {
            assert!((r.errors.u - r.errors.z).abs() <= 1e-13 * r.errors.z);
        }
        assert!(report.final_orders().is_some());
    }
}
