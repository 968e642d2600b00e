//! Polynomial bases and quadrature on reference simplices.
//!
//! The reference d-simplex has vertices `0, e_1, .., e_d`. Local face `j` of a
//! simplex is the face opposite vertex `j`; its vertices are the remaining ones
//! in ascending order and it is parameterized by `a_0 + sum_i s_i (a_i - a_0)`
//! over the reference (d-1)-simplex.

use nalgebra::DMatrix;

use crate::error::{HdgError, Result};

/// Highest polynomial degree for which quadrature rules are generated.
pub const MAX_QUADRATURE_DEGREE: usize = 60;

/// Point in reference or physical coordinates. Unused trailing entries are zero.
pub type Point = [f64; 3];

/// Gauss-Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // map from [-1, 1] to [0, 1]
        nodes[i] = 0.5 * (1.0 - x);
        nodes[n - 1 - i] = 0.5 * (1.0 + x);
        weights[i] = 0.5 * w;
        weights[n - 1 - i] = 0.5 * w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for j in 2..=n {
        let jf = j as f64;
        let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Quadrature rule on a reference simplex.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub dim: usize,
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
    /// Polynomials of total degree up to this value are integrated exactly.
    pub degree: usize,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Integral of `f` over the reference simplex.
    pub fn integrate(&self, f: impl Fn(&Point) -> f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| w * f(p))
            .sum()
    }
}

/// Collapsed-coordinate (conical product) rule on the reference d-simplex,
/// `d` in `{0, 1, 2, 3}`. Weights are positive and sum to `1/d!`.
pub fn make_quadrature(dim: usize, degree: usize) -> Result<QuadratureRule> {
    if degree > MAX_QUADRATURE_DEGREE {
        return Err(HdgError::QuadratureDegree {
            requested: degree,
            max: MAX_QUADRATURE_DEGREE,
        });
    }
    let gl = |extra: usize| gauss_legendre_unit((degree + extra + 1).div_ceil(2).max(1));
    let mut points = Vec::new();
    let mut weights = Vec::new();
    match dim {
        0 => {
            points.push([0.0; 3]);
            weights.push(1.0);
        }
        1 => {
            let (x, w) = gl(0);
            for (xi, wi) in x.iter().zip(&w) {
                points.push([*xi, 0.0, 0.0]);
                weights.push(*wi);
            }
        }
        2 => {
            // x = s, y = t (1 - s), jacobian (1 - s)
            let (s, ws) = gl(1);
            let (t, wt) = gl(0);
            for (si, wsi) in s.iter().zip(&ws) {
                for (ti, wti) in t.iter().zip(&wt) {
                    points.push([*si, ti * (1.0 - si), 0.0]);
                    weights.push(wsi * wti * (1.0 - si));
                }
            }
        }
        3 => {
            // x = s, y = t (1 - s), z = r (1 - s)(1 - t), jacobian (1 - s)^2 (1 - t)
            let (s, ws) = gl(2);
            let (t, wt) = gl(1);
            let (r, wr) = gl(0);
            for (si, wsi) in s.iter().zip(&ws) {
                for (ti, wti) in t.iter().zip(&wt) {
                    for (ri, wri) in r.iter().zip(&wr) {
                        let y = ti * (1.0 - si);
                        let z = ri * (1.0 - si) * (1.0 - ti);
                        points.push([*si, y, z]);
                        weights.push(wsi * wti * wri * (1.0 - si).powi(2) * (1.0 - ti));
                    }
                }
            }
        }
        d => return Err(HdgError::UnsupportedDimension(d)),
    }
    Ok(QuadratureRule {
        dim,
        points,
        weights,
        degree,
    })
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// Closed-form integral of `x^a y^b z^c` over the reference d-simplex:
/// `a! b! c! / (a + b + c + d)!`.
pub fn monomial_integral(dim: usize, exps: [u32; 3]) -> f64 {
    let total: u32 = exps.iter().sum::<u32>() + dim as u32;
    exps.iter().map(|&e| factorial(e)).product::<f64>() / factorial(total)
}

/// Measure of the reference d-simplex, `1/d!`.
pub fn simplex_measure(dim: usize) -> f64 {
    1.0 / factorial(dim as u32)
}

/// `C(k + d, d)`, the dimension of `P^k` in `d` variables.
pub fn poly_dim(dim: usize, degree: usize) -> usize {
    let mut num = 1usize;
    let mut den = 1usize;
    for i in 1..=dim {
        num *= degree + i;
        den *= i;
    }
    num / den
}

/// Exponents of all monomials of total degree at most `degree`, graded order.
fn monomial_exponents(dim: usize, degree: usize) -> Vec<[u32; 3]> {
    let mut out = Vec::with_capacity(poly_dim(dim, degree));
    for total in 0..=degree as u32 {
        match dim {
            0 => {
                if total == 0 {
                    out.push([0, 0, 0]);
                }
            }
            1 => out.push([total, 0, 0]),
            2 => {
                for b in 0..=total {
                    out.push([total - b, b, 0]);
                }
            }
            3 => {
                for b in 0..=total {
                    for c in 0..=(total - b) {
                        out.push([total - b - c, b, c]);
                    }
                }
            }
            _ => unreachable!(),
        }
    }
    out
}

fn binomial(n: u32, k: u32) -> f64 {
    factorial(n) / (factorial(k) * factorial(n - k))
}

fn centroid_coordinate(dim: usize) -> f64 {
    1.0 / (dim as f64 + 1.0)
}

/// Exact integral of `prod_c (2 (x_c - m))^{e_c}` over the reference
/// d-simplex, `m` the centroid coordinate.
fn shifted_monomial_integral(dim: usize, exps: [u32; 3]) -> f64 {
    let m = centroid_coordinate(dim);
    let expand = |e: u32| -> Vec<(u32, f64)> {
        (0..=e)
            .map(|i| {
                (
                    i,
                    binomial(e, i) * 2f64.powi(e as i32) * (-m).powi((e - i) as i32),
                )
            })
            .collect()
    };
    let (a, b, c) = (expand(exps[0]), expand(exps[1]), expand(exps[2]));
    let mut total = 0.0;
    for &(i, ca) in &a {
        for &(j, cb) in &b {
            for &(k, cc) in &c {
                total += ca * cb * cc * monomial_integral(dim, [i, j, k]);
            }
        }
    }
    total
}

/// Orthonormal basis of `P^k` on the reference d-simplex, obtained by
/// Cholesky-based Gram-Schmidt of graded monomials in the centred variables
/// `2 (x - m)` against their exact mass matrix.
#[derive(Debug, Clone)]
pub struct PolySpace {
    pub dim: usize,
    pub degree: usize,
    exponents: Vec<[u32; 3]>,
    /// Row `i` holds the monomial coefficients of basis function `i`.
    coeffs: Vec<f64>,
}

impl PolySpace {
    pub fn new(dim: usize, degree: usize) -> Result<Self> {
        if dim > 3 {
            return Err(HdgError::UnsupportedDimension(dim));
        }
        let exponents = monomial_exponents(dim, degree);
        let n = exponents.len();
        let mass = DMatrix::from_fn(n, n, |i, j| {
            let e = [
                exponents[i][0] + exponents[j][0],
                exponents[i][1] + exponents[j][1],
                exponents[i][2] + exponents[j][2],
            ];
            shifted_monomial_integral(dim, e)
        });
        let mut coeffs = DMatrix::<f64>::identity(n, n);
        // Two passes: the second one cleans up rounding left by the first.
        for _ in 0..2 {
            let current = &coeffs * &mass * coeffs.transpose();
            let chol = current.cholesky().ok_or_else(|| {
                HdgError::InvalidMesh(format!(
                    "monomial mass matrix not positive definite (d = {dim}, k = {degree})"
                ))
            })?;
            let l = chol.l();
            let linv = l
                .solve_lower_triangular(&DMatrix::identity(n, n))
                .expect("cholesky factor is nonsingular");
            coeffs = linv * coeffs;
        }
        let mut flat = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                flat[i * n + j] = coeffs[(i, j)];
            }
        }
        Ok(Self {
            dim,
            degree,
            exponents,
            coeffs: flat,
        })
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    fn centred(&self, x: &Point) -> Point {
        let m = centroid_coordinate(self.dim);
        [2.0 * (x[0] - m), 2.0 * (x[1] - m), 2.0 * (x[2] - m)]
    }

    fn monomials(&self, x: &Point) -> Vec<f64> {
        let s = self.centred(x);
        self.exponents
            .iter()
            .map(|e| (0..self.dim).map(|c| s[c].powi(e[c] as i32)).product())
            .collect()
    }

    /// Values of all basis functions at `x`.
    pub fn eval(&self, x: &Point) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.eval_into(x, &mut out);
        out
    }

    pub fn eval_into(&self, x: &Point, out: &mut [f64]) {
        let m = self.monomials(x);
        let n = self.len();
        for (i, o) in out.iter_mut().enumerate().take(n) {
            let row = &self.coeffs[i * n..(i + 1) * n];
            *o = row.iter().zip(&m).map(|(c, v)| c * v).sum();
        }
    }

    /// Gradients of all basis functions at `x` in reference coordinates.
    pub fn grad(&self, x: &Point) -> Vec<[f64; 3]> {
        let n = self.len();
        let s = self.centred(x);
        let dm: Vec<[f64; 3]> = self
            .exponents
            .iter()
            .map(|e| {
                let mut g = [0.0; 3];
                for (c, gc) in g.iter_mut().enumerate().take(self.dim) {
                    if e[c] == 0 {
                        continue;
                    }
                    let mut v = 2.0 * e[c] as f64 * s[c].powi(e[c] as i32 - 1);
                    for o in 0..self.dim {
                        if o != c {
                            v *= s[o].powi(e[o] as i32);
                        }
                    }
                    *gc = v;
                }
                g
            })
            .collect();
        (0..n)
            .map(|i| {
                let row = &self.coeffs[i * n..(i + 1) * n];
                let mut g = [0.0; 3];
                for (c, d) in row.iter().zip(&dm) {
                    for a in 0..3 {
                        g[a] += c * d[a];
                    }
                }
                g
            })
            .collect()
    }
}

/// Vertices of the reference d-simplex.
pub fn reference_vertices(dim: usize) -> Vec<Point> {
    let mut v = vec![[0.0; 3]];
    for c in 0..dim {
        let mut p = [0.0; 3];
        p[c] = 1.0;
        v.push(p);
    }
    v
}

/// Map a point of the reference (d-1)-simplex onto local face `face` of the
/// reference d-simplex.
pub fn reference_face_point(dim: usize, face: usize, s: &Point) -> Point {
    let verts = reference_vertices(dim);
    let fv: Vec<Point> = (0..=dim).filter(|&j| j != face).map(|j| verts[j]).collect();
    let mut x = fv[0];
    for i in 1..dim {
        for c in 0..3 {
            x[c] += s[i - 1] * (fv[i][c] - fv[0][c]);
        }
    }
    x
}

/// Degree-k scalar basis on the reference element with tabulated values.
#[derive(Debug, Clone)]
pub struct ReferenceBasis {
    pub dim: usize,
    pub degree: usize,
    pub space: PolySpace,
    /// Orthonormal basis of the trace space on the reference (d-1)-simplex.
    pub trace_space: PolySpace,
    /// Element rule, exact to degree `2k + 2`.
    pub volume_rule: QuadratureRule,
    /// Face rule on the (d-1)-simplex, exact to degree `2k + 2`.
    pub face_rule: QuadratureRule,
    /// `volume_values[q][i]`
    pub volume_values: Vec<Vec<f64>>,
    /// `volume_grads[q][i]`, reference gradients.
    pub volume_grads: Vec<Vec<[f64; 3]>>,
    /// `face_values[f][q][i]` using the reference face parameterization.
    pub face_values: Vec<Vec<Vec<f64>>>,
    /// `trace_values[q][m]` at `face_rule` points.
    pub trace_values: Vec<Vec<f64>>,
}

impl ReferenceBasis {
    pub fn n_dofs(&self) -> usize {
        self.space.len()
    }

    pub fn n_trace_dofs(&self) -> usize {
        self.trace_space.len()
    }
}

pub fn make_basis(dim: usize, degree: usize) -> Result<ReferenceBasis> {
    if !(2..=3).contains(&dim) {
        return Err(HdgError::UnsupportedDimension(dim));
    }
    let space = PolySpace::new(dim, degree)?;
    let trace_space = PolySpace::new(dim - 1, degree)?;
    let volume_rule = make_quadrature(dim, 2 * degree + 2)?;
    let face_rule = make_quadrature(dim - 1, 2 * degree + 2)?;
    let volume_values = volume_rule.points.iter().map(|p| space.eval(p)).collect();
    let volume_grads = volume_rule.points.iter().map(|p| space.grad(p)).collect();
    let face_values = (0..=dim)
        .map(|f| {
            face_rule
                .points
                .iter()
                .map(|s| space.eval(&reference_face_point(dim, f, s)))
                .collect()
        })
        .collect();
    let trace_values = face_rule
        .points
        .iter()
        .map(|p| trace_space.eval(p))
        .collect();
    Ok(ReferenceBasis {
        dim,
        degree,
        space,
        trace_space,
        volume_rule,
        face_rule,
        volume_values,
        volume_grads,
        face_values,
        trace_values,
    })
}
