//! Structured simplicial meshes of the unit square and unit cube.

use std::collections::HashMap;
use std::io::Write;

use crate::error::{HdgError, Result};
use crate::reference::{Point, QuadratureRule};

/// The one or two elements sharing a face, as `(element, local face)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FaceAdjacency {
    pub first: (usize, usize),
    pub second: Option<(usize, usize)>,
}

impl FaceAdjacency {
    pub fn is_boundary(&self) -> bool {
        self.second.is_none()
    }
}

/// Affine map `x = origin + J xi` of an element from the reference simplex.
#[derive(Debug, Clone, Copy)]
pub struct AffineMap {
    pub origin: Point,
    /// Row-major `J`, columns are edge vectors `v_i - v_0`.
    pub jac: [[f64; 3]; 3],
    pub inv: [[f64; 3]; 3],
    pub det: f64,
}

impl AffineMap {
    pub fn to_physical(&self, xi: &Point) -> Point {
        let mut x = self.origin;
        for (r, xr) in x.iter_mut().enumerate() {
            for c in 0..3 {
                *xr += self.jac[r][c] * xi[c];
            }
        }
        x
    }

    pub fn to_reference(&self, x: &Point) -> Point {
        let d = [
            x[0] - self.origin[0],
            x[1] - self.origin[1],
            x[2] - self.origin[2],
        ];
        let mut xi = [0.0; 3];
        for (r, xr) in xi.iter_mut().enumerate() {
            for c in 0..3 {
                *xr += self.inv[r][c] * d[c];
            }
        }
        xi
    }

    /// Physical gradient `J^{-T} g` of a reference gradient `g`.
    pub fn push_gradient(&self, g: &[f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (r, o) in out.iter_mut().enumerate() {
            for c in 0..3 {
                *o += self.inv[c][r] * g[c];
            }
        }
        out
    }
}

/// Quadrature on one face of one element in physical coordinates.
#[derive(Debug, Clone)]
pub struct FaceQuadrature {
    pub face: usize,
    pub points: Vec<Point>,
    /// Physical weights (reference weights scaled to the face measure).
    pub weights: Vec<f64>,
    /// Points in the element's reference coordinates.
    pub reference_points: Vec<Point>,
    /// Unit outward normal of the element on this face.
    pub normal: Point,
}

#[derive(Debug, Clone)]
pub struct SimplicialMesh {
    pub dim: usize,
    pub vertices: Vec<Point>,
    /// Flat, `dim + 1` vertex indices per element, positively oriented.
    elements: Vec<usize>,
    /// Flat, `dim` vertex indices per face, sorted ascending.
    faces: Vec<usize>,
    /// Flat, global face of each local face (local face `j` is opposite vertex `j`).
    element_faces: Vec<usize>,
    pub face_adjacency: Vec<FaceAdjacency>,
    /// Flat, outward unit normal per (element, local face).
    normals: Vec<Point>,
    pub element_measures: Vec<f64>,
    pub face_measures: Vec<f64>,
    maps: Vec<AffineMap>,
    /// Index among interior faces, `None` on the boundary.
    interior_index: Vec<Option<usize>>,
    pub n_interior_faces: usize,
    /// Largest element diameter.
    pub h: f64,
    /// Cells per axis for structured meshes.
    pub cells_per_axis: Option<usize>,
}

fn sub(a: &Point, b: &Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: &Point, b: &Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: &Point, b: &Point) -> Point {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm(a: &Point) -> f64 {
    dot(a, a).sqrt()
}

fn affine_map(dim: usize, verts: &[Point]) -> Option<AffineMap> {
    let mut jac = [[0.0; 3]; 3];
    for c in 0..dim {
        let e = sub(&verts[c + 1], &verts[0]);
        for r in 0..3 {
            jac[r][c] = e[r];
        }
    }
    // Pad unused dimensions with identity so the 3x3 map stays invertible.
    for c in dim..3 {
        jac[c][c] = 1.0;
    }
    let det = jac[0][0] * (jac[1][1] * jac[2][2] - jac[1][2] * jac[2][1])
        - jac[0][1] * (jac[1][0] * jac[2][2] - jac[1][2] * jac[2][0])
        + jac[0][2] * (jac[1][0] * jac[2][1] - jac[1][1] * jac[2][0]);
    if det.abs() < 1e-300 {
        return None;
    }
    let mut inv = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            let (r1, r2) = ((c + 1) % 3, (c + 2) % 3);
            let (c1, c2) = ((r + 1) % 3, (r + 2) % 3);
            inv[r][c] = (jac[r1][c1] * jac[r2][c2] - jac[r1][c2] * jac[r2][c1]) / det;
        }
    }
    Some(AffineMap {
        origin: verts[0],
        jac,
        inv,
        det,
    })
}

/// Measure of a (d-1)-face given its vertices.
fn face_measure(dim: usize, verts: &[Point]) -> f64 {
    match dim {
        2 => norm(&sub(&verts[1], &verts[0])),
        3 => {
            0.5 * norm(&cross(
                &sub(&verts[1], &verts[0]),
                &sub(&verts[2], &verts[0]),
            ))
        }
        _ => unreachable!(),
    }
}

impl SimplicialMesh {
    /// Build connectivity and geometry from raw vertices and elements.
    /// Negatively oriented elements are reordered.
    pub fn from_elements(
        dim: usize,
        vertices: Vec<Point>,
        mut elements: Vec<usize>,
    ) -> Result<Self> {
        if !(2..=3).contains(&dim) {
            return Err(HdgError::UnsupportedDimension(dim));
        }
        let nv = dim + 1;
        if elements.len() % nv != 0 {
            return Err(HdgError::InvalidMesh("element list length".into()));
        }
        let n_el = elements.len() / nv;
        if let Some(&bad) = elements.iter().find(|&&v| v >= vertices.len()) {
            return Err(HdgError::IndexOutOfRange {
                what: "vertex",
                index: bad,
                len: vertices.len(),
            });
        }

        let mut maps = Vec::with_capacity(n_el);
        let mut element_measures = Vec::with_capacity(n_el);
        let vol_scale = if dim == 2 { 0.5 } else { 1.0 / 6.0 };
        for e in 0..n_el {
            let el = &mut elements[e * nv..(e + 1) * nv];
            let verts: Vec<Point> = el.iter().map(|&v| vertices[v]).collect();
            let mut map = affine_map(dim, &verts).ok_or(HdgError::DegenerateElement(e))?;
            if map.det < 0.0 {
                el.swap(0, 1);
                let verts: Vec<Point> = el.iter().map(|&v| vertices[v]).collect();
                map = affine_map(dim, &verts).ok_or(HdgError::DegenerateElement(e))?;
            }
            element_measures.push(map.det * vol_scale);
            maps.push(map);
        }

        let mut faces = Vec::new();
        let mut face_adjacency: Vec<FaceAdjacency> = Vec::new();
        let mut element_faces = vec![0usize; n_el * nv];
        let mut lookup: HashMap<Vec<usize>, usize> = HashMap::new();
        for e in 0..n_el {
            let el = &elements[e * nv..(e + 1) * nv];
            for j in 0..nv {
                let mut key: Vec<usize> = (0..nv).filter(|&i| i != j).map(|i| el[i]).collect();
                key.sort_unstable();
                let id = match lookup.get(&key) {
                    Some(&id) => {
                        let adj = &mut face_adjacency[id];
                        if adj.second.is_some() {
                            return Err(HdgError::InvalidMesh(format!(
                                "face {key:?} shared by more than two elements"
                            )));
                        }
                        adj.second = Some((e, j));
                        id
                    }
                    None => {
                        let id = face_adjacency.len();
                        faces.extend_from_slice(&key);
                        face_adjacency.push(FaceAdjacency {
                            first: (e, j),
                            second: None,
                        });
                        lookup.insert(key, id);
                        id
                    }
                };
                element_faces[e * nv + j] = id;
            }
        }

        let n_faces = face_adjacency.len();
        let face_measures: Vec<f64> = (0..n_faces)
            .map(|f| {
                let verts: Vec<Point> = faces[f * dim..(f + 1) * dim]
                    .iter()
                    .map(|&v| vertices[v])
                    .collect();
                face_measure(dim, &verts)
            })
            .collect();

        let mut normals = Vec::with_capacity(n_el * nv);
        for e in 0..n_el {
            let el = &elements[e * nv..(e + 1) * nv];
            let centroid = centroid(el.iter().map(|&v| &vertices[v]));
            for j in 0..nv {
                let fv: Vec<Point> = (0..nv)
                    .filter(|&i| i != j)
                    .map(|i| vertices[el[i]])
                    .collect();
                let mut n = match dim {
                    2 => {
                        let t = sub(&fv[1], &fv[0]);
                        [t[1], -t[0], 0.0]
                    }
                    _ => cross(&sub(&fv[1], &fv[0]), &sub(&fv[2], &fv[0])),
                };
                let len = norm(&n);
                n.iter_mut().for_each(|c| *c /= len);
                let fc = centroid_of(&fv);
                if dot(&n, &sub(&fc, &centroid)) < 0.0 {
                    n.iter_mut().for_each(|c| *c = -*c);
                }
                normals.push(n);
            }
        }

        let mut interior_index = vec![None; n_faces];
        let mut n_interior_faces = 0;
        for (f, adj) in face_adjacency.iter().enumerate() {
            if !adj.is_boundary() {
                interior_index[f] = Some(n_interior_faces);
                n_interior_faces += 1;
            }
        }

        let mut h: f64 = 0.0;
        for e in 0..n_el {
            let el = &elements[e * nv..(e + 1) * nv];
            for a in 0..nv {
                for b in (a + 1)..nv {
                    h = h.max(norm(&sub(&vertices[el[a]], &vertices[el[b]])));
                }
            }
        }

        Ok(Self {
            dim,
            vertices,
            elements,
            faces,
            element_faces,
            face_adjacency,
            normals,
            element_measures,
            face_measures,
            maps,
            interior_index,
            n_interior_faces,
            h,
            cells_per_axis: None,
        })
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len() / (self.dim + 1)
    }

    pub fn n_faces(&self) -> usize {
        self.face_adjacency.len()
    }

    pub fn element(&self, e: usize) -> &[usize] {
        let nv = self.dim + 1;
        &self.elements[e * nv..(e + 1) * nv]
    }

    pub fn face(&self, f: usize) -> &[usize] {
        &self.faces[f * self.dim..(f + 1) * self.dim]
    }

    pub fn element_face(&self, e: usize, local: usize) -> usize {
        self.element_faces[e * (self.dim + 1) + local]
    }

    pub fn normal(&self, e: usize, local: usize) -> Point {
        self.normals[e * (self.dim + 1) + local]
    }

    pub fn map(&self, e: usize) -> &AffineMap {
        &self.maps[e]
    }

    pub fn is_boundary_face(&self, f: usize) -> bool {
        self.face_adjacency[f].is_boundary()
    }

    pub fn interior_index(&self, f: usize) -> Option<usize> {
        self.interior_index[f]
    }

    pub fn element_centroid(&self, e: usize) -> Point {
        centroid(self.element(e).iter().map(|&v| &self.vertices[v]))
    }

    pub fn face_centroid(&self, f: usize) -> Point {
        centroid(self.face(f).iter().map(|&v| &self.vertices[v]))
    }

    /// Physical quadrature points on local face `local` of element `e`, in the
    /// canonical parameterization of the face (sorted vertex order), so that
    /// point `q` is the same physical point for both neighbours.
    pub fn face_quad_points(
        &self,
        e: usize,
        local: usize,
        rule: &QuadratureRule,
    ) -> Result<FaceQuadrature> {
        if e >= self.n_elements() {
            return Err(HdgError::IndexOutOfRange {
                what: "element",
                index: e,
                len: self.n_elements(),
            });
        }
        if local > self.dim {
            return Err(HdgError::IndexOutOfRange {
                what: "local face",
                index: local,
                len: self.dim + 1,
            });
        }
        if rule.dim + 1 != self.dim {
            return Err(HdgError::DimensionMismatch {
                expected: self.dim - 1,
                got: rule.dim,
            });
        }
        let f = self.element_face(e, local);
        let fv: Vec<Point> = self.face(f).iter().map(|&v| self.vertices[v]).collect();
        // reference (d-1)-simplex measure is 1/(d-1)!
        let scale = self.face_measures[f] * if self.dim == 3 { 2.0 } else { 1.0 };
        let map = &self.maps[e];
        let mut points = Vec::with_capacity(rule.len());
        let mut reference_points = Vec::with_capacity(rule.len());
        for s in &rule.points {
            let mut x = fv[0];
            for i in 1..self.dim {
                for c in 0..3 {
                    x[c] += s[i - 1] * (fv[i][c] - fv[0][c]);
                }
            }
            reference_points.push(map.to_reference(&x));
            points.push(x);
        }
        Ok(FaceQuadrature {
            face: f,
            points,
            weights: rule.weights.iter().map(|w| w * scale).collect(),
            reference_points,
            normal: self.normal(e, local),
        })
    }

    /// Plain-text dump for debugging: header `dim n_vertices n_elements n_faces`,
    /// then vertices, elements, and faces with their adjacency.
    pub fn write_dump(&self, mut out: impl Write) -> Result<()> {
        writeln!(
            out,
            "{} {} {} {}",
            self.dim,
            self.vertices.len(),
            self.n_elements(),
            self.n_faces()
        )?;
        for v in &self.vertices {
            let coords: Vec<String> = v[..self.dim].iter().map(|c| format!("{c:.17e}")).collect();
            writeln!(out, "{}", coords.join(" "))?;
        }
        for e in 0..self.n_elements() {
            let ids: Vec<String> = self.element(e).iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", ids.join(" "))?;
        }
        for f in 0..self.n_faces() {
            let ids: Vec<String> = self.face(f).iter().map(|v| v.to_string()).collect();
            let adj = &self.face_adjacency[f];
            let second = adj
                .second
                .map(|(e, j)| format!("{e} {j}"))
                .unwrap_or_else(|| "-1 -1".into());
            writeln!(
                out,
                "{} {} {} {}",
                ids.join(" "),
                adj.first.0,
                adj.first.1,
                second
            )?;
        }
        Ok(())
    }
}

fn centroid<'a>(pts: impl Iterator<Item = &'a Point>) -> Point {
    let mut c = [0.0; 3];
    let mut n = 0.0;
    for p in pts {
        for i in 0..3 {
            c[i] += p[i];
        }
        n += 1.0;
    }
    c.map(|v| v / n)
}

fn centroid_of(pts: &[Point]) -> Point {
    centroid(pts.iter())
}

/// Uniform mesh of `[0,1]^dim` with `n` cells per axis. In 2D every square is
/// cut along its anti-diagonal into two triangles; in 3D every cube is split
/// into the six Kuhn tetrahedra around its main diagonal.
pub fn build_structured_mesh(dim: usize, n: usize) -> Result<SimplicialMesh> {
    if n == 0 {
        return Err(HdgError::ZeroCells);
    }
    let hf = 1.0 / n as f64;
    let mut vertices = Vec::new();
    let mut elements = Vec::new();
    match dim {
        2 => {
            let id = |i: usize, j: usize| i + j * (n + 1);
            for j in 0..=n {
                for i in 0..=n {
                    vertices.push([i as f64 * hf, j as f64 * hf, 0.0]);
                }
            }
            for j in 0..n {
                for i in 0..n {
                    let (v00, v10, v01, v11) =
                        (id(i, j), id(i + 1, j), id(i, j + 1), id(i + 1, j + 1));
                    elements.extend_from_slice(&[v00, v10, v01]);
                    elements.extend_from_slice(&[v10, v11, v01]);
                }
            }
        }
        3 => {
            let id = |i: usize, j: usize, k: usize| i + (n + 1) * (j + (n + 1) * k);
            for k in 0..=n {
                for j in 0..=n {
                    for i in 0..=n {
                        vertices.push([i as f64 * hf, j as f64 * hf, k as f64 * hf]);
                    }
                }
            }
            const PERMS: [[usize; 3]; 6] = [
                [0, 1, 2],
                [0, 2, 1],
                [1, 0, 2],
                [1, 2, 0],
                [2, 0, 1],
                [2, 1, 0],
            ];
            for k in 0..n {
                for j in 0..n {
                    for i in 0..n {
                        for perm in PERMS {
                            let mut c = [i, j, k];
                            let mut tet = [id(c[0], c[1], c[2]); 4];
                            for (step, &axis) in perm.iter().enumerate() {
                                c[axis] += 1;
                                tet[step + 1] = id(c[0], c[1], c[2]);
                            }
                            elements.extend_from_slice(&tet);
                        }
                    }
                }
            }
        }
        d => return Err(HdgError::UnsupportedDimension(d)),
    }
    let mut mesh = SimplicialMesh::from_elements(dim, vertices, elements)?;
    mesh.h = (dim as f64).sqrt() / n as f64;
    mesh.cells_per_axis = Some(n);
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference::make_quadrature;

    fn check_invariants(mesh: &SimplicialMesh) {
        let total: f64 = mesh.element_measures.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(mesh.element_measures.iter().all(|&m| m > 0.0));
        for e in 0..mesh.n_elements() {
            let mut s = [0.0; 3];
            for j in 0..=mesh.dim {
                let n = mesh.normal(e, j);
                assert!((norm(&n) - 1.0).abs() < 1e-12);
                let m = mesh.face_measures[mesh.element_face(e, j)];
                for c in 0..3 {
                    s[c] += m * n[c];
                }
                let d = sub(
                    &mesh.face_centroid(mesh.element_face(e, j)),
                    &mesh.element_centroid(e),
                );
                assert!(dot(&n, &d) > 0.0);
            }
            assert!(norm(&s) < 1e-12, "closed surface identity on element {e}");
        }
        for (f, adj) in mesh.face_adjacency.iter().enumerate() {
            let fv = mesh.face(f);
            let on_boundary = (0..mesh.dim).any(|c| {
                [0.0, 1.0]
                    .iter()
                    .any(|&side| fv.iter().all(|&v| mesh.vertices[v][c] == side))
            });
            assert_eq!(adj.is_boundary(), on_boundary, "face {f}");
            if let Some((e2, j2)) = adj.second {
                let (e1, j1) = adj.first;
                let n1 = mesh.normal(e1, j1);
                let n2 = mesh.normal(e2, j2);
                for c in 0..3 {
                    assert!((n1[c] + n2[c]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn smallest_square() {
        let mesh = build_structured_mesh(2, 1).unwrap();
        assert_eq!(mesh.n_elements(), 2);
        assert_eq!(mesh.n_faces(), 5);
        assert_eq!(mesh.n_interior_faces, 1);
        check_invariants(&mesh);
    }

    #[test]
    fn square_eight() {
        let mesh = build_structured_mesh(2, 8).unwrap();
        assert_eq!(mesh.n_elements(), 128);
        assert!((mesh.h / 2f64.sqrt() - 1.0 / 8.0).abs() < 1e-15);
        check_invariants(&mesh);
    }

    #[test]
    fn cube_two() {
        let mesh = build_structured_mesh(3, 2).unwrap();
        assert_eq!(mesh.n_elements(), 6 * 8);
        let brute: f64 = (0..mesh.n_elements())
            .map(|e| {
                let v: Vec<Point> = mesh.element(e).iter().map(|&i| mesh.vertices[i]).collect();
                let a = sub(&v[1], &v[0]);
                let b = sub(&v[2], &v[0]);
                let c = sub(&v[3], &v[0]);
                dot(&a, &cross(&b, &c)).abs() / 6.0
            })
            .sum();
        assert!((brute - 1.0).abs() < 1e-12);
        check_invariants(&mesh);
        check_invariants(&build_structured_mesh(3, 3).unwrap());
    }

    #[test]
    fn h_is_max_diameter_and_halves() {
        for dim in 2..=3 {
            for n in [1, 2, 3, 5] {
                let a = build_structured_mesh(dim, n).unwrap();
                let b = build_structured_mesh(dim, 2 * n).unwrap();
                assert_eq!(b.h, a.h / 2.0);
                let raw =
                    SimplicialMesh::from_elements(dim, a.vertices.clone(), a.elements.clone())
                        .unwrap();
                assert!((raw.h - a.h).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn rejects_zero_cells() {
        assert!(matches!(
            build_structured_mesh(2, 0),
            Err(HdgError::ZeroCells)
        ));
        assert!(matches!(
            build_structured_mesh(4, 2),
            Err(HdgError::UnsupportedDimension(4))
        ));
    }

    #[test]
    fn reference_triangle_normal() {
        let mesh = SimplicialMesh::from_elements(
            2,
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![0, 1, 2],
        )
        .unwrap();
        let n = mesh.normal(0, 0);
        let s = 1.0 / 2f64.sqrt();
        assert!((n[0] - s).abs() < 1e-15 && (n[1] - s).abs() < 1e-15);
        assert_eq!(mesh.n_interior_faces, 0);
    }

    #[test]
    fn face_points_lie_on_face() {
        let mesh = build_structured_mesh(3, 2).unwrap();
        let rule = make_quadrature(2, 4).unwrap();
        for e in [0, 7, 31] {
            for j in 0..4 {
                let fq = mesh.face_quad_points(e, j, &rule).unwrap();
                let f = mesh.element_face(e, j);
                let a = mesh.vertices[mesh.face(f)[0]];
                let area: f64 = fq.weights.iter().sum();
                assert!((area - mesh.face_measures[f]).abs() < 1e-14);
                for (x, xi) in fq.points.iter().zip(&fq.reference_points) {
                    assert!(dot(&sub(x, &a), &fq.normal).abs() < 1e-14);
                    let back = mesh.map(e).to_physical(xi);
                    assert!(norm(&sub(&back, x)) < 1e-14);
                }
            }
        }
        assert!(mesh.face_quad_points(48, 0, &rule).is_err());
        assert!(mesh.face_quad_points(0, 4, &rule).is_err());
    }

    #[test]
    fn random_element_closed_surface() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(3);
        for dim in 2..=3 {
            for _ in 0..10 {
                let verts: Vec<Point> = (0..=dim)
                    .map(|_| {
                        let mut p = [0.0; 3];
                        for c in p.iter_mut().take(dim) {
                            *c = rng.random::<f64>();
                        }
                        p
                    })
                    .collect();
                let mesh = SimplicialMesh::from_elements(dim, verts, (0..=dim).collect()).unwrap();
                let mut s = [0.0; 3];
                for j in 0..=dim {
                    let n = mesh.normal(0, j);
                    let m = mesh.face_measures[mesh.element_face(0, j)];
                    for c in 0..3 {
                        s[c] += m * n[c];
                    }
                }
                assert!(norm(&s) < 1e-12);
            }
        }
    }

    #[test]
    fn dump_header() {
        let mesh = build_structured_mesh(2, 2).unwrap();
        let mut buf = Vec::new();
        mesh.write_dump(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "2 9 8 16");
        assert_eq!(text.lines().count(), 1 + 9 + 8 + 16);
    }
}
