use std::sync::Arc;

use faer::sparse::{SparseColMat, Triplet};
use hdgoc::assembly::{assemble, condense_all};
use hdgoc::multifrontal::{MultifrontalLu, NestedDissection};
use hdgoc::problem::ScalarFn;
use hdgoc::{build_structured_mesh, builtin_example, make_basis, solve_problem, ProblemSpec};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn scaled_data(spec: &ProblemSpec, s: f64) -> ProblemSpec {
    let scale = |f: &ScalarFn| -> ScalarFn {
        let f = f.clone();
        Arc::new(move |x| s * f(x))
    };
    ProblemSpec {
        f: scale(&spec.f),
        g: scale(&spec.g),
        y_d: scale(&spec.y_d),
        exact: None,
        ..spec.clone()
    }
}

fn all_coefficients(spec: &ProblemSpec, n: usize, k: usize) -> Vec<f64> {
    let mesh = build_structured_mesh(spec.dim, n).unwrap();
    let basis = make_basis(spec.dim, k).unwrap();
    let f = solve_problem(&mesh, spec, &basis).unwrap().fields;
    [f.q, f.p, f.y, f.z, f.u, f.y_hat, f.z_hat].concat()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn solution_is_linear_in_the_data(s in -4.0f64..4.0, example in 1usize..=2, k in 0usize..=1) {
        let spec = builtin_example(example).unwrap();
        let base = all_coefficients(&spec, 3, k);
        let scaled = all_coefficients(&scaled_data(&spec, s), 3, k);
        let nrm = base.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in base.iter().zip(&scaled) {
            prop_assert!((s * a - b).abs() <= 1e-10 * nrm * s.abs().max(1.0));
        }
    }

    #[test]
    fn structured_meshes_are_consistent(dim in 2usize..=3, n in 1usize..=5) {
        let mesh = build_structured_mesh(dim, n).unwrap();
        let n_cubes = n.pow(dim as u32);
        prop_assert_eq!(mesh.n_elements(), if dim == 2 { 2 } else { 6 } * n_cubes);
        let volume: f64 = mesh.element_measures.iter().sum();
        prop_assert!((volume - 1.0).abs() < 1e-12);
        prop_assert!(mesh.element_measures.iter().all(|&m| m > 0.0));
        let boundary_area: f64 = (0..mesh.n_faces())
            .filter(|&f| mesh.is_boundary_face(f))
            .map(|f| mesh.face_measures[f])
            .sum();
        prop_assert!((boundary_area - 2.0 * dim as f64).abs() < 1e-12);
        // every element face is shared by exactly one or two elements
        let mut count = vec![0usize; mesh.n_faces()];
        for e in 0..mesh.n_elements() {
            for lf in 0..=dim {
                count[mesh.element_face(e, lf)] += 1;
            }
        }
        for f in 0..mesh.n_faces() {
            let expected = if mesh.is_boundary_face(f) { 1 } else { 2 };
            prop_assert_eq!(count[f], expected);
        }
        prop_assert_eq!(
            count.iter().filter(|&&c| c == 2).count(),
            mesh.n_interior_faces
        );
    }

    #[test]
    fn multifrontal_solve_matches_dense_lu(m in 1usize..12, seed in 0u64..1000, block in 1usize..4) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let groups_n = m * m;
        let n = groups_n * block;
        let id = |i: usize, j: usize| i + m * j;
        let mut adjacency = vec![Vec::new(); groups_n];
        let mut coords = Vec::new();
        for j in 0..m {
            for i in 0..m {
                coords.push([i as f64, j as f64, 0.0]);
                if i + 1 < m {
                    adjacency[id(i, j)].push(id(i + 1, j));
                    adjacency[id(i + 1, j)].push(id(i, j));
                }
                if j + 1 < m {
                    adjacency[id(i, j)].push(id(i, j + 1));
                    adjacency[id(i, j + 1)].push(id(i, j));
                }
            }
        }
        let mut dense = DMatrix::<f64>::zeros(n, n);
        let mut trip = Vec::new();
        for g in 0..groups_n {
            let mut nb = adjacency[g].clone();
            nb.push(g);
            for h in nb {
                for a in 0..block {
                    for b in 0..block {
                        let (r, c) = (g * block + a, h * block + b);
                        let mut v = rng.random_range(-1.0..1.0);
                        if r == c {
                            v += 8.0;
                        }
                        dense[(r, c)] = v;
                        trip.push(Triplet::new(r, c, v));
                    }
                }
            }
        }
        let a = SparseColMat::try_new_from_triplets(n, n, &trip).unwrap();
        let groups: Vec<Vec<usize>> = (0..groups_n)
            .map(|g| (g * block..(g + 1) * block).collect())
            .collect();
        let nd = NestedDissection::new(&groups, &coords, &adjacency).unwrap();
        let lu = MultifrontalLu::factor(&a, nd).unwrap();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = lu.solve(&b).unwrap();
        let reference = dense.lu().solve(&DVector::from_vec(b)).unwrap();
        for (u, v) in x.iter().zip(reference.iter()) {
            prop_assert!((u - v).abs() <= 1e-10 * (1.0 + v.abs()));
        }
    }
}

#[test]
fn condensed_matrix_pattern_is_symmetric() {
    let spec = builtin_example(3).unwrap();
    let mesh = build_structured_mesh(3, 2).unwrap();
    let basis = make_basis(3, 1).unwrap();
    let factors = condense_all(&mesh, &spec, &basis).unwrap();
    let sys = assemble(&mesh, &basis, &factors).unwrap();
    let n = sys.len();
    let mut pattern = std::collections::HashSet::new();
    let (ptr, idx) = (sys.matrix.col_ptr(), sys.matrix.row_idx());
    for c in 0..n {
        for &r in &idx[ptr[c]..ptr[c + 1]] {
            pattern.insert((r, c));
        }
    }
    for &(r, c) in &pattern {
        assert!(pattern.contains(&(c, r)), "({r}, {c})");
    }
}
