use latentlab::encoders::{low_variance_pseudoinverse, pseudoinverse_for_structure, PINV_TOL};
use latentlab::mixture::{make_structure, MovieGenreMatrix, StructureSpec};
use latentlab::oracle::{exhaustive_min_inf_lambda, exhaustive_min_inf_row};
use latentlab::stream::derive_stream;
use latentlab::Error;
use proptest::prelude::*;
use rand::Rng;

fn random_matrix(rows: usize, cols: usize, seed: u64) -> MovieGenreMatrix {
    let mut rng = derive_stream(seed, 0);
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    MovieGenreMatrix::from_row_major(rows, cols, data).unwrap()
}

#[test]
fn matches_vertex_enumeration_on_small_instances() {
    let mut checked = 0;
    for seed in 0..60u64 {
        let rows = 2 + (seed as usize % 5);
        let cols = 1 + (seed as usize % 3).min(rows - 1);
        let a = random_matrix(rows, cols, seed);
        let p = low_variance_pseudoinverse(&a, PINV_TOL).unwrap();
        for j in 0..cols {
            let oracle = exhaustive_min_inf_row(&a, j).unwrap();
            assert!((p.row_lambdas[j] - oracle).abs() <= 1e-6, "seed {seed} row {j}: {} vs {oracle}", p.row_lambdas[j]);
        }
        assert!((p.lambda - exhaustive_min_inf_lambda(&a).unwrap()).abs() <= 1e-6);
        checked += 1;
    }
    assert_eq!(checked, 60);
}

#[test]
fn disjoint_k3_m2_is_indicator_and_optimal() {
    let s = make_structure(StructureSpec::DisjointPartition { num_movies: 6, k: 3 }, &mut derive_stream(2, 0)).unwrap();
    let a = MovieGenreMatrix::from_structure(&s);
    let p = pseudoinverse_for_structure(&s, PINV_TOL).unwrap();
    assert!(p.residual <= 1e-12);
    assert!((p.lambda - exhaustive_min_inf_lambda(&a).unwrap()).abs() <= 1e-9);
    for j in 0..3 {
        for i in 0..6 {
            let want = if s.genre(j).contains(&i) { 1.0 } else { 0.0 };
            assert!((p.get(j, i) - want).abs() <= 1e-9);
        }
    }
}

#[test]
fn structure_variants_have_small_residual() {
    let specs = [
        StructureSpec::SharedCore { m: 200, k: 20, p: 0.5 },
        StructureSpec::SharedCore { m: 200, k: 50, p: 0.3 },
        StructureSpec::DisjointPartition { num_movies: 120, k: 12 },
        StructureSpec::BoundedOverlap { num_movies: 400, m: 40, k: 12, delta: 0.1 },
    ];
    for (i, spec) in specs.into_iter().enumerate() {
        let s = make_structure(spec, &mut derive_stream(5, i as u64)).unwrap();
        let t0 = std::time::Instant::now();
        let p = pseudoinverse_for_structure(&s, PINV_TOL).unwrap();
        eprintln!("{spec:?}: lambda {} residual {:e} in {:?}", p.lambda, p.residual, t0.elapsed());
        assert!(p.residual <= PINV_TOL);
    }
}

#[test]
fn shared_core_lambda_is_one() {
    // optimal row: +1 on the core and own uniques, −1 on the other uniques
    let s = make_structure(StructureSpec::SharedCore { m: 200, k: 20, p: 0.5 }, &mut derive_stream(1, 0)).unwrap();
    let p = pseudoinverse_for_structure(&s, PINV_TOL).unwrap();
    assert!((p.lambda - 1.0).abs() <= 1e-9, "lambda {}", p.lambda);
}

#[test]
fn rank_one_structure_is_rejected() {
    let s = make_structure(StructureSpec::SharedCore { m: 5, k: 3, p: 1.0 }, &mut derive_stream(1, 0)).unwrap();
    assert!(matches!(pseudoinverse_for_structure(&s, PINV_TOL), Err(Error::RankDeficient { column: 1 })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn residual_within_tolerance(seed in 0u64..10_000, rows in 10usize..=50, cols in 1usize..=10) {
        let a = random_matrix(rows, cols, seed);
        let p = low_variance_pseudoinverse(&a, PINV_TOL).unwrap();
        prop_assert!(p.residual <= PINV_TOL);
        let max = p.entries.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        prop_assert_eq!(max, p.lambda);
    }
}
