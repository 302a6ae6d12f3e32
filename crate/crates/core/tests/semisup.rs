use latentlab::domain::LatentState;
use latentlab::mixture::{balanced_single_genre_hyperplane, sample_user};
use latentlab::semisup::{bound_terms, hinge_minimize, hinge_objective, semisup_experiment, SemisupSettings};
use latentlab::stream::derive_stream;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn unit_features(t: usize, d: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<i8>) {
    let mut rng = derive_stream(seed, 0);
    let x = (0..t)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            v.into_iter().map(|a| a / n).collect()
        })
        .collect();
    let y = (0..t).map(|_| if rng.random_bool(0.5) { 1 } else { -1 }).collect();
    (x, y)
}

/// Minimum over the disk of radius `rho` on a square grid of spacing `h`.
fn grid_minimum(x: &[Vec<f64>], y: &[i8], rho: f64, h: f64) -> f64 {
    let steps = (rho / h).round() as i64;
    let mut best = f64::INFINITY;
    for i in -steps..=steps {
        for j in -steps..=steps {
            let w = [i as f64 * h, j as f64 * h];
            if w[0] * w[0] + w[1] * w[1] <= rho * rho {
                best = best.min(hinge_objective(x, y, &w));
            }
        }
    }
    best
}

#[test]
fn random_labels_cannot_be_fit_in_the_unit_ball() {
    for seed in 0..3 {
        let (x, y) = unit_features(100, 2, seed);
        let c = hinge_minimize(&x, &y, 1.0, 1e-6, 200_000, seed).unwrap();
        let grid = grid_minimum(&x, &y, 1.0, 1e-3);
        // the grid only samples the disk, so it bounds the optimum from above
        assert!(c.objective <= grid + 1e-6, "seed {seed}: {} vs grid {grid}", c.objective);
        assert!(grid - c.objective <= 2e-3, "seed {seed}: {} vs grid {grid}", c.objective);
        assert!(c.objective >= 0.5);
    }
}

#[test]
fn perfect_encoder_separates_after_2k_labels() {
    let k = 10;
    let mut rng = derive_stream(4, 1);
    let w_true = balanced_single_genre_hyperplane(k, &mut rng).unwrap();
    let settings = SemisupSettings {
        t_values: vec![0, 2 * k, 4 * k],
        n_test: 400,
        rho: 5.0,
        delta: 0.05,
        gamma_tolerance: 1e-9,
        tol: 1e-4,
        budget: 200_000,
        features: Default::default(),
    };
    let generate = |r: &mut latentlab::stream::Stream| -> latentlab::Result<(LatentState, Vec<f64>)> {
        let h = sample_user(k, 1, r)?;
        let v = h.to_vec();
        Ok((h, v))
    };
    let curve = semisup_experiment(generate, |v: &Vec<f64>| Ok(v.clone()), &w_true, &settings, 9).unwrap();
    // constant prediction at t = 0 under a balanced hyperplane
    let sigma = (0.25f64 / 400.0).sqrt();
    assert!((curve[0].test_error - 0.5).abs() <= 3.0 * sigma + 0.05, "t=0 error {}", curve[0].test_error);
    assert!(curve[0].bounds.is_none());
    for p in &curve[1..] {
        assert_eq!(p.realized_beta, Some(1.0));
        assert!(p.test_error <= 0.1, "t={} error {}", p.t, p.test_error);
        assert!(p.test_error <= p.bounds.unwrap().total());
    }
    assert_eq!(curve[2].test_error, 0.0);
}

#[test]
fn bound_terms_match_rederivation() {
    let mut rng = derive_stream(11, 0);
    for _ in 0..100 {
        let beta = rng.random_range(0.01..=1.0);
        let gamma = rng.random_range(0.0..2.0);
        let rho = rng.random_range(0.1..10.0);
        let b = rng.random_range(0.0..10.0);
        let t = rng.random_range(1..100_000) as f64;
        let delta = rng.random_range(0.001..0.999);
        let bt = bound_terms(beta, gamma, rho, b, t, delta).unwrap();
        let l = -f64::ln(delta);
        let bad = if beta < 1.0 { (1.0 - beta) * rho * b + (rho * b) * ((1.0 - beta) * l / t).sqrt() } else { 0.0 };
        let good = (beta * rho * gamma) * (1.0 - (l / (beta * t)).sqrt()).max(0.0);
        assert!((bt.c_t - (bad + good)).abs() <= 1e-12 * (1.0 + bad + good));
        assert!((bt.r_t - (rho * rho / t).sqrt()).abs() <= 1e-15);
        assert!((bt.e_t - (l / t).sqrt()).abs() <= 1e-15);
        assert!(bt.c_t >= 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn returned_classifier_is_feasible_and_beats_random_points(seed in 0u64..1000, t in 5usize..60, d in 1usize..6, rho in 0.2f64..5.0) {
        let (x, y) = unit_features(t, d, seed);
        let c = hinge_minimize(&x, &y, rho, 1e-4, 200_000, seed).unwrap();
        let n = c.w.iter().map(|a| a * a).sum::<f64>().sqrt();
        prop_assert!(n <= rho * (1.0 + 1e-9));
        prop_assert!((hinge_objective(&x, &y, &c.w) - c.objective).abs() <= 1e-12);
        let mut rng = derive_stream(seed, 7);
        for _ in 0..20 {
            let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let vn = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            let r = rho * rng.random::<f64>().powf(1.0 / d as f64);
            let w: Vec<f64> = v.iter().map(|a| a * r / vn).collect();
            prop_assert!(c.objective <= hinge_objective(&x, &y, &w) + 1e-12);
        }
    }
}
