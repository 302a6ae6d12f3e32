use latentlab::domain::{RatingSample, ReplacementMode};
use latentlab::graph::{
    block_params, distinguish, er_sample, nn_graph, sbm_sample, verify_gsbm_bounds, GraphStatistic,
};
use latentlab::mixture::{make_structure, EmissionMode, MixtureModel, StructureSpec};
use latentlab::stream::{derive_stream, Stream};
use proptest::prelude::*;

#[test]
fn er_edge_count_is_binomial() {
    let pairs = 200.0 * 199.0 / 2.0;
    let sd = (pairs * 0.05 * 0.95f64).sqrt();
    for seed in 0..5 {
        let g = er_sample(200, 0.05, &mut derive_stream(seed, 0)).unwrap();
        assert!((g.num_edges() as f64 - pairs * 0.05).abs() <= 3.0 * sd, "seed {seed}: {}", g.num_edges());
    }
}

#[test]
fn sbm_block_rates_match_parameters() {
    let (q_in, q_out) = (0.2, 0.03);
    let g = sbm_sample(600, 4, q_in, q_out, &mut derive_stream(3, 0)).unwrap();
    let c = g.communities().unwrap();
    let (mut pin, mut pout) = (0usize, 0usize);
    for u in 0..600 {
        for v in u + 1..600 {
            if c[u] == c[v] {
                pin += 1;
            } else {
                pout += 1;
            }
        }
    }
    let (mut ein, mut eout) = (0usize, 0usize);
    for &(u, v) in g.edges() {
        if c[u as usize] == c[v as usize] {
            ein += 1;
        } else {
            eout += 1;
        }
    }
    let check = |e: usize, n: usize, q: f64| (e as f64 / n as f64 - q).abs() <= 3.0 * (q * (1.0 - q) / n as f64).sqrt();
    assert!(check(ein, pin, q_in) && check(eout, pout, q_out));
}

#[test]
fn block_model_mean_degree_matches_phi() {
    // m = 10^4, T = 40: a = 0.16, b = 0.02, k = 20
    let params = block_params(40, 10_000, 1, 0.5, 20, 2000).unwrap();
    let g = sbm_sample(params.n, params.k, params.a, params.b, &mut derive_stream(8, 0)).unwrap();
    let pairs = (params.n * (params.n - 1) / 2) as f64;
    // edge count variance is at most that of a binomial with the largest rate
    let sd = (pairs * params.a * (1.0 - params.a)).sqrt();
    let mean_degree = 2.0 * g.num_edges() as f64 / params.n as f64;
    let expected = (params.n - 1) as f64 * params.phi;
    assert!((mean_degree - expected).abs() <= 3.0 * 2.0 * sd / params.n as f64, "{mean_degree} vs {expected}");
}

#[test]
fn gsbm_report_is_deterministic_and_vacuous_for_tiny_core() {
    let run = |seed: u64| {
        let mut rng = derive_stream(seed, 0);
        let structure = make_structure(StructureSpec::SharedCore { m: 2000, k: 4, p: 0.005 }, &mut rng).unwrap();
        let model = MixtureModel::new(structure.clone(), 1, 20, EmissionMode::WithoutReplacement).unwrap();
        let users: Vec<(RatingSample, usize)> = (0..400)
            .map(|_| {
                let h = model.sample_user(&mut rng);
                (model.emit(&h, &mut rng).unwrap(), h.support()[0])
            })
            .collect();
        let params = block_params(20, 2000, 1, 0.005, 4, 400).unwrap();
        verify_gsbm_bounds(&structure, &users, 1, &params).unwrap()
    };
    let r = run(4);
    assert_eq!(r, run(4));
    assert!(r.b < 1e-3 && r.min_out_prob < 0.01, "{r:?}");
    assert!(r.conforms);
}

fn er(n: usize, phi: f64) -> impl Fn(&mut Stream) -> latentlab::Result<latentlab::graph::SimpleGraph> + Sync {
    move |r: &mut Stream| er_sample(n, phi, r)
}

#[test]
fn identical_models_are_not_distinguished() {
    let rep = distinguish(er(100, 0.05), er(100, 0.05), 200, &GraphStatistic::ALL, 1).unwrap();
    for (stat, auc) in &rep.aucs {
        assert!((0.4..=0.6).contains(auc), "{stat:?}: {auc}");
    }
}

#[test]
fn strong_community_structure_is_detected() {
    let n = 500;
    let (a, b) = (40.0 / n as f64, 4.0 / n as f64);
    let sbm = move |r: &mut Stream| sbm_sample(n, 2, a, b, r);
    let rep = distinguish(sbm, er(n, (a + b) / 2.0), 100, &[GraphStatistic::TopEigenvalue], 2).unwrap();
    assert!(rep.combined_auc >= 0.9, "{rep:?}");
}

#[test]
fn swapping_models_flips_auc() {
    let n = 100;
    let sbm = move |r: &mut Stream| sbm_sample(n, 2, 0.12, 0.06, r);
    let ab = distinguish(sbm, er(n, 0.09), 200, &GraphStatistic::ALL, 3).unwrap();
    let ba = distinguish(er(n, 0.09), sbm, 200, &GraphStatistic::ALL, 3).unwrap();
    for ((s, x), (_, y)) in ab.aucs.iter().zip(&ba.aucs) {
        assert!((x + y - 1.0).abs() <= 0.05, "{s:?}: {x} + {y}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn nn_graph_shrinks_with_tau(seed in 0u64..1000, n in 2usize..40, t in 1usize..8) {
        let mut rng = derive_stream(seed, 0);
        let samples: Vec<RatingSample> = (0..n)
            .map(|_| {
                let ids = rand::seq::index::sample(&mut rng, 20, t).into_vec();
                RatingSample::new(ids, ReplacementMode::Set).unwrap()
            })
            .collect();
        for tau in 1..t {
            let lo = nn_graph(&samples, tau).unwrap();
            let hi = nn_graph(&samples, tau + 1).unwrap();
            prop_assert!(hi.is_subgraph_of(&lo));
        }
    }
}
