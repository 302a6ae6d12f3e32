use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::{Csv, Real, Seed};
use super::{to_value, Outcome, NS_PAIRS, NS_QUERIES, NS_STRUCTURE, NS_USERS};
use crate::baselines::{knn_predict_indexed, larget_thresholds, overlap, overlap_histogram, KnnTask, OverlapIndex, UserRecord};
use crate::domain::GenreStructure;
use crate::error::{Error, Result};
use crate::mixture::{label_likes_movie, make_structure, EmissionMode, MixtureModel, StructureSpec};
use crate::stream::{child_seed, derive_stream, stream_id, Stream};

fn one() -> usize {
    1
}

fn without_replacement() -> EmissionMode {
    EmissionMode::WithoutReplacement
}

/// `nn-separation-small-T`: shared-core genres, single-genre users.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmallTConfig {
    pub seed: Seed,
    pub m: usize,
    pub t: usize,
    pub p: Real,
    pub k_values: Vec<usize>,
    pub n_users: usize,
    /// Independent user populations scanned for the largest pairwise overlap.
    pub runs: usize,
    pub overlap_cap: usize,
    pub pair_budget: usize,
    #[serde(default = "one")]
    pub tau: usize,
    #[serde(default = "without_replacement")]
    pub emission: EmissionMode,
}

fn population(model: &MixtureModel, n: usize, rng: &mut Stream) -> Result<Vec<UserRecord>> {
    (0..n)
        .map(|_| {
            let h = model.sample_user(rng);
            let sample = model.emit(&h, rng)?;
            Ok(UserRecord { sample, latent: Some(h), label: None })
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct SmallTRow {
    k: usize,
    tau: usize,
    same_tail: f64,
    diff_tail: f64,
    ratio: f64,
    ratio_floor: f64,
    runs: usize,
    runs_within_cap: usize,
    max_overlap: usize,
}

pub(super) fn run_small_t(cfg: &SmallTConfig) -> Result<Outcome> {
    if cfg.runs == 0 || cfg.k_values.is_empty() {
        return Err(Error::domain("need at least one run and one k"));
    }
    let mut rows = Vec::new();
    for (ki, &k) in cfg.k_values.iter().enumerate() {
        let kseed = child_seed(cfg.seed.0, ki as u64);
        let structure =
            make_structure(StructureSpec::SharedCore { m: cfg.m, k, p: cfg.p.0 }, &mut derive_stream(kseed, stream_id(NS_STRUCTURE, 0)))?;
        let model = MixtureModel::new(structure, 1, cfg.t, cfg.emission)?;
        let maxima: Vec<usize> = (0..cfg.runs)
            .into_par_iter()
            .map(|r| {
                let users = population(&model, cfg.n_users, &mut derive_stream(kseed, stream_id(NS_USERS, r as u64)))?;
                Ok(OverlapIndex::new(users.iter().map(|u| &u.sample)).max_pairwise_overlap())
            })
            .collect::<Result<_>>()?;
        let users = population(&model, cfg.n_users, &mut derive_stream(kseed, stream_id(NS_USERS, 0)))?;
        let hist = overlap_histogram(&users, k, cfg.pair_budget, &mut derive_stream(kseed, stream_id(NS_PAIRS, 0)))?;
        rows.push(SmallTRow {
            k,
            tau: cfg.tau,
            same_tail: hist.tail_same(cfg.tau),
            diff_tail: hist.tail_diff(cfg.tau),
            ratio: hist.ratio(cfg.tau),
            ratio_floor: k as f64 / 4.0,
            runs: cfg.runs,
            runs_within_cap: maxima.iter().filter(|&&o| o <= cfg.overlap_cap).count(),
            max_overlap: maxima.iter().copied().max().unwrap_or(0),
        });
    }
    let mut csv = Csv::new(&["k", "tau", "same_tail", "diff_tail", "ratio", "ratio_floor", "runs", "runs_within_cap", "max_overlap"]);
    for r in &rows {
        csv.row(&[
            r.k.into(),
            r.tau.into(),
            r.same_tail.into(),
            r.diff_tail.into(),
            r.ratio.into(),
            r.ratio_floor.into(),
            r.runs.into(),
            r.runs_within_cap.into(),
            r.max_overlap.into(),
        ]);
    }
    let ratios: Vec<f64> = rows.iter().map(|r| r.ratio).collect();
    let results = json!({
        "ratio_increasing": ratios.windows(2).all(|w| w[1] > w[0]),
        "ratio_above_floor": rows.iter().all(|r| r.ratio >= r.ratio_floor),
        "rows": to_value(&rows),
    });
    Ok(Outcome { csv: csv.into_string(), results })
}

fn point_eight() -> Real {
    Real(0.8)
}

fn one_point_two() -> Real {
    Real(1.2)
}

/// `nn-separation-large-T`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LargeTConfig {
    pub seed: Seed,
    pub structure: StructureSpec,
    pub s: usize,
    pub t: usize,
    /// Pairs of each kind.
    pub pairs: usize,
    pub n_train: usize,
    pub queries: usize,
    /// Neighbour threshold is `ceil(tau_factor · T²/(s m))`.
    #[serde(default = "point_eight")]
    pub tau_factor: Real,
    #[serde(default = "point_eight")]
    pub same_factor: Real,
    #[serde(default = "one_point_two")]
    pub diff_factor: Real,
    #[serde(default = "without_replacement")]
    pub emission: EmissionMode,
}

struct Pair {
    same: bool,
    overlap: usize,
}

fn draw_pair(model: &MixtureModel, same: bool, rng: &mut Stream) -> Result<Pair> {
    let a = model.sample_user(rng);
    let b = if same {
        a.clone()
    } else {
        loop {
            let b = model.sample_user(rng);
            if b.support() != a.support() {
                break b;
            }
        }
    };
    let (x, y) = (model.emit(&a, rng)?, model.emit(&b, rng)?);
    Ok(Pair { same, overlap: overlap(&x, &y) })
}

/// Half the queries target an unrated movie inside the user's genres, the
/// other half a movie outside them.
fn draw_query(model: &MixtureModel, structure: &GenreStructure, rng: &mut Stream) -> Result<(crate::domain::RatingSample, usize, u8)> {
    let h = model.sample_user(rng);
    let x = model.emit(&h, rng)?;
    let union = structure.union_of(&h.support());
    let candidates: Vec<usize> = if rng.random_bool(0.5) {
        union.iter().copied().filter(|&v| !x.contains(v)).collect()
    } else {
        (0..structure.num_movies()).filter(|v| union.binary_search(v).is_err()).collect()
    };
    if candidates.is_empty() {
        return Err(Error::domain("no candidate target movie for a query"));
    }
    let target = candidates[rng.random_range(0..candidates.len())];
    let truth = label_likes_movie(structure, &h, target)?;
    Ok((x, target, truth))
}

pub(super) fn run_large_t(cfg: &LargeTConfig) -> Result<Outcome> {
    let seed = cfg.seed.0;
    let structure = make_structure(cfg.structure, &mut derive_stream(seed, stream_id(NS_STRUCTURE, 0)))?;
    let model = MixtureModel::new(structure.clone(), cfg.s, cfg.t, cfg.emission)?;
    let m = structure.genre_size();
    let th = larget_thresholds(cfg.s, cfg.t, m)?;
    let same_bound = cfg.same_factor.0 * th.same_min;
    let diff_bound = cfg.diff_factor.0 * th.diff_max;

    let pairs: Vec<Pair> = (0..2 * cfg.pairs)
        .into_par_iter()
        .map(|i| draw_pair(&model, i % 2 == 0, &mut derive_stream(seed, stream_id(NS_PAIRS, i as u64))))
        .collect::<Result<_>>()?;
    let within = |p: &Pair| if p.same { p.overlap as f64 >= same_bound } else { p.overlap as f64 <= diff_bound };

    let train: Vec<UserRecord> = (0..cfg.n_train)
        .into_par_iter()
        .map(|i| {
            let rng = &mut derive_stream(seed, stream_id(NS_USERS, i as u64));
            let h = model.sample_user(rng);
            Ok(UserRecord { sample: model.emit(&h, rng)?, latent: None, label: None })
        })
        .collect::<Result<_>>()?;
    let index = OverlapIndex::new(train.iter().map(|u| &u.sample));
    let tau = ((cfg.tau_factor.0 * th.same_min).ceil() as usize).max(1);
    let outcomes: Vec<(bool, usize)> = (0..cfg.queries)
        .into_par_iter()
        .map(|j| {
            let rng = &mut derive_stream(seed, stream_id(NS_QUERIES, j as u64));
            let (x, target, truth) = draw_query(&model, &structure, rng)?;
            let pred = knn_predict_indexed(&train, &index, &x, tau, KnnTask::Movie(target))?;
            let neighbours = index.overlaps(&x).iter().filter(|&&(_, o)| o >= tau).count();
            Ok((pred.is_correct(truth as i64), neighbours))
        })
        .collect::<Result<_>>()?;

    let mut csv = Csv::new(&["pair", "kind", "overlap", "bound", "within_bound"]);
    for (i, p) in pairs.iter().enumerate() {
        let (kind, bound) = if p.same { ("same", same_bound) } else { ("different", diff_bound) };
        csv.row(&[i.into(), kind.into(), p.overlap.into(), bound.into(), within(p).into()]);
    }
    let frac = |same: bool| {
        let sel: Vec<&Pair> = pairs.iter().filter(|p| p.same == same).collect();
        sel.iter().filter(|p| within(p)).count() as f64 / sel.len().max(1) as f64
    };
    let mean = |same: bool| {
        let sel: Vec<f64> = pairs.iter().filter(|p| p.same == same).map(|p| p.overlap as f64).collect();
        sel.iter().sum::<f64>() / sel.len().max(1) as f64
    };
    let correct = outcomes.iter().filter(|o| o.0).count();
    let results = json!({
        "same_min": th.same_min,
        "diff_max": th.diff_max,
        "same_bound": same_bound,
        "diff_bound": diff_bound,
        "same_frac_within": frac(true),
        "diff_frac_within": frac(false),
        "same_mean_overlap": mean(true),
        "diff_mean_overlap": mean(false),
        "max_genre_intersection": structure.max_pairwise_intersection(),
        "knn_tau": tau,
        "knn_accuracy": correct as f64 / cfg.queries.max(1) as f64,
        "knn_mean_neighbours": outcomes.iter().map(|o| o.1 as f64).sum::<f64>() / cfg.queries.max(1) as f64,
    });
    Ok(Outcome { csv: csv.into_string(), results })
}
