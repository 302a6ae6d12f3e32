use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::{Csv, Seed};
use super::{Outcome, NS_PARAMS, NS_QUERIES, NS_STRUCTURE, NS_USERS};
use crate::baselines::{OverlapExploiter, OverlapIndex, RawPredictor};
use crate::domain::RatingSample;
use crate::error::Result;
use crate::mixture::{balanced_single_genre_hyperplane, label_hyperplane, make_structure, EmissionMode, MixtureModel, StructureSpec};
use crate::stream::{derive_stream, stream_id, Stream};

fn without_replacement() -> EmissionMode {
    EmissionMode::WithoutReplacement
}

/// `supervised-lower-bound`: disjoint genres, hyperplane labels, and a
/// predictor that only sees raw ratings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupervisedConfig {
    pub seed: Seed,
    pub num_movies: usize,
    pub k: usize,
    pub s: usize,
    /// Ratings per user.
    pub t: usize,
    /// Labelled train users.
    pub train: usize,
    pub queries: usize,
    #[serde(default = "without_replacement")]
    pub emission: EmissionMode,
}

pub(super) fn run(cfg: &SupervisedConfig) -> Result<Outcome> {
    let seed = cfg.seed.0;
    let structure =
        make_structure(StructureSpec::DisjointPartition { num_movies: cfg.num_movies, k: cfg.k }, &mut derive_stream(seed, stream_id(NS_STRUCTURE, 0)))?;
    let model = MixtureModel::new(structure, cfg.s, cfg.t, cfg.emission)?;
    let w = balanced_single_genre_hyperplane(cfg.k, &mut derive_stream(seed, stream_id(NS_PARAMS, 0)))?;
    let draw = |rng: &mut Stream| -> Result<(RatingSample, i8)> {
        let h = model.sample_user(rng);
        let label = label_hyperplane(&w, &h)?;
        Ok((model.emit(&h, rng)?, label))
    };
    let train: Vec<(RatingSample, i8)> =
        (0..cfg.train).map(|i| draw(&mut derive_stream(seed, stream_id(NS_USERS, i as u64)))).collect::<Result<_>>()?;
    let mut predictor = OverlapExploiter::default();
    predictor.fit(&train)?;
    let index = OverlapIndex::new(train.iter().map(|(x, _)| x));
    let outcomes: Vec<(bool, bool)> = (0..cfg.queries)
        .into_par_iter()
        .map(|j| {
            let (x, l) = draw(&mut derive_stream(seed, stream_id(NS_QUERIES, j as u64)))?;
            Ok((predictor.predict(&x) == l, !index.overlaps(&x).is_empty()))
        })
        .collect::<Result<_>>()?;
    let correct = outcomes.iter().filter(|o| o.0).count();
    let overlapping = outcomes.iter().filter(|o| o.1).count();
    let accuracy = correct as f64 / cfg.queries.max(1) as f64;
    let bound_term = (cfg.s * cfg.train * cfg.t * cfg.t) as f64 / cfg.k as f64;

    let mut csv = Csv::new(&["train", "queries", "correct", "accuracy", "overlapping_queries", "stT2_over_k"]);
    csv.row(&[cfg.train.into(), cfg.queries.into(), correct.into(), accuracy.into(), overlapping.into(), bound_term.into()]);
    let results = json!({
        "accuracy": accuracy,
        "correct": correct,
        "overlapping_queries": overlapping,
        "stT2_over_k": bound_term,
        "train_positive": train.iter().filter(|(_, l)| *l > 0).count(),
    });
    Ok(Outcome { csv: csv.into_string(), results })
}
