//! Methods that work in raw rating space: overlap nearest neighbours, the
//! lookup-table classifier and a purely supervised overlap exploiter.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{LatentState, RatingSample};
use crate::error::{Error, Result};
use crate::oracle::binomial;
use num_traits::ToPrimitive;

#[derive(Debug, Clone, PartialEq)]
pub struct UserRecord {
    pub sample: RatingSample,
    /// Simulation-side truth. Predictors never read it.
    pub latent: Option<LatentState>,
    pub label: Option<i64>,
}

/// `Σ_movie min(count_a, count_b)`; for set-mode samples this is `|a ∩ b|`.
pub fn overlap(a: &RatingSample, b: &RatingSample) -> usize {
    let (x, y) = (a.movie_ids(), b.movie_ids());
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < x.len() && j < y.len() {
        match x[i].cmp(&y[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Inverted index from movie to the train users who rated it, for computing
/// a query's overlap with every train user in one pass over its postings.
#[derive(Debug, Clone)]
pub struct OverlapIndex {
    postings: HashMap<usize, Vec<(u32, u32)>>,
    user_runs: Vec<Vec<(usize, u32)>>,
}

impl OverlapIndex {
    pub fn new<'a>(samples: impl IntoIterator<Item = &'a RatingSample>) -> Self {
        let mut postings: HashMap<usize, Vec<(u32, u32)>> = HashMap::new();
        let mut user_runs = Vec::new();
        for (u, s) in samples.into_iter().enumerate() {
            let runs = s.runs();
            for &(movie, count) in &runs {
                postings.entry(movie).or_default().push((u as u32, count));
            }
            user_runs.push(runs);
        }
        OverlapIndex { postings, user_runs }
    }

    pub fn num_users(&self) -> usize {
        self.user_runs.len()
    }

    /// Nonzero overlaps with the query, ascending by user index.
    pub fn overlaps(&self, query: &RatingSample) -> Vec<(usize, usize)> {
        let mut acc: HashMap<u32, usize> = HashMap::new();
        for (movie, count) in query.runs() {
            if let Some(list) = self.postings.get(&movie) {
                for &(u, c) in list {
                    *acc.entry(u).or_insert(0) += c.min(count) as usize;
                }
            }
        }
        let mut out: Vec<(usize, usize)> = acc.into_iter().map(|(u, o)| (u as usize, o)).collect();
        out.sort_unstable();
        out
    }

    /// Users that rated `movie`.
    pub fn raters(&self, movie: usize) -> impl Iterator<Item = usize> + '_ {
        self.postings.get(&movie).into_iter().flatten().map(|&(u, _)| u as usize)
    }

    /// Largest overlap over all unordered pairs of indexed users.
    pub fn max_pairwise_overlap(&self) -> usize {
        let n = self.user_runs.len();
        let mut acc = vec![0usize; n];
        let mut touched = Vec::new();
        let mut best = 0;
        for (u, runs) in self.user_runs.iter().enumerate() {
            for (movie, count) in runs {
                for &(v, c) in &self.postings[movie] {
                    let v = v as usize;
                    if v > u {
                        if acc[v] == 0 {
                            touched.push(v);
                        }
                        acc[v] += c.min(*count) as usize;
                    }
                }
            }
            for &v in &touched {
                best = best.max(acc[v]);
                acc[v] = 0;
            }
            touched.clear();
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapHistogram {
    pub k: usize,
    /// `pmf_same[τ]`: overlap distribution of same-genre pairs.
    pub pmf_same: Vec<f64>,
    pub pmf_diff: Vec<f64>,
    pub same_pairs: usize,
    pub diff_pairs: usize,
}

impl OverlapHistogram {
    pub fn tail_same(&self, tau: usize) -> f64 {
        self.pmf_same.iter().skip(tau).sum()
    }

    pub fn tail_diff(&self, tau: usize) -> f64 {
        self.pmf_diff.iter().skip(tau).sum()
    }

    /// `Pr[diff | O ≥ τ] / Pr[same | O ≥ τ]` under the uniform genre prior
    /// `Pr[same] = 1/k`.
    pub fn ratio(&self, tau: usize) -> f64 {
        (self.k as f64 - 1.0) * self.tail_diff(tau) / self.tail_same(tau)
    }
}

/// The genre of an `s = 1` user.
fn genre_of(u: &UserRecord) -> Result<usize> {
    let h = u.latent.as_ref().ok_or_else(|| Error::domain("overlap histogram needs simulation-side latents"))?;
    match h.support().as_slice() {
        [g] => Ok(*g),
        _ => Err(Error::domain("overlap histogram needs single-genre users")),
    }
}

/// Overlap distributions over `pair_budget` uniformly random same-genre
/// pairs and as many uniformly random different-genre pairs.
pub fn overlap_histogram<R: Rng + ?Sized>(users: &[UserRecord], k: usize, pair_budget: usize, rng: &mut R) -> Result<OverlapHistogram> {
    if users.len() < 2 {
        return Err(Error::InsufficientData("need at least two users".into()));
    }
    let genres: Vec<usize> = users.iter().map(genre_of).collect::<Result<_>>()?;
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (u, &g) in genres.iter().enumerate() {
        if g >= k {
            return Err(Error::Dimension { expected: k, found: g + 1 });
        }
        groups[g].push(u);
    }
    let same_weight: Vec<f64> = groups.iter().map(|g| (g.len() * g.len().saturating_sub(1)) as f64 / 2.0).collect();
    let total_same: f64 = same_weight.iter().sum();
    let n = users.len();
    let total_pairs = (n * (n - 1)) as f64 / 2.0;
    if total_same == 0.0 || total_same == total_pairs {
        return Err(Error::InsufficientData("need both same-genre and different-genre pairs".into()));
    }
    let t_max = users.iter().map(|u| u.sample.len()).max().unwrap_or(0);
    let mut same = vec![0usize; t_max + 1];
    let mut diff = vec![0usize; t_max + 1];
    for _ in 0..pair_budget {
        let mut pick = rng.random::<f64>() * total_same;
        let mut g = 0;
        while g + 1 < k && pick >= same_weight[g] {
            pick -= same_weight[g];
            g += 1;
        }
        while same_weight[g] == 0.0 {
            g -= 1;
        }
        let members = &groups[g];
        let a = rng.random_range(0..members.len());
        let mut b = rng.random_range(0..members.len() - 1);
        if b >= a {
            b += 1;
        }
        same[overlap(&users[members[a]].sample, &users[members[b]].sample)] += 1;
    }
    let mut drawn = 0;
    while drawn < pair_budget {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a == b || genres[a] == genres[b] {
            continue;
        }
        diff[overlap(&users[a].sample, &users[b].sample)] += 1;
        drawn += 1;
    }
    let norm = |h: Vec<usize>| -> Vec<f64> {
        let total: usize = h.iter().sum();
        h.into_iter().map(|c| c as f64 / total.max(1) as f64).collect()
    };
    Ok(OverlapHistogram { k, pmf_same: norm(same), pmf_diff: norm(diff), same_pairs: pair_budget, diff_pairs: pair_budget })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Prediction {
    Label(i64),
    Abstain,
}

impl Prediction {
    /// Abstentions count as errors.
    pub fn is_correct(self, truth: i64) -> bool {
        self == Prediction::Label(truth)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KnnTask {
    /// Predict 1 iff some neighbour rated the movie.
    Movie(usize),
    /// Majority vote over neighbour labels.
    GenreLabel,
}

/// Neighbours are train users sharing at least `tau` ratings with the query.
/// Vote ties go to the numerically smaller label; no neighbours abstains.
pub fn knn_predict(train: &[UserRecord], query: &RatingSample, tau: usize, task: KnnTask) -> Result<Prediction> {
    if tau == 0 {
        return Err(Error::domain("tau must be at least 1"));
    }
    let neighbours: Vec<usize> = train
        .iter()
        .enumerate()
        .filter(|(_, u)| overlap(&u.sample, query) >= tau)
        .map(|(i, _)| i)
        .collect();
    Ok(vote(train, &neighbours, task))
}

/// [`knn_predict`] through a prebuilt index over `train`'s samples.
pub fn knn_predict_indexed(train: &[UserRecord], index: &OverlapIndex, query: &RatingSample, tau: usize, task: KnnTask) -> Result<Prediction> {
    if tau == 0 {
        return Err(Error::domain("tau must be at least 1"));
    }
    let neighbours: Vec<usize> = index.overlaps(query).into_iter().filter(|&(_, o)| o >= tau).map(|(u, _)| u).collect();
    Ok(vote(train, &neighbours, task))
}

fn vote(train: &[UserRecord], neighbours: &[usize], task: KnnTask) -> Prediction {
    match task {
        KnnTask::Movie(movie) => {
            let hit = neighbours.iter().any(|&u| train[u].sample.contains(movie));
            Prediction::Label(hit as i64)
        }
        KnnTask::GenreLabel => {
            let mut tally: BTreeMap<i64, usize> = BTreeMap::new();
            for &u in neighbours {
                if let Some(l) = train[u].label {
                    *tally.entry(l).or_insert(0) += 1;
                }
            }
            // BTreeMap iterates ascending, so the first maximum is the smallest label
            let mut best: Option<(i64, usize)> = None;
            for (l, c) in tally {
                if best.is_none_or(|(_, bc)| c > bc) {
                    best = Some((l, c));
                }
            }
            best.map_or(Prediction::Abstain, |(l, _)| Prediction::Label(l))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LargeTThresholds {
    /// `(1/s − 1/s²)·T²/m`.
    pub diff_max: f64,
    /// `(1/s)·T²/m`.
    pub same_min: f64,
}

pub fn larget_thresholds(s: usize, t: usize, m: usize) -> Result<LargeTThresholds> {
    if s == 0 || m == 0 {
        return Err(Error::domain("need s, m >= 1"));
    }
    let (s, t, m) = (s as f64, t as f64, m as f64);
    let base = t * t / m;
    Ok(LargeTThresholds { diff_max: (1.0 / s - 1.0 / (s * s)) * base, same_min: base / s })
}

/// Exact-match table from latent support to label.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LookupTable {
    table: HashMap<Vec<usize>, i64>,
}

impl LookupTable {
    pub fn fit(latents: &[LatentState], labels: &[i64]) -> Result<Self> {
        Error::check_len(latents.len(), labels.len())?;
        let mut table = HashMap::new();
        for (h, &l) in latents.iter().zip(labels) {
            if let Some(prev) = table.insert(h.support(), l) {
                if prev != l {
                    return Err(Error::DataInconsistency(format!(
                        "latent {:?} seen with labels {prev} and {l}",
                        h.support()
                    )));
                }
            }
        }
        Ok(LookupTable { table })
    }

    pub fn predict(&self, h: &LatentState) -> Prediction {
        self.table.get(&h.support()).map_or(Prediction::Abstain, |&l| Prediction::Label(l))
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    /// Fraction of the `C(k, s)` latent space seen.
    pub fn coverage(&self, k: usize, s: usize) -> f64 {
        self.table.len() as f64 / binomial(k, s).to_f64().unwrap_or(f64::INFINITY)
    }
}

/// A predictor that sees only raw rating samples and labels.
pub trait RawPredictor {
    fn fit(&mut self, train: &[(RatingSample, i8)]) -> Result<()>;
    fn predict(&self, query: &RatingSample) -> i8;
}

/// Copies the majority label of train users sharing a movie with the query,
/// falling back to the global majority. Label ties resolve to −1.
#[derive(Debug, Clone, Default)]
pub struct OverlapExploiter {
    train: Vec<(RatingSample, i8)>,
    index: Option<OverlapIndex>,
    global: i8,
}

fn majority(votes: impl Iterator<Item = i8>) -> Option<i8> {
    let (mut pos, mut neg) = (0usize, 0usize);
    for v in votes {
        if v > 0 {
            pos += 1;
        } else {
            neg += 1;
        }
    }
    match pos + neg {
        0 => None,
        _ if pos > neg => Some(1),
        _ => Some(-1),
    }
}

impl RawPredictor for OverlapExploiter {
    fn fit(&mut self, train: &[(RatingSample, i8)]) -> Result<()> {
        if train.is_empty() {
            return Err(Error::InsufficientData("empty train set".into()));
        }
        self.global = majority(train.iter().map(|(_, l)| *l)).expect("nonempty");
        self.index = Some(OverlapIndex::new(train.iter().map(|(s, _)| s)));
        self.train = train.to_vec();
        Ok(())
    }

    fn predict(&self, query: &RatingSample) -> i8 {
        let Some(index) = &self.index else { return self.global };
        let hits = index.overlaps(query);
        majority(hits.iter().map(|&(u, _)| self.train[u].1)).unwrap_or(self.global)
    }
}

/// One-shot [`OverlapExploiter`] prediction.
pub fn supervised_baseline(train: &[(RatingSample, i8)], query: &RatingSample) -> Result<i8> {
    let mut p = OverlapExploiter::default();
    p.fit(train)?;
    Ok(p.predict(query))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ReplacementMode;

    fn set(ids: &[usize]) -> RatingSample {
        RatingSample::new(ids.to_vec(), ReplacementMode::Set).unwrap()
    }

    fn record(ids: &[usize], label: i64) -> UserRecord {
        UserRecord { sample: set(ids), latent: None, label: Some(label) }
    }

    #[test]
    fn overlap_examples() {
        assert_eq!(overlap(&set(&[1, 2, 3]), &set(&[2, 3, 5])), 2);
        assert_eq!(overlap(&set(&[1, 2]), &set(&[3, 4])), 0);
        assert_eq!(overlap(&set(&[4, 7, 9]), &set(&[4, 7, 9])), 3);
        let a = RatingSample::new(vec![1, 1, 2], ReplacementMode::Multiset).unwrap();
        let b = RatingSample::new(vec![1, 1, 1, 3], ReplacementMode::Multiset).unwrap();
        assert_eq!(overlap(&a, &b), 2);
    }

    #[test]
    fn index_agrees_with_direct_overlap() {
        let samples = [set(&[1, 2, 3]), set(&[3, 4]), set(&[5])];
        let idx = OverlapIndex::new(samples.iter());
        assert_eq!(idx.overlaps(&set(&[2, 3, 9])), vec![(0, 2), (1, 1)]);
        assert_eq!(idx.max_pairwise_overlap(), 1);
    }

    #[test]
    fn knn_examples() {
        let train = vec![record(&[1, 2, 3], 1), record(&[7, 8, 9], -1)];
        assert_eq!(knn_predict(&train, &set(&[1, 2, 3]), 3, KnnTask::GenreLabel).unwrap(), Prediction::Label(1));
        assert_eq!(knn_predict(&train, &set(&[4, 5, 6]), 1, KnnTask::GenreLabel).unwrap(), Prediction::Abstain);
        assert_eq!(knn_predict(&train, &set(&[1, 2, 9]), 2, KnnTask::Movie(3)).unwrap(), Prediction::Label(1));
        assert_eq!(knn_predict(&train, &set(&[1, 2, 9]), 2, KnnTask::Movie(8)).unwrap(), Prediction::Label(0));
        // tie between labels 1 and −1 goes to −1
        assert_eq!(knn_predict(&train, &set(&[1, 9]), 1, KnnTask::GenreLabel).unwrap(), Prediction::Label(-1));
        assert!(knn_predict(&train, &set(&[1]), 0, KnnTask::GenreLabel).is_err());
    }

    #[test]
    fn threshold_arithmetic() {
        let t = larget_thresholds(2, 10, 100).unwrap();
        assert_eq!((t.diff_max, t.same_min), (0.25, 0.5));
        assert_eq!(larget_thresholds(1, 10, 100).unwrap().diff_max, 0.0);
        let t = larget_thresholds(3, 30, 300).unwrap();
        assert!((t.diff_max - 2.0 / 3.0).abs() < 1e-12 && (t.same_min - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lookup_examples() {
        let e = |j| LatentState::binary_from_support(2, &[j]).unwrap();
        let t = LookupTable::fit(&[e(0), e(1), e(0)], &[1, -1, 1]).unwrap();
        assert_eq!(t.predict(&e(0)), Prediction::Label(1));
        assert_eq!(t.predict(&e(1)), Prediction::Label(-1));
        assert_eq!(t.coverage(2, 1), 1.0);
        let partial = LookupTable::fit(&[e(0)], &[1]).unwrap();
        assert_eq!(partial.predict(&e(1)), Prediction::Abstain);
        assert!(LookupTable::fit(&[e(0), e(0)], &[1, -1]).is_err());
    }

    #[test]
    fn supervised_examples() {
        let train = vec![(set(&[1, 2, 3]), 1i8), (set(&[4, 5, 6]), -1), (set(&[7, 8, 9]), -1)];
        assert_eq!(supervised_baseline(&train, &set(&[3, 10, 11])).unwrap(), 1);
        assert_eq!(supervised_baseline(&train, &set(&[20, 21, 22])).unwrap(), -1);
        assert!(supervised_baseline(&[], &set(&[1])).is_err());
    }
}
