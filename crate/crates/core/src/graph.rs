//! Nearest-neighbour graphs, block-model generators and the distinguisher
//! battery used to test what a neighbour graph reveals about genres.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::OverlapIndex;
use crate::domain::{GenreStructure, RatingSample, Variant};
use crate::error::{Error, Result};
use crate::stream::{derive_stream, stream_id, Stream};

pub const NS_GRAPH_A: u32 = 0x20;
pub const NS_GRAPH_B: u32 = 0x21;
/// Fewest graphs per class [`distinguish`] accepts.
pub const MIN_GRAPHS: usize = 50;
/// Fewest same-genre and cross-genre pairs [`verify_gsbm_bounds`] accepts.
pub const MIN_CONFORMING_PAIRS: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimpleGraph {
    n: usize,
    /// Sorted, `u < v`.
    edges: Vec<(u32, u32)>,
    communities: Option<Vec<u32>>,
}

impl SimpleGraph {
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>, communities: Option<Vec<u32>>) -> Result<Self> {
        let mut out = Vec::new();
        for (u, v) in edges {
            if u == v {
                return Err(Error::domain(format!("self-loop at {u}")));
            }
            if u.max(v) >= n {
                return Err(Error::Dimension { expected: n, found: u.max(v) + 1 });
            }
            out.push((u.min(v) as u32, u.max(v) as u32));
        }
        out.sort_unstable();
        out.dedup();
        if let Some(c) = &communities {
            Error::check_len(n, c.len())?;
        }
        Ok(SimpleGraph { n, edges: out, communities })
    }

    pub fn num_vertices(&self) -> usize {
        self.n
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn communities(&self) -> Option<&[u32]> {
        self.communities.as_deref()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        let key = (u.min(v) as u32, u.max(v) as u32);
        self.edges.binary_search(&key).is_ok()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.n];
        for &(u, v) in &self.edges {
            d[u as usize] += 1;
            d[v as usize] += 1;
        }
        d
    }

    /// Sorted neighbour lists.
    pub fn adjacency(&self) -> Vec<Vec<u32>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(u, v) in &self.edges {
            adj[u as usize].push(v);
            adj[v as usize].push(u);
        }
        for a in &mut adj {
            a.sort_unstable();
        }
        adj
    }

    pub fn is_subgraph_of(&self, other: &SimpleGraph) -> bool {
        self.n == other.n && self.edges.iter().all(|&(u, v)| other.edges.binary_search(&(u, v)).is_ok())
    }

    /// One `u v` line per edge, sorted.
    pub fn to_edge_list(&self) -> String {
        self.edges.iter().map(|(u, v)| format!("{u} {v}\n")).collect()
    }
}

/// Users joined when they share at least `tau` ratings. Overlaps are exact;
/// the inverted index only skips pairs with zero overlap.
pub fn nn_graph(samples: &[RatingSample], tau: usize) -> Result<SimpleGraph> {
    if tau == 0 {
        return Err(Error::domain("tau must be at least 1"));
    }
    let index = OverlapIndex::new(samples.iter());
    let rows: Vec<Vec<(usize, usize)>> = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            index.overlaps(s).into_iter().filter(|&(j, o)| j > i && o >= tau).map(|(j, _)| (i, j)).collect()
        })
        .collect();
    SimpleGraph::new(samples.len(), rows.into_iter().flatten(), None)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockParams {
    pub a: f64,
    pub b: f64,
    pub phi: f64,
    pub k: usize,
    pub n: usize,
}

impl BlockParams {
    /// Parameters given directly; `phi` is derived.
    pub fn new(a: f64, b: f64, k: usize, n: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) || b > a {
            return Err(Error::domain(format!("need 0 <= b <= a <= 1, got a={a}, b={b}")));
        }
        if k == 0 {
            return Err(Error::domain("k must be positive"));
        }
        Ok(BlockParams { a, b, phi: (a + (k as f64 - 1.0) * b) / k as f64, k, n })
    }
}

/// `a = τ (T²/m)^τ`, `b = ½ (p/2)^τ (T²/m)^τ`.
pub fn block_params(t: usize, m: usize, tau: usize, p: f64, k: usize, n: usize) -> Result<BlockParams> {
    let ratio = (t * t) as f64 / m as f64;
    if ratio >= 1.0 {
        return Err(Error::Regime(format!("T^2 = {} must be below m = {m}", t * t)));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("p must lie in (0, 1), got {p}")));
    }
    let tau_i = tau as i32;
    let a = (tau as f64 * ratio.powi(tau_i)).min(1.0);
    let b = 0.5 * (p / 2.0).powi(tau_i) * ratio.powi(tau_i);
    BlockParams::new(a, b, k, n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contiguity {
    pub holds: bool,
    pub lhs: f64,
    pub rhs: f64,
}

impl Contiguity {
    /// `rhs / lhs`; infinite when `lhs = 0`.
    pub fn margin(&self) -> f64 {
        self.rhs / self.lhs
    }
}

/// `N (a − b)² ≤ (a + (k−1) b) ln k`.
pub fn contiguity_condition(params: &BlockParams) -> Result<Contiguity> {
    if params.k < 2 {
        return Err(Error::domain("contiguity needs k >= 2"));
    }
    let lhs = params.n as f64 * (params.a - params.b).powi(2);
    let rhs = (params.a + (params.k as f64 - 1.0) * params.b) * (params.k as f64).ln();
    Ok(Contiguity { holds: lhs <= rhs, lhs, rhs })
}

fn check_prob(q: f64) -> Result<()> {
    if (0.0..=1.0).contains(&q) {
        Ok(())
    } else {
        Err(Error::domain(format!("probability {q} outside [0, 1]")))
    }
}

/// Communities uniform over `[k]`; edges independent with `q_in` / `q_out`.
pub fn sbm_sample<R: Rng + ?Sized>(n: usize, k: usize, q_in: f64, q_out: f64, rng: &mut R) -> Result<SimpleGraph> {
    check_prob(q_in)?;
    check_prob(q_out)?;
    if k == 0 {
        return Err(Error::domain("k must be positive"));
    }
    let communities: Vec<u32> = (0..n).map(|_| rng.random_range(0..k as u32)).collect();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let q = if communities[u] == communities[v] { q_in } else { q_out };
            if rng.random::<f64>() < q {
                edges.push((u, v));
            }
        }
    }
    SimpleGraph::new(n, edges, Some(communities))
}

pub fn er_sample<R: Rng + ?Sized>(n: usize, phi: f64, rng: &mut R) -> Result<SimpleGraph> {
    check_prob(phi)?;
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random::<f64>() < phi {
                edges.push((u, v));
            }
        }
    }
    SimpleGraph::new(n, edges, None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GsbmReport {
    /// Largest within-genre edge frequency over genres.
    pub max_in_prob: f64,
    /// Smallest cross-genre edge frequency over genre pairs.
    pub min_out_prob: f64,
    pub pooled_in_prob: f64,
    pub pooled_out_prob: f64,
    pub conforming_users: usize,
    pub in_pairs: usize,
    pub out_pairs: usize,
    pub a: f64,
    pub b: f64,
    /// Every genre cell within `a + 3σ` and every cross cell above `b − 3σ`.
    pub conforms: bool,
}

/// Edge frequencies of the `tau` neighbour graph among users whose core
/// count lies in `pT ± √(pT)·ln m`, per genre and per genre pair.
pub fn verify_gsbm_bounds(
    structure: &GenreStructure,
    users: &[(RatingSample, usize)],
    tau: usize,
    params: &BlockParams,
) -> Result<GsbmReport> {
    let Variant::SharedCore { p } = structure.variant() else {
        return Err(Error::domain("g-SBM bounds need a shared-core structure"));
    };
    let k = structure.num_genres();
    let m = structure.genre_size() as f64;
    let mut in_core = vec![false; structure.num_movies()];
    for c in structure.core() {
        in_core[c] = true;
    }
    let mut conforming = Vec::new();
    for (sample, g) in users {
        if *g >= k {
            return Err(Error::Dimension { expected: k, found: g + 1 });
        }
        let pt = p * sample.len() as f64;
        let slack = pt.sqrt() * m.ln();
        let core = sample.movie_ids().iter().filter(|&&x| in_core[x]).count() as f64;
        if (core - pt).abs() <= slack {
            conforming.push((sample.clone(), *g));
        }
    }
    let samples: Vec<RatingSample> = conforming.iter().map(|(s, _)| s.clone()).collect();
    let graph = nn_graph(&samples, tau)?;
    let mut size = vec![0usize; k];
    for (_, g) in &conforming {
        size[*g] += 1;
    }
    let mut hits = vec![0usize; k * k];
    for &(u, v) in graph.edges() {
        let (gu, gv) = (conforming[u as usize].1, conforming[v as usize].1);
        hits[gu.min(gv) * k + gu.max(gv)] += 1;
    }
    let (mut in_pairs, mut out_pairs, mut in_hits, mut out_hits) = (0, 0, 0, 0);
    let (mut max_in, mut min_out) = (0.0f64, f64::INFINITY);
    let mut conforms = true;
    let sigma = |q: f64, n: usize| (q * (1.0 - q) / n as f64).sqrt();
    for g in 0..k {
        for h in g..k {
            let pairs = if g == h { size[g] * size[g].saturating_sub(1) / 2 } else { size[g] * size[h] };
            if pairs == 0 {
                continue;
            }
            let freq = hits[g * k + h] as f64 / pairs as f64;
            if g == h {
                in_pairs += pairs;
                in_hits += hits[g * k + h];
                max_in = max_in.max(freq);
                conforms &= freq <= params.a + 3.0 * sigma(params.a, pairs);
            } else {
                out_pairs += pairs;
                out_hits += hits[g * k + h];
                min_out = min_out.min(freq);
                conforms &= freq >= params.b - 3.0 * sigma(params.b, pairs);
            }
        }
    }
    if in_pairs < MIN_CONFORMING_PAIRS || out_pairs < MIN_CONFORMING_PAIRS {
        return Err(Error::InsufficientData(format!(
            "{in_pairs} same-genre and {out_pairs} cross-genre conforming pairs, need {MIN_CONFORMING_PAIRS} of each"
        )));
    }
    Ok(GsbmReport {
        max_in_prob: max_in,
        min_out_prob: min_out,
        pooled_in_prob: in_hits as f64 / in_pairs as f64,
        pooled_out_prob: out_hits as f64 / out_pairs as f64,
        conforming_users: conforming.len(),
        in_pairs,
        out_pairs,
        a: params.a,
        b: params.b,
        conforms,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphStatistic {
    DegreeVariance,
    TriangleCount,
    TopEigenvalue,
}

impl GraphStatistic {
    pub const ALL: [GraphStatistic; 3] =
        [GraphStatistic::DegreeVariance, GraphStatistic::TriangleCount, GraphStatistic::TopEigenvalue];

    pub fn name(self) -> &'static str {
        match self {
            GraphStatistic::DegreeVariance => "degree_variance",
            GraphStatistic::TriangleCount => "triangle_count",
            GraphStatistic::TopEigenvalue => "top_eigenvalue",
        }
    }

    pub fn compute(self, g: &SimpleGraph) -> f64 {
        match self {
            GraphStatistic::DegreeVariance => degree_variance(g),
            GraphStatistic::TriangleCount => triangle_count(g) as f64,
            GraphStatistic::TopEigenvalue => top_centered_eigenvalue(g),
        }
    }
}

pub fn degree_variance(g: &SimpleGraph) -> f64 {
    let d = g.degrees();
    if d.is_empty() {
        return 0.0;
    }
    let n = d.len() as f64;
    let mean = d.iter().sum::<usize>() as f64 / n;
    d.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n
}

pub fn triangle_count(g: &SimpleGraph) -> u64 {
    let adj = g.adjacency();
    let mut count = 0u64;
    for &(u, v) in g.edges() {
        let (a, b) = (&adj[u as usize], &adj[v as usize]);
        let (mut i, mut j) = (a.partition_point(|&w| w <= v), b.partition_point(|&w| w <= v));
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    count += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
    }
    count
}

/// Largest eigenvalue of `A − φ̂ (J − I)`, with `φ̂` the edge density.
pub fn top_centered_eigenvalue(g: &SimpleGraph) -> f64 {
    let n = g.num_vertices();
    if n < 2 {
        return 0.0;
    }
    let phi = g.num_edges() as f64 / (n * (n - 1) / 2) as f64;
    let mut a = DMatrix::from_element(n, n, -phi);
    for i in 0..n {
        a[(i, i)] = 0.0;
    }
    for &(u, v) in g.edges() {
        a[(u as usize, v as usize)] = 1.0 - phi;
        a[(v as usize, u as usize)] = 1.0 - phi;
    }
    a.symmetric_eigenvalues().max()
}

/// `Pr[x > y] + ½ Pr[x = y]` for `x` from `xs` and `y` from `ys`.
pub fn mann_whitney_auc(xs: &[f64], ys: &[f64]) -> f64 {
    let mut sorted = ys.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut wins = 0.0;
    for &x in xs {
        let below = sorted.partition_point(|&y| y < x);
        let not_above = sorted.partition_point(|&y| y <= x);
        wins += below as f64 + 0.5 * (not_above - below) as f64;
    }
    wins / (xs.len() * ys.len()) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistinguishReport {
    /// Raw AUC of each statistic, model A scored as the positive class.
    pub aucs: Vec<(GraphStatistic, f64)>,
    /// `max(auc, 1 − auc)` of the best statistic.
    pub combined_auc: f64,
    pub n_graphs: usize,
}

/// Graph `i` of model A uses stream `(NS_GRAPH_A, i)` of `seed`, and
/// likewise for B.
pub fn distinguish<A, B>(gen_a: A, gen_b: B, n_graphs: usize, statistics: &[GraphStatistic], seed: u64) -> Result<DistinguishReport>
where
    A: Fn(&mut Stream) -> Result<SimpleGraph> + Sync,
    B: Fn(&mut Stream) -> Result<SimpleGraph> + Sync,
{
    if n_graphs < MIN_GRAPHS {
        return Err(Error::domain(format!("need at least {MIN_GRAPHS} graphs per class, got {n_graphs}")));
    }
    if statistics.is_empty() {
        return Err(Error::domain("no statistics requested"));
    }
    let score = |g: SimpleGraph| statistics.iter().map(|s| s.compute(&g)).collect::<Vec<f64>>();
    let a: Vec<Vec<f64>> = (0..n_graphs)
        .into_par_iter()
        .map(|i| gen_a(&mut derive_stream(seed, stream_id(NS_GRAPH_A, i as u64))).map(score))
        .collect::<Result<_>>()?;
    let b: Vec<Vec<f64>> = (0..n_graphs)
        .into_par_iter()
        .map(|i| gen_b(&mut derive_stream(seed, stream_id(NS_GRAPH_B, i as u64))).map(score))
        .collect::<Result<_>>()?;
    let mut aucs = Vec::new();
    let mut combined = 0.5f64;
    for (si, &stat) in statistics.iter().enumerate() {
        let xs: Vec<f64> = a.iter().map(|r| r[si]).collect();
        let ys: Vec<f64> = b.iter().map(|r| r[si]).collect();
        let auc = mann_whitney_auc(&xs, &ys);
        combined = combined.max(auc.max(1.0 - auc));
        aucs.push((stat, auc));
    }
    Ok(DistinguishReport { aucs, combined_auc: combined, n_graphs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ReplacementMode;

    fn set(ids: &[usize]) -> RatingSample {
        RatingSample::new(ids.to_vec(), ReplacementMode::Set).unwrap()
    }

    #[test]
    fn nn_graph_extremes() {
        let same = vec![set(&[1, 2, 3]); 4];
        for tau in 1..=3 {
            assert_eq!(nn_graph(&same, tau).unwrap().num_edges(), 6);
        }
        assert_eq!(nn_graph(&same, 4).unwrap().num_edges(), 0);
        let disjoint = vec![set(&[1]), set(&[2]), set(&[3])];
        assert_eq!(nn_graph(&disjoint, 1).unwrap().num_edges(), 0);
        assert!(nn_graph(&disjoint, 0).is_err());
    }

    #[test]
    fn block_param_examples() {
        let p = block_params(10, 10_000, 1, 0.5, 9, 100).unwrap();
        assert!((p.a - 0.01).abs() < 1e-15 && (p.b - 0.00125).abs() < 1e-15);
        assert!((p.phi - 0.02 / 9.0).abs() < 1e-15);
        assert!(block_params(10, 100, 1, 0.5, 9, 100).is_err());
        assert!(block_params(1, 1_000_000, 1, 1e-9, 2, 10).unwrap().b < 1e-9);
    }

    #[test]
    fn contiguity_examples() {
        let c = contiguity_condition(&BlockParams::new(0.01, 0.00125, 9, 100).unwrap()).unwrap();
        assert!(c.holds);
        assert!((c.lhs - 0.00765625).abs() < 1e-9 && (c.rhs - 0.02 * 9f64.ln()).abs() < 1e-12);
        assert!((c.rhs - 0.043944).abs() < 1e-6);
        assert!(contiguity_condition(&BlockParams::new(0.3, 0.3, 4, 1000).unwrap()).unwrap().holds);
        assert!(!contiguity_condition(&BlockParams::new(0.5, 0.01, 2, 10_000).unwrap()).unwrap().holds);
    }

    #[test]
    fn generator_extremes() {
        let mut rng = derive_stream(1, 0);
        assert_eq!(er_sample(30, 0.0, &mut rng).unwrap().num_edges(), 0);
        assert_eq!(er_sample(30, 1.0, &mut rng).unwrap().num_edges(), 435);
        let g = sbm_sample(40, 3, 1.0, 0.0, &mut rng).unwrap();
        let c = g.communities().unwrap();
        let expected: usize = (0..3u32)
            .map(|j| {
                let n = c.iter().filter(|&&x| x == j).count();
                n * n.saturating_sub(1) / 2
            })
            .sum();
        assert_eq!(g.num_edges(), expected);
        assert!(g.edges().iter().all(|&(u, v)| c[u as usize] == c[v as usize]));
    }

    #[test]
    fn statistics_on_small_graphs() {
        let k4 = SimpleGraph::new(4, [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)], None).unwrap();
        assert_eq!(triangle_count(&k4), 4);
        assert_eq!(degree_variance(&k4), 0.0);
        // complete graph centres to zero
        assert!(top_centered_eigenvalue(&k4).abs() < 1e-12);
        let star = SimpleGraph::new(4, [(0, 1), (0, 2), (0, 3)], None).unwrap();
        assert_eq!(triangle_count(&star), 0);
        assert!((degree_variance(&star) - 0.75).abs() < 1e-12);
        assert_eq!(star.to_edge_list(), "0 1\n0 2\n0 3\n");
        assert!(SimpleGraph::new(3, [(1, 1)], None).is_err());
    }

    #[test]
    fn auc_examples() {
        assert_eq!(mann_whitney_auc(&[2.0, 3.0], &[0.0, 1.0]), 1.0);
        assert_eq!(mann_whitney_auc(&[0.0], &[1.0]), 0.0);
        assert_eq!(mann_whitney_auc(&[1.0, 1.0], &[1.0]), 0.5);
    }

    #[test]
    fn distinguish_rejects_small_batches() {
        let g = |r: &mut Stream| er_sample(10, 0.5, r);
        assert!(distinguish(g, g, 10, &GraphStatistic::ALL, 0).is_err());
    }
}
