use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::{Csv, Real, Seed};
use super::{to_value, Outcome, NS_STRUCTURE, NS_USERS};
use crate::domain::RatingSample;
use crate::error::{Error, Result};
use crate::graph::{
    block_params, contiguity_condition, distinguish, er_sample, nn_graph, sbm_sample, verify_gsbm_bounds, BlockParams,
    DistinguishReport, GraphStatistic,
};
use crate::mixture::{make_structure, EmissionMode, MixtureModel, StructureSpec};
use crate::stream::{child_seed, derive_stream, stream_id, Stream};

/// Block parameters from the neighbour-graph formulas.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContiguityRegime {
    pub m: usize,
    pub t: usize,
    pub tau: usize,
    pub p: Real,
    pub k: usize,
    /// Defaults to `round((m/T²)^τ)`.
    #[serde(default)]
    pub n: Option<usize>,
}

/// Block parameters placed `factor` times past the contiguity threshold:
/// `N (a−b)² = factor · k φ ln k` at edge density `phi`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViolatingRegime {
    pub n: usize,
    pub k: usize,
    pub phi: Real,
    pub factor: Real,
}

/// Neighbour graph of simulated single-genre users.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GsbmCheck {
    pub m: usize,
    pub t: usize,
    pub p: Real,
    pub k: usize,
    pub n: usize,
    pub tau: usize,
}

fn all_statistics() -> Vec<GraphStatistic> {
    GraphStatistic::ALL.to_vec()
}

/// `manifold-detect`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifoldConfig {
    pub seed: Seed,
    pub n_graphs: usize,
    pub contiguity: ContiguityRegime,
    pub violating: ViolatingRegime,
    pub gsbm: GsbmCheck,
    #[serde(default = "all_statistics")]
    pub statistics: Vec<GraphStatistic>,
}

impl ManifoldConfig {
    pub fn resolved(mut self) -> Result<Self> {
        let c = &mut self.contiguity;
        if c.n.is_none() {
            let base = c.m as f64 / (c.t * c.t) as f64;
            c.n = Some(base.powi(c.tau as i32).round() as usize);
        }
        Ok(self)
    }
}

fn violating_params(v: &ViolatingRegime) -> Result<BlockParams> {
    if v.k < 2 {
        return Err(Error::domain("violating regime needs k >= 2"));
    }
    let k = v.k as f64;
    let delta = (v.factor.0 * k * v.phi.0 * k.ln() / v.n as f64).sqrt();
    BlockParams::new(v.phi.0 + (k - 1.0) * delta / k, v.phi.0 - delta / k, v.k, v.n)
}

fn battery(params: &BlockParams, cfg: &ManifoldConfig, seed: u64) -> Result<DistinguishReport> {
    let p = *params;
    let sbm = move |r: &mut Stream| sbm_sample(p.n, p.k, p.a, p.b, r);
    let er = move |r: &mut Stream| er_sample(p.n, p.phi, r);
    distinguish(sbm, er, cfg.n_graphs, &cfg.statistics, seed)
}

pub(super) fn run(cfg: &ManifoldConfig) -> Result<Outcome> {
    let seed = cfg.seed.0;
    let c = &cfg.contiguity;
    let n = c.n.ok_or_else(|| Error::domain("contiguity.n unresolved"))?;
    let contiguous = block_params(c.t, c.m, c.tau, c.p.0, c.k, n)?;
    let contiguous_cond = contiguity_condition(&contiguous)?;
    let contiguous_rep = battery(&contiguous, cfg, child_seed(seed, 0))?;

    let violating = violating_params(&cfg.violating)?;
    let violating_cond = contiguity_condition(&violating)?;
    let violating_rep = battery(&violating, cfg, child_seed(seed, 1))?;

    let g = &cfg.gsbm;
    let gseed = child_seed(seed, 2);
    let structure =
        make_structure(StructureSpec::SharedCore { m: g.m, k: g.k, p: g.p.0 }, &mut derive_stream(gseed, stream_id(NS_STRUCTURE, 0)))?;
    let model = MixtureModel::new(structure.clone(), 1, g.t, EmissionMode::WithoutReplacement)?;
    let rng = &mut derive_stream(gseed, stream_id(NS_USERS, 0));
    let users: Vec<(RatingSample, usize)> = (0..g.n)
        .map(|_| {
            let h = model.sample_user(rng);
            Ok((model.emit(&h, rng)?, h.support()[0]))
        })
        .collect::<Result<_>>()?;
    let gsbm_params = block_params(g.t, g.m, g.tau, g.p.0, g.k, g.n)?;
    let gsbm = verify_gsbm_bounds(&structure, &users, g.tau, &gsbm_params)?;
    let samples: Vec<RatingSample> = users.iter().map(|u| u.0.clone()).collect();
    let graph = nn_graph(&samples, g.tau)?;
    let mean_degree = 2.0 * graph.num_edges() as f64 / g.n.max(1) as f64;

    let mut csv = Csv::new(&["regime", "statistic", "auc"]);
    for (regime, rep) in [("contiguous", &contiguous_rep), ("violating", &violating_rep)] {
        for (stat, auc) in &rep.aucs {
            csv.row(&[regime.into(), stat.name().into(), (*auc).into()]);
        }
        csv.row(&[regime.into(), "combined".into(), rep.combined_auc.into()]);
    }
    let results = json!({
        "contiguous": {
            "params": to_value(&contiguous),
            "condition": to_value(&contiguous_cond),
            "margin": contiguous_cond.margin(),
            "distinguisher": to_value(&contiguous_rep),
        },
        "violating": {
            "params": to_value(&violating),
            "condition": to_value(&violating_cond),
            "excess": violating_cond.lhs / violating_cond.rhs,
            "distinguisher": to_value(&violating_rep),
        },
        "gsbm": {
            "params": to_value(&gsbm_params),
            "report": to_value(&gsbm),
            "nn_mean_degree": mean_degree,
            "block_model_mean_degree": (g.n as f64 - 1.0) * gsbm_params.phi,
        },
    });
    Ok(Outcome { csv: csv.into_string(), results })
}
