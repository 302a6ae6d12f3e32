use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::{Cell, Csv, Real, Seed};
use super::{to_value, Outcome, NS_STRUCTURE, NS_TRIALS};
use crate::domain::{Norm, ValidityReport};
use crate::encoders::{linear_encode_sample, linear_threshold, measure_encoder, pseudoinverse_for_structure, PINV_TOL};
use crate::error::{Error, Result};
use crate::mixture::{make_structure, EmissionMode, MixtureModel, StructureSpec};
use crate::stream::{child_seed, derive_stream, stream_id};

fn independent() -> EmissionMode {
    EmissionMode::Independent
}

fn l1() -> Norm {
    Norm::L1
}

fn pinv_tol() -> Real {
    Real(PINV_TOL)
}

fn one() -> Real {
    Real(1.0)
}

/// `encoder-validity-linear`. Trials at each `T` count a success when the
/// relative error is at most `error_scale · λ √(s/T)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearValidityConfig {
    pub seed: Seed,
    pub structure: StructureSpec,
    pub s: usize,
    pub t_values: Vec<usize>,
    pub trials: usize,
    #[serde(default = "independent")]
    pub emission: EmissionMode,
    #[serde(default = "l1")]
    pub norm: Norm,
    #[serde(default = "pinv_tol")]
    pub pinv_tol: Real,
    #[serde(default = "one")]
    pub error_scale: Real,
    /// The `T` whose success rate is reported as `beta_hat`; defaults to
    /// the first of `t_values`.
    #[serde(default)]
    pub primary_t: Option<usize>,
}

impl LinearValidityConfig {
    pub fn resolved(mut self) -> Self {
        if self.primary_t.is_none() {
            self.primary_t = self.t_values.first().copied();
        }
        self
    }
}

#[derive(Debug, Clone, Serialize)]
struct Row {
    t: usize,
    tau: f64,
    report: ValidityReport,
}

pub(super) fn run(cfg: &LinearValidityConfig) -> Result<Outcome> {
    if cfg.t_values.is_empty() {
        return Err(Error::domain("t_values is empty"));
    }
    let seed = cfg.seed.0;
    let structure = make_structure(cfg.structure, &mut derive_stream(seed, stream_id(NS_STRUCTURE, 0)))?;
    let pinv = pseudoinverse_for_structure(&structure, cfg.pinv_tol.0)?;
    let k = structure.num_genres();
    let mut rows = Vec::new();
    for (ti, &t) in cfg.t_values.iter().enumerate() {
        let model = MixtureModel::new(structure.clone(), cfg.s, t, cfg.emission)?;
        let eps = cfg.error_scale.0 * pinv.lambda * (cfg.s as f64 / t as f64).sqrt();
        let report = measure_encoder(
            cfg.trials,
            eps,
            cfg.norm,
            child_seed(seed, stream_id(NS_TRIALS, ti as u64)),
            |rng| {
                let h = model.sample_user(rng);
                let x = model.emit(&h, rng)?;
                Ok((h.as_simplex()?, x))
            },
            |x| Ok(linear_encode_sample(&pinv, x)?.h_est),
        )?;
        rows.push(Row { t, tau: linear_threshold(pinv.lambda, k, t), report });
    }

    let mut csv = Csv::new(&[
        "t", "lambda", "tau", "error_factor", "beta_hat", "successes", "trials", "q50", "q90", "q99", "mean_error",
    ]);
    for r in &rows {
        let rep = &r.report;
        csv.row(&[
            r.t.into(),
            pinv.lambda.into(),
            r.tau.into(),
            rep.error_factor.into(),
            rep.success_prob.into(),
            rep.successes.into(),
            rep.trials.into(),
            rep.quantiles[0].into(),
            rep.quantiles[1].into(),
            rep.quantiles[2].into(),
            Cell::Float(rep.mean_error),
        ]);
    }
    let primary = cfg.primary_t.unwrap_or(rows[0].t);
    let beta_hat = rows
        .iter()
        .find(|r| r.t == primary)
        .ok_or_else(|| Error::domain(format!("primary_t {primary} is not among t_values")))?
        .report
        .success_prob;
    let medians: Vec<f64> = rows.iter().map(|r| r.report.quantiles[0]).collect();
    let results = json!({
        "lambda": pinv.lambda,
        "residual": pinv.residual,
        "structure_hash": structure.content_hash(),
        "primary_t": primary,
        "beta_hat": beta_hat,
        "median_error_nonincreasing": medians.windows(2).all(|w| w[1] <= w[0]),
        "rows": to_value(&rows),
    });
    Ok(Outcome { csv: csv.into_string(), results })
}
