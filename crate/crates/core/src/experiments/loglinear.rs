use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::{Csv, Real, Seed};
use super::{to_value, Outcome, NS_PARAMS, NS_TRIALS};
use crate::domain::quantile_sorted;
use crate::encoders::{loglinear_concentration_report, loglinear_encode};
use crate::error::{Error, Result};
use crate::loglinear::{
    emit_from_table, expected_partition_function, log_partition_function, sample_movie_vectors, sample_sphere,
    sphere_values, z_concentration_report, EmissionTable,
};
use crate::stream::{child_seed, derive_stream, stream_id};

fn twenty() -> usize {
    20
}

fn offaxis_constant() -> Real {
    Real(20.0)
}

fn cos_threshold() -> Real {
    Real(0.8)
}

/// `encoder-validity-loglinear`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogLinearValidityConfig {
    pub seed: Seed,
    pub num_movies: usize,
    pub dim: usize,
    pub scale: Real,
    pub t_values: Vec<usize>,
    pub trials: usize,
    /// Extra latents whose partition function is checked.
    #[serde(default = "twenty")]
    pub z_latents: usize,
    /// Off-axis mass bound is `offaxis_constant · T²/(M d)`.
    #[serde(default = "offaxis_constant")]
    pub offaxis_constant: Real,
    #[serde(default = "cos_threshold")]
    pub cos_threshold: Real,
}

struct Trial {
    cos: f64,
    signal: f64,
    offaxis: f64,
    z_ratio: f64,
}

#[derive(Debug, Serialize)]
struct Row {
    t: usize,
    trials: usize,
    mean_cos: f64,
    min_cos: f64,
    median_cos: f64,
    frac_cos_above: f64,
    signal_per_rating: f64,
    signal_target: f64,
    signal_rel_dev: f64,
    offaxis_bound: f64,
    offaxis_frac_within: f64,
}

pub(super) fn run(cfg: &LogLinearValidityConfig) -> Result<Outcome> {
    if cfg.t_values.is_empty() || cfg.trials == 0 {
        return Err(Error::domain("need at least one T and one trial"));
    }
    let seed = cfg.seed.0;
    let (m, d, b) = (cfg.num_movies, cfg.dim, cfg.scale.0);
    let w = sample_movie_vectors(m, d, b, &mut derive_stream(seed, stream_id(NS_PARAMS, 0)))?;
    let expected_z = expected_partition_function(m, d, b);
    let signal_target = b * b / (4.0 * d as f64);
    let mut rows = Vec::new();
    let mut trial_z = Vec::new();
    for (ti, &t) in cfg.t_values.iter().enumerate() {
        let tseed = child_seed(seed, stream_id(NS_TRIALS, ti as u64));
        let trials: Vec<Trial> = (0..cfg.trials)
            .into_par_iter()
            .map(|i| {
                let mut rng = derive_stream(tseed, i as u64);
                let h = sample_sphere(d, &mut rng)?;
                let hv = sphere_values(&h)?;
                let table = EmissionTable::new(&w, &hv)?;
                let sample = emit_from_table(&table, &h, t, &mut rng)?;
                let f = loglinear_encode(&w, &sample)?.h_est;
                let conc = loglinear_concentration_report(&w, std::slice::from_ref(&sample.movie_ids), &h)?[0];
                let z_ratio = (log_partition_function(&w, &hv)? - expected_z.ln()).exp();
                Ok(Trial {
                    cos: f.iter().zip(&hv).map(|(a, b)| a * b).sum(),
                    signal: conc.signal_mean,
                    offaxis: conc.offaxis_max_sq,
                    z_ratio,
                })
            })
            .collect::<Result<_>>()?;
        let n = trials.len() as f64;
        let mut cos: Vec<f64> = trials.iter().map(|tr| tr.cos).collect();
        let mean_cos = cos.iter().sum::<f64>() / n;
        cos.sort_by(f64::total_cmp);
        let signal_per_rating = trials.iter().map(|tr| tr.signal).sum::<f64>() / n / t as f64;
        let offaxis_bound = cfg.offaxis_constant.0 * (t * t) as f64 / (m * d) as f64;
        rows.push(Row {
            t,
            trials: trials.len(),
            mean_cos,
            min_cos: cos[0],
            median_cos: quantile_sorted(&cos, 0.5),
            frac_cos_above: cos.iter().filter(|&&c| c >= cfg.cos_threshold.0).count() as f64 / n,
            signal_per_rating,
            signal_target,
            signal_rel_dev: (signal_per_rating - signal_target).abs() / signal_target,
            offaxis_bound,
            offaxis_frac_within: trials.iter().filter(|tr| tr.offaxis <= offaxis_bound).count() as f64 / n,
        });
        trial_z.extend(trials.iter().map(|tr| tr.z_ratio));
    }
    let z = z_concentration_report(&w, cfg.z_latents.max(1), &mut derive_stream(seed, stream_id(NS_PARAMS, 1)))?;
    let z_max_dev = trial_z.iter().chain(&z.ratios).map(|r| (r - 1.0).abs()).fold(0.0, f64::max);

    let mut csv = Csv::new(&[
        "t",
        "trials",
        "mean_cos",
        "min_cos",
        "median_cos",
        "frac_cos_above",
        "signal_per_rating",
        "signal_target",
        "signal_rel_dev",
        "offaxis_bound",
        "offaxis_frac_within",
    ]);
    for r in &rows {
        csv.row(&[
            r.t.into(),
            r.trials.into(),
            r.mean_cos.into(),
            r.min_cos.into(),
            r.median_cos.into(),
            r.frac_cos_above.into(),
            r.signal_per_rating.into(),
            r.signal_target.into(),
            r.signal_rel_dev.into(),
            r.offaxis_bound.into(),
            r.offaxis_frac_within.into(),
        ]);
    }
    let means: Vec<f64> = rows.iter().map(|r| r.mean_cos).collect();
    let results = json!({
        "expected_z": expected_z,
        "z_max_rel_dev": z_max_dev,
        "z_latents_checked": trial_z.len() + z.ratios.len(),
        "mean_cos_increasing": means.windows(2).all(|p| p[1] > p[0]),
        "rows": to_value(&rows),
    });
    Ok(Outcome { csv: csv.into_string(), results })
}
