use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::{Csv, Real, Seed};
use super::{to_value, Outcome, NS_PARAMS, NS_STRUCTURE};
use crate::encoders::{linear_encode_sample, pseudoinverse_for_structure, PINV_TOL};
use crate::error::{Error, Result};
use crate::mixture::{balanced_single_genre_hyperplane, make_structure, EmissionMode, MixtureModel, StructureSpec};
use crate::semisup::{semisup_experiment, CurvePoint, FeatureMap, SemisupSettings};
use crate::stream::{child_seed, derive_stream, stream_id};

fn independent() -> EmissionMode {
    EmissionMode::Independent
}

fn pinv_tol() -> Real {
    Real(PINV_TOL)
}

fn hinge_tol() -> Real {
    Real(1e-3)
}

fn budget() -> usize {
    200_000
}

fn one() -> usize {
    1
}

/// `semisup-curve`. Labels come from a hyperplane that splits the genres in
/// half; features are the thresholded linear encoder's output.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemisupCurveConfig {
    pub seed: Seed,
    pub structure: StructureSpec,
    pub s: usize,
    /// Ratings per user.
    pub t: usize,
    pub t_values: Vec<usize>,
    pub n_test: usize,
    pub rho: Real,
    pub delta: Real,
    /// Feature-error tolerance defining the realized `beta`; defaults to
    /// `2 λ √(s/T)`.
    #[serde(default)]
    pub gamma_tolerance: Option<Real>,
    #[serde(default = "independent")]
    pub emission: EmissionMode,
    #[serde(default = "pinv_tol")]
    pub pinv_tol: Real,
    #[serde(default = "hinge_tol")]
    pub tol: Real,
    #[serde(default = "budget")]
    pub budget: usize,
    #[serde(default)]
    pub features: FeatureMap,
    /// Independent repetitions; the CSV reports the first, the summary the
    /// mean test error over all of them.
    #[serde(default = "one")]
    pub repeats: usize,
}

pub(super) fn run(cfg: &SemisupCurveConfig) -> Result<Outcome> {
    if cfg.repeats == 0 {
        return Err(Error::domain("repeats must be positive"));
    }
    let seed = cfg.seed.0;
    let structure = make_structure(cfg.structure, &mut derive_stream(seed, stream_id(NS_STRUCTURE, 0)))?;
    let k = structure.num_genres();
    let pinv = pseudoinverse_for_structure(&structure, cfg.pinv_tol.0)?;
    let model = MixtureModel::new(structure, cfg.s, cfg.t, cfg.emission)?;
    let w_true = balanced_single_genre_hyperplane(k, &mut derive_stream(seed, stream_id(NS_PARAMS, 0)))?;
    let gamma_tolerance =
        cfg.gamma_tolerance.map_or(2.0 * pinv.lambda * (cfg.s as f64 / cfg.t as f64).sqrt(), |g| g.0);
    let settings = SemisupSettings {
        t_values: cfg.t_values.clone(),
        n_test: cfg.n_test,
        rho: cfg.rho.0,
        delta: cfg.delta.0,
        gamma_tolerance,
        tol: cfg.tol.0,
        budget: cfg.budget,
        features: cfg.features,
    };
    let curves: Vec<Vec<CurvePoint>> = (0..cfg.repeats)
        .map(|r| {
            semisup_experiment(
                |rng| {
                    let h = model.sample_user(rng);
                    let x = model.emit(&h, rng)?;
                    Ok((h, x))
                },
                |x| Ok(linear_encode_sample(&pinv, x)?.h_est),
                &w_true,
                &settings,
                child_seed(seed, r as u64),
            )
        })
        .collect::<Result<_>>()?;

    let mut csv = Csv::new(&["t", "test_error", "C_t", "R_t", "E_t", "total_bound", "realized_beta", "realized_gamma"]);
    for p in &curves[0] {
        let b = p.bounds;
        csv.row(&[
            p.t.into(),
            p.test_error.into(),
            b.map(|b| b.c_t).into(),
            b.map(|b| b.r_t).into(),
            b.map(|b| b.e_t).into(),
            b.map(|b| b.total()).into(),
            p.realized_beta.into(),
            p.realized_gamma.into(),
        ]);
    }
    let mean_error: Vec<f64> = (0..cfg.t_values.len())
        .map(|i| curves.iter().map(|c| c[i].test_error).sum::<f64>() / cfg.repeats as f64)
        .collect();
    let bound_holds = curves.iter().flatten().all(|p| p.bounds.is_none_or(|b| p.test_error <= b.total()));
    let results = json!({
        "lambda": pinv.lambda,
        "gamma_tolerance": gamma_tolerance,
        "positive_genres": w_true.iter().filter(|&&x| x > 0.0).count(),
        "bound_holds": bound_holds,
        "mean_test_error": mean_error,
        "mean_error_nonincreasing": mean_error.windows(2).all(|w| w[1] <= w[0]),
        "curve": to_value(&curves[0]),
    });
    Ok(Outcome { csv: csv.into_string(), results })
}
