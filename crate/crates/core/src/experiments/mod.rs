//! Named experiments: JSON config in, `results.csv` and `summary.json` out.
//!
//! Every experiment derives all randomness from its config seed through
//! [`crate::stream`], and parallel trials are collected in index order, so
//! outputs are byte-identical for any thread count.

pub mod config;
mod fixtures;
mod linear;
mod loglinear;
mod manifold;
mod nn;
mod semisup;
mod supervised;

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use fixtures::FixturesConfig;
pub use linear::LinearValidityConfig;
pub use loglinear::LogLinearValidityConfig;
pub use manifold::ManifoldConfig;
pub use nn::{LargeTConfig, SmallTConfig};
pub use semisup::SemisupCurveConfig;
pub use supervised::SupervisedConfig;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Stream namespaces used by the experiments.
pub(crate) const NS_STRUCTURE: u32 = 0x40;
pub(crate) const NS_PARAMS: u32 = 0x41;
pub(crate) const NS_USERS: u32 = 0x42;
pub(crate) const NS_PAIRS: u32 = 0x43;
pub(crate) const NS_QUERIES: u32 = 0x44;
pub(crate) const NS_TRIALS: u32 = 0x45;

/// What an experiment returns before it is written to disk.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub csv: String,
    pub results: Value,
}

pub(crate) fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("experiment types serialize")
}

/// The experiment registry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    EncoderValidityLinear,
    EncoderValidityLoglinear,
    NnSeparationSmallT,
    NnSeparationLargeT,
    ManifoldDetect,
    SemisupCurve,
    SupervisedLowerBound,
    OracleFixtures,
}

impl Experiment {
    pub const ALL: [Experiment; 8] = [
        Experiment::EncoderValidityLinear,
        Experiment::EncoderValidityLoglinear,
        Experiment::NnSeparationSmallT,
        Experiment::NnSeparationLargeT,
        Experiment::ManifoldDetect,
        Experiment::SemisupCurve,
        Experiment::SupervisedLowerBound,
        Experiment::OracleFixtures,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::EncoderValidityLinear => "encoder-validity-linear",
            Experiment::EncoderValidityLoglinear => "encoder-validity-loglinear",
            Experiment::NnSeparationSmallT => "nn-separation-small-T",
            Experiment::NnSeparationLargeT => "nn-separation-large-T",
            Experiment::ManifoldDetect => "manifold-detect",
            Experiment::SemisupCurve => "semisup-curve",
            Experiment::SupervisedLowerBound => "supervised-lower-bound",
            Experiment::OracleFixtures => "oracle-fixtures",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Experiment::EncoderValidityLinear => "thresholded pseudo-inverse encoder validity on the mixture model",
            Experiment::EncoderValidityLoglinear => "normalized-sum encoder, coordinate and partition-function concentration",
            Experiment::NnSeparationSmallT => "overlap nearest neighbours with few ratings per user",
            Experiment::NnSeparationLargeT => "overlap nearest neighbours with many ratings per user",
            Experiment::ManifoldDetect => "neighbour-graph block structure versus Erdos-Renyi",
            Experiment::SemisupCurve => "hinge classifier on encoded features against the generalization bound",
            Experiment::SupervisedLowerBound => "raw-space overlap classifier with few labels",
            Experiment::OracleFixtures => "exact overlap pmfs for property tests",
        }
    }

    pub fn from_name(name: &str) -> Option<Experiment> {
        Experiment::ALL.into_iter().find(|e| e.name() == name)
    }

    /// Small bundled config that runs in seconds.
    pub fn default_config(self) -> &'static str {
        match self {
            Experiment::EncoderValidityLinear => include_str!("../../configs/defaults/encoder-validity-linear.json"),
            Experiment::EncoderValidityLoglinear => include_str!("../../configs/defaults/encoder-validity-loglinear.json"),
            Experiment::NnSeparationSmallT => include_str!("../../configs/defaults/nn-separation-small-T.json"),
            Experiment::NnSeparationLargeT => include_str!("../../configs/defaults/nn-separation-large-T.json"),
            Experiment::ManifoldDetect => include_str!("../../configs/defaults/manifold-detect.json"),
            Experiment::SemisupCurve => include_str!("../../configs/defaults/semisup-curve.json"),
            Experiment::SupervisedLowerBound => include_str!("../../configs/defaults/supervised-lower-bound.json"),
            Experiment::OracleFixtures => include_str!("../../configs/defaults/oracle-fixtures.json"),
        }
    }

    /// Parses `config_text` and returns the resolved config with every
    /// default filled in.
    pub fn resolve(self, config_text: &str) -> Result<Value> {
        Ok(match self {
            Experiment::EncoderValidityLinear => to_value(&config::parse::<LinearValidityConfig>(config_text)?.resolved()),
            Experiment::EncoderValidityLoglinear => to_value(&config::parse::<LogLinearValidityConfig>(config_text)?),
            Experiment::NnSeparationSmallT => to_value(&config::parse::<SmallTConfig>(config_text)?),
            Experiment::NnSeparationLargeT => to_value(&config::parse::<LargeTConfig>(config_text)?),
            Experiment::ManifoldDetect => to_value(&config::parse::<ManifoldConfig>(config_text)?.resolved()?),
            Experiment::SemisupCurve => to_value(&config::parse::<SemisupCurveConfig>(config_text)?),
            Experiment::SupervisedLowerBound => to_value(&config::parse::<SupervisedConfig>(config_text)?),
            Experiment::OracleFixtures => to_value(&config::parse::<FixturesConfig>(config_text)?),
        })
    }

    fn execute(self, resolved: &Value) -> Result<Outcome> {
        let text = resolved.to_string();
        match self {
            Experiment::EncoderValidityLinear => linear::run(&config::parse(&text)?),
            Experiment::EncoderValidityLoglinear => loglinear::run(&config::parse(&text)?),
            Experiment::NnSeparationSmallT => nn::run_small_t(&config::parse(&text)?),
            Experiment::NnSeparationLargeT => nn::run_large_t(&config::parse(&text)?),
            Experiment::ManifoldDetect => manifold::run(&config::parse(&text)?),
            Experiment::SemisupCurve => semisup::run(&config::parse(&text)?),
            Experiment::SupervisedLowerBound => supervised::run(&config::parse(&text)?),
            Experiment::OracleFixtures => fixtures::run(&config::parse(&text)?),
        }
    }
}

/// A finished run ready to be written out.
#[derive(Debug, Clone)]
pub struct Run {
    pub experiment: Experiment,
    pub run_id: String,
    pub csv: String,
    pub summary: Value,
}

/// First 16 hex digits of the SHA-256 of the experiment name and the
/// resolved config, which includes the seed.
pub fn run_id(experiment: Experiment, resolved: &Value) -> String {
    let mut h = Sha256::new();
    h.update(experiment.name().as_bytes());
    h.update(b"\n");
    h.update(resolved.to_string().as_bytes());
    hex::encode(h.finalize())[..16].to_string()
}

pub fn run(experiment: Experiment, config_text: &str) -> Result<Run> {
    let resolved = experiment.resolve(config_text)?;
    let id = run_id(experiment, &resolved);
    let outcome = experiment.execute(&resolved)?;
    let summary = json!({
        "experiment": experiment.name(),
        "version": VERSION,
        "run_id": id,
        "config": resolved,
        "results": outcome.results,
    });
    Ok(Run { experiment, run_id: id, csv: outcome.csv, summary })
}

/// `<out>/<experiment>/<run-id>/`.
pub fn run_dir(out: &Path, experiment: Experiment, run_id: &str) -> PathBuf {
    out.join(experiment.name()).join(run_id)
}

pub fn write_run(out: &Path, run: &Run) -> Result<PathBuf> {
    let dir = run_dir(out, run.experiment, &run.run_id);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("results.csv"), &run.csv)?;
    let mut summary = serde_json::to_string_pretty(&run.summary)?;
    summary.push('\n');
    fs::write(dir.join("summary.json"), summary)?;
    Ok(dir)
}

/// Machine-readable description of a failed run.
pub fn diagnostic(experiment: &str, err: &Error) -> Value {
    let kind = match err {
        Error::Dimension { .. } => "dimension",
        Error::Domain(_) => "domain",
        Error::Tie => "tie",
        Error::Structure(_) => "structure",
        Error::Construction { .. } => "construction",
        Error::RankDeficient { .. } => "rank-deficient",
        Error::Infeasible { .. } => "infeasible",
        Error::Solver { .. } => "solver",
        Error::Convergence { .. } => "convergence",
        Error::DegenerateSample => "degenerate-sample",
        Error::DataInconsistency(_) => "data-inconsistency",
        Error::InsufficientData(_) => "insufficient-data",
        Error::Regime(_) => "regime",
        Error::Config { .. } => "config",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
    };
    json!({ "experiment": experiment, "version": VERSION, "error": kind, "message": err.to_string() })
}
