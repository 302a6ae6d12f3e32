use serde::{Deserialize, Serialize};

use super::config::{Cell, Csv, Seed};
use super::{to_value, Outcome};
use crate::error::Result;
use crate::oracle::oracle_fixtures;

/// `oracle-fixtures`. The tables are exact, so the seed only enters the run id.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixturesConfig {
    pub seed: Seed,
}

pub(super) fn run(_cfg: &FixturesConfig) -> Result<Outcome> {
    let f = oracle_fixtures()?;
    let mut csv = Csv::new(&["kind", "m", "t", "tau", "exact", "value", "formula", "difference", "enumerated"]);
    for fx in &f.overlap_same {
        for (tau, v) in fx.pmf.iter().enumerate() {
            csv.row(&[
                "same".into(),
                fx.m.into(),
                fx.t.into(),
                tau.into(),
                Cell::Text(v.exact.clone()),
                v.value.into(),
                Cell::Empty,
                Cell::Empty,
                v.enumerated.into(),
            ]);
        }
    }
    for p in &f.overlap_indep {
        let (exact, value, enumerated) = match &p.enumeration {
            Some(e) => (Cell::Text(e.exact.clone()), Cell::Float(e.value), e.enumerated),
            None => (Cell::Empty, Cell::Empty, false),
        };
        csv.row(&[
            "independent".into(),
            p.m.into(),
            p.t.into(),
            p.tau.into(),
            exact,
            value,
            p.formula.into(),
            p.difference.into(),
            enumerated.into(),
        ]);
    }
    Ok(Outcome { csv: csv.into_string(), results: to_value(&f) })
}
