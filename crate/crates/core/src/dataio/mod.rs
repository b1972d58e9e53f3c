//! Reading, adjusting, exporting and anonymizing testing data.

pub mod adjust;
pub mod anonymize;
pub mod config;
pub mod matrix;

pub use adjust::{adjust_matrix, apply_adjustments, AdjustedData, AdjustmentPolicy};
pub use anonymize::anonymize_shuffle;
pub use config::{from_toml_str, load_toml};
pub use matrix::{parse_testing_matrix, write_testing_matrix, Cell, TestingMatrix};

use std::io::Write;

use chrono::NaiveDate;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::OutputFormat;
use crate::simulator::Simulation;

/// Writes serializable rows as CSV with a header, or as JSON lines.
pub fn write_table<W: Write, T: Serialize>(w: W, rows: &[T], format: OutputFormat) -> Result<()> {
    match format {
        OutputFormat::Csv => {
            let mut wr = csv::Writer::from_writer(w);
            for r in rows {
                wr.serialize(r).map_err(|e| Error::Io(std::io::Error::other(e)))?;
            }
            wr.flush()?;
        }
        OutputFormat::Jsonl => {
            let mut w = w;
            for r in rows {
                serde_json::to_writer(&mut w, r).map_err(|e| Error::Io(e.into()))?;
                w.write_all(b"\n")?;
            }
        }
    }
    Ok(())
}

/// The testing matrix a simulated replicate would produce.
pub fn simulation_matrix(sim: &Simulation, start: NaiveDate) -> TestingMatrix {
    let h = sim.horizon as usize;
    let rows = sim
        .histories
        .iter()
        .map(|hist| {
            let mut row = vec![Cell::Absent; h];
            for (day, positive) in hist.tests() {
                row[(day - 1) as usize] = if positive { Cell::Positive } else { Cell::Negative };
            }
            row
        })
        .collect();
    TestingMatrix {
        start,
        id_hints: None,
        rows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regimen::RegimenKind;
    use crate::simulator::{simulate, ScenarioConfig};

    #[test]
    fn simulated_matrix_reads_back_to_same_panel() {
        let mut cfg = ScenarioConfig::with_regimen(RegimenKind::min_max(5, 10, 10));
        cfg.population_size = 300;
        let sim = simulate(&cfg, 4).unwrap();
        let m = simulation_matrix(&sim, NaiveDate::from_ymd_opt(2020, 1, 1).unwrap());
        let policy = AdjustmentPolicy::simulation(cfg.removal_duration_days, cfg.tests);
        let a = apply_adjustments(&m, &policy).unwrap();
        assert_eq!(a.panel, sim.observed_panel());
    }
}
