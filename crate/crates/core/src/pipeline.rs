//! Raw testing data to daily estimates.

use serde::{Deserialize, Serialize};

use crate::dataio::{apply_adjustments, AdjustedData, AdjustmentPolicy, TestingMatrix};
use crate::error::Result;
use crate::estimators::series::{ht_estimated_series, tpr_series};
use crate::estimators::{EstimateRecord, EstimationOptions, HtOptions, PanelIndex};
use crate::population::Day;
use crate::uncertainty::IntervalSpec;

/// Everything `analyze` needs besides the matrix, as read from a TOML file
/// with optional `[policy]`, `[intervals]` and `[ht]` tables.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub policy: AdjustmentPolicy,
    pub intervals: IntervalSpec,
    pub ht: HtOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    /// TPR then HT-E records for every non-excluded day.
    pub records: Vec<EstimateRecord>,
    pub excluded_days: Vec<Day>,
    pub warnings: Vec<String>,
    pub adjusted: AdjustedData,
}

/// Adjusts the matrix, estimates TPR and HT-E with intervals, and drops
/// low-volume days.
pub fn analyze(
    matrix: &TestingMatrix,
    policy: &AdjustmentPolicy,
    intervals: &IntervalSpec,
    ht: &HtOptions,
    seed: u64,
) -> Result<Analysis> {
    intervals.validate()?;
    let adjusted = apply_adjustments(matrix, policy)?;
    let opts = EstimationOptions {
        tests: policy.tests()?,
        ht: *ht,
        intervals: *intervals,
    };
    let mut warnings = Vec::new();
    let excluded_days: Vec<Day> = (1..=matrix.days()).filter(|&t| adjusted.is_excluded(t)).collect();
    if matrix.days() == 0 || excluded_days.len() as Day == matrix.days() {
        warnings.push("every day is excluded; the estimate series is empty".to_string());
        return Ok(Analysis {
            records: Vec::new(),
            excluded_days,
            warnings,
            adjusted,
        });
    }
    if !excluded_days.is_empty() {
        warnings.push(format!(
            "{} day(s) excluded with fewer than {} retained tests",
            excluded_days.len(),
            policy.min_daily_tests
        ));
    }
    let index = PanelIndex::new(&adjusted.panel);
    let counts = index.counts();
    let mut records = tpr_series(&counts, &opts.tests, intervals.level)?;
    let ht = ht_estimated_series(&index, &counts, &opts, Some(seed))?;
    let fallback: usize = ht.iter().filter(|r| !adjusted.is_excluded(r.day)).map(|r| r.n_fallback_strata).sum();
    if fallback > 0 {
        warnings.push(format!("{fallback} stratum-day(s) fell back to the all-well estimate"));
    }
    records.extend(ht);
    records.retain(|r| !adjusted.is_excluded(r.day));
    Ok(Analysis {
        records,
        excluded_days,
        warnings,
        adjusted,
    })
}
