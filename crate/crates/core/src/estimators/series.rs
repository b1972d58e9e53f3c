//! Daily estimate series with confidence bounds.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::ht::{clip01, ht_estimated, ht_known, prevalence_from_w, tpr, HtDay, HtOptions};
use crate::estimators::matrix::KnownProbabilities;
use crate::estimators::panel::{PanelCounts, PanelIndex};
use crate::population::{Day, TestCharacteristics};
use crate::uncertainty::{bca_bootstrap, clopper_pearson, order_interval, wald_interval, IntervalSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EstimatorKind {
    #[serde(rename = "TPR")]
    Tpr,
    #[serde(rename = "HT-K")]
    HtKnown,
    #[serde(rename = "HT-E")]
    HtEstimated,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 3] = [EstimatorKind::Tpr, EstimatorKind::HtKnown, EstimatorKind::HtEstimated];

    pub fn as_str(&self) -> &'static str {
        match self {
            EstimatorKind::Tpr => "TPR",
            EstimatorKind::HtKnown => "HT-K",
            EstimatorKind::HtEstimated => "HT-E",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        EstimatorKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown estimator `{s}`")))
    }
}

/// One estimator on one day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub day: Day,
    pub kind: EstimatorKind,
    /// Clipped to `[0, 1]`; `None` when undefined for the day.
    pub estimate: Option<f64>,
    /// Before clipping.
    #[serde(skip)]
    pub raw: Option<f64>,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub n_tests: u64,
    pub n_pos: u64,
    pub n_fallback_strata: usize,
}

impl EstimateRecord {
    fn undefined(day: Day, kind: EstimatorKind, n_tests: u64, n_pos: u64) -> Self {
        EstimateRecord {
            day,
            kind,
            estimate: None,
            raw: None,
            lo: None,
            hi: None,
            n_tests,
            n_pos,
            n_fallback_strata: 0,
        }
    }

    pub fn covers(&self, truth: f64) -> Option<bool> {
        Some(self.lo? <= truth && truth <= self.hi?)
    }
}

/// What to compute for a panel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct EstimationOptions {
    /// Test characteristics assumed by the estimators.
    pub tests: TestCharacteristics,
    pub ht: HtOptions,
    pub intervals: IntervalSpec,
}

impl Default for EstimationOptions {
    fn default() -> Self {
        EstimationOptions {
            tests: TestCharacteristics::PERFECT,
            ht: HtOptions::default(),
            intervals: IntervalSpec::default(),
        }
    }
}

/// Test-positive rate per day, corrected for sensitivity and specificity and
/// for individuals known to be well (exempt), with exact binomial bounds
/// mapped the same way.
pub fn tpr_series(counts: &PanelCounts, tests: &TestCharacteristics, level: f64) -> Result<Vec<EstimateRecord>> {
    tests.youden()?;
    let mut out = Vec::new();
    for t in 1..=counts.horizon() {
        let day = counts.day(t);
        let (n, x) = (day.tested(), day.positive());
        let Some(rate) = tpr(x, n) else {
            out.push(EstimateRecord::undefined(t, EstimatorKind::Tpr, n, x));
            continue;
        };
        let share = {
            let active = day.active() as f64;
            active / (active + day.exempt as f64)
        };
        let map = |r: f64| -> Result<f64> { Ok(tests.correct_positive_fraction(r)? * share) };
        let raw = map(rate)?;
        let (lo, hi) = clopper_pearson(x, n, level);
        let (lo, hi) = order_interval(raw, map(lo)?, map(hi)?);
        out.push(EstimateRecord {
            day: t,
            kind: EstimatorKind::Tpr,
            estimate: Some(clip01(raw)),
            raw: Some(raw),
            lo: Some(lo),
            hi: Some(hi),
            n_tests: n,
            n_pos: x,
            n_fallback_strata: 0,
        });
    }
    Ok(out)
}

fn ht_record(counts: &PanelCounts, d: &HtDay, kind: EstimatorKind) -> EstimateRecord {
    let day = counts.day(d.day);
    let (n, x) = (day.tested(), day.positive());
    match prevalence_from_w(d.w_hat, counts.population, day.removed) {
        None => EstimateRecord::undefined(d.day, kind, n, x),
        Some(p) => EstimateRecord {
            day: d.day,
            kind,
            estimate: Some(p.clipped),
            raw: Some(p.raw),
            lo: None,
            hi: None,
            n_tests: n,
            n_pos: x,
            n_fallback_strata: d.fallback_strata(),
        },
    }
}

/// Known-weight HT with Wald bounds.
pub fn ht_known_series(
    counts: &PanelCounts,
    known: &KnownProbabilities,
    tests: &TestCharacteristics,
    level: f64,
) -> Result<Vec<EstimateRecord>> {
    let days = ht_known(counts, known, tests)?;
    Ok(days
        .iter()
        .map(|d| {
            let mut r = ht_record(counts, d, EstimatorKind::HtKnown);
            if let (Some(raw), Some(var)) = (r.raw, d.variance) {
                let active = counts.nonremoved(d.day) as f64;
                let (w_lo, w_hi) = wald_interval(d.w_hat, var, level);
                // Prevalence decreases in Ŵ, so the bounds swap.
                let (lo, hi) = order_interval(raw, (active - w_hi) / active, (active - w_lo) / active);
                r.lo = Some(lo);
                r.hi = Some(hi);
            }
            r
        })
        .collect())
}

/// Unclipped HT-E prevalence per day (the bootstrap statistic).
pub fn ht_estimated_raw(counts: &PanelCounts, opts: &EstimationOptions) -> Result<Vec<Option<f64>>> {
    Ok(ht_estimated(counts, &opts.tests, &opts.ht)?
        .iter()
        .map(|d| prevalence_from_w(d.w_hat, counts.population, counts.day(d.day).removed).map(|p| p.raw))
        .collect())
}

/// Estimated-weight HT; with `bootstrap_seed` set and a positive iteration
/// count, adds BCa bounds.
pub fn ht_estimated_series(
    index: &PanelIndex,
    counts: &PanelCounts,
    opts: &EstimationOptions,
    bootstrap_seed: Option<u64>,
) -> Result<Vec<EstimateRecord>> {
    let days = ht_estimated(counts, &opts.tests, &opts.ht)?;
    let mut out: Vec<EstimateRecord> = days
        .iter()
        .map(|d| ht_record(counts, d, EstimatorKind::HtEstimated))
        .collect();
    if let Some(seed) = bootstrap_seed.filter(|_| opts.intervals.bootstrap_iterations > 0) {
        let intervals = bca_bootstrap(index.len(), &opts.intervals, seed, |m| {
            ht_estimated_raw(&index.weighted_counts(m), opts)
                .unwrap_or_else(|_| vec![None; index.horizon() as usize])
        });
        for (r, iv) in out.iter_mut().zip(intervals) {
            if let (Some(raw), Some(iv)) = (r.raw, iv) {
                let (lo, hi) = order_interval(raw, iv.lo, iv.hi);
                r.lo = Some(lo);
                r.hi = Some(hi);
            }
        }
    }
    Ok(out)
}

/// Output encodings for estimate series and summaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Jsonl,
}

impl FromStr for OutputFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "jsonl" => Ok(OutputFormat::Jsonl),
            other => Err(Error::Config(format!("unknown output format `{other}` (csv or jsonl)"))),
        }
    }
}

pub const SERIES_COLUMNS: [&str; 8] = ["day", "kind", "estimate", "lo", "hi", "n_tests", "n_pos", "n_fallback_strata"];

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v}")).unwrap_or_default()
}

/// Writes records with the fixed column order `SERIES_COLUMNS`.
pub fn write_series<W: Write>(w: W, records: &[EstimateRecord], format: OutputFormat) -> Result<()> {
    match format {
        OutputFormat::Csv => {
            let mut wr = csv::Writer::from_writer(w);
            let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
            wr.write_record(SERIES_COLUMNS).map_err(csv_err)?;
            for r in records {
                wr.write_record([
                    r.day.to_string(),
                    r.kind.to_string(),
                    fmt_opt(r.estimate),
                    fmt_opt(r.lo),
                    fmt_opt(r.hi),
                    r.n_tests.to_string(),
                    r.n_pos.to_string(),
                    r.n_fallback_strata.to_string(),
                ])
                .map_err(csv_err)?;
            }
            wr.flush()?;
        }
        OutputFormat::Jsonl => {
            let mut w = w;
            for r in records {
                serde_json::to_writer(&mut w, r).map_err(|e| Error::Io(e.into()))?;
                w.write_all(b"\n")?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::panel::ObservedPanel;
    use crate::population::{ObservedHistory, TestRecord};

    fn census_panel(pattern: &[&[bool]]) -> ObservedPanel {
        // pattern[i][t-1]: individual i positive on day t; everyone tested daily
        // until their first positive, and nobody is ever removed here because
        // the horizon ends before removals would start.
        let horizon = pattern[0].len() as Day;
        let histories = pattern
            .iter()
            .map(|row| ObservedHistory {
                tests: row
                    .iter()
                    .enumerate()
                    .map(|(k, &p)| TestRecord {
                        day: k as Day + 1,
                        positive: p,
                    })
                    .collect(),
                ..Default::default()
            })
            .collect();
        ObservedPanel::new(horizon, histories).unwrap()
    }

    #[test]
    fn census_perfect_tests_htk_equals_tpr() {
        let pos = [true, false, false, false, false, false, false, false, false, false, false, false];
        let rows: Vec<&[bool]> = pos.iter().map(std::slice::from_ref).collect();
        let panel = census_panel(&rows);
        let counts = PanelIndex::new(&panel).counts();
        let tc = TestCharacteristics::PERFECT;
        let tpr = tpr_series(&counts, &tc, 0.95).unwrap();
        let opts = EstimationOptions {
            ht: HtOptions {
                min_stratum_size: 1,
                weight_cap: None,
            },
            ..Default::default()
        };
        let index = PanelIndex::new(&panel);
        let hte = ht_estimated_series(&index, &counts, &opts, None).unwrap();
        assert_eq!(tpr[0].estimate, Some(1.0 / 12.0));
        assert_eq!(hte[0].estimate, tpr[0].estimate);
    }

    #[test]
    fn csv_has_fixed_columns() {
        let r = EstimateRecord::undefined(3, EstimatorKind::HtEstimated, 0, 0);
        let mut buf = Vec::new();
        write_series(&mut buf, &[r], OutputFormat::Csv).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s, "day,kind,estimate,lo,hi,n_tests,n_pos,n_fallback_strata\n3,HT-E,,,,0,0,0\n");
    }

    #[test]
    fn kinds_round_trip() {
        for k in EstimatorKind::ALL {
            assert_eq!(k.as_str().parse::<EstimatorKind>().unwrap(), k);
        }
    }
}
