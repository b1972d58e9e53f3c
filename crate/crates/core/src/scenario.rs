//! Named simulation scenarios and the replicate harness.
//!
//! Four scenarios satisfy the estimators' assumptions (one per regimen); the
//! other five break one assumption each, all on top of min-max testing.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::series::{ht_estimated_series, ht_known_series, tpr_series};
use crate::estimators::{
    EstimateRecord, EstimationOptions, EstimatorKind, HtOptions, KnownProbabilities, PanelIndex,
};
use crate::population::{Day, TestCharacteristics};
use crate::regimen::{Overlay, RegimenConfig, RegimenKind};
use crate::simulator::{simulate, ScenarioConfig, Simulation, TimeVaryingSensitivity, UndetectedRecovery};

pub const SCENARIO_NAMES: [&str; 9] = [
    "simple-random",
    "max-gap",
    "once-per-period",
    "min-max",
    "undetected-recoveries",
    "time-varying-sensitivity",
    "symptomatic",
    "contact-tracing",
    "clustered",
];

/// A simulation setup plus what the estimators are told about it.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub config: ScenarioConfig,
    /// Test characteristics the estimators assume.
    pub assumed_tests: TestCharacteristics,
    /// Whether known testing probabilities exist for this design.
    pub ht_known: bool,
}

fn min_max() -> RegimenKind {
    RegimenKind::min_max(5, 10, 10)
}

pub fn scenario(name: &str) -> Result<Scenario> {
    let base = |regimen: RegimenConfig| ScenarioConfig::with_regimen(regimen);
    let mut ht_known = true;
    let config = match name {
        "simple-random" => base(RegimenKind::simple_random(1.0 / 6.0).into()),
        "max-gap" => base(RegimenKind::max_gap(10, 10).into()),
        "once-per-period" => base(RegimenKind::once_per_period(7).into()),
        "min-max" => base(min_max().into()),
        "undetected-recoveries" => ScenarioConfig {
            undetected_recovery: Some(UndetectedRecovery {
                infectious_duration_days: 6,
            }),
            baseline_exposure_window: Some(6),
            ..base(min_max().into())
        },
        "time-varying-sensitivity" => ScenarioConfig {
            time_varying_sensitivity: Some(TimeVaryingSensitivity {
                peak: 0.832,
                window: 10,
                floor: 0.1,
            }),
            baseline_exposure_window: Some(6),
            ..base(min_max().into())
        },
        "symptomatic" => base(RegimenConfig {
            kind: min_max(),
            overlays: vec![Overlay::Symptomatic { probability: 0.25 }],
        }),
        "contact-tracing" => {
            ht_known = false;
            base(RegimenConfig {
                kind: min_max(),
                overlays: vec![Overlay::ContactTracing],
            })
        }
        "clustered" => base(
            RegimenKind::Clustered {
                unit: Box::new(min_max()),
            }
            .into(),
        ),
        _ => {
            return Err(Error::UnknownScenario {
                name: name.to_string(),
                valid: SCENARIO_NAMES.join(", "),
            })
        }
    };
    let assumed_tests = match config.time_varying_sensitivity {
        // The analyst only knows an average sensitivity.
        Some(tv) => TestCharacteristics {
            sensitivity: tv.window_mean(),
            ..config.tests
        },
        None => config.tests,
    };
    Ok(Scenario {
        name: name.to_string(),
        config,
        assumed_tests,
        ht_known,
    })
}

impl Scenario {
    /// Known probabilities for HT-K, from the regimen without overlays.
    pub fn known_probabilities(&self) -> Result<Option<KnownProbabilities>> {
        if !self.ht_known {
            return Ok(None);
        }
        KnownProbabilities::from_regimen(
            &self.config.regimen.kind,
            self.config.horizon_days,
            self.config.removal_duration_days,
            self.assumed_tests.specificity,
        )
        .map(Some)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    /// Replicates for TPR and HT-E.
    pub replicates: u64,
    /// Replicates for HT-K (it is cheap, so it can use more).
    pub htk_replicates: u64,
    /// BCa iterations for HT-E; 0 skips HT-E intervals.
    pub bootstrap_iterations: usize,
    pub level: f64,
    pub ht: HtOptions,
    pub seed: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            replicates: 1000,
            htk_replicates: 10_000,
            bootstrap_iterations: 399,
            level: 0.95,
            ht: HtOptions::default(),
            seed: 0,
        }
    }
}

/// Truth and estimates of one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateResult {
    pub replicate: u64,
    /// True prevalence for days `1..=horizon`.
    pub truth: Vec<Option<f64>>,
    pub records: Vec<EstimateRecord>,
}

impl ReplicateResult {
    pub fn record(&self, kind: EstimatorKind, t: Day) -> Option<&EstimateRecord> {
        self.records.iter().find(|r| r.kind == kind && r.day == t)
    }
}

fn bootstrap_seed(seed: u64, replicate: u64) -> u64 {
    seed.rotate_left(17) ^ replicate.wrapping_add(1).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Estimates for one simulated replicate.
pub fn estimate_replicate(
    scenario: &Scenario,
    sim: &Simulation,
    known: Option<&KnownProbabilities>,
    opts: &RunOptions,
    replicate: u64,
    with_tpr_hte: bool,
) -> Result<Vec<EstimateRecord>> {
    let panel = sim.observed_panel();
    let index = PanelIndex::new(&panel);
    let counts = index.counts();
    let tests = &scenario.assumed_tests;
    let mut out = Vec::new();
    if with_tpr_hte {
        out.extend(tpr_series(&counts, tests, opts.level)?);
        let mut eo = EstimationOptions {
            tests: *tests,
            ht: opts.ht,
            ..Default::default()
        };
        eo.intervals.level = opts.level;
        eo.intervals.bootstrap_iterations = opts.bootstrap_iterations;
        out.extend(ht_estimated_series(
            &index,
            &counts,
            &eo,
            Some(bootstrap_seed(opts.seed, replicate)),
        )?);
    }
    if let Some(known) = known {
        out.extend(ht_known_series(&counts, known, tests, opts.level)?);
    }
    Ok(out)
}

/// Runs every replicate; results are ordered by replicate and do not depend
/// on the number of worker threads.
pub fn run_scenario(scenario: &Scenario, opts: &RunOptions) -> Result<Vec<ReplicateResult>> {
    let mut config = scenario.config.clone();
    config.seed = opts.seed;
    config.validate()?;
    let known = scenario.known_probabilities()?;
    let htk = if known.is_some() { opts.htk_replicates } else { 0 };
    let total = opts.replicates.max(htk);
    (0..total)
        .into_par_iter()
        .map(|r| {
            let sim = simulate(&config, r)?;
            let k = known.as_ref().filter(|_| r < htk);
            let records = estimate_replicate(scenario, &sim, k, opts, r, r < opts.replicates)?;
            Ok(ReplicateResult {
                replicate: r,
                truth: (1..=sim.horizon).map(|t| sim.prevalence(t)).collect(),
                records,
            })
        })
        .collect()
}

/// Per-day performance of one estimator across replicates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub estimator: EstimatorKind,
    pub day: Day,
    pub mean_estimate: f64,
    pub mean_truth: f64,
    pub bias: f64,
    pub rmse: f64,
    /// `None` when no replicate produced an interval.
    pub coverage: Option<f64>,
    /// Monte Carlo standard error of the bias.
    pub bias_se: f64,
    pub replicates: u64,
}

pub const SUMMARY_COLUMNS: [&str; 10] = [
    "scenario",
    "estimator",
    "day",
    "mean_estimate",
    "mean_truth",
    "bias",
    "rmse",
    "coverage",
    "bias_se",
    "replicates",
];

/// Summaries of clipped estimates, per estimator and day, over replicates
/// where both the estimate and the truth are defined.
pub fn summarize(name: &str, results: &[ReplicateResult], horizon: Day) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for kind in EstimatorKind::ALL {
        for t in 1..=horizon {
            let mut pairs = Vec::new();
            let (mut covered, mut with_ci) = (0u64, 0u64);
            for r in results {
                let (Some(rec), Some(truth)) = (r.record(kind, t), r.truth[(t - 1) as usize]) else {
                    continue;
                };
                let Some(est) = rec.estimate else { continue };
                pairs.push((est, truth));
                if let Some(c) = rec.covers(truth) {
                    with_ci += 1;
                    covered += u64::from(c);
                }
            }
            if pairs.is_empty() {
                continue;
            }
            let n = pairs.len() as f64;
            let mean_estimate = pairs.iter().map(|p| p.0).sum::<f64>() / n;
            let mean_truth = pairs.iter().map(|p| p.1).sum::<f64>() / n;
            let bias = mean_estimate - mean_truth;
            let rmse = (pairs.iter().map(|p| (p.0 - p.1).powi(2)).sum::<f64>() / n).sqrt();
            let var = if pairs.len() > 1 {
                pairs.iter().map(|p| (p.0 - p.1 - bias).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            rows.push(SummaryRow {
                scenario: name.to_string(),
                estimator: kind,
                day: t,
                mean_estimate,
                mean_truth,
                bias,
                rmse,
                coverage: (with_ci > 0).then(|| covered as f64 / with_ci as f64),
                bias_se: (var / n).sqrt(),
                replicates: pairs.len() as u64,
            });
        }
    }
    rows
}

/// Mean compartment trajectory across simulated replicates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub day: Day,
    pub mean_prevalence: f64,
    pub mean_well: f64,
    pub mean_infectious: f64,
    pub mean_removed: f64,
    pub mean_tested: f64,
    pub mean_positive: f64,
}

pub fn trajectory_summary(sims: &[Simulation]) -> Vec<TrajectoryRow> {
    let Some(first) = sims.first() else {
        return Vec::new();
    };
    let n = sims.len() as f64;
    (1..=first.horizon)
        .map(|t| {
            let mean = |f: &dyn Fn(&Simulation) -> f64| sims.iter().map(f).sum::<f64>() / n;
            TrajectoryRow {
                day: t,
                mean_prevalence: mean(&|s| s.prevalence(t).unwrap_or(0.0)),
                mean_well: mean(&|s| s.state(t).well_count() as f64),
                mean_infectious: mean(&|s| s.state(t).infectious_count() as f64),
                mean_removed: mean(&|s| s.state(t).removed_count() as f64),
                mean_tested: mean(&|s| s.transition(t).tested_count() as f64),
                mean_positive: mean(&|s| s.transition(t).positive_count() as f64),
            }
        })
        .collect()
}
