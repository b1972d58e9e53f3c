//! Test-positive rate and Horvitz–Thompson estimators of the well count.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::matrix::KnownProbabilities;
use crate::estimators::panel::PanelCounts;
use crate::population::{Day, TestCharacteristics};

/// Positives over tests; `None` on a day without tests.
pub fn tpr(positives: u64, tested: u64) -> Option<f64> {
    assert!(positives <= tested, "more positives than tests");
    (tested > 0).then(|| positives as f64 / tested as f64)
}

/// A prevalence estimate before and after restriction to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prevalence {
    pub clipped: f64,
    pub raw: f64,
}

pub fn clip01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// `(N - R - Ŵ) / (N - R)`; `None` when everyone is removed.
pub fn prevalence_from_w(w_hat: f64, population: u64, removed: u64) -> Option<Prevalence> {
    let active = population.checked_sub(removed)?;
    (active > 0).then(|| {
        let raw = (active as f64 - w_hat) / active as f64;
        Prevalence {
            clipped: clip01(raw),
            raw,
        }
    })
}

/// One tested individual as seen by the known-weight estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedTest {
    /// `ω = 1 / π`
    pub weight: f64,
    pub positive: bool,
}

/// `Ŵ = Σ ω D (1 - Y) / (η+ν-1) - (1-η) Σ ω D / (η+ν-1)` over tested individuals.
pub fn ht_estimate_w(tested: &[WeightedTest], tests: &TestCharacteristics) -> Result<f64> {
    let j = tests.youden()?;
    let eta = tests.sensitivity;
    let mut acc = 0.0;
    for r in tested {
        assert!(r.weight.is_finite() && r.weight >= 1.0, "weight {} is not a reciprocal probability", r.weight);
        acc += r.weight * (f64::from(u8::from(!r.positive)) - (1.0 - eta));
    }
    Ok(acc / j)
}

/// Within-stratum HT estimate from counts, all members sharing weight `1/π`.
pub fn stratum_well_estimate(pi: f64, negatives: u64, tested: u64, tests: &TestCharacteristics) -> Result<f64> {
    let j = tests.youden()?;
    Ok((negatives as f64 - (1.0 - tests.sensitivity) * tested as f64) / (pi * j))
}

/// Estimated variance of `Ŵ` under known probabilities, summed over tested
/// individuals.
pub fn wald_ht_variance(tested: &[WeightedTest], tests: &TestCharacteristics) -> Result<f64> {
    let j = tests.youden()?;
    let eta = tests.sensitivity;
    let mut v = 0.0;
    for r in tested {
        let pi = 1.0 / r.weight;
        assert!(pi > 0.0, "tested individual with zero testing probability");
        let y = f64::from(u8::from(r.positive));
        v += (eta - y).powi(2) * (1.0 - pi) / (pi * pi);
    }
    Ok(v / (j * j))
}

/// Per-stratum bookkeeping for one estimation day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum WeightProvenance {
    Known,
    Estimated,
    Fallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StratumWeight {
    pub stratum: Day,
    pub members: u64,
    /// `1/π` for weighted strata; `None` for fallback strata.
    pub weight: Option<f64>,
    pub provenance: WeightProvenance,
}

/// HT result for one day before the prevalence transform.
#[derive(Debug, Clone, PartialEq)]
pub struct HtDay {
    pub day: Day,
    pub w_hat: f64,
    /// Variance of `Ŵ` (known weights only).
    pub variance: Option<f64>,
    pub weights: Vec<StratumWeight>,
}

impl HtDay {
    pub fn fallback_strata(&self) -> usize {
        self.weights
            .iter()
            .filter(|w| w.provenance == WeightProvenance::Fallback)
            .count()
    }
}

/// Options for the estimated-weight estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default, deny_unknown_fields)]
pub struct HtOptions {
    /// Strata smaller than this are counted as entirely well.
    pub min_stratum_size: u64,
    /// Optional cap on weights (off by default).
    pub weight_cap: Option<f64>,
}

impl Default for HtOptions {
    fn default() -> Self {
        HtOptions {
            min_stratum_size: 10,
            weight_cap: None,
        }
    }
}

fn capped(pi: f64, cap: Option<f64>) -> f64 {
    match cap {
        Some(c) if 1.0 / pi > c => 1.0 / c,
        _ => pi,
    }
}

/// HT with plug-in schedule matrices, for every day `1..=horizon`.
///
/// Strata below `min_stratum_size`, without tests that day, or with a
/// degenerate matrix ratio count all members as well. Individuals in an
/// exemption window are known to be well and are added directly.
pub fn ht_estimated(counts: &PanelCounts, tests: &TestCharacteristics, opts: &HtOptions) -> Result<Vec<HtDay>> {
    tests.youden()?;
    let h = counts.horizon();
    let mut probs: Vec<Option<Vec<Option<f64>>>> = vec![None; h as usize];
    let mut out = Vec::with_capacity(h as usize);
    for t in 1..=h {
        let day = counts.day(t);
        let mut w_hat = day.exempt as f64;
        let mut weights = Vec::new();
        for (c, s) in day.nonempty_strata() {
            let fallback = |weights: &mut Vec<StratumWeight>| {
                weights.push(StratumWeight {
                    stratum: c,
                    members: s.members,
                    weight: None,
                    provenance: WeightProvenance::Fallback,
                });
                s.members as f64
            };
            if s.members < opts.min_stratum_size || s.tested == 0 {
                w_hat += fallback(&mut weights);
                continue;
            }
            let table = probs[c as usize].get_or_insert_with(|| {
                counts
                    .empirical_schedule(c)
                    .map(|sched| {
                        sched
                            .testing_probabilities(tests.specificity)
                            .iter()
                            .map(|p| p.value())
                            .collect()
                    })
                    .unwrap_or_default()
            });
            match table.get((t - c - 1) as usize).copied().flatten() {
                Some(pi) => {
                    let pi = capped(pi, opts.weight_cap);
                    w_hat += stratum_well_estimate(pi, s.negative(), s.tested, tests)?;
                    weights.push(StratumWeight {
                        stratum: c,
                        members: s.members,
                        weight: Some(1.0 / pi),
                        provenance: WeightProvenance::Estimated,
                    });
                }
                None => w_hat += fallback(&mut weights),
            }
        }
        out.push(HtDay {
            day: t,
            w_hat,
            variance: None,
            weights,
        });
    }
    Ok(out)
}

/// HT with known testing probabilities and its Wald variance.
///
/// No small-stratum rule is applied; only a stratum whose known probability
/// is zero (a positivity violation) falls back to its headcount.
pub fn ht_known(counts: &PanelCounts, known: &KnownProbabilities, tests: &TestCharacteristics) -> Result<Vec<HtDay>> {
    let j = tests.youden()?;
    let eta = tests.sensitivity;
    let h = counts.horizon();
    if known.horizon() < h {
        return Err(Error::Config(format!(
            "known probabilities cover {} days, panel has {h}",
            known.horizon()
        )));
    }
    let mut out = Vec::with_capacity(h as usize);
    for t in 1..=h {
        let day = counts.day(t);
        let mut w_hat = day.exempt as f64;
        let mut var = 0.0;
        let mut weights = Vec::new();
        for (c, s) in day.nonempty_strata() {
            match known.get(c, t) {
                Some(pi) => {
                    w_hat += stratum_well_estimate(pi, s.negative(), s.tested, tests)?;
                    let per = (1.0 - pi) / (pi * pi);
                    var += per * ((eta - 1.0).powi(2) * s.positive as f64 + eta * eta * s.negative() as f64);
                    weights.push(StratumWeight {
                        stratum: c,
                        members: s.members,
                        weight: Some(1.0 / pi),
                        provenance: WeightProvenance::Known,
                    });
                }
                None => {
                    w_hat += s.members as f64;
                    weights.push(StratumWeight {
                        stratum: c,
                        members: s.members,
                        weight: None,
                        provenance: WeightProvenance::Fallback,
                    });
                }
            }
        }
        out.push(HtDay {
            day: t,
            w_hat,
            variance: Some(var / (j * j)),
            weights,
        });
    }
    Ok(out)
}
