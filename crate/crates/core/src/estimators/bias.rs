//! Multiplicative bias of the test-positive rate.

use std::collections::BTreeMap;

use crate::population::Day;

/// `B(t) = Σ prev(z)·test_share(z) / Σ prev(z)·pop_share(z)`, with strata
/// keyed by the day of the last test.
///
/// Shares are normalised to sum to one. Returns `None` when the denominator
/// vanishes.
pub fn bias_ratio(
    stratum_prevalence: &BTreeMap<Day, f64>,
    test_share: &BTreeMap<Day, f64>,
    population_share: &BTreeMap<Day, f64>,
) -> Option<f64> {
    let weighted = |share: &BTreeMap<Day, f64>| {
        let total: f64 = share.values().sum();
        if total <= 0.0 {
            return None;
        }
        let dot: f64 = share
            .iter()
            .map(|(z, w)| stratum_prevalence.get(z).copied().unwrap_or(0.0) * w)
            .sum();
        Some(dot / total)
    };
    let num = weighted(test_share)?;
    let den = weighted(population_share)?;
    (den != 0.0).then(|| num / den)
}

/// Inputs for a `τ`-day rotation on day `t`: last-test days `t-τ..t-1` are
/// equally common, prevalence grows linearly with time since the last
/// negative, and only the `t-τ` stratum is due for testing.
pub fn rotation_bias_inputs(
    tau: Day,
    t: Day,
) -> (BTreeMap<Day, f64>, BTreeMap<Day, f64>, BTreeMap<Day, f64>) {
    let days = (t - tau)..t;
    let prev = days.clone().map(|z| (z, (t - z) as f64)).collect();
    let test = BTreeMap::from([(t - tau, 1.0)]);
    let pop = days.map(|z| (z, 1.0)).collect();
    (prev, test, pop)
}
