//! Scenario-level behaviour at reduced replicate counts.

use prevest_core::estimators::EstimatorKind;
use prevest_core::population::Day;
use prevest_core::scenario::{run_scenario, scenario, summarize, trajectory_summary, RunOptions, SummaryRow};
use prevest_core::simulator::simulate;

const REPLICATES: u64 = 200;

fn rows(name: &str, seed: u64) -> Vec<SummaryRow> {
    let sc = scenario(name).unwrap();
    let opts = RunOptions {
        replicates: REPLICATES,
        htk_replicates: 0,
        bootstrap_iterations: 0,
        seed,
        ..Default::default()
    };
    let res = run_scenario(&sc, &opts).unwrap();
    summarize(name, &res, sc.config.horizon_days)
}

fn get(rows: &[SummaryRow], kind: EstimatorKind, day: Day) -> &SummaryRow {
    rows.iter().find(|r| r.estimator == kind && r.day == day).unwrap()
}

#[test]
fn simple_random_tpr_and_hte_have_matching_rmse() {
    let rows = rows("simple-random", 31);
    for t in 1..=21 {
        let (a, b) = (get(&rows, EstimatorKind::Tpr, t).rmse, get(&rows, EstimatorKind::HtEstimated, t).rmse);
        assert!((a - b).abs() <= 0.10 * a, "day {t}: TPR {a} HT-E {b}");
    }
}

#[test]
fn once_per_period_tpr_bias_resets_at_each_week_start() {
    let rows = rows("once-per-period", 32);
    let tpr = |t| get(&rows, EstimatorKind::Tpr, t);
    for t in [1, 8, 15] {
        let r = tpr(t);
        assert!(r.bias.abs() <= 3.0 * r.bias_se + 0.002, "day {t}: {r:?}");
    }
    for t in [6, 7, 13, 14, 20, 21] {
        let r = tpr(t);
        assert!(r.bias > 5.0 * r.bias_se && r.bias > 0.01, "day {t}: {r:?}");
    }
}

#[test]
fn once_per_period_prevalence_starts_near_two_percent() {
    let sc = scenario("once-per-period").unwrap();
    let sims: Vec<_> = (0..REPLICATES).map(|r| simulate(&sc.config, r).unwrap()).collect();
    let initial: f64 = sims.iter().map(|s| s.state(1).infectious_count() as f64).sum::<f64>() / REPLICATES as f64;
    // Binomial(1000, 0.02): SE of the mean over 200 runs is about 0.31.
    assert!((initial - 20.0).abs() < 1.5, "{initial}");
    let traj = trajectory_summary(&sims);
    let peak = traj.iter().map(|r| r.mean_prevalence).fold(0.0, f64::max);
    assert!((0.04..0.07).contains(&peak), "peak {peak}");
}
