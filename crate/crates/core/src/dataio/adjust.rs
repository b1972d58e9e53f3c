//! Turning a raw testing matrix into observed histories.
//!
//! Rows are processed forward in time with a small state machine. A retained
//! positive on day `z` leaves the individual non-removed (and counted as
//! infectious) through the result day `z + delay`, removed on
//! `z + delay + 1 ..= z + delay + isolation`, and exempt from testing (known
//! well) from clearance until `z + exemption`. Tests during those periods are
//! dropped, as are repeat negatives within a Monday–Sunday week when the
//! weekly filter is on.

use chrono::Datelike;
use serde::{Deserialize, Serialize};

use crate::dataio::matrix::{Cell, TestingMatrix};
use crate::error::{Error, Result};
use crate::estimators::panel::ObservedPanel;
use crate::population::{Day, ObservedHistory, RemovalWindow, TestCharacteristics, TestRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default, deny_unknown_fields)]
pub struct AdjustmentPolicy {
    pub result_delay_days: Day,
    pub post_isolation_exemption_days: Day,
    pub keep_first_test_per_week: bool,
    pub min_daily_tests: u64,
    pub assumed_sensitivity: f64,
    pub assumed_specificity: f64,
    pub isolation_days: Day,
}

impl Default for AdjustmentPolicy {
    fn default() -> Self {
        AdjustmentPolicy {
            result_delay_days: 2,
            post_isolation_exemption_days: 90,
            keep_first_test_per_week: true,
            min_daily_tests: 100,
            assumed_sensitivity: 0.832,
            assumed_specificity: 1.0,
            isolation_days: 10,
        }
    }
}

impl AdjustmentPolicy {
    /// Reads a simulated matrix back exactly as the simulator produced it:
    /// immediate removal for `isolation_days`, no exemption, no filtering.
    pub fn simulation(isolation_days: Day, tests: TestCharacteristics) -> Self {
        AdjustmentPolicy {
            result_delay_days: 0,
            post_isolation_exemption_days: 0,
            keep_first_test_per_week: false,
            min_daily_tests: 0,
            assumed_sensitivity: tests.sensitivity,
            assumed_specificity: tests.specificity,
            isolation_days,
        }
    }

    pub fn tests(&self) -> Result<TestCharacteristics> {
        TestCharacteristics::new(self.assumed_sensitivity, self.assumed_specificity)
    }

    pub fn validate(&self) -> Result<()> {
        if self.result_delay_days < 0 || self.post_isolation_exemption_days < 0 || self.isolation_days < 1 {
            return Err(Error::Config(
                "delay and exemption must be >= 0 and isolation-days >= 1".into(),
            ));
        }
        self.tests().map(|_| ())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct Episode {
    positive_day: Day,
    removal_start: Day,
    clearance: Day,
    exempt_end: Day,
}

/// Everything the forward pass remembers about a row before a given day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct RowState {
    last_test: Option<(Day, bool)>,
    last_clearance: Day,
    episode: Option<Episode>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowStatus {
    /// Eligible and in the surveilled population.
    Active,
    /// Positive result pending: non-removed but not re-tested.
    Pending,
    Removed,
    Exempt,
}

/// Forward-pass state machine for one row.
#[derive(Debug, Clone)]
pub struct RowProcessor<'a> {
    policy: &'a AdjustmentPolicy,
    /// Monday-based weekday of day 1.
    weekday_offset: Day,
    state: RowState,
}

impl<'a> RowProcessor<'a> {
    pub fn new(policy: &'a AdjustmentPolicy, matrix: &TestingMatrix) -> Self {
        RowProcessor {
            policy,
            weekday_offset: matrix.start.weekday().num_days_from_monday() as Day,
            state: RowState::default(),
        }
    }

    pub fn state(&self) -> RowState {
        self.state
    }

    fn week(&self, t: Day) -> Day {
        (t - 1 + self.weekday_offset).div_euclid(7)
    }

    /// Status on day `t`, after applying clearances that happened before `t`.
    pub fn status(&mut self, t: Day) -> RowStatus {
        let Some(ep) = self.state.episode else {
            return RowStatus::Active;
        };
        if t > ep.clearance && self.state.last_clearance < ep.clearance {
            self.state.last_clearance = ep.clearance;
        }
        if t < ep.removal_start {
            RowStatus::Pending
        } else if t <= ep.clearance {
            RowStatus::Removed
        } else if t <= ep.exempt_end {
            RowStatus::Exempt
        } else {
            self.state.episode = None;
            RowStatus::Active
        }
    }

    /// Processes the cell of day `t`; returns the status and whether the
    /// cell was retained as a test.
    pub fn step(&mut self, t: Day, cell: Cell) -> (RowStatus, bool) {
        let status = self.status(t);
        if status != RowStatus::Active || !cell.is_test() {
            return (status, false);
        }
        let positive = cell == Cell::Positive;
        if !positive && self.policy.keep_first_test_per_week {
            if let Some((z, _)) = self.state.last_test {
                if self.week(z) == self.week(t) {
                    return (status, false);
                }
            }
        }
        self.state.last_test = Some((t, positive));
        if positive {
            let p = self.policy;
            let clearance = t + p.result_delay_days + p.isolation_days;
            self.state.episode = Some(Episode {
                positive_day: t,
                removal_start: t + p.result_delay_days + 1,
                clearance,
                exempt_end: (t + p.post_isolation_exemption_days).max(clearance),
            });
        }
        (status, true)
    }
}

/// Observed histories plus per-day exclusion flags.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjustedData {
    pub panel: ObservedPanel,
    /// Retained tests per day (index `t - 1`).
    pub daily_tests: Vec<u64>,
    /// Days with fewer than `min_daily_tests` retained tests.
    pub excluded: Vec<bool>,
}

impl AdjustedData {
    pub fn is_excluded(&self, t: Day) -> bool {
        self.excluded[(t - 1) as usize]
    }
}

fn process_row(matrix: &TestingMatrix, policy: &AdjustmentPolicy, row: &[Cell]) -> (ObservedHistory, Vec<bool>) {
    let days = matrix.days();
    let mut proc = RowProcessor::new(policy, matrix);
    let mut h = ObservedHistory::default();
    let mut retained = vec![false; row.len()];
    for t in 1..=days {
        let (_, kept) = proc.step(t, row[(t - 1) as usize]);
        if kept {
            retained[(t - 1) as usize] = true;
            let positive = row[(t - 1) as usize] == Cell::Positive;
            h.tests.push(TestRecord { day: t, positive });
            if positive {
                let p = policy;
                let clearance = t + p.result_delay_days + p.isolation_days;
                h.removals.push(RemovalWindow {
                    start: t + p.result_delay_days + 1,
                    clearance: (clearance <= days).then_some(clearance),
                });
                let end = (t + p.post_isolation_exemption_days).min(days);
                if end > clearance {
                    h.exemptions.push((clearance + 1, end));
                }
            }
        }
    }
    (h, retained)
}

/// Applies the policy to every row.
pub fn apply_adjustments(matrix: &TestingMatrix, policy: &AdjustmentPolicy) -> Result<AdjustedData> {
    policy.validate()?;
    matrix.validate()?;
    let days = matrix.days();
    let mut daily = vec![0u64; days as usize];
    let mut histories = Vec::with_capacity(matrix.rows.len());
    for row in &matrix.rows {
        let (h, retained) = process_row(matrix, policy, row);
        for (d, r) in daily.iter_mut().zip(retained) {
            *d += u64::from(r);
        }
        histories.push(h);
    }
    let excluded = daily.iter().map(|&n| n < policy.min_daily_tests).collect();
    let panel = if days == 0 {
        ObservedPanel {
            horizon: 0,
            histories,
        }
    } else {
        ObservedPanel::new(days, histories)?
    };
    Ok(AdjustedData {
        panel,
        daily_tests: daily,
        excluded,
    })
}

/// The matrix with every dropped test removed.
pub fn adjust_matrix(matrix: &TestingMatrix, policy: &AdjustmentPolicy) -> TestingMatrix {
    let rows = matrix
        .rows
        .iter()
        .map(|row| {
            let (_, retained) = process_row(matrix, policy, row);
            row.iter()
                .zip(retained)
                .map(|(&c, r)| if r { c } else { Cell::Absent })
                .collect()
        })
        .collect();
    TestingMatrix {
        start: matrix.start,
        id_hints: matrix.id_hints.clone(),
        rows,
    }
}
