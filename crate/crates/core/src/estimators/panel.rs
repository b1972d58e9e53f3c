//! Observed testing panels and their sufficient counts.
//!
//! Every estimator here depends on the data only through integer counts:
//! per-day stratum sizes and test outcomes, and per-stratum next-test tallies.
//! [`PanelIndex`] stores each individual's contribution once so that counts
//! for any multiset of individuals (bootstrap resamples, jackknife blocks)
//! are a cheap weighted sum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::matrix::StratumSchedule;
use crate::population::{Day, ObservedHistory};

/// Observable histories of a fixed population over days `1..=horizon`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservedPanel {
    pub horizon: Day,
    pub histories: Vec<ObservedHistory>,
}

impl ObservedPanel {
    pub fn new(horizon: Day, histories: Vec<ObservedHistory>) -> Result<Self> {
        if horizon < 1 {
            return Err(Error::Config(format!("horizon must be >= 1, got {horizon}")));
        }
        for (i, h) in histories.iter().enumerate() {
            if h.tests.windows(2).any(|w| w[0].day >= w[1].day) {
                return Err(Error::InconsistentHistory {
                    individual: i,
                    reason: "test days not strictly increasing".into(),
                });
            }
            if h.tests.iter().any(|r| r.day < 1 || r.day > horizon) {
                return Err(Error::InconsistentHistory {
                    individual: i,
                    reason: format!("test outside days 1..={horizon}"),
                });
            }
            if let Some(r) = h.tests.iter().find(|r| h.is_removed(r.day)) {
                return Err(Error::InconsistentHistory {
                    individual: i,
                    reason: format!("tested on day {} while removed", r.day),
                });
            }
        }
        Ok(ObservedPanel { horizon, histories })
    }

    pub fn len(&self) -> usize {
        self.histories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.histories.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DayStatus {
    Removed,
    Exempt,
    Active { stratum: Day, tested: bool, positive: bool },
}

/// One individual's contribution to the sufficient counts.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Contribution {
    /// `days[t - 1]` for `t` in `1..=horizon`.
    days: Vec<DayStatus>,
    /// `(stratum, row day, next test day)`; `row == stratum` is the
    /// post-clearance row, `next == horizon + 1` means no later test.
    rows: Vec<(Day, Day, Day)>,
}

fn contribution(h: &ObservedHistory, horizon: Day) -> Contribution {
    let days = (1..=horizon)
        .map(|t| {
            if h.is_removed(t) {
                DayStatus::Removed
            } else if h.is_exempt(t) {
                DayStatus::Exempt
            } else {
                let r = h.test_on(t);
                DayStatus::Active {
                    stratum: h.last_clearance_before(t),
                    tested: r.is_some(),
                    positive: r == Some(true),
                }
            }
        })
        .collect();
    let none = horizon + 1;
    let next = |d: Day| h.next_test_after(d).unwrap_or(none).min(none);
    let mut rows = Vec::new();
    let clearances = std::iter::once(0).chain(h.clearances().filter(|&c| c < horizon));
    for c in clearances {
        rows.push((c, c, next(c)));
    }
    for r in h.tests.iter().filter(|r| !r.positive) {
        rows.push((h.last_clearance_before(r.day + 1), r.day, next(r.day)));
    }
    Contribution { days, rows }
}

/// Per-individual contributions for a whole panel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PanelIndex {
    horizon: Day,
    items: Vec<Contribution>,
}

impl PanelIndex {
    pub fn new(panel: &ObservedPanel) -> Self {
        PanelIndex {
            horizon: panel.horizon,
            items: panel
                .histories
                .iter()
                .map(|h| contribution(h, panel.horizon))
                .collect(),
        }
    }

    pub fn horizon(&self) -> Day {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Counts for the full panel.
    pub fn counts(&self) -> PanelCounts {
        self.weighted_counts(&vec![1; self.items.len()])
    }

    /// Counts with individual `i` included `multiplicity[i]` times.
    pub fn weighted_counts(&self, multiplicity: &[u32]) -> PanelCounts {
        assert_eq!(multiplicity.len(), self.items.len(), "one multiplicity per individual");
        let mut out = PanelCounts::zeros(self.horizon);
        for (item, &m) in self.items.iter().zip(multiplicity) {
            if m == 0 {
                continue;
            }
            let m = u64::from(m);
            out.population += m;
            for (k, st) in item.days.iter().enumerate() {
                let t = k as Day + 1;
                match *st {
                    DayStatus::Removed => out.day_mut(t).removed += m,
                    DayStatus::Exempt => out.day_mut(t).exempt += m,
                    DayStatus::Active {
                        stratum,
                        tested,
                        positive,
                    } => {
                        let cell = out.stratum_mut(t, stratum);
                        cell.members += m;
                        if tested {
                            cell.tested += m;
                            if positive {
                                cell.positive += m;
                            }
                        }
                    }
                }
            }
            for &(c, s, z) in &item.rows {
                *out.row_cell_mut(c, s, z) += m;
            }
        }
        out
    }
}

/// Counts of one stratum on one day.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StratumDay {
    pub members: u64,
    pub tested: u64,
    pub positive: u64,
}

impl StratumDay {
    pub fn negative(&self) -> u64 {
        self.tested - self.positive
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DayCounts {
    pub removed: u64,
    pub exempt: u64,
    /// Indexed by stratum day `c` in `0..t`.
    pub strata: Vec<StratumDay>,
}

impl DayCounts {
    pub fn tested(&self) -> u64 {
        self.strata.iter().map(|s| s.tested).sum()
    }

    pub fn positive(&self) -> u64 {
        self.strata.iter().map(|s| s.positive).sum()
    }

    /// Non-removed members in strata (excluding exempt individuals).
    pub fn active(&self) -> u64 {
        self.strata.iter().map(|s| s.members).sum()
    }

    /// Non-empty strata in increasing order of clearance day.
    pub fn nonempty_strata(&self) -> impl Iterator<Item = (Day, &StratumDay)> {
        self.strata
            .iter()
            .enumerate()
            .filter(|(_, s)| s.members > 0)
            .map(|(c, s)| (c as Day, s))
    }
}

/// Sufficient counts for every estimator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PanelCounts {
    horizon: Day,
    pub population: u64,
    days: Vec<DayCounts>,
    /// Flat `[c][s][z]` with `c, s ∈ 0..=horizon` and `z ∈ 0..=horizon+1`.
    rows: Vec<u64>,
}

impl PanelCounts {
    fn zeros(horizon: Day) -> Self {
        let h = horizon as usize;
        PanelCounts {
            horizon,
            population: 0,
            days: (1..=h)
                .map(|t| DayCounts {
                    strata: vec![StratumDay::default(); t],
                    ..Default::default()
                })
                .collect(),
            rows: vec![0; (h + 1) * (h + 1) * (h + 2)],
        }
    }

    pub fn horizon(&self) -> Day {
        self.horizon
    }

    fn day_mut(&mut self, t: Day) -> &mut DayCounts {
        &mut self.days[(t - 1) as usize]
    }

    fn stratum_mut(&mut self, t: Day, c: Day) -> &mut StratumDay {
        &mut self.days[(t - 1) as usize].strata[c as usize]
    }

    fn row_index(&self, c: Day, s: Day, z: Day) -> usize {
        let h = self.horizon as usize;
        (c as usize * (h + 1) + s as usize) * (h + 2) + z as usize
    }

    fn row_cell_mut(&mut self, c: Day, s: Day, z: Day) -> &mut u64 {
        let i = self.row_index(c, s, z);
        &mut self.rows[i]
    }

    pub fn day(&self, t: Day) -> &DayCounts {
        &self.days[(t - 1) as usize]
    }

    /// Number of individuals not in a removal window on day `t`.
    pub fn nonremoved(&self, t: Day) -> u64 {
        self.population - self.day(t).removed
    }

    /// Individuals in row `s` of stratum `c` whose next test is on day `z`.
    pub fn row_count(&self, c: Day, s: Day, z: Day) -> u64 {
        self.rows[self.row_index(c, s, z)]
    }

    /// Plug-in schedule for stratum `c`: observed next-test proportions.
    pub fn empirical_schedule(&self, c: Day) -> Result<StratumSchedule> {
        let h = self.horizon;
        let rows = (c..=h)
            .map(|s| {
                let counts: Vec<u64> = ((s + 1)..=(h + 1)).map(|z| self.row_count(c, s, z)).collect();
                let total: u64 = counts.iter().sum();
                (total > 0).then(|| counts.iter().map(|&n| n as f64 / total as f64).collect())
            })
            .collect();
        StratumSchedule::from_rows(c, h, rows)
    }
}
