//! Testing policies.
//!
//! A regimen maps what is observable about an individual on a given day
//! (last test, last clearance) to the probability of being tested that day.
//! Randomness lives in the simulator; everything here is a pure function.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::population::Day;

/// Which reference point the max-gap clock measures from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GapClock {
    /// `max(last test, last clearance)`: the clock restarts on release.
    #[default]
    SinceTestOrClearance,
    /// Last test only, ignoring clearances.
    SinceTest,
}

/// Base testing policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RegimenKind {
    /// Independent daily coin flip.
    #[serde(rename_all = "kebab-case")]
    SimpleRandom { probability: f64 },
    /// First test staggered uniformly over `initial_window` days, then
    /// `min(1, ((t - z) / max_gap)^2)`.
    #[serde(rename_all = "kebab-case")]
    MaxGap {
        max_gap: Day,
        initial_window: Day,
        #[serde(default)]
        gap_clock: GapClock,
    },
    /// Exactly one test per calendar period at a uniformly chosen day.
    #[serde(rename_all = "kebab-case")]
    OncePerPeriod { period: Day },
    /// Max-gap, but never within `min_gap` days of the last test.
    #[serde(rename_all = "kebab-case")]
    MinMax {
        min_gap: Day,
        max_gap: Day,
        initial_window: Day,
        #[serde(default)]
        gap_clock: GapClock,
    },
    /// Deterministic `period`-day rotation with a staggered first test.
    Rotation { period: Day },
    /// Whole clusters are scheduled by `unit`; members are tested whenever
    /// their cluster is scheduled and they are not removed.
    Clustered { unit: Box<RegimenKind> },
}

/// Forced tests layered on top of the base regimen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Overlay {
    /// On exposure, with this probability the individual is tested on their
    /// first infectious day.
    Symptomatic { probability: f64 },
    /// Clustermates of a positive are tested the next day.
    ContactTracing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimenConfig {
    #[serde(flatten)]
    pub kind: RegimenKind,
    #[serde(default)]
    pub overlays: Vec<Overlay>,
}

impl From<RegimenKind> for RegimenConfig {
    fn from(kind: RegimenKind) -> Self {
        RegimenConfig {
            kind,
            overlays: Vec::new(),
        }
    }
}

/// What the scheduler may look at on day `day`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SchedulingContext {
    pub day: Day,
    /// Last test strictly before `day` (`None` for the sentinel).
    pub last_test: Option<Day>,
    /// Last clearance strictly before `day` (0 at baseline).
    pub last_clearance: Day,
    pub in_nonremoved: bool,
    pub cluster_id: Option<usize>,
    pub symptomatic_today: bool,
    pub cluster_positive_yesterday: bool,
}

impl SchedulingContext {
    pub fn new(day: Day, last_test: Option<Day>, last_clearance: Day) -> Self {
        SchedulingContext {
            day,
            last_test,
            last_clearance,
            in_nonremoved: true,
            ..Default::default()
        }
    }

    /// The last test made after the last clearance, if any.
    pub fn last_test_since_clearance(&self) -> Option<Day> {
        self.last_test.filter(|&z| z > self.last_clearance)
    }
}

impl RegimenKind {
    pub fn simple_random(probability: f64) -> Self {
        RegimenKind::SimpleRandom { probability }
    }

    pub fn max_gap(max_gap: Day, initial_window: Day) -> Self {
        RegimenKind::MaxGap {
            max_gap,
            initial_window,
            gap_clock: GapClock::default(),
        }
    }

    pub fn min_max(min_gap: Day, max_gap: Day, initial_window: Day) -> Self {
        RegimenKind::MinMax {
            min_gap,
            max_gap,
            initial_window,
            gap_clock: GapClock::default(),
        }
    }

    pub fn once_per_period(period: Day) -> Self {
        RegimenKind::OncePerPeriod { period }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        match self {
            RegimenKind::SimpleRandom { probability } => {
                if !(0.0..=1.0).contains(probability) {
                    return bad(format!("simple-random probability {probability} outside [0, 1]"));
                }
            }
            RegimenKind::MaxGap {
                max_gap,
                initial_window,
                ..
            } => {
                if *max_gap < 1 || *initial_window < 1 {
                    return bad("max-gap needs max-gap >= 1 and initial-window >= 1".into());
                }
            }
            RegimenKind::OncePerPeriod { period } => {
                if *period < 1 {
                    return bad("once-per-period needs period >= 1".into());
                }
            }
            RegimenKind::MinMax {
                min_gap,
                max_gap,
                initial_window,
                ..
            } => {
                if *max_gap < 1 || *initial_window < 1 || *min_gap < 0 || min_gap >= max_gap {
                    return bad(format!(
                        "min-max needs 0 <= min-gap < max-gap and initial-window >= 1 (got {min_gap}, {max_gap}, {initial_window})"
                    ));
                }
            }
            RegimenKind::Rotation { period } => {
                if *period < 1 {
                    return bad("rotation needs period >= 1".into());
                }
            }
            RegimenKind::Clustered { unit } => {
                if matches!(**unit, RegimenKind::Clustered { .. }) {
                    return bad("clustered regimens cannot be nested".into());
                }
                unit.validate()?;
            }
        }
        Ok(())
    }

    pub fn is_clustered(&self) -> bool {
        matches!(self, RegimenKind::Clustered { .. })
    }

    /// The regimen that decides individual (or, if clustered, cluster) tests.
    pub fn schedule_unit(&self) -> &RegimenKind {
        match self {
            RegimenKind::Clustered { unit } => unit,
            other => other,
        }
    }

    /// Per-day testing probability before overlays.
    ///
    /// For a clustered regimen the context must describe the cluster
    /// (its last scheduled day, clearance 0); the unit regimen is applied to it.
    pub fn test_probability(&self, ctx: &SchedulingContext) -> f64 {
        if !ctx.in_nonremoved {
            return 0.0;
        }
        let t = ctx.day;
        let c = ctx.last_clearance;
        match self {
            RegimenKind::SimpleRandom { probability } => *probability,
            RegimenKind::MaxGap {
                max_gap,
                initial_window,
                gap_clock,
            } => gap_probability(ctx, *max_gap, *initial_window, *gap_clock),
            RegimenKind::MinMax {
                min_gap,
                max_gap,
                initial_window,
                gap_clock,
            } => match ctx.last_test_since_clearance() {
                Some(z) if t - z <= *min_gap => 0.0,
                _ => gap_probability(ctx, *max_gap, *initial_window, *gap_clock),
            },
            RegimenKind::OncePerPeriod { period } => {
                let k = (t - 1).div_euclid(*period) + 1;
                let start = (k - 1) * period;
                let end = k * period;
                let since = start.max(c);
                match ctx.last_test {
                    Some(z) if z > since => 0.0,
                    _ => 1.0 / (end - t + 1) as f64,
                }
            }
            RegimenKind::Rotation { period } => match ctx.last_test_since_clearance() {
                Some(z) => {
                    if t - z >= *period {
                        1.0
                    } else {
                        0.0
                    }
                }
                None if c == 0 => stagger(t, *period),
                // Re-entry is day c + 1; the next test falls `period` days later.
                None => {
                    if t - (c + 1) >= *period {
                        1.0
                    } else {
                        0.0
                    }
                }
            },
            RegimenKind::Clustered { unit } => unit.test_probability(ctx),
        }
    }
}

/// `1 / (window - t + 1)` on days `1..=window`: makes the first test day
/// uniform over the window.
fn stagger(t: Day, window: Day) -> f64 {
    if t >= window {
        1.0
    } else {
        1.0 / (window - t + 1) as f64
    }
}

fn gap_probability(ctx: &SchedulingContext, max_gap: Day, window: Day, clock: GapClock) -> f64 {
    let t = ctx.day;
    let c = ctx.last_clearance;
    let z = match clock {
        GapClock::SinceTestOrClearance => match ctx.last_test {
            None if c == 0 => return stagger(t, window),
            None => c,
            Some(z) => z.max(c),
        },
        GapClock::SinceTest => match ctx.last_test {
            None => return stagger(t, window),
            Some(z) => z,
        },
    };
    let r = (t - z) as f64 / max_gap as f64;
    (r * r).min(1.0)
}

impl RegimenConfig {
    pub fn validate(&self) -> Result<()> {
        self.kind.validate()?;
        for o in &self.overlays {
            if let Overlay::Symptomatic { probability } = o {
                if !(0.0..=1.0).contains(probability) {
                    return Err(Error::Config(format!(
                        "symptomatic probability {probability} outside [0, 1]"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn symptomatic_probability(&self) -> Option<f64> {
        self.overlays.iter().find_map(|o| match o {
            Overlay::Symptomatic { probability } => Some(*probability),
            _ => None,
        })
    }

    pub fn contact_tracing(&self) -> bool {
        self.overlays.contains(&Overlay::ContactTracing)
    }

    /// Overlays force a test on their trigger day regardless of eligibility.
    pub fn overlay_forces_test(&self, ctx: &SchedulingContext) -> bool {
        ctx.in_nonremoved
            && ((ctx.symptomatic_today && self.symptomatic_probability().is_some())
                || (ctx.cluster_positive_yesterday && self.contact_tracing()))
    }
}

/// Test days of a deterministic rotation starting at `first_test_day`.
pub fn rotation_schedule(period: Day, first_test_day: Day, horizon: Day) -> Vec<Day> {
    assert!(period >= 1, "rotation period must be positive");
    (0..)
        .map(|k| first_test_day + k * period)
        .take_while(|&d| d <= horizon)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(t: Day, z: Option<Day>, c: Day) -> SchedulingContext {
        SchedulingContext::new(t, z, c)
    }

    #[test]
    fn simple_random_ignores_history() {
        let r = RegimenKind::simple_random(1.0 / 6.0);
        assert_eq!(r.test_probability(&ctx(9, Some(8), 0)), 1.0 / 6.0);
    }

    #[test]
    fn max_gap_forces_test_at_cap() {
        let r = RegimenKind::max_gap(10, 10);
        assert_eq!(r.test_probability(&ctx(15, Some(5), 0)), 1.0);
        assert!((r.test_probability(&ctx(8, Some(5), 0)) - 0.09).abs() < 1e-15);
    }

    #[test]
    fn max_gap_clock_restarts_on_clearance() {
        let r = RegimenKind::max_gap(10, 10);
        assert!((r.test_probability(&ctx(13, Some(5), 10)) - 0.09).abs() < 1e-15);
        let since_test = RegimenKind::MaxGap {
            max_gap: 10,
            initial_window: 10,
            gap_clock: GapClock::SinceTest,
        };
        assert!((since_test.test_probability(&ctx(13, Some(5), 10)) - 0.64).abs() < 1e-15);
    }

    #[test]
    fn min_max_blocks_recent_tests() {
        let r = RegimenKind::min_max(5, 10, 10);
        assert_eq!(r.test_probability(&ctx(10, Some(5), 0)), 0.0);
        assert!((r.test_probability(&ctx(11, Some(5), 0)) - 0.36).abs() < 1e-15);
    }

    #[test]
    fn once_per_period_three_days_left() {
        let r = RegimenKind::once_per_period(7);
        assert!((r.test_probability(&ctx(5, None, 0)) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.test_probability(&ctx(6, Some(2), 0)), 0.0);
        // A test in the previous period does not block this one.
        assert!((r.test_probability(&ctx(8, Some(7), 0)) - 1.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn once_per_period_marginal_is_uniform() {
        // Enumerate the decision tree: P(first test on day d) for d in 1..=7.
        let r = RegimenKind::once_per_period(7);
        let mut untested = 1.0;
        for d in 1..=7 {
            let q = r.test_probability(&ctx(d, None, 0));
            assert!((untested * q - 1.0 / 7.0).abs() < 1e-12, "day {d}");
            untested *= 1.0 - q;
        }
        assert!(untested.abs() < 1e-12);
    }

    #[test]
    fn once_per_period_retests_after_midweek_return() {
        let r = RegimenKind::once_per_period(7);
        // Tested on day 2, cleared on day 4: eligible again for days 5..=7.
        assert!((r.test_probability(&ctx(5, Some(2), 4)) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn rotation_progression() {
        assert_eq!(rotation_schedule(7, 3, 21), vec![3, 10, 17]);
        assert_eq!(rotation_schedule(1, 1, 4), vec![1, 2, 3, 4]);
    }

    #[test]
    fn rotation_staggered_starts_spread_evenly() {
        // Each first-test day in 1..=tau is equally likely, so expected
        // daily counts over one full cycle are equal.
        let tau = 5;
        let r = RegimenKind::Rotation { period: tau };
        let mut untested = 1.0;
        let mut first = vec![0.0; tau as usize + 1];
        for d in 1..=tau {
            let q = r.test_probability(&ctx(d, None, 0));
            first[d as usize] = untested * q;
            untested *= 1.0 - q;
        }
        let mut per_day = vec![0.0; 3 * tau as usize + 1];
        for f in 1..=tau {
            for d in rotation_schedule(tau, f, 3 * tau) {
                per_day[d as usize] += first[f as usize];
            }
        }
        for d in tau..=3 * tau {
            assert!((per_day[d as usize] - 1.0 / tau as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn rotation_resumes_after_reentry() {
        let r = RegimenKind::Rotation { period: 7 };
        assert_eq!(r.test_probability(&ctx(17, Some(3), 10)), 0.0);
        assert_eq!(r.test_probability(&ctx(18, Some(3), 10)), 1.0);
    }

    #[test]
    fn removed_individuals_are_never_scheduled() {
        let mut c = ctx(5, None, 0);
        c.in_nonremoved = false;
        assert_eq!(RegimenKind::simple_random(1.0).test_probability(&c), 0.0);
    }

    #[test]
    fn min_max_must_have_min_below_max() {
        assert!(RegimenKind::min_max(10, 10, 10).validate().is_err());
        assert!(RegimenKind::min_max(5, 10, 10).validate().is_ok());
    }

    #[test]
    fn config_parses_from_toml() {
        let cfg: RegimenConfig = toml::from_str(
            r#"
kind = "clustered"
[unit]
kind = "min-max"
min-gap = 5
max-gap = 10
initial-window = 10
"#,
        )
        .unwrap();
        assert_eq!(
            cfg.kind,
            RegimenKind::Clustered {
                unit: Box::new(RegimenKind::min_max(5, 10, 10))
            }
        );
        let cfg: RegimenConfig = toml::from_str(
            r#"
kind = "simple-random"
probability = 0.2
overlays = [{ kind = "contact-tracing" }, { kind = "symptomatic", probability = 0.25 }]
"#,
        )
        .unwrap();
        assert!(cfg.contact_tracing());
        assert_eq!(cfg.symptomatic_probability(), Some(0.25));
    }
}
