//! Individuals, compartments and event histories.
//!
//! A population of fixed size `N` is tracked day by day in three compartments:
//! well (`W`), infectious (`I`) and removed (`R`). The same process can be read
//! either as a sequence of set updates ([`advance`]) or as a deterministic
//! function of per-individual event times ([`reconstruct_state`]); both views
//! are kept here so each can check the other.
//!
//! Day 0 is the baseline. Every individual is treated as cleared on day 0 and
//! the first simulated day is day 1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Integer day index. Negative values are allowed for pre-baseline exposures.
pub type Day = i64;

/// A point on the event time line, including the sentinel conventions.
///
/// Variant order is the time order for every list it is used in: real
/// clearance, test and infectious-end times are always on day 1 or later, so
/// `Baseline` (day 0) precedes all of them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventTime {
    /// The "never happened" exposure sentinel.
    NegInfinity,
    /// The day-0 convention for the first clearance, test and infectious end.
    Baseline,
    At(Day),
    /// An infectious period that has not ended (yet).
    PosInfinity,
}

impl EventTime {
    /// Whether this event happened strictly before day `t`.
    pub fn before(self, t: Day) -> bool {
        match self {
            EventTime::NegInfinity => true,
            EventTime::Baseline => 0 < t,
            EventTime::At(d) => d < t,
            EventTime::PosInfinity => false,
        }
    }

    pub fn day(self) -> Option<Day> {
        match self {
            EventTime::At(d) => Some(d),
            EventTime::Baseline => Some(0),
            _ => None,
        }
    }
}

/// Per-individual clearance, exposure, infectious-end and test times.
///
/// Index 0 of every list is the sentinel (`C₁ = Z₁ = V₁ = 0`, `X₁ = −∞`).
/// Exposures and infectious ends are aligned: `infectious_end_times[m]` closes
/// the infection that started at `exposure_times[m]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventHistory {
    clearance_times: Vec<EventTime>,
    exposure_times: Vec<EventTime>,
    infectious_end_times: Vec<EventTime>,
    test_times: Vec<EventTime>,
    test_results: Vec<bool>,
}

impl Default for EventHistory {
    fn default() -> Self {
        Self::new()
    }
}

impl EventHistory {
    /// A history holding only the sentinel events.
    pub fn new() -> Self {
        EventHistory {
            clearance_times: vec![EventTime::Baseline],
            exposure_times: vec![EventTime::NegInfinity],
            infectious_end_times: vec![EventTime::Baseline],
            test_times: vec![EventTime::Baseline],
            test_results: vec![false],
        }
    }

    /// Builds a history from real (non-sentinel) events and validates it.
    ///
    /// `infections` pairs each exposure day with its infectious-end day
    /// (`None` while still infectious).
    pub fn from_events(
        clearances: &[Day],
        infections: &[(Day, Option<Day>)],
        tests: &[(Day, bool)],
    ) -> Result<Self> {
        let mut h = EventHistory::new();
        h.clearance_times
            .extend(clearances.iter().map(|&d| EventTime::At(d)));
        for &(x, v) in infections {
            h.exposure_times.push(EventTime::At(x));
            h.infectious_end_times
                .push(v.map_or(EventTime::PosInfinity, EventTime::At));
        }
        for &(z, y) in tests {
            h.test_times.push(EventTime::At(z));
            h.test_results.push(y);
        }
        h.validate().map_err(|reason| Error::InconsistentHistory {
            individual: 0,
            reason,
        })?;
        Ok(h)
    }

    pub fn clearance_times(&self) -> &[EventTime] {
        &self.clearance_times
    }

    pub fn exposure_times(&self) -> &[EventTime] {
        &self.exposure_times
    }

    pub fn infectious_end_times(&self) -> &[EventTime] {
        &self.infectious_end_times
    }

    pub fn test_times(&self) -> &[EventTime] {
        &self.test_times
    }

    pub fn test_results(&self) -> &[bool] {
        &self.test_results
    }

    pub fn record_test(&mut self, day: Day, positive: bool) {
        self.test_times.push(EventTime::At(day));
        self.test_results.push(positive);
    }

    pub fn record_exposure(&mut self, day: Day) {
        self.exposure_times.push(EventTime::At(day));
        self.infectious_end_times.push(EventTime::PosInfinity);
    }

    /// Closes the current infection on `day` (detection or undetected recovery).
    pub fn record_infectious_end(&mut self, day: Day) {
        let n = self.infectious_end_times.len();
        if n > 1 && self.infectious_end_times[n - 1] == EventTime::PosInfinity {
            self.infectious_end_times[n - 1] = EventTime::At(day);
        }
    }

    pub fn record_clearance(&mut self, day: Day) {
        self.clearance_times.push(EventTime::At(day));
    }

    /// Number of real exposures (sentinel excluded).
    pub fn exposure_count(&self) -> usize {
        self.exposure_times.len() - 1
    }

    /// Real tests as `(day, positive)` pairs.
    pub fn tests(&self) -> impl Iterator<Item = (Day, bool)> + '_ {
        self.test_times
            .iter()
            .zip(&self.test_results)
            .skip(1)
            .filter_map(|(z, &y)| z.day().map(|d| (d, y)))
    }

    /// Checks the list invariants; returns a description of the first violation.
    pub fn validate(&self) -> std::result::Result<(), String> {
        fn strictly_increasing(name: &str, xs: &[EventTime]) -> std::result::Result<(), String> {
            match xs.windows(2).find(|w| w[0] >= w[1]) {
                Some(w) => Err(format!("{name} not strictly increasing ({:?} then {:?})", w[0], w[1])),
                None => Ok(()),
            }
        }
        fn on_or_after_day_one(name: &str, xs: &[EventTime]) -> std::result::Result<(), String> {
            match xs.iter().skip(1).find(|e| !matches!(e, EventTime::At(d) if *d >= 1)) {
                Some(e) => Err(format!("{name} entry {e:?} must be a real day >= 1")),
                None => Ok(()),
            }
        }
        if self.clearance_times.first() != Some(&EventTime::Baseline)
            || self.test_times.first() != Some(&EventTime::Baseline)
            || self.exposure_times.first() != Some(&EventTime::NegInfinity)
            || self.infectious_end_times.first() != Some(&EventTime::Baseline)
        {
            return Err("sentinel events missing".into());
        }
        if self.test_results.len() != self.test_times.len() {
            return Err("test_results and test_times differ in length".into());
        }
        if self.exposure_times.len() != self.infectious_end_times.len() {
            return Err("exposure and infectious-end lists differ in length".into());
        }
        strictly_increasing("clearance_times", &self.clearance_times)?;
        strictly_increasing("exposure_times", &self.exposure_times)?;
        strictly_increasing("test_times", &self.test_times)?;
        on_or_after_day_one("clearance_times", &self.clearance_times)?;
        on_or_after_day_one("test_times", &self.test_times)?;
        if self.exposure_times[1..].iter().any(|x| !matches!(x, EventTime::At(_))) {
            return Err("real exposure times must be finite days".into());
        }
        for (m, (x, v)) in self
            .exposure_times
            .iter()
            .zip(&self.infectious_end_times)
            .enumerate()
            .skip(1)
        {
            match v {
                EventTime::At(d) if EventTime::At(*d) > *x => {}
                EventTime::PosInfinity if m + 1 == self.exposure_times.len() => {}
                _ => return Err(format!("infection {m} ends at {v:?}, not after exposure {x:?}")),
            }
        }
        Ok(())
    }

    /// The observable part of the history: tests and removal windows.
    pub fn observed(&self) -> ObservedHistory {
        let tests: Vec<TestRecord> = self
            .tests()
            .map(|(day, positive)| TestRecord { day, positive })
            .collect();
        let clearances: Vec<Day> = self.clearance_times.iter().skip(1).filter_map(|c| c.day()).collect();
        let removals = tests
            .iter()
            .filter(|r| r.positive)
            .map(|r| RemovalWindow {
                start: r.day + 1,
                clearance: clearances.iter().copied().find(|&c| c > r.day),
            })
            .collect();
        ObservedHistory {
            tests,
            removals,
            exemptions: Vec::new(),
        }
    }
}

/// Indices of the last test, clearance and exposure strictly before a day.
///
/// Indices are 0-based positions in the corresponding [`EventHistory`] lists;
/// 0 is always the sentinel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventIndices {
    pub test: usize,
    pub clearance: usize,
    pub exposure: usize,
}

fn last_before(times: &[EventTime], t: Day) -> usize {
    // Sentinels precede every day >= 1, so the count is at least 1.
    times.partition_point(|e| e.before(t)).saturating_sub(1)
}

/// `K(t)`, `L(t)` and `M(t)` for one individual.
pub fn last_event_indices(history: &EventHistory, t: Day) -> EventIndices {
    debug_assert!(t >= 1, "event indices are defined for t >= 1");
    EventIndices {
        test: last_before(&history.test_times, t),
        clearance: last_before(&history.clearance_times, t),
        exposure: last_before(&history.exposure_times, t),
    }
}

/// Membership indicator vectors at the start of a day.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompartmentState {
    pub day: Day,
    pub well: Vec<bool>,
    pub infectious: Vec<bool>,
    pub removed: Vec<bool>,
}

impl CompartmentState {
    pub fn population_size(&self) -> usize {
        self.well.len()
    }

    pub fn well_count(&self) -> usize {
        self.well.iter().filter(|&&b| b).count()
    }

    pub fn infectious_count(&self) -> usize {
        self.infectious.iter().filter(|&&b| b).count()
    }

    pub fn removed_count(&self) -> usize {
        self.removed.iter().filter(|&&b| b).count()
    }

    /// `I₊(t) / (N − R₊(t))`, or `None` when everyone is removed.
    pub fn prevalence(&self) -> Option<f64> {
        let active = self.population_size() - self.removed_count();
        (active > 0).then(|| self.infectious_count() as f64 / active as f64)
    }

    /// Every individual is in exactly one compartment.
    pub fn is_partition(&self) -> bool {
        let n = self.well.len();
        self.infectious.len() == n
            && self.removed.len() == n
            && (0..n).all(|i| {
                u8::from(self.well[i]) + u8::from(self.infectious[i]) + u8::from(self.removed[i]) == 1
            })
    }
}

/// The sets that drive the update from day `t` to day `t + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DailyTransition {
    pub day: Day,
    /// `D(t)`
    pub tested: Vec<bool>,
    /// `Y(t)`, including false positives.
    pub positive: Vec<bool>,
    /// `Q(t)`
    pub newly_exposed: Vec<bool>,
    /// `U(t)`
    pub undetected_recovered: Vec<bool>,
    /// `S(t)`
    pub cleared: Vec<bool>,
}

impl DailyTransition {
    pub fn empty(day: Day, n: usize) -> Self {
        DailyTransition {
            day,
            tested: vec![false; n],
            positive: vec![false; n],
            newly_exposed: vec![false; n],
            undetected_recovered: vec![false; n],
            cleared: vec![false; n],
        }
    }

    pub fn tested_count(&self) -> usize {
        self.tested.iter().filter(|&&b| b).count()
    }

    pub fn positive_count(&self) -> usize {
        self.positive.iter().filter(|&&b| b).count()
    }

    /// Checks the subset relations against the state the transition starts from.
    pub fn is_consistent_with(&self, state: &CompartmentState) -> bool {
        let n = state.population_size();
        [&self.tested, &self.positive, &self.newly_exposed, &self.undetected_recovered, &self.cleared]
            .iter()
            .all(|v| v.len() == n)
            && (0..n).all(|i| {
                (!self.positive[i] || self.tested[i])
                    && (!self.tested[i] || !state.removed[i])
                    && (!self.newly_exposed[i] || state.well[i])
                    && (!self.undetected_recovered[i] || state.infectious[i])
                    && (!self.cleared[i] || state.removed[i])
            })
    }
}

/// One application of the compartment set updates:
///
/// ```text
/// W(t+1) = [W ∪ U ∪ S] \ [Q ∪ Y]
/// I(t+1) = [I ∪ Q] \ [U ∪ Y]
/// R(t+1) = [R ∪ Y] \ S
/// ```
pub fn advance(state: &CompartmentState, tr: &DailyTransition) -> CompartmentState {
    let n = state.population_size();
    let mut next = CompartmentState {
        day: state.day + 1,
        well: vec![false; n],
        infectious: vec![false; n],
        removed: vec![false; n],
    };
    for i in 0..n {
        let (q, u, y, s) = (
            tr.newly_exposed[i],
            tr.undetected_recovered[i],
            tr.positive[i],
            tr.cleared[i],
        );
        next.well[i] = (state.well[i] || u || s) && !(q || y);
        next.infectious[i] = (state.infectious[i] || q) && !(u || y);
        next.removed[i] = (state.removed[i] || y) && !s;
    }
    next
}

/// Compartment membership of every individual at day `t` from event times alone.
pub fn reconstruct_state(histories: &[EventHistory], t: Day) -> Result<CompartmentState> {
    let n = histories.len();
    let mut state = CompartmentState {
        day: t,
        well: vec![false; n],
        infectious: vec![false; n],
        removed: vec![false; n],
    };
    for (i, h) in histories.iter().enumerate() {
        h.validate()
            .map_err(|reason| Error::InconsistentHistory { individual: i, reason })?;
        let idx = last_event_indices(h, t);
        let removed = h.test_results[idx.test]
            && h.clearance_times[idx.clearance] < h.test_times[idx.test];
        let still_infectious = !h.infectious_end_times[idx.exposure].before(t);
        state.removed[i] = removed;
        state.well[i] = !removed && !still_infectious;
        state.infectious[i] = !removed && still_infectious;
    }
    Ok(state)
}

/// Test sensitivity (η) and specificity (ν).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestCharacteristics {
    pub sensitivity: f64,
    pub specificity: f64,
}

impl Default for TestCharacteristics {
    fn default() -> Self {
        TestCharacteristics::PERFECT
    }
}

impl TestCharacteristics {
    pub const PERFECT: TestCharacteristics = TestCharacteristics {
        sensitivity: 1.0,
        specificity: 1.0,
    };

    pub fn new(sensitivity: f64, specificity: f64) -> Result<Self> {
        let tc = TestCharacteristics {
            sensitivity,
            specificity,
        };
        tc.validate()?;
        Ok(tc)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |p: f64| p > 0.0 && p <= 1.0;
        if !ok(self.sensitivity) || !ok(self.specificity) {
            return Err(Error::Config(format!(
                "sensitivity and specificity must lie in (0, 1], got {} and {}",
                self.sensitivity, self.specificity
            )));
        }
        Ok(())
    }

    /// `η + ν − 1`, required to be positive wherever it is divided by.
    pub fn youden(&self) -> Result<f64> {
        let j = self.sensitivity + self.specificity - 1.0;
        if j > 0.0 {
            Ok(j)
        } else {
            Err(Error::UninformativeTest {
                sensitivity: self.sensitivity,
                specificity: self.specificity,
            })
        }
    }

    /// Expected fraction of positive results at true prevalence `p`.
    pub fn apparent_prevalence(&self, p: f64) -> f64 {
        self.sensitivity * p + (1.0 - self.specificity) * (1.0 - p)
    }

    pub fn positive_predictive_value(&self, p: f64) -> f64 {
        self.sensitivity * p / self.apparent_prevalence(p)
    }

    pub fn negative_predictive_value(&self, p: f64) -> f64 {
        let negative = self.specificity * (1.0 - p);
        negative / (negative + (1.0 - self.sensitivity) * p)
    }

    /// Inverts [`apparent_prevalence`](Self::apparent_prevalence); unclipped.
    pub fn correct_positive_fraction(&self, fraction: f64) -> Result<f64> {
        Ok((fraction - (1.0 - self.specificity)) / self.youden()?)
    }
}

/// A single observed test result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TestRecord {
    pub day: Day,
    pub positive: bool,
}

/// Days `start..=clearance` spent in the removed compartment.
///
/// `clearance` is `None` when it falls after the observation window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RemovalWindow {
    pub start: Day,
    pub clearance: Option<Day>,
}

impl RemovalWindow {
    pub fn contains(&self, t: Day) -> bool {
        self.start <= t && self.clearance.is_none_or(|c| t <= c)
    }
}

/// What a surveillance program sees of one individual.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ObservedHistory {
    /// Tests in increasing day order.
    pub tests: Vec<TestRecord>,
    /// Removal windows in increasing order.
    pub removals: Vec<RemovalWindow>,
    /// Inclusive day ranges after a removal during which the individual is
    /// known to be non-infectious and is not tested.
    #[serde(default)]
    pub exemptions: Vec<(Day, Day)>,
}

impl ObservedHistory {
    pub fn is_exempt(&self, t: Day) -> bool {
        self.exemptions.iter().any(|&(a, b)| a <= t && t <= b)
    }

    pub fn is_removed(&self, t: Day) -> bool {
        self.removals.iter().any(|w| w.contains(t))
    }

    /// `C_{L(t)}`: the last clearance strictly before `t` (0 at baseline).
    pub fn last_clearance_before(&self, t: Day) -> Day {
        self.removals
            .iter()
            .filter_map(|w| w.clearance)
            .filter(|&c| c < t)
            .max()
            .unwrap_or(0)
    }

    pub fn clearances(&self) -> impl Iterator<Item = Day> + '_ {
        self.removals.iter().filter_map(|w| w.clearance)
    }

    pub fn test_on(&self, t: Day) -> Option<bool> {
        self.tests
            .binary_search_by_key(&t, |r| r.day)
            .ok()
            .map(|i| self.tests[i].positive)
    }

    /// First test strictly after `day`.
    pub fn next_test_after(&self, day: Day) -> Option<Day> {
        let i = self.tests.partition_point(|r| r.day <= day);
        self.tests.get(i).map(|r| r.day)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indices_pick_last_test_before_day() {
        let h = EventHistory::from_events(&[], &[], &[(3, false), (7, false)]).unwrap();
        let idx = last_event_indices(&h, 5);
        assert_eq!(h.test_times()[idx.test], EventTime::At(3));
    }

    #[test]
    fn indices_default_to_sentinels() {
        let h = EventHistory::new();
        let idx = last_event_indices(&h, 1);
        assert_eq!((idx.test, idx.clearance, idx.exposure), (0, 0, 0));
        assert_eq!(h.exposure_times()[idx.exposure], EventTime::NegInfinity);
    }

    #[test]
    fn clearance_index_uses_strict_inequality() {
        let h = EventHistory::from_events(&[10], &[], &[(4, true)]).unwrap();
        assert_eq!(h.clearance_times()[last_event_indices(&h, 10).clearance], EventTime::Baseline);
        assert_eq!(h.clearance_times()[last_event_indices(&h, 11).clearance], EventTime::At(10));
    }

    #[test]
    fn positive_test_removes_next_day() {
        let h = EventHistory::from_events(&[], &[(2, Some(4))], &[(4, true)]).unwrap();
        let s = reconstruct_state(&[h.clone()], 5).unwrap();
        assert!(s.removed[0]);
        let s = reconstruct_state(&[h], 4).unwrap();
        assert!(s.infectious[0]);
    }

    #[test]
    fn open_infection_is_infectious() {
        let h = EventHistory::from_events(&[], &[(3, None)], &[]).unwrap();
        let s = reconstruct_state(&[h], 5).unwrap();
        assert!(s.infectious[0] && !s.well[0] && !s.removed[0]);
    }

    #[test]
    fn false_positive_moves_well_to_removed_and_back() {
        let h = EventHistory::from_events(&[7], &[], &[(2, true)]).unwrap();
        assert!(reconstruct_state(&[h.clone()], 2).unwrap().well[0]);
        assert!(reconstruct_state(&[h.clone()], 3).unwrap().removed[0]);
        assert!(reconstruct_state(&[h.clone()], 7).unwrap().removed[0]);
        assert!(reconstruct_state(&[h], 8).unwrap().well[0]);
    }

    #[test]
    fn decreasing_times_name_the_individual() {
        let good = EventHistory::new();
        let mut bad = EventHistory::new();
        bad.record_test(5, false);
        bad.record_test(3, false);
        let err = reconstruct_state(&[good, bad], 6).unwrap_err();
        match err {
            Error::InconsistentHistory { individual, .. } => assert_eq!(individual, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn infectious_end_must_follow_exposure() {
        assert!(EventHistory::from_events(&[], &[(5, Some(5))], &[]).is_err());
        assert!(EventHistory::from_events(&[], &[(5, None), (9, None)], &[]).is_err());
    }

    #[test]
    fn predictive_values_at_five_percent() {
        let tc = TestCharacteristics::new(0.832, 0.992).unwrap();
        assert!((tc.positive_predictive_value(0.05) - 0.8455).abs() < 5e-4);
        assert!((tc.negative_predictive_value(0.05) - 0.9912).abs() < 5e-4);
    }

    #[test]
    fn uninformative_tests_are_rejected() {
        let tc = TestCharacteristics::new(0.5, 0.5).unwrap();
        assert!(matches!(tc.youden(), Err(Error::UninformativeTest { .. })));
        assert!(TestCharacteristics::new(0.0, 1.0).is_err());
    }

    #[test]
    fn observed_history_tracks_windows() {
        let h = EventHistory::from_events(&[9], &[(1, Some(4))], &[(2, false), (4, true), (11, false)])
            .unwrap();
        let o = h.observed();
        assert_eq!(o.removals, vec![RemovalWindow { start: 5, clearance: Some(9) }]);
        assert!(!o.is_removed(4) && o.is_removed(5) && o.is_removed(9) && !o.is_removed(10));
        assert_eq!(o.last_clearance_before(9), 0);
        assert_eq!(o.last_clearance_before(10), 9);
        assert_eq!(o.next_test_after(4), Some(11));
        assert_eq!(o.test_on(4), Some(true));
        assert_eq!(o.test_on(5), None);
    }
}
