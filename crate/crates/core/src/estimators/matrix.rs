//! Next-test transition matrices and the testing probabilities they identify.
//!
//! For a stratum of individuals last cleared on day `c`, row `s` of the
//! schedule describes when the next test falls: row `c` is the first test
//! after clearance, row `s > c` the next test after a negative on day `s`.
//! Rows carry probabilities for every later day up to the horizon plus one
//! "later than the horizon" cell, so one [`StratumSchedule`] serves every
//! estimation day `t`; the per-day `(t+2)×(t+2)` view is [`ScheduleMatrix`].

use crate::error::{Error, Result};
use crate::population::Day;
use crate::regimen::{RegimenKind, SchedulingContext};

const STOCHASTIC_TOL: f64 = 1e-12;

/// The `(t+2)×(t+2)` matrix for stratum `c` and estimation day `t`.
///
/// Index `i` stands for day `i`; index `t+1` means "after `t`".
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleMatrix {
    stratum: Day,
    horizon: Day,
    entries: Vec<f64>,
}

impl ScheduleMatrix {
    /// Builds a matrix from dense row-major entries, checking the invariants.
    pub fn from_entries(stratum: Day, horizon: Day, entries: Vec<f64>) -> Result<Self> {
        let m = ScheduleMatrix {
            stratum,
            horizon,
            entries,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn stratum(&self) -> Day {
        self.stratum
    }

    pub fn horizon(&self) -> Day {
        self.horizon
    }

    pub fn dim(&self) -> usize {
        self.horizon as usize + 2
    }

    pub fn get(&self, s: usize, z: usize) -> f64 {
        self.entries[s * self.dim() + z]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        let d = self.dim();
        &self.entries[s * d..(s + 1) * d]
    }

    /// Row-stochastic, strictly upper-triangular apart from the corner cell,
    /// and rows outside `c..=t` equal to the indicator of "after `t`".
    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        let bad = |reason: String| {
            Err(Error::Config(format!(
                "schedule matrix for stratum {} at day {}: {reason}",
                self.stratum, self.horizon
            )))
        };
        if self.stratum < 0 || self.stratum >= self.horizon {
            return bad("stratum must precede the estimation day".into());
        }
        if self.entries.len() != d * d {
            return bad(format!("expected {} entries, found {}", d * d, self.entries.len()));
        }
        for s in 0..d {
            let row = self.row(s);
            if row.iter().any(|&p| !(0.0..=1.0 + STOCHASTIC_TOL).contains(&p)) {
                return bad(format!("row {s} has an entry outside [0, 1]"));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return bad(format!("row {s} sums to {sum}"));
            }
            let lower_ok = if s == d - 1 {
                row[..s].iter().all(|&p| p == 0.0) && row[s] == 1.0
            } else {
                row[..=s].iter().all(|&p| p == 0.0)
            };
            if !lower_ok {
                return bad(format!("row {s} is not strictly upper-triangular"));
            }
            if (s as Day) < self.stratum && row[d - 1] != 1.0 {
                return bad(format!("row {s} precedes the stratum but is not the indicator row"));
            }
        }
        Ok(())
    }
}

/// Numerator and denominator of the matrix ratio, by row-vector iteration
/// `v_k = e_c P^k` for `k = 1..=t-c`.
pub fn schedule_ratio_parts(p: &ScheduleMatrix, specificity: f64) -> (f64, f64) {
    let d = p.dim();
    let c = p.stratum() as usize;
    let t = p.horizon() as usize;
    let mut v = vec![0.0; d];
    v[c] = 1.0;
    let mut next = vec![0.0; d];
    let (mut num, mut den) = (0.0, 0.0);
    let mut weight = 1.0;
    for _ in 1..=(t - c) {
        next.iter_mut().for_each(|x| *x = 0.0);
        for (s, &vs) in v.iter().enumerate() {
            if vs == 0.0 {
                continue;
            }
            for (z, &pz) in p.row(s).iter().enumerate().skip(s) {
                next[z] += vs * pz;
            }
        }
        num += weight * next[t];
        den += weight * ((next[t] + next[t + 1]) - (v[t] + v[t + 1]));
        weight *= specificity;
        std::mem::swap(&mut v, &mut next);
    }
    (num, den)
}

/// `P[D(t) = 1 | W(t) = 1, C = c]` from a schedule matrix.
///
/// With perfect specificity the denominator is exactly one (up to rounding);
/// a non-positive denominator is reported as a degenerate stratum.
pub fn testing_probability_from_matrix(p: &ScheduleMatrix, specificity: f64) -> Result<f64> {
    let (num, den) = schedule_ratio_parts(p, specificity);
    if specificity == 1.0 {
        debug_assert!((den - 1.0).abs() < 1e-9, "denominator {den} under perfect specificity");
    }
    if den <= 0.0 || !den.is_finite() {
        return Err(Error::DegenerateStratum {
            stratum: p.stratum(),
            day: p.horizon(),
            reason: "non-positive denominator",
        });
    }
    Ok(num / den)
}

#[derive(Debug, Clone, PartialEq)]
struct Row {
    /// `probs[k]` is the probability of the next test on day `s + 1 + k`;
    /// the final cell is "after the horizon".
    probs: Vec<f64>,
    /// `tail[k]`: probability of the next test after day `s + k`.
    tail: Vec<f64>,
}

impl Row {
    fn new(probs: Vec<f64>) -> Self {
        let mut tail = vec![0.0; probs.len() + 1];
        for k in (0..probs.len()).rev() {
            tail[k] = tail[k + 1] + probs[k];
        }
        tail.pop();
        Row { probs, tail }
    }

    fn indicator(len: usize) -> Self {
        let mut probs = vec![0.0; len];
        probs[len - 1] = 1.0;
        Row::new(probs)
    }
}

/// All rows of the schedule for one stratum, valid for every estimation day
/// up to `horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct StratumSchedule {
    stratum: Day,
    horizon: Day,
    /// Row for day `stratum + j`.
    rows: Vec<Row>,
}

impl StratumSchedule {
    /// `rows[j]` covers next-test days `stratum + j + 1 ..= horizon + 1`
    /// (the last cell meaning "after the horizon"). `None` marks a row with
    /// no qualifying individuals, replaced by the indicator row.
    pub fn from_rows(stratum: Day, horizon: Day, rows: Vec<Option<Vec<f64>>>) -> Result<Self> {
        if stratum < 0 || stratum >= horizon {
            return Err(Error::Config(format!(
                "stratum {stratum} must lie in 0..{horizon}"
            )));
        }
        let expected = (horizon - stratum + 1) as usize;
        if rows.len() != expected {
            return Err(Error::Config(format!(
                "stratum {stratum}: expected {expected} rows, got {}",
                rows.len()
            )));
        }
        let rows = rows
            .into_iter()
            .enumerate()
            .map(|(j, r)| {
                let s = stratum + j as Day;
                let len = (horizon - s + 1) as usize;
                match r {
                    None => Ok(Row::indicator(len)),
                    Some(p) if p.len() == len => {
                        let sum: f64 = p.iter().sum();
                        if (sum - 1.0).abs() > 1e-9 || p.iter().any(|&x| x < 0.0) {
                            return Err(Error::Config(format!(
                                "stratum {stratum}: row {s} is not a distribution (sum {sum})"
                            )));
                        }
                        Ok(Row::new(p))
                    }
                    Some(p) => Err(Error::Config(format!(
                        "stratum {stratum}: row {s} has {} cells, expected {len}",
                        p.len()
                    ))),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(StratumSchedule {
            stratum,
            horizon,
            rows,
        })
    }

    pub fn stratum(&self) -> Day {
        self.stratum
    }

    pub fn horizon(&self) -> Day {
        self.horizon
    }

    /// Probability that the next test after row `s` is on day `z` (`z <= horizon`).
    fn p(&self, s: Day, z: Day) -> f64 {
        self.rows[(s - self.stratum) as usize].probs[(z - s - 1) as usize]
    }

    /// Probability that the next test after row `s` falls after day `t`.
    fn tail(&self, s: Day, t: Day) -> f64 {
        self.rows[(s - self.stratum) as usize].tail[(t - s) as usize]
    }

    /// The dense matrix for estimation day `t`.
    pub fn matrix(&self, t: Day) -> ScheduleMatrix {
        assert!(t > self.stratum && t <= self.horizon, "day {t} outside stratum range");
        let d = t as usize + 2;
        let mut e = vec![0.0; d * d];
        for s in 0..d {
            let sd = s as Day;
            if sd >= self.stratum && sd <= t {
                for z in (sd + 1)..=t {
                    e[s * d + z as usize] = self.p(sd, z);
                }
                e[s * d + d - 1] = self.tail(sd, t);
            } else {
                e[s * d + d - 1] = 1.0;
            }
        }
        ScheduleMatrix {
            stratum: self.stratum,
            horizon: t,
            entries: e,
        }
    }

    /// Testing probabilities for every day `stratum+1..=horizon` at once.
    ///
    /// Uses the forward recursion `a(z) = p(c,z) + ν Σ_{c<s<z} a(s) p(s,z)`,
    /// which equals `[Σ_k ν^{k-1} P^k]_{c,z}` without forming matrix powers.
    pub fn testing_probabilities(&self, specificity: f64) -> Vec<TestingProbability> {
        let c = self.stratum;
        let h = self.horizon;
        let mut a = vec![0.0; (h - c + 1) as usize];
        let idx = |d: Day| (d - c) as usize;
        for z in (c + 1)..=h {
            let mut acc = 0.0;
            for s in (c + 1)..z {
                acc += a[idx(s)] * self.p(s, z);
            }
            a[idx(z)] = self.p(c, z) + specificity * acc;
        }
        ((c + 1)..=h)
            .map(|t| {
                let mut den = self.p(c, t) + self.tail(c, t);
                let mut acc = 0.0;
                for s in (c + 1)..t {
                    acc += a[idx(s)] * (self.p(s, t) + self.tail(s, t));
                }
                den += specificity * acc;
                let num = a[idx(t)];
                TestingProbability {
                    day: t,
                    numerator: num,
                    denominator: den,
                }
            })
            .collect()
    }
}

/// One evaluated matrix ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestingProbability {
    pub day: Day,
    pub numerator: f64,
    pub denominator: f64,
}

impl TestingProbability {
    /// The probability, or `None` when the stratum is degenerate
    /// (non-positive denominator or zero probability).
    pub fn value(&self) -> Option<f64> {
        if self.denominator > 0.0 && self.numerator > 0.0 && self.denominator.is_finite() {
            Some(self.numerator / self.denominator)
        } else {
            None
        }
    }
}

/// Distribution of the first test on days `from+1..=horizon` given the
/// per-day testing probability, followed by the "after horizon" cell.
fn first_test_distribution(from: Day, horizon: Day, mut q: impl FnMut(Day) -> f64) -> Vec<f64> {
    let mut out = Vec::with_capacity((horizon - from + 1) as usize);
    let mut survive = 1.0;
    for u in (from + 1)..=horizon {
        let qu = q(u).clamp(0.0, 1.0);
        out.push(survive * qu);
        survive *= 1.0 - qu;
    }
    out.push(survive);
    out
}

/// Exact schedule of a known regimen for stratum `c`.
///
/// `prior_lag` is the number of days between the positive test that led to a
/// removal and the clearance that ends it; the last test before clearance `c`
/// is therefore on day `c - prior_lag` (for `c > 0`).
pub fn exact_schedule(
    regimen: &RegimenKind,
    stratum: Day,
    horizon: Day,
    prior_lag: Day,
) -> Result<StratumSchedule> {
    let c = stratum;
    let mut rows = Vec::with_capacity((horizon - c + 1) as usize);
    match regimen {
        RegimenKind::Clustered { unit } => {
            // Cluster-level chain: the cluster's own last scheduled day.
            let first = if c == 0 {
                first_test_distribution(0, horizon, |u| {
                    unit.test_probability(&SchedulingContext::new(u, None, 0))
                })
            } else {
                // The cluster was scheduled on c - prior_lag; its schedule kept
                // running while the individual was removed.
                let mut last: Vec<(Option<Day>, f64)> = vec![(Some(c - prior_lag), 1.0)];
                for v in (c - prior_lag + 1)..=c {
                    let mut next: Vec<(Option<Day>, f64)> = Vec::new();
                    let mut tested = 0.0;
                    for &(l, w) in &last {
                        let q = unit.test_probability(&SchedulingContext::new(v, l, 0));
                        tested += w * q;
                        if w * (1.0 - q) > 0.0 {
                            next.push((l, w * (1.0 - q)));
                        }
                    }
                    if tested > 0.0 {
                        next.push((Some(v), tested));
                    }
                    last = next;
                }
                let mut acc = vec![0.0; (horizon - c + 1) as usize];
                for (l, w) in last {
                    let dist = first_test_distribution(c, horizon, |u| {
                        unit.test_probability(&SchedulingContext::new(u, l, 0))
                    });
                    acc.iter_mut().zip(dist).for_each(|(a, p)| *a += w * p);
                }
                acc
            };
            rows.push(Some(first));
            for s in (c + 1)..=horizon {
                rows.push(Some(first_test_distribution(s, horizon, |u| {
                    unit.test_probability(&SchedulingContext::new(u, Some(s), 0))
                })));
            }
        }
        individual => {
            let prior = (c > 0).then_some(c - prior_lag);
            rows.push(Some(first_test_distribution(c, horizon, |u| {
                individual.test_probability(&SchedulingContext::new(u, prior, c))
            })));
            for s in (c + 1)..=horizon {
                rows.push(Some(first_test_distribution(s, horizon, |u| {
                    individual.test_probability(&SchedulingContext::new(u, Some(s), c))
                })));
            }
        }
    }
    StratumSchedule::from_rows(c, horizon, rows)
}

/// Known testing probabilities `π[c][t]` for all strata `c < horizon` and
/// days `t ∈ c+1..=horizon`; `None` marks positivity violations.
#[derive(Debug, Clone, PartialEq)]
pub struct KnownProbabilities {
    horizon: Day,
    table: Vec<Vec<Option<f64>>>,
}

impl KnownProbabilities {
    pub fn from_regimen(
        regimen: &RegimenKind,
        horizon: Day,
        prior_lag: Day,
        specificity: f64,
    ) -> Result<Self> {
        let mut table = Vec::with_capacity(horizon as usize);
        for c in 0..horizon {
            let sched = exact_schedule(regimen, c, horizon, prior_lag)?;
            table.push(
                sched
                    .testing_probabilities(specificity)
                    .iter()
                    .map(TestingProbability::value)
                    .collect(),
            );
        }
        Ok(KnownProbabilities { horizon, table })
    }

    pub fn horizon(&self) -> Day {
        self.horizon
    }

    /// `π` for stratum `c` on day `t`.
    pub fn get(&self, c: Day, t: Day) -> Option<f64> {
        if c < 0 || t <= c || t > self.horizon {
            return None;
        }
        self.table[c as usize][(t - c - 1) as usize]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geometric_rows(c: Day, h: Day, p: f64) -> StratumSchedule {
        let rows = (c..=h)
            .map(|s| Some(first_test_distribution(s, h, |_| p)))
            .collect();
        StratumSchedule::from_rows(c, h, rows).unwrap()
    }

    #[test]
    fn simple_random_probability_is_memoryless() {
        let p = 1.0 / 6.0;
        for c in 0..5 {
            let sched = geometric_rows(c, 12, p);
            for t in (c + 1)..=12 {
                let m = sched.matrix(t);
                m.validate().unwrap();
                let pi = testing_probability_from_matrix(&m, 1.0).unwrap();
                assert!((pi - p).abs() < 1e-12, "c={c} t={t} pi={pi}");
            }
        }
    }

    #[test]
    fn perfect_specificity_denominator_is_one() {
        let sched = exact_schedule(&RegimenKind::min_max(5, 10, 10), 3, 15, 5).unwrap();
        for t in 4..=15 {
            let (_, den) = schedule_ratio_parts(&sched.matrix(t), 1.0);
            assert!((den - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rotation_is_deterministic_per_row() {
        let tau = 4;
        let sched = exact_schedule(&RegimenKind::Rotation { period: tau }, 2, 14, 5).unwrap();
        let m = sched.matrix(14);
        for s in 3..=14usize {
            let target = (s + tau as usize).min(15);
            assert_eq!(m.get(s, target), 1.0, "row {s}");
        }
        // t - c = τ + 1 after re-entry: tested for sure; otherwise never
        // (the first post-clearance test is on c + 1 + τ).
        let probs = sched.testing_probabilities(1.0);
        assert_eq!(probs[(2 + 1 + tau - 3) as usize].value(), Some(1.0));
        assert_eq!(probs[(2 + 2 - 3) as usize].value(), None);
    }

    #[test]
    fn empty_rows_become_indicator_rows() {
        let rows = vec![Some(vec![0.5, 0.5, 0.0]), None, None];
        let sched = StratumSchedule::from_rows(0, 2, rows).unwrap();
        let m = sched.matrix(2);
        assert_eq!(m.row(1), &[0.0, 0.0, 0.0, 1.0]);
        assert_eq!(m.row(3), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn recursion_matches_matrix_powers() {
        let regimens = [
            RegimenKind::simple_random(0.3),
            RegimenKind::max_gap(4, 3),
            RegimenKind::once_per_period(3),
            RegimenKind::min_max(2, 5, 4),
            RegimenKind::Clustered {
                unit: Box::new(RegimenKind::max_gap(4, 4)),
            },
        ];
        for r in &regimens {
            for c in 0..6 {
                let sched = exact_schedule(r, c, 10, 3).unwrap();
                for nu in [1.0, 0.9] {
                    for tp in sched.testing_probabilities(nu) {
                        let m = sched.matrix(tp.day);
                        m.validate().unwrap();
                        let (num, den) = schedule_ratio_parts(&m, nu);
                        assert!((num - tp.numerator).abs() < 1e-12, "{r:?} c={c} t={}", tp.day);
                        assert!((den - tp.denominator).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn validation_catches_broken_matrices() {
        let mut e = vec![0.0; 9];
        e[1] = 1.0; // row 0 → day 1
        e[5] = 1.0; // row 1 → after t
        e[8] = 1.0;
        assert!(ScheduleMatrix::from_entries(0, 1, e.clone()).is_ok());
        e[3] = 0.5; // below diagonal
        assert!(ScheduleMatrix::from_entries(0, 1, e).is_err());
    }

    #[test]
    fn known_table_flags_positivity_violations() {
        let k = KnownProbabilities::from_regimen(&RegimenKind::Rotation { period: 3 }, 9, 5, 1.0)
            .unwrap();
        assert_eq!(k.get(0, 1).map(|p| (p * 3.0).round()), Some(1.0));
        assert_eq!(k.get(2, 3), None);
    }
}
