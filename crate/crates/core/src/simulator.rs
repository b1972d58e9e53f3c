//! Day-by-day simulation of infection, testing and isolation.
//!
//! Each day `t`: (1) non-removed individuals are tested per the regimen and
//! overlays and results drawn; (2) well individuals who did not test
//! positive may be exposed; (3) infectious individuals may recover
//! undetected; (4) removed individuals whose isolation ends are cleared; then
//! the compartments advance.
//!
//! Randomness is drawn from independent ChaCha streams per individual and
//! purpose, always a fixed number of draws per day, so changing the regimen
//! never shifts the exposure draws of a replicate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::panel::ObservedPanel;
use crate::population::{
    advance, CompartmentState, DailyTransition, Day, EventHistory, TestCharacteristics,
};
use crate::regimen::{RegimenConfig, RegimenKind, SchedulingContext};

/// Daily probability of exposure from outside the cluster, as a function of
/// days since baseline or last clearance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ExternalHazard {
    /// `scale · (τ(span-τ)/(span/2)² · (high-low) + low)`
    Peaked {
        scale: f64,
        span: f64,
        low: f64,
        high: f64,
    },
    Constant { rate: f64 },
}

impl Default for ExternalHazard {
    fn default() -> Self {
        ExternalHazard::Peaked {
            scale: 1.0 / 30.0,
            span: 21.0,
            low: 1.0 / 50.0,
            high: 1.0 / 10.0,
        }
    }
}

impl ExternalHazard {
    pub fn at(&self, tau: Day) -> f64 {
        let h = match *self {
            ExternalHazard::Peaked {
                scale,
                span,
                low,
                high,
            } => {
                let tau = tau as f64;
                scale * (tau * (span - tau) / (span / 2.0).powi(2) * (high - low) + low)
            }
            ExternalHazard::Constant { rate } => rate,
        };
        h.clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default, deny_unknown_fields)]
pub struct HazardModel {
    pub external: ExternalHazard,
    /// Per-infectious-clustermate daily transmission probability.
    pub within_cluster_rate: f64,
    /// Hazard multiplier for anyone previously exposed.
    pub subsequent_exposure_multiplier: f64,
    /// Whether clustermates can also re-expose someone previously exposed;
    /// by default subsequent exposures come from the reduced external
    /// hazard only.
    pub within_cluster_reexposure: bool,
    pub initial_prevalence: f64,
}

impl Default for HazardModel {
    fn default() -> Self {
        HazardModel {
            external: ExternalHazard::default(),
            within_cluster_rate: 0.2,
            subsequent_exposure_multiplier: 0.5,
            within_cluster_reexposure: false,
            initial_prevalence: 0.02,
        }
    }
}

impl HazardModel {
    /// No exposures at all.
    pub fn zero() -> Self {
        HazardModel {
            external: ExternalHazard::Constant { rate: 0.0 },
            within_cluster_rate: 0.0,
            subsequent_exposure_multiplier: 0.0,
            within_cluster_reexposure: false,
            initial_prevalence: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct UndetectedRecovery {
    /// Recover undetected on day `x + infectious_duration_days`.
    pub infectious_duration_days: Day,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct TimeVaryingSensitivity {
    pub peak: f64,
    /// Days after exposure over which sensitivity follows the parabola.
    pub window: Day,
    /// Floor as a fraction of the peak.
    #[serde(default = "default_floor")]
    pub floor: f64,
}

fn default_floor() -> f64 {
    0.1
}

impl TimeVaryingSensitivity {
    /// `peak · max{k(w-k)/(w/2)², floor}` for `k = t - x` days since exposure.
    pub fn at(&self, k: Day) -> f64 {
        let w = self.window as f64;
        let k = k as f64;
        self.peak * (k * (w - k) / (w / 2.0).powi(2)).max(self.floor)
    }

    /// Mean sensitivity over days `1..=window` after exposure.
    pub fn window_mean(&self) -> f64 {
        (1..=self.window).map(|k| self.at(k)).sum::<f64>() / self.window as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "defaults::population")]
    pub population_size: usize,
    #[serde(default = "defaults::cluster")]
    pub cluster_size: usize,
    #[serde(default = "defaults::horizon")]
    pub horizon_days: Day,
    #[serde(default)]
    pub hazard: HazardModel,
    pub regimen: RegimenConfig,
    #[serde(default = "defaults::tests")]
    pub tests: TestCharacteristics,
    #[serde(default = "defaults::removal")]
    pub removal_duration_days: Day,
    #[serde(default)]
    pub undetected_recovery: Option<UndetectedRecovery>,
    #[serde(default)]
    pub time_varying_sensitivity: Option<TimeVaryingSensitivity>,
    /// Exposure days of the initially infectious are drawn uniformly from the
    /// last `n` days up to and including baseline; `None` puts them at day 0.
    #[serde(default)]
    pub baseline_exposure_window: Option<Day>,
    #[serde(default)]
    pub seed: u64,
}

mod defaults {
    use crate::population::{Day, TestCharacteristics};
    pub fn population() -> usize {
        1000
    }
    pub fn cluster() -> usize {
        4
    }
    pub fn horizon() -> Day {
        21
    }
    pub fn removal() -> Day {
        5
    }
    pub fn tests() -> TestCharacteristics {
        TestCharacteristics {
            sensitivity: 0.832,
            specificity: 0.992,
        }
    }
}

impl ScenarioConfig {
    /// Defaults for everything except the regimen.
    pub fn with_regimen(regimen: impl Into<RegimenConfig>) -> Self {
        ScenarioConfig {
            population_size: defaults::population(),
            cluster_size: defaults::cluster(),
            horizon_days: defaults::horizon(),
            hazard: HazardModel::default(),
            regimen: regimen.into(),
            tests: defaults::tests(),
            removal_duration_days: defaults::removal(),
            undetected_recovery: None,
            time_varying_sensitivity: None,
            baseline_exposure_window: None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.regimen.validate()?;
        self.tests.validate()?;
        if self.population_size == 0 {
            return bad("population-size must be positive".into());
        }
        if self.cluster_size == 0 || self.population_size % self.cluster_size != 0 {
            return bad(format!(
                "population-size {} must be a positive multiple of cluster-size {}",
                self.population_size, self.cluster_size
            ));
        }
        if self.horizon_days < 1 {
            return bad("horizon-days must be >= 1".into());
        }
        if self.removal_duration_days < 1 {
            return bad("removal-duration-days must be >= 1".into());
        }
        let h = &self.hazard;
        for (name, p) in [
            ("within-cluster-rate", h.within_cluster_rate),
            ("initial-prevalence", h.initial_prevalence),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} {p} outside [0, 1]"));
            }
        }
        if h.subsequent_exposure_multiplier < 0.0 {
            return bad("subsequent-exposure-multiplier must be >= 0".into());
        }
        if let Some(u) = self.undetected_recovery {
            if u.infectious_duration_days < 1 {
                return bad("infectious-duration-days must be >= 1".into());
            }
        }
        if let Some(tv) = self.time_varying_sensitivity {
            if !(tv.peak > 0.0 && tv.peak <= 1.0) || tv.window < 1 {
                return bad("time-varying sensitivity needs peak in (0, 1] and window >= 1".into());
            }
        }
        if matches!(self.baseline_exposure_window, Some(w) if w < 1) {
            return bad("baseline-exposure-window must be >= 1".into());
        }
        Ok(())
    }

    pub fn cluster_of(&self, i: usize) -> usize {
        i / self.cluster_size
    }
}

/// Output of one simulated replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    /// States at the start of days `1..=horizon+1`.
    pub states: Vec<CompartmentState>,
    /// Transitions of days `1..=horizon`.
    pub transitions: Vec<DailyTransition>,
    pub histories: Vec<EventHistory>,
    pub horizon: Day,
}

impl Simulation {
    pub fn state(&self, t: Day) -> &CompartmentState {
        &self.states[(t - 1) as usize]
    }

    pub fn transition(&self, t: Day) -> &DailyTransition {
        &self.transitions[(t - 1) as usize]
    }

    /// True prevalence among the non-removed population on day `t`.
    pub fn prevalence(&self, t: Day) -> Option<f64> {
        self.state(t).prevalence()
    }

    pub fn observed_panel(&self) -> ObservedPanel {
        ObservedPanel::new(self.horizon, self.histories.iter().map(EventHistory::observed).collect())
            .expect("simulated histories are consistent")
    }
}

#[derive(Clone, Copy)]
#[repr(u64)]
enum Purpose {
    Init = 0,
    Testing = 1,
    Exposure = 2,
    Cluster = 3,
}

fn mix(seed: u64, replicate: u64) -> u64 {
    // splitmix64 finaliser over the pair.
    let mut z = seed ^ replicate.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream(key: u64, unit: usize, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream((unit as u64) << 2 | purpose as u64);
    rng
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Compartment {
    Well,
    Infectious,
    Removed,
}

struct Person {
    comp: Compartment,
    last_test: Option<Day>,
    last_clearance: Day,
    ever_exposed: bool,
    exposure: Option<Day>,
    clears_on: Option<Day>,
    forced_on: Option<Day>,
    testing: ChaCha8Rng,
    exposure_rng: ChaCha8Rng,
}

/// Initial histories: each individual independently infectious with the
/// initial prevalence, exposure day 0 or back-dated uniformly.
pub fn initialize_population(config: &ScenarioConfig, replicate: u64) -> Vec<EventHistory> {
    let key = mix(config.seed, replicate);
    (0..config.population_size)
        .map(|i| {
            let mut rng = stream(key, i, Purpose::Init);
            let u: f64 = rng.random();
            let back: f64 = rng.random();
            let mut h = EventHistory::new();
            if u < config.hazard.initial_prevalence {
                let x = match config.baseline_exposure_window {
                    Some(w) => -((back * w as f64).floor() as Day).min(w - 1),
                    None => 0,
                };
                h.record_exposure(x);
            }
            h
        })
        .collect()
}

/// Simulates replicate `replicate` of `config`.
pub fn simulate(config: &ScenarioConfig, replicate: u64) -> Result<Simulation> {
    config.validate()?;
    let n = config.population_size;
    let horizon = config.horizon_days;
    let key = mix(config.seed, replicate);
    let regimen = &config.regimen;
    let clustered = regimen.kind.is_clustered();
    let unit: &RegimenKind = regimen.kind.schedule_unit();
    let symptomatic = regimen.symptomatic_probability();
    let tracing = regimen.contact_tracing();
    let n_clusters = n / config.cluster_size;

    let mut histories = initialize_population(config, replicate);
    let mut people: Vec<Person> = histories
        .iter()
        .enumerate()
        .map(|(i, h)| {
            let exposure = h.exposure_times().get(1).and_then(|x| x.day());
            Person {
                comp: if exposure.is_some() {
                    Compartment::Infectious
                } else {
                    Compartment::Well
                },
                last_test: None,
                last_clearance: 0,
                ever_exposed: exposure.is_some(),
                exposure,
                clears_on: None,
                forced_on: None,
                testing: stream(key, i, Purpose::Testing),
                exposure_rng: stream(key, i, Purpose::Exposure),
            }
        })
        .collect();
    let mut cluster_rngs: Vec<ChaCha8Rng> = (0..n_clusters).map(|k| stream(key, k, Purpose::Cluster)).collect();
    let mut cluster_last: Vec<Option<Day>> = vec![None; n_clusters];

    let snapshot = |people: &[Person], day: Day| CompartmentState {
        day,
        well: people.iter().map(|p| p.comp == Compartment::Well).collect(),
        infectious: people.iter().map(|p| p.comp == Compartment::Infectious).collect(),
        removed: people.iter().map(|p| p.comp == Compartment::Removed).collect(),
    };

    let mut states = vec![snapshot(&people, 1)];
    let mut transitions = Vec::with_capacity(horizon as usize);
    let mut cluster_scheduled = vec![false; n_clusters];
    let mut infectious_in_cluster = vec![0u32; n_clusters];

    for t in 1..=horizon {
        let state = states.last().expect("state").clone();
        let mut tr = DailyTransition::empty(t, n);

        if clustered {
            for (k, rng) in cluster_rngs.iter_mut().enumerate() {
                let u: f64 = rng.random();
                let q = unit.test_probability(&SchedulingContext::new(t, cluster_last[k], 0));
                cluster_scheduled[k] = u < q;
                if cluster_scheduled[k] {
                    cluster_last[k] = Some(t);
                }
            }
        }
        infectious_in_cluster.iter_mut().for_each(|x| *x = 0);
        for (i, p) in people.iter().enumerate() {
            if p.comp == Compartment::Infectious {
                infectious_in_cluster[config.cluster_of(i)] += 1;
            }
        }

        // Testing and results.
        for (i, p) in people.iter_mut().enumerate() {
            let u_test: f64 = p.testing.random();
            let u_result: f64 = p.testing.random();
            if p.comp == Compartment::Removed {
                continue;
            }
            let base = if clustered {
                cluster_scheduled[config.cluster_of(i)]
            } else {
                let ctx = SchedulingContext::new(t, p.last_test, p.last_clearance);
                u_test < unit.test_probability(&ctx)
            };
            let tested = base || p.forced_on == Some(t);
            if !tested {
                continue;
            }
            let positive = if p.comp == Compartment::Infectious {
                let eta = match (config.time_varying_sensitivity, p.exposure) {
                    (Some(tv), Some(x)) => tv.at(t - x),
                    _ => config.tests.sensitivity,
                };
                u_result < eta
            } else {
                u_result < 1.0 - config.tests.specificity
            };
            tr.tested[i] = true;
            tr.positive[i] = positive;
            p.last_test = Some(t);
            histories[i].record_test(t, positive);
        }

        // Exposures among the well who did not just test positive.
        let cluster_positive: Vec<bool> = {
            let mut v = vec![false; n_clusters];
            for i in 0..n {
                if tr.positive[i] {
                    v[config.cluster_of(i)] = true;
                }
            }
            v
        };
        for (i, p) in people.iter_mut().enumerate() {
            let u_ext: f64 = p.exposure_rng.random();
            let u_clu: f64 = p.exposure_rng.random();
            let u_sym: f64 = p.exposure_rng.random();
            if p.comp != Compartment::Well || tr.positive[i] {
                continue;
            }
            let mut ext = config.hazard.external.at(t - p.last_clearance);
            if p.ever_exposed {
                ext *= config.hazard.subsequent_exposure_multiplier;
            }
            let mates = infectious_in_cluster[config.cluster_of(i)];
            let within = if p.ever_exposed && !config.hazard.within_cluster_reexposure {
                0.0
            } else {
                1.0 - (1.0 - config.hazard.within_cluster_rate).powi(mates as i32)
            };
            if u_ext < ext || u_clu < within {
                tr.newly_exposed[i] = true;
                p.ever_exposed = true;
                p.exposure = Some(t);
                histories[i].record_exposure(t);
                if matches!(symptomatic, Some(q) if u_sym < q) {
                    p.forced_on = Some(t + 1);
                }
            }
        }

        // End of infectious periods: detection or undetected recovery.
        for (i, p) in people.iter_mut().enumerate() {
            if p.comp != Compartment::Infectious {
                continue;
            }
            if tr.positive[i] {
                histories[i].record_infectious_end(t);
            } else if let (Some(u), Some(x)) = (config.undetected_recovery, p.exposure) {
                if t == x + u.infectious_duration_days {
                    tr.undetected_recovered[i] = true;
                    histories[i].record_infectious_end(t);
                }
            }
        }

        // Clearances.
        for (i, p) in people.iter_mut().enumerate() {
            if p.comp == Compartment::Removed && p.clears_on == Some(t) {
                tr.cleared[i] = true;
                p.last_clearance = t;
                p.clears_on = None;
                histories[i].record_clearance(t);
            }
        }

        let next = advance(&state, &tr);
        for (i, p) in people.iter_mut().enumerate() {
            p.comp = if next.removed[i] {
                Compartment::Removed
            } else if next.infectious[i] {
                Compartment::Infectious
            } else {
                Compartment::Well
            };
            if tr.positive[i] {
                p.clears_on = Some(t + config.removal_duration_days);
                p.exposure = if next.infectious[i] { p.exposure } else { None };
            }
            if tr.undetected_recovered[i] {
                p.exposure = None;
            }
        }
        if tracing {
            for (i, p) in people.iter_mut().enumerate() {
                if cluster_positive[config.cluster_of(i)] && !tr.positive[i] && p.comp != Compartment::Removed {
                    p.forced_on = Some(t + 1);
                }
            }
        }
        transitions.push(tr);
        states.push(next);
    }

    Ok(Simulation {
        states,
        transitions,
        histories,
        horizon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::reconstruct_state;
    use crate::regimen::Overlay;

    fn small(regimen: RegimenKind) -> ScenarioConfig {
        let mut c = ScenarioConfig::with_regimen(regimen);
        c.population_size = 40;
        c.seed = 3;
        c
    }

    #[test]
    fn hazard_shape() {
        let h = ExternalHazard::default();
        assert!((h.at(0) - 0.02 / 30.0).abs() < 1e-15);
        assert!((h.at(21) - 0.02 / 30.0).abs() < 1e-15);
        assert!(h.at(10) > h.at(5));
        assert!(h.at(10) < 0.1 / 30.0 + 1e-12);
    }

    #[test]
    fn time_varying_sensitivity_mean() {
        let tv = TimeVaryingSensitivity {
            peak: 0.832,
            window: 10,
            floor: 0.1,
        };
        assert!((tv.at(5) - 0.832).abs() < 1e-12);
        assert!((tv.at(10) - 0.0832).abs() < 1e-12);
        assert!((tv.window_mean() - 0.557).abs() < 5e-4);
    }

    #[test]
    fn reproducible_and_consistent() {
        let cfg = small(RegimenKind::min_max(5, 10, 10));
        let a = simulate(&cfg, 0).unwrap();
        let b = simulate(&cfg, 0).unwrap();
        assert_eq!(a, b);
        for t in 1..=cfg.horizon_days + 1 {
            assert!(a.state(t).is_partition());
            assert_eq!(reconstruct_state(&a.histories, t).unwrap(), *a.state(t), "day {t}");
        }
        for t in 1..=cfg.horizon_days {
            assert!(a.transition(t).is_consistent_with(a.state(t)));
        }
    }

    #[test]
    fn zero_hazard_perfect_specificity_never_grows() {
        let mut cfg = small(RegimenKind::simple_random(0.5));
        cfg.hazard = HazardModel {
            initial_prevalence: 0.2,
            ..HazardModel::zero()
        };
        cfg.tests = TestCharacteristics::new(0.8, 1.0).unwrap();
        let sim = simulate(&cfg, 1).unwrap();
        for t in 1..=cfg.horizon_days {
            assert!(sim.state(t + 1).infectious_count() <= sim.state(t).infectious_count());
            // Only infectious individuals can test positive.
            let tr = sim.transition(t);
            assert!((0..cfg.population_size).all(|i| !tr.positive[i] || sim.state(t).infectious[i]));
        }
    }

    #[test]
    fn census_with_perfect_tests_removes_next_day() {
        let mut cfg = small(RegimenKind::simple_random(1.0));
        cfg.population_size = 5;
        cfg.cluster_size = 1;
        cfg.horizon_days = 4;
        cfg.tests = TestCharacteristics::PERFECT;
        cfg.hazard.initial_prevalence = 0.5;
        let sim = simulate(&cfg, 2).unwrap();
        for t in 1..=4 {
            let s = sim.state(t);
            let tr = sim.transition(t);
            // Every infectious individual tests positive and is removed.
            assert_eq!(tr.positive, s.infectious);
            let next = sim.state(t + 1);
            assert_eq!(next.infectious, tr.newly_exposed, "prevalence equals prior-day incidence");
        }
    }

    #[test]
    fn contact_tracing_tests_clustermates_next_day() {
        let mut cfg = small(RegimenKind::simple_random(0.3));
        cfg.regimen.overlays.push(Overlay::ContactTracing);
        cfg.hazard.initial_prevalence = 0.3;
        let sim = simulate(&cfg, 5).unwrap();
        let mut seen = 0;
        for t in 1..cfg.horizon_days {
            let tr = sim.transition(t);
            let next = sim.transition(t + 1);
            for i in 0..cfg.population_size {
                if !tr.positive[i] {
                    continue;
                }
                for j in 0..cfg.population_size {
                    if j != i && cfg.cluster_of(j) == cfg.cluster_of(i) && !tr.positive[j] && !sim.state(t + 1).removed[j] {
                        assert!(next.tested[j], "mate {j} of {i} untested on day {}", t + 1);
                        seen += 1;
                    }
                }
            }
        }
        assert!(seen > 0);
    }

    #[test]
    fn baseline_exposures_can_be_backdated() {
        let mut cfg = small(RegimenKind::simple_random(0.1));
        cfg.population_size = 400;
        cfg.hazard.initial_prevalence = 1.0;
        cfg.baseline_exposure_window = Some(6);
        let hist = initialize_population(&cfg, 0);
        let mut seen = [false; 6];
        for h in &hist {
            let x = h.exposure_times()[1].day().unwrap();
            assert!((-5..=0).contains(&x));
            seen[(-x) as usize] = true;
        }
        assert!(seen.iter().all(|&s| s));
        cfg.hazard.initial_prevalence = 0.0;
        assert!(initialize_population(&cfg, 0).iter().all(|h| h.exposure_count() == 0));
    }

    #[test]
    fn undetected_recovery_after_six_days() {
        let mut cfg = small(RegimenKind::simple_random(0.0));
        cfg.undetected_recovery = Some(UndetectedRecovery {
            infectious_duration_days: 6,
        });
        cfg.hazard = HazardModel {
            initial_prevalence: 1.0,
            ..HazardModel::zero()
        };
        let sim = simulate(&cfg, 0).unwrap();
        assert_eq!(sim.state(6).infectious_count(), cfg.population_size);
        assert_eq!(sim.state(7).well_count(), cfg.population_size);
    }

    #[test]
    fn clustered_members_test_together() {
        let mut cfg = small(RegimenKind::Clustered {
            unit: Box::new(RegimenKind::min_max(5, 10, 10)),
        });
        cfg.hazard = HazardModel::zero();
        cfg.tests = TestCharacteristics::PERFECT;
        let sim = simulate(&cfg, 0).unwrap();
        for t in 1..=cfg.horizon_days {
            let tr = sim.transition(t);
            for k in 0..cfg.population_size / 4 {
                let v: Vec<bool> = (4 * k..4 * k + 4).map(|i| tr.tested[i]).collect();
                assert!(v.iter().all(|&b| b == v[0]));
            }
        }
    }

    #[test]
    fn rejects_bad_cluster_size() {
        let mut cfg = small(RegimenKind::simple_random(0.1));
        cfg.cluster_size = 3;
        assert!(simulate(&cfg, 0).is_err());
    }
}
