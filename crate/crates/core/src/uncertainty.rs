//! Confidence intervals: exact binomial, Wald for known-weight HT, and BCa.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntervalMethod {
    ClopperPearson,
    WaldHt,
    BcaBootstrap,
}

/// How individuals are grouped for the jackknife acceleration estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockSpec {
    /// Blocks of this many individuals; the remainder forms a short last block.
    Size(usize),
    /// This many blocks of `ceil(n / count)` individuals (last one short).
    Count(usize),
}

impl Default for BlockSpec {
    fn default() -> Self {
        BlockSpec::Size(10)
    }
}

impl BlockSpec {
    /// Block boundaries over `n` individuals as `(start, end)` ranges.
    pub fn blocks(&self, n: usize) -> Vec<(usize, usize)> {
        let size = match *self {
            BlockSpec::Size(s) => s.max(1),
            BlockSpec::Count(k) => n.div_ceil(k.max(1)).max(1),
        };
        (0..n).step_by(size).map(|a| (a, (a + size).min(n))).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default, deny_unknown_fields)]
pub struct IntervalSpec {
    pub level: f64,
    pub bootstrap_iterations: usize,
    pub jackknife_blocks: BlockSpec,
}

impl Default for IntervalSpec {
    fn default() -> Self {
        IntervalSpec {
            level: 0.95,
            bootstrap_iterations: 399,
            jackknife_blocks: BlockSpec::default(),
        }
    }
}

impl IntervalSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config(format!("confidence level {} outside (0, 1)", self.level)));
        }
        match self.jackknife_blocks {
            BlockSpec::Size(0) | BlockSpec::Count(0) => {
                Err(Error::Config("jackknife blocks must be non-empty".into()))
            }
            _ => Ok(()),
        }
    }
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

pub fn normal_quantile(p: f64) -> f64 {
    std_normal().inverse_cdf(p)
}

pub fn normal_cdf(x: f64) -> f64 {
    std_normal().cdf(x)
}

/// Smallest `p` with `f(p) >= target` for increasing `f` on `[0, 1]`.
fn bisect(target: f64, f: impl Fn(f64) -> f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Exact binomial interval without finite-population correction.
pub fn clopper_pearson(positives: u64, tested: u64, level: f64) -> (f64, f64) {
    assert!(tested >= 1 && positives <= tested, "need 0 <= positives <= tested, tested >= 1");
    let alpha = 1.0 - level;
    let (x, n) = (positives as f64, tested as f64);
    let lo = if positives == 0 {
        0.0
    } else if positives == tested {
        (alpha / 2.0).powf(1.0 / n)
    } else {
        // Beta(x, n-x+1) quantile at α/2.
        bisect(alpha / 2.0, |p| beta_reg(x, n - x + 1.0, p))
    };
    let hi = if positives == tested {
        1.0
    } else if positives == 0 {
        1.0 - (alpha / 2.0).powf(1.0 / n)
    } else {
        // Beta(x+1, n-x) quantile at 1-α/2.
        bisect(1.0 - alpha / 2.0, |p| beta_reg(x + 1.0, n - x, p))
    };
    (lo, hi)
}

/// Wald interval `Ŵ ± z·SE` on the well-count scale.
pub fn wald_interval(w_hat: f64, variance: f64, level: f64) -> (f64, f64) {
    let z = normal_quantile(0.5 + level / 2.0);
    let se = variance.max(0.0).sqrt();
    (w_hat - z * se, w_hat + z * se)
}

/// Clips an interval to `[0, 1]` and widens it to contain the (clipped) point.
pub fn order_interval(point: f64, lo: f64, hi: f64) -> (f64, f64) {
    let p = point.clamp(0.0, 1.0);
    (lo.clamp(0.0, 1.0).min(p), hi.clamp(0.0, 1.0).max(p))
}

/// Linear-interpolation ("type 7") sample quantile of sorted data.
pub fn quantile_type7(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let q = q.clamp(0.0, 1.0);
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// BCa interval from a bootstrap sample, jackknife values and the point estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BcaInterval {
    pub lo: f64,
    pub hi: f64,
    pub bias_correction: f64,
    pub acceleration: f64,
    /// All bootstrap replicates were equal; the interval collapsed to the point.
    pub degenerate: bool,
}

pub fn bca_from_samples(point: f64, boot: &[f64], jackknife: &[f64], level: f64) -> BcaInterval {
    let mut sorted: Vec<f64> = boot.iter().copied().filter(|x| x.is_finite()).collect();
    sorted.sort_by(f64::total_cmp);
    if sorted.is_empty() || sorted.first() == sorted.last() {
        return BcaInterval {
            lo: point,
            hi: point,
            bias_correction: 0.0,
            acceleration: 0.0,
            degenerate: true,
        };
    }
    let b = sorted.len() as f64;
    let less = sorted.iter().filter(|&&x| x < point).count() as f64;
    let equal = sorted.iter().filter(|&&x| x == point).count() as f64;
    let frac = ((less + 0.5 * equal) / b).clamp(0.5 / b, 1.0 - 0.5 / b);
    let z0 = normal_quantile(frac);

    let acceleration = jackknife_acceleration(jackknife);
    let alpha = 1.0 - level;
    let adjust = |q: f64| {
        let zq = normal_quantile(q);
        let denom = 1.0 - acceleration * (z0 + zq);
        if denom <= 0.0 {
            return if zq < 0.0 { 0.0 } else { 1.0 };
        }
        normal_cdf(z0 + (z0 + zq) / denom)
    };
    let lo = quantile_type7(&sorted, adjust(alpha / 2.0));
    let hi = quantile_type7(&sorted, adjust(1.0 - alpha / 2.0));
    BcaInterval {
        lo,
        hi,
        bias_correction: z0,
        acceleration,
        degenerate: false,
    }
}

/// `a = Σ d³ / (6 (Σ d²)^{3/2})` with `d = mean - θ_(j)`.
pub fn jackknife_acceleration(values: &[f64]) -> f64 {
    let vals: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if vals.len() < 2 {
        return 0.0;
    }
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let (mut s2, mut s3) = (0.0, 0.0);
    for v in &vals {
        let d = mean - v;
        s2 += d * d;
        s3 += d * d * d;
    }
    if s2 <= 0.0 {
        0.0
    } else {
        s3 / (6.0 * s2.powf(1.5))
    }
}

/// Deterministic per-purpose RNG.
pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Multiplicity vector of one bootstrap resample of `n` individuals.
pub fn bootstrap_multiplicities(n: usize, seed: u64, iteration: u64) -> Vec<u32> {
    let mut rng = stream_rng(seed, iteration);
    let mut m = vec![0u32; n];
    for _ in 0..n {
        m[rng.random_range(0..n)] += 1;
    }
    m
}

/// Jackknife leave-one-block-out multiplicity vectors after a seeded shuffle.
pub fn jackknife_multiplicities(n: usize, blocks: BlockSpec, seed: u64) -> Vec<Vec<u32>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, u64::MAX));
    blocks
        .blocks(n)
        .into_iter()
        .map(|(a, b)| {
            let mut m = vec![1u32; n];
            for &i in &order[a..b] {
                m[i] = 0;
            }
            m
        })
        .collect()
}

/// BCa intervals for a vector-valued statistic of resampled individuals.
///
/// `statistic` maps a multiplicity vector to one value per coordinate (for
/// example one estimate per day); `None` marks an undefined coordinate.
/// Returns one interval per coordinate; coordinates undefined at the point
/// estimate get `None`.
pub fn bca_bootstrap<F>(
    n: usize,
    spec: &IntervalSpec,
    seed: u64,
    statistic: F,
) -> Vec<Option<BcaInterval>>
where
    F: Fn(&[u32]) -> Vec<Option<f64>> + Sync,
{
    use rayon::prelude::*;
    let point = statistic(&vec![1; n]);
    let boots: Vec<Vec<Option<f64>>> = (0..spec.bootstrap_iterations as u64)
        .into_par_iter()
        .map(|b| statistic(&bootstrap_multiplicities(n, seed, b)))
        .collect();
    let jacks: Vec<Vec<Option<f64>>> = jackknife_multiplicities(n, spec.jackknife_blocks, seed)
        .par_iter()
        .map(|m| statistic(m))
        .collect();
    point
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let p = (*p)?;
            let sample: Vec<f64> = boots.iter().filter_map(|v| v[k]).collect();
            let jack: Vec<f64> = jacks.iter().filter_map(|v| v[k]).collect();
            Some(bca_from_samples(p, &sample, &jack, spec.level))
        })
        .collect()
}
