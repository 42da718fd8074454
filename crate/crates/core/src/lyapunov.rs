//! Finite-scale Lyapunov exponents `L_n(E) = ∫ (1/n) log ‖M_n‖ dx dy` by
//! midpoint quadrature or Monte Carlo, plus profiles over scales and the
//! almost-invariance defect of `(1/n) log ‖M_n^u‖` under the skew shift.
//!
//! Sampling is parallel; every reduction goes through a fixed pairwise tree
//! over the sample index, so results do not depend on the worker count.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cocycle::{cocycle, log_det_identity, CocycleKind};
use crate::error::{Error, Result};
use crate::linalg::pairwise_sum;
use crate::model::JacobiModel;
use crate::torus::{skew_shift_iterate, TorusPoint};

/// Default cap on `n × samples` (one-step matrix products) per job.
pub const DEFAULT_WORK_BUDGET: u64 = 10_000_000_000;

/// How points of the torus are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Sampler {
    /// Midpoint lattice `((i + ½)/gx, (j + ½)/gy)`.
    Grid { gx: u64, gy: u64 },
    /// Point `i` is drawn from the ChaCha8 stream keyed by `seed` at word
    /// offset `4i`, independent of evaluation order.
    MonteCarlo { count: u64, seed: u64 },
}

impl Sampler {
    pub fn grid(gx: u64, gy: u64) -> Result<Self> {
        if gx == 0 || gy == 0 {
            return Err(Error::InvalidInput(format!("grid resolution must be positive, got {gx}×{gy}")));
        }
        Ok(Sampler::Grid { gx, gy })
    }

    pub fn monte_carlo(count: u64, seed: u64) -> Result<Self> {
        if count < 2 {
            return Err(Error::InvalidInput(format!(
                "Monte Carlo needs at least 2 samples for an error bar, got {count}"
            )));
        }
        Ok(Sampler::MonteCarlo { count, seed })
    }

    pub fn count(&self) -> u64 {
        match *self {
            Sampler::Grid { gx, gy } => gx * gy,
            Sampler::MonteCarlo { count, .. } => count,
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match *self {
            Sampler::Grid { .. } => None,
            Sampler::MonteCarlo { seed, .. } => Some(seed),
        }
    }

    pub fn is_monte_carlo(&self) -> bool {
        matches!(self, Sampler::MonteCarlo { .. })
    }

    /// Short provenance string, e.g. `grid:256x256` or `mc:10000@7`.
    pub fn descriptor(&self) -> String {
        match *self {
            Sampler::Grid { gx, gy } => format!("grid:{gx}x{gy}"),
            Sampler::MonteCarlo { count, seed } => format!("mc:{count}@{seed}"),
        }
    }

    /// The `i`-th sample point.
    pub fn point(&self, i: u64) -> TorusPoint {
        match *self {
            Sampler::Grid { gx, gy } => {
                let (ix, iy) = (i % gx, i / gx);
                TorusPoint::new((ix as f64 + 0.5) / gx as f64, (iy as f64 + 0.5) / gy as f64)
            }
            Sampler::MonteCarlo { seed, .. } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_word_pos(4 * i as u128);
                let x: f64 = rng.gen();
                let y: f64 = rng.gen();
                TorusPoint::new(x, y)
            }
        }
    }

    /// Same sampler with a different Monte Carlo seed; grids are unchanged.
    pub fn reseeded(&self, seed: u64) -> Sampler {
        match *self {
            Sampler::MonteCarlo { count, .. } => Sampler::MonteCarlo { count, seed },
            grid => grid,
        }
    }
}

/// Refuse work estimates above `budget`.
pub fn check_budget(work: u128, budget: u64) -> Result<()> {
    if work > budget as u128 {
        Err(Error::BudgetExceeded {
            estimated: work,
            budget,
        })
    } else {
        Ok(())
    }
}

/// Evaluate `f` at every sample point, in parallel, returning values in
/// sample order.
pub fn sample_map<F>(sampler: &Sampler, f: F) -> Vec<f64>
where
    F: Fn(TorusPoint) -> f64 + Sync,
{
    (0..sampler.count())
        .into_par_iter()
        .map(|i| f(sampler.point(i)))
        .collect()
}

/// Mean and spread of sampled values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleStats {
    pub mean: f64,
    /// Sample standard deviation (denominator `count − 1`).
    pub std_dev: f64,
    /// `std_dev / √count` for Monte Carlo, `0` for grids.
    pub std_error: f64,
    pub count: u64,
}

pub fn summarize(values: &[f64], sampler: &Sampler) -> SampleStats {
    let count = values.len() as u64;
    let mean = pairwise_sum(values) / values.len().max(1) as f64;
    let dev: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let std_dev = if values.len() > 1 {
        (pairwise_sum(&dev) / (values.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    let std_error = if sampler.is_monte_carlo() {
        std_dev / (count as f64).sqrt()
    } else {
        0.0
    };
    SampleStats {
        mean,
        std_dev,
        std_error,
        count,
    }
}

/// `(1/n) log ‖M_n(p)‖` for the requested normalization.
pub fn log_norm_rate(model: &JacobiModel, p: TorusPoint, energy: f64, n: usize, kind: CocycleKind) -> Result<f64> {
    Ok(cocycle(model, p, energy, n, kind)?.log_norm_rate())
}

/// A finite-scale Lyapunov exponent estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovEstimate {
    pub n: usize,
    pub kind: CocycleKind,
    #[serde(rename = "E")]
    pub energy: f64,
    /// Nats per step.
    pub value: f64,
    /// Zero for grid quadrature; the grid error is not estimated.
    pub std_error: f64,
    pub samples: u64,
    pub sampler: Sampler,
    pub model_hash: String,
    pub seed: Option<u64>,
}

fn validate_scale(n: usize, energy: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidInput("scale n must be positive".into()));
    }
    if !energy.is_finite() {
        return Err(Error::InvalidInput(format!("energy must be finite, got {energy}")));
    }
    Ok(())
}

/// Values of `(1/n) log ‖M_n‖` at every sample point.
pub fn sample_rates(
    model: &JacobiModel,
    energy: f64,
    n: usize,
    sampler: &Sampler,
    kind: CocycleKind,
    budget: u64,
) -> Result<Vec<f64>> {
    validate_scale(n, energy)?;
    check_budget(n as u128 * sampler.count() as u128, budget)?;
    Ok(sample_map(sampler, |p| {
        cocycle(model, p, energy, n, kind)
            .expect("energy validated")
            .log_norm_rate()
    }))
}

/// `L_n(E)` for one normalization, with the default work budget.
pub fn lyapunov_finite(
    model: &JacobiModel,
    energy: f64,
    n: usize,
    sampler: &Sampler,
    kind: CocycleKind,
) -> Result<LyapunovEstimate> {
    lyapunov_finite_with_budget(model, energy, n, sampler, kind, DEFAULT_WORK_BUDGET)
}

pub fn lyapunov_finite_with_budget(
    model: &JacobiModel,
    energy: f64,
    n: usize,
    sampler: &Sampler,
    kind: CocycleKind,
    budget: u64,
) -> Result<LyapunovEstimate> {
    let values = sample_rates(model, energy, n, sampler, kind, budget)?;
    Ok(estimate_from_values(model, energy, n, sampler, kind, &values))
}

pub fn estimate_from_values(
    model: &JacobiModel,
    energy: f64,
    n: usize,
    sampler: &Sampler,
    kind: CocycleKind,
    values: &[f64],
) -> LyapunovEstimate {
    let stats = summarize(values, sampler);
    LyapunovEstimate {
        n,
        kind,
        energy,
        value: stats.mean,
        std_error: stats.std_error,
        samples: stats.count,
        sampler: *sampler,
        model_hash: model.hash().to_string(),
        seed: sampler.seed(),
    }
}

/// Estimates over increasing scales with the running infimum, which is the
/// finite-data proxy for `L(E) = inf_n L_n(E)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovProfile {
    pub estimates: Vec<LyapunovEstimate>,
    pub running_infimum: Vec<f64>,
}

impl LyapunovProfile {
    /// The running infimum at the largest scale.
    pub fn infimum(&self) -> f64 {
        self.running_infimum.last().copied().unwrap_or(f64::NAN)
    }
}

pub fn lyapunov_profile(
    model: &JacobiModel,
    energy: f64,
    scales: &[usize],
    sampler: &Sampler,
    kind: CocycleKind,
) -> Result<LyapunovProfile> {
    lyapunov_profile_with_budget(model, energy, scales, sampler, kind, DEFAULT_WORK_BUDGET)
}

pub fn lyapunov_profile_with_budget(
    model: &JacobiModel,
    energy: f64,
    scales: &[usize],
    sampler: &Sampler,
    kind: CocycleKind,
    budget: u64,
) -> Result<LyapunovProfile> {
    if scales.is_empty() {
        return Err(Error::InvalidInput("no scales given".into()));
    }
    if scales.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidInput(format!("scales must be sorted ascending: {scales:?}")));
    }
    let total: u128 = scales.iter().map(|&n| n as u128).sum::<u128>() * sampler.count() as u128;
    check_budget(total, budget)?;
    let mut estimates = Vec::with_capacity(scales.len());
    let mut running_infimum = Vec::with_capacity(scales.len());
    let mut inf = f64::INFINITY;
    for &n in scales {
        let est = lyapunov_finite_with_budget(model, energy, n, sampler, kind, budget)?;
        inf = inf.min(est.value);
        running_infimum.push(inf);
        estimates.push(est);
    }
    Ok(LyapunovProfile {
        estimates,
        running_infimum,
    })
}

/// `sup_p |(1/K) Σ_{k=1}^{K} u_n(T^k p) − u_n(p)|` over the sample points,
/// with `u_n = (1/n) log ‖M_n^u‖`. `K = 0` gives `0` (empty average).
pub fn almost_invariance_defect(
    model: &JacobiModel,
    energy: f64,
    n: usize,
    shifts: usize,
    sampler: &Sampler,
) -> Result<f64> {
    validate_scale(n, energy)?;
    if shifts > n {
        return Err(Error::InvalidInput(format!("shift count {shifts} exceeds scale {n}")));
    }
    if shifts == 0 {
        return Ok(0.0);
    }
    let work = (shifts as u128 + 1) * n as u128 * sampler.count() as u128;
    check_budget(work, DEFAULT_WORK_BUDGET)?;
    let omega = model.omega();
    let u = |p: TorusPoint| {
        cocycle(model, p, energy, n, CocycleKind::Unimodular)
            .expect("energy validated")
            .log_norm_rate()
    };
    let defects = sample_map(sampler, |p| {
        let shifted: Vec<f64> = (1..=shifts as u64)
            .map(|k| u(skew_shift_iterate(p, k, omega)))
            .collect();
        (pairwise_sum(&shifted) / shifts as f64 - u(p)).abs()
    });
    Ok(defects.into_iter().fold(0.0, f64::max))
}

/// Pointwise upper bound for `(1/n) log ‖M_n^u(p)‖`:
/// `log C − (1/n) Σ_{j=2}^{n+1} log |a_j| − (1/2n) log |a_1 / a_{n+1}|`
/// with `C` the one-step norm bound of the undivided matrices.
pub fn unimodular_rate_upper_bound(model: &JacobiModel, p: TorusPoint, energy: f64, n: usize) -> f64 {
    let omega = model.omega();
    let nf = n as f64;
    let sum_a: f64 = (2..=n as u64 + 1)
        .map(|j| model.eval_a(skew_shift_iterate(p, j, omega).y).abs().ln())
        .sum();
    model.transfer_norm_bound(energy).ln() - sum_a / nf - 0.5 * log_det_identity(model, p, n) / nf
}

/// Write one JSON object per line.
pub fn write_jsonl<W: Write, T: Serialize>(mut out: W, records: &[T]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
