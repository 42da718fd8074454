//! The multiscale induction as a numeric verifier: one induction step from
//! scales `(n, 2n)` to `(N, 2N)`, the schedule of admissible scale ranges,
//! and a probe of the regularity of `L(E)` in the energy.

use serde::{Deserialize, Serialize};

use crate::cocycle::{cocycle, CocycleKind};
use crate::deviation::{deviation_from_values, DeviationReport, Threshold};
use crate::deviation::linear_fit;
use crate::error::{Error, Result};
use crate::linalg::pairwise_sum;
use crate::lyapunov::{check_budget, estimate_from_values, sample_map, summarize, LyapunovEstimate, Sampler, DEFAULT_WORK_BUDGET};
use crate::model::JacobiModel;

/// `9γnS ≥ 10 log(2N)` and `n² ≤ N`, evaluated exactly.
pub fn arithmetic_hypothesis(gamma: f64, n: u64, big_n: u64, s: f64) -> bool {
    let lhs = 9.0 * gamma * n as f64 * s;
    let rhs = 10.0 * (2.0 * big_n as f64).ln();
    lhs >= rhs && (n as u128) * (n as u128) <= big_n as u128
}

/// Settings of one induction step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InductionOptions {
    /// The deviation-measure hypothesis is accepted when the 95% upper
    /// confidence limit of both measured deviation sets is at most this
    /// value. The stated bound `N^{−10}` is recorded alongside but is far
    /// below what sampling can resolve.
    pub ldt_proxy: f64,
    /// Refuse when any estimate's standard error exceeds `γS / noise_divisor`.
    pub noise_divisor: f64,
    pub budget: u64,
}

impl Default for InductionOptions {
    fn default() -> Self {
        Self {
            ldt_proxy: 0.1,
            noise_divisor: 100.0,
            budget: DEFAULT_WORK_BUDGET,
        }
    }
}

/// Hypotheses and conclusions of one induction step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InductionRecord {
    pub n: usize,
    #[serde(rename = "N")]
    pub big_n: usize,
    #[serde(rename = "E")]
    pub energy: f64,
    pub gamma: f64,
    #[serde(rename = "S")]
    pub s: f64,
    pub l_n: LyapunovEstimate,
    pub l_2n: LyapunovEstimate,
    pub l_big_n: LyapunovEstimate,
    pub l_2big_n: LyapunovEstimate,
    /// Deviation sets of the unimodular rate at threshold `γS/10`.
    pub hyp_ldt_n: DeviationReport,
    pub hyp_ldt_2n: DeviationReport,
    /// `N^{−10}`.
    pub ldt_bound: f64,
    pub ldt_proxy: f64,
    /// Both upper confidence limits `≤ ldt_proxy`.
    pub hyp_ldt: bool,
    /// `min(L_n^u, L_{2n}^u) ≥ γS`.
    pub hyp_min_l: bool,
    /// `L_n^u − L_{2n}^u ≤ γS/40`.
    pub hyp_gap: bool,
    pub hyp_arith: bool,
    /// `L_N^u − (γS − 2(L_n^u − L_{2n}^u))`; the lower conclusion asks this
    /// to be at least `−C₀ S n/N`.
    pub concl_lower: f64,
    /// `L_N^u − L_{2N}^u`; the gap conclusion asks this to be at most
    /// `C₀ S n/N`.
    pub concl_gap: f64,
    /// `S n / N`.
    pub unit: f64,
    /// Smallest `C₀ ≥ 0` for which both conclusions hold.
    pub c0_fit: f64,
    /// `max(|L_N^u + L_n^u − 2L_{2n}^u|, |L_{2N}^u + L_n^u − 2L_{2n}^u|) / (S n/N)`.
    pub c0_identity: f64,
    /// Standard error of the estimates feeding `c0_fit`, in units of `S n/N`.
    pub c0_noise: f64,
}

impl InductionRecord {
    pub fn hypotheses_hold(&self) -> bool {
        self.hyp_ldt && self.hyp_min_l && self.hyp_gap && self.hyp_arith
    }
}

/// One induction step `(n, 2n) → (N, 2N)` for the unimodular cocycle, all
/// four exponents estimated on the same sample points.
pub fn induction_step(
    model: &JacobiModel,
    energy: f64,
    n: usize,
    big_n: usize,
    gamma: f64,
    sampler: &Sampler,
    options: InductionOptions,
) -> Result<InductionRecord> {
    if n < 2 {
        return Err(Error::InvalidInput(format!("induction needs n ≥ 2, got {n}")));
    }
    if (n as u128) * (n as u128) > big_n as u128 {
        return Err(Error::InvalidInput(format!("induction needs N ≥ n², got n = {n}, N = {big_n}")));
    }
    if !(gamma > 0.0) || !energy.is_finite() {
        return Err(Error::InvalidInput("need γ > 0 and finite E".into()));
    }
    let scales = [n, 2 * n, big_n, 2 * big_n];
    let work: u128 = scales.iter().map(|&k| k as u128).sum::<u128>() * sampler.count() as u128;
    check_budget(work, options.budget)?;

    let kind = CocycleKind::Unimodular;
    let s = model.scaling_factor(energy);
    let rates = |k: usize| {
        sample_map(sampler, |p| {
            cocycle(model, p, energy, k, kind)
                .expect("energy validated")
                .log_norm_rate()
        })
    };
    let values: Vec<Vec<f64>> = scales.iter().map(|&k| rates(k)).collect();
    let est: Vec<LyapunovEstimate> = scales
        .iter()
        .zip(&values)
        .map(|(&k, v)| estimate_from_values(model, energy, k, sampler, kind, v))
        .collect();

    let resolution = gamma * s / options.noise_divisor;
    let noise = est.iter().map(|e| e.std_error).fold(0.0, f64::max);
    if noise > resolution {
        let ratio = noise / resolution;
        return Err(Error::NoiseFloor {
            noise,
            resolution,
            required_samples: (sampler.count() as f64 * ratio * ratio).ceil() as u64,
        });
    }

    let threshold = Threshold::absolute(gamma * s / 10.0);
    let dev_n = deviation_from_values(model, energy, n, threshold, sampler, kind, &values[0], Some(&est[0]))?;
    let dev_2n = deviation_from_values(model, energy, 2 * n, threshold, sampler, kind, &values[1], Some(&est[1]))?;

    let (l_n, l_2n, l_nn, l_2nn) = (est[0].value, est[1].value, est[2].value, est[3].value);
    let unit = s * n as f64 / big_n as f64;
    let concl_lower = l_nn - (gamma * s - 2.0 * (l_n - l_2n));
    let concl_gap = l_nn - l_2nn;
    let c0_fit = (-concl_lower / unit).max(concl_gap / unit).max(0.0);
    let c0_identity = (l_nn + l_n - 2.0 * l_2n).abs().max((l_2nn + l_n - 2.0 * l_2n).abs()) / unit;
    let combined = est.iter().map(|e| e.std_error * e.std_error).sum::<f64>().sqrt();

    let mut it = est.into_iter();
    let (e0, e1, e2, e3) = (it.next().unwrap(), it.next().unwrap(), it.next().unwrap(), it.next().unwrap());
    Ok(InductionRecord {
        n,
        big_n,
        energy,
        gamma,
        s,
        hyp_ldt: dev_n.wilson_interval.1 <= options.ldt_proxy && dev_2n.wilson_interval.1 <= options.ldt_proxy,
        hyp_ldt_n: dev_n,
        hyp_ldt_2n: dev_2n,
        ldt_bound: (big_n as f64).powi(-10),
        ldt_proxy: options.ldt_proxy,
        hyp_min_l: l_n.min(l_2n) >= gamma * s,
        hyp_gap: l_n - l_2n <= gamma * s / 40.0,
        hyp_arith: arithmetic_hypothesis(gamma, n as u64, big_n as u64, s),
        concl_lower,
        concl_gap,
        unit,
        c0_fit,
        c0_identity,
        c0_noise: combined / unit,
        l_n: e0,
        l_2n: e1,
        l_big_n: e2,
        l_2big_n: e3,
    })
}

/// One stage of admissible scales, kept in log space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageRange {
    pub stage: usize,
    pub ln_lo: f64,
    pub ln_hi: f64,
    /// `lo ≤ hi`.
    pub nonempty: bool,
    /// `lo ≤` the previous stage's `hi` (true for the first stage).
    pub overlaps_previous: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleSchedule {
    pub n0: u64,
    pub sigma: f64,
    /// `9 n0` against `20 log(2 n0⁵)`.
    pub threshold_lhs: f64,
    pub threshold_rhs: f64,
    pub threshold_ok: bool,
    pub ranges: Vec<StageRange>,
    /// Every range nonempty and overlapping its predecessor.
    pub overlap_ok: bool,
}

/// Admissible scale ranges: stage 1 is `(n0², n0⁵)`; each later stage runs
/// from the square of the previous left endpoint to
/// `exp(hi^σ / 10)` of the previous right endpoint.
pub fn scale_schedule(n0: u64, sigma: f64, stages: usize) -> Result<ScaleSchedule> {
    if !(sigma > 0.0 && sigma < 1.0 / 24.0) {
        return Err(Error::InvalidInput(format!("σ must lie in (0, 1/24), got {sigma}")));
    }
    if n0 < 2 || stages == 0 {
        return Err(Error::InvalidInput("need n0 ≥ 2 and at least one stage".into()));
    }
    let ln_n0 = (n0 as f64).ln();
    let mut ranges = Vec::with_capacity(stages);
    let (mut lo, mut hi) = (2.0 * ln_n0, 5.0 * ln_n0);
    for stage in 1..=stages {
        let overlaps_previous = match ranges.last() {
            Some(prev @ StageRange { .. }) => lo <= prev.ln_hi,
            None => true,
        };
        ranges.push(StageRange {
            stage,
            ln_lo: lo,
            ln_hi: hi,
            nonempty: lo <= hi,
            overlaps_previous,
        });
        lo *= 2.0;
        hi = (sigma * hi).exp() / 10.0;
    }
    let threshold_lhs = 9.0 * n0 as f64;
    let threshold_rhs = 20.0 * (2.0f64.ln() + 5.0 * ln_n0);
    Ok(ScaleSchedule {
        n0,
        sigma,
        threshold_lhs,
        threshold_rhs,
        threshold_ok: threshold_lhs >= threshold_rhs,
        overlap_ok: ranges.iter().all(|r| r.nonempty && r.overlaps_previous),
        ranges,
    })
}

/// One energy offset of the continuity probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuityRow {
    pub delta: f64,
    /// `|L_N^u(E) − L_N^u(E + δ)|` at the probe scale.
    pub diff: f64,
    /// The same difference through the undivided normalization; equal to
    /// `diff` because the normalizations differ by an `E`-independent term.
    pub diff_a: f64,
    /// Largest pointwise `|u_N(E) − u_N(E + δ)|` over the samples.
    pub max_pointwise: f64,
    /// `K^N δ`.
    pub lipschitz_bound: f64,
    /// Samples whose pointwise difference exceeds the bound.
    pub violations: u64,
    /// Standard error of the matched difference.
    pub noise: f64,
    /// `|L(E) − L(E + δ)|` with `L` replaced by the running infimum over
    /// the proxy scales.
    pub proxy_diff: f64,
}

/// `log |ΔL| = log C − c (log 1/δ)^σ` fitted by least squares.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogHolderFit {
    pub sigma: f64,
    pub log_c: f64,
    pub c: f64,
    pub rms_residual: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuityReport {
    #[serde(rename = "E")]
    pub energy: f64,
    #[serde(rename = "N")]
    pub big_n: usize,
    pub proxy_scales: Vec<usize>,
    /// One-step Lipschitz constant `K`.
    pub lipschitz_constant: f64,
    pub rows: Vec<ContinuityRow>,
    pub violations: u64,
    pub fit: Option<LogHolderFit>,
}

/// Probe settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuityOptions {
    /// Scales whose running infimum stands in for `L(E)`.
    pub proxy_scales: Vec<usize>,
    /// Exponent of the log-Hölder fit.
    pub sigma: f64,
}

impl Default for ContinuityOptions {
    fn default() -> Self {
        Self {
            proxy_scales: vec![8, 16, 32],
            sigma: 1.0 / 25.0,
        }
    }
}

/// Compare `L(E)` and `L(E + δ)` over descending offsets `δ`.
///
/// At scale `N` the pointwise bound
/// `|u_N(E) − u_N(E′)| ≤ K^N |E − E′|` holds with `K` the larger of
/// `C_{v,a}` and the one-step norm bound of the undivided matrices at
/// `max(|E|, |E′|)`; it is checked at every sample.
pub fn continuity_probe(
    model: &JacobiModel,
    energy: f64,
    deltas: &[f64],
    big_n: usize,
    sampler: &Sampler,
    options: &ContinuityOptions,
) -> Result<ContinuityReport> {
    if deltas.is_empty() || deltas.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
        return Err(Error::InvalidInput("offsets must be positive and finite".into()));
    }
    if deltas.windows(2).any(|w| w[0] <= w[1]) {
        return Err(Error::InvalidInput("offsets must be strictly descending".into()));
    }
    if big_n == 0 || !energy.is_finite() {
        return Err(Error::InvalidInput("need N > 0 and finite E".into()));
    }
    let mut proxy_scales = options.proxy_scales.clone();
    proxy_scales.sort_unstable();
    proxy_scales.dedup();
    let per_energy: u128 =
        (2 * big_n as u128 + proxy_scales.iter().map(|&k| k as u128).sum::<u128>()) * sampler.count() as u128;
    check_budget(per_energy * (deltas.len() as u128 + 1), DEFAULT_WORK_BUDGET)?;

    let rates = |e: f64, k: usize, kind: CocycleKind| {
        sample_map(sampler, |p| {
            cocycle(model, p, e, k, kind).expect("energy validated").log_norm_rate()
        })
    };
    let mean = |v: &[f64]| pairwise_sum(v) / v.len() as f64;
    let proxy = |e: f64| {
        proxy_scales
            .iter()
            .map(|&k| mean(&rates(e, k, CocycleKind::Unimodular)))
            .fold(f64::INFINITY, f64::min)
    };

    let base_u = rates(energy, big_n, CocycleKind::Unimodular);
    let base_a = rates(energy, big_n, CocycleKind::ANormalized);
    let base_proxy = proxy(energy);
    let mut rows = Vec::with_capacity(deltas.len());
    let mut k_max: f64 = 0.0;
    for &delta in deltas {
        let shifted = energy + delta;
        let k = model
            .constant_cva()
            .max(model.transfer_norm_bound(energy.abs().max(shifted.abs())));
        k_max = k_max.max(k);
        let lipschitz_bound = (big_n as f64 * k.ln()).exp() * delta;
        let u = rates(shifted, big_n, CocycleKind::Unimodular);
        let a = rates(shifted, big_n, CocycleKind::ANormalized);
        let pointwise: Vec<f64> = base_u.iter().zip(&u).map(|(x, y)| x - y).collect();
        let stats = summarize(&pointwise, sampler);
        let max_pointwise = pointwise.iter().map(|d| d.abs()).fold(0.0, f64::max);
        let violations = pointwise
            .iter()
            .filter(|d| d.abs() > lipschitz_bound * (1.0 + 1e-8) + 1e-12)
            .count() as u64;
        rows.push(ContinuityRow {
            delta,
            diff: stats.mean.abs(),
            diff_a: (mean(&base_a) - mean(&a)).abs(),
            max_pointwise,
            lipschitz_bound,
            violations,
            noise: stats.std_error,
            proxy_diff: (base_proxy - proxy(shifted)).abs(),
        });
    }

    let smallest = rows.iter().map(|r| r.diff).fold(f64::INFINITY, f64::min);
    let noise = rows.iter().map(|r| r.noise).fold(0.0, f64::max);
    if sampler.is_monte_carlo() && noise > smallest {
        let ratio = noise / smallest.max(f64::MIN_POSITIVE);
        return Err(Error::NoiseFloor {
            noise,
            resolution: smallest,
            required_samples: (sampler.count() as f64 * ratio * ratio).ceil().min(u64::MAX as f64) as u64,
        });
    }

    let fit_points: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.proxy_diff > 0.0)
        .map(|r| ((1.0 / r.delta).ln().powf(options.sigma), r.proxy_diff.ln()))
        .collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = fit_points.iter().copied().unzip();
    let fit = linear_fit(&xs, &ys).map(|(a, b, rms)| LogHolderFit {
        sigma: options.sigma,
        log_c: a,
        c: -b,
        rms_residual: rms,
        points: xs.len(),
    });
    Ok(ContinuityReport {
        energy,
        big_n,
        proxy_scales,
        lipschitz_constant: k_max,
        violations: rows.iter().map(|r| r.violations).sum(),
        rows,
        fit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AdmissionMode, ModelSpec, TrigPoly2};

    fn default_model(lambda: f64) -> JacobiModel {
        JacobiModel::from_spec(ModelSpec::default_theorem(lambda), AdmissionMode::Theorem).unwrap()
    }

    /// `a ≡ 1`, `v ≡ 1`: every step is `[[λ − E, −1], [1, 0]]`.
    fn constant_model(lambda: f64) -> JacobiModel {
        let spec = ModelSpec {
            v_coeffs: TrigPoly2::constant(1.0),
            lambda,
            ..ModelSpec::free()
        };
        JacobiModel::from_spec(spec, AdmissionMode::General).unwrap()
    }

    #[test]
    fn arithmetic_truth_table() {
        assert!(arithmetic_hypothesis(0.5, 10, 100, 7.0));
        assert!(!arithmetic_hypothesis(0.5, 10, 99, 7.0));
        assert!(!arithmetic_hypothesis(0.5, 10, 100, 1.0));
        assert!((10.0 * 200f64.ln() - 52.983).abs() < 1e-3);
    }

    #[test]
    fn schedule_threshold_scan() {
        let s = scale_schedule(10, 1.0 / 25.0, 2).unwrap();
        assert!(!s.threshold_ok);
        let s = scale_schedule(40, 1.0 / 25.0, 2).unwrap();
        assert!(!s.threshold_ok);
        assert!((s.threshold_rhs - 20.0 * (2.0 * 40f64.powi(5)).ln()).abs() < 1e-9);
        let s = scale_schedule(50, 1.0 / 25.0, 2).unwrap();
        assert!(s.threshold_ok);
        assert!((s.threshold_rhs - 405.1).abs() < 0.1);
        let first = (2..200).find(|&n| scale_schedule(n, 0.04, 1).unwrap().threshold_ok);
        assert_eq!(first, Some(44));
    }

    #[test]
    fn schedule_ranges() {
        let s = scale_schedule(50, 1.0 / 25.0, 3).unwrap();
        let ln = 50f64.ln();
        assert!((s.ranges[0].ln_lo - 2.0 * ln).abs() < 1e-12);
        assert!((s.ranges[0].ln_hi - 5.0 * ln).abs() < 1e-12);
        assert!((s.ranges[1].ln_lo - 4.0 * ln).abs() < 1e-12);
        let hi2 = 50f64.powf(5.0 / 25.0) / 10.0;
        assert!((s.ranges[1].ln_hi - hi2).abs() < 1e-12);
        // n0⁴ is far above exp(n0^{5σ}/10) at desk-scale n0
        assert!(!s.ranges[1].nonempty);
        assert!(!s.overlap_ok);
        assert!(scale_schedule(50, 0.05, 2).is_err());
        assert!(scale_schedule(50, 0.0, 2).is_err());
    }

    #[test]
    fn induction_rejects_bad_scales() {
        let m = default_model(1e6);
        let s = Sampler::monte_carlo(100, 1).unwrap();
        assert!(induction_step(&m, 0.0, 1, 4, 0.5, &s, InductionOptions::default()).is_err());
        assert!(induction_step(&m, 0.0, 10, 99, 0.5, &s, InductionOptions::default()).is_err());
    }

    #[test]
    fn constant_hyperbolic_model_has_tiny_c0() {
        let m = constant_model(10.0);
        // 64 samples keep the Wilson upper limit at zero exceedances below 0.1
        let s = Sampler::grid(8, 8).unwrap();
        let r = induction_step(&m, 0.0, 4, 16, 0.1, &s, InductionOptions::default()).unwrap();
        let oracle = ((10.0 + 96f64.sqrt()) / 2.0).ln();
        for e in [&r.l_n, &r.l_2n, &r.l_big_n, &r.l_2big_n] {
            assert!((e.value - oracle).abs() < 2.0 / e.n as f64);
        }
        assert!(r.c0_fit < 0.01, "{}", r.c0_fit);
        assert_eq!(r.hyp_ldt_n.exceed_count, 0);
        assert!(r.hyp_ldt && r.hyp_min_l && r.hyp_gap, "{} {} {} S={} L={}", r.hyp_ldt, r.hyp_min_l, r.hyp_gap, r.s, r.l_n.value);
    }

    #[test]
    fn default_model_step_hypotheses() {
        let m = default_model(1e6);
        let s = Sampler::monte_carlo(400, 3).unwrap();
        let r = induction_step(&m, 0.0, 10, 100, 0.5, &s, InductionOptions::default()).unwrap();
        assert!(r.hyp_min_l, "{r:?}");
        assert!(r.hyp_gap);
        assert!(r.hyp_arith);
        assert!(r.concl_lower > 0.0);
        assert_eq!(r.ldt_bound, 1e-20);
    }

    #[test]
    fn noisy_estimates_are_refused() {
        let m = default_model(1e6);
        let s = Sampler::monte_carlo(4, 3).unwrap();
        let opts = InductionOptions {
            noise_divisor: 1e6,
            ..Default::default()
        };
        match induction_step(&m, 0.0, 4, 16, 0.5, &s, opts).unwrap_err() {
            Error::NoiseFloor { required_samples, .. } => assert!(required_samples > 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn continuity_hard_bound_and_identity() {
        let m = default_model(10.0);
        let s = Sampler::grid(16, 16).unwrap();
        let opts = ContinuityOptions {
            proxy_scales: vec![4, 8],
            sigma: 0.04,
        };
        let r = continuity_probe(&m, 0.3, &[1e-1, 1e-3, 1e-6, 1e-12], 8, &s, &opts).unwrap();
        assert_eq!(r.violations, 0);
        for row in &r.rows {
            assert!((row.diff - row.diff_a).abs() < 1e-8);
            assert!(row.max_pointwise <= row.lipschitz_bound);
            assert_eq!(row.noise, 0.0);
        }
        assert!(r.fit.is_some());
        assert!(continuity_probe(&m, 0.3, &[1e-3, 1e-1], 8, &s, &opts).is_err());
        assert!(continuity_probe(&m, 0.3, &[0.0], 8, &s, &opts).is_err());
    }

    #[test]
    fn continuity_matches_closed_form_derivative() {
        // L(E) = log((t + √(t² − 4))/2) with t = λ − E, so |dL/dE| = 1/√(t² − 4)
        let m = constant_model(10.0);
        let s = Sampler::grid(2, 2).unwrap();
        let opts = ContinuityOptions {
            proxy_scales: vec![2000],
            sigma: 0.04,
        };
        let e = 1.0;
        let t: f64 = 10.0 - e;
        let deriv = 1.0 / (t * t - 4.0).sqrt();
        let r = continuity_probe(&m, e, &[1e-2, 1e-3], 1000, &s, &opts).unwrap();
        for row in &r.rows {
            let l = |e: f64| {
                let t = 10.0 - e;
                ((t + (t * t - 4.0).sqrt()) / 2.0).ln()
            };
            let exact = (l(e) - l(e + row.delta)).abs();
            assert!((row.proxy_diff - exact).abs() < 1e-3 * row.delta, "{row:?}");
            assert!(row.proxy_diff <= 1.01 * deriv * row.delta);
        }
    }
}
