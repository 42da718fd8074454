//! Large-deviation measurements for `(1/n) log ‖M_n‖`: empirical measures of
//! the deviation sets with Wilson intervals, the large-disorder checks that
//! split the truncated determinant into its diagonal and off-diagonal parts,
//! the pointwise bound in the regime `|E| > 2λ‖v‖∞`, and a sublevel-set
//! measure probe for the potential.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::cocycle::{cocycle, f_determinant, CocycleKind};
use crate::error::{Error, Result};
use crate::linalg::pairwise_sum;
use crate::lyapunov::{check_budget, estimate_from_values, sample_map, LyapunovEstimate, Sampler, DEFAULT_WORK_BUDGET};
use crate::model::{JacobiModel, TrigPoly2};
use crate::torus::{skew_shift_iterate, TorusPoint};

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;

/// Wilson score interval for `successes` out of `trials` at quantile `z`.
pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lo = if successes == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if successes == trials { 1.0 } else { (center + half).min(1.0) };
    (lo, hi)
}

/// Units of a deviation threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdUnits {
    /// Multiples of `S(λ, E)`.
    S,
    Absolute,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub value: f64,
    pub units: ThresholdUnits,
}

impl Threshold {
    pub fn in_s(value: f64) -> Self {
        Self {
            value,
            units: ThresholdUnits::S,
        }
    }

    pub fn absolute(value: f64) -> Self {
        Self {
            value,
            units: ThresholdUnits::Absolute,
        }
    }

    /// The threshold in nats.
    pub fn resolve(&self, model: &JacobiModel, energy: f64) -> f64 {
        match self.units {
            ThresholdUnits::S => self.value * model.scaling_factor(energy),
            ThresholdUnits::Absolute => self.value,
        }
    }
}

/// Empirical measure of `{p : |(1/n) log ‖M_n(p)‖ − L_n| > threshold}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub n: usize,
    #[serde(rename = "E")]
    pub energy: f64,
    pub kind: CocycleKind,
    /// Threshold in nats.
    pub threshold: f64,
    pub threshold_spec: Threshold,
    pub exceed_count: u64,
    pub empirical_measure: f64,
    pub wilson_interval: (f64, f64),
    pub samples: u64,
    pub seed: Option<u64>,
    pub reference_l: LyapunovEstimate,
}

/// Measure the deviation set. Without an explicit `reference`, the center
/// `L_n` is the sample mean of the same evaluations. The reference must be
/// at least ten times sharper than the threshold.
pub fn deviation_measure(
    model: &JacobiModel,
    energy: f64,
    n: usize,
    threshold: Threshold,
    sampler: &Sampler,
    kind: CocycleKind,
    reference: Option<&LyapunovEstimate>,
) -> Result<DeviationReport> {
    let thr = threshold.resolve(model, energy);
    if !(thr > 0.0 && thr.is_finite()) {
        return Err(Error::InvalidInput(format!("threshold must be positive, got {thr}")));
    }
    if n == 0 || !energy.is_finite() {
        return Err(Error::InvalidInput("need n > 0 and finite E".into()));
    }
    check_budget(n as u128 * sampler.count() as u128, DEFAULT_WORK_BUDGET)?;
    let values = sample_map(sampler, |p| {
        cocycle(model, p, energy, n, kind)
            .expect("energy validated")
            .log_norm_rate()
    });
    deviation_from_values(model, energy, n, threshold, sampler, kind, &values, reference)
}

/// As [`deviation_measure`], for rates already evaluated at the points of
/// `sampler` (in sample order).
#[allow(clippy::too_many_arguments)]
pub fn deviation_from_values(
    model: &JacobiModel,
    energy: f64,
    n: usize,
    threshold: Threshold,
    sampler: &Sampler,
    kind: CocycleKind,
    values: &[f64],
    reference: Option<&LyapunovEstimate>,
) -> Result<DeviationReport> {
    let thr = threshold.resolve(model, energy);
    if !(thr > 0.0 && thr.is_finite()) {
        return Err(Error::InvalidInput(format!("threshold must be positive, got {thr}")));
    }
    let reference_l = match reference {
        Some(r) => r.clone(),
        None => estimate_from_values(model, energy, n, sampler, kind, values),
    };
    let limit = thr / 10.0;
    if reference_l.std_error > limit {
        let ratio = reference_l.std_error / limit;
        let required = (reference_l.samples as f64 * ratio * ratio).ceil() as u64;
        return Err(Error::ReferenceTooNoisy {
            std_error: reference_l.std_error,
            limit,
            required_samples: required,
        });
    }
    let center = reference_l.value;
    let exceed = values.iter().filter(|&&v| (v - center).abs() > thr).count() as u64;
    let samples = values.len() as u64;
    Ok(DeviationReport {
        n,
        energy,
        kind,
        threshold: thr,
        threshold_spec: threshold,
        exceed_count: exceed,
        empirical_measure: exceed as f64 / samples as f64,
        wilson_interval: wilson_interval(exceed, samples, Z_95),
        samples,
        seed: sampler.seed(),
        reference_l,
    })
}

/// Write deviation reports as CSV with columns
/// `n,E,threshold,measure,ci_lo,ci_hi,samples,seed`.
pub fn write_deviation_csv<W: Write>(mut out: W, reports: &[DeviationReport]) -> Result<()> {
    writeln!(out, "n,E,threshold,measure,ci_lo,ci_hi,samples,seed")?;
    for r in reports {
        let seed = r.seed.map(|s| s.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.n, r.energy, r.threshold, r.empirical_measure, r.wilson_interval.0, r.wilson_interval.1, r.samples, seed
        )?;
    }
    Ok(())
}

/// Quantities of the large-disorder argument at one scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialScaleRecord {
    pub n: usize,
    #[serde(rename = "E")]
    pub energy: f64,
    pub lambda: f64,
    pub samples: u64,
    /// Mean over samples of `(1/n) Σ_{j=1}^{n} log |v(T^j p) − E/λ|`.
    pub birkhoff_mean: f64,
    /// Largest sampled Birkhoff average, against `log(3‖v‖∞)`.
    pub birkhoff_max: f64,
    pub birkhoff_sup_bound: f64,
    /// `ρ = (1/400) log λ`.
    pub rho: f64,
    /// Fraction with Birkhoff average `≤ −ρ`.
    pub birkhoff_lower_tail: f64,
    /// Fraction with `min_j |λ v_j − E| < 8`, which contains the set where
    /// `‖D_n⁻¹ B_n‖ > ½` (since `‖B_n‖ ≤ 4`).
    pub off_diagonal_dominant: f64,
    /// Largest `|(1/n) log |det D_n| − log λ − birkhoff|`.
    pub det_identity_residual: f64,
    /// Points where `‖D_n⁻¹ B_n‖ ≤ ½` but
    /// `|(1/n) log |f_n / ∏_{j=2}^{n+1} a_j| − log λ| > |birkhoff| + 2 log 2`.
    pub chain_violations: u64,
    /// Fraction with `|(1/n) log |f_n / ∏ a_j| − log λ| ≤ ρ + log(3‖v‖∞) + 2 log 2`.
    pub chain_fraction: f64,
    pub chain_bound: f64,
    /// Fraction with `|(1/n) log |f_n / ∏ a_j| − log λ| ≤ (1/200) log λ`.
    pub fine_fraction: f64,
    /// Deviation of the unimodular rate at `S/20`.
    pub deviation: DeviationReport,
    /// `n^{−50}`.
    pub deviation_bound: f64,
    /// `L_n^u ≥ ½ S` as estimated.
    pub lower_bound_holds: bool,
    pub half_s: f64,
}

/// Evaluate the large-disorder quantities on the sample points.
pub fn initial_scale_check(
    model: &JacobiModel,
    energy: f64,
    n: usize,
    sampler: &Sampler,
) -> Result<InitialScaleRecord> {
    let lambda = model.lambda();
    if !(lambda > 1.0) {
        return Err(Error::InvalidInput(format!("large-disorder check needs λ > 1, got {lambda}")));
    }
    if n == 0 || !energy.is_finite() {
        return Err(Error::InvalidInput("need n > 0 and finite E".into()));
    }
    check_budget(3 * n as u128 * sampler.count() as u128, DEFAULT_WORK_BUDGET)?;
    let omega = model.omega();
    let log_lambda = lambda.ln();
    let nf = n as f64;
    let rho = log_lambda / 400.0;
    let sup_v = model.sup_norm_v();
    let chain_bound = rho + (3.0 * sup_v).ln() + 2.0 * 2f64.ln();

    struct Point {
        birkhoff: f64,
        det_residual: f64,
        dominant: bool,
        f_dev: f64,
    }
    let eval = |p: TorusPoint| -> Point {
        let mut logs = Vec::with_capacity(n);
        let mut logs_diag = Vec::with_capacity(n);
        let mut min_diag = f64::INFINITY;
        let mut sum_a = Vec::with_capacity(n);
        for j in 1..=n as u64 {
            let q = skew_shift_iterate(p, j, omega);
            let v = model.eval_v(q);
            logs.push((v - energy / lambda).abs().ln());
            let d = lambda * v - energy;
            logs_diag.push(d.abs().ln());
            min_diag = min_diag.min(d.abs());
            sum_a.push(model.eval_a(skew_shift_iterate(p, j + 1, omega).y).abs().ln());
        }
        let birkhoff = pairwise_sum(&logs) / nf;
        let det_residual = (pairwise_sum(&logs_diag) / nf - log_lambda - birkhoff).abs();
        let f = f_determinant(model, p, energy, n).expect("energy validated");
        let f_rate = (f.log_abs - pairwise_sum(&sum_a)) / nf;
        Point {
            birkhoff,
            det_residual,
            dominant: min_diag < 8.0,
            f_dev: (f_rate - log_lambda).abs(),
        }
    };
    let points: Vec<Point> = {
        use rayon::prelude::*;
        (0..sampler.count())
            .into_par_iter()
            .map(|i| eval(sampler.point(i)))
            .collect()
    };
    let count = points.len() as f64;
    let frac = |pred: &dyn Fn(&Point) -> bool| points.iter().filter(|p| pred(p)).count() as f64 / count;
    let birkhoffs: Vec<f64> = points.iter().map(|p| p.birkhoff).collect();
    let chain_violations = points
        .iter()
        .filter(|p| !p.dominant && p.f_dev > p.birkhoff.abs() + 2.0 * 2f64.ln() + 1e-9)
        .count() as u64;

    let s = model.scaling_factor(energy);
    let deviation = deviation_measure(
        model,
        energy,
        n,
        Threshold::in_s(1.0 / 20.0),
        sampler,
        CocycleKind::Unimodular,
        None,
    )?;
    let half_s = 0.5 * s;
    Ok(InitialScaleRecord {
        n,
        energy,
        lambda,
        samples: points.len() as u64,
        birkhoff_mean: pairwise_sum(&birkhoffs) / count,
        birkhoff_max: birkhoffs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        birkhoff_sup_bound: (3.0 * sup_v).ln(),
        rho,
        birkhoff_lower_tail: frac(&|p| p.birkhoff <= -rho),
        off_diagonal_dominant: frac(&|p| p.dominant),
        det_identity_residual: points.iter().map(|p| p.det_residual).fold(0.0, f64::max),
        chain_violations,
        chain_fraction: frac(&|p| p.f_dev <= chain_bound),
        chain_bound,
        fine_fraction: frac(&|p| p.f_dev <= log_lambda / 200.0),
        lower_bound_holds: deviation.reference_l.value + 3.0 * deviation.reference_l.std_error >= half_s,
        deviation,
        deviation_bound: nf.powf(-50.0),
        half_s,
    })
}

/// Pointwise check of `|(1/n) log ‖M_n‖ − log |E|| ≤ 8 + 2 log 2` in the
/// regime `|E| > 2λ‖v‖∞`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformRegimeReport {
    pub n: usize,
    #[serde(rename = "E")]
    pub energy: f64,
    pub samples: u64,
    pub bound: f64,
    pub max_deviation: f64,
    pub violations: u64,
}

pub fn uniform_regime_check(model: &JacobiModel, energy: f64, n: usize, sampler: &Sampler) -> Result<UniformRegimeReport> {
    let edge = 2.0 * model.lambda() * model.sup_norm_v();
    if !(energy.abs() > edge) || !energy.is_finite() {
        return Err(Error::InvalidInput(format!(
            "uniform regime needs |E| > 2λ‖v‖∞ = {edge}, got E = {energy}"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidInput("scale n must be positive".into()));
    }
    check_budget(n as u128 * sampler.count() as u128, DEFAULT_WORK_BUDGET)?;
    let log_e = energy.abs().ln();
    let devs = sample_map(sampler, |p| {
        let r = cocycle(model, p, energy, n, CocycleKind::Plain)
            .expect("energy validated")
            .log_norm_rate();
        (r - log_e).abs()
    });
    let bound = 8.0 + 2.0 * 2f64.ln();
    Ok(UniformRegimeReport {
        n,
        energy,
        samples: devs.len() as u64,
        bound,
        max_deviation: devs.iter().copied().fold(0.0, f64::max),
        violations: devs.iter().filter(|&&d| d > bound).count() as u64,
    })
}

/// One cell of the sublevel-set table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SublevelRow {
    pub h: f64,
    pub t: f64,
    /// Empirical measure of `{|v − h| < t}`.
    pub measure: f64,
}

/// Least-squares fit of `log measure = log C + b log t` for one level `h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerFit {
    pub h: f64,
    pub log_c: f64,
    pub b: f64,
    /// Root mean square of the fit residuals in log space.
    pub rms_residual: f64,
    pub points: usize,
    /// Fewer than two nonzero measures: no fit possible.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LojasiewiczReport {
    pub rows: Vec<SublevelRow>,
    pub fits: Vec<PowerFit>,
    pub samples: u64,
}

impl LojasiewiczReport {
    /// Smallest fitted exponent over the non-degenerate levels.
    pub fn min_exponent(&self) -> Option<f64> {
        self.fits.iter().filter(|f| !f.degenerate).map(|f| f.b).reduce(f64::min)
    }
}

/// Ordinary least squares `y ≈ a + b x`; returns `(a, b, rms)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<(f64, f64, f64)> {
    let k = xs.len();
    if k < 2 || ys.len() != k {
        return None;
    }
    let kf = k as f64;
    let mx = xs.iter().sum::<f64>() / kf;
    let my = ys.iter().sum::<f64>() / kf;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let rms = (xs.iter().zip(ys).map(|(x, y)| (y - a - b * x).powi(2)).sum::<f64>() / kf).sqrt();
    Some((a, b, rms))
}

/// Measure `{|v − h| < t}` on the `(h, t)` grid and fit a power law per `h`.
pub fn lojasiewicz_probe(v: &TrigPoly2, h_grid: &[f64], t_grid: &[f64], sampler: &Sampler) -> Result<LojasiewiczReport> {
    if v.is_constant() {
        return Err(Error::InvalidInput("sublevel probe needs a nonconstant potential".into()));
    }
    if t_grid.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::InvalidInput("sublevel widths t must be positive".into()));
    }
    let values = sample_map(sampler, |p| v.eval(p));
    let count = values.len() as f64;
    let mut rows = Vec::new();
    let mut fits = Vec::new();
    for &h in h_grid {
        let mut gaps: Vec<f64> = values.iter().map(|x| (x - h).abs()).collect();
        gaps.sort_by(f64::total_cmp);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for &t in t_grid {
            let below = gaps.partition_point(|&g| g < t);
            let measure = below as f64 / count;
            rows.push(SublevelRow { h, t, measure });
            if below > 0 {
                xs.push(t.ln());
                ys.push(measure.ln());
            }
        }
        fits.push(match linear_fit(&xs, &ys) {
            Some((a, b, rms)) => PowerFit {
                h,
                log_c: a,
                b,
                rms_residual: rms,
                points: xs.len(),
                degenerate: false,
            },
            None => PowerFit {
                h,
                log_c: f64::NAN,
                b: f64::NAN,
                rms_residual: f64::NAN,
                points: xs.len(),
                degenerate: true,
            },
        });
    }
    Ok(LojasiewiczReport {
        rows,
        fits,
        samples: values.len() as u64,
    })
}
