//! The avalanche principle as an executable check: given `A_1, …, A_n` with
//! `|det A_j| ≤ 1`, `‖A_j‖ ≥ μ ≥ n` and pairwise defects
//! `|log‖A_{j+1}‖ + log‖A_j‖ − log‖A_{j+1}A_j‖| < ½ log μ`, the combination
//!
//! `|log‖A_n⋯A_1‖ + Σ_{j=2}^{n−1} log‖A_j‖ − Σ_{j=1}^{n−1} log‖A_{j+1}A_j‖|`
//!
//! is at most `C n / μ`. Norms are spectral norms throughout.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cocycle::{cocycle, CocycleKind, CocycleProduct};
use crate::error::{Error, Result};
use crate::linalg::{pairwise_sum, LogScaledMatrix, Mat2};
use crate::lyapunov::{check_budget, DEFAULT_WORK_BUDGET};
use crate::model::JacobiModel;
use crate::torus::{skew_shift_iterate, TorusPoint};

/// Default constant `C` in the bound `C n / μ`.
pub const DEFAULT_AVALANCHE_CONSTANT: f64 = 20.0;

/// Slack on `log |det| ≤ 0` for factors whose determinant is known in log
/// form.
const DET_SLACK: f64 = 1e-12;

/// One matrix of the sequence with its determinant carried separately.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AvalancheFactor {
    pub matrix: LogScaledMatrix,
    pub log_abs_det: f64,
    /// Rounding uncertainty of `log_abs_det`; `|det| ≤ 1` is accepted when
    /// `log_abs_det ≤ det_slack`.
    pub det_slack: f64,
}

impl From<Mat2> for AvalancheFactor {
    /// `ad − bc` carries an absolute error of a few `ε ‖A‖_F²`.
    fn from(m: Mat2) -> Self {
        let det = m.det().abs();
        Self {
            matrix: LogScaledMatrix::from_mat(m),
            log_abs_det: det.ln(),
            det_slack: (8.0 * f64::EPSILON * m.frobenius_sq() / det).ln_1p().max(DET_SLACK),
        }
    }
}

impl From<&CocycleProduct> for AvalancheFactor {
    fn from(c: &CocycleProduct) -> Self {
        Self {
            matrix: c.matrix,
            log_abs_det: c.log_det,
            det_slack: DET_SLACK,
        }
    }
}

impl From<CocycleProduct> for AvalancheFactor {
    fn from(c: CocycleProduct) -> Self {
        (&c).into()
    }
}

/// Hypotheses, conclusion and every intermediate sum of one check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvalancheReport {
    pub n: usize,
    pub mu: f64,
    pub constant: f64,
    pub hyp_det: bool,
    pub hyp_norm: bool,
    pub hyp_cancel: bool,
    pub max_log_abs_det: f64,
    pub min_log_norm: f64,
    pub max_pair_defect: f64,
    /// `log ‖A_n ⋯ A_1‖`.
    pub log_norm_product: f64,
    /// `Σ_{j=2}^{n−1} log ‖A_j‖`.
    pub sum_inner_norms: f64,
    /// `Σ_{j=1}^{n−1} log ‖A_{j+1} A_j‖`.
    pub sum_pair_norms: f64,
    pub lhs: f64,
    /// `C n / μ`.
    pub bound: f64,
    /// Floating-point resolution of `lhs`: machine epsilon times the sum of
    /// the magnitudes that cancel in it. Bounds below this are not
    /// resolvable in double precision.
    pub resolution: f64,
    /// `n = 2`: the conclusion is the tautology `0 ≤ 2C/μ`.
    pub degenerate: bool,
    /// All hypotheses hold and `lhs ≤ bound + resolution`.
    pub pass: bool,
}

impl AvalancheReport {
    pub fn hypotheses_hold(&self) -> bool {
        self.hyp_det && self.hyp_norm && self.hyp_cancel
    }
}

/// Run the check on an ordered sequence `A_1, …, A_n`.
pub fn avalanche_check(factors: &[AvalancheFactor], mu: f64, constant: f64) -> Result<AvalancheReport> {
    let n = factors.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!("avalanche check needs at least 2 matrices, got {n}")));
    }
    if !(mu > 1.0 && mu.is_finite()) {
        return Err(Error::InvalidInput(format!("μ must be a finite number above 1, got {mu}")));
    }
    if !(constant > 0.0 && constant.is_finite()) {
        return Err(Error::InvalidInput(format!("constant C must be positive, got {constant}")));
    }
    let log_mu = mu.ln();
    let norms: Vec<f64> = factors.iter().map(|f| f.matrix.log_norm()).collect();
    let pairs: Vec<f64> = factors
        .windows(2)
        .map(|w| (w[1].matrix * w[0].matrix).log_norm())
        .collect();
    let mut full = factors[0].matrix;
    for f in &factors[1..] {
        full = f.matrix * full;
    }
    let log_norm_product = full.log_norm();

    let max_log_abs_det = factors.iter().map(|f| f.log_abs_det).fold(f64::NEG_INFINITY, f64::max);
    let hyp_det = factors.iter().all(|f| f.log_abs_det <= f.det_slack);
    let min_log_norm = norms.iter().copied().fold(f64::INFINITY, f64::min);
    let max_pair_defect = pairs
        .iter()
        .enumerate()
        .map(|(j, p)| (norms[j] + norms[j + 1] - p).abs())
        .fold(0.0, f64::max);

    let sum_inner_norms = pairwise_sum(&norms[1..n - 1]);
    let sum_pair_norms = pairwise_sum(&pairs);
    let lhs = (log_norm_product + sum_inner_norms - sum_pair_norms).abs();
    let bound = constant * n as f64 / mu;
    let magnitude = log_norm_product.abs()
        + norms[1..n - 1].iter().map(|v| v.abs()).sum::<f64>()
        + pairs.iter().map(|v| v.abs()).sum::<f64>();
    let resolution = 16.0 * f64::EPSILON * magnitude;

    let hyp_norm = min_log_norm >= log_mu && mu >= n as f64;
    let hyp_cancel = max_pair_defect < 0.5 * log_mu;
    let pass = hyp_det && hyp_norm && hyp_cancel && lhs <= bound + resolution;
    Ok(AvalancheReport {
        n,
        mu,
        constant,
        hyp_det,
        hyp_norm,
        hyp_cancel,
        max_log_abs_det,
        min_log_norm,
        max_pair_defect,
        log_norm_product,
        sum_inner_norms,
        sum_pair_norms,
        lhs,
        bound,
        resolution,
        degenerate: n == 2,
        pass,
    })
}

/// Convenience wrapper for plain matrices.
pub fn avalanche_check_mats(mats: &[Mat2], mu: f64, constant: f64) -> Result<AvalancheReport> {
    let factors: Vec<AvalancheFactor> = mats.iter().map(|&m| m.into()).collect();
    avalanche_check(&factors, mu, constant)
}

/// Parameters of the cocycle block check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockOptions {
    /// `μ = exp((9γ/10) n S)`.
    pub gamma: f64,
    pub constant: f64,
}

impl Default for BlockOptions {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            constant: DEFAULT_AVALANCHE_CONSTANT,
        }
    }
}

/// The block parameter `μ = exp((9γ/10) n S(λ, E))`.
pub fn block_mu(model: &JacobiModel, energy: f64, n: usize, gamma: f64) -> f64 {
    (0.9 * gamma * n as f64 * model.scaling_factor(energy)).exp()
}

/// Blocks `A_j = M_n^u(T^{(j−1)n} p)`, `j = 1, …, blocks`.
pub fn cocycle_blocks(
    model: &JacobiModel,
    base: TorusPoint,
    energy: f64,
    n: usize,
    blocks: usize,
) -> Result<Vec<AvalancheFactor>> {
    if n == 0 {
        return Err(Error::InvalidInput("block length must be positive".into()));
    }
    check_budget(n as u128 * blocks as u128, DEFAULT_WORK_BUDGET)?;
    let omega = model.omega();
    (0..blocks)
        .into_par_iter()
        .map(|j| {
            let start = skew_shift_iterate(base, (j * n) as u64, omega);
            cocycle(model, start, energy, n, CocycleKind::Unimodular).map(AvalancheFactor::from)
        })
        .collect()
}

/// Avalanche check on consecutive unimodular `n`-blocks along the orbit of
/// `base`. Hypothesis failure is reported, not raised.
pub fn avalanche_on_cocycle(
    model: &JacobiModel,
    base: TorusPoint,
    energy: f64,
    n: usize,
    blocks: usize,
    options: BlockOptions,
) -> Result<AvalancheReport> {
    let factors = cocycle_blocks(model, base, energy, n, blocks)?;
    let mu = block_mu(model, energy, n, options.gamma);
    avalanche_check(&factors, mu, options.constant)
}

/// `A_j = diag(μ, 1/μ)` for `j = 1, …, n`.
pub fn diagonal_sequence(n: usize, mu: f64) -> Vec<Mat2> {
    vec![Mat2::diag(mu, 1.0 / mu); n]
}

/// `A_j = R(θ_j) diag(μ_j, 1/μ_j) R(θ′_j)` with angles uniform in
/// `[−max_angle, max_angle]` and `μ_j` uniform in `[μ, 2μ]`.
pub fn random_hyperbolic_sequence(n: usize, mu: f64, max_angle: f64, seed: u64) -> Vec<Mat2> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let a = rng.gen_range(-max_angle..=max_angle);
            let b = rng.gen_range(-max_angle..=max_angle);
            let s = rng.gen_range(mu..=2.0 * mu);
            Mat2::rotation(a) * Mat2::diag(s, 1.0 / s) * Mat2::rotation(b)
        })
        .collect()
}
