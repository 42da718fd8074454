//! Transfer matrices of the Jacobi equation
//! `−a_{n+1} φ(n+1) − a_n φ(n−1) + λ v_n φ(n) = E φ(n)` along skew-shift
//! orbits, their products, and the tridiagonal-determinant description of the
//! same products.
//!
//! Indexing: for a base point `p = (x, y)`, `a_j = a(y + jω)` and
//! `v_j = v(Tʲ p)`. The one-step matrix is
//! `A_j = (1/a_{j+1}) [[λv_j − E, −a_j], [a_{j+1}, 0]]` and the fundamental
//! matrix is `M_n = A_n ⋯ A_1`, mapping `(φ(1), φ(0))` to `(φ(n+1), φ(n))`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{LogScaledMatrix, Mat2, SignedLog};
use crate::model::JacobiModel;
use crate::torus::{frac_mul, mod1, skew_shift_iterate, skew_shift_iterate_signed, Orbit, TorusPoint};

/// Which normalization of the cocycle to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CocycleKind {
    /// `M_n = A_n ⋯ A_1`.
    Plain,
    /// `M_n / |det M_n|^{1/2}`.
    Unimodular,
    /// `A′_n ⋯ A′_1` with the undivided factors `A′_j = a_{j+1} A_j`.
    ANormalized,
}

impl CocycleKind {
    pub const ALL: [CocycleKind; 3] = [
        CocycleKind::Plain,
        CocycleKind::Unimodular,
        CocycleKind::ANormalized,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            CocycleKind::Plain => "plain",
            CocycleKind::Unimodular => "unimodular",
            CocycleKind::ANormalized => "a_normalized",
        }
    }
}

impl std::str::FromStr for CocycleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(CocycleKind::Plain),
            "unimodular" => Ok(CocycleKind::Unimodular),
            "a_normalized" | "a-normalized" => Ok(CocycleKind::ANormalized),
            other => Err(Error::InvalidInput(format!("unknown cocycle kind `{other}`"))),
        }
    }
}

/// A product of transfer matrices with its determinant tracked separately,
/// since `det` of the normalized carrier underflows for long products.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CocycleProduct {
    pub matrix: LogScaledMatrix,
    /// `log |det|`.
    pub log_det: f64,
    /// Sign of the determinant (`0` if singular).
    pub det_sign: i8,
    /// Number of one-step factors.
    pub n: usize,
}

impl CocycleProduct {
    pub fn identity() -> Self {
        Self {
            matrix: LogScaledMatrix::identity(),
            log_det: 0.0,
            det_sign: 1,
            n: 0,
        }
    }

    pub fn from_mat(m: Mat2) -> Self {
        let det = m.det();
        Self {
            matrix: LogScaledMatrix::from_mat(m),
            log_det: det.abs().ln(),
            det_sign: sign_of(det),
            n: 1,
        }
    }

    #[inline]
    pub fn left_mul(&mut self, factor: &Mat2) {
        self.matrix.left_mul(factor);
        let det = factor.det();
        self.log_det += det.abs().ln();
        self.det_sign *= sign_of(det);
        self.n += 1;
    }

    /// `log ‖·‖₂`.
    pub fn log_norm(&self) -> f64 {
        self.matrix.log_norm()
    }

    /// `(1/n) log ‖·‖₂`; zero for the empty product.
    pub fn log_norm_rate(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.log_norm() / self.n as f64
        }
    }

    pub fn to_mat(&self) -> Mat2 {
        self.matrix.to_mat()
    }
}

#[inline]
fn sign_of(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// `a_j = a(y + jω)` via the exact fractional part of `jω`.
fn a_at(model: &JacobiModel, base: TorusPoint, j: i64) -> f64 {
    let omega = model.omega();
    let shift = if j >= 0 {
        frac_mul(j as u128, omega)
    } else {
        -frac_mul(j.unsigned_abs() as u128, omega)
    };
    model.eval_a(mod1(base.y + shift))
}

fn v_at(model: &JacobiModel, base: TorusPoint, j: i64) -> f64 {
    model.eval_v(skew_shift_iterate_signed(base, j, model.omega()))
}

fn check_energy(energy: f64) -> Result<()> {
    if energy.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("energy must be finite, got {energy}")))
    }
}

/// `A_n(p)`.
pub fn transfer_matrix(model: &JacobiModel, base: TorusPoint, energy: f64, n: i64) -> Mat2 {
    let an = a_at(model, base, n);
    let an1 = a_at(model, base, n + 1);
    let d = model.lambda() * v_at(model, base, n) - energy;
    Mat2::new(d / an1, -an / an1, 1.0, 0.0)
}

/// `A′_n(p) = a_{n+1} A_n(p)`.
pub fn transfer_matrix_a(model: &JacobiModel, base: TorusPoint, energy: f64, n: i64) -> Mat2 {
    let an = a_at(model, base, n);
    let an1 = a_at(model, base, n + 1);
    let d = model.lambda() * v_at(model, base, n) - energy;
    Mat2::new(d, -an, an1, 0.0)
}

/// `A_n(p)⁻¹ = (1/a_n) [[0, a_n], [−a_{n+1}, λv_n − E]]`.
pub fn inverse_transfer_matrix(model: &JacobiModel, base: TorusPoint, energy: f64, n: i64) -> Mat2 {
    let an = a_at(model, base, n);
    let an1 = a_at(model, base, n + 1);
    let d = model.lambda() * v_at(model, base, n) - energy;
    Mat2::new(0.0, 1.0, -an1 / an, d / an)
}

/// Streams the one-step factors along the orbit of `base`, starting at
/// index 1.
fn accumulate(
    model: &JacobiModel,
    base: TorusPoint,
    energy: f64,
    n: usize,
    undivided: bool,
) -> CocycleProduct {
    let lambda = model.lambda();
    let mut orbit = Orbit::new(base, model.omega());
    orbit.step();
    let mut a_cur = model.eval_a(orbit.point().y);
    // The running product and determinant are kept raw and folded into log
    // form only when they leave a safe exponent range.
    let mut raw = Mat2::IDENTITY;
    let mut log_scale = 0.0;
    let mut det_raw = 1.0f64;
    let mut log_det = 0.0;
    let mut det_sign = 1i8;
    for _ in 0..n {
        let p = orbit.point();
        let d = lambda * model.eval_v(p) - energy;
        orbit.step();
        let a_next = model.eval_a(orbit.point().y);
        let factor = if undivided {
            Mat2::new(d, -a_cur, a_next, 0.0)
        } else {
            let inv = 1.0 / a_next;
            Mat2::new(d * inv, -a_cur * inv, 1.0, 0.0)
        };
        raw = factor * raw;
        det_raw *= factor.det();
        let f2 = raw.frobenius_sq();
        if !(RAW_MIN..=RAW_MAX).contains(&f2) && f2 > 0.0 && f2.is_finite() {
            raw = raw.scale(1.0 / f2.sqrt());
            log_scale += 0.5 * f2.ln();
        }
        if !(RAW_MIN..=RAW_MAX).contains(&det_raw.abs()) {
            log_det += det_raw.abs().ln();
            det_sign *= sign_of(det_raw);
            det_raw = 1.0;
        }
        a_cur = a_next;
    }
    CocycleProduct {
        matrix: LogScaledMatrix::from_mat(raw).scale_log(log_scale),
        log_det: log_det + det_raw.abs().ln(),
        det_sign: det_sign * sign_of(det_raw),
        n,
    }
}

const RAW_MIN: f64 = 1e-100;
const RAW_MAX: f64 = 1e100;

/// `M_n(p) = A_n(p) ⋯ A_1(p)`; `M_0 = I`.
pub fn fundamental_matrix(
    model: &JacobiModel,
    base: TorusPoint,
    energy: f64,
    n: usize,
) -> Result<CocycleProduct> {
    check_energy(energy)?;
    Ok(accumulate(model, base, energy, n, false))
}

/// `M^a_n(p) = A′_n(p) ⋯ A′_1(p)`.
pub fn fundamental_matrix_a(
    model: &JacobiModel,
    base: TorusPoint,
    energy: f64,
    n: usize,
) -> Result<CocycleProduct> {
    check_energy(energy)?;
    Ok(accumulate(model, base, energy, n, true))
}

/// Rescale to unit determinant: `M / |det M|^{1/2}`.
pub fn normalize_unimodular(product: &CocycleProduct) -> CocycleProduct {
    CocycleProduct {
        matrix: product.matrix.scale_log(-0.5 * product.log_det),
        log_det: 0.0,
        det_sign: product.det_sign,
        n: product.n,
    }
}

/// The `n`-step product of the requested kind.
pub fn cocycle(
    model: &JacobiModel,
    base: TorusPoint,
    energy: f64,
    n: usize,
    kind: CocycleKind,
) -> Result<CocycleProduct> {
    match kind {
        CocycleKind::Plain => fundamental_matrix(model, base, energy, n),
        CocycleKind::Unimodular => {
            fundamental_matrix(model, base, energy, n).map(|m| normalize_unimodular(&m))
        }
        CocycleKind::ANormalized => fundamental_matrix_a(model, base, energy, n),
    }
}

/// `M_{[n, n1]}(p) = A_n ⋯ A_{n1+1}`, computed as `M_{n−n1}(T^{n1} p)`.
pub fn segment(
    model: &JacobiModel,
    base: TorusPoint,
    energy: f64,
    n1: usize,
    n: usize,
    kind: CocycleKind,
) -> Result<CocycleProduct> {
    if n1 > n {
        return Err(Error::InvalidInput(format!("segment start {n1} exceeds end {n}")));
    }
    let start = skew_shift_iterate(base, n1 as u64, model.omega());
    cocycle(model, start, energy, n - n1, kind)
}

/// `later · earlier`.
pub fn compose(later: &CocycleProduct, earlier: &CocycleProduct) -> CocycleProduct {
    CocycleProduct {
        matrix: later.matrix * earlier.matrix,
        log_det: later.log_det + earlier.log_det,
        det_sign: later.det_sign * earlier.det_sign,
        n: later.n + earlier.n,
    }
}

/// `|det M_n(p)| = |a_1 / a_{n+1}|` in log form, from the closed-form
/// identity rather than from a product.
pub fn log_det_identity(model: &JacobiModel, base: TorusPoint, n: usize) -> f64 {
    a_at(model, base, 1).abs().ln() - a_at(model, base, n as i64 + 1).abs().ln()
}

/// `Σ_{j=lo}^{hi} log |a_j|` and the sign of the product.
fn log_a_product(model: &JacobiModel, base: TorusPoint, lo: i64, hi: i64) -> SignedLog {
    let mut acc = SignedLog::ONE;
    for j in lo..=hi {
        acc = acc.mul(&SignedLog::from_f64(a_at(model, base, j)));
    }
    acc
}

/// Values `|x| < UNDERFLOW_GUARD` in the rescaled recurrence are treated as
/// exact zeros.
const UNDERFLOW_GUARD: f64 = 1e-300;
const RESCALE_HIGH: f64 = 1e150;
const RESCALE_LOW: f64 = 1e-150;

/// `(f_n, f_{n−1})` for the truncated tridiagonal determinants, with
/// `f_0 = 1` and `f_{−1} = 0`. Computed by the three-term recurrence
/// `f_k = (λv_k − E) f_{k−1} − a_k² f_{k−2}` with a common running scale.
fn f_pair(model: &JacobiModel, base: TorusPoint, energy: f64, n: usize) -> (SignedLog, SignedLog) {
    let lambda = model.lambda();
    let omega = model.omega();
    let mut cur = 1.0f64;
    let mut prev = 0.0f64;
    let mut log_scale = 0.0f64;
    for k in 1..=n as u64 {
        let p = skew_shift_iterate(base, k, omega);
        let d = lambda * model.eval_v(p) - energy;
        let ak = model.eval_a(mod1(base.y + frac_mul(k as u128, omega)));
        let next = d * cur - ak * ak * prev;
        prev = cur;
        cur = next;
        let big = cur.abs().max(prev.abs());
        if big > RESCALE_HIGH || (big < RESCALE_LOW && big > 0.0) {
            cur /= big;
            prev /= big;
            log_scale += big.ln();
        }
    }
    let to_signed = |v: f64| {
        if v.abs() < UNDERFLOW_GUARD {
            SignedLog::ZERO
        } else {
            SignedLog::from_f64(v).scale_log(log_scale)
        }
    };
    (to_signed(cur), to_signed(prev))
}

/// `f_n(p)`: the determinant of the `n × n` tridiagonal matrix with
/// `λ v_j − E` on the diagonal and `−a_j` on both off-diagonals
/// (`a_2, …, a_n`). `f_0 = 1`.
pub fn f_determinant(model: &JacobiModel, base: TorusPoint, energy: f64, n: usize) -> Result<SignedLog> {
    check_energy(energy)?;
    Ok(f_pair(model, base, energy, n).0)
}

/// `M_n(p)` assembled from the determinants `f_n(p)`, `f_{n−1}(p)`,
/// `f_{n−1}(Tp)`, `f_{n−2}(Tp)` and products of the off-diagonal
/// coefficients. Independent of the matrix product, so the two can be
/// compared.
pub fn fundamental_matrix_via_f(
    model: &JacobiModel,
    base: TorusPoint,
    energy: f64,
    n: usize,
) -> Result<CocycleProduct> {
    check_energy(energy)?;
    if n == 0 {
        return Ok(CocycleProduct::identity());
    }
    let n_i = n as i64;
    let (fn_p, fn1_p) = f_pair(model, base, energy, n);
    let shifted = skew_shift_iterate(base, 1, model.omega());
    let (fn1_tp, fn2_tp) = f_pair(model, shifted, energy, n - 1);
    let ratio = SignedLog::from_f64(a_at(model, base, 1))
        .div(&SignedLog::from_f64(a_at(model, base, 2)))
        .neg();

    let m11 = fn_p.div(&log_a_product(model, base, 2, n_i + 1));
    let m12 = ratio.mul(&fn1_tp).div(&log_a_product(model, base, 3, n_i + 1));
    let m21 = fn1_p.div(&log_a_product(model, base, 2, n_i));
    let m22 = ratio.mul(&fn2_tp).div(&log_a_product(model, base, 3, n_i));

    let a1 = a_at(model, base, 1);
    let an1 = a_at(model, base, n_i + 1);
    Ok(CocycleProduct {
        matrix: LogScaledMatrix::from_signed_logs([m11, m12, m21, m22]),
        log_det: log_det_identity(model, base, n),
        det_sign: sign_of(a1) * sign_of(an1),
        n,
    })
}

/// A real number `mantissa · exp(log_scale)` that survives exponential
/// growth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaledReal {
    pub mantissa: f64,
    pub log_scale: f64,
}

impl ScaledReal {
    pub fn to_f64(&self) -> f64 {
        self.mantissa * self.log_scale.exp()
    }

    pub fn to_signed_log(&self) -> SignedLog {
        SignedLog::from_f64(self.mantissa).scale_log(self.log_scale)
    }
}

/// A solution of the Jacobi difference equation on `[start, start + len)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub start: i64,
    pub values: Vec<ScaledReal>,
}

impl Solution {
    pub fn at(&self, n: i64) -> Option<ScaledReal> {
        let idx = n.checked_sub(self.start)?;
        usize::try_from(idx).ok().and_then(|i| self.values.get(i).copied())
    }

    pub fn end(&self) -> i64 {
        self.start + self.values.len() as i64 - 1
    }
}

/// Largest `|n|` accepted by [`solve_difference_equation`].
pub const MAX_SOLVE_INDEX: i64 = 10_000;

const SOLVE_RESCALE: f64 = 1e200;

/// Solve `−a_{n+1} φ(n+1) − a_n φ(n−1) + λv_n φ(n) = E φ(n)` on
/// `[n_lo, n_hi]` from the initial data `(φ(0), φ(1))`, iterating forward for
/// `n ≥ 2` and backward for `n ≤ −1`.
pub fn solve_difference_equation(
    model: &JacobiModel,
    base: TorusPoint,
    energy: f64,
    n_lo: i64,
    n_hi: i64,
    initial: (f64, f64),
) -> Result<Solution> {
    check_energy(energy)?;
    if n_lo > 0 || n_hi < 1 || n_lo < -MAX_SOLVE_INDEX || n_hi > MAX_SOLVE_INDEX {
        return Err(Error::InvalidInput(format!(
            "solution range [{n_lo}, {n_hi}] must contain 0 and 1 and lie within ±{MAX_SOLVE_INDEX}"
        )));
    }
    if !(initial.0.is_finite() && initial.1.is_finite()) {
        return Err(Error::InvalidInput("initial data must be finite".into()));
    }
    let lambda = model.lambda();
    let d_at = |n: i64| lambda * v_at(model, base, n) - energy;

    // Forward: φ(n+1) = ((λv_n − E) φ(n) − a_n φ(n−1)) / a_{n+1}.
    let mut forward = Vec::with_capacity((n_hi + 1) as usize);
    let (mut prev, mut cur, mut scale) = (initial.0, initial.1, 0.0f64);
    forward.push(ScaledReal { mantissa: prev, log_scale: 0.0 });
    forward.push(ScaledReal { mantissa: cur, log_scale: 0.0 });
    for n in 1..n_hi {
        let next = (d_at(n) * cur - a_at(model, base, n) * prev) / a_at(model, base, n + 1);
        prev = cur;
        cur = next;
        let big = cur.abs().max(prev.abs());
        if big > SOLVE_RESCALE {
            cur /= big;
            prev /= big;
            scale += big.ln();
        }
        forward.push(ScaledReal { mantissa: cur, log_scale: scale });
    }

    // Backward: φ(n−1) = ((λv_n − E) φ(n) − a_{n+1} φ(n+1)) / a_n.
    let mut backward = Vec::with_capacity((-n_lo) as usize);
    let (mut nxt, mut cur, mut scale) = (initial.1, initial.0, 0.0f64);
    for n in (n_lo + 1..=0).rev() {
        let before = (d_at(n) * cur - a_at(model, base, n + 1) * nxt) / a_at(model, base, n);
        nxt = cur;
        cur = before;
        let big = cur.abs().max(nxt.abs());
        if big > SOLVE_RESCALE {
            cur /= big;
            nxt /= big;
            scale += big.ln();
        }
        backward.push(ScaledReal { mantissa: cur, log_scale: scale });
    }
    backward.reverse();
    backward.extend(forward);
    Ok(Solution {
        start: n_lo,
        values: backward,
    })
}

/// `W_n = a_{n+1} (ψ(n) φ(n+1) − φ(n) ψ(n+1))`, in plain floating point.
pub fn wronskian(model: &JacobiModel, base: TorusPoint, psi: &Solution, phi: &Solution, n: i64) -> Option<f64> {
    let g = |s: &Solution, k: i64| s.at(k).map(|v| v.to_f64());
    Some(a_at(model, base, n + 1) * (g(psi, n)? * g(phi, n + 1)? - g(phi, n)? * g(psi, n + 1)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AdmissionMode, ModelSpec, TrigPoly1, TrigPoly2};
    use proptest::prelude::*;

    fn default_model(lambda: f64) -> JacobiModel {
        JacobiModel::from_spec(ModelSpec::default_theorem(lambda), AdmissionMode::General).unwrap()
    }

    fn free_model() -> JacobiModel {
        JacobiModel::from_spec(ModelSpec::free(), AdmissionMode::General).unwrap()
    }

    fn rel_close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
    }

    #[test]
    fn free_transfer_matrix_example() {
        let m = free_model();
        let p = TorusPoint::new(0.3, 0.1);
        let a = transfer_matrix(&m, p, 1.0, 0);
        assert!(a.max_abs_diff(&Mat2::new(-1.0, -1.0, 1.0, 0.0)) < 1e-15);
        let inv = inverse_transfer_matrix(&m, p, 1.0, 0);
        assert!(inv.max_abs_diff(&Mat2::new(0.0, 1.0, -1.0, -1.0)) < 1e-15);
        let m0 = fundamental_matrix(&m, p, 1.0, 0).unwrap();
        assert!(m0.to_mat().max_abs_diff(&Mat2::IDENTITY) < 1e-15);
        assert_eq!(m0.log_det, 0.0);
    }

    #[test]
    fn free_fundamental_matrix_is_chebyshev_power() {
        let m = free_model();
        let p = TorusPoint::new(0.2, 0.7);
        let one = Mat2::new(-1.0, -1.0, 1.0, 0.0);
        let mut expected = Mat2::IDENTITY;
        for n in 1..=6 {
            expected = one * expected;
            let got = fundamental_matrix(&m, p, 1.0, n).unwrap().to_mat();
            assert!(got.max_abs_diff(&expected) < 1e-13, "n = {n}");
        }
        // period three: A³ = I for E = 1
        assert!(expected.max_abs_diff(&Mat2::IDENTITY) < 1e-13);
    }

    #[test]
    fn inverse_is_two_sided() {
        let m = default_model(2.5);
        for (i, &e) in [-3.0, 0.0, 1.7].iter().enumerate() {
            let p = TorusPoint::new(0.11 * i as f64 + 0.05, 0.37);
            for n in [-5i64, 0, 1, 9] {
                let a = transfer_matrix(&m, p, e, n);
                let b = inverse_transfer_matrix(&m, p, e, n);
                assert!((a * b).max_abs_diff(&Mat2::IDENTITY) < 1e-10);
                assert!((b * a).max_abs_diff(&Mat2::IDENTITY) < 1e-10);
            }
        }
    }

    #[test]
    fn unit_a_determinants() {
        let m = free_model();
        let p = TorusPoint::new(0.4, 0.9);
        let prod = fundamental_matrix(&m, p, 0.5, 37).unwrap();
        assert!(prod.log_det.abs() < 1e-12);
        assert_eq!(prod.det_sign, 1);
    }

    #[test]
    fn determinant_tracks_closed_form() {
        let m = default_model(3.0);
        let p = TorusPoint::new(0.12, 0.81);
        for n in [1usize, 2, 10, 1000, 10_000] {
            let prod = fundamental_matrix(&m, p, 0.4, n).unwrap();
            let expect = log_det_identity(&m, p, n);
            assert!((prod.log_det - expect).abs() < 1e-9 * (1.0 + expect.abs()), "n = {n}");
            assert_eq!(prod.det_sign, 1);
        }
    }

    #[test]
    fn f_small_cases() {
        let m = default_model(2.0);
        let p = TorusPoint::new(0.3, 0.6);
        let e = 0.7;
        let d = |j: i64| 2.0 * v_at(&m, p, j) - e;
        let a = |j: i64| a_at(&m, p, j);
        assert_eq!(f_determinant(&m, p, e, 0).unwrap(), SignedLog::ONE);
        let f1 = f_determinant(&m, p, e, 1).unwrap().to_f64();
        assert!((f1 - d(1)).abs() < 1e-14);
        let f2 = f_determinant(&m, p, e, 2).unwrap().to_f64();
        assert!((f2 - (d(1) * d(2) - a(2) * a(2))).abs() < 1e-13);
    }

    /// Dense cofactor expansion of the tridiagonal determinant.
    fn dense_det(rows: &[Vec<f64>]) -> f64 {
        let n = rows.len();
        if n == 0 {
            return 1.0;
        }
        if n == 1 {
            return rows[0][0];
        }
        let mut total = 0.0;
        for col in 0..n {
            let minor: Vec<Vec<f64>> = rows[1..]
                .iter()
                .map(|r| r.iter().enumerate().filter(|(c, _)| *c != col).map(|(_, v)| *v).collect())
                .collect();
            let sign = if col % 2 == 0 { 1.0 } else { -1.0 };
            total += sign * rows[0][col] * dense_det(&minor);
        }
        total
    }

    #[test]
    fn f_matches_dense_determinant() {
        let m = default_model(1.3);
        let p = TorusPoint::new(0.77, 0.21);
        let e = -0.4;
        for n in 1..=8usize {
            let mut rows = vec![vec![0.0; n]; n];
            for i in 0..n {
                let j = i as i64 + 1;
                rows[i][i] = 1.3 * v_at(&m, p, j) - e;
                if i + 1 < n {
                    let off = a_at(&m, p, j + 1);
                    rows[i][i + 1] = off;
                    rows[i + 1][i] = off;
                }
            }
            let dense = dense_det(&rows);
            let f = f_determinant(&m, p, e, n).unwrap().to_f64();
            assert!(rel_close(f, dense, 1e-10), "n = {n}: {f} vs {dense}");
        }
    }

    #[test]
    fn via_f_matches_product_on_small_cases() {
        let m = default_model(1.0);
        let p = TorusPoint::new(0.05, 0.44);
        for n in 1..=12usize {
            let a = fundamental_matrix(&m, p, 0.3, n).unwrap();
            let b = fundamental_matrix_via_f(&m, p, 0.3, n).unwrap();
            assert!(a.matrix.relative_distance(&b.matrix) < 1e-12, "n = {n}");
        }
    }

    #[test]
    fn unimodular_and_a_normalized_relations() {
        let m = default_model(4.0);
        let p = TorusPoint::new(0.61, 0.02);
        let n = 300;
        let plain = fundamental_matrix(&m, p, 1.0, n).unwrap();
        let uni = normalize_unimodular(&plain);
        let a_norm = fundamental_matrix_a(&m, p, 1.0, n).unwrap();
        let sum_a: f64 = (2..=n as i64 + 1).map(|j| a_at(&m, p, j).abs().ln()).sum();
        assert!((a_norm.log_norm() - plain.log_norm() - sum_a).abs() < 1e-8);
        let half = 0.5 * log_det_identity(&m, p, n);
        assert!((uni.log_norm() - (plain.log_norm() - half)).abs() < 1e-8);
        assert!(uni.log_det.abs() < 1e-8);
        // the carrier's own determinant only resolves at short lengths
        let short = normalize_unimodular(&fundamental_matrix(&m, p, 1.0, 3).unwrap());
        assert!((short.to_mat().det() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn segments_compose() {
        let m = default_model(2.0);
        let p = TorusPoint::new(0.9, 0.33);
        let whole = fundamental_matrix(&m, p, 0.2, 50).unwrap();
        let first = segment(&m, p, 0.2, 0, 20, CocycleKind::Plain).unwrap();
        let second = segment(&m, p, 0.2, 20, 50, CocycleKind::Plain).unwrap();
        let glued = compose(&second, &first);
        assert!(whole.matrix.relative_distance(&glued.matrix) < 1e-10);
        assert!((whole.log_det - glued.log_det).abs() < 1e-10);
        assert!(segment(&m, p, 0.2, 5, 4, CocycleKind::Plain).is_err());
    }

    #[test]
    fn solutions_reproduce_fundamental_matrix_columns() {
        let m = default_model(1.5);
        let p = TorusPoint::new(0.18, 0.52);
        let e = 0.25;
        let psi = solve_difference_equation(&m, p, e, -10, 40, (0.0, 1.0)).unwrap();
        let phi = solve_difference_equation(&m, p, e, -10, 40, (1.0, 0.0)).unwrap();
        for n in [1usize, 5, 20, 39] {
            let mm = fundamental_matrix(&m, p, e, n).unwrap().to_mat();
            let k = n as i64;
            let cols = Mat2::new(
                psi.at(k + 1).unwrap().to_f64(),
                phi.at(k + 1).unwrap().to_f64(),
                psi.at(k).unwrap().to_f64(),
                phi.at(k).unwrap().to_f64(),
            );
            assert!(rel_close(0.0, cols.max_abs_diff(&mm) / mm.frobenius(), 1e-11), "n = {n}");
        }
        let w0 = wronskian(&m, p, &psi, &phi, 0).unwrap();
        for n in -9..39 {
            let w = wronskian(&m, p, &psi, &phi, n).unwrap();
            assert!(rel_close(w, w0, 1e-9), "n = {n}: {w} vs {w0}");
        }
        assert!(solve_difference_equation(&m, p, e, 1, 5, (1.0, 0.0)).is_err());
        assert!(solve_difference_equation(&m, p, e, 0, 20_000, (1.0, 0.0)).is_err());
    }

    #[test]
    fn growth_survives_huge_coupling() {
        let m = default_model(1e6);
        let p = TorusPoint::new(0.123, 0.456);
        let prod = fundamental_matrix(&m, p, 0.0, 10_000).unwrap();
        assert!(prod.log_norm().is_finite());
        assert!(prod.log_norm_rate() > 10.0);
        let via = fundamental_matrix_via_f(&m, p, 0.0, 200).unwrap();
        let direct = fundamental_matrix(&m, p, 0.0, 200).unwrap();
        assert!(direct.matrix.relative_distance(&via.matrix) < 1e-8);
    }

    #[test]
    fn hand_evaluated_transfer_matrix() {
        let spec = ModelSpec {
            a_coeffs: TrigPoly1::constant(1.0),
            v_coeffs: TrigPoly2::cos_x(),
            lambda: 2.0,
            ..ModelSpec::free()
        };
        let m = JacobiModel::from_spec(spec, AdmissionMode::General).unwrap();
        // T(0, 0) = (0, ω), so v_1 = cos 0 = 1
        let a = transfer_matrix(&m, TorusPoint::new(0.0, 0.0), 0.5, 1);
        assert!(a.max_abs_diff(&Mat2::new(1.5, -1.0, 1.0, 0.0)) < 1e-15);
        let via = fundamental_matrix_via_f(&m, TorusPoint::new(0.0, 0.0), 0.5, 1).unwrap();
        assert!(via.to_mat().max_abs_diff(&a) < 1e-14);
    }

    #[test]
    fn free_model_two_step_product_is_minus_identity_times_rotation() {
        let m = free_model();
        let p = TorusPoint::new(0.3, 0.8);
        let direct = fundamental_matrix(&m, p, 1.0, 2).unwrap().to_mat();
        let one = Mat2::new(-1.0, -1.0, 1.0, 0.0);
        assert!(direct.max_abs_diff(&(one * one)) < 1e-15);
        let via = fundamental_matrix_via_f(&m, p, 1.0, 2).unwrap().to_mat();
        assert!(via.max_abs_diff(&direct) < 1e-14);
    }

    #[test]
    fn unit_a_normalizations_coincide() {
        let spec = ModelSpec {
            v_coeffs: TrigPoly2::cos_x(),
            lambda: 3.0,
            ..ModelSpec::free()
        };
        let m = JacobiModel::from_spec(spec, AdmissionMode::General).unwrap();
        let p = TorusPoint::new(0.25, 0.125);
        let plain = cocycle(&m, p, 0.1, 40, CocycleKind::Plain).unwrap();
        for kind in [CocycleKind::Unimodular, CocycleKind::ANormalized] {
            let other = cocycle(&m, p, 0.1, 40, kind).unwrap();
            assert!(plain.matrix.relative_distance(&other.matrix) < 1e-12);
        }
    }

    #[test]
    fn superposition_of_fundamental_solutions() {
        let m = default_model(0.8);
        let p = TorusPoint::new(0.41, 0.93);
        let e = -0.6;
        let (c0, c1) = (0.7, -1.9);
        let psi = solve_difference_equation(&m, p, e, -20, 60, (0.0, 1.0)).unwrap();
        let phi = solve_difference_equation(&m, p, e, -20, 60, (1.0, 0.0)).unwrap();
        let gen = solve_difference_equation(&m, p, e, -20, 60, (c0, c1)).unwrap();
        for n in -20..=60 {
            let want = c0 * phi.at(n).unwrap().to_f64() + c1 * psi.at(n).unwrap().to_f64();
            let got = gen.at(n).unwrap().to_f64();
            assert!(rel_close(got, want, 1e-9), "n = {n}");
        }
        assert_eq!(gen.start, -20);
        assert_eq!(gen.end(), 60);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn one_step_identities(x in 0.0f64..1.0, y in 0.0f64..1.0, e in -5.0f64..5.0,
                               lambda in 0.0f64..20.0, n in -50i64..50) {
            let m = default_model(lambda);
            let p = TorusPoint::new(x, y);
            let a = transfer_matrix(&m, p, e, n);
            let det = a_at(&m, p, n) / a_at(&m, p, n + 1);
            prop_assert!((a.det() - det).abs() < 1e-12);
            let inv = inverse_transfer_matrix(&m, p, e, n);
            prop_assert!((a * inv).max_abs_diff(&Mat2::IDENTITY) < 1e-10);
            prop_assert!(inv.max_abs_diff(&a.inverse().unwrap()) < 1e-10);
            let ap = transfer_matrix_a(&m, p, e, n);
            prop_assert!(ap.max_abs_diff(&a.scale(a_at(&m, p, n + 1))) < 1e-10 * (1.0 + lambda));
        }

        #[test]
        fn norm_bounds_and_normalizations(x in 0.0f64..1.0, y in 0.0f64..1.0, e in -3.0f64..3.0,
                                          lambda in 0.0f64..1e3, n in 1usize..500) {
            let m = default_model(lambda);
            let p = TorusPoint::new(x, y);
            let plain = fundamental_matrix(&m, p, e, n).unwrap();
            let uni = normalize_unimodular(&plain);
            let a_norm = fundamental_matrix_a(&m, p, e, n).unwrap();
            let nf = n as f64;
            let sum_a: f64 = (2..=n as i64 + 1).map(|j| a_at(&m, p, j).abs().ln()).sum();
            // norm bound with C = λ‖v‖ + max(E₀, |E|) + 2 sup|a|
            let c = m.transfer_norm_bound(e);
            prop_assert!(plain.log_norm() / nf <= c.ln() - sum_a / nf + 1e-9);
            // real-point growth bound of the undivided product
            prop_assert!(a_norm.log_norm() / nf <= m.scaling_factor(e) + 1e-9);
            // unimodular normalization
            prop_assert!(uni.log_norm() >= -1e-9);
            let half = 0.5 * log_det_identity(&m, p, n);
            prop_assert!((uni.log_norm() - plain.log_norm() + half).abs() < 1e-9);
            // a-normalized relations
            prop_assert!((a_norm.log_norm() - plain.log_norm() - sum_a).abs() < 1e-8);
            let sum_pairs: f64 = (1..=n as i64)
                .map(|j| 0.5 * (a_at(&m, p, j) * a_at(&m, p, j + 1)).abs().ln())
                .sum();
            prop_assert!((a_norm.log_norm() - uni.log_norm() - sum_pairs).abs() < 1e-8);
        }
    }

    #[test]
    fn rejects_nonfinite_energy() {
        let m = free_model();
        let p = TorusPoint::new(0.0, 0.0);
        assert!(fundamental_matrix(&m, p, f64::NAN, 3).is_err());
        assert!(f_determinant(&m, p, f64::INFINITY, 3).is_err());
    }

    #[test]
    fn kind_names_round_trip() {
        for k in CocycleKind::ALL {
            assert_eq!(k.as_str().parse::<CocycleKind>().unwrap(), k);
        }
        let _ = TrigPoly1::constant(1.0);
        let _ = TrigPoly2::zero();
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn det_identity_holds(x in 0.0f64..1.0, y in 0.0f64..1.0, e in -5.0f64..5.0,
                              lambda in 0.0f64..50.0, n in 1usize..3000) {
            let m = default_model(lambda);
            let p = TorusPoint::new(x, y);
            let prod = fundamental_matrix(&m, p, e, n).unwrap();
            let expect = log_det_identity(&m, p, n);
            prop_assert!((prod.log_det - expect).abs() < 1e-9 * (1.0 + expect.abs()));
        }

        #[test]
        fn via_f_matches_product(x in 0.0f64..1.0, y in 0.0f64..1.0, e in -4.0f64..4.0,
                                 lambda in 0.5f64..20.0, n in 1usize..200) {
            let m = default_model(lambda);
            let p = TorusPoint::new(x, y);
            let a = fundamental_matrix(&m, p, e, n).unwrap();
            let b = fundamental_matrix_via_f(&m, p, e, n).unwrap();
            prop_assert!(a.matrix.relative_distance(&b.matrix) < 1e-8,
                "distance {}", a.matrix.relative_distance(&b.matrix));
        }
    }
}
