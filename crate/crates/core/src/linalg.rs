//! Small dense 2×2 algebra and overflow-safe carriers for long products.

use std::ops::Mul;

use serde::{Deserialize, Serialize};

/// A real 2×2 matrix, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mat2(pub [f64; 4]);

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2([1.0, 0.0, 0.0, 1.0]);
    pub const ZERO: Mat2 = Mat2([0.0; 4]);

    #[inline]
    pub const fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Mat2([a, b, c, d])
    }

    pub fn diag(a: f64, d: f64) -> Self {
        Mat2([a, 0.0, 0.0, d])
    }

    pub fn rotation(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Mat2([c, -s, s, c])
    }

    #[inline]
    pub fn det(&self) -> f64 {
        let [a, b, c, d] = self.0;
        a * d - b * c
    }

    #[inline]
    pub fn frobenius_sq(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    #[inline]
    pub fn frobenius(&self) -> f64 {
        self.frobenius_sq().sqrt()
    }

    /// Largest singular value, from the closed form for `√λ_max(MᵀM)`.
    #[inline]
    pub fn op_norm(&self) -> f64 {
        sigma_max_sq(self.frobenius_sq(), self.det()).sqrt()
    }

    /// Inverse via the adjugate; `None` for singular input.
    pub fn inverse(&self) -> Option<Mat2> {
        let det = self.det();
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let [a, b, c, d] = self.0;
        Some(Mat2([d / det, -b / det, -c / det, a / det]))
    }

    #[inline]
    pub fn scale(&self, s: f64) -> Mat2 {
        Mat2(self.0.map(|v| v * s))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Mat2) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Mul for Mat2 {
    type Output = Mat2;

    #[inline]
    fn mul(self, rhs: Mat2) -> Mat2 {
        let [a, b, c, d] = self.0;
        let [e, f, g, h] = rhs.0;
        Mat2([a * e + b * g, a * f + b * h, c * e + d * g, c * f + d * h])
    }
}

/// `σ_max²` from `‖M‖_F²` and `det M`.
#[inline]
fn sigma_max_sq(fro_sq: f64, det: f64) -> f64 {
    let det = det.abs();
    let disc = ((fro_sq - 2.0 * det) * (fro_sq + 2.0 * det)).max(0.0);
    0.5 * (fro_sq + disc.sqrt())
}

/// A 2×2 matrix stored as `exp(log_scale) · unit` with `‖unit‖_F = 1`.
///
/// The zero matrix is represented by a zero `unit` and `log_scale = -∞`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogScaledMatrix {
    pub unit: Mat2,
    pub log_scale: f64,
}

impl LogScaledMatrix {
    pub fn identity() -> Self {
        Self::from_mat(Mat2::IDENTITY)
    }

    pub fn from_mat(m: Mat2) -> Self {
        let f = m.frobenius();
        if f == 0.0 {
            return Self {
                unit: Mat2::ZERO,
                log_scale: f64::NEG_INFINITY,
            };
        }
        Self {
            unit: m.scale(1.0 / f),
            log_scale: f.ln(),
        }
    }

    /// Build from four signed-log entries (row-major).
    pub fn from_signed_logs(entries: [SignedLog; 4]) -> Self {
        let top = entries
            .iter()
            .filter(|e| e.sign != 0)
            .map(|e| e.log_abs)
            .fold(f64::NEG_INFINITY, f64::max);
        if top == f64::NEG_INFINITY {
            return Self::from_mat(Mat2::ZERO);
        }
        let raw = entries.map(|e| {
            if e.sign == 0 {
                0.0
            } else {
                e.sign as f64 * (e.log_abs - top).exp()
            }
        });
        let mut out = Self::from_mat(Mat2(raw));
        out.log_scale += top;
        out
    }

    #[inline]
    fn renormalize(unit: Mat2, log_scale: f64) -> Self {
        let f2 = unit.frobenius_sq();
        if f2 == 0.0 {
            return Self {
                unit: Mat2::ZERO,
                log_scale: f64::NEG_INFINITY,
            };
        }
        Self {
            unit: unit.scale(1.0 / f2.sqrt()),
            log_scale: log_scale + 0.5 * f2.ln(),
        }
    }

    /// `self ← factor · self`.
    #[inline]
    pub fn left_mul(&mut self, factor: &Mat2) {
        *self = Self::renormalize(*factor * self.unit, self.log_scale);
    }

    pub fn is_zero(&self) -> bool {
        self.log_scale == f64::NEG_INFINITY
    }

    /// `log ‖M‖₂`.
    #[inline]
    pub fn log_norm(&self) -> f64 {
        if self.is_zero() {
            return f64::NEG_INFINITY;
        }
        self.log_scale + 0.5 * sigma_max_sq(self.unit.frobenius_sq(), self.unit.det()).ln()
    }

    /// Multiply the represented matrix by `exp(delta)`.
    pub fn scale_log(&self, delta: f64) -> Self {
        Self {
            unit: self.unit,
            log_scale: self.log_scale + delta,
        }
    }

    /// Negate the represented matrix.
    pub fn negate(&self) -> Self {
        Self {
            unit: self.unit.scale(-1.0),
            log_scale: self.log_scale,
        }
    }

    /// The plain matrix; entries overflow to infinity for huge scales.
    pub fn to_mat(&self) -> Mat2 {
        if self.is_zero() {
            return Mat2::ZERO;
        }
        self.unit.scale(self.log_scale.exp())
    }

    pub fn entry(&self, i: usize) -> SignedLog {
        SignedLog::from_f64(self.unit.0[i]).scale_log(self.log_scale)
    }

    /// `max_ij |Mᵢⱼ − Nᵢⱼ| / max(‖M‖_F, ‖N‖_F)`, evaluated without forming
    /// either matrix.
    pub fn relative_distance(&self, other: &LogScaledMatrix) -> f64 {
        if self.is_zero() && other.is_zero() {
            return 0.0;
        }
        let top = self.log_scale.max(other.log_scale);
        let a = self.unit.scale((self.log_scale - top).exp());
        let b = other.unit.scale((other.log_scale - top).exp());
        a.max_abs_diff(&b)
    }
}

impl Mul for LogScaledMatrix {
    type Output = LogScaledMatrix;

    fn mul(self, rhs: LogScaledMatrix) -> LogScaledMatrix {
        if self.is_zero() || rhs.is_zero() {
            return LogScaledMatrix::from_mat(Mat2::ZERO);
        }
        Self::renormalize(self.unit * rhs.unit, self.log_scale + rhs.log_scale)
    }
}

/// A real number as `sign · exp(log_abs)`, with an explicit zero
/// (`sign = 0`, `log_abs = -∞`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignedLog {
    pub sign: i8,
    pub log_abs: f64,
}

impl SignedLog {
    pub const ZERO: SignedLog = SignedLog {
        sign: 0,
        log_abs: f64::NEG_INFINITY,
    };
    pub const ONE: SignedLog = SignedLog {
        sign: 1,
        log_abs: 0.0,
    };

    pub fn from_f64(v: f64) -> Self {
        if v == 0.0 {
            Self::ZERO
        } else {
            Self {
                sign: if v > 0.0 { 1 } else { -1 },
                log_abs: v.abs().ln(),
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.sign == 0
    }

    pub fn to_f64(&self) -> f64 {
        if self.sign == 0 {
            0.0
        } else {
            self.sign as f64 * self.log_abs.exp()
        }
    }

    pub fn scale_log(&self, delta: f64) -> Self {
        if self.sign == 0 {
            *self
        } else {
            Self {
                sign: self.sign,
                log_abs: self.log_abs + delta,
            }
        }
    }

    pub fn mul(&self, other: &SignedLog) -> Self {
        if self.sign == 0 || other.sign == 0 {
            Self::ZERO
        } else {
            Self {
                sign: self.sign * other.sign,
                log_abs: self.log_abs + other.log_abs,
            }
        }
    }

    pub fn div(&self, other: &SignedLog) -> Self {
        assert!(other.sign != 0, "division by a signed-log zero");
        if self.sign == 0 {
            Self::ZERO
        } else {
            Self {
                sign: self.sign * other.sign,
                log_abs: self.log_abs - other.log_abs,
            }
        }
    }

    pub fn neg(&self) -> Self {
        Self {
            sign: -self.sign,
            log_abs: self.log_abs,
        }
    }
}

/// Deterministic pairwise summation; the result depends only on the order of
/// `values`, never on how the caller produced them.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn op_norm_matches_known_values() {
        assert!((Mat2::diag(3.0, -0.5).op_norm() - 3.0).abs() < 1e-15);
        assert!((Mat2::rotation(0.7).op_norm() - 1.0).abs() < 1e-15);
        // [[1,1],[0,1]] has σ_max = golden ratio
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((Mat2::new(1.0, 1.0, 0.0, 1.0).op_norm() - phi).abs() < 1e-15);
        assert_eq!(Mat2::ZERO.op_norm(), 0.0);
    }

    #[test]
    fn identity_has_zero_log_norm() {
        let id = LogScaledMatrix::identity();
        assert!(id.log_norm().abs() < 1e-15);
        assert!((id.unit.frobenius() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn long_products_stay_normalized_and_finite() {
        let a = Mat2::new(1e3, -1.0, 1.0, 0.0);
        let mut p = LogScaledMatrix::identity();
        for _ in 0..1_000_000 {
            p.left_mul(&a);
        }
        assert!((p.unit.frobenius() - 1.0).abs() < 1e-9);
        let rate = p.log_norm() / 1e6;
        let top_eig = ((1e3 + (1e6f64 - 4.0).sqrt()) / 2.0).ln();
        assert!((rate - top_eig).abs() < 1e-5);
    }

    #[test]
    fn product_agrees_with_dense_multiplication() {
        let a = Mat2::new(0.3, -1.2, 2.0, 0.7);
        let b = Mat2::new(-0.4, 0.9, 1.1, 3.0);
        let lhs = (LogScaledMatrix::from_mat(a) * LogScaledMatrix::from_mat(b)).to_mat();
        assert!(lhs.max_abs_diff(&(a * b)) < 1e-14);
        let mut c = LogScaledMatrix::from_mat(b);
        c.left_mul(&a);
        assert!(c.to_mat().max_abs_diff(&(a * b)) < 1e-14);
    }

    #[test]
    fn singular_products_collapse_to_zero() {
        let a = Mat2::new(1.0, 0.0, 0.0, 0.0);
        let b = Mat2::new(0.0, 0.0, 0.0, 1.0);
        let p = LogScaledMatrix::from_mat(a) * LogScaledMatrix::from_mat(b);
        assert!(p.is_zero());
        assert_eq!(p.log_norm(), f64::NEG_INFINITY);
    }

    #[test]
    fn signed_log_entries_round_trip() {
        let m = Mat2::new(-2.0, 0.0, 1e-3, 5.0);
        let entries = [0, 1, 2, 3].map(|i| SignedLog::from_f64(m.0[i]));
        let back = LogScaledMatrix::from_signed_logs(entries).to_mat();
        assert!(back.max_abs_diff(&m) < 1e-14);
        assert_eq!(SignedLog::from_f64(0.0), SignedLog::ZERO);
        assert!((SignedLog::from_f64(-3.0).to_f64() + 3.0).abs() < 1e-15);
    }

    #[test]
    fn pairwise_sum_is_accurate() {
        let v: Vec<f64> = (0..100_000).map(|i| 0.1 + (i % 7) as f64 * 1e-3).collect();
        let exact: f64 = v.iter().map(|&x| x as f64).sum::<f64>();
        assert!((pairwise_sum(&v) - exact).abs() < 1e-8);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }
}
