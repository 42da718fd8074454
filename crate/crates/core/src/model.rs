//! The Jacobi model `(a, v, λ, ω)` and the constants derived from it.
//!
//! The off-diagonal weight `a: 𝕋 → ℝ` and the potential `v: 𝕋² → ℝ` are
//! finite real trigonometric polynomials. Sup-norms are estimated on dense
//! grids and padded by a second-derivative bound, which is a certified upper
//! bound at interior extrema of a smooth periodic function.

use std::f64::consts::{E, TAU};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::torus::{mod1, Frequency, TorusPoint, GOLDEN_MEAN};

/// Grid used for `sup |a|`, `inf |a|`, admission, and `D = ∫ log|a|`.
pub const GRID_1D: usize = 1 << 14;
/// Per-axis grid used for `‖v‖∞`.
pub const GRID_2D: usize = 1024;

/// One Fourier mode `cos·cos(2πkt) + sin·sin(2πkt)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mode1 {
    pub k: i64,
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

/// A real trigonometric polynomial on `𝕋`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TrigPoly1 {
    pub terms: Vec<Mode1>,
}

impl TrigPoly1 {
    pub fn constant(c: f64) -> Self {
        Self {
            terms: vec![Mode1 { k: 0, cos: c, sin: 0.0 }],
        }
    }

    /// `c + amp·cos(2πk t)`.
    pub fn cosine(c: f64, amp: f64, k: i64) -> Self {
        Self {
            terms: vec![
                Mode1 { k: 0, cos: c, sin: 0.0 },
                Mode1 { k, cos: amp, sin: 0.0 },
            ],
        }
    }

    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        let t = mod1(t);
        let mut acc = 0.0;
        for m in &self.terms {
            if m.k == 0 {
                acc += m.cos;
                continue;
            }
            let arg = TAU * mod1(m.k as f64 * t);
            if m.sin == 0.0 {
                acc += m.cos * arg.cos();
            } else {
                let (s, c) = arg.sin_cos();
                acc += m.cos * c + m.sin * s;
            }
        }
        acc
    }

    /// Upper bound on `sup |f''|`.
    pub fn second_derivative_bound(&self) -> f64 {
        self.terms
            .iter()
            .map(|m| (TAU * m.k as f64).powi(2) * (m.cos.abs() + m.sin.abs()))
            .sum()
    }

    pub fn is_constant(&self) -> bool {
        self.terms
            .iter()
            .all(|m| m.k == 0 || (m.cos == 0.0 && m.sin == 0.0))
    }
}

/// One Fourier mode on `𝕋²`:
/// `cc·cos·cos + cs·cos·sin + sc·sin·cos + ss·sin·sin` in `(2πk₁x, 2πk₂y)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Mode2 {
    pub k1: i64,
    pub k2: i64,
    #[serde(default)]
    pub cc: f64,
    #[serde(default)]
    pub cs: f64,
    #[serde(default)]
    pub sc: f64,
    #[serde(default)]
    pub ss: f64,
}

/// A real trigonometric polynomial on `𝕋²`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TrigPoly2 {
    pub terms: Vec<Mode2>,
}

impl TrigPoly2 {
    pub fn zero() -> Self {
        Self { terms: Vec::new() }
    }

    pub fn constant(c: f64) -> Self {
        Self {
            terms: vec![Mode2 {
                cc: c,
                ..Default::default()
            }],
        }
    }

    /// `cos(2πx)`.
    pub fn cos_x() -> Self {
        Self {
            terms: vec![Mode2 {
                k1: 1,
                cc: 1.0,
                ..Default::default()
            }],
        }
    }

    #[inline]
    pub fn eval(&self, p: TorusPoint) -> f64 {
        let mut acc = 0.0;
        for m in &self.terms {
            let need_sx = m.sc != 0.0 || m.ss != 0.0;
            let need_sy = m.cs != 0.0 || m.ss != 0.0;
            let (sx, cx) = trig(m.k1, p.x, need_sx);
            let (sy, cy) = trig(m.k2, p.y, need_sy);
            acc += m.cc * cx * cy + m.cs * cx * sy + m.sc * sx * cy + m.ss * sx * sy;
        }
        acc
    }

    /// Upper bound on the operator norm of the Hessian.
    pub fn hessian_bound(&self) -> f64 {
        self.terms
            .iter()
            .map(|m| {
                let k2 = (m.k1 * m.k1 + m.k2 * m.k2) as f64;
                TAU * TAU * k2 * (m.cc.abs() + m.cs.abs() + m.sc.abs() + m.ss.abs())
            })
            .sum()
    }

    pub fn is_constant(&self) -> bool {
        self.terms.iter().all(|m| {
            (m.k1 == 0 && m.k2 == 0)
                || (m.cc == 0.0 && m.cs == 0.0 && m.sc == 0.0 && m.ss == 0.0)
        })
    }
}

/// `(sin, cos)` of `2πkt`; the sine is only computed when asked for.
#[inline]
fn trig(k: i64, t: f64, need_sin: bool) -> (f64, f64) {
    if k == 0 {
        return (0.0, 1.0);
    }
    let arg = TAU * mod1(k as f64 * t);
    if need_sin {
        arg.sin_cos()
    } else {
        (0.0, arg.cos())
    }
}

/// On-disk model description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub a_coeffs: TrigPoly1,
    pub v_coeffs: TrigPoly2,
    pub lambda: f64,
    pub omega: f64,
    pub epsilon: f64,
}

impl ModelSpec {
    /// `v = cos 2πx`, `a = 1.5 + 0.4 cos 2πy`, golden-mean frequency.
    pub fn default_theorem(lambda: f64) -> Self {
        Self {
            a_coeffs: TrigPoly1::cosine(1.5, 0.4, 1),
            v_coeffs: TrigPoly2::cos_x(),
            lambda,
            omega: GOLDEN_MEAN,
            epsilon: 0.05,
        }
    }

    /// `a ≡ 1`, `v ≡ 0`: the free (constant-coefficient) operator.
    pub fn free() -> Self {
        Self {
            a_coeffs: TrigPoly1::constant(1.0),
            v_coeffs: TrigPoly2::zero(),
            lambda: 0.0,
            omega: GOLDEN_MEAN,
            epsilon: 0.05,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Which admission rules apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdmissionMode {
    General,
    /// Additionally requires a nonconstant potential and `λ > 0`.
    Theorem,
}

/// An admitted model together with its derived constants. Immutable.
#[derive(Debug, Clone)]
pub struct JacobiModel {
    spec: ModelSpec,
    frequency: Frequency,
    mode: AdmissionMode,
    sup_norm_v: f64,
    inf_abs_a: f64,
    sup_abs_a: f64,
    constant_cva: f64,
    log_avg_a: f64,
    energy_bound: f64,
    hash: String,
}

/// Derive the model constants and run the admission checks.
pub fn derive_constants(
    a: TrigPoly1,
    v: TrigPoly2,
    lambda: f64,
    freq: Frequency,
    mode: AdmissionMode,
) -> Result<JacobiModel> {
    JacobiModel::from_spec(
        ModelSpec {
            a_coeffs: a,
            v_coeffs: v,
            lambda,
            omega: freq.omega,
            epsilon: freq.epsilon,
        },
        mode,
    )
}

impl JacobiModel {
    pub fn from_spec(spec: ModelSpec, mode: AdmissionMode) -> Result<Self> {
        let frequency =
            Frequency::new(spec.omega, spec.epsilon).map_err(|e| Error::Admission(e.to_string()))?;
        if !(spec.lambda >= 0.0 && spec.lambda.is_finite()) {
            return Err(Error::Admission(format!(
                "λ must be finite and nonnegative, got {}",
                spec.lambda
            )));
        }
        let all_finite = spec
            .a_coeffs
            .terms
            .iter()
            .all(|m| m.cos.is_finite() && m.sin.is_finite())
            && spec
                .v_coeffs
                .terms
                .iter()
                .all(|m| [m.cc, m.cs, m.sc, m.ss].iter().all(|c| c.is_finite()));
        if !all_finite {
            return Err(Error::Admission("non-finite Fourier coefficient".into()));
        }
        if mode == AdmissionMode::Theorem {
            if spec.v_coeffs.is_constant() {
                return Err(Error::Admission(
                    "theorem mode requires a nonconstant potential".into(),
                ));
            }
            if spec.lambda <= 0.0 {
                return Err(Error::Admission("theorem mode requires λ > 0".into()));
            }
        }

        let h = 1.0 / GRID_1D as f64;
        let mut grid_inf = f64::INFINITY;
        let mut grid_sup: f64 = 0.0;
        let mut log_sum = 0.0;
        for i in 0..GRID_1D {
            let val = spec.a_coeffs.eval(i as f64 * h).abs();
            if !(1.0 - 1e-12..=2.0 + 1e-12).contains(&val) {
                return Err(Error::Admission(format!(
                    "|a({})| = {val} violates 1 ≤ |a| ≤ 2",
                    i as f64 * h
                )));
            }
            grid_inf = grid_inf.min(val);
            grid_sup = grid_sup.max(val);
            log_sum += val.ln();
        }
        let pad_a = spec.a_coeffs.second_derivative_bound() * h * h / 8.0;
        let log_avg_a = log_sum / GRID_1D as f64;

        let h2 = 1.0 / GRID_2D as f64;
        let mut v_sup: f64 = 0.0;
        for i in 0..GRID_2D {
            for j in 0..GRID_2D {
                let p = TorusPoint {
                    x: i as f64 * h2,
                    y: j as f64 * h2,
                };
                v_sup = v_sup.max(spec.v_coeffs.eval(p).abs());
            }
        }
        let sup_norm_v = v_sup + spec.v_coeffs.hessian_bound() * h2 * h2 / 4.0;

        let inf_abs_a = grid_inf - pad_a;
        let sup_abs_a = grid_sup + pad_a;
        let constant_cva = E.max(4.0 * (1.0 + sup_norm_v) * (1.0 + sup_abs_a));
        let energy_bound = spec.lambda * sup_norm_v + 2.0 * sup_abs_a + 1.0;

        let digest = Sha256::digest(serde_json::to_vec(&spec)?);
        let hash = hex::encode(&digest[..8]);

        Ok(Self {
            spec,
            frequency,
            mode,
            sup_norm_v,
            inf_abs_a,
            sup_abs_a,
            constant_cva,
            log_avg_a,
            energy_bound,
            hash,
        })
    }

    pub fn load(path: &Path, mode: AdmissionMode) -> Result<Self> {
        Self::from_spec(ModelSpec::load(path)?, mode)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn frequency(&self) -> Frequency {
        self.frequency
    }

    pub fn omega(&self) -> f64 {
        self.frequency.omega
    }

    pub fn lambda(&self) -> f64 {
        self.spec.lambda
    }

    pub fn mode(&self) -> AdmissionMode {
        self.mode
    }

    /// `‖v‖∞`
    pub fn sup_norm_v(&self) -> f64 {
        self.sup_norm_v
    }

    pub fn inf_abs_a(&self) -> f64 {
        self.inf_abs_a
    }

    pub fn sup_abs_a(&self) -> f64 {
        self.sup_abs_a
    }

    /// `C_{v,a}`
    pub fn constant_cva(&self) -> f64 {
        self.constant_cva
    }

    /// `D = ∫ log|a(y)| dy`
    pub fn log_avg_a(&self) -> f64 {
        self.log_avg_a
    }

    /// `E₀`
    pub fn energy_bound(&self) -> f64 {
        self.energy_bound
    }

    /// Short content hash of the model description.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    #[inline]
    pub fn eval_a(&self, y: f64) -> f64 {
        self.spec.a_coeffs.eval(y)
    }

    #[inline]
    pub fn eval_v(&self, p: TorusPoint) -> f64 {
        self.spec.v_coeffs.eval(p)
    }

    /// `S(λ, E) = log(C_{v,a} + λ + |E|)`.
    pub fn scaling_factor(&self, energy: f64) -> f64 {
        (self.constant_cva + self.spec.lambda + energy.abs()).ln()
    }

    /// Upper bound on `‖A′ₙ‖₂ = ‖[[λv−E, −aₙ], [aₙ₊₁, 0]]‖₂`, namely
    /// `λ‖v‖∞ + max(E₀, |E|) + 2 sup|a|`.
    pub fn transfer_norm_bound(&self, energy: f64) -> f64 {
        self.spec.lambda * self.sup_norm_v + self.energy_bound.max(energy.abs()) + 2.0 * self.sup_abs_a
    }

    /// Trapezoid estimate of `D` on `points` nodes.
    pub fn log_avg_a_with(&self, points: usize) -> f64 {
        let h = 1.0 / points as f64;
        (0..points)
            .map(|i| self.eval_a(i as f64 * h).abs().ln())
            .sum::<f64>()
            / points as f64
    }
}
