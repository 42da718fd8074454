//! Skew-shift dynamics on the two-torus and Diophantine classification of
//! frequencies.
//!
//! Coordinates are always kept in `[0, 1)`. Long jumps along an orbit use the
//! closed form of the iterate, evaluated with exact integer arithmetic on the
//! binary expansion of the coordinates, so that `k(k-1)ω/2` never loses its
//! fractional part to cancellation.

use num_bigint::BigUint;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reduce `x` modulo one into `[0, 1)`.
#[inline]
pub fn mod1(x: f64) -> f64 {
    let r = x - x.floor();
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Distance from `x` to the nearest integer, `‖x‖`.
#[inline]
pub fn dist_to_int(x: f64) -> f64 {
    let f = mod1(x);
    f.min(1.0 - f)
}

/// `2^-e` for `e >= 0`, including the subnormal range.
fn exp2_neg(e: u32) -> f64 {
    if e <= 1022 {
        f64::from_bits(((1023 - e) as u64) << 52)
    } else {
        exp2_neg(1022) * exp2_neg(e - 1022)
    }
}

/// Split a finite nonnegative double into `(m, e)` with `d = m * 2^-e` and
/// `m` odd (or zero). Returns `None` when `d` is an integer.
fn dyadic(d: f64) -> Option<(u64, u32)> {
    debug_assert!(d.is_finite() && d >= 0.0);
    let bits = d.to_bits();
    let exp_bits = ((bits >> 52) & 0x7ff) as i64;
    let frac_bits = bits & ((1u64 << 52) - 1);
    let (mut m, mut e) = if exp_bits == 0 {
        (frac_bits, 1074i64)
    } else {
        (frac_bits | (1u64 << 52), 1075 - exp_bits)
    };
    if m == 0 {
        return None;
    }
    let tz = (m.trailing_zeros() as i64).min(e.max(0));
    m >>= tz;
    e -= tz;
    if e <= 0 {
        None
    } else {
        Some((m, e as u32))
    }
}

/// Fractional part of `t * m * 2^-e`, exact up to the final rounding.
fn frac_dyadic(t: u128, m: u64, e: u32) -> f64 {
    if e <= 128 {
        let mask = if e == 128 { u128::MAX } else { (1u128 << e) - 1 };
        let r = t.wrapping_mul(m as u128) & mask;
        return mod1(r as f64 * exp2_neg(e));
    }
    // e > 128: the low 64 bits of t contribute less than one.
    let lo = (t as u64) as u128;
    let hi = t >> 64;
    let low_part = (lo * m as u128) as f64 * exp2_neg(e);
    let high_part = if hi == 0 {
        0.0
    } else if e - 64 <= 128 {
        frac_dyadic(hi, m, e - 64)
    } else {
        (hi * m as u128) as f64 * exp2_neg(e - 64)
    };
    mod1(low_part + high_part)
}

/// `frac(t * d)` for a nonnegative double `d`, treating `d` as the exact
/// binary fraction it represents.
pub fn frac_mul(t: u128, d: f64) -> f64 {
    if t == 0 || d == 0.0 {
        return 0.0;
    }
    let d = mod1(d);
    match dyadic(d) {
        None => 0.0,
        Some((m, e)) => frac_dyadic(t, m, e),
    }
}

/// A point on `𝕋² = ℝ²/ℤ²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TorusPoint {
    pub x: f64,
    pub y: f64,
}

impl TorusPoint {
    pub fn new(x: f64, y: f64) -> Self {
        Self {
            x: mod1(x),
            y: mod1(y),
        }
    }

    /// Distance on the torus in the max-norm.
    pub fn torus_distance(&self, other: &TorusPoint) -> f64 {
        dist_to_int(self.x - other.x).max(dist_to_int(self.y - other.y))
    }
}

/// One step of the skew shift, `(x, y) ↦ (x + y, y + ω)`.
#[inline]
pub fn skew_shift(p: TorusPoint, omega: f64) -> TorusPoint {
    TorusPoint::new(p.x + p.y, p.y + omega)
}

/// `T^k(x, y) = (x + k y + k(k-1)ω/2, y + kω)` evaluated in exact arithmetic.
pub fn skew_shift_iterate(p: TorusPoint, k: u64, omega: f64) -> TorusPoint {
    if k == 0 {
        return p;
    }
    let k128 = k as u128;
    let tri = k128 * (k128 - 1) / 2;
    let omega = mod1(omega);
    let x = p.x + frac_mul(k128, p.y) + frac_mul(tri, omega);
    let y = p.y + frac_mul(k128, omega);
    TorusPoint::new(x, y)
}

/// `T^k` for any integer `k`; negative `k` walks the orbit backwards.
pub fn skew_shift_iterate_signed(p: TorusPoint, k: i64, omega: f64) -> TorusPoint {
    if k >= 0 {
        return skew_shift_iterate(p, k as u64, omega);
    }
    let j = k.unsigned_abs() as u128;
    // k(k-1)/2 = j(j+1)/2 for k = -j.
    let tri = j * (j + 1) / 2;
    let omega = mod1(omega);
    let x = p.x - frac_mul(j, p.y) + frac_mul(tri, omega);
    let y = p.y - frac_mul(j, omega);
    TorusPoint::new(x, y)
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    (s, err)
}

/// Double-double coordinate reduced modulo one.
#[derive(Debug, Clone, Copy)]
struct Coord {
    hi: f64,
    lo: f64,
}

impl Coord {
    fn new(v: f64) -> Self {
        Self { hi: mod1(v), lo: 0.0 }
    }

    #[inline]
    fn add(self, other: Coord) -> Coord {
        let (s, e) = two_sum(self.hi, other.hi);
        let t = e + self.lo + other.lo;
        let (mut hi, mut lo) = two_sum(s, t);
        let f = hi.floor();
        hi -= f;
        let (h, l) = two_sum(hi, lo);
        hi = h;
        lo = l;
        if hi < 0.0 {
            let (h, l) = two_sum(hi, 1.0);
            hi = h;
            lo += l;
        } else if hi >= 1.0 {
            let (h, l) = two_sum(hi, -1.0);
            hi = h;
            lo += l;
        }
        Coord { hi, lo }
    }

    #[inline]
    fn value(self) -> f64 {
        mod1(self.hi + self.lo)
    }
}

/// Forward orbit `p, T p, T² p, …` advanced one step at a time with
/// compensated (double-double) mod-1 arithmetic.
#[derive(Debug, Clone)]
pub struct Orbit {
    x: Coord,
    y: Coord,
    omega: Coord,
}

impl Orbit {
    pub fn new(start: TorusPoint, omega: f64) -> Self {
        Self {
            x: Coord::new(start.x),
            y: Coord::new(start.y),
            omega: Coord::new(omega),
        }
    }

    /// Current point without advancing.
    #[inline]
    pub fn point(&self) -> TorusPoint {
        TorusPoint {
            x: self.x.value(),
            y: self.y.value(),
        }
    }

    /// Advance one step of the skew shift.
    #[inline]
    pub fn step(&mut self) {
        self.x = self.x.add(self.y);
        self.y = self.y.add(self.omega);
    }
}

impl Iterator for Orbit {
    type Item = TorusPoint;

    /// Yields the current point, then advances.
    fn next(&mut self) -> Option<TorusPoint> {
        let p = self.point();
        self.step();
        Some(p)
    }
}

/// A frequency `ω ∈ (0, 1)` together with the Diophantine margin `ε` it is
/// tested against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frequency {
    pub omega: f64,
    pub epsilon: f64,
}

impl Frequency {
    pub fn new(omega: f64, epsilon: f64) -> Result<Self> {
        if !(omega > 0.0 && omega < 1.0) {
            return Err(Error::InvalidInput(format!(
                "frequency must lie in (0, 1), got {omega}"
            )));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "Diophantine margin must be positive, got {epsilon}"
            )));
        }
        Ok(Self { omega, epsilon })
    }

    /// The golden mean `(√5 − 1)/2`.
    pub fn golden(epsilon: f64) -> Self {
        Self {
            omega: GOLDEN_MEAN,
            epsilon,
        }
    }

    /// Partial quotients of `ω`, up to `depth` terms.
    pub fn cf_terms(&self, depth: usize) -> Vec<u64> {
        continued_fraction(self.omega, depth).unwrap_or_default()
    }
}

pub const GOLDEN_MEAN: f64 = 0.618_033_988_749_894_9;

/// Tolerance below which a convergent is taken to reproduce `ω` exactly.
pub const RATIONAL_TOLERANCE: f64 = 1e-14;

/// First `depth` partial quotients `[a₁, a₂, …]` of `ω = [0; a₁, a₂, …]`.
///
/// The expansion is computed by the Euclidean algorithm on the exact binary
/// fraction `ω = m / 2^e`. It stops early once a convergent matches `ω` to
/// within [`RATIONAL_TOLERANCE`].
pub fn continued_fraction(omega: f64, depth: usize) -> Result<Vec<u64>> {
    if !(omega > 0.0 && omega < 1.0) {
        return Err(Error::InvalidInput(format!(
            "continued fraction needs ω in (0, 1), got {omega}"
        )));
    }
    let (m, e) = dyadic(omega).expect("ω in (0,1) is not an integer");
    let mut num = BigUint::from(1u8) << e;
    let mut den = BigUint::from(m);
    let mut terms = Vec::with_capacity(depth);
    let (mut p_prev, mut p) = (1u128, 0u128);
    let (mut q_prev, mut q) = (0u128, 1u128);
    while terms.len() < depth && !den.is_zero() {
        let mut quot = &num / &den;
        let mut rem = &num - &quot * &den;
        // A remainder within rounding of the divisor means the exact binary
        // fraction is a perturbed rational; finish with the merged term.
        let gap = &den - &rem;
        if !rem.is_zero() && gap.to_f64().unwrap_or(f64::MAX) < 1e-12 * den.to_f64().unwrap_or(f64::MAX) {
            quot += 1u8;
            rem = BigUint::zero();
        }
        let Some(a) = quot.to_u64() else { break };
        let (Some(p_next), Some(q_next)) = (
            (a as u128).checked_mul(p).and_then(|v| v.checked_add(p_prev)),
            (a as u128).checked_mul(q).and_then(|v| v.checked_add(q_prev)),
        ) else {
            break;
        };
        terms.push(a);
        (p_prev, p) = (p, p_next);
        (q_prev, q) = (q, q_next);
        num = den;
        den = rem;
        if (p as f64 / q as f64 - omega).abs() < RATIONAL_TOLERANCE {
            break;
        }
    }
    Ok(terms)
}

/// Convergents `p_k / q_k` of a continued fraction `[0; a₁, a₂, …]`.
pub fn convergents(terms: &[u64]) -> Vec<(u128, u128)> {
    let (mut p_prev, mut p) = (1u128, 0u128);
    let (mut q_prev, mut q) = (0u128, 1u128);
    let mut out = Vec::with_capacity(terms.len());
    for &a in terms {
        let a = a as u128;
        (p_prev, p) = (p, a * p + p_prev);
        (q_prev, q) = (q, a * q + q_prev);
        out.push((p, q));
    }
    out
}

/// Outcome of scanning `‖nω‖ > ε / (n (log n)²)` over `2 ≤ n ≤ n_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiophantineReport {
    pub passes: bool,
    /// The `n` minimising `‖nω‖ · n (log n)²`.
    pub worst_n: u64,
    /// `min_n ‖nω‖ · n (log n)²`; the scan passes iff this exceeds `ε`.
    pub worst_margin: f64,
    pub n_max: u64,
}

/// Scan the Diophantine condition over `n = 2..=n_max`. The `n = 1` bound has
/// `log 1 = 0` in its denominator and is skipped.
pub fn diophantine_check(freq: &Frequency, n_max: u64) -> Result<DiophantineReport> {
    if n_max < 2 {
        return Err(Error::InvalidInput(format!(
            "Diophantine scan needs n_max >= 2, got {n_max}"
        )));
    }
    let mut worst_n = 2;
    let mut worst_margin = f64::INFINITY;
    for n in 2..=n_max {
        let dist = dist_to_int(frac_mul(n as u128, freq.omega));
        let ln = (n as f64).ln();
        let margin = dist * n as f64 * ln * ln;
        if margin < worst_margin {
            worst_margin = margin;
            worst_n = n;
        }
    }
    Ok(DiophantineReport {
        passes: worst_margin > freq.epsilon,
        worst_n,
        worst_margin,
        n_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: TorusPoint, b: TorusPoint, tol: f64) -> bool {
        a.torus_distance(&b) < tol
    }

    #[test]
    fn single_step_examples() {
        let p = skew_shift(TorusPoint::new(0.0, 0.0), 0.25);
        assert_eq!((p.x, p.y), (0.0, 0.25));
        let p = skew_shift(TorusPoint::new(0.9, 0.9), 0.25);
        assert!((p.x - 0.8).abs() < 1e-15 && (p.y - 0.15).abs() < 1e-15);
        let p = skew_shift(TorusPoint::new(0.5, 0.0), 0.0);
        assert_eq!((p.x, p.y), (0.5, 0.0));
    }

    #[test]
    fn iterate_examples() {
        let p = skew_shift_iterate(TorusPoint::new(0.1, 0.2), 2, 0.5);
        assert!(close(p, TorusPoint::new(0.0, 0.2), 1e-15), "{p:?}");
        let q = TorusPoint::new(0.37, 0.81);
        assert_eq!(skew_shift_iterate(q, 0, GOLDEN_MEAN), q);
    }

    #[test]
    fn million_steps_match_compensated_orbit() {
        let start = TorusPoint::new(0.3, 0.7);
        let mut orbit = Orbit::new(start, GOLDEN_MEAN);
        for _ in 0..1_000_000 {
            orbit.step();
        }
        let jump = skew_shift_iterate(start, 1_000_000, GOLDEN_MEAN);
        assert!(close(jump, orbit.point(), 1e-12), "{jump:?} vs {:?}", orbit.point());
    }

    #[test]
    fn mod1_stays_in_unit_interval() {
        assert_eq!(mod1(-1e-20), 0.0);
        assert_eq!(mod1(3.0), 0.0);
        assert!((mod1(-0.25) - 0.75).abs() < 1e-16);
    }

    #[test]
    fn frac_mul_handles_tiny_and_huge_factors() {
        // 2^-100 * 2^100 = 1 ≡ 0; 2^-100 * (2^100 + 2^99) ≡ 0.5
        let d = exp2_neg(100);
        assert_eq!(frac_mul(1u128 << 100, d), 0.0);
        assert_eq!(frac_mul((1u128 << 100) + (1u128 << 99), d), 0.5);
        let d = exp2_neg(200) * 3.0;
        let t = u128::MAX;
        let expected = (t as f64) * d;
        assert!((frac_mul(t, d) - expected).abs() < 1e-30);
        assert_eq!(frac_mul(12345, 0.5), 0.5);
        assert_eq!(frac_mul(7, 0.0), 0.0);
    }

    #[test]
    fn negative_iterates_invert_forward_ones() {
        let p = TorusPoint::new(0.123, 0.456);
        for k in [1i64, 2, 17, 1000, 123_456] {
            let fwd = skew_shift_iterate_signed(p, k, GOLDEN_MEAN);
            let back = skew_shift_iterate_signed(fwd, -k, GOLDEN_MEAN);
            assert!(close(back, p, 1e-12), "k={k}: {back:?}");
        }
        let minus_one = skew_shift_iterate_signed(p, -1, GOLDEN_MEAN);
        assert!(close(skew_shift(minus_one, GOLDEN_MEAN), p, 1e-15));
    }

    #[test]
    fn continued_fraction_examples() {
        assert_eq!(continued_fraction(GOLDEN_MEAN, 5).unwrap(), vec![1, 1, 1, 1, 1]);
        assert_eq!(continued_fraction(0.5, 5).unwrap(), vec![2]);
        assert_eq!(
            continued_fraction(std::f64::consts::SQRT_2 - 1.0, 4).unwrap(),
            vec![2, 2, 2, 2]
        );
        assert_eq!(continued_fraction(0.1, 8).unwrap(), vec![10]);
        assert!(continued_fraction(1.5, 3).is_err());
    }

    #[test]
    fn golden_mean_expansion_terminates_at_tolerance() {
        let terms = continued_fraction(GOLDEN_MEAN, 200).unwrap();
        assert!(terms.len() < 60);
        assert!(terms.iter().all(|&a| a == 1));
    }

    #[test]
    fn diophantine_examples() {
        let r = diophantine_check(&Frequency::new(0.5, 1e-6).unwrap(), 100).unwrap();
        assert!(!r.passes);
        assert_eq!(r.worst_n, 2);
        assert_eq!(r.worst_margin, 0.0);

        let r = diophantine_check(&Frequency::golden(0.05), 10_000).unwrap();
        assert!(r.passes, "{r:?}");

        let r = diophantine_check(&Frequency::new(3.0 / 7.0, 1e-3).unwrap(), 50).unwrap();
        assert!(!r.passes);
        assert!(r.worst_n <= 7);

        assert!(diophantine_check(&Frequency::golden(0.05), 1).is_err());
    }

    #[test]
    fn orbit_fills_the_torus() {
        let k = 1_000_000usize;
        let mut hist = [0usize; 256];
        for p in Orbit::new(TorusPoint::new(0.3, 0.7), GOLDEN_MEAN).take(k) {
            let i = ((p.x * 16.0) as usize).min(15);
            let j = ((p.y * 16.0) as usize).min(15);
            hist[16 * i + j] += 1;
        }
        let expected = k as f64 / 256.0;
        for (cell, &count) in hist.iter().enumerate() {
            let rel = (count as f64 - expected).abs() / expected;
            assert!(rel < 0.1, "cell {cell}: {count} vs {expected}");
        }
    }

    proptest! {
        #[test]
        fn closed_form_is_a_semigroup(
            x in 0.0..1.0f64, y in 0.0..1.0f64,
            j in 0u64..10_000, k in 0u64..10_000,
        ) {
            let p = TorusPoint::new(x, y);
            let lhs = skew_shift_iterate(p, j + k, GOLDEN_MEAN);
            let rhs = skew_shift_iterate(skew_shift_iterate(p, j, GOLDEN_MEAN), k, GOLDEN_MEAN);
            prop_assert!(close(lhs, rhs, 1e-9));
        }

        #[test]
        fn closed_form_matches_stepping(x in 0.0..1.0f64, y in 0.0..1.0f64, k in 0usize..10_000) {
            let p = TorusPoint::new(x, y);
            let mut q = p;
            for _ in 0..k {
                q = skew_shift(q, GOLDEN_MEAN);
            }
            prop_assert!(close(skew_shift_iterate(p, k as u64, GOLDEN_MEAN), q, 1e-9));
        }

        #[test]
        fn convergents_approximate(omega in 0.001..0.999f64, depth in 1usize..12) {
            let terms = continued_fraction(omega, depth).unwrap();
            let (p, q) = *convergents(&terms).last().unwrap();
            let err = (omega - p as f64 / q as f64).abs();
            prop_assert!(err < 1.0 / (q as f64 * q as f64));
        }
    }
}
