//! Scalar derivative engine: forward-mode dual arithmetic with a central
//! finite-difference fallback and cross-check.
//!
//! All partial derivatives of Hamiltonians and sections in this crate come
//! from [`DualScalar`] arithmetic, which is exact to rounding. The
//! finite-difference path exists as an independent check, never as the
//! primary route.

use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::phase::ExtendedPoint;

/// Central-difference step for first derivatives: `cbrt(eps) * max(1, |x|)`.
pub fn fd_step(x: f64) -> f64 {
    f64::EPSILON.cbrt() * x.abs().max(1.0)
}

/// A partial-function evaluation left its domain: division by zero, `ln` of
/// a non-positive argument, `sqrt` of a negative one, or a non-finite
/// intermediate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SingularityError {
    /// What went wrong, e.g. `division by zero`.
    pub reason: String,
    /// Coordinate being varied when the evaluation failed, when known.
    pub coordinate: Option<String>,
}

impl SingularityError {
    pub fn new(reason: impl Into<String>) -> Self {
        Self {
            reason: reason.into(),
            coordinate: None,
        }
    }

    pub fn at_coordinate(mut self, coordinate: impl Into<String>) -> Self {
        if self.coordinate.is_none() {
            self.coordinate = Some(coordinate.into());
        }
        self
    }
}

impl fmt::Display for SingularityError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "singular evaluation: {}", self.reason)?;
        if let Some(c) = &self.coordinate {
            write!(f, " (varying {c})")?;
        }
        Ok(())
    }
}

impl std::error::Error for SingularityError {}

/// A dual number `value + derivative * eps` with `eps^2 = 0`, carrying a
/// single seeded direction through an evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualScalar {
    pub value: f64,
    pub derivative: f64,
}

impl DualScalar {
    pub const fn new(value: f64, derivative: f64) -> Self {
        Self { value, derivative }
    }

    /// Lift a constant: derivative 0.
    pub const fn constant(value: f64) -> Self {
        Self::new(value, 0.0)
    }

    /// Lift the seeded variable: derivative 1.
    pub const fn seeded(value: f64) -> Self {
        Self::new(value, 1.0)
    }

    pub fn sin(self) -> Self {
        Self::new(self.value.sin(), self.derivative * self.value.cos())
    }

    pub fn cos(self) -> Self {
        Self::new(self.value.cos(), -self.derivative * self.value.sin())
    }

    pub fn tan(self) -> Self {
        let t = self.value.tan();
        Self::new(t, self.derivative * (1.0 + t * t))
    }

    pub fn exp(self) -> Self {
        let e = self.value.exp();
        Self::new(e, self.derivative * e)
    }

    /// Natural logarithm. The caller must ensure `value > 0`.
    pub fn ln(self) -> Self {
        Self::new(self.value.ln(), self.derivative / self.value)
    }

    /// Square root. The caller must ensure `value >= 0`; at exactly zero the
    /// derivative is defined only for an unseeded argument.
    pub fn sqrt(self) -> Self {
        if self.value == 0.0 && self.derivative == 0.0 {
            return Self::new(0.0, 0.0);
        }
        let r = self.value.sqrt();
        Self::new(r, self.derivative / (2.0 * r))
    }

    pub fn atan(self) -> Self {
        Self::new(
            self.value.atan(),
            self.derivative / (1.0 + self.value * self.value),
        )
    }

    /// Absolute value with the kink convention `abs'(0) = 0`.
    pub fn abs(self) -> Self {
        let sign = if self.value > 0.0 {
            1.0
        } else if self.value < 0.0 {
            -1.0
        } else {
            0.0
        };
        Self::new(self.value.abs(), self.derivative * sign)
    }

    /// Integer power with the hand rule `(v^k)' = k v^(k-1) v'`.
    pub fn powi(self, k: i32) -> Self {
        if k == 0 {
            return Self::new(1.0, 0.0);
        }
        Self::new(
            self.value.powi(k),
            f64::from(k) * self.value.powi(k - 1) * self.derivative,
        )
    }

    /// Real power with a dual exponent. The caller must ensure `value > 0`.
    pub fn pow(self, rhs: Self) -> Self {
        let v = self.value.powf(rhs.value);
        let d = v * (rhs.derivative * self.value.ln() + rhs.value * self.derivative / self.value);
        Self::new(v, d)
    }
}

impl Add for DualScalar {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.value + rhs.value, self.derivative + rhs.derivative)
    }
}

impl Sub for DualScalar {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.value - rhs.value, self.derivative - rhs.derivative)
    }
}

impl Mul for DualScalar {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        Self::new(
            self.value * rhs.value,
            self.derivative * rhs.value + self.value * rhs.derivative,
        )
    }
}

impl Div for DualScalar {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        Self::new(
            self.value / rhs.value,
            (self.derivative * rhs.value - self.value * rhs.derivative) / (rhs.value * rhs.value),
        )
    }
}

impl Neg for DualScalar {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.value, -self.derivative)
    }
}

impl Mul<f64> for DualScalar {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        Self::new(self.value * rhs, self.derivative * rhs)
    }
}

impl Add<f64> for DualScalar {
    type Output = Self;
    fn add(self, rhs: f64) -> Self {
        Self::new(self.value + rhs, self.derivative)
    }
}

impl Sub<f64> for DualScalar {
    type Output = Self;
    fn sub(self, rhs: f64) -> Self {
        Self::new(self.value - rhs, self.derivative)
    }
}

/// Gradient of a scalar field on extended phase space, split by block.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub s: f64,
}

impl Gradient {
    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn from_flat(n: usize, flat: &[f64]) -> Self {
        debug_assert_eq!(flat.len(), 2 * n + 1);
        Self {
            q: flat[..n].to_vec(),
            p: flat[n..2 * n].to_vec(),
            s: flat[2 * n],
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.q.len() + 1);
        out.extend_from_slice(&self.q);
        out.extend_from_slice(&self.p);
        out.push(self.s);
        out
    }
}

/// Dual and finite-difference gradients side by side, with their worst
/// relative disagreement.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeReport {
    pub gradient: Vec<f64>,
    pub fd_gradient: Vec<f64>,
    /// `max_i |gradient_i - fd_gradient_i| / max(1, |gradient_i|)`
    pub max_discrepancy: f64,
}

/// Label for slot `i` of the flattened layout `[q1..qn, p1..pn, s]`.
pub fn coordinate_label(i: usize, n: usize) -> String {
    if i < n {
        format!("q{}", i + 1)
    } else if i < 2 * n {
        format!("p{}", i - n + 1)
    } else {
        "s".to_string()
    }
}

/// Exact first derivatives of `f` at `x` in all `2n+1` coordinates, via one
/// seeded dual pass per coordinate.
pub fn grad<F>(f: &F, x: &ExtendedPoint) -> Result<Gradient, SingularityError>
where
    F: Fn(&[DualScalar]) -> Result<DualScalar, SingularityError> + ?Sized,
{
    let n = x.dim();
    let flat = x.flat();
    let g = grad_slots(f, &flat, |i| coordinate_label(i, n))?;
    Ok(Gradient::from_flat(n, &g))
}

/// Slot-level gradient over an arbitrary flat coordinate layout.
pub fn grad_slots<F, L>(f: &F, slots: &[f64], label: L) -> Result<Vec<f64>, SingularityError>
where
    F: Fn(&[DualScalar]) -> Result<DualScalar, SingularityError> + ?Sized,
    L: Fn(usize) -> String,
{
    let mut duals: Vec<DualScalar> = slots.iter().map(|&v| DualScalar::constant(v)).collect();
    let mut out = vec![0.0; slots.len()];
    for i in 0..slots.len() {
        duals[i].derivative = 1.0;
        let r = f(&duals).map_err(|e| e.at_coordinate(label(i)))?;
        if !r.derivative.is_finite() {
            return Err(SingularityError::new("non-finite derivative").at_coordinate(label(i)));
        }
        out[i] = r.derivative;
        duals[i].derivative = 0.0;
    }
    Ok(out)
}

/// Plain value of `f` at `x` (all directions unseeded).
pub fn value<F>(f: &F, x: &ExtendedPoint) -> Result<f64, SingularityError>
where
    F: Fn(&[DualScalar]) -> Result<DualScalar, SingularityError> + ?Sized,
{
    value_slots(f, &x.flat())
}

pub fn value_slots<F>(f: &F, slots: &[f64]) -> Result<f64, SingularityError>
where
    F: Fn(&[DualScalar]) -> Result<DualScalar, SingularityError> + ?Sized,
{
    let duals: Vec<DualScalar> = slots.iter().map(|&v| DualScalar::constant(v)).collect();
    Ok(f(&duals)?.value)
}

/// Dual gradient next to a central finite-difference gradient with step
/// `cbrt(eps) * max(1, |x_i|)` per coordinate.
pub fn grad_crosscheck<F>(f: &F, x: &ExtendedPoint) -> Result<DerivativeReport, SingularityError>
where
    F: Fn(&[DualScalar]) -> Result<DualScalar, SingularityError> + ?Sized,
{
    let n = x.dim();
    let gradient = grad(f, x)?.flat();
    let flat = x.flat();
    let mut fd_gradient = vec![0.0; flat.len()];
    for i in 0..flat.len() {
        let h = fd_step(flat[i]);
        let mut plus = flat.clone();
        let mut minus = flat.clone();
        plus[i] += h;
        minus[i] -= h;
        // Use the realized spacing so the step is exact in floating point.
        let denom = plus[i] - minus[i];
        let fp = value_slots(f, &plus).map_err(|e| e.at_coordinate(coordinate_label(i, n)))?;
        let fm = value_slots(f, &minus).map_err(|e| e.at_coordinate(coordinate_label(i, n)))?;
        fd_gradient[i] = (fp - fm) / denom;
    }
    let max_discrepancy = gradient
        .iter()
        .zip(&fd_gradient)
        .map(|(g, d)| (g - d).abs() / g.abs().max(1.0))
        .fold(0.0, f64::max);
    Ok(DerivativeReport {
        gradient,
        fd_gradient,
        max_discrepancy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn point1(q: f64, p: f64, s: f64) -> ExtendedPoint {
        ExtendedPoint::new(vec![q], vec![p], s).unwrap()
    }

    // f = (q^2 + p^2) / 2 as a raw dual closure.
    fn half_sum_squares(c: &[DualScalar]) -> Result<DualScalar, SingularityError> {
        Ok((c[0] * c[0] + c[1] * c[1]) * 0.5)
    }

    #[test]
    fn grad_of_harmonic_energy() {
        let g = grad(&half_sum_squares, &point1(1.0, 0.0, 0.0)).unwrap();
        assert_eq!(g.q, vec![1.0]);
        assert_eq!(g.p, vec![0.0]);
        assert_eq!(g.s, 0.0);
    }

    #[test]
    fn grad_of_inverse_square_oscillator() {
        // f = (p^2 + k/q^2)/2 + w^2 q^2 / 2 with k = w = 1.
        let f = |c: &[DualScalar]| -> Result<DualScalar, SingularityError> {
            let q = c[0];
            let p = c[1];
            if q.value == 0.0 {
                return Err(SingularityError::new("division by zero"));
            }
            Ok((p * p + DualScalar::constant(1.0) / (q * q)) * 0.5 + q * q * 0.5)
        };
        let g = grad(&f, &point1(1.0, 2.0, 0.0)).unwrap();
        // dq: -k/q^3 + w^2 q = 0 at q = 1.
        assert_eq!(g.q, vec![0.0]);
        assert_eq!(g.p, vec![2.0]);
        assert_eq!(g.s, 0.0);
    }

    #[test]
    fn grad_of_linear_s_term() {
        let f = |c: &[DualScalar]| -> Result<DualScalar, SingularityError> { Ok(c[2] * 0.1) };
        let g = grad(&f, &point1(3.0, -1.0, 7.0)).unwrap();
        assert_eq!(g.q, vec![0.0]);
        assert_eq!(g.p, vec![0.0]);
        assert_eq!(g.s, 0.1);
    }

    #[test]
    fn grad_singularity_reports_coordinate() {
        let f = |c: &[DualScalar]| -> Result<DualScalar, SingularityError> {
            if c[0].value == 0.0 {
                return Err(SingularityError::new("division by zero"));
            }
            Ok(DualScalar::constant(1.0) / (c[0] * c[0] * c[0]))
        };
        let err = grad(&f, &point1(0.0, 1.0, 0.0)).unwrap_err();
        assert_eq!(err.coordinate.as_deref(), Some("q1"));
    }

    #[test]
    fn crosscheck_harmonic() {
        let r = grad_crosscheck(&half_sum_squares, &point1(1.0, 0.0, 0.0)).unwrap();
        assert!(r.max_discrepancy < 1e-8, "discrepancy {}", r.max_discrepancy);
    }

    #[test]
    fn crosscheck_sin_s_q_p() {
        // f = sin(s) q p; gradient (p sin s, q sin s, q p cos s) = (0, 0, 1) at (1, 1, 0).
        let f = |c: &[DualScalar]| -> Result<DualScalar, SingularityError> {
            Ok(c[2].sin() * c[0] * c[1])
        };
        let r = grad_crosscheck(&f, &point1(1.0, 1.0, 0.0)).unwrap();
        assert_eq!(r.gradient, vec![0.0, 0.0, 1.0]);
        assert!(r.max_discrepancy < 1e-8, "discrepancy {}", r.max_discrepancy);
    }

    #[test]
    fn crosscheck_constant_is_exact() {
        let f = |_c: &[DualScalar]| -> Result<DualScalar, SingularityError> {
            Ok(DualScalar::constant(5.0))
        };
        let r = grad_crosscheck(&f, &point1(0.3, -0.7, 2.0)).unwrap();
        assert_eq!(r.gradient, vec![0.0, 0.0, 0.0]);
        assert_eq!(r.fd_gradient, vec![0.0, 0.0, 0.0]);
        assert_eq!(r.max_discrepancy, 0.0);
    }

    #[test]
    fn constant_and_seed_lifts() {
        assert_eq!(DualScalar::constant(4.5).derivative, 0.0);
        assert_eq!(DualScalar::seeded(4.5).derivative, 1.0);
    }

    fn finite() -> impl Strategy<Value = f64> {
        -1e3..1e3f64
    }

    proptest! {
        #[test]
        fn product_rule_is_exact(av in finite(), ad in finite(), bv in finite(), bd in finite()) {
            let a = DualScalar::new(av, ad);
            let b = DualScalar::new(bv, bd);
            prop_assert_eq!((a * b).derivative, ad * bv + av * bd);
        }

        #[test]
        fn quotient_rule_is_exact(av in finite(), ad in finite(), bv in finite(), bd in finite()) {
            prop_assume!(bv != 0.0);
            let a = DualScalar::new(av, ad);
            let b = DualScalar::new(bv, bd);
            prop_assert_eq!((a / b).derivative, (ad * bv - av * bd) / (bv * bv));
        }

        #[test]
        fn trig_and_exp_rules_are_exact(v in finite(), d in finite()) {
            let x = DualScalar::new(v, d);
            prop_assert_eq!(x.sin().derivative, d * v.cos());
            prop_assert_eq!(x.cos().derivative, -d * v.sin());
            prop_assert_eq!(x.exp().derivative, d * v.exp());
        }

        #[test]
        fn ln_sqrt_rules_are_exact(v in 1e-6..1e3f64, d in finite()) {
            let x = DualScalar::new(v, d);
            prop_assert_eq!(x.ln().derivative, d / v);
            prop_assert_eq!(x.sqrt().derivative, d / (2.0 * v.sqrt()));
        }

        #[test]
        fn integer_power_rule_is_exact(v in finite(), d in finite(), k in 1i32..6) {
            prop_assume!(v != 0.0);
            let x = DualScalar::new(v, d);
            prop_assert_eq!(x.powi(k).derivative, f64::from(k) * v.powi(k - 1) * d);
        }
    }
}
