//! The worked physical systems with their closed-form solutions and
//! independent residual oracles.
//!
//! Three Hamiltonians are built in: the one-dimensional
//! Winternitz-Smorodinsky oscillator `H = (p^2 + k/q^2)/2 + w(t)^2 q^2 / 2`
//! (cosymplectic, singular at `q = 0`), a trigonometric time-dependent
//! system `H = p^2/2 + q^2/2 + alpha sin(w t) q^2 p^2 / 2` (cosymplectic),
//! and the damped oscillator `H = p^2/2m + V(q) + alpha S` (contact).
//!
//! The Milne-Pinney solution `q'' = k/q^3 - w(t)^2 q` is implemented in
//! three coefficient conventions; acceptance rests on a finite-difference
//! residual oracle rather than on any formula's authority, because the
//! published radicand `4 C1 C2 - k W^2 y1 y2` is dimensionally anomalous
//! (the cross term is not squared) and has to be tested, not trusted.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::expr::{self, CoordId, CoordLayout, Expr, Func, ParseError, SymbolContext};
use crate::numerics::{DualScalar, SingularityError};
use crate::phase::HamiltonianFunction;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("negative radicand in `{term}`: {value}")]
    NegativeRadicand { term: String, value: f64 },
    #[error("degenerate branch: c1^2 - 2 c2 = 0")]
    DegenerateBranch,
    #[error("domain error: {0}")]
    Domain(String),
    #[error("wronskian vanishes at t = {t}: W = {w:e}")]
    DegenerateWronskian { t: f64, w: f64 },
    #[error("classical coefficients must satisfy A C - B^2 = k/W^2 (got {got}, want {want})")]
    CoefficientConstraint { got: f64, want: f64 },
    #[error(transparent)]
    Singular(#[from] SingularityError),
}

fn q1() -> Expr {
    Expr::coord(CoordId::Q(0))
}

fn p1() -> Expr {
    Expr::coord(CoordId::P(0))
}

fn s_coord() -> Expr {
    Expr::coord(CoordId::S)
}

/// `H = (p^2 + k/q^2)/2 + w(t)^2 q^2 / 2` for the one-dimensional
/// Winternitz-Smorodinsky oscillator; `omega` is an expression in `t`.
/// With `k = 0` this degenerates to the isotropic harmonic oscillator.
pub fn ws_hamiltonian(k: f64, omega: &str) -> Result<HamiltonianFunction, ModelError> {
    let params: BTreeMap<String, f64> = [("k".to_string(), k)].into_iter().collect();
    let omega_expr = expr::parse(omega, SymbolContext::Time, &params)?;
    let kinetic = Expr::mul(
        Expr::num(0.5),
        Expr::add(
            Expr::powi_of(p1(), 2),
            Expr::div(Expr::param("k"), Expr::powi_of(q1(), 2)),
        ),
    );
    let potential = Expr::mul(
        Expr::num(0.5),
        Expr::mul(Expr::powi_of(omega_expr, 2), Expr::powi_of(q1(), 2)),
    );
    HamiltonianFunction::new(1, Expr::add(kinetic, potential), params)
        .map_err(|e| ModelError::Invalid(e.to_string()))
}

/// `H = p^2/2 + q^2/2 + alpha sin(w t) q^2 p^2 / 2`.
pub fn trig_hamiltonian(alpha: f64, w: f64) -> HamiltonianFunction {
    let params: BTreeMap<String, f64> = [("alpha".to_string(), alpha), ("w".to_string(), w)]
        .into_iter()
        .collect();
    let body = Expr::add(
        Expr::add(
            Expr::div(Expr::powi_of(p1(), 2), Expr::num(2.0)),
            Expr::div(Expr::powi_of(q1(), 2), Expr::num(2.0)),
        ),
        Expr::mul(
            Expr::mul(
                Expr::param("alpha"),
                Expr::call(Func::Sin, Expr::mul(Expr::param("w"), s_coord())),
            ),
            Expr::div(
                Expr::mul(Expr::powi_of(q1(), 2), Expr::powi_of(p1(), 2)),
                Expr::num(2.0),
            ),
        ),
    );
    HamiltonianFunction::new(1, body, params).expect("trig hamiltonian is well-formed")
}

/// `H = p^2/(2m) + V(q) + alpha S` for the damped oscillator; `v_expr` is
/// an expression in `q1`. Requires `m > 0`.
pub fn damped_hamiltonian(m: f64, alpha: f64, v_expr: &str) -> Result<HamiltonianFunction, ModelError> {
    if !(m.is_finite() && m > 0.0) {
        return Err(ModelError::Domain(format!("mass must be positive, got {m}")));
    }
    let params: BTreeMap<String, f64> = [("m".to_string(), m), ("alpha".to_string(), alpha)]
        .into_iter()
        .collect();
    let potential = expr::parse(v_expr, SymbolContext::Section { n: 1 }, &params)?;
    let body = Expr::add(
        Expr::add(
            Expr::div(
                Expr::powi_of(p1(), 2),
                Expr::mul(Expr::num(2.0), Expr::param("m")),
            ),
            potential,
        ),
        Expr::mul(Expr::param("alpha"), s_coord()),
    );
    HamiltonianFunction::new(1, body, params).map_err(|e| ModelError::Invalid(e.to_string()))
}

// ---------------------------------------------------------------------------
// Milne-Pinney solutions
// ---------------------------------------------------------------------------

/// Coefficient convention for the Milne-Pinney solution built from two
/// oscillator solutions `y1, y2` with Wronskian `W`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PinneyCoefficients {
    /// `q = sqrt(A y1^2 + 2 B y1 y2 + C y2^2)`, valid when
    /// `A C - B^2 = k / W^2`.
    Classical { a: f64, b: f64, c: f64 },
    /// The published display taken verbatim:
    /// `q = (sqrt(2)/|W|) sqrt(C1 y1^2 + C2 y2^2 +- sqrt(4 C1 C2 - k W^2 y1 y2))`.
    Paper { c1: f64, c2: f64, plus_branch: bool },
    /// Amended reading with the cross term outside the inner root:
    /// `q = (sqrt(2)/|W|) sqrt(C1 y1^2 + C2 y2^2 +- sqrt(4 C1 C2 - k W^2) y1 y2)`.
    PaperAmended { c1: f64, c2: f64, plus_branch: bool },
}

/// A Milne-Pinney problem `q'' = k/q^3 - w(t)^2 q` together with an
/// oscillator basis and solution coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct PinneySpec {
    pub k: f64,
    omega: Expr,
    y1: Expr,
    y2: Expr,
    pub coefficients: PinneyCoefficients,
    params: BTreeMap<String, f64>,
}

/// Finite-difference step for the residual oracle's second derivative.
pub const PINNEY_FD_STEP: f64 = 1e-3;

impl PinneySpec {
    /// Basis and frequency given as expressions in `t`. Classical
    /// coefficients are validated against `A C - B^2 = k / W(0)^2`.
    pub fn new(
        k: f64,
        omega: &str,
        y1: &str,
        y2: &str,
        coefficients: PinneyCoefficients,
    ) -> Result<Self, ModelError> {
        let params = BTreeMap::new();
        let spec = Self {
            k,
            omega: expr::parse(omega, SymbolContext::Time, &params)?,
            y1: expr::parse(y1, SymbolContext::Time, &params)?,
            y2: expr::parse(y2, SymbolContext::Time, &params)?,
            coefficients,
            params,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Constant frequency `w0` with the canonical basis
    /// `y1 = cos(w0 t), y2 = sin(w0 t)` (so `W = w0`).
    pub fn harmonic(k: f64, w0: f64, coefficients: PinneyCoefficients) -> Result<Self, ModelError> {
        let spec = Self {
            k,
            omega: Expr::num(w0),
            y1: Expr::call(Func::Cos, Expr::mul(Expr::num(w0), s_coord())),
            y2: Expr::call(Func::Sin, Expr::mul(Expr::num(w0), s_coord())),
            coefficients,
            params: BTreeMap::new(),
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<(), ModelError> {
        let w = self.wronskian(0.0)?;
        if let PinneyCoefficients::Classical { a, b, c } = self.coefficients {
            let got = a * c - b * b;
            let want = self.k / (w * w);
            if (got - want).abs() > 1e-6 * want.abs().max(1.0) {
                return Err(ModelError::CoefficientConstraint { got, want });
            }
        }
        Ok(())
    }

    /// Scale `(a, b, c)` so that `A C - B^2 = k / w^2`; requires
    /// `a c - b^2 > 0` and `k > 0`.
    pub fn rescale_classical(
        a: f64,
        b: f64,
        c: f64,
        k: f64,
        w: f64,
    ) -> Result<(f64, f64, f64), ModelError> {
        let det = a * c - b * b;
        if det <= 0.0 || k <= 0.0 {
            return Err(ModelError::Domain(format!(
                "rescale needs a c - b^2 > 0 and k > 0, got {det} and {k}"
            )));
        }
        let lambda = (k / (w * w) / det).sqrt();
        Ok((a * lambda, b * lambda, c * lambda))
    }

    fn eval_time(&self, e: &Expr, t: DualScalar) -> Result<DualScalar, ModelError> {
        Ok(expr::eval_dual(e, CoordLayout::Time, &[t], &self.params)?)
    }

    pub fn omega_at(&self, t: f64) -> Result<f64, ModelError> {
        Ok(self.eval_time(&self.omega, DualScalar::constant(t))?.value)
    }

    /// `W = y1 y2' - y2 y1'`, evaluated at `t` through dual seeding.
    pub fn wronskian(&self, t: f64) -> Result<f64, ModelError> {
        let td = DualScalar::seeded(t);
        let y1 = self.eval_time(&self.y1, td)?;
        let y2 = self.eval_time(&self.y2, td)?;
        let w = y1.value * y2.derivative - y2.value * y1.derivative;
        if w.abs() < 1e-12 {
            return Err(ModelError::DegenerateWronskian { t, w });
        }
        Ok(w)
    }

    /// `q(t)` and `dq/dt`. The Wronskian is held constant under the
    /// derivative, which is exact whenever `y1, y2` really solve the
    /// oscillator equation.
    pub fn solution_with_derivative(&self, t: f64) -> Result<(f64, f64), ModelError> {
        let td = DualScalar::seeded(t);
        let y1 = self.eval_time(&self.y1, td)?;
        let y2 = self.eval_time(&self.y2, td)?;
        let w = y1.value * y2.derivative - y2.value * y1.derivative;
        if w.abs() < 1e-12 {
            return Err(ModelError::DegenerateWronskian { t, w });
        }
        let q = match self.coefficients {
            PinneyCoefficients::Classical { a, b, c } => {
                let rad = y1 * y1 * a + y1 * y2 * (2.0 * b) + y2 * y2 * c;
                if rad.value < 0.0 {
                    return Err(ModelError::NegativeRadicand {
                        term: "A*y1^2 + 2*B*y1*y2 + C*y2^2".to_string(),
                        value: rad.value,
                    });
                }
                rad.sqrt()
            }
            PinneyCoefficients::Paper {
                c1,
                c2,
                plus_branch,
            } => {
                let inner = DualScalar::constant(4.0 * c1 * c2) - y1 * y2 * (self.k * w * w);
                if inner.value < 0.0 {
                    return Err(ModelError::NegativeRadicand {
                        term: "4*C1*C2 - k*W^2*y1*y2".to_string(),
                        value: inner.value,
                    });
                }
                let sign = if plus_branch { 1.0 } else { -1.0 };
                let outer = y1 * y1 * c1 + y2 * y2 * c2 + inner.sqrt() * sign;
                if outer.value < 0.0 {
                    return Err(ModelError::NegativeRadicand {
                        term: "C1*y1^2 + C2*y2^2 +- sqrt(4*C1*C2 - k*W^2*y1*y2)".to_string(),
                        value: outer.value,
                    });
                }
                outer.sqrt() * (2.0f64.sqrt() / w.abs())
            }
            PinneyCoefficients::PaperAmended {
                c1,
                c2,
                plus_branch,
            } => {
                let cross = 4.0 * c1 * c2 - self.k * w * w;
                if cross < 0.0 {
                    return Err(ModelError::NegativeRadicand {
                        term: "4*C1*C2 - k*W^2".to_string(),
                        value: cross,
                    });
                }
                let sign = if plus_branch { 1.0 } else { -1.0 };
                let outer = y1 * y1 * c1 + y2 * y2 * c2 + y1 * y2 * (sign * cross.sqrt());
                if outer.value < 0.0 {
                    return Err(ModelError::NegativeRadicand {
                        term: "C1*y1^2 + C2*y2^2 +- sqrt(4*C1*C2 - k*W^2)*y1*y2".to_string(),
                        value: outer.value,
                    });
                }
                outer.sqrt() * (2.0f64.sqrt() / w.abs())
            }
        };
        if !(q.value.is_finite() && q.derivative.is_finite()) {
            return Err(ModelError::Singular(SingularityError::new(
                "non-finite pinney evaluation",
            )));
        }
        Ok((q.value, q.derivative))
    }

    pub fn solution(&self, t: f64) -> Result<f64, ModelError> {
        Ok(self.solution_with_derivative(t)?.0)
    }

    /// Residual oracle `|q'' - k/q^3 + w(t)^2 q|`, with `q''` from a
    /// five-point central stencil of step [`PINNEY_FD_STEP`].
    pub fn residual(&self, t: f64) -> Result<f64, ModelError> {
        let h = PINNEY_FD_STEP;
        let fm2 = self.solution(t - 2.0 * h)?;
        let fm1 = self.solution(t - h)?;
        let f0 = self.solution(t)?;
        let fp1 = self.solution(t + h)?;
        let fp2 = self.solution(t + 2.0 * h)?;
        let second = (-fm2 + 16.0 * fm1 - 30.0 * f0 + 16.0 * fp1 - fp2) / (12.0 * h * h);
        let w = self.omega_at(t)?;
        Ok((second - self.k / (f0 * f0 * f0) + w * w * f0).abs())
    }
}

/// Spec-facing wrapper for [`PinneySpec::solution`].
pub fn pinney_solution(spec: &PinneySpec, t: f64) -> Result<f64, ModelError> {
    spec.solution(t)
}

// ---------------------------------------------------------------------------
// Damped-oscillator implicit solution
// ---------------------------------------------------------------------------

fn damped_implicit_dual(c1: f64, c2: f64, gamma: DualScalar) -> Result<DualScalar, ModelError> {
    let disc = c1 * c1 - 2.0 * c2;
    if disc == 0.0 {
        return Err(ModelError::DegenerateBranch);
    }
    let quad = gamma * gamma * 0.5 + gamma * c1 + c2;
    if quad.value <= 0.0 {
        return Err(ModelError::Domain(format!(
            "ln of non-positive value {}",
            quad.value
        )));
    }
    let q = if disc > 0.0 {
        let root = disc.sqrt();
        let num = gamma + (c1 - root);
        let den = gamma + (c1 + root);
        if den.value == 0.0 {
            return Err(ModelError::Domain("division by zero in log argument".into()));
        }
        let ratio = num / den;
        if ratio.value <= 0.0 {
            return Err(ModelError::Domain(format!(
                "ln of non-positive value {}",
                ratio.value
            )));
        }
        ratio.ln() * (c1 / root) - quad.ln()
    } else {
        let root = (-disc).sqrt();
        ((gamma + c1) * (1.0 / root)).atan() * (2.0 / root) - quad.ln()
    };
    if !(q.value.is_finite() && q.derivative.is_finite()) {
        return Err(ModelError::Singular(SingularityError::new(
            "non-finite implicit solution",
        )));
    }
    Ok(q)
}

/// The published implicit solution `q(gamma)` of the damped oscillator for
/// frozen `c1, c2`: the logarithmic branch when `c1^2 > 2 c2`, the
/// arctangent branch when `c2 > c1^2 / 2`; the boundary is an error.
pub fn damped_implicit_solution(c1: f64, c2: f64, gamma: f64) -> Result<f64, ModelError> {
    Ok(damped_implicit_dual(c1, c2, DualScalar::constant(gamma))?.value)
}

/// Verification mode: `|dq/dgamma` of the published display minus the
/// frozen-coefficient equation's `-gamma / (gamma^2/2 + c1 gamma + c2)|`.
/// The derivative of the display comes from dual arithmetic, so the
/// residual isolates the formula itself.
pub fn damped_implicit_ode_residual(c1: f64, c2: f64, gamma: f64) -> Result<f64, ModelError> {
    let q = damped_implicit_dual(c1, c2, DualScalar::seeded(gamma))?;
    let quad = 0.5 * gamma * gamma + c1 * gamma + c2;
    Ok((q.derivative + gamma / quad).abs())
}

// ---------------------------------------------------------------------------
// Trigonometric system's closed-form gamma
// ---------------------------------------------------------------------------

fn trig_gamma_dual(
    alpha: f64,
    w: f64,
    c1: f64,
    c2: f64,
    t: DualScalar,
    plus_branch: bool,
) -> Result<DualScalar, ModelError> {
    let e2 = (t * 2.0).exp();
    let e4 = (t * 4.0).exp();
    let sin_wt = (t * w).sin();
    let rad = sin_wt * e4 * (-alpha) + sin_wt * e2 * (4.0 * alpha * c2)
        - sin_wt * (4.0 * alpha * c2 * c2)
        + e2 * (4.0 * c1);
    if rad.value <= 0.0 {
        return Err(ModelError::NegativeRadicand {
            term: "-alpha*sin(w*t)*e^(4t) + 4*alpha*sin(w*t)*e^(2t)*C2 - 4*alpha*sin(w*t)*C2^2 + 4*e^(2t)*C1"
                .to_string(),
            value: rad.value,
        });
    }
    let sign = if plus_branch { 1.0 } else { -1.0 };
    let gamma = (e2 + 2.0 * c2) / rad.sqrt() * sign;
    if !(gamma.value.is_finite() && gamma.derivative.is_finite()) {
        return Err(ModelError::Singular(SingularityError::new(
            "non-finite closed-form gamma",
        )));
    }
    Ok(gamma)
}

/// The published closed-form `gamma(t)` of the trigonometric system:
/// `gamma = +-(e^{2t} + 2 C2) / sqrt(-alpha sin(wt) e^{4t}
///  + 4 alpha sin(wt) e^{2t} C2 - 4 alpha sin(wt) C2^2 + 4 e^{2t} C1)`.
pub fn trig_closed_form_gamma(
    alpha: f64,
    w: f64,
    c1: f64,
    c2: f64,
    t: f64,
    plus_branch: bool,
) -> Result<f64, ModelError> {
    Ok(trig_gamma_dual(alpha, w, c1, c2, DualScalar::constant(t), plus_branch)?.value)
}

/// Status report for the closed-form gamma against the characteristic
/// system; evaluated, never asserted, because the formula's constants of
/// integration treat `sin(wt)` as frozen and its domain of validity is not
/// derived in the source.
#[derive(Debug, Clone, PartialEq)]
pub struct TrigClosedFormReport {
    pub max_residual: f64,
    pub mean_residual: f64,
    pub samples: usize,
}

/// Treats the closed form as a candidate characteristic: with
/// `p = gamma`, the implied coordinate is
/// `q = gamma' / (1 + alpha sin(wt) gamma^2)`; the report measures
/// `|q' - gamma (1 + alpha sin(wt) q^2)|` over the span.
pub fn trig_closed_form_report(
    alpha: f64,
    w: f64,
    c1: f64,
    c2: f64,
    span: (f64, f64),
    samples: usize,
    plus_branch: bool,
) -> Result<TrigClosedFormReport, ModelError> {
    assert!(samples >= 2);
    let implied_q = |t: f64| -> Result<f64, ModelError> {
        let g = trig_gamma_dual(alpha, w, c1, c2, DualScalar::seeded(t), plus_branch)?;
        let denom = 1.0 + alpha * (w * t).sin() * g.value * g.value;
        if denom == 0.0 {
            return Err(ModelError::Domain("implied q denominator vanished".into()));
        }
        Ok(g.derivative / denom)
    };
    let h = 1e-4;
    let mut max_residual: f64 = 0.0;
    let mut sum = 0.0;
    let step = (span.1 - span.0) / (samples - 1) as f64;
    for i in 0..samples {
        let t = span.0 + step * i as f64;
        let qm2 = implied_q(t - 2.0 * h)?;
        let qm1 = implied_q(t - h)?;
        let qp1 = implied_q(t + h)?;
        let qp2 = implied_q(t + 2.0 * h)?;
        let dq = (qm2 - 8.0 * qm1 + 8.0 * qp1 - qp2) / (12.0 * h);
        let g = trig_closed_form_gamma(alpha, w, c1, c2, t, plus_branch)?;
        let q0 = implied_q(t)?;
        let residual = (dq - g * (1.0 + alpha * (w * t).sin() * q0 * q0)).abs();
        max_residual = max_residual.max(residual);
        sum += residual;
    }
    Ok(TrigClosedFormReport {
        max_residual,
        mean_residual: sum / samples as f64,
        samples,
    })
}
