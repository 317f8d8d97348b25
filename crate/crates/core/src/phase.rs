//! Core geometric data types: extended phase-space points, tangent values,
//! expression-defined Hamiltonians and sections, and the structure kind.
//!
//! The extended phase space is `T*Q x R` with global coordinates
//! `(q1..qn, p1..pn, s)`. The third coordinate is read as the time `t` in
//! the cosymplectic setting and as the action-like variable `S` in the
//! contact setting; the [`StructureKind`] decides the interpretation.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{self, CoordId, CoordLayout, Expr, ParseError, SymbolContext};
use crate::numerics::{self, DerivativeReport, DualScalar, Gradient, SingularityError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PhaseError {
    #[error("dimension must be at least 1")]
    EmptyDimension,
    #[error("q and p must have equal length (got {q} and {p})")]
    MismatchedDims { q: usize, p: usize },
    #[error("non-finite component {label} = {value}")]
    NonFinite { label: String, value: String },
    #[error("symbol `{0}` is not legal in this expression role")]
    IllegalSymbol(String),
    #[error("parameter `{0}` has no binding")]
    UnboundParameter(String),
    #[error("expected {expected} section components, got {got}")]
    ComponentCount { expected: usize, got: usize },
}

/// Which geometric structure drives the dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StructureKind {
    Symplectic,
    Cosymplectic,
    Contact,
}

impl fmt::Display for StructureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            StructureKind::Symplectic => "symplectic",
            StructureKind::Cosymplectic => "cosymplectic",
            StructureKind::Contact => "contact",
        };
        f.write_str(s)
    }
}

impl FromStr for StructureKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "symplectic" => Ok(StructureKind::Symplectic),
            "cosymplectic" => Ok(StructureKind::Cosymplectic),
            "contact" => Ok(StructureKind::Contact),
            other => Err(format!(
                "unknown structure `{other}` (expected symplectic, cosymplectic, or contact)"
            )),
        }
    }
}

/// A point `(q1..qn, p1..pn, s)` of extended phase space. All components
/// are finite and `q`/`p` have equal dimension `n >= 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedPoint {
    q: Vec<f64>,
    p: Vec<f64>,
    s: f64,
}

impl ExtendedPoint {
    pub fn new(q: Vec<f64>, p: Vec<f64>, s: f64) -> Result<Self, PhaseError> {
        if q.is_empty() {
            return Err(PhaseError::EmptyDimension);
        }
        if q.len() != p.len() {
            return Err(PhaseError::MismatchedDims {
                q: q.len(),
                p: p.len(),
            });
        }
        for (i, v) in q.iter().enumerate() {
            if !v.is_finite() {
                return Err(PhaseError::NonFinite {
                    label: format!("q{}", i + 1),
                    value: v.to_string(),
                });
            }
        }
        for (i, v) in p.iter().enumerate() {
            if !v.is_finite() {
                return Err(PhaseError::NonFinite {
                    label: format!("p{}", i + 1),
                    value: v.to_string(),
                });
            }
        }
        if !s.is_finite() {
            return Err(PhaseError::NonFinite {
                label: "s".to_string(),
                value: s.to_string(),
            });
        }
        Ok(Self { q, p, s })
    }

    /// One-dimensional convenience constructor.
    pub fn dim1(q: f64, p: f64, s: f64) -> Result<Self, PhaseError> {
        Self::new(vec![q], vec![p], s)
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    /// Flat layout `[q1..qn, p1..pn, s]`.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.q.len() + 1);
        out.extend_from_slice(&self.q);
        out.extend_from_slice(&self.p);
        out.push(self.s);
        out
    }

    pub fn from_flat(n: usize, flat: &[f64]) -> Result<Self, PhaseError> {
        debug_assert_eq!(flat.len(), 2 * n + 1);
        Self::new(flat[..n].to_vec(), flat[n..2 * n].to_vec(), flat[2 * n])
    }
}

/// A tangent vector `(dq, dp, ds)` at an extended point; the output of
/// every vector-field builder.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentValue {
    pub dq: Vec<f64>,
    pub dp: Vec<f64>,
    pub ds: f64,
}

impl TangentValue {
    pub fn dim(&self) -> usize {
        self.dq.len()
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.dq.len() + 1);
        out.extend_from_slice(&self.dq);
        out.extend_from_slice(&self.dp);
        out.push(self.ds);
        out
    }

    pub fn max_norm(&self) -> f64 {
        self.flat().iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn validate_body(
    body: &Expr,
    ctx: SymbolContext,
    params: &BTreeMap<String, f64>,
) -> Result<(), PhaseError> {
    let (coords, names) = body.free_symbols();
    for c in coords {
        if !ctx.allows(c) {
            return Err(PhaseError::IllegalSymbol(c.to_string()));
        }
    }
    for name in names {
        if !params.contains_key(&name) {
            return Err(PhaseError::UnboundParameter(name));
        }
    }
    Ok(())
}

/// An evaluatable scalar field `H` on extended phase space with exact first
/// partials in all `2n+1` coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianFunction {
    n: usize,
    body: Expr,
    params: BTreeMap<String, f64>,
}

impl HamiltonianFunction {
    /// Build from an already-assembled expression tree.
    pub fn new(n: usize, body: Expr, params: BTreeMap<String, f64>) -> Result<Self, PhaseError> {
        validate_body(&body, SymbolContext::Hamiltonian { n }, &params)?;
        Ok(Self { n, body, params })
    }

    /// Parse from the expression grammar. Coordinates are `q1..qn`,
    /// `p1..pn`, `s`; every other free symbol must be a key of `params`.
    pub fn parse(
        text: &str,
        n: usize,
        params: BTreeMap<String, f64>,
    ) -> Result<Self, ParseError> {
        let body = expr::parse(text, SymbolContext::Hamiltonian { n }, &params)?;
        Ok(Self { n, body, params })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn body(&self) -> &Expr {
        &self.body
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub fn eval_dual(&self, coords: &[DualScalar]) -> Result<DualScalar, SingularityError> {
        expr::eval_dual(
            &self.body,
            CoordLayout::Extended { n: self.n },
            coords,
            &self.params,
        )
    }

    pub fn value(&self, x: &ExtendedPoint) -> Result<f64, SingularityError> {
        numerics::value(&|c: &[DualScalar]| self.eval_dual(c), x)
    }

    /// All `2n+1` first partials at `x`, by dual arithmetic.
    pub fn gradient(&self, x: &ExtendedPoint) -> Result<Gradient, SingularityError> {
        numerics::grad(&|c: &[DualScalar]| self.eval_dual(c), x)
    }

    /// Dual gradient against central finite differences.
    pub fn gradient_crosscheck(&self, x: &ExtendedPoint) -> Result<DerivativeReport, SingularityError> {
        numerics::grad_crosscheck(&|c: &[DualScalar]| self.eval_dual(c), x)
    }
}

impl fmt::Display for HamiltonianFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.body)
    }
}

/// Spec-facing alias for [`HamiltonianFunction::parse`].
pub fn parse_hamiltonian(
    text: &str,
    n: usize,
    params: BTreeMap<String, f64>,
) -> Result<HamiltonianFunction, ParseError> {
    HamiltonianFunction::parse(text, n, params)
}

/// Partials of a section: `dq[j][i] = d(gamma^j)/d(q^i)` and
/// `ds[j] = d(gamma^j)/ds`.
#[derive(Debug, Clone, PartialEq)]
pub struct SectionJacobian {
    pub dq: Vec<Vec<f64>>,
    pub ds: Vec<f64>,
}

/// A section of `pi: T*Q x R -> Q x R`: a map `(q, s) -> p = gamma(q, s)`
/// given by one expression per momentum component.
#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    n: usize,
    components: Vec<Expr>,
    params: BTreeMap<String, f64>,
}

impl Section {
    pub fn new(
        n: usize,
        components: Vec<Expr>,
        params: BTreeMap<String, f64>,
    ) -> Result<Self, PhaseError> {
        if components.len() != n {
            return Err(PhaseError::ComponentCount {
                expected: n,
                got: components.len(),
            });
        }
        for body in &components {
            validate_body(body, SymbolContext::Section { n }, &params)?;
        }
        Ok(Self {
            n,
            components,
            params,
        })
    }

    /// Parse one expression per component over `q1..qn` and `s`.
    pub fn parse<S: AsRef<str>>(
        components: &[S],
        n: usize,
        params: BTreeMap<String, f64>,
    ) -> Result<Self, ParseError> {
        let parsed = components
            .iter()
            .map(|text| expr::parse(text.as_ref(), SymbolContext::Section { n }, &params))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            n,
            components: parsed,
            params,
        })
    }

    /// Build `gamma = grad_q W` from a scalar expression `W(q, s)` by
    /// mechanical differentiation; such sections are closed by construction.
    pub fn gradient_of(
        generating: &str,
        n: usize,
        params: BTreeMap<String, f64>,
    ) -> Result<Self, ParseError> {
        let w = expr::parse(generating, SymbolContext::Section { n }, &params)?;
        let components = (0..n)
            .map(|i| expr::differentiate(&w, CoordId::Q(i)))
            .collect();
        Ok(Self {
            n,
            components,
            params,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn components(&self) -> &[Expr] {
        &self.components
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    fn base_slots(&self, q: &[f64], s: f64) -> Vec<DualScalar> {
        let mut slots: Vec<DualScalar> = q.iter().map(|&v| DualScalar::constant(v)).collect();
        slots.push(DualScalar::constant(s));
        slots
    }

    fn eval_component_dual(
        &self,
        j: usize,
        slots: &[DualScalar],
    ) -> Result<DualScalar, SingularityError> {
        expr::eval_dual(
            &self.components[j],
            CoordLayout::Base { n: self.n },
            slots,
            &self.params,
        )
    }

    /// Momentum values `p = gamma(q, s)`.
    pub fn eval(&self, q: &[f64], s: f64) -> Result<Vec<f64>, SingularityError> {
        let slots = self.base_slots(q, s);
        (0..self.n)
            .map(|j| Ok(self.eval_component_dual(j, &slots)?.value))
            .collect()
    }

    /// The lifted phase-space point `(q, gamma(q, s), s)`.
    pub fn lift(&self, q: &[f64], s: f64) -> Result<ExtendedPoint, SingularityError> {
        let p = self.eval(q, s)?;
        ExtendedPoint::new(q.to_vec(), p, s)
            .map_err(|e| SingularityError::new(format!("section lift: {e}")))
    }

    /// All partials `d(gamma^j)/d(q^i)` and `d(gamma^j)/ds`, by one seeded
    /// dual pass per base coordinate.
    pub fn jacobian(&self, q: &[f64], s: f64) -> Result<SectionJacobian, SingularityError> {
        let mut slots = self.base_slots(q, s);
        let mut dq = vec![vec![0.0; self.n]; self.n];
        let mut ds = vec![0.0; self.n];
        for i in 0..=self.n {
            slots[i].derivative = 1.0;
            let label = if i < self.n {
                format!("q{}", i + 1)
            } else {
                "s".to_string()
            };
            for j in 0..self.n {
                let r = self
                    .eval_component_dual(j, &slots)
                    .map_err(|e| e.at_coordinate(label.clone()))?;
                if !r.derivative.is_finite() {
                    return Err(
                        SingularityError::new("non-finite derivative").at_coordinate(label)
                    );
                }
                if i < self.n {
                    dq[j][i] = r.derivative;
                } else {
                    ds[j] = r.derivative;
                }
            }
            slots[i].derivative = 0.0;
        }
        Ok(SectionJacobian { dq, ds })
    }

    /// Pointwise failure of the lagrangian/legendrian closedness condition:
    /// `max_{i<j} |d(gamma^j)/d(q^i) - d(gamma^i)/d(q^j)|`; always 0 for
    /// `n = 1`.
    pub fn closedness_defect(&self, q: &[f64], s: f64) -> Result<f64, SingularityError> {
        if self.n == 1 {
            return Ok(0.0);
        }
        let jac = self.jacobian(q, s)?;
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                worst = worst.max((jac.dq[j][i] - jac.dq[i][j]).abs());
            }
        }
        Ok(worst)
    }
}

impl fmt::Display for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (j, c) in self.components.iter().enumerate() {
            if j > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}
