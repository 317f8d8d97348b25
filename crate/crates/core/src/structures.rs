//! Structure-specific dynamics on extended phase space.
//!
//! Sign conventions are fixed once across the crate: the symplectic form is
//! `omega = dq^i /\ dp_i`, the cosymplectic pair is `(dt, Omega_H)` with
//! `Omega_H = dq^i /\ dp_i + dH /\ dt`, and the contact form is
//! `eta = ds - p_i dq^i`. The contact Hamiltonian field satisfies
//! `eta(X_H) = -H` and reproduces the dissipation Hamilton equations
//! `dp_i = -dH/dq^i - p_i dH/ds`, `ds = p_i dH/dp_i - H`.

use thiserror::Error;

use crate::numerics::{Gradient, SingularityError};
use crate::phase::{ExtendedPoint, HamiltonianFunction, StructureKind, TangentValue};

/// Threshold below which a Hamiltonian counts as time-independent.
pub const TIME_INDEPENDENCE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FieldError {
    #[error("hamiltonian depends on s (|dH/ds| = {dh_ds:e}); symplectic dynamics need a time-independent H")]
    TimeDependent { dh_ds: f64 },
    #[error(transparent)]
    Singular(#[from] SingularityError),
}

/// Residuals of the defining contractions for the chosen structure.
#[derive(Debug, Clone, PartialEq)]
pub struct ContractReport {
    /// `<dt, field>` (cosymplectic: should be exactly 1; symplectic: 0) or
    /// `eta(X_H)` in the contact case (should equal `-H`).
    pub eta_pairing: f64,
    /// Worst absolute pairing of the contracted two-form identity over all
    /// coordinate directions.
    pub omega_defect: f64,
    /// `|eta(X_H) + H|` in the contact case, else 0.
    pub hamiltonian_pairing_defect: f64,
}

impl ContractReport {
    /// Single scalar summarizing how badly the defining relations fail.
    pub fn worst_defect(&self, kind: StructureKind) -> f64 {
        let eta_defect = match kind {
            StructureKind::Symplectic => self.eta_pairing.abs(),
            StructureKind::Cosymplectic => (self.eta_pairing - 1.0).abs(),
            StructureKind::Contact => self.hamiltonian_pairing_defect,
        };
        self.omega_defect
            .max(self.hamiltonian_pairing_defect)
            .max(eta_defect)
    }
}

/// Hamiltonian vector field of `omega = dq /\ dp`:
/// `dq^i = dH/dp_i`, `dp_i = -dH/dq^i`, `ds = 0`.
///
/// Requires `|dH/ds| < 1e-12` at `x`.
pub fn symplectic_field(
    h: &HamiltonianFunction,
    x: &ExtendedPoint,
) -> Result<TangentValue, FieldError> {
    let g = h.gradient(x)?;
    if g.s.abs() >= TIME_INDEPENDENCE_TOL {
        return Err(FieldError::TimeDependent { dh_ds: g.s.abs() });
    }
    Ok(TangentValue {
        dq: g.p,
        dp: g.q.iter().map(|v| -v).collect(),
        ds: 0.0,
    })
}

/// Reeb field of the cosymplectic pair `(dt, Omega_H)`:
/// `ds = 1`, `dq^i = dH/dp_i`, `dp_i = -dH/dq^i`.
pub fn cosymplectic_reeb(
    h: &HamiltonianFunction,
    x: &ExtendedPoint,
) -> Result<TangentValue, FieldError> {
    let g = h.gradient(x)?;
    Ok(TangentValue {
        dq: g.p,
        dp: g.q.iter().map(|v| -v).collect(),
        ds: 1.0,
    })
}

/// Contact Hamiltonian field of `eta = ds - p_i dq^i`:
/// `dq^i = dH/dp_i`, `dp_i = -dH/dq^i - p_i dH/ds`,
/// `ds = sum_i p_i dH/dp_i - H`.
pub fn contact_field(
    h: &HamiltonianFunction,
    x: &ExtendedPoint,
) -> Result<TangentValue, FieldError> {
    let g = h.gradient(x)?;
    let energy = h.value(x)?;
    let dp = g
        .q
        .iter()
        .zip(x.p())
        .map(|(hq, p)| -hq - p * g.s)
        .collect();
    let ds = dot(x.p(), &g.p) - energy;
    Ok(TangentValue { dq: g.p, dp, ds })
}

/// Dispatch on the structure kind.
pub fn hamiltonian_field(
    kind: StructureKind,
    h: &HamiltonianFunction,
    x: &ExtendedPoint,
) -> Result<TangentValue, FieldError> {
    match kind {
        StructureKind::Symplectic => symplectic_field(h, x),
        StructureKind::Cosymplectic => cosymplectic_reeb(h, x),
        StructureKind::Contact => contact_field(h, x),
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `Omega_H = dq^i /\ dp_i + dH /\ dt` as an explicit bilinear form on the
/// coordinate basis, assembled from `dH` at the evaluation point. Row-major
/// `(2n+1) x (2n+1)`; `Omega_H(u, v) = u^T M v`.
fn omega_h_matrix(g: &Gradient) -> Vec<f64> {
    let n = g.dim();
    let m = 2 * n + 1;
    let gflat = g.flat();
    let mut mat = vec![0.0; m * m];
    for i in 0..n {
        mat[i * m + (n + i)] = 1.0; // dq^i /\ dp_i on (q_i, p_i)
        mat[(n + i) * m + i] = -1.0;
    }
    let t = 2 * n;
    for k in 0..m {
        mat[k * m + t] += gflat[k]; // dH(u) dt(v)
        mat[t * m + k] -= gflat[k]; // -dt(u) dH(v)
    }
    mat
}

/// Evaluate the defining contraction identities of the chosen structure at
/// `x` and report the residuals.
pub fn contract_check(
    kind: StructureKind,
    h: &HamiltonianFunction,
    x: &ExtendedPoint,
) -> Result<ContractReport, FieldError> {
    let n = x.dim();
    let field = hamiltonian_field(kind, h, x)?;
    let g = h.gradient(x)?;
    match kind {
        StructureKind::Symplectic => {
            // iota_X omega - dH against every coordinate direction.
            let mut worst: f64 = 0.0;
            for i in 0..n {
                worst = worst.max((-field.dp[i] - g.q[i]).abs());
                worst = worst.max((field.dq[i] - g.p[i]).abs());
            }
            worst = worst.max(g.s.abs());
            Ok(ContractReport {
                eta_pairing: field.ds,
                omega_defect: worst,
                hamiltonian_pairing_defect: 0.0,
            })
        }
        StructureKind::Cosymplectic => {
            let mat = omega_h_matrix(&g);
            let m = 2 * n + 1;
            let rflat = field.flat();
            let mut worst: f64 = 0.0;
            for col in 0..m {
                let mut pairing = 0.0;
                for row in 0..m {
                    pairing += rflat[row] * mat[row * m + col];
                }
                worst = worst.max(pairing.abs());
            }
            Ok(ContractReport {
                eta_pairing: field.ds,
                omega_defect: worst,
                hamiltonian_pairing_defect: 0.0,
            })
        }
        StructureKind::Contact => {
            let energy = h.value(x)?;
            let eta_pairing = field.ds - dot(x.p(), &field.dq);
            let hamiltonian_pairing_defect = (eta_pairing + energy).abs();
            // flat(X) = iota_X d(eta) + eta(X) eta must equal
            // -(R(H) + H) eta + dH, with R = d/ds the Reeb field.
            let coeff = g.s + energy;
            let mut worst: f64 = 0.0;
            for i in 0..n {
                let lhs_q = -field.dp[i] - eta_pairing * x.p()[i];
                let rhs_q = coeff * x.p()[i] + g.q[i];
                worst = worst.max((lhs_q - rhs_q).abs());
                worst = worst.max((field.dq[i] - g.p[i]).abs());
            }
            worst = worst.max((eta_pairing + energy).abs());
            Ok(ContractReport {
                eta_pairing,
                omega_defect: worst,
                hamiltonian_pairing_defect,
            })
        }
    }
}

/// Canonical Poisson bracket
/// `{f, g} = sum_i (df/dq^i dg/dp_i - df/dp_i dg/dq^i)` evaluated at `x`.
pub fn poisson_bracket(
    f: &HamiltonianFunction,
    g: &HamiltonianFunction,
    x: &ExtendedPoint,
) -> Result<f64, SingularityError> {
    let gf = f.gradient(x)?;
    let gg = g.gradient(x)?;
    let mut sum = 0.0;
    for i in 0..x.dim() {
        sum += gf.q[i] * gg.p[i] - gf.p[i] * gg.q[i];
    }
    Ok(sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models;
    use std::collections::BTreeMap;

    fn no_params() -> BTreeMap<String, f64> {
        BTreeMap::new()
    }

    fn h1(text: &str) -> HamiltonianFunction {
        HamiltonianFunction::parse(text, 1, no_params()).unwrap()
    }

    fn x1(q: f64, p: f64, s: f64) -> ExtendedPoint {
        ExtendedPoint::dim1(q, p, s).unwrap()
    }

    #[test]
    fn symplectic_harmonic_turning_point() {
        let h = h1("0.5*(q1^2 + p1^2)");
        let v = symplectic_field(&h, &x1(1.0, 0.0, 0.0)).unwrap();
        assert_eq!(v.dq, vec![0.0]);
        assert_eq!(v.dp, vec![-1.0]);
        assert_eq!(v.ds, 0.0);
    }

    #[test]
    fn symplectic_free_particle() {
        let h = h1("p1^2/2");
        let v = symplectic_field(&h, &x1(2.0, 3.0, 0.0)).unwrap();
        assert_eq!(v.dq, vec![3.0]);
        assert_eq!(v.dp, vec![0.0]);
    }

    #[test]
    fn symplectic_inverse_square_term() {
        // -dH/dq = 1/q^3 = 1 at q = 1.
        let h = h1("0.5*(p1^2 + 1/q1^2)");
        let v = symplectic_field(&h, &x1(1.0, 0.0, 0.0)).unwrap();
        assert_eq!(v.dq, vec![0.0]);
        assert_eq!(v.dp, vec![1.0]);
    }

    #[test]
    fn symplectic_rejects_time_dependence() {
        let h = h1("0.5*p1^2 + s*q1");
        let err = symplectic_field(&h, &x1(1.0, 0.0, 0.0)).unwrap_err();
        assert!(matches!(err, FieldError::TimeDependent { .. }));
    }

    #[test]
    fn reeb_field_of_ws_oscillator() {
        let h = models::ws_hamiltonian(1.0, "1").unwrap();
        let v = cosymplectic_reeb(&h, &x1(1.0, 0.0, 0.0)).unwrap();
        assert_eq!(v.ds, 1.0);
        assert_eq!(v.dq, vec![0.0]);
        // -(w^2 q - k/q^3) = 0 at q = 1.
        assert_eq!(v.dp, vec![0.0]);
    }

    #[test]
    fn reeb_field_of_trig_system() {
        let h = models::trig_hamiltonian(1.0, 1.0);
        let v = cosymplectic_reeb(&h, &x1(1.0, 1.0, 0.0)).unwrap();
        assert_eq!(v.ds, 1.0);
        assert_eq!(v.dq, vec![1.0]);
        assert_eq!(v.dp, vec![-1.0]);
    }

    #[test]
    fn reeb_field_of_zero_hamiltonian() {
        let h = h1("0");
        let v = cosymplectic_reeb(&h, &x1(0.3, -0.7, 2.0)).unwrap();
        assert_eq!(v.dq, vec![0.0]);
        assert_eq!(v.dp, vec![0.0]);
        assert_eq!(v.ds, 1.0);
    }

    #[test]
    fn contact_field_of_damped_oscillator() {
        let h = models::damped_hamiltonian(1.0, 0.1, "0.5*q1^2").unwrap();
        let v = contact_field(&h, &x1(1.0, 1.0, 0.0)).unwrap();
        assert_eq!(v.dq, vec![1.0]);
        // -(alpha p + V') = -1.1
        assert!((v.dp[0] + 1.1).abs() < 1e-15);
        // p^2/m - H = 1 - 1 = 0
        assert_eq!(v.ds, 0.0);
    }

    #[test]
    fn contact_field_of_zero_hamiltonian_vanishes() {
        let h = h1("0");
        let v = contact_field(&h, &x1(0.4, 1.2, -0.3)).unwrap();
        assert_eq!(v.flat(), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn contact_field_linear_in_p() {
        let h = h1("p1");
        let v = contact_field(&h, &x1(5.0, -2.0, 1.0)).unwrap();
        assert_eq!(v.dq, vec![1.0]);
        assert_eq!(v.dp, vec![0.0]);
        assert_eq!(v.ds, 0.0);
    }

    #[test]
    fn contact_degenerates_to_symplectic_when_time_independent() {
        let h = h1("0.5*(q1^2 + p1^2) + 1/(2 + q1^2)");
        for (q, p) in [(0.3, -1.2), (1.5, 0.4), (-0.8, 0.8)] {
            let x = x1(q, p, 0.9);
            let c = contact_field(&h, &x).unwrap();
            let s = symplectic_field(&h, &x).unwrap();
            assert_eq!(c.dq, s.dq);
            assert_eq!(c.dp, s.dp);
            let expected_ds = p * c.dq[0] - h.value(&x).unwrap();
            assert!((c.ds - expected_ds).abs() < 1e-15);
        }
    }

    #[test]
    fn cosymplectic_contract_of_ws() {
        let h = models::ws_hamiltonian(1.0, "1").unwrap();
        let r = contract_check(StructureKind::Cosymplectic, &h, &x1(1.0, 0.5, 0.3)).unwrap();
        assert_eq!(r.eta_pairing, 1.0);
        assert!(r.omega_defect < 1e-12, "omega defect {}", r.omega_defect);
        assert_eq!(r.hamiltonian_pairing_defect, 0.0);
    }

    #[test]
    fn contact_contract_of_damped_oscillator() {
        let h = models::damped_hamiltonian(1.0, 0.1, "0.5*q1^2").unwrap();
        let r = contract_check(StructureKind::Contact, &h, &x1(0.8, -1.1, 0.4)).unwrap();
        let energy = h.value(&x1(0.8, -1.1, 0.4)).unwrap();
        assert!(r.hamiltonian_pairing_defect / energy.abs().max(1.0) < 1e-12);
        assert!(r.omega_defect < 1e-12);
    }

    #[test]
    fn symplectic_contract_of_harmonic() {
        let h = h1("0.5*(q1^2 + p1^2)");
        let r = contract_check(StructureKind::Symplectic, &h, &x1(1.0, 1.0, 0.0)).unwrap();
        assert!(r.omega_defect < 1e-12);
        assert_eq!(r.eta_pairing, 0.0);
    }

    #[test]
    fn canonical_bracket() {
        let f = h1("q1");
        let g = h1("p1");
        let x = x1(0.3, 0.9, -2.0);
        assert_eq!(poisson_bracket(&f, &g, &x).unwrap(), 1.0);
    }

    #[test]
    fn bracket_of_function_with_itself_vanishes() {
        let h = h1("sin(q1)*p1^2 + exp(s)");
        let x = x1(1.1, -0.4, 0.2);
        assert_eq!(poisson_bracket(&h, &h, &x).unwrap(), 0.0);
    }

    #[test]
    fn bracket_chain_rule() {
        let f = h1("q1^2");
        let g = h1("p1");
        let x = x1(3.0, 0.5, 1.0);
        assert_eq!(poisson_bracket(&f, &g, &x).unwrap(), 6.0);
    }

    #[test]
    fn energy_rate_along_reeb_equals_time_partial() {
        let h = models::ws_hamiltonian(1.0, "1 + 0.1*t").unwrap();
        for (q, p, s) in [(1.0, 0.5, 0.0), (0.7, -1.3, 2.0), (2.2, 0.1, 5.0)] {
            let x = x1(q, p, s);
            let v = cosymplectic_reeb(&h, &x).unwrap();
            let g = h.gradient(&x).unwrap();
            let rate = dot(&g.q, &v.dq) + dot(&g.p, &v.dp) + g.s * v.ds;
            assert!((rate - g.s).abs() < 1e-10, "rate {rate} vs dH/dt {}", g.s);
        }
    }

    #[test]
    fn energy_rate_along_contact_field_is_dissipative() {
        let h = models::damped_hamiltonian(1.0, 0.1, "0.5*q1^2").unwrap();
        for (q, p, s) in [(1.0, 1.0, 0.0), (0.4, -0.6, 1.5), (-1.2, 0.3, 3.0)] {
            let x = x1(q, p, s);
            let v = contact_field(&h, &x).unwrap();
            let g = h.gradient(&x).unwrap();
            let energy = h.value(&x).unwrap();
            let rate = dot(&g.q, &v.dq) + dot(&g.p, &v.dp) + g.s * v.ds;
            // Chain-rule consequence of the dissipation equations:
            // dH/dtau = -H dH/ds; for the damped oscillator dH/ds = alpha.
            assert!((rate + energy * g.s).abs() < 1e-10);
            assert!((rate + 0.1 * energy).abs() < 1e-10);
        }
    }
}
