//! Geometric Hamilton-Jacobi machinery: tangent lifts of sections,
//! projected vector fields on the base `Q x R`, the local-coordinate
//! Hamilton-Jacobi residuals, and the gamma-relatedness defect.
//!
//! Every Hamiltonian partial inside a residual is evaluated at the lifted
//! point `(q, gamma(q, s), s)`; the equivalence between the relatedness
//! defect and the assembled residual lives entirely in the momentum
//! components of `T(gamma)(field^gamma) - field o gamma`.

use crate::numerics::SingularityError;
use crate::phase::{ExtendedPoint, HamiltonianFunction, Section, StructureKind, TangentValue};
use crate::structures::{hamiltonian_field, FieldError};

/// A tangent vector to the base `Q x R`.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseTangent {
    pub dq: Vec<f64>,
    pub ds: f64,
}

/// Residual and defect bundle for one `(H, gamma)` pair at one base point.
#[derive(Debug, Clone, PartialEq)]
pub struct HJReport {
    /// Local-coordinate Hamilton-Jacobi residual, one entry per component
    /// of the section.
    pub residual: Vec<f64>,
    /// Max-norm of `T(gamma)(projected field) - full field` at the lifted
    /// point.
    pub relatedness_defect: f64,
    /// Pointwise closedness defect of the section at `(q, s)`.
    pub closedness_defect: f64,
}

/// Push a base tangent through `T(gamma)`:
/// `dp_j = sum_i d(gamma^j)/d(q^i) dq_i + d(gamma^j)/ds ds`.
pub fn tangent_lift(
    gamma: &Section,
    q: &[f64],
    s: f64,
    v: &BaseTangent,
) -> Result<TangentValue, SingularityError> {
    let jac = gamma.jacobian(q, s)?;
    let n = gamma.dim();
    let mut dp = vec![0.0; n];
    for j in 0..n {
        let mut acc = 0.0;
        for i in 0..n {
            acc += jac.dq[j][i] * v.dq[i];
        }
        dp[j] = acc + jac.ds[j] * v.ds;
    }
    Ok(TangentValue {
        dq: v.dq.clone(),
        dp,
        ds: v.ds,
    })
}

/// Evaluate the full structure field at the lifted point and drop the
/// momentum components: `field^gamma = T(pi) o field o gamma`.
pub fn projected_field(
    kind: StructureKind,
    h: &HamiltonianFunction,
    gamma: &Section,
    q: &[f64],
    s: f64,
) -> Result<BaseTangent, FieldError> {
    let lifted = gamma.lift(q, s)?;
    let field = hamiltonian_field(kind, h, &lifted)?;
    Ok(BaseTangent {
        dq: field.dq,
        ds: field.ds,
    })
}

fn lifted_gradient(
    h: &HamiltonianFunction,
    gamma: &Section,
    q: &[f64],
    s: f64,
) -> Result<(ExtendedPoint, crate::numerics::Gradient), SingularityError> {
    let lifted = gamma.lift(q, s)?;
    let g = h.gradient(&lifted)?;
    Ok((lifted, g))
}

/// Cosymplectic Hamilton-Jacobi residual, per component `j`:
/// `d(gamma^j)/ds + sum_i dH/dp_i d(gamma^j)/d(q^i) + dH/dq^j`,
/// with the Hamiltonian partials taken at the lifted point.
pub fn hj_residual_cosymplectic(
    h: &HamiltonianFunction,
    gamma: &Section,
    q: &[f64],
    s: f64,
) -> Result<Vec<f64>, SingularityError> {
    let (_, g) = lifted_gradient(h, gamma, q, s)?;
    let jac = gamma.jacobian(q, s)?;
    let n = gamma.dim();
    let mut out = vec![0.0; n];
    for j in 0..n {
        let mut acc = jac.ds[j];
        for i in 0..n {
            acc += g.p[i] * jac.dq[j][i];
        }
        out[j] = acc + g.q[j];
    }
    Ok(out)
}

/// Contact Hamilton-Jacobi residual, per component `j`:
/// `gamma^j dH/ds + dH/dq^j + (sum_i gamma^i dH/dp_i - H) d(gamma^j)/ds
///  + sum_i dH/dp_i d(gamma^j)/d(q^i)`,
/// everything at the lifted point (`p = gamma`).
pub fn hj_residual_contact(
    h: &HamiltonianFunction,
    gamma: &Section,
    q: &[f64],
    s: f64,
) -> Result<Vec<f64>, SingularityError> {
    let jac = gamma.jacobian(q, s)?;
    hj_residual_contact_inner(h, gamma, q, s, &jac.ds, &jac.dq)
}

/// Contact residual with the section's `s`-partials frozen to a constant,
/// replicating the worked damped-oscillator substitution (`gamma_S = 1`).
pub fn hj_residual_contact_frozen(
    h: &HamiltonianFunction,
    gamma: &Section,
    q: &[f64],
    s: f64,
    gamma_s: f64,
) -> Result<Vec<f64>, SingularityError> {
    let jac = gamma.jacobian(q, s)?;
    let frozen = vec![gamma_s; gamma.dim()];
    hj_residual_contact_inner(h, gamma, q, s, &frozen, &jac.dq)
}

fn hj_residual_contact_inner(
    h: &HamiltonianFunction,
    gamma: &Section,
    q: &[f64],
    s: f64,
    dgamma_ds: &[f64],
    dgamma_dq: &[Vec<f64>],
) -> Result<Vec<f64>, SingularityError> {
    let (lifted, g) = lifted_gradient(h, gamma, q, s)?;
    let energy = h.value(&lifted)?;
    let p = lifted.p();
    let n = gamma.dim();
    let drift: f64 = (0..n).map(|i| p[i] * g.p[i]).sum::<f64>() - energy;
    let mut out = vec![0.0; n];
    for j in 0..n {
        let mut acc = p[j] * g.s + g.q[j] + drift * dgamma_ds[j];
        for i in 0..n {
            acc += g.p[i] * dgamma_dq[j][i];
        }
        out[j] = acc;
    }
    Ok(out)
}

/// The residual matching the chosen structure. For the symplectic case the
/// section's `s`-partial drops out because the field has `ds = 0`.
pub fn hj_residual(
    kind: StructureKind,
    h: &HamiltonianFunction,
    gamma: &Section,
    q: &[f64],
    s: f64,
) -> Result<Vec<f64>, SingularityError> {
    match kind {
        StructureKind::Cosymplectic => hj_residual_cosymplectic(h, gamma, q, s),
        StructureKind::Contact => hj_residual_contact(h, gamma, q, s),
        StructureKind::Symplectic => {
            let (_, g) = lifted_gradient(h, gamma, q, s)?;
            let jac = gamma.jacobian(q, s)?;
            let n = gamma.dim();
            let mut out = vec![0.0; n];
            for j in 0..n {
                let mut acc = g.q[j];
                for i in 0..n {
                    acc += g.p[i] * jac.dq[j][i];
                }
                out[j] = acc;
            }
            Ok(out)
        }
    }
}

/// Compare `T(gamma)(projected field)` against the full field at the lifted
/// point. The base components of the difference vanish by construction; the
/// momentum components carry the Hamilton-Jacobi residual.
pub fn relatedness_defect(
    kind: StructureKind,
    h: &HamiltonianFunction,
    gamma: &Section,
    q: &[f64],
    s: f64,
) -> Result<HJReport, FieldError> {
    let lifted = gamma.lift(q, s)?;
    let full = hamiltonian_field(kind, h, &lifted)?;
    let projected = BaseTangent {
        dq: full.dq.clone(),
        ds: full.ds,
    };
    let lifted_field = tangent_lift(gamma, q, s, &projected)?;
    let mut defect: f64 = 0.0;
    for (a, b) in lifted_field.flat().iter().zip(full.flat()) {
        defect = defect.max((a - b).abs());
    }
    let residual = hj_residual(kind, h, gamma, q, s)?;
    let closedness_defect = gamma.closedness_defect(q, s)?;
    Ok(HJReport {
        residual,
        relatedness_defect: defect,
        closedness_defect,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models;
    use crate::phase::HamiltonianFunction;
    use std::collections::BTreeMap;

    fn no_params() -> BTreeMap<String, f64> {
        BTreeMap::new()
    }

    fn h1(text: &str) -> HamiltonianFunction {
        HamiltonianFunction::parse(text, 1, no_params()).unwrap()
    }

    fn gamma1(text: &str) -> Section {
        Section::parse(&[text], 1, no_params()).unwrap()
    }

    #[test]
    fn lift_of_constant_section_has_no_momentum_motion() {
        let gamma = gamma1("3.5");
        let v = BaseTangent {
            dq: vec![1.0],
            ds: 0.0,
        };
        let lifted = tangent_lift(&gamma, &[0.2], 0.0, &v).unwrap();
        assert_eq!(lifted.dq, vec![1.0]);
        assert_eq!(lifted.dp, vec![0.0]);
        assert_eq!(lifted.ds, 0.0);
    }

    #[test]
    fn lift_uses_q_partial() {
        let gamma = gamma1("q1*s");
        let v = BaseTangent {
            dq: vec![1.0],
            ds: 0.0,
        };
        let lifted = tangent_lift(&gamma, &[2.0], 3.0, &v).unwrap();
        assert_eq!(lifted.dp, vec![3.0]);
    }

    #[test]
    fn lift_uses_s_partial() {
        let gamma = gamma1("q1*s");
        let v = BaseTangent {
            dq: vec![0.0],
            ds: 1.0,
        };
        let lifted = tangent_lift(&gamma, &[2.0], 3.0, &v).unwrap();
        assert_eq!(lifted.dp, vec![2.0]);
    }

    #[test]
    fn projected_reeb_field_of_ws() {
        let h = models::ws_hamiltonian(1.0, "1").unwrap();
        let gamma = gamma1("0.3*q1 + s");
        let (q, s) = (1.4, 0.6);
        let v = projected_field(StructureKind::Cosymplectic, &h, &gamma, &[q], s).unwrap();
        let p = gamma.eval(&[q], s).unwrap()[0];
        assert_eq!(v.dq, vec![p]);
        assert_eq!(v.ds, 1.0);
    }

    #[test]
    fn projected_contact_field_of_damped_oscillator() {
        let (m, alpha) = (1.0, 0.1);
        let h = models::damped_hamiltonian(m, alpha, "0.5*q1^2").unwrap();
        let gamma = gamma1("q1 + 0.2*s");
        let (q, s) = (0.8, 1.2);
        let v = projected_field(StructureKind::Contact, &h, &gamma, &[q], s).unwrap();
        let p = gamma.eval(&[q], s).unwrap()[0];
        assert!((v.dq[0] - p / m).abs() < 1e-15);
        let expected_ds = p * p / (2.0 * m) - 0.5 * q * q - alpha * s;
        assert!((v.ds - expected_ds).abs() < 1e-14);
    }

    #[test]
    fn projected_field_of_zero_hamiltonian() {
        let h = h1("0");
        let gamma = gamma1("sin(q1)");
        let v = projected_field(StructureKind::Cosymplectic, &h, &gamma, &[0.4], 0.0).unwrap();
        assert_eq!(v.dq, vec![0.0]);
        assert_eq!(v.ds, 1.0);
    }

    #[test]
    fn classical_hj_solution_has_zero_residual() {
        // H = (p^2 + q^2)/2, gamma = sqrt(2E - q^2) solves the stationary
        // Hamilton-Jacobi equation W' = sqrt(2E - q^2).
        let h = h1("0.5*(p1^2 + q1^2)");
        let params: BTreeMap<String, f64> = [("E".to_string(), 2.0)].into_iter().collect();
        let gamma = Section::parse(&["sqrt(2*E - q1^2)"], 1, params).unwrap();
        for q in [-1.5, -0.5, 0.0, 1.0, 1.8] {
            let r = hj_residual_cosymplectic(&h, &gamma, &[q], 0.0).unwrap();
            assert!(r[0].abs() < 1e-12, "residual {} at q = {q}", r[0]);
        }
    }

    #[test]
    fn residual_of_constant_section_under_zero_hamiltonian() {
        let h = h1("0");
        let gamma = gamma1("2.5");
        let r = hj_residual_cosymplectic(&h, &gamma, &[0.7], 0.3).unwrap();
        assert_eq!(r, vec![0.0]);
        let rc = hj_residual_contact(&h, &gamma, &[0.7], 0.3).unwrap();
        assert_eq!(rc, vec![0.0]);
    }

    #[test]
    fn residual_of_identity_section_under_free_hamiltonian() {
        // H = p^2/2, gamma = q: residual = q.
        let h = h1("0.5*p1^2");
        let gamma = gamma1("q1");
        for q in [0.0, 0.5, -2.0] {
            let r = hj_residual_cosymplectic(&h, &gamma, &[q], 0.0).unwrap();
            assert!((r[0] - q).abs() < 1e-15);
        }
    }

    #[test]
    fn contact_residual_of_pure_s_hamiltonian() {
        // H = alpha s, gamma = c: residual = c * alpha.
        let params: BTreeMap<String, f64> = [("alpha".to_string(), 0.1)].into_iter().collect();
        let h = HamiltonianFunction::parse("alpha*s", 1, params).unwrap();
        let gamma = gamma1("2");
        let r = hj_residual_contact(&h, &gamma, &[1.3], 0.8).unwrap();
        assert!((r[0] - 0.2).abs() < 1e-15, "residual {}", r[0]);
    }

    #[test]
    fn frozen_contact_residual_reproduces_damped_oscillator_display() {
        // With d(gamma)/dS frozen to 1 the residual must assemble to
        // (p^2/2m - V - alpha S) + (p/m) dgamma/dq + (p alpha + V').
        let (m, alpha) = (1.0, 0.1);
        let h = models::damped_hamiltonian(m, alpha, "0.5*q1^2").unwrap();
        let gamma = gamma1("1.3*q1 + 0.4*s^2");
        for (q, s) in [(0.5, 0.0), (1.1, 0.7), (-0.9, 2.0)] {
            let r = hj_residual_contact_frozen(&h, &gamma, &[q], s, 1.0).unwrap();
            let p = gamma.eval(&[q], s).unwrap()[0];
            let dgamma_dq = gamma.jacobian(&[q], s).unwrap().dq[0][0];
            let vq = 0.5 * q * q;
            let vprime = q;
            let display =
                (p * p / (2.0 * m) - vq - alpha * s) * 1.0 + (p / m) * dgamma_dq + (p * alpha + vprime);
            assert!(
                (r[0] - display).abs() < 1e-12,
                "assemblies disagree: {} vs {display}",
                r[0]
            );
        }
    }

    #[test]
    fn ws_residual_matches_rearranged_milne_pinney_display() {
        // d(gamma)/dt + gamma d(gamma)/dq = k/q^3 - w(t)^2 q, rearranged to
        // residual form, assembled independently of hj_residual_cosymplectic.
        let k = 1.0;
        let h = models::ws_hamiltonian(k, "1 + 0.1*t").unwrap();
        let gamma = gamma1("0.7*q1^2 + sin(s)");
        for (q, s) in [(0.8, 0.0), (1.5, 1.2), (2.3, 3.0)] {
            let jac = gamma.jacobian(&[q], s).unwrap();
            let p = gamma.eval(&[q], s).unwrap()[0];
            let w = 1.0 + 0.1 * s;
            let display = jac.ds[0] + p * jac.dq[0][0] - (k / (q * q * q) - w * w * q);
            let r = hj_residual_cosymplectic(&h, &gamma, &[q], s).unwrap();
            assert!(
                (r[0] - display).abs() < 1e-12,
                "assemblies disagree: {} vs {display}",
                r[0]
            );
        }
    }

    #[test]
    fn relatedness_matches_classical_oracle() {
        let h = h1("0.5*(p1^2 + q1^2)");
        let params: BTreeMap<String, f64> = [("E".to_string(), 2.0)].into_iter().collect();
        let gamma = Section::parse(&["sqrt(2*E - q1^2)"], 1, params).unwrap();
        let report =
            relatedness_defect(StructureKind::Cosymplectic, &h, &gamma, &[1.0], 0.0).unwrap();
        assert!(report.relatedness_defect < 1e-10);
    }

    #[test]
    fn relatedness_equals_absolute_residual_for_free_hamiltonian() {
        let h = h1("0.5*p1^2");
        let gamma = gamma1("q1");
        for q in [0.25, 1.0, -3.0] {
            let report =
                relatedness_defect(StructureKind::Cosymplectic, &h, &gamma, &[q], 0.0).unwrap();
            assert!((report.relatedness_defect - q.abs()).abs() < 1e-14);
        }
    }

    #[test]
    fn relatedness_of_zero_hamiltonian_vanishes() {
        let h = h1("0");
        let gamma = gamma1("exp(q1) + s");
        for kind in [
            StructureKind::Symplectic,
            StructureKind::Cosymplectic,
            StructureKind::Contact,
        ] {
            let report = relatedness_defect(kind, &h, &gamma, &[0.4], 0.7).unwrap();
            assert_eq!(report.relatedness_defect, 0.0, "kind {kind}");
        }
    }

    #[test]
    fn base_components_of_lift_difference_vanish() {
        let h = models::trig_hamiltonian(0.8, 1.3);
        let gamma = gamma1("q1^2 - 0.3*s");
        let (q, s) = (0.9, 0.4);
        let lifted = gamma.lift(&[q], s).unwrap();
        let full = hamiltonian_field(StructureKind::Cosymplectic, &h, &lifted).unwrap();
        let projected = BaseTangent {
            dq: full.dq.clone(),
            ds: full.ds,
        };
        let lifted_field = tangent_lift(&gamma, &[q], s, &projected).unwrap();
        assert_eq!(lifted_field.dq, full.dq);
        assert_eq!(lifted_field.ds, full.ds);
    }

    #[test]
    fn equivalence_between_defect_and_residual() {
        // The difference of the two assemblies must stay at rounding level
        // whether or not the section solves the equation.
        let cases: Vec<(StructureKind, HamiltonianFunction, Section)> = vec![
            (
                StructureKind::Cosymplectic,
                models::ws_hamiltonian(1.0, "1").unwrap(),
                gamma1("1/q1"),
            ),
            (
                StructureKind::Contact,
                models::damped_hamiltonian(1.0, 0.1, "0.5*q1^2").unwrap(),
                gamma1("exp(-0.05*s)*q1"),
            ),
            (
                StructureKind::Symplectic,
                h1("0.5*(p1^2 + q1^2)"),
                gamma1("q1^3"),
            ),
        ];
        for (kind, h, gamma) in &cases {
            for (q, s) in [(0.6, 0.0), (1.2, 0.9), (1.9, 2.0)] {
                let report = relatedness_defect(*kind, h, gamma, &[q], s).unwrap();
                let res_norm = report
                    .residual
                    .iter()
                    .fold(0.0f64, |m, r| m.max(r.abs()));
                assert!(
                    (report.relatedness_defect - res_norm).abs() < 1e-9,
                    "kind {kind}: defect {} vs residual norm {res_norm}",
                    report.relatedness_defect
                );
            }
        }
    }
}
