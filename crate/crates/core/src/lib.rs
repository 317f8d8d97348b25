//! Hamiltonian dynamics on symplectic, cosymplectic, and contact phase
//! spaces.
//!
//! The crate builds the structure-specific dynamics (Hamiltonian vector
//! field, cosymplectic Reeb field, contact Hamiltonian field) for
//! Hamiltonians defined as expressions over extended phase space
//! `(q, p, s)`, evaluates geometric Hamilton-Jacobi residuals for candidate
//! sections `p = gamma(q, s)`, verifies gamma-relatedness by comparing full
//! integral curves against lifts of projected integral curves, and ships the
//! classic worked systems (Winternitz-Smorodinsky oscillator, a
//! trigonometric time-dependent system, the damped oscillator) together with
//! closed-form cross-checks.

pub mod expr;
pub mod flows;
pub mod hj;
pub mod models;
pub mod numerics;
pub mod phase;
pub mod sampling;
pub mod structures;
pub mod system;

pub use phase::{ExtendedPoint, HamiltonianFunction, Section, StructureKind, TangentValue};
