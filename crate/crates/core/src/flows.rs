//! Numerical integration of the structure fields, characteristic-curve
//! solving for the Hamilton-Jacobi equations, lifted-vs-full trajectory
//! comparison, and conservation/dissipation diagnostics.
//!
//! Two steppers are available: fixed-step classical RK4 (for convergence
//! studies) and an adaptive embedded Dormand-Prince 5(4) pair, the default
//! at `rtol = 1e-9`, `atol = 1e-12`.

use std::io;

use serde::Serialize;
use thiserror::Error;

use crate::hj::{projected_field, BaseTangent};
use crate::numerics::SingularityError;
use crate::phase::{ExtendedPoint, HamiltonianFunction, Section, StructureKind};
use crate::structures::{hamiltonian_field, FieldError};

/// Stepping scheme; either a fixed step or adaptive tolerances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    Rk4Fixed { step: f64 },
    Rk45Adaptive { rtol: f64, atol: f64 },
}

/// Integrator settings. The singularity guard aborts a run once any
/// configuration coordinate enters `|q_i| < q_min`, reporting the last good
/// state; systems with inverse-power potentials set it by default.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    pub method: Method,
    pub max_steps: usize,
    pub q_min: Option<f64>,
}

impl IntegratorConfig {
    pub fn rk45(rtol: f64, atol: f64) -> Self {
        Self {
            method: Method::Rk45Adaptive { rtol, atol },
            max_steps: 1_000_000,
            q_min: None,
        }
    }

    pub fn rk4(step: f64) -> Self {
        Self {
            method: Method::Rk4Fixed { step },
            max_steps: 1_000_000,
            q_min: None,
        }
    }

    pub fn with_guard(mut self, q_min: f64) -> Self {
        self.q_min = Some(q_min);
        self
    }

    pub fn with_max_steps(mut self, max_steps: usize) -> Self {
        self.max_steps = max_steps;
        self
    }

    fn validate(&self) -> Result<(), FlowError> {
        match self.method {
            Method::Rk4Fixed { step } => {
                if !(step.is_finite() && step > 0.0) {
                    return Err(FlowError::InvalidConfig(format!(
                        "rk4 step must be positive, got {step}"
                    )));
                }
            }
            Method::Rk45Adaptive { rtol, atol } => {
                if !(rtol.is_finite() && rtol > 0.0 && atol.is_finite() && atol > 0.0) {
                    return Err(FlowError::InvalidConfig(format!(
                        "tolerances must be positive, got rtol = {rtol}, atol = {atol}"
                    )));
                }
            }
        }
        if self.max_steps == 0 {
            return Err(FlowError::InvalidConfig("max_steps must be >= 1".into()));
        }
        if let Some(q_min) = self.q_min {
            if !(q_min.is_finite() && q_min > 0.0) {
                return Err(FlowError::InvalidConfig(format!(
                    "singularity guard must be positive, got {q_min}"
                )));
            }
        }
        Ok(())
    }
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self::rk45(1e-9, 1e-12)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlowError {
    #[error("invalid integrator configuration: {0}")]
    InvalidConfig(String),
    #[error("{source}; integration stopped near tau = {tau}; last good state at tau = {last_tau}")]
    SingularStop {
        tau: f64,
        source: FieldError,
        last_tau: f64,
        last_state: Vec<f64>,
    },
    #[error("singularity guard tripped at tau = {tau}: |q{index}| = {value:e} < {q_min:e}")]
    GuardTripped {
        tau: f64,
        index: usize,
        value: f64,
        q_min: f64,
        last_tau: f64,
        last_state: Vec<f64>,
    },
    #[error("no acceptable step after max_steps = {max_steps} attempts, reached tau = {tau}")]
    MaxSteps {
        max_steps: usize,
        tau: f64,
        last_state: Vec<f64>,
    },
    #[error("step size underflow at tau = {tau}")]
    StepUnderflow { tau: f64, last_state: Vec<f64> },
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// One integration sample with its diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySample {
    pub tau: f64,
    pub point: ExtendedPoint,
    pub energy: f64,
    pub defect: Option<f64>,
}

/// A time-sampled integral curve; `tau` strictly increasing, all states
/// finite.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub samples: Vec<TrajectorySample>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.point.dim())
    }

    pub fn taus(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.tau).collect()
    }

    pub fn first(&self) -> Option<&TrajectorySample> {
        self.samples.first()
    }

    pub fn last(&self) -> Option<&TrajectorySample> {
        self.samples.last()
    }
}

/// Uniform output grid with `count >= 2` points, endpoints included.
pub fn uniform_grid(t0: f64, t1: f64, count: usize) -> Vec<f64> {
    assert!(count >= 2, "grid needs at least two points");
    let mut out = Vec::with_capacity(count);
    let step = (t1 - t0) / (count - 1) as f64;
    for i in 0..count {
        out.push(t0 + step * i as f64);
    }
    out[count - 1] = t1;
    out
}

// ---------------------------------------------------------------------------
// Flat-state driver
// ---------------------------------------------------------------------------

type FlatRhs<'a> = dyn Fn(f64, &[f64]) -> Result<Vec<f64>, FieldError> + 'a;

const SAFETY: f64 = 0.9;
const MIN_SCALE: f64 = 0.2;
const MAX_SCALE: f64 = 5.0;

fn axpy(y: &[f64], h: f64, k: &[f64]) -> Vec<f64> {
    y.iter().zip(k).map(|(a, b)| a + h * b).collect()
}

struct Stepper<'a> {
    rhs: &'a FlatRhs<'a>,
    cfg: IntegratorConfig,
    guard_dims: usize,
    t: f64,
    y: Vec<f64>,
    h: f64,
    attempts: usize,
    h_floor: f64,
    accepted_any: bool,
}

impl<'a> Stepper<'a> {
    fn new(
        rhs: &'a FlatRhs<'a>,
        t0: f64,
        y0: Vec<f64>,
        t_end: f64,
        cfg: IntegratorConfig,
        guard_dims: usize,
    ) -> Result<Self, FlowError> {
        cfg.validate()?;
        if !(t0.is_finite() && t_end.is_finite() && t_end >= t0) {
            return Err(FlowError::InvalidConfig(format!(
                "span must be finite and increasing, got [{t0}, {t_end}]"
            )));
        }
        let span = (t_end - t0).max(1.0);
        let h0 = match cfg.method {
            Method::Rk4Fixed { step } => step,
            Method::Rk45Adaptive { .. } => (t_end - t0).max(f64::MIN_POSITIVE) / 100.0,
        };
        let stepper = Self {
            rhs,
            cfg,
            guard_dims,
            t: t0,
            y: y0,
            h: h0,
            attempts: 0,
            h_floor: 1e-14 * span,
            accepted_any: false,
        };
        if let Some(violation) = stepper.guard_violation(&stepper.y) {
            let (index, value) = violation;
            return Err(FlowError::GuardTripped {
                tau: t0,
                index,
                value,
                q_min: stepper.cfg.q_min.unwrap(),
                last_tau: t0,
                last_state: stepper.y,
            });
        }
        Ok(stepper)
    }

    fn guard_violation(&self, y: &[f64]) -> Option<(usize, f64)> {
        let q_min = self.cfg.q_min?;
        y[..self.guard_dims]
            .iter()
            .enumerate()
            .find(|(_, v)| v.abs() < q_min)
            .map(|(i, v)| (i + 1, v.abs()))
    }

    fn eval(&self, t: f64, y: &[f64]) -> Result<Vec<f64>, FieldError> {
        (self.rhs)(t, y)
    }

    fn singular_stop(&self, tau: f64, source: FieldError) -> FlowError {
        if !self.accepted_any {
            return FlowError::Field(source);
        }
        FlowError::SingularStop {
            tau,
            source,
            last_tau: self.t,
            last_state: self.y.clone(),
        }
    }

    /// Advance to exactly `target`, invoking `record` at every accepted
    /// state (including the landing on `target`).
    fn advance_to(
        &mut self,
        target: f64,
        record: &mut dyn FnMut(f64, &[f64]),
    ) -> Result<(), FlowError> {
        while self.t < target {
            if self.attempts >= self.cfg.max_steps {
                return Err(FlowError::MaxSteps {
                    max_steps: self.cfg.max_steps,
                    tau: self.t,
                    last_state: self.y.clone(),
                });
            }
            let k1 = self
                .eval(self.t, &self.y)
                .map_err(|e| self.singular_stop(self.t, e))?;
            match self.cfg.method {
                Method::Rk4Fixed { .. } => self.step_rk4(target, &k1)?,
                Method::Rk45Adaptive { rtol, atol } => self.step_rk45(target, &k1, rtol, atol)?,
            }
            if let Some((index, value)) = self.guard_violation(&self.y) {
                return Err(FlowError::GuardTripped {
                    tau: self.t,
                    index,
                    value,
                    q_min: self.cfg.q_min.unwrap(),
                    last_tau: self.t,
                    last_state: self.y.clone(),
                });
            }
            record(self.t, &self.y);
        }
        Ok(())
    }

    fn step_rk4(&mut self, target: f64, k1: &[f64]) -> Result<(), FlowError> {
        let clipped = self.h >= target - self.t;
        let h = if clipped { target - self.t } else { self.h };
        self.attempts += 1;
        let t = self.t;
        let map_err = |this: &Self, e: FieldError| this.singular_stop(t + h, e);
        let k2 = self
            .eval(t + 0.5 * h, &axpy(&self.y, 0.5 * h, k1))
            .map_err(|e| map_err(self, e))?;
        let k3 = self
            .eval(t + 0.5 * h, &axpy(&self.y, 0.5 * h, &k2))
            .map_err(|e| map_err(self, e))?;
        let k4 = self
            .eval(t + h, &axpy(&self.y, h, &k3))
            .map_err(|e| map_err(self, e))?;
        for (i, y) in self.y.iter_mut().enumerate() {
            *y += h * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0;
        }
        self.t = if clipped { target } else { self.t + h };
        self.accepted_any = true;
        Ok(())
    }

    fn step_rk45(
        &mut self,
        target: f64,
        k1: &[f64],
        rtol: f64,
        atol: f64,
    ) -> Result<(), FlowError> {
        loop {
            if self.attempts >= self.cfg.max_steps {
                return Err(FlowError::MaxSteps {
                    max_steps: self.cfg.max_steps,
                    tau: self.t,
                    last_state: self.y.clone(),
                });
            }
            self.attempts += 1;
            let proposal = self.h;
            let clipped = proposal >= target - self.t;
            let h = if clipped { target - self.t } else { proposal };
            match self.try_dopri(h, k1) {
                Err(source) => {
                    // A trial stage left the field's domain; shrink and retry.
                    if self.h * 0.5 < self.h_floor {
                        return Err(self.singular_stop(self.t + h, source));
                    }
                    self.h *= 0.5;
                }
                Ok((y5, err_norm)) => {
                    if err_norm <= 1.0 {
                        let factor = if err_norm == 0.0 {
                            MAX_SCALE
                        } else {
                            (SAFETY * err_norm.powf(-0.2)).clamp(MIN_SCALE, MAX_SCALE)
                        };
                        let mut next = h * factor;
                        if clipped {
                            next = next.max(proposal);
                        }
                        self.h = next;
                        self.y = y5;
                        self.t = if clipped { target } else { self.t + h };
                        self.accepted_any = true;
                        // Non-finite is caught by the error norm upstream;
                        // sc > 0 keeps err_norm finite unless y5 is NaN.
                        return Ok(());
                    }
                    let factor = (SAFETY * err_norm.powf(-0.2)).clamp(MIN_SCALE, 1.0);
                    let shrunk = h * factor;
                    if shrunk < self.h_floor {
                        return Err(FlowError::StepUnderflow {
                            tau: self.t,
                            last_state: self.y.clone(),
                        });
                    }
                    self.h = shrunk;
                }
            }
        }
    }

    /// One Dormand-Prince 5(4) trial step from the current state.
    fn try_dopri(&self, h: f64, k1: &[f64]) -> Result<(Vec<f64>, f64), FieldError> {
        let (t, y) = (self.t, &self.y);
        let (rtol, atol) = match self.cfg.method {
            Method::Rk45Adaptive { rtol, atol } => (rtol, atol),
            Method::Rk4Fixed { .. } => unreachable!("dopri step with fixed-step method"),
        };
        let m = y.len();

        let mut stage = vec![0.0; m];
        for i in 0..m {
            stage[i] = y[i] + h * (1.0 / 5.0) * k1[i];
        }
        let k2 = self.eval(t + h / 5.0, &stage)?;
        for i in 0..m {
            stage[i] = y[i] + h * (3.0 / 40.0 * k1[i] + 9.0 / 40.0 * k2[i]);
        }
        let k3 = self.eval(t + 3.0 * h / 10.0, &stage)?;
        for i in 0..m {
            stage[i] = y[i] + h * (44.0 / 45.0 * k1[i] - 56.0 / 15.0 * k2[i] + 32.0 / 9.0 * k3[i]);
        }
        let k4 = self.eval(t + 4.0 * h / 5.0, &stage)?;
        for i in 0..m {
            stage[i] = y[i]
                + h * (19372.0 / 6561.0 * k1[i] - 25360.0 / 2187.0 * k2[i]
                    + 64448.0 / 6561.0 * k3[i]
                    - 212.0 / 729.0 * k4[i]);
        }
        let k5 = self.eval(t + 8.0 * h / 9.0, &stage)?;
        for i in 0..m {
            stage[i] = y[i]
                + h * (9017.0 / 3168.0 * k1[i] - 355.0 / 33.0 * k2[i] + 46732.0 / 5247.0 * k3[i]
                    + 49.0 / 176.0 * k4[i]
                    - 5103.0 / 18656.0 * k5[i]);
        }
        let k6 = self.eval(t + h, &stage)?;
        let mut y5 = vec![0.0; m];
        for i in 0..m {
            y5[i] = y[i]
                + h * (35.0 / 384.0 * k1[i] + 500.0 / 1113.0 * k3[i] + 125.0 / 192.0 * k4[i]
                    - 2187.0 / 6784.0 * k5[i]
                    + 11.0 / 84.0 * k6[i]);
        }
        let k7 = self.eval(t + h, &y5)?;

        let mut sq_sum = 0.0;
        for i in 0..m {
            let err = h
                * (71.0 / 57600.0 * k1[i] - 71.0 / 16695.0 * k3[i] + 71.0 / 1920.0 * k4[i]
                    - 17253.0 / 339200.0 * k5[i]
                    + 22.0 / 525.0 * k6[i]
                    - 1.0 / 40.0 * k7[i]);
            let sc = atol + rtol * y[i].abs().max(y5[i].abs());
            let ratio = err / sc;
            sq_sum += ratio * ratio;
        }
        let err_norm = (sq_sum / m as f64).sqrt();
        if !err_norm.is_finite() {
            return Err(FieldError::Singular(SingularityError::new(
                "non-finite trial state",
            )));
        }
        Ok((y5, err_norm))
    }
}

fn drive_span(
    rhs: &FlatRhs<'_>,
    t0: f64,
    y0: Vec<f64>,
    t1: f64,
    cfg: IntegratorConfig,
    guard_dims: usize,
) -> Result<Vec<(f64, Vec<f64>)>, FlowError> {
    let mut stepper = Stepper::new(rhs, t0, y0.clone(), t1, cfg, guard_dims)?;
    let mut out = vec![(t0, y0)];
    stepper.advance_to(t1, &mut |t, y| out.push((t, y.to_vec())))?;
    Ok(out)
}

fn drive_grid(
    rhs: &FlatRhs<'_>,
    y0: Vec<f64>,
    taus: &[f64],
    cfg: IntegratorConfig,
    guard_dims: usize,
) -> Result<Vec<(f64, Vec<f64>)>, FlowError> {
    if taus.is_empty() {
        return Err(FlowError::InvalidConfig("empty output grid".into()));
    }
    for pair in taus.windows(2) {
        if !(pair[1] > pair[0]) {
            return Err(FlowError::InvalidConfig(
                "output grid must be strictly increasing".into(),
            ));
        }
    }
    let t0 = taus[0];
    let t_end = *taus.last().unwrap();
    let mut stepper = Stepper::new(rhs, t0, y0.clone(), t_end, cfg, guard_dims)?;
    let mut out = Vec::with_capacity(taus.len());
    out.push((t0, y0));
    for &target in &taus[1..] {
        stepper.advance_to(target, &mut |_, _| {})?;
        out.push((target, stepper.y.clone()));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Public integration API
// ---------------------------------------------------------------------------

fn extended_rhs<'a>(
    kind: StructureKind,
    h: &'a HamiltonianFunction,
) -> impl Fn(f64, &[f64]) -> Result<Vec<f64>, FieldError> + 'a {
    let n = h.dim();
    move |_t: f64, y: &[f64]| {
        let x = ExtendedPoint::from_flat(n, y)
            .map_err(|e| FieldError::Singular(SingularityError::new(format!("bad state: {e}"))))?;
        Ok(hamiltonian_field(kind, h, &x)?.flat())
    }
}

/// Characteristic system of the structure's Hamilton-Jacobi equation with
/// `p` identified with `gamma` along the curve. The flat state is
/// `[q1..qn, gamma1..gamman, s]` and the partials are taken at
/// `(q, gamma, s)`.
fn characteristic_rhs<'a>(
    kind: StructureKind,
    h: &'a HamiltonianFunction,
) -> impl Fn(f64, &[f64]) -> Result<Vec<f64>, FieldError> + 'a {
    let n = h.dim();
    move |_t: f64, y: &[f64]| {
        let x = ExtendedPoint::from_flat(n, y)
            .map_err(|e| FieldError::Singular(SingularityError::new(format!("bad state: {e}"))))?;
        let g = h.gradient(&x)?;
        let mut out = Vec::with_capacity(2 * n + 1);
        out.extend_from_slice(&g.p);
        match kind {
            StructureKind::Symplectic => {
                out.extend(g.q.iter().map(|v| -v));
                out.push(0.0);
            }
            StructureKind::Cosymplectic => {
                out.extend(g.q.iter().map(|v| -v));
                out.push(1.0);
            }
            StructureKind::Contact => {
                let energy = h.value(&x)?;
                for j in 0..n {
                    out.push(-g.q[j] - x.p()[j] * g.s);
                }
                let drift: f64 = x.p().iter().zip(&g.p).map(|(a, b)| a * b).sum::<f64>() - energy;
                out.push(drift);
            }
        }
        Ok(out)
    }
}

fn trajectory_from_flat(
    n: usize,
    raw: Vec<(f64, Vec<f64>)>,
    h: &HamiltonianFunction,
) -> Result<Trajectory, FlowError> {
    let mut samples = Vec::with_capacity(raw.len());
    for (tau, y) in raw {
        let point = ExtendedPoint::from_flat(n, &y)
            .map_err(|e| FieldError::Singular(SingularityError::new(format!("bad state: {e}"))))?;
        let energy = h.value(&point).map_err(FieldError::Singular)?;
        samples.push(TrajectorySample {
            tau,
            point,
            energy,
            defect: None,
        });
    }
    Ok(Trajectory { samples })
}

fn check_dims(h: &HamiltonianFunction, n: usize) -> Result<(), FlowError> {
    if h.dim() != n {
        return Err(FlowError::InvalidConfig(format!(
            "hamiltonian dimension {} does not match state dimension {n}",
            h.dim()
        )));
    }
    Ok(())
}

/// Integrate the structure's field from `x0` over `span`, sampling at every
/// accepted step.
pub fn integrate(
    kind: StructureKind,
    h: &HamiltonianFunction,
    x0: &ExtendedPoint,
    span: (f64, f64),
    cfg: &IntegratorConfig,
) -> Result<Trajectory, FlowError> {
    check_dims(h, x0.dim())?;
    let rhs = extended_rhs(kind, h);
    let raw = drive_span(&rhs, span.0, x0.flat(), span.1, *cfg, x0.dim())?;
    trajectory_from_flat(x0.dim(), raw, h)
}

/// Integrate the structure's field, landing exactly on the given strictly
/// increasing `taus`; `x0` is the state at `taus[0]`.
pub fn integrate_grid(
    kind: StructureKind,
    h: &HamiltonianFunction,
    x0: &ExtendedPoint,
    taus: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Trajectory, FlowError> {
    check_dims(h, x0.dim())?;
    let rhs = extended_rhs(kind, h);
    let raw = drive_grid(&rhs, x0.flat(), taus, *cfg, x0.dim())?;
    trajectory_from_flat(x0.dim(), raw, h)
}

fn characteristics_state(
    h: &HamiltonianFunction,
    q0: &[f64],
    gamma0: &[f64],
    s0: f64,
) -> Result<ExtendedPoint, FlowError> {
    check_dims(h, q0.len())?;
    if gamma0.len() != q0.len() {
        return Err(FlowError::InvalidConfig(format!(
            "gamma0 has {} components, expected {}",
            gamma0.len(),
            q0.len()
        )));
    }
    ExtendedPoint::new(q0.to_vec(), gamma0.to_vec(), s0)
        .map_err(|e| FlowError::InvalidConfig(e.to_string()))
}

/// Solve the characteristic ODE system of the chosen structure's
/// Hamilton-Jacobi equation from `(q0, gamma0, s0)`. The returned
/// trajectory stores `gamma` in the momentum slots.
pub fn characteristics(
    kind: StructureKind,
    h: &HamiltonianFunction,
    q0: &[f64],
    gamma0: &[f64],
    s0: f64,
    span: (f64, f64),
    cfg: &IntegratorConfig,
) -> Result<Trajectory, FlowError> {
    let x0 = characteristics_state(h, q0, gamma0, s0)?;
    let rhs = characteristic_rhs(kind, h);
    let raw = drive_span(&rhs, span.0, x0.flat(), span.1, *cfg, q0.len())?;
    trajectory_from_flat(q0.len(), raw, h)
}

/// Grid-sampled variant of [`characteristics`].
pub fn characteristics_grid(
    kind: StructureKind,
    h: &HamiltonianFunction,
    q0: &[f64],
    gamma0: &[f64],
    s0: f64,
    taus: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Trajectory, FlowError> {
    let x0 = characteristics_state(h, q0, gamma0, s0)?;
    let rhs = characteristic_rhs(kind, h);
    let raw = drive_grid(&rhs, x0.flat(), taus, *cfg, q0.len())?;
    trajectory_from_flat(q0.len(), raw, h)
}

/// Result of integrating the projected field and lifting it against the
/// full flow.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftComparison {
    /// Max-norm deviation between the lifted and full trajectories over
    /// matched sample times.
    pub max_point_deviation: f64,
    /// Projected trajectory lifted through the section.
    pub lifted: Trajectory,
    /// Full flow from the lifted initial point, sampled at the same times.
    pub full: Trajectory,
}

/// Integrate the projected field `field^gamma` on `Q x R` from
/// `(q0, s0)`, lift every sample through `gamma`, integrate the full field
/// from the lifted initial point on the same time grid, and report the
/// worst pointwise deviation.
pub fn compare_lifted(
    kind: StructureKind,
    h: &HamiltonianFunction,
    gamma: &Section,
    q0: &[f64],
    s0: f64,
    span: (f64, f64),
    cfg: &IntegratorConfig,
) -> Result<LiftComparison, FlowError> {
    let n = q0.len();
    check_dims(h, n)?;
    if gamma.dim() != n {
        return Err(FlowError::InvalidConfig(format!(
            "section dimension {} does not match state dimension {n}",
            gamma.dim()
        )));
    }
    let rhs = move |_t: f64, y: &[f64]| -> Result<Vec<f64>, FieldError> {
        let (q, s) = (&y[..n], y[n]);
        let v = projected_field(kind, h, gamma, q, s)?;
        let mut out = Vec::with_capacity(n + 1);
        out.extend_from_slice(&v.dq);
        out.push(v.ds);
        Ok(out)
    };
    let mut base0 = q0.to_vec();
    base0.push(s0);
    let base = drive_span(&rhs, span.0, base0, span.1, *cfg, n)?;

    let mut lifted_samples = Vec::with_capacity(base.len());
    for (tau, y) in &base {
        let point = gamma.lift(&y[..n], y[n]).map_err(FieldError::Singular)?;
        let energy = h.value(&point).map_err(FieldError::Singular)?;
        lifted_samples.push(TrajectorySample {
            tau: *tau,
            point,
            energy,
            defect: None,
        });
    }
    let lifted = Trajectory {
        samples: lifted_samples,
    };

    let taus = lifted.taus();
    let full = integrate_grid(kind, h, &lifted.samples[0].point, &taus, cfg)?;

    let mut deviation: f64 = 0.0;
    for (a, b) in lifted.samples.iter().zip(&full.samples) {
        for (x, y) in a.point.flat().iter().zip(b.point.flat()) {
            deviation = deviation.max((x - y).abs());
        }
    }
    Ok(LiftComparison {
        max_point_deviation: deviation,
        lifted,
        full,
    })
}

// ---------------------------------------------------------------------------
// Diagnostics
// ---------------------------------------------------------------------------

/// Derivative at `at` of the quadratic through three samples; second-order
/// accurate on nonuniform grids.
fn three_point_derivative(ts: [f64; 3], fs: [f64; 3], at: f64) -> f64 {
    let [t0, t1, t2] = ts;
    let [f0, f1, f2] = fs;
    let d0 = (2.0 * at - t1 - t2) / ((t0 - t1) * (t0 - t2));
    let d1 = (2.0 * at - t0 - t2) / ((t1 - t0) * (t1 - t2));
    let d2 = (2.0 * at - t0 - t1) / ((t2 - t0) * (t2 - t1));
    f0 * d0 + f1 * d1 + f2 * d2
}

/// Numerical `dH/dtau` along the samples, by three-point stencils.
fn energy_rate(traj: &Trajectory) -> Vec<f64> {
    let m = traj.len();
    let t: Vec<f64> = traj.taus();
    let e: Vec<f64> = traj.samples.iter().map(|s| s.energy).collect();
    if m < 2 {
        return vec![0.0; m];
    }
    if m == 2 {
        let slope = (e[1] - e[0]) / (t[1] - t[0]);
        return vec![slope; 2];
    }
    (0..m)
        .map(|i| {
            let w = if i == 0 {
                0
            } else if i == m - 1 {
                m - 3
            } else {
                i - 1
            };
            three_point_derivative(
                [t[w], t[w + 1], t[w + 2]],
                [e[w], e[w + 1], e[w + 2]],
                t[i],
            )
        })
        .collect()
}

/// Per-sample conservation/dissipation defect for the structure:
/// symplectic `|H - H(0)|`; cosymplectic `|dH/dtau - dH/dt|`; contact
/// `|dH/dtau + H dH/ds|`, with `dH/dtau` from finite differences along the
/// samples.
pub fn dissipation_diagnostic(
    kind: StructureKind,
    traj: &Trajectory,
    h: &HamiltonianFunction,
) -> Result<Vec<f64>, SingularityError> {
    match kind {
        StructureKind::Symplectic => {
            let e0 = traj.samples.first().map_or(0.0, |s| s.energy);
            Ok(traj
                .samples
                .iter()
                .map(|s| (s.energy - e0).abs())
                .collect())
        }
        StructureKind::Cosymplectic => {
            let rates = energy_rate(traj);
            traj.samples
                .iter()
                .zip(rates)
                .map(|(s, rate)| Ok((rate - h.gradient(&s.point)?.s).abs()))
                .collect()
        }
        StructureKind::Contact => {
            let rates = energy_rate(traj);
            traj.samples
                .iter()
                .zip(rates)
                .map(|(s, rate)| Ok((rate + s.energy * h.gradient(&s.point)?.s).abs()))
                .collect()
        }
    }
}

/// Fill the trajectory's defect column with the dissipation diagnostic.
pub fn with_dissipation_defects(
    kind: StructureKind,
    mut traj: Trajectory,
    h: &HamiltonianFunction,
) -> Result<Trajectory, SingularityError> {
    let defects = dissipation_diagnostic(kind, &traj, h)?;
    for (s, d) in traj.samples.iter_mut().zip(defects) {
        s.defect = Some(d);
    }
    Ok(traj)
}

// ---------------------------------------------------------------------------
// Export
// ---------------------------------------------------------------------------

/// 17 significant digits: enough to reconstruct the f64 bit pattern.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// CSV export with the header `tau,q1..qn,p1..pn,s,H,defect`. Comment lines
/// are written first, prefixed with `# `.
pub fn write_trajectory_csv<W: io::Write>(
    w: &mut W,
    traj: &Trajectory,
    comments: &[String],
) -> io::Result<()> {
    for line in comments {
        writeln!(w, "# {line}")?;
    }
    let n = traj.dim();
    let mut header = String::from("tau");
    for i in 1..=n {
        header.push_str(&format!(",q{i}"));
    }
    for i in 1..=n {
        header.push_str(&format!(",p{i}"));
    }
    header.push_str(",s,H,defect");
    writeln!(w, "{header}")?;
    for sample in &traj.samples {
        let mut row = format_float(sample.tau);
        for v in sample.point.q() {
            row.push(',');
            row.push_str(&format_float(*v));
        }
        for v in sample.point.p() {
            row.push(',');
            row.push_str(&format_float(*v));
        }
        row.push(',');
        row.push_str(&format_float(sample.point.s()));
        row.push(',');
        row.push_str(&format_float(sample.energy));
        row.push(',');
        row.push_str(&format_float(sample.defect.unwrap_or(0.0)));
        writeln!(w, "{row}")?;
    }
    Ok(())
}

#[derive(Serialize)]
struct JsonSample<'a> {
    tau: f64,
    q: &'a [f64],
    p: &'a [f64],
    s: f64,
    #[serde(rename = "H")]
    energy: f64,
    defect: Option<f64>,
}

/// JSON export mirroring the CSV fields.
pub fn trajectory_json(traj: &Trajectory) -> serde_json::Value {
    let samples: Vec<JsonSample<'_>> = traj
        .samples
        .iter()
        .map(|s| JsonSample {
            tau: s.tau,
            q: s.point.q(),
            p: s.point.p(),
            s: s.point.s(),
            energy: s.energy,
            defect: s.defect,
        })
        .collect();
    serde_json::json!({ "samples": samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models;
    use std::collections::BTreeMap;

    fn h1(text: &str) -> HamiltonianFunction {
        HamiltonianFunction::parse(text, 1, BTreeMap::new()).unwrap()
    }

    fn x1(q: f64, p: f64, s: f64) -> ExtendedPoint {
        ExtendedPoint::dim1(q, p, s).unwrap()
    }

    #[test]
    fn harmonic_orbit_closes_after_full_period() {
        let h = h1("0.5*(q1^2 + p1^2)");
        let cfg = IntegratorConfig::default();
        let traj = integrate(
            StructureKind::Symplectic,
            &h,
            &x1(1.0, 0.0, 0.0),
            (0.0, 2.0 * std::f64::consts::PI),
            &cfg,
        )
        .unwrap();
        let last = traj.last().unwrap();
        assert!((last.point.q()[0] - 1.0).abs() < 1e-6);
        assert!(last.point.p()[0].abs() < 1e-6);
    }

    #[test]
    fn free_particle_moves_linearly() {
        let h = h1("p1^2/2");
        let cfg = IntegratorConfig::default();
        let traj = integrate(
            StructureKind::Symplectic,
            &h,
            &x1(0.0, 2.0, 0.0),
            (0.0, 1.0),
            &cfg,
        )
        .unwrap();
        let last = traj.last().unwrap();
        assert!((last.point.q()[0] - 2.0).abs() < 1e-12);
        assert_eq!(last.point.p()[0], 2.0);
    }

    #[test]
    fn damped_oscillator_energy_decays_exponentially() {
        let h = models::damped_hamiltonian(1.0, 0.1, "0.5*q1^2").unwrap();
        let cfg = IntegratorConfig::default();
        let traj = integrate(StructureKind::Contact, &h, &x1(1.0, 1.0, 0.0), (0.0, 10.0), &cfg)
            .unwrap();
        let h0 = traj.first().unwrap().energy;
        for s in &traj.samples {
            let expected = h0 * (-0.1 * s.tau).exp();
            assert!(
                (s.energy - expected).abs() / h0 < 1e-6,
                "tau {}: H {} vs {expected}",
                s.tau,
                s.energy
            );
        }
    }

    #[test]
    fn cosymplectic_time_coordinate_tracks_tau_exactly() {
        let h = models::ws_hamiltonian(1.0, "1 + 0.1*t").unwrap();
        let cfg = IntegratorConfig::default().with_guard(1e-6);
        let traj = integrate(
            StructureKind::Cosymplectic,
            &h,
            &x1(1.0, 0.5, 0.0),
            (0.0, 10.0),
            &cfg,
        )
        .unwrap();
        for s in &traj.samples {
            assert!(
                (s.point.s() - s.tau).abs() < 1e-12,
                "s = {} vs tau = {}",
                s.point.s(),
                s.tau
            );
        }
    }

    #[test]
    fn ws_characteristics_fixed_point() {
        let h = models::ws_hamiltonian(1.0, "1").unwrap();
        let cfg = IntegratorConfig::default().with_guard(1e-6);
        let traj = characteristics(
            StructureKind::Cosymplectic,
            &h,
            &[1.0],
            &[0.0],
            0.0,
            (0.0, 3.0),
            &cfg,
        )
        .unwrap();
        for s in &traj.samples {
            assert!((s.point.q()[0] - 1.0).abs() < 1e-12);
            assert!(s.point.p()[0].abs() < 1e-12);
        }
    }

    #[test]
    fn ws_characteristics_match_reeb_flow_projection() {
        let h = models::ws_hamiltonian(1.0, "1").unwrap();
        let cfg = IntegratorConfig::default().with_guard(1e-6);
        let taus = uniform_grid(0.0, 5.0, 251);
        let chars = characteristics_grid(
            StructureKind::Cosymplectic,
            &h,
            &[2.0],
            &[0.0],
            0.0,
            &taus,
            &cfg,
        )
        .unwrap();
        let reeb = integrate_grid(
            StructureKind::Cosymplectic,
            &h,
            &x1(2.0, 0.0, 0.0),
            &taus,
            &cfg,
        )
        .unwrap();
        for (a, b) in chars.samples.iter().zip(&reeb.samples) {
            assert!((a.point.q()[0] - b.point.q()[0]).abs() < 1e-8);
            assert!((a.point.p()[0] - b.point.p()[0]).abs() < 1e-8);
        }
    }

    #[test]
    fn trig_characteristics_degenerate_to_harmonic_rotation() {
        let h = models::trig_hamiltonian(0.0, 1.0);
        let cfg = IntegratorConfig::default();
        let (q0, g0) = (0.8, -0.3);
        let taus = uniform_grid(0.0, 4.0, 101);
        let traj = characteristics_grid(
            StructureKind::Cosymplectic,
            &h,
            &[q0],
            &[g0],
            0.0,
            &taus,
            &cfg,
        )
        .unwrap();
        for s in &traj.samples {
            let expect_q = q0 * s.tau.cos() + g0 * s.tau.sin();
            let expect_g = g0 * s.tau.cos() - q0 * s.tau.sin();
            assert!((s.point.q()[0] - expect_q).abs() < 1e-8);
            assert!((s.point.p()[0] - expect_g).abs() < 1e-8);
        }
    }

    #[test]
    fn lifted_flow_matches_full_flow_for_hj_solution() {
        let h = h1("0.5*(p1^2 + q1^2)");
        let params: BTreeMap<String, f64> = [("E".to_string(), 2.0)].into_iter().collect();
        let gamma = Section::parse(&["sqrt(2*E - q1^2)"], 1, params).unwrap();
        let cfg = IntegratorConfig::default();
        let cmp = compare_lifted(
            StructureKind::Cosymplectic,
            &h,
            &gamma,
            &[1.0],
            0.0,
            (0.0, 1.0),
            &cfg,
        )
        .unwrap();
        assert!(
            cmp.max_point_deviation < 1e-6,
            "deviation {}",
            cmp.max_point_deviation
        );
    }

    #[test]
    fn lifted_flow_of_zero_hamiltonian_is_exact() {
        let h = h1("0");
        let gamma = Section::parse(&["q1^2"], 1, BTreeMap::new()).unwrap();
        let cfg = IntegratorConfig::default();
        for kind in [
            StructureKind::Symplectic,
            StructureKind::Cosymplectic,
            StructureKind::Contact,
        ] {
            let cmp = compare_lifted(kind, &h, &gamma, &[0.7], 0.0, (0.0, 1.0), &cfg).unwrap();
            assert_eq!(cmp.max_point_deviation, 0.0, "kind {kind}");
        }
    }

    #[test]
    fn lifted_flow_of_non_solution_diverges() {
        // H = p^2/2 with gamma = q: base flow q = e^tau, full flow q = 1 + tau.
        let h = h1("0.5*p1^2");
        let gamma = Section::parse(&["q1"], 1, BTreeMap::new()).unwrap();
        let cfg = IntegratorConfig::default();
        let cmp = compare_lifted(
            StructureKind::Cosymplectic,
            &h,
            &gamma,
            &[1.0],
            0.0,
            (0.0, 1.0),
            &cfg,
        )
        .unwrap();
        assert!(
            cmp.max_point_deviation > 1e-3,
            "deviation {}",
            cmp.max_point_deviation
        );
    }

    #[test]
    fn symplectic_energy_defect_stays_small_over_long_run() {
        let h = h1("0.5*(q1^2 + p1^2)");
        let cfg = IntegratorConfig::default();
        let traj = integrate(
            StructureKind::Symplectic,
            &h,
            &x1(1.0, 0.0, 0.0),
            (0.0, 100.0),
            &cfg,
        )
        .unwrap();
        let defects = dissipation_diagnostic(StructureKind::Symplectic, &traj, &h).unwrap();
        let worst = defects.iter().fold(0.0f64, |m, d| m.max(*d));
        assert!(worst < 1e-7, "worst defect {worst}");
    }

    #[test]
    fn contact_dissipation_defect_small_on_adaptive_samples() {
        let h = models::damped_hamiltonian(1.0, 0.1, "0.5*q1^2").unwrap();
        let cfg = IntegratorConfig::default();
        let traj = integrate(StructureKind::Contact, &h, &x1(1.0, 1.0, 0.0), (0.0, 10.0), &cfg)
            .unwrap();
        let defects = dissipation_diagnostic(StructureKind::Contact, &traj, &h).unwrap();
        let worst = defects.iter().fold(0.0f64, |m, d| m.max(*d));
        assert!(worst < 1e-6, "worst defect {worst}");
    }

    #[test]
    fn zero_hamiltonian_has_zero_defect() {
        let h = h1("0");
        let cfg = IntegratorConfig::default();
        for kind in [
            StructureKind::Symplectic,
            StructureKind::Cosymplectic,
            StructureKind::Contact,
        ] {
            let traj = integrate(kind, &h, &x1(0.5, 0.5, 0.0), (0.0, 2.0), &cfg).unwrap();
            let defects = dissipation_diagnostic(kind, &traj, &h).unwrap();
            assert!(defects.iter().all(|d| *d == 0.0), "kind {kind}");
        }
    }

    #[test]
    fn rk4_halving_shows_fourth_order() {
        let h = h1("0.5*(q1^2 + p1^2)");
        let reference = {
            let cfg = IntegratorConfig::rk45(1e-12, 1e-14);
            integrate(StructureKind::Symplectic, &h, &x1(1.0, 0.0, 0.0), (0.0, 1.0), &cfg)
                .unwrap()
                .last()
                .unwrap()
                .point
                .clone()
        };
        let error_at = |step: f64| {
            let cfg = IntegratorConfig::rk4(step);
            let traj =
                integrate(StructureKind::Symplectic, &h, &x1(1.0, 0.0, 0.0), (0.0, 1.0), &cfg)
                    .unwrap();
            let last = traj.last().unwrap();
            last.point
                .flat()
                .iter()
                .zip(reference.flat())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max)
        };
        let ratio = error_at(0.05) / error_at(0.025);
        assert!(
            (12.0..=20.0).contains(&ratio),
            "convergence ratio {ratio} outside [12, 20]"
        );
    }

    #[test]
    fn guard_trips_with_last_good_state() {
        let h = h1("0.5*(q1^2 + p1^2)");
        let cfg = IntegratorConfig::default().with_guard(0.05);
        let err = integrate(
            StructureKind::Symplectic,
            &h,
            &x1(0.5, -5.0, 0.0),
            (0.0, 2.0),
            &cfg,
        )
        .unwrap_err();
        match err {
            FlowError::GuardTripped {
                index, last_state, ..
            } => {
                assert_eq!(index, 1);
                assert_eq!(last_state.len(), 3);
            }
            other => panic!("expected guard trip, got {other:?}"),
        }
    }

    #[test]
    fn max_steps_is_enforced() {
        let h = h1("0.5*(q1^2 + p1^2)");
        let cfg = IntegratorConfig::rk45(1e-9, 1e-12).with_max_steps(3);
        let err = integrate(
            StructureKind::Symplectic,
            &h,
            &x1(1.0, 0.0, 0.0),
            (0.0, 100.0),
            &cfg,
        )
        .unwrap_err();
        assert!(matches!(err, FlowError::MaxSteps { .. }));
    }

    #[test]
    fn csv_export_shape() {
        let h = h1("0.5*(q1^2 + p1^2)");
        let cfg = IntegratorConfig::rk4(0.25);
        let traj = integrate(StructureKind::Symplectic, &h, &x1(1.0, 0.0, 0.0), (0.0, 1.0), &cfg)
            .unwrap();
        let traj = with_dissipation_defects(StructureKind::Symplectic, traj, &h).unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &traj, &["test run".to_string()]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("# test run"));
        assert_eq!(lines.next(), Some("tau,q1,p1,s,H,defect"));
        assert_eq!(text.lines().count(), 2 + traj.len());
    }
}
