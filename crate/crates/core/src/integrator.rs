//! Adaptive Dormand–Prince 5(4) integration of the guidance equation.
//!
//! Steps are controlled by a PI controller on the embedded error estimate;
//! positions are recorded at a fixed cadence using the 4th-order dense
//! output, so the step size never has to hit sample times.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::wavefunction::{velocity_guarded, WaveError, WaveFunctionSpec, NODE_GUARD, PERIOD};

/// Starts must lie in [−BOX_HALF_WIDTH, BOX_HALF_WIDTH]².
pub const BOX_HALF_WIDTH: f64 = 8.0;

/// Final-position separation accepted by the tolerance-refinement check.
pub const CONVERGENCE_DISTANCE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    /// Per-step absolute error bound.
    pub abstol: f64,
    pub reltol: f64,
    pub h_init: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub sample_interval: f64,
    pub node_guard: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            abstol: 1e-8,
            reltol: 0.0,
            h_init: 1e-3,
            h_min: 1e-12,
            h_max: 0.5,
            sample_interval: PERIOD / 100.0,
            node_guard: NODE_GUARD,
        }
    }
}

impl IntegratorConfig {
    pub fn with_abstol(mut self, abstol: f64) -> Self {
        self.abstol = abstol;
        self
    }

    pub fn validate(&self) -> Result<(), IntegrateError> {
        let positive = [
            ("abstol", self.abstol),
            ("h_init", self.h_init),
            ("h_min", self.h_min),
            ("h_max", self.h_max),
            ("sample_interval", self.sample_interval),
            ("node_guard", self.node_guard),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(IntegrateError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.reltol.is_finite() && self.reltol >= 0.0) {
            return Err(IntegrateError::InvalidConfig(format!("reltol must be >= 0, got {}", self.reltol)));
        }
        if !(self.h_min <= self.h_init && self.h_init <= self.h_max) {
            return Err(IntegrateError::InvalidConfig(format!(
                "need h_min <= h_init <= h_max, got {} / {} / {}",
                self.h_min, self.h_init, self.h_max
            )));
        }
        Ok(())
    }

    /// Number of sample intervals covering `horizon`.
    pub fn sample_count(&self, horizon: f64) -> Result<usize, IntegrateError> {
        let ratio = horizon / self.sample_interval;
        let n = ratio.round();
        if !(horizon > 0.0 && n >= 1.0 && (ratio - n).abs() <= 1e-6 * n.max(1.0)) {
            return Err(IntegrateError::InvalidHorizon(horizon));
        }
        Ok(n as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub q1: f64,
    pub q2: f64,
}

impl Sample {
    pub fn position(&self) -> [f64; 2] {
        [self.q1, self.q2]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub start: [f64; 2],
    pub spec_fingerprint: String,
    pub sample_interval: f64,
    pub samples: Vec<Sample>,
    pub steps_taken: u64,
    pub steps_rejected: u64,
    pub min_density_seen: f64,
}

impl Trajectory {
    /// Time of the last recorded sample.
    pub fn horizon(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.t)
    }

    pub fn final_position(&self) -> [f64; 2] {
        self.samples.last().map_or(self.start, Sample::position)
    }

    pub fn positions(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        self.samples.iter().map(Sample::position)
    }
}

/// Why a step sequence stopped early.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Failure {
    #[error("node proximity at t = {t}, q = ({q1}, {q2}), |ψ|² = {density:e}")]
    NodeProximity { t: f64, q1: f64, q2: f64, density: f64 },
    #[error("step size {h:e} fell below h_min at t = {t}, q = ({q1}, {q2})")]
    StepUnderflow { t: f64, q1: f64, q2: f64, h: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntegrateError {
    #[error("invalid integrator configuration: {0}")]
    InvalidConfig(String),
    #[error("start ({0}, {1}) lies outside [-8, 8]²")]
    StartOutOfBounds(f64, f64),
    #[error("horizon {0} is not a positive multiple of the sample interval")]
    InvalidHorizon(f64),
    #[error("{0}")]
    Failed(Failure),
    /// The trajectory up to the failure is kept for diagnostics.
    #[error("trajectory truncated at t = {}: {failure}", partial.horizon())]
    Truncated { failure: Failure, partial: Box<Trajectory> },
}

impl IntegrateError {
    pub fn partial(&self) -> Option<&Trajectory> {
        match self {
            IntegrateError::Truncated { partial, .. } => Some(partial),
            _ => None,
        }
    }

    pub fn failure(&self) -> Option<&Failure> {
        match self {
            IntegrateError::Failed(f) | IntegrateError::Truncated { failure: f, .. } => Some(f),
            _ => None,
        }
    }
}

// Dormand–Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
// 5th minus embedded 4th order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// Shampine's dense output
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 5.0;
const PI_BETA: f64 = 0.04;
const PI_ALPHA: f64 = 0.2 - 0.75 * PI_BETA;

type Vec2 = [f64; 2];

#[inline]
fn axpy(y: Vec2, h: f64, terms: &[(f64, &Vec2)]) -> Vec2 {
    let mut out = y;
    for (c, k) in terms {
        out[0] += h * c * k[0];
        out[1] += h * c * k[1];
    }
    out
}

/// One accepted step with its interpolant.
#[derive(Debug, Clone, Copy)]
pub(crate) struct DenseStep {
    t0: f64,
    t1: f64,
    h: f64,
    y1: Vec2,
    r: [Vec2; 5],
}

impl DenseStep {
    pub(crate) fn t1(&self) -> f64 {
        self.t1
    }

    /// The step's end point, identical to the state the stepper moved to.
    pub(crate) fn end(&self) -> Vec2 {
        self.y1
    }

    pub(crate) fn eval(&self, t: f64) -> Vec2 {
        let s = (t - self.t0) / self.h;
        let s1 = 1.0 - s;
        let r = &self.r;
        std::array::from_fn(|i| r[0][i] + s * (r[1][i] + s1 * (r[2][i] + s * (r[3][i] + s1 * r[4][i]))))
    }
}

/// Error control shared by every stepper instance.
#[derive(Debug, Clone, Copy)]
pub(crate) struct StepControl {
    pub abstol: f64,
    pub reltol: f64,
    pub h_min: f64,
    pub h_max: f64,
}

impl From<&IntegratorConfig> for StepControl {
    fn from(c: &IntegratorConfig) -> Self {
        StepControl { abstol: c.abstol, reltol: c.reltol, h_min: c.h_min, h_max: c.h_max }
    }
}

/// A right-hand side returning (velocity, |ψ|²) or a node failure.
pub(crate) trait Field {
    fn eval(&self, t: f64, y: Vec2) -> Result<(Vec2, f64), Failure>;
}

impl<F: Fn(f64, Vec2) -> Result<(Vec2, f64), Failure>> Field for F {
    fn eval(&self, t: f64, y: Vec2) -> Result<(Vec2, f64), Failure> {
        self(t, y)
    }
}

/// The pilot-wave velocity field of a spec with a node guard.
pub(crate) struct GuidanceField<'a> {
    pub spec: &'a WaveFunctionSpec,
    pub guard: f64,
}

impl Field for GuidanceField<'_> {
    #[inline]
    fn eval(&self, t: f64, y: Vec2) -> Result<(Vec2, f64), Failure> {
        velocity_guarded(self.spec, y[0], y[1], t, self.guard).map_err(|e| match e {
            WaveError::NodeProximity { q1, q2, t, density } => Failure::NodeProximity { t, q1, q2, density },
            WaveError::UnsupportedOrder(_) => unreachable!("validated spec"),
        })
    }
}

pub(crate) struct Dopri5<F> {
    field: F,
    ctl: StepControl,
    pub t: f64,
    pub y: Vec2,
    k1: Vec2,
    h: f64,
    err_prev: f64,
    pub accepted: u64,
    pub rejected: u64,
    pub min_density: f64,
}

impl<F: Field> Dopri5<F> {
    pub(crate) fn new(field: F, ctl: StepControl, t0: f64, y0: Vec2, h_init: f64) -> Result<Self, Failure> {
        let (k1, density) = field.eval(t0, y0)?;
        Ok(Dopri5 {
            field,
            ctl,
            t: t0,
            y: y0,
            k1,
            h: h_init,
            err_prev: 1e-4,
            accepted: 0,
            rejected: 0,
            min_density: density,
        })
    }

    /// Takes one accepted step toward `t_end`, never stepping past it.
    pub(crate) fn step(&mut self, t_end: f64) -> Result<DenseStep, Failure> {
        let dir = if t_end >= self.t { 1.0 } else { -1.0 };
        let mut last_reject_was_error = false;
        loop {
            let remaining = (t_end - self.t).abs();
            let mut h_abs = self.h.min(self.ctl.h_max);
            let hits_end = h_abs >= remaining * (1.0 - 1e-12);
            if hits_end {
                h_abs = remaining;
            }
            let h = dir * h_abs;
            match self.attempt(h) {
                Ok(attempt) => {
                    let err = attempt.err;
                    if err <= 1.0 {
                        let mut fac = SAFETY * err.max(1e-10).powf(-PI_ALPHA) * self.err_prev.powf(PI_BETA);
                        fac = fac.clamp(FAC_MIN, FAC_MAX);
                        if last_reject_was_error {
                            fac = fac.min(1.0);
                        }
                        self.err_prev = err.max(1e-4);
                        let mut step = self.dense(h, &attempt);
                        self.t = if hits_end { t_end } else { self.t + h };
                        step.t1 = self.t;
                        self.y = attempt.y5;
                        self.k1 = attempt.k[6];
                        // a clipped final step should not shrink the next one
                        if !hits_end || h_abs * fac > self.h {
                            self.h = (h_abs * fac).min(self.ctl.h_max);
                        }
                        self.accepted += 1;
                        self.min_density = self.min_density.min(attempt.min_density);
                        return Ok(step);
                    }
                    self.rejected += 1;
                    last_reject_was_error = true;
                    let fac = (SAFETY * err.powf(-PI_ALPHA)).clamp(FAC_MIN, 1.0);
                    self.h = h_abs * fac;
                    if self.h < self.ctl.h_min {
                        return Err(Failure::StepUnderflow {
                            t: self.t,
                            q1: self.y[0],
                            q2: self.y[1],
                            h: self.h,
                        });
                    }
                }
                Err(failure) => {
                    // a stage landed near a node: retry with a smaller step
                    self.rejected += 1;
                    last_reject_was_error = true;
                    self.h = h_abs * 0.25;
                    if self.h < self.ctl.h_min {
                        return Err(failure);
                    }
                }
            }
        }
    }

    fn attempt(&self, h: f64) -> Result<Attempt, Failure> {
        let (t, y, k1) = (self.t, self.y, self.k1);
        let f = &self.field;
        let (k2, d2) = f.eval(t + C2 * h, axpy(y, h, &[(A21, &k1)]))?;
        let (k3, d3) = f.eval(t + C3 * h, axpy(y, h, &[(A31, &k1), (A32, &k2)]))?;
        let (k4, d4) = f.eval(t + C4 * h, axpy(y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]))?;
        let (k5, d5) = f.eval(t + C5 * h, axpy(y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]))?;
        let (k6, d6) =
            f.eval(t + h, axpy(y, h, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]))?;
        let y5 = axpy(y, h, &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
        let (k7, d7) = f.eval(t + h, y5)?;
        let mut err: f64 = 0.0;
        for i in 0..2 {
            let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let scale = self.ctl.abstol.max(self.ctl.reltol * y[i].abs().max(y5[i].abs()));
            err = err.max(e.abs() / scale);
        }
        let min_density = d2.min(d3).min(d4).min(d5).min(d6).min(d7);
        Ok(Attempt { y5, k: [k1, k2, k3, k4, k5, k6, k7], err, min_density })
    }

    fn dense(&self, h: f64, a: &Attempt) -> DenseStep {
        let [k1, _, k3, k4, k5, k6, k7] = &a.k;
        let y0 = self.y;
        let mut r = [[0.0; 2]; 5];
        for i in 0..2 {
            let diff = a.y5[i] - y0[i];
            let bspl = h * k1[i] - diff;
            r[0][i] = y0[i];
            r[1][i] = diff;
            r[2][i] = bspl;
            r[3][i] = diff - h * k7[i] - bspl;
            r[4][i] = h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
        }
        DenseStep { t0: self.t, t1: self.t + h, h, y1: a.y5, r }
    }
}

struct Attempt {
    y5: Vec2,
    k: [Vec2; 7],
    err: f64,
    min_density: f64,
}

/// Integrates from `start` over [0, horizon], recording positions every `sample_interval`.
pub fn integrate_trajectory(
    spec: &WaveFunctionSpec,
    start: [f64; 2],
    horizon: f64,
    config: &IntegratorConfig,
) -> Result<Trajectory, IntegrateError> {
    integrate_trajectory_with_progress(spec, start, horizon, config, |_| {})
}

/// As [`integrate_trajectory`], calling `progress(t)` on the executing thread after each completed period.
pub fn integrate_trajectory_with_progress(
    spec: &WaveFunctionSpec,
    start: [f64; 2],
    horizon: f64,
    config: &IntegratorConfig,
    mut progress: impl FnMut(f64),
) -> Result<Trajectory, IntegrateError> {
    config.validate()?;
    check_start(start)?;
    let n = config.sample_count(horizon)?;
    let interval = config.sample_interval;
    let sample_time = |k: usize| k as f64 * interval;
    let t_end = sample_time(n);

    let mut traj = Trajectory {
        start,
        spec_fingerprint: spec.fingerprint(),
        sample_interval: interval,
        samples: Vec::with_capacity(n + 1),
        steps_taken: 0,
        steps_rejected: 0,
        min_density_seen: f64::INFINITY,
    };
    traj.samples.push(Sample { t: 0.0, q1: start[0], q2: start[1] });

    let field = GuidanceField { spec, guard: config.node_guard };
    let mut stepper = match Dopri5::new(field, config.into(), 0.0, start, config.h_init) {
        Ok(s) => s,
        Err(failure) => return Err(IntegrateError::Truncated { failure, partial: Box::new(traj) }),
    };
    if spec.is_stationary() {
        // zero field everywhere: skip the stepping, every sample is the start
        traj.samples.extend((1..=n).map(|k| Sample { t: sample_time(k), q1: start[0], q2: start[1] }));
        traj.min_density_seen = stepper.min_density;
        progress(t_end);
        return Ok(traj);
    }

    let mut next = 1;
    let mut next_period = PERIOD;
    while next <= n {
        let step = match stepper.step(t_end) {
            Ok(step) => step,
            Err(failure) => {
                traj.steps_taken = stepper.accepted;
                traj.steps_rejected = stepper.rejected;
                traj.min_density_seen = stepper.min_density;
                return Err(IntegrateError::Truncated { failure, partial: Box::new(traj) });
            }
        };
        let t1 = step.t1();
        while next <= n && sample_time(next) <= t1 {
            let t = sample_time(next);
            let q = if t == t1 { step.end() } else { step.eval(t) };
            traj.samples.push(Sample { t, q1: q[0], q2: q[1] });
            next += 1;
        }
        while next_period <= t1 {
            progress(next_period);
            next_period += PERIOD;
        }
    }
    traj.steps_taken = stepper.accepted;
    traj.steps_rejected = stepper.rejected;
    traj.min_density_seen = stepper.min_density;
    Ok(traj)
}

/// Moves a single point from time `t0` to `t1` (either direction) and returns its end position.
pub fn advance(
    spec: &WaveFunctionSpec,
    start: [f64; 2],
    t0: f64,
    t1: f64,
    config: &IntegratorConfig,
) -> Result<[f64; 2], IntegrateError> {
    config.validate()?;
    check_start(start)?;
    if spec.is_stationary() || t0 == t1 {
        return Ok(start);
    }
    let field = GuidanceField { spec, guard: config.node_guard };
    let mut stepper =
        Dopri5::new(field, config.into(), t0, start, config.h_init).map_err(IntegrateError::Failed)?;
    while stepper.t != t1 {
        stepper.step(t1).map_err(IntegrateError::Failed)?;
    }
    Ok(stepper.y)
}

fn check_start(start: [f64; 2]) -> Result<(), IntegrateError> {
    let inside = |x: f64| x.is_finite() && x.abs() <= BOX_HALF_WIDTH;
    if inside(start[0]) && inside(start[1]) {
        Ok(())
    } else {
        Err(IntegrateError::StartOutOfBounds(start[0], start[1]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub abstol_coarse: f64,
    pub abstol_fine: f64,
    pub final_coarse: [f64; 2],
    pub final_fine: [f64; 2],
    pub final_separation: f64,
    pub converged: bool,
}

/// Integrates at `abstol` and `abstol / 10` and compares the final positions.
///
/// A separation above 0.01 is reported through `converged`, not as an error.
pub fn verify_convergence(
    spec: &WaveFunctionSpec,
    start: [f64; 2],
    horizon: f64,
    abstol: f64,
    base: &IntegratorConfig,
) -> Result<ConvergenceReport, IntegrateError> {
    let coarse = base.with_abstol(abstol);
    let fine = base.with_abstol(abstol / 10.0);
    let a = end_point(spec, start, horizon, &coarse)?;
    let b = end_point(spec, start, horizon, &fine)?;
    let final_separation = distance(a, b);
    Ok(ConvergenceReport {
        abstol_coarse: coarse.abstol,
        abstol_fine: fine.abstol,
        final_coarse: a,
        final_fine: b,
        final_separation,
        converged: final_separation <= CONVERGENCE_DISTANCE,
    })
}

fn end_point(
    spec: &WaveFunctionSpec,
    start: [f64; 2],
    horizon: f64,
    config: &IntegratorConfig,
) -> Result<[f64; 2], IntegrateError> {
    config.validate()?;
    config.sample_count(horizon)?;
    advance(spec, start, 0.0, horizon, config)
}

pub fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}
