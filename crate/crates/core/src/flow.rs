//! Event-detected integration from the switching line back to it.
//!
//! The integrator is the Dormand–Prince 5(4) pair with its quartic continuous
//! extension. The return to `y = 0` is bracketed on the dense output, solved
//! with Brent's method and then polished with Newton steps in time that
//! re-use the Runge–Kutta step itself.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fields::{PlanarField, Poly2};
use crate::numeric::{brent, RootTol};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Half {
    Upper,
    Lower,
}

impl Half {
    pub fn sign(self) -> f64 {
        match self {
            Half::Upper => 1.0,
            Half::Lower => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Forward => 1.0,
            Direction::Backward => -1.0,
        }
    }
}

/// Accuracy and budget of one half-return integration.
///
/// `abs_tol` and `event_tol` are additionally capped by `rel_tol · |x|` of
/// the launch point, so orbits launched very close to the origin (whose
/// coordinates are themselves tiny) keep their relative accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegrationLimits {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub t_max: f64,
    pub max_steps: usize,
    pub event_tol: f64,
}

impl Default for IntegrationLimits {
    fn default() -> Self {
        Self { rel_tol: 1e-10, abs_tol: 1e-12, t_max: 1e6, max_steps: 200_000, event_tol: 1e-12 }
    }
}

impl IntegrationLimits {
    pub fn validate(&self) -> Result<(), FlowError> {
        let ok = self.rel_tol > 0.0
            && self.abs_tol > 0.0
            && self.t_max > 0.0
            && self.max_steps > 0
            && self.event_tol > 0.0
            && self.event_tol <= self.abs_tol;
        if ok {
            Ok(())
        } else {
            Err(FlowError::InvalidLimits(*self))
        }
    }
}

/// First return of an orbit to the switching line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectionHit {
    /// Landing point; `point[1]` is the residual distance to the line.
    pub point: [f64; 2],
    /// Signed elapsed time, negative for backward integration.
    pub time: f64,
    pub steps: usize,
    pub y_residual: f64,
    /// Largest excursion `|y|` seen at accepted steps.
    pub y_extreme: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("field at the start points away from the requested half-plane (Q = {q})")]
    WrongLaunchDirection { q: f64 },
    #[error("flight time exceeded the cap {t_max}")]
    TimeCapExceeded { t_max: f64 },
    #[error("step budget of {max_steps} exhausted")]
    StepCapExceeded { max_steps: usize },
    #[error("orbit re-crossed y = 0 at t = {t} before leaving the launch collar")]
    HalfPlaneViolation { t: f64 },
    #[error("integration produced a non-finite state at t = {t}")]
    NonFinite { t: f64 },
    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64 },
    #[error("invalid integration limits {0:?}")]
    InvalidLimits(IntegrationLimits),
}

const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// Difference between the fifth- and fourth-order weights.
const E: [f64; 7] =
    [-71.0 / 57600.0, 0.0, 71.0 / 16695.0, -71.0 / 1920.0, 17253.0 / 339200.0, -22.0 / 525.0, 1.0 / 40.0];
/// Continuous extension: `z(t + θh) = z + h Σ_i k_i Σ_j P[i][j] θ^{j+1}`.
const P: [[f64; 4]; 7] = [
    [1.0, -8048581381.0 / 2820520608.0, 8663915743.0 / 2820520608.0, -12715105075.0 / 11282082432.0],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200.0 / 32700410799.0, -68118460800.0 / 10900136933.0, 87487479700.0 / 32700410799.0],
    [0.0, -1754552775.0 / 470086768.0, 14199869525.0 / 1410260304.0, -10690763975.0 / 1880347072.0],
    [0.0, 127303824393.0 / 49829197408.0, -318862633887.0 / 49829197408.0, 701980252875.0 / 199316789632.0],
    [0.0, -282668133.0 / 205662961.0, 2019193451.0 / 616988883.0, -1453857185.0 / 822651844.0],
    [0.0, 40617522.0 / 29380423.0, -110615467.0 / 29380423.0, 69997945.0 / 29380423.0],
];

type State = [f64; 2];

/// One Dormand–Prince step with everything needed for dense output.
struct Step {
    z0: State,
    z1: State,
    h: f64,
    k: [State; 7],
    err: State,
}

impl Step {
    fn dense(&self, theta: f64) -> State {
        let mut out = self.z0;
        let mut powers = [theta; 4];
        for j in 1..4 {
            powers[j] = powers[j - 1] * theta;
        }
        for (ki, pi) in self.k.iter().zip(P.iter()) {
            let w: f64 = pi.iter().zip(&powers).map(|(p, t)| p * t).sum();
            out[0] += self.h * w * ki[0];
            out[1] += self.h * w * ki[1];
        }
        out
    }
}

struct Integrator<'a> {
    field: &'a PlanarField,
    /// Time-direction sign applied to the field.
    dir: f64,
    rtol: f64,
    atol: f64,
}

impl Integrator<'_> {
    #[inline]
    fn rhs(&self, z: State) -> State {
        let v = self.field.eval(z[0], z[1]);
        [self.dir * v[0], self.dir * v[1]]
    }

    fn step(&self, z0: State, k1: State, h: f64) -> Step {
        let mut k = [[0.0; 2]; 7];
        k[0] = k1;
        for s in 1..7 {
            let mut z = z0;
            for (j, kj) in k.iter().enumerate().take(s) {
                z[0] += h * A[s][j] * kj[0];
                z[1] += h * A[s][j] * kj[1];
            }
            k[s] = self.rhs(z);
        }
        // Stage 7 is evaluated at the fifth-order solution (FSAL).
        let mut z1 = z0;
        for (j, kj) in k.iter().enumerate().take(6) {
            z1[0] += h * A[6][j] * kj[0];
            z1[1] += h * A[6][j] * kj[1];
        }
        k[6] = self.rhs(z1);
        let mut err = [0.0; 2];
        for (e, kj) in E.iter().zip(&k) {
            err[0] += h * e * kj[0];
            err[1] += h * e * kj[1];
        }
        Step { z0, z1, h, k, err }
    }

    fn error_norm(&self, s: &Step) -> f64 {
        let mut acc = 0.0;
        for i in 0..2 {
            let sc = self.atol + self.rtol * s.z0[i].abs().max(s.z1[i].abs());
            acc += (s.err[i] / sc).powi(2);
        }
        (acc / 2.0).sqrt()
    }

    fn initial_step(&self, z0: State, f0: State) -> f64 {
        let sc = |z: State, i: usize| self.atol + self.rtol * z[i].abs();
        let rms = |v: State, z: State| ((v[0] / sc(z, 0)).powi(2) + (v[1] / sc(z, 1)).powi(2)).sqrt() / 2f64.sqrt();
        let d0 = rms(z0, z0);
        let d1 = rms(f0, z0);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let z1 = [z0[0] + h0 * f0[0], z0[1] + h0 * f0[1]];
        let f1 = self.rhs(z1);
        let d2 = rms([f1[0] - f0[0], f1[1] - f0[1]], z0) / h0;
        let h1 = if d1.max(d2) <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / d1.max(d2)).powf(0.2) };
        (100.0 * h0).min(h1)
    }
}

/// Integrates from `(x_start, 0)` into `half` in the given time direction
/// until the orbit returns to `y = 0`.
pub fn flow_to_section(
    field: &PlanarField,
    x_start: f64,
    half: Half,
    direction: Direction,
    limits: &IntegrationLimits,
) -> Result<SectionHit, FlowError> {
    limits.validate()?;
    let scale = x_start.abs();
    let atol = if scale > 0.0 { limits.abs_tol.min(limits.rel_tol * scale) } else { limits.abs_tol };
    let ev_tol = limits.event_tol.min(atol);
    let collar = 2.0 * ev_tol;
    let integ = Integrator { field, dir: direction.sign(), rtol: limits.rel_tol, atol };
    let hs = half.sign();
    // Height measured into the requested half-plane.
    let height = |z: State| hs * z[1];

    let z0 = [x_start, 0.0];
    let f0 = integ.rhs(z0);
    if !(hs * f0[1] > 0.0) {
        return Err(FlowError::WrongLaunchDirection { q: field.eval(x_start, 0.0)[1] });
    }

    let mut t = 0.0;
    let mut z = z0;
    let mut k1 = f0;
    let mut h = integ.initial_step(z0, f0);
    let mut armed = false;
    let mut y_extreme: f64 = 0.0;
    let mut steps = 0usize;
    let mut rejected_last = false;

    loop {
        if steps >= limits.max_steps {
            return Err(FlowError::StepCapExceeded { max_steps: limits.max_steps });
        }
        if t >= limits.t_max {
            return Err(FlowError::TimeCapExceeded { t_max: limits.t_max });
        }
        h = h.min(limits.t_max - t);
        if h <= 1e-14 * t.abs().max(1e-300) {
            return Err(FlowError::StepUnderflow { t });
        }
        let step = integ.step(z, k1, h);
        steps += 1;
        let err = integ.error_norm(&step);
        if !err.is_finite() || !step.z1[0].is_finite() || !step.z1[1].is_finite() {
            h *= 0.2;
            rejected_last = true;
            if h < 1e-300 {
                return Err(FlowError::NonFinite { t });
            }
            continue;
        }
        if err > 1.0 {
            h *= (0.9 * err.powf(-0.2)).max(0.2);
            rejected_last = true;
            continue;
        }

        // Accepted step: look for the return inside it.
        let y1 = height(step.z1);
        let mut bracket: Option<(f64, f64)> = None;
        if armed {
            if y1 <= 0.0 {
                bracket = Some(first_nonpositive(&step, &height, 0.0));
            } else if let Some(b) = interior_dip(&step, &height) {
                bracket = Some(b);
            }
        } else if y1 > collar {
            armed = true;
            if let Some(b) = interior_dip(&step, &height) {
                // Left the collar and came back inside one step.
                let peak = peak_theta(&step, &height);
                if b.0 >= peak && height(step.dense(peak)) > collar {
                    bracket = Some(b);
                }
            }
        } else if y1 < -ev_tol {
            let peak = peak_theta(&step, &height);
            if height(step.dense(peak)) > collar {
                armed = true;
                bracket = Some(first_nonpositive(&step, &height, peak));
            } else {
                return Err(FlowError::HalfPlaneViolation { t: t + h });
            }
        }
        y_extreme = y_extreme.max(y1.abs());

        if let Some((lo, hi)) = bracket {
            let (zh, th) = localize(&integ, &step, &height, lo, hi, ev_tol);
            let time = direction.sign() * (t + th);
            if time == 0.0 {
                return Err(FlowError::HalfPlaneViolation { t: 0.0 });
            }
            return Ok(SectionHit { point: zh, time, steps, y_residual: zh[1], y_extreme });
        }

        t += h;
        z = step.z1;
        k1 = step.k[6];
        let grow = if err == 0.0 { 10.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 10.0) };
        h *= if rejected_last { grow.min(1.0) } else { grow };
        rejected_last = false;
    }
}

const PROBES: usize = 8;

/// Bracket `(θ_lo, θ_hi)` around the first sign change of the height after
/// `from`, scanning the dense output on a fixed sub-grid.
fn first_nonpositive(step: &Step, height: &impl Fn(State) -> f64, from: f64) -> (f64, f64) {
    let mut prev = from;
    for i in 1..=PROBES {
        let th = from + (1.0 - from) * i as f64 / PROBES as f64;
        if height(step.dense(th)) <= 0.0 {
            return (prev, th);
        }
        prev = th;
    }
    (prev, 1.0)
}

/// Detects an orbit that dips below the line and comes back within one step.
///
/// Probes catch wide dips; shallow or short ones are found by minimizing
/// the dense output around every probe that is a local minimum.
fn interior_dip(step: &Step, height: &impl Fn(State) -> f64) -> Option<(f64, f64)> {
    let theta = |i: usize| i as f64 / PROBES as f64;
    let mut vals = [0.0; PROBES + 1];
    for (i, v) in vals.iter_mut().enumerate() {
        *v = height(step.dense(theta(i)));
        if i > 0 && i < PROBES && *v <= 0.0 {
            return Some((theta(i - 1), theta(i)));
        }
    }
    for i in 0..=PROBES {
        let left = i.saturating_sub(1);
        let right = (i + 1).min(PROBES);
        if vals[i] > vals[left] || vals[i] > vals[right] {
            continue;
        }
        let (lo, hi) = (theta(left), theta(right));
        let (th, v) = golden_min(|th| height(step.dense(th)), lo, hi);
        if v <= 0.0 {
            return Some((lo, th));
        }
    }
    None
}

fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    const G: f64 = 0.618_033_988_749_894_8;
    let mut c = b - G * (b - a);
    let mut d = a + G * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..80 {
        if fc <= 0.0 {
            return (c, fc);
        }
        if fd <= 0.0 {
            return (d, fd);
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - G * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + G * (b - a);
            fd = f(d);
        }
        if b - a < 1e-15 {
            break;
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

fn peak_theta(step: &Step, height: &impl Fn(State) -> f64) -> f64 {
    (1..PROBES)
        .map(|i| i as f64 / PROBES as f64)
        .fold((0.0, f64::NEG_INFINITY), |best, th| {
            let v = height(step.dense(th));
            if v > best.1 {
                (th, v)
            } else {
                best
            }
        })
        .0
}

/// Locates the crossing on the dense output, then polishes it with exact
/// Runge–Kutta sub-steps and Newton corrections in time.
fn localize(
    integ: &Integrator<'_>,
    step: &Step,
    height: &impl Fn(State) -> f64,
    lo: f64,
    hi: f64,
    ev_tol: f64,
) -> (State, f64) {
    let g = |th: f64| -> Result<f64, std::convert::Infallible> { Ok(height(step.dense(th))) };
    let theta = match brent(g, lo, hi, None, RootTol { ftol: 0.5 * ev_tol, xtol: 1e-15, max_iter: 200 }) {
        Ok(r) => r.x,
        Err(_) => hi,
    };
    let mut tau = theta * step.h;
    let mut z = integ.step(step.z0, step.k[0], tau).z1;
    for _ in 0..4 {
        let v = integ.rhs(z);
        if v[1] == 0.0 {
            break;
        }
        let dt = -z[1] / v[1];
        if dt.abs() <= 1e-16 * tau.abs().max(1e-300) {
            break;
        }
        let zn = integ.step(z, v, dt).z1;
        if zn[1].abs() >= z[1].abs() && z[1].abs() <= ev_tol {
            break;
        }
        z = zn;
        tau += dt;
    }
    (z, tau)
}

/// `|H(hit) - H(start)|` for a polynomial first integral `H`.
pub fn invariant_drift(h: &Poly2, hit: &SectionHit, start: [f64; 2]) -> f64 {
    (h.eval(hit.point[0], hit.point[1]) - h.eval(start[0], start[1])).abs()
}
