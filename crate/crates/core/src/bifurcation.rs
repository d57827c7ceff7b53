//! Sign triple, displacement function of the translated family, crossing
//! cycle search, cycle period and sliding-segment attractivity.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fields::PiecewiseSystem;
use crate::flow::{flow_to_section, Direction, FlowError, Half};
use crate::numeric::{brent, geometric_grid, RootError, RootTol};
use crate::returns::{fit_local, half_return, LocalFamily, LocalFit, ReturnError, ReturnProvider, Side};

/// Orientation `δ`, stability sign `σ` of the unperturbed return and the
/// product `μ = -σδ` selecting the sign of `b` that produces a cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignTriple {
    pub delta: i8,
    pub sigma: i8,
    pub mu: i8,
}

impl SignTriple {
    pub fn new(delta: i8, sigma: i8) -> Self {
        Self { delta, sigma, mu: -sigma * delta }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignError {
    #[error("unperturbed displacement vanishes at x = {x} (|Δ0| = {value:e}); the pairing looks like a center")]
    Degenerate { x: f64, value: f64 },
    #[error("flight times at x = {x} have the same sign ({tau_up}, {tau_down})")]
    Orientation { x: f64, tau_up: f64, tau_down: f64 },
    #[error("sign data disagree across probes: {0:?}")]
    Disagreement(Vec<(f64, i8, i8)>),
    #[error(transparent)]
    Return(#[from] ReturnError),
}

/// Relative size below which `Δ0` is treated as zero.
pub const DEGENERACY_TOL: f64 = 1e-9;

/// The three probe abscissae: quarter points of the window in `ln x`.
pub fn sign_probes(system: &PiecewiseSystem) -> [f64; 3] {
    let (a, b) = (system.window.x_floor.ln(), system.window.x0.ln());
    [0.25, 0.5, 0.75].map(|t| (a + t * (b - a)).exp())
}

/// Reads `(δ, σ)` from one probe.
fn probe(system: &PiecewiseSystem, x: f64) -> Result<(i8, i8), SignError> {
    let up = half_return(&system.upper.provider, Side::Upper, x)?;
    let down = half_return(&system.lower.provider, Side::Lower, x)?;
    let delta = if up.tau < 0.0 && down.tau > 0.0 {
        1
    } else if up.tau > 0.0 && down.tau < 0.0 {
        -1
    } else {
        return Err(SignError::Orientation { x, tau_up: up.tau, tau_down: down.tau });
    };
    let d0 = f64::from(delta) * (up.phi - down.phi);
    if d0.abs() <= DEGENERACY_TOL * up.phi.abs().max(down.phi.abs()) {
        return Err(SignError::Degenerate { x, value: d0.abs() });
    }
    Ok((delta, if d0 > 0.0 { 1 } else { -1 }))
}

/// Computes the sign triple at the central probe and checks that the two
/// outer probes agree.
pub fn sign_data(system: &PiecewiseSystem) -> Result<SignTriple, SignError> {
    let xs = sign_probes(system);
    let mut seen = Vec::with_capacity(3);
    for &x in &[xs[1], xs[0], xs[2]] {
        let (d, s) = probe(system, x)?;
        seen.push((x, d, s));
    }
    if seen.iter().any(|&(_, d, s)| d != seen[0].1 || s != seen[0].2) {
        return Err(SignError::Disagreement(seen));
    }
    Ok(SignTriple::new(seen[0].1, seen[0].2))
}

/// `Δ0(x) = δ (φ⁺(x) - φ⁻(x))`, the displacement at `b = 0`.
pub fn unperturbed_displacement(system: &PiecewiseSystem, delta: i8, x: f64) -> Result<f64, ReturnError> {
    displacement(system, delta, x, 0.0)
}

/// Valid abscissae of `Δ(·, b)`: `(max(0, b) + x_floor, min(x0, x0 + b))`.
pub fn displacement_domain(system: &PiecewiseSystem, b: f64) -> (f64, f64) {
    (b.max(0.0) + system.window.x_floor, system.window.x0.min(system.window.x0 + b))
}

/// `Δ(x, b) = δ (φ⁺(x - b) + b - φ⁻(x))`.
pub fn displacement(system: &PiecewiseSystem, delta: i8, x: f64, b: f64) -> Result<f64, ReturnError> {
    let up = half_return(&system.upper.provider, Side::Upper, x - b)?;
    let down = half_return(&system.lower.provider, Side::Lower, x)?;
    Ok(f64::from(delta) * (up.phi + b - down.phi))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stability {
    Stable,
    Unstable,
}

/// A located crossing cycle of `Z_b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub b: f64,
    pub x_star: f64,
    pub period: f64,
    pub stability: Stability,
    pub delta_residual: f64,
    pub bracket: (f64, f64),
    /// Further sign changes seen by the scan beyond the first one.
    pub other_brackets: Vec<(f64, f64)>,
}

impl CycleRecord {
    /// More than one sign change was seen; the record still describes the
    /// innermost cycle.
    pub fn multiple_sign_changes(&self) -> bool {
        !self.other_brackets.is_empty()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CycleError {
    #[error("b must be finite and nonzero, got {0}")]
    InvalidB(f64),
    #[error("displacement domain ({lo}, {hi}) is empty for b = {b}")]
    EmptyDomain { b: f64, lo: f64, hi: f64 },
    #[error("no sign change of the displacement on ({lo}, {hi}) for b = {b}")]
    NoSignChange { b: f64, lo: f64, hi: f64 },
    #[error("root refinement failed: {0}")]
    Refinement(String),
    #[error(transparent)]
    Sign(#[from] SignError),
    #[error(transparent)]
    Return(#[from] ReturnError),
}

impl CycleError {
    pub fn is_no_sign_change(&self) -> bool {
        matches!(self, CycleError::NoSignChange { .. })
    }
}

/// Scan resolution for the bracket search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanOptions {
    pub max_ratio: f64,
    pub min_points: usize,
    /// Root acceptance `|Δ| <= residual_tol · x`.
    pub residual_tol: f64,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self { max_ratio: 1.05, min_points: 200, residual_tol: 1e-10 }
    }
}

/// Cycle finder bound to one system, with its sign triple computed once.
#[derive(Debug, Clone)]
pub struct CycleSearch<'a> {
    pub system: &'a PiecewiseSystem,
    pub signs: SignTriple,
    pub options: ScanOptions,
}

impl<'a> CycleSearch<'a> {
    pub fn new(system: &'a PiecewiseSystem) -> Result<Self, SignError> {
        Ok(Self { system, signs: sign_data(system)?, options: ScanOptions::default() })
    }

    /// Locates the first sign change of `Δ(·, b)` from the left of the
    /// domain and refines it.
    ///
    /// The scan runs over a geometric grid of offsets `x - max(0, b)`, so a
    /// cycle hugging the end of the sliding segment is still resolved.
    pub fn at(&self, b: f64) -> Result<CycleRecord, CycleError> {
        if !(b.is_finite() && b != 0.0) {
            return Err(CycleError::InvalidB(b));
        }
        let sys = self.system;
        let delta = self.signs.delta;
        let (lo, hi) = displacement_domain(sys, b);
        let base = b.max(0.0);
        // Adding the floor to a large base may round it away.
        let floor = if lo - base > 0.0 { lo - base } else { base * 4.0 * f64::EPSILON };
        let top = hi - base;
        if !(top > floor * (1.0 + 1e-9)) {
            return Err(CycleError::EmptyDomain { b, lo, hi });
        }
        let offsets =
            geometric_grid(floor * (1.0 + 1e-9), top * (1.0 - 1e-9), self.options.max_ratio, self.options.min_points);
        let xs: Vec<f64> = offsets.iter().map(|u| base + u).collect();
        let mut vals = Vec::with_capacity(xs.len());
        for &x in &xs {
            vals.push(displacement(sys, delta, x, b)?);
        }
        let mut brackets = Vec::new();
        for i in 1..xs.len() {
            if vals[i - 1] == 0.0 || vals[i - 1].signum() != vals[i].signum() {
                brackets.push(i);
            }
        }
        let Some(&first) = brackets.first() else {
            return Err(CycleError::NoSignChange { b, lo, hi });
        };
        let (a, c) = (xs[first - 1], xs[first]);
        let (fa, fc) = (vals[first - 1], vals[first]);
        let tol = RootTol { ftol: self.options.residual_tol * c, xtol: 4.0 * f64::EPSILON * c, max_iter: 300 };
        let root = match brent(|x| displacement(sys, delta, x, b), a, c, Some((fa, fc)), tol) {
            Ok(r) => r,
            Err(RootError::Eval(e)) => return Err(e.into()),
            Err(e) => return Err(CycleError::Refinement(format!("{e:?}"))),
        };
        let stability = if fa > 0.0 || fc < 0.0 { Stability::Stable } else { Stability::Unstable };
        let period = cycle_period(sys, b, root.x)?;
        Ok(CycleRecord {
            b,
            x_star: root.x,
            period,
            stability,
            delta_residual: root.fx.abs(),
            bracket: (a, c),
            other_brackets: brackets[1..].iter().map(|&i| (xs[i - 1], xs[i])).collect(),
        })
    }
}

/// Finds the crossing cycle of `Z_b` (computes the sign triple first).
pub fn find_crossing_cycle(system: &PiecewiseSystem, b: f64) -> Result<CycleRecord, CycleError> {
    CycleSearch::new(system)?.at(b)
}

/// `|τ⁺(x* - b)| + |τ⁻(x*)|`: the upper flight starts at the entry point
/// in the translated field's own frame.
pub fn cycle_period(system: &PiecewiseSystem, b: f64, x_star: f64) -> Result<f64, ReturnError> {
    let up = half_return(&system.upper.provider, Side::Upper, x_star - b)?;
    let down = half_return(&system.lower.provider, Side::Lower, x_star)?;
    Ok(up.tau.abs() + down.tau.abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attractivity {
    Attracting,
    Repelling,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlidingSegment {
    pub interval: (f64, f64),
    pub attractivity: Attractivity,
    /// Signs of the normal components `Q⁺`, `Q⁻` at the midpoint.
    pub q_signs: (i8, i8),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SlidingError {
    #[error("sliding segment needs b != 0")]
    ZeroB,
    #[error("normal components at the midpoint have signs ({0}, {1}): crossing region")]
    NotSliding(i8, i8),
    #[error("cannot infer the normal component of a model side: {0}")]
    Model(ReturnError),
}

/// Sign of the normal component of one side at abscissa `x` of its own frame.
///
/// Model sides have no field, so the sign is inferred from the orientation
/// of their flight: a side whose forward flow enters its half-plane at
/// `x > 0` points the other way at `x < 0`.
fn normal_sign(provider: &ReturnProvider, side: Side, x: f64) -> Result<i8, ReturnError> {
    match provider {
        ReturnProvider::Flow(fp) => {
            let q = fp.field.eval(x, 0.0)[1];
            Ok(if q > 0.0 {
                1
            } else if q < 0.0 {
                -1
            } else {
                0
            })
        }
        ReturnProvider::Model(m) => {
            let enters_forward = m.tau().sign > 0;
            // Forward entry means Q > 0 above the line, Q < 0 below it.
            let at_positive = match (side, enters_forward) {
                (Side::Upper, true) | (Side::Lower, false) => 1,
                _ => -1,
            };
            Ok(if x > 0.0 { at_positive } else { -at_positive })
        }
    }
}

/// Attractivity of the sliding segment between `0` and `b`.
pub fn sliding_segment(system: &PiecewiseSystem, b: f64) -> Result<SlidingSegment, SlidingError> {
    if b == 0.0 || !b.is_finite() {
        return Err(SlidingError::ZeroB);
    }
    let mid = 0.5 * b;
    let qp = normal_sign(&system.upper.provider, Side::Upper, mid - b).map_err(SlidingError::Model)?;
    let qm = normal_sign(&system.lower.provider, Side::Lower, mid).map_err(SlidingError::Model)?;
    let attractivity = match (qp, qm) {
        (-1, 1) => Attractivity::Attracting,
        (1, -1) => Attractivity::Repelling,
        _ => return Err(SlidingError::NotSliding(qp, qm)),
    };
    Ok(SlidingSegment { interval: (b.min(0.0), b.max(0.0)), attractivity, q_signs: (qp, qm) })
}

/// Result of following a cycle once around both half-planes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosedOrbit {
    pub start: f64,
    pub end: f64,
    pub time: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClosedOrbitError {
    #[error("closed-orbit check needs flow-backed sides")]
    NotFlow,
    #[error(transparent)]
    Flow(#[from] FlowError),
}

/// Integrates the full orbit of `Z_b` from `(x_star, 0)`: through the
/// translated upper field, then through the lower field from the landing
/// point, in one consistent time direction.
pub fn closed_orbit(system: &PiecewiseSystem, b: f64, x_star: f64) -> Result<ClosedOrbit, ClosedOrbitError> {
    let (ReturnProvider::Flow(up), ReturnProvider::Flow(down)) = (&system.upper.provider, &system.lower.provider)
    else {
        return Err(ClosedOrbitError::NotFlow);
    };
    let leg = |fp: &crate::returns::FlowProvider, x: f64, half: Half| match flow_to_section(
        &fp.field,
        x,
        half,
        Direction::Forward,
        &fp.limits,
    ) {
        Err(FlowError::WrongLaunchDirection { .. }) => {
            flow_to_section(&fp.field, x, half, Direction::Backward, &fp.limits)
        }
        other => other,
    };
    let first = leg(up, x_star - b, Half::Upper)?;
    let landing = first.point[0] + b;
    let second = leg(down, landing, Half::Lower)?;
    Ok(ClosedOrbit { start: x_star, end: second.point[0], time: first.time.abs() + second.time.abs() })
}

/// Fits the local expansion of `Δ0` on `grid` (used to read `V_N` and its
/// exponent off the measured maps).
pub fn displacement_expansion(
    system: &PiecewiseSystem,
    delta: i8,
    grid: &[f64],
    family: LocalFamily,
) -> Result<LocalFit, ReturnError> {
    let vals = grid.iter().map(|&x| unperturbed_displacement(system, delta, x)).collect::<Result<Vec<_>, _>>()?;
    fit_local(grid, &vals, family)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::make_builtin;
    use std::collections::BTreeMap;

    fn sys(name: &str) -> PiecewiseSystem {
        make_builtin(name, &BTreeMap::new()).unwrap()
    }

    #[test]
    fn fold_fold_broken_signs() {
        assert_eq!(sign_data(&sys("fold_fold_broken")).unwrap(), SignTriple { delta: -1, sigma: -1, mu: -1 });
        assert!(matches!(sign_data(&sys("fold_fold_sym")), Err(SignError::Degenerate { .. })));
        assert_eq!(sign_data(&sys("model_polycycle_polycycle")).unwrap().mu, -1);
    }

    #[test]
    fn displacement_examples() {
        let s = sys("fold_fold_sym");
        assert!(displacement(&s, -1, 0.1, 0.0).unwrap().abs() < 1e-8);
        let s = sys("model_polycycle_fold");
        let d = displacement(&s, -1, 0.2, 0.0).unwrap();
        assert!((d - -(-(0.2f64.powf(0.7)) + 0.2)).abs() < 1e-15);
    }

    #[test]
    fn fold_fold_broken_cycle() {
        let s = sys("fold_fold_broken");
        let rec = find_crossing_cycle(&s, -0.0005).unwrap();
        assert!((rec.x_star - 2f64.sqrt() * 0.0005f64.sqrt()).abs() < 0.002, "{}", rec.x_star);
        assert_eq!(rec.stability, Stability::Stable);
        assert!((rec.period / (4.0 * rec.x_star) - 1.0).abs() < 0.02);
        assert!(find_crossing_cycle(&s, 0.0005).unwrap_err().is_no_sign_change());
        let closed = closed_orbit(&s, -0.0005, rec.x_star).unwrap();
        assert!((closed.end - rec.x_star).abs() < 1e-6);
        assert!((closed.time / rec.period - 1.0).abs() < 1e-8);
    }

    #[test]
    fn sliding_examples() {
        let s = sys("fold_fold_broken");
        assert_eq!(sliding_segment(&s, -0.0005).unwrap().attractivity, Attractivity::Repelling);
        assert_eq!(sliding_segment(&s, 0.0005).unwrap().attractivity, Attractivity::Attracting);
        assert!(sliding_segment(&s, 0.0).is_err());
    }

    #[test]
    fn model_cycle_position() {
        let s = sys("model_polycycle_polycycle");
        let b = 1e-4;
        let rec = find_crossing_cycle(&s, -b).unwrap();
        // Cycle condition for the maps -x^1.4 above and -x^1.25 below,
        // solved by plain bisection.
        let g = |x: f64| x.powf(1.25) - (x + b).powf(1.4) - b;
        let (mut lo, mut hi) = (b, 0.5);
        assert!(g(lo) < 0.0 && g(hi) > 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) < 0.0 {
                lo = mid
            } else {
                hi = mid
            }
        }
        assert!((rec.x_star / lo - 1.0).abs() < 1e-9, "{} vs {lo}", rec.x_star);
    }
}
