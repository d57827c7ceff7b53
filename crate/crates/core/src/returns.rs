//! Half-return maps `φ(x)` and signed flight times `τ(x)` from either the
//! integrated flow or closed-form model maps, with numerical inversion and
//! local-coefficient estimation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fields::{PlanarField, Window};
use crate::flow::{flow_to_section, Direction, FlowError, Half, IntegrationLimits};
use crate::numeric::{brent, fit_line, least_squares, log_samples, RootError, RootTol};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Upper,
    Lower,
}

impl Side {
    pub fn half(self) -> Half {
        match self {
            Side::Upper => Half::Upper,
            Side::Lower => Half::Lower,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Flow,
    Model,
}

/// Closed-form half-return map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum ModelMap {
    /// `φ(x) = Σ_i coeffs[i-1] x^i`.
    #[serde(rename = "smooth")]
    SmoothSeries { coeffs: Vec<f64> },
    /// `φ(x) = α x^r + c2 x^(r + ell)`.
    Dulac {
        alpha: f64,
        r: f64,
        #[serde(default)]
        c2: f64,
        #[serde(default = "default_ell")]
        ell: f64,
    },
}

fn default_ell() -> f64 {
    1.0
}

impl ModelMap {
    pub fn check(&self) -> Result<(), String> {
        match self {
            ModelMap::SmoothSeries { coeffs } => {
                if coeffs.is_empty() || coeffs.iter().any(|c| !c.is_finite()) {
                    return Err("smooth series needs finite coefficients".into());
                }
                if coeffs[0] > 0.0 {
                    return Err(format!("leading coefficient must be <= 0, got {}", coeffs[0]));
                }
                if coeffs.iter().all(|&c| c == 0.0) {
                    return Err("smooth series is identically zero".into());
                }
                Ok(())
            }
            ModelMap::Dulac { alpha, r, c2, ell } => {
                if !(*alpha < 0.0) || !(*r > 0.0) || !(*ell > 0.0) || !c2.is_finite() {
                    return Err(format!("Dulac map needs alpha < 0, r > 0, ell > 0 (got {alpha}, {r}, {ell})"));
                }
                Ok(())
            }
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            ModelMap::SmoothSeries { coeffs } => coeffs.iter().rev().fold(0.0, |acc, c| (acc + c) * x),
            ModelMap::Dulac { alpha, r, c2, ell } => alpha * x.powf(*r) + c2 * x.powf(r + ell),
        }
    }

    /// Leading exponent and coefficient `(r, α)` of the map.
    pub fn leading(&self) -> (f64, f64) {
        match self {
            ModelMap::SmoothSeries { coeffs } => {
                let i = coeffs.iter().position(|&c| c != 0.0).unwrap_or(0);
                ((i + 1) as f64, coeffs[i])
            }
            ModelMap::Dulac { alpha, r, .. } => (*r, *alpha),
        }
    }
}

/// Shape of `|τ(x)|` near `x = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "lowercase")]
pub enum FlightForm {
    /// `T0 + c x^e`; `T0 = 0` describes a flight that vanishes with `x`.
    Constant {
        #[serde(rename = "T0")]
        t0: f64,
        #[serde(default)]
        c: f64,
        #[serde(default = "default_ell")]
        e: f64,
    },
    /// `T0 x^e` with `e < 0`.
    Power {
        #[serde(rename = "T0")]
        t0: f64,
        e: f64,
    },
    /// `-T0 ln x`.
    Log {
        #[serde(rename = "T0")]
        t0: f64,
    },
}

/// Flight-time model together with its orientation (the sign of `τ`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelFlight {
    #[serde(flatten)]
    pub form: FlightForm,
    pub sign: i8,
}

impl ModelFlight {
    pub fn check(&self) -> Result<(), String> {
        if self.sign != 1 && self.sign != -1 {
            return Err(format!("flight sign must be +1 or -1, got {}", self.sign));
        }
        match self.form {
            FlightForm::Constant { t0, c, e } => {
                if !(t0 >= 0.0) || !c.is_finite() || !(e > 0.0) || (t0 == 0.0 && !(c > 0.0)) {
                    return Err("constant flight needs T0 >= 0, e > 0 and a positive flight".into());
                }
            }
            FlightForm::Power { t0, e } => {
                if !(t0 > 0.0) || !(e < 0.0) {
                    return Err(format!("power flight needs T0 > 0 and e < 0 (got {t0}, {e})"));
                }
            }
            FlightForm::Log { t0 } => {
                if !(t0 > 0.0) {
                    return Err(format!("log flight needs T0 > 0, got {t0}"));
                }
            }
        }
        Ok(())
    }

    pub fn magnitude(&self, x: f64) -> f64 {
        match self.form {
            FlightForm::Constant { t0, c, e } => t0 + c * x.powf(e),
            FlightForm::Power { t0, e } => t0 * x.powf(e),
            FlightForm::Log { t0 } => -t0 * x.ln(),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        f64::from(self.sign) * self.magnitude(x)
    }
}

/// Flow-backed provider: the polynomial field and how accurately to
/// integrate it.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowProvider {
    pub field: PlanarField,
    pub limits: IntegrationLimits,
}

/// Model-backed provider with validated forms.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelProvider {
    phi: ModelMap,
    tau: ModelFlight,
}

impl ModelProvider {
    pub fn new(phi: ModelMap, tau: ModelFlight) -> Result<Self, String> {
        phi.check()?;
        tau.check()?;
        Ok(Self { phi, tau })
    }

    pub fn phi(&self) -> &ModelMap {
        &self.phi
    }

    pub fn tau(&self) -> &ModelFlight {
        &self.tau
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReturnProvider {
    Flow(FlowProvider),
    Model(ModelProvider),
}

impl ReturnProvider {
    pub fn backend(&self) -> Backend {
        match self {
            ReturnProvider::Flow(_) => Backend::Flow,
            ReturnProvider::Model(_) => Backend::Model,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReturnData {
    pub x: f64,
    pub phi: f64,
    pub tau: f64,
    pub side: Side,
    pub backend: Backend,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReturnError {
    #[error("{side:?} half-return from x = {x}: {source}")]
    Flow {
        side: Side,
        x: f64,
        #[source]
        source: FlowError,
    },
    #[error("model maps are defined for x > 0 only, got {0}")]
    Domain(f64),
    #[error("{side:?} orbit from x = {x} lands at {phi}, not on the negative axis")]
    NotNegative { side: Side, x: f64, phi: f64 },
    #[error("target {y} lies outside the sampled range [{lo}, {hi}] of the map")]
    OutOfRange { y: f64, lo: f64, hi: f64 },
    #[error("map is not monotone on the window (samples {x1} and {x2})")]
    NotMonotone { x1: f64, x2: f64 },
    #[error("need at least 6 samples spanning a decade, got {count} over a ratio of {span}")]
    InsufficientSamples { count: usize, span: f64 },
    #[error("least-squares system is singular")]
    Singular,
    #[error("root search failed: {0}")]
    Root(String),
}

/// Evaluates `φ` and `τ` at `x` on one side.
///
/// Flow sides integrate into their own half-plane; the time direction is
/// found by trying forward first and falling back to backward time, whose
/// flight is reported as negative.
pub fn half_return(provider: &ReturnProvider, side: Side, x: f64) -> Result<ReturnData, ReturnError> {
    let (phi, tau) = match provider {
        ReturnProvider::Model(m) => {
            if !(x > 0.0) {
                return Err(ReturnError::Domain(x));
            }
            (m.phi.eval(x), m.tau.eval(x))
        }
        ReturnProvider::Flow(fp) => {
            let run = |dir| flow_to_section(&fp.field, x, side.half(), dir, &fp.limits);
            let hit = match run(Direction::Forward) {
                Err(FlowError::WrongLaunchDirection { .. }) => run(Direction::Backward),
                other => other,
            }
            .map_err(|source| ReturnError::Flow { side, x, source })?;
            (hit.point[0], hit.time)
        }
    };
    if !(phi < 0.0) {
        return Err(ReturnError::NotNegative { side, x, phi });
    }
    Ok(ReturnData { x, phi, tau, side, backend: provider.backend() })
}

/// Solves `φ(x) = y` for `x` in the window.
///
/// `φ` is sampled on a logarithmic grid first; the samples must decrease
/// strictly and bracket `y`.
pub fn inverse_half_return(provider: &ReturnProvider, side: Side, y: f64, window: &Window) -> Result<f64, ReturnError> {
    let lo = window.x_floor * (1.0 + 1e-9);
    let hi = window.x0 * (1.0 - 1e-9);
    let mut xs = vec![lo];
    xs.extend(log_samples(lo, hi, 30));
    xs.push(hi);
    let mut phis = Vec::with_capacity(xs.len());
    for &x in &xs {
        phis.push(half_return(provider, side, x)?.phi);
    }
    for i in 1..xs.len() {
        if !(phis[i] < phis[i - 1]) {
            return Err(ReturnError::NotMonotone { x1: xs[i - 1], x2: xs[i] });
        }
    }
    let (top, bottom) = (phis[0], *phis.last().unwrap());
    if !(y <= top && y >= bottom) {
        return Err(ReturnError::OutOfRange { y, lo: bottom, hi: top });
    }
    let k = phis.iter().position(|&p| p <= y).unwrap_or(phis.len() - 1);
    if phis[k] == y {
        return Ok(xs[k]);
    }
    let (a, b) = (xs[k - 1], xs[k]);
    let f = |x: f64| half_return(provider, side, x).map(|d| d.phi - y);
    let tol = RootTol { ftol: 0.0, xtol: 1e-15 * b, max_iter: 200 };
    match brent(f, a, b, Some((phis[k - 1] - y, phis[k] - y)), tol) {
        Ok(r) => Ok(r.x),
        Err(RootError::Eval(e)) => Err(e),
        Err(e) => Err(ReturnError::Root(format!("{e:?}"))),
    }
}

/// Which local expansion to fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum LocalFamily {
    /// `φ(x) = Σ_{i=1}^{degree} α_i x^i`, with `degree <= 5`.
    Smooth { degree: usize },
    /// `φ(x) ≈ α x^r`.
    Dulac,
    /// `φ(x) - linear·x ≈ α x^r`: the first correction beyond a known
    /// linear term.
    DulacAfterLinear { linear: f64 },
}

/// Fitted local expansion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalFit {
    pub family: LocalFamily,
    /// `α_1..α_k` for smooth fits; `[α]` for Dulac fits.
    pub coeffs: Vec<f64>,
    /// Leading exponent; `None` for smooth fits.
    pub exponent: Option<f64>,
    /// Largest relative residual `|fit - data| / |data|`.
    pub max_rel_residual: f64,
    pub samples: usize,
}

impl LocalFit {
    pub fn alpha1(&self) -> f64 {
        self.coeffs[0]
    }
}

/// Fits a local expansion to samples `(x_i, v_i)` of a map near `x = 0`.
pub fn fit_local(xs: &[f64], vs: &[f64], family: LocalFamily) -> Result<LocalFit, ReturnError> {
    let n = xs.len().min(vs.len());
    let (min, max) = xs.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
    if n < 6 || !(max / min >= 10.0 * (1.0 - 1e-9)) {
        return Err(ReturnError::InsufficientSamples { count: n, span: max / min });
    }
    match family {
        LocalFamily::Smooth { degree } => {
            let degree = degree.clamp(1, 5);
            // Fit φ(x)/x = α1 + α2 x + ... with relative weighting.
            let rows: Vec<Vec<f64>> = xs.iter().map(|&x| (0..degree).map(|k| x.powi(k as i32)).collect()).collect();
            let ys: Vec<f64> = xs.iter().zip(vs).map(|(x, v)| v / x).collect();
            let (coeffs, _) = least_squares(&rows, &ys).ok_or(ReturnError::Singular)?;
            let max_rel_residual = xs
                .iter()
                .zip(vs)
                .map(|(&x, &v)| {
                    let fit: f64 = coeffs.iter().enumerate().map(|(k, c)| c * x.powi(k as i32 + 1)).sum();
                    ((fit - v) / v).abs()
                })
                .fold(0.0, f64::max);
            Ok(LocalFit { family, coeffs, exponent: None, max_rel_residual, samples: n })
        }
        LocalFamily::Dulac | LocalFamily::DulacAfterLinear { .. } => {
            let linear = match family {
                LocalFamily::DulacAfterLinear { linear } => linear,
                _ => 0.0,
            };
            let rest: Vec<f64> = xs.iter().zip(vs).map(|(x, v)| v - linear * x).collect();
            let sign = rest[0].signum();
            if sign == 0.0 || rest.iter().any(|r| r.signum() != sign) {
                return Err(ReturnError::Singular);
            }
            let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
            let ly: Vec<f64> = rest.iter().map(|r| r.abs().ln()).collect();
            let line = fit_line(&lx, &ly).ok_or(ReturnError::Singular)?;
            let alpha = sign * line.intercept.exp();
            let max_rel_residual =
                xs.iter().zip(&rest).map(|(&x, &r)| ((alpha * x.powf(line.slope) - r) / r).abs()).fold(0.0, f64::max);
            Ok(LocalFit { family, coeffs: vec![alpha], exponent: Some(line.slope), max_rel_residual, samples: n })
        }
    }
}

/// Samples `φ` on `grid` and fits the requested local expansion.
pub fn estimate_local_coeffs(
    provider: &ReturnProvider,
    side: Side,
    grid: &[f64],
    family: LocalFamily,
) -> Result<LocalFit, ReturnError> {
    let phis = grid.iter().map(|&x| half_return(provider, side, x).map(|d| d.phi)).collect::<Result<Vec<_>, _>>()?;
    fit_local(grid, &phis, family)
}

/// Fits the flight-time shape of one side on `grid`.
///
/// `Power` and vanishing `Constant` flights come from a log-log fit of `|τ|`;
/// a nonvanishing `Constant` flight from a quadratic fit in `x`; `Log` from a
/// fit against `-ln x`.
pub fn estimate_flight(
    provider: &ReturnProvider,
    side: Side,
    grid: &[f64],
    shape: FlightShape,
) -> Result<ModelFlight, ReturnError> {
    let taus = grid.iter().map(|&x| half_return(provider, side, x).map(|d| d.tau)).collect::<Result<Vec<_>, _>>()?;
    let sign = if taus[0] > 0.0 { 1 } else { -1 };
    let mags: Vec<f64> = taus.iter().map(|t| t.abs()).collect();
    let lx: Vec<f64> = grid.iter().map(|x| x.ln()).collect();
    let form = match shape {
        FlightShape::Vanishing | FlightShape::Blowup => {
            // ln|τ| = ln c + e ln x + d x: the last column absorbs the first
            // analytic correction so that it does not bias the exponent.
            let rows: Vec<Vec<f64>> = grid.iter().zip(&lx).map(|(&x, &l)| vec![1.0, l, x]).collect();
            let ly: Vec<f64> = mags.iter().map(|m| m.ln()).collect();
            let (c, _) = least_squares(&rows, &ly).ok_or(ReturnError::Singular)?;
            if shape == FlightShape::Vanishing {
                FlightForm::Constant { t0: 0.0, c: c[0].exp(), e: c[1] }
            } else {
                FlightForm::Power { t0: c[0].exp(), e: c[1] }
            }
        }
        FlightShape::Bounded => {
            let rows: Vec<Vec<f64>> = grid.iter().map(|&x| vec![1.0, x, x * x]).collect();
            let (c, _) = least_squares(&rows, &mags).ok_or(ReturnError::Singular)?;
            FlightForm::Constant { t0: c[0], c: c[1], e: 1.0 }
        }
        FlightShape::Logarithmic => {
            let nl: Vec<f64> = lx.iter().map(|l| -l).collect();
            let line = fit_line(&nl, &mags).ok_or(ReturnError::Singular)?;
            FlightForm::Log { t0: line.slope }
        }
    };
    Ok(ModelFlight { form, sign })
}

/// Qualitative behavior of `|τ(x)|` as `x -> 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlightShape {
    Vanishing,
    Bounded,
    Blowup,
    Logarithmic,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::Poly2;

    fn flow(p: &[(usize, usize, f64)], q: &[(usize, usize, f64)]) -> ReturnProvider {
        ReturnProvider::Flow(FlowProvider {
            field: PlanarField::new(Poly2::from_terms(p), Poly2::from_terms(q)),
            limits: IntegrationLimits::default(),
        })
    }

    fn dulac(alpha: f64, r: f64) -> ReturnProvider {
        ReturnProvider::Model(
            ModelProvider::new(
                ModelMap::Dulac { alpha, r, c2: 0.0, ell: 1.0 },
                ModelFlight { form: FlightForm::Log { t0: 1.0 }, sign: 1 },
            )
            .unwrap(),
        )
    }

    #[test]
    fn flow_examples() {
        let up = flow(&[(0, 0, -1.0)], &[(1, 0, 2.0)]);
        let d = half_return(&up, Side::Upper, 0.1).unwrap();
        assert!((d.phi + 0.1).abs() < 1e-12 && (d.tau - 0.2).abs() < 1e-12);
        let low = flow(&[(0, 0, 1.0)], &[(1, 0, 2.0), (2, 0, 3.0)]);
        let d = half_return(&low, Side::Lower, 0.1).unwrap();
        assert!(d.tau < 0.0);
        assert!((d.phi + 0.11).abs() < 2e-3, "{}", d.phi);
    }

    #[test]
    fn model_examples() {
        let d = half_return(&dulac(-1.0, 0.7), Side::Upper, 0.01).unwrap();
        assert!((d.phi + 0.01f64.powf(0.7)).abs() < 1e-15);
        assert!(half_return(&dulac(-1.0, 0.7), Side::Upper, 0.0).is_err());
        let w = Window::new(1e-6, 0.9).unwrap();
        let x = inverse_half_return(&dulac(-4.0, 2.0), Side::Upper, -1.0, &Window::new(1e-6, 0.9).unwrap()).unwrap();
        assert!((x - 0.5).abs() < 1e-12);
        let x = inverse_half_return(&dulac(-1.0, 0.7), Side::Upper, -0.0398107, &w).unwrap();
        assert!((x - 0.01).abs() < 1e-6);
    }

    #[test]
    fn model_validation() {
        let bad = ModelProvider::new(
            ModelMap::Dulac { alpha: 1.0, r: 1.0, c2: 0.0, ell: 1.0 },
            ModelFlight { form: FlightForm::Log { t0: 1.0 }, sign: 1 },
        );
        assert!(bad.is_err());
        let bad = ModelFlight { form: FlightForm::Power { t0: 1.0, e: 0.5 }, sign: 1 };
        assert!(bad.check().is_err());
        let bad = ModelMap::SmoothSeries { coeffs: vec![0.5] };
        assert!(bad.check().is_err());
    }

    #[test]
    fn exact_fits() {
        let grid = log_samples(1e-3, 1e-1, 12);
        let fit = estimate_local_coeffs(&dulac(-2.0, 1.3), Side::Upper, &grid, LocalFamily::Dulac).unwrap();
        assert!((fit.exponent.unwrap() - 1.3).abs() < 1e-9 && (fit.alpha1() + 2.0).abs() < 1e-9);
        let up = flow(&[(0, 0, -1.0)], &[(1, 0, 2.0)]);
        let fit = estimate_local_coeffs(&up, Side::Upper, &grid, LocalFamily::Smooth { degree: 2 }).unwrap();
        assert!((fit.coeffs[0] + 1.0).abs() < 1e-6 && fit.coeffs[1].abs() < 1e-4);
        assert!(fit_local(&grid[..4], &[1.0; 4], LocalFamily::Dulac).is_err());
    }

    #[test]
    fn flight_shapes() {
        let grid = log_samples(1e-3, 1e-1, 10);
        let up = flow(&[(0, 0, -1.0)], &[(1, 0, 2.0)]);
        let f = estimate_flight(&up, Side::Upper, &grid, FlightShape::Vanishing).unwrap();
        let FlightForm::Constant { t0, c, e } = f.form else { panic!() };
        assert_eq!(f.sign, 1);
        assert!(t0 == 0.0 && (c - 2.0).abs() < 1e-8 && (e - 1.0).abs() < 1e-8);
    }

    #[test]
    fn descriptor_json_shapes() {
        let phi: ModelMap =
            serde_json::from_str(r#"{"form":"dulac","alpha":-1.0,"r":0.7,"c2":0.0,"ell":0.3}"#).unwrap();
        assert_eq!(phi.leading(), (0.7, -1.0));
        let tau: ModelFlight = serde_json::from_str(r#"{"form":"log","T0":1.0,"sign":1}"#).unwrap();
        assert_eq!(tau.form, FlightForm::Log { t0: 1.0 });
        let smooth: ModelMap = serde_json::from_str(r#"{"form":"smooth","coeffs":[-1.0, 0.5]}"#).unwrap();
        assert!((smooth.eval(0.1) + 0.095).abs() < 1e-15);
    }
}
