//! Predicted scaling laws: the law table over component pairs, position
//! coefficients for smooth and Dulac-type returns, leading-term inversion of
//! Dulac maps, component constants (focus ratios, blow-up quadratures) and
//! the composition of flight times into a period law.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bifurcation::{displacement_expansion, sign_data};
use crate::fields::{ComponentClass, Monodromy, PiecewiseSystem, PlanarField};
use crate::numeric::{integrate, log_samples};
use crate::returns::{
    estimate_flight, estimate_local_coeffs, FlightForm, FlightShape, LocalFamily, ModelFlight, ModelMap, ReturnError,
    ReturnProvider, Side,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantity {
    Position,
    Period,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Predicted,
    Fitted,
}

/// Leading behavior of a quantity as `b -> 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum LawFamily {
    /// `c |b|^λ` with `λ > 0`.
    Power { c: f64, lambda: f64 },
    /// `c |b|^λ` with `λ < 0`.
    NegPower { c: f64, lambda: f64 },
    /// `-T0 ln|b| + offset`.
    Log { t0: f64, offset: f64 },
    /// `T0 + o(1)`; `correction` is the exponent of the first correction
    /// when known.
    Constant { t0: f64, correction: Option<f64> },
}

impl LawFamily {
    pub fn name(&self) -> &'static str {
        match self {
            LawFamily::Power { .. } => "power",
            LawFamily::NegPower { .. } => "neg_power",
            LawFamily::Log { .. } => "log",
            LawFamily::Constant { .. } => "constant",
        }
    }

    /// The exponent for power laws, the slope for logarithmic laws.
    pub fn exponent(&self) -> Option<f64> {
        match *self {
            LawFamily::Power { lambda, .. } | LawFamily::NegPower { lambda, .. } => Some(lambda),
            LawFamily::Log { .. } => None,
            LawFamily::Constant { correction, .. } => correction,
        }
    }

    /// The multiplicative coefficient, log slope or limit value.
    pub fn coefficient(&self) -> f64 {
        match *self {
            LawFamily::Power { c, .. } | LawFamily::NegPower { c, .. } => c,
            LawFamily::Log { t0, .. } | LawFamily::Constant { t0, .. } => t0,
        }
    }

    pub fn eval(&self, b: f64) -> f64 {
        let ab = b.abs();
        match *self {
            LawFamily::Power { c, lambda } | LawFamily::NegPower { c, lambda } => c * ab.powf(lambda),
            LawFamily::Log { t0, offset } => -t0 * ab.ln() + offset,
            LawFamily::Constant { t0, .. } => t0,
        }
    }

    /// Power law with the family chosen from the sign of the exponent.
    pub fn power(c: f64, lambda: f64) -> Self {
        if lambda < 0.0 {
            LawFamily::NegPower { c, lambda }
        } else {
            LawFamily::Power { c, lambda }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticLaw {
    #[serde(flatten)]
    pub family: LawFamily,
    pub of: Quantity,
    pub provenance: Provenance,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PredictError {
    #[error("leading displacement coefficient vanishes; the law cannot be predicted from leading terms")]
    VanishingLeading,
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("focus discriminant {0} is not negative")]
    NotFocus(f64),
    #[error("monodromy condition violated: {0}")]
    Monodromy(String),
    #[error("blow-up quadrature: {0}")]
    Quadrature(String),
    #[error("the upper entry point cancels at leading order and the lower map is unknown")]
    EntryUndetermined,
    #[error(transparent)]
    Return(#[from] ReturnError),
}

// ---------------------------------------------------------------------------
// Law table

/// Rank of a component in the law table; the higher rank of a pair decides
/// both laws.
fn rank(c: &ComponentClass) -> u8 {
    match c {
        ComponentClass::Cusp { .. } => 5,
        ComponentClass::NFocus { .. } => 4,
        ComponentClass::PolycycleTangential { .. } | ComponentClass::PolycycleSingular { .. } => 3,
        ComponentClass::PeriodicOrbit { .. } => 2,
        ComponentClass::EFocus => 1,
        ComponentClass::Fold { .. } => 0,
    }
}

/// Symbolic exponent: a number when the component data fix it, a label
/// otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SymExp {
    Value(f64),
    Label(String),
}

impl fmt::Display for SymExp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SymExp::Value(v) => write!(f, "{v:.6}"),
            SymExp::Label(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum SymbolicLaw {
    /// `|b|^exponent` (either sign).
    Power {
        exponent: SymExp,
    },
    /// `-ln|b|`.
    Log,
    Constant,
}

impl SymbolicLaw {
    pub fn family_name(&self) -> &'static str {
        match self {
            SymbolicLaw::Power { exponent: SymExp::Value(v) } if *v < 0.0 => "neg_power",
            SymbolicLaw::Power { exponent: SymExp::Label(l) } if l.starts_with('-') => "neg_power",
            SymbolicLaw::Power { .. } => "power",
            SymbolicLaw::Log => "log",
            SymbolicLaw::Constant => "constant",
        }
    }

    pub fn exponent_value(&self) -> Option<f64> {
        match self {
            SymbolicLaw::Power { exponent: SymExp::Value(v) } => Some(*v),
            _ => None,
        }
    }
}

impl fmt::Display for SymbolicLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SymbolicLaw::Power { exponent } => write!(f, "|b|^({exponent})"),
            SymbolicLaw::Log => f.write_str("-ln|b|"),
            SymbolicLaw::Constant => f.write_str("constant"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableLaw {
    pub period: SymbolicLaw,
    pub position: SymbolicLaw,
}

/// Law families for an unordered pair of component classes.
///
/// Every pair of the six component kinds has an entry, so there is no error
/// path. Exponents are filled in where the component data determine them.
pub fn table_law(up: &ComponentClass, down: &ComponentClass) -> TableLaw {
    let (hi, lo) = if rank(up) >= rank(down) { (up, down) } else { (down, up) };
    let label = |s: &str| SymbolicLaw::Power { exponent: SymExp::Label(s.into()) };
    let value = |v: f64| SymbolicLaw::Power { exponent: SymExp::Value(v) };
    let lo_is_polycycle = rank(lo) == 3;
    match *hi {
        ComponentClass::Cusp { n } => {
            let n = f64::from(n);
            TableLaw { period: value(-(2.0 * n - 1.0) / (2.0 * n + 1.0)), position: value(1.0) }
        }
        ComponentClass::NFocus { n, .. } => {
            let inv = 1.0 / f64::from(n);
            TableLaw { period: value(-inv), position: if lo_is_polycycle { label("r") } else { value(inv) } }
        }
        ComponentClass::PolycycleTangential { .. } | ComponentClass::PolycycleSingular { .. } => {
            TableLaw { period: SymbolicLaw::Log, position: label("r") }
        }
        ComponentClass::PeriodicOrbit { .. } | ComponentClass::EFocus => {
            TableLaw { period: SymbolicLaw::Constant, position: label("1/n") }
        }
        ComponentClass::Fold { multiplicity: m1 } => {
            let m2 = match *lo {
                ComponentClass::Fold { multiplicity } => multiplicity,
                _ => unreachable!("folds have the lowest rank"),
            };
            if m1 == 2 && m2 == 2 {
                TableLaw { period: value(0.5), position: value(0.5) }
            } else {
                TableLaw { period: label("1/2n"), position: label("1/2n") }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Position predictors

/// Which position formula produced a prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseTag {
    /// Smooth returns with first nonzero displacement coefficient `V_N`.
    Smooth,
    /// Dulac returns, `r_m >= 1` and `r⁺ > 1`.
    DulacUpperAboveOne,
    /// Dulac returns, `r_m >= 1` and `r⁺ = 1`.
    DulacUpperAtOne,
    /// Dulac returns with `r_M <= 1`, `r_m < 1`, solved through the inverse
    /// maps, `r⁺ < 1`.
    ReflectedUpperBelowOne,
    /// As above with `r⁺ = 1`.
    ReflectedUpperAtOne,
    /// Exponents on opposite sides of one, cycle at `x = b + o(b)`.
    MixedFollowsB,
    /// Exponents on opposite sides of one, cycle at `x = o(b)`.
    MixedSublinear,
}

impl CaseTag {
    /// Short human-readable statement of the formula used.
    pub fn formula(self) -> &'static str {
        match self {
            CaseTag::Smooth => "x0 = ((1 - a1+) / |V_N|)^(1/N), exponent 1/N",
            CaseTag::DulacUpperAboveOne => "x0 = |V1|^(-1/r_m), exponent 1/r_m",
            CaseTag::DulacUpperAtOne => "x0 = (1 - a1+) / |V1|, exponent 1",
            CaseTag::ReflectedUpperBelowOne => "x0 = -k* |W1|^(-1), W1 from the inverse maps, exponent 1",
            CaseTag::ReflectedUpperAtOne => "x0 = -k+ (1 - k+) / |W1|, W1 from the inverse maps, exponent 1",
            CaseTag::MixedFollowsB => "x = b + o(b)",
            CaseTag::MixedSublinear => "x = o(b), coefficient not determined",
        }
    }
}

/// Leading term `V x^exponent` of the unperturbed displacement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisplacementLeading {
    pub v: f64,
    pub exponent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionPrediction {
    /// `None` when only the order of the cycle is known.
    pub law: Option<AsymptoticLaw>,
    pub case_tag: CaseTag,
    pub leading: DisplacementLeading,
    /// `μ`, the sign of `b` for which the cycle exists.
    pub mu: i8,
    /// Order of the first correction relative to `|b|`, when known.
    pub remainder_order: Option<f64>,
}

fn position_law(c: f64, lambda: f64) -> AsymptoticLaw {
    AsymptoticLaw { family: LawFamily::Power { c, lambda }, of: Quantity::Position, provenance: Provenance::Predicted }
}

/// Position for smooth half-return maps: `c = ((1 - α₁⁺)/|V_N|)^{1/N}`.
///
/// `delta` only feeds the reported `μ = -sign(V_N) δ`.
pub fn predict_position_smooth(
    alpha1_plus: f64,
    v_n: f64,
    n: u32,
    delta: i8,
) -> Result<PositionPrediction, PredictError> {
    if v_n == 0.0 || !v_n.is_finite() {
        return Err(PredictError::VanishingLeading);
    }
    if alpha1_plus > 0.0 || n == 0 {
        return Err(PredictError::Invalid(format!("need a1+ <= 0 and N >= 1 (got {alpha1_plus}, {n})")));
    }
    let nf = f64::from(n);
    let c = ((1.0 - alpha1_plus) / v_n.abs()).powf(1.0 / nf);
    Ok(PositionPrediction {
        law: Some(position_law(c, 1.0 / nf)),
        case_tag: CaseTag::Smooth,
        leading: DisplacementLeading { v: v_n, exponent: nf },
        mu: -(v_n.signum() as i8) * delta,
        remainder_order: (n > 1).then(|| 2.0 / nf),
    })
}

const UNIT_TOL: f64 = 1e-12;

fn near(a: f64, b: f64) -> bool {
    (a - b).abs() <= UNIT_TOL * a.abs().max(b.abs()).max(1.0)
}

/// Leading coefficient of `Δ0` for maps `α± x^{r±}`: the side with the
/// smaller exponent dominates; equal exponents combine.
pub fn dulac_leading(alpha: (f64, f64), r: (f64, f64), delta: i8) -> DisplacementLeading {
    let d = f64::from(delta);
    let (ap, am) = alpha;
    let (rp, rm) = r;
    if near(rp, rm) {
        DisplacementLeading { v: d * (ap - am), exponent: rp.min(rm) }
    } else if rp < rm {
        DisplacementLeading { v: d * ap, exponent: rp }
    } else {
        DisplacementLeading { v: -d * am, exponent: rm }
    }
}

/// Position for Dulac-type half-return maps `φ±(x) ≈ α± x^{r±}`.
///
/// With `(r⁺-1)(r⁻-1) >= 0` the exponent is `1/r_m` when `r_m >= 1` and `1`
/// otherwise. When both exponents are at most one the coefficient is worked
/// out on the inverse maps, whose exponents `1/r` are at least one.
pub fn predict_position_dulac(alpha: (f64, f64), r: (f64, f64), delta: i8) -> Result<PositionPrediction, PredictError> {
    let (ap, am) = alpha;
    let (rp, rm) = r;
    if !(ap < 0.0 && am < 0.0 && rp > 0.0 && rm > 0.0) || (delta != 1 && delta != -1) {
        return Err(PredictError::Invalid(format!(
            "need alpha < 0, r > 0, delta = ±1 (got {alpha:?}, {r:?}, {delta})"
        )));
    }
    let leading = dulac_leading(alpha, r, delta);
    if leading.v.abs() <= UNIT_TOL {
        return Err(PredictError::VanishingLeading);
    }
    let mu = -(leading.v.signum() as i8) * delta;
    let r_min = rp.min(rm);
    let r_max = rp.max(rm);
    let mixed = (rp - 1.0) * (rm - 1.0) < 0.0 && !near(rp, 1.0) && !near(rm, 1.0);
    if mixed {
        let (tag, law) = if mu == 1 {
            (CaseTag::MixedFollowsB, Some(position_law(1.0, 1.0)))
        } else {
            (CaseTag::MixedSublinear, None)
        };
        return Ok(PositionPrediction { law, case_tag: tag, leading, mu, remainder_order: None });
    }
    let v1 = leading.v.abs();
    let (tag, c, lambda) = if r_min >= 1.0 - UNIT_TOL {
        if near(rp, 1.0) {
            (CaseTag::DulacUpperAtOne, (1.0 - ap) / v1, 1.0)
        } else {
            (CaseTag::DulacUpperAboveOne, v1.powf(-1.0 / r_min), 1.0 / r_min)
        }
    } else {
        // Inverse maps: ρ = 1/r, κ = -|α|^{-ρ}; their exponents are >= 1.
        let (kp, rhop) = dulac_invert_leading(ap, rp, true);
        let (km, rhom) = dulac_invert_leading(am, rm, true);
        let w = dulac_leading((kp, km), (rhop, rhom), delta);
        let w1 = w.v.abs();
        if w1 == 0.0 {
            return Err(PredictError::VanishingLeading);
        }
        let rho_min = 1.0 / r_max;
        // The coefficient belongs to the side whose inverse exponent is
        // smallest; on a tie it is the lower side.
        let k_star = if near(rhop, rhom) || rhom < rhop { km } else { kp };
        if near(rp, 1.0) {
            let chi = (1.0 - kp) / w1.powf(1.0 / rho_min);
            (CaseTag::ReflectedUpperAtOne, -k_star * chi.powf(rho_min), 1.0)
        } else {
            let chi = w1.powf(-1.0 / rho_min);
            (CaseTag::ReflectedUpperBelowOne, -k_star * chi.powf(rho_min), 1.0)
        }
    };
    Ok(PositionPrediction { law: Some(position_law(c, lambda)), case_tag: tag, leading, mu, remainder_order: None })
}

/// Leading term of the inverse of `D(x) = α x^r`: `D⁻¹(y) ≈ κ |y|^ρ` with
/// `ρ = 1/r`, `κ = |α|^{-ρ}`. With `reflected` the coefficient carries a
/// minus sign, describing the inverse as a map of the same orientation as
/// `D` itself.
pub fn dulac_invert_leading(alpha: f64, r: f64, reflected: bool) -> (f64, f64) {
    let rho = 1.0 / r;
    let kappa = alpha.abs().powf(-rho);
    (if reflected { -kappa } else { kappa }, rho)
}

// ---------------------------------------------------------------------------
// Component constants

/// Return ratio of an elementary focus with linear part
/// `(a10 x + a01 y, b10 x + b01 y)`.
pub fn efocus_alpha1(a10: f64, a01: f64, b10: f64, b01: f64) -> Result<f64, PredictError> {
    let disc = (a10 - b01).powi(2) + 4.0 * a01 * b10;
    if !(disc < 0.0) {
        return Err(PredictError::NotFocus(disc));
    }
    Ok((std::f64::consts::PI * (a10 + b01) / (-disc).sqrt()).exp())
}

/// Return ratio of a nilpotent focus `ẋ = -y + ..., ẏ = a x^{2n-1} + b x^β y + ...`.
pub fn nfocus_alpha1(a: f64, b: f64, n: u32, beta: u32) -> Result<f64, PredictError> {
    if !(a > 0.0) || n < 2 {
        return Err(PredictError::Monodromy(format!("need a > 0 and n >= 2 (got a = {a}, n = {n})")));
    }
    let nu = if b == 0.0 || beta + 1 > n {
        0.0
    } else if beta + 1 == n {
        if b * b - 4.0 * a * f64::from(n) >= 0.0 {
            return Err(PredictError::Monodromy(format!(
                "b^2 - 4an = {} is not negative",
                b * b - 4.0 * a * f64::from(n)
            )));
        }
        b
    } else {
        return Err(PredictError::Monodromy(format!("beta = {beta} < n - 1 with b != 0")));
    };
    if nu == 0.0 {
        return Ok(1.0);
    }
    let ni = n as i32;
    let nf = f64::from(n);
    let f = |t: f64| {
        let (s, c) = t.sin_cos();
        nu * s * s * c.powi(ni - 1) / (a * c.powi(2 * ni) + nf * s * s + nu * c.powi(ni) * s)
    };
    Ok(integrate(f, 0.0, std::f64::consts::PI, 1e-13).exp())
}

/// Constants of the half-monodromic expansion around `r = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GasullCoeffs {
    pub r1_pi: f64,
    pub r2_pi: f64,
    pub t_hat_0: f64,
    pub t_hat_prime_0: f64,
}

const FD_STEP: f64 = 1e-2;

/// Richardson-extrapolated central differences of `g` at `r = 0`, using
/// only `r != 0`: returns `(g(0), g'(0), g''(0)/2)`, the last one exact
/// only when `g(0) = 0`.
fn taylor0(g: &dyn Fn(f64) -> f64) -> (f64, f64, f64) {
    let stencil = |h: f64| {
        let (p, m) = (g(h), g(-h));
        let (p2, m2) = (g(2.0 * h), g(-2.0 * h));
        // Fourth-order central differences with g(0) eliminated.
        let d1 = (8.0 * (p - m) - (p2 - m2)) / (12.0 * h);
        let even = |a: f64, b: f64, hh: f64| (a + b) / 2.0 / (hh * hh);
        // g(h)+g(-h) = 2 g0 + h^2 g2 + h^4 g4/12 + ...
        let e1 = even(p, m, h);
        let e2 = even(p2, m2, 2.0 * h);
        let g0 = (4.0 * (p + m) - (p2 + m2)) / 6.0;
        let d2 = (4.0 * e1 - e2) / 3.0;
        (g0, d1, d2)
    };
    let h = FD_STEP;
    let (a0, a1, a2) = stencil(h);
    let (b0, b1, b2) = stencil(h / 2.0);
    // One Richardson step on the O(h^4) error.
    let ex = |coarse: f64, fine: f64| (16.0 * fine - coarse) / 15.0;
    (ex(a0, b0), ex(a1, b1), ex(a2, b2))
}

/// Running integral tabulated on a uniform grid, interpolated by cubic
/// Hermite splines from its values and (exactly known) derivatives.
struct Cumulative {
    step: f64,
    vals: Vec<f64>,
    ders: Vec<f64>,
}

impl Cumulative {
    fn build(nodes: &[f64], der: &[f64], integrand: impl Fn(f64) -> f64, tol: f64) -> Self {
        let mut vals = vec![0.0; nodes.len()];
        for k in 1..nodes.len() {
            vals[k] = vals[k - 1] + integrate(&integrand, nodes[k - 1], nodes[k], tol);
        }
        Self { step: nodes[1] - nodes[0], vals, ders: der.to_vec() }
    }

    fn last(&self) -> f64 {
        *self.vals.last().unwrap()
    }

    fn eval(&self, t: f64) -> f64 {
        let n = self.vals.len() - 1;
        let k = ((t / self.step).floor().max(0.0) as usize).min(n - 1);
        let h = self.step;
        let u = (t - k as f64 * h) / h;
        let (u2, u3) = (u * u, u * u * u);
        let h00 = 2.0 * u3 - 3.0 * u2 + 1.0;
        let h10 = u3 - 2.0 * u2 + u;
        let h01 = -2.0 * u3 + 3.0 * u2;
        let h11 = u3 - u2;
        h00 * self.vals[k] + h10 * h * self.ders[k] + h01 * self.vals[k + 1] + h11 * h * self.ders[k + 1]
    }
}

/// Evaluates the expansion constants for `dr/dθ = A/B` on `[0, π]` with
/// `A(0, θ) = 0` and `B(0, θ) > 0`; `m` is the common power of `r` removed
/// from the polar field.
///
/// With `C1, C2` the first two `r`-coefficients of `A/B` and `B0, B1` those
/// of `B`: `r1 = exp ∫C1`, `r2 = r1 ∫C2 r1`, `T̂(0) = ∫ 1/(r1^m B0)` and
/// `T̂'(0) = -∫ (r1 B1/B0 + m r2/r1) / (r1^m B0)`.
pub fn gasull_coeffs<FA, FB>(a: FA, b: FB, m: u32) -> Result<GasullCoeffs, PredictError>
where
    FA: Fn(f64, f64) -> f64,
    FB: Fn(f64, f64) -> f64,
{
    use std::f64::consts::PI;
    let coeff = |th: f64| {
        let ratio = |r: f64| a(r, th) / b(r, th);
        let (_, c1, c2) = taylor0(&ratio);
        let (b0, b1, _) = taylor0(&|r: f64| b(r, th));
        (c1, c2, b0, b1)
    };
    const GRID: usize = 1024;
    let nodes: Vec<f64> = (0..=GRID).map(|k| PI * k as f64 / GRID as f64).collect();
    let mut tab = Vec::with_capacity(nodes.len());
    for &th in &nodes {
        let c = coeff(th);
        if !(c.2 > 0.0) {
            return Err(PredictError::Quadrature(format!("B(0, θ) = {} is not positive at θ = {th}", c.2)));
        }
        tab.push(c);
    }
    for &th in nodes.iter().step_by(16) {
        let (a0, _, _) = taylor0(&|r: f64| a(r, th));
        let scale = a(FD_STEP, th).abs();
        if a0.abs() > 1e-6 * scale.max(1.0) {
            return Err(PredictError::Quadrature(format!("A(0, θ) = {a0} does not vanish at θ = {th}")));
        }
    }
    let c1 = |t: f64| coeff(t).0;
    let d_log_r1: Vec<f64> = tab.iter().map(|c| c.0).collect();
    let log_r1 = Cumulative::build(&nodes, &d_log_r1, c1, 1e-15);
    let r1 = |t: f64| log_r1.eval(t).exp();
    let d_s: Vec<f64> = tab.iter().zip(&log_r1.vals).map(|(c, l)| c.1 * l.exp()).collect();
    // s = r2 / r1
    let s = Cumulative::build(&nodes, &d_s, |t| coeff(t).1 * r1(t), 1e-14);
    let mf = f64::from(m);
    let mi = m as i32;
    let t0_integrand = |t: f64| 1.0 / (r1(t).powi(mi) * coeff(t).2);
    let t1_integrand = |t: f64| {
        let (_, _, b0, b1) = coeff(t);
        let r = r1(t);
        -(r * b1 / b0 + mf * s.eval(t)) / (r.powi(mi) * b0)
    };
    let (mut t_hat_0, mut t_hat_prime_0) = (0.0, 0.0);
    for k in 0..GRID {
        t_hat_0 += integrate(t0_integrand, nodes[k], nodes[k + 1], 1e-15);
        t_hat_prime_0 += integrate(t1_integrand, nodes[k], nodes[k + 1], 1e-13);
    }
    let r1_pi = log_r1.last().exp();
    let out = GasullCoeffs { r1_pi, r2_pi: r1_pi * s.last(), t_hat_0, t_hat_prime_0 };
    if [out.r1_pi, out.r2_pi, out.t_hat_0, out.t_hat_prime_0].iter().any(|v| !v.is_finite()) {
        return Err(PredictError::Quadrature("non-finite result".into()));
    }
    Ok(out)
}

/// Quasi-homogeneous blow-up `x = r^p cos θ`, `y = r^q sin θ` of a
/// polynomial field, with the polar field divided by `r^m`.
#[derive(Debug, Clone)]
pub struct BlowUp {
    pub field: PlanarField,
    pub p: u32,
    pub q: u32,
    /// Lowest weighted degree of the field; the polar field is `O(r^m)`.
    pub m: u32,
}

impl BlowUp {
    pub fn new(field: PlanarField, p: u32, q: u32) -> Result<Self, PredictError> {
        let mut m = i64::MAX;
        let (pi, qi) = (i64::from(p), i64::from(q));
        for (poly, own) in [(&field.p, pi), (&field.q, qi)] {
            for (i, row) in poly.table().iter().enumerate() {
                for (j, c) in row.iter().enumerate() {
                    if *c != 0.0 {
                        m = m.min(pi * i as i64 + qi * j as i64 - own);
                    }
                }
            }
        }
        if m == i64::MAX || m < 0 {
            return Err(PredictError::Invalid(format!("weights ({p}, {q}) give weighted degree {m}")));
        }
        Ok(Self { field, p, q, m: m as u32 })
    }

    fn parts(&self, r: f64, th: f64) -> (f64, f64, f64, f64, f64) {
        let (s, c) = th.sin_cos();
        let rp = r.powi(self.p as i32);
        let rq = r.powi(self.q as i32);
        let [pv, qv] = self.field.eval(rp * c, rq * s);
        let w = f64::from(self.p) * c * c + f64::from(self.q) * s * s;
        (s, c, pv, qv, w)
    }

    /// `ṙ / r^m`.
    pub fn a(&self, r: f64, th: f64) -> f64 {
        let (s, c, pv, qv, w) = self.parts(r, th);
        let num = r.powi(self.q as i32) * c * pv + r.powi(self.p as i32) * s * qv;
        num / (r.powi((self.p + self.q + self.m) as i32 - 1) * w)
    }

    /// `θ̇ / r^m`.
    pub fn b(&self, r: f64, th: f64) -> f64 {
        let (s, c, pv, qv, w) = self.parts(r, th);
        let num =
            f64::from(self.p) * r.powi(self.p as i32) * c * qv - f64::from(self.q) * r.powi(self.q as i32) * s * pv;
        num / (r.powi((self.p + self.q + self.m) as i32) * w)
    }

    pub fn coeffs(&self) -> Result<GasullCoeffs, PredictError> {
        gasull_coeffs(|r, t| self.a(r, t), |r, t| self.b(r, t), self.m)
    }

    /// Leading terms `φ(x) ≈ -r1^p x - p r1^{p-1} r2 x^{1+1/p}` and
    /// `|τ(x)| ≈ T̂0 x^{-m/p}` of the half-return from `(x, 0)`.
    pub fn half_return_terms(&self) -> Result<HalfReturnTerms, PredictError> {
        let g = self.coeffs()?;
        let p = f64::from(self.p);
        Ok(HalfReturnTerms {
            alpha1: -g.r1_pi.powf(p),
            correction: -p * g.r1_pi.powf(p - 1.0) * g.r2_pi,
            correction_exponent: 1.0 + 1.0 / p,
            flight: ModelFlight {
                form: if self.m == 0 {
                    FlightForm::Constant { t0: g.t_hat_0, c: g.t_hat_prime_0, e: 1.0 / p }
                } else {
                    FlightForm::Power { t0: g.t_hat_0, e: -f64::from(self.m) / p }
                },
                sign: 1,
            },
            coeffs: g,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfReturnTerms {
    pub alpha1: f64,
    pub correction: f64,
    pub correction_exponent: f64,
    pub flight: ModelFlight,
    pub coeffs: GasullCoeffs,
}

/// Blow-up weights for the classes with a local quasi-homogeneous
/// structure.
pub fn class_weights(class: &ComponentClass) -> Option<(u32, u32)> {
    match *class {
        ComponentClass::EFocus => Some((1, 1)),
        ComponentClass::NFocus { n, .. } => Some((1, n)),
        ComponentClass::Cusp { n } => Some((2 * n + 1, 2)),
        _ => None,
    }
}

/// Blow-up of one side's field, expressed in the upper half-plane with the
/// rotation made counterclockwise. The returned sign is the orientation of
/// the side's actual flight time.
pub fn side_blowup(field: &PlanarField, side: Side, class: &ComponentClass) -> Result<(BlowUp, i8), PredictError> {
    let (p, q) =
        class_weights(class).ok_or_else(|| PredictError::Invalid(format!("{class} has no blow-up weights")))?;
    let mut f = match side {
        Side::Upper => field.clone(),
        Side::Lower => field.reflected(),
    };
    let probe = BlowUp::new(f.clone(), p, q)?;
    let (b0, _, _) = taylor0(&|r: f64| probe.b(r, std::f64::consts::FRAC_PI_2));
    // Reflection reverses orientation, so the actual flight sign flips too.
    let mut sign: i8 = if side == Side::Upper { 1 } else { -1 };
    if b0 < 0.0 {
        f = PlanarField::new(f.p.scaled(-1.0), f.q.scaled(-1.0));
        sign = -sign;
    }
    Ok((BlowUp::new(f, p, q)?, sign))
}

// ---------------------------------------------------------------------------
// Period composition

/// Period law from the position law and the flight forms of both sides.
///
/// The lower flight is evaluated at `x ≈ c |b|^λ`; the upper one at the
/// entry point `x - b` of the translated field. When the entry cancels at
/// leading order (`λ = 1`, `c = 1`, `b > 0`) it is recovered from the
/// closing condition `φ⁺(x - b) = φ⁻(x) - b` with the lower map
/// `lower_map = (α⁻, r⁻)`.
pub fn predict_period_law(
    position: &AsymptoticLaw,
    flights: (ModelFlight, ModelFlight),
    upper_map: (f64, f64),
    lower_map: (f64, f64),
    b_sign: i8,
) -> Result<AsymptoticLaw, PredictError> {
    let LawFamily::Power { c, lambda } = position.family else {
        return Err(PredictError::Invalid("position law must be a power law".into()));
    };
    let bs = f64::from(b_sign);
    // Entry law (c_u, λ_u) of the upper flight.
    let (cu, lu) = if lambda < 1.0 - UNIT_TOL {
        (c, lambda)
    } else if !near(c, bs) {
        ((c - bs).abs(), 1.0)
    } else {
        let (am, rm) = lower_map;
        let (ap, rp) = upper_map;
        let (mag, e) = if near(rm, 1.0) {
            (am.abs() * c + bs, 1.0)
        } else if rm < 1.0 {
            (am.abs() * c.powf(rm), rm)
        } else {
            (1.0, 1.0)
        };
        if !(mag > 0.0 && ap < 0.0) {
            return Err(PredictError::EntryUndetermined);
        }
        let (kappa, rho) = dulac_invert_leading(ap, rp, false);
        (kappa * mag.powf(rho), e * rho)
    };
    let up = compose(&flights.0, cu, lu);
    let down = compose(&flights.1, c, lambda);
    Ok(AsymptoticLaw { family: combine(up, down), of: Quantity::Period, provenance: Provenance::Predicted })
}

/// `|τ(c |b|^λ)|` to leading order.
fn compose(f: &ModelFlight, c: f64, lambda: f64) -> LawFamily {
    match f.form {
        FlightForm::Constant { t0, c: k, e } => {
            if t0 > 0.0 {
                LawFamily::Constant { t0, correction: (k != 0.0).then_some(e * lambda) }
            } else {
                LawFamily::power(k * c.powf(e), e * lambda)
            }
        }
        FlightForm::Power { t0, e } => LawFamily::power(t0 * c.powf(e), e * lambda),
        FlightForm::Log { t0 } => LawFamily::Log { t0: lambda * t0, offset: -t0 * c.ln() },
    }
}

/// Exponents closer than this are treated as equal when two sides are
/// added; flight exponents measured on flows carry errors of this order.
const MERGE_TOL: f64 = 1e-3;

/// Dominant part of a sum of two leading behaviors.
fn combine(a: LawFamily, b: LawFamily) -> LawFamily {
    use LawFamily::*;
    let order = |l: &LawFamily| match l {
        NegPower { .. } => 3,
        Log { .. } => 2,
        Constant { .. } => 1,
        Power { .. } => 0,
    };
    let (hi, lo) = if order(&a) >= order(&b) { (a, b) } else { (b, a) };
    match (hi, lo) {
        (NegPower { c: c1, lambda: l1 }, NegPower { c: c2, lambda: l2 }) => {
            if (l1 - l2).abs() <= MERGE_TOL {
                NegPower { c: c1 + c2, lambda: l1 }
            } else if l1 < l2 {
                hi
            } else {
                lo
            }
        }
        (Power { c: c1, lambda: l1 }, Power { c: c2, lambda: l2 }) => {
            if (l1 - l2).abs() <= MERGE_TOL {
                Power { c: c1 + c2, lambda: l1 }
            } else if l1 < l2 {
                hi
            } else {
                lo
            }
        }
        (Log { t0: s1, offset: o1 }, Log { t0: s2, offset: o2 }) => Log { t0: s1 + s2, offset: o1 + o2 },
        (Log { t0, offset }, Constant { t0: k, .. }) => Log { t0, offset: offset + k },
        (Constant { t0: t1, correction: e1 }, Constant { t0: t2, correction: e2 }) => {
            let correction = match (e1, e2) {
                (Some(x), Some(y)) => Some(x.min(y)),
                (x, y) => x.or(y),
            };
            Constant { t0: t1 + t2, correction }
        }
        (Constant { t0, correction }, Power { lambda, .. }) => {
            Constant { t0, correction: Some(correction.map_or(lambda, |e| e.min(lambda))) }
        }
        _ => hi,
    }
}

// ---------------------------------------------------------------------------
// Whole-system prediction

/// Leading exponent and coefficient of one side's half-return map, obtained
/// from the model form, the blow-up quadrature or a local fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SideLeading {
    pub alpha: f64,
    pub r: f64,
    pub flight: ModelFlight,
    pub source: LeadingSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeadingSource {
    Model,
    Quadrature,
    LocalFit,
}

fn flight_shape(class: Option<&ComponentClass>) -> FlightShape {
    match class {
        Some(ComponentClass::EFocus) | Some(ComponentClass::PeriodicOrbit { .. }) => FlightShape::Bounded,
        Some(ComponentClass::NFocus { .. }) | Some(ComponentClass::Cusp { .. }) => FlightShape::Blowup,
        Some(ComponentClass::PolycycleTangential { .. }) | Some(ComponentClass::PolycycleSingular { .. }) => {
            FlightShape::Logarithmic
        }
        _ => FlightShape::Vanishing,
    }
}

/// Leading data of one side.
pub fn side_leading(
    provider: &ReturnProvider,
    side: Side,
    class: Option<&ComponentClass>,
    grid: &[f64],
) -> Result<SideLeading, PredictError> {
    match provider {
        ReturnProvider::Model(m) => {
            let (r, alpha) = m.phi().leading();
            Ok(SideLeading { alpha, r, flight: *m.tau(), source: LeadingSource::Model })
        }
        ReturnProvider::Flow(fp) => {
            if let Some(cls) = class.filter(|c| class_weights(c).is_some()) {
                let (bu, sign) = side_blowup(&fp.field, side, cls)?;
                let terms = bu.half_return_terms()?;
                let mut flight = terms.flight;
                flight.sign = sign;
                return Ok(SideLeading { alpha: terms.alpha1, r: 1.0, flight, source: LeadingSource::Quadrature });
            }
            let fit = estimate_local_coeffs(provider, side, grid, LocalFamily::Smooth { degree: 4 })?;
            let flight = estimate_flight(provider, side, grid, flight_shape(class))?;
            Ok(SideLeading { alpha: fit.alpha1(), r: 1.0, flight, source: LeadingSource::LocalFit })
        }
    }
}

/// Whether the Dulac-type predictor applies (some side has a non-integer
/// leading structure).
pub fn uses_dulac_route(system: &PiecewiseSystem) -> bool {
    let is_dulac = |c: &crate::fields::Component| {
        matches!(&c.provider, ReturnProvider::Model(m) if matches!(m.phi(), ModelMap::Dulac { .. }))
            || matches!(
                c.class,
                Some(ComponentClass::Cusp { .. })
                    | Some(ComponentClass::PolycycleTangential { .. })
                    | Some(ComponentClass::PolycycleSingular { .. })
            )
    };
    is_dulac(&system.upper) || is_dulac(&system.lower)
}

/// Nilpotent focus data on the upper side, for reporting its return ratio.
pub fn nfocus_ratio(class: &ComponentClass) -> Option<Result<f64, PredictError>> {
    match *class {
        ComponentClass::NFocus { n, monodromy, a, b, beta } => {
            let beta = if monodromy == Monodromy::Ii { n - 1 } else { beta };
            Some(nfocus_alpha1(a, b, n, beta))
        }
        _ => None,
    }
}

/// Absolute threshold below which a numerically estimated displacement
/// coefficient counts as zero.
pub const NUMERIC_ZERO: f64 = 1e-6;

/// Sample abscissas for local fits: two decades below `0.1 x0`, clear of
/// the floor.
pub fn prediction_grid(system: &PiecewiseSystem) -> Vec<f64> {
    let w = system.window;
    let hi = 0.1 * w.x0;
    let lo = (hi * 1e-2).max(10.0 * w.x_floor);
    let mut grid = vec![lo];
    grid.extend(log_samples(lo, hi, 22));
    grid.push(hi);
    grid
}

/// Everything the predictors can say about a system from its components.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SystemPrediction {
    pub delta: i8,
    pub mu: i8,
    pub table: Option<TableLaw>,
    pub upper: SideLeading,
    pub lower: SideLeading,
    pub position: Option<PositionPrediction>,
    /// Why no position law is available, when it is not.
    pub position_refusal: Option<String>,
    pub period: Option<AsymptoticLaw>,
    pub period_refusal: Option<String>,
}

/// First coefficient `V_N` of the unperturbed displacement that is not
/// numerically zero, from a quartic local fit.
pub fn smooth_displacement_leading(
    system: &PiecewiseSystem,
    delta: i8,
    grid: &[f64],
) -> Result<DisplacementLeading, PredictError> {
    let fit = displacement_expansion(system, delta, grid, LocalFamily::Smooth { degree: 4 })?;
    fit.coeffs
        .iter()
        .enumerate()
        .find(|(_, v)| v.abs() > NUMERIC_ZERO)
        .map(|(i, &v)| DisplacementLeading { v, exponent: (i + 1) as f64 })
        .ok_or(PredictError::VanishingLeading)
}

/// Runs the position and period predictors on a system.
///
/// Refusals (vanishing leading coefficient, undetermined entry point) are
/// reported in the result rather than as errors; only failures to evaluate
/// the components are errors.
pub fn predict_system(system: &PiecewiseSystem) -> Result<SystemPrediction, PredictError> {
    let signs = sign_data(system).map_err(|e| PredictError::Invalid(e.to_string()))?;
    let grid = prediction_grid(system);
    let upper = side_leading(&system.upper.provider, Side::Upper, system.upper.class.as_ref(), &grid)?;
    let lower = side_leading(&system.lower.provider, Side::Lower, system.lower.class.as_ref(), &grid)?;
    let table = system.classes().map(|(u, d)| table_law(&u, &d));
    let position = if uses_dulac_route(system) {
        let numeric = upper.source != LeadingSource::Model || lower.source != LeadingSource::Model;
        let lead = dulac_leading((upper.alpha, lower.alpha), (upper.r, lower.r), signs.delta);
        if numeric && lead.v.abs() <= NUMERIC_ZERO {
            Err(PredictError::VanishingLeading)
        } else {
            predict_position_dulac((upper.alpha, lower.alpha), (upper.r, lower.r), signs.delta)
        }
    } else {
        smooth_displacement_leading(system, signs.delta, &grid)
            .and_then(|lead| predict_position_smooth(upper.alpha, lead.v, lead.exponent as u32, signs.delta))
    };
    let (position, position_refusal) = match position {
        Ok(p) => (Some(p), None),
        Err(e @ (PredictError::VanishingLeading | PredictError::Invalid(_))) => (None, Some(e.to_string())),
        Err(e) => return Err(e),
    };
    let (period, period_refusal) = match position.as_ref().and_then(|p| p.law.as_ref()) {
        Some(law) => match predict_period_law(
            law,
            (upper.flight, lower.flight),
            (upper.alpha, upper.r),
            (lower.alpha, lower.r),
            signs.mu,
        ) {
            Ok(l) => (Some(l), None),
            Err(e) => (None, Some(e.to_string())),
        },
        None => (None, Some("no position law to compose with".to_string())),
    };
    Ok(SystemPrediction {
        delta: signs.delta,
        mu: signs.mu,
        table,
        upper,
        lower,
        position,
        position_refusal,
        period,
        period_refusal,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::Poly2;
    use std::f64::consts::PI;

    fn f(p: &[(usize, usize, f64)], q: &[(usize, usize, f64)]) -> PlanarField {
        PlanarField::new(Poly2::from_terms(p), Poly2::from_terms(q))
    }

    #[test]
    fn table_examples() {
        let fold = ComponentClass::Fold { multiplicity: 2 };
        let t = table_law(&fold, &fold);
        assert_eq!(t.position.exponent_value(), Some(0.5));
        let nf = ComponentClass::NFocus { n: 2, monodromy: Monodromy::I, a: 1.0, b: 0.0, beta: 0 };
        let t = table_law(&fold, &nf);
        assert_eq!(t.period.exponent_value(), Some(-0.5));
        let poly = ComponentClass::PolycycleTangential { r: 0.7 };
        assert_eq!(table_law(&poly, &fold).period, SymbolicLaw::Log);
        assert_eq!(
            table_law(&ComponentClass::PeriodicOrbit { contact: 2 }, &ComponentClass::EFocus).period,
            SymbolicLaw::Constant
        );
        assert_eq!(table_law(&ComponentClass::Cusp { n: 1 }, &fold).period.exponent_value(), Some(-1.0 / 3.0));
    }

    #[test]
    fn smooth_examples() {
        let p = predict_position_smooth(-1.0, -1.0, 2, -1).unwrap();
        let LawFamily::Power { c, lambda } = p.law.unwrap().family else { panic!() };
        assert!((c - 2f64.sqrt()).abs() < 1e-15 && lambda == 0.5);
        assert_eq!(p.mu, -1);
        assert!(predict_position_smooth(-1.0, 0.0, 2, 1).is_err());
    }

    #[test]
    fn dulac_examples() {
        let p = predict_position_dulac((-1.0, -1.0), (1.4, 1.25), -1).unwrap();
        assert_eq!(p.case_tag, CaseTag::DulacUpperAboveOne);
        let LawFamily::Power { c, lambda } = p.law.unwrap().family else { panic!() };
        assert!((c - 1.0).abs() < 1e-15 && (lambda - 0.8).abs() < 1e-15);
        let p = predict_position_dulac((-1.0, -3.0), (1.0, 2.0), 1).unwrap();
        assert_eq!(p.case_tag, CaseTag::DulacUpperAtOne);
        assert!((p.law.unwrap().family.coefficient() - 2.0).abs() < 1e-15);
        let p = predict_position_dulac((-1.0, -1.0), (0.8, 1.25), -1).unwrap();
        assert_eq!(p.case_tag, CaseTag::MixedFollowsB);
        assert!(predict_position_dulac((-1.0, -1.0), (1.0, 1.0), 1).is_err());
    }

    #[test]
    fn inversion_examples() {
        assert_eq!(dulac_invert_leading(4.0, 2.0, false), (0.5, 0.5));
        let (k, rho) = dulac_invert_leading(-1.0, 0.7, false);
        assert!((k - 1.0).abs() < 1e-15 && (rho - 10.0 / 7.0).abs() < 1e-15);
        assert_eq!(dulac_invert_leading(-2.0, 1.0, true), (-0.5, 1.0));
    }

    #[test]
    fn focus_ratios() {
        assert_eq!(efocus_alpha1(0.0, -1.0, 1.0, 0.0).unwrap(), 1.0);
        assert!((efocus_alpha1(0.1, -1.0, 1.0, 0.1).unwrap() - (0.1 * PI).exp()).abs() < 1e-14);
        assert!(efocus_alpha1(1.0, 1.0, 1.0, 0.0).is_err());
        assert_eq!(nfocus_alpha1(1.0, 0.0, 2, 0).unwrap(), 1.0);
        assert!((nfocus_alpha1(1.0, 1.0, 2, 1).unwrap() - 1.0).abs() < 1e-12);
        assert!(nfocus_alpha1(1.0, 5.0, 2, 1).is_err());
    }

    #[test]
    fn harmonic_half_period() {
        let bu = BlowUp::new(f(&[(0, 1, -1.0)], &[(1, 0, 1.0)]), 1, 1).unwrap();
        assert_eq!(bu.m, 0);
        let g = bu.coeffs().unwrap();
        assert!((g.t_hat_0 - PI).abs() < 1e-10 && (g.r1_pi - 1.0).abs() < 1e-12);
    }

    #[test]
    fn focus_r1_matches_ratio() {
        let eps = 0.1;
        let bu = BlowUp::new(f(&[(1, 0, eps), (0, 1, -1.0)], &[(1, 0, 1.0), (0, 1, eps)]), 1, 1).unwrap();
        let g = bu.coeffs().unwrap();
        assert!((g.r1_pi - efocus_alpha1(eps, -1.0, 1.0, eps).unwrap()).abs() < 1e-8);
    }

    #[test]
    fn cusp_weights() {
        let bu = BlowUp::new(f(&[(0, 2, -1.0)], &[(1, 0, 1.0)]), 3, 2).unwrap();
        assert_eq!(bu.m, 1);
        let g = bu.coeffs().unwrap();
        assert!((g.r1_pi - 1.0).abs() < 1e-10);
        assert!(g.r2_pi.abs() < 1e-8);
    }

    #[test]
    fn period_composition() {
        let pos = position_law(2f64.sqrt(), 0.5);
        let up = ModelFlight { form: FlightForm::Power { t0: 3.7, e: -1.0 }, sign: 1 };
        let down = ModelFlight { form: FlightForm::Constant { t0: 0.0, c: 2.0, e: 1.0 }, sign: -1 };
        let law = predict_period_law(&pos, (up, down), (-1.0, 1.0), (-1.0, 1.0), -1).unwrap();
        let LawFamily::NegPower { c, lambda } = law.family else { panic!("{law:?}") };
        assert!((c - 3.7 / 2f64.sqrt()).abs() < 1e-12 && (lambda + 0.5).abs() < 1e-15);
        let pos = position_law(1.0, 0.8);
        let log = |s| ModelFlight { form: FlightForm::Log { t0: 1.0 }, sign: s };
        let law = predict_period_law(&pos, (log(1), log(-1)), (-1.0, 1.4), (-1.0, 1.25), -1).unwrap();
        let LawFamily::Log { t0, .. } = law.family else { panic!() };
        assert!((t0 - 1.6).abs() < 1e-12);
    }
}
