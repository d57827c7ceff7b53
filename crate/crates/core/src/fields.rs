//! Polynomial planar fields, component classes, piecewise systems and the
//! builtin gallery.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::IntegrationLimits;
use crate::returns::{FlightForm, FlowProvider, ModelFlight, ModelMap, ModelProvider, ReturnProvider};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("coefficient table is ragged (row {row} has {len} entries, expected {expected})")]
    Ragged { row: usize, len: usize, expected: usize },
    #[error("coefficient table contains a non-finite entry")]
    NonFinite,
    #[error("unknown gallery system `{0}`")]
    UnknownSystem(String),
    #[error("unknown parameter `{param}` for `{system}`")]
    UnknownParam { system: String, param: String },
    #[error("invalid component class: {0}")]
    InvalidClass(String),
    #[error("declared {declared} contradicts the field's jet: {reason}")]
    Validation { declared: String, reason: String },
    #[error("invalid window ({0}, {1}): need 0 < x_floor < x0")]
    Window(f64, f64),
    #[error("invalid model: {0}")]
    Model(String),
}

/// Bivariate polynomial stored as a dense rectangular table:
/// `coeffs[i][j]` multiplies `x^i y^j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Poly2 {
    coeffs: Vec<Vec<f64>>,
}

impl TryFrom<Vec<Vec<f64>>> for Poly2 {
    type Error = FieldError;
    fn try_from(coeffs: Vec<Vec<f64>>) -> Result<Self, FieldError> {
        Poly2::new(coeffs)
    }
}

impl From<Poly2> for Vec<Vec<f64>> {
    fn from(p: Poly2) -> Self {
        p.coeffs
    }
}

impl Poly2 {
    pub fn new(coeffs: Vec<Vec<f64>>) -> Result<Self, FieldError> {
        let width = coeffs.first().map_or(0, Vec::len);
        for (row, r) in coeffs.iter().enumerate() {
            if r.len() != width {
                return Err(FieldError::Ragged { row, len: r.len(), expected: width });
            }
            if r.iter().any(|c| !c.is_finite()) {
                return Err(FieldError::NonFinite);
            }
        }
        if coeffs.is_empty() || width == 0 {
            return Ok(Poly2 { coeffs: vec![vec![0.0]] });
        }
        Ok(Poly2 { coeffs })
    }

    /// Builds a polynomial from `(i, j, c)` triples meaning `c x^i y^j`.
    pub fn from_terms(terms: &[(usize, usize, f64)]) -> Self {
        let nx = terms.iter().map(|t| t.0).max().unwrap_or(0) + 1;
        let ny = terms.iter().map(|t| t.1).max().unwrap_or(0) + 1;
        let mut coeffs = vec![vec![0.0; ny]; nx];
        for &(i, j, c) in terms {
            coeffs[i][j] += c;
        }
        Poly2 { coeffs }
    }

    pub fn coeff(&self, i: usize, j: usize) -> f64 {
        self.coeffs.get(i).and_then(|r| r.get(j)).copied().unwrap_or(0.0)
    }

    pub fn table(&self) -> &[Vec<f64>] {
        &self.coeffs
    }

    /// Highest total degree carrying a nonzero coefficient.
    pub fn degree(&self) -> usize {
        let mut deg = 0;
        for (i, row) in self.coeffs.iter().enumerate() {
            for (j, c) in row.iter().enumerate() {
                if *c != 0.0 {
                    deg = deg.max(i + j);
                }
            }
        }
        deg
    }

    /// Nested Horner evaluation, first in `y` then in `x`.
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, row| acc * x + row.iter().rev().fold(0.0, |a, c| a * y + c))
    }

    /// `p(x, -y)`.
    pub fn reflect_y(&self) -> Self {
        let coeffs = self
            .coeffs
            .iter()
            .map(|row| row.iter().enumerate().map(|(j, c)| if j % 2 == 1 { -c } else { *c }).collect())
            .collect();
        Poly2 { coeffs }
    }

    pub fn scaled(&self, k: f64) -> Self {
        Poly2 { coeffs: self.coeffs.iter().map(|r| r.iter().map(|c| c * k).collect()).collect() }
    }
}

/// Polynomial planar vector field `(P, Q)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanarField {
    #[serde(rename = "P")]
    pub p: Poly2,
    #[serde(rename = "Q")]
    pub q: Poly2,
}

impl PlanarField {
    pub fn new(p: Poly2, q: Poly2) -> Self {
        Self { p, q }
    }

    pub fn max_degree(&self) -> usize {
        self.p.degree().max(self.q.degree())
    }

    #[inline]
    pub fn eval(&self, x: f64, y: f64) -> [f64; 2] {
        [self.p.eval(x, y), self.q.eval(x, y)]
    }

    /// Image under the reflection `(x, y) -> (x, -y)`; turns a lower-half
    /// component into an upper-half one.
    pub fn reflected(&self) -> Self {
        Self { p: self.p.reflect_y(), q: self.q.reflect_y().scaled(-1.0) }
    }
}

/// `eval_field` in free-function form.
pub fn eval_field(field: &PlanarField, p: [f64; 2]) -> [f64; 2] {
    field.eval(p[0], p[1])
}

/// Which monodromy condition a nilpotent focus satisfies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Monodromy {
    /// `beta > n - 1` or `g = 0`.
    I,
    /// `beta = n - 1` with `b^2 - 4 a n < 0`.
    Ii,
}

/// Local (or semi-local) object a component field presents to the switching
/// line, expressed for the upper half-plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ComponentClass {
    /// Invisible tangency of even multiplicity `2k`.
    Fold { multiplicity: u32 },
    /// Elementary center or focus.
    EFocus,
    /// Nilpotent center or focus with `Q = a x^{2n-1} + b x^beta y + ...`.
    NFocus { n: u32, monodromy: Monodromy, a: f64, b: f64, beta: u32 },
    /// Cusp of index `n`, characteristic orbits outside the upper half.
    Cusp { n: u32 },
    /// Periodic orbit touching the line with contact `2n`.
    PeriodicOrbit { contact: u32 },
    /// Hyperbolic polycycle tangent to the line; `r` is its graphic number.
    PolycycleTangential { r: f64 },
    /// Hyperbolic polycycle with a saddle at the origin; `ratio` is the
    /// hyperbolicity ratio of that saddle.
    PolycycleSingular { ratio: f64 },
}

impl fmt::Display for ComponentClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ComponentClass::Fold { multiplicity } => write!(f, "Fold({multiplicity})"),
            ComponentClass::EFocus => write!(f, "E-focus"),
            ComponentClass::NFocus { n, .. } => write!(f, "N-focus({n})"),
            ComponentClass::Cusp { n } => write!(f, "Cusp({n})"),
            ComponentClass::PeriodicOrbit { contact } => write!(f, "P.orbit({contact})"),
            ComponentClass::PolycycleTangential { r } => write!(f, "Polycycle(r={r})"),
            ComponentClass::PolycycleSingular { ratio } => write!(f, "Polycycle(saddle ratio={ratio})"),
        }
    }
}

impl ComponentClass {
    /// Checks the parameter invariants of the class itself.
    pub fn check(&self) -> Result<(), FieldError> {
        let bad = |m: String| Err(FieldError::InvalidClass(m));
        match *self {
            ComponentClass::Fold { multiplicity } if multiplicity < 2 || multiplicity % 2 != 0 => {
                bad(format!("fold multiplicity must be even and >= 2, got {multiplicity}"))
            }
            ComponentClass::NFocus { n, .. } if n < 2 => bad(format!("nilpotent focus needs n >= 2, got {n}")),
            ComponentClass::NFocus { n, monodromy: Monodromy::Ii, a, b, beta } => {
                if beta + 1 != n {
                    bad(format!("monodromy case (ii) needs beta = n - 1, got beta = {beta}, n = {n}"))
                } else if b * b - 4.0 * a * n as f64 >= 0.0 {
                    bad(format!("monodromy case (ii) needs b^2 - 4an < 0, got {}", b * b - 4.0 * a * n as f64))
                } else {
                    Ok(())
                }
            }
            ComponentClass::NFocus { n, monodromy: Monodromy::I, b, beta, .. } if b != 0.0 && beta < n => {
                bad(format!("monodromy case (i) needs beta > n - 1, got beta = {beta}"))
            }
            ComponentClass::Cusp { n } if n < 1 => bad("cusp index must be >= 1".into()),
            ComponentClass::PeriodicOrbit { contact } if contact < 2 || contact % 2 != 0 => {
                bad(format!("periodic orbit contact must be even and >= 2, got {contact}"))
            }
            ComponentClass::PolycycleTangential { r } if !(r > 0.0) => {
                bad(format!("graphic number must be positive, got {r}"))
            }
            ComponentClass::PolycycleSingular { ratio } if !(ratio > 0.0) => {
                bad(format!("hyperbolicity ratio must be positive, got {ratio}"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Validation {
    /// The jet of the field confirms the declaration.
    Verified,
    /// No jet test exists for this class (non-local objects).
    Unchecked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classified {
    pub class: ComponentClass,
    pub validation: Validation,
}

/// Checks a declared class against the jet of an upper-half field.
///
/// Lower-half components are classified after [`PlanarField::reflected`].
pub fn classify_component(field: &PlanarField, declared: &ComponentClass) -> Result<Classified, FieldError> {
    declared.check()?;
    let fail = |reason: String| FieldError::Validation { declared: declared.to_string(), reason };
    let a = |i, j| field.p.coeff(i, j);
    let b = |i, j| field.q.coeff(i, j);
    let singular_at_origin = || {
        if a(0, 0) != 0.0 || b(0, 0) != 0.0 {
            Err(fail("origin is not an equilibrium".into()))
        } else {
            Ok(())
        }
    };
    match *declared {
        ComponentClass::Fold { multiplicity } => {
            let k1 = multiplicity as usize - 1;
            if a(0, 0) == 0.0 {
                return Err(fail("P(0,0) = 0, the origin is not a regular contact".into()));
            }
            if let Some(i) = (0..k1).find(|&i| b(i, 0) != 0.0) {
                return Err(fail(format!("Q(x,0) has a nonzero x^{i} term below the contact order")));
            }
            let prod = a(0, 0) * b(k1, 0);
            if prod >= 0.0 {
                return Err(fail(format!("a00 * b{k1}0 = {prod} is not negative (visible or degenerate contact)")));
            }
        }
        ComponentClass::EFocus => {
            singular_at_origin()?;
            let disc = (a(1, 0) - b(0, 1)).powi(2) + 4.0 * a(0, 1) * b(1, 0);
            if disc >= 0.0 {
                return Err(fail(format!("linear part has real eigenvalues (discriminant {disc})")));
            }
        }
        ComponentClass::NFocus { n, a: an, .. } => {
            singular_at_origin()?;
            if a(1, 0) != 0.0 || b(1, 0) != 0.0 || b(0, 1) != 0.0 || a(0, 1) == 0.0 {
                return Err(fail("linear part is not of the form (-y, 0)".into()));
            }
            let top = 2 * n as usize - 1;
            if let Some(i) = (0..top).find(|&i| b(i, 0) != 0.0) {
                return Err(fail(format!("Q(x,0) has a nonzero x^{i} term below x^{top}")));
            }
            if (b(top, 0) - an).abs() > 1e-12 * an.abs().max(1.0) || b(top, 0) * -a(0, 1) <= 0.0 {
                return Err(fail(format!("coefficient of x^{top} in Q is {}, declared a = {an}", b(top, 0))));
            }
        }
        ComponentClass::Cusp { n } => {
            singular_at_origin()?;
            if a(1, 0) != 0.0 || a(0, 1) != 0.0 || b(0, 1) != 0.0 || b(1, 0) == 0.0 {
                return Err(fail("linear part is not of the form (0, b10 x)".into()));
            }
            let top = 2 * n as usize;
            if let Some(j) = (0..top).find(|&j| a(0, j) != 0.0) {
                return Err(fail(format!("P(0,y) has a nonzero y^{j} term below y^{top}")));
            }
            if a(0, top) * b(1, 0) >= 0.0 {
                return Err(fail("cusp is oriented with characteristic orbits in the upper half".into()));
            }
        }
        ComponentClass::PeriodicOrbit { .. }
        | ComponentClass::PolycycleTangential { .. }
        | ComponentClass::PolycycleSingular { .. } => {
            return Ok(Classified { class: declared.clone(), validation: Validation::Unchecked });
        }
    }
    Ok(Classified { class: declared.clone(), validation: Validation::Verified })
}

/// Interval `(x_floor, x0)` of the switching line on which both half-return
/// maps are assumed well defined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct Window {
    pub x_floor: f64,
    pub x0: f64,
}

impl Window {
    pub fn new(x_floor: f64, x0: f64) -> Result<Self, FieldError> {
        if !(x_floor > 0.0 && x0 > x_floor && x0.is_finite()) {
            return Err(FieldError::Window(x_floor, x0));
        }
        Ok(Self { x_floor, x0 })
    }

    pub fn contains(&self, x: f64) -> bool {
        x > self.x_floor && x < self.x0
    }
}

impl Default for Window {
    fn default() -> Self {
        Self { x_floor: 1e-6, x0: 0.5 }
    }
}

impl TryFrom<[f64; 2]> for Window {
    type Error = FieldError;
    fn try_from(v: [f64; 2]) -> Result<Self, FieldError> {
        Window::new(v[0], v[1])
    }
}

impl From<Window> for [f64; 2] {
    fn from(w: Window) -> Self {
        [w.x_floor, w.x0]
    }
}

/// One half of a piecewise system: how its returns are computed and what it is.
#[derive(Debug, Clone)]
pub struct Component {
    pub provider: ReturnProvider,
    pub class: Option<ComponentClass>,
    /// Polynomial first integral of the flow, when one is known.
    pub first_integral: Option<Poly2>,
}

/// The family `Z_b`: the upper field translated by `b` along `y = 0`, glued
/// to the fixed lower field.
#[derive(Debug, Clone)]
pub struct PiecewiseSystem {
    pub name: String,
    pub upper: Component,
    pub lower: Component,
    pub window: Window,
}

impl PiecewiseSystem {
    pub fn new(
        name: impl Into<String>,
        upper: Component,
        lower: Component,
        window: Window,
    ) -> Result<Self, FieldError> {
        let sys = Self { name: name.into(), upper, lower, window };
        sys.validate_classes()?;
        Ok(sys)
    }

    fn validate_classes(&self) -> Result<(), FieldError> {
        for (comp, lower) in [(&self.upper, false), (&self.lower, true)] {
            if let Some(class) = &comp.class {
                match &comp.provider {
                    ReturnProvider::Flow(fp) => {
                        let f = if lower { fp.field.reflected() } else { fp.field.clone() };
                        classify_component(&f, class)?;
                    }
                    ReturnProvider::Model(_) => class.check()?,
                }
            }
        }
        Ok(())
    }

    pub fn classes(&self) -> Option<(ComponentClass, ComponentClass)> {
        Some((self.upper.class.clone()?, self.lower.class.clone()?))
    }

    /// Replaces the integration limits of every flow-backed side.
    pub fn with_limits(mut self, limits: IntegrationLimits) -> Self {
        for comp in [&mut self.upper, &mut self.lower] {
            if let ReturnProvider::Flow(fp) = &mut comp.provider {
                fp.limits = limits;
            }
        }
        self
    }
}

/// Serializable description of one side, as found in JSON configs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "lowercase")]
pub enum SideDescriptor {
    Flow {
        #[serde(flatten)]
        field: PlanarField,
        #[serde(default)]
        class: Option<ComponentClass>,
        #[serde(default)]
        first_integral: Option<Poly2>,
    },
    Model {
        phi: ModelMap,
        tau: ModelFlight,
        #[serde(default)]
        class: Option<ComponentClass>,
    },
}

/// `{"upper": ..., "lower": ..., "window": [x_floor, x0]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemDescriptor {
    #[serde(default)]
    pub name: Option<String>,
    pub upper: SideDescriptor,
    pub lower: SideDescriptor,
    #[serde(default)]
    pub window: Window,
}

impl SystemDescriptor {
    pub fn build(&self, limits: IntegrationLimits) -> Result<PiecewiseSystem, FieldError> {
        let side = |d: &SideDescriptor| -> Result<Component, FieldError> {
            Ok(match d {
                SideDescriptor::Flow { field, class, first_integral } => Component {
                    provider: ReturnProvider::Flow(FlowProvider { field: field.clone(), limits }),
                    class: class.clone(),
                    first_integral: first_integral.clone(),
                },
                SideDescriptor::Model { phi, tau, class } => {
                    let m = ModelProvider::new(phi.clone(), *tau).map_err(FieldError::Model)?;
                    Component { provider: ReturnProvider::Model(m), class: class.clone(), first_integral: None }
                }
            })
        };
        PiecewiseSystem::new(
            self.name.clone().unwrap_or_else(|| "custom".into()),
            side(&self.upper)?,
            side(&self.lower)?,
            self.window,
        )
    }
}

/// Entry of the builtin registry.
#[derive(Debug, Clone, Serialize)]
pub struct GalleryEntry {
    pub name: &'static str,
    pub summary: &'static str,
    pub params: &'static [(&'static str, f64)],
}

/// Every builtin system with its default parameters.
pub const GALLERY: &[GalleryEntry] = &[
    GalleryEntry {
        name: "fold_fold_sym",
        summary: "upper (-1, 2x), lower (1, 2x); annular center, no cycle",
        params: &[],
    },
    GalleryEntry {
        name: "fold_fold_broken",
        summary: "upper (-1, 2x), lower (1, 2x+3x^2); classical square-root cycle",
        params: &[],
    },
    GalleryEntry {
        name: "efocus_fold",
        summary: "upper (eps x - y, x + eps y), lower (1, 2x+3x^2)",
        params: &[("eps", 0.1)],
    },
    GalleryEntry {
        name: "efocus_efocus",
        summary: "linear foci (eps x - y, x + eps y) on both sides",
        params: &[("eps_up", 0.0), ("eps_down", 0.0)],
    },
    GalleryEntry { name: "nfocus_fold", summary: "upper nilpotent center (-y, x^3), lower (1, 2x+3x^2)", params: &[] },
    GalleryEntry { name: "cusp_fold", summary: "upper cusp (-y^2, x), lower (1, 2x+3x^2)", params: &[] },
    GalleryEntry {
        name: "cusp_fold_broken",
        summary: "upper cusp (-y^2 + c xy, x), lower (1, 2x+3x^2)",
        params: &[("c", 1.0)],
    },
    GalleryEntry {
        name: "cusp_efocus",
        summary: "upper cusp (-y^2 + c xy, x), lower focus (eps x - y, x + eps y)",
        params: &[("c", 0.0), ("eps", 0.1)],
    },
    GalleryEntry {
        name: "circle_orbit_fold",
        summary: "upper rotation about (0,1), unit periodic orbit tangent at the origin; lower (1, 2x+3x^2)",
        params: &[],
    },
    GalleryEntry {
        name: "model_polycycle_fold",
        summary: "model: upper Dulac -x^r with log flight, lower fold -x",
        params: &[("r", 0.7), ("T0", 1.0)],
    },
    GalleryEntry {
        name: "model_polycycle_polycycle",
        summary: "model: Dulac maps -x^r on both sides with log flights",
        params: &[("r_plus", 1.4), ("r_minus", 1.25), ("T0_plus", 1.0), ("T0_minus", 1.0)],
    },
];

fn field(p: &[(usize, usize, f64)], q: &[(usize, usize, f64)]) -> PlanarField {
    PlanarField::new(Poly2::from_terms(p), Poly2::from_terms(q))
}

fn flow_side(f: PlanarField, class: ComponentClass, integral: Option<Poly2>) -> Component {
    Component {
        provider: ReturnProvider::Flow(FlowProvider { field: f, limits: IntegrationLimits::default() }),
        class: Some(class),
        first_integral: integral,
    }
}

/// The broken fold `(1, 2x + 3x^2)` used as lower half by most rows.
/// Its level curves `y = x^2 + x^3 + C` stop returning beyond `x ~ 0.33`.
fn broken_fold_below() -> Component {
    flow_side(
        field(&[(0, 0, 1.0)], &[(1, 0, 2.0), (2, 0, 3.0)]),
        ComponentClass::Fold { multiplicity: 2 },
        Some(Poly2::from_terms(&[(0, 1, 1.0), (2, 0, -1.0), (3, 0, -1.0)])),
    )
}

fn focus(eps: f64) -> PlanarField {
    field(&[(1, 0, eps), (0, 1, -1.0)], &[(1, 0, 1.0), (0, 1, eps)])
}

fn cusp(c: f64) -> PlanarField {
    field(&[(0, 2, -1.0), (1, 1, c)], &[(1, 0, 1.0)])
}

fn log_flight(t0: f64, sign: i8) -> ModelFlight {
    ModelFlight { form: FlightForm::Log { t0 }, sign }
}

fn model_side(phi: ModelMap, tau: ModelFlight, class: ComponentClass) -> Result<Component, FieldError> {
    Ok(Component {
        provider: ReturnProvider::Model(ModelProvider::new(phi, tau).map_err(FieldError::Model)?),
        class: Some(class),
        first_integral: None,
    })
}

/// Builds a gallery system; `params` overrides the defaults listed in
/// [`GALLERY`].
pub fn make_builtin(name: &str, params: &BTreeMap<String, f64>) -> Result<PiecewiseSystem, FieldError> {
    let entry = GALLERY.iter().find(|e| e.name == name).ok_or_else(|| FieldError::UnknownSystem(name.to_string()))?;
    for key in params.keys() {
        if !entry.params.iter().any(|(k, _)| k == key) {
            return Err(FieldError::UnknownParam { system: name.into(), param: key.clone() });
        }
    }
    let p = |key: &str| -> f64 {
        params
            .get(key)
            .copied()
            .unwrap_or_else(|| entry.params.iter().find(|(k, _)| *k == key).map(|(_, v)| *v).unwrap_or(f64::NAN))
    };
    let fold2 = ComponentClass::Fold { multiplicity: 2 };
    let w = |a, b| Window::new(a, b);
    let sys = match name {
        "fold_fold_sym" => PiecewiseSystem::new(
            name,
            flow_side(
                field(&[(0, 0, -1.0)], &[(1, 0, 2.0)]),
                fold2.clone(),
                Some(Poly2::from_terms(&[(0, 1, 1.0), (2, 0, 1.0)])),
            ),
            flow_side(
                field(&[(0, 0, 1.0)], &[(1, 0, 2.0)]),
                fold2,
                Some(Poly2::from_terms(&[(0, 1, 1.0), (2, 0, -1.0)])),
            ),
            Window::default(),
        ),
        "fold_fold_broken" => PiecewiseSystem::new(
            name,
            flow_side(
                field(&[(0, 0, -1.0)], &[(1, 0, 2.0)]),
                fold2,
                Some(Poly2::from_terms(&[(0, 1, 1.0), (2, 0, 1.0)])),
            ),
            broken_fold_below(),
            w(1e-6, 0.25)?,
        ),
        "efocus_fold" => {
            let eps = p("eps");
            let integral = (eps == 0.0).then(|| Poly2::from_terms(&[(2, 0, 1.0), (0, 2, 1.0)]));
            // Beyond x ~ 0.3 the unperturbed displacement of eps = 0.1 changes
            // sign again (a genuine large cycle), so the window stops short.
            PiecewiseSystem::new(
                name,
                flow_side(focus(eps), ComponentClass::EFocus, integral),
                broken_fold_below(),
                w(1e-8, 0.15)?,
            )
        }
        "efocus_efocus" => {
            let (eu, ed) = (p("eps_up"), p("eps_down"));
            let circle = |e: f64| (e == 0.0).then(|| Poly2::from_terms(&[(2, 0, 1.0), (0, 2, 1.0)]));
            PiecewiseSystem::new(
                name,
                flow_side(focus(eu), ComponentClass::EFocus, circle(eu)),
                flow_side(focus(ed), ComponentClass::EFocus, circle(ed)),
                Window::default(),
            )
        }
        "nfocus_fold" => PiecewiseSystem::new(
            name,
            flow_side(
                field(&[(0, 1, -1.0)], &[(3, 0, 1.0)]),
                ComponentClass::NFocus { n: 2, monodromy: Monodromy::I, a: 1.0, b: 0.0, beta: 0 },
                Some(Poly2::from_terms(&[(0, 2, 0.5), (4, 0, 0.25)])),
            ),
            broken_fold_below(),
            // Flight time grows like 3.7/x; the floor keeps it under the time cap.
            w(1e-5, 0.25)?,
        ),
        "cusp_fold" | "cusp_fold_broken" => {
            let c = if name == "cusp_fold" { 0.0 } else { p("c") };
            let integral = (c == 0.0).then(|| Poly2::from_terms(&[(2, 0, 0.5), (0, 3, 1.0 / 3.0)]));
            PiecewiseSystem::new(
                name,
                flow_side(cusp(c), ComponentClass::Cusp { n: 1 }, integral),
                broken_fold_below(),
                w(1e-6, 0.25)?,
            )
        }
        "cusp_efocus" => {
            let c = p("c");
            let integral = (c == 0.0).then(|| Poly2::from_terms(&[(2, 0, 0.5), (0, 3, 1.0 / 3.0)]));
            PiecewiseSystem::new(
                name,
                flow_side(cusp(c), ComponentClass::Cusp { n: 1 }, integral),
                flow_side(focus(p("eps")), ComponentClass::EFocus, None),
                w(1e-8, 0.25)?,
            )
        }
        "circle_orbit_fold" => {
            let mut upper = flow_side(
                field(&[(0, 0, 1.0), (0, 1, -1.0)], &[(1, 0, 1.0)]),
                ComponentClass::PeriodicOrbit { contact: 2 },
                Some(Poly2::from_terms(&[(2, 0, 1.0), (0, 2, 1.0), (0, 1, -2.0)])),
            );
            // The orbit of size one lands on the line at a grazing angle x, so
            // an error e in its radius moves the landing point by e / x.
            if let ReturnProvider::Flow(fp) = &mut upper.provider {
                fp.limits = IntegrationLimits { rel_tol: 1e-13, abs_tol: 1e-15, event_tol: 1e-15, ..fp.limits };
            }
            PiecewiseSystem::new(name, upper, broken_fold_below(), w(2e-5, 0.25)?)
        }
        "model_polycycle_fold" => {
            let r = p("r");
            PiecewiseSystem::new(
                name,
                model_side(
                    ModelMap::Dulac { alpha: -1.0, r, c2: 0.0, ell: 1.0 },
                    log_flight(p("T0"), 1),
                    ComponentClass::PolycycleTangential { r },
                )?,
                model_side(
                    ModelMap::SmoothSeries { coeffs: vec![-1.0] },
                    ModelFlight { form: FlightForm::Constant { t0: 0.0, c: 2.0, e: 1.0 }, sign: -1 },
                    ComponentClass::Fold { multiplicity: 2 },
                )?,
                w(1e-150, 0.5)?,
            )
        }
        "model_polycycle_polycycle" => {
            let (rp, rm) = (p("r_plus"), p("r_minus"));
            PiecewiseSystem::new(
                name,
                model_side(
                    ModelMap::Dulac { alpha: -1.0, r: rp, c2: 0.0, ell: 1.0 },
                    log_flight(p("T0_plus"), 1),
                    ComponentClass::PolycycleTangential { r: rp },
                )?,
                model_side(
                    ModelMap::Dulac { alpha: -1.0, r: rm, c2: 0.0, ell: 1.0 },
                    log_flight(p("T0_minus"), -1),
                    ComponentClass::PolycycleTangential { r: rm },
                )?,
                w(1e-150, 0.5)?,
            )
        }
        other => return Err(FieldError::UnknownSystem(other.to_string())),
    }?;
    Ok(sys)
}

/// Parses `key=value,key=value` parameter overrides.
pub fn parse_params(spec: &str) -> Result<BTreeMap<String, f64>, String> {
    let mut out = BTreeMap::new();
    for part in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (k, v) = part.split_once('=').ok_or_else(|| format!("expected key=value, got `{part}`"))?;
        let v: f64 = v.trim().parse().map_err(|e| format!("bad value for `{k}`: {e}"))?;
        out.insert(k.trim().to_string(), v);
    }
    Ok(out)
}
