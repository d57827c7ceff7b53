//! Half-return maps against closed-form oracles, first-integral drift,
//! reversibility and inversion round trips.

use std::collections::BTreeMap;

use proptest::prelude::*;
use pseudohopf::fields::{make_builtin, PlanarField, Poly2, Window, GALLERY};
use pseudohopf::flow::{flow_to_section, invariant_drift, Direction, FlowError, Half, IntegrationLimits};
use pseudohopf::returns::{
    estimate_local_coeffs, half_return, inverse_half_return, FlightForm, FlowProvider, LocalFamily, ModelFlight,
    ModelMap, ModelProvider, ReturnProvider, Side,
};

fn field(p: &[(usize, usize, f64)], q: &[(usize, usize, f64)]) -> PlanarField {
    PlanarField::new(Poly2::from_terms(p), Poly2::from_terms(q))
}

fn flow(p: &[(usize, usize, f64)], q: &[(usize, usize, f64)]) -> ReturnProvider {
    ReturnProvider::Flow(FlowProvider { field: field(p, q), limits: IntegrationLimits::default() })
}

fn dulac(alpha: f64, r: f64) -> ReturnProvider {
    let tau = ModelFlight { form: FlightForm::Constant { t0: 1.0, c: 0.0, e: 1.0 }, sign: 1 };
    ReturnProvider::Model(ModelProvider::new(ModelMap::Dulac { alpha, r, c2: 0.0, ell: 1.0 }, tau).unwrap())
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let flo = f(lo);
    assert!(flo * f(hi) < 0.0, "oracle bracket");
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) == (flo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Return point of the lower fold `(1, 2x + 3x^2)`: orbits are the level
/// sets `y = x^2 + x^3 + C`, so the return solves `u^2 + u^3 = x^2 + x^3`.
fn lower_fold_return(x: f64) -> f64 {
    let h = x * x + x * x * x;
    bisect(|u| u * u + u * u * u - h, -2.0 * x - 1e-3, -1e-300)
}

#[test]
fn upper_parabola_is_exact() {
    let d = half_return(&flow(&[(0, 0, -1.0)], &[(1, 0, 2.0)]), Side::Upper, 0.1).unwrap();
    assert!((d.phi + 0.1).abs() < 1e-10, "{d:?}");
    assert!((d.tau - 0.2).abs() < 1e-10, "{d:?}");
}

#[test]
fn lower_fold_matches_level_set() {
    let p = flow(&[(0, 0, 1.0)], &[(1, 0, 2.0), (2, 0, 3.0)]);
    for x in [1e-3, 1e-2, 0.1] {
        let d = half_return(&p, Side::Lower, x).unwrap();
        let u = lower_fold_return(x);
        assert!((d.phi - u).abs() < 1e-9 * x, "x={x}: {} vs {u}", d.phi);
        // x' = 1 backward in time: the flight is exactly u - x.
        assert!((d.tau - (u - x)).abs() < 1e-9 * x, "x={x}: {}", d.tau);
        assert!(d.tau < 0.0);
    }
}

#[test]
fn model_dulac_values_and_inverse() {
    let p = dulac(-1.0, 0.7);
    let d = half_return(&p, Side::Upper, 0.01).unwrap();
    assert!((d.phi + 0.01f64.powf(0.7)).abs() < 1e-15);
    let w = Window::new(1e-6, 0.5).unwrap();
    let x = inverse_half_return(&p, Side::Upper, -0.0398107170553497, &w).unwrap();
    assert!((x - 0.01).abs() < 1e-9);
    let x = inverse_half_return(&dulac(-4.0, 2.0), Side::Upper, -1.0, &Window::new(1e-6, 2.0).unwrap()).unwrap();
    assert!((x - 0.5).abs() < 1e-12);
    assert!(half_return(&p, Side::Upper, 0.0).is_err());
}

#[test]
fn local_coefficient_examples() {
    let grid: Vec<f64> = (0..12).map(|k| 1e-3 * 10f64.powf(k as f64 / 11.0 * 1.5)).collect();
    let fit = estimate_local_coeffs(
        &flow(&[(0, 0, -1.0)], &[(1, 0, 2.0)]),
        Side::Upper,
        &grid,
        LocalFamily::Smooth { degree: 3 },
    )
    .unwrap();
    assert!((fit.coeffs[0] + 1.0).abs() < 1e-6 && fit.coeffs[1].abs() < 1e-4, "{fit:?}");
    let eps: f64 = 0.1;
    let focus = flow(&[(1, 0, eps), (0, 1, -1.0)], &[(1, 0, 1.0), (0, 1, eps)]);
    let fit = estimate_local_coeffs(&focus, Side::Upper, &grid, LocalFamily::Smooth { degree: 3 }).unwrap();
    assert!((fit.alpha1() + (std::f64::consts::PI * eps).exp()).abs() < 1e-3, "{fit:?}");
    let m = ReturnProvider::Model(
        ModelProvider::new(
            ModelMap::Dulac { alpha: -2.0, r: 1.3, c2: 0.0, ell: 1.0 },
            ModelFlight { form: FlightForm::Log { t0: 1.0 }, sign: 1 },
        )
        .unwrap(),
    );
    let fit = estimate_local_coeffs(&m, Side::Upper, &grid, LocalFamily::Dulac).unwrap();
    assert!((fit.exponent.unwrap() - 1.3).abs() < 1e-6 && (fit.alpha1() + 2.0).abs() < 1e-6);
}

#[test]
fn dulac_fit_improves_as_window_shrinks() {
    let m = ReturnProvider::Model(
        ModelProvider::new(
            ModelMap::Dulac { alpha: -1.5, r: 0.8, c2: 0.7, ell: 0.5 },
            ModelFlight { form: FlightForm::Log { t0: 1.0 }, sign: 1 },
        )
        .unwrap(),
    );
    let err = |hi: f64| {
        let grid: Vec<f64> = (0..10).map(|k| hi * 10f64.powf(-2.0 * k as f64 / 9.0)).collect();
        let f = estimate_local_coeffs(&m, Side::Upper, &grid, LocalFamily::Dulac).unwrap();
        ((f.exponent.unwrap() - 0.8).abs(), (f.alpha1() + 1.5).abs())
    };
    let (wide, narrow) = (err(1e-1), err(1e-5));
    assert!(narrow.0 < wide.0 && narrow.1 < wide.1, "{wide:?} -> {narrow:?}");
}

fn launch(field: &PlanarField, x: f64, half: Half, limits: &IntegrationLimits) -> pseudohopf::flow::SectionHit {
    match flow_to_section(field, x, half, Direction::Forward, limits) {
        Err(FlowError::WrongLaunchDirection { .. }) => {
            flow_to_section(field, x, half, Direction::Backward, limits).unwrap()
        }
        other => other.unwrap(),
    }
}

#[test]
fn gallery_first_integrals_are_conserved() {
    let mut checked = 0;
    for entry in GALLERY {
        let sys = make_builtin(entry.name, &BTreeMap::new()).unwrap();
        for (comp, half) in [(&sys.upper, Half::Upper), (&sys.lower, Half::Lower)] {
            let (ReturnProvider::Flow(fp), Some(h)) = (&comp.provider, &comp.first_integral) else { continue };
            for x in [1e-3, 1e-2, 5e-2] {
                let hit = launch(&fp.field, x, half, &fp.limits);
                let drift = invariant_drift(h, &hit, [x, 0.0]);
                assert!(drift <= 1e-8, "{} {half:?} x={x}: drift {drift}", entry.name);
                checked += 1;
            }
        }
    }
    assert!(checked >= 12, "only {checked} sides carry a first integral");
}

#[test]
fn gallery_maps_decrease_on_window() {
    for entry in GALLERY {
        let sys = make_builtin(entry.name, &BTreeMap::new()).unwrap();
        let hi = sys.window.x0 * 0.5;
        let xs: Vec<f64> = (0..12).map(|k| hi * 10f64.powf(-2.0 * k as f64 / 11.0)).collect();
        for (comp, side) in [(&sys.upper, Side::Upper), (&sys.lower, Side::Lower)] {
            let phis: Vec<f64> = xs.iter().map(|&x| half_return(&comp.provider, side, x).unwrap().phi).collect();
            // xs run from large to small, so φ must increase along the list.
            assert!(phis.windows(2).all(|w| w[1] > w[0]), "{} {side:?}: {phis:?}", entry.name);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Integrating back from the landing point retraces the arc.
    #[test]
    fn reversibility(x in 1e-3f64..0.2) {
        let f = field(&[(0, 0, 1.0)], &[(1, 0, 2.0), (2, 0, 3.0)]);
        let lim = IntegrationLimits::default();
        let hit = launch(&f, x, Half::Lower, &lim);
        let back = launch(&f, hit.point[0], Half::Lower, &lim);
        prop_assert!((back.point[0] - x).abs() < 1e-8 * x.max(1e-3));
        prop_assert!((back.time + hit.time).abs() < 1e-8);
    }

    /// Reversing the field reverses time and keeps the landing point.
    #[test]
    fn time_antisymmetry(x in 1e-3f64..0.3, eps in -0.2f64..0.2) {
        let f = field(&[(1, 0, eps), (0, 1, -1.0)], &[(1, 0, 1.0), (0, 1, eps)]);
        let g = field(&[(1, 0, -eps), (0, 1, 1.0)], &[(1, 0, -1.0), (0, 1, -eps)]);
        let lim = IntegrationLimits::default();
        let a = flow_to_section(&f, x, Half::Upper, Direction::Forward, &lim).unwrap();
        let b = flow_to_section(&g, x, Half::Upper, Direction::Backward, &lim).unwrap();
        prop_assert!((a.point[0] - b.point[0]).abs() < 1e-9);
        prop_assert!((a.time + b.time).abs() < 1e-9);
    }

    /// Inverting a half-return recovers the launch point on both backends.
    #[test]
    fn inverse_round_trip(x in 1e-3f64..1e-1) {
        let w = Window::new(1e-4, 0.2).unwrap();
        let providers = [
            (flow(&[(0, 0, 1.0)], &[(1, 0, 2.0), (2, 0, 3.0)]), Side::Lower),
            (flow(&[(1, 0, 0.1), (0, 1, -1.0)], &[(1, 0, 1.0), (0, 1, 0.1)]), Side::Upper),
            (dulac(-1.0, 0.7), Side::Upper),
            (dulac(-2.0, 1.4), Side::Upper),
        ];
        for (p, side) in &providers {
            let y = half_return(p, *side, x).unwrap().phi;
            let back = inverse_half_return(p, *side, y, &w).unwrap();
            prop_assert!((back - x).abs() <= 1e-7 * x.max(1e-2), "{back} vs {x}");
        }
    }
}
