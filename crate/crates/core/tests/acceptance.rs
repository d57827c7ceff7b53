//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Every target value is produced here by an independent oracle (closed
//! forms, bisection, quadrature written in this file) rather than by the
//! code under test. Criteria listed in `KNOWN_FAILURES` are reported as
//! FAIL without failing the process; their analysis is in the README.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::fs;
use std::time::Instant;

use pseudohopf::asymptotics::{
    dulac_invert_leading, efocus_alpha1, predict_position_dulac, predict_system, BlowUp, LawFamily, Quantity,
};
use pseudohopf::bifurcation::{sign_data, unperturbed_displacement, CycleSearch};
use pseudohopf::fields::{make_builtin, PiecewiseSystem, PlanarField, Poly2, GALLERY};
use pseudohopf::flow::{flow_to_section, Direction, Half, IntegrationLimits};
use pseudohopf::returns::{
    estimate_local_coeffs, fit_local, half_return, inverse_half_return, FlowProvider, LocalFamily, ReturnProvider, Side,
};
use pseudohopf::sweepfit::{fit_constant, fit_log, fit_power, fit_window, sweep, SweepGrid, SweepResult, THREADS_ENV};

/// Criteria whose targets the implementation does not reach.
const KNOWN_FAILURES: &[u32] = &[5];

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Outcome);

fn builtin(name: &str, params: &[(&str, f64)]) -> PiecewiseSystem {
    let p: BTreeMap<String, f64> = params.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    make_builtin(name, &p).unwrap()
}

fn field(p: &[(usize, usize, f64)], q: &[(usize, usize, f64)]) -> PlanarField {
    PlanarField::new(Poly2::from_terms(p), Poly2::from_terms(q))
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| lo * (hi / lo).powf(k as f64 / (n - 1) as f64)).collect()
}

fn run_sweep(sys: &PiecewiseSystem, grid: &SweepGrid) -> Result<SweepResult, String> {
    let search = CycleSearch::new(sys).map_err(|e| e.to_string())?;
    sweep(&search, grid, search.signs.mu).map_err(|e| e.to_string())
}

fn power_of(samples: &[(f64, f64)], of: Quantity) -> Result<(f64, f64), String> {
    let f = fit_power(fit_window(samples), of).map_err(|e| e.to_string())?;
    match f.law.family {
        LawFamily::Power { c, lambda } | LawFamily::NegPower { c, lambda } => Ok((lambda, c)),
        other => Err(format!("unexpected family {other:?}")),
    }
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// `Δ0` samples of a system and a smooth local fit, giving `V_1, V_2, ...`.
fn displacement_coeffs(sys: &PiecewiseSystem, delta: i8, grid: &[f64]) -> Vec<f64> {
    let vs: Vec<f64> = grid.iter().map(|&x| unperturbed_displacement(sys, delta, x).unwrap()).collect();
    fit_local(grid, &vs, LocalFamily::Smooth { degree: 4 }).unwrap().coeffs
}

fn criterion_1() -> Outcome {
    let sys = builtin("fold_fold_broken", &[]);
    let signs = sign_data(&sys).map_err(|e| e.to_string())?;
    let grid = log_grid(1e-3, 2e-2, 12);
    let alpha1 = estimate_local_coeffs(&sys.upper.provider, Side::Upper, &grid, LocalFamily::Smooth { degree: 3 })
        .map_err(|e| e.to_string())?
        .alpha1();
    let v = displacement_coeffs(&sys, signs.delta, &grid);
    let (v1, v2) = (v[0], v[1]);
    if v1.abs() > 1e-3 || (v2 + 1.0).abs() > 1e-3 || (alpha1 + 1.0).abs() > 1e-3 {
        return Err(format!("local data alpha1={alpha1:.6} V1={v1:.2e} V2={v2:.6}"));
    }
    let c_oracle = ((1.0 - alpha1) / v2.abs()).sqrt();

    std::env::set_var(THREADS_ENV, "1");
    let start = Instant::now();
    let result = run_sweep(&sys, &SweepGrid { b_max: 1e-2, ratio: 0.5, count: 20 });
    let elapsed = start.elapsed().as_secs_f64();
    std::env::remove_var(THREADS_ENV);
    let result = result?;
    if result.samples.len() != 20 {
        return Err(format!("{} of 20 sweep points succeeded", result.samples.len()));
    }
    let (lam, c) = power_of(&result.positions(), Quantity::Position)?;
    let (lam_t, _) = power_of(&result.periods(), Quantity::Period)?;
    let ok = (lam - 0.5).abs() <= 0.02
        && ((c - c_oracle) / c_oracle).abs() <= 0.02
        && (c_oracle - 2f64.sqrt()).abs() < 2e-3
        && (lam_t - 0.5).abs() <= 0.02
        && elapsed < 10.0;
    check(
        ok,
        format!("position ({lam:.4}, {c:.4}) vs (0.5, {c_oracle:.4}); period exponent {lam_t:.4}; V2={v2:.5}; sweep {elapsed:.2}s on 1 thread"),
    )
}

fn criterion_2() -> Outcome {
    let grid = SweepGrid { b_max: 1e-2, ratio: 0.5, count: 20 };
    let mut checked = Vec::new();
    for entry in GALLERY {
        let sys = builtin(entry.name, &[]);
        let Ok(search) = CycleSearch::new(&sys) else { continue };
        let mu = search.signs.mu;
        let good = sweep(&search, &grid, mu).map_err(|e| e.to_string())?;
        if let Some(f) = good.failures.first() {
            return Err(format!("{}: b={} failed: {}", entry.name, f.b, f.error));
        }
        if let Some(r) = good.samples.iter().find(|r| r.x_star.is_nan() || r.x_star <= r.b.max(0.0)) {
            return Err(format!("{}: x*={} at b={}", entry.name, r.x_star, r.b));
        }
        for b in grid.values(-mu) {
            match search.at(b) {
                Err(e) if e.is_no_sign_change() => {}
                Err(e) => return Err(format!("{}: mirrored b={b}: {e}", entry.name)),
                Ok(r) => return Err(format!("{}: mirrored b={b} found x*={}", entry.name, r.x_star)),
            }
        }
        checked.push(entry.name);
    }
    check(checked.len() >= 8, format!("{} systems, 20/20 cycles and 20/20 NoSignChange each", checked.len()))
}

fn criterion_3() -> Outcome {
    let grid = log_grid(1e-3, 3e-2, 12);
    let mut worst: f64 = 0.0;
    for eps in [-0.1, 0.0, 0.1] {
        let p = ReturnProvider::Flow(FlowProvider {
            field: field(&[(1, 0, eps), (0, 1, -1.0)], &[(1, 0, 1.0), (0, 1, eps)]),
            limits: IntegrationLimits::default(),
        });
        let a = estimate_local_coeffs(&p, Side::Upper, &grid, LocalFamily::Smooth { degree: 3 })
            .map_err(|e| e.to_string())?
            .alpha1();
        let oracle = (PI * eps).exp();
        let formula = efocus_alpha1(eps, -1.0, 1.0, eps).map_err(|e| e.to_string())?;
        worst = worst.max(((-a - oracle) / oracle).abs()).max(((formula - oracle) / oracle).abs());
    }
    let center = builtin("efocus_efocus", &[]);
    let d0 = log_grid(1e-3, 0.1, 8)
        .into_iter()
        .map(|x| unperturbed_displacement(&center, 1, x).map(f64::abs))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?
        .into_iter()
        .fold(0.0, f64::max);
    check(worst <= 1e-3 && d0 <= 1e-8, format!("max relative alpha1 error {worst:.2e}; symmetric |Δ0| ≤ {d0:.2e}"))
}

/// `√2 ∫_{-1}^{1} dX / √(1 - X⁴)` by Gauss-Chebyshev quadrature of
/// `1/√(1 + X²)` against the weight `1/√(1 - X²)`.
fn t_star_chebyshev(n: usize) -> f64 {
    let s: f64 = (1..=n).map(|k| 1.0 / (1.0 + ((2 * k - 1) as f64 * PI / (2 * n) as f64).cos().powi(2)).sqrt()).sum();
    2f64.sqrt() * PI / n as f64 * s
}

/// The same integral as `(√2/2) B(1/4, 1/2)`, with the Beta integral
/// `∫_0^∞ t^{-3/4} (1+t)^{-3/4} dt` evaluated after `t = e^s` by the
/// trapezoidal rule, which converges geometrically for this decaying
/// analytic integrand.
fn t_star_beta() -> f64 {
    let h = 0.01;
    let mut sum = 0.0;
    let mut s: f64 = -400.0;
    while s <= 400.0 {
        let t = s.exp();
        sum += t.powf(0.25) * (1.0 + t).powf(-0.75);
        s += h;
    }
    2f64.sqrt() / 2.0 * sum * h
}

fn criterion_4() -> Outcome {
    let t_star = t_star_chebyshev(64);
    let t_beta = t_star_beta();
    if (t_star - t_beta).abs() > 1e-8 {
        return Err(format!("oracle disagreement {t_star} vs {t_beta}"));
    }
    let sys = builtin("nfocus_fold", &[]);
    let result = run_sweep(&sys, &SweepGrid::default())?;
    let (lam, _) = power_of(&result.positions(), Quantity::Position)?;
    let (lam_t, c_t) = power_of(&result.periods(), Quantity::Period)?;
    // Position coefficient x0 = ((1 - α1+)/|V2|)^(1/2) with the reversible
    // center α1+ = -1 and the fold's V2 = -1.
    let x0 = 2f64.sqrt();
    let c_oracle = t_star / x0;
    let ok = (lam - 0.5).abs() <= 0.03 && (lam_t + 0.5).abs() <= 0.03 && ((c_t - c_oracle) / c_oracle).abs() <= 0.03;
    check(
        ok,
        format!("T*={t_star:.8}; position exponent {lam:.4}; period ({lam_t:.4}, {c_t:.4}) vs (-0.5, {c_oracle:.4})"),
    )
}

fn criterion_5() -> Outcome {
    let grid = log_grid(1e-4, 1e-2, 12);
    let residue = |sys: &PiecewiseSystem| {
        estimate_local_coeffs(&sys.upper.provider, Side::Upper, &grid, LocalFamily::DulacAfterLinear { linear: -1.0 })
    };
    let broken = builtin("cusp_fold_broken", &[("c", 1.0)]);
    let fit = residue(&broken).map_err(|e| format!("no Dulac residue detected: {e}"))?;
    let r_exp = fit.exponent.unwrap_or(f64::NAN);
    if !(fit.alpha1().abs() > 1e-3 && (r_exp - 4.0 / 3.0).abs() < 0.05) {
        return Err(format!("residue {:.3e} x^{r_exp:.4} is not an x^(4/3) term", fit.alpha1()));
    }
    let result = run_sweep(&broken, &SweepGrid::default())?;
    let (lam, _) = power_of(&result.positions(), Quantity::Position)?;
    let (lam_t, _) = power_of(&result.periods(), Quantity::Period)?;

    let control = builtin("cusp_fold", &[]);
    let refused = predict_system(&control).map(|p| p.position.is_none()).unwrap_or(false);
    let ctrl = run_sweep(&control, &SweepGrid::default())?;
    let (lam_c, _) = power_of(&ctrl.positions(), Quantity::Position)?;

    let main_ok = (lam_t + 1.0 / 3.0).abs() <= 0.05 && (lam - 1.0).abs() <= 0.05;
    let control_ok = (lam_c - 0.5).abs() <= 0.03 && refused;
    check(
        main_ok && control_ok,
        format!(
            "residue {:.3}·x^{r_exp:.4}; c=1 position exponent {lam:.4} (target 1 ± 0.05), period exponent {lam_t:.4} (target -1/3 ± 0.05); control c=0 position exponent {lam_c:.4}, predictor refused: {refused}",
            fit.alpha1()
        ),
    )
}

fn criterion_6() -> Outcome {
    let sys = builtin("circle_orbit_fold", &[]);
    let mut worst: f64 = 0.0;
    for x in log_grid(1e-3, 1e-1, 15) {
        let d = half_return(&sys.upper.provider, Side::Upper, x).map_err(|e| e.to_string())?;
        worst = worst.max((d.phi + x).abs());
    }
    let result = run_sweep(&sys, &SweepGrid::default())?;
    let f = fit_constant(fit_window(&result.periods()), Quantity::Period).map_err(|e| e.to_string())?;
    let t0 = f.law.family.coefficient();
    check(
        ((t0 - TAU) / TAU).abs() <= 0.01 && worst <= 1e-7,
        format!("period limit {t0:.6} vs 2π; max |φ+(x)+x| = {worst:.2e}"),
    )
}

fn criterion_7() -> Outcome {
    let sys = builtin("model_polycycle_polycycle", &[("r_plus", 1.4), ("r_minus", 1.25)]);
    let delta = sign_data(&sys).map_err(|e| e.to_string())?.delta;
    let pred = predict_position_dulac((-1.0, -1.0), (1.4, 1.25), delta).map_err(|e| e.to_string())?;
    let law = pred.law.ok_or("Dulac position predictor refused")?;
    let (pl, pc) = (law.family.exponent().unwrap(), law.family.coefficient());
    let result = run_sweep(&sys, &SweepGrid { b_max: 1e-20, ratio: 1e-4, count: 20 })?;
    let (lam, c) = power_of(&result.positions(), Quantity::Position)?;
    let slope_pred = match predict_system(&sys).map_err(|e| e.to_string())?.period.map(|l| l.family) {
        Some(LawFamily::Log { t0, .. }) => t0,
        other => return Err(format!("period prediction {other:?}")),
    };
    let slope =
        fit_log(fit_window(&result.periods()), Quantity::Period).map_err(|e| e.to_string())?.law.family.coefficient();
    let main_ok = (pl - 0.8).abs() < 1e-12
        && (pc - 1.0).abs() < 1e-12
        && (lam - pl).abs() <= 0.01
        && ((c - pc) / pc).abs() <= 0.02
        && ((slope - slope_pred) / slope_pred).abs() <= 0.01;

    // Mixed case: the cycle hugs the translated point, x(b)/b -> 1.
    let mixed = builtin("model_polycycle_polycycle", &[("r_plus", 0.8), ("r_minus", 1.25)]);
    let mres = run_sweep(&mixed, &SweepGrid { b_max: 1e-2, ratio: 1e-2, count: 20 })?;
    let ratios: Vec<(f64, f64)> = mres.samples.iter().map(|r| (r.b.abs(), (r.x_star / r.b - 1.0).abs())).collect();
    let decreasing = ratios.windows(2).all(|w| w[1].1 <= w[0].1);
    let deep_ok = ratios.iter().filter(|(b, _)| *b <= 1e-10).all(|(_, e)| *e <= 0.01);
    let mixed_ok = mres.samples.len() == 20 && decreasing && deep_ok;
    let last = ratios.last().map_or(f64::NAN, |r| r.1);
    check(
        main_ok && mixed_ok,
        format!(
            "position ({lam:.4}, {c:.4}) vs ({pl}, {pc}); log slope {slope:.5} vs {slope_pred:.5}; mixed |x/b - 1| decreasing to {last:.1e}, ≤ 1% for |b| ≤ 1e-10: {deep_ok}"
        ),
    )
}

fn criterion_8() -> Outcome {
    let harmonic = field(&[(0, 1, -1.0)], &[(1, 0, 1.0)]);
    let timing = flow_to_section(&harmonic, 0.1, Half::Upper, Direction::Forward, &IntegrationLimits::default())
        .map_err(|e| e.to_string())?
        .time;
    let g = BlowUp::new(harmonic, 1, 1).and_then(|b| b.coeffs()).map_err(|e| e.to_string())?;
    let cusp = BlowUp::new(field(&[(0, 2, -1.0)], &[(1, 0, 1.0)]), 3, 2)
        .and_then(|b| b.coeffs())
        .map_err(|e| e.to_string())?;
    let eps = 0.1;
    let focus = BlowUp::new(field(&[(1, 0, eps), (0, 1, -1.0)], &[(1, 0, 1.0), (0, 1, eps)]), 1, 1)
        .and_then(|b| b.coeffs())
        .map_err(|e| e.to_string())?;
    let ratio = efocus_alpha1(eps, -1.0, 1.0, eps).map_err(|e| e.to_string())?;
    let (e1, e2, e3) = ((g.t_hat_0 - timing).abs(), (cusp.r1_pi - 1.0).abs(), (focus.r1_pi - ratio).abs());
    check(
        (timing - PI).abs() < 1e-8 && e1 <= 1e-8 && e2 <= 1e-8 && e3 <= 1e-6,
        format!("|T̂(0) - timed half period| = {e1:.1e}; |cusp r1(π) - 1| = {e2:.1e}; |focus r1(π) - ratio| = {e3:.1e}"),
    )
}

fn criterion_9() -> Outcome {
    let mut worst: f64 = 0.0;
    for alpha in [-4.0, -2.0, -1.0, -0.5, -0.25] {
        for r in [0.5, 0.8, 1.0, 1.25, 2.0] {
            let (kappa, rho) = dulac_invert_leading(alpha, r, false);
            for y in [-1e-6f64, -1e-3, -0.1, -0.7] {
                let x = kappa * (-y).powf(rho);
                let back = alpha * x.powf(r);
                worst = worst.max(((back - y) / y).abs());
            }
        }
    }
    let mut flow_worst: f64 = 0.0;
    for name in ["fold_fold_broken", "efocus_fold", "nfocus_fold", "cusp_fold_broken"] {
        let sys = builtin(name, &[]);
        for (comp, side) in [(&sys.upper, Side::Upper), (&sys.lower, Side::Lower)] {
            if !matches!(comp.provider, ReturnProvider::Flow(_)) {
                continue;
            }
            for x in log_grid(1e-3, 1e-1, 5) {
                let y = half_return(&comp.provider, side, x).map_err(|e| e.to_string())?.phi;
                let back =
                    inverse_half_return(&comp.provider, side, y, &sys.window).map_err(|e| format!("{name}: {e}"))?;
                flow_worst = flow_worst.max((back - x).abs());
            }
        }
    }
    check(
        worst <= 1e-12 && flow_worst <= 1e-7,
        format!("pure models max relative D(D⁻¹(y)) error {worst:.1e}; flow round trips max {flow_worst:.1e}"),
    )
}

fn criterion_10() -> Outcome {
    let dirs = [tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?];
    for d in &dirs {
        let mut sink = Vec::new();
        let mut err = Vec::new();
        let code =
            pseudohopf::cli::run(["pseudohopf", "table", "--out", d.path().to_str().unwrap()], &mut sink, &mut err);
        if code != 0 {
            return Err(format!("table exited {code}: {}", String::from_utf8_lossy(&err)));
        }
    }
    let read = |i: usize, name: &str| fs::read(dirs[i].path().join(name)).unwrap_or_default();
    let csv_same = read(0, "table.csv") == read(1, "table.csv") && !read(0, "table.csv").is_empty();
    let json_same = read(0, "table.json") == read(1, "table.json") && !read(0, "table.json").is_empty();
    check(csv_same && json_same, format!("table.csv identical: {csv_same}; table.json identical: {json_same}"))
}

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "fold/fold position and period laws", criterion_1),
        (2, "existence dichotomy in the sign of b", criterion_2),
        (3, "focus return ratio", criterion_3),
        (4, "nilpotent focus/fold laws", criterion_4),
        (5, "cusp/fold laws and symmetric control", criterion_5),
        (6, "periodic-orbit period limit", criterion_6),
        (7, "Dulac model rows", criterion_7),
        (8, "half-monodromy quadratures", criterion_8),
        (9, "Dulac inversion round trips", criterion_9),
        (10, "table determinism", criterion_10),
    ];
    let mut unexpected = 0;
    for (id, name, f) in criteria {
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {id} ({name}): {detail} [{secs:.1}s]"),
            Err(detail) => {
                let known = KNOWN_FAILURES.contains(&id);
                let tag = if known { " (known, documented)" } else { "" };
                println!("FAIL criterion {id} ({name}){tag}: {detail} [{secs:.1}s]");
                if !known {
                    unexpected += 1;
                }
            }
        }
    }
    if unexpected > 0 {
        std::process::exit(1);
    }
}
