//! Sweep b towards zero, fit the measured laws and compare them with the
//! predictions.
//!
//! Run with `cargo run --release --example sweep_fit -- [system]`.

use std::collections::BTreeMap;

use pseudohopf::asymptotics::{predict_system, Quantity};
use pseudohopf::bifurcation::CycleSearch;
use pseudohopf::fields::make_builtin;
use pseudohopf::sweepfit::{classify_law, compare, fit_power, fit_window, sweep, SweepGrid, Tolerances};

fn main() -> anyhow::Result<()> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "nfocus_fold".into());
    let sys = make_builtin(&name, &BTreeMap::new())?;
    let search = CycleSearch::new(&sys)?;
    let grid = SweepGrid::default();
    let result = sweep(&search, &grid, search.signs.mu)?;
    result.ensure_successes(8)?;
    println!("{name}: {} cycles, {} failures", result.samples.len(), result.failures.len());
    for r in result.samples.iter().step_by(4) {
        println!("  b = {:+.3e}  x* = {:.6e}  T = {:.6}", r.b, r.x_star, r.period);
    }

    let prediction = predict_system(&sys)?;
    let tol = Tolerances::default();
    for (of, samples, predicted) in [
        (Quantity::Position, result.positions(), prediction.position.as_ref().and_then(|p| p.law)),
        (Quantity::Period, result.periods(), prediction.period),
    ] {
        let window = fit_window(&samples);
        let class = classify_law(window, of)?;
        println!("{of:?}: best family {} (margin {:.3})", class.best.law.family.name(), class.margin);
        if let Some(law) = predicted {
            let fitted = match law.family.name() {
                "power" | "neg_power" => fit_power(window, of)?,
                _ => class.best,
            };
            let v = compare(&law, &fitted, &tol);
            println!(
                "  predicted {:?}\n  fitted    {:?}\n  {} ({})",
                law.family,
                fitted.law.family,
                if v.pass { "pass" } else { "fail" },
                v.details
            );
        }
    }
    Ok(())
}
