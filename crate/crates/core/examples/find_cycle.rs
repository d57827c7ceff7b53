//! Sign data, sliding segment and the crossing cycle of one translated
//! system, confirmed by integrating the closed orbit.
//!
//! Run with `cargo run --example find_cycle -- [system] [b]`.

use std::collections::BTreeMap;

use pseudohopf::bifurcation::{closed_orbit, sign_data, sliding_segment, CycleSearch};
use pseudohopf::fields::make_builtin;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let name = args.next().unwrap_or_else(|| "fold_fold_broken".into());
    let sys = make_builtin(&name, &BTreeMap::new())?;
    let signs = sign_data(&sys)?;
    let b: f64 = match args.next() {
        Some(s) => s.parse()?,
        None => f64::from(signs.mu) * 1e-3,
    };
    println!("{name}: delta = {}, sigma = {}, mu = {}", signs.delta, signs.sigma, signs.mu);
    let seg = sliding_segment(&sys, b)?;
    println!("b = {b:e}: {:?} sliding segment on [{:e}, {:e}]", seg.attractivity, seg.interval.0, seg.interval.1);

    let search = CycleSearch::new(&sys)?;
    match search.at(b) {
        Ok(rec) => {
            println!("cycle: x* = {:.12}, period = {:.12}, {:?}", rec.x_star, rec.period, rec.stability);
            if let Ok(orbit) = closed_orbit(&sys, b, rec.x_star) {
                println!("closed orbit: returns to {:.12} after {:.12}", orbit.end, orbit.time);
            }
        }
        Err(e) if e.is_no_sign_change() => println!("no crossing cycle for this sign of b ({e})"),
        Err(e) => return Err(e.into()),
    }
    match search.at(-b) {
        Err(e) if e.is_no_sign_change() => println!("mirrored b = {:e}: no cycle, as expected", -b),
        other => println!("mirrored b = {:e}: {other:?}", -b),
    }
    Ok(())
}
