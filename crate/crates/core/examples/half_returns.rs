//! Half-return maps of a fold and a focus, with first-integral drift.
//!
//! Run with `cargo run --example half_returns`.

use pseudohopf::fields::{PlanarField, Poly2};
use pseudohopf::flow::{flow_to_section, invariant_drift, Direction, Half, IntegrationLimits};
use pseudohopf::returns::{half_return, FlowProvider, ReturnProvider, Side};

fn main() -> anyhow::Result<()> {
    let limits = IntegrationLimits::default();
    // Lower fold (1, 2x + 3x^2): orbits are level sets of H = y - x^2 - x^3,
    // travelled in backward time inside y < 0.
    let fold = PlanarField::new(Poly2::from_terms(&[(0, 0, 1.0)]), Poly2::from_terms(&[(1, 0, 2.0), (2, 0, 3.0)]));
    let h = Poly2::from_terms(&[(0, 1, 1.0), (2, 0, -1.0), (3, 0, -1.0)]);
    println!("{:>8} {:>14} {:>14} {:>10}", "x", "phi-(x)", "tau-(x)", "drift");
    for x in [1e-3, 1e-2, 5e-2, 0.1] {
        let hit = flow_to_section(&fold, x, Half::Lower, Direction::Backward, &limits)?;
        println!(
            "{x:>8.0e} {:>14.10} {:>14.10} {:>10.1e}",
            hit.point[0],
            hit.time,
            invariant_drift(&h, &hit, [x, 0.0])
        );
    }

    // Upper weak focus: the half-return ratio tends to -exp(pi eps).
    let eps: f64 = 0.1;
    let focus = ReturnProvider::Flow(FlowProvider {
        field: PlanarField::new(
            Poly2::from_terms(&[(1, 0, eps), (0, 1, -1.0)]),
            Poly2::from_terms(&[(1, 0, 1.0), (0, 1, eps)]),
        ),
        limits,
    });
    println!("\nfocus eps = {eps}: -exp(pi eps) = {:.8}", -(std::f64::consts::PI * eps).exp());
    for x in [1e-3, 1e-2, 0.1] {
        let d = half_return(&focus, Side::Upper, x)?;
        println!("  x = {x:.0e}: phi/x = {:.8}, tau = {:.8}", d.phi / x, d.tau);
    }
    Ok(())
}
