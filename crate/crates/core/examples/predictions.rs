//! Predicted position and period laws for every builtin system, and the
//! half-monodromy constants behind the period of a nilpotent center.
//!
//! Run with `cargo run --example predictions`.

use std::collections::BTreeMap;

use pseudohopf::asymptotics::{predict_system, BlowUp};
use pseudohopf::fields::{make_builtin, PlanarField, Poly2, GALLERY};

fn main() -> anyhow::Result<()> {
    for entry in GALLERY {
        let sys = make_builtin(entry.name, &BTreeMap::new())?;
        match predict_system(&sys) {
            Err(e) => println!("{:<28} no prediction: {e}", entry.name),
            Ok(p) => {
                let pos = match (&p.position, &p.position_refusal) {
                    (Some(pp), _) => match &pp.law {
                        Some(l) => format!("{} {:?}", pp.case_tag.formula(), l.family),
                        None => format!("{:?}", pp.case_tag),
                    },
                    (None, Some(r)) => format!("refused: {r}"),
                    (None, None) => "-".into(),
                };
                let per = p.period.map(|l| format!("{:?}", l.family)).or(p.period_refusal).unwrap_or_default();
                println!("{:<28} mu = {:+}\n    position: {pos}\n    period:   {per}", entry.name, p.mu);
            }
        }
    }

    // (-y, x^3) blown up with weights (1, 2): T̂(0) is the half period of
    // the rescaled orbit, sqrt(2) times the integral of 1/sqrt(1 - X^4).
    let center = PlanarField::new(Poly2::from_terms(&[(0, 1, -1.0)]), Poly2::from_terms(&[(3, 0, 1.0)]));
    let g = BlowUp::new(center, 1, 2)?.coeffs()?;
    println!("\nnilpotent center: r1(pi) = {:.12}, T̂(0) = {:.12}", g.r1_pi, g.t_hat_0);
    Ok(())
}
