//! Local expansions read off measured half-return maps: smooth series for a
//! focus and a fold, and the Dulac residue of a perturbed cusp.
//!
//! Run with `cargo run --example local_coefficients`.

use std::collections::BTreeMap;

use pseudohopf::bifurcation::{displacement_expansion, sign_data};
use pseudohopf::fields::make_builtin;
use pseudohopf::returns::{estimate_local_coeffs, LocalFamily, Side};

fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| lo * (hi / lo).powf(k as f64 / (n - 1) as f64)).collect()
}

fn main() -> anyhow::Result<()> {
    let xs = grid(1e-3, 3e-2, 12);
    for name in ["fold_fold_broken", "efocus_fold", "nfocus_fold"] {
        let sys = make_builtin(name, &BTreeMap::new())?;
        let up = estimate_local_coeffs(&sys.upper.provider, Side::Upper, &xs, LocalFamily::Smooth { degree: 3 })?;
        let down = estimate_local_coeffs(&sys.lower.provider, Side::Lower, &xs, LocalFamily::Smooth { degree: 3 })?;
        let signs = sign_data(&sys)?;
        let delta0 = displacement_expansion(&sys, signs.delta, &xs, LocalFamily::Smooth { degree: 4 })?;
        println!(
            "{name:<18} alpha1+ = {:+.6}  alpha1- = {:+.6}  Delta0 coefficients = {:?}",
            up.alpha1(),
            down.alpha1(),
            delta0.coeffs.iter().map(|c| format!("{c:+.4}")).collect::<Vec<_>>()
        );
    }

    let xs = grid(1e-4, 1e-2, 12);
    for c in [0.0, 1.0] {
        let params = BTreeMap::from([("c".to_string(), c)]);
        let sys = make_builtin("cusp_fold_broken", &params)?;
        match estimate_local_coeffs(
            &sys.upper.provider,
            Side::Upper,
            &xs,
            LocalFamily::DulacAfterLinear { linear: -1.0 },
        ) {
            Ok(fit) => {
                println!("cusp c = {c}: phi+(x) + x ~ {:+.4} x^{:.4}", fit.alpha1(), fit.exponent.unwrap_or(f64::NAN))
            }
            Err(e) => println!("cusp c = {c}: no residue beyond -x ({e})"),
        }
    }
    Ok(())
}
