//! Fit a stain basis to synthetic optical densities and compare it with the
//! generating colors.
//!
//! cargo run --example stain_separation

use spcn::stain_sep::{angle_degrees, fit_basis, SnmfConfig, SparseCoder, StainBasis};
use spcn::synthetic::od_sample;

fn main() -> spcn::Result<()> {
    let truth = StainBasis::normalized([0.55, 0.76, 0.36], [0.05, 0.93, 0.30])?;
    let (od, densities) = od_sample(&truth, 20_000, 0.01, 1);

    let fitted = fit_basis(&od, &SnmfConfig::default())?;
    println!(
        "{} iterations, converged {}, objective {:.4} -> {:.4}",
        fitted.iterations,
        fitted.converged,
        fitted.objective_history.first().unwrap_or(&0.0),
        fitted.objective_history.last().unwrap_or(&0.0)
    );
    for (j, name) in ["hematoxylin", "eosin"].iter().enumerate() {
        let c = fitted.basis.column(j);
        println!(
            "{name}: [{:.3}, {:.3}, {:.3}], {:.2} deg from truth, share {:.2}",
            c[0],
            c[1],
            c[2],
            angle_degrees(c, truth.column(j)),
            fitted.density_share[j]
        );
    }

    let coder = SparseCoder::new(&fitted.basis, 0.0);
    for (v, h) in od.iter().zip(&densities).take(3) {
        let coded = coder.code(*v);
        println!("true h [{:.3}, {:.3}], coded [{:.3}, {:.3}]", h[0], h[1], coded[0], coded[1]);
    }
    Ok(())
}
