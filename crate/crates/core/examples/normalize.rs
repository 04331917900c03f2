//! Normalize a source image to a target image.
//!
//! cargo run --release --example normalize -- SOURCE TARGET OUT
//!
//! Without arguments, the synthetic demo pair is used and the result is
//! written to the system temp directory.

use std::path::PathBuf;

use spcn::pipeline::{fit_file, transform_file, FitConfig, TransformOptions};
use spcn::synthetic::{demo_source, demo_target};

fn main() -> spcn::Result<()> {
    let args: Vec<PathBuf> = std::env::args_os().skip(1).map(PathBuf::from).collect();
    let (source, target, out) = match args.as_slice() {
        [s, t, o] => (s.clone(), t.clone(), o.clone()),
        _ => {
            let dir = std::env::temp_dir();
            let (s, t) = (dir.join("spcn_source.png"), dir.join("spcn_target.png"));
            demo_source(512).write_to(&s)?;
            demo_target(512).write_to(&t)?;
            (s, t, dir.join("spcn_normalized.png"))
        }
    };

    let cfg = FitConfig::default();
    let source_fit = fit_file(&source, &cfg)?;
    let target_fit = fit_file(&target, &cfg)?;
    for w in source_fit.warnings.iter().chain(&target_fit.warnings) {
        eprintln!("warning: {w}");
    }
    let stats = transform_file(&source, &out, &source_fit.params, &target_fit.params, &TransformOptions::default())?
        .with_fit(&source_fit);
    print!("{}", stats.to_csv());
    println!("wrote {}", out.display());
    Ok(())
}
