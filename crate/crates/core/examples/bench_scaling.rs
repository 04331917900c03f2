//! Time fit and transform on growing synthetic slides.
//!
//! cargo run --release --example bench_scaling -- [SIZES]

use spcn::bench::{parse_sizes, run_bench};
use spcn::pipeline::{FitConfig, TransformOptions};

fn main() -> spcn::Result<()> {
    let sizes = parse_sizes(&std::env::args().nth(1).unwrap_or_else(|| "512,1024,2048".into()))?;
    let dir = tempfile::tempdir()?;
    let report = run_bench(&sizes, &FitConfig::default(), &TransformOptions::default(), dir.path())?;
    for run in &report.runs {
        println!(
            "{:>6}  fit {:>8.3}s  transform {:>8.3}s",
            run.edge,
            run.fit_seconds(),
            run.stats.transform_seconds
        );
    }
    if let (Some(fit), Some(px)) = (report.fit_time_ratio(), report.per_pixel_ratio()) {
        println!("fit time ratio {fit:.2}, transform per-pixel ratio {px:.2}");
    }
    Ok(())
}
