//! Fit the bundled synthetic pair and normalize the source in memory.
//!
//! cargo run --example demo

use spcn::image_io::{read_all, MemorySink};
use spcn::pipeline::{fit, transform, FitConfig, TransformOptions};
use spcn::synthetic::{demo_source, demo_target};

fn main() -> spcn::Result<()> {
    let cfg = FitConfig::default();
    let source = demo_source(512);
    let target = demo_target(512);
    let source_fit = fit(&source, &cfg)?;
    let target_fit = fit(&target, &cfg)?;

    for (name, report) in [("source", &source_fit), ("target", &target_fit)] {
        let p = &report.params;
        println!(
            "{name}: i0 {:?}, p99 [{:.3}, {:.3}], {} patches, {} pixels",
            p.i0.0, p.stats.p99[0], p.stats.p99[1], report.tissue_patches, report.sample_size
        );
    }

    let mut sink = MemorySink::new(512, 512);
    transform(&source, &source_fit.params, &target_fit.params, &mut sink, &TransformOptions::default())?;
    let out = sink.into_block()?;
    let input = read_all(&source, 512)?;
    println!("corner pixel {:?} -> {:?}", input.pixel(0, 0), out.pixel(0, 0));
    Ok(())
}
