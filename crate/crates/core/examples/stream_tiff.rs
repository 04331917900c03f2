//! Stream a large tiled TIFF through normalization strip by strip and report
//! the peak number of buffered pixels.
//!
//! cargo run --release --example stream_tiff -- [EDGE]

use spcn::image_io::{create_sink, open_slide};
use spcn::pipeline::{fit, transform, FitConfig, TransformOptions};
use spcn::synthetic::{demo_source, demo_target};

fn main() -> spcn::Result<()> {
    let edge: u32 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(4096);
    let dir = tempfile::tempdir()?;
    let input = dir.path().join("slide.tif");
    let output = dir.path().join("slide_normalized.tif");
    demo_source(edge).write_to(&input)?;

    let slide = open_slide(&input)?;
    let cfg = FitConfig::default();
    let source = fit(&*slide, &cfg)?;
    let target = fit(&demo_target(512), &cfg)?.params;
    let opts = TransformOptions {
        strip_height: 256,
        ..TransformOptions::default()
    };
    let mut sink = create_sink(&output, edge, edge)?;
    let stats = transform(&*slide, &source.params, &target, sink.as_mut(), &opts)?;

    let bound = 2 * opts.strip_height as usize * edge as usize * opts.workers;
    println!(
        "{edge}x{edge}: {} strips on {} workers in {:.2}s",
        stats.strip_seconds.len(),
        stats.workers,
        stats.transform_seconds
    );
    println!("peak buffered pixels {} (whole slide {})", stats.peak_buffered_pixels, edge as usize * edge as usize);
    println!("strip-buffer budget {bound}");
    Ok(())
}
