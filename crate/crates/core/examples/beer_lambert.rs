//! Round-trip a few pixels through optical density and back, and estimate
//! the background intensity of a synthetic slide.
//!
//! cargo run --example beer_lambert

use spcn::image_io::{read_all, SlideSource};
use spcn::optics::{density_pixel, estimate_max_intensity, pixel_density, BrightSamples, MaxIntensity};
use spcn::synthetic::demo_source;

fn main() -> spcn::Result<()> {
    let i0 = MaxIntensity::new(250.0, 243.0, 230.0)?;
    for px in [[250, 243, 230], [200, 120, 180], [60, 20, 90], [0, 0, 0]] {
        let od = pixel_density(px, &i0);
        let back = density_pixel(od, &i0);
        println!("{px:?} -> od [{:.3}, {:.3}, {:.3}] -> {back:?}", od[0], od[1], od[2]);
    }

    let slide = demo_source(256);
    let block = read_all(&slide, 64)?;
    let mut bright = BrightSamples::default();
    for px in block.pixels() {
        for c in 0..3 {
            if px[c] > 220 {
                bright.0[c].push(px[c]);
            }
        }
    }
    let estimate = estimate_max_intensity(&bright);
    let (w, h) = slide.dimensions();
    println!("{w}x{h} slide background estimate {:?}", estimate.i0.0);
    Ok(())
}
