//! Runtime scaling harness: fit and transform seeded synthetic slides of
//! growing size and compare stage times.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image_io::{create_sink, open_slide};
use crate::pipeline::{fit, transform, FitConfig, RunStats, TransformOptions};
use crate::synthetic::{demo_source, demo_target};

pub const DEFAULT_SIZES: [u32; 4] = [512, 1024, 2048, 4096];

/// Parse a comma-separated list of square edges such as `512,2048,8192`.
pub fn parse_sizes(list: &str) -> Result<Vec<u32>> {
    let sizes: Vec<u32> = list
        .split(',')
        .map(|t| {
            let t = t.trim();
            match t.parse::<u32>() {
                Ok(v) if v >= 16 => Ok(v),
                Ok(v) => Err(Error::InvalidConfig(format!("size {v} is below the 16 pixel minimum"))),
                Err(e) => Err(Error::InvalidConfig(format!("bad size {t:?}: {e}"))),
            }
        })
        .collect::<Result<_>>()?;
    if sizes.is_empty() {
        return Err(Error::InvalidConfig("empty size list".into()));
    }
    Ok(sizes)
}

#[derive(Debug, Clone)]
pub struct BenchRun {
    pub edge: u32,
    pub stats: RunStats,
}

impl BenchRun {
    pub fn fit_seconds(&self) -> f64 {
        self.stats.sampling_seconds + self.stats.basis_fit_seconds + self.stats.stain_stats_seconds
    }
}

#[derive(Debug, Clone, Default)]
pub struct BenchReport {
    pub runs: Vec<BenchRun>,
}

impl BenchReport {
    /// CSV with columns `edge,stage,seconds,pixels,patches`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("edge,stage,seconds,pixels,patches\n");
        for run in &self.runs {
            for (stage, seconds) in run.stats.stage_rows() {
                let _ = writeln!(
                    s,
                    "{},{stage},{seconds:.6},{},{}",
                    run.edge, run.stats.pixels, run.stats.patches
                );
            }
        }
        s
    }

    fn extremes(&self) -> Option<(&BenchRun, &BenchRun)> {
        let small = self.runs.iter().min_by_key(|r| r.edge)?;
        let large = self.runs.iter().max_by_key(|r| r.edge)?;
        (large.edge > small.edge).then_some((small, large))
    }

    /// Fit time of the largest slide over that of the smallest.
    pub fn fit_time_ratio(&self) -> Option<f64> {
        self.extremes().map(|(s, l)| l.fit_seconds() / s.fit_seconds())
    }

    /// Transform time ratio (largest over smallest) divided by the area
    /// ratio; 1 means exactly linear in pixels.
    pub fn per_pixel_ratio(&self) -> Option<f64> {
        self.extremes().map(|(s, l)| {
            let time = l.stats.transform_seconds / s.stats.transform_seconds;
            time / (l.stats.pixels as f64 / s.stats.pixels as f64)
        })
    }
}

/// For each edge, render a seeded synthetic slide to a tiled TIFF in
/// `work_dir` (untimed), fit it, and normalize it to a fixed target.
pub fn run_bench(
    sizes: &[u32],
    fit_cfg: &FitConfig,
    opts: &TransformOptions,
    work_dir: &Path,
) -> Result<BenchReport> {
    let target = fit(&demo_target(512), fit_cfg)?.params;
    let mut report = BenchReport::default();
    for &edge in sizes {
        let input = work_dir.join(format!("bench_{edge}.tif"));
        let output = work_dir.join(format!("bench_{edge}_normalized.tif"));
        demo_source(edge).write_to(&input)?;
        let slide = open_slide(&input)?;
        let fitted = fit(&*slide, fit_cfg)?;
        let mut sink = create_sink(&output, edge, edge)?;
        let stats = transform(&*slide, &fitted.params, &target, sink.as_mut(), opts)?.with_fit(&fitted);
        log::info!(
            "edge {edge}: fit {:.3}s, transform {:.3}s",
            fitted.fit_seconds(),
            stats.transform_seconds
        );
        drop(slide);
        let _ = std::fs::remove_file(&input);
        let _ = std::fs::remove_file(&output);
        report.runs.push(BenchRun { edge, stats });
    }
    Ok(report)
}
