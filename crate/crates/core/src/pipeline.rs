//! Whole-slide orchestration.
//!
//! `fit` samples pixels from a bounded number of patches, estimates the
//! background intensity, learns one stain basis for the whole slide and
//! measures stain density percentiles. `transform` then streams full-width
//! strips through a fixed pool of workers and writes them back in order.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use crossbeam_channel::{bounded, Receiver, Sender};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result, Stage, Warning};
use crate::image_io::{create_sink, open_slide, plan_strips, PixelBlock, SlideSource, StripSink, DEFAULT_STRIP_HEIGHT};
use crate::normalize::{stain_stats, DensitySamples, FitParams, PixelTransform, Provenance, DENSITY_PERCENTILE, MIN_STAIN_DENSITY};
use crate::optics::{estimate_max_intensity, pixel_density, BrightSamples, MaxIntensity, DEFAULT_SAMPLE_CAP, DEFAULT_WHITE_THRESHOLD};
use crate::stain_sep::{fit_basis, DensityCoder, MIN_DENSITY_SHARE, PseudoInverse, SnmfConfig, SparseCoder, StainBasis};
use crate::stats::percentile;

/// How pixels are gathered for fitting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplePlan {
    /// Non-background patches to visit at most.
    pub max_patches: usize,
    /// Edge of the square patches, in pixels.
    pub patch_size: u32,
    /// Non-white pixels to collect.
    pub target_pixels: usize,
    /// A patch whose white fraction is at least this is background.
    pub background_fraction_cutoff: f64,
    pub seed: u64,
}

impl Default for SamplePlan {
    fn default() -> Self {
        SamplePlan {
            max_patches: 20,
            patch_size: 1000,
            target_pixels: 100_000,
            background_fraction_cutoff: 0.95,
            seed: 0,
        }
    }
}

impl SamplePlan {
    /// Background patches count towards this visit limit only.
    pub fn visit_limit(&self) -> usize {
        self.max_patches.saturating_mul(10)
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_patches == 0 {
            return Err(Error::InvalidConfig("max-patches must be >= 1".into()));
        }
        if self.target_pixels == 0 {
            return Err(Error::InvalidConfig("target-pixels must be >= 1".into()));
        }
        if self.patch_size == 0 {
            return Err(Error::InvalidConfig("patch-size must be >= 1".into()));
        }
        let c = self.background_fraction_cutoff;
        if !(c > 0.0 && c <= 1.0) {
            return Err(Error::InvalidConfig(format!("background cutoff must be in (0, 1], got {c}")));
        }
        Ok(())
    }
}

/// How stain densities are computed for statistics and normalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coding {
    /// Sparsity weight of the density coder.
    pub lambda: f64,
    /// Use the unconstrained pseudo-inverse instead of the sparse coder.
    pub pseudo_inverse: bool,
}

impl Default for Coding {
    fn default() -> Self {
        Coding {
            lambda: 0.0,
            pseudo_inverse: false,
        }
    }
}

impl Coding {
    pub fn coder(&self, basis: &StainBasis) -> DensityCoder {
        if self.pseudo_inverse {
            DensityCoder::PseudoInverse(PseudoInverse::new(basis))
        } else {
            DensityCoder::Sparse(SparseCoder::new(basis, self.lambda))
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!("coding lambda must be >= 0, got {}", self.lambda)));
        }
        Ok(())
    }
}

/// Everything that controls fitting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub plan: SamplePlan,
    pub snmf: SnmfConfig,
    pub white_threshold: u8,
    pub sample_cap: usize,
    pub coding: Coding,
    /// Aggregate density percentiles as the median over patches instead of
    /// over the pooled sample.
    pub patch_stats: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            plan: SamplePlan::default(),
            snmf: SnmfConfig::default(),
            white_threshold: DEFAULT_WHITE_THRESHOLD,
            sample_cap: DEFAULT_SAMPLE_CAP,
            coding: Coding::default(),
            patch_stats: false,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        self.plan.validate()?;
        self.snmf.validate()?;
        self.coding.validate()?;
        if self.white_threshold == 0 || self.white_threshold == 255 {
            return Err(Error::InvalidConfig(format!(
                "white-threshold must be in [1, 254], got {}",
                self.white_threshold
            )));
        }
        if self.sample_cap == 0 {
            return Err(Error::InvalidConfig("sample-cap must be >= 1".into()));
        }
        Ok(())
    }

    /// Short stable hash of every setting that influences fitted values.
    pub fn hash(&self) -> String {
        let canonical = format!(
            "lambda={:e};max_outer_iters={};rel_tol={:e};snmf_seed={};white_threshold={};sample_cap={};\
             max_patches={};patch_size={};target_pixels={};cutoff={:e};sample_seed={};coding_lambda={:e};\
             pseudo_inverse={};patch_stats={}",
            self.snmf.lambda,
            self.snmf.max_outer_iters,
            self.snmf.rel_tol,
            self.snmf.seed,
            self.white_threshold,
            self.sample_cap,
            self.plan.max_patches,
            self.plan.patch_size,
            self.plan.target_pixels,
            self.plan.background_fraction_cutoff,
            self.plan.seed,
            self.coding.lambda,
            self.coding.pseudo_inverse,
            self.patch_stats,
        );
        let digest = Sha256::digest(canonical.as_bytes());
        digest[..8].iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

/// Uniform fixed-size sample of a stream.
#[derive(Debug, Clone)]
struct Reservoir<T> {
    capacity: usize,
    items: Vec<T>,
    seen: u64,
}

impl<T> Reservoir<T> {
    fn new(capacity: usize) -> Self {
        Reservoir {
            capacity,
            items: Vec::new(),
            seen: 0,
        }
    }

    fn offer(&mut self, item: T, rng: &mut ChaCha8Rng) {
        self.seen += 1;
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            let j = rng.random_range(0..self.seen);
            if (j as usize) < self.capacity {
                self.items[j as usize] = item;
            }
        }
    }
}

/// A square (edge-clipped) region of the slide.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Patch {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

/// Pixels gathered for fitting.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelSample {
    /// Non-white pixels from non-background patches, or from background
    /// patches when no other patch had tissue.
    pub non_white: Vec<[u8; 3]>,
    /// Per-channel intensities above the white threshold, from every
    /// visited patch.
    pub bright: BrightSamples,
    /// Non-white pixels seen before subsampling.
    pub non_white_seen: u64,
    pub patches_visited: usize,
    pub tissue_patches: Vec<Patch>,
}

fn is_white(px: [u8; 3], white_threshold: u8) -> bool {
    px.iter().all(|&v| v > white_threshold)
}

/// Visit seeded-random patches until enough non-white pixels are collected,
/// `max_patches` non-background patches were used, or the visit limit is
/// reached.
pub fn sample_pixels(
    slide: &dyn SlideSource,
    plan: &SamplePlan,
    white_threshold: u8,
    sample_cap: usize,
) -> Result<PixelSample> {
    plan.validate()?;
    let (width, height) = slide.dimensions();
    let step = plan.patch_size as usize;
    let mut candidates: Vec<(u32, u32)> = (0..height)
        .step_by(step)
        .flat_map(|y| (0..width).step_by(step).map(move |x| (x, y)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    candidates.shuffle(&mut rng);

    let mut non_white = Reservoir::new(plan.target_pixels);
    let mut stray = Reservoir::new(plan.target_pixels);
    let mut bright: [Reservoir<u8>; 3] = std::array::from_fn(|_| Reservoir::new(sample_cap));
    let mut tissue_patches = Vec::new();
    let mut visited = 0;
    let tissue_floor = 1.0 - plan.background_fraction_cutoff;

    for (x, y) in candidates {
        if visited >= plan.visit_limit()
            || tissue_patches.len() >= plan.max_patches
            || non_white.seen >= plan.target_pixels as u64
        {
            break;
        }
        let patch = Patch {
            x,
            y,
            width: plan.patch_size.min(width - x),
            height: plan.patch_size.min(height - y),
        };
        let block = slide.read_region(patch.x, patch.y, patch.width, patch.height)?;
        visited += 1;
        for px in block.pixels() {
            for c in 0..3 {
                if px[c] > white_threshold {
                    bright[c].offer(px[c], &mut rng);
                }
            }
        }
        let tissue = block.pixels().filter(|&px| !is_white(px, white_threshold)).count();
        let background = (tissue as f64) < tissue_floor * block.pixel_count() as f64;
        let pool = if background { &mut stray } else { &mut non_white };
        for px in block.pixels().filter(|&px| !is_white(px, white_threshold)) {
            pool.offer(px, &mut rng);
        }
        if background {
            log::debug!("patch at ({x}, {y}) is background ({tissue} non-white pixels)");
            continue;
        }
        tissue_patches.push(patch);
        log::debug!("patch at ({x}, {y}): {tissue} non-white pixels");
    }

    if non_white.items.is_empty() {
        // Tissue only in patches that are mostly background.
        non_white = stray;
    }
    if non_white.items.is_empty() {
        return Err(Error::BlankSlide);
    }
    let [r, g, b] = bright;
    Ok(PixelSample {
        non_white: non_white.items,
        bright: BrightSamples([r.items, g.items, b.items]),
        non_white_seen: non_white.seen,
        patches_visited: visited,
        tissue_patches,
    })
}

/// Fit outcome with diagnostics.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub params: FitParams,
    pub warnings: Vec<Warning>,
    pub sampling_seconds: f64,
    pub basis_fit_seconds: f64,
    pub stain_stats_seconds: f64,
    pub patches_visited: usize,
    pub tissue_patches: usize,
    pub sample_size: usize,
    /// Basis-fit objective after every outer iteration.
    pub objective_history: Vec<f64>,
}

impl FitReport {
    pub fn fit_seconds(&self) -> f64 {
        self.sampling_seconds + self.basis_fit_seconds + self.stain_stats_seconds
    }
}

fn non_white_densities(block: &PixelBlock, white_threshold: u8, i0: &MaxIntensity, coder: &DensityCoder) -> [Vec<f64>; 2] {
    let mut out = [Vec::new(), Vec::new()];
    for px in block.pixels().filter(|&px| !is_white(px, white_threshold)) {
        let h = coder.code(pixel_density(px, i0));
        out[0].push(h[0]);
        out[1].push(h[1]);
    }
    out
}

/// Learn background intensity, stain basis and density percentiles for one
/// slide. Deterministic for a fixed configuration.
pub fn fit(slide: &dyn SlideSource, cfg: &FitConfig) -> Result<FitReport> {
    cfg.validate()?;
    let started = Instant::now();
    let sample = sample_pixels(slide, &cfg.plan, cfg.white_threshold, cfg.sample_cap).map_err(|e| e.at(Stage::Sampling))?;
    let estimate = estimate_max_intensity(&sample.bright);
    let i0 = estimate.i0;
    i0.validate().map_err(|e| e.at(Stage::MaxIntensity))?;
    let mut warnings = estimate.warnings;
    let sampling_seconds = started.elapsed().as_secs_f64();
    log::info!(
        "sampled {} non-white pixels from {} of {} visited patches; background intensity {:.1?}",
        sample.non_white.len(),
        sample.tissue_patches.len(),
        sample.patches_visited,
        i0.0
    );

    let started = Instant::now();
    let od: Vec<[f64; 3]> = sample.non_white.iter().map(|&px| pixel_density(px, &i0)).collect();
    let basis_fit = fit_basis(&od, &cfg.snmf).map_err(|e| e.at(Stage::BasisFit))?;
    warnings.extend(basis_fit.warnings.iter().cloned());
    if let Some(stain) = (0..2).find(|&j| basis_fit.density_share[j] < MIN_DENSITY_SHARE) {
        return Err(Error::StainAbsent { stain }.at(Stage::BasisFit));
    }
    let basis = basis_fit.basis;
    let basis_fit_seconds = started.elapsed().as_secs_f64();
    log::info!(
        "stain basis after {} iterations: hematoxylin {:.4?}, eosin {:.4?}",
        basis_fit.iterations,
        basis.column(0),
        basis.column(1)
    );

    let started = Instant::now();
    let coder = cfg.coding.coder(&basis);
    let stats = if cfg.patch_stats && !sample.tissue_patches.is_empty() {
        let mut per_patch = Vec::with_capacity(sample.tissue_patches.len());
        for p in &sample.tissue_patches {
            let block = slide
                .read_region(p.x, p.y, p.width, p.height)
                .map_err(|e| e.at(Stage::StainStats))?;
            let [h, e] = non_white_densities(&block, cfg.white_threshold, &i0, &coder);
            if let (Some(ph), Some(pe)) = (percentile(&h, DENSITY_PERCENTILE), percentile(&e, DENSITY_PERCENTILE)) {
                per_patch.push([ph, pe]);
            }
        }
        stain_stats(DensitySamples::PatchPercentiles(&per_patch))
    } else {
        let mut h = Vec::with_capacity(od.len());
        let mut e = Vec::with_capacity(od.len());
        for &v in &od {
            let d = coder.code(v);
            h.push(d[0]);
            e.push(d[1]);
        }
        stain_stats(DensitySamples::Pooled([&h, &e]))
    }
    .map_err(|e| e.at(Stage::StainStats))?;
    if let Some(stain) = (0..2).find(|&j| !(stats.p99[j] >= MIN_STAIN_DENSITY)) {
        return Err(Error::StainAbsent { stain }.at(Stage::StainStats));
    }
    let stain_stats_seconds = started.elapsed().as_secs_f64();
    log::info!("stain density 99th percentiles: {:.4?}", stats.p99);

    Ok(FitReport {
        params: FitParams {
            i0,
            basis,
            stats,
            provenance: Provenance {
                source: String::new(),
                config_hash: cfg.hash(),
            },
        },
        warnings,
        sampling_seconds,
        basis_fit_seconds,
        stain_stats_seconds,
        patches_visited: sample.patches_visited,
        tissue_patches: sample.tissue_patches.len(),
        sample_size: sample.non_white.len(),
        objective_history: basis_fit.objective_history,
    })
}

/// Open an image file and fit it, recording the path as provenance.
pub fn fit_file(path: impl AsRef<Path>, cfg: &FitConfig) -> Result<FitReport> {
    let path = path.as_ref();
    let slide = open_slide(path)?;
    let mut report = fit(&*slide, cfg)?;
    report.params.provenance.source = path.display().to_string();
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformOptions {
    pub strip_height: u32,
    pub workers: usize,
    pub coding: Coding,
}

impl Default for TransformOptions {
    fn default() -> Self {
        TransformOptions {
            strip_height: DEFAULT_STRIP_HEIGHT,
            workers: default_workers(),
            coding: Coding::default(),
        }
    }
}

impl TransformOptions {
    pub fn validate(&self) -> Result<()> {
        if self.strip_height == 0 {
            return Err(Error::InvalidConfig("strip-height must be >= 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::InvalidConfig("workers must be >= 1".into()));
        }
        self.coding.validate()
    }
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Stage timings and counters of one run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunStats {
    pub sampling_seconds: f64,
    pub basis_fit_seconds: f64,
    pub stain_stats_seconds: f64,
    /// Wall time of the streamed read, normalize and write phase.
    pub transform_seconds: f64,
    /// Worker time spent on each strip's pixels.
    pub strip_seconds: Vec<f64>,
    pub total_seconds: f64,
    pub pixels: u64,
    pub patches: usize,
    pub workers: usize,
    /// Largest number of pixels held in strip buffers (and held back by the
    /// writer) at any one time.
    pub peak_buffered_pixels: usize,
}

impl RunStats {
    /// Fold in the timings of the fit that produced the source parameters.
    pub fn with_fit(mut self, fit: &FitReport) -> Self {
        self.sampling_seconds += fit.sampling_seconds;
        self.basis_fit_seconds += fit.basis_fit_seconds;
        self.stain_stats_seconds += fit.stain_stats_seconds;
        self.patches += fit.patches_visited;
        self.total_seconds += fit.fit_seconds();
        self
    }

    pub fn stage_rows(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("sampling", self.sampling_seconds),
            ("basis_fit", self.basis_fit_seconds),
            ("stain_stats", self.stain_stats_seconds),
            ("transform", self.transform_seconds),
            ("total", self.total_seconds),
        ]
    }

    /// CSV with columns `stage,seconds,pixels,patches`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("stage,seconds,pixels,patches\n");
        for (stage, seconds) in self.stage_rows() {
            let _ = writeln!(s, "{stage},{seconds:.6},{},{}", self.pixels, self.patches);
        }
        s
    }
}

/// Tracks pixels held in strip buffers.
#[derive(Debug, Default)]
struct BufferGauge {
    state: Mutex<GaugeState>,
}

#[derive(Debug, Default)]
struct GaugeState {
    strips: usize,
    held_by_sink: usize,
    peak: usize,
}

impl BufferGauge {
    fn update(&self, f: impl FnOnce(&mut GaugeState)) {
        let mut s = self.state.lock().unwrap_or_else(|p| p.into_inner());
        f(&mut s);
        s.peak = s.peak.max(s.strips + s.held_by_sink);
    }

    fn peak(&self) -> usize {
        self.state.lock().unwrap_or_else(|p| p.into_inner()).peak
    }
}

/// Normalize `slide` from `source` to `target` parameters, streaming strips
/// into `sink`.
///
/// One reader, `workers` pixel workers and an in-order writer (this thread)
/// share at most `workers` strips at a time, so buffered pixels never exceed
/// `workers * strip_height * width` plus whatever the sink holds back. Output
/// is identical for every strip height and worker count.
pub fn transform(
    slide: &dyn SlideSource,
    source: &FitParams,
    target: &FitParams,
    sink: &mut dyn StripSink,
    opts: &TransformOptions,
) -> Result<RunStats> {
    opts.validate()?;
    let started = Instant::now();
    let (width, height) = slide.dimensions();
    if sink.dimensions() != (width, height) {
        return Err(Error::InvalidConfig(format!(
            "output is {:?} but the slide is {width}x{height}",
            sink.dimensions()
        )));
    }
    let pixel_transform =
        PixelTransform::new(source, target, opts.coding.coder(&source.basis)).map_err(|e| e.at(Stage::Transform))?;
    log::info!("density scale factors {:.4?}", pixel_transform.factors());
    let strips = plan_strips(height, opts.strip_height)?.strips;
    let workers = opts.workers;
    let gauge = BufferGauge::default();
    let read_error: Mutex<Option<Error>> = Mutex::new(None);

    let (token_tx, token_rx) = bounded::<()>(workers);
    for _ in 0..workers {
        token_tx.send(()).expect("token channel open");
    }
    let (work_tx, work_rx) = bounded::<(usize, PixelBlock)>(workers);
    let (done_tx, done_rx) = bounded::<(usize, PixelBlock, f64)>(workers);

    let written = std::thread::scope(|scope| {
        let strips = &strips;
        let gauge = &gauge;
        let read_error = &read_error;
        scope.spawn(move || {
            for (i, &(y, h)) in strips.iter().enumerate() {
                if token_rx.recv().is_err() {
                    return;
                }
                gauge.update(|s| s.strips += width as usize * h as usize);
                match slide.read_region(0, y, width, h) {
                    Ok(block) => {
                        if work_tx.send((i, block)).is_err() {
                            return;
                        }
                    }
                    Err(e) => {
                        *read_error.lock().unwrap_or_else(|p| p.into_inner()) = Some(e);
                        return;
                    }
                }
            }
        });
        for _ in 0..workers {
            let rx = work_rx.clone();
            let tx = done_tx.clone();
            let pixel_transform = &pixel_transform;
            scope.spawn(move || {
                for (i, mut block) in rx {
                    let t = Instant::now();
                    pixel_transform.apply_in_place(&mut block.data);
                    if tx.send((i, block, t.elapsed().as_secs_f64())).is_err() {
                        return;
                    }
                }
            });
        }
        drop(work_rx);
        drop(done_tx);
        write_in_order(done_rx, token_tx, sink, gauge, strips.len())
    });

    let strip_seconds = match written {
        Ok(Some(times)) => times,
        Ok(None) => {
            let err = read_error
                .into_inner()
                .unwrap_or_else(|p| p.into_inner())
                .unwrap_or_else(|| Error::Io(std::io::Error::other("strip reader stopped early")));
            return Err(err.at(Stage::Transform));
        }
        Err(e) => return Err(e.at(Stage::Transform)),
    };
    sink.finish().map_err(|e| e.at(Stage::Transform))?;
    let elapsed = started.elapsed().as_secs_f64();
    Ok(RunStats {
        transform_seconds: elapsed,
        strip_seconds,
        total_seconds: elapsed,
        pixels: width as u64 * height as u64,
        workers,
        peak_buffered_pixels: gauge.peak(),
        ..RunStats::default()
    })
}

/// Commit finished strips in order. Returns per-strip worker times, or
/// `None` if the stream ended early (the reader failed).
fn write_in_order(
    done: Receiver<(usize, PixelBlock, f64)>,
    tokens: Sender<()>,
    sink: &mut dyn StripSink,
    gauge: &BufferGauge,
    count: usize,
) -> Result<Option<Vec<f64>>> {
    let mut pending = BTreeMap::new();
    let mut times = vec![0.0; count];
    let mut next = 0;
    for (i, block, seconds) in done {
        times[i] = seconds;
        pending.insert(i, block);
        while let Some(block) = pending.remove(&next) {
            sink.write_strip(&block).map_err(|e| match e {
                Error::Io(io) => Error::Write(io),
                other => other,
            })?;
            let held = sink.buffered_pixels();
            gauge.update(|s| {
                s.strips -= block.pixel_count();
                s.held_by_sink = held;
            });
            drop(block);
            let _ = tokens.send(());
            next += 1;
        }
    }
    Ok((next == count).then_some(times))
}

/// Normalize an image file into an output file.
pub fn transform_file(
    input: impl AsRef<Path>,
    output: impl AsRef<Path>,
    source: &FitParams,
    target: &FitParams,
    opts: &TransformOptions,
) -> Result<RunStats> {
    let slide = open_slide(input)?;
    let (w, h) = slide.dimensions();
    let mut sink = create_sink(output, w, h)?;
    transform(&*slide, source, target, sink.as_mut(), opts)
}
