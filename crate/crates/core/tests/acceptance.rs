//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines always show. Numeric
//! arguments select criteria (`cargo test --test acceptance -- 5 6`).

mod common;

use std::alloc::{GlobalAlloc, Layout, System};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spcn::bench::run_bench;
use spcn::image_io::{create_sink, open_slide, read_all, MemorySink, SlideSource};
use spcn::normalize::{stain_stats, DensitySamples};
use spcn::optics::{estimate_max_intensity, intensity, optical_density, BrightSamples, ODBlock};
use spcn::pipeline::{fit, transform, FitConfig, TransformOptions};
use spcn::profile::load_profile;
use spcn::stain_sep::{code_densities, fit_basis, order_stains, SnmfConfig, StainBasis};
use spcn::synthetic::{demo_source, demo_target, od_sample, perturb_direction, SyntheticSlide, TissueLayout};
use tempfile::tempdir;

use common::*;

const ROUND_TRIP_RUNTIME_S: f64 = 1.0;
const RECOVERY_NOISELESS_DEG: f64 = 5.0;
const RECOVERY_NOISY_DEG: f64 = 10.0;
const RECOVERY_DATASETS: u64 = 20;
const RECOVERY_PIXELS: usize = 10_000;
const RECOVERY_NOISE_SIGMA: f64 = 0.01;
const RECOVERY_RUNTIME_S: f64 = 30.0;
const DESCENT_SLACK: f64 = 1e-10;
const CODING_TRIPLES: usize = 1000;
const CODING_OBJECTIVE_TOL: f64 = 1e-6;
const SELF_NORM_EDGE: u32 = 2048;
const SELF_NORM_MAX_DEVIATION: u8 = 1;
const ORDER_BASES: usize = 100;
const ORDER_MAX_PERTURBATION_DEG: f64 = 10.0;
const BACKGROUND_TOLERANCE: u8 = 1;
const ORACLE_SAMPLES: usize = 200;
const PATCH_COUNT: usize = 50;
const PATCH_MEDIAN_REL_TOL: f64 = 0.10;
const BENCH_SIZES: [u32; 4] = [512, 1024, 2048, 4096];
const BENCH_FIT_RATIO_MAX: f64 = 4.0;
const BENCH_PER_PIXEL_BAND: (f64, f64) = (0.5, 2.0);
const BENCH_RUNTIME_S: f64 = 600.0;
const MEMORY_EDGE: u32 = 16_384;
const MEMORY_STRIP: u32 = 1024;
const MEMORY_WORKERS: usize = 2;
/// Allocation headroom beyond strip buffers: codec buffers, one tile row
/// carry, channel slots.
const MEMORY_ALLOC_SLACK_BYTES: usize = 16 << 20;

struct Counting;

static LIVE: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = unsafe { System.alloc(layout) };
        if !p.is_null() {
            let live = LIVE.fetch_add(layout.size(), Ordering::Relaxed) + layout.size();
            PEAK.fetch_max(live, Ordering::Relaxed);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        unsafe { System.dealloc(ptr, layout) };
        LIVE.fetch_sub(layout.size(), Ordering::Relaxed);
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let p = unsafe { System.realloc(ptr, layout, new_size) };
        if !p.is_null() {
            if new_size >= layout.size() {
                let live = LIVE.fetch_add(new_size - layout.size(), Ordering::Relaxed) + new_size - layout.size();
                PEAK.fetch_max(live, Ordering::Relaxed);
            } else {
                LIVE.fetch_sub(layout.size() - new_size, Ordering::Relaxed);
            }
        }
        p
    }
}

#[global_allocator]
static ALLOCATOR: Counting = Counting;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn beer_lambert_round_trip() -> Outcome {
    let started = Instant::now();
    let backgrounds = [[255.0; 3], [240.0; 3], [250.0, 245.0, 230.0]];
    let mut checked = 0;
    let mut failures = Vec::new();
    for i0 in backgrounds {
        for c in 0..3 {
            for i in 1..=255u8 {
                let back = intensity(optical_density(i, i0[c]), i0[c]);
                // Intensities above i0 clamp to zero density, hence to i0.
                let expected = if (i as f64) <= i0[c] { i } else { i0[c] as u8 };
                checked += 1;
                if back != expected || back != intensity_oracle(density_oracle(i, i0[c]), i0[c]) {
                    failures.push(format!("i0 {} i {i} -> {back}", i0[c]));
                }
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    outcome(
        failures.is_empty() && secs < ROUND_TRIP_RUNTIME_S,
        format!(
            "{checked} (intensity, i0) pairs, {} mismatches {:?}, {secs:.3}s (limit {ROUND_TRIP_RUNTIME_S}s)",
            failures.len(),
            failures.iter().take(3).collect::<Vec<_>>()
        ),
    )
}

struct RecoveryRun {
    noisy: bool,
    max_angle: f64,
    history: Vec<f64>,
}

struct RecoveryRuns {
    runs: Vec<RecoveryRun>,
    seconds: f64,
}

fn recovery_runs() -> &'static RecoveryRuns {
    static RUNS: OnceLock<RecoveryRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let truth = [hematoxylin(), eosin()];
        let basis = StainBasis::from_columns(truth[0], truth[1]).unwrap();
        let started = Instant::now();
        let mut runs = Vec::new();
        for seed in 0..RECOVERY_DATASETS {
            for noisy in [false, true] {
                let sigma = if noisy { RECOVERY_NOISE_SIGMA } else { 0.0 };
                let (od, _) = od_sample(&basis, RECOVERY_PIXELS, sigma, 1000 + seed);
                let cfg = SnmfConfig {
                    seed,
                    ..SnmfConfig::default()
                };
                let fitted = fit_basis(&od, &cfg).unwrap();
                let max_angle = (0..2)
                    .map(|j| angle_deg(fitted.basis.column(j), truth[j]))
                    .fold(0.0, f64::max);
                runs.push(RecoveryRun {
                    noisy,
                    max_angle,
                    history: fitted.objective_history,
                });
            }
        }
        RecoveryRuns {
            runs,
            seconds: started.elapsed().as_secs_f64(),
        }
    })
}

fn snmf_recovery() -> Outcome {
    let r = recovery_runs();
    let worst = |noisy: bool| {
        r.runs
            .iter()
            .filter(|x| x.noisy == noisy)
            .map(|x| x.max_angle)
            .fold(0.0, f64::max)
    };
    let (clean, noisy) = (worst(false), worst(true));
    outcome(
        clean <= RECOVERY_NOISELESS_DEG && noisy <= RECOVERY_NOISY_DEG && r.seconds < RECOVERY_RUNTIME_S,
        format!(
            "{RECOVERY_DATASETS} datasets x (noiseless, sigma {RECOVERY_NOISE_SIGMA}): worst angle {clean:.4} deg \
             (limit {RECOVERY_NOISELESS_DEG}) / {noisy:.4} deg (limit {RECOVERY_NOISY_DEG}), {:.1}s (limit {RECOVERY_RUNTIME_S}s)",
            r.seconds
        ),
    )
}

fn objective_descent() -> Outcome {
    let r = recovery_runs();
    let mut worst_rise = f64::NEG_INFINITY;
    let mut steps = 0;
    for run in &r.runs {
        for pair in run.history.windows(2) {
            steps += 1;
            worst_rise = worst_rise.max(pair[1] - pair[0]);
        }
    }
    outcome(
        worst_rise <= DESCENT_SLACK,
        format!(
            "{} runs, {steps} outer iterations, largest rise {worst_rise:.3e} (slack {DESCENT_SLACK:e})",
            r.runs.len()
        ),
    )
}

fn random_unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [rng.random(), rng.random(), rng.random()];
        if v.iter().map(|x| x * x).sum::<f64>() > 1e-6 {
            return unit(v);
        }
    }
}

fn coding_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    let mut negative = 0;
    for _ in 0..CODING_TRIPLES {
        let w = [random_unit(&mut rng), random_unit(&mut rng)];
        let v = [2.0 * rng.random::<f64>(), 2.0 * rng.random::<f64>(), 2.0 * rng.random::<f64>()];
        let lambda = if rng.random::<f64>() < 0.2 { 0.0 } else { 0.5 * rng.random::<f64>() };
        let basis = StainBasis::from_columns(w[0], w[1]).unwrap();
        let h = code_densities(&ODBlock::new(1, 1, vec![v]), &basis, lambda).data[0];
        if h[0] < 0.0 || h[1] < 0.0 {
            negative += 1;
        }
        let gap = lasso_objective(v, w, h, lambda) - lasso_objective(v, w, lasso_oracle(v, w, lambda), lambda);
        worst = worst.max(gap.abs());
    }
    outcome(
        worst <= CODING_OBJECTIVE_TOL && negative == 0,
        format!("{CODING_TRIPLES} triples, worst objective gap {worst:.3e} (tol {CODING_OBJECTIVE_TOL:e}), {negative} negative"),
    )
}

fn self_normalization_deviation(slide: &SyntheticSlide) -> (u8, [f64; 3], [f64; 2]) {
    let params = fit(slide, &FitConfig::default()).unwrap().params;
    let (w, h) = slide.dimensions();
    let mut sink = MemorySink::new(w, h);
    transform(slide, &params, &params, &mut sink, &TransformOptions::default()).unwrap();
    let out = sink.into_block().unwrap();
    let input = read_all(slide, 256).unwrap();
    let angles = [0, 1].map(|j| angle_deg(params.basis.column(j), slide.basis.column(j)));
    (max_deviation(&input, &out), params.i0.0, angles)
}

fn self_normalization() -> Outcome {
    // Exactly sparse: every tissue pixel holds a single stain.
    let sparse = SyntheticSlide::new(SELF_NORM_EDGE, SELF_NORM_EDGE, 31).with_eosin_trace(0.0);
    let (dev, i0, angles) = self_normalization_deviation(&sparse);
    // Reported only: faint eosin inside nuclei biases the sparse fit.
    let (mixed_dev, _, mixed_angles) = self_normalization_deviation(&SyntheticSlide::new(SELF_NORM_EDGE, SELF_NORM_EDGE, 31));
    outcome(
        dev <= SELF_NORM_MAX_DEVIATION,
        format!(
            "{SELF_NORM_EDGE}x{SELF_NORM_EDGE} sparse rank-2 slide: max deviation {dev} (limit {SELF_NORM_MAX_DEVIATION}), \
             fitted i0 {i0:?}, basis error {angles:.3?} deg; with eosin traces in nuclei (not asserted): deviation {mixed_dev}, \
             basis error {mixed_angles:.3?} deg"
        ),
    )
}

fn strip_invariance() -> Outcome {
    let edge = 1000;
    let slide = demo_source(edge);
    let source = fit(&slide, &FitConfig::default()).unwrap().params;
    let target = fit(&demo_target(512), &FitConfig::default()).unwrap().params;
    let run = |strip_height: u32| {
        let mut sink = MemorySink::new(edge, edge);
        let opts = TransformOptions {
            strip_height,
            ..TransformOptions::default()
        };
        transform(&slide, &source, &target, &mut sink, &opts).unwrap();
        sink.into_block().unwrap()
    };
    let full = run(edge);
    let identical: Vec<bool> = [64, 500].iter().map(|&h| run(h) == full).collect();
    outcome(
        identical.iter().all(|&b| b),
        format!("{edge}x{edge}: strips 64 / 500 equal full-height output: {identical:?}"),
    )
}

fn stain_order() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut bad_order = 0;
    let mut not_invariant = 0;
    let mut not_idempotent = 0;
    for _ in 0..ORDER_BASES {
        let hd = rng.random::<f64>() * ORDER_MAX_PERTURBATION_DEG;
        let ed = rng.random::<f64>() * ORDER_MAX_PERTURBATION_DEG;
        let h = perturb_direction(hematoxylin(), hd, &mut rng);
        let e = perturb_direction(eosin(), ed, &mut rng);
        let w = StainBasis::from_columns(h, e).unwrap();
        let (ordered, _) = order_stains(&w);
        let (from_swapped, perm) = order_stains(&w.swapped());
        let rb = |c: [f64; 3]| c[0] - c[2];
        if rb(ordered.column(0)) < rb(ordered.column(1)) {
            bad_order += 1;
        }
        if from_swapped != ordered || from_swapped.column(0) != w.swapped().column(perm[0]) {
            not_invariant += 1;
        }
        if order_stains(&ordered).0 != ordered {
            not_idempotent += 1;
        }
    }
    outcome(
        bad_order + not_invariant + not_idempotent == 0,
        format!(
            "{ORDER_BASES} bases perturbed by up to {ORDER_MAX_PERTURBATION_DEG} deg: {bad_order} misordered, \
             {not_invariant} permutation-dependent, {not_idempotent} not idempotent"
        ),
    )
}

fn background_fidelity() -> Outcome {
    let edge = 1024;
    let slide = demo_source(edge);
    let source = fit(&slide, &FitConfig::default()).unwrap().params;
    let target = fit(&demo_target(512), &FitConfig::default()).unwrap().params;
    let mut sink = MemorySink::new(edge, edge);
    transform(&slide, &source, &target, &mut sink, &TransformOptions::default()).unwrap();
    let out = sink.into_block().unwrap();
    let mut background = 0usize;
    let mut worst = 0u8;
    for y in 0..edge {
        for x in 0..edge {
            if slide.densities_at(x, y) == [0.0, 0.0] {
                background += 1;
                let px = out.pixel(x, y);
                worst = worst.max(px.iter().map(|&v| 255 - v).max().unwrap());
            }
        }
    }
    outcome(
        worst <= BACKGROUND_TOLERANCE && background > 0,
        format!(
            "source background {:?} fitted as {:?}, target i0 {:?}: {background} background pixels, worst distance from 255 is {worst} (limit {BACKGROUND_TOLERANCE})",
            slide.background.0, source.i0.0, target.i0.0
        ),
    )
}

fn order_statistic_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut mismatches = 0;
    for _ in 0..ORACLE_SAMPLES {
        let pools: [Vec<u8>; 3] = std::array::from_fn(|_| {
            let n = if rng.random::<f64>() < 0.1 { 0 } else { rng.random_range(1..400) };
            (0..n).map(|_| rng.random_range(221..=255u8)).collect()
        });
        let est = estimate_max_intensity(&BrightSamples(pools.clone()));
        for c in 0..3 {
            if est.i0.0[c] != max_intensity_oracle(&pools[c]) {
                mismatches += 1;
            }
        }

        let n = rng.random_range(1..500);
        let h: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0).collect();
        let e: Vec<f64> = (0..n).map(|_| rng.random::<f64>().powi(3)).collect();
        let pooled = stain_stats(DensitySamples::Pooled([&h, &e])).unwrap();
        if pooled.p99 != [percentile_oracle(&h, 99.0).unwrap(), percentile_oracle(&e, 99.0).unwrap()] {
            mismatches += 1;
        }
        let patches: Vec<[f64; 2]> = (0..rng.random_range(1..60))
            .map(|_| [rng.random::<f64>(), rng.random::<f64>() * 3.0])
            .collect();
        let by_patch = stain_stats(DensitySamples::PatchPercentiles(&patches)).unwrap();
        let column = |j: usize| patches.iter().map(|p| p[j]).collect::<Vec<_>>();
        if by_patch.p99 != [median_oracle(&column(0)).unwrap(), median_oracle(&column(1)).unwrap()] {
            mismatches += 1;
        }
    }

    // 50 patches of i.i.d. exponential densities.
    let mut patch_p99 = Vec::new();
    let mut pooled = [Vec::new(), Vec::new()];
    for _ in 0..PATCH_COUNT {
        let mut per = [Vec::new(), Vec::new()];
        for _ in 0..2000 {
            for (j, scale) in [0.4, 0.25].into_iter().enumerate() {
                let x = -scale * (1.0 - rng.random::<f64>()).ln();
                per[j].push(x);
                pooled[j].push(x);
            }
        }
        patch_p99.push([percentile_oracle(&per[0], 99.0).unwrap(), percentile_oracle(&per[1], 99.0).unwrap()]);
    }
    let median = stain_stats(DensitySamples::PatchPercentiles(&patch_p99)).unwrap().p99;
    let exact = stain_stats(DensitySamples::Pooled([&pooled[0], &pooled[1]])).unwrap().p99;
    let rel = (0..2)
        .map(|j| (median[j] - exact[j]).abs() / exact[j])
        .fold(0.0, f64::max);
    outcome(
        mismatches == 0 && rel <= PATCH_MEDIAN_REL_TOL,
        format!(
            "{ORACLE_SAMPLES} random samples: {mismatches} oracle mismatches; median of {PATCH_COUNT} patch p99 vs pooled p99: \
             {:.2}% relative error (limit {:.0}%)",
            rel * 100.0,
            PATCH_MEDIAN_REL_TOL * 100.0
        ),
    )
}

fn scaling_trends() -> Outcome {
    let dir = tempdir().unwrap();
    let started = Instant::now();
    let report = run_bench(&BENCH_SIZES, &FitConfig::default(), &TransformOptions::default(), dir.path()).unwrap();
    let secs = started.elapsed().as_secs_f64();
    let fit_ratio = report.fit_time_ratio().unwrap();
    let per_pixel = report.per_pixel_ratio().unwrap();
    let times: Vec<String> = report
        .runs
        .iter()
        .map(|r| format!("{}: fit {:.2}s transform {:.2}s", r.edge, r.fit_seconds(), r.stats.transform_seconds))
        .collect();
    outcome(
        fit_ratio <= BENCH_FIT_RATIO_MAX
            && (BENCH_PER_PIXEL_BAND.0..=BENCH_PER_PIXEL_BAND.1).contains(&per_pixel)
            && secs < BENCH_RUNTIME_S,
        format!(
            "fit time ratio {fit_ratio:.2} (limit {BENCH_FIT_RATIO_MAX}); transform time ratio / area ratio {per_pixel:.2} \
             (band {BENCH_PER_PIXEL_BAND:?}); total {secs:.1}s (limit {BENCH_RUNTIME_S}s); [{}]",
            times.join(", ")
        ),
    )
}

fn memory_bound() -> Outcome {
    let dir = tempdir().unwrap();
    let input = dir.path().join("large.tif");
    let output = dir.path().join("large_normalized.tif");
    let slide = SyntheticSlide::new(MEMORY_EDGE, MEMORY_EDGE, 5).with_layout(TissueLayout::Scattered {
        background_fraction: 0.7,
    });
    let started = Instant::now();
    slide.write_to(&input).unwrap();
    let generated = started.elapsed().as_secs_f64();
    let target = fit(&demo_target(512), &FitConfig::default()).unwrap().params;
    let tiled = open_slide(&input).unwrap();
    let source = fit(&*tiled, &FitConfig::default()).unwrap().params;
    let mut sink = create_sink(&output, MEMORY_EDGE, MEMORY_EDGE).unwrap();
    let opts = TransformOptions {
        strip_height: MEMORY_STRIP,
        workers: MEMORY_WORKERS,
        ..TransformOptions::default()
    };
    let baseline = LIVE.load(Ordering::Relaxed);
    PEAK.store(baseline, Ordering::Relaxed);
    let stats = transform(&*tiled, &source, &target, sink.as_mut(), &opts).unwrap();
    let heap_growth = PEAK.load(Ordering::Relaxed).saturating_sub(baseline);
    drop(sink);
    let written = open_slide(&output).unwrap().dimensions();
    let bound_pixels = MEMORY_WORKERS * MEMORY_STRIP as usize * MEMORY_EDGE as usize;
    let bound_bytes = 3 * bound_pixels + MEMORY_ALLOC_SLACK_BYTES;
    outcome(
        stats.peak_buffered_pixels <= bound_pixels && heap_growth <= bound_bytes && written == (MEMORY_EDGE, MEMORY_EDGE),
        format!(
            "{MEMORY_EDGE}x{MEMORY_EDGE} tiled TIFF, strip {MEMORY_STRIP}, {MEMORY_WORKERS} workers: peak buffered {} px \
             (bound {bound_pixels}); peak heap growth {:.1} MiB (bound {:.1} MiB); generate {generated:.0}s, transform {:.0}s",
            stats.peak_buffered_pixels,
            heap_growth as f64 / (1 << 20) as f64,
            bound_bytes as f64 / (1 << 20) as f64,
            stats.transform_seconds
        ),
    )
}

fn spcn(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_spcn"))
        .args(args)
        .env_remove("SPCN_WORKERS")
        .output()
        .unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn cli_contract() -> Outcome {
    let dir = tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    demo_source(256).write_to(p("source.png")).unwrap();
    demo_target(256).write_to(p("target.png")).unwrap();
    write_solid(&dir.path().join("white.png"), 64, 64, [255; 3]);
    write_single_stain(&dir.path().join("single.png"), 64, [150, 100, 180]);
    std::fs::write(p("notes.txt"), "not an image").unwrap();
    std::fs::create_dir(p("batch")).unwrap();
    demo_source(200).write_to(p("batch/a.png")).unwrap();
    demo_target(200).write_to(p("batch/b.tif")).unwrap();
    write_solid(&dir.path().join("batch/c_blank.png"), 64, 64, [255; 3]);
    std::fs::create_dir(p("empty")).unwrap();

    let mut checks: Vec<(String, bool)> = Vec::new();
    let mut expect = |label: &str, code: i32, run: (i32, String, String), extra: bool| {
        checks.push((format!("{label}: exit {} (want {code})", run.0), run.0 == code && extra));
    };

    let r = spcn(&["fit", &p("target.png"), "--profile", &p("target.profile")]);
    let profile_ok = load_profile(p("target.profile")).is_ok();
    expect("fit", 0, r, profile_ok);
    let r = spcn(&["normalize", &p("source.png"), "--target", &p("target.profile"), "--out", &p("out.tif")]);
    let dims_ok = open_slide(p("out.tif")).map(|s| s.dimensions() == (256, 256)).unwrap_or(false);
    expect("normalize", 0, r, dims_ok);
    let r = spcn(&["batch", &p("batch"), "--target", &p("target.profile"), "--out", &p("batch_out")]);
    let outputs = std::fs::read_dir(p("batch_out")).map(|d| d.count()).unwrap_or(0);
    let names_failure = r.2.contains("c_blank.png") && r.2.contains("FAILED");
    expect("batch with a blank input", 1, r, outputs == 2 && names_failure);
    let missing = p("missing.png");
    let r = spcn(&["normalize", &p("source.png"), "--target", &missing, "--out", &p("x.png")]);
    let named = r.2.contains(&missing);
    expect("missing target", 2, r, named);
    expect("unsupported input", 2, spcn(&["fit", &p("notes.txt")]), true);
    expect("empty batch directory", 2, spcn(&["batch", &p("empty"), "--target", &p("target.profile"), "--out", &p("o")]), true);
    expect("bad size list", 2, spcn(&["bench", "--sizes", "512,x"]), true);
    expect("blank slide", 3, spcn(&["fit", &p("white.png")]), true);
    expect("single-stain slide", 4, spcn(&["fit", &p("single.png")]), true);
    let unwritable = p("no_such_dir/out.png");
    expect(
        "unwritable output",
        5,
        spcn(&["normalize", &p("source.png"), "--target", &p("target.profile"), "--out", &unwritable]),
        true,
    );

    let failed: Vec<&String> = checks.iter().filter(|c| !c.1).map(|c| &c.0).collect();
    outcome(
        failed.is_empty(),
        if failed.is_empty() {
            format!("{} fixtures: exit codes 0-5 as documented", checks.len())
        } else {
            format!("failing: {failed:?}")
        },
    )
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 12] = [
        (1, "Beer-Lambert round trip", beer_lambert_round_trip),
        (2, "SNMF basis recovery", snmf_recovery),
        (3, "objective descent", objective_descent),
        (4, "sparse coding vs active-set oracle", coding_oracle),
        (5, "self-normalization", self_normalization),
        (6, "strip invariance", strip_invariance),
        (7, "stain-order heuristic", stain_order),
        (8, "background fidelity", background_fidelity),
        (9, "percentile and median oracles", order_statistic_oracles),
        (10, "scaling trends", scaling_trends),
        (11, "memory bound", memory_bound),
        (12, "CLI contract", cli_contract),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failures = 0;
    for (n, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !result.pass {
            failures += 1;
        }
        println!(
            "criterion {n:>2} {} {name} [{:.1}s]: {}",
            if result.pass { "PASS" } else { "FAIL" },
            started.elapsed().as_secs_f64(),
            result.detail
        );
    }
    if failures > 0 {
        println!("acceptance: {failures} criteria failed");
        std::process::exit(1);
    }
    println!("acceptance: all selected criteria passed");
}
