//! Command-line front end.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | batch finished but at least one file failed |
//! | 2 | bad arguments or configuration, missing file, unsupported or corrupt input, empty batch directory |
//! | 3 | blank slide or too few tissue pixels |
//! | 4 | degenerate or absent stain |
//! | 5 | output could not be written |
//!
//! Settings come from flags, then `SPCN_WORKERS` (worker count only), then a
//! `--config` file of `flag-name = value` lines, then built-in defaults.
//! Standard output carries only data (paths, CSV, profiles); diagnostics go
//! to standard error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::bench::{parse_sizes, run_bench};
use crate::error::{Error, Result};
use crate::image_io::{create_sink, open_slide};
use crate::normalize::FitParams;
use crate::pipeline::{fit, fit_file, transform, FitConfig, FitReport, RunStats, TransformOptions};
use crate::profile::{is_profile, load_profile, save_profile, to_profile_string};
use crate::synthetic::{demo_source, demo_target};

pub const WORKERS_ENV: &str = "SPCN_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "spcn", version, about = "Structure-preserving stain color normalization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub options: Options,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit an image and write its stain profile.
    Fit {
        input: PathBuf,
        /// Profile output path; printed to standard output when omitted.
        #[arg(long)]
        profile: Option<PathBuf>,
    },
    /// Normalize one image to a target image or profile.
    Normalize {
        input: PathBuf,
        /// Target image or profile.
        #[arg(long)]
        target: PathBuf,
        /// Output image (.png, .tif, .tiff).
        #[arg(long)]
        out: PathBuf,
        /// Use this source profile instead of fitting the input.
        #[arg(long)]
        profile: Option<PathBuf>,
    },
    /// Normalize every image in a directory to one target.
    Batch {
        input_dir: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Time fit and transform on synthetic slides of several sizes.
    Bench {
        /// Comma-separated square edges.
        #[arg(long, default_value = "512,1024,2048,4096")]
        sizes: String,
    },
    /// Write the bundled synthetic source and target images, the target
    /// profile and the normalized source into a directory.
    Demo {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 512)]
        size: u32,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct Options {
    /// Flat `flag-name = value` settings file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Sparsity weight of the basis fit.
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    /// Sparsity weight when coding densities for statistics and normalization.
    #[arg(long, global = true)]
    pub coding_lambda: Option<f64>,
    #[arg(long, global = true)]
    pub white_threshold: Option<u8>,
    #[arg(long, global = true)]
    pub sample_cap: Option<usize>,
    #[arg(long, global = true)]
    pub target_pixels: Option<usize>,
    #[arg(long, global = true)]
    pub max_patches: Option<usize>,
    #[arg(long, global = true)]
    pub patch_size: Option<u32>,
    #[arg(long, global = true)]
    pub max_iters: Option<usize>,
    #[arg(long, global = true)]
    pub strip_height: Option<u32>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, env = WORKERS_ENV)]
    pub workers: Option<usize>,
    /// Median of per-patch percentiles instead of pooled percentiles.
    #[arg(long, global = true)]
    pub patch_stats: bool,
    /// Unconstrained pseudo-inverse density coding.
    #[arg(long, global = true)]
    pub pseudo_inverse: bool,
    /// Write stage timings as CSV.
    #[arg(long, global = true)]
    pub stats_csv: Option<PathBuf>,
    #[arg(short, long, global = true)]
    pub verbose: bool,
}

/// Resolved settings.
#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub fit: FitConfig,
    pub transform: TransformOptions,
    pub stats_csv: Option<PathBuf>,
    pub verbose: bool,
}

impl Default for CliConfig {
    fn default() -> Self {
        CliConfig {
            fit: FitConfig::default(),
            transform: TransformOptions::default(),
            stats_csv: None,
            verbose: false,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::InvalidConfig(format!("{key} = {value:?}: {e}")))
}

impl CliConfig {
    /// Apply one `flag-name = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "lambda" => self.fit.snmf.lambda = parse_value(key, value)?,
            "coding-lambda" => self.set_coding_lambda(parse_value(key, value)?),
            "white-threshold" => self.fit.white_threshold = parse_value(key, value)?,
            "sample-cap" => self.fit.sample_cap = parse_value(key, value)?,
            "target-pixels" => self.fit.plan.target_pixels = parse_value(key, value)?,
            "max-patches" => self.fit.plan.max_patches = parse_value(key, value)?,
            "patch-size" => self.fit.plan.patch_size = parse_value(key, value)?,
            "max-iters" => self.fit.snmf.max_outer_iters = parse_value(key, value)?,
            "strip-height" => self.transform.strip_height = parse_value(key, value)?,
            "seed" => self.set_seed(parse_value(key, value)?),
            "workers" => self.transform.workers = parse_value(key, value)?,
            "patch-stats" => self.fit.patch_stats = parse_value(key, value)?,
            "pseudo-inverse" => self.set_pseudo_inverse(parse_value(key, value)?),
            "stats-csv" => self.stats_csv = Some(PathBuf::from(value)),
            "verbose" => self.verbose = parse_value(key, value)?,
            _ => return Err(Error::InvalidConfig(format!("unknown setting `{key}`"))),
        }
        Ok(())
    }

    fn set_seed(&mut self, seed: u64) {
        self.fit.plan.seed = seed;
        self.fit.snmf.seed = seed;
    }

    fn set_coding_lambda(&mut self, lambda: f64) {
        self.fit.coding.lambda = lambda;
        self.transform.coding.lambda = lambda;
    }

    fn set_pseudo_inverse(&mut self, on: bool) {
        self.fit.coding.pseudo_inverse = on;
        self.transform.coding.pseudo_inverse = on;
    }

    pub fn apply_file_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("config line {}: expected `key = value`", n + 1)))?;
            self.set(key.trim().trim_start_matches("--"), value.trim())?;
        }
        Ok(())
    }

    /// Defaults, overlaid by the config file, overlaid by flags.
    pub fn resolve(o: &Options) -> Result<Self> {
        let mut cfg = CliConfig::default();
        if let Some(path) = &o.config {
            let text = std::fs::read_to_string(path).map_err(|source| Error::Open {
                path: path.clone(),
                source,
            })?;
            cfg.apply_file_text(&text)?;
        }
        if let Some(v) = o.lambda {
            cfg.fit.snmf.lambda = v;
        }
        if let Some(v) = o.coding_lambda {
            cfg.set_coding_lambda(v);
        }
        if let Some(v) = o.white_threshold {
            cfg.fit.white_threshold = v;
        }
        if let Some(v) = o.sample_cap {
            cfg.fit.sample_cap = v;
        }
        if let Some(v) = o.target_pixels {
            cfg.fit.plan.target_pixels = v;
        }
        if let Some(v) = o.max_patches {
            cfg.fit.plan.max_patches = v;
        }
        if let Some(v) = o.patch_size {
            cfg.fit.plan.patch_size = v;
        }
        if let Some(v) = o.max_iters {
            cfg.fit.snmf.max_outer_iters = v;
        }
        if let Some(v) = o.strip_height {
            cfg.transform.strip_height = v;
        }
        if let Some(v) = o.seed {
            cfg.set_seed(v);
        }
        if let Some(v) = o.workers {
            cfg.transform.workers = v;
        }
        if o.patch_stats {
            cfg.fit.patch_stats = true;
        }
        if o.pseudo_inverse {
            cfg.set_pseudo_inverse(true);
        }
        if let Some(p) = &o.stats_csv {
            cfg.stats_csv = Some(p.clone());
        }
        cfg.verbose |= o.verbose;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.fit.validate()?;
        self.transform.validate()
    }
}

fn init_logging(verbose: bool) {
    let level = if verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .format_target(false)
        .target(env_logger::Target::Stderr)
        .try_init();
    log::set_max_level(level);
}

/// Parse arguments, run one command and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let cfg = match CliConfig::resolve(&cli.options) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    init_logging(cfg.verbose);
    match execute(&cli.command, &cfg) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(command: &Command, cfg: &CliConfig) -> Result<i32> {
    match command {
        Command::Fit { input, profile } => cmd_fit(input, profile.as_deref(), cfg),
        Command::Normalize {
            input,
            target,
            out,
            profile,
        } => cmd_normalize(input, target, out, profile.as_deref(), cfg),
        Command::Batch { input_dir, target, out } => cmd_batch(input_dir, target, out, cfg),
        Command::Bench { sizes } => cmd_bench(sizes, cfg),
        Command::Demo { out, size } => cmd_demo(out, *size, cfg),
    }
}

fn fitted(path: &Path, cfg: &CliConfig) -> Result<FitReport> {
    log::info!("fitting {}", path.display());
    fit_file(path, &cfg.fit)
}

/// Load a profile, or fit the image at `path`.
fn params_for(path: &Path, cfg: &CliConfig) -> Result<FitParams> {
    if is_profile(path) {
        log::info!("loading profile {}", path.display());
        load_profile(path)
    } else {
        Ok(fitted(path, cfg)?.params)
    }
}

fn write_stats(stats: &RunStats, cfg: &CliConfig) -> Result<()> {
    if let Some(path) = &cfg.stats_csv {
        std::fs::write(path, stats.to_csv()).map_err(Error::Write)?;
    }
    Ok(())
}

pub fn cmd_fit(input: &Path, profile: Option<&Path>, cfg: &CliConfig) -> Result<i32> {
    let report = fitted(input, cfg)?;
    match profile {
        Some(out) => {
            save_profile(out, &report.params)?;
            println!("{}", out.display());
        }
        None => print!("{}", to_profile_string(&report.params)),
    }
    write_stats(&RunStats::default().with_fit(&report), cfg)?;
    Ok(0)
}

fn normalize_one(
    input: &Path,
    target: &FitParams,
    out: &Path,
    source_profile: Option<&Path>,
    cfg: &CliConfig,
) -> Result<RunStats> {
    let (source, fit_report) = match source_profile {
        Some(p) => (load_profile(p)?, None),
        None => {
            let r = fitted(input, cfg)?;
            (r.params.clone(), Some(r))
        }
    };
    let slide = open_slide(input)?;
    let (w, h) = slide.dimensions();
    log::info!("normalizing {} ({w}x{h}) into {}", input.display(), out.display());
    let mut sink = create_sink(out, w, h)?;
    let stats = transform(&*slide, &source, target, sink.as_mut(), &cfg.transform);
    drop(sink);
    let stats = match stats {
        Ok(s) => s,
        Err(e) => {
            let _ = std::fs::remove_file(out);
            return Err(e);
        }
    };
    log::info!(
        "transform: {:.3}s over {} strips, peak {} buffered pixels",
        stats.transform_seconds,
        stats.strip_seconds.len(),
        stats.peak_buffered_pixels
    );
    Ok(match &fit_report {
        Some(r) => stats.with_fit(r),
        None => stats,
    })
}

pub fn cmd_normalize(
    input: &Path,
    target: &Path,
    out: &Path,
    source_profile: Option<&Path>,
    cfg: &CliConfig,
) -> Result<i32> {
    let target_params = params_for(target, cfg)?;
    let stats = normalize_one(input, &target_params, out, source_profile, cfg)?;
    write_stats(&stats, cfg)?;
    println!("{}", out.display());
    Ok(0)
}

fn batch_inputs(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|source| Error::Open {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .filter(|p| !p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with('.')))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::InvalidConfig(format!("no input files in {}", dir.display())));
    }
    Ok(files)
}

fn batch_output(out_dir: &Path, input: &Path) -> PathBuf {
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
    let ext = match input.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "png",
        _ => "tif",
    };
    out_dir.join(format!("{stem}_normalized.{ext}"))
}

pub fn cmd_batch(input_dir: &Path, target: &Path, out_dir: &Path, cfg: &CliConfig) -> Result<i32> {
    let inputs = batch_inputs(input_dir)?;
    let target_params = params_for(target, cfg)?;
    std::fs::create_dir_all(out_dir).map_err(Error::Write)?;
    let mut rows = Vec::new();
    let mut all_stats = RunStats::default();
    for input in &inputs {
        let out = batch_output(out_dir, input);
        let started = Instant::now();
        let result = normalize_one(input, &target_params, &out, None, cfg);
        let seconds = started.elapsed().as_secs_f64();
        match &result {
            Ok(stats) => {
                println!("{}", out.display());
                all_stats = merge(all_stats, stats);
            }
            Err(e) => log::error!("{}: {e}", input.display()),
        }
        rows.push((input.clone(), result.map(|_| ()), seconds));
    }
    let failures = rows.iter().filter(|r| r.1.is_err()).count();
    eprintln!("{:<40} {:<8} {:>9}  detail", "file", "status", "seconds");
    for (input, result, seconds) in &rows {
        let name = input.file_name().map(|n| n.to_string_lossy()).unwrap_or_default();
        let (status, detail) = match result {
            Ok(()) => ("ok", String::new()),
            Err(e) => ("FAILED", format!("exit {}: {e}", e.exit_code())),
        };
        eprintln!("{name:<40} {status:<8} {seconds:>9.3}  {detail}");
    }
    eprintln!("{} of {} files normalized", rows.len() - failures, rows.len());
    write_stats(&all_stats, cfg)?;
    Ok(if failures == 0 { 0 } else { 1 })
}

fn merge(mut acc: RunStats, s: &RunStats) -> RunStats {
    acc.sampling_seconds += s.sampling_seconds;
    acc.basis_fit_seconds += s.basis_fit_seconds;
    acc.stain_stats_seconds += s.stain_stats_seconds;
    acc.transform_seconds += s.transform_seconds;
    acc.total_seconds += s.total_seconds;
    acc.pixels += s.pixels;
    acc.patches += s.patches;
    acc.workers = s.workers;
    acc.peak_buffered_pixels = acc.peak_buffered_pixels.max(s.peak_buffered_pixels);
    acc
}

pub fn cmd_bench(sizes: &str, cfg: &CliConfig) -> Result<i32> {
    let sizes = parse_sizes(sizes)?;
    let dir = tempfile::tempdir().map_err(Error::Io)?;
    let report = run_bench(&sizes, &cfg.fit, &cfg.transform, dir.path())?;
    let csv = report.to_csv();
    print!("{csv}");
    if let Some(path) = &cfg.stats_csv {
        std::fs::write(path, &csv).map_err(Error::Write)?;
    }
    if let (Some(fit_ratio), Some(pixel_ratio)) = (report.fit_time_ratio(), report.per_pixel_ratio()) {
        eprintln!("basis-fit time ratio largest/smallest: {fit_ratio:.3}");
        eprintln!("transform time ratio over area ratio: {pixel_ratio:.3}");
    }
    Ok(0)
}

pub fn cmd_demo(out_dir: &Path, size: u32, cfg: &CliConfig) -> Result<i32> {
    std::fs::create_dir_all(out_dir).map_err(Error::Write)?;
    let source_path = out_dir.join("demo_source.png");
    let target_path = out_dir.join("demo_target.png");
    let profile_path = out_dir.join("demo_target.profile");
    let normalized_path = out_dir.join("demo_source_normalized.png");
    demo_source(size).write_to(&source_path)?;
    demo_target(size).write_to(&target_path)?;
    let mut target = fit(&demo_target(size), &cfg.fit)?.params;
    target.provenance.source = target_path.display().to_string();
    save_profile(&profile_path, &target)?;
    let stats = normalize_one(&source_path, &target, &normalized_path, None, cfg)?;
    write_stats(&stats, cfg)?;
    for p in [&source_path, &target_path, &profile_path, &normalized_path] {
        println!("{}", p.display());
    }
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(args).unwrap()
    }

    #[test]
    fn flags_override_config_file_which_overrides_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("spcn.conf");
        std::fs::write(&path, "# settings\nlambda = 0.3\nstrip-height = 64\nseed = 5\n").unwrap();
        let conf = path.to_str().unwrap();
        let cli = parse(&["spcn", "fit", "x.png", "--config", conf, "--lambda", "0.2"]);
        let cfg = CliConfig::resolve(&cli.options).unwrap();
        assert_eq!(cfg.fit.snmf.lambda, 0.2);
        assert_eq!(cfg.transform.strip_height, 64);
        assert_eq!((cfg.fit.plan.seed, cfg.fit.snmf.seed), (5, 5));
        assert_eq!(cfg.fit.white_threshold, 220);
        assert_eq!(cfg.fit.plan.max_patches, 20);
    }

    #[test]
    fn invalid_settings_are_rejected_before_io() {
        let cli = parse(&["spcn", "fit", "/does/not/exist.png", "--max-patches", "0"]);
        assert!(matches!(CliConfig::resolve(&cli.options), Err(Error::InvalidConfig(_))));
        let mut cfg = CliConfig::default();
        assert!(cfg.set("no-such-flag", "1").is_err());
        assert!(cfg.set("lambda", "abc").is_err());
        assert!(cfg.apply_file_text("lambda 0.1").is_err());
        cfg.set("pseudo-inverse", "true").unwrap();
        assert!(cfg.fit.coding.pseudo_inverse && cfg.transform.coding.pseudo_inverse);
    }

    #[test]
    fn batch_output_names() {
        let out = Path::new("/o");
        assert_eq!(batch_output(out, Path::new("/i/a.PNG")), Path::new("/o/a_normalized.png"));
        assert_eq!(batch_output(out, Path::new("/i/b.svs")), Path::new("/o/b_normalized.tif"));
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["spcn", "frobnicate"]), 2);
        assert_eq!(run(["spcn", "bench", "--sizes", "12x"]), 2);
        assert_eq!(run(["spcn", "--help"]), 0);
    }
}
