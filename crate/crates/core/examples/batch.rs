//! Normalize every image in a directory against one saved target profile.
//!
//! cargo run --release --example batch

use spcn::pipeline::{fit, fit_file, transform_file, FitConfig, TransformOptions};
use spcn::profile::{load_profile, save_profile};
use spcn::synthetic::{demo_target, SyntheticSlide};

fn main() -> spcn::Result<()> {
    let dir = tempfile::tempdir()?;
    let inputs = dir.path().join("in");
    std::fs::create_dir(&inputs)?;
    for seed in 0..4 {
        SyntheticSlide::new(384, 384, seed).write_to(inputs.join(format!("slide_{seed}.png")))?;
    }

    let cfg = FitConfig::default();
    let profile = dir.path().join("target.profile");
    save_profile(&profile, &fit(&demo_target(512), &cfg)?.params)?;
    let target = load_profile(&profile)?;

    let mut entries: Vec<_> = std::fs::read_dir(&inputs)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
    entries.sort();
    for input in entries {
        let out = input.with_file_name(format!(
            "{}_normalized.png",
            input.file_stem().unwrap_or_default().to_string_lossy()
        ));
        let result = fit_file(&input, &cfg)
            .and_then(|source| transform_file(&input, &out, &source.params, &target, &TransformOptions::default()));
        match result {
            Ok(stats) => println!("{:<16} ok     {:.3}s", input.file_name().unwrap().to_string_lossy(), stats.transform_seconds),
            Err(e) => println!("{:<16} FAILED {e} (exit {})", input.file_name().unwrap().to_string_lossy(), e.exit_code()),
        }
    }
    Ok(())
}
