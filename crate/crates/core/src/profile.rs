//! Text profile files holding one image's [`FitParams`].
//!
//! ```text
//! # spcn stain profile
//! version = 1
//! source = slides/target.tif
//! config_hash = 3f5c0e9a41b2d7c8
//! i0 = 2.5000000000000000e2 2.4300000000000000e2 2.3000000000000000e2
//! basis = <6 values, row-major: red, green, blue rows; hematoxylin, eosin columns>
//! p99 = <hematoxylin> <eosin>
//! sample_count = 100000
//! ```
//!
//! Reals are written with 17 significant digits, so reading a profile back
//! reproduces every value bit for bit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::normalize::{FitParams, Provenance, StainStats};
use crate::optics::MaxIntensity;
use crate::stain_sep::StainBasis;

pub const PROFILE_VERSION: u32 = 1;
const HEADER: &str = "# spcn stain profile";

fn real(v: f64) -> String {
    format!("{v:.16e}")
}

fn reals(values: &[f64]) -> String {
    values.iter().map(|&v| real(v)).collect::<Vec<_>>().join(" ")
}

pub fn to_profile_string(params: &FitParams) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{HEADER}");
    let _ = writeln!(s, "version = {PROFILE_VERSION}");
    let _ = writeln!(s, "source = {}", params.provenance.source.replace('\n', " "));
    let _ = writeln!(s, "config_hash = {}", params.provenance.config_hash);
    let _ = writeln!(s, "i0 = {}", reals(&params.i0.0));
    let _ = writeln!(s, "basis = {}", reals(&params.basis.row_major()));
    let _ = writeln!(s, "p99 = {}", reals(&params.stats.p99));
    let _ = writeln!(s, "sample_count = {}", params.stats.sample_count);
    s
}

fn parse_reals<const N: usize>(key: &str, value: &str) -> Result<[f64; N]> {
    let parsed: Vec<f64> = value
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|e| Error::Profile(format!("{key}: {t:?}: {e}"))))
        .collect::<Result<_>>()?;
    parsed
        .try_into()
        .map_err(|v: Vec<f64>| Error::Profile(format!("{key}: expected {N} values, found {}", v.len())))
}

pub fn parse_profile(text: &str) -> Result<FitParams> {
    let mut fields = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Profile(format!("line {}: expected `key = value`", n + 1)))?;
        fields.insert(key.trim().to_string(), value.trim().to_string());
    }
    let get = |key: &str| {
        fields
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Profile(format!("missing key `{key}`")))
    };
    let version: u32 = get("version")?
        .parse()
        .map_err(|e| Error::Profile(format!("version: {e}")))?;
    if version != PROFILE_VERSION {
        return Err(Error::Profile(format!("unsupported profile version {version}")));
    }
    let i0 = MaxIntensity(parse_reals::<3>("i0", get("i0")?)?);
    i0.validate().map_err(|e| Error::Profile(e.to_string()))?;
    let basis = StainBasis::from_row_major(parse_reals::<6>("basis", get("basis")?)?)
        .map_err(|e| Error::Profile(e.to_string()))?;
    let p99 = parse_reals::<2>("p99", get("p99")?)?;
    if p99.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Profile(format!("p99 must be finite and non-negative: {p99:?}")));
    }
    let sample_count = get("sample_count")?
        .parse()
        .map_err(|e| Error::Profile(format!("sample_count: {e}")))?;
    Ok(FitParams {
        i0,
        basis,
        stats: StainStats { p99, sample_count },
        provenance: Provenance {
            source: fields.get("source").cloned().unwrap_or_default(),
            config_hash: get("config_hash")?.to_string(),
        },
    })
}

pub fn save_profile(path: impl AsRef<Path>, params: &FitParams) -> Result<()> {
    std::fs::write(path, to_profile_string(params)).map_err(Error::Write)
}

pub fn load_profile(path: impl AsRef<Path>) -> Result<FitParams> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Open {
        path: path.to_path_buf(),
        source,
    })?;
    parse_profile(&text)
}

/// Whether a file looks like a profile rather than an image.
pub fn is_profile(path: impl AsRef<Path>) -> bool {
    use std::io::Read;
    let mut head = [0u8; HEADER.len()];
    std::fs::File::open(path)
        .and_then(|mut f| f.read_exact(&mut head))
        .map(|_| head == *HEADER.as_bytes())
        .unwrap_or(false)
}
