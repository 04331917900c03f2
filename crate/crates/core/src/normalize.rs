//! Density scaling and recombination with a target basis.

use crate::error::{Error, Result, Role};
use crate::image_io::PixelBlock;
use crate::optics::{density_pixel, pixel_density, MaxIntensity};
use crate::stain_sep::{DensityCoder, StainBasis, StainDensityBlock};
use crate::stats::{median, percentile};

/// Percentile of stain density matched between source and target.
pub const DENSITY_PERCENTILE: f64 = 99.0;

/// A stain whose 99th-percentile density is below this optical density is
/// treated as absent; it would shift no pixel by even one intensity level.
pub const MIN_STAIN_DENSITY: f64 = 1e-6;

/// Robust per-stain density maxima.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StainStats {
    pub p99: [f64; 2],
    pub sample_count: usize,
}

/// Input to [`stain_stats`].
#[derive(Debug, Clone, Copy)]
pub enum DensitySamples<'a> {
    /// One pooled density collection per stain.
    Pooled([&'a [f64]; 2]),
    /// Per-patch 99th percentiles, aggregated by their median.
    PatchPercentiles(&'a [[f64; 2]]),
}

pub fn stain_stats(samples: DensitySamples<'_>) -> Result<StainStats> {
    match samples {
        DensitySamples::Pooled(per_stain) => {
            let mut p99 = [0.0; 2];
            for (j, values) in per_stain.iter().enumerate() {
                p99[j] = percentile(values, DENSITY_PERCENTILE).ok_or(Error::StainAbsent { stain: j })?;
            }
            Ok(StainStats {
                p99,
                sample_count: per_stain[0].len().max(per_stain[1].len()),
            })
        }
        DensitySamples::PatchPercentiles(patches) => {
            let mut p99 = [0.0; 2];
            for (j, slot) in p99.iter_mut().enumerate() {
                let column: Vec<f64> = patches.iter().map(|p| p[j]).collect();
                *slot = median(&column).ok_or(Error::StainAbsent { stain: j })?;
            }
            Ok(StainStats {
                p99,
                sample_count: patches.len(),
            })
        }
    }
}

/// Per-stain factors mapping source densities onto the target's range:
/// `target.p99 / source.p99`. Either side below [`MIN_STAIN_DENSITY`] is
/// an error.
pub fn scale_factors(source: &StainStats, target: &StainStats) -> Result<[f64; 2]> {
    let mut factors = [0.0; 2];
    for j in 0..2 {
        for (role, stats) in [(Role::Source, source), (Role::Target, target)] {
            let value = stats.p99[j];
            if !(value >= MIN_STAIN_DENSITY && value.is_finite()) {
                return Err(Error::DegenerateStain { role, stain: j, value });
            }
        }
        factors[j] = target.p99[j] / source.p99[j];
    }
    Ok(factors)
}

/// Where a set of fit parameters came from.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Provenance {
    pub source: String,
    /// Hash of the fitting configuration.
    pub config_hash: String,
}

/// Everything learned from one image.
#[derive(Debug, Clone, PartialEq)]
pub struct FitParams {
    pub i0: MaxIntensity,
    pub basis: StainBasis,
    pub stats: StainStats,
    pub provenance: Provenance,
}

/// Recombine densities with the target basis: `W_target diag(factors) h`,
/// then back to target intensities.
pub fn normalize_block(
    h_source: &StainDensityBlock,
    factors: [f64; 2],
    target_basis: &StainBasis,
    target_i0: &MaxIntensity,
) -> PixelBlock {
    let data = h_source
        .data
        .iter()
        .flat_map(|&h| normalize_density(h, factors, target_basis, target_i0))
        .collect();
    PixelBlock::new(0, 0, h_source.width, h_source.height, data)
}

#[inline]
pub fn normalize_density(h: [f64; 2], factors: [f64; 2], basis: &StainBasis, i0: &MaxIntensity) -> [u8; 3] {
    density_pixel(basis.mix([h[0] * factors[0], h[1] * factors[1]]), i0)
}

/// The whole per-pixel chain from source intensity to normalized intensity.
///
/// Bit-identical to composing `beer_lambert`, `code_densities` and
/// `normalize_block`, but with no intermediate buffers.
#[derive(Debug, Clone, Copy)]
pub struct PixelTransform {
    source_i0: MaxIntensity,
    coder: DensityCoder,
    factors: [f64; 2],
    target_basis: StainBasis,
    target_i0: MaxIntensity,
}

impl PixelTransform {
    pub fn new(source: &FitParams, target: &FitParams, coder: DensityCoder) -> Result<Self> {
        Ok(PixelTransform {
            source_i0: source.i0,
            coder,
            factors: scale_factors(&source.stats, &target.stats)?,
            target_basis: target.basis,
            target_i0: target.i0,
        })
    }

    pub fn factors(&self) -> [f64; 2] {
        self.factors
    }

    #[inline]
    pub fn apply(&self, px: [u8; 3]) -> [u8; 3] {
        let h = self.coder.code(pixel_density(px, &self.source_i0));
        normalize_density(h, self.factors, &self.target_basis, &self.target_i0)
    }

    /// Transform an interleaved RGB buffer in place.
    pub fn apply_in_place(&self, data: &mut [u8]) {
        for px in data.chunks_exact_mut(3) {
            let out = self.apply([px[0], px[1], px[2]]);
            px.copy_from_slice(&out);
        }
    }
}
