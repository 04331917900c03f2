//! Beer-Lambert optical density, its inverse, and per-channel background
//! (maximum intensity) estimation.

use crate::error::{Error, Result, Warning};
use crate::image_io::PixelBlock;
use crate::stats::percentile_u8;

/// Channels above this value count as bright (background candidates);
/// pixels with every channel above it are white.
pub const DEFAULT_WHITE_THRESHOLD: u8 = 220;
/// Maximum number of bright samples kept per channel.
pub const DEFAULT_SAMPLE_CAP: usize = 100_000;
/// Percentile of the bright samples used as the background intensity.
pub const BACKGROUND_PERCENTILE: f64 = 80.0;

/// Per-channel intensity corresponding to zero optical density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxIntensity(pub [f64; 3]);

impl MaxIntensity {
    pub fn new(red: f64, green: f64, blue: f64) -> Result<Self> {
        let i0 = MaxIntensity([red, green, blue]);
        i0.validate()?;
        Ok(i0)
    }

    pub fn flat(value: f64) -> Result<Self> {
        MaxIntensity::new(value, value, value)
    }

    pub fn validate(&self) -> Result<()> {
        for (c, &v) in self.0.iter().enumerate() {
            if !(1.0..=255.0).contains(&v) {
                return Err(Error::InvalidConfig(format!(
                    "maximum intensity of channel {c} is {v}, outside [1, 255]"
                )));
            }
        }
        Ok(())
    }

    pub fn channels(&self) -> [f64; 3] {
        self.0
    }
}

impl Default for MaxIntensity {
    fn default() -> Self {
        MaxIntensity([255.0; 3])
    }
}

/// Per-channel pools of bright intensities.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BrightSamples(pub [Vec<u8>; 3]);

/// Background estimate plus channels that had to fall back to 255.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxIntensityEstimate {
    pub i0: MaxIntensity,
    pub warnings: Vec<Warning>,
}

/// 80th percentile of each channel's bright samples.
///
/// A channel without samples has no discernible background; it falls back
/// to 255 and is reported in `warnings`.
pub fn estimate_max_intensity(samples: &BrightSamples) -> MaxIntensityEstimate {
    let mut i0 = [255.0; 3];
    let mut warnings = Vec::new();
    for (c, pool) in samples.0.iter().enumerate() {
        match percentile_u8(pool, BACKGROUND_PERCENTILE) {
            Some(v) => i0[c] = v.max(1.0),
            None => {
                log::warn!("{}", Warning::NoBackground { channel: c });
                warnings.push(Warning::NoBackground { channel: c });
            }
        }
    }
    MaxIntensityEstimate {
        i0: MaxIntensity(i0),
        warnings,
    }
}

/// Relative optical density of one sample: `ln(i0 / clamp(i, 1, i0))`.
#[inline]
pub fn optical_density(intensity: u8, i0: f64) -> f64 {
    let i = (intensity as f64).clamp(1.0, i0);
    (i0 / i).ln()
}

/// Intensity for an optical density: `round(i0 * exp(-v))`, clamped to [0, 255].
#[inline]
pub fn intensity(density: f64, i0: f64) -> u8 {
    // f64::round rounds half away from zero.
    (i0 * (-density).exp()).round().clamp(0.0, 255.0) as u8
}

#[inline]
pub fn pixel_density(px: [u8; 3], i0: &MaxIntensity) -> [f64; 3] {
    [
        optical_density(px[0], i0.0[0]),
        optical_density(px[1], i0.0[1]),
        optical_density(px[2], i0.0[2]),
    ]
}

#[inline]
pub fn density_pixel(v: [f64; 3], i0: &MaxIntensity) -> [u8; 3] {
    [intensity(v[0], i0.0[0]), intensity(v[1], i0.0[1]), intensity(v[2], i0.0[2])]
}

/// Per-channel optical densities of a block, row-major `[r, g, b]` triples.
#[derive(Debug, Clone, PartialEq)]
pub struct ODBlock {
    pub origin_x: u32,
    pub origin_y: u32,
    pub width: u32,
    pub height: u32,
    pub data: Vec<[f64; 3]>,
}

impl ODBlock {
    pub fn new(width: u32, height: u32, data: Vec<[f64; 3]>) -> Self {
        assert_eq!(data.len(), width as usize * height as usize);
        ODBlock {
            origin_x: 0,
            origin_y: 0,
            width,
            height,
            data,
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.data.len()
    }
}

pub fn beer_lambert(block: &PixelBlock, i0: &MaxIntensity) -> ODBlock {
    ODBlock {
        origin_x: block.origin_x,
        origin_y: block.origin_y,
        width: block.width,
        height: block.height,
        data: block.pixels().map(|px| pixel_density(px, i0)).collect(),
    }
}

pub fn inverse_beer_lambert(od: &ODBlock, i0: &MaxIntensity) -> PixelBlock {
    let data = od.data.iter().flat_map(|&v| density_pixel(v, i0)).collect();
    PixelBlock::new(od.origin_x, od.origin_y, od.width, od.height, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pools(r: Vec<u8>, g: Vec<u8>, b: Vec<u8>) -> BrightSamples {
        BrightSamples([r, g, b])
    }

    #[test]
    fn constant_white_background() {
        let est = estimate_max_intensity(&pools(vec![255; 10], vec![255; 3], vec![255]));
        assert_eq!(est.i0, MaxIntensity([255.0; 3]));
        assert!(est.warnings.is_empty());
    }

    #[test]
    fn red_percentile_interpolates() {
        let est = estimate_max_intensity(&pools(vec![230, 235, 240, 245, 250], vec![255], vec![255]));
        assert_eq!(est.i0.0[0], 246.0);
    }

    #[test]
    fn empty_channel_falls_back_with_warning() {
        let est = estimate_max_intensity(&pools(vec![240], vec![241], vec![]));
        assert_eq!(est.i0.0[2], 255.0);
        assert_eq!(est.warnings, vec![Warning::NoBackground { channel: 2 }]);
    }

    #[test]
    fn scalar_examples() {
        let i0 = MaxIntensity::flat(255.0).unwrap();
        assert!((optical_density(25, 255.0) - 2.322_387_720_290_225).abs() < 1e-12);
        assert!((optical_density(0, 255.0) - 255f64.ln()).abs() < 1e-12);
        assert!((optical_density(0, 255.0) - 5.541_263_545_158_426).abs() < 1e-12);
        assert_eq!(intensity(5.54126, 255.0), 1);
        assert_eq!(intensity(0.0, 243.4), 243);
        assert_eq!(pixel_density([255, 255, 255], &i0), [0.0; 3]);
        assert_eq!(density_pixel([0.0; 3], &MaxIntensity([250.0, 243.0, 230.0])), [250, 243, 230]);
    }

    #[test]
    fn brighter_than_background_clamps_to_zero_density() {
        assert_eq!(optical_density(250, 240.0), 0.0);
        assert_eq!(optical_density(255, 240.0), 0.0);
    }

    #[test]
    fn invalid_max_intensity() {
        assert!(MaxIntensity::new(0.5, 200.0, 200.0).is_err());
        assert!(MaxIntensity::new(255.0, 256.0, 200.0).is_err());
        assert!(MaxIntensity::new(f64::NAN, 255.0, 255.0).is_err());
    }

    #[test]
    fn block_round_trip() {
        let data: Vec<u8> = (0..=255u8).flat_map(|v| [v, v.max(1), 255 - v]).collect();
        let block = PixelBlock::new(3, 7, 16, 16, data);
        let i0 = MaxIntensity::default();
        let od = beer_lambert(&block, &i0);
        assert!(od.data.iter().flatten().all(|v| v.is_finite() && *v >= 0.0));
        let back = inverse_beer_lambert(&od, &i0);
        assert_eq!((back.origin_x, back.origin_y), (3, 7));
        for (a, b) in back.data.iter().zip(&block.data) {
            assert_eq!(*a, (*b).max(1));
        }
    }

    proptest! {
        #[test]
        fn density_is_strictly_decreasing(i0 in 2.0f64..=255.0, a in 1u8..=255, b in 1u8..=255) {
            let (lo, hi) = (a.min(b), a.max(b));
            prop_assume!(lo < hi && (hi as f64) <= i0);
            prop_assert!(optical_density(lo, i0) > optical_density(hi, i0));
        }

        #[test]
        fn estimate_is_order_invariant_and_monotone(mut v in prop::collection::vec(221u8..=255, 1..200), seed in any::<u64>()) {
            let base = estimate_max_intensity(&pools(v.clone(), vec![255], vec![255])).i0.0[0];
            let k = (seed as usize) % v.len();
            v.rotate_left(k);
            v.reverse();
            prop_assert_eq!(estimate_max_intensity(&pools(v.clone(), vec![255], vec![255])).i0.0[0], base);
            let max = *v.iter().max().unwrap();
            v.push(max);
            prop_assert!(estimate_max_intensity(&pools(v, vec![255], vec![255])).i0.0[0] >= base);
        }
    }
}
