//! Seeded synthetic H&E-like slides and optical-density samples with known
//! ground truth.
//!
//! Slides are procedural: every pixel is a pure function of its coordinates,
//! so arbitrarily large slides can be read region by region without being
//! stored anywhere.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::image_io::{check_region, copy_slide, create_sink, PixelBlock, SlideSource, StripSink, DEFAULT_STRIP_HEIGHT};
use crate::optics::{density_pixel, MaxIntensity};
use crate::stain_sep::StainBasis;

const CELL: u32 = 32;

/// Where tissue is drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TissueLayout {
    /// Tissue cells scattered over the whole slide; each 32-pixel cell is
    /// background with the given probability.
    Scattered { background_fraction: f64 },
    /// Tissue fills one rectangle; everything else is background.
    Region { x: u32, y: u32, width: u32, height: u32 },
}

/// A procedural slide rendered as `round(i0 * exp(-W h))` from sparse
/// two-stain densities `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSlide {
    pub width: u32,
    pub height: u32,
    pub basis: StainBasis,
    pub background: MaxIntensity,
    pub layout: TissueLayout,
    /// Probability that a nucleus pixel also carries a faint eosin density
    /// (at most 0.15).
    pub eosin_trace: f64,
    pub seed: u64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn unit(seed: u64, a: u64, b: u64, salt: u64) -> f64 {
    let h = splitmix(seed ^ splitmix(a ^ splitmix(b ^ splitmix(salt))));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

impl SyntheticSlide {
    pub fn new(width: u32, height: u32, seed: u64) -> Self {
        SyntheticSlide {
            width,
            height,
            basis: StainBasis::reference(),
            background: MaxIntensity::default(),
            layout: TissueLayout::Scattered {
                background_fraction: 0.5,
            },
            eosin_trace: 0.3,
            seed,
        }
    }

    pub fn with_basis(mut self, basis: StainBasis) -> Self {
        self.basis = basis;
        self
    }

    pub fn with_background(mut self, background: MaxIntensity) -> Self {
        self.background = background;
        self
    }

    pub fn with_layout(mut self, layout: TissueLayout) -> Self {
        self.layout = layout;
        self
    }

    pub fn with_eosin_trace(mut self, probability: f64) -> Self {
        self.eosin_trace = probability;
        self
    }

    fn is_tissue(&self, x: u32, y: u32) -> bool {
        match self.layout {
            TissueLayout::Scattered { background_fraction } => {
                unit(self.seed, (x / CELL) as u64, (y / CELL) as u64, 1) >= background_fraction
            }
            TissueLayout::Region {
                x: rx,
                y: ry,
                width,
                height,
            } => x >= rx && y >= ry && x - rx < width && y - ry < height,
        }
    }

    /// Ground-truth stain densities (hematoxylin, eosin) at a pixel; zero on
    /// background.
    pub fn densities_at(&self, x: u32, y: u32) -> [f64; 2] {
        if !self.is_tissue(x, y) {
            return [0.0, 0.0];
        }
        let (cx, cy) = ((x / CELL) as u64, (y / CELL) as u64);
        let cell = |salt| unit(self.seed, cx, cy, salt);
        let jitter = 0.85 + 0.3 * unit(self.seed, x as u64, y as u64, 7);
        let stroma = (0.25 + 0.7 * cell(4)) * jitter;
        if cell(2) < 0.45 {
            // A nucleus inside the cell, surrounded by stroma.
            let half = CELL as f64 / 2.0;
            let ox = half + (cell(5) - 0.5) * 8.0;
            let oy = half + (cell(6) - 0.5) * 8.0;
            let radius = 6.0 + 6.0 * cell(3);
            let dx = (x % CELL) as f64 + 0.5 - ox;
            let dy = (y % CELL) as f64 + 0.5 - oy;
            if dx * dx + dy * dy <= radius * radius {
                let hema = (0.5 + 0.9 * cell(8)) * jitter;
                let eosin = if unit(self.seed, x as u64, y as u64, 9) < self.eosin_trace {
                    0.15 * unit(self.seed, x as u64, y as u64, 10)
                } else {
                    0.0
                };
                return [hema, eosin];
            }
        }
        [0.0, stroma]
    }

    pub fn pixel_at(&self, x: u32, y: u32) -> [u8; 3] {
        density_pixel(self.basis.mix(self.densities_at(x, y)), &self.background)
    }

    /// Render to a PNG or tiled TIFF file, strip by strip.
    pub fn write_to(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut sink = create_sink(path, self.width, self.height)?;
        self.write_into(sink.as_mut())
    }

    pub fn write_into(&self, sink: &mut dyn StripSink) -> Result<()> {
        copy_slide(self, sink, DEFAULT_STRIP_HEIGHT.min(256))
    }
}

impl SlideSource for SyntheticSlide {
    fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    fn read_region(&self, x: u32, y: u32, w: u32, h: u32) -> Result<PixelBlock> {
        check_region(x, y, w, h, self.width, self.height)?;
        let mut data = Vec::with_capacity(w as usize * h as usize * 3);
        for yy in y..y + h {
            for xx in x..x + w {
                data.extend_from_slice(&self.pixel_at(xx, yy));
            }
        }
        Ok(PixelBlock::new(x, y, w, h, data))
    }
}

/// Source-side demo fixture: shifted stain colors on a tinted background.
pub fn demo_source(edge: u32) -> SyntheticSlide {
    SyntheticSlide::new(edge, edge, 11)
        .with_basis(StainBasis::normalized([0.55, 0.76, 0.36], [0.05, 0.93, 0.30]).expect("valid basis"))
        .with_background(MaxIntensity([250.0, 243.0, 230.0]))
        .with_layout(TissueLayout::Scattered {
            background_fraction: 0.6,
        })
}

/// Target-side demo fixture: reference stain colors on white.
pub fn demo_target(edge: u32) -> SyntheticSlide {
    SyntheticSlide::new(edge, edge, 23).with_layout(TissueLayout::Scattered {
        background_fraction: 0.6,
    })
}

/// Optical densities `W h` (plus optional Gaussian noise) for `n` pixels with
/// sparse densities: 40% hematoxylin only, 40% eosin only, 20% mixed, each
/// active density uniform in [0.1, 1.5].
pub fn od_sample(basis: &StainBasis, n: usize, noise_sigma: f64, seed: u64) -> (Vec<[f64; 3]>, Vec<[f64; 2]>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut od = Vec::with_capacity(n);
    let mut h = Vec::with_capacity(n);
    for _ in 0..n {
        let kind: f64 = rng.random();
        let mut draw = || 0.1 + 1.4 * rng.random::<f64>();
        let hx = if kind < 0.4 {
            [draw(), 0.0]
        } else if kind < 0.8 {
            [0.0, draw()]
        } else {
            [draw(), draw()]
        };
        let mut v = basis.mix(hx);
        if noise_sigma > 0.0 {
            for c in v.iter_mut() {
                *c = (*c + noise_sigma * gaussian(&mut rng)).max(0.0);
            }
        }
        od.push(v);
        h.push(hx);
    }
    (od, h)
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller.
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Rotate `v` by `degrees` towards a seeded random direction perpendicular
/// to it, then clip to non-negative and renormalize.
pub fn perturb_direction(v: [f64; 3], degrees: f64, rng: &mut ChaCha8Rng) -> [f64; 3] {
    let v = crate::stain_sep::normalize(v);
    let r = [rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5];
    let along = crate::stain_sep::dot(r, v);
    let p = crate::stain_sep::normalize([r[0] - along * v[0], r[1] - along * v[1], r[2] - along * v[2]]);
    let (s, c) = degrees.to_radians().sin_cos();
    crate::stain_sep::normalize([
        (c * v[0] + s * p[0]).max(0.0),
        (c * v[1] + s * p[1]).max(0.0),
        (c * v[2] + s * p[2]).max(0.0),
    ])
}
