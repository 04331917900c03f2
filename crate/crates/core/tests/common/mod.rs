//! Brute-force oracles and fixtures shared by the integration tests. Nothing
//! here calls into the library's numerical code.
#![allow(dead_code)]

use std::path::Path;

use spcn::image_io::{create_sink, PixelBlock};

/// Reference stain colors, normalized here rather than through the library.
pub fn unit(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

pub fn hematoxylin() -> [f64; 3] {
    unit([0.650, 0.704, 0.286])
}

pub fn eosin() -> [f64; 3] {
    unit([0.072, 0.990, 0.105])
}

pub fn angle_deg(a: [f64; 3], b: [f64; 3]) -> f64 {
    let (a, b) = (unit(a), unit(b));
    let c = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).clamp(-1.0, 1.0);
    c.acos().to_degrees()
}

/// Full sort, then linear interpolation at rank `p/100 * (n-1)`.
pub fn percentile_oracle(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * (rank - lo as f64))
}

pub fn median_oracle(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    Some(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    })
}

/// `1/2 ||v - W h||^2 + lambda * sum(h)` with `W` given as two columns.
pub fn lasso_objective(v: [f64; 3], w: [[f64; 3]; 2], h: [f64; 2], lambda: f64) -> f64 {
    let mut sq = 0.0;
    for c in 0..3 {
        let r = v[c] - w[0][c] * h[0] - w[1][c] * h[1];
        sq += r * r;
    }
    0.5 * sq + lambda * (h[0] + h[1])
}

/// Non-negative lasso by enumerating every active set: solve the stationarity
/// equations on the set, keep feasible candidates, return the cheapest.
pub fn lasso_oracle(v: [f64; 3], w: [[f64; 3]; 2], lambda: f64) -> [f64; 2] {
    let g = |i: usize, j: usize| (0..3).map(|c| w[i][c] * w[j][c]).sum::<f64>();
    let b = |i: usize| (0..3).map(|c| w[i][c] * v[c]).sum::<f64>();
    let mut candidates = vec![[0.0, 0.0]];
    for j in 0..2 {
        if g(j, j) > 0.0 {
            let mut h = [0.0; 2];
            h[j] = (b(j) - lambda) / g(j, j);
            candidates.push(h);
        }
    }
    let det = g(0, 0) * g(1, 1) - g(0, 1) * g(0, 1);
    if det.abs() > 1e-300 {
        let (r0, r1) = (b(0) - lambda, b(1) - lambda);
        candidates.push([(g(1, 1) * r0 - g(0, 1) * r1) / det, (g(0, 0) * r1 - g(0, 1) * r0) / det]);
    }
    candidates
        .into_iter()
        .filter(|h| h[0] >= 0.0 && h[1] >= 0.0)
        .min_by(|a, b| lasso_objective(v, w, *a, lambda).total_cmp(&lasso_objective(v, w, *b, lambda)))
        .expect("zero is always feasible")
}

/// 80th percentile of an 8-bit pool by full sort; 255 when empty.
pub fn max_intensity_oracle(pool: &[u8]) -> f64 {
    let values: Vec<f64> = pool.iter().map(|&v| v as f64).collect();
    percentile_oracle(&values, 80.0).unwrap_or(255.0)
}

/// `round(i0 * exp(-v))`, half away from zero, clamped to [0, 255].
pub fn intensity_oracle(v: f64, i0: f64) -> u8 {
    (i0 * (-v).exp()).round().clamp(0.0, 255.0) as u8
}

pub fn density_oracle(i: u8, i0: f64) -> f64 {
    (i0 / (i as f64).clamp(1.0, i0)).ln()
}

/// Write a solid-color image.
pub fn write_solid(path: &Path, width: u32, height: u32, rgb: [u8; 3]) {
    let mut sink = create_sink(path, width, height).unwrap();
    sink.write_strip(&PixelBlock::filled(0, 0, width, height, rgb)).unwrap();
    sink.finish().unwrap();
}

/// Write an image that is white except for a single-color square.
pub fn write_single_stain(path: &Path, edge: u32, rgb: [u8; 3]) {
    let mut block = PixelBlock::filled(0, 0, edge, edge, [255; 3]);
    for y in edge / 4..3 * edge / 4 {
        for x in edge / 4..3 * edge / 4 {
            let i = 3 * (y as usize * edge as usize + x as usize);
            block.data[i..i + 3].copy_from_slice(&rgb);
        }
    }
    let mut sink = create_sink(path, edge, edge).unwrap();
    sink.write_strip(&block).unwrap();
    sink.finish().unwrap();
}

/// Largest absolute channel difference between two equally sized blocks.
pub fn max_deviation(a: &PixelBlock, b: &PixelBlock) -> u8 {
    assert_eq!((a.width, a.height), (b.width, b.height));
    a.data.iter().zip(&b.data).map(|(x, y)| x.abs_diff(*y)).max().unwrap_or(0)
}
