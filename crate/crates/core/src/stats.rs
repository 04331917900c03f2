//! Order statistics shared by every stage.
//!
//! Percentiles use linear interpolation between closest ranks on the sorted
//! sample: rank = p * (n - 1), zero-based.

use std::cmp::Ordering;

fn total_cmp(a: &f64, b: &f64) -> Ordering {
    a.total_cmp(b)
}

/// `p`-th percentile (`p` in [0, 100]) of `values`, reordering them in place.
///
/// Returns `None` for an empty slice.
pub fn percentile_in_place(values: &mut [f64], p: f64) -> Option<f64> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let rank = (p / 100.0).clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = rank.floor() as usize;
    let frac = rank - lo as f64;

    let (_, lower, upper) = values.select_nth_unstable_by(lo, total_cmp);
    let lower = *lower;
    if frac == 0.0 || upper.is_empty() {
        return Some(lower);
    }
    let next = upper.iter().copied().min_by(total_cmp).unwrap_or(lower);
    Some(interpolate(lower, next, frac))
}

/// `p`-th percentile of `values` without modifying them.
pub fn percentile(values: &[f64], p: f64) -> Option<f64> {
    let mut scratch = values.to_vec();
    percentile_in_place(&mut scratch, p)
}

/// Percentile of 8-bit samples, via a 256-bin histogram.
pub fn percentile_u8(values: &[u8], p: f64) -> Option<f64> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mut hist = [0usize; 256];
    for &v in values {
        hist[v as usize] += 1;
    }
    let rank = (p / 100.0).clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = rank.floor() as usize;
    let frac = rank - lo as f64;
    let lower = nth_from_histogram(&hist, lo);
    if frac == 0.0 || lo + 1 >= n {
        return Some(lower);
    }
    let next = nth_from_histogram(&hist, lo + 1);
    Some(interpolate(lower, next, frac))
}

fn nth_from_histogram(hist: &[usize; 256], k: usize) -> f64 {
    let mut seen = 0;
    for (value, &count) in hist.iter().enumerate() {
        seen += count;
        if seen > k {
            return value as f64;
        }
    }
    255.0
}

#[inline]
fn interpolate(lower: f64, upper: f64, frac: f64) -> f64 {
    lower + (upper - lower) * frac
}

/// Median; an even count averages the two middle values.
pub fn median(values: &[f64]) -> Option<f64> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mut scratch = values.to_vec();
    let mid = n / 2;
    let (_, upper_mid, _) = scratch.select_nth_unstable_by(mid, total_cmp);
    let upper_mid = *upper_mid;
    if n % 2 == 1 {
        return Some(upper_mid);
    }
    let lower_mid = scratch[..mid]
        .iter()
        .copied()
        .max_by(total_cmp)
        .unwrap_or(upper_mid);
    Some((lower_mid + upper_mid) / 2.0)
}
