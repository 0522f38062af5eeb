//! Precision, recall and F-measure of a probability mask against a binary
//! ground-truth mask, with tolerance matching.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Image;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub predicted: usize,
    pub matched: usize,
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub tolerance: f64,
    pub truth: usize,
    pub curve: Vec<PrPoint>,
    pub best: PrPoint,
}

/// Number of thresholds swept.
pub const THRESHOLDS: usize = 64;

fn f_measure(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// Greedy one-to-one matching: predicted pixels in raster order each take the
/// nearest unmatched truth pixel within `tolerance` (ties to the earlier
/// truth pixel in raster order). Returns the number of matches.
pub fn match_pixels(predicted: &Image<bool>, truth: &Image<bool>, tolerance: f64) -> usize {
    let (w, h) = (truth.width, truth.height);
    let reach = tolerance.floor().max(0.0) as i64;
    let mut offsets: Vec<(i64, i64)> = (-reach..=reach)
        .flat_map(|dy| (-reach..=reach).map(move |dx| (dx, dy)))
        .filter(|&(dx, dy)| ((dx * dx + dy * dy) as f64).sqrt() <= tolerance)
        .collect();
    offsets.sort_by_key(|&(dx, dy)| (dx * dx + dy * dy, dy, dx));
    let mut used = vec![false; w * h];
    let mut matched = 0;
    for y in 0..h {
        for x in 0..w {
            if !predicted.get(x, y) {
                continue;
            }
            for &(dx, dy) in &offsets {
                let (tx, ty) = (x as i64 + dx, y as i64 + dy);
                if tx < 0 || ty < 0 || tx >= w as i64 || ty >= h as i64 {
                    continue;
                }
                let t = ty as usize * w + tx as usize;
                if truth.data[t] && !used[t] {
                    used[t] = true;
                    matched += 1;
                    break;
                }
            }
        }
    }
    matched
}

/// Sweeps thresholds `k / 64` for `k = 1..=64`; a pixel is predicted when its
/// value reaches the threshold.
pub fn evaluate(prediction: &Image<f64>, truth: &Image<bool>, tolerance: f64) -> Result<Evaluation> {
    if prediction.width != truth.width || prediction.height != truth.height {
        return Err(Error::Input(format!(
            "prediction is {}x{} but truth is {}x{}",
            prediction.width, prediction.height, truth.width, truth.height
        )));
    }
    if !(tolerance >= 0.0) {
        return Err(Error::Config(format!("tolerance must be non-negative, got {tolerance}")));
    }
    let n_truth = truth.data.iter().filter(|&&t| t).count();
    let curve: Vec<PrPoint> = (1..=THRESHOLDS)
        .map(|k| {
            let threshold = k as f64 / THRESHOLDS as f64;
            let pred = prediction.map(|&v| v >= threshold);
            let predicted = pred.data.iter().filter(|&&p| p).count();
            let matched = match_pixels(&pred, truth, tolerance);
            let precision = if predicted > 0 { matched as f64 / predicted as f64 } else { 0.0 };
            let recall = if n_truth > 0 { matched as f64 / n_truth as f64 } else { 0.0 };
            PrPoint { threshold, predicted, matched, precision, recall, f: f_measure(precision, recall) }
        })
        .collect();
    let best = curve.iter().copied().fold(curve[0], |b, p| if p.f > b.f { p } else { b });
    Ok(Evaluation { tolerance, truth: n_truth, curve, best })
}
