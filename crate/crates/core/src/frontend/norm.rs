use serde::{Deserialize, Serialize};

use super::AcousticFeatures;
use crate::{Error, Result};

/// Guard added to the variance before taking the square root.
pub const VARIANCE_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub frame_count: u64,
}

/// Neumaier-compensated sum.
fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// Sums per-utterance partials in sorted order so the result does not depend
/// on corpus order.
fn order_free_total(mut partials: Vec<f64>) -> f64 {
    partials.sort_by(f64::total_cmp);
    compensated_sum(partials)
}

/// Two-pass per-dimension mean and (population) variance over every frame of
/// every utterance.
pub fn fit_normalization(corpus: &[AcousticFeatures]) -> Result<NormalizationStats> {
    let first = corpus
        .first()
        .ok_or_else(|| Error::EmptyInput("normalization corpus has no utterances".into()))?;
    let dims = first.dims;
    if let Some(bad) = corpus.iter().find(|f| f.dims != dims) {
        return Err(Error::shape(format!("corpus mixes {dims} and {} dims", bad.dims)));
    }
    let n: u64 = corpus.iter().map(|f| f.frames as u64).sum();
    if n == 0 {
        return Err(Error::EmptyInput("normalization corpus has no frames".into()));
    }
    let mean: Vec<f64> = (0..dims)
        .map(|d| {
            let partials = corpus
                .iter()
                .map(|f| compensated_sum(f.rows().map(|r| r[d] as f64)))
                .collect();
            order_free_total(partials) / n as f64
        })
        .collect();
    let variance = (0..dims)
        .map(|d| {
            let m = mean[d];
            let partials = corpus
                .iter()
                .map(|f| compensated_sum(f.rows().map(|r| (r[d] as f64 - m).powi(2))))
                .collect();
            order_free_total(partials) / n as f64
        })
        .collect();
    Ok(NormalizationStats {
        mean,
        variance,
        frame_count: n,
    })
}

/// `x' = (x - mean) / sqrt(variance + VARIANCE_EPSILON)`.
pub fn apply_normalization(features: &AcousticFeatures, stats: &NormalizationStats) -> Result<AcousticFeatures> {
    if stats.mean.len() != features.dims || stats.variance.len() != features.dims {
        return Err(Error::shape(format!(
            "stats have {} dims, features have {}",
            stats.mean.len(),
            features.dims
        )));
    }
    let scale: Vec<f64> = stats
        .variance
        .iter()
        .map(|v| 1.0 / (v + VARIANCE_EPSILON).sqrt())
        .collect();
    let dims = features.dims;
    let data = features
        .data
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let d = i % dims;
            ((x as f64 - stats.mean[d]) * scale[d]) as f32
        })
        .collect();
    Ok(AcousticFeatures {
        data,
        normalized: true,
        ..features.clone()
    })
}
