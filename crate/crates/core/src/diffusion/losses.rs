//! Training objectives of the blendshape sampler, over all 50 frames.

use crate::error::{Error, Result};

use super::BlendshapeClip;

pub const SYNC_TEMPERATURE: f64 = 0.07;

/// `|pred - target|^2`.
pub fn loss_simple(pred: &BlendshapeClip, target: &BlendshapeClip) -> Result<f64> {
    pred.check_same(target, "target clip")?;
    Ok(pred.data.iter().zip(&target.data).map(|(p, t)| (p - t).powi(2)).sum())
}

/// `|(b_{1:} - b_{:-1}) - (p_{1:} - p_{:-1})|^2`: squared error of the
/// first differences.
pub fn loss_velocity(pred: &BlendshapeClip, target: &BlendshapeClip) -> Result<f64> {
    pred.check_same(target, "target clip")?;
    let d = pred.dims;
    let mut total = 0.0;
    for i in 1..pred.frames {
        for k in 0..d {
            let vt = target.data[i * d + k] - target.data[(i - 1) * d + k];
            let vp = pred.data[i * d + k] - pred.data[(i - 1) * d + k];
            total += (vt - vp).powi(2);
        }
    }
    Ok(total)
}

/// `|p_{2:} - 2 p_{1:-1} + p_{:-2}|^2`.
pub fn loss_smooth(pred: &BlendshapeClip) -> f64 {
    let d = pred.dims;
    let x = &pred.data;
    let mut total = 0.0;
    for i in 2..pred.frames {
        for k in 0..d {
            total += (x[i * d + k] - 2.0 * x[(i - 1) * d + k] + x[(i - 2) * d + k]).powi(2);
        }
    }
    total
}

/// Cosine similarity divided by `temperature`.
pub fn cosine_similarity(temperature: f64) -> impl Fn(&[f64], &[f64]) -> f64 {
    move |x, y| {
        let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
        let nx = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        let ny = y.iter().map(|a| a * a).sum::<f64>().sqrt();
        dot / (nx * ny).max(1e-12) / temperature
    }
}

fn direction(p: &[Vec<f64>], q: &[Vec<f64>], phi: &dyn Fn(&[f64], &[f64]) -> f64) -> f64 {
    let n = p.len();
    let mut total = 0.0;
    for i in 0..n {
        let logits: Vec<f64> = (0..n)
            .filter(|&j| j + 1 != i && j != i + 1)
            .map(|j| phi(&p[i], &q[j]))
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
        total += lse - phi(&p[i], &q[i]);
    }
    total
}

/// Symmetric contrastive loss between blendshape-window embeddings `v` and
/// audio embeddings `a`. The negatives of anchor `i` are all `j` except the
/// temporal neighbours `i - 1` and `i + 1`; the positive `j = i` stays in
/// the denominator. Averaged over positions and both directions.
pub fn sync_loss_with(
    v: &[Vec<f64>],
    a: &[Vec<f64>],
    phi: &dyn Fn(&[f64], &[f64]) -> f64,
) -> Result<f64> {
    if v.len() != a.len() || v.is_empty() {
        return Err(Error::Dimension {
            what: "sync embeddings",
            expected: v.len(),
            got: a.len(),
        });
    }
    let d = v[0].len();
    if let Some(bad) = v.iter().chain(a).find(|r| r.len() != d) {
        return Err(Error::Dimension {
            what: "embedding width",
            expected: d,
            got: bad.len(),
        });
    }
    let n = v.len() as f64;
    Ok((direction(v, a, phi) + direction(a, v, phi)) / (2.0 * n))
}

/// [`sync_loss_with`] using cosine similarity at temperature 0.07.
pub fn sync_loss(v: &[Vec<f64>], a: &[Vec<f64>]) -> Result<f64> {
    sync_loss_with(v, a, &cosine_similarity(SYNC_TEMPERATURE))
}
