//! Region descriptors. The bank needs two: an appearance embedding (for
//! redundancy and mismatch filtering) and a region–text relevance score (for
//! budgeted eviction). Both sit behind [`DescriptorProvider`] so learned
//! encoders can replace the synthetic default.

use crate::error::{Error, Result};
use crate::rng::fnv1a64;
use crate::tensor::{Frame, PixelMask};

pub trait DescriptorProvider {
    /// Unit-norm appearance embedding of the masked region.
    fn embed_appearance(&self, frame: &Frame, mask: &PixelMask) -> Result<Vec<f32>>;

    /// Region–text relevance in `[-1, 1]`.
    fn score_relevance(&self, frame: &Frame, mask: &PixelMask, description: &str) -> Result<f64>;

    /// Unit-norm text embedding (all zeros for text without features).
    fn embed_text(&self, text: &str) -> Vec<f32>;
}

const HIST_CELLS: usize = 4;
const HASH_DIM: usize = 64;
const QUANT_LEVELS: f64 = 16.0;

/// Deterministic provider built from simple masked statistics.
///
/// Appearance is the unit-normalized concatenation of masked per-channel
/// means (3), masked per-channel variances (3), and a 4×4 occupancy histogram
/// over the mask's tight bounding box (16). Relevance is the cosine between a
/// hashed bag of character trigrams of the description and a hashed
/// quantization of the appearance vector.
#[derive(Debug, Clone, Copy, Default)]
pub struct SyntheticDescriptor;

impl SyntheticDescriptor {
    pub const APPEARANCE_DIM: usize = 6 + HIST_CELLS * HIST_CELLS;

    fn hashed_appearance(appearance: &[f32]) -> Vec<f64> {
        let mut v = vec![0.0; HASH_DIM];
        for (i, a) in appearance.iter().enumerate() {
            let q = (f64::from(*a) * QUANT_LEVELS).round() as i64;
            let mut key = [0u8; 16];
            key[..8].copy_from_slice(&(i as u64).to_le_bytes());
            key[8..].copy_from_slice(&q.to_le_bytes());
            add_hashed(&mut v, fnv1a64(&key), 1.0);
        }
        v
    }

    fn hashed_trigrams(text: &str) -> Vec<f64> {
        let mut v = vec![0.0; HASH_DIM];
        let chars: Vec<char> = format!("  {}  ", text.trim().to_lowercase())
            .chars()
            .collect();
        if text.trim().is_empty() {
            return v;
        }
        for w in chars.windows(3) {
            let tri: String = w.iter().collect();
            add_hashed(&mut v, fnv1a64(tri.as_bytes()), 1.0);
        }
        v
    }
}

fn add_hashed(v: &mut [f64], hash: u64, weight: f64) {
    let bucket = (hash % v.len() as u64) as usize;
    let sign = if (hash >> 32) & 1 == 0 { 1.0 } else { -1.0 };
    v[bucket] += sign * weight;
}

pub(crate) fn cosine_f64(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>();
    let nb = b.iter().map(|x| x * x).sum::<f64>();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        // One square root keeps cos(v, v) at exactly 1.
        (dot / (na * nb).sqrt()).clamp(-1.0, 1.0)
    }
}

/// Cosine similarity of two `f32` vectors, accumulated in `f64`.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| f64::from(*x) * f64::from(*y))
        .sum();
    let na = a.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>();
    let nb = b.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        // One square root keeps cos(v, v) at exactly 1.
        (dot / (na * nb).sqrt()).clamp(-1.0, 1.0)
    }
}

/// Scales `v` to unit length; zero vectors are returned unchanged.
pub fn normalize(v: &[f64]) -> Vec<f32> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        return v.iter().map(|&x| x as f32).collect();
    }
    v.iter().map(|x| (x / n) as f32).collect()
}

impl DescriptorProvider for SyntheticDescriptor {
    fn embed_appearance(&self, frame: &Frame, mask: &PixelMask) -> Result<Vec<f32>> {
        mask.check_dims(frame.height(), frame.width())?;
        let (y0, x0, y1, x1) = mask.bounding_box().ok_or(Error::EmptyMask)?;
        let (bh, bw) = (y1 - y0, x1 - x0);

        let mut sum = [0.0f64; 3];
        let mut sum_sq = [0.0f64; 3];
        let mut hist = [0.0f64; HIST_CELLS * HIST_CELLS];
        let mut n = 0usize;
        for y in y0..y1 {
            for x in x0..x1 {
                if !mask.get(y, x) {
                    continue;
                }
                let p = frame.pixel(y, x);
                for c in 0..3 {
                    let v = f64::from(p[c]);
                    sum[c] += v;
                    sum_sq[c] += v * v;
                }
                let hy = (y - y0) * HIST_CELLS / bh;
                let hx = (x - x0) * HIST_CELLS / bw;
                hist[hy * HIST_CELLS + hx] += 1.0;
                n += 1;
            }
        }
        let n = n as f64;
        let mut features = Vec::with_capacity(Self::APPEARANCE_DIM);
        let means: Vec<f64> = sum.iter().map(|s| s / n).collect();
        features.extend_from_slice(&means);
        for c in 0..3 {
            features.push((sum_sq[c] / n - means[c] * means[c]).max(0.0));
        }
        features.extend(hist.iter().map(|h| h / n));
        Ok(normalize(&features))
    }

    fn score_relevance(&self, frame: &Frame, mask: &PixelMask, description: &str) -> Result<f64> {
        let appearance = self.embed_appearance(frame, mask)?;
        Ok(cosine_f64(
            &Self::hashed_trigrams(description),
            &Self::hashed_appearance(&appearance),
        ))
    }

    fn embed_text(&self, text: &str) -> Vec<f32> {
        normalize(&Self::hashed_trigrams(text))
    }
}
