//! Two-layer strided convolutional encoder: 64×64×3 → 16×16×C1 → 8×8×C2.

use super::params::{Params, CONV1_K, CONV2_K};
use crate::dataset::{SceneImage, IMAGE_SIZE};

pub const GRID1: usize = IMAGE_SIZE / CONV1_K;
pub const GRID: usize = GRID1 / CONV2_K;
pub const CELLS: usize = GRID * GRID;

/// Encoder activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    /// Channel-first `[C1][16][16]` pre-activations.
    pub conv1_pre: Vec<f64>,
    pub conv1_out: Vec<f64>,
    /// Channel-first `[C2][8][8]` pre-activations.
    pub conv2_pre: Vec<f64>,
    /// Final feature grid `[C2][8][8]` after ReLU.
    pub features: Vec<f64>,
    /// Per-channel global average of `features`.
    pub pooled: Vec<f64>,
}

pub fn forward(p: &Params, image: &SceneImage) -> EncoderTrace {
    forward_with(p, image, None)
}

/// Forward pass; `feature_override` replaces the final grid (used to probe
/// Grad-CAM's multiplicative structure).
pub fn forward_with(p: &Params, image: &SceneImage, feature_override: Option<&[f64]>) -> EncoderTrace {
    let c1 = p.conv1_b.len();
    let c2 = p.conv2_b.len();
    let px = image.pixels();

    let mut conv1_pre = vec![0.0; c1 * GRID1 * GRID1];
    for o in 0..c1 {
        let w = &p.conv1_w.data[o * 3 * CONV1_K * CONV1_K..(o + 1) * 3 * CONV1_K * CONV1_K];
        for i in 0..GRID1 {
            for j in 0..GRID1 {
                let mut acc = p.conv1_b.data[o];
                for ky in 0..CONV1_K {
                    let row = (i * CONV1_K + ky) * IMAGE_SIZE + j * CONV1_K;
                    for kx in 0..CONV1_K {
                        let base = (row + kx) * 3;
                        for c in 0..3 {
                            acc += w[(c * CONV1_K + ky) * CONV1_K + kx] * px[base + c];
                        }
                    }
                }
                conv1_pre[(o * GRID1 + i) * GRID1 + j] = acc;
            }
        }
    }
    let conv1_out: Vec<f64> = conv1_pre.iter().map(|v| v.max(0.0)).collect();

    let mut conv2_pre = vec![0.0; c2 * CELLS];
    for o in 0..c2 {
        for i in 0..GRID {
            for j in 0..GRID {
                let mut acc = p.conv2_b.data[o];
                for c in 0..c1 {
                    for ky in 0..CONV2_K {
                        for kx in 0..CONV2_K {
                            let w = p.conv2_w.data[((o * c1 + c) * CONV2_K + ky) * CONV2_K + kx];
                            acc += w * conv1_out[(c * GRID1 + i * CONV2_K + ky) * GRID1 + j * CONV2_K + kx];
                        }
                    }
                }
                conv2_pre[(o * GRID + i) * GRID + j] = acc;
            }
        }
    }
    let features: Vec<f64> = match feature_override {
        Some(f) => f.to_vec(),
        None => conv2_pre.iter().map(|v| v.max(0.0)).collect(),
    };
    let pooled = features
        .chunks_exact(CELLS)
        .map(|ch| ch.iter().sum::<f64>() / CELLS as f64)
        .collect();
    EncoderTrace {
        conv1_pre,
        conv1_out,
        conv2_pre,
        features,
        pooled,
    }
}

/// Gradient of the pooled features with respect to the feature grid.
pub fn pooled_to_features(dpooled: &[f64]) -> Vec<f64> {
    dpooled
        .iter()
        .flat_map(|&d| std::iter::repeat(d / CELLS as f64).take(CELLS))
        .collect()
}

/// Accumulates parameter gradients given d(loss)/d(features).
pub fn backward(p: &Params, image: &SceneImage, trace: &EncoderTrace, dfeatures: &[f64], grad: &mut Params) {
    let c1 = p.conv1_b.len();
    let c2 = p.conv2_b.len();
    let px = image.pixels();

    let dconv2: Vec<f64> = dfeatures
        .iter()
        .zip(&trace.conv2_pre)
        .map(|(d, &pre)| if pre > 0.0 { *d } else { 0.0 })
        .collect();
    let mut dconv1_out = vec![0.0; c1 * GRID1 * GRID1];
    for o in 0..c2 {
        for i in 0..GRID {
            for j in 0..GRID {
                let d = dconv2[(o * GRID + i) * GRID + j];
                if d == 0.0 {
                    continue;
                }
                grad.conv2_b.data[o] += d;
                for c in 0..c1 {
                    for ky in 0..CONV2_K {
                        for kx in 0..CONV2_K {
                            let wi = ((o * c1 + c) * CONV2_K + ky) * CONV2_K + kx;
                            let ai = (c * GRID1 + i * CONV2_K + ky) * GRID1 + j * CONV2_K + kx;
                            grad.conv2_w.data[wi] += d * trace.conv1_out[ai];
                            dconv1_out[ai] += d * p.conv2_w.data[wi];
                        }
                    }
                }
            }
        }
    }

    for o in 0..c1 {
        let gw = &mut grad.conv1_w.data[o * 3 * CONV1_K * CONV1_K..(o + 1) * 3 * CONV1_K * CONV1_K];
        for i in 0..GRID1 {
            for j in 0..GRID1 {
                let idx = (o * GRID1 + i) * GRID1 + j;
                if trace.conv1_pre[idx] <= 0.0 {
                    continue;
                }
                let d = dconv1_out[idx];
                if d == 0.0 {
                    continue;
                }
                grad.conv1_b.data[o] += d;
                for ky in 0..CONV1_K {
                    let row = (i * CONV1_K + ky) * IMAGE_SIZE + j * CONV1_K;
                    for kx in 0..CONV1_K {
                        let base = (row + kx) * 3;
                        for c in 0..3 {
                            gw[(c * CONV1_K + ky) * CONV1_K + kx] += d * px[base + c];
                        }
                    }
                }
            }
        }
    }
}
