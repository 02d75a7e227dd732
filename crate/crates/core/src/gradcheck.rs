//! Central finite-difference check of the reverse-mode gradients.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Vocabulary;
use crate::error::Result;
use crate::losses::{LossWeights, Objective};
use crate::model::Captioner;
use crate::training::{objective_gradients, objective_value, BatchItem};

/// Objectives isolating each loss term, plus the full combination.
pub fn term_objectives(weights: LossWeights) -> Vec<(&'static str, Objective)> {
    let only = |alpha, beta, mu, masked_pass| Objective {
        weights: LossWeights { alpha, beta, mu, ..weights },
        upweight: false,
        masked_pass,
    };
    vec![
        ("cross_entropy", only(1.0, 0.0, 0.0, false)),
        ("appearance_confusion", only(0.0, 1.0, 0.0, true)),
        ("confident", only(0.0, 0.0, 1.0, false)),
        ("total", only(weights.alpha, weights.beta, weights.mu, true)),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockCheck {
    pub block: String,
    pub coords: usize,
    /// ‖g_fd − g_an‖ / max(‖g_fd‖, ‖g_an‖, floor) over the sampled coordinates.
    pub relative_error: f64,
    pub analytic_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub term: String,
    pub blocks: Vec<BlockCheck>,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.relative_error).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckSettings {
    pub step: f64,
    /// Coordinates sampled per parameter block (all when the block is smaller).
    pub coords_per_block: usize,
    /// Norm floor below which a block's gradient counts as zero.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckSettings {
    fn default() -> Self {
        Self {
            step: 1e-5,
            coords_per_block: 48,
            floor: 1e-8,
            seed: 0,
        }
    }
}

/// Compares analytic gradients of `objective` on `batch` against central
/// differences, block by block.
pub fn check(
    model: &Captioner,
    objective: &Objective,
    vocab: &Vocabulary,
    batch: &[BatchItem<'_>],
    settings: GradCheckSettings,
    term: &str,
) -> Result<GradCheckReport> {
    let (_, analytic) = objective_gradients(model, objective, vocab, batch)?;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut probe = model.clone();
    let mut blocks = Vec::new();
    for (name, grad) in analytic.blocks() {
        let n = grad.len();
        let coords: Vec<usize> = if n <= settings.coords_per_block {
            (0..n).collect()
        } else {
            let mut c = index::sample(&mut rng, n, settings.coords_per_block).into_vec();
            c.sort_unstable();
            c
        };
        let (mut diff2, mut fd2, mut an2) = (0.0, 0.0, 0.0);
        for &i in &coords {
            let original = probe.params.block(name).expect("known block").data[i];
            let mut eval = |v: f64| -> Result<f64> {
                probe.params.block_mut(name).expect("known block").data[i] = v;
                Ok(objective_value(&probe, objective, vocab, batch)?.total)
            };
            let plus = eval(original + settings.step)?;
            let minus = eval(original - settings.step)?;
            eval(original)?;
            let fd = (plus - minus) / (2.0 * settings.step);
            let an = grad.data[i];
            diff2 += (fd - an) * (fd - an);
            fd2 += fd * fd;
            an2 += an * an;
        }
        let denom = fd2.sqrt().max(an2.sqrt()).max(settings.floor);
        blocks.push(BlockCheck {
            block: name.to_string(),
            coords: coords.len(),
            relative_error: diff2.sqrt() / denom,
            analytic_norm: grad.norm(),
        });
    }
    Ok(GradCheckReport {
        term: term.to_string(),
        blocks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_corpus, BiasConfig, SceneRecord};

    /// Two records whose first caption names a gendered word.
    fn gendered_pair(vocab: &Vocabulary, records: &[SceneRecord]) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, r) in records.iter().enumerate() {
            if let Some(k) = r.captions.iter().position(|c| c.iter().any(|&t| vocab.is_gendered(t))) {
                out.push((i, k));
            }
            if out.len() == 2 {
                break;
            }
        }
        out
    }

    #[test]
    fn every_term_matches_finite_differences() {
        let corpus = generate_corpus(&BiasConfig { seed: 3, ..Default::default() }, 12).unwrap();
        let v = &corpus.vocab;
        let model = Captioner::for_vocab(v, 17);
        let pick = gendered_pair(v, &corpus.records);
        let batch: Vec<BatchItem> = pick
            .iter()
            .map(|&(i, k)| BatchItem {
                image: &corpus.records[i].image,
                mask: &corpus.records[i].mask,
                caption: &corpus.records[i].captions[k],
            })
            .collect();
        let settings = GradCheckSettings { coords_per_block: 12, ..Default::default() };
        for (term, obj) in term_objectives(LossWeights::default()) {
            let rep = check(&model, &obj, v, &batch, settings, term).unwrap();
            for b in &rep.blocks {
                assert!(b.relative_error < 1e-4, "{term}/{}: {:e}", b.block, b.relative_error);
            }
        }
    }
}
