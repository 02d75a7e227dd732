//! Small encoder–decoder captioner with exact reverse-mode gradients.
//!
//! Image features initialise the GRU state only; the decoder is then driven
//! by the previous word (ground truth under teacher forcing, the argmax at
//! decode time).

mod decoder;
pub mod encoder;
mod params;

pub use encoder::{CELLS, GRID};
pub use params::{Checkpoint, ModelConfig, Params, Tensor, BLOCK_NAMES, CHECKPOINT_VERSION};

use crate::dataset::{SceneImage, TokenId, Vocabulary};
use crate::error::{Error, Result};
use decoder::StepTrace;
use encoder::EncoderTrace;

/// Probability vector over the vocabulary for one timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct WordDistribution {
    probs: Vec<f64>,
    log_probs: Vec<f64>,
}

impl WordDistribution {
    pub fn from_logits(logits: &[f64]) -> Self {
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        let log_probs: Vec<f64> = logits.iter().map(|z| z - lse).collect();
        let probs = log_probs.iter().map(|l| l.exp()).collect();
        Self { probs, log_probs }
    }

    /// Builds a distribution from explicit probabilities (used by tests and
    /// hand-built examples). Entries must be non-negative and sum to 1.
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidInput(format!("not a distribution (sum {sum})")));
        }
        let log_probs = probs.iter().map(|p| p.ln()).collect();
        Ok(Self { probs, log_probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, id: TokenId) -> f64 {
        self.probs[id]
    }

    pub fn log_prob(&self, id: TokenId) -> f64 {
        self.log_probs[id]
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Lowest-index argmax.
    pub fn argmax(&self) -> TokenId {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    /// Total mass on a token set.
    pub fn mass<'a>(&self, ids: impl IntoIterator<Item = &'a TokenId>) -> f64 {
        ids.into_iter().map(|&i| self.probs[i]).sum()
    }
}

/// Hidden activations of the recurrent cell.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    hidden: Vec<f64>,
}

/// Output of [`Captioner::encode`].
#[derive(Debug, Clone)]
pub struct Encoded {
    trace: EncoderTrace,
    pub state: DecoderState,
}

impl Encoded {
    /// Final convolutional activation grid, channel-first `[C][8][8]`.
    pub fn features(&self) -> &[f64] {
        &self.trace.features
    }
}

/// Full teacher-forced pass, kept for the backward sweep.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    encoder: EncoderTrace,
    h0: Vec<f64>,
    steps: Vec<StepTrace>,
    pub distributions: Vec<WordDistribution>,
}

impl ForwardTrace {
    pub fn features(&self) -> &[f64] {
        &self.encoder.features
    }
}

/// One (image, caption) pair fed through the model.
#[derive(Debug, Clone, Copy)]
pub struct View<'a> {
    pub image: &'a SceneImage,
    pub caption: &'a [TokenId],
}

/// Loss gradient with respect to the logits of every step of every view.
pub type LogitGrads = Vec<Vec<Vec<f64>>>;

#[derive(Debug, Clone, PartialEq)]
pub struct Captioner {
    pub config: ModelConfig,
    pub params: Params,
}

impl Captioner {
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        Self {
            config,
            params: Params::init(&config, seed),
        }
    }

    pub fn for_vocab(vocab: &Vocabulary, seed: u64) -> Self {
        Self::new(ModelConfig::for_vocab(vocab.len()), seed)
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Self {
        Self {
            config: ckpt.config,
            params: ckpt.params,
        }
    }

    pub fn encode(&self, image: &SceneImage) -> Result<Encoded> {
        let trace = encoder::forward(&self.params, image);
        if trace.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("encoder", "non-finite feature activation"));
        }
        let hidden = decoder::initial_state(&self.params, &trace.pooled);
        if hidden.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("init", "non-finite initial state"));
        }
        Ok(Encoded {
            trace,
            state: DecoderState { hidden },
        })
    }

    fn check_token(&self, id: TokenId) -> Result<()> {
        if id >= self.config.vocab_size {
            Err(Error::InvalidInput(format!(
                "token id {id} outside vocabulary of {}",
                self.config.vocab_size
            )))
        } else {
            Ok(())
        }
    }

    pub fn step(&self, prev: TokenId, state: &DecoderState) -> Result<(WordDistribution, DecoderState)> {
        self.check_token(prev)?;
        let t = decoder::step(&self.params, prev, &state.hidden);
        Ok((WordDistribution::from_logits(&t.logits), DecoderState { hidden: t.h }))
    }

    fn trace(&self, image: &SceneImage, caption: &[TokenId], features: Option<&[f64]>) -> Result<ForwardTrace> {
        if caption.len() < 2 {
            return Err(Error::InvalidInput("caption needs at least BOS and one target".into()));
        }
        if caption[0] != 0 {
            return Err(Error::InvalidInput("caption must begin with BOS".into()));
        }
        for &t in caption {
            self.check_token(t)?;
        }
        let encoder = encoder::forward_with(&self.params, image, features);
        let h0 = decoder::initial_state(&self.params, &encoder.pooled);
        let mut steps = Vec::with_capacity(caption.len() - 1);
        let mut h = h0.clone();
        for &input in &caption[..caption.len() - 1] {
            let s = decoder::step(&self.params, input, &h);
            h = s.h.clone();
            steps.push(s);
        }
        let distributions = steps.iter().map(|s| WordDistribution::from_logits(&s.logits)).collect();
        Ok(ForwardTrace {
            encoder,
            h0,
            steps,
            distributions,
        })
    }

    /// Teacher-forced pass; distribution `t` predicts `caption[t + 1]`.
    pub fn forward_teacher_forced(&self, image: &SceneImage, caption: &[TokenId]) -> Result<ForwardTrace> {
        self.trace(image, caption, None)
    }

    /// Teacher-forced pass with the final feature grid replaced by `features`.
    pub fn forward_with_features(&self, image: &SceneImage, caption: &[TokenId], features: &[f64]) -> Result<ForwardTrace> {
        self.trace(image, caption, Some(features))
    }

    pub fn forward_batch(&self, views: &[View<'_>]) -> Result<Vec<ForwardTrace>> {
        views
            .iter()
            .map(|v| self.forward_teacher_forced(v.image, v.caption))
            .collect()
    }

    /// Argmax decoding from BOS until EOS or `max_len` tokens.
    pub fn greedy_decode(&self, image: &SceneImage, max_len: usize) -> Result<Vec<TokenId>> {
        let max_len = max_len.max(2);
        let enc = self.encode(image)?;
        let mut state = enc.state;
        let mut out = vec![0];
        while out.len() < max_len {
            let (dist, next) = self.step(*out.last().expect("non-empty"), &state)?;
            let w = dist.argmax();
            out.push(w);
            state = next;
            if w == 1 {
                break;
            }
        }
        Ok(out)
    }

    /// Backward sweep for one view. Returns d(loss)/d(feature grid) and
    /// accumulates parameter gradients into `grad`.
    pub fn backward(
        &self,
        image: &SceneImage,
        trace: &ForwardTrace,
        dlogits: &[Vec<f64>],
        grad: &mut Params,
    ) -> Vec<f64> {
        let hd = self.config.hidden;
        let mut dh = vec![0.0; hd];
        for (s, g) in trace.steps.iter().zip(dlogits).rev() {
            dh = decoder::step_backward(&self.params, s, g, &dh, grad);
        }
        let dpooled = decoder::initial_state_backward(&self.params, &trace.encoder.pooled, &trace.h0, &dh, grad);
        let dfeatures = encoder::pooled_to_features(&dpooled);
        encoder::backward(&self.params, image, &trace.encoder, &dfeatures, grad);
        dfeatures
    }

    /// Gradients of a scalar loss over a batch of views.
    ///
    /// `loss` receives the distributions of every view and returns the loss
    /// value together with its gradient on each step's logits.
    pub fn gradients<F>(&self, views: &[View<'_>], loss: F) -> Result<(f64, Params)>
    where
        F: FnOnce(&[Vec<WordDistribution>]) -> Result<(f64, LogitGrads)>,
    {
        let traces = self.forward_batch(views)?;
        let dists: Vec<Vec<WordDistribution>> = traces.iter().map(|t| t.distributions.clone()).collect();
        let (value, dlogits) = loss(&dists)?;
        if !value.is_finite() {
            return Err(Error::numeric("loss", format!("non-finite loss value {value}")));
        }
        let mut grad = Params::zeros(&self.config);
        for ((view, trace), g) in views.iter().zip(&traces).zip(&dlogits) {
            self.backward(view.image, trace, g, &mut grad);
        }
        grad.check_finite()?;
        Ok((value, grad))
    }
}

/// Backpropagates a gradient on probabilities through the softmax:
/// `dz_j = p_j (g_j − Σ_k g_k p_k)`.
pub fn softmax_backward(probs: &[f64], dprobs: &[f64]) -> Vec<f64> {
    let dot: f64 = probs.iter().zip(dprobs).map(|(p, g)| p * g).sum();
    probs.iter().zip(dprobs).map(|(p, g)| p * (g - dot)).collect()
}
