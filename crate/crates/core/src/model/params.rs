use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major array of f64.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    fn uniform<R: Rng>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(|_| rng.gen_range(-bound..bound)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Layer sizes of the captioner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    /// Channels after the first (4×4, stride 4) convolution.
    pub conv1_channels: usize,
    /// Channels of the final 8×8 feature grid.
    pub conv2_channels: usize,
    pub hidden: usize,
    pub embed: usize,
}

impl ModelConfig {
    pub fn for_vocab(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            conv1_channels: 12,
            conv2_channels: 16,
            hidden: 32,
            embed: 16,
        }
    }
}

pub const CONV1_K: usize = 4;
pub const CONV2_K: usize = 2;

/// All trainable parameters, one tensor per named block.
///
/// The same type doubles as a gradient container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub conv1_w: Tensor,
    pub conv1_b: Tensor,
    pub conv2_w: Tensor,
    pub conv2_b: Tensor,
    pub init_w: Tensor,
    pub init_b: Tensor,
    pub embed: Tensor,
    /// Input weights of the update, reset and candidate gates, stacked.
    pub gru_wx: Tensor,
    /// Recurrent weights, stacked like `gru_wx`.
    pub gru_wh: Tensor,
    pub gru_b: Tensor,
    pub out_w: Tensor,
    pub out_b: Tensor,
}

pub const BLOCK_NAMES: [&str; 12] = [
    "conv1_w", "conv1_b", "conv2_w", "conv2_b", "init_w", "init_b", "embed", "gru_wx", "gru_wh", "gru_b", "out_w",
    "out_b",
];

impl Params {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let (c1, c2, h, e, v) = (cfg.conv1_channels, cfg.conv2_channels, cfg.hidden, cfg.embed, cfg.vocab_size);
        Self {
            conv1_w: Tensor::zeros(&[c1, 3, CONV1_K, CONV1_K]),
            conv1_b: Tensor::zeros(&[c1]),
            conv2_w: Tensor::zeros(&[c2, c1, CONV2_K, CONV2_K]),
            conv2_b: Tensor::zeros(&[c2]),
            init_w: Tensor::zeros(&[h, c2]),
            init_b: Tensor::zeros(&[h]),
            embed: Tensor::zeros(&[v, e]),
            gru_wx: Tensor::zeros(&[3 * h, e]),
            gru_wh: Tensor::zeros(&[3 * h, h]),
            gru_b: Tensor::zeros(&[3 * h]),
            out_w: Tensor::zeros(&[v, h]),
            out_b: Tensor::zeros(&[v]),
        }
    }

    /// Seeded initialisation: He-uniform for the convolutions, 1/√fan_in
    /// uniform elsewhere, zero biases.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c1, c2, h, e, v) = (cfg.conv1_channels, cfg.conv2_channels, cfg.hidden, cfg.embed, cfg.vocab_size);
        let he = |fan_in: usize| (6.0 / fan_in as f64).sqrt();
        let plain = |fan_in: usize| 1.0 / (fan_in as f64).sqrt();
        let mut p = Self::zeros(cfg);
        p.conv1_w = Tensor::uniform(&[c1, 3, CONV1_K, CONV1_K], he(3 * CONV1_K * CONV1_K), &mut rng);
        p.conv2_w = Tensor::uniform(&[c2, c1, CONV2_K, CONV2_K], he(c1 * CONV2_K * CONV2_K), &mut rng);
        p.init_w = Tensor::uniform(&[h, c2], plain(c2), &mut rng);
        p.embed = Tensor::uniform(&[v, e], 0.5, &mut rng);
        p.gru_wx = Tensor::uniform(&[3 * h, e], plain(e), &mut rng);
        p.gru_wh = Tensor::uniform(&[3 * h, h], plain(h), &mut rng);
        p.out_w = Tensor::uniform(&[v, h], plain(h), &mut rng);
        // small positive conv biases keep early ReLUs alive
        p.conv1_b.data.fill(0.01);
        p.conv2_b.data.fill(0.01);
        p
    }

    pub fn blocks(&self) -> [(&'static str, &Tensor); 12] {
        [
            ("conv1_w", &self.conv1_w),
            ("conv1_b", &self.conv1_b),
            ("conv2_w", &self.conv2_w),
            ("conv2_b", &self.conv2_b),
            ("init_w", &self.init_w),
            ("init_b", &self.init_b),
            ("embed", &self.embed),
            ("gru_wx", &self.gru_wx),
            ("gru_wh", &self.gru_wh),
            ("gru_b", &self.gru_b),
            ("out_w", &self.out_w),
            ("out_b", &self.out_b),
        ]
    }

    pub fn blocks_mut(&mut self) -> [(&'static str, &mut Tensor); 12] {
        [
            ("conv1_w", &mut self.conv1_w),
            ("conv1_b", &mut self.conv1_b),
            ("conv2_w", &mut self.conv2_w),
            ("conv2_b", &mut self.conv2_b),
            ("init_w", &mut self.init_w),
            ("init_b", &mut self.init_b),
            ("embed", &mut self.embed),
            ("gru_wx", &mut self.gru_wx),
            ("gru_wh", &mut self.gru_wh),
            ("gru_b", &mut self.gru_b),
            ("out_w", &mut self.out_w),
            ("out_b", &mut self.out_b),
        ]
    }

    pub fn block(&self, name: &str) -> Option<&Tensor> {
        self.blocks().into_iter().find(|(n, _)| *n == name).map(|(_, t)| t)
    }

    pub fn block_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.blocks_mut().into_iter().find(|(n, _)| *n == name).map(|(_, t)| t)
    }

    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|(_, t)| t.len()).sum()
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Params, scale: f64) {
        for ((_, a), (_, b)) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, t) in self.blocks_mut() {
            t.data.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn norm(&self) -> f64 {
        self.blocks()
            .iter()
            .map(|(_, t)| t.data.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// First block holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.blocks()
            .into_iter()
            .find(|(_, t)| t.data.iter().any(|v| !v.is_finite()))
            .map(|(n, _)| n)
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.first_non_finite() {
            Some(name) => Err(Error::numeric(name, "non-finite value")),
            None => Ok(()),
        }
    }

    fn check_shapes(&self, cfg: &ModelConfig) -> Result<()> {
        let want = Params::zeros(cfg);
        for ((name, a), (_, b)) in self.blocks().into_iter().zip(want.blocks()) {
            if a.shape != b.shape || a.data.len() != b.data.len() {
                return Err(Error::Checkpoint(format!(
                    "block {name} has shape {:?}, expected {:?}",
                    a.shape, b.shape
                )));
            }
        }
        Ok(())
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// On-disk checkpoint: named parameter arrays plus the vocabulary fingerprint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub vocab_fingerprint: String,
    pub config: ModelConfig,
    /// Free-form provenance (variant, seed, iterations).
    pub tag: String,
    pub params: Params,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let bytes = serde_json::to_vec(self)?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    /// Loads a checkpoint, rejecting it unless it was trained on `vocab_fingerprint`.
    pub fn load(path: &Path, vocab_fingerprint: &str) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_slice(&bytes)?;
        if ckpt.format_version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", ckpt.format_version)));
        }
        if ckpt.vocab_fingerprint != vocab_fingerprint {
            return Err(Error::Checkpoint(format!(
                "vocabulary mismatch: checkpoint {} vs dataset {}",
                &ckpt.vocab_fingerprint[..12.min(ckpt.vocab_fingerprint.len())],
                &vocab_fingerprint[..12.min(vocab_fingerprint.len())]
            )));
        }
        ckpt.params.check_shapes(&ckpt.config)?;
        ckpt.params.check_finite()?;
        Ok(ckpt)
    }

    /// SHA-256 of the serialized checkpoint.
    pub fn id(&self) -> String {
        use sha2::{Digest, Sha256};
        let bytes = serde_json::to_vec(self).expect("checkpoint serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seeded() {
        let cfg = ModelConfig::for_vocab(27);
        assert_eq!(Params::init(&cfg, 3), Params::init(&cfg, 3));
        assert_ne!(Params::init(&cfg, 3), Params::init(&cfg, 4));
        assert!(Params::init(&cfg, 3).check_finite().is_ok());
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact_and_checks_vocab() {
        let cfg = ModelConfig::for_vocab(27);
        let ckpt = Checkpoint {
            format_version: CHECKPOINT_VERSION,
            vocab_fingerprint: "abc".into(),
            config: cfg,
            tag: "t".into(),
            params: Params::init(&cfg, 1),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path, "abc").unwrap();
        assert_eq!(back, ckpt);
        assert!(matches!(Checkpoint::load(&path, "xyz"), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn non_finite_block_is_named() {
        let cfg = ModelConfig::for_vocab(10);
        let mut p = Params::zeros(&cfg);
        p.gru_wh.data[3] = f64::NAN;
        match p.check_finite() {
            Err(Error::Numeric { block, .. }) => assert_eq!(block, "gru_wh"),
            other => panic!("{other:?}"),
        }
    }
}
