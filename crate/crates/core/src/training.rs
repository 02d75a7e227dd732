//! Deterministic SGD harness shared by the six model variants.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{mask_person, Corpus, GenderLabel, PersonMask, SceneImage, SceneRecord, Split, TokenId, Vocabulary};
use crate::error::{Error, Result};
use crate::losses::{LossBundle, LossWeights, Objective};
use crate::model::{Captioner, Checkpoint, ModelConfig, Params, View, CHECKPOINT_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    BaselineFt,
    Balanced,
    #[serde(rename = "upweight")]
    UpWeight,
    /// Confident loss only.
    EqualizerNoAcl,
    /// Appearance confusion loss only.
    EqualizerNoConf,
    Equalizer,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::BaselineFt,
        Variant::Balanced,
        Variant::UpWeight,
        Variant::EqualizerNoAcl,
        Variant::EqualizerNoConf,
        Variant::Equalizer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::BaselineFt => "baseline-ft",
            Variant::Balanced => "balanced",
            Variant::UpWeight => "upweight",
            Variant::EqualizerNoAcl => "equalizer-no-acl",
            Variant::EqualizerNoConf => "equalizer-no-conf",
            Variant::Equalizer => "equalizer",
        }
    }

    /// The objective this variant trains, with weights forced to be
    /// consistent with the variant.
    pub fn objective(self, weights: LossWeights) -> Objective {
        let (beta, mu, upweight, masked_pass) = match self {
            Variant::BaselineFt | Variant::Balanced => (0.0, 0.0, false, false),
            Variant::UpWeight => (0.0, 0.0, true, false),
            Variant::EqualizerNoAcl => (0.0, weights.mu, false, false),
            Variant::EqualizerNoConf => (weights.beta, 0.0, false, true),
            Variant::Equalizer => (weights.beta, weights.mu, false, true),
        };
        Objective {
            weights: LossWeights { beta, mu, ..weights },
            upweight,
            masked_pass,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    pub batch_size: usize,
    /// Rescale the gradient when its global norm exceeds this value.
    pub clip_norm: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.3,
            iterations: 20_000,
            batch_size: 8,
            clip_norm: Some(2.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub variant: Variant,
    pub weights: LossWeights,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    pub dataset: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Equalizer,
            weights: LossWeights::default(),
            optimizer: OptimizerConfig::default(),
            seed: 1,
            dataset: None,
            output: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        let o = &self.optimizer;
        if !(o.learning_rate > 0.0 && o.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if o.batch_size == 0 || o.iterations == 0 {
            return Err(Error::Config("batch_size and iterations must be positive".into()));
        }
        if matches!(o.clip_norm, Some(c) if !(c > 0.0)) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        Ok(())
    }

    pub fn objective(&self) -> Objective {
        self.variant.objective(self.weights)
    }

    pub fn with_variant(&self, variant: Variant) -> Self {
        Self { variant, ..self.clone() }
    }
}

/// One line of the JSON-lines training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLogRecord {
    pub iteration: usize,
    pub loss: LossBundle,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub block_grad_norms: Vec<(String, f64)>,
    pub clipped: bool,
    pub wall_clock_ms: f64,
}

/// Repeats woman-labeled entries (with replacement) until they match the
/// man-labeled count. Man entries are kept as they are.
pub fn resample_balanced<T: Clone, R: Rng>(records: &[T], labels: &[GenderLabel], rng: &mut R) -> Result<Vec<T>> {
    if records.len() != labels.len() {
        return Err(Error::InvalidInput("one label per record required".into()));
    }
    let pick = |want| {
        records
            .iter()
            .zip(labels)
            .filter(|(_, l)| **l == want)
            .map(|(r, _)| r.clone())
            .collect::<Vec<_>>()
    };
    let women = pick(GenderLabel::Woman);
    let men = pick(GenderLabel::Man);
    if women.is_empty() || men.is_empty() {
        return Err(Error::Insufficient(format!(
            "balancing needs both labels ({} woman, {} man)",
            women.len(),
            men.len()
        )));
    }
    let mut out = men.clone();
    out.extend(women.iter().cloned());
    for _ in women.len()..men.len() {
        out.push(women.choose(rng).expect("non-empty").clone());
    }
    Ok(out)
}

/// One caption of one record, ready for a training step.
#[derive(Debug, Clone, Copy)]
pub struct BatchItem<'a> {
    pub image: &'a SceneImage,
    pub mask: &'a PersonMask,
    pub caption: &'a [TokenId],
}

/// Objective value and parameter gradient on a batch.
///
/// The masked view `I′ = mask_person(I)` is built on the fly when the
/// objective needs it.
pub fn objective_gradients(
    model: &Captioner,
    objective: &Objective,
    vocab: &Vocabulary,
    batch: &[BatchItem<'_>],
) -> Result<(LossBundle, Params)> {
    let views: Vec<View> = batch.iter().map(|b| View { image: b.image, caption: b.caption }).collect();
    let traces = model.forward_batch(&views)?;
    let masked_images = if objective.masked_pass {
        batch.iter().map(|b| mask_person(b.image, b.mask)).collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let masked_traces = masked_images
        .iter()
        .zip(batch)
        .map(|(img, b)| model.forward_teacher_forced(img, b.caption))
        .collect::<Result<Vec<_>>>()?;

    let captions: Vec<&[TokenId]> = batch.iter().map(|b| b.caption).collect();
    let dists: Vec<_> = traces.iter().map(|t| t.distributions.clone()).collect();
    let masked_dists: Vec<_> = masked_traces.iter().map(|t| t.distributions.clone()).collect();
    let eval = objective.evaluate(
        vocab,
        &captions,
        &dists,
        objective.masked_pass.then_some(masked_dists.as_slice()),
    )?;

    let mut grad = Params::zeros(&model.config);
    for ((b, t), g) in batch.iter().zip(&traces).zip(&eval.original) {
        model.backward(b.image, t, g, &mut grad);
    }
    if let Some(mg) = &eval.masked {
        for ((img, t), g) in masked_images.iter().zip(&masked_traces).zip(mg) {
            model.backward(img, t, g, &mut grad);
        }
    }
    grad.check_finite()?;
    Ok((eval.bundle, grad))
}

/// Objective value only (used by finite-difference checks).
pub fn objective_value(
    model: &Captioner,
    objective: &Objective,
    vocab: &Vocabulary,
    batch: &[BatchItem<'_>],
) -> Result<LossBundle> {
    let dists = |imgs: &[&SceneImage]| -> Result<Vec<_>> {
        imgs.iter()
            .zip(batch)
            .map(|(img, b)| Ok(model.forward_teacher_forced(img, b.caption)?.distributions))
            .collect()
    };
    let originals: Vec<&SceneImage> = batch.iter().map(|b| b.image).collect();
    let d = dists(&originals)?;
    let masked = if objective.masked_pass {
        let imgs = batch.iter().map(|b| mask_person(b.image, b.mask)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&SceneImage> = imgs.iter().collect();
        Some(dists(&refs)?)
    } else {
        None
    };
    let captions: Vec<&[TokenId]> = batch.iter().map(|b| b.caption).collect();
    Ok(objective.evaluate(vocab, &captions, &d, masked.as_deref())?.bundle)
}

/// Why a run stopped early.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub iteration: usize,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub variant: Variant,
    pub seed: u64,
    pub iterations_completed: usize,
    /// Record visits by label over the whole run.
    pub woman_visits: usize,
    pub man_visits: usize,
    /// Mean cross-entropy per predicted token over the last 100 iterations.
    pub final_ce_per_token: f64,
    pub clamp_events: usize,
    pub diverged: Option<Divergence>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Final checkpoint, or the last good one if the run diverged.
    pub checkpoint: Checkpoint,
    pub log: Vec<TrainingLogRecord>,
    pub summary: TrainSummary,
}

impl TrainOutcome {
    /// Loss bundles only, which is what determinism comparisons look at.
    pub fn loss_trace(&self) -> Vec<LossBundle> {
        self.log.iter().map(|r| r.loss).collect()
    }
}

/// Trains `config.variant` on the train split of `corpus`.
pub fn train(config: &ExperimentConfig, corpus: &Corpus) -> Result<TrainOutcome> {
    config.validate()?;
    train_objective(config, &config.objective(), corpus)
}

fn sampling_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Trains with an explicit objective; `config.variant` still decides the
/// record pool (Balanced resamples) and is recorded in the checkpoint tag.
pub fn train_objective(config: &ExperimentConfig, objective: &Objective, corpus: &Corpus) -> Result<TrainOutcome> {
    let started = Instant::now();
    let vocab = &corpus.vocab;
    let records: Vec<&SceneRecord> = corpus
        .split(Split::Train)
        .filter(|r| r.label != GenderLabel::Discard)
        .collect();
    if records.is_empty() {
        return Err(Error::Insufficient("no labeled training records".into()));
    }
    let mut pool_rng = sampling_rng(config.seed, 1);
    let pool: Vec<&SceneRecord> = if config.variant == Variant::Balanced {
        let labels: Vec<GenderLabel> = records.iter().map(|r| r.label).collect();
        resample_balanced(&records, &labels, &mut pool_rng)?
    } else {
        records
    };

    let mut model = Captioner::new(ModelConfig::for_vocab(vocab.len()), config.seed);
    let mut rng = sampling_rng(config.seed, 2);
    let opt = config.optimizer;
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut log = Vec::with_capacity(opt.iterations);
    let (mut woman_visits, mut man_visits, mut clamp_events) = (0, 0, 0);
    let mut diverged = None;
    let mut recent: Vec<(f64, usize)> = Vec::new();

    for iteration in 1..=opt.iterations {
        let mut batch = Vec::with_capacity(opt.batch_size);
        for _ in 0..opt.batch_size {
            if cursor == order.len() {
                order = (0..pool.len()).collect();
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let r = pool[order[cursor]];
            cursor += 1;
            match r.label {
                GenderLabel::Woman => woman_visits += 1,
                _ => man_visits += 1,
            }
            let caption = &r.captions[rng.gen_range(0..r.captions.len())];
            batch.push(BatchItem {
                image: &r.image,
                mask: &r.mask,
                caption,
            });
        }
        let tokens: usize = batch.iter().map(|b| b.caption.len() - 1).sum();

        let (bundle, mut grad) = match objective_gradients(&model, objective, vocab, &batch) {
            Ok(v) => v,
            Err(e) => {
                diverged = Some(Divergence { iteration, detail: e.to_string() });
                break;
            }
        };
        clamp_events += bundle.clamp_events;
        let grad_norm = grad.norm();
        let block_grad_norms = grad.blocks().iter().map(|(n, t)| (n.to_string(), t.norm())).collect();
        let clipped = matches!(opt.clip_norm, Some(c) if grad_norm > c);
        if let (true, Some(c)) = (clipped, opt.clip_norm) {
            grad.scale(c / grad_norm);
        }
        let previous = model.params.clone();
        model.params.add_scaled(&grad, -opt.learning_rate);
        if let Err(e) = model.params.check_finite() {
            model.params = previous;
            diverged = Some(Divergence { iteration, detail: e.to_string() });
            break;
        }
        // batch CE is a per-record mean; convert to per-token
        recent.push((bundle.ce * batch.len() as f64, tokens));
        if recent.len() > 100 {
            recent.remove(0);
        }
        log.push(TrainingLogRecord {
            iteration,
            loss: bundle,
            grad_norm,
            block_grad_norms,
            clipped,
            wall_clock_ms: started.elapsed().as_secs_f64() * 1e3,
        });
    }

    let (ce_sum, tok_sum) = recent.iter().fold((0.0, 0), |(a, b), (c, t)| (a + c, b + t));
    let summary = TrainSummary {
        variant: config.variant,
        seed: config.seed,
        iterations_completed: log.len(),
        woman_visits,
        man_visits,
        final_ce_per_token: if tok_sum > 0 { ce_sum / tok_sum as f64 } else { f64::NAN },
        clamp_events,
        diverged,
    };
    let checkpoint = Checkpoint {
        format_version: CHECKPOINT_VERSION,
        vocab_fingerprint: vocab.fingerprint(),
        config: model.config,
        tag: format!("{}-seed{}", config.variant, config.seed),
        params: model.params,
    };
    Ok(TrainOutcome { checkpoint, log, summary })
}

/// Writes `log` as JSON lines.
pub fn write_log(path: &Path, log: &[TrainingLogRecord]) -> Result<()> {
    let mut buf = Vec::new();
    for rec in log {
        serde_json::to_writer(&mut buf, rec)?;
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Smoothed-loss check: compares mean total loss of the last `window`
/// iterations with the window before it. Returns the flagged windows'
/// starting iteration.
pub fn nonincreasing_violations(log: &[TrainingLogRecord], window: usize) -> Vec<usize> {
    let totals: Vec<f64> = log.iter().map(|r| r.loss.total).collect();
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let mut flagged = Vec::new();
    let mut start = window;
    while start + window <= totals.len() {
        if mean(&totals[start..start + window]) > mean(&totals[start - window..start]) {
            flagged.push(log[start].iteration);
        }
        start += window;
    }
    flagged
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteEntry {
    pub variant: Variant,
    pub seed: u64,
    /// Paths relative to the suite directory.
    pub checkpoint: Option<String>,
    pub checkpoint_id: Option<String>,
    pub log: Option<String>,
    pub summary: Option<TrainSummary>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteManifest {
    pub dataset_checksum: String,
    pub config: ExperimentConfig,
    pub entries: Vec<SuiteEntry>,
}

impl SuiteManifest {
    pub fn entry(&self, variant: Variant) -> Option<&SuiteEntry> {
        self.entries.iter().find(|e| e.variant == variant)
    }
}

pub const SUITE_FILE: &str = "suite.json";

/// Trains every variant in `variants` on the same data and seed, writing
/// `<variant>.json`, `<variant>.log.jsonl` and `suite.json` under `dir`.
/// A failing variant is recorded and the suite moves on.
pub fn run_suite(base: &ExperimentConfig, corpus: &Corpus, variants: &[Variant], dir: &Path) -> Result<SuiteManifest> {
    base.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::new();
    for &variant in variants {
        let cfg = base.with_variant(variant);
        let mut entry = SuiteEntry {
            variant,
            seed: cfg.seed,
            checkpoint: None,
            checkpoint_id: None,
            log: None,
            summary: None,
            error: None,
        };
        match train(&cfg, corpus) {
            Ok(out) => {
                let ck = format!("{variant}.json");
                let lg = format!("{variant}.log.jsonl");
                out.checkpoint.save(&dir.join(&ck))?;
                write_log(&dir.join(&lg), &out.log)?;
                if let Some(d) = &out.summary.diverged {
                    entry.error = Some(format!("diverged at iteration {}: {}", d.iteration, d.detail));
                }
                entry.checkpoint_id = Some(out.checkpoint.id());
                entry.checkpoint = Some(ck);
                entry.log = Some(lg);
                entry.summary = Some(out.summary);
            }
            Err(e) => entry.error = Some(e.to_string()),
        }
        entries.push(entry);
    }
    let manifest = SuiteManifest {
        dataset_checksum: corpus.checksum(),
        config: base.clone(),
        entries,
    };
    let path = dir.join(SUITE_FILE);
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
