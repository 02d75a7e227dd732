//! Command-line front end.
//!
//! Every command writes under one `--out` root:
//! `data/`, `checkpoints/`, `reports/`, `heatmaps/` and `manifest.json`.
//! Settings come from an optional TOML file (`--config`); flags override it.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{
    generate_corpus, load_dataset, make_splits, read_meta, save_dataset, BiasConfig, Corpus, GenderLabel,
    SceneRecord, Split, SplitSizes,
};
use crate::error::{Error, Result};
use crate::metrics::{
    bias_amplification_csv, confidence_csv, error_ratio_csv, evaluate, outcome_csv, MetricsReport,
};
use crate::model::{Captioner, Checkpoint};
use crate::saliency::{
    explained_caption, map_csv, pointing, pointing_suite, random_map, saliency_map, write_overlay, CaptionSource,
    Method, PointingSuite, SaliencyMap,
};
use crate::training::{run_suite, train, write_log, ExperimentConfig, Variant, SUITE_FILE};

pub const DATA_DIR: &str = "data";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const REPORT_DIR: &str = "reports";
pub const HEATMAP_DIR: &str = "heatmaps";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Parser)]
#[command(name = "equalizer", version, about = "Gender-bias mitigation losses for captioning, on synthetic scenes")]
pub struct Cli {
    /// Output root.
    #[arg(long, global = true, default_value = "runs")]
    pub out: PathBuf,
    /// TOML config file; flags take precedence over its keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate, label, split and save a synthetic corpus.
    GenData(GenDataArgs),
    /// Train one variant.
    Train(TrainArgs),
    /// Train several variants on the same data and seed.
    Suite(SuiteArgs),
    /// Evaluate trained checkpoints and write report tables.
    Eval(EvalArgs),
    /// Saliency heatmaps and pointing-game scores.
    Saliency(SaliencyArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Scenes to generate before labeling and splitting (`data.scenes`).
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub woman_fraction: Option<f64>,
    #[arg(long)]
    pub evidence_occlusion_prob: Option<f64>,
    #[arg(long)]
    pub annotator_mention_prob: Option<f64>,
    #[arg(long)]
    pub glyph_contrast: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    /// Records per label in the balanced test split.
    #[arg(long)]
    pub balanced_per_label: Option<usize>,
    #[arg(long)]
    pub test_bias: Option<usize>,
    /// Training records; everything left over when omitted from flags and config.
    #[arg(long)]
    pub train: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DataFlags {
    /// Dataset directory; defaults to `<out>/data`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Refuse to run unless the dataset has this checksum.
    #[arg(long)]
    pub dataset_checksum: Option<String>,
}

#[derive(Debug, Args)]
pub struct OptimFlags {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Gradient clipping threshold; 0 disables clipping.
    #[arg(long)]
    pub clip_norm: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub upweight_factor: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataFlags,
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<Variant>,
    #[command(flatten)]
    pub optim: OptimFlags,
}

#[derive(Debug, Args)]
pub struct SuiteArgs {
    #[command(flatten)]
    pub data: DataFlags,
    /// Comma-separated variants; all six by default.
    #[arg(long, value_delimiter = ',', value_parser = parse_variant)]
    pub variants: Vec<Variant>,
    #[command(flatten)]
    pub optim: OptimFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitChoice {
    Balanced,
    TestBias,
    All,
}

impl SplitChoice {
    fn splits(self) -> Vec<Split> {
        match self {
            SplitChoice::Balanced => vec![Split::TestBalanced],
            SplitChoice::TestBias => vec![Split::TestBias],
            SplitChoice::All => vec![Split::TestBias, Split::TestBalanced],
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataFlags,
    /// Comma-separated variants; all six by default.
    #[arg(long, value_delimiter = ',', value_parser = parse_variant)]
    pub variants: Vec<Variant>,
    /// `balanced`, `test-bias` or `all`.
    #[arg(long, default_value = "all", value_parser = parse_split_choice)]
    pub split: SplitChoice,
    /// Records per split scored in the pointing game (0 skips it).
    #[arg(long, default_value_t = 100)]
    pub pointing_records: usize,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("target").required(true).args(["record", "all_gendered"])))]
pub struct SaliencyArgs {
    #[command(flatten)]
    pub data: DataFlags,
    /// `occlusion`, `gradcam` or `random`.
    #[arg(long, value_parser = parse_method)]
    pub method: Method,
    /// Record id, or its numeric index.
    #[arg(long)]
    pub record: Option<String>,
    /// Score every gendered record of `--split`.
    #[arg(long)]
    pub all_gendered: bool,
    #[arg(long, default_value = "baseline-ft", value_parser = parse_variant)]
    pub variant: Variant,
    /// Checkpoint file; defaults to `<out>/checkpoints/<variant>.json`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "balanced", value_parser = parse_split)]
    pub split: Split,
    /// `ground-truth` or `generated`.
    #[arg(long, default_value = "ground-truth", value_parser = parse_source)]
    pub source: CaptionSource,
    /// Seed for random maps.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_split_choice(s: &str) -> std::result::Result<SplitChoice, String> {
    match s {
        "balanced" | "test-balanced" => Ok(SplitChoice::Balanced),
        "test-bias" | "bias" => Ok(SplitChoice::TestBias),
        "all" => Ok(SplitChoice::All),
        _ => Err(format!("unknown split {s:?}")),
    }
}

fn parse_source(s: &str) -> std::result::Result<CaptionSource, String> {
    match s {
        "ground-truth" | "gt" => Ok(CaptionSource::GroundTruth),
        "generated" => Ok(CaptionSource::Generated),
        _ => Err(format!("unknown caption source {s:?}")),
    }
}

/// Contents of the `--config` file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub experiment: ExperimentConfig,
    /// Expected dataset checksum; commands refuse to run on anything else.
    pub dataset_checksum: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub scenes: Option<usize>,
    pub bias: BiasConfig,
    pub splits: SplitSizes,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    fn apply_optim(&mut self, f: &OptimFlags) {
        let e = &mut self.experiment;
        set(&mut e.seed, f.seed);
        set(&mut e.optimizer.iterations, f.iterations);
        set(&mut e.optimizer.learning_rate, f.learning_rate);
        set(&mut e.optimizer.batch_size, f.batch_size);
        if let Some(c) = f.clip_norm {
            e.optimizer.clip_norm = (c > 0.0).then_some(c);
        }
        set(&mut e.weights.alpha, f.alpha);
        set(&mut e.weights.beta, f.beta);
        set(&mut e.weights.mu, f.mu);
        set(&mut e.weights.epsilon, f.epsilon);
        set(&mut e.weights.upweight_factor, f.upweight_factor);
    }

    fn apply_data(&mut self, f: &DataFlags) {
        if let Some(d) = &f.data {
            self.experiment.dataset = Some(d.clone());
        }
        if let Some(c) = &f.dataset_checksum {
            self.dataset_checksum = Some(c.clone());
        }
    }
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

/// Record of one command invocation, kept in `manifest.json` keyed by command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub dataset_checksum: Option<String>,
    pub checkpoint_ids: BTreeMap<String, String>,
    /// Emitted artifacts, relative to the output root.
    pub outputs: BTreeSet<String>,
    pub failures: Vec<String>,
    pub wall_clock_ms: u128,
    pub tool_version: String,
}

impl RunManifest {
    fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            command: command.to_string(),
            config_hash: config.hash(),
            dataset_checksum: None,
            checkpoint_ids: BTreeMap::new(),
            outputs: BTreeSet::new(),
            failures: Vec::new(),
            wall_clock_ms: 0,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

/// Reads `<out>/manifest.json`; a missing file reads as empty.
pub fn read_manifest(out: &Path) -> Result<BTreeMap<String, RunManifest>> {
    let path = out.join(MANIFEST_FILE);
    if !path.exists() {
        return Ok(BTreeMap::new());
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn record_run(out: &Path, run: RunManifest) -> Result<()> {
    let mut all = read_manifest(out)?;
    all.insert(run.command.clone(), run);
    let path = out.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&all)?).map_err(|e| Error::io(&path, e))
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write(out: &Path, rel: &str, contents: &[u8], run: &mut RunManifest) -> Result<()> {
    let path = out.join(rel);
    if let Some(parent) = path.parent() {
        mkdir(parent)?;
    }
    fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    run.outputs.insert(rel.to_string());
    Ok(())
}

enum Failure {
    Usage(clap::Error),
    Run(Error),
}

impl<E: Into<Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Run(e.into())
    }
}

/// Parses `args` and runs the command, returning the process exit code:
/// 0 when all requested work succeeded, 1 on failure, 2 on usage errors.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(failures) if failures.is_empty() => 0,
        Ok(failures) => {
            for f in failures {
                eprintln!("failed: {f}");
            }
            1
        }
        Err(Failure::Usage(e)) => {
            let _ = e.print();
            e.exit_code()
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn execute(cli: &Cli) -> std::result::Result<Vec<String>, Failure> {
    let start = Instant::now();
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let out = cli.out.as_path();
    mkdir(out)?;
    let mut run = match &cli.command {
        Command::GenData(a) => gen_data(out, &mut config, a)?,
        Command::Train(a) => {
            config.apply_data(&a.data);
            config.apply_optim(&a.optim);
            set(&mut config.experiment.variant, a.variant);
            train_one(out, &config)?
        }
        Command::Suite(a) => {
            config.apply_data(&a.data);
            config.apply_optim(&a.optim);
            suite(out, &config, &a.variants)?
        }
        Command::Eval(a) => {
            config.apply_data(&a.data);
            eval(out, &config, a)?
        }
        Command::Saliency(a) => {
            config.apply_data(&a.data);
            saliency(out, &config, a)?
        }
    };
    run.wall_clock_ms = start.elapsed().as_millis();
    let failures = run.failures.clone();
    record_run(out, run)?;
    Ok(failures)
}

fn gen_data(out: &Path, config: &mut RunConfig, a: &GenDataArgs) -> std::result::Result<RunManifest, Failure> {
    let d = &mut config.data;
    set(&mut d.scenes, a.n.map(Some));
    let b = &mut d.bias;
    set(&mut b.seed, a.seed);
    set(&mut b.woman_fraction, a.woman_fraction);
    set(&mut b.evidence_occlusion_prob, a.evidence_occlusion_prob);
    set(&mut b.annotator_mention_prob, a.annotator_mention_prob);
    set(&mut b.style.glyph_contrast, a.glyph_contrast);
    set(&mut b.style.noise, a.noise);
    set(&mut d.splits.balanced_per_label, a.balanced_per_label);
    set(&mut d.splits.test_bias, a.test_bias);
    set(&mut d.splits.train, a.train.map(Some));
    let Some(n) = d.scenes else {
        let err = Cli::command().error(
            ErrorKind::MissingRequiredArgument,
            "gen-data needs --n (or data.scenes in the config)",
        );
        return Err(Failure::Usage(err));
    };

    let mut corpus = generate_corpus(&d.bias, n)?.labeled();
    make_splits(&mut corpus, d.splits, d.bias.seed)?;
    let dir = out.join(DATA_DIR);
    if dir.join("dataset.json").exists() {
        fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let checksum = save_dataset(&corpus, &dir)?;
    println!("{checksum}");

    let mut run = RunManifest::new("gen-data", config);
    run.dataset_checksum = Some(checksum);
    for rel in ["dataset.json", "manifest.jsonl", "images", "masks"] {
        run.outputs.insert(format!("{DATA_DIR}/{rel}"));
    }
    Ok(run)
}

/// Loads the dataset, refusing it if the expected checksum differs.
fn dataset(out: &Path, config: &RunConfig) -> Result<Corpus> {
    let dir = config.experiment.dataset.clone().unwrap_or_else(|| out.join(DATA_DIR));
    if let Some(expected) = &config.dataset_checksum {
        let meta = read_meta(&dir)?;
        if &meta.checksum != expected {
            return Err(Error::Checksum {
                expected: expected.clone(),
                found: meta.checksum,
            });
        }
    }
    load_dataset(&dir)
}

fn train_one(out: &Path, config: &RunConfig) -> std::result::Result<RunManifest, Failure> {
    let corpus = dataset(out, config)?;
    let mut run = RunManifest::new("train", config);
    run.dataset_checksum = Some(corpus.checksum());
    let v = config.experiment.variant;
    let outcome = train(&config.experiment, &corpus)?;
    let ck = format!("{CHECKPOINT_DIR}/{v}.json");
    let lg = format!("{CHECKPOINT_DIR}/{v}.log.jsonl");
    outcome.checkpoint.save(&out.join(&ck))?;
    write_log(&out.join(&lg), &outcome.log)?;
    run.outputs.extend([ck, lg]);
    run.checkpoint_ids.insert(v.to_string(), outcome.checkpoint.id());
    if let Some(d) = &outcome.summary.diverged {
        run.failures.push(format!("{v} diverged at iteration {}: {}", d.iteration, d.detail));
    }
    println!(
        "{v}: {} iterations, final CE/token {:.4}",
        outcome.summary.iterations_completed, outcome.summary.final_ce_per_token
    );
    Ok(run)
}

fn suite(out: &Path, config: &RunConfig, variants: &[Variant]) -> std::result::Result<RunManifest, Failure> {
    let corpus = dataset(out, config)?;
    let variants = if variants.is_empty() { Variant::ALL.to_vec() } else { variants.to_vec() };
    let mut run = RunManifest::new("suite", config);
    run.dataset_checksum = Some(corpus.checksum());
    let manifest = run_suite(&config.experiment, &corpus, &variants, &out.join(CHECKPOINT_DIR))?;
    run.outputs.insert(format!("{CHECKPOINT_DIR}/{SUITE_FILE}"));
    for e in &manifest.entries {
        for rel in [&e.checkpoint, &e.log].into_iter().flatten() {
            run.outputs.insert(format!("{CHECKPOINT_DIR}/{rel}"));
        }
        if let Some(id) = &e.checkpoint_id {
            run.checkpoint_ids.insert(e.variant.to_string(), id.clone());
        }
        match (&e.error, &e.summary) {
            (Some(err), _) => run.failures.push(format!("{}: {err}", e.variant)),
            (None, Some(s)) => println!("{}: final CE/token {:.4}", e.variant, s.final_ce_per_token),
            (None, None) => {}
        }
    }
    Ok(run)
}

/// Per-variant, per-split evaluation output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub variant: Variant,
    pub metrics: MetricsReport,
    pub pointing_grad_cam: Option<PointingSuite>,
    pub pointing_occlusion: Option<PointingSuite>,
}

fn split_name(s: Split) -> &'static str {
    match s {
        Split::Train => "train",
        Split::TestBias => "test-bias",
        Split::TestBalanced => "balanced",
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "undefined".into())
}

fn load_model(path: &Path, corpus: &Corpus) -> Result<(Captioner, String)> {
    let ck = Checkpoint::load(path, &corpus.vocab.fingerprint())?;
    let id = ck.id();
    Ok((Captioner::from_checkpoint(ck), id))
}

fn eval(out: &Path, config: &RunConfig, a: &EvalArgs) -> std::result::Result<RunManifest, Failure> {
    let corpus = dataset(out, config)?;
    let checksum = corpus.checksum();
    let mut run = RunManifest::new("eval", config);
    run.dataset_checksum = Some(checksum.clone());
    let variants = if a.variants.is_empty() { Variant::ALL.to_vec() } else { a.variants.clone() };

    let mut reports: BTreeMap<Split, Vec<EvalReport>> = BTreeMap::new();
    for v in variants {
        let path = out.join(CHECKPOINT_DIR).join(format!("{v}.json"));
        let (model, id) = match load_model(&path, &corpus) {
            Ok(m) => m,
            Err(e) => {
                run.failures.push(format!("{v}: {e}"));
                continue;
            }
        };
        run.checkpoint_ids.insert(v.to_string(), id.clone());
        for split in a.split.splits() {
            let records: Vec<&SceneRecord> = corpus.split(split).collect();
            let name = split_name(split);
            let metrics = match evaluate(&model, &records, &corpus.vocab, name, &checksum, &id) {
                Ok(m) => m,
                Err(e) => {
                    run.failures.push(format!("{v}/{name}: {e}"));
                    continue;
                }
            };
            let sub = &records[..a.pointing_records.min(records.len())];
            let point = |method| pointing_suite(&model, sub, &corpus.vocab, method, CaptionSource::GroundTruth).ok();
            let report = EvalReport {
                config_hash: run.config_hash.clone(),
                variant: v,
                pointing_grad_cam: point(Method::GradCam),
                pointing_occlusion: point(Method::Occlusion),
                metrics,
            };
            let rel = format!("{REPORT_DIR}/{v}.{name}.json");
            write(out, &rel, serde_json::to_string_pretty(&report)?.as_bytes(), &mut run)?;
            println!(
                "{v} [{name}] error {:.2}% ratio delta {} divergence {:.4}",
                report.metrics.error,
                fmt_opt(report.metrics.ratio.delta),
                report.metrics.divergence
            );
            reports.entry(split).or_default().push(report);
        }
    }

    for (split, rs) in &reports {
        let name = split_name(*split);
        let rows: Vec<(&str, &MetricsReport)> = rs.iter().map(|r| (r.variant.name(), &r.metrics)).collect();
        let mut cmp = String::from(
            "variant,split,error_pct,ratio_delta,divergence,masked_ratio,pointing_grad_cam,pointing_occlusion,config_hash\n",
        );
        for r in rs {
            let acc = |p: &Option<PointingSuite>| fmt_opt(p.map(|p| p.all.accuracy));
            cmp.push_str(&format!(
                "{},{name},{:.4},{},{:.6},{},{},{},{}\n",
                r.variant,
                r.metrics.error,
                fmt_opt(r.metrics.ratio.delta),
                r.metrics.divergence,
                fmt_opt(r.metrics.masked_ratio.value),
                acc(&r.pointing_grad_cam),
                acc(&r.pointing_occlusion),
                r.config_hash
            ));
        }
        write(out, &format!("{REPORT_DIR}/comparison.{name}.csv"), cmp.as_bytes(), &mut run)?;
        for (table, body) in [
            ("error_ratio", error_ratio_csv(&rows)),
            ("outcomes", outcome_csv(&rows)),
            ("confidence", confidence_csv(&rows)),
            ("bias_amplification", bias_amplification_csv(&rows)),
        ] {
            write(out, &format!("{REPORT_DIR}/{table}.{name}.csv"), body.as_bytes(), &mut run)?;
        }
    }
    Ok(run)
}

fn find_record<'a>(corpus: &'a Corpus, key: &str) -> Result<&'a SceneRecord> {
    corpus
        .get(key)
        .or_else(|| key.parse::<u64>().ok().and_then(|i| corpus.get(&format!("scene-{i:06}"))))
        .ok_or_else(|| Error::InvalidInput(format!("record {key:?} not found")))
}

fn method_name(m: Method) -> &'static str {
    match m {
        Method::Occlusion => "occlusion",
        Method::GradCam => "gradcam",
        Method::Random => "random",
    }
}

fn saliency(out: &Path, config: &RunConfig, a: &SaliencyArgs) -> std::result::Result<RunManifest, Failure> {
    let corpus = dataset(out, config)?;
    let mut run = RunManifest::new("saliency", config);
    run.dataset_checksum = Some(corpus.checksum());
    let v = a.variant;
    let path = a
        .checkpoint
        .clone()
        .unwrap_or_else(|| out.join(CHECKPOINT_DIR).join(format!("{v}.json")));
    let (model, id) = load_model(&path, &corpus)?;
    run.checkpoint_ids.insert(v.to_string(), id);
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let method = method_name(a.method);

    let mut explain = |r: &SceneRecord| -> Result<Option<(SaliencyMap, String)>> {
        let Some((caption, pos)) = explained_caption(&model, r, &corpus.vocab, a.source)? else {
            return Ok(None);
        };
        let map = match a.method {
            Method::Random => random_map(&mut rng),
            m => saliency_map(&model, &r.image, &caption, pos, m)?,
        };
        let word = corpus.vocab.token(caption[pos]).unwrap_or("?").to_string();
        Ok(Some((map, word)))
    };

    if let Some(key) = &a.record {
        let r = find_record(&corpus, key)?;
        let (map, word) = explain(r)?
            .ok_or_else(|| Error::InvalidInput(format!("record {} has no gendered word to explain", r.id)))?;
        let stem = format!("{HEATMAP_DIR}/{v}/{}.{method}", r.id);
        mkdir(&out.join(HEATMAP_DIR).join(v.name()))?;
        write_overlay(&map, &r.image, &out.join(format!("{stem}.png")))?;
        run.outputs.insert(format!("{stem}.png"));
        write(out, &format!("{stem}.csv"), map_csv(&map).as_bytes(), &mut run)?;
        println!("{}: target {word:?}, pointing {}", r.id, if pointing(&map, &r.mask) { "hit" } else { "miss" });
    } else {
        let mut csv = String::from("record,label,target,hit\n");
        let mut summary = PointingSuite::default();
        for r in corpus.split(a.split).filter(|r| r.label != GenderLabel::Discard) {
            let Some((map, word)) = explain(r)? else { continue };
            let hit = pointing(&map, &r.mask);
            let label = if r.label == GenderLabel::Woman {
                summary.woman.add(hit);
                "woman"
            } else {
                summary.man.add(hit);
                "man"
            };
            summary.all.add(hit);
            csv.push_str(&format!("{},{label},{word},{}\n", r.id, u8::from(hit)));
        }
        let stem = format!("{REPORT_DIR}/pointing.{v}.{method}");
        write(out, &format!("{stem}.csv"), csv.as_bytes(), &mut run)?;
        write(out, &format!("{stem}.json"), serde_json::to_string_pretty(&summary)?.as_bytes(), &mut run)?;
        println!(
            "{v} {method}: pointing woman {:.3} man {:.3} all {:.3}",
            summary.woman.accuracy, summary.man.accuracy, summary.all.accuracy
        );
    }
    Ok(run)
}
