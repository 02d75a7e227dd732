//! The shipped 16-record corpus under `tests/data/golden` and the claims
//! measured on models trained on it.

use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use equalizer::dataset::{
    generate_corpus, load_dataset, make_splits, save_dataset, BiasConfig, Corpus, GenderLabel, RenderStyle,
    SceneRecord, SplitSizes, Vocabulary, MAX_CAPTION_LEN, OBJECTS,
};
use equalizer::metrics::{masked_ratio, MASKED_DECODING};
use equalizer::model::{Captioner, Checkpoint};
use equalizer::saliency::{
    explained_caption, grad_cam, object_pointing, occlusion_saliency, pointing_suite, CaptionSource, Method,
};
use equalizer::training::{
    nonincreasing_violations, run_suite, ExperimentConfig, OptimizerConfig, SuiteManifest, TrainingLogRecord, Variant,
};

const GOLDEN_CHECKSUM: &str = "e7c444f272e8eea9f70aedb65606844f34990f3bb127d5fa61fea4b0c1701fcd";

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/golden")
}

fn golden_config() -> BiasConfig {
    BiasConfig {
        seed: 16,
        woman_fraction: 0.5,
        evidence_occlusion_prob: 0.0,
        annotator_mention_prob: 0.7,
        style: RenderStyle {
            glyph_contrast: 0.22,
            noise: 0.06,
            hidden_glyph_prob: 0.0,
        },
        ..Default::default()
    }
}

/// First five women and eleven men, all in the training split. The skew
/// gives the baseline a gender prior to fall back on when the person is masked.
fn build_golden() -> Corpus {
    let mut c = generate_corpus(&golden_config(), 48).unwrap().labeled();
    let (mut w, mut m) = (0, 0);
    c.records.retain(|r| {
        let (slot, cap) = if r.label == GenderLabel::Woman { (&mut w, 5) } else { (&mut m, 11) };
        *slot += 1;
        *slot <= cap
    });
    assert_eq!(c.records.len(), 16);
    make_splits(&mut c, SplitSizes { balanced_per_label: 0, test_bias: 0, train: None }, 16).unwrap();
    c
}

#[test]
#[ignore = "rewrites the committed corpus"]
fn write_golden_corpus() {
    let dir = golden_dir();
    let _ = std::fs::remove_dir_all(&dir);
    println!("{}", save_dataset(&build_golden(), &dir).unwrap());
}

#[test]
fn golden_corpus_loads_with_committed_checksum() {
    let c = load_dataset(&golden_dir()).unwrap();
    assert_eq!(c.records.len(), 16);
    assert_eq!(c.checksum(), GOLDEN_CHECKSUM);
}

#[test]
fn golden_corpus_regenerates_identically() {
    assert_eq!(build_golden().checksum(), GOLDEN_CHECKSUM);
}

struct Trained {
    corpus: Corpus,
    manifest: SuiteManifest,
    elapsed: Duration,
    baseline_log: Vec<TrainingLogRecord>,
    baseline: Captioner,
    equalizer: Captioner,
}

/// All six variants, 2000 steps each, trained once per test binary.
fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let corpus = load_dataset(&golden_dir()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let base = ExperimentConfig {
            seed: 1,
            optimizer: OptimizerConfig {
                learning_rate: 0.3,
                iterations: 2000,
                batch_size: 8,
                clip_norm: Some(2.0),
            },
            ..Default::default()
        };
        let start = Instant::now();
        let manifest = run_suite(&base, &corpus, &Variant::ALL, dir.path()).unwrap();
        let elapsed = start.elapsed();
        let load = |v: Variant| {
            let e = manifest.entry(v).unwrap();
            let ck = Checkpoint::load(&dir.path().join(e.checkpoint.as_ref().unwrap()), &corpus.vocab.fingerprint());
            Captioner::from_checkpoint(ck.unwrap())
        };
        let log_path = dir.path().join(manifest.entry(Variant::BaselineFt).unwrap().log.as_ref().unwrap());
        let baseline_log = std::fs::read_to_string(log_path)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        Trained {
            baseline: load(Variant::BaselineFt),
            equalizer: load(Variant::Equalizer),
            baseline_log,
            manifest,
            elapsed,
            corpus,
        }
    })
}

fn records(t: &Trained) -> Vec<&SceneRecord> {
    t.corpus.records.iter().collect()
}

#[test]
fn suite_fits_the_time_budget() {
    let t = trained();
    assert!(t.manifest.entries.iter().all(|e| e.error.is_none()));
    assert!(t.elapsed < Duration::from_secs(600), "{:?}", t.elapsed);
}

#[test]
fn baseline_overfits_golden_corpus() {
    let t = trained();
    let s = t.manifest.entry(Variant::BaselineFt).unwrap().summary.as_ref().unwrap();
    assert!(s.final_ce_per_token < 0.5, "{}", s.final_ce_per_token);
    assert!(nonincreasing_violations(&t.baseline_log, 200).is_empty());
}

/// Independent checker for the three caption templates.
fn grammatical(words: &[String]) -> bool {
    let person = |w: &str| ["woman", "man", "girl", "boy", "lady", "guy", "person"].contains(&w);
    let object = |w: &str| OBJECTS.contains(&w);
    let verb = |o: &str| match o {
        "snowboard" | "motorcycle" => "riding",
        "umbrella" => "holding",
        "kitchen" => "in",
        "dog" => "with",
        _ => "using",
    };
    let w: Vec<&str> = words.iter().map(String::as_str).collect();
    match w.as_slice() {
        ["<bos>", "a", p, "is", "standing", "<eos>"] => person(p),
        ["<bos>", "a", p, v, "a", o, "<eos>"] => person(p) && object(o) && *v == verb(o),
        ["<bos>", "a", p, "near", a, "and", b, "<eos>"] => person(p) && object(a) && object(b) && a != b,
        _ => false,
    }
}

fn grammatical_fraction(model: &Captioner, records: &[&SceneRecord], vocab: &Vocabulary) -> f64 {
    let ok = records
        .iter()
        .filter(|r| grammatical(&vocab.decode(&model.greedy_decode(&r.image, MAX_CAPTION_LEN).unwrap())))
        .count();
    ok as f64 / records.len() as f64
}

#[test]
fn grammar_checker_accepts_every_reference_caption() {
    let c = load_dataset(&golden_dir()).unwrap();
    for r in &c.records {
        for cap in &r.captions {
            assert!(grammatical(&c.vocab.decode(cap)), "{:?}", c.vocab.decode(cap));
        }
    }
    assert!(!grammatical(&["<bos>", "a", "man", "riding", "a", "kitchen", "<eos>"].map(String::from)));
}

#[test]
fn trained_models_decode_grammatical_captions() {
    let t = trained();
    let rs = records(t);
    for (name, m) in [("baseline", &t.baseline), ("equalizer", &t.equalizer)] {
        let f = grammatical_fraction(m, &rs, &t.corpus.vocab);
        assert!(f >= 0.9, "{name}: {f}");
    }
}

/// Not met by the shipped models: the occlusion peak usually lands on the
/// head or torso cell next to the glyph, with the glyph a close second.
#[test]
#[ignore = "claim not attained; run with --ignored to see the measured count"]
fn occluding_the_glyph_costs_the_most() {
    let t = trained();
    let (mut strict, mut total) = (0, 0);
    for r in records(t) {
        let Some((cap, pos)) = explained_caption(&t.equalizer, r, &t.corpus.vocab, CaptionSource::GroundTruth).unwrap()
        else {
            continue;
        };
        let (gx, gy) = r.glyph_cell.expect("golden glyphs are visible");
        let map = occlusion_saliency(&t.equalizer, &r.image, &cap, pos, 8).unwrap();
        let g = map.get(gx, gy);
        let others_below = (0..8)
            .flat_map(|y| (0..8).map(move |x| (x, y)))
            .filter(|&c| c != (gx, gy))
            .all(|(x, y)| map.get(x, y) < g);
        total += 1;
        strict += usize::from(others_below);
    }
    assert!(strict as f64 >= 0.8 * total as f64, "{strict}/{total}");
}

#[test]
fn grad_cam_agrees_with_occlusion() {
    let t = trained();
    let (mut agree, mut total) = (0, 0);
    for r in records(t) {
        let Some((cap, pos)) = explained_caption(&t.equalizer, r, &t.corpus.vocab, CaptionSource::GroundTruth).unwrap()
        else {
            continue;
        };
        let g = grad_cam(&t.equalizer, &r.image, &cap, pos).unwrap();
        let o = occlusion_saliency(&t.equalizer, &r.image, &cap, pos, 8).unwrap();
        total += 1;
        agree += usize::from(g.argmax_cell() == o.argmax_cell());
    }
    assert!(agree as f64 >= 0.6 * total as f64, "{agree}/{total}");
}

#[test]
fn equalizer_points_at_the_person_more_often() {
    let t = trained();
    let rs = records(t);
    for method in [Method::GradCam, Method::Occlusion] {
        let p = |m| pointing_suite(m, &rs, &t.corpus.vocab, method, CaptionSource::GroundTruth).unwrap().all;
        let (b, e) = (p(&t.baseline), p(&t.equalizer));
        assert_eq!(b.hits + b.misses, 16);
        assert!(e.accuracy >= b.accuracy + 0.10, "{method:?}: baseline {} equalizer {}", b.accuracy, e.accuracy);
    }
}

#[test]
fn equalizer_object_pointing_gap_is_no_larger() {
    let t = trained();
    let rs = records(t);
    let d = |m| {
        object_pointing(m, &rs, &t.corpus.vocab, &OBJECTS, Method::GradCam)
            .unwrap()
            .mean_delta
    };
    let (b, e) = (d(&t.baseline), d(&t.equalizer));
    assert!(e <= b, "baseline {b} equalizer {e}");
}

#[test]
fn equalizer_masked_ratio_is_closer_to_parity() {
    let t = trained();
    let rs = records(t);
    let dist = |m| {
        masked_ratio(m, &rs, &t.corpus.vocab, MASKED_DECODING)
            .unwrap()
            .value
            .map_or(f64::INFINITY, |v| (v - 1.0).abs())
    };
    let (b, e) = (dist(&t.baseline), dist(&t.equalizer));
    assert!(e < b, "baseline {b} equalizer {e}");
}
