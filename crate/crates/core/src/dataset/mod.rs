//! Synthetic biased caption corpora with person masks.

mod io;
pub mod render;
mod splits;
pub mod vocab;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
pub use io::{load_dataset, read_meta, save_dataset, DatasetMeta};
pub use render::{ObjectPlacement, Rect, RenderStyle, CELL};
pub use splits::{make_splits, SplitSizes};
pub use vocab::{GenderSetMode, TokenId, Vocabulary, OBJECTS};

pub const IMAGE_SIZE: usize = 64;
pub const CAPTIONS_PER_IMAGE: usize = 5;
pub const MAX_CAPTION_LEN: usize = 8;

/// H×W×3 image, row-major, channel-last, values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct SceneImage {
    pixels: Vec<f64>,
}

impl SceneImage {
    pub const LEN: usize = IMAGE_SIZE * IMAGE_SIZE * 3;

    pub fn from_raw(pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != Self::LEN {
            return Err(Error::InvalidInput(format!(
                "image needs {} values, got {}",
                Self::LEN,
                pixels.len()
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidInput(format!("pixel value {v} outside [0,1]")));
        }
        Ok(Self { pixels })
    }

    pub fn constant(value: [f64; 3]) -> Self {
        let mut pixels = Vec::with_capacity(Self::LEN);
        for _ in 0..IMAGE_SIZE * IMAGE_SIZE {
            pixels.extend_from_slice(&value);
        }
        Self { pixels }
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.pixels[(y * IMAGE_SIZE + x) * 3 + c]
    }

    pub fn channel_means(&self) -> [f64; 3] {
        let mut sum = [0.0; 3];
        for px in self.pixels.chunks_exact(3) {
            for c in 0..3 {
                sum[c] += px[c];
            }
        }
        sum.map(|s| s / (IMAGE_SIZE * IMAGE_SIZE) as f64)
    }

    /// Copy with the pixels of `rect` set to zero.
    pub fn with_zeroed(&self, rect: Rect) -> Self {
        let mut out = self.clone();
        for y in rect.y..(rect.y + rect.h).min(IMAGE_SIZE) {
            for x in rect.x..(rect.x + rect.w).min(IMAGE_SIZE) {
                let i = (y * IMAGE_SIZE + x) * 3;
                out.pixels[i..i + 3].fill(0.0);
            }
        }
        out
    }

    pub(crate) fn to_bytes(&self) -> Vec<u8> {
        self.pixels.iter().map(|v| (v * 255.0).round() as u8).collect()
    }

    pub(crate) fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_raw(bytes.iter().map(|&b| b as f64 / 255.0).collect())
    }
}

/// Binary H×W mask: `true` (1) marks background that must not drive the
/// gender decision, `false` (0) marks person pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonMask {
    background: Vec<bool>,
}

impl PersonMask {
    pub fn from_background(background: Vec<bool>) -> Result<Self> {
        if background.len() != IMAGE_SIZE * IMAGE_SIZE {
            return Err(Error::InvalidInput(format!(
                "mask needs {} values, got {}",
                IMAGE_SIZE * IMAGE_SIZE,
                background.len()
            )));
        }
        Ok(Self { background })
    }

    pub(crate) fn from_person(person: Vec<bool>) -> Self {
        Self {
            background: person.into_iter().map(|p| !p).collect(),
        }
    }

    /// All ones: nothing is person.
    pub fn all_background() -> Self {
        Self {
            background: vec![true; IMAGE_SIZE * IMAGE_SIZE],
        }
    }

    pub fn is_person(&self, x: usize, y: usize) -> bool {
        !self.background[y * IMAGE_SIZE + x]
    }

    /// Mask value M at a pixel (1.0 background, 0.0 person).
    pub fn value(&self, x: usize, y: usize) -> f64 {
        if self.background[y * IMAGE_SIZE + x] {
            1.0
        } else {
            0.0
        }
    }

    pub fn person_pixels(&self) -> usize {
        self.background.iter().filter(|b| !**b).count()
    }

    pub fn person_fraction(&self) -> f64 {
        self.person_pixels() as f64 / self.background.len() as f64
    }

    /// 4-connectivity check of the person region.
    pub fn is_connected(&self) -> bool {
        let Some(start) = self.background.iter().position(|b| !b) else {
            return false;
        };
        let mut seen = vec![false; self.background.len()];
        let mut stack = vec![start];
        seen[start] = true;
        let mut count = 0;
        while let Some(i) = stack.pop() {
            count += 1;
            let (x, y) = (i % IMAGE_SIZE, i / IMAGE_SIZE);
            let mut push = |nx: usize, ny: usize| {
                let j = ny * IMAGE_SIZE + nx;
                if !self.background[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                push(x - 1, y);
            }
            if x + 1 < IMAGE_SIZE {
                push(x + 1, y);
            }
            if y > 0 {
                push(x, y - 1);
            }
            if y + 1 < IMAGE_SIZE {
                push(x, y + 1);
            }
        }
        count == self.person_pixels()
    }

    pub(crate) fn to_bytes(&self) -> Vec<u8> {
        self.background.iter().map(|&b| if b { 255 } else { 0 }).collect()
    }

    pub(crate) fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let background = bytes
            .iter()
            .map(|&b| match b {
                255 => Ok(true),
                0 => Ok(false),
                other => Err(Error::InvalidInput(format!("mask byte {other} is neither 0 nor 255"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_background(background)
    }
}

/// Gender evidence actually drawn into the scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Evidence {
    Woman,
    Man,
    Occluded,
}

/// Image label mined from the five reference captions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenderLabel {
    Man,
    Woman,
    Discard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    TestBias,
    TestBalanced,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test-bias" | "bias" => Ok(Split::TestBias),
            "test-balanced" | "balanced" => Ok(Split::TestBalanced),
            other => Err(Error::InvalidInput(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneRecord {
    pub id: String,
    pub image: SceneImage,
    pub mask: PersonMask,
    pub captions: Vec<Vec<TokenId>>,
    pub true_evidence: Evidence,
    pub objects: Vec<ObjectPlacement>,
    pub glyph_cell: Option<(usize, usize)>,
    pub label: GenderLabel,
    pub split: Option<Split>,
}

impl SceneRecord {
    pub fn context_objects(&self) -> impl Iterator<Item = &str> {
        self.objects.iter().map(|o| o.name.as_str())
    }

    /// Number of captions mentioning the label's gender.
    pub fn gender_mentions(&self, vocab: &Vocabulary) -> usize {
        let hit: fn(&Vocabulary, TokenId) -> bool = match self.label {
            GenderLabel::Woman => Vocabulary::is_woman,
            GenderLabel::Man => Vocabulary::is_man,
            GenderLabel::Discard => return 0,
        };
        self.captions
            .iter()
            .filter(|c| c.iter().any(|&t| hit(vocab, t)))
            .count()
    }

    /// Index of the first gendered token in caption `k`, if any.
    pub fn gendered_position(&self, k: usize, vocab: &Vocabulary) -> Option<usize> {
        self.captions[k].iter().position(|&t| vocab.is_gendered(t))
    }
}

/// Per-object co-occurrence probabilities given the evidence gender.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectRates {
    pub man: f64,
    pub woman: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BiasConfig {
    pub woman_fraction: f64,
    pub cooccurrence: BTreeMap<String, ObjectRates>,
    pub evidence_occlusion_prob: f64,
    pub annotator_mention_prob: f64,
    pub seed: u64,
    pub gender_sets: GenderSetMode,
    pub style: RenderStyle,
}

impl Default for BiasConfig {
    fn default() -> Self {
        let rates = |man, woman| ObjectRates { man, woman };
        let cooccurrence = [
            ("snowboard", rates(0.45, 0.05)),
            ("motorcycle", rates(0.45, 0.05)),
            ("umbrella", rates(0.05, 0.45)),
            ("kitchen", rates(0.05, 0.45)),
            ("dog", rates(0.25, 0.25)),
            ("laptop", rates(0.25, 0.25)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        Self {
            woman_fraction: 0.25,
            cooccurrence,
            evidence_occlusion_prob: 0.1,
            annotator_mention_prob: 0.7,
            seed: 0,
            gender_sets: GenderSetMode::Singleton,
            style: RenderStyle::default(),
        }
    }
}

impl BiasConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {p} is not a probability")))
            }
        };
        if !(self.woman_fraction > 0.0 && self.woman_fraction < 1.0) {
            return Err(Error::Config(format!(
                "woman_fraction = {} must lie in (0, 1)",
                self.woman_fraction
            )));
        }
        prob("evidence_occlusion_prob", self.evidence_occlusion_prob)?;
        prob("annotator_mention_prob", self.annotator_mention_prob)?;
        prob("style.hidden_glyph_prob", self.style.hidden_glyph_prob)?;
        if !(self.style.noise >= 0.0 && self.style.glyph_contrast.is_finite()) {
            return Err(Error::Config("style.noise must be non-negative and glyph_contrast finite".into()));
        }
        for (name, r) in &self.cooccurrence {
            if !OBJECTS.contains(&name.as_str()) {
                return Err(Error::Config(format!("unknown context object {name:?}")));
            }
            prob(&format!("cooccurrence.{name}.man"), r.man)?;
            prob(&format!("cooccurrence.{name}.woman"), r.woman)?;
        }
        Ok(())
    }

    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary::scene(self.gender_sets)
    }
}

fn verb_for(object: &str) -> &'static str {
    match object {
        "snowboard" | "motorcycle" => "riding",
        "umbrella" => "holding",
        "kitchen" => "in",
        "dog" => "with",
        _ => "using",
    }
}

/// Caption words (without BOS/EOS) for one annotator.
fn template<'a>(person: &'a str, objects: &[&'a str]) -> Vec<&'a str> {
    match objects {
        [] => vec!["a", person, "is", "standing"],
        [o] => vec!["a", person, verb_for(o), "a", o],
        [a, b, ..] => vec!["a", person, "near", a, "and", b],
    }
}

/// Generates scene `index` of the corpus described by `config`.
///
/// Each scene draws from its own ChaCha stream, so the output depends only
/// on `(config, index)`.
pub fn generate_scene(config: &BiasConfig, vocab: &Vocabulary, index: u64) -> SceneRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index);
    generate_with_rng(config, vocab, &mut rng, format!("scene-{index:06}"))
}

fn generate_with_rng<R: Rng>(config: &BiasConfig, vocab: &Vocabulary, rng: &mut R, id: String) -> SceneRecord {
    let gender = if rng.gen::<f64>() < config.woman_fraction {
        Evidence::Woman
    } else {
        Evidence::Man
    };
    let occluded = rng.gen::<f64>() < config.evidence_occlusion_prob;

    let mut objects: Vec<&str> = config
        .cooccurrence
        .iter()
        .filter(|(_, r)| {
            let p = if gender == Evidence::Woman { r.woman } else { r.man };
            rng.gen::<f64>() < p
        })
        .map(|(k, _)| k.as_str())
        .collect();
    objects.shuffle(rng);
    objects.truncate(2);

    let rendered = render::render(rng, &config.style, gender, occluded, &objects);
    let true_evidence = if occluded { Evidence::Occluded } else { gender };

    let gendered_words: Vec<&str> = match gender {
        Evidence::Woman => vocab.woman_set().iter().filter_map(|&i| vocab.token(i)).collect(),
        _ => vocab.man_set().iter().filter_map(|&i| vocab.token(i)).collect(),
    };
    let neutral_words: Vec<&str> = vocab.neutral_set().iter().filter_map(|&i| vocab.token(i)).collect();
    let captions = (0..CAPTIONS_PER_IMAGE)
        .map(|_| {
            let person = if !occluded && rng.gen::<f64>() < config.annotator_mention_prob {
                *gendered_words.choose(rng).expect("gender set non-empty")
            } else {
                *neutral_words.choose(rng).expect("neutral set non-empty")
            };
            let mut order = objects.clone();
            order.shuffle(rng);
            vocab
                .caption(&template(person, &order))
                .expect("template words are in the vocabulary")
        })
        .collect::<Vec<_>>();
    let label = derive_gender_label(&captions, vocab);

    SceneRecord {
        id,
        image: rendered.image,
        mask: rendered.mask,
        captions,
        true_evidence,
        objects: rendered.objects,
        glyph_cell: rendered.glyph_cell,
        label,
        split: None,
    }
}

/// Generates `n` scenes.
pub fn generate_corpus(config: &BiasConfig, n: usize) -> Result<Corpus> {
    config.validate()?;
    let vocab = config.vocabulary();
    let records = (0..n as u64).map(|i| generate_scene(config, &vocab, i)).collect();
    Ok(Corpus {
        vocab,
        config: Some(config.clone()),
        records,
    })
}

/// Man if some caption uses a man-set word and none a woman-set word;
/// Woman symmetrically; otherwise Discard.
pub fn derive_gender_label(captions: &[Vec<TokenId>], vocab: &Vocabulary) -> GenderLabel {
    let any = |pred: fn(&Vocabulary, TokenId) -> bool| captions.iter().flatten().any(|&t| pred(vocab, t));
    match (any(Vocabulary::is_woman), any(Vocabulary::is_man)) {
        (true, false) => GenderLabel::Woman,
        (false, true) => GenderLabel::Man,
        _ => GenderLabel::Discard,
    }
}

/// I' = I ⊙ M + (1 − M)·μ with μ the per-channel mean of I.
pub fn mask_person(image: &SceneImage, mask: &PersonMask) -> Result<SceneImage> {
    if image.pixels.len() != mask.background.len() * 3 {
        return Err(Error::InvalidInput("image and mask shapes differ".into()));
    }
    let mean = image.channel_means();
    let pixels = image
        .pixels
        .chunks_exact(3)
        .zip(&mask.background)
        .flat_map(|(px, &bg)| {
            let m = if bg { 1.0 } else { 0.0 };
            [0, 1, 2].map(|c| px[c] * m + (1.0 - m) * mean[c])
        })
        .collect();
    Ok(SceneImage { pixels })
}

/// A vocabulary plus its records.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub vocab: Vocabulary,
    pub config: Option<BiasConfig>,
    pub records: Vec<SceneRecord>,
}

impl Corpus {
    /// SHA-256 over the manifest lines and raw pixel bytes of every record.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.vocab.fingerprint().as_bytes());
        for r in &self.records {
            let line = io::manifest_line(r, &self.vocab);
            h.update(serde_json::to_vec(&line).expect("manifest line serializes"));
            h.update(b"\n");
            h.update(r.image.to_bytes());
            h.update(r.mask.to_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &SceneRecord> {
        self.records.iter().filter(move |r| r.split == Some(split))
    }

    pub fn get(&self, id: &str) -> Option<&SceneRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Drops Discard records.
    pub fn labeled(mut self) -> Self {
        self.records.retain(|r| r.label != GenderLabel::Discard);
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::scene(GenderSetMode::Singleton)
    }

    fn caps(v: &Vocabulary, persons: &[&str]) -> Vec<Vec<TokenId>> {
        persons
            .iter()
            .map(|p| v.caption(&["a", p, "is", "standing"]).unwrap())
            .collect()
    }

    #[test]
    fn label_rule() {
        let v = vocab();
        assert_eq!(
            derive_gender_label(&caps(&v, &["man", "person", "person", "person", "person"]), &v),
            GenderLabel::Man
        );
        assert_eq!(
            derive_gender_label(&caps(&v, &["woman", "woman", "person", "person", "person"]), &v),
            GenderLabel::Woman
        );
        assert_eq!(
            derive_gender_label(&caps(&v, &["man", "woman", "person", "person", "person"]), &v),
            GenderLabel::Discard
        );
        assert_eq!(derive_gender_label(&caps(&v, &["person"; 5]), &v), GenderLabel::Discard);
    }

    #[test]
    fn full_occlusion_gives_neutral_captions() {
        let cfg = BiasConfig {
            evidence_occlusion_prob: 1.0,
            seed: 11,
            ..Default::default()
        };
        let c = generate_corpus(&cfg, 60).unwrap();
        for r in &c.records {
            assert_eq!(r.true_evidence, Evidence::Occluded);
            assert!(r.glyph_cell.is_none());
            assert!(r.captions.iter().flatten().all(|&t| !c.vocab.is_gendered(t)));
            assert_eq!(r.label, GenderLabel::Discard);
        }
    }

    #[test]
    fn woman_fraction_is_respected() {
        let cfg = BiasConfig {
            seed: 5,
            ..Default::default()
        };
        let c = generate_corpus(&cfg, 4000).unwrap();
        let count = |e| c.records.iter().filter(|r| r.true_evidence == e).count();
        let (w, m) = (count(Evidence::Woman), count(Evidence::Man));
        let frac = w as f64 / (w + m) as f64;
        assert!((frac - 0.25).abs() <= 0.03, "woman fraction {frac}");
    }

    #[test]
    fn generated_records_are_well_formed() {
        let cfg = BiasConfig {
            seed: 2,
            ..Default::default()
        };
        let c = generate_corpus(&cfg, 200).unwrap();
        for r in &c.records {
            assert_eq!(r.captions.len(), CAPTIONS_PER_IMAGE);
            for cap in &r.captions {
                assert_eq!(cap[0], c.vocab.bos());
                assert_eq!(*cap.last().unwrap(), c.vocab.eos());
                assert!(cap.len() <= MAX_CAPTION_LEN);
                for &t in cap {
                    if let Some(word) = c.vocab.token(t).filter(|w| OBJECTS.contains(w)) {
                        assert!(r.context_objects().any(|o| o == word));
                    }
                }
            }
            assert!(r.mask.is_connected());
            assert_eq!(r.label, derive_gender_label(&r.captions, &c.vocab));
        }
    }

    #[test]
    fn mention_prob_one_makes_labels_match_evidence() {
        let cfg = BiasConfig {
            annotator_mention_prob: 1.0,
            seed: 9,
            ..Default::default()
        };
        let c = generate_corpus(&cfg, 200).unwrap();
        for r in c.records.iter().filter(|r| r.label != GenderLabel::Discard) {
            let expected = match r.true_evidence {
                Evidence::Woman => GenderLabel::Woman,
                Evidence::Man => GenderLabel::Man,
                Evidence::Occluded => unreachable!("occluded scenes carry no gendered caption"),
            };
            assert_eq!(r.label, expected);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = BiasConfig {
            seed: 77,
            ..Default::default()
        };
        let a = generate_corpus(&cfg, 30).unwrap();
        let b = generate_corpus(&cfg, 30).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.checksum(), b.checksum());
        let other = generate_corpus(&BiasConfig { seed: 78, ..cfg }, 30).unwrap();
        assert_ne!(a.checksum(), other.checksum());
    }

    #[test]
    fn identity_mask_and_constant_image_fixed_points() {
        let c = generate_corpus(&BiasConfig::default(), 3).unwrap();
        let img = &c.records[0].image;
        assert_eq!(&mask_person(img, &PersonMask::all_background()).unwrap(), img);
        let constant = SceneImage::constant([0.2, 0.4, 0.6]);
        let out = mask_person(&constant, &c.records[1].mask).unwrap();
        for (a, b) in out.pixels().iter().zip(constant.pixels()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn person_region_replaced_by_channel_means() {
        let c = generate_corpus(&BiasConfig::default(), 1).unwrap();
        let r = &c.records[0];
        // brute-force channel means
        let mut mean = [0.0f64; 3];
        for y in 0..IMAGE_SIZE {
            for x in 0..IMAGE_SIZE {
                for (ch, m) in mean.iter_mut().enumerate() {
                    *m += r.image.get(x, y, ch);
                }
            }
        }
        let mean = mean.map(|m| m / 4096.0);
        let out = mask_person(&r.image, &r.mask).unwrap();
        for y in 0..IMAGE_SIZE {
            for x in 0..IMAGE_SIZE {
                for ch in 0..3 {
                    let want = if r.mask.is_person(x, y) { mean[ch] } else { r.image.get(x, y, ch) };
                    assert!((out.get(x, y, ch) - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn image_shape_is_enforced() {
        assert!(SceneImage::from_raw(vec![0.0; 10]).is_err());
        assert!(SceneImage::from_raw(vec![1.5; SceneImage::LEN]).is_err());
        assert!(PersonMask::from_background(vec![true; 3]).is_err());
    }
}
