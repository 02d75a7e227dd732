//! Gender-bias evaluation of generated captions.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{mask_person, GenderLabel, SceneImage, SceneRecord, TokenId, Vocabulary, MAX_CAPTION_LEN, OBJECTS};
use crate::error::{Error, Result};
use crate::model::Captioner;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SentenceGenderClass {
    WomanSet,
    ManSet,
    Neutral,
    Mixed,
}

pub fn classify_sentence(tokens: &[TokenId], vocab: &Vocabulary) -> SentenceGenderClass {
    let woman = tokens.iter().any(|&t| vocab.is_woman(t));
    let man = tokens.iter().any(|&t| vocab.is_man(t));
    match (woman, man) {
        (true, false) => SentenceGenderClass::WomanSet,
        (false, true) => SentenceGenderClass::ManSet,
        (true, true) => SentenceGenderClass::Mixed,
        (false, false) => SentenceGenderClass::Neutral,
    }
}

fn check_labels(n_pred: usize, labels: &[GenderLabel]) -> Result<()> {
    if n_pred != labels.len() {
        return Err(Error::InvalidInput(format!("{n_pred} predictions for {} labels", labels.len())));
    }
    if labels.is_empty() {
        return Err(Error::InvalidInput("no records to score".into()));
    }
    if labels.contains(&GenderLabel::Discard) {
        return Err(Error::InvalidInput("scored records must be labeled Man or Woman".into()));
    }
    Ok(())
}

/// Whether a prediction names the gender opposite to `label`. A mixed
/// sentence always contains the opposite word.
fn is_opposite(pred: SentenceGenderClass, label: GenderLabel) -> bool {
    matches!(
        (pred, label),
        (SentenceGenderClass::Mixed, _)
            | (SentenceGenderClass::ManSet, GenderLabel::Woman)
            | (SentenceGenderClass::WomanSet, GenderLabel::Man)
    )
}

/// Percentage of records whose prediction names the opposite gender.
pub fn error_rate(predictions: &[SentenceGenderClass], labels: &[GenderLabel]) -> Result<f64> {
    check_labels(predictions.len(), labels)?;
    let wrong = predictions.iter().zip(labels).filter(|(p, l)| is_opposite(**p, **l)).count();
    Ok(100.0 * wrong as f64 / labels.len() as f64)
}

/// A ratio of two sentence counts, undefined when the denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub numerator: usize,
    pub denominator: usize,
    pub value: Option<f64>,
}

impl Ratio {
    pub fn new(numerator: usize, denominator: usize) -> Self {
        Self {
            numerator,
            denominator,
            value: (denominator > 0).then(|| numerator as f64 / denominator as f64),
        }
    }
}

/// woman:man ratio over woman-set and man-set sentences only.
pub fn woman_man_ratio(classes: &[SentenceGenderClass]) -> Ratio {
    let w = classes.iter().filter(|c| **c == SentenceGenderClass::WomanSet).count();
    let m = classes.iter().filter(|c| **c == SentenceGenderClass::ManSet).count();
    Ratio::new(w, m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioDelta {
    pub predicted: Ratio,
    pub reference: Ratio,
    /// Predicted minus reference; `None` when either ratio is undefined.
    pub delta: Option<f64>,
}

/// Prediction woman:man ratio minus reference woman:man ratio.
pub fn ratio_delta(predictions: &[SentenceGenderClass], references: &[SentenceGenderClass]) -> RatioDelta {
    let predicted = woman_man_ratio(predictions);
    let reference = woman_man_ratio(references);
    let delta = match (predicted.value, reference.value) {
        (Some(p), Some(r)) => Some(p - r),
        _ => None,
    };
    RatioDelta {
        predicted,
        reference,
        delta,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRow {
    pub correct: f64,
    pub incorrect: f64,
    pub other: f64,
    pub count: usize,
}

impl OutcomeRow {
    pub fn fractions(&self) -> [f64; 3] {
        [self.correct / 100.0, self.incorrect / 100.0, self.other / 100.0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeTable {
    pub woman: OutcomeRow,
    pub man: OutcomeRow,
}

/// Per-gender Correct / Incorrect / Other percentages.
pub fn outcome_table(predictions: &[SentenceGenderClass], labels: &[GenderLabel]) -> Result<OutcomeTable> {
    check_labels(predictions.len(), labels)?;
    let row = |gender: GenderLabel| -> Result<OutcomeRow> {
        let (mut c, mut i, mut o) = (0usize, 0usize, 0usize);
        for (p, l) in predictions.iter().zip(labels) {
            if *l != gender {
                continue;
            }
            if is_opposite(*p, *l) {
                i += 1;
            } else if *p == SentenceGenderClass::Neutral {
                o += 1;
            } else {
                c += 1;
            }
        }
        let n = c + i + o;
        if n == 0 {
            return Err(Error::Insufficient(format!("no {gender:?} records to tabulate")));
        }
        let pct = |k: usize| 100.0 * k as f64 / n as f64;
        Ok(OutcomeRow {
            correct: pct(c),
            incorrect: pct(i),
            other: pct(o),
            count: n,
        })
    };
    Ok(OutcomeTable {
        woman: row(GenderLabel::Woman)?,
        man: row(GenderLabel::Man)?,
    })
}

/// Jensen–Shannon divergence in bits between two distributions.
pub fn jensen_shannon(p: &[f64], q: &[f64]) -> f64 {
    let kl_to_mid = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .filter(|(x, _)| **x > 0.0)
            .map(|(x, y)| x * (x / ((x + y) / 2.0)).log2())
            .sum()
    };
    (0.5 * kl_to_mid(p, q) + 0.5 * kl_to_mid(q, p)).clamp(0.0, 1.0)
}

pub fn outcome_divergence(table: &OutcomeTable) -> f64 {
    jensen_shannon(&table.woman.fractions(), &table.man.fractions())
}

/// Gendered-mention counts over one image's reference captions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MentionCounts {
    pub label: GenderLabel,
    /// Captions mentioning the labeled gender.
    pub mentions: usize,
}

impl MentionCounts {
    pub fn of(record: &SceneRecord, vocab: &Vocabulary) -> Self {
        Self {
            label: record.label,
            mentions: record.gender_mentions(vocab),
        }
    }
}

/// 3-class accuracy (%) when images with fewer than `T` mentions of their
/// gender are relabeled Neutral.
pub fn confidence_curve(
    predictions: &[SentenceGenderClass],
    mentions: &[MentionCounts],
    thresholds: &[usize],
) -> Result<Vec<(usize, f64)>> {
    if predictions.len() != mentions.len() || mentions.is_empty() {
        return Err(Error::InvalidInput("one mention count per prediction required".into()));
    }
    Ok(thresholds
        .iter()
        .map(|&t| {
            let hits = predictions
                .iter()
                .zip(mentions)
                .filter(|(p, m)| {
                    let want = if m.mentions >= t {
                        match m.label {
                            GenderLabel::Woman => SentenceGenderClass::WomanSet,
                            GenderLabel::Man => SentenceGenderClass::ManSet,
                            GenderLabel::Discard => SentenceGenderClass::Neutral,
                        }
                    } else {
                        SentenceGenderClass::Neutral
                    };
                    **p == want
                })
                .count();
            (t, 100.0 * hits as f64 / predictions.len() as f64)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectBias {
    /// count(gender word & object) / count(person word & object).
    pub man_predicted: f64,
    pub man_reference: f64,
    pub woman_predicted: f64,
    pub woman_reference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasAmplification {
    pub objects: BTreeMap<String, ObjectBias>,
    /// Objects without any person co-occurrence in predictions or references.
    pub excluded: Vec<String>,
    pub mean_abs_delta_man: f64,
    pub mean_abs_delta_woman: f64,
}

fn object_ratios(captions: &[Vec<TokenId>], object: TokenId, vocab: &Vocabulary) -> Option<(f64, f64)> {
    let (mut person, mut man, mut woman) = (0usize, 0usize, 0usize);
    for c in captions.iter().filter(|c| c.contains(&object)) {
        if c.iter().any(|&t| vocab.is_person_word(t)) {
            person += 1;
            man += usize::from(c.iter().any(|&t| vocab.is_man(t)));
            woman += usize::from(c.iter().any(|&t| vocab.is_woman(t)));
        }
    }
    (person > 0).then(|| (man as f64 / person as f64, woman as f64 / person as f64))
}

/// Per-object gender co-occurrence ratios in predictions versus references.
pub fn bias_amplification(
    predictions: &[Vec<TokenId>],
    references: &[Vec<TokenId>],
    objects: &[&str],
    vocab: &Vocabulary,
) -> Result<BiasAmplification> {
    let mut out = BTreeMap::new();
    let mut excluded = Vec::new();
    for &name in objects {
        let id = vocab
            .id(name)
            .ok_or_else(|| Error::InvalidInput(format!("object {name:?} not in vocabulary")))?;
        match (object_ratios(predictions, id, vocab), object_ratios(references, id, vocab)) {
            (Some((mp, wp)), Some((mr, wr))) => {
                out.insert(
                    name.to_string(),
                    ObjectBias {
                        man_predicted: mp,
                        man_reference: mr,
                        woman_predicted: wp,
                        woman_reference: wr,
                    },
                );
            }
            _ => excluded.push(name.to_string()),
        }
    }
    let mean = |f: fn(&ObjectBias) -> f64| {
        if out.is_empty() {
            0.0
        } else {
            out.values().map(f).sum::<f64>() / out.len() as f64
        }
    };
    Ok(BiasAmplification {
        mean_abs_delta_man: mean(|b| (b.man_predicted - b.man_reference).abs()),
        mean_abs_delta_woman: mean(|b| (b.woman_predicted - b.woman_reference).abs()),
        objects: out,
        excluded,
    })
}

/// How the gender of a masked-image caption is read off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decoding {
    /// Classify the greedy caption.
    Greedy,
    /// Decode greedily up to the first person word, then draw `samples`
    /// times between the woman and man sets in proportion to their mass.
    /// Record `i` draws from stream `i` of `seed`.
    ForcedChoice { samples: usize, seed: u64 },
}

pub const MASKED_DECODING: Decoding = Decoding::ForcedChoice { samples: 5, seed: 0 };

fn forced_choice<R: Rng>(
    model: &Captioner,
    image: &SceneImage,
    vocab: &Vocabulary,
    samples: usize,
    rng: &mut R,
) -> Result<Vec<SentenceGenderClass>> {
    let mut state = model.encode(image)?.state;
    let mut prev = vocab.bos();
    for _ in 1..MAX_CAPTION_LEN {
        let (dist, next) = model.step(prev, &state)?;
        let w = dist.argmax();
        if vocab.is_person_word(w) {
            let pw = dist.mass(vocab.woman_set());
            let pm = dist.mass(vocab.man_set());
            if !(pw + pm > 0.0) {
                return Ok(Vec::new());
            }
            return Ok((0..samples)
                .map(|_| {
                    if rng.gen::<f64>() * (pw + pm) < pw {
                        SentenceGenderClass::WomanSet
                    } else {
                        SentenceGenderClass::ManSet
                    }
                })
                .collect());
        }
        if w == vocab.eos() {
            break;
        }
        prev = w;
        state = next;
    }
    Ok(Vec::new())
}

/// man:woman sentence ratio on person-masked images.
pub fn masked_ratio(model: &Captioner, records: &[&SceneRecord], vocab: &Vocabulary, decoding: Decoding) -> Result<Ratio> {
    let mut classes = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let img = mask_person(&r.image, &r.mask)?;
        match decoding {
            Decoding::Greedy => classes.push(classify_sentence(&model.greedy_decode(&img, MAX_CAPTION_LEN)?, vocab)),
            Decoding::ForcedChoice { samples, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                classes.extend(forced_choice(model, &img, vocab, samples, &mut rng)?);
            }
        }
    }
    let w = woman_man_ratio(&classes);
    Ok(Ratio::new(w.denominator, w.numerator))
}

pub const DEFAULT_THRESHOLDS: [usize; 7] = [0, 1, 2, 3, 4, 5, 6];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dataset_checksum: String,
    pub checkpoint_id: String,
    pub split: String,
    pub records: usize,
    pub error: f64,
    pub ratio: RatioDelta,
    pub outcomes: OutcomeTable,
    pub divergence: f64,
    pub confidence_curve: Vec<(usize, f64)>,
    pub bias_amplification: BiasAmplification,
    pub masked_ratio: Ratio,
}

/// Greedy captions for every record.
pub fn decode_all(model: &Captioner, records: &[&SceneRecord]) -> Result<Vec<Vec<TokenId>>> {
    records
        .iter()
        .map(|r| model.greedy_decode(&r.image, MAX_CAPTION_LEN))
        .collect()
}

/// Full evaluation of one model on labeled records.
pub fn evaluate(
    model: &Captioner,
    records: &[&SceneRecord],
    vocab: &Vocabulary,
    split: &str,
    dataset_checksum: &str,
    checkpoint_id: &str,
) -> Result<MetricsReport> {
    let decoded = decode_all(model, records)?;
    let classes: Vec<_> = decoded.iter().map(|c| classify_sentence(c, vocab)).collect();
    let labels: Vec<_> = records.iter().map(|r| r.label).collect();
    let references: Vec<Vec<TokenId>> = records.iter().flat_map(|r| r.captions.iter().cloned()).collect();
    let ref_classes: Vec<_> = references.iter().map(|c| classify_sentence(c, vocab)).collect();
    let mentions: Vec<_> = records.iter().map(|r| MentionCounts::of(r, vocab)).collect();
    let outcomes = outcome_table(&classes, &labels)?;
    Ok(MetricsReport {
        dataset_checksum: dataset_checksum.to_string(),
        checkpoint_id: checkpoint_id.to_string(),
        split: split.to_string(),
        records: records.len(),
        error: error_rate(&classes, &labels)?,
        ratio: ratio_delta(&classes, &ref_classes),
        divergence: outcome_divergence(&outcomes),
        outcomes,
        confidence_curve: confidence_curve(&classes, &mentions, &DEFAULT_THRESHOLDS)?,
        bias_amplification: bias_amplification(&decoded, &references, &OBJECTS, vocab)?,
        masked_ratio: masked_ratio(model, records, vocab, MASKED_DECODING)?,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "undefined".into())
}

/// Error and ratio table, one row per named report.
pub fn error_ratio_csv(rows: &[(&str, &MetricsReport)]) -> String {
    let mut s = String::from("model,split,error_pct,predicted_ratio,reference_ratio,ratio_delta,masked_ratio\n");
    for (name, r) in rows {
        let _ = writeln!(
            s,
            "{name},{},{:.4},{},{},{},{}",
            r.split,
            r.error,
            opt(r.ratio.predicted.value),
            opt(r.ratio.reference.value),
            opt(r.ratio.delta),
            opt(r.masked_ratio.value)
        );
    }
    s
}

/// Outcome table with divergence, two rows per model.
pub fn outcome_csv(rows: &[(&str, &MetricsReport)]) -> String {
    let mut s = String::from("model,gender,correct_pct,incorrect_pct,other_pct,divergence\n");
    for (name, r) in rows {
        for (g, row) in [("woman", r.outcomes.woman), ("man", r.outcomes.man)] {
            let _ = writeln!(
                s,
                "{name},{g},{:.4},{:.4},{:.4},{:.6}",
                row.correct, row.incorrect, row.other, r.divergence
            );
        }
    }
    s
}

pub fn confidence_csv(rows: &[(&str, &MetricsReport)]) -> String {
    let mut s = String::from("model,threshold,accuracy_pct\n");
    for (name, r) in rows {
        for (t, a) in &r.confidence_curve {
            let _ = writeln!(s, "{name},{t},{a:.4}");
        }
    }
    s
}

pub fn bias_amplification_csv(rows: &[(&str, &MetricsReport)]) -> String {
    let mut s = String::from("model,object,man_predicted,man_reference,woman_predicted,woman_reference\n");
    for (name, r) in rows {
        for (o, b) in &r.bias_amplification.objects {
            let _ = writeln!(
                s,
                "{name},{o},{:.6},{:.6},{:.6},{:.6}",
                b.man_predicted, b.man_reference, b.woman_predicted, b.woman_reference
            );
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::GenderSetMode;
    use proptest::prelude::*;
    use SentenceGenderClass::*;

    fn v() -> Vocabulary {
        Vocabulary::scene(GenderSetMode::Singleton)
    }

    fn enc(v: &Vocabulary, s: &str) -> Vec<TokenId> {
        v.caption(&s.split_whitespace().collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn classify_examples() {
        let v = v();
        assert_eq!(classify_sentence(&enc(&v, "a woman riding a snowboard"), &v), WomanSet);
        assert_eq!(classify_sentence(&enc(&v, "a person riding a snowboard"), &v), Neutral);
        assert_eq!(classify_sentence(&enc(&v, "a man and woman"), &v), Mixed);
        let m = Vocabulary::scene(GenderSetMode::MultiWord);
        assert_eq!(classify_sentence(&enc(&m, "a girl with a dog"), &m), WomanSet);
    }

    #[test]
    fn error_rate_examples() {
        let labels = vec![GenderLabel::Man; 50];
        assert_eq!(error_rate(&vec![Neutral; 50], &labels).unwrap(), 0.0);
        let mut p = vec![ManSet; 50];
        p[7] = WomanSet;
        assert_eq!(error_rate(&p, &labels).unwrap(), 2.0);
        assert!(error_rate(&[], &[]).is_err());
    }

    #[test]
    fn ratio_delta_examples() {
        let build = |w, m| {
            let mut c = vec![WomanSet; w];
            c.extend(vec![ManSet; m]);
            c
        };
        let r = ratio_delta(&build(30, 60), &build(25, 75));
        assert!((r.delta.unwrap() - (0.5 - 1.0 / 3.0)).abs() < 1e-12);
        assert_eq!(ratio_delta(&build(4, 7), &build(4, 7)).delta, Some(0.0));
        let u = ratio_delta(&build(3, 0), &build(1, 1));
        assert_eq!(u.delta, None);
        assert_eq!((u.predicted.numerator, u.predicted.denominator), (3, 0));
    }

    #[test]
    fn outcome_table_boundaries() {
        let labels = [GenderLabel::Woman, GenderLabel::Man, GenderLabel::Woman];
        let perfect = outcome_table(&[WomanSet, ManSet, WomanSet], &labels).unwrap();
        assert_eq!((perfect.woman.correct, perfect.man.correct), (100.0, 100.0));
        let neutral = outcome_table(&[Neutral; 3], &labels).unwrap();
        assert_eq!((neutral.woman.other, neutral.man.other), (100.0, 100.0));
        assert!(outcome_table(&[Neutral], &[GenderLabel::Man]).is_err());
    }

    #[test]
    fn jsd_bounds() {
        let p = [0.5738, 0.1299, 0.2963];
        assert_eq!(jensen_shannon(&p, &p), 0.0);
        assert!((jensen_shannon(&[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn confidence_curve_boundaries() {
        let mentions: Vec<_> = (0..6)
            .map(|k| MentionCounts {
                label: if k % 2 == 0 { GenderLabel::Man } else { GenderLabel::Woman },
                mentions: k,
            })
            .collect();
        let preds = vec![Neutral; 6];
        let curve = confidence_curve(&preds, &mentions, &DEFAULT_THRESHOLDS).unwrap();
        assert_eq!(curve[0], (0, 0.0));
        assert_eq!(curve[6], (6, 100.0));
        assert!(curve.windows(2).all(|w| w[0].1 <= w[1].1));
    }

    #[test]
    fn bias_amplification_hand_count() {
        let v = v();
        let refs = vec![
            enc(&v, "a man riding a snowboard"),
            enc(&v, "a man riding a snowboard"),
            enc(&v, "a man riding a snowboard"),
            enc(&v, "a woman riding a snowboard"),
        ];
        let b = bias_amplification(&refs, &refs, &["snowboard", "kitchen"], &v).unwrap();
        let s = b.objects["snowboard"];
        assert_eq!(s.man_reference, 0.75);
        assert_eq!(s.woman_reference, 0.25);
        assert_eq!(b.mean_abs_delta_man, 0.0);
        assert_eq!(b.excluded, vec!["kitchen".to_string()]);
    }

    #[test]
    fn image_independent_model_masked_ratio_is_its_output_ratio() {
        let v = v();
        let corpus = crate::dataset::generate_corpus(&Default::default(), 6).unwrap();
        let mut m = Captioner::for_vocab(&v, 0);
        // encoder output ignored: zero the initial-state projection
        m.params.init_w.data.fill(0.0);
        let recs: Vec<&SceneRecord> = corpus.records.iter().collect();
        let first = classify_sentence(&m.greedy_decode(&recs[0].image, MAX_CAPTION_LEN).unwrap(), &v);
        let r = masked_ratio(&m, &recs, &v, Decoding::Greedy).unwrap();
        match first {
            WomanSet => assert_eq!((r.numerator, r.denominator), (0, 6)),
            ManSet => assert_eq!((r.numerator, r.denominator), (6, 0)),
            _ => assert_eq!((r.numerator, r.denominator), (0, 0)),
        }
    }

    fn class() -> impl Strategy<Value = SentenceGenderClass> {
        prop_oneof![Just(WomanSet), Just(ManSet), Just(Neutral), Just(Mixed)]
    }

    fn label() -> impl Strategy<Value = GenderLabel> {
        prop_oneof![Just(GenderLabel::Woman), Just(GenderLabel::Man)]
    }

    proptest! {
        #[test]
        fn rows_sum_to_100(data in prop::collection::vec((class(), label()), 1..80)) {
            let (p, l): (Vec<_>, Vec<_>) = data.into_iter().unzip();
            if let Ok(t) = outcome_table(&p, &l) {
                for row in [t.woman, t.man] {
                    prop_assert!((row.correct + row.incorrect + row.other - 100.0).abs() < 0.01);
                }
                let d = outcome_divergence(&t);
                prop_assert!((0.0..=1.0).contains(&d));
                let swapped = OutcomeTable { woman: t.man, man: t.woman };
                prop_assert_eq!(d, outcome_divergence(&swapped));
                prop_assert_eq!(d == 0.0, t.woman.fractions() == t.man.fractions());
            }
            let e = error_rate(&p, &l).unwrap();
            prop_assert!((0.0..=100.0).contains(&e));
        }

        #[test]
        fn classification_ignores_order_and_duplicates(mut toks in prop::collection::vec(0usize..27, 0..10), extra in 0usize..10) {
            let v = v();
            let base = classify_sentence(&toks, &v);
            if let Some(&t) = toks.get(extra % toks.len().max(1)) {
                toks.push(t);
            }
            toks.reverse();
            prop_assert_eq!(classify_sentence(&toks, &v), base);
        }
    }
}
