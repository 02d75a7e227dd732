use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, GenderLabel, Split};
use crate::error::{Error, Result};

/// Requested split sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSizes {
    /// Records per label in the 1:1 test split.
    pub balanced_per_label: usize,
    /// Size of the biased test split.
    pub test_bias: usize,
    /// Training records; `None` takes everything left over.
    pub train: Option<usize>,
}

impl Default for SplitSizes {
    fn default() -> Self {
        Self {
            balanced_per_label: 500,
            test_bias: 500,
            train: None,
        }
    }
}

/// Partitions the labeled records of `corpus` into disjoint splits.
///
/// The balanced split takes the first `balanced_per_label` records of each
/// label from a seeded shuffle; the biased test split and the training split
/// are then consecutive runs of a fresh shuffle of the remainder, so both keep
/// the remaining ratio.
/// Discard records must already be removed.
pub fn make_splits(corpus: &mut Corpus, sizes: SplitSizes, seed: u64) -> Result<()> {
    if let Some(r) = corpus.records.iter().find(|r| r.label == GenderLabel::Discard) {
        return Err(Error::InvalidInput(format!(
            "record {} is Discard; remove discarded records before splitting",
            r.id
        )));
    }
    let mut order: Vec<usize> = (0..corpus.records.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut assigned: Vec<Option<Split>> = vec![None; corpus.records.len()];
    for label in [GenderLabel::Woman, GenderLabel::Man] {
        let picked: Vec<usize> = order
            .iter()
            .copied()
            .filter(|&i| corpus.records[i].label == label)
            .take(sizes.balanced_per_label)
            .collect();
        if picked.len() < sizes.balanced_per_label {
            return Err(Error::Insufficient(format!(
                "balanced split needs {} {label:?} records, corpus has {}",
                sizes.balanced_per_label,
                picked.len()
            )));
        }
        for i in picked {
            assigned[i] = Some(Split::TestBalanced);
        }
    }

    // reshuffle: the balanced picks deplete the front of `order` unevenly per label
    let mut unassigned: Vec<usize> = order.into_iter().filter(|&i| assigned[i].is_none()).collect();
    unassigned.shuffle(&mut rng);
    let mut rest = unassigned.into_iter();
    let bias: Vec<usize> = rest.by_ref().take(sizes.test_bias).collect();
    if bias.len() < sizes.test_bias {
        return Err(Error::Insufficient(format!(
            "biased test split needs {} records, {} remain",
            sizes.test_bias,
            bias.len()
        )));
    }
    for i in bias {
        assigned[i] = Some(Split::TestBias);
    }
    let train: Vec<usize> = match sizes.train {
        Some(n) => rest.by_ref().take(n).collect(),
        None => rest.by_ref().collect(),
    };
    if let Some(n) = sizes.train.filter(|&n| train.len() < n) {
        return Err(Error::Insufficient(format!(
            "training split needs {n} records, {} remain",
            train.len()
        )));
    }
    for &i in &train {
        assigned[i] = Some(Split::Train);
    }
    let count = |l| train.iter().filter(|&&i| corpus.records[i].label == l).count();
    if count(GenderLabel::Woman) == 0 || count(GenderLabel::Man) == 0 {
        return Err(Error::Insufficient("training split lacks one of the labels".into()));
    }

    for (r, s) in corpus.records.iter_mut().zip(assigned) {
        r.split = s;
    }
    corpus.records.retain(|r| r.split.is_some());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_corpus, BiasConfig};

    fn corpus(n: usize) -> Corpus {
        generate_corpus(&BiasConfig { seed: 3, ..Default::default() }, n).unwrap().labeled()
    }

    fn woman_frac<'a>(it: impl Iterator<Item = &'a crate::dataset::SceneRecord>) -> f64 {
        let v: Vec<_> = it.collect();
        v.iter().filter(|r| r.label == GenderLabel::Woman).count() as f64 / v.len() as f64
    }

    #[test]
    fn splits_are_disjoint_and_balanced() {
        let mut c = corpus(3000);
        make_splits(
            &mut c,
            SplitSizes { balanced_per_label: 150, test_bias: 600, train: None },
            1,
        )
        .unwrap();
        let bal: Vec<_> = c.split(Split::TestBalanced).collect();
        let w = bal.iter().filter(|r| r.label == GenderLabel::Woman).count();
        assert_eq!(w, 150);
        assert_eq!(bal.len(), 300);
        let train_ids: std::collections::HashSet<_> = c.split(Split::Train).map(|r| &r.id).collect();
        for r in c.split(Split::TestBias).chain(c.split(Split::TestBalanced)) {
            assert!(!train_ids.contains(&r.id));
        }
        let (ft, fb) = (woman_frac(c.split(Split::Train)), woman_frac(c.split(Split::TestBias)));
        assert!((ft - fb).abs() < 0.05, "train {ft} vs test-bias {fb}");
    }

    #[test]
    fn balanced_from_skewed_pool() {
        let mut c = corpus(1400);
        let w = c.records.iter().filter(|r| r.label == GenderLabel::Woman).count();
        assert!(w >= 300);
        make_splits(&mut c, SplitSizes { balanced_per_label: 300, test_bias: 0, train: None }, 4).unwrap();
        let bal: Vec<_> = c.split(Split::TestBalanced).collect();
        assert_eq!(bal.iter().filter(|r| r.label == GenderLabel::Man).count(), 300);
        assert_eq!(bal.iter().filter(|r| r.label == GenderLabel::Woman).count(), 300);
    }

    #[test]
    fn insufficient_label_is_an_error() {
        let mut c = corpus(200);
        let err = make_splits(&mut c, SplitSizes { balanced_per_label: 500, test_bias: 0, train: None }, 1);
        assert!(matches!(err, Err(Error::Insufficient(_))));
    }

    #[test]
    fn discard_records_rejected() {
        let mut c = generate_corpus(&BiasConfig { evidence_occlusion_prob: 1.0, ..Default::default() }, 10).unwrap();
        assert!(make_splits(&mut c, SplitSizes { balanced_per_label: 0, test_bias: 0, train: None }, 1).is_err());
    }
}
