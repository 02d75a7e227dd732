//! Evaluate each loss term on hand-built word distributions.
//!
//! cargo run --example loss_terms

use equalizer::dataset::{GenderSetMode, Vocabulary};
use equalizer::losses::{
    appearance_confusion_loss, confidence_quotients, confident_loss, confusion, cross_entropy, total_loss, upweight_loss,
    LossWeights,
};
use equalizer::model::WordDistribution;

/// Distribution with the given masses on woman and man and the rest spread evenly.
fn gendered(vocab: &Vocabulary, woman: f64, man: f64) -> WordDistribution {
    let w = vocab.id("woman").unwrap();
    let m = vocab.id("man").unwrap();
    let rest = (1.0 - woman - man) / (vocab.len() - 2) as f64;
    let probs = (0..vocab.len())
        .map(|t| if t == w { woman } else if t == m { man } else { rest })
        .collect();
    WordDistribution::from_probs(probs).unwrap()
}

fn main() -> equalizer::Result<()> {
    let vocab = Vocabulary::scene(GenderSetMode::Singleton);
    let caption = vocab.caption(&["a", "woman", "with", "an", "umbrella"])?;
    let captions = [caption.as_slice()];
    let steps = caption.len() - 1;

    for (w, m) in [(0.5, 0.5), (0.7, 0.1), (0.2, 0.6)] {
        let d = gendered(&vocab, w, m);
        let (fw, fm) = confidence_quotients(&d, &vocab, 1e-6);
        println!("p(woman)={w} p(man)={m}: confusion {:.3}, F_W {fw:.3}, F_M {fm:.3}", confusion(&d, &vocab));
    }

    // The same distribution at every step: only the gendered step feeds ACL and Conf.
    let d = gendered(&vocab, 0.2, 0.6);
    let dists = vec![vec![d; steps]];
    let ce = cross_entropy(&dists, &captions)?;
    let up = upweight_loss(&dists, &captions, &vocab, 10.0)?;
    let acl = appearance_confusion_loss(&dists, &captions, &vocab)?;
    let conf = confident_loss(&dists, &captions, &vocab, 1e-6)?;
    println!("CE {ce:.4}  UpWeight(10) {up:.4}  ACL {acl:.4}  Conf {conf:.4}");

    let bundle = total_loss(ce, acl, 0.0, conf, LossWeights::default())?;
    println!("total {:.4} (linearity gap {:.1e})", bundle.total, bundle.linearity_gap());
    Ok(())
}
