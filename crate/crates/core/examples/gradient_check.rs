//! Finite-difference check of every loss term's gradients.
//!
//! cargo run --example gradient_check

use equalizer::dataset::{generate_corpus, BiasConfig};
use equalizer::gradcheck::{check, term_objectives, GradCheckSettings};
use equalizer::losses::LossWeights;
use equalizer::model::Captioner;
use equalizer::training::BatchItem;

fn main() -> equalizer::Result<()> {
    let corpus = generate_corpus(&BiasConfig { seed: 3, ..Default::default() }, 12)?;
    let vocab = &corpus.vocab;
    let batch: Vec<BatchItem> = corpus
        .records
        .iter()
        .filter_map(|r| {
            let caption = r.captions.iter().find(|c| c.iter().any(|&t| vocab.is_gendered(t)))?;
            Some(BatchItem { image: &r.image, mask: &r.mask, caption })
        })
        .take(2)
        .collect();
    let model = Captioner::for_vocab(vocab, 17);
    let settings = GradCheckSettings { coords_per_block: 16, ..Default::default() };

    for (term, objective) in term_objectives(LossWeights::default()) {
        let report = check(&model, &objective, vocab, &batch, settings, term)?;
        println!("{term:<22} max relative error {:.2e}", report.max_relative_error());
        for b in &report.blocks {
            println!("    {:<10} {:>3} coords  rel {:.2e}  |g| {:.3e}", b.block, b.coords, b.relative_error, b.analytic_norm);
        }
    }
    Ok(())
}
