//! Train two variants briefly, then print the gender metrics side by side.
//!
//! cargo run --release --example evaluate_metrics -- [iterations]

use equalizer::dataset::{generate_corpus, make_splits, BiasConfig, SceneRecord, Split, SplitSizes};
use equalizer::metrics::{error_ratio_csv, evaluate, outcome_csv, MetricsReport};
use equalizer::model::Captioner;
use equalizer::training::{train, ExperimentConfig, OptimizerConfig, Variant};

fn main() -> equalizer::Result<()> {
    let iterations: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1500);
    let mut corpus = generate_corpus(&BiasConfig { seed: 5, ..Default::default() }, 1200)?.labeled();
    make_splits(&mut corpus, SplitSizes { balanced_per_label: 60, test_bias: 100, train: None }, 5)?;
    let balanced: Vec<&SceneRecord> = corpus.split(Split::TestBalanced).collect();

    let mut reports: Vec<(Variant, MetricsReport)> = Vec::new();
    for variant in [Variant::BaselineFt, Variant::Equalizer] {
        let config = ExperimentConfig {
            variant,
            seed: 5,
            optimizer: OptimizerConfig { iterations, ..Default::default() },
            ..Default::default()
        };
        let out = train(&config, &corpus)?;
        let id = out.checkpoint.id();
        let model = Captioner::from_checkpoint(out.checkpoint);
        let report = evaluate(&model, &balanced, &corpus.vocab, "balanced", &corpus.checksum(), &id)?;
        reports.push((variant, report));
    }

    let rows: Vec<(&str, &MetricsReport)> = reports.iter().map(|(v, r)| (v.name(), r)).collect();
    print!("{}", error_ratio_csv(&rows));
    println!();
    print!("{}", outcome_csv(&rows));
    for (v, r) in &reports {
        println!("{v}: confidence curve {:?}", r.confidence_curve);
    }
    Ok(())
}
