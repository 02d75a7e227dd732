//! Train Baseline-FT and Equalizer on a small corpus and compare their loss traces.
//!
//! cargo run --release --example train_variant -- [iterations]

use equalizer::dataset::{generate_corpus, make_splits, BiasConfig, SplitSizes};
use equalizer::training::{nonincreasing_violations, train, ExperimentConfig, OptimizerConfig, Variant};

fn main() -> equalizer::Result<()> {
    let iterations: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(600);
    let mut corpus = generate_corpus(&BiasConfig { seed: 2, ..Default::default() }, 400)?.labeled();
    make_splits(&mut corpus, SplitSizes { balanced_per_label: 20, test_bias: 40, train: None }, 2)?;

    for variant in [Variant::BaselineFt, Variant::Equalizer] {
        let config = ExperimentConfig {
            variant,
            seed: 2,
            optimizer: OptimizerConfig { iterations, ..Default::default() },
            ..Default::default()
        };
        let out = train(&config, &corpus)?;
        println!("{variant}:");
        for r in out.log.iter().step_by((iterations / 6).max(1)) {
            let l = r.loss;
            println!(
                "  it {:>5}  total {:.3}  ce {:.3}  acl {:.4}  conf {:.4}  |g| {:.2}{}",
                r.iteration,
                l.total,
                l.ce,
                l.acl,
                l.conf,
                r.grad_norm,
                if r.clipped { " (clipped)" } else { "" }
            );
        }
        let s = &out.summary;
        println!(
            "  final CE/token {:.3}, visits woman {} / man {}, flagged windows {:?}",
            s.final_ce_per_token,
            s.woman_visits,
            s.man_visits,
            nonincreasing_violations(&out.log, 200)
        );
    }
    Ok(())
}
