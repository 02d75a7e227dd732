//! Train all six variants on one corpus through the suite runner and list the outputs.
//!
//! cargo run --release --example experiment_suite -- [iterations] [out-dir]

use std::path::PathBuf;

use equalizer::dataset::{generate_corpus, make_splits, BiasConfig, SplitSizes};
use equalizer::training::{run_suite, ExperimentConfig, OptimizerConfig, Variant};

fn main() -> equalizer::Result<()> {
    let mut args = std::env::args().skip(1);
    let iterations: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(300);
    let dir: PathBuf = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("equalizer-suite"));

    let mut corpus = generate_corpus(&BiasConfig { seed: 1, ..Default::default() }, 400)?.labeled();
    make_splits(&mut corpus, SplitSizes { balanced_per_label: 20, test_bias: 40, train: None }, 1)?;
    let base = ExperimentConfig {
        seed: 1,
        optimizer: OptimizerConfig { iterations, ..Default::default() },
        ..Default::default()
    };
    let manifest = run_suite(&base, &corpus, &Variant::ALL, &dir)?;
    println!("dataset {}", manifest.dataset_checksum);
    for e in &manifest.entries {
        match (&e.summary, &e.error) {
            (Some(s), None) => println!(
                "{:<18} CE/token {:.3}  checkpoint {}",
                e.variant,
                s.final_ce_per_token,
                &e.checkpoint_id.as_deref().unwrap_or("-")[..12]
            ),
            (_, err) => println!("{:<18} failed: {err:?}", e.variant),
        }
    }
    println!("written under {}", dir.display());
    Ok(())
}
