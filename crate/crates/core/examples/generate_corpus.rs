//! Generate a small biased corpus, split it and write it to disk.
//!
//! cargo run --example generate_corpus -- [scenes] [out-dir]

use std::path::PathBuf;

use equalizer::dataset::{generate_corpus, load_dataset, make_splits, save_dataset, BiasConfig, Evidence, GenderLabel, Split, SplitSizes};

fn main() -> equalizer::Result<()> {
    let mut args = std::env::args().skip(1);
    let scenes: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(600);
    let out: PathBuf = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("equalizer-corpus"));

    let config = BiasConfig { seed: 7, ..Default::default() };
    let mut corpus = generate_corpus(&config, scenes)?.labeled();
    make_splits(&mut corpus, SplitSizes { balanced_per_label: 40, test_bias: 60, train: None }, config.seed)?;

    let count = |f: &dyn Fn(&equalizer::dataset::SceneRecord) -> bool| corpus.records.iter().filter(|r| f(r)).count();
    println!("{} labeled records out of {scenes} scenes", corpus.records.len());
    println!(
        "labels: woman {} / man {}; evidence occluded in {}",
        count(&|r| r.label == GenderLabel::Woman),
        count(&|r| r.label == GenderLabel::Man),
        count(&|r| r.true_evidence == Evidence::Occluded)
    );
    for split in [Split::Train, Split::TestBias, Split::TestBalanced] {
        println!("{split:?}: {}", corpus.split(split).count());
    }

    let first = &corpus.records[0];
    println!("{} captions:", first.id);
    for c in &first.captions {
        println!("  {}", corpus.vocab.render(c));
    }
    println!("person covers {:.1}% of the image", 100.0 * first.mask.person_fraction());

    let checksum = save_dataset(&corpus, &out)?;
    let reloaded = load_dataset(&out)?;
    assert_eq!(reloaded.checksum(), checksum);
    println!("saved to {} (checksum {checksum})", out.display());
    Ok(())
}
