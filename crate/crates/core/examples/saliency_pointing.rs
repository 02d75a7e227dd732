//! Explain gendered words with Grad-CAM and occlusion, and play the pointing game.
//!
//! cargo run --release --example saliency_pointing -- [iterations] [overlay-dir]

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use equalizer::dataset::{generate_corpus, make_splits, BiasConfig, SceneRecord, Split, SplitSizes};
use equalizer::model::Captioner;
use equalizer::saliency::{
    explained_caption, pointing, pointing_suite, random_pointing, saliency_map, write_overlay, CaptionSource, Method,
};
use equalizer::training::{train, ExperimentConfig, OptimizerConfig, Variant};

fn main() -> equalizer::Result<()> {
    let mut args = std::env::args().skip(1);
    let iterations: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(1500);
    let dir: PathBuf = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("equalizer-heatmaps"));
    std::fs::create_dir_all(&dir).map_err(|e| equalizer::Error::InvalidInput(e.to_string()))?;

    let mut corpus = generate_corpus(&BiasConfig { seed: 11, ..Default::default() }, 1000)?.labeled();
    make_splits(&mut corpus, SplitSizes { balanced_per_label: 30, test_bias: 60, train: None }, 11)?;
    let balanced: Vec<&SceneRecord> = corpus.split(Split::TestBalanced).collect();

    let masks: Vec<_> = balanced.iter().map(|r| &r.mask).collect();
    let (random, area) = random_pointing(&masks, 10_000, &mut ChaCha8Rng::seed_from_u64(0))?;
    println!("random maps: pointing {:.3} vs person area {:.3}", random.accuracy, area);

    let config = ExperimentConfig {
        variant: Variant::Equalizer,
        seed: 11,
        optimizer: OptimizerConfig { iterations, ..Default::default() },
        ..Default::default()
    };
    let model = Captioner::from_checkpoint(train(&config, &corpus)?.checkpoint);

    for method in [Method::GradCam, Method::Occlusion] {
        let p = pointing_suite(&model, &balanced, &corpus.vocab, method, CaptionSource::GroundTruth)?;
        println!("{method:?}: woman {:.3}  man {:.3}  all {:.3}", p.woman.accuracy, p.man.accuracy, p.all.accuracy);
    }

    let r = balanced[0];
    if let Some((caption, pos)) = explained_caption(&model, r, &corpus.vocab, CaptionSource::GroundTruth)? {
        for method in [Method::GradCam, Method::Occlusion] {
            let map = saliency_map(&model, &r.image, &caption, pos, method)?;
            let path = dir.join(format!("{}.{method:?}.png", r.id));
            write_overlay(&map, &r.image, &path)?;
            println!(
                "{} explaining {:?}: argmax cell {:?}, hit {}, overlay {}",
                r.id,
                corpus.vocab.token(caption[pos]).unwrap_or("?"),
                map.argmax_cell(),
                pointing(&map, &r.mask),
                path.display()
            );
        }
    }
    Ok(())
}
