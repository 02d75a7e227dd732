//! Dataset directory format: `dataset.json`, `manifest.jsonl`, `images/`, `masks/`.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};

use super::{
    derive_gender_label, BiasConfig, Corpus, Evidence, GenderLabel, ObjectPlacement, PersonMask, SceneImage,
    SceneRecord, Split, Vocabulary, CAPTIONS_PER_IMAGE, IMAGE_SIZE,
};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format_version: u32,
    pub checksum: String,
    pub records: usize,
    pub vocab: Vocabulary,
    pub config: Option<BiasConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct ManifestLine {
    id: String,
    captions: Vec<Vec<String>>,
    label: GenderLabel,
    true_evidence: Evidence,
    context_objects: Vec<String>,
    objects: Vec<ObjectPlacement>,
    glyph_cell: Option<(usize, usize)>,
    split: Option<Split>,
    image: String,
    mask: String,
}

pub(crate) fn manifest_line(r: &SceneRecord, vocab: &Vocabulary) -> ManifestLine {
    ManifestLine {
        id: r.id.clone(),
        captions: r.captions.iter().map(|c| vocab.decode(c)).collect(),
        label: r.label,
        true_evidence: r.true_evidence,
        context_objects: r.context_objects().map(str::to_string).collect(),
        objects: r.objects.clone(),
        glyph_cell: r.glyph_cell,
        split: r.split,
        image: format!("images/{}.png", r.id),
        mask: format!("masks/{}.png", r.id),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes `corpus` under `dir`, returning its checksum.
pub fn save_dataset(corpus: &Corpus, dir: &Path) -> Result<String> {
    for sub in ["images", "masks"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut manifest = Vec::new();
    for r in &corpus.records {
        let line = manifest_line(r, &corpus.vocab);
        serde_json::to_writer(&mut manifest, &line)?;
        manifest.push(b'\n');

        let rgb = RgbImage::from_raw(IMAGE_SIZE as u32, IMAGE_SIZE as u32, r.image.to_bytes())
            .expect("image buffer has 64x64x3 bytes");
        let path = dir.join(&line.image);
        rgb.save(&path)?;
        let gray = GrayImage::from_raw(IMAGE_SIZE as u32, IMAGE_SIZE as u32, r.mask.to_bytes())
            .expect("mask buffer has 64x64 bytes");
        gray.save(dir.join(&line.mask))?;
    }
    write_file(&dir.join("manifest.jsonl"), &manifest)?;

    let checksum = corpus.checksum();
    let meta = DatasetMeta {
        format_version: FORMAT_VERSION,
        checksum: checksum.clone(),
        records: corpus.records.len(),
        vocab: corpus.vocab.clone(),
        config: corpus.config.clone(),
    };
    let path = dir.join("dataset.json");
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::to_writer_pretty(&mut f, &meta)?;
    f.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
    Ok(checksum)
}

fn load_png(path: &Path, record: &str) -> Result<image::DynamicImage> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let img = image::open(path)?;
    if img.width() as usize != IMAGE_SIZE || img.height() as usize != IMAGE_SIZE {
        return Err(Error::Record {
            record: record.to_string(),
            detail: format!(
                "{} is {}x{}, expected {IMAGE_SIZE}x{IMAGE_SIZE}",
                path.display(),
                img.width(),
                img.height()
            ),
        });
    }
    Ok(img)
}

pub fn read_meta(dir: &Path) -> Result<DatasetMeta> {
    let path = dir.join("dataset.json");
    if !path.exists() {
        return Err(Error::MissingFile(path));
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut meta: DatasetMeta = serde_json::from_str(&text)?;
    meta.vocab = meta.vocab.validated()?;
    Ok(meta)
}

/// Loads a dataset directory and verifies its checksum.
pub fn load_dataset(dir: &Path) -> Result<Corpus> {
    let meta = read_meta(dir)?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::InvalidInput(format!(
            "unsupported dataset format version {}",
            meta.format_version
        )));
    }
    let vocab = meta.vocab;
    let path = dir.join("manifest.jsonl");
    let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut records = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestLine = serde_json::from_str(&line).map_err(|e| Error::Record {
            record: format!("manifest line {}", n + 1),
            detail: e.to_string(),
        })?;
        let bad = |detail: String| Error::Record {
            record: entry.id.clone(),
            detail,
        };
        if entry.captions.len() != CAPTIONS_PER_IMAGE {
            return Err(bad(format!("expected {CAPTIONS_PER_IMAGE} captions, found {}", entry.captions.len())));
        }
        let captions = entry
            .captions
            .iter()
            .map(|c| {
                let words: Vec<&str> = c.iter().map(String::as_str).collect();
                let ids = vocab.encode(&words).map_err(|e| bad(e.to_string()))?;
                if ids.first() != Some(&vocab.bos()) || ids.last() != Some(&vocab.eos()) {
                    return Err(bad("caption must start with BOS and end with EOS".into()));
                }
                Ok(ids)
            })
            .collect::<Result<Vec<_>>>()?;
        if derive_gender_label(&captions, &vocab) != entry.label {
            return Err(bad(format!("label {:?} disagrees with captions", entry.label)));
        }
        let image_bytes = load_png(&dir.join(&entry.image), &entry.id)?.to_rgb8().into_raw();
        let mask_bytes = load_png(&dir.join(&entry.mask), &entry.id)?.to_luma8().into_raw();
        let image = SceneImage::from_bytes(&image_bytes).map_err(|e| bad(e.to_string()))?;
        let mask = PersonMask::from_bytes(&mask_bytes).map_err(|e| bad(e.to_string()))?;
        records.push(SceneRecord {
            id: entry.id,
            image,
            mask,
            captions,
            true_evidence: entry.true_evidence,
            objects: entry.objects,
            glyph_cell: entry.glyph_cell,
            label: entry.label,
            split: entry.split,
        });
    }
    if records.len() != meta.records {
        return Err(Error::InvalidInput(format!(
            "dataset.json lists {} records, manifest has {}",
            meta.records,
            records.len()
        )));
    }
    let corpus = Corpus {
        vocab,
        config: meta.config,
        records,
    };
    let found = corpus.checksum();
    if found != meta.checksum {
        return Err(Error::Checksum {
            expected: meta.checksum,
            found,
        });
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::generate_corpus;

    fn small() -> Corpus {
        generate_corpus(&BiasConfig { seed: 4, ..Default::default() }, 6).unwrap()
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let c = small();
        let sum = save_dataset(&c, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.checksum(), sum);
    }

    #[test]
    fn missing_image_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let c = small();
        save_dataset(&c, dir.path()).unwrap();
        let victim = dir.path().join(format!("images/{}.png", c.records[2].id));
        fs::remove_file(&victim).unwrap();
        match load_dataset(dir.path()) {
            Err(Error::MissingFile(p)) => assert_eq!(p, victim),
            other => panic!("expected missing file error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_token_names_the_record() {
        let dir = tempfile::tempdir().unwrap();
        let c = small();
        save_dataset(&c, dir.path()).unwrap();
        let path = dir.path().join("manifest.jsonl");
        let text = fs::read_to_string(&path).unwrap().replacen("\"a\"", "\"zebra\"", 1);
        fs::write(&path, text).unwrap();
        match load_dataset(dir.path()) {
            Err(Error::Record { record, detail }) => {
                assert_eq!(record, c.records[0].id);
                assert!(detail.contains("zebra"));
            }
            other => panic!("expected record error, got {other:?}"),
        }
    }

    #[test]
    fn corrupt_manifest_and_tampered_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let c = small();
        save_dataset(&c, dir.path()).unwrap();

        let img_path = dir.path().join(format!("images/{}.png", c.records[1].id));
        let mut img = image::open(&img_path).unwrap().to_rgb8();
        let p = img.get_pixel_mut(0, 0);
        p.0[0] = p.0[0].wrapping_add(1);
        img.save(&img_path).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Checksum { .. })));

        let path = dir.path().join("manifest.jsonl");
        fs::write(&path, "{not json\n").unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Record { .. })));
    }

    #[test]
    fn wrong_image_shape_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let c = small();
        save_dataset(&c, dir.path()).unwrap();
        let img_path = dir.path().join(format!("images/{}.png", c.records[0].id));
        RgbImage::new(32, 32).save(&img_path).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Record { .. })));
    }
}
