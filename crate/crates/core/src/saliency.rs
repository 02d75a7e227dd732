//! Visual evidence for gendered words: occlusion and Grad-CAM maps, scored
//! with the pointing game against person masks and object footprints.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{GenderLabel, PersonMask, Rect, SceneImage, SceneRecord, TokenId, Vocabulary, IMAGE_SIZE, MAX_CAPTION_LEN};
use crate::error::{Error, Result};
use crate::model::{Captioner, Params, GRID};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Occlusion,
    GradCam,
    /// Per-pixel uniform noise, the chance baseline.
    Random,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "occlusion" => Ok(Method::Occlusion),
            "grad-cam" | "gradcam" => Ok(Method::GradCam),
            "random" => Ok(Method::Random),
            _ => Err(Error::Config(format!("unknown saliency method {s:?}"))),
        }
    }
}

/// Square attribution grid over the image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMap {
    pub size: usize,
    /// Row-major `size × size` values.
    pub grid: Vec<f64>,
    pub method: Method,
    pub target: TokenId,
}

impl SaliencyMap {
    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.grid[row * self.size + col]
    }

    /// Nearest-neighbour upscale to the image size, row-major.
    pub fn upscaled(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(IMAGE_SIZE * IMAGE_SIZE);
        for y in 0..IMAGE_SIZE {
            for x in 0..IMAGE_SIZE {
                out.push(self.get(x * self.size / IMAGE_SIZE, y * self.size / IMAGE_SIZE));
            }
        }
        out
    }

    /// Argmax pixel `(x, y)` of the upscaled map; ties go to the lowest
    /// flat index.
    pub fn argmax_pixel(&self) -> (usize, usize) {
        let up = self.upscaled();
        let mut best = 0;
        for (i, v) in up.iter().enumerate() {
            if *v > up[best] {
                best = i;
            }
        }
        (best % IMAGE_SIZE, best / IMAGE_SIZE)
    }

    /// Argmax cell `(col, row)` of the grid, lowest index on ties.
    pub fn argmax_cell(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, v) in self.grid.iter().enumerate() {
            if *v > self.grid[best] {
                best = i;
            }
        }
        (best % self.size, best / self.size)
    }

    fn check_finite(&self) -> Result<()> {
        if self.grid.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::numeric("saliency", "non-finite map value"))
        }
    }
}

fn target_of(caption: &[TokenId], position: usize) -> Result<TokenId> {
    if position == 0 || position >= caption.len() {
        return Err(Error::InvalidInput(format!(
            "target position {position} outside caption of length {}",
            caption.len()
        )));
    }
    Ok(caption[position])
}

/// Information loss map: cell `(c, r)` holds −log p(target) at `position`
/// after zeroing that cell of the image. `grid` cells per side.
pub fn occlusion_saliency(
    model: &Captioner,
    image: &SceneImage,
    caption: &[TokenId],
    position: usize,
    grid: usize,
) -> Result<SaliencyMap> {
    let target = target_of(caption, position)?;
    if grid == 0 || IMAGE_SIZE % grid != 0 {
        return Err(Error::InvalidInput(format!("grid {grid} must divide {IMAGE_SIZE}")));
    }
    let cell = IMAGE_SIZE / grid;
    // only the prefix up to the target influences its distribution
    let prefix = &caption[..=position];
    let mut values = Vec::with_capacity(grid * grid);
    for r in 0..grid {
        for c in 0..grid {
            let blocked = image.with_zeroed(Rect {
                x: c * cell,
                y: r * cell,
                w: cell,
                h: cell,
            });
            let trace = model.forward_teacher_forced(&blocked, prefix)?;
            values.push(-trace.distributions[position - 1].log_prob(target));
        }
    }
    let map = SaliencyMap {
        size: grid,
        grid: values,
        method: Method::Occlusion,
        target,
    };
    map.check_finite()?;
    Ok(map)
}

/// Grad-CAM on the final 8×8 feature grid for log p(target) at `position`.
pub fn grad_cam(model: &Captioner, image: &SceneImage, caption: &[TokenId], position: usize) -> Result<SaliencyMap> {
    let trace = model.forward_teacher_forced(image, &caption[..=position.min(caption.len() - 1)])?;
    grad_cam_from_trace(model, image, caption, position, &trace, trace.features())
}

/// Grad-CAM computed with the final feature grid replaced by `features`.
pub fn grad_cam_with_features(
    model: &Captioner,
    image: &SceneImage,
    caption: &[TokenId],
    position: usize,
    features: &[f64],
) -> Result<SaliencyMap> {
    let trace = model.forward_with_features(image, &caption[..=position.min(caption.len() - 1)], features)?;
    grad_cam_from_trace(model, image, caption, position, &trace, features)
}

fn grad_cam_from_trace(
    model: &Captioner,
    image: &SceneImage,
    caption: &[TokenId],
    position: usize,
    trace: &crate::model::ForwardTrace,
    features: &[f64],
) -> Result<SaliencyMap> {
    let target = target_of(caption, position)?;
    let steps = trace.distributions.len();
    let mut dlogits = vec![vec![0.0; model.config.vocab_size]; steps];
    // d log p_w / d z = e_w − p
    let d = &trace.distributions[position - 1];
    for (g, p) in dlogits[position - 1].iter_mut().zip(d.probs()) {
        *g = -p;
    }
    dlogits[position - 1][target] += 1.0;
    let mut scratch = Params::zeros(&model.config);
    let dfeatures = model.backward(image, trace, &dlogits, &mut scratch);
    if dfeatures.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("grad_cam", "non-finite feature gradient"));
    }
    let cells = GRID * GRID;
    let mut grid = vec![0.0; cells];
    for (ch, grads) in dfeatures.chunks_exact(cells).enumerate() {
        let alpha = grads.iter().sum::<f64>() / cells as f64;
        for (g, a) in grid.iter_mut().zip(&features[ch * cells..(ch + 1) * cells]) {
            *g += alpha * a;
        }
    }
    for g in grid.iter_mut() {
        *g = g.max(0.0);
    }
    let map = SaliencyMap {
        size: GRID,
        grid,
        method: Method::GradCam,
        target,
    };
    map.check_finite()?;
    Ok(map)
}

/// Per-pixel uniform random map, the chance baseline of the pointing game.
pub fn random_map<R: Rng>(rng: &mut R) -> SaliencyMap {
    SaliencyMap {
        size: IMAGE_SIZE,
        grid: (0..IMAGE_SIZE * IMAGE_SIZE).map(|_| rng.gen()).collect(),
        method: Method::Random,
        target: 0,
    }
}

/// Hit iff the argmax pixel of the upscaled map lies on the person.
pub fn pointing(map: &SaliencyMap, mask: &PersonMask) -> bool {
    let (x, y) = map.argmax_pixel();
    mask.is_person(x, y)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PointingResult {
    pub hits: usize,
    pub misses: usize,
    pub accuracy: f64,
}

impl PointingResult {
    pub fn add(&mut self, hit: bool) {
        if hit {
            self.hits += 1;
        } else {
            self.misses += 1;
        }
        self.accuracy = self.hits as f64 / (self.hits + self.misses) as f64;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PointingSuite {
    pub woman: PointingResult,
    pub man: PointingResult,
    pub all: PointingResult,
}

/// Which caption supplies the gendered target word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CaptionSource {
    /// First reference caption naming a gendered word.
    GroundTruth,
    /// The model's greedy caption; records without a gendered word are skipped.
    Generated,
}

/// Caption and target position used to explain `record`, if any.
pub fn explained_caption(
    model: &Captioner,
    record: &SceneRecord,
    vocab: &Vocabulary,
    source: CaptionSource,
) -> Result<Option<(Vec<TokenId>, usize)>> {
    Ok(match source {
        CaptionSource::GroundTruth => record
            .captions
            .iter()
            .find_map(|c| c.iter().position(|&t| vocab.is_gendered(t)).map(|p| (c.clone(), p))),
        CaptionSource::Generated => {
            let c = model.greedy_decode(&record.image, MAX_CAPTION_LEN)?;
            c.iter().position(|&t| vocab.is_gendered(t)).map(|p| (c.clone(), p))
        }
    })
}

pub const OCCLUSION_GRID: usize = 8;

/// Saliency map of `method` for one caption position.
pub fn saliency_map(
    model: &Captioner,
    image: &SceneImage,
    caption: &[TokenId],
    position: usize,
    method: Method,
) -> Result<SaliencyMap> {
    match method {
        Method::Occlusion => occlusion_saliency(model, image, caption, position, OCCLUSION_GRID),
        Method::GradCam => grad_cam(model, image, caption, position),
        Method::Random => Err(Error::InvalidInput("random maps are drawn with random_map".into())),
    }
}

/// Pointing accuracy by gender over records with a gendered target word.
pub fn pointing_suite(
    model: &Captioner,
    records: &[&SceneRecord],
    vocab: &Vocabulary,
    method: Method,
    source: CaptionSource,
) -> Result<PointingSuite> {
    let mut out = PointingSuite::default();
    for r in records {
        let Some((caption, pos)) = explained_caption(model, r, vocab, source)? else {
            continue;
        };
        let hit = pointing(&saliency_map(model, &r.image, &caption, pos, method)?, &r.mask);
        match r.label {
            GenderLabel::Woman => out.woman.add(hit),
            GenderLabel::Man => out.man.add(hit),
            GenderLabel::Discard => {}
        }
        out.all.add(hit);
    }
    if out.all.hits + out.all.misses == 0 {
        return Err(Error::Insufficient("no gendered records to explain".into()));
    }
    Ok(out)
}

/// Random-map pointing over `trials` draws cycling through `masks`.
/// Returns the accuracy and the mean person-area fraction of the masks used.
pub fn random_pointing<R: Rng>(masks: &[&PersonMask], trials: usize, rng: &mut R) -> Result<(PointingResult, f64)> {
    if masks.is_empty() || trials == 0 {
        return Err(Error::InvalidInput("random pointing needs masks and trials".into()));
    }
    let mut res = PointingResult::default();
    let mut area = 0.0;
    for i in 0..trials {
        let m = masks[i % masks.len()];
        res.add(pointing(&random_map(rng), m));
        area += m.person_fraction();
    }
    Ok((res, area / trials as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectPointingRow {
    pub woman_rate: Option<f64>,
    pub man_rate: Option<f64>,
    pub woman_records: usize,
    pub man_records: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectPointing {
    pub objects: BTreeMap<String, ObjectPointingRow>,
    /// Objects missing from the records of either gender.
    pub excluded: Vec<String>,
    /// Mean over compared objects of |woman rate − man rate|.
    pub mean_delta: f64,
}

/// How often the saliency argmax lands on each context object, by gender.
pub fn object_pointing(
    model: &Captioner,
    records: &[&SceneRecord],
    vocab: &Vocabulary,
    objects: &[&str],
    method: Method,
) -> Result<ObjectPointing> {
    // (woman hits, woman total, man hits, man total)
    let mut counts: BTreeMap<&str, (usize, usize, usize, usize)> = objects.iter().map(|o| (*o, (0, 0, 0, 0))).collect();
    for r in records {
        if !r.objects.iter().any(|o| counts.contains_key(o.name.as_str())) {
            continue;
        }
        let Some((caption, pos)) = explained_caption(model, r, vocab, CaptionSource::GroundTruth)? else {
            continue;
        };
        let (x, y) = saliency_map(model, &r.image, &caption, pos, method)?.argmax_pixel();
        for o in &r.objects {
            let Some(c) = counts.get_mut(o.name.as_str()) else {
                continue;
            };
            let hit = usize::from(o.rect.contains(x, y));
            match r.label {
                GenderLabel::Woman => {
                    c.0 += hit;
                    c.1 += 1;
                }
                GenderLabel::Man => {
                    c.2 += hit;
                    c.3 += 1;
                }
                GenderLabel::Discard => {}
            }
        }
    }
    let rate = |h: usize, n: usize| (n > 0).then(|| h as f64 / n as f64);
    let mut rows = BTreeMap::new();
    let mut excluded = Vec::new();
    let mut deltas = Vec::new();
    for (name, (wh, wn, mh, mn)) in counts {
        let row = ObjectPointingRow {
            woman_rate: rate(wh, wn),
            man_rate: rate(mh, mn),
            woman_records: wn,
            man_records: mn,
        };
        match (row.woman_rate, row.man_rate) {
            (Some(w), Some(m)) => deltas.push((w - m).abs()),
            _ => excluded.push(name.to_string()),
        }
        rows.insert(name.to_string(), row);
    }
    Ok(ObjectPointing {
        objects: rows,
        excluded,
        mean_delta: if deltas.is_empty() {
            0.0
        } else {
            deltas.iter().sum::<f64>() / deltas.len() as f64
        },
    })
}

/// Raw grid as CSV, one row per grid row.
pub fn map_csv(map: &SaliencyMap) -> String {
    let mut s = String::new();
    for row in map.grid.chunks_exact(map.size) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        let _ = writeln!(s, "{}", cells.join(","));
    }
    s
}

/// Writes the map, min-max normalised, alpha-blended in red over the image.
pub fn write_overlay(map: &SaliencyMap, image: &SceneImage, path: &Path) -> Result<()> {
    let up = map.upscaled();
    let lo = up.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = up.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut buf = image::RgbImage::new(IMAGE_SIZE as u32, IMAGE_SIZE as u32);
    for (i, px) in buf.pixels_mut().enumerate() {
        let (x, y) = (i % IMAGE_SIZE, i / IMAGE_SIZE);
        let a = 0.6 * (up[i] - lo) / span;
        let heat = [1.0, 0.0, 0.0];
        let rgb: [u8; 3] = std::array::from_fn(|c| {
            let v = (1.0 - a) * image.get(x, y, c) + a * heat[c];
            (v.clamp(0.0, 1.0) * 255.0).round() as u8
        });
        *px = image::Rgb(rgb);
    }
    buf.save(path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_corpus, BiasConfig, Corpus};
    use crate::model::CELLS;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (Corpus, Captioner) {
        let c = generate_corpus(&BiasConfig { seed: 8, ..Default::default() }, 10).unwrap();
        let m = Captioner::for_vocab(&c.vocab, 3);
        (c, m)
    }

    fn gendered(c: &Corpus) -> (&SceneRecord, Vec<TokenId>, usize) {
        for r in &c.records {
            for cap in &r.captions {
                if let Some(p) = cap.iter().position(|&t| c.vocab.is_gendered(t)) {
                    return (r, cap.clone(), p);
                }
            }
        }
        panic!("no gendered caption");
    }

    #[test]
    fn image_independent_model_gives_constant_occlusion_map() {
        let (c, mut m) = setup();
        m.params.init_w.data.fill(0.0);
        let (r, cap, p) = gendered(&c);
        let map = occlusion_saliency(&m, &r.image, &cap, p, 8).unwrap();
        assert_eq!(map.grid.len(), 64);
        assert!(map.grid.iter().all(|v| *v == map.grid[0]));
    }

    #[test]
    fn grad_cam_shape_sign_and_zero_features() {
        let (c, m) = setup();
        let (r, cap, p) = gendered(&c);
        let map = grad_cam(&m, &r.image, &cap, p).unwrap();
        assert_eq!((map.size, map.grid.len()), (8, 64));
        assert!(map.grid.iter().all(|v| *v >= 0.0));
        let zeros = vec![0.0; m.config.conv2_channels * CELLS];
        let z = grad_cam_with_features(&m, &r.image, &cap, p, &zeros).unwrap();
        assert!(z.grid.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn grad_cam_weights_match_finite_differences() {
        // alpha_k is the mean gradient of log p over channel k's activations;
        // check it against a uniform bump of that channel.
        let (c, m) = setup();
        let (r, cap, p) = gendered(&c);
        let base = m.forward_teacher_forced(&r.image, &cap[..=p]).unwrap();
        let feats = base.features().to_vec();
        let logp = |f: &[f64]| {
            m.forward_with_features(&r.image, &cap[..=p], f).unwrap().distributions[p - 1].log_prob(cap[p])
        };
        let mut dlogits = vec![vec![0.0; m.config.vocab_size]; p];
        let d = &base.distributions[p - 1];
        for (g, q) in dlogits[p - 1].iter_mut().zip(d.probs()) {
            *g = -q;
        }
        dlogits[p - 1][cap[p]] += 1.0;
        let mut scratch = Params::zeros(&m.config);
        let df = m.backward(&r.image, &base, &dlogits, &mut scratch);
        let h = 1e-5;
        for ch in 0..3 {
            let bump = |s: f64| {
                let mut f = feats.clone();
                for v in &mut f[ch * CELLS..(ch + 1) * CELLS] {
                    *v += s;
                }
                logp(&f)
            };
            let fd = (bump(h) - bump(-h)) / (2.0 * h);
            let an: f64 = df[ch * CELLS..(ch + 1) * CELLS].iter().sum();
            assert!((fd - an).abs() < 1e-6 * an.abs().max(1.0), "channel {ch}: {fd} vs {an}");
        }
    }

    #[test]
    fn pointing_examples() {
        let (c, _) = setup();
        let mask = &c.records[0].mask;
        let constant = SaliencyMap {
            size: 8,
            grid: vec![1.0; 64],
            method: Method::GradCam,
            target: 0,
        };
        // person never covers the origin
        assert!(!mask.is_person(0, 0));
        assert!(!pointing(&constant, mask));
        let (px, py) = (0..IMAGE_SIZE * IMAGE_SIZE)
            .map(|i| (i % IMAGE_SIZE, i / IMAGE_SIZE))
            .find(|&(x, y)| mask.is_person(x, y))
            .unwrap();
        let mut peaked = constant.clone();
        peaked.grid[(py / 8) * 8 + px / 8] = 2.0;
        // the cell holding a person pixel may also hold background; the
        // argmax is that cell's first pixel
        let (ax, ay) = peaked.argmax_pixel();
        assert_eq!((ax / 8, ay / 8), (px / 8, py / 8));
        assert_eq!(pointing(&peaked, mask), mask.is_person(ax, ay));
    }

    #[test]
    fn random_pointing_tracks_person_area() {
        let (c, _) = setup();
        let masks: Vec<&PersonMask> = c.records.iter().map(|r| &r.mask).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (res, area) = random_pointing(&masks, 2000, &mut rng).unwrap();
        assert_eq!(res.hits + res.misses, 2000);
        assert!((res.accuracy - area).abs() < 0.03, "{} vs {}", res.accuracy, area);
    }

    #[test]
    fn suite_accounting() {
        let (c, m) = setup();
        let recs: Vec<&SceneRecord> = c.records.iter().collect();
        let expected = recs
            .iter()
            .filter(|r| r.captions.iter().flatten().any(|&t| c.vocab.is_gendered(t)))
            .count();
        let s = pointing_suite(&m, &recs, &c.vocab, Method::GradCam, CaptionSource::GroundTruth).unwrap();
        assert_eq!(s.all.hits + s.all.misses, expected);
        assert_eq!(s.woman.hits + s.man.hits, s.all.hits);
        let op = object_pointing(&m, &recs, &c.vocab, &["snowboard", "kitchen"], Method::GradCam).unwrap();
        assert!((0.0..=1.0).contains(&op.mean_delta));
    }

    proptest! {
        #[test]
        fn pointing_invariant_under_monotone_rescaling(
            grid in prop::collection::vec(-5.0f64..5.0, 64),
            scale in 0.1f64..10.0,
            shift in -3.0f64..3.0,
            rec in 0usize..10,
        ) {
            let (c, _) = setup();
            let map = SaliencyMap { size: 8, grid: grid.clone(), method: Method::Occlusion, target: 0 };
            let exp = SaliencyMap { grid: grid.iter().map(|v| (v * scale + shift).exp()).collect(), ..map.clone() };
            prop_assert_eq!(pointing(&map, &c.records[rec].mask), pointing(&exp, &c.records[rec].mask));
        }
    }
}
