//! Procedural scene rasterizer.
//!
//! Scenes live on a 4×4 grid of 16-px slots. The person spans two slots
//! vertically (head, torso, legs); context objects take one free slot each.
//! The gender glyph sits inside one 8-px torso cell so that occlusion cells
//! and Grad-CAM cells line up with it exactly.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Evidence, PersonMask, SceneImage, IMAGE_SIZE};

pub const CELL: usize = 8;
pub const SLOT: usize = 16;
const SLOTS: usize = IMAGE_SIZE / SLOT;

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.x + self.w && y >= self.y && y < self.y + self.h
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }
}

/// A rendered context object and its pixel footprint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectPlacement {
    pub name: String,
    pub rect: Rect,
}

/// Visual knobs for the renderer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderStyle {
    /// Brightness offset of the glyph relative to the torso.
    pub glyph_contrast: f64,
    /// Half-width of the uniform per-pixel noise.
    pub noise: f64,
    /// Chance that a visible person carries no glyph at all, so the image
    /// alone cannot tell the gender the annotators report.
    pub hidden_glyph_prob: f64,
}

impl Default for RenderStyle {
    fn default() -> Self {
        Self {
            glyph_contrast: 0.10,
            noise: 0.06,
            hidden_glyph_prob: 0.1,
        }
    }
}

pub(crate) struct Rendered {
    pub image: SceneImage,
    pub mask: PersonMask,
    pub objects: Vec<ObjectPlacement>,
    pub glyph_cell: Option<(usize, usize)>,
}

const CLOTHES: [[f64; 3]; 6] = [
    [0.20, 0.35, 0.65],
    [0.55, 0.20, 0.25],
    [0.25, 0.50, 0.30],
    [0.45, 0.45, 0.50],
    [0.60, 0.50, 0.25],
    [0.35, 0.25, 0.50],
];
const SKIN: [[f64; 3]; 4] = [
    [0.93, 0.78, 0.65],
    [0.80, 0.60, 0.45],
    [0.60, 0.42, 0.30],
    [0.40, 0.28, 0.20],
];

struct Canvas {
    px: Vec<f64>,
}

impl Canvas {
    fn set(&mut self, x: usize, y: usize, c: [f64; 3]) {
        let i = (y * IMAGE_SIZE + x) * 3;
        self.px[i..i + 3].copy_from_slice(&c);
    }

    fn fill_rect(&mut self, r: Rect, c: [f64; 3]) {
        for y in r.y..(r.y + r.h).min(IMAGE_SIZE) {
            for x in r.x..(r.x + r.w).min(IMAGE_SIZE) {
                self.set(x, y, c);
            }
        }
    }

    /// Fills pixels of `area` whose centre satisfies `inside(dx, dy)`, where
    /// (dx, dy) is measured from the area's top-left corner.
    fn fill_shape(&mut self, area: Rect, c: [f64; 3], inside: impl Fn(f64, f64) -> bool) {
        for y in area.y..area.y + area.h {
            for x in area.x..area.x + area.w {
                if inside((x - area.x) as f64 + 0.5, (y - area.y) as f64 + 0.5) {
                    self.set(x, y, c);
                }
            }
        }
    }
}

fn disc(cx: f64, cy: f64, r: f64) -> impl Fn(f64, f64) -> bool {
    move |x, y| (x - cx).powi(2) + (y - cy).powi(2) <= r * r
}

fn draw_object(canvas: &mut Canvas, name: &str, r: Rect) {
    match name {
        "snowboard" => canvas.fill_shape(r, [0.95, 0.55, 0.10], |x, y| (x - y).abs() < 2.6),
        "motorcycle" => {
            canvas.fill_rect(Rect { x: r.x + 3, y: r.y + 5, w: 10, h: 4 }, [0.85, 0.10, 0.10]);
            canvas.fill_shape(r, [0.08, 0.08, 0.08], disc(4.0, 12.0, 3.2));
            canvas.fill_shape(r, [0.08, 0.08, 0.08], disc(12.0, 12.0, 3.2));
        }
        "umbrella" => {
            canvas.fill_shape(r, [0.65, 0.15, 0.75], |x, y| y < 8.0 && (x - 8.0).powi(2) + (y - 8.0).powi(2) <= 49.0);
            canvas.fill_rect(Rect { x: r.x + 7, y: r.y + 8, w: 2, h: 7 }, [0.15, 0.10, 0.05]);
        }
        "kitchen" => {
            canvas.fill_rect(Rect { x: r.x + 1, y: r.y + 4, w: 14, h: 11 }, [0.88, 0.88, 0.85]);
            canvas.fill_rect(Rect { x: r.x + 3, y: r.y + 6, w: 4, h: 3 }, [0.15, 0.15, 0.15]);
            canvas.fill_rect(Rect { x: r.x + 9, y: r.y + 6, w: 4, h: 3 }, [0.15, 0.15, 0.15]);
        }
        "dog" => {
            canvas.fill_shape(r, [0.50, 0.30, 0.12], |x, y| ((x - 7.0) / 6.0).powi(2) + ((y - 10.0) / 3.5).powi(2) <= 1.0);
            canvas.fill_shape(r, [0.40, 0.22, 0.08], disc(12.5, 6.0, 2.8));
        }
        "laptop" => {
            canvas.fill_rect(Rect { x: r.x + 3, y: r.y + 2, w: 10, h: 8 }, [0.15, 0.35, 0.85]);
            canvas.fill_rect(Rect { x: r.x + 1, y: r.y + 10, w: 14, h: 3 }, [0.60, 0.60, 0.62]);
        }
        other => unreachable!("renderer has no drawing for {other}"),
    }
}

fn draw_glyph(canvas: &mut Canvas, evidence: Evidence, cell: Rect, colour: [f64; 3]) {
    match evidence {
        Evidence::Woman => canvas.fill_shape(cell, colour, disc(4.0, 4.0, 2.6)),
        Evidence::Man => canvas.fill_shape(cell, colour, |x, y| {
            (1.0..7.0).contains(&y) && (x - 4.0).abs() <= (y - 1.0) * 0.6
        }),
        Evidence::Occluded => {}
    }
}

/// Renders one scene. `gender` selects the glyph; `occluded` omits it.
pub(crate) fn render<R: Rng>(
    rng: &mut R,
    style: &RenderStyle,
    gender: Evidence,
    occluded: bool,
    objects: &[&str],
) -> Rendered {
    let mut canvas = Canvas {
        px: vec![0.0; IMAGE_SIZE * IMAGE_SIZE * 3],
    };
    let sky = [0.55 + 0.3 * rng.gen::<f64>(), 0.70 + 0.2 * rng.gen::<f64>(), 0.85 + 0.1 * rng.gen::<f64>()];
    let ground = [0.30 + 0.3 * rng.gen::<f64>(), 0.45 + 0.2 * rng.gen::<f64>(), 0.25 + 0.2 * rng.gen::<f64>()];
    let horizon = 28 + rng.gen_range(0..10);
    for y in 0..IMAGE_SIZE {
        for x in 0..IMAGE_SIZE {
            canvas.set(x, y, if y < horizon { sky } else { ground });
        }
    }

    let sx = rng.gen_range(0..SLOTS);
    let sy = rng.gen_range(0..SLOTS - 1);
    let (x0, y0) = (sx * SLOT, sy * SLOT);
    let clothes = CLOTHES[rng.gen_range(0..CLOTHES.len())];
    let skin = SKIN[rng.gen_range(0..SKIN.len())];

    let mut person = vec![false; IMAGE_SIZE * IMAGE_SIZE];
    // every 8-px cell the silhouette touches has a person pixel at its
    // top-left corner, so cell-level saliency maps point unambiguously
    let head = Rect { x: x0, y: y0, w: SLOT, h: CELL };
    let hair = Rect { x: x0, y: y0, w: SLOT, h: 2 };
    let torso = Rect { x: x0, y: y0 + CELL, w: SLOT, h: SLOT };
    let legs = [
        Rect { x: x0, y: y0 + 3 * CELL, w: CELL - 1, h: CELL },
        Rect { x: x0 + CELL, y: y0 + 3 * CELL, w: CELL, h: CELL },
    ];
    for y in head.y..head.y + head.h {
        for x in head.x..head.x + head.w {
            person[y * IMAGE_SIZE + x] = true;
        }
    }
    canvas.fill_rect(head, skin);
    canvas.fill_rect(hair, [0.18, 0.12, 0.08]);
    canvas.fill_rect(torso, clothes);
    for r in [torso, legs[0], legs[1]] {
        for y in r.y..r.y + r.h {
            for x in r.x..r.x + r.w {
                person[y * IMAGE_SIZE + x] = true;
            }
        }
    }
    for leg in legs {
        canvas.fill_rect(leg, [0.12, 0.12, 0.18]);
    }

    let hidden = rng.gen::<f64>() < style.hidden_glyph_prob;
    let glyph_cell = if occluded || hidden || gender == Evidence::Occluded {
        None
    } else {
        let gx = sx * 2 + rng.gen_range(0..2);
        let gy = sy * 2 + 1 + rng.gen_range(0..2);
        let shift = style.glyph_contrast;
        let colour = clothes.map(|c| (c + shift).clamp(0.0, 1.0));
        draw_glyph(&mut canvas, gender, Rect { x: gx * CELL, y: gy * CELL, w: CELL, h: CELL }, colour);
        Some((gx, gy))
    };

    let mut free: Vec<(usize, usize)> = (0..SLOTS)
        .flat_map(|y| (0..SLOTS).map(move |x| (x, y)))
        .filter(|&(x, y)| !(x == sx && (y == sy || y == sy + 1)))
        .collect();
    free.shuffle(rng);
    let placements: Vec<ObjectPlacement> = objects
        .iter()
        .zip(free)
        .map(|(name, (ox, oy))| {
            let rect = Rect { x: ox * SLOT, y: oy * SLOT, w: SLOT, h: SLOT };
            draw_object(&mut canvas, name, rect);
            ObjectPlacement {
                name: name.to_string(),
                rect,
            }
        })
        .collect();

    for v in canvas.px.iter_mut() {
        let noisy = *v + style.noise * (2.0 * rng.gen::<f64>() - 1.0);
        *v = (noisy.clamp(0.0, 1.0) * 255.0).round() / 255.0;
    }

    Rendered {
        image: SceneImage::from_raw(canvas.px).expect("canvas has image shape"),
        mask: PersonMask::from_person(person),
        objects: placements,
        glyph_cell,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn person_region_connected_and_objects_disjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let r = render(&mut rng, &RenderStyle::default(), Evidence::Woman, false, &["dog", "kitchen"]);
            assert!(r.mask.is_connected());
            for cy in 0..IMAGE_SIZE / CELL {
                for cx in 0..IMAGE_SIZE / CELL {
                    let touched = (0..CELL * CELL).any(|k| r.mask.is_person(cx * CELL + k % CELL, cy * CELL + k / CELL));
                    assert_eq!(touched, r.mask.is_person(cx * CELL, cy * CELL));
                }
            }
            if let Some((gx, gy)) = r.glyph_cell {
                assert!(r.mask.is_person(gx * CELL + 4, gy * CELL + 4));
            }
            for o in &r.objects {
                for y in o.rect.y..o.rect.y + o.rect.h {
                    for x in o.rect.x..o.rect.x + o.rect.w {
                        assert!(!r.mask.is_person(x, y));
                    }
                }
            }
        }
    }

    #[test]
    fn hidden_glyph_prob_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (p, want) in [(0.0, 200), (1.0, 0)] {
            let style = RenderStyle { hidden_glyph_prob: p, ..Default::default() };
            let shown = (0..200)
                .filter(|_| render(&mut rng, &style, Evidence::Man, false, &[]).glyph_cell.is_some())
                .count();
            assert_eq!(shown, want);
        }
    }
}
