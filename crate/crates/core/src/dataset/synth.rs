//! Procedural underwater scenes with exact ground truth.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::sprite::{self, Placement, SpriteKind};
use super::{AnnotatedFrame, DatasetError, Object, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaterStyle {
    pub top: [f32; 3],
    pub bottom: [f32; 3],
    /// Amplitude of the low-frequency haze.
    pub turbidity: f32,
}

impl Default for WaterStyle {
    fn default() -> Self {
        WaterStyle {
            top: [0.35, 0.7, 0.8],
            bottom: [0.05, 0.25, 0.45],
            turbidity: 0.08,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpriteSpec {
    pub kind: SpriteKind,
    /// Pixel position of the body center.
    pub center: (f64, f64),
    /// Pixels per meter.
    pub scale: f64,
    /// Radians, counter-clockwise on screen.
    pub orientation: f64,
    /// Hue of the suit or shell in `[0, 1)`.
    pub hue: f32,
    /// Limb pose jitter in `[0, 1]`.
    pub pose_jitter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecipe {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub water: WaterStyle,
    pub objects: Vec<SpriteSpec>,
    /// Standard deviation of additive Gaussian pixel noise.
    pub noise: f32,
    /// Fraction of each object's box covered by bubbles, in `[0, 1)`.
    pub occlusion: f32,
    pub grayscale: bool,
    /// Red-channel loss in `[0, 1]`.
    pub red_attenuation: f32,
}

impl SceneRecipe {
    /// An empty scene with default water.
    pub fn new(seed: u64, width: usize, height: usize) -> Self {
        SceneRecipe {
            seed,
            width,
            height,
            water: WaterStyle::default(),
            objects: Vec::new(),
            noise: 0.02,
            occlusion: 0.0,
            grayscale: false,
            red_attenuation: 0.3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(DatasetError::Recipe(msg));
        if self.width == 0 || self.height == 0 {
            return bad(format!("empty frame {}x{}", self.width, self.height));
        }
        if !(0.0..1.0).contains(&self.occlusion) {
            return bad(format!("occlusion fraction {} outside [0, 1)", self.occlusion));
        }
        if !(self.noise >= 0.0) || !(0.0..=1.0).contains(&self.red_attenuation) {
            return bad("noise must be >= 0 and red attenuation in [0, 1]".into());
        }
        for (i, o) in self.objects.iter().enumerate() {
            if !(o.scale > 0.0) || !o.scale.is_finite() {
                return bad(format!("object {i}: scale {} must be positive", o.scale));
            }
            let (hx, hy) = half_extent(o.kind, o.scale, o.orientation);
            let (cx, cy) = o.center;
            if cx + hx <= 0.0 || cy + hy <= 0.0 || cx - hx >= self.width as f64 || cy - hy >= self.height as f64 {
                return bad(format!("object {i} placed fully outside the frame"));
            }
        }
        Ok(())
    }
}

/// Half-size of the axis-aligned rectangle around a rotated body.
pub fn half_extent(kind: SpriteKind, scale: f64, orientation: f64) -> (f64, f64) {
    let (w, h) = kind.extent();
    let (c, s) = (orientation.cos().abs(), orientation.sin().abs());
    (0.5 * scale * (w * c + h * s), 0.5 * scale * (w * s + h * c))
}

pub fn hue_to_rgb(hue: f32) -> [f32; 3] {
    let (s, v) = (0.8f32, 0.9f32);
    let h = hue.rem_euclid(1.0) * 6.0;
    let f = h - h.floor();
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match h as u32 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Vertical gradient plus bilinear value noise on a coarse grid.
pub fn render_water(width: usize, height: usize, style: &WaterStyle, rng: &mut ChaCha8Rng) -> Tensor<f32> {
    const GRID: usize = 5;
    let haze: Vec<f32> = (0..GRID * GRID).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    let tint = [0.7f32, 1.0, 0.85];
    let mut img = Tensor::zeros(vec![height, width, 3]);
    let data = img.data_mut();
    for y in 0..height {
        let t = if height > 1 { y as f32 / (height - 1) as f32 } else { 0.0 };
        let gy = t * (GRID - 1) as f32;
        let (y0, fy) = ((gy as usize).min(GRID - 2), gy - (gy as usize).min(GRID - 2) as f32);
        for x in 0..width {
            let gx = if width > 1 { x as f32 / (width - 1) as f32 } else { 0.0 } * (GRID - 1) as f32;
            let (x0, fx) = ((gx as usize).min(GRID - 2), gx - (gx as usize).min(GRID - 2) as f32);
            let at = |yy: usize, xx: usize| haze[yy * GRID + xx];
            let n = at(y0, x0) * (1.0 - fx) * (1.0 - fy)
                + at(y0, x0 + 1) * fx * (1.0 - fy)
                + at(y0 + 1, x0) * (1.0 - fx) * fy
                + at(y0 + 1, x0 + 1) * fx * fy;
            let o = (y * width + x) * 3;
            for c in 0..3 {
                data[o + c] = style.top[c] * (1.0 - t) + style.bottom[c] * t + style.turbidity * n * tint[c];
            }
        }
    }
    img
}

fn occlude(img: &mut Tensor<f32>, b: &crate::BBox, fraction: f32, rng: &mut ChaCha8Rng) {
    let (h, w) = (img.dims()[0], img.dims()[1]);
    let (x0, y0) = (b.xmin.max(0.0) as usize, b.ymin.max(0.0) as usize);
    let (x1, y1) = ((b.xmax as usize).min(w), (b.ymax as usize).min(h));
    if x1 <= x0 || y1 <= y0 {
        return;
    }
    let area = (x1 - x0) * (y1 - y0);
    let mut covered = vec![false; area];
    let mut count = 0usize;
    let target = (fraction as f64 * area as f64).ceil() as usize;
    let r_max = ((x1 - x0).min(y1 - y0) as f64 / 4.0).max(1.5);
    let bubble = [0.85f32, 0.93, 0.97];
    let data = img.data_mut();
    for _ in 0..10_000 {
        if count >= target {
            break;
        }
        let cx = rng.gen_range(x0 as f64..x1 as f64);
        let cy = rng.gen_range(y0 as f64..y1 as f64);
        let r = rng.gen_range(1.0..=r_max);
        let (bx0, bx1) = (((cx - r).max(x0 as f64)) as usize, ((cx + r).ceil() as usize).min(x1));
        let (by0, by1) = (((cy - r).max(y0 as f64)) as usize, ((cy + r).ceil() as usize).min(y1));
        for y in by0..by1 {
            for x in bx0..bx1 {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                if dx * dx + dy * dy > r * r {
                    continue;
                }
                let k = (y - y0) * (x1 - x0) + (x - x0);
                if !covered[k] {
                    covered[k] = true;
                    count += 1;
                }
                let o = (y * w + x) * 3;
                for c in 0..3 {
                    data[o + c] = 0.3 * data[o + c] + 0.7 * bubble[c];
                }
            }
        }
    }
}

/// Applies red loss, pixel noise and the grayscale flag, then clamps to `[0, 1]`.
pub fn finish(img: &mut Tensor<f32>, recipe: &SceneRecipe, rng: &mut ChaCha8Rng) {
    let noise = (recipe.noise > 0.0).then(|| Normal::new(0.0f32, recipe.noise).expect("noise checked"));
    for px in img.data_mut().chunks_exact_mut(3) {
        px[0] *= 1.0 - recipe.red_attenuation;
        if let Some(n) = &noise {
            for v in px.iter_mut() {
                *v += n.sample(rng);
            }
        }
        for v in px.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        if recipe.grayscale {
            let l = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
            px.fill(l);
        }
    }
}

/// Renders a recipe. Frame bytes depend on nothing but the recipe.
pub fn generate_scene(recipe: &SceneRecipe) -> Result<AnnotatedFrame> {
    recipe.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(recipe.seed);
    let mut img = render_water(recipe.width, recipe.height, &recipe.water, &mut rng);
    let mut objects = Vec::with_capacity(recipe.objects.len());
    for (i, spec) in recipe.objects.iter().enumerate() {
        let color = hue_to_rgb(spec.hue);
        let s = match spec.kind {
            SpriteKind::Diver => sprite::diver(&mut rng, spec.pose_jitter, color),
            SpriteKind::Robot => sprite::robot(color),
        };
        let placement = Placement {
            center: spec.center,
            scale: (spec.scale, spec.scale),
            rotation: spec.orientation,
        };
        let bbox =
            sprite::draw(&mut img, &s, &placement).ok_or_else(|| DatasetError::Recipe(format!("object {i} has no visible pixels")))?;
        objects.push(Object {
            label: spec.kind.label().to_string(),
            bbox,
        });
    }
    if recipe.occlusion > 0.0 {
        for o in &objects {
            occlude(&mut img, &o.bbox, recipe.occlusion, &mut rng);
        }
    }
    finish(&mut img, recipe, &mut rng);
    Ok(AnnotatedFrame {
        image: img,
        objects,
        source_id: format!("synthetic-{:016x}", recipe.seed),
    })
}

/// Ranges from which random recipes are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneStyle {
    pub width: usize,
    pub height: usize,
    /// Object centers fall in the frame shrunk by this fraction on every side.
    pub inset: f64,
    /// Range of the larger body dimension in pixels.
    pub object_size: (f64, f64),
    pub max_rotation: f64,
    pub pose_jitter: f64,
    pub noise: (f32, f32),
    pub turbidity: (f32, f32),
    pub occlusion: (f32, f32),
    pub red_attenuation: (f32, f32),
    pub grayscale_probability: f64,
    /// Minimum center distance between objects as a fraction of the frame width.
    pub min_separation: f64,
}

impl Default for SceneStyle {
    fn default() -> Self {
        SceneStyle {
            width: 224,
            height: 224,
            inset: 0.15,
            object_size: (56.0, 190.0),
            max_rotation: 0.35,
            pose_jitter: 1.0,
            noise: (0.0, 0.03),
            turbidity: (0.0, 0.12),
            occlusion: (0.0, 0.15),
            red_attenuation: (0.0, 0.6),
            grayscale_probability: 0.1,
            min_separation: 0.25,
        }
    }
}

fn range<T: rand::distributions::uniform::SampleUniform + PartialOrd + Copy>(rng: &mut ChaCha8Rng, r: (T, T)) -> T {
    if r.0 < r.1 {
        rng.gen_range(r.0..=r.1)
    } else {
        r.0
    }
}

impl SceneStyle {
    /// Draws a recipe containing one object per entry of `kinds`.
    ///
    /// Centers are uniform over the inset region; each object's size is then
    /// capped so it stays inside the frame and clear of earlier objects.
    pub fn recipe(&self, seed: u64, kinds: &[SpriteKind]) -> Result<SceneRecipe> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ce4_e5ee_d000_0000);
        let mut recipe = SceneRecipe::new(seed, self.width, self.height);
        let t = rng.gen_range(0.0f32..=1.0);
        let deep = [0.02f32, 0.15 + 0.15 * t, 0.3 + 0.2 * t];
        recipe.water = WaterStyle {
            top: [0.25 + 0.2 * t, 0.55 + 0.2 * t, 0.65 + 0.2 * (1.0 - t)],
            bottom: deep,
            turbidity: range(&mut rng, self.turbidity),
        };
        recipe.noise = range(&mut rng, self.noise);
        recipe.occlusion = range(&mut rng, self.occlusion);
        recipe.red_attenuation = range(&mut rng, self.red_attenuation);
        recipe.grayscale = rng.gen_bool(self.grayscale_probability.clamp(0.0, 1.0));

        let (w, h) = (self.width as f64, self.height as f64);
        let (lo, hi) = self.object_size;
        let mut boxes: Vec<(f64, f64, f64, f64)> = Vec::new();
        for &kind in kinds {
            let (ew, eh) = kind.extent();
            let body = ew.max(eh);
            let mut placed = None;
            for _ in 0..2000 {
                let cx = rng.gen_range(self.inset * w..=(1.0 - self.inset) * w);
                let cy = rng.gen_range(self.inset * h..=(1.0 - self.inset) * h);
                if boxes
                    .iter()
                    .any(|&(ox, oy, _, _)| ((ox - cx).powi(2) + (oy - cy).powi(2)).sqrt() < self.min_separation * w)
                {
                    continue;
                }
                let orientation = range(&mut rng, (-self.max_rotation, self.max_rotation));
                let (ux, uy) = half_extent(kind, 1.0, orientation);
                // largest scale that keeps the body inside the frame and off other objects
                let mut cap = (cx / ux).min((w - cx) / ux).min(cy / uy).min((h - cy) / uy);
                for &(ox, oy, ohx, ohy) in &boxes {
                    let sx = ((ox - cx).abs() - ohx) / ux;
                    let sy = ((oy - cy).abs() - ohy) / uy;
                    cap = cap.min(sx.max(sy));
                }
                let max_scale = (hi / body).min(cap);
                let min_scale = lo / body;
                if max_scale < min_scale {
                    continue;
                }
                let scale = rng.gen_range(min_scale..=max_scale);
                placed = Some(SpriteSpec {
                    kind,
                    center: (cx, cy),
                    scale,
                    orientation,
                    hue: rng.gen_range(0.0..1.0),
                    pose_jitter: self.pose_jitter,
                });
                boxes.push((cx, cy, ux * scale, uy * scale));
                break;
            }
            let spec = placed.ok_or_else(|| DatasetError::Recipe(format!("no room for {} objects", kinds.len())))?;
            recipe.objects.push(spec);
        }
        Ok(recipe)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let style = SceneStyle::default();
        let r = style.recipe(42, &[SpriteKind::Diver]).unwrap();
        assert_eq!(generate_scene(&r).unwrap(), generate_scene(&r).unwrap());
        let other = style.recipe(43, &[SpriteKind::Diver]).unwrap();
        assert_ne!(generate_scene(&r).unwrap().image, generate_scene(&other).unwrap().image);
    }

    #[test]
    fn grayscale_means_equal_channels() {
        let mut r = SceneStyle::default().recipe(7, &[SpriteKind::Diver]).unwrap();
        r.grayscale = true;
        let f = generate_scene(&r).unwrap();
        assert!(f.image.data().chunks_exact(3).all(|p| p[0] == p[1] && p[1] == p[2]));
    }

    #[test]
    fn recipe_errors() {
        let mut r = SceneRecipe::new(1, 64, 64);
        r.objects.push(SpriteSpec {
            kind: SpriteKind::Diver,
            center: (-200.0, 10.0),
            scale: 20.0,
            orientation: 0.0,
            hue: 0.1,
            pose_jitter: 0.0,
        });
        assert!(matches!(generate_scene(&r), Err(DatasetError::Recipe(m)) if m.contains("outside")));
        r.objects[0].center = (32.0, 32.0);
        r.objects[0].scale = 0.0;
        assert!(generate_scene(&r).is_err());
        r.objects[0].scale = 20.0;
        r.occlusion = 1.0;
        assert!(generate_scene(&r).is_err());
    }

    #[test]
    fn boxes_bound_the_sprite_tightly() {
        // rendered without noise, every pixel that differs from the bare water lies in the box,
        // and each box edge touches at least one such pixel
        let style = SceneStyle {
            noise: (0.0, 0.0),
            occlusion: (0.0, 0.0),
            ..SceneStyle::default()
        };
        for seed in 0..5 {
            let r = style.recipe(seed, &[SpriteKind::Diver, SpriteKind::Robot]).unwrap();
            let f = generate_scene(&r).unwrap();
            let bare = generate_scene(&SceneRecipe {
                objects: vec![],
                ..r.clone()
            })
            .unwrap();
            let w = r.width;
            let mut changed = Vec::new();
            for (i, (a, b)) in f.image.data().chunks_exact(3).zip(bare.image.data().chunks_exact(3)).enumerate() {
                if a != b {
                    changed.push(((i % w) as f64, (i / w) as f64));
                }
            }
            for &(x, y) in &changed {
                assert!(f
                    .objects
                    .iter()
                    .any(|o| x >= o.bbox.xmin && x < o.bbox.xmax && y >= o.bbox.ymin && y < o.bbox.ymax));
            }
            for o in &f.objects {
                let inside: Vec<_> = changed
                    .iter()
                    .filter(|&&(x, y)| x >= o.bbox.xmin && x < o.bbox.xmax && y >= o.bbox.ymin && y < o.bbox.ymax)
                    .collect();
                assert!(inside.iter().any(|p| p.0 == o.bbox.xmin));
                assert!(inside.iter().any(|p| p.0 == o.bbox.xmax - 1.0));
                assert!(inside.iter().any(|p| p.1 == o.bbox.ymin));
                assert!(inside.iter().any(|p| p.1 == o.bbox.ymax - 1.0));
            }
        }
    }

    #[test]
    fn two_objects_respect_separation() {
        let style = SceneStyle {
            object_size: (48.0, 110.0),
            ..SceneStyle::default()
        };
        for seed in 0..50 {
            let r = style.recipe(seed, &[SpriteKind::Diver, SpriteKind::Diver]).unwrap();
            let (a, b) = (r.objects[0].center, r.objects[1].center);
            assert!(((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt() >= 0.25 * 224.0);
            let f = generate_scene(&r).unwrap();
            assert_eq!(f.objects[0].bbox.intersection_area(&f.objects[1].bbox), 0.0);
        }
    }
}
