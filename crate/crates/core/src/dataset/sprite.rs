//! Diver and robot silhouettes built from capsules and ellipses.
//!
//! Shapes live in a body frame measured in meters, x right and y down, with
//! the origin at the body center. A diver spans exactly `[-0.25, 0.25] x
//! [-0.9, 0.9]` (0.5 m x 1.8 m), a robot `[-0.5, 0.5] x [-0.3, 0.3]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bbox::BBox;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SpriteKind {
    Diver,
    Robot,
}

impl SpriteKind {
    pub fn label(self) -> &'static str {
        match self {
            SpriteKind::Diver => "diver",
            SpriteKind::Robot => "robot",
        }
    }

    /// Body extent `(width, height)` in meters.
    pub fn extent(self) -> (f64, f64) {
        match self {
            SpriteKind::Diver => (0.5, 1.8),
            SpriteKind::Robot => (1.0, 0.6),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Capsule { a: (f64, f64), b: (f64, f64), r: f64 },
    Ellipse { c: (f64, f64), rx: f64, ry: f64 },
    Rect { min: (f64, f64), max: (f64, f64) },
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Capsule { a, b, r } => {
                let (dx, dy) = (b.0 - a.0, b.1 - a.1);
                let len2 = dx * dx + dy * dy;
                let t = if len2 > 0.0 {
                    (((x - a.0) * dx + (y - a.1) * dy) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let (px, py) = (a.0 + t * dx - x, a.1 + t * dy - y);
                px * px + py * py <= r * r
            }
            Shape::Ellipse { c, rx, ry } => {
                let (u, v) = ((x - c.0) / rx, (y - c.1) / ry);
                u * u + v * v <= 1.0
            }
            Shape::Rect { min, max } => x >= min.0 && x <= max.0 && y >= min.1 && y <= max.1,
        }
    }
}

/// A posed silhouette with per-part colors.
#[derive(Debug, Clone)]
pub struct Sprite {
    pub kind: SpriteKind,
    parts: Vec<(Shape, [f32; 3])>,
}

/// Limb pose jitter drawn from `rng`; 0 gives the neutral pose.
pub fn diver<R: Rng>(rng: &mut R, jitter: f64, suit: [f32; 3]) -> Sprite {
    let mut j = |scale: f64| {
        if jitter > 0.0 {
            rng.gen_range(-1.0..=1.0) * jitter * scale
        } else {
            0.0
        }
    };
    let dark = [0.08, 0.08, 0.1];
    let fins = [0.05, 0.05, 0.05];
    let mask = [0.75, 0.6, 0.5];
    let tank = [0.45, 0.47, 0.5];
    let mut parts = Vec::with_capacity(12);
    // head touches the top edge, hands the side edges, fin tips the bottom edge
    parts.push((
        Shape::Ellipse {
            c: (0.0, -0.78),
            rx: 0.1,
            ry: 0.12,
        },
        mask,
    ));
    parts.push((
        Shape::Capsule {
            a: (0.0, -0.6),
            b: (0.0, 0.12),
            r: 0.13,
        },
        suit,
    ));
    parts.push((
        Shape::Capsule {
            a: (0.0, -0.52),
            b: (0.0, -0.08),
            r: 0.07,
        },
        tank,
    ));
    for side in [-1.0, 1.0] {
        let hand_y = -0.4 + j(0.25);
        parts.push((
            Shape::Capsule {
                a: (side * 0.1, -0.55),
                b: (side * 0.21, hand_y),
                r: 0.04,
            },
            suit,
        ));
        let ankle = (side * (0.09 + j(0.04).abs()), 0.6 + j(0.05));
        parts.push((
            Shape::Capsule {
                a: (side * 0.07, 0.1),
                b: ankle,
                r: 0.06,
            },
            dark,
        ));
        let tip = (side * (0.06 + j(0.1).abs()).min(0.21), 0.86);
        parts.push((Shape::Capsule { a: ankle, b: tip, r: 0.04 }, fins));
    }
    Sprite {
        kind: SpriteKind::Diver,
        parts,
    }
}

pub fn robot(shell: [f32; 3]) -> Sprite {
    let fin = [0.1, 0.1, 0.12];
    let mut parts = vec![
        (
            Shape::Rect {
                min: (-0.36, -0.16),
                max: (0.36, 0.16),
            },
            shell,
        ),
        (
            Shape::Ellipse {
                c: (0.0, 0.0),
                rx: 0.08,
                ry: 0.08,
            },
            [0.05, 0.05, 0.2],
        ),
    ];
    for x in [-0.3, 0.0, 0.3] {
        for side in [-1.0, 1.0] {
            parts.push((
                Shape::Capsule {
                    a: (x, side * 0.16),
                    b: (x + 0.1 * x.signum(), side * 0.26),
                    r: 0.04,
                },
                fin,
            ));
        }
    }
    // front/back thruster caps reach the side edges
    parts.push((
        Shape::Capsule {
            a: (-0.44, 0.0),
            b: (0.44, 0.0),
            r: 0.06,
        },
        shell,
    ));
    Sprite {
        kind: SpriteKind::Robot,
        parts,
    }
}

impl Sprite {
    fn color_at(&self, x: f64, y: f64) -> Option<[f32; 3]> {
        // later parts are drawn on top
        self.parts.iter().rev().find(|(s, _)| s.contains(x, y)).map(|(_, c)| *c)
    }
}

/// Where and how a sprite lands on the canvas.
#[derive(Debug, Clone, Copy)]
pub struct Placement {
    /// Canvas position of the body origin, in pixels.
    pub center: (f64, f64),
    /// Pixels per meter along the body's x and y axes.
    pub scale: (f64, f64),
    /// Counter-clockwise rotation in radians.
    pub rotation: f64,
}

impl Placement {
    /// Maps the sprite's body extent exactly onto `rect` (no rotation).
    pub fn fill(kind: SpriteKind, rect: &BBox) -> Self {
        let (w, h) = kind.extent();
        Placement {
            center: rect.center(),
            scale: (rect.width() / w, rect.height() / h),
            rotation: 0.0,
        }
    }
}

/// Rasterizes `sprite` onto an `[H, W, 3]` canvas by sampling pixel centers.
/// Returns the tight bounds of the pixels written, or `None` if none were.
pub fn draw(canvas: &mut Tensor<f32>, sprite: &Sprite, placement: &Placement) -> Option<BBox> {
    let (h, w) = (canvas.dims()[0], canvas.dims()[1]);
    let (ew, eh) = sprite.kind.extent();
    let (sx, sy) = placement.scale;
    let (cos, sin) = (placement.rotation.cos(), placement.rotation.sin());
    // conservative canvas-space bound of the rotated body rectangle
    let hx = 0.5 * ew * sx;
    let hy = 0.5 * eh * sy;
    let rx = hx * cos.abs() + hy * sin.abs();
    let ry = hx * sin.abs() + hy * cos.abs();
    let (cx, cy) = placement.center;
    let x0 = ((cx - rx).floor().max(0.0)) as usize;
    let y0 = ((cy - ry).floor().max(0.0)) as usize;
    let x1 = ((cx + rx).ceil().min(w as f64)).max(0.0) as usize;
    let y1 = ((cy + ry).ceil().min(h as f64)).max(0.0) as usize;
    let mut bounds: Option<(usize, usize, usize, usize)> = None;
    let data = canvas.data_mut();
    for py in y0..y1 {
        for px in x0..x1 {
            let dx = px as f64 + 0.5 - cx;
            let dy = py as f64 + 0.5 - cy;
            // canvas y points down, so a counter-clockwise turn on screen is
            // the inverse of the usual rotation
            let bx = (dx * cos - dy * sin) / sx;
            let by = (dx * sin + dy * cos) / sy;
            if bx.abs() > ew / 2.0 || by.abs() > eh / 2.0 {
                continue;
            }
            if let Some(color) = sprite.color_at(bx, by) {
                let o = (py * w + px) * 3;
                data[o..o + 3].copy_from_slice(&color);
                bounds = Some(match bounds {
                    None => (px, py, px, py),
                    Some((a, b, c, d)) => (a.min(px), b.min(py), c.max(px), d.max(py)),
                });
            }
        }
    }
    bounds.map(|(a, b, c, d)| BBox::new(a as f64, b as f64, (c + 1) as f64, (d + 1) as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn filled_diver_matches_rect() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for rect in [BBox::new(50.0, 20.0, 90.0, 164.0), BBox::new(100.3, 7.7, 131.9, 121.2)] {
            let mut canvas = Tensor::zeros(vec![224, 224, 3]);
            let s = diver(&mut rng, 1.0, [0.9, 0.2, 0.1]);
            let drawn = draw(&mut canvas, &s, &Placement::fill(SpriteKind::Diver, &rect)).unwrap();
            for (a, b) in [
                (drawn.xmin, rect.xmin),
                (drawn.ymin, rect.ymin),
                (drawn.xmax, rect.xmax),
                (drawn.ymax, rect.ymax),
            ] {
                assert!((a - b).abs() <= 1.0, "{drawn:?} vs {rect:?}");
            }
        }
    }

    #[test]
    fn filled_robot_matches_rect() {
        let rect = BBox::new(30.0, 60.0, 150.0, 132.0);
        let mut canvas = Tensor::zeros(vec![224, 224, 3]);
        let drawn = draw(&mut canvas, &robot([0.9, 0.8, 0.1]), &Placement::fill(SpriteKind::Robot, &rect)).unwrap();
        assert!((drawn.xmin - rect.xmin).abs() <= 1.0 && (drawn.xmax - rect.xmax).abs() <= 1.0);
        assert!((drawn.ymin - rect.ymin).abs() <= 1.0 && (drawn.ymax - rect.ymax).abs() <= 1.0);
    }

    #[test]
    fn off_canvas_draws_nothing() {
        let mut canvas = Tensor::zeros(vec![32, 32, 3]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let p = Placement {
            center: (-100.0, 10.0),
            scale: (20.0, 20.0),
            rotation: 0.3,
        };
        assert!(draw(&mut canvas, &diver(&mut rng, 0.0, [1.0; 3]), &p).is_none());
        assert!(canvas.data().iter().all(|&v| v == 0.0));
    }
}
