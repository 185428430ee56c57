use serde::{Deserialize, Serialize};

use crate::bbox::BBox;

/// Class index reserved for "no target".
pub const BACKGROUND: usize = 0;

/// Display name of a class index.
pub fn class_label(class_id: usize) -> String {
    match class_id {
        0 => "background".to_string(),
        1 => "diver".to_string(),
        2 => "robot".to_string(),
        k => format!("class{k}"),
    }
}

/// Inverse of [`class_label`]; unknown names map to `None`.
pub fn class_id(label: &str) -> Option<usize> {
    match label {
        "background" => Some(0),
        "diver" => Some(1),
        "robot" => Some(2),
        other => other.strip_prefix("class").and_then(|k| k.parse().ok()),
    }
}

/// One detected object in image pixel coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class_id: usize,
    pub label: String,
    pub confidence: f64,
    pub bbox: BBox,
}

impl Detection {
    pub fn new(class_id: usize, confidence: f64, bbox: BBox) -> Self {
        Detection {
            class_id,
            label: class_label(class_id),
            confidence,
            bbox,
        }
    }
}

/// Box as `(cx, cy, w, h)`, each normalized by the image size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxEncoding {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BoxEncoding {
    pub fn encode(b: &BBox, image_w: f64, image_h: f64) -> Self {
        let (cx, cy) = b.center();
        BoxEncoding {
            cx: cx / image_w,
            cy: cy / image_h,
            w: b.width() / image_w,
            h: b.height() / image_h,
        }
    }

    /// Pixel box with no clamping.
    pub fn decode(&self, image_w: f64, image_h: f64) -> BBox {
        BBox::from_center(self.cx * image_w, self.cy * image_h, self.w * image_w, self.h * image_h)
    }

    /// Pixel box forced inside the frame with at least one pixel of extent.
    pub fn decode_clamped(&self, image_w: f64, image_h: f64) -> BBox {
        let cx = self.cx.clamp(0.0, 1.0) * image_w;
        let cy = self.cy.clamp(0.0, 1.0) * image_h;
        let w = self.w.clamp(0.0, 1.0) * image_w;
        let h = self.h.clamp(0.0, 1.0) * image_h;
        let xmin = (cx - w / 2.0).clamp(0.0, image_w - 1.0);
        let ymin = (cy - h / 2.0).clamp(0.0, image_h - 1.0);
        let xmax = (cx + w / 2.0).clamp(xmin + 1.0, image_w);
        let ymax = (cy + h / 2.0).clamp(ymin + 1.0, image_h);
        BBox::new(xmin, ymin, xmax, ymax)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        BoxEncoding {
            cx: v[0],
            cy: v[1],
            w: v[2],
            h: v[3],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn labels_round_trip() {
        for k in 0..6 {
            assert_eq!(class_id(&class_label(k)), Some(k));
        }
        assert_eq!(class_id("octopus"), None);
    }

    #[test]
    fn clamped_decode_stays_inside() {
        let wild = BoxEncoding {
            cx: 1.4,
            cy: -0.3,
            w: 2.0,
            h: -0.1,
        };
        let b = wild.decode_clamped(224.0, 224.0);
        assert!(b.is_valid() && b.within(224.0, 224.0));
    }

    proptest! {
        #[test]
        fn encode_decode_within_half_pixel(x0 in 0.0..200.0f64, y0 in 0.0..200.0f64, w in 1.0..24.0f64, h in 1.0..24.0f64) {
            let b = BBox::new(x0, y0, x0 + w, y0 + h);
            let d = BoxEncoding::encode(&b, 224.0, 224.0).decode(224.0, 224.0);
            prop_assert!((d.xmin - b.xmin).abs() < 0.5 && (d.xmax - b.xmax).abs() < 0.5);
            prop_assert!((d.ymin - b.ymin).abs() < 0.5 && (d.ymax - b.ymax).abs() < 0.5);
        }
    }
}
