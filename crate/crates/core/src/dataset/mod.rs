//! Annotated frames: VOC/PPM ingestion and synthetic scene generation.

mod ppm;
pub mod sprite;
mod synth;
mod voc;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ppm::{decode_ppm, encode_ppm, from_rgb8, to_rgb8};
pub use sprite::SpriteKind;
pub use synth::{finish, generate_scene, half_extent, hue_to_rgb, render_water, SceneRecipe, SceneStyle, SpriteSpec, WaterStyle};
pub use voc::{parse_voc_xml, write_voc_xml, FrameMeta};

use crate::bbox::BBox;
use crate::detection::{class_id, BoxEncoding, BACKGROUND};
use crate::model::TrainingSample;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("annotation: {0}")]
    Annotation(String),
    #[error("image: {0}")]
    Image(String),
    #[error("recipe: {0}")]
    Recipe(String),
    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },
    #[error("unknown class label {0:?}")]
    UnknownLabel(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, DatasetError>;

/// One labeled object in pixel coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Object {
    pub label: String,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedFrame {
    /// `[H, W, 3]`, values in `[0, 1]`.
    pub image: Tensor<f32>,
    pub objects: Vec<Object>,
    pub source_id: String,
}

impl AnnotatedFrame {
    pub fn width(&self) -> usize {
        self.image.dims()[1]
    }

    pub fn height(&self) -> usize {
        self.image.dims()[0]
    }

    /// Checks the frame invariants: labels nonempty, boxes inside the image.
    pub fn validate(&self) -> Result<()> {
        let (w, h) = (self.width() as f64, self.height() as f64);
        for o in &self.objects {
            if o.label.is_empty() {
                return Err(DatasetError::Annotation(format!("{}: empty label", self.source_id)));
            }
            if !o.bbox.is_valid() || !o.bbox.within(w, h) {
                return Err(DatasetError::Annotation(format!(
                    "{}: box {:?} outside {w}x{h}",
                    self.source_id, o.bbox
                )));
            }
        }
        Ok(())
    }

    pub fn meta(&self, filename: Option<String>) -> FrameMeta {
        FrameMeta {
            filename,
            width: self.width(),
            height: self.height(),
            depth: 3,
            objects: self.objects.clone(),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Loads a PPM image and its VOC annotation.
pub fn load_frame(image_path: &Path, xml_path: &Path) -> Result<AnnotatedFrame> {
    let bytes = fs::read(image_path).map_err(io_err(image_path))?;
    let image = decode_ppm(&bytes)?;
    let xml = fs::read_to_string(xml_path).map_err(io_err(xml_path))?;
    let meta = parse_voc_xml(&xml)?;
    if (meta.width, meta.height) != (image.dims()[1], image.dims()[0]) {
        return Err(DatasetError::Annotation(format!(
            "{}: annotation says {}x{}, image is {}x{}",
            xml_path.display(),
            meta.width,
            meta.height,
            image.dims()[1],
            image.dims()[0]
        )));
    }
    Ok(AnnotatedFrame {
        image,
        objects: meta.objects,
        source_id: image_path
            .file_stem()
            .map_or_else(|| image_path.display().to_string(), |s| s.to_string_lossy().into_owned()),
    })
}

/// Reads `image-path TAB xml-path` lines. Relative paths are resolved
/// against the manifest's directory; blank lines and `#` comments are skipped.
pub fn read_manifest(path: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (img, xml) = line.split_once('\t').ok_or_else(|| DatasetError::Manifest {
            line: i + 1,
            msg: "expected image-path<TAB>xml-path".into(),
        })?;
        out.push((base.join(img.trim()), base.join(xml.trim())));
    }
    Ok(out)
}

pub fn load_manifest(path: &Path) -> Result<Vec<AnnotatedFrame>> {
    read_manifest(path)?.iter().map(|(i, x)| load_frame(i, x)).collect()
}

/// Writes frames as `NNNNN.ppm` + `NNNNN.xml` pairs and a `manifest.tsv`.
/// Returns the manifest path.
pub fn write_dataset(dir: &Path, frames: &[AnnotatedFrame]) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut manifest = String::new();
    for (i, f) in frames.iter().enumerate() {
        let img_name = format!("{i:05}.ppm");
        let xml_name = format!("{i:05}.xml");
        let img_path = dir.join(&img_name);
        fs::write(&img_path, encode_ppm(&f.image)?).map_err(io_err(&img_path))?;
        let xml_path = dir.join(&xml_name);
        fs::write(&xml_path, write_voc_xml(&f.meta(Some(img_name.clone())))).map_err(io_err(&xml_path))?;
        manifest.push_str(&format!("{img_name}\t{xml_name}\n"));
    }
    let path = dir.join("manifest.tsv");
    fs::write(&path, manifest).map_err(io_err(&path))?;
    Ok(path)
}

fn split_seed(master: u64, split: u64, index: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    // `mix` is a bijection, so distinct (split, index) keys give distinct seeds
    mix(master ^ mix((split << 62) | index))
}

/// Deterministic train/test split of synthetic frames.
///
/// Frame `i` of each split shows class `class_set[i % len]`; `"background"`
/// means an empty scene. Train and test draw from disjoint seed ranges.
pub fn build_dataset(
    n_train: usize,
    n_test: usize,
    class_set: &[&str],
    master_seed: u64,
    style: &SceneStyle,
) -> Result<(Vec<AnnotatedFrame>, Vec<AnnotatedFrame>)> {
    if n_train == 0 || n_test == 0 {
        return Err(DatasetError::Recipe("train and test sizes must be positive".into()));
    }
    if class_set.is_empty() {
        return Err(DatasetError::Recipe("empty class set".into()));
    }
    let kinds: Vec<Option<SpriteKind>> = class_set
        .iter()
        .map(|&l| match l {
            "background" => Ok(None),
            "diver" => Ok(Some(SpriteKind::Diver)),
            "robot" => Ok(Some(SpriteKind::Robot)),
            other => Err(DatasetError::UnknownLabel(other.to_string())),
        })
        .collect::<Result<_>>()?;
    let split = |tag: u64, n: usize, name: &str| -> Result<Vec<AnnotatedFrame>> {
        (0..n)
            .map(|i| {
                let seed = split_seed(master_seed, tag, i as u64);
                let objects: Vec<SpriteKind> = kinds[i % kinds.len()].into_iter().collect();
                let mut frame = generate_scene(&style.recipe(seed, &objects)?)?;
                frame.source_id = format!("{name}-{i:05}");
                Ok(frame)
            })
            .collect()
    };
    Ok((split(0, n_train, "train")?, split(1, n_test, "test")?))
}

/// Bilinear resize with half-pixel centers; same-size input is copied.
pub fn resize_bilinear(image: &Tensor<f32>, out_h: usize, out_w: usize) -> Tensor<f32> {
    let (h, w, c) = (image.dims()[0], image.dims()[1], image.dims()[2]);
    if (h, w) == (out_h, out_w) {
        return image.clone();
    }
    let src = image.data();
    let (sy, sx) = (h as f32 / out_h as f32, w as f32 / out_w as f32);
    let coord = |o: usize, scale: f32, n: usize| {
        let p = ((o as f32 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f32);
        let i0 = p.floor() as usize;
        (i0, (i0 + 1).min(n - 1), p - i0 as f32)
    };
    let mut out = Vec::with_capacity(out_h * out_w * c);
    for y in 0..out_h {
        let (y0, y1, fy) = coord(y, sy, h);
        for x in 0..out_w {
            let (x0, x1, fx) = coord(x, sx, w);
            for k in 0..c {
                let at = |yy: usize, xx: usize| src[(yy * w + xx) * c + k];
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Tensor::new(vec![out_h, out_w, c], out).expect("sized above")
}

/// Network input for a frame: resized to `size` x `size`, with the class and
/// normalized box of the first object labeled `target` (any label if `None`).
/// Frames without a matching object become background samples.
pub fn to_training_sample(frame: &AnnotatedFrame, target: Option<&str>, size: usize) -> Result<TrainingSample<f32>> {
    let image = resize_bilinear(&frame.image, size, size);
    let object = frame.objects.iter().find(|o| target.map_or(true, |t| o.label == t));
    let Some(o) = object else {
        return Ok(TrainingSample {
            image,
            class: BACKGROUND,
            target: None,
            regions: Vec::new(),
        });
    };
    let class = class_id(&o.label).ok_or_else(|| DatasetError::UnknownLabel(o.label.clone()))?;
    let (w, h) = (frame.width() as f64, frame.height() as f64);
    let resized = o.bbox.scale(size as f64 / w, size as f64 / h);
    Ok(TrainingSample {
        image,
        class,
        target: (class != BACKGROUND).then(|| BoxEncoding::encode(&resized, size as f64, size as f64)),
        regions: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn dataset_split_is_disjoint_and_balanced() {
        let style = SceneStyle::default();
        let (train, test) = build_dataset(20, 6, &["background", "diver"], 5, &style).unwrap();
        assert_eq!((train.len(), test.len()), (20, 6));
        let bytes = |f: &AnnotatedFrame| to_rgb8(&f.image);
        let train_set: HashSet<Vec<u8>> = train.iter().map(bytes).collect();
        assert_eq!(train_set.len(), 20);
        assert!(test.iter().all(|f| !train_set.contains(&bytes(f))));
        assert_eq!(train.iter().filter(|f| f.objects.is_empty()).count(), 10);
        let (again, _) = build_dataset(20, 6, &["background", "diver"], 5, &style).unwrap();
        assert_eq!(again, train);
    }

    #[test]
    fn seeds_never_collide_across_splits() {
        let train: HashSet<u64> = (0..5000).map(|i| split_seed(3, 0, i)).collect();
        assert!((0..5000).all(|i| !train.contains(&split_seed(3, 1, i))));
    }

    #[test]
    fn build_dataset_errors() {
        let s = SceneStyle::default();
        assert!(build_dataset(0, 1, &["diver"], 0, &s).is_err());
        assert!(matches!(
            build_dataset(1, 1, &["octopus"], 0, &s),
            Err(DatasetError::UnknownLabel(_))
        ));
    }

    #[test]
    fn training_sample_at_native_size() {
        let image = Tensor::from_fn(vec![224, 224, 3], |i| (i % 251) as f32 / 251.0);
        let frame = AnnotatedFrame {
            image: image.clone(),
            objects: vec![Object {
                label: "diver".into(),
                bbox: BBox::new(22.4, 44.8, 112.0, 224.0),
            }],
            source_id: "t".into(),
        };
        let s = to_training_sample(&frame, None, 224).unwrap();
        assert_eq!(s.image, image);
        assert_eq!(s.class, 1);
        let t = s.target.unwrap();
        assert!((t.cx - 0.3).abs() < 1e-12 && (t.cy - 0.6).abs() < 1e-12);
        assert!((t.w - 0.4).abs() < 1e-12 && (t.h - 0.8).abs() < 1e-12);
        let bg = to_training_sample(&frame, Some("robot"), 224).unwrap();
        assert_eq!((bg.class, bg.target), (0, None));
    }

    #[test]
    fn training_sample_halves_large_frames() {
        let frame = AnnotatedFrame {
            image: Tensor::full(vec![448, 448, 3], 0.5),
            objects: vec![Object {
                label: "diver".into(),
                bbox: BBox::new(100.0, 40.0, 300.0, 440.0),
            }],
            source_id: "t".into(),
        };
        let s = to_training_sample(&frame, Some("diver"), 224).unwrap();
        assert_eq!(s.image.dims(), &[224, 224, 3]);
        assert!(s.image.data().iter().all(|&v| (v - 0.5).abs() < 1e-6));
        let back = s.target.unwrap().decode(224.0, 224.0);
        let expected = BBox::new(50.0, 20.0, 150.0, 220.0);
        for (a, b) in [
            (back.xmin, expected.xmin),
            (back.ymin, expected.ymin),
            (back.xmax, expected.xmax),
            (back.ymax, expected.ymax),
        ] {
            assert!((a - b).abs() < 0.5);
        }
    }

    #[test]
    fn write_then_load_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let (train, _) = build_dataset(3, 1, &["diver", "background"], 1, &SceneStyle::default()).unwrap();
        let manifest = write_dataset(dir.path(), &train).unwrap();
        let loaded = load_manifest(&manifest).unwrap();
        assert_eq!(loaded.len(), 3);
        for (a, b) in loaded.iter().zip(&train) {
            assert_eq!(to_rgb8(&a.image), to_rgb8(&b.image));
            assert_eq!(a.objects.len(), b.objects.len());
            for (oa, ob) in a.objects.iter().zip(&b.objects) {
                assert_eq!(oa.label, ob.label);
                assert_eq!(oa.bbox, ob.bbox);
            }
        }
    }

    #[test]
    fn manifest_line_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.tsv");
        fs::write(&p, "# header\n\na.ppm b.xml\n").unwrap();
        assert!(matches!(read_manifest(&p), Err(DatasetError::Manifest { line: 3, .. })));
        assert!(matches!(read_manifest(&dir.path().join("missing")), Err(DatasetError::Io { .. })));
    }
}
