//! labelImg-style VOC XML annotations.
//!
//! Files store inclusive 1-based pixel indices; in memory boxes are 0-based,
//! so every coordinate is shifted by one in each direction.

use std::fmt::Write as _;

use super::{DatasetError, Object, Result};
use crate::bbox::BBox;

/// Everything a VOC file describes apart from the pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMeta {
    pub filename: Option<String>,
    pub width: usize,
    pub height: usize,
    pub depth: usize,
    pub objects: Vec<Object>,
}

fn child<'a, 'i>(node: roxmltree::Node<'a, 'i>, name: &str) -> Option<roxmltree::Node<'a, 'i>> {
    node.children().find(|c| c.has_tag_name(name))
}

fn text<'a>(node: roxmltree::Node<'a, '_>, name: &str) -> Option<&'a str> {
    child(node, name).and_then(|c| c.text()).map(str::trim)
}

fn number(node: roxmltree::Node, name: &str, ctx: &str) -> Result<f64> {
    let raw = text(node, name).ok_or_else(|| DatasetError::Annotation(format!("{ctx}: missing <{name}>")))?;
    raw.parse::<f64>()
        .map_err(|_| DatasetError::Annotation(format!("{ctx}: <{name}> is not a number: {raw:?}")))
}

pub fn parse_voc_xml(xml: &str) -> Result<FrameMeta> {
    let doc = roxmltree::Document::parse(xml).map_err(|e| DatasetError::Annotation(format!("malformed XML: {e}")))?;
    let root = doc.root_element();
    if !root.has_tag_name("annotation") {
        return Err(DatasetError::Annotation(format!(
            "root element is <{}>, expected <annotation>",
            root.tag_name().name()
        )));
    }
    let size = child(root, "size").ok_or_else(|| DatasetError::Annotation("missing <size>".into()))?;
    let width = number(size, "width", "size")? as usize;
    let height = number(size, "height", "size")? as usize;
    let depth = match text(size, "depth") {
        Some(_) => number(size, "depth", "size")? as usize,
        None => 3,
    };
    if width == 0 || height == 0 {
        return Err(DatasetError::Annotation(format!("empty frame size {width}x{height}")));
    }

    let mut objects = Vec::new();
    for (i, obj) in root.children().filter(|c| c.has_tag_name("object")).enumerate() {
        let ctx = format!("object {i}");
        let label = text(obj, "name").unwrap_or("").to_string();
        if label.is_empty() {
            return Err(DatasetError::Annotation(format!("{ctx}: missing <name>")));
        }
        let bnd = child(obj, "bndbox").ok_or_else(|| DatasetError::Annotation(format!("{ctx} ({label}): missing <bndbox>")))?;
        let xmin = number(bnd, "xmin", &ctx)?;
        let ymin = number(bnd, "ymin", &ctx)?;
        let xmax = number(bnd, "xmax", &ctx)?;
        let ymax = number(bnd, "ymax", &ctx)?;
        if xmax <= xmin || ymax <= ymin {
            return Err(DatasetError::Annotation(format!(
                "{ctx} ({label}): empty box ({xmin}, {ymin}, {xmax}, {ymax})"
            )));
        }
        if xmin < 1.0 || ymin < 1.0 || xmax > width as f64 || ymax > height as f64 {
            return Err(DatasetError::Annotation(format!(
                "{ctx} ({label}): box ({xmin}, {ymin}, {xmax}, {ymax}) exceeds {width}x{height}"
            )));
        }
        objects.push(Object {
            label,
            bbox: BBox::new(xmin - 1.0, ymin - 1.0, xmax - 1.0, ymax - 1.0),
        });
    }
    Ok(FrameMeta {
        filename: text(root, "filename").map(str::to_string),
        width,
        height,
        depth,
        objects,
    })
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes the subset of the labelImg schema that [`parse_voc_xml`] reads.
/// Coordinates are rounded to whole pixels.
pub fn write_voc_xml(meta: &FrameMeta) -> String {
    let mut s = String::from("<annotation>\n");
    if let Some(f) = &meta.filename {
        let _ = writeln!(s, "  <filename>{}</filename>", escape(f));
    }
    let _ = writeln!(
        s,
        "  <size>\n    <width>{}</width>\n    <height>{}</height>\n    <depth>{}</depth>\n  </size>",
        meta.width, meta.height, meta.depth
    );
    for o in &meta.objects {
        let b = &o.bbox;
        let _ = writeln!(
            s,
            "  <object>\n    <name>{}</name>\n    <pose>Unspecified</pose>\n    <truncated>0</truncated>\n    <difficult>0</difficult>\n    <bndbox>\n      <xmin>{}</xmin>\n      <ymin>{}</ymin>\n      <xmax>{}</xmax>\n      <ymax>{}</ymax>\n    </bndbox>\n  </object>",
            escape(&o.label),
            b.xmin.round() as i64 + 1,
            b.ymin.round() as i64 + 1,
            b.xmax.round() as i64 + 1,
            b.ymax.round() as i64 + 1,
        );
    }
    s.push_str("</annotation>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"<annotation>
  <folder>imgs</folder>
  <filename>f001.jpg</filename>
  <source><database>Unknown</database></source>
  <size><width>224</width><height>224</height><depth>3</depth></size>
  <segmented>0</segmented>
  <object>
    <name>diver</name><pose>Unspecified</pose><truncated>0</truncated><difficult>0</difficult>
    <bndbox><xmin>10</xmin><ymin>20</ymin><xmax>110</xmax><ymax>220</ymax></bndbox>
  </object>
</annotation>"#;

    #[test]
    fn parses_labelimg_output() {
        let m = parse_voc_xml(SAMPLE).unwrap();
        assert_eq!((m.width, m.height, m.depth), (224, 224, 3));
        assert_eq!(m.filename.as_deref(), Some("f001.jpg"));
        assert_eq!(m.objects.len(), 1);
        assert_eq!(m.objects[0].label, "diver");
        assert_eq!(m.objects[0].bbox, BBox::new(9.0, 19.0, 109.0, 219.0));
    }

    #[test]
    fn no_objects() {
        let m = parse_voc_xml("<annotation><size><width>64</width><height>48</height></size></annotation>").unwrap();
        assert!(m.objects.is_empty());
        assert_eq!(m.depth, 3);
    }

    #[test]
    fn rejects_bad_annotations() {
        let cases = [
            ("<annotation><size>", "malformed"),
            (
                "<annotation><size><width>10</width><height>10</height></size><object><name>diver</name></object></annotation>",
                "bndbox",
            ),
            (
                "<annotation><size><width>10</width><height>10</height></size><object><name>diver</name><bndbox><xmin>5</xmin><ymin>1</ymin><xmax>5</xmax><ymax>4</ymax></bndbox></object></annotation>",
                "empty box",
            ),
            (
                "<annotation><size><width>10</width><height>10</height></size><object><name>diver</name><bndbox><xmin>1</xmin><ymin>1</ymin><xmax>11</xmax><ymax>4</ymax></bndbox></object></annotation>",
                "exceeds",
            ),
        ];
        for (xml, needle) in cases {
            let err = parse_voc_xml(xml).unwrap_err().to_string();
            assert!(err.contains(needle), "{err}");
        }
    }

    #[test]
    fn writer_round_trips() {
        let m = parse_voc_xml(SAMPLE).unwrap();
        let again = parse_voc_xml(&write_voc_xml(&m)).unwrap();
        assert_eq!(again, m);
    }
}
