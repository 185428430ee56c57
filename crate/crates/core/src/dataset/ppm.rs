//! Binary PPM (P6, maxval 255).

use super::{DatasetError, Result};
use crate::tensor::Tensor;

/// Quantizes an `[H, W, 3]` image in `[0, 1]` to 8-bit RGB.
pub fn to_rgb8(image: &Tensor<f32>) -> Vec<u8> {
    image.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
}

pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Tensor<f32>> {
    if bytes.len() != width * height * 3 {
        return Err(DatasetError::Image(format!(
            "{} bytes for a {width}x{height} RGB image",
            bytes.len()
        )));
    }
    Ok(Tensor::from_fn(vec![height, width, 3], |i| bytes[i] as f32 / 255.0))
}

pub fn encode_ppm(image: &Tensor<f32>) -> Result<Vec<u8>> {
    let d = image.dims();
    if d.len() != 3 || d[2] != 3 {
        return Err(DatasetError::Image(format!("expected [H, W, 3], got {d:?}")));
    }
    let mut out = format!("P6\n{} {}\n255\n", d[1], d[0]).into_bytes();
    out.extend(to_rgb8(image));
    Ok(out)
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor<f32>> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(DatasetError::Image("truncated PPM header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token()?;
    if magic != "P6" {
        return Err(DatasetError::Image(format!("unsupported PPM magic {magic:?}")));
    }
    let mut field = |name: &str| -> Result<usize> {
        let t = token()?;
        t.parse().map_err(|_| DatasetError::Image(format!("bad PPM {name} {t:?}")))
    };
    let width = field("width")?;
    let height = field("height")?;
    let maxval = field("maxval")?;
    if maxval != 255 {
        return Err(DatasetError::Image(format!("unsupported maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    let body = bytes.get(pos + 1..).unwrap_or(&[]);
    from_rgb8(width, height, body)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_on_the_8bit_grid() {
        let img = Tensor::from_fn(vec![5, 7, 3], |i| ((i * 13) % 256) as f32 / 255.0);
        let back = decode_ppm(&encode_ppm(&img).unwrap()).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn header_comments() {
        let mut bytes = b"P6\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend([255, 0, 0, 0, 0, 255]);
        let img = decode_ppm(&bytes).unwrap();
        assert_eq!(img.dims(), &[1, 2, 3]);
        assert_eq!(img.data(), &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn rejects_other_formats() {
        assert!(decode_ppm(b"P3\n1 1\n255\n0 0 0").is_err());
        assert!(decode_ppm(b"P6\n1 1\n65535\n\0\0\0\0\0\0").is_err());
        assert!(decode_ppm(b"P6\n2 2\n255\n\0\0\0").is_err());
    }
}
