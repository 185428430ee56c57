//! Weights file:
//!
//! ```text
//! "DNWT" | u32 version=1 | u32 tensor count
//! per tensor: u16 name length | name bytes | u8 ndim | ndim × u32 dims | f32 values
//! ```
//!
//! All integers and floats little-endian, no padding between records.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ModelError, NetworkConfig, NetworkWeights, Result, LEARNABLE_LAYERS};
use crate::tensor::{Scalar, Tensor};

pub const WEIGHTS_MAGIC: [u8; 4] = *b"DNWT";
pub const WEIGHTS_VERSION: u32 = 1;

/// Serializes named tensors at 32-bit precision.
pub fn write_tensors<T: Scalar, W: Write>(out: &mut W, tensors: &[(&str, &Tensor<T>)]) -> Result<()> {
    out.write_all(&WEIGHTS_MAGIC)?;
    out.write_all(&WEIGHTS_VERSION.to_le_bytes())?;
    out.write_all(&(tensors.len() as u32).to_le_bytes())?;
    let mut buf = Vec::new();
    for (name, t) in tensors {
        let name_len = u16::try_from(name.len()).map_err(|_| ModelError::Format(format!("name too long: {name}")))?;
        out.write_all(&name_len.to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        let ndim = u8::try_from(t.rank()).map_err(|_| ModelError::Format("too many dims".into()))?;
        out.write_all(&[ndim])?;
        for &d in t.dims() {
            let d = u32::try_from(d).map_err(|_| ModelError::Format("dimension exceeds u32".into()))?;
            out.write_all(&d.to_le_bytes())?;
        }
        buf.clear();
        buf.reserve(t.len() * 4);
        for &v in t.data() {
            buf.extend_from_slice(&v.to_f32().to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => ModelError::Format(format!("truncated while reading {what}")),
        _ => ModelError::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

/// Parses a weights stream into named `f32` tensors.
pub fn read_tensors<R: Read>(input: &mut R) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut magic = [0u8; 4];
    read_exact(input, &mut magic, "magic")?;
    if magic != WEIGHTS_MAGIC {
        return Err(ModelError::Format(format!("bad magic {magic:?}")));
    }
    let version = read_u32(input, "version")?;
    if version != WEIGHTS_VERSION {
        return Err(ModelError::Format(format!("unsupported version {version}")));
    }
    let count = read_u32(input, "tensor count")?;
    let mut out = Vec::with_capacity(count.min(64) as usize);
    for _ in 0..count {
        let mut b2 = [0u8; 2];
        read_exact(input, &mut b2, "name length")?;
        let mut name = vec![0u8; u16::from_le_bytes(b2) as usize];
        read_exact(input, &mut name, "name")?;
        let name = String::from_utf8(name).map_err(|_| ModelError::Format("tensor name is not UTF-8".into()))?;
        let mut b1 = [0u8; 1];
        read_exact(input, &mut b1, "rank")?;
        let mut dims = Vec::with_capacity(b1[0] as usize);
        for _ in 0..b1[0] {
            dims.push(read_u32(input, "dims")? as usize);
        }
        let len = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| ModelError::Format(format!("{name}: dims overflow")))?;
        let mut raw = vec![0u8; len * 4];
        read_exact(input, &mut raw, &name)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let t = Tensor::new(dims, data).map_err(|e| ModelError::Format(format!("{name}: {e}")))?;
        out.push((name, t));
    }
    let mut extra = [0u8; 1];
    if input.read(&mut extra)? != 0 {
        return Err(ModelError::Format("trailing bytes after last tensor".into()));
    }
    Ok(out)
}

pub fn save_weights<T: Scalar>(weights: &NetworkWeights<T>, path: impl AsRef<Path>) -> Result<()> {
    let names: Vec<(String, String)> = weights
        .layers()
        .iter()
        .map(|l| (format!("{}/weights", l.name), format!("{}/bias", l.name)))
        .collect();
    let mut tensors = Vec::with_capacity(names.len() * 2);
    for (l, (wn, bn)) in weights.layers().iter().zip(&names) {
        tensors.push((wn.as_str(), &l.weights));
        tensors.push((bn.as_str(), &l.bias));
    }
    let mut out = BufWriter::new(File::create(path)?);
    write_tensors(&mut out, &tensors)?;
    out.flush()?;
    Ok(())
}

/// Loads a weights file. With `config` the dims are checked against it;
/// without, the config is inferred from the stored dims.
pub fn load_weights(path: impl AsRef<Path>, config: Option<&NetworkConfig>) -> Result<NetworkWeights<f32>> {
    let mut input = BufReader::new(File::open(path)?);
    let tensors = read_tensors(&mut input)?;
    if tensors.len() != 2 * LEARNABLE_LAYERS.len() {
        return Err(ModelError::Format(format!("expected 22 tensors, found {}", tensors.len())));
    }
    let mut layers = Vec::with_capacity(LEARNABLE_LAYERS.len());
    let mut it = tensors.into_iter();
    for name in LEARNABLE_LAYERS {
        let (wn, w) = it.next().expect("count checked");
        let (bn, b) = it.next().expect("count checked");
        if wn != format!("{name}/weights") || bn != format!("{name}/bias") {
            return Err(ModelError::Format(format!(
                "expected {name}/weights and {name}/bias, found {wn} and {bn}"
            )));
        }
        layers.push((name.to_string(), w, b));
    }
    let config = match config {
        Some(c) => c.clone(),
        None => {
            let dims: Vec<_> = layers.iter().map(|(_, w, b)| (w.dims().to_vec(), b.dims().to_vec())).collect();
            NetworkConfig::infer(&dims)?
        }
    };
    NetworkWeights::from_layers(config, layers)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.dnwt");
        let w = NetworkWeights::<f32>::build(NetworkConfig::tiny(3, 48), 9).unwrap();
        save_weights(&w, &path).unwrap();
        let back = load_weights(&path, Some(w.config())).unwrap();
        assert_eq!(back, w);
    }

    #[test]
    fn exact_byte_layout() {
        let t = Tensor::<f32>::new(vec![2], vec![1.0, -2.5]).unwrap();
        let mut buf = Vec::new();
        write_tensors(&mut buf, &[("ab", &t)]).unwrap();
        let mut expected = b"DNWT".to_vec();
        expected.extend(1u32.to_le_bytes());
        expected.extend(1u32.to_le_bytes());
        expected.extend(2u16.to_le_bytes());
        expected.extend(b"ab");
        expected.push(1);
        expected.extend(2u32.to_le_bytes());
        expected.extend(1.0f32.to_le_bytes());
        expected.extend((-2.5f32).to_le_bytes());
        assert_eq!(buf, expected);
    }

    #[test]
    fn corrupt_streams_are_rejected() {
        let t = Tensor::<f32>::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let mut good = Vec::new();
        write_tensors(&mut good, &[("x", &t)]).unwrap();

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(read_tensors(&mut bad_magic.as_slice()), Err(ModelError::Format(m)) if m.contains("magic")));

        let mut bad_version = good.clone();
        bad_version[4] = 2;
        assert!(matches!(read_tensors(&mut bad_version.as_slice()), Err(ModelError::Format(m)) if m.contains("version")));

        let truncated = &good[..good.len() - 3];
        assert!(matches!(read_tensors(&mut &truncated[..]), Err(ModelError::Format(m)) if m.contains("truncated")));
    }

    #[test]
    fn dims_must_match_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.dnwt");
        let w = NetworkWeights::<f32>::build(NetworkConfig::tiny(2, 48), 1).unwrap();
        save_weights(&w, &path).unwrap();
        assert!(load_weights(&path, Some(&NetworkConfig::tiny(3, 48))).is_err());
    }
}
