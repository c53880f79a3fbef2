//! Minimal binary hypercube container.
//!
//! Layout (all little-endian):
//!
//! | offset | size        | field                                  |
//! |--------|-------------|----------------------------------------|
//! | 0      | 4           | magic `HYPC`                           |
//! | 4      | 2           | version `u16` (= 1)                    |
//! | 6      | 16          | `B, C, H, W` as `u32`                  |
//! | 22     | 8·C         | wavelengths, `f64` nm, strictly increasing |
//! | …      | 4·B·C·H·W   | reflectance `f32`, order `B, C, H, W`  |
//!
//! Optionally followed by a label block: magic `LBLS`, `K: u16`,
//! `ignore: u16`, then `B·H·W` labels as `u16`. Nothing may follow the
//! payload. Every parse failure reports the byte offset where it was found.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::cube::{CubeDims, Hypercube, LabelMap};
use crate::error::Result;

pub const MAGIC: [u8; 4] = *b"HYPC";
pub const LABEL_MAGIC: [u8; 4] = *b"LBLS";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 22;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FormatError {
    #[error("bad magic {found:?} at offset {offset}")]
    BadMagic { offset: usize, found: [u8; 4] },

    #[error("unsupported version {version} at offset {offset}")]
    UnsupportedVersion { offset: usize, version: u16 },

    #[error("truncated {section} at offset {offset}: expected {expected} bytes, file has {actual}")]
    Truncated {
        section: &'static str,
        offset: usize,
        expected: usize,
        actual: usize,
    },

    #[error("zero or oversized dimension at offset {offset}")]
    BadDimension { offset: usize },

    #[error("wavelength {index} at offset {offset} is not finite or not above its predecessor")]
    NonIncreasingWavelength { offset: usize, index: usize },

    #[error("non-finite reflectance at offset {offset}")]
    NonFinite { offset: usize },

    #[error("label block header at offset {offset} is invalid: K = {num_classes}, ignore = {ignore}")]
    BadLabelHeader {
        offset: usize,
        num_classes: u16,
        ignore: u16,
    },

    #[error("label {value} at offset {offset} is neither a class id nor the ignore value")]
    BadLabel { offset: usize, value: u16 },

    #[error("{extra} unexpected trailing bytes at offset {offset}")]
    TrailingBytes { offset: usize, extra: usize },
}

impl FormatError {
    pub fn offset(&self) -> usize {
        match *self {
            FormatError::BadMagic { offset, .. }
            | FormatError::UnsupportedVersion { offset, .. }
            | FormatError::Truncated { offset, .. }
            | FormatError::BadDimension { offset }
            | FormatError::NonIncreasingWavelength { offset, .. }
            | FormatError::NonFinite { offset }
            | FormatError::BadLabelHeader { offset, .. }
            | FormatError::BadLabel { offset, .. }
            | FormatError::TrailingBytes { offset, .. } => offset,
        }
    }
}

/// Serialize a cube (reflectance narrowed to `f32`) and optional labels.
pub fn encode(cube: &Hypercube, labels: Option<&LabelMap>) -> Result<Vec<u8>> {
    let d = cube.dims();
    if let Some(l) = labels {
        if (l.batch(), l.height(), l.width()) != (d.batch, d.height, d.width) {
            return Err(crate::error::Error::dim("label map does not match cube"));
        }
    }
    for v in [d.batch, d.channels, d.height, d.width] {
        if u32::try_from(v).is_err() {
            return Err(crate::error::Error::dim("dimension exceeds u32"));
        }
    }
    let label_len = labels.map_or(0, |l| 8 + 2 * l.data().len());
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * d.channels + 4 * d.len() + label_len);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [d.batch, d.channels, d.height, d.width] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for w in cube.wavelengths_nm() {
        out.extend_from_slice(&w.to_le_bytes());
    }
    for &v in cube.data() {
        let narrow = v as f32;
        if !narrow.is_finite() {
            return Err(crate::error::Error::data("reflectance overflows f32"));
        }
        out.extend_from_slice(&narrow.to_le_bytes());
    }
    if let Some(l) = labels {
        out.extend_from_slice(&LABEL_MAGIC);
        out.extend_from_slice(&(l.num_classes() as u16).to_le_bytes());
        out.extend_from_slice(&l.ignore().to_le_bytes());
        for v in l.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, section: &'static str) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(FormatError::Truncated {
                section,
                offset: self.pos,
                expected: self.pos.saturating_add(n),
                actual: self.bytes.len(),
            }),
        }
    }

    fn u16(&mut self, section: &'static str) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2, section)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, section: &'static str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, section)?.try_into().expect("4 bytes")))
    }
}

/// Parse a buffer produced by [`encode`].
pub fn decode(bytes: &[u8]) -> Result<(Hypercube, Option<LabelMap>), FormatError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(FormatError::BadMagic { offset: 0, found: magic });
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion { offset: 4, version });
    }
    let mut dims = [0usize; 4];
    for d in &mut dims {
        let at = r.pos;
        *d = r.u32("dimensions")? as usize;
        if *d == 0 {
            return Err(FormatError::BadDimension { offset: at });
        }
    }
    let [b, c, h, w] = dims;
    let pixels = b
        .checked_mul(h)
        .and_then(|x| x.checked_mul(w))
        .ok_or(FormatError::BadDimension { offset: 6 })?;
    let values = pixels
        .checked_mul(c)
        .filter(|v| v.checked_mul(4).is_some())
        .ok_or(FormatError::BadDimension { offset: 6 })?;

    let wl_start = r.pos;
    let wl_bytes = r.take(c.checked_mul(8).ok_or(FormatError::BadDimension { offset: 10 })?, "wavelengths")?;
    let mut wavelengths = Vec::with_capacity(c);
    for (i, chunk) in wl_bytes.chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        let ok = v.is_finite() && wavelengths.last().is_none_or(|&prev: &f64| v > prev);
        if !ok {
            return Err(FormatError::NonIncreasingWavelength {
                offset: wl_start + 8 * i,
                index: i,
            });
        }
        wavelengths.push(v);
    }

    let data_start = r.pos;
    let raw = r.take(values * 4, "reflectance")?;
    let mut data = Vec::with_capacity(values);
    for (i, chunk) in raw.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(FormatError::NonFinite {
                offset: data_start + 4 * i,
            });
        }
        data.push(v as f64);
    }
    let cube = Hypercube::new(CubeDims::new(b, c, h, w), wavelengths, data)
        .expect("fields validated above");

    if r.pos == bytes.len() {
        return Ok((cube, None));
    }
    let block_start = r.pos;
    let magic: [u8; 4] = r.take(4, "label magic")?.try_into().expect("4 bytes");
    if magic != LABEL_MAGIC {
        return Err(FormatError::BadMagic {
            offset: block_start,
            found: magic,
        });
    }
    let num_classes = r.u16("label header")?;
    let ignore = r.u16("label header")?;
    if num_classes == 0 || ignore < num_classes {
        return Err(FormatError::BadLabelHeader {
            offset: block_start + 4,
            num_classes,
            ignore,
        });
    }
    let labels_start = r.pos;
    let raw = r.take(pixels * 2, "labels")?;
    let mut labels = Vec::with_capacity(pixels);
    for (i, chunk) in raw.chunks_exact(2).enumerate() {
        let v = u16::from_le_bytes(chunk.try_into().expect("2 bytes"));
        if v >= num_classes && v != ignore {
            return Err(FormatError::BadLabel {
                offset: labels_start + 2 * i,
                value: v,
            });
        }
        labels.push(v);
    }
    if r.pos != bytes.len() {
        return Err(FormatError::TrailingBytes {
            offset: r.pos,
            extra: bytes.len() - r.pos,
        });
    }
    let map = LabelMap::new(b, h, w, num_classes, ignore, labels).expect("fields validated above");
    Ok((cube, Some(map)))
}

pub fn write_cube(path: impl AsRef<Path>, cube: &Hypercube, labels: Option<&LabelMap>) -> Result<()> {
    fs::write(path, encode(cube, labels)?)?;
    Ok(())
}

pub fn read_cube(path: impl AsRef<Path>) -> Result<(Hypercube, Option<LabelMap>)> {
    let bytes = fs::read(path)?;
    Ok(decode(&bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cube::IGNORE_LABEL;

    fn sample() -> (Hypercube, LabelMap) {
        let dims = CubeDims::new(2, 3, 2, 2);
        let data = (0..dims.len()).map(|i| (i as f32 * 0.37).sin() as f64).collect();
        let cube = Hypercube::new(dims, vec![470.0, 500.5, 630.0], data).unwrap();
        let labels = LabelMap::new(2, 2, 2, 3, IGNORE_LABEL, vec![0, 1, 2, IGNORE_LABEL, 2, 2, 1, 0]).unwrap();
        (cube, labels)
    }

    #[test]
    fn round_trip_is_exact() {
        let (cube, labels) = sample();
        let bytes = encode(&cube, Some(&labels)).unwrap();
        let (c2, l2) = decode(&bytes).unwrap();
        assert_eq!(c2, cube);
        assert_eq!(l2.unwrap(), labels);
        let bytes = encode(&cube, None).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 24 + 4 * 24);
        assert!(decode(&bytes).unwrap().1.is_none());
    }

    #[test]
    fn bad_magic_at_zero() {
        let (cube, _) = sample();
        let mut bytes = encode(&cube, None).unwrap();
        bytes[..4].copy_from_slice(b"XYZW");
        let err = decode(&bytes).unwrap_err();
        assert!(matches!(err, FormatError::BadMagic { offset: 0, .. }));
    }

    #[test]
    fn truncation_names_lengths() {
        let (cube, _) = sample();
        let bytes = encode(&cube, None).unwrap();
        let n = bytes.len();
        match decode(&bytes[..n - 1]).unwrap_err() {
            FormatError::Truncated { expected, actual, .. } => {
                assert_eq!((expected, actual), (n, n - 1));
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn non_increasing_wavelengths() {
        let (cube, _) = sample();
        let mut bytes = encode(&cube, None).unwrap();
        bytes[HEADER_LEN + 8..HEADER_LEN + 16].copy_from_slice(&400.0f64.to_le_bytes());
        assert_eq!(
            decode(&bytes).unwrap_err(),
            FormatError::NonIncreasingWavelength {
                offset: HEADER_LEN + 8,
                index: 1
            }
        );
    }

    #[test]
    fn trailing_garbage_is_rejected() {
        let (cube, labels) = sample();
        let mut bytes = encode(&cube, Some(&labels)).unwrap();
        bytes.push(0);
        assert!(matches!(decode(&bytes).unwrap_err(), FormatError::TrailingBytes { .. }));
    }
}
