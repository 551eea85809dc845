//! On-disk formats: `THRM` raw temperature matrices, binary PGM masks and
//! previews, and 68-point landmark text files.
//!
//! `THRM` layout, little-endian: `b"THRM"`, `u32` version, `u32` height,
//! `u32` width, then `height·width` `f32` temperatures in °C, row-major.

use std::io::Cursor;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageFormat};

use super::landmarks::{LandmarkSet, LANDMARK_COUNT};
use crate::error::{Error, Result};
use crate::raster::{LabelMask, ThermalImage};

pub const THRM_MAGIC: &[u8; 4] = b"THRM";
pub const THRM_VERSION: u32 = 1;
const THRM_HEADER: usize = 16;

fn thrm_err(offset: usize, detail: impl Into<String>) -> Error {
    Error::Format {
        what: "THRM",
        offset: offset as u64,
        detail: detail.into(),
    }
}

/// Serializes an image; values are stored as `f32`.
pub fn encode_thermal(img: &ThermalImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(THRM_HEADER + 4 * img.values().len());
    out.extend_from_slice(THRM_MAGIC);
    out.extend_from_slice(&THRM_VERSION.to_le_bytes());
    out.extend_from_slice(&(img.height() as u32).to_le_bytes());
    out.extend_from_slice(&(img.width() as u32).to_le_bytes());
    for &v in img.values() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_thermal(bytes: &[u8]) -> Result<ThermalImage> {
    if bytes.len() < 4 || &bytes[..4] != THRM_MAGIC {
        return Err(thrm_err(0, "bad magic, expected THRM"));
    }
    if bytes.len() < THRM_HEADER {
        return Err(thrm_err(bytes.len(), "truncated header"));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let version = word(4);
    if version != THRM_VERSION {
        return Err(thrm_err(4, format!("unsupported version {version}")));
    }
    let (h, w) = (word(8) as usize, word(12) as usize);
    let payload = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| thrm_err(8, format!("{h}×{w} overflows the address space")))?;
    if h == 0 || w == 0 {
        return Err(thrm_err(8, "zero dimension"));
    }
    let available = bytes.len() - THRM_HEADER;
    if available < payload {
        return Err(thrm_err(
            bytes.len(),
            format!("truncated payload: {available} of {payload} bytes"),
        ));
    }
    if available > payload {
        return Err(thrm_err(THRM_HEADER + payload, "trailing bytes after payload"));
    }
    let values = bytes[THRM_HEADER..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    ThermalImage::checked(h, w, values)
}

pub fn save_thermal(path: &Path, img: &ThermalImage) -> Result<()> {
    std::fs::write(path, encode_thermal(img)).map_err(|e| Error::io(path, e))
}

pub fn load_thermal(path: &Path) -> Result<ThermalImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_thermal(&bytes)
}

fn encode_pgm(data: &[u8], h: usize, w: usize, color: ExtendedColorType) -> Vec<u8> {
    let mut out = Vec::new();
    PnmEncoder::new(&mut out)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(data, w as u32, h as u32, color)
        .expect("in-memory PGM encoding of a well-sized buffer");
    out
}

/// 8-bit binary PGM holding class indices.
pub fn encode_mask_pgm(mask: &LabelMask) -> Vec<u8> {
    encode_pgm(mask.labels(), mask.height(), mask.width(), ExtendedColorType::L8)
}

pub fn decode_mask_pgm(bytes: &[u8]) -> Result<LabelMask> {
    let img = image::load(Cursor::new(bytes), ImageFormat::Pnm).map_err(|e| Error::Format {
        what: "PGM",
        offset: 0,
        detail: e.to_string(),
    })?;
    let image::DynamicImage::ImageLuma8(gray) = img else {
        return Err(Error::Format {
            what: "PGM",
            offset: 0,
            detail: "mask must be an 8-bit graymap".into(),
        });
    };
    let (w, h) = gray.dimensions();
    LabelMask::new(h as usize, w as usize, gray.into_raw())
}

pub fn save_mask(path: &Path, mask: &LabelMask) -> Result<()> {
    std::fs::write(path, encode_mask_pgm(mask)).map_err(|e| Error::io(path, e))
}

pub fn load_mask(path: &Path) -> Result<LabelMask> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_mask_pgm(&bytes)
}

/// 16-bit binary PGM mapping `[0, 1]` linearly onto `0..=65535`.
pub fn encode_preview_pgm(values: &[f64], h: usize, w: usize) -> Vec<u8> {
    // image's PNM encoder has no 16-bit graymap path; P5 with maxval 65535
    // stores big-endian samples.
    let mut out = format!("P5\n{w} {h}\n65535\n").into_bytes();
    out.reserve(2 * values.len());
    for v in values {
        out.extend_from_slice(&((v.clamp(0.0, 1.0) * 65535.0).round() as u16).to_be_bytes());
    }
    out
}

/// Reads a 16-bit preview back into `[0, 1]` values.
pub fn decode_preview_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    let img = image::load(Cursor::new(bytes), ImageFormat::Pnm).map_err(|e| Error::Format {
        what: "PGM",
        offset: 0,
        detail: e.to_string(),
    })?;
    let gray = img.to_luma16();
    let (w, h) = gray.dimensions();
    let values = gray.into_raw().into_iter().map(|s| s as f64 / 65535.0).collect();
    Ok((h as usize, w as usize, values))
}

/// Parses 68 lines of `x y`.
pub fn parse_landmarks(text: &str, subject_id: &str, frame_id: &str) -> Result<LandmarkSet> {
    let mut points = Vec::with_capacity(LANDMARK_COUNT);
    let mut offset = 0usize;
    for line in text.lines() {
        let trimmed = line.trim();
        if !trimmed.is_empty() {
            let mut it = trimmed.split_whitespace().map(str::parse::<f64>);
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(x)), Some(Ok(y)), None) => points.push((x, y)),
                _ => {
                    return Err(Error::Format {
                        what: "landmarks",
                        offset: offset as u64,
                        detail: format!("expected `x y`, got {trimmed:?}"),
                    })
                }
            }
        }
        offset += line.len() + 1;
    }
    if points.len() != LANDMARK_COUNT {
        return Err(Error::Format {
            what: "landmarks",
            offset: text.len() as u64,
            detail: format!("expected {LANDMARK_COUNT} points, found {}", points.len()),
        });
    }
    Ok(LandmarkSet {
        points,
        subject_id: subject_id.to_owned(),
        frame_id: frame_id.to_owned(),
    })
}

pub fn load_landmarks(path: &Path, subject_id: &str) -> Result<LandmarkSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let frame = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_landmarks(&text, subject_id, &frame)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_built_fixture_parses() {
        let mut bytes = b"THRM".to_vec();
        for word in [1u32, 2, 2] {
            bytes.extend_from_slice(&word.to_le_bytes());
        }
        for v in [20.0f32, 21.0, 36.5, 37.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let img = decode_thermal(&bytes).unwrap();
        assert_eq!(img.dims(), (2, 2));
        assert_eq!(img.values(), &[20.0, 21.0, 36.5, 37.0]);
        assert_eq!(encode_thermal(&img), bytes);
    }

    #[test]
    fn wrong_magic_at_offset_zero() {
        let err = decode_thermal(b"THRX\x01\0\0\0\x01\0\0\0\x01\0\0\0\0\0\xa0\x41").unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }), "{err}");
    }

    #[test]
    fn truncated_payload() {
        let img = ThermalImage::filled(3, 3, 25.0);
        let mut bytes = encode_thermal(&img);
        bytes.truncate(bytes.len() - 2);
        match decode_thermal(&bytes).unwrap_err() {
            Error::Format { offset, detail, .. } => {
                assert_eq!(offset as usize, bytes.len());
                assert!(detail.contains("truncated"));
            }
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn dimension_overflow() {
        let mut bytes = b"THRM".to_vec();
        for word in [1u32, u32::MAX, u32::MAX] {
            bytes.extend_from_slice(&word.to_le_bytes());
        }
        assert!(matches!(decode_thermal(&bytes), Err(Error::Format { .. })));
    }

    #[test]
    fn out_of_range_temperature_rejected() {
        let img = ThermalImage::new(1, 2, vec![25.0, 500.0]).unwrap();
        assert!(decode_thermal(&encode_thermal(&img)).is_err());
    }

    #[test]
    fn mask_pgm_round_trip() {
        let mask = LabelMask::new(2, 3, vec![0, 1, 2, 3, 4, 5]).unwrap();
        let bytes = encode_mask_pgm(&mask);
        assert!(bytes.starts_with(b"P5"));
        assert_eq!(decode_mask_pgm(&bytes).unwrap(), mask);
    }

    #[test]
    fn preview_is_sixteen_bit() {
        let bytes = encode_preview_pgm(&[0.0, 0.5, 1.0, 0.25], 2, 2);
        let header = String::from_utf8_lossy(&bytes[..16]);
        assert!(header.contains("65535"), "{header}");
        let (h, w, v) = decode_preview_pgm(&bytes).unwrap();
        assert_eq!((h, w), (2, 2));
        assert_eq!(v[0], 0.0);
        assert_eq!(v[2], 1.0);
        assert!((v[1] - 0.5).abs() < 1e-4);
    }

    #[test]
    fn landmark_text() {
        let text: String = (0..68).map(|i| format!("{} {}.5\n", i, i)).collect();
        let lm = parse_landmarks(&text, "s1", "f1").unwrap();
        assert_eq!(lm.points[3], (3.0, 3.5));
        assert!(parse_landmarks("1 2\n", "s", "f").is_err());
        assert!(parse_landmarks("1 x\n", "s", "f").is_err());
    }
}
