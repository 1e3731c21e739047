use std::path::Path;

use super::{Dataset, Source};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

/// Raw `u8` images from an IDX3 file, row-major `count × rows·cols`.
#[derive(Clone, Debug, PartialEq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

pub fn pixel_to_unit(v: u8) -> f64 {
    f64::from(v) / 127.5 - 1.0
}

/// Inverse of [`pixel_to_unit`], clamped and rounded to the nearest byte.
pub fn unit_to_pixel(x: f64) -> u8 {
    ((x + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::parse(bytes.len(), "truncated header"))
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let magic = be_u32(bytes, 0)?;
    if magic != expected {
        return Err(Error::parse(0, format!("bad magic {magic:#010x}, expected {expected:#010x}")));
    }
    Ok(())
}

fn payload(bytes: &[u8], header: usize, len: usize) -> Result<&[u8]> {
    let end = header
        .checked_add(len)
        .ok_or_else(|| Error::parse(header, "declared size overflows"))?;
    if bytes.len() < end {
        return Err(Error::parse(bytes.len(), format!("truncated payload, expected {len} bytes after header")));
    }
    if bytes.len() > end {
        return Err(Error::parse(end, "trailing bytes after payload"));
    }
    Ok(&bytes[header..end])
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    check_magic(bytes, IMAGE_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let len = count
        .checked_mul(rows)
        .and_then(|n| n.checked_mul(cols))
        .ok_or_else(|| Error::parse(4, "declared size overflows"))?;
    let pixels = payload(bytes, 16, len)?.to_vec();
    Ok(IdxImages { count, rows, cols, pixels })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, LABEL_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    Ok(payload(bytes, 8, count)?.to_vec())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads IDX images (and optionally labels), pixels mapped `v ↦ v/127.5 − 1`.
pub fn load_idx(images_path: &Path, labels_path: Option<&Path>) -> Result<Dataset> {
    let images = parse_idx_images(&read(images_path)?)?;
    let labels = match labels_path {
        Some(p) => {
            let labels = parse_idx_labels(&read(p)?)?;
            if labels.len() != images.count {
                return Err(Error::Shape(format!(
                    "{} labels for {} images",
                    labels.len(),
                    images.count
                )));
            }
            Some(labels.into_iter().map(u32::from).collect())
        }
        None => None,
    };
    let data = images.pixels.iter().map(|&v| pixel_to_unit(v)).collect();
    let samples = Tensor::new(&[images.count, images.rows * images.cols], data)?;
    Dataset::new(samples, labels, Source::Idx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image_file(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IMAGE_MAGIC, count, rows, cols] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(pixels);
        b
    }

    fn label_file(labels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
        b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        b.extend_from_slice(labels);
        b
    }

    #[test]
    fn endpoints_map_to_unit_interval() {
        assert_eq!(pixel_to_unit(0), -1.0);
        assert_eq!(pixel_to_unit(255), 1.0);
        for v in 0..=255u8 {
            assert_eq!(unit_to_pixel(pixel_to_unit(v)), v);
        }
    }

    #[test]
    fn fixture_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let pixels: Vec<u8> = (0..12).map(|i| (i * 21) as u8).collect();
        let img = dir.path().join("img");
        let lbl = dir.path().join("lbl");
        std::fs::write(&img, image_file(3, 2, 2, &pixels)).unwrap();
        std::fs::write(&lbl, label_file(&[5, 0, 4])).unwrap();
        let ds = load_idx(&img, Some(&lbl)).unwrap();
        assert_eq!(ds.samples().shape(), &[3, 4]);
        assert_eq!(ds.labels().unwrap(), &[5, 0, 4]);
        let back: Vec<u8> = ds.samples().data().iter().map(|&x| unit_to_pixel(x)).collect();
        assert_eq!(back, pixels);
    }

    #[test]
    fn bad_magic_reports_offset_zero() {
        let mut b = image_file(1, 1, 1, &[0]);
        b[3] = 0x01;
        assert!(matches!(parse_idx_images(&b), Err(Error::Parse { offset: 0, .. })));
    }

    #[test]
    fn truncation_and_trailing_bytes() {
        let b = image_file(2, 2, 2, &[0; 7]);
        assert!(matches!(parse_idx_images(&b), Err(Error::Parse { offset: 23, .. })));
        let b = image_file(1, 2, 2, &[0; 5]);
        assert!(matches!(parse_idx_images(&b), Err(Error::Parse { offset: 20, .. })));
        assert!(matches!(parse_idx_images(&[0, 0]), Err(Error::Parse { .. })));
    }

    #[test]
    fn label_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        let lbl = dir.path().join("lbl");
        std::fs::write(&img, image_file(2, 1, 1, &[0, 1])).unwrap();
        std::fs::write(&lbl, label_file(&[1])).unwrap();
        assert!(matches!(load_idx(&img, Some(&lbl)), Err(Error::Shape(_))));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(load_idx(Path::new("/nonexistent/idx"), None), Err(Error::Io { .. })));
    }
}
