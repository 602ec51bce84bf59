//! IDX image container parsing (big-endian, magic 2051 for images and 2049
//! for labels), plus writers used to build fixtures.

use super::{Dataset, DatasetMeta};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use std::fs;
use std::path::Path;

const IMAGE_MAGIC: u32 = 2051;
const LABEL_MAGIC: u32 = 2049;

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    if at + 4 > bytes.len() {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: 0,
            message: format!("truncated header at byte {}", at),
        });
    }
    Ok(u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]]))
}

/// Load an IDX image/label pair. Pixels are scaled to [0, 1]; digit labels
/// keep their values as internal indices with the textual map in metadata.
pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let ibytes = fs::read(images).map_err(|e| Error::io(images.display().to_string(), e))?;
    let magic = be_u32(&ibytes, 0, images)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Parse {
            path: images.display().to_string(),
            line: 0,
            message: format!("bad image magic {} (want {})", magic, IMAGE_MAGIC),
        });
    }
    let n = be_u32(&ibytes, 4, images)? as usize;
    let rows = be_u32(&ibytes, 8, images)? as usize;
    let cols = be_u32(&ibytes, 12, images)? as usize;
    let d = rows * cols;
    if ibytes.len() != 16 + n * d {
        return Err(Error::Parse {
            path: images.display().to_string(),
            line: 0,
            message: format!(
                "payload size {} does not match {} images of {}x{}",
                ibytes.len() - 16,
                n,
                rows,
                cols
            ),
        });
    }

    let lbytes = fs::read(labels).map_err(|e| Error::io(labels.display().to_string(), e))?;
    let magic = be_u32(&lbytes, 0, labels)?;
    if magic != LABEL_MAGIC {
        return Err(Error::Parse {
            path: labels.display().to_string(),
            line: 0,
            message: format!("bad label magic {} (want {})", magic, LABEL_MAGIC),
        });
    }
    let ln = be_u32(&lbytes, 4, labels)? as usize;
    if lbytes.len() != 8 + ln {
        return Err(Error::Parse {
            path: labels.display().to_string(),
            line: 0,
            message: "truncated label payload".into(),
        });
    }
    if ln != n {
        return Err(Error::Parse {
            path: labels.display().to_string(),
            line: 0,
            message: format!("{} labels for {} images", ln, n),
        });
    }

    let mut x = Mat::zeros(n, d);
    for i in 0..n {
        let row = x.row_mut(i);
        let base = 16 + i * d;
        for j in 0..d {
            row[j] = ibytes[base + j] as f64 / 255.0;
        }
    }
    let y: Vec<usize> = lbytes[8..].iter().map(|&b| b as usize).collect();
    let num_classes = y.iter().copied().max().unwrap_or(0) + 1;
    Ok(Dataset {
        x: None,
        x_tilde: x,
        y,
        v: None,
        meta: DatasetMeta {
            name: images
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            seed: None,
            num_classes,
            label_map: (0..num_classes).map(|c| c.to_string()).collect(),
            redraws: 0,
        },
    })
}

pub fn write_idx_images(path: &Path, images: &[Vec<u8>], rows: usize, cols: usize) -> Result<()> {
    let mut bytes = Vec::with_capacity(16 + images.len() * rows * cols);
    bytes.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(images.len() as u32).to_be_bytes());
    bytes.extend_from_slice(&(rows as u32).to_be_bytes());
    bytes.extend_from_slice(&(cols as u32).to_be_bytes());
    for img in images {
        assert_eq!(img.len(), rows * cols);
        bytes.extend_from_slice(img);
    }
    fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 + labels.len());
    bytes.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    bytes.extend_from_slice(labels);
    fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmpdir() -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("nimgp-idx-tests");
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn big_endian_dimension_field_parses() {
        assert_eq!(u32::from_be_bytes([0x00, 0x00, 0xEA, 0x60]), 60000);
    }

    #[test]
    fn single_image_fixture_round_trips() {
        let dir = tmpdir();
        let img: Vec<u8> = (0..784).map(|i| (i % 256) as u8).collect();
        let ipath = dir.join("one-images.idx");
        let lpath = dir.join("one-labels.idx");
        write_idx_images(&ipath, &[img.clone()], 28, 28).unwrap();
        write_idx_labels(&lpath, &[7]).unwrap();
        let data = load_idx(&ipath, &lpath).unwrap();
        assert_eq!(data.n(), 1);
        assert_eq!(data.dim(), 784);
        assert_eq!(data.y, vec![7]);
        for j in 0..784 {
            assert!((data.x_tilde[(0, j)] - img[j] as f64 / 255.0).abs() < 1e-15);
        }
    }

    #[test]
    fn magic_and_truncation_are_rejected() {
        let dir = tmpdir();
        let bad = dir.join("bad-images.idx");
        fs::write(&bad, 1234u32.to_be_bytes()).unwrap();
        let lpath = dir.join("bad-labels.idx");
        write_idx_labels(&lpath, &[0]).unwrap();
        assert!(load_idx(&bad, &lpath).is_err());

        let trunc = dir.join("trunc-images.idx");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&2051u32.to_be_bytes());
        bytes.extend_from_slice(&2u32.to_be_bytes());
        bytes.extend_from_slice(&2u32.to_be_bytes());
        bytes.extend_from_slice(&2u32.to_be_bytes());
        bytes.extend_from_slice(&[1, 2, 3]); // needs 8
        fs::write(&trunc, bytes).unwrap();
        let err = load_idx(&trunc, &lpath).unwrap_err();
        assert!(err.to_string().contains("payload"), "{}", err);
    }

    #[test]
    fn label_histogram_matches_fixture() {
        // committed fixture: 12 tiny images with a known class histogram
        let dir = tmpdir();
        let labels: Vec<u8> = vec![0, 1, 1, 2, 0, 1, 2, 2, 2, 0, 1, 1];
        let images: Vec<Vec<u8>> = (0..12).map(|i| vec![i as u8; 4]).collect();
        let ipath = dir.join("hist-images.idx");
        let lpath = dir.join("hist-labels.idx");
        write_idx_images(&ipath, &images, 2, 2).unwrap();
        write_idx_labels(&lpath, &labels).unwrap();
        let data = load_idx(&ipath, &lpath).unwrap();
        let mut hist = vec![0usize; 3];
        for &y in &data.y {
            hist[y] += 1;
        }
        assert_eq!(hist, vec![3, 5, 4]);
    }
}
