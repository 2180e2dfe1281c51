//! IDX container (the MNIST format): big-endian header, `u8` payload.
//!
//! Files ending in `.gz` (or starting with the gzip magic) are inflated
//! first; byte offsets in errors then refer to the inflated stream.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;

use super::Pool;
use crate::error::{Error, Result};
use crate::losses::Targets;
use crate::numerics::Matrix;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn parse_err<T>(offset: usize, msg: impl Into<String>) -> Result<T> {
    Err(Error::Parse {
        offset: offset as u64,
        msg: msg.into(),
    })
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    match bytes.get(offset..offset + 4) {
        Some(b) => Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]])),
        None => parse_err(offset, "file ends inside the header"),
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let magic = read_u32(bytes, 0)?;
    if magic != IMAGES_MAGIC {
        return parse_err(0, format!("image magic is {magic:#010x}, expected {IMAGES_MAGIC:#010x}"));
    }
    let count = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let need = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::Parse {
            offset: 4,
            msg: "image dimensions overflow".into(),
        })?;
    let body = &bytes[16..];
    if body.len() < need {
        return parse_err(
            bytes.len(),
            format!("truncated: header promises {need} pixel bytes, found {}", body.len()),
        );
    }
    if body.len() > need {
        return parse_err(16 + need, "trailing bytes after pixel data");
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: body.to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = read_u32(bytes, 0)?;
    if magic != LABELS_MAGIC {
        return parse_err(0, format!("label magic is {magic:#010x}, expected {LABELS_MAGIC:#010x}"));
    }
    let count = read_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return parse_err(
            bytes.len(),
            format!("truncated: header promises {count} labels, found {}", body.len()),
        );
    }
    if body.len() > count {
        return parse_err(8 + count, "trailing bytes after label data");
    }
    Ok(body.to_vec())
}

/// Reads an image/label file pair into an all-unlabeled pool. Pixels are
/// scaled to `[0, 1]` and each image is flattened row-major.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Pool> {
    let images = parse_idx_images(&read_file(images_path.as_ref())?)?;
    let labels = parse_idx_labels(&read_file(labels_path.as_ref())?)?;
    if labels.len() != images.count {
        return parse_err(
            4,
            format!("{} images but {} labels", images.count, labels.len()),
        );
    }
    let dim = images.rows * images.cols;
    let data = images.pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    let features = Matrix::from_vec(images.count, dim, data)?;
    let n_classes = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(1).max(10);
    let targets = Targets::Classes {
        labels: labels.iter().map(|&l| l as usize).collect(),
        n_classes,
    };
    Pool::new(features, Some(targets))
}

/// Writes features in `[0, 1]` as an IDX image file (`round(255 * x)`).
pub fn write_idx_images(
    path: impl AsRef<Path>,
    features: &Matrix,
    rows: usize,
    cols: usize,
) -> Result<()> {
    if rows * cols != features.cols() {
        return Err(Error::Shape(format!(
            "{rows}x{cols} images need {} features, got {}",
            rows * cols,
            features.cols()
        )));
    }
    let mut out = Vec::with_capacity(16 + features.data().len());
    for v in [IMAGES_MAGIC, features.rows() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend(
        features
            .data()
            .iter()
            .map(|&x| (x.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[usize]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    for &l in labels {
        let b = u8::try_from(l).map_err(|_| Error::Input(format!("label {l} does not fit a byte")))?;
        out.push(b);
    }
    fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(magic: u32, dims: &[u32]) -> Vec<u8> {
        let mut v = magic.to_be_bytes().to_vec();
        for d in dims {
            v.extend_from_slice(&d.to_be_bytes());
        }
        v
    }

    #[test]
    fn two_image_fixture() {
        // 2 images of 28x28; image 1 has pixel 780 (the 781st) set to 255,
        // image 0 has pixel 0 = 51 (0.2) and pixel 27 = 102 (0.4).
        let dir = tempfile::tempdir().unwrap();
        let mut img = header(IMAGES_MAGIC, &[2, 28, 28]);
        let mut px = vec![0u8; 2 * 784];
        px[0] = 51;
        px[27] = 102;
        px[784 + 780] = 255;
        img.extend_from_slice(&px);
        let mut lab = header(LABELS_MAGIC, &[2]);
        lab.extend_from_slice(&[7, 3]);
        let ip = dir.path().join("img");
        let lp = dir.path().join("lab");
        fs::write(&ip, &img).unwrap();
        fs::write(&lp, &lab).unwrap();

        let pool = load_idx(&ip, &lp).unwrap();
        assert_eq!(pool.features.shape(), (2, 784));
        assert_eq!(pool.features.get(0, 0), 0.2);
        assert_eq!(pool.features.get(0, 27), 0.4);
        assert_eq!(pool.features.get(1, 780), 1.0);
        assert_eq!(pool.features.get(1, 779), 0.0);
        assert!(pool.labeled.is_empty());
        assert_eq!(pool.unlabeled, vec![0, 1]);
        match pool.targets.unwrap() {
            Targets::Classes { labels, n_classes } => {
                assert_eq!(labels, vec![7, 3]);
                assert_eq!(n_classes, 10);
            }
            _ => panic!("expected class labels"),
        }
    }

    #[test]
    fn bad_magic_and_truncation() {
        let bytes = header(LABELS_MAGIC, &[1, 2, 2]);
        assert!(matches!(
            parse_idx_images(&bytes),
            Err(Error::Parse { offset: 0, .. })
        ));
        let mut bytes = header(IMAGES_MAGIC, &[2, 2, 2]);
        bytes.extend_from_slice(&[0; 7]);
        match parse_idx_images(&bytes) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 23),
            other => panic!("expected truncation error, got {other:?}"),
        }
        assert!(matches!(
            parse_idx_images(&bytes[..10]),
            Err(Error::Parse { offset: 8, .. })
        ));
        let mut lab = header(LABELS_MAGIC, &[3]);
        lab.push(1);
        assert!(parse_idx_labels(&lab).is_err());
    }

    #[test]
    fn count_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = header(IMAGES_MAGIC, &[1, 1, 2]);
        img.extend_from_slice(&[0, 1]);
        let mut lab = header(LABELS_MAGIC, &[2]);
        lab.extend_from_slice(&[0, 1]);
        fs::write(dir.path().join("i"), img).unwrap();
        fs::write(dir.path().join("l"), lab).unwrap();
        assert!(load_idx(dir.path().join("i"), dir.path().join("l")).is_err());
    }

    #[test]
    fn gzip_input_is_inflated() {
        use flate2::write::GzEncoder;
        use flate2::Compression;
        let dir = tempfile::tempdir().unwrap();
        let mut img = header(IMAGES_MAGIC, &[1, 1, 3]);
        img.extend_from_slice(&[0, 255, 51]);
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&img).unwrap();
        fs::write(dir.path().join("i.gz"), enc.finish().unwrap()).unwrap();
        let mut lab = header(LABELS_MAGIC, &[1]);
        lab.push(4);
        fs::write(dir.path().join("l"), lab).unwrap();
        let pool = load_idx(dir.path().join("i.gz"), dir.path().join("l")).unwrap();
        assert_eq!(pool.features.data(), &[0.0, 1.0, 0.2]);
    }
}
