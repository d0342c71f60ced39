use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn format_err(reason: impl Into<String>) -> Error {
    Error::Format {
        format: "IDX",
        reason: reason.into(),
    }
}

fn read_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| format_err(format!("truncated {what} header")))
}

/// Returns `(dims, payload)`.
fn parse(bytes: &[u8], magic: u32, what: &str) -> Result<(Vec<usize>, Vec<u8>)> {
    let found = read_u32(bytes, 0, what)?;
    if found != magic {
        return Err(format_err(format!(
            "{what} file has magic {found:#010x}, expected {magic:#010x}"
        )));
    }
    let ndim = (magic & 0xff) as usize;
    let dims = (0..ndim)
        .map(|i| read_u32(bytes, 4 + 4 * i, what).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let start = 4 + 4 * ndim;
    let len: usize = dims.iter().product();
    let payload = bytes
        .get(start..start + len)
        .ok_or_else(|| format_err(format!("truncated {what} payload: expected {len} bytes")))?;
    if bytes.len() != start + len {
        return Err(format_err(format!(
            "{what} file has {} trailing bytes",
            bytes.len() - start - len
        )));
    }
    Ok((dims, payload.to_vec()))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Parse an IDX image file (`[N, rows, cols]` unsigned bytes) and its label file.
/// Pixels are scaled to `[0, 1]`.
pub fn load_idx(image_path: &Path, label_path: &Path) -> Result<Dataset> {
    let (dims, pixels) = parse(&read(image_path)?, IMAGE_MAGIC, "image")?;
    let (label_dims, labels) = parse(&read(label_path)?, LABEL_MAGIC, "label")?;
    if dims[0] != label_dims[0] {
        return Err(format_err(format!("{} images but {} labels", dims[0], label_dims[0])));
    }
    if dims.contains(&0) {
        return Err(format_err("empty image set"));
    }
    let labels: Vec<usize> = labels.into_iter().map(usize::from).collect();
    let class_count = labels.iter().max().map_or(0, |&m| m + 1).max(2);
    let images = Tensor::new(
        &[dims[0], 1, dims[1], dims[2]],
        pixels.into_iter().map(|p| p as f32 / 255.0).collect(),
    )?;
    Dataset::new(images, labels, class_count)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, bytes: &[u8]) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, bytes).unwrap();
        p
    }

    fn header(magic: u32, dims: &[u32]) -> Vec<u8> {
        let mut v = magic.to_be_bytes().to_vec();
        for d in dims {
            v.extend_from_slice(&d.to_be_bytes());
        }
        v
    }

    #[test]
    fn fixture_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let pixels: Vec<u8> = (0..4 * 2 * 3).map(|i| (i * 10) as u8).collect();
        let mut img = header(IMAGE_MAGIC, &[4, 2, 3]);
        img.extend_from_slice(&pixels);
        let mut lab = header(LABEL_MAGIC, &[4]);
        lab.extend_from_slice(&[3, 0, 1, 2]);
        let ds = load_idx(&write(dir.path(), "i", &img), &write(dir.path(), "l", &lab)).unwrap();
        assert_eq!(ds.images.shape(), &[4, 1, 2, 3]);
        assert_eq!(ds.labels, vec![3, 0, 1, 2]);
        assert_eq!(ds.class_count, 4);
        let expect: Vec<f32> = pixels.iter().map(|&p| p as f32 / 255.0).collect();
        assert_eq!(ds.images.data(), expect.as_slice());
    }

    #[test]
    fn count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = header(IMAGE_MAGIC, &[4, 1, 1]);
        img.extend_from_slice(&[0; 4]);
        let mut lab = header(LABEL_MAGIC, &[3]);
        lab.extend_from_slice(&[0; 3]);
        let err = load_idx(&write(dir.path(), "i", &img), &write(dir.path(), "l", &lab)).unwrap_err();
        assert!(err.to_string().contains("4 images but 3 labels"), "{err}");
    }

    #[test]
    fn empty_and_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let empty = write(dir.path(), "e", &[]);
        let err = load_idx(&empty, &empty).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
        let bad = write(dir.path(), "b", &header(0x0803_0000, &[]));
        assert!(load_idx(&bad, &empty).unwrap_err().to_string().contains("magic"));
    }

    #[test]
    fn truncated_payload() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = header(IMAGE_MAGIC, &[2, 2, 2]);
        img.extend_from_slice(&[0; 5]);
        let mut lab = header(LABEL_MAGIC, &[2]);
        lab.extend_from_slice(&[0; 2]);
        let err = load_idx(&write(dir.path(), "i", &img), &write(dir.path(), "l", &lab)).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }
}
