use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use super::ImageDataset;
use crate::error::{Error, Result};

/// Unsigned-byte, three dimensions.
pub const IMAGE_MAGIC: u32 = 0x0000_0803;
/// Unsigned-byte, one dimension.
pub const LABEL_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_be_bytes(buf))
}

fn expect_magic(r: &mut impl Read, want: u32, what: &str) -> Result<()> {
    let magic = read_u32_be(r)?;
    if magic != want {
        return Err(Error::Format(format!(
            "{what} file has magic {magic:#010x}, expected {want:#010x}"
        )));
    }
    Ok(())
}

/// Reads an IDX image file. Returns `(count, rows, cols, raw bytes)`.
pub fn read_idx_images(r: &mut impl Read) -> Result<(usize, usize, usize, Vec<u8>)> {
    expect_magic(r, IMAGE_MAGIC, "image")?;
    let n = read_u32_be(r)? as usize;
    let rows = read_u32_be(r)? as usize;
    let cols = read_u32_be(r)? as usize;
    let mut bytes = vec![0u8; n * rows * cols];
    r.read_exact(&mut bytes)?;
    Ok((n, rows, cols, bytes))
}

pub fn read_idx_labels(r: &mut impl Read) -> Result<Vec<u8>> {
    expect_magic(r, LABEL_MAGIC, "label")?;
    let n = read_u32_be(r)? as usize;
    let mut labels = vec![0u8; n];
    r.read_exact(&mut labels)?;
    Ok(labels)
}

/// Loads an IDX image/label pair, scaling pixel bytes by 1/255.
///
/// The class count is one past the largest label present.
pub fn load_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<ImageDataset> {
    let images_path = images_path.as_ref();
    let mut img = BufReader::new(File::open(images_path)?);
    let mut lab = BufReader::new(File::open(labels_path.as_ref())?);
    let (n, rows, cols, bytes) = read_idx_images(&mut img)?;
    let labels = read_idx_labels(&mut lab)?;
    if labels.len() != n {
        return Err(Error::Consistency(format!(
            "{n} images but {} labels",
            labels.len()
        )));
    }
    let pixels = bytes.iter().map(|&b| f32::from(b) / 255.0).collect();
    let labels: Vec<usize> = labels.into_iter().map(usize::from).collect();
    let class_count = labels.iter().max().map_or(0, |&m| m + 1);
    let name = images_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("idx")
        .to_string();
    ImageDataset::new(name, rows, cols, class_count, pixels, labels)
}
