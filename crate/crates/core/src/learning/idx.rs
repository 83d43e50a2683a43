//! IDX (MNIST-style) image/label file reader.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt};

use super::data::Dataset;
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn truncated(path: &Path) -> Error {
    Error::Dataset(format!("truncated IDX file {}", path.display()))
}

fn read_header(path: &Path, bytes: &[u8], magic: u32, dims: usize) -> Result<(Vec<usize>, usize)> {
    let mut cur = Cursor::new(bytes);
    let found = cur.read_u32::<BigEndian>().map_err(|_| truncated(path))?;
    if found != magic {
        return Err(Error::BadMagic {
            path: path.display().to_string(),
            expected: magic,
            found,
        });
    }
    let mut shape = Vec::with_capacity(dims);
    for _ in 0..dims {
        shape.push(cur.read_u32::<BigEndian>().map_err(|_| truncated(path))? as usize);
    }
    Ok((shape, cur.position() as usize))
}

/// Loads an image/label file pair. Pixels are scaled to `[0, 1]` and each
/// image flattened to `rows * cols` features; `limit` keeps the first
/// examples only. The class count is taken as `max(label) + 1`, at least 10
/// for digit data.
pub fn load_idx(images_path: &Path, labels_path: &Path, limit: Option<usize>) -> Result<Dataset> {
    if limit == Some(0) {
        return Err(Error::EmptyDataset);
    }
    let labels_bytes = fs::read(labels_path)?;
    let (lshape, loff) = read_header(labels_path, &labels_bytes, LABELS_MAGIC, 1)?;
    let images_bytes = fs::read(images_path)?;
    let (ishape, ioff) = read_header(images_path, &images_bytes, IMAGES_MAGIC, 3)?;

    let (n_images, rows, cols) = (ishape[0], ishape[1], ishape[2]);
    if n_images != lshape[0] {
        return Err(Error::Dataset(format!(
            "image/label count mismatch: {n_images} images, {} labels",
            lshape[0]
        )));
    }
    let take = limit.map_or(n_images, |l| l.min(n_images));
    if take == 0 {
        return Err(Error::EmptyDataset);
    }
    let dim = rows * cols;

    let mut pixels = vec![0u8; take * dim];
    Cursor::new(&images_bytes[ioff..])
        .read_exact(&mut pixels)
        .map_err(|_| truncated(images_path))?;
    let mut raw_labels = vec![0u8; take];
    Cursor::new(&labels_bytes[loff..])
        .read_exact(&mut raw_labels)
        .map_err(|_| truncated(labels_path))?;

    let features = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    let labels: Vec<usize> = raw_labels.iter().map(|&y| usize::from(y)).collect();
    let n_classes = (labels.iter().copied().max().unwrap_or(0) + 1).max(10);
    Dataset::new(features, labels, dim, n_classes)
}

/// Writes an IDX pair; the inverse of [`load_idx`] up to pixel quantization.
pub fn write_idx(
    images_path: &Path,
    labels_path: &Path,
    rows: usize,
    cols: usize,
    pixels: &[u8],
    labels: &[u8],
) -> Result<()> {
    use byteorder::WriteBytesExt;
    let n = labels.len();
    if pixels.len() != n * rows * cols {
        return Err(Error::Dimension {
            expected: n * rows * cols,
            got: pixels.len(),
        });
    }
    let mut img = Vec::with_capacity(16 + pixels.len());
    img.write_u32::<BigEndian>(IMAGES_MAGIC)?;
    img.write_u32::<BigEndian>(n as u32)?;
    img.write_u32::<BigEndian>(rows as u32)?;
    img.write_u32::<BigEndian>(cols as u32)?;
    img.extend_from_slice(pixels);
    fs::write(images_path, img)?;

    let mut lab = Vec::with_capacity(8 + n);
    lab.write_u32::<BigEndian>(LABELS_MAGIC)?;
    lab.write_u32::<BigEndian>(n as u32)?;
    lab.extend_from_slice(labels);
    fs::write(labels_path, lab)?;
    Ok(())
}
