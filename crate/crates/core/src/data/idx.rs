//! IDX (MNIST-style) ingestion.

use super::LongTailDataset;
use crate::error::{Error, Result};
use std::path::Path;

const IDX3_MAGIC: u32 = 0x0000_0803;
const IDX1_MAGIC: u32 = 0x0000_0801;

struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
    path: &'a str,
}

impl<'a> Reader<'a> {
    fn format_error(&self, message: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_string(),
            offset: self.offset as u64,
            message: message.into(),
        }
    }

    fn read_u32(&mut self) -> Result<u32> {
        if self.offset + 4 > self.bytes.len() {
            return Err(self.format_error("truncated while reading a u32"));
        }
        let raw: [u8; 4] = self.bytes[self.offset..self.offset + 4].try_into().unwrap();
        self.offset += 4;
        Ok(u32::from_be_bytes(raw))
    }

    fn read_bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.offset + n > self.bytes.len() {
            return Err(self.format_error(format!("truncated: {n} payload bytes expected")));
        }
        let slice = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(slice)
    }

    fn expect_eof(&self) -> Result<()> {
        if self.offset != self.bytes.len() {
            return Err(self.format_error(format!(
                "{} trailing bytes after payload",
                self.bytes.len() - self.offset
            )));
        }
        Ok(())
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Loads an IDX3 image file and IDX1 label file into a dataset. Pixels are
/// scaled to [0, 1] and each image is flattened to one feature row; classes
/// are relabeled into descending-count order.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LongTailDataset> {
    let image_bytes = read_file(images_path)?;
    let images_str = images_path.display().to_string();
    let mut r = Reader {
        bytes: &image_bytes,
        offset: 0,
        path: &images_str,
    };
    let magic = r.read_u32()?;
    if magic != IDX3_MAGIC {
        r.offset = 0;
        return Err(r.format_error(format!("bad magic {magic:#010x}, expected {IDX3_MAGIC:#010x}")));
    }
    let n = r.read_u32()? as usize;
    let rows = r.read_u32()? as usize;
    let cols = r.read_u32()? as usize;
    let dim = rows * cols;
    let pixels = r.read_bytes(n * dim)?;
    r.expect_eof()?;
    let features: Vec<f32> = pixels.iter().map(|&p| f32::from(p) / 255.0).collect();

    let label_bytes = read_file(labels_path)?;
    let labels_str = labels_path.display().to_string();
    let mut r = Reader {
        bytes: &label_bytes,
        offset: 0,
        path: &labels_str,
    };
    let magic = r.read_u32()?;
    if magic != IDX1_MAGIC {
        r.offset = 0;
        return Err(r.format_error(format!("bad magic {magic:#010x}, expected {IDX1_MAGIC:#010x}")));
    }
    let n_labels = r.read_u32()? as usize;
    if n_labels != n {
        return Err(r.format_error(format!(
            "label count {n_labels} does not match image count {n}"
        )));
    }
    let labels: Vec<u32> = r.read_bytes(n)?.iter().map(|&b| u32::from(b)).collect();
    r.expect_eof()?;

    LongTailDataset::from_unsorted_parts(features, labels, dim)
}
