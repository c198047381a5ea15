//! Native dataset file format.
//!
//! Layout: magic "RLTD", then little-endian fields
//! version u32 = 1, K u32, d u32, N u64, K class counts (u32),
//! N labels (u32), N*d features (f32). Round-trips are byte-exact.

use super::LongTailDataset;
use crate::error::{Error, Result};
use std::io::Write;
use std::path::Path;

const MAGIC: &[u8; 4] = b"RLTD";
const VERSION: u32 = 1;

pub fn save_dataset(dataset: &LongTailDataset, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(24 + dataset.len() * (4 + dataset.dim() * 4));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(dataset.num_classes() as u32).to_le_bytes());
    buf.extend_from_slice(&(dataset.dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(dataset.len() as u64).to_le_bytes());
    for &count in dataset.class_counts() {
        buf.extend_from_slice(&count.to_le_bytes());
    }
    for &label in dataset.labels() {
        buf.extend_from_slice(&label.to_le_bytes());
    }
    for &value in dataset.features() {
        buf.extend_from_slice(&value.to_le_bytes());
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    file.write_all(&buf).map_err(|e| Error::io(path.display().to_string(), e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
    path: String,
}

impl<'a> Cursor<'a> {
    fn format_error(&self, message: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.clone(),
            offset: self.offset as u64,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.offset + n > self.bytes.len() {
            return Err(self.format_error(format!("truncated: {n} more bytes expected")));
        }
        let slice = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(slice)
    }

    fn read_u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn read_u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn load_dataset(path: &Path) -> Result<LongTailDataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut cur = Cursor {
        bytes: &bytes,
        offset: 0,
        path: path.display().to_string(),
    };

    let magic = cur.take(4)?;
    if magic != MAGIC {
        cur.offset = 0;
        return Err(cur.format_error("bad magic, expected RLTD"));
    }
    let version = cur.read_u32()?;
    if version != VERSION {
        return Err(cur.format_error(format!("unsupported version {version}")));
    }
    let k = cur.read_u32()? as usize;
    let dim = cur.read_u32()? as usize;
    let n = cur.read_u64()? as usize;

    let mut counts = Vec::with_capacity(k);
    for _ in 0..k {
        counts.push(cur.read_u32()?);
    }
    let mut labels = Vec::with_capacity(n);
    for chunk in cur.take(n * 4)?.chunks_exact(4) {
        labels.push(u32::from_le_bytes(chunk.try_into().unwrap()));
    }
    let mut features = Vec::with_capacity(n * dim);
    for chunk in cur.take(n * dim * 4)?.chunks_exact(4) {
        features.push(f32::from_le_bytes(chunk.try_into().unwrap()));
    }
    if cur.offset != bytes.len() {
        return Err(cur.format_error(format!("{} trailing bytes", bytes.len() - cur.offset)));
    }

    let dataset = LongTailDataset::from_sorted_parts(features, labels, dim)?;
    if dataset.class_counts() != counts.as_slice() {
        return Err(Error::Format {
            path: path.display().to_string(),
            offset: 20,
            message: "stored class counts disagree with labels".to_string(),
        });
    }
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{longtail_counts, synth_gaussian};

    #[test]
    fn round_trip_is_bit_identical() {
        let counts = longtail_counts(30, 4, 0.2).unwrap();
        let pair = synth_gaussian(6, &counts, 3.0, 5, 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.rltd");
        save_dataset(&pair.train, &path).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(loaded, pair.train);

        // Save the loaded copy again: identical bytes.
        let path2 = dir.path().join("again.rltd");
        save_dataset(&loaded, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.rltd");
        std::fs::write(&path, b"NOPE\x01\x00\x00\x00").unwrap();
        let err = load_dataset(&path).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }));
    }
}
