//! Raw image tensors (`IMG1`) and label files.

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::store::Cursor;
use std::fmt::Write as _;
use std::path::Path;

pub const IMAGE_MAGIC: [u8; 4] = *b"IMG1";

/// 16-byte header (`IMG1`, C, H, W as u32) followed by `C*H*W` f32 values.
pub fn image_to_bytes(x: &ImageTensor) -> Vec<u8> {
    let (c, h, w) = x.shape();
    let mut out = Vec::with_capacity(16 + 4 * x.len());
    out.extend_from_slice(&IMAGE_MAGIC);
    for d in [c, h, w] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in x.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn image_from_bytes(bytes: &[u8]) -> Result<ImageTensor> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic: [u8; 4] = cur.take(4)?.try_into().expect("4 bytes");
    if magic != IMAGE_MAGIC {
        return Err(Error::BadMagic {
            expected: IMAGE_MAGIC,
            found: magic,
        });
    }
    let c = cur.u32()? as usize;
    let h = cur.u32()? as usize;
    let w = cur.u32()? as usize;
    if c == 0 || h == 0 || w == 0 {
        return Err(Error::InvalidGeometry(c, h, w));
    }
    let raw = cur.take(4 * c * h * w)?;
    let data = raw
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes(b.try_into().expect("4 bytes"))))
        .collect();
    ImageTensor::new(c, h, w, data)
}

pub fn write_image(path: &Path, x: &ImageTensor) -> Result<()> {
    std::fs::write(path, image_to_bytes(x))?;
    Ok(())
}

pub fn read_image(path: &Path) -> Result<ImageTensor> {
    image_from_bytes(&std::fs::read(path)?)
}

/// `sample_id,label_index` lines.
pub fn format_labels(labels: &[(u64, usize)]) -> String {
    let mut s = String::new();
    for (id, label) in labels {
        let _ = writeln!(s, "{id},{label}");
    }
    s
}

pub fn parse_labels(text: &str) -> Result<Vec<(u64, usize)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let (a, b) = line
                .split_once(',')
                .ok_or_else(|| Error::Parse(format!("labels line {}: missing comma", i + 1)))?;
            let id = a
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("labels line {}: {e}", i + 1)))?;
            let label = b
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("labels line {}: {e}", i + 1)))?;
            Ok((id, label))
        })
        .collect()
}

pub fn write_labels(path: &Path, labels: &[(u64, usize)]) -> Result<()> {
    std::fs::write(path, format_labels(labels))?;
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<Vec<(u64, usize)>> {
    parse_labels(&std::fs::read_to_string(path)?)
}
