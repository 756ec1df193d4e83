//! On-disk dataset directory:
//!
//! ```text
//! meta        key=value lines: channels, height, width, classes, count
//! data.bin    count*C*H*W little-endian f32, examples back to back
//! labels.csv  one 0-based integer label per line
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{Dataset, InputDims};
use crate::error::{Error, Result};

pub fn write_dataset(dir: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let meta = format!(
        "channels={}\nheight={}\nwidth={}\nclasses={}\ncount={}\n",
        ds.dims.channels,
        ds.dims.height,
        ds.dims.width,
        ds.classes,
        ds.len()
    );
    fs::write(dir.join("meta"), meta)?;
    let mut bytes = Vec::with_capacity(ds.data.len() * 4);
    for v in &ds.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(dir.join("data.bin"), bytes)?;
    let mut labels = String::with_capacity(ds.len() * 3);
    for l in &ds.labels {
        labels.push_str(&l.to_string());
        labels.push('\n');
    }
    fs::write(dir.join("labels.csv"), labels)?;
    Ok(())
}

/// Loads raw (unnormalized) examples from a dataset directory.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let meta_path = dir.join("meta");
    let meta_text = fs::read_to_string(&meta_path)?;
    let malformed = |reason: String| Error::MalformedMeta {
        path: meta_path.clone(),
        reason,
    };
    let mut meta = BTreeMap::new();
    for (n, line) in meta_text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| malformed(format!("line {} is not key=value", n + 1)))?;
        let v: usize = v
            .trim()
            .parse()
            .map_err(|_| malformed(format!("`{}` is not a non-negative integer", v.trim())))?;
        meta.insert(k.trim().to_string(), v);
    }
    let field = |k: &str| {
        meta.get(k)
            .copied()
            .ok_or_else(|| malformed(format!("missing `{k}`")))
    };
    let dims = InputDims::new(field("channels")?, field("height")?, field("width")?);
    let classes = field("classes")?;
    let count = field("count")?;
    if dims.volume() == 0 {
        return Err(malformed(format!("empty input dims {dims}")));
    }

    let data_path = dir.join("data.bin");
    let raw = fs::read(&data_path)?;
    let expected = (count * dims.volume() * 4) as u64;
    if raw.len() as u64 != expected {
        return Err(Error::TruncatedData {
            path: data_path,
            expected,
            actual: raw.len() as u64,
        });
    }
    let data = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();

    let labels_path = dir.join("labels.csv");
    let text = fs::read_to_string(&labels_path)?;
    let mut labels = Vec::with_capacity(count);
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = || Error::LabelFile {
            path: labels_path.clone(),
            line: n + 1,
            label: line.to_string(),
            classes,
        };
        let l: usize = line.parse().map_err(|_| bad())?;
        if l >= classes {
            return Err(bad());
        }
        labels.push(l);
    }
    if labels.len() != count {
        return Err(malformed(format!(
            "count={count} but labels.csv has {} labels",
            labels.len()
        )));
    }
    Dataset::new(dims, classes, data, labels)
}
