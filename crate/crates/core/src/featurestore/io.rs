//! Feature file formats.
//!
//! Binary layout (little-endian): magic `FSEL`, version `u32 = 1`, then
//! `n`, `d`, `k` as `u32`, `n` labels as `u32`, and `n × d` values as `f32`
//! in row-major order. Values are widened to `f64` on load and narrowed to
//! `f32` on save.
//!
//! CSV layout: header `label,f0,...,f{d-1}` followed by one row per sample.
//! The class count of a CSV file is the largest label plus one.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{FeatureSet, SplitRole};
use crate::error::{Error, Result};
use crate::numkit::Matrix;

const MAGIC: &[u8; 4] = b"FSEL";
const VERSION: u32 = 1;

pub fn write_binary<W: Write>(set: &FeatureSet, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    for v in [VERSION, set.len() as u32, set.dim() as u32, set.class_count() as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    for &l in set.labels() {
        w.write_all(&(l as u32).to_le_bytes())?;
    }
    for &x in set.features().data() {
        w.write_all(&(x as f32).to_le_bytes())?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

pub fn read_binary<R: Read>(mut r: R, role: SplitRole) -> Result<FeatureSet> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected FSEL")));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let n = read_u32(&mut r)? as usize;
    let d = read_u32(&mut r)? as usize;
    let k = read_u32(&mut r)? as usize;
    if n == 0 {
        return Err(Error::Validation("feature file has no samples".into()));
    }
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        labels.push(read_u32(&mut r)? as usize);
    }
    let mut bytes = vec![0u8; n * d * 4];
    r.read_exact(&mut bytes)?;
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    FeatureSet::new(Matrix::new(n, d, data)?, labels, k, role)
}

pub fn write_csv<W: Write>(set: &FeatureSet, mut w: W) -> Result<()> {
    let header: Vec<String> = std::iter::once("label".to_string())
        .chain((0..set.dim()).map(|j| format!("f{j}")))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for (row, l) in set.features().iter_rows().zip(set.labels()) {
        write!(w, "{l}")?;
        for x in row {
            write!(w, ",{x}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_csv<R: Read>(r: R, role: SplitRole) -> Result<FeatureSet> {
    let mut lines = BufReader::new(r).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty CSV file".into()))??;
    let cols: Vec<&str> = header.trim().split(',').collect();
    if cols.first() != Some(&"label") {
        return Err(Error::Format("CSV header must start with `label`".into()));
    }
    for (j, c) in cols[1..].iter().enumerate() {
        if *c != format!("f{j}") {
            return Err(Error::Format(format!("CSV header column {} is `{c}`, expected f{j}", j + 1)));
        }
    }
    let d = cols.len() - 1;
    let mut labels = Vec::new();
    let mut data = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = i + 1;
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != d + 1 {
            return Err(Error::Format(format!(
                "CSV row {row} has {} feature columns, header declares {d}",
                fields.len().saturating_sub(1)
            )));
        }
        let label = fields[0]
            .parse::<usize>()
            .map_err(|e| Error::Format(format!("CSV row {row}: bad label `{}`: {e}", fields[0])))?;
        labels.push(label);
        for f in &fields[1..] {
            data.push(
                f.parse::<f64>()
                    .map_err(|e| Error::Format(format!("CSV row {row}: bad value `{f}`: {e}")))?,
            );
        }
    }
    if labels.is_empty() {
        return Err(Error::Validation("feature file has no samples".into()));
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    FeatureSet::new(Matrix::new(labels.len(), d, data)?, labels, k, role)
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Loads a binary feature file, or CSV when the extension is `.csv`.
pub fn load_features(path: impl AsRef<Path>, role: SplitRole) -> Result<FeatureSet> {
    let path = path.as_ref();
    let file = File::open(path)?;
    if is_csv(path) {
        read_csv(file, role)
    } else {
        read_binary(BufReader::new(file), role)
    }
}

pub fn save_features(set: &FeatureSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path)?);
    if is_csv(path) {
        write_csv(set, &mut w)?;
    } else {
        write_binary(set, &mut w)?;
    }
    w.flush()?;
    Ok(())
}
