//! CSV readers and writers for samples and coupled pairs.

use std::io::Write;
use std::path::Path;

use crate::coupling::CoupledPair;
use crate::error::{Error, Result};
use crate::mechanism::MassVector;

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn header(prefix: &str, d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("{prefix}_{i}")).collect()
}

fn fmt(x: f64) -> String {
    format!("{x:e}")
}

/// One row per sample, columns `x_1..x_d`.
pub fn samples_csv(samples: &[MassVector]) -> Result<Vec<u8>> {
    let d = samples.first().map_or(0, MassVector::dim);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header("x", d))?;
    for s in samples {
        w.write_record(s.as_slice().iter().map(|&x| fmt(x)))?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Columns `left_1..left_d, right_1..right_d, cost`.
pub fn pairs_csv(pairs: &[CoupledPair]) -> Result<Vec<u8>> {
    let d = pairs.first().map_or(0, |p| p.left.dim());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut head = header("left", d);
    head.extend(header("right", d));
    head.push("cost".into());
    w.write_record(head)?;
    for p in pairs {
        let row = p
            .left
            .as_slice()
            .iter()
            .chain(p.right.as_slice())
            .copied()
            .chain([p.cost()])
            .map(fmt);
        w.write_record(row)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Reads a sample file written by [`samples_csv`] (any header names).
pub fn read_samples_csv(path: &Path) -> Result<Vec<MassVector>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let v = rec
            .iter()
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidParameter(format!("{}: bad number {f:?}: {e}", path.display())))
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(MassVector::new(v)?);
    }
    if out.is_empty() {
        return Err(Error::EmptySamples);
    }
    Ok(out)
}
