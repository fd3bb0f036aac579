//! Per-step optimization records and their on-disk formats.
//!
//! The text log is comma-separated with a header line
//! `step,total,id,attr,mask,norm`. The snapshot file is little-endian binary:
//!
//! ```text
//! magic   8 bytes   "LDSNAPv1"
//! n       u64       number of snapshots
//! dim     u64       flattened latent dimension
//! data    n·dim f64 row-major
//! ```

use std::io::{BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossTerms;

const MAGIC: &[u8; 8] = b"LDSNAPv1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub total: f64,
    pub id: f64,
    pub attr: f64,
    pub mask: f64,
    /// `‖Δh‖` of the direction evaluated at this step.
    pub norm: f64,
    #[serde(skip)]
    pub snapshot: Option<Vec<f64>>,
}

impl StepRecord {
    pub fn new(step: usize, terms: LossTerms, norm: f64, snapshot: Option<Vec<f64>>) -> Self {
        Self {
            step,
            total: terms.total,
            id: terms.id,
            attr: terms.attr,
            mask: terms.mask,
            norm,
            snapshot,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryLog {
    pub records: Vec<StepRecord>,
    /// Notable events, such as re-randomized degenerate directions.
    pub events: Vec<String>,
}

impl TrajectoryLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn first_total(&self) -> Option<f64> {
        self.records.first().map(|r| r.total)
    }

    pub fn last_total(&self) -> Option<f64> {
        self.records.last().map(|r| r.total)
    }

    pub fn write_text(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        for r in &self.records {
            w.serialize(r).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads records back from the text log; snapshots are not part of it.
    pub fn read_text(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        let records = r
            .deserialize()
            .collect::<std::result::Result<Vec<StepRecord>, _>>()
            .map_err(|e| csv_err(path, e))?;
        Ok(Self {
            records,
            events: Vec::new(),
        })
    }

    /// Snapshots of all records that carry one, as rows.
    pub fn snapshots(&self) -> Option<Array2<f64>> {
        let rows: Vec<&Vec<f64>> = self.records.iter().filter_map(|r| r.snapshot.as_ref()).collect();
        let dim = rows.first()?.len();
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Array2::from_shape_vec((rows.len(), dim), flat).ok()
    }

    pub fn write_snapshots(&self, path: &Path) -> Result<()> {
        let snaps = self
            .snapshots()
            .ok_or_else(|| Error::format(path, "trajectory has no latent snapshots to write"))?;
        write_snapshot_file(path, &snaps)
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::format(path, e)
}

pub fn write_snapshot_file(path: &Path, rows: &Array2<f64>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&(rows.nrows() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&(rows.ncols() as u64).to_le_bytes()).map_err(io)?;
    for v in rows.iter() {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_snapshot_file(path: &Path) -> Result<Array2<f64>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 24 || &bytes[..8] != MAGIC {
        return Err(Error::format(path, "not a latent snapshot file"));
    }
    let word = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().expect("8 bytes")) as usize;
    let (n, dim) = (word(8), word(16));
    let expected = n
        .checked_mul(dim)
        .and_then(|c| c.checked_mul(8))
        .and_then(|c| c.checked_add(24));
    if expected != Some(bytes.len()) {
        return Err(Error::format(
            path,
            format!(
                "header declares {n}x{dim} values but the file holds {} bytes",
                bytes.len()
            ),
        ));
    }
    let data = bytes[24..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Array2::from_shape_vec((n, dim), data).map_err(|e| Error::format(path, e))
}
