//! Synthetic interactive scenarios with known latent behaviours, dataset
//! JSON-lines I/O, and a generic trajectory-table importer.
//!
//! # Dataset file format
//!
//! A JSON-lines file. The first line is a header
//!
//! ```json
//! {"format":"dipa-dataset","version":1,"count":2,"behaviours":["go","yield"]}
//! ```
//!
//! followed by exactly `count` record lines, each holding one preprocessed
//! instance, its latent behaviour label (`null` for imported data) and the
//! noiseless future under every behaviour (`[]` when unknown):
//!
//! ```json
//! {"instance":{...},"label":0,"prototypes":[[[x,y],...],...]}
//! ```
//!
//! Labels and prototypes are used for calibration checks only and never
//! reach the model.

mod import;
mod scenario;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use import::{import_generic_csv, ColumnMap, ImportConfig};
pub use scenario::{ScenarioKind, ScenarioSpec};

use crate::domain::{Instance, Vec2};
use crate::error::{DipaError, Result};
use crate::par::{map_range, Execution};

pub const DATASET_FORMAT: &str = "dipa-dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetSplit {
    pub instances: Vec<Instance>,
    /// Latent behaviour per instance, when known.
    pub labels: Vec<Option<usize>>,
    /// `prototypes[i][b]`: noiseless local-frame future of instance `i` under behaviour `b`.
    pub prototypes: Vec<Vec<Vec<Vec2>>>,
    pub behaviours: Vec<String>,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// First `n` records as one split and the rest as another.
    pub fn split_at(&self, n: usize) -> (DatasetSplit, DatasetSplit) {
        let n = n.min(self.len());
        let part = |r: std::ops::Range<usize>| DatasetSplit {
            instances: self.instances[r.clone()].to_vec(),
            labels: self.labels[r.clone()].to_vec(),
            prototypes: self.prototypes[r].to_vec(),
            behaviours: self.behaviours.clone(),
        };
        (part(0..n), part(n..self.len()))
    }

    fn check_lengths(&self) -> Result<()> {
        if self.labels.len() != self.len() || self.prototypes.len() != self.len() {
            return Err(DipaError::Data(
                "labels/prototypes do not match instance count".into(),
            ));
        }
        Ok(())
    }
}

/// Generates `n` preprocessed instances. Instance `i` draws from its own
/// ChaCha stream derived from the scenario seed, so output is identical under
/// any execution mode.
pub fn generate(spec: &ScenarioSpec, n: usize, exec: Execution) -> Result<DatasetSplit> {
    spec.validate()?;
    if n == 0 {
        return Err(DipaError::Config("generate needs n >= 1".into()));
    }
    let samples = map_range(exec, n, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(i as u64);
        scenario::sample(&mut rng, spec, i)
    });
    let mut out = DatasetSplit {
        behaviours: spec
            .kind
            .behaviours()
            .iter()
            .map(|s| s.to_string())
            .collect(),
        ..DatasetSplit::default()
    };
    for s in samples {
        out.instances.push(s.instance);
        out.labels.push(Some(s.label));
        out.prototypes.push(s.prototypes);
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    count: usize,
    #[serde(default)]
    behaviours: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Record {
    instance: Instance,
    label: Option<usize>,
    #[serde(default)]
    prototypes: Vec<Vec<Vec2>>,
}

pub fn save(split: &DatasetSplit, path: impl AsRef<Path>) -> Result<()> {
    split.check_lengths()?;
    let mut w = BufWriter::new(File::create(path)?);
    let header = Header {
        format: DATASET_FORMAT.into(),
        version: DATASET_VERSION,
        count: split.len(),
        behaviours: split.behaviours.clone(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for i in 0..split.len() {
        let rec = Record {
            instance: split.instances[i].clone(),
            label: split.labels[i],
            prototypes: split.prototypes[i].clone(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<DatasetSplit> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let err = |line: usize, detail: String| DipaError::Parse {
        path: shown.clone(),
        line,
        detail,
    };
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let header: Header = match lines.next() {
        Some((_, l)) => serde_json::from_str(&l?).map_err(|e| err(1, format!("header: {e}")))?,
        None => return Err(err(1, "empty file, expected header".into())),
    };
    if header.format != DATASET_FORMAT || header.version != DATASET_VERSION {
        return Err(err(
            1,
            format!("unsupported format {} v{}", header.format, header.version),
        ));
    }
    let mut split = DatasetSplit {
        behaviours: header.behaviours,
        ..DatasetSplit::default()
    };
    for (i, l) in lines {
        let l = l?;
        if l.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&l)
            .map_err(|e| err(i + 1, format!("record {}: {e}", split.len())))?;
        split.instances.push(rec.instance);
        split.labels.push(rec.label);
        split.prototypes.push(rec.prototypes);
    }
    if split.len() != header.count {
        return Err(err(
            split.len() + 1,
            format!(
                "header declares {} records, file has {}",
                header.count,
                split.len()
            ),
        ));
    }
    Ok(split)
}
