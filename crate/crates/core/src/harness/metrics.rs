//! Metric records and their CSV / JSON-lines encodings.
//!
//! CSV columns, in order:
//! `seed,step,kind,return,ep_len,actor_loss,critic_loss,eu_mean,explore_frac,wall_ms`.
//! `kind` is `train` (one row per finished training episode) or `eval` (one
//! row per evaluation round, `return`/`ep_len` averaged over its episodes).
//! Loss and exploration columns summarize the steps since the previous
//! training row and are empty when nothing was measured.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::LogFormat;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordKind {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub seed: u64,
    pub step: u64,
    pub kind: RecordKind,
    #[serde(rename = "return")]
    pub ret: f64,
    pub ep_len: f64,
    pub actor_loss: Option<f64>,
    pub critic_loss: Option<f64>,
    pub eu_mean: Option<f64>,
    pub explore_frac: Option<f64>,
    pub wall_ms: Option<u64>,
}

enum Sink {
    Csv(csv::Writer<BufWriter<File>>),
    Jsonl(BufWriter<File>),
}

/// Appends records to a metrics file; buffered output is flushed on drop.
pub struct MetricWriter {
    sink: Sink,
    path: PathBuf,
}

impl MetricWriter {
    pub fn create(path: &Path, format: LogFormat) -> Result<Self> {
        let file = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        let sink = match format {
            LogFormat::Csv => Sink::Csv(csv::Writer::from_writer(file)),
            LogFormat::Jsonl => Sink::Jsonl(file),
        };
        Ok(Self {
            sink,
            path: path.to_owned(),
        })
    }

    pub fn write(&mut self, rec: &MetricRecord) -> Result<()> {
        let res = match &mut self.sink {
            Sink::Csv(w) => w.serialize(rec).map_err(std::io::Error::from),
            Sink::Jsonl(w) => {
                let line = serde_json::to_string(rec).expect("metric records always encode");
                writeln!(w, "{line}")
            }
        };
        res.map_err(|e| Error::io(&self.path, e))
    }

    pub fn flush(&mut self) -> Result<()> {
        let res = match &mut self.sink {
            Sink::Csv(w) => w.flush(),
            Sink::Jsonl(w) => w.flush(),
        };
        res.map_err(|e| Error::io(&self.path, e))
    }
}

impl Drop for MetricWriter {
    fn drop(&mut self) {
        let _ = self.flush();
    }
}

/// Reads a metrics file written in either format, by extension.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: String| Error::usage(format!("{}: {msg}", path.display()));
    if path.extension().is_some_and(|e| e == "jsonl") {
        BufReader::new(file)
            .lines()
            .filter(|l| !l.as_ref().is_ok_and(|l| l.trim().is_empty()))
            .map(|l| {
                let l = l.map_err(|e| Error::io(path, e))?;
                serde_json::from_str(&l).map_err(|e| bad(e.to_string()))
            })
            .collect()
    } else {
        csv::Reader::from_reader(file)
            .deserialize()
            .map(|r| r.map_err(|e| bad(e.to_string())))
            .collect()
    }
}
