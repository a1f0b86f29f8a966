use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::detection::DetLossParts;
use crate::error::{Error, Result};

/// One line of `metrics.jsonl`. No wall-clock fields, so identical runs
/// produce identical streams.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Step {
        step: usize,
        phase: String,
        total: f64,
        det: DetLossParts,
        #[serde(skip_serializing_if = "Option::is_none")]
        dami: Option<f64>,
    },
    Dami {
        step: usize,
        l_contrast: f64,
        k: usize,
        i_hat: f64,
        s_pos_mean: f64,
        s_neg_mean: f64,
    },
    NumericFailure {
        step: usize,
        detail: String,
    },
    Eval(MetricsRecord),
}

/// Evaluation summary of one model under one noise setting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub ap50: f64,
    pub ap70: f64,
    /// Same head on ego features alone.
    pub ego_ap50: f64,
    pub ego_ap70: f64,
    pub scenes: usize,
    pub gt_boxes: usize,
    pub sigma_p: f64,
    pub sigma_r: f64,
}

pub struct MetricsWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(f),
        })
    }

    pub fn append(path: &Path) -> Result<Self> {
        let f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(f),
        })
    }

    pub fn write(&mut self, event: &Event) -> Result<()> {
        serde_json::to_writer(&mut self.out, event)?;
        self.out.write_all(b"\n").map_err(|e| Error::io(&self.path, e))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_events(path: &Path) -> Result<Vec<Event>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}
