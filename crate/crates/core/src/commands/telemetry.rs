use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One line of training telemetry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRecord {
    pub epoch: usize,
    pub batch: usize,
    /// Absent for DBM training, which has no single reconstruction.
    pub reconstruction_error: Option<f64>,
    pub mean_penalty: f64,
    pub mean_hidden_activation: f64,
    /// Seconds since the run started.
    pub wall_time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converged_fraction: Option<f64>,
}

/// Appends records as JSON lines. Each line goes out in a single write, so
/// a crash can only truncate the last record.
pub struct TelemetryWriter {
    file: File,
    path: std::path::PathBuf,
}

impl TelemetryWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(TelemetryWriter {
            file,
            path: path.to_path_buf(),
        })
    }

    pub fn write(&mut self, record: &TelemetryRecord) -> Result<()> {
        let mut line = serde_json::to_string(record)
            .map_err(|e| Error::Numerical(format!("unserializable telemetry: {e}")))?;
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .map_err(|e| Error::io(&self.path, e))
    }
}
