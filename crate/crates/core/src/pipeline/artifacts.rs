use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const TEAM_FILE: &str = "team.json";
pub const SCENARIOS_FILE: &str = "scenarios.json";
pub const OUTCOME_MODEL_FILE: &str = "outcome_model.json";
pub const RUNS_FILE: &str = "runs.json";
pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_MD: &str = "report.md";
pub const RESULTS_CSV: &str = "results.csv";
pub const TRAINING_LOG_CSV: &str = "training_log.csv";
pub const TEST_PREDICTIONS_CSV: &str = "test_predictions.csv";
pub const SCENARIO_DIR: &str = "scenarios";
pub const ASSIGNMENT_DIR: &str = "assignments";
pub const INCOMPLETE_MARKER: &str = "INCOMPLETE";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub config_hash: String,
    pub stage: String,
    pub stage_version: u32,
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    header: Header,
    body: T,
}

#[derive(Deserialize)]
struct HeaderOnly {
    header: Header,
}

pub fn write_json<T: Serialize>(path: &Path, header: Header, body: &T) -> Result<()> {
    #[derive(Serialize)]
    struct Out<'a, T> {
        header: Header,
        body: &'a T,
    }
    let mut text = serde_json::to_string_pretty(&Out { header, body })?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Reads an upstream artifact, refusing it when missing or produced under a
/// different config hash or stage version.
pub fn read_json<T: DeserializeOwned>(path: &Path, expected: &Header) -> Result<T> {
    let stale = |reason: String| Error::Stale {
        path: path.to_path_buf(),
        reason,
    };
    let text = std::fs::read_to_string(path)
        .map_err(|_| stale(format!("missing; run '{}' first", expected.stage)))?;
    let head: HeaderOnly = serde_json::from_str(&text).map_err(|e| stale(format!("unreadable header: {e}")))?;
    if head.header.stage != expected.stage || head.header.stage_version != expected.stage_version {
        return Err(stale(format!(
            "produced by {} v{}, expected {} v{}",
            head.header.stage, head.header.stage_version, expected.stage, expected.stage_version
        )));
    }
    if head.header.config_hash != expected.config_hash {
        return Err(stale("config hash differs from the current config".into()));
    }
    let env: Envelope<T> = serde_json::from_str(&text)?;
    Ok(env.body)
}

/// Marks `dir` as holding partial output until dropped via [`Marker::finish`].
pub struct Marker {
    path: PathBuf,
}

impl Marker {
    pub fn start(dir: &Path, stage: &str) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(INCOMPLETE_MARKER);
        std::fs::write(&path, format!("{stage}\n"))?;
        Ok(Marker { path })
    }

    pub fn finish(self) -> Result<()> {
        std::fs::remove_file(&self.path)?;
        Ok(())
    }
}
