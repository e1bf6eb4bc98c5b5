//! A workspace directory holding every stage's artifacts:
//!
//! ```text
//! fit/       model.bmdl, params.json, mesh.obj, landmarks.json
//! paint/     texture.png (+ texture.json), preview.png, schedule.json
//! learn/     <keyword>.rfc, <keyword>.ckpt.json, <keyword>.log.jsonl
//! refine/    same layout as learn/
//! avatar/    the composed bundle
//! renders/   view-NN.png
//! animate/   frame-NNN.png
//! ```
//!
//! Each completed stage leaves `<stage>/stage.json` naming the hash of its
//! inputs and of every output file. A stage whose record matches its current
//! inputs and whose outputs are intact is not re-run.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::fsutil::{self, WorkspaceLock};

pub const RECORD: &str = "stage.json";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Fit,
    Paint,
    Learn,
    Refine,
    Compose,
    Render,
    Animate,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Fit,
        Stage::Paint,
        Stage::Learn,
        Stage::Refine,
        Stage::Compose,
        Stage::Render,
        Stage::Animate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Fit => "fit",
            Stage::Paint => "paint",
            Stage::Learn => "learn",
            Stage::Refine => "refine",
            Stage::Compose => "compose",
            Stage::Render => "render",
            Stage::Animate => "animate",
        }
    }

    /// Output directory relative to the workspace root.
    pub fn dir(self) -> &'static str {
        match self {
            Stage::Compose => "avatar",
            Stage::Render => "renders",
            other => other.as_str(),
        }
    }

    /// Stages whose outputs this stage reads. Refinement is a prerequisite of
    /// compose only when enabled.
    pub fn prerequisites(self, refine_enabled: bool) -> Vec<Stage> {
        match self {
            Stage::Fit => vec![],
            Stage::Paint => vec![Stage::Fit],
            Stage::Learn => vec![Stage::Fit, Stage::Paint],
            Stage::Refine => vec![Stage::Fit, Stage::Paint, Stage::Learn],
            Stage::Compose if refine_enabled => {
                vec![Stage::Fit, Stage::Paint, Stage::Learn, Stage::Refine]
            }
            Stage::Compose => vec![Stage::Fit, Stage::Paint, Stage::Learn],
            Stage::Render | Stage::Animate => vec![Stage::Compose],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageRecord {
    pub schema_version: u32,
    pub stage: Stage,
    /// Hash of the configuration subset and upstream records the stage read.
    pub input_hash: String,
    /// Output files relative to the workspace root, with their SHA-256.
    pub outputs: BTreeMap<String, String>,
}

impl StageRecord {
    /// Hash identifying this record's outputs, fed into downstream inputs.
    pub fn digest(&self) -> String {
        fsutil::sha256_hex(&serde_json::to_vec(&self.outputs).expect("outputs serialize"))
    }
}

/// An open, locked workspace.
#[derive(Debug)]
pub struct Workspace {
    root: PathBuf,
    _lock: WorkspaceLock,
}

impl Workspace {
    /// Creates the directory if needed and takes the lock.
    pub fn open(root: &Path) -> Result<Self> {
        let lock = WorkspaceLock::acquire(root)?;
        Ok(Workspace {
            root: root.to_path_buf(),
            _lock: lock,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, relative: &str) -> PathBuf {
        self.root.join(relative)
    }

    pub fn stage_path(&self, stage: Stage, file: &str) -> PathBuf {
        self.root.join(stage.dir()).join(file)
    }

    fn record_path(&self, stage: Stage) -> PathBuf {
        self.stage_path(stage, RECORD)
    }

    pub fn record(&self, stage: Stage) -> Result<Option<StageRecord>> {
        let path = self.record_path(stage);
        if !path.is_file() {
            return Ok(None);
        }
        fsutil::read_json(&path).map(Some)
    }

    /// The record of a completed prerequisite, or an error naming it.
    pub fn require(&self, stage: Stage, required: Stage) -> Result<StageRecord> {
        let missing = || CliError::Prerequisite {
            stage: stage.to_string(),
            required: required.to_string(),
        };
        let record = self.record(required)?.ok_or_else(missing)?;
        if record.outputs.keys().any(|f| !self.path(f).is_file()) {
            return Err(missing());
        }
        Ok(record)
    }

    /// Whether `stage` already completed with these inputs and its outputs
    /// are byte-identical to the recorded ones.
    pub fn is_current(&self, stage: Stage, input_hash: &str) -> Result<bool> {
        let Some(record) = self.record(stage)? else {
            return Ok(false);
        };
        if record.input_hash != input_hash {
            return Ok(false);
        }
        for (file, hash) in &record.outputs {
            let path = self.path(file);
            if !path.is_file() || fsutil::file_sha256(&path)? != *hash {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Removes the record so an interrupted re-run is never mistaken for a
    /// completed one.
    pub fn invalidate(&self, stage: Stage) -> Result<()> {
        let path = self.record_path(stage);
        match std::fs::remove_file(&path) {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
            Err(e) => Err(CliError::io(&path, e)),
        }
    }

    /// Records `stage` as complete with the given output files.
    pub fn commit(
        &self,
        stage: Stage,
        input_hash: &str,
        outputs: &[PathBuf],
    ) -> Result<StageRecord> {
        let mut map = BTreeMap::new();
        for path in outputs {
            let relative = path
                .strip_prefix(&self.root)
                .map_err(|_| CliError::format(path, "output lies outside the workspace"))?;
            let key = relative
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            map.insert(key, fsutil::file_sha256(path)?);
        }
        let record = StageRecord {
            schema_version: SCHEMA_VERSION,
            stage,
            input_hash: input_hash.to_string(),
            outputs: map,
        };
        fsutil::write_json(&self.record_path(stage), &record)?;
        Ok(record)
    }
}

/// Canonical hash of any serializable stage input description.
pub fn input_hash<T: Serialize>(inputs: &T) -> String {
    fsutil::sha256_hex(&serde_json::to_vec(inputs).expect("inputs serialize"))
}
