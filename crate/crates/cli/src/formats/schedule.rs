//! View schedule files: `{"schema_version": 1, "schedule": {...}}`.

use std::path::Path;

use compavatar_core::texture_paint::ViewSchedule;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::fsutil;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleFile {
    pub schema_version: u32,
    pub schedule: ViewSchedule,
}

pub fn save_schedule(schedule: &ViewSchedule, path: &Path) -> Result<()> {
    fsutil::write_json(
        path,
        &ScheduleFile {
            schema_version: SCHEMA_VERSION,
            schedule: schedule.clone(),
        },
    )
}

pub fn load_schedule(path: &Path) -> Result<ViewSchedule> {
    let file: ScheduleFile = fsutil::read_json(path)?;
    if file.schema_version != SCHEMA_VERSION {
        return Err(CliError::format(
            path,
            format!("schema_version {} is not supported", file.schema_version),
        ));
    }
    file.schedule
        .validate()
        .map_err(|e| CliError::format(path, e.to_string()))?;
    Ok(file.schedule)
}

/// Hash of a schedule's canonical JSON, recorded with painted textures.
pub fn schedule_hash(schedule: &ViewSchedule) -> String {
    fsutil::sha256_hex(&serde_json::to_vec(schedule).expect("schedule serializes"))
}
