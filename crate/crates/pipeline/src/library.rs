//! The controller library consulted online when a line trips.

use std::collections::HashMap;
use std::path::Path;

use gridgroup_core::metrics::MetricKind;
use gridgroup_core::synthesis::{ControllerGain, ControllerRecord, NormKind};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{io_err, json_err, PipelineError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LibraryGroup {
    /// Line id of the group's center.
    pub center: u32,
    /// Members are `controller.group`.
    pub controller: ControllerRecord,
}

/// On-disk form of a [`ControllerLibrary`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LibraryFile {
    pub schema_version: u32,
    pub generator: String,
    pub network_hash: String,
    pub config_hash: String,
    pub metric: MetricKind,
    pub algorithm: String,
    pub norm_kind: NormKind,
    pub contingency_ids: Vec<u32>,
    pub groups: Vec<LibraryGroup>,
    pub nominal: ControllerRecord,
}

/// A validated library with an O(1) line → group index.
#[derive(Debug, Clone)]
pub struct ControllerLibrary {
    file: LibraryFile,
    gains: Vec<ControllerGain>,
    nominal: ControllerGain,
    index: HashMap<u32, usize>,
}

#[derive(Debug, Error)]
#[error("line {line_id} is not covered by the controller library; nominal controller applies")]
pub struct UnhandledContingency<'a> {
    pub line_id: u32,
    pub nominal: &'a ControllerGain,
}

/// The gain of the group containing `line_id`. Unknown lines (bridges,
/// unmodeled lines) get the nominal gain through the error.
pub fn select_controller(lib: &ControllerLibrary, line_id: u32) -> std::result::Result<&ControllerGain, UnhandledContingency<'_>> {
    match lib.index.get(&line_id) {
        Some(&g) => Ok(&lib.gains[g]),
        None => Err(UnhandledContingency { line_id, nominal: &lib.nominal }),
    }
}

impl ControllerLibrary {
    pub fn from_file(file: LibraryFile) -> Result<Self> {
        let bad = |msg: String| PipelineError::Library(msg);
        if file.schema_version != SCHEMA_VERSION {
            return Err(bad(format!("schema version {} is not supported (expected {SCHEMA_VERSION})", file.schema_version)));
        }
        if file.groups.is_empty() {
            return Err(bad("library has no groups".into()));
        }
        let mut index = HashMap::with_capacity(file.contingency_ids.len());
        let mut gains = Vec::with_capacity(file.groups.len());
        for (g, group) in file.groups.iter().enumerate() {
            let members = &group.controller.group;
            if !members.contains(&group.center) {
                return Err(bad(format!("center {} is not a member of group {g}", group.center)));
            }
            for &id in members {
                if index.insert(id, g).is_some() {
                    return Err(bad(format!("line {id} appears in more than one group")));
                }
            }
            gains.push(group.controller.gain().map_err(|e| bad(format!("group {g}: {e}")))?);
        }
        let mut covered: Vec<u32> = index.keys().copied().collect();
        covered.sort_unstable();
        let mut ids = file.contingency_ids.clone();
        ids.sort_unstable();
        if covered != ids {
            return Err(bad("groups do not partition the contingency ids".into()));
        }
        let nominal = file.nominal.gain().map_err(|e| bad(format!("nominal: {e}")))?;
        Ok(Self { file, gains, nominal, index })
    }

    pub fn file(&self) -> &LibraryFile {
        &self.file
    }

    pub fn k(&self) -> usize {
        self.gains.len()
    }

    pub fn gains(&self) -> &[ControllerGain] {
        &self.gains
    }

    pub fn nominal(&self) -> &ControllerGain {
        &self.nominal
    }

    pub fn group_of(&self, line_id: u32) -> Option<usize> {
        self.index.get(&line_id).copied()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.file).expect("library serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::session::write_text(path.as_ref(), &self.to_json())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_file(serde_json::from_str(&text).map_err(json_err(path))?)
    }
}
