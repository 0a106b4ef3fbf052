//! Single observations and their JSON Lines encoding.

use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::Group;

/// One binary outcome for one group, e.g. `{"group":"b","y":1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Observation {
    pub group: Group,
    pub y: u8,
    /// Free-form timestamp, carried through untouched.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<serde_json::Value>,
}

impl Observation {
    pub fn new(group: Group, y: bool) -> Self {
        Self {
            group,
            y: y as u8,
            t: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.y > 1 {
            return Err(invalid(format!("y must be 0 or 1, got {}", self.y)));
        }
        Ok(())
    }

    pub fn outcome(&self) -> bool {
        self.y == 1
    }
}

/// Parses one JSON object into a validated observation.
pub fn parse_observation(text: &str) -> Result<Observation> {
    let obs: Observation = serde_json::from_str(text).map_err(|e| invalid(e.to_string()))?;
    obs.validate()?;
    Ok(obs)
}

/// Reads JSON Lines, skipping blank lines. Errors name the 1-based line number.
pub fn read_observations<R: BufRead>(reader: R) -> impl Iterator<Item = Result<Observation>> {
    reader.lines().enumerate().filter_map(|(i, line)| {
        let lineno = i + 1;
        match line {
            Err(e) => Some(Err(invalid(format!("line {lineno}: {e}")))),
            Ok(l) if l.trim().is_empty() => None,
            Ok(l) => Some(parse_observation(&l).map_err(|e| invalid(format!("line {lineno}: {e}")))),
        }
    })
}
