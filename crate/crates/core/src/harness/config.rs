// SPDX-License-Identifier: Apache-2.0

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::protocol::ReportKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "tpm-tee")]
    TpmTee,
    #[serde(rename = "tee-tpm")]
    TeeTpm,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::TpmTee, Direction::TeeTpm];

    pub fn kind(self) -> ReportKind {
        match self {
            Direction::TpmTee => ReportKind::TpmOuter,
            Direction::TeeTpm => ReportKind::TeeOuter,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.kind().token_type())
    }
}

impl FromStr for Direction {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tpm-tee" => Ok(Direction::TpmTee),
            "tee-tpm" => Ok(Direction::TeeTpm),
            other => Err(HarnessError::Config(format!("unknown direction {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    Splice,
    SpoofId,
    Replay,
    StaleToken,
    SeedRollback,
    ImageForge,
}

impl AttackKind {
    pub const ALL: [AttackKind; 6] = [
        AttackKind::Splice,
        AttackKind::SpoofId,
        AttackKind::Replay,
        AttackKind::StaleToken,
        AttackKind::SeedRollback,
        AttackKind::ImageForge,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Splice => "splice",
            AttackKind::SpoofId => "spoof-id",
            AttackKind::Replay => "replay",
            AttackKind::StaleToken => "stale-token",
            AttackKind::SeedRollback => "seed-rollback",
            AttackKind::ImageForge => "image-forge",
        }
    }
}

impl FromStr for AttackKind {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AttackKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| HarnessError::Config(format!("unknown attack {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClockMode {
    Virtual,
    Wall,
}

/// Node counts by attestation mode. Composite nodes attest in the
/// scenario's direction; the others attest with a single report type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Topology {
    pub composite: usize,
    pub tpm_only: usize,
    pub tee_only: usize,
}

impl Default for Topology {
    fn default() -> Self {
        Topology { composite: 4, tpm_only: 0, tee_only: 0 }
    }
}

impl Topology {
    pub fn total(&self) -> usize {
        self.composite + self.tpm_only + self.tee_only
    }

    /// Report type node `index` attests with.
    pub fn kind_of(&self, index: usize, direction: Direction) -> ReportKind {
        if index < self.composite {
            direction.kind()
        } else if index < self.composite + self.tpm_only {
            ReportKind::TpmOnly
        } else {
            ReportKind::TeeOnly
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub direction: Direction,
    pub iterations: usize,
    pub concurrency: usize,
    pub clock: ClockMode,
    pub topology: Topology,
    pub faults: Vec<AttackKind>,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            name: "default".into(),
            seed: 1,
            direction: Direction::TpmTee,
            iterations: 1,
            concurrency: 1,
            clock: ClockMode::Virtual,
            topology: Topology::default(),
            faults: Vec::new(),
        }
    }
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let s: Scenario = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.topology.total() == 0 {
            return Err(HarnessError::Config("topology has no nodes".into()));
        }
        if self.concurrency == 0 {
            return Err(HarnessError::Config("concurrency must be at least 1".into()));
        }
        if self.iterations == 0 {
            return Err(HarnessError::Config("iterations must be at least 1".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_config() {
        let s = Scenario::parse(
            r#"
            name = "pair"
            seed = 9
            direction = "tee-tpm"
            iterations = 3
            concurrency = 2
            clock = "wall"
            faults = ["splice", "seed-rollback"]
            [topology]
            composite = 2
            tpm_only = 1
            "#,
        )
        .unwrap();
        assert_eq!(s.direction, Direction::TeeTpm);
        assert_eq!(s.topology.total(), 3);
        assert_eq!(s.topology.kind_of(2, s.direction), ReportKind::TpmOnly);
        assert_eq!(s.faults, vec![AttackKind::Splice, AttackKind::SeedRollback]);
        assert_eq!(Scenario::parse(&s.to_toml()).unwrap(), s);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(matches!(Scenario::parse("seed = \"x\""), Err(HarnessError::Config(_))));
        assert!(matches!(Scenario::parse("colour = 1"), Err(HarnessError::Config(_))));
        assert!(matches!(Scenario::parse("[topology]\ncomposite = 0"), Err(HarnessError::Config(_))));
        assert!("sideways".parse::<Direction>().is_err());
        assert_eq!("spoof-id".parse::<AttackKind>().unwrap(), AttackKind::SpoofId);
    }
}
