//! Split assignments: the common Cholec80 presets, validation, and
//! value-semantic re-assignment of single surgeries.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Dataset, PerSet, SetLabel};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SplitError {
    #[error("unknown split preset `{0}`")]
    UnknownPreset(String),
    #[error("unknown surgery `{0}`")]
    UnknownSurgery(String),
    #[error("split has no validation set; cannot assign `{0}` to val")]
    NoValidationSet(String),
    #[error("invalid assignment: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
}

/// One reason an assignment is not a valid partition of a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// Surgery of the dataset not assigned to any set.
    Missing { surgery_id: String },
    /// Assigned surgery that does not exist in the dataset.
    Unknown { surgery_id: String },
    /// Surgery listed more than once.
    Duplicate { surgery_id: String },
    ValWithoutValidation { surgery_id: String },
    EmptySet { set: SetLabel },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::Missing { surgery_id } => write!(f, "surgery {surgery_id} is not assigned"),
            Violation::Unknown { surgery_id } => write!(f, "surgery {surgery_id} is not in the dataset"),
            Violation::Duplicate { surgery_id } => write!(f, "surgery {surgery_id} is assigned more than once"),
            Violation::ValWithoutValidation { surgery_id } => {
                write!(f, "surgery {surgery_id} is in val but the split has no validation set")
            }
            Violation::EmptySet { set } => write!(f, "{set} set is empty"),
        }
    }
}

/// Total mapping surgery id to set. An absent validation set is expressed
/// by `has_validation == false`, never by an empty val set.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SplitAssignment {
    labels: BTreeMap<String, SetLabel>,
    has_validation: bool,
}

/// On-disk / wire form of an assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentFile {
    pub has_validation: bool,
    #[serde(default)]
    pub train: Vec<String>,
    #[serde(default)]
    pub val: Vec<String>,
    #[serde(default)]
    pub test: Vec<String>,
}

impl SplitAssignment {
    /// Builds an assignment from explicit labels; fails if a surgery is in
    /// val while `has_validation` is false.
    pub fn from_labels(
        labels: BTreeMap<String, SetLabel>,
        has_validation: bool,
    ) -> Result<Self, SplitError> {
        if !has_validation {
            if let Some((id, _)) = labels.iter().find(|(_, &s)| s == SetLabel::Val) {
                return Err(SplitError::NoValidationSet(id.clone()));
            }
        }
        Ok(SplitAssignment {
            labels,
            has_validation,
        })
    }

    pub fn from_file(file: &AssignmentFile) -> Result<Self, Vec<Violation>> {
        let mut labels = BTreeMap::new();
        let mut violations = Vec::new();
        for (set, ids) in [
            (SetLabel::Train, &file.train),
            (SetLabel::Val, &file.val),
            (SetLabel::Test, &file.test),
        ] {
            for id in ids {
                if set == SetLabel::Val && !file.has_validation {
                    violations.push(Violation::ValWithoutValidation {
                        surgery_id: id.clone(),
                    });
                }
                if labels.insert(id.clone(), set).is_some() {
                    violations.push(Violation::Duplicate {
                        surgery_id: id.clone(),
                    });
                }
            }
        }
        if violations.is_empty() {
            Ok(SplitAssignment {
                labels,
                has_validation: file.has_validation,
            })
        } else {
            Err(violations)
        }
    }

    pub fn to_file(&self) -> AssignmentFile {
        let ids = |set| self.ids_in(set).into_iter().map(str::to_owned).collect();
        AssignmentFile {
            has_validation: self.has_validation,
            train: ids(SetLabel::Train),
            val: ids(SetLabel::Val),
            test: ids(SetLabel::Test),
        }
    }

    pub fn has_validation(&self) -> bool {
        self.has_validation
    }

    pub fn label_of(&self, id: &str) -> Option<SetLabel> {
        self.labels.get(id).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, SetLabel)> {
        self.labels.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn ids_in(&self, set: SetLabel) -> Vec<&str> {
        self.labels
            .iter()
            .filter(|(_, &s)| s == set)
            .map(|(k, _)| k.as_str())
            .collect()
    }

    pub fn sizes(&self) -> PerSet<usize> {
        let mut sizes = PerSet::default();
        for &s in self.labels.values() {
            sizes[s] += 1;
        }
        sizes
    }

    /// Sets that exist in this split: train, val (if declared), test.
    pub fn active_sets(&self) -> Vec<SetLabel> {
        active_sets(self.has_validation)
    }

    /// Set label per dataset surgery, in dataset order.
    pub fn labels_for(&self, dataset: &Dataset) -> Vec<Option<SetLabel>> {
        dataset
            .surgeries()
            .iter()
            .map(|s| self.label_of(&s.id))
            .collect()
    }

    /// Returns a new assignment with `surgery_id` moved to `target`.
    pub fn reassign(&self, surgery_id: &str, target: SetLabel) -> Result<Self, SplitError> {
        if !self.labels.contains_key(surgery_id) {
            return Err(SplitError::UnknownSurgery(surgery_id.to_owned()));
        }
        if target == SetLabel::Val && !self.has_validation {
            return Err(SplitError::NoValidationSet(surgery_id.to_owned()));
        }
        let mut next = self.clone();
        next.labels.insert(surgery_id.to_owned(), target);
        Ok(next)
    }

    /// Checks totality against the dataset and that train and test (and val,
    /// when declared) are non-empty.
    pub fn validate(&self, dataset: &Dataset) -> Result<(), Vec<Violation>> {
        let mut violations = Vec::new();
        for s in dataset.surgeries() {
            if !self.labels.contains_key(&s.id) {
                violations.push(Violation::Missing {
                    surgery_id: s.id.clone(),
                });
            }
        }
        for (id, &set) in &self.labels {
            if dataset.surgery_index(id).is_none() {
                violations.push(Violation::Unknown {
                    surgery_id: id.clone(),
                });
            }
            if set == SetLabel::Val && !self.has_validation {
                violations.push(Violation::ValWithoutValidation {
                    surgery_id: id.clone(),
                });
            }
        }
        let sizes = self.sizes();
        for set in self.active_sets() {
            if sizes[set] == 0 {
                violations.push(Violation::EmptySet { set });
            }
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(violations)
        }
    }
}

pub fn active_sets(has_validation: bool) -> Vec<SetLabel> {
    if has_validation {
        SetLabel::ALL.to_vec()
    } else {
        vec![SetLabel::Train, SetLabel::Test]
    }
}

/// Cholec80 file id for a surgery number, e.g. 7 → `video07`.
pub fn cholec80_id(number: u32) -> String {
    format!("video{number:02}")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPreset {
    pub name: &'static str,
    pub train: RangeInclusive<u32>,
    pub val: Option<RangeInclusive<u32>>,
    pub test: RangeInclusive<u32>,
}

pub const PRESETS: [SplitPreset; 4] = [
    SplitPreset { name: "40/-/40", train: 1..=40, val: None, test: 41..=80 },
    SplitPreset { name: "32/8/40", train: 1..=32, val: Some(33..=40), test: 41..=80 },
    SplitPreset { name: "40/8/32", train: 1..=40, val: Some(41..=48), test: 49..=80 },
    SplitPreset { name: "40/24/16", train: 1..=40, val: Some(41..=64), test: 65..=80 },
];

impl SplitPreset {
    pub fn assignment(&self) -> SplitAssignment {
        let mut labels = BTreeMap::new();
        for n in self.train.clone() {
            labels.insert(cholec80_id(n), SetLabel::Train);
        }
        for n in self.val.clone().into_iter().flatten() {
            labels.insert(cholec80_id(n), SetLabel::Val);
        }
        for n in self.test.clone() {
            labels.insert(cholec80_id(n), SetLabel::Test);
        }
        SplitAssignment {
            labels,
            has_validation: self.val.is_some(),
        }
    }
}

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|p| p.name).collect()
}

pub fn find_preset(name: &str) -> Option<&'static SplitPreset> {
    let name = match name {
        "40/40" => "40/-/40",
        other => other,
    };
    PRESETS.iter().find(|p| p.name == name)
}

pub fn preset(name: &str) -> Result<SplitAssignment, SplitError> {
    find_preset(name)
        .map(SplitPreset::assignment)
        .ok_or_else(|| SplitError::UnknownPreset(name.to_owned()))
}
