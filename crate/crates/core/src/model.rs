//! Domain types shared by every other module: vocabularies, frames,
//! surgeries, datasets, set labels and the derived entities (transitions
//! and instrument co-occurrences).

use std::collections::HashSet;
use std::fmt;
use std::ops::{Index, IndexMut};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Upper bound on the instrument vocabulary; instrument sets are bitmasks.
pub const MAX_INSTRUMENTS: usize = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("surgery `{0}` has no frames")]
    EmptySurgery(String),
    #[error("surgery `{id}`: time index {time_index} does not follow {previous}")]
    NonIncreasingTime {
        id: String,
        previous: u64,
        time_index: u64,
    },
    #[error("surgery `{id}` references phase index {index} outside the vocabulary")]
    UnknownPhase { id: String, index: usize },
    #[error("surgery `{id}` references instrument index {index} outside the vocabulary")]
    UnknownInstrument { id: String, index: usize },
    #[error("duplicate surgery id `{0}`")]
    DuplicateSurgery(String),
    #[error("duplicate {kind} name `{name}`")]
    DuplicateName { kind: &'static str, name: String },
    #[error("instrument vocabulary has {0} entries, at most {MAX_INSTRUMENTS} are supported")]
    TooManyInstruments(usize),
    #[error("phase vocabulary is empty")]
    NoPhases,
}

/// Position of a phase in the canonical (conceptual) phase order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PhaseId(pub u16);

impl PhaseId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InstrumentId(pub u16);

impl InstrumentId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Set of instruments visible in a frame, stored as a bitmask over the
/// instrument vocabulary. Iteration yields members in ascending index order,
/// so equality and hashing are independent of insertion order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct InstrumentSet(u64);

impl InstrumentSet {
    pub const EMPTY: InstrumentSet = InstrumentSet(0);

    pub fn from_bits(bits: u64) -> Self {
        InstrumentSet(bits)
    }

    pub fn bits(self) -> u64 {
        self.0
    }

    pub fn insert(&mut self, id: InstrumentId) {
        debug_assert!(id.index() < MAX_INSTRUMENTS);
        self.0 |= 1u64 << id.0;
    }

    pub fn contains(self, id: InstrumentId) -> bool {
        id.index() < MAX_INSTRUMENTS && self.0 & (1u64 << id.0) != 0
    }

    pub fn is_superset(self, other: InstrumentSet) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = InstrumentId> {
        let bits = self.0;
        (0..MAX_INSTRUMENTS as u16)
            .filter(move |i| bits & (1u64 << i) != 0)
            .map(InstrumentId)
    }
}

impl FromIterator<InstrumentId> for InstrumentSet {
    fn from_iter<I: IntoIterator<Item = InstrumentId>>(iter: I) -> Self {
        let mut set = InstrumentSet::EMPTY;
        for id in iter {
            set.insert(id);
        }
        set
    }
}

/// One sampled time point of one surgery.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameRecord {
    pub time_index: u64,
    pub phase: PhaseId,
    pub instruments: InstrumentSet,
}

impl FrameRecord {
    pub fn is_idle(&self) -> bool {
        self.instruments.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Surgery {
    pub id: String,
    pub frames: Vec<FrameRecord>,
}

impl Surgery {
    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SetLabel {
    Train,
    Val,
    Test,
}

impl SetLabel {
    pub const ALL: [SetLabel; 3] = [SetLabel::Train, SetLabel::Val, SetLabel::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SetLabel::Train => "train",
            SetLabel::Val => "val",
            SetLabel::Test => "test",
        }
    }

    pub fn slot(self) -> usize {
        self as usize
    }

    pub fn parse(s: &str) -> Option<SetLabel> {
        match s.to_ascii_lowercase().as_str() {
            "train" | "training" => Some(SetLabel::Train),
            "val" | "validation" => Some(SetLabel::Val),
            "test" | "testing" => Some(SetLabel::Test),
            _ => None,
        }
    }
}

impl fmt::Display for SetLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One value per set, serialized as `{"train": .., "val": .., "test": ..}`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PerSet<T> {
    pub train: T,
    pub val: T,
    pub test: T,
}

impl<T> PerSet<T> {
    pub fn from_fn(mut f: impl FnMut(SetLabel) -> T) -> Self {
        PerSet {
            train: f(SetLabel::Train),
            val: f(SetLabel::Val),
            test: f(SetLabel::Test),
        }
    }

    pub fn map<U>(&self, mut f: impl FnMut(SetLabel, &T) -> U) -> PerSet<U> {
        PerSet {
            train: f(SetLabel::Train, &self.train),
            val: f(SetLabel::Val, &self.val),
            test: f(SetLabel::Test, &self.test),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (SetLabel, &T)> {
        [
            (SetLabel::Train, &self.train),
            (SetLabel::Val, &self.val),
            (SetLabel::Test, &self.test),
        ]
        .into_iter()
    }
}

impl PerSet<u64> {
    pub fn total(&self) -> u64 {
        self.train + self.val + self.test
    }
}

impl<T> Index<SetLabel> for PerSet<T> {
    type Output = T;
    fn index(&self, set: SetLabel) -> &T {
        match set {
            SetLabel::Train => &self.train,
            SetLabel::Val => &self.val,
            SetLabel::Test => &self.test,
        }
    }
}

impl<T> IndexMut<SetLabel> for PerSet<T> {
    fn index_mut(&mut self, set: SetLabel) -> &mut T {
        match set {
            SetLabel::Train => &mut self.train,
            SetLabel::Val => &mut self.val,
            SetLabel::Test => &mut self.test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

/// A change of phase between two adjacent frames of one surgery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Transition {
    pub from: PhaseId,
    pub to: PhaseId,
}

impl Transition {
    pub fn direction(self) -> Direction {
        if self.to > self.from {
            Direction::Forward
        } else {
            Direction::Backward
        }
    }
}

/// Exact set of simultaneously visible instruments, at least two members.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CooccurrenceKey(InstrumentSet);

impl CooccurrenceKey {
    pub fn new(set: InstrumentSet) -> Option<Self> {
        (set.len() >= 2).then_some(CooccurrenceKey(set))
    }

    pub fn members(self) -> InstrumentSet {
        self.0
    }
}

/// Phase changes between adjacent frames, in frame order.
pub fn derive_transitions(surgery: &Surgery) -> Vec<Transition> {
    surgery
        .frames
        .windows(2)
        .filter(|w| w[0].phase != w[1].phase)
        .map(|w| Transition {
            from: w[0].phase,
            to: w[1].phase,
        })
        .collect()
}

/// Phase of the earliest frame. Frames are kept sorted by time index, so this
/// is the first frame's phase.
pub fn first_phase(surgery: &Surgery) -> PhaseId {
    surgery.frames[0].phase
}

pub fn cooccurrence_key(frame: &FrameRecord) -> Option<CooccurrenceKey> {
    CooccurrenceKey::new(frame.instruments)
}

fn ordinal(name: &str, prefix: char, len: usize) -> Option<usize> {
    name.strip_prefix(prefix)
        .and_then(|n| n.parse::<usize>().ok())
        .filter(|&n| (1..=len).contains(&n))
        .map(|n| n - 1)
}

/// Surgeries plus the phase and instrument vocabularies. Phase order is the
/// canonical conceptual order. Surgeries are kept sorted by id.
#[derive(Debug, Clone)]
pub struct Dataset {
    phases: Vec<String>,
    instruments: Vec<String>,
    surgeries: Vec<Surgery>,
    fingerprint: OnceLock<String>,
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.phases == other.phases
            && self.instruments == other.instruments
            && self.surgeries == other.surgeries
    }
}

impl Eq for Dataset {}

impl Dataset {
    pub fn new(
        phases: Vec<String>,
        instruments: Vec<String>,
        mut surgeries: Vec<Surgery>,
    ) -> Result<Self, ModelError> {
        if phases.is_empty() {
            return Err(ModelError::NoPhases);
        }
        if instruments.len() > MAX_INSTRUMENTS {
            return Err(ModelError::TooManyInstruments(instruments.len()));
        }
        check_unique("phase", &phases)?;
        check_unique("instrument", &instruments)?;
        let instrument_mask = if instruments.len() == MAX_INSTRUMENTS {
            u64::MAX
        } else {
            (1u64 << instruments.len()) - 1
        };

        let mut ids = HashSet::new();
        for s in &surgeries {
            if !ids.insert(s.id.as_str()) {
                return Err(ModelError::DuplicateSurgery(s.id.clone()));
            }
            if s.frames.is_empty() {
                return Err(ModelError::EmptySurgery(s.id.clone()));
            }
            for w in s.frames.windows(2) {
                if w[1].time_index <= w[0].time_index {
                    return Err(ModelError::NonIncreasingTime {
                        id: s.id.clone(),
                        previous: w[0].time_index,
                        time_index: w[1].time_index,
                    });
                }
            }
            for f in &s.frames {
                if f.phase.index() >= phases.len() {
                    return Err(ModelError::UnknownPhase {
                        id: s.id.clone(),
                        index: f.phase.index(),
                    });
                }
                if f.instruments.bits() & !instrument_mask != 0 {
                    let index = (f.instruments.bits() & !instrument_mask).trailing_zeros() as usize;
                    return Err(ModelError::UnknownInstrument {
                        id: s.id.clone(),
                        index,
                    });
                }
            }
        }
        surgeries.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(Dataset {
            phases,
            instruments,
            surgeries,
            fingerprint: OnceLock::new(),
        })
    }

    pub fn phases(&self) -> &[String] {
        &self.phases
    }

    pub fn instruments(&self) -> &[String] {
        &self.instruments
    }

    pub fn surgeries(&self) -> &[Surgery] {
        &self.surgeries
    }

    pub fn phase_ids(&self) -> impl Iterator<Item = PhaseId> {
        (0..self.phases.len() as u16).map(PhaseId)
    }

    pub fn instrument_ids(&self) -> impl Iterator<Item = InstrumentId> {
        (0..self.instruments.len() as u16).map(InstrumentId)
    }

    pub fn phase_name(&self, id: PhaseId) -> &str {
        &self.phases[id.index()]
    }

    pub fn instrument_name(&self, id: InstrumentId) -> &str {
        &self.instruments[id.index()]
    }

    /// Resolves a phase by exact name, falling back to `P<n>` for the n-th
    /// phase counted from 1.
    pub fn phase_by_name(&self, name: &str) -> Option<PhaseId> {
        if let Some(i) = self.phases.iter().position(|p| p == name) {
            return Some(PhaseId(i as u16));
        }
        ordinal(name, 'P', self.phases.len()).map(|i| PhaseId(i as u16))
    }

    /// Resolves an instrument by exact name, falling back to `I<n>` counted from 1.
    pub fn instrument_by_name(&self, name: &str) -> Option<InstrumentId> {
        if let Some(i) = self.instruments.iter().position(|p| p == name) {
            return Some(InstrumentId(i as u16));
        }
        ordinal(name, 'I', self.instruments.len()).map(|i| InstrumentId(i as u16))
    }

    pub fn surgery_index(&self, id: &str) -> Option<usize> {
        self.surgeries.binary_search_by(|s| s.id.as_str().cmp(id)).ok()
    }

    pub fn surgery(&self, id: &str) -> Option<&Surgery> {
        self.surgery_index(id).map(|i| &self.surgeries[i])
    }

    pub fn total_frames(&self) -> u64 {
        self.surgeries.iter().map(|s| s.frames.len() as u64).sum()
    }

    pub fn instrument_names(&self, set: InstrumentSet) -> Vec<String> {
        set.iter().map(|i| self.instrument_name(i).to_owned()).collect()
    }

    /// SHA-256 over the canonical dataset serialization, hex encoded.
    pub fn fingerprint(&self) -> String {
        self.fingerprint
            .get_or_init(|| {
                let mut hasher = Sha256::new();
                let doc = crate::ingest::DatasetDocument::from_dataset(self);
                let bytes = serde_json::to_vec(&doc).expect("dataset document serializes");
                hasher.update(&bytes);
                hasher
                    .finalize()
                    .iter()
                    .map(|b| format!("{b:02x}"))
                    .collect()
            })
            .clone()
    }
}

fn check_unique(kind: &'static str, names: &[String]) -> Result<(), ModelError> {
    let mut seen = HashSet::new();
    for n in names {
        if !seen.insert(n.as_str()) {
            return Err(ModelError::DuplicateName {
                kind,
                name: n.clone(),
            });
        }
    }
    Ok(())
}
