//! Per-set aggregates behind every view: phase frame counts, transitions,
//! instrument usage per phase, instrument co-occurrences and set sizes.
//!
//! Surgeries missing from the assignment are skipped; callers validate the
//! assignment first when totality matters.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    cooccurrence_key, CooccurrenceKey, Dataset, FrameRecord, InstrumentId, InstrumentSet,
    PerSet, PhaseId, SetLabel, Surgery, Transition,
};
use crate::splits::SplitAssignment;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FilterError {
    #[error("unknown phase `{0}`")]
    UnknownPhase(String),
    #[error("unknown instrument `{0}`")]
    UnknownInstrument(String),
    #[error("a co-occurrence filter needs at least two instruments")]
    CooccurrenceTooSmall,
    #[error("a transition filter needs two different phases")]
    SelfTransition,
}

/// Conjunction of selection criteria, as sent by the UI.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterCriteria {
    /// Frame phase must be one of these.
    #[serde(default)]
    pub phases: Vec<String>,
    /// Every listed instrument must be visible in the frame.
    #[serde(default)]
    pub instruments: Vec<String>,
    /// Frame instrument set must equal this set exactly.
    #[serde(default)]
    pub cooccurrence: Option<Vec<String>>,
    /// Keeps whole surgeries containing this `[from, to]` transition.
    #[serde(default)]
    pub transition: Option<[String; 2]>,
}

impl FilterCriteria {
    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
            && self.instruments.is_empty()
            && self.cooccurrence.is_none()
            && self.transition.is_none()
    }
}

/// Resolved filter. Frame-level conditions apply to single frames; the
/// transition condition selects whole surgeries.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FramePredicate {
    phases: Option<Vec<bool>>,
    required: InstrumentSet,
    exact: Option<InstrumentSet>,
    surgeries: Option<Vec<bool>>,
}

impl FramePredicate {
    pub fn all() -> Self {
        FramePredicate::default()
    }

    pub fn accepts_surgery(&self, surgery_index: usize) -> bool {
        self.surgeries
            .as_ref()
            .is_none_or(|s| s.get(surgery_index).copied().unwrap_or(false))
    }

    pub fn accepts_frame(&self, frame: &FrameRecord) -> bool {
        if let Some(p) = &self.phases {
            if !p.get(frame.phase.index()).copied().unwrap_or(false) {
                return false;
            }
        }
        if !frame.instruments.is_superset(self.required) {
            return false;
        }
        self.exact.is_none_or(|e| e == frame.instruments)
    }

    pub fn accepts(&self, surgery_index: usize, frame: &FrameRecord) -> bool {
        self.accepts_surgery(surgery_index) && self.accepts_frame(frame)
    }
}

pub fn filter_frames(
    dataset: &Dataset,
    criteria: &FilterCriteria,
) -> Result<FramePredicate, FilterError> {
    let phase = |n: &str| {
        dataset
            .phase_by_name(n)
            .ok_or_else(|| FilterError::UnknownPhase(n.to_owned()))
    };
    let instrument = |n: &str| {
        dataset
            .instrument_by_name(n)
            .ok_or_else(|| FilterError::UnknownInstrument(n.to_owned()))
    };

    let phases = if criteria.phases.is_empty() {
        None
    } else {
        let mut mask = vec![false; dataset.phases().len()];
        for n in &criteria.phases {
            mask[phase(n)?.index()] = true;
        }
        Some(mask)
    };
    let required = criteria
        .instruments
        .iter()
        .map(|n| instrument(n))
        .collect::<Result<InstrumentSet, _>>()?;
    let exact = match &criteria.cooccurrence {
        None => None,
        Some(names) => {
            let set = names
                .iter()
                .map(|n| instrument(n))
                .collect::<Result<InstrumentSet, _>>()?;
            if set.len() < 2 {
                return Err(FilterError::CooccurrenceTooSmall);
            }
            Some(set)
        }
    };
    let surgeries = match &criteria.transition {
        None => None,
        Some([from, to]) => {
            let t = Transition {
                from: phase(from)?,
                to: phase(to)?,
            };
            if t.from == t.to {
                return Err(FilterError::SelfTransition);
            }
            Some(
                dataset
                    .surgeries()
                    .iter()
                    .map(|s| contains_transition(s, t))
                    .collect(),
            )
        }
    };
    Ok(FramePredicate {
        phases,
        required,
        exact,
        surgeries,
    })
}

fn contains_transition(surgery: &Surgery, t: Transition) -> bool {
    surgery
        .frames
        .windows(2)
        .any(|w| w[0].phase == t.from && w[1].phase == t.to)
}

fn labeled<'a>(
    dataset: &'a Dataset,
    assignment: &'a SplitAssignment,
) -> impl Iterator<Item = (usize, SetLabel, &'a Surgery)> + 'a {
    dataset
        .surgeries()
        .iter()
        .enumerate()
        .filter_map(|(i, s)| assignment.label_of(&s.id).map(|set| (i, set, s)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PhaseStats {
    /// Frames per phase and set.
    pub frames: Vec<PerSet<u64>>,
    /// Surgeries with at least one (filtered) frame of the phase, per set.
    pub surgeries: Vec<PerSet<u64>>,
}

impl PhaseStats {
    pub fn surgery_occurrence(&self, phase: PhaseId) -> u64 {
        self.surgeries[phase.index()].total()
    }
}

pub fn compute_phase_stats(
    dataset: &Dataset,
    assignment: &SplitAssignment,
    filter: &FramePredicate,
) -> PhaseStats {
    let n = dataset.phases().len();
    let mut frames = vec![PerSet::<u64>::default(); n];
    let mut surgeries = vec![PerSet::<u64>::default(); n];
    let mut seen = vec![false; n];
    for (idx, set, s) in labeled(dataset, assignment) {
        if !filter.accepts_surgery(idx) {
            continue;
        }
        seen.iter_mut().for_each(|b| *b = false);
        for f in s.frames.iter().filter(|f| filter.accepts_frame(f)) {
            frames[f.phase.index()][set] += 1;
            seen[f.phase.index()] = true;
        }
        for (p, &hit) in seen.iter().enumerate() {
            if hit {
                surgeries[p][set] += 1;
            }
        }
    }
    PhaseStats { frames, surgeries }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TransitionEntry {
    pub counts: PerSet<u64>,
    /// Surgeries containing the transition, in dataset order.
    pub surgeries: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TransitionStats {
    pub entries: BTreeMap<Transition, TransitionEntry>,
}

impl TransitionStats {
    pub fn count(&self, t: Transition, set: SetLabel) -> u64 {
        self.entries.get(&t).map_or(0, |e| e.counts[set])
    }
}

pub fn compute_transition_stats(dataset: &Dataset, assignment: &SplitAssignment) -> TransitionStats {
    compute_transition_stats_filtered(dataset, assignment, &FramePredicate::all())
}

/// Counts a transition when both adjacent frames pass the filter.
pub fn compute_transition_stats_filtered(
    dataset: &Dataset,
    assignment: &SplitAssignment,
    filter: &FramePredicate,
) -> TransitionStats {
    let mut entries: BTreeMap<Transition, TransitionEntry> = BTreeMap::new();
    for (idx, set, s) in labeled(dataset, assignment) {
        if !filter.accepts_surgery(idx) {
            continue;
        }
        for w in s.frames.windows(2) {
            if w[0].phase == w[1].phase || !filter.accepts_frame(&w[0]) || !filter.accepts_frame(&w[1]) {
                continue;
            }
            let t = Transition {
                from: w[0].phase,
                to: w[1].phase,
            };
            let e = entries.entry(t).or_insert_with(|| TransitionEntry {
                counts: PerSet::default(),
                surgeries: Vec::new(),
            });
            e.counts[set] += 1;
            if e.surgeries.last() != Some(&s.id) {
                e.surgeries.push(s.id.clone());
            }
        }
    }
    TransitionStats { entries }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    #[default]
    Absolute,
    /// Fraction of the phase's frames (in that set) showing the instrument.
    PerPhase,
    /// Fraction of the instrument's visible frames (in that set) falling in the phase.
    PerInstrument,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InstrumentPhaseStats {
    /// `counts[phase][instrument]`
    pub counts: Vec<Vec<PerSet<u64>>>,
    pub phase_frames: Vec<PerSet<u64>>,
}

impl InstrumentPhaseStats {
    pub fn count(&self, phase: PhaseId, instrument: InstrumentId, set: SetLabel) -> u64 {
        self.counts[phase.index()][instrument.index()][set]
    }

    pub fn rescaled(&self, scaling: Scaling) -> Vec<Vec<PerSet<f64>>> {
        let ratio = |n: u64, d: u64| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        let instrument_totals: Vec<PerSet<u64>> = match self.counts.first() {
            None => Vec::new(),
            Some(row) => (0..row.len())
                .map(|i| {
                    PerSet::from_fn(|set| self.counts.iter().map(|r| r[i][set]).sum())
                })
                .collect(),
        };
        self.counts
            .iter()
            .enumerate()
            .map(|(p, row)| {
                row.iter()
                    .enumerate()
                    .map(|(i, c)| {
                        c.map(|set, &n| match scaling {
                            Scaling::Absolute => n as f64,
                            Scaling::PerPhase => ratio(n, self.phase_frames[p][set]),
                            Scaling::PerInstrument => ratio(n, instrument_totals[i][set]),
                        })
                    })
                    .collect()
            })
            .collect()
    }
}

pub fn compute_instrument_phase_stats(
    dataset: &Dataset,
    assignment: &SplitAssignment,
    filter: &FramePredicate,
) -> InstrumentPhaseStats {
    let np = dataset.phases().len();
    let ni = dataset.instruments().len();
    let mut counts = vec![vec![PerSet::<u64>::default(); ni]; np];
    let mut phase_frames = vec![PerSet::<u64>::default(); np];
    for (idx, set, s) in labeled(dataset, assignment) {
        for f in &s.frames {
            if !filter.accepts(idx, f) {
                continue;
            }
            phase_frames[f.phase.index()][set] += 1;
            for i in f.instruments.iter() {
                counts[f.phase.index()][i.index()][set] += 1;
            }
        }
    }
    InstrumentPhaseStats {
        counts,
        phase_frames,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CooccurrenceStats {
    /// Frames per exact instrument combination (two or more instruments).
    pub combinations: BTreeMap<CooccurrenceKey, PerSet<u64>>,
    /// Frames in which the instrument is the only one visible.
    pub exclusive: Vec<PerSet<u64>>,
    /// Frames in which the instrument is visible at all.
    pub instruments: Vec<PerSet<u64>>,
    pub idle: PerSet<u64>,
    pub frames: PerSet<u64>,
}

impl CooccurrenceStats {
    pub fn count(&self, key: CooccurrenceKey, set: SetLabel) -> u64 {
        self.combinations.get(&key).map_or(0, |c| c[set])
    }
}

pub fn compute_cooccurrence_stats(
    dataset: &Dataset,
    assignment: &SplitAssignment,
    filter: &FramePredicate,
) -> CooccurrenceStats {
    let ni = dataset.instruments().len();
    let mut stats = CooccurrenceStats {
        combinations: BTreeMap::new(),
        exclusive: vec![PerSet::default(); ni],
        instruments: vec![PerSet::default(); ni],
        idle: PerSet::default(),
        frames: PerSet::default(),
    };
    for (idx, set, s) in labeled(dataset, assignment) {
        for f in &s.frames {
            if !filter.accepts(idx, f) {
                continue;
            }
            stats.frames[set] += 1;
            match f.instruments.len() {
                0 => stats.idle[set] += 1,
                1 => {
                    let i = f.instruments.iter().next().unwrap();
                    stats.exclusive[i.index()][set] += 1;
                }
                _ => {}
            }
            for i in f.instruments.iter() {
                stats.instruments[i.index()][set] += 1;
            }
            if let Some(key) = cooccurrence_key(f) {
                stats.combinations.entry(key).or_default()[set] += 1;
            }
        }
    }
    stats
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SetSize {
    pub surgeries: u64,
    pub frames: u64,
    /// Absent when the set has no surgeries.
    pub mean_frames: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurgerySize {
    pub id: String,
    pub set: SetLabel,
    pub frames: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetSizeStats {
    pub sets: PerSet<SetSize>,
    pub surgeries: Vec<SurgerySize>,
}

impl SetSizeStats {
    pub fn overall_mean(&self) -> Option<f64> {
        let s: u64 = self.sets.iter().map(|(_, v)| v.surgeries).sum();
        let f: u64 = self.sets.iter().map(|(_, v)| v.frames).sum();
        (s > 0).then(|| f as f64 / s as f64)
    }
}

pub fn compute_set_sizes(dataset: &Dataset, assignment: &SplitAssignment) -> SetSizeStats {
    let mut counts = PerSet::<(u64, u64)>::default();
    let mut surgeries = Vec::with_capacity(dataset.surgeries().len());
    for (_, set, s) in labeled(dataset, assignment) {
        let frames = s.frames.len() as u64;
        counts[set].0 += 1;
        counts[set].1 += frames;
        surgeries.push(SurgerySize {
            id: s.id.clone(),
            set,
            frames,
        });
    }
    SetSizeStats {
        sets: counts.map(|_, &(n, f)| SetSize {
            surgeries: n,
            frames: f,
            mean_frames: (n > 0).then(|| f as f64 / n as f64),
        }),
        surgeries,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{InstrumentId, Surgery};

    fn frame(t: u64, phase: u16, inst: &[u16]) -> FrameRecord {
        FrameRecord {
            time_index: t,
            phase: PhaseId(phase),
            instruments: inst.iter().map(|&i| InstrumentId(i)).collect(),
        }
    }

    /// phases: Prep, Dissect, Clip; instruments: Grasper, Hook, Clipper
    fn fixture() -> (Dataset, SplitAssignment) {
        let s = |id: &str, frames: Vec<FrameRecord>| Surgery { id: id.into(), frames };
        let ds = Dataset::new(
            vec!["Prep".into(), "Dissect".into(), "Clip".into()],
            vec!["Grasper".into(), "Hook".into(), "Clipper".into()],
            vec![
                s("a", vec![frame(0, 0, &[]), frame(1, 1, &[0, 1]), frame(2, 2, &[2]), frame(3, 1, &[0, 1])]),
                s("b", vec![frame(0, 1, &[1]), frame(1, 2, &[0, 2]), frame(2, 2, &[0, 2])]),
                s("c", vec![frame(0, 0, &[0]), frame(1, 0, &[]), frame(2, 1, &[0, 1, 2])]),
            ],
        )
        .unwrap();
        let labels = [("a", SetLabel::Train), ("b", SetLabel::Test), ("c", SetLabel::Train)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        (ds, SplitAssignment::from_labels(labels, false).unwrap())
    }

    #[test]
    fn phase_counts_hand_tallied() {
        let (ds, a) = fixture();
        let p = compute_phase_stats(&ds, &a, &FramePredicate::all());
        assert_eq!(p.frames[0], PerSet { train: 3, val: 0, test: 0 });
        assert_eq!(p.frames[1], PerSet { train: 3, val: 0, test: 1 });
        assert_eq!(p.frames[2], PerSet { train: 1, val: 0, test: 2 });
        assert_eq!(p.surgery_occurrence(PhaseId(0)), 2);
        assert_eq!(p.surgery_occurrence(PhaseId(1)), 3);
        assert_eq!(p.surgeries[2], PerSet { train: 1, val: 0, test: 1 });
    }

    #[test]
    fn transitions_attributed_to_surgery_set() {
        let (ds, a) = fixture();
        let t = compute_transition_stats(&ds, &a);
        let tr = |f, to| Transition { from: PhaseId(f), to: PhaseId(to) };
        assert_eq!(t.count(tr(0, 1), SetLabel::Train), 2);
        assert_eq!(t.count(tr(1, 2), SetLabel::Train), 1);
        assert_eq!(t.count(tr(1, 2), SetLabel::Test), 1);
        assert_eq!(t.count(tr(2, 1), SetLabel::Train), 1);
        assert_eq!(t.entries[&tr(1, 2)].surgeries, vec!["a", "b"]);
        assert_eq!(t.entries.len(), 3);
    }

    #[test]
    fn cooccurrence_tally() {
        let (ds, a) = fixture();
        let c = compute_cooccurrence_stats(&ds, &a, &FramePredicate::all());
        assert_eq!(c.idle, PerSet { train: 2, val: 0, test: 0 });
        assert_eq!(c.frames, PerSet { train: 7, val: 0, test: 3 });
        let key = |v: &[u16]| CooccurrenceKey::new(v.iter().map(|&i| InstrumentId(i)).collect()).unwrap();
        assert_eq!(c.count(key(&[0, 1]), SetLabel::Train), 2);
        assert_eq!(c.count(key(&[0, 2]), SetLabel::Test), 2);
        assert_eq!(c.count(key(&[0, 1, 2]), SetLabel::Train), 1);
        assert_eq!(c.instruments[0], PerSet { train: 4, val: 0, test: 2 });
        assert_eq!(c.exclusive[1], PerSet { train: 0, val: 0, test: 1 });
    }

    #[test]
    fn all_idle_has_no_keys() {
        let ds = Dataset::new(
            vec!["P".into()],
            vec!["X".into()],
            vec![Surgery { id: "s".into(), frames: vec![frame(0, 0, &[]), frame(1, 0, &[])] }],
        )
        .unwrap();
        let a = SplitAssignment::from_labels([("s".to_string(), SetLabel::Train)].into(), false).unwrap();
        let c = compute_cooccurrence_stats(&ds, &a, &FramePredicate::all());
        assert_eq!(c.idle.total(), 2);
        assert!(c.combinations.is_empty());
        assert!(compute_transition_stats(&ds, &a).entries.is_empty());
    }

    #[test]
    fn filter_validation_and_semantics() {
        let (ds, a) = fixture();
        let bad = FilterCriteria { phases: vec!["Nope".into()], ..Default::default() };
        assert_eq!(filter_frames(&ds, &bad), Err(FilterError::UnknownPhase("Nope".into())));
        let bad = FilterCriteria { instruments: vec!["Laser".into()], ..Default::default() };
        assert!(matches!(filter_frames(&ds, &bad), Err(FilterError::UnknownInstrument(_))));
        let bad = FilterCriteria { cooccurrence: Some(vec!["Hook".into()]), ..Default::default() };
        assert_eq!(filter_frames(&ds, &bad), Err(FilterError::CooccurrenceTooSmall));
        let bad = FilterCriteria { transition: Some(["Prep".into(), "Prep".into()]), ..Default::default() };
        assert_eq!(filter_frames(&ds, &bad), Err(FilterError::SelfTransition));

        let empty = filter_frames(&ds, &FilterCriteria::default()).unwrap();
        assert_eq!(empty, FramePredicate::all());

        let f = filter_frames(
            &ds,
            &FilterCriteria { transition: Some(["Clip".into(), "Dissect".into()]), ..Default::default() },
        )
        .unwrap();
        let p = compute_phase_stats(&ds, &a, &f);
        assert_eq!(p.frames.iter().map(|c| c.total()).sum::<u64>(), 4);

        let f = filter_frames(
            &ds,
            &FilterCriteria { phases: vec!["Clip".into()], instruments: vec!["Clipper".into()], ..Default::default() },
        )
        .unwrap();
        let p = compute_phase_stats(&ds, &a, &f);
        assert_eq!(p.frames[2], PerSet { train: 1, val: 0, test: 2 });
        assert_eq!(p.frames[1].total(), 0);
    }

    #[test]
    fn rescaling_modes() {
        let (ds, a) = fixture();
        let s = compute_instrument_phase_stats(&ds, &a, &FramePredicate::all());
        // Dissect in train: 3 frames, clipper in 1 of them
        assert_eq!(s.count(PhaseId(1), InstrumentId(2), SetLabel::Train), 1);
        let per_phase = s.rescaled(Scaling::PerPhase);
        assert!((per_phase[1][2].train - 1.0 / 3.0).abs() < 1e-12);
        assert!((per_phase[1][0].train - 1.0).abs() < 1e-12);
        let per_inst = s.rescaled(Scaling::PerInstrument);
        // clipper visible in 2 train frames: one in Dissect, one in Clip
        assert!((per_inst[1][2].train - 0.5).abs() < 1e-12);
        assert!((per_inst[2][2].train - 0.5).abs() < 1e-12);
        let col: f64 = per_inst.iter().map(|row| row[0].train).sum();
        assert!((col - 1.0).abs() < 1e-12);
        assert_eq!(s.rescaled(Scaling::Absolute)[1][0].train, 3.0);
        // absent everywhere → zero
        assert_eq!(s.counts[0][2], PerSet::default());
    }

    #[test]
    fn set_sizes_and_means() {
        let (ds, a) = fixture();
        let sz = compute_set_sizes(&ds, &a);
        assert_eq!(sz.sets.train.surgeries, 2);
        assert_eq!(sz.sets.train.frames, 7);
        assert_eq!(sz.sets.train.mean_frames, Some(3.5));
        assert_eq!(sz.sets.test.mean_frames, Some(3.0));
        assert_eq!(sz.sets.val.mean_frames, None);
        assert_eq!(sz.overall_mean(), Some(10.0 / 3.0));
    }
}
