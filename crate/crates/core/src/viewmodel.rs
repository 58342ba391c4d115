//! Serialized aggregate of everything the explorer draws for one
//! (dataset, assignment, filter) state.
//!
//! Phase and instrument views honor the filter. The supplementary tables and
//! the coverage report always describe the whole split.

use serde::{Deserialize, Serialize};

use crate::coverage::{coverage_report, CoverageReport};
use crate::model::{Dataset, Direction, PerSet};
use crate::splits::{AssignmentFile, SplitAssignment};
use crate::stats::{
    compute_cooccurrence_stats, compute_instrument_phase_stats, compute_phase_stats,
    compute_set_sizes, compute_transition_stats_filtered, filter_frames, FilterCriteria,
    FilterError, SetSize, SurgerySize,
};

pub const VIEWMODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewModel {
    pub schema_version: u32,
    pub fingerprint: String,
    pub has_validation: bool,
    pub phases: Vec<String>,
    pub instruments: Vec<String>,
    pub filter: FilterCriteria,
    pub phase_view: PhaseView,
    pub instrument_view: InstrumentView,
    pub supplementary: Supplementary,
    pub coverage: CoverageReport,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseView {
    /// One node per phase, in canonical order.
    pub nodes: Vec<PhaseNode>,
    pub arcs: Vec<TransitionArc>,
    /// Phase-major: `instrument_bars[p * instruments + i]`.
    pub instrument_bars: Vec<InstrumentBar>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseNode {
    pub phase: String,
    /// Frame bar chart values.
    pub frames: PerSet<u64>,
    /// Surgeries with at least one frame of the phase.
    pub surgeries: PerSet<u64>,
    pub surgery_occurrence: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionArc {
    pub from: String,
    pub to: String,
    pub direction: Direction,
    pub counts: PerSet<u64>,
    pub surgeries: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstrumentBar {
    pub phase: String,
    pub instrument: String,
    pub frames: PerSet<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstrumentView {
    pub instruments: Vec<InstrumentTotal>,
    pub idle: PerSet<u64>,
    pub frames: PerSet<u64>,
    pub cooccurrences: Vec<CooccurrenceNode>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstrumentTotal {
    pub instrument: String,
    pub frames: PerSet<u64>,
    /// Frames where this is the only visible instrument.
    pub exclusive: PerSet<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CooccurrenceNode {
    pub members: Vec<String>,
    pub frames: PerSet<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Supplementary {
    pub assignment: AssignmentFile,
    pub sets: PerSet<SetSize>,
    pub surgeries: Vec<SurgerySize>,
    pub overall_mean_frames: Option<f64>,
}

pub fn build_view_model(
    dataset: &Dataset,
    assignment: &SplitAssignment,
    filter: &FilterCriteria,
) -> Result<ViewModel, FilterError> {
    let pred = filter_frames(dataset, filter)?;
    let phases = compute_phase_stats(dataset, assignment, &pred);
    let transitions = compute_transition_stats_filtered(dataset, assignment, &pred);
    let ip = compute_instrument_phase_stats(dataset, assignment, &pred);
    let co = compute_cooccurrence_stats(dataset, assignment, &pred);
    let sizes = compute_set_sizes(dataset, assignment);

    let nodes = dataset
        .phase_ids()
        .map(|p| PhaseNode {
            phase: dataset.phase_name(p).to_owned(),
            frames: phases.frames[p.index()],
            surgeries: phases.surgeries[p.index()],
            surgery_occurrence: phases.surgery_occurrence(p),
        })
        .collect();
    let arcs = transitions
        .entries
        .iter()
        .map(|(t, e)| TransitionArc {
            from: dataset.phase_name(t.from).to_owned(),
            to: dataset.phase_name(t.to).to_owned(),
            direction: t.direction(),
            counts: e.counts,
            surgeries: e.surgeries.clone(),
        })
        .collect();
    let instrument_bars = dataset
        .phase_ids()
        .flat_map(|p| {
            let ip = &ip;
            dataset.instrument_ids().map(move |i| InstrumentBar {
                phase: dataset.phase_name(p).to_owned(),
                instrument: dataset.instrument_name(i).to_owned(),
                frames: ip.counts[p.index()][i.index()],
            })
        })
        .collect();
    let instruments = dataset
        .instrument_ids()
        .map(|i| InstrumentTotal {
            instrument: dataset.instrument_name(i).to_owned(),
            frames: co.instruments[i.index()],
            exclusive: co.exclusive[i.index()],
        })
        .collect();
    let cooccurrences = co
        .combinations
        .iter()
        .map(|(k, frames)| CooccurrenceNode {
            members: dataset.instrument_names(k.members()),
            frames: *frames,
        })
        .collect();

    Ok(ViewModel {
        schema_version: VIEWMODEL_SCHEMA_VERSION,
        fingerprint: dataset.fingerprint(),
        has_validation: assignment.has_validation(),
        phases: dataset.phases().to_vec(),
        instruments: dataset.instruments().to_vec(),
        filter: filter.clone(),
        phase_view: PhaseView {
            nodes,
            arcs,
            instrument_bars,
        },
        instrument_view: InstrumentView {
            instruments,
            idle: co.idle,
            frames: co.frames,
            cooccurrences,
        },
        supplementary: Supplementary {
            assignment: assignment.to_file(),
            overall_mean_frames: sizes.overall_mean(),
            sets: sizes.sets,
            surgeries: sizes.surgeries,
        },
        coverage: coverage_report(dataset, assignment),
    })
}
