//! Unrepresented-case detection. An entity (phase transition, instrument
//! during a phase, instrument combination) is unrepresented in a set when it
//! occurs somewhere in the dataset but never in that set.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    first_phase, Dataset, InstrumentId, InstrumentSet, PerSet, PhaseId, SetLabel, Transition,
};
use crate::splits::SplitAssignment;
use crate::stats::{
    compute_cooccurrence_stats, compute_instrument_phase_stats, compute_transition_stats,
    FramePredicate,
};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CoverageError {
    #[error("reports belong to different datasets ({before} vs {after})")]
    FingerprintMismatch { before: String, after: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityCategory {
    PhaseTransition,
    InstrumentDuringPhase,
    InstrumentCombination,
}

impl EntityCategory {
    pub const ALL: [EntityCategory; 3] = [
        EntityCategory::PhaseTransition,
        EntityCategory::InstrumentDuringPhase,
        EntityCategory::InstrumentCombination,
    ];

    pub fn title(self) -> &'static str {
        match self {
            EntityCategory::PhaseTransition => "Phase transition",
            EntityCategory::InstrumentDuringPhase => "Instrument during phase",
            EntityCategory::InstrumentCombination => "Instrument combination",
        }
    }

    pub fn slot(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Entity {
    Transition(Transition),
    InstrumentDuringPhase(PhaseId, InstrumentId),
    Combination(InstrumentSet),
}

impl Entity {
    pub fn category(self) -> EntityCategory {
        match self {
            Entity::Transition(_) => EntityCategory::PhaseTransition,
            Entity::InstrumentDuringPhase(..) => EntityCategory::InstrumentDuringPhase,
            Entity::Combination(_) => EntityCategory::InstrumentCombination,
        }
    }

    pub fn label(self, dataset: &Dataset) -> String {
        match self {
            Entity::Transition(t) => format!(
                "{} -> {}",
                dataset.phase_name(t.from),
                dataset.phase_name(t.to)
            ),
            Entity::InstrumentDuringPhase(p, i) => format!(
                "{} during {}",
                dataset.instrument_name(i),
                dataset.phase_name(p)
            ),
            Entity::Combination(set) => dataset.instrument_names(set).join(" + "),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageOptions {
    /// Smallest instrument set counted as a combination entity.
    pub min_combination_size: usize,
}

impl Default for CoverageOptions {
    fn default() -> Self {
        CoverageOptions {
            min_combination_size: 2,
        }
    }
}

/// Occurrences per entity and set: transition occurrences for transitions,
/// frames for the other two categories.
pub fn entity_counts(
    dataset: &Dataset,
    assignment: &SplitAssignment,
    category: EntityCategory,
    options: &CoverageOptions,
) -> BTreeMap<Entity, PerSet<u64>> {
    let all = FramePredicate::all();
    let mut out = BTreeMap::new();
    match category {
        EntityCategory::PhaseTransition => {
            for (t, e) in compute_transition_stats(dataset, assignment).entries {
                out.insert(Entity::Transition(t), e.counts);
            }
        }
        EntityCategory::InstrumentDuringPhase => {
            let s = compute_instrument_phase_stats(dataset, assignment, &all);
            for (p, row) in s.counts.iter().enumerate() {
                for (i, c) in row.iter().enumerate() {
                    if c.total() > 0 {
                        out.insert(
                            Entity::InstrumentDuringPhase(PhaseId(p as u16), InstrumentId(i as u16)),
                            *c,
                        );
                    }
                }
            }
        }
        EntityCategory::InstrumentCombination => {
            let s = compute_cooccurrence_stats(dataset, assignment, &all);
            for (k, c) in &s.combinations {
                if k.members().len() >= options.min_combination_size {
                    out.insert(Entity::Combination(k.members()), *c);
                }
            }
            if options.min_combination_size <= 1 {
                for (i, c) in s.exclusive.iter().enumerate() {
                    if c.total() > 0 {
                        let set = [InstrumentId(i as u16)].into_iter().collect();
                        out.insert(Entity::Combination(set), *c);
                    }
                }
            }
        }
    }
    out
}

/// Sets evaluated for coverage: declared sets holding at least one surgery.
pub fn evaluated_sets(assignment: &SplitAssignment) -> Vec<SetLabel> {
    let sizes = assignment.sizes();
    assignment
        .active_sets()
        .into_iter()
        .filter(|&s| sizes[s] > 0)
        .collect()
}

fn everything_in_train(dataset: &Dataset) -> SplitAssignment {
    let labels = dataset
        .surgeries()
        .iter()
        .map(|s| (s.id.clone(), SetLabel::Train))
        .collect();
    SplitAssignment::from_labels(labels, false).expect("no val entries")
}

pub fn entity_universe(dataset: &Dataset, category: EntityCategory) -> BTreeSet<Entity> {
    entity_universe_with(dataset, category, &CoverageOptions::default())
}

pub fn entity_universe_with(
    dataset: &Dataset,
    category: EntityCategory,
    options: &CoverageOptions,
) -> BTreeSet<Entity> {
    entity_counts(dataset, &everything_in_train(dataset), category, options)
        .into_keys()
        .collect()
}

/// Per evaluated set, the universe entities with zero occurrences in that
/// set. Sets that are undeclared (val without validation) or empty are `None`.
pub fn unrepresented(
    dataset: &Dataset,
    assignment: &SplitAssignment,
    category: EntityCategory,
) -> PerSet<Option<Vec<Entity>>> {
    unrepresented_with(dataset, assignment, category, &CoverageOptions::default())
}

pub fn unrepresented_with(
    dataset: &Dataset,
    assignment: &SplitAssignment,
    category: EntityCategory,
    options: &CoverageOptions,
) -> PerSet<Option<Vec<Entity>>> {
    let universe = entity_universe_with(dataset, category, options);
    let counts = entity_counts(dataset, assignment, category, options);
    let active = evaluated_sets(assignment);
    PerSet::from_fn(|set| {
        active.contains(&set).then(|| {
            universe
                .iter()
                .filter(|e| counts.get(e).is_none_or(|c| c[set] == 0))
                .copied()
                .collect()
        })
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityCoverage {
    pub entity: String,
    pub counts: PerSet<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryCoverage {
    pub category: EntityCategory,
    pub universe: usize,
    pub unrepresented_counts: PerSet<Option<usize>>,
    pub unrepresented: PerSet<Option<Vec<String>>>,
    /// Every universe entity with its per-set occurrence counts.
    pub entities: Vec<EntityCoverage>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StartPhaseEntry {
    pub phase: String,
    pub counts: PerSet<u64>,
    pub surgeries: Vec<String>,
}

/// Surgeries grouped by the phase they start in; informational, not part of
/// the three entity categories.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StartPhaseCoverage {
    pub entries: Vec<StartPhaseEntry>,
    pub unrepresented: PerSet<Option<Vec<String>>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub schema_version: u32,
    pub fingerprint: String,
    pub has_validation: bool,
    pub min_combination_size: usize,
    pub categories: Vec<CategoryCoverage>,
    pub start_phases: StartPhaseCoverage,
}

impl CoverageReport {
    pub fn category(&self, category: EntityCategory) -> &CategoryCoverage {
        &self.categories[category.slot()]
    }

    /// Unrepresented count for one cell of the category × set matrix.
    pub fn cell(&self, category: EntityCategory, set: SetLabel) -> Option<usize> {
        self.category(category).unrepresented_counts[set]
    }

    /// Sum over all defined cells.
    pub fn total_unrepresented(&self) -> usize {
        self.categories
            .iter()
            .flat_map(|c| c.unrepresented_counts.iter().filter_map(|(_, n)| *n).collect::<Vec<_>>())
            .sum()
    }

    /// Table layout: one row, three category groups of Train/Val/Test cells.
    pub fn to_text_table(&self, split_name: &str) -> String {
        render_table(&[(split_name, self)])
    }
}

pub fn coverage_report(dataset: &Dataset, assignment: &SplitAssignment) -> CoverageReport {
    coverage_report_with(dataset, assignment, &CoverageOptions::default())
}

pub fn coverage_report_with(
    dataset: &Dataset,
    assignment: &SplitAssignment,
    options: &CoverageOptions,
) -> CoverageReport {
    let active = evaluated_sets(assignment);
    let categories = EntityCategory::ALL
        .iter()
        .map(|&category| {
            let universe = entity_universe_with(dataset, category, options);
            let counts = entity_counts(dataset, assignment, category, options);
            let count_of = |e: &Entity| counts.get(e).copied().unwrap_or_default();
            let missing = PerSet::from_fn(|set| {
                active.contains(&set).then(|| {
                    universe
                        .iter()
                        .filter(|e| count_of(e)[set] == 0)
                        .map(|e| e.label(dataset))
                        .collect::<Vec<_>>()
                })
            });
            CategoryCoverage {
                category,
                universe: universe.len(),
                unrepresented_counts: missing.map(|_, m| m.as_ref().map(Vec::len)),
                unrepresented: missing,
                entities: universe
                    .iter()
                    .map(|e| EntityCoverage {
                        entity: e.label(dataset),
                        counts: count_of(e),
                    })
                    .collect(),
            }
        })
        .collect();

    CoverageReport {
        schema_version: REPORT_SCHEMA_VERSION,
        fingerprint: dataset.fingerprint(),
        has_validation: assignment.has_validation(),
        min_combination_size: options.min_combination_size,
        categories,
        start_phases: start_phase_coverage(dataset, assignment),
    }
}

fn start_phase_coverage(dataset: &Dataset, assignment: &SplitAssignment) -> StartPhaseCoverage {
    let mut by_phase: BTreeMap<PhaseId, (PerSet<u64>, Vec<String>)> = BTreeMap::new();
    for s in dataset.surgeries() {
        let e = by_phase.entry(first_phase(s)).or_default();
        if let Some(set) = assignment.label_of(&s.id) {
            e.0[set] += 1;
        }
        e.1.push(s.id.clone());
    }
    let active = evaluated_sets(assignment);
    let unrepresented = PerSet::from_fn(|set| {
        active.contains(&set).then(|| {
            by_phase
                .iter()
                .filter(|(_, (c, _))| c[set] == 0)
                .map(|(p, _)| dataset.phase_name(*p).to_owned())
                .collect()
        })
    });
    StartPhaseCoverage {
        entries: by_phase
            .into_iter()
            .map(|(p, (counts, surgeries))| StartPhaseEntry {
                phase: dataset.phase_name(p).to_owned(),
                counts,
                surgeries,
            })
            .collect(),
        unrepresented,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetDelta {
    /// Unrepresented before, represented after.
    pub newly_covered: PerSet<Vec<String>>,
    /// Represented before, unrepresented after.
    pub newly_uncovered: PerSet<Vec<String>>,
}

impl SetDelta {
    fn between(before: &PerSet<Option<Vec<String>>>, after: &PerSet<Option<Vec<String>>>) -> Self {
        let mut delta = SetDelta::default();
        for set in SetLabel::ALL {
            let (Some(b), Some(a)) = (&before[set], &after[set]) else {
                continue;
            };
            let b: BTreeSet<&String> = b.iter().collect();
            let a: BTreeSet<&String> = a.iter().collect();
            delta.newly_covered[set] = b.difference(&a).map(|s| (*s).clone()).collect();
            delta.newly_uncovered[set] = a.difference(&b).map(|s| (*s).clone()).collect();
        }
        delta
    }

    pub fn is_empty(&self) -> bool {
        self.newly_covered.iter().all(|(_, v)| v.is_empty())
            && self.newly_uncovered.iter().all(|(_, v)| v.is_empty())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryDelta {
    pub category: EntityCategory,
    #[serde(flatten)]
    pub delta: SetDelta,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportDelta {
    pub categories: Vec<CategoryDelta>,
    pub start_phases: SetDelta,
}

impl ReportDelta {
    pub fn category(&self, category: EntityCategory) -> &SetDelta {
        &self.categories[category.slot()].delta
    }
}

/// Compares two reports over the same dataset. Sets missing from either
/// report (no validation set) contribute no changes.
pub fn diff_reports(
    before: &CoverageReport,
    after: &CoverageReport,
) -> Result<ReportDelta, CoverageError> {
    if before.fingerprint != after.fingerprint {
        return Err(CoverageError::FingerprintMismatch {
            before: before.fingerprint.clone(),
            after: after.fingerprint.clone(),
        });
    }
    Ok(ReportDelta {
        categories: before
            .categories
            .iter()
            .zip(&after.categories)
            .map(|(b, a)| CategoryDelta {
                category: b.category,
                delta: SetDelta::between(&b.unrepresented, &a.unrepresented),
            })
            .collect(),
        start_phases: SetDelta::between(&before.start_phases.unrepresented, &after.start_phases.unrepresented),
    })
}

/// Renders one table row per (split name, report) pair.
pub fn render_table(rows: &[(&str, &CoverageReport)]) -> String {
    let name_width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(8);
    let group = 24;
    let mut out = String::new();
    let _ = writeln!(out, "{:name_width$}  {}", "", "Unrepresented cases");
    let _ = write!(out, "{:name_width$}", "");
    for c in EntityCategory::ALL {
        let _ = write!(out, "  {:<group$}", c.title());
    }
    out.push('\n');
    let _ = write!(out, "{:<name_width$}", "Split");
    for _ in EntityCategory::ALL {
        let _ = write!(out, "  {:<group$}", format!("{:>6}{:>6}{:>6}", "Train", "Val", "Test"));
    }
    out.push('\n');
    for (name, report) in rows {
        let _ = write!(out, "{name:<name_width$}");
        for c in EntityCategory::ALL {
            let cells: String = SetLabel::ALL
                .iter()
                .map(|&s| match report.cell(c, s) {
                    Some(n) => format!("{n:>6}"),
                    None => format!("{:>6}", "-"),
                })
                .collect();
            let _ = write!(out, "  {cells:<group$}");
        }
        out.push('\n');
    }
    out
}
