//! Split search. Minimizes a weighted count of unrepresented cases, plus
//! optional phase-distribution divergence and mean-length disparity terms,
//! over assignments with fixed set sizes.
//!
//! The objective is a heuristic of this crate, not an established metric.
//! Moves swap two surgeries from different sets, so sizes never change.
//! Each step scores a sample of up to [`SWAP_SAMPLE`] swaps incrementally
//! from per-surgery entity signatures and takes the best one if it improves.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coverage::{coverage_report, evaluated_sets, EntityCategory};
use crate::model::{Dataset, InstrumentSet, PerSet, PhaseId, SetLabel, Surgery, Transition};
use crate::splits::{SplitAssignment, Violation};
use crate::stats::{compute_phase_stats, compute_set_sizes, FramePredicate};

/// Candidate swaps scored per step.
pub const SWAP_SAMPLE: usize = 64;
/// Non-improving sampled steps tolerated before the search is perturbed.
const STALE_LIMIT: usize = 8;
/// Random swaps applied when perturbing a stuck search.
const KICK_SWAPS: usize = 3;
const EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizeError {
    #[error("evaluation budget must be at least 1")]
    ZeroBudget,
    #[error("at least one restart is required")]
    ZeroRestarts,
    #[error("set sizes {train}/{val}/{test} cannot partition {surgeries} surgeries with non-empty train and test", train = .sizes.train, val = .sizes.val, test = .sizes.test)]
    InfeasibleSizes {
        sizes: PerSet<usize>,
        surgeries: usize,
    },
    #[error("initial assignment sizes {}/{}/{} differ from the configured sizes", .0.train, .0.val, .0.test)]
    InitialSizeMismatch(PerSet<usize>),
    #[error("invalid objective: {0}")]
    InvalidObjective(String),
    #[error("invalid assignment: {0:?}")]
    InvalidAssignment(Vec<Violation>),
}

fn unit() -> PerSet<f64> {
    PerSet {
        train: 1.0,
        val: 1.0,
        test: 1.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Objective {
    #[serde(default = "unit")]
    pub phase_transition: PerSet<f64>,
    #[serde(default = "unit")]
    pub instrument_during_phase: PerSet<f64>,
    #[serde(default = "unit")]
    pub instrument_combination: PerSet<f64>,
    /// Weight of the mean total-variation distance between each set's phase
    /// frame distribution and the whole dataset's.
    #[serde(default)]
    pub divergence: f64,
    /// Weight of (max - min of per-set mean frames per surgery) / overall mean.
    #[serde(default)]
    pub disparity: f64,
}

impl Default for Objective {
    fn default() -> Self {
        Objective {
            phase_transition: unit(),
            instrument_during_phase: unit(),
            instrument_combination: unit(),
            divergence: 0.0,
            disparity: 0.0,
        }
    }
}

impl Objective {
    pub fn category_weights(&self, category: EntityCategory) -> &PerSet<f64> {
        match category {
            EntityCategory::PhaseTransition => &self.phase_transition,
            EntityCategory::InstrumentDuringPhase => &self.instrument_during_phase,
            EntityCategory::InstrumentCombination => &self.instrument_combination,
        }
    }

    pub fn validate(&self) -> Result<(), OptimizeError> {
        let mut all: Vec<f64> = EntityCategory::ALL
            .iter()
            .flat_map(|&c| self.category_weights(c).iter().map(|(_, &w)| w).collect::<Vec<_>>())
            .collect();
        all.push(self.divergence);
        all.push(self.disparity);
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(OptimizeError::InvalidObjective(
                "weights must be finite and non-negative".into(),
            ));
        }
        if all.iter().all(|&w| w == 0.0) {
            return Err(OptimizeError::InvalidObjective(
                "at least one weight must be positive".into(),
            ));
        }
        Ok(())
    }
}

fn default_budget() -> usize {
    20_000
}

fn default_restarts() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    /// Surgeries per set; a val size of 0 means no validation set.
    pub sizes: PerSet<usize>,
    #[serde(default)]
    pub seed: u64,
    /// Maximum objective evaluations, shared across restarts.
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
}

impl SearchConfig {
    pub fn validate(&self, surgeries: usize) -> Result<(), OptimizeError> {
        if self.budget == 0 {
            return Err(OptimizeError::ZeroBudget);
        }
        if self.restarts == 0 {
            return Err(OptimizeError::ZeroRestarts);
        }
        let s = self.sizes;
        if s.train == 0 || s.test == 0 || s.train + s.val + s.test != surgeries {
            return Err(OptimizeError::InfeasibleSizes {
                sizes: s,
                surgeries,
            });
        }
        Ok(())
    }

    fn has_validation(&self) -> bool {
        self.sizes.val > 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub evaluation: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeResult {
    pub assignment: SplitAssignment,
    pub score: f64,
    pub initial_score: f64,
    /// Strictly decreasing best-so-far scores, starting at the first evaluation.
    pub trace: Vec<TracePoint>,
    pub evaluations: usize,
}

/// Scores an assignment from its coverage report and set statistics.
pub fn score(
    dataset: &Dataset,
    assignment: &SplitAssignment,
    objective: &Objective,
) -> Result<f64, OptimizeError> {
    objective.validate()?;
    assignment
        .validate(dataset)
        .map_err(OptimizeError::InvalidAssignment)?;
    let report = coverage_report(dataset, assignment);
    let mut total = 0.0;
    for c in EntityCategory::ALL {
        let w = objective.category_weights(c);
        for (set, n) in report.category(c).unrepresented_counts.iter() {
            if let Some(n) = n {
                total += w[set] * *n as f64;
            }
        }
    }
    let sets = evaluated_sets(assignment);
    if objective.divergence > 0.0 {
        let phases = compute_phase_stats(dataset, assignment, &FramePredicate::all());
        let per_set: Vec<PerSet<u64>> = phases.frames;
        total += objective.divergence * phase_divergence(&sets, |p, s| per_set[p][s], per_set.len());
    }
    if objective.disparity > 0.0 {
        let sizes = compute_set_sizes(dataset, assignment);
        total += objective.disparity
            * mean_disparity(&sets, |s| (sizes.sets[s].surgeries, sizes.sets[s].frames));
    }
    Ok(total)
}

fn phase_divergence(sets: &[SetLabel], frames: impl Fn(usize, SetLabel) -> u64, phases: usize) -> f64 {
    let per_phase_total: Vec<u64> = (0..phases)
        .map(|p| SetLabel::ALL.iter().map(|&s| frames(p, s)).sum())
        .collect();
    let total: u64 = per_phase_total.iter().sum();
    if total == 0 || sets.is_empty() {
        return 0.0;
    }
    let mut sum = 0.0;
    for &s in sets {
        let set_total: u64 = (0..phases).map(|p| frames(p, s)).sum();
        if set_total == 0 {
            continue;
        }
        let tv: f64 = (0..phases)
            .map(|p| {
                (frames(p, s) as f64 / set_total as f64 - per_phase_total[p] as f64 / total as f64).abs()
            })
            .sum::<f64>()
            * 0.5;
        sum += tv;
    }
    sum / sets.len() as f64
}

fn mean_disparity(sets: &[SetLabel], size: impl Fn(SetLabel) -> (u64, u64)) -> f64 {
    let (mut n, mut f) = (0u64, 0u64);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &s in sets {
        let (sn, sf) = size(s);
        if sn == 0 {
            continue;
        }
        n += sn;
        f += sf;
        let mean = sf as f64 / sn as f64;
        lo = lo.min(mean);
        hi = hi.max(mean);
    }
    if n == 0 || f == 0 {
        return 0.0;
    }
    (hi - lo) / (f as f64 / n as f64)
}

/// Entity occurrences contributed by one surgery.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Signature {
    /// `(entity index, occurrences)`; entity indices are dense over all categories.
    pub entities: Vec<(usize, u64)>,
    pub phase_frames: Vec<u64>,
    pub frames: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum EntityKey {
    Transition(Transition),
    Pair(PhaseId, u16),
    Combination(InstrumentSet),
}

impl EntityKey {
    fn category(self) -> EntityCategory {
        match self {
            EntityKey::Transition(_) => EntityCategory::PhaseTransition,
            EntityKey::Pair(..) => EntityCategory::InstrumentDuringPhase,
            EntityKey::Combination(_) => EntityCategory::InstrumentCombination,
        }
    }
}

fn scan(surgery: &Surgery) -> HashMap<EntityKey, u64> {
    let mut out = HashMap::new();
    for w in surgery.frames.windows(2) {
        if w[0].phase != w[1].phase {
            *out.entry(EntityKey::Transition(Transition {
                from: w[0].phase,
                to: w[1].phase,
            }))
            .or_default() += 1;
        }
    }
    for f in &surgery.frames {
        for i in f.instruments.iter() {
            *out.entry(EntityKey::Pair(f.phase, i.0)).or_default() += 1;
        }
        if f.instruments.len() >= 2 {
            *out.entry(EntityKey::Combination(f.instruments)).or_default() += 1;
        }
    }
    out
}

/// Incrementally maintained objective for one labelling of the dataset.
#[derive(Debug, Clone)]
pub struct Evaluator<'a> {
    objective: &'a Objective,
    signatures: &'a [Signature],
    categories: &'a [EntityCategory],
    active: Vec<SetLabel>,
    labels: Vec<SetLabel>,
    counts: Vec<PerSet<u64>>,
    missing: [PerSet<u64>; 3],
    phase_frames: PerSet<Vec<u64>>,
    frames: PerSet<u64>,
    surgeries: PerSet<u64>,
}

/// Per-surgery signatures plus the category of every entity index.
#[derive(Debug, Clone)]
pub struct Signatures {
    pub surgeries: Vec<Signature>,
    pub categories: Vec<EntityCategory>,
}

impl Signatures {
    pub fn build(dataset: &Dataset) -> Self {
        let scans: Vec<HashMap<EntityKey, u64>> = dataset.surgeries().iter().map(scan).collect();
        let mut keys: Vec<EntityKey> = scans.iter().flat_map(|m| m.keys().copied()).collect();
        keys.sort();
        keys.dedup();
        let index: HashMap<EntityKey, usize> = keys.iter().enumerate().map(|(i, k)| (*k, i)).collect();
        let phases = dataset.phases().len();
        let surgeries = dataset
            .surgeries()
            .iter()
            .zip(&scans)
            .map(|(s, m)| {
                let mut entities: Vec<(usize, u64)> = m.iter().map(|(k, &c)| (index[k], c)).collect();
                entities.sort_unstable();
                let mut phase_frames = vec![0; phases];
                for f in &s.frames {
                    phase_frames[f.phase.index()] += 1;
                }
                Signature {
                    entities,
                    phase_frames,
                    frames: s.frames.len() as u64,
                }
            })
            .collect();
        Signatures {
            surgeries,
            categories: keys.iter().map(|k| k.category()).collect(),
        }
    }
}

impl<'a> Evaluator<'a> {
    pub fn new(
        signatures: &'a Signatures,
        objective: &'a Objective,
        labels: Vec<SetLabel>,
        has_validation: bool,
    ) -> Self {
        let phases = signatures.surgeries.first().map_or(0, |s| s.phase_frames.len());
        let mut ev = Evaluator {
            objective,
            signatures: &signatures.surgeries,
            categories: &signatures.categories,
            active: crate::splits::active_sets(has_validation),
            labels: labels.clone(),
            counts: vec![PerSet::default(); signatures.categories.len()],
            missing: [PerSet::default(); 3],
            phase_frames: PerSet::from_fn(|_| vec![0; phases]),
            frames: PerSet::default(),
            surgeries: PerSet::default(),
        };
        for (i, &set) in labels.iter().enumerate() {
            ev.add(i, set);
        }
        for (e, c) in ev.counts.iter().enumerate() {
            for set in SetLabel::ALL {
                if c[set] == 0 {
                    ev.missing[ev.categories[e].slot()][set] += 1;
                }
            }
        }
        ev
    }

    fn add(&mut self, surgery: usize, set: SetLabel) {
        let sig = &self.signatures[surgery];
        for &(e, c) in &sig.entities {
            self.counts[e][set] += c;
        }
        for (p, &n) in sig.phase_frames.iter().enumerate() {
            self.phase_frames[set][p] += n;
        }
        self.frames[set] += sig.frames;
        self.surgeries[set] += 1;
    }

    fn move_surgery(&mut self, surgery: usize, to: SetLabel) {
        let from = self.labels[surgery];
        if from == to {
            return;
        }
        let sig = &self.signatures[surgery];
        for &(e, c) in &sig.entities {
            let cat = self.categories[e].slot();
            let counts = &mut self.counts[e];
            counts[from] -= c;
            if counts[from] == 0 {
                self.missing[cat][from] += 1;
            }
            if counts[to] == 0 {
                self.missing[cat][to] -= 1;
            }
            counts[to] += c;
        }
        for (p, &n) in sig.phase_frames.iter().enumerate() {
            self.phase_frames[from][p] -= n;
            self.phase_frames[to][p] += n;
        }
        self.frames[from] -= sig.frames;
        self.frames[to] += sig.frames;
        self.surgeries[from] -= 1;
        self.surgeries[to] += 1;
        self.labels[surgery] = to;
    }

    /// Exchanges the sets of two surgeries.
    pub fn swap(&mut self, a: usize, b: usize) {
        let (la, lb) = (self.labels[a], self.labels[b]);
        self.move_surgery(a, lb);
        self.move_surgery(b, la);
    }

    pub fn labels(&self) -> &[SetLabel] {
        &self.labels
    }

    pub fn score(&self) -> f64 {
        let sets: Vec<SetLabel> = self
            .active
            .iter()
            .copied()
            .filter(|&s| self.surgeries[s] > 0)
            .collect();
        let mut total = 0.0;
        for c in EntityCategory::ALL {
            let w = self.objective.category_weights(c);
            for &s in &sets {
                total += w[s] * self.missing[c.slot()][s] as f64;
            }
        }
        if self.objective.divergence > 0.0 {
            let phases = self.phase_frames.train.len();
            total += self.objective.divergence
                * phase_divergence(&sets, |p, s| self.phase_frames[s][p], phases);
        }
        if self.objective.disparity > 0.0 {
            total += self.objective.disparity
                * mean_disparity(&sets, |s| (self.surgeries[s], self.frames[s]));
        }
        total
    }
}

struct RestartOutcome {
    labels: Vec<SetLabel>,
    score: f64,
    trace: Vec<TracePoint>,
    evaluations: usize,
}

pub fn optimize(
    dataset: &Dataset,
    config: &SearchConfig,
    objective: &Objective,
    initial: Option<&SplitAssignment>,
) -> Result<OptimizeResult, OptimizeError> {
    optimize_with_hooks(dataset, config, objective, initial, Hooks::default())
}

/// Optional observers for a running search.
#[derive(Default, Clone, Copy)]
pub struct Hooks<'a> {
    /// Incremented once per objective evaluation.
    pub progress: Option<&'a AtomicUsize>,
    /// Called with the surgery labels (in dataset order) after every applied move.
    pub on_move: Option<&'a (dyn Fn(&[SetLabel]) + Sync)>,
}

pub fn optimize_with_hooks(
    dataset: &Dataset,
    config: &SearchConfig,
    objective: &Objective,
    initial: Option<&SplitAssignment>,
    hooks: Hooks<'_>,
) -> Result<OptimizeResult, OptimizeError> {
    let n = dataset.surgeries().len();
    config.validate(n)?;
    objective.validate()?;
    let initial_labels = match initial {
        None => None,
        Some(a) => {
            a.validate(dataset).map_err(OptimizeError::InvalidAssignment)?;
            if a.sizes() != config.sizes || a.has_validation() != config.has_validation() {
                return Err(OptimizeError::InitialSizeMismatch(a.sizes()));
            }
            Some(
                a.labels_for(dataset)
                    .into_iter()
                    .map(|l| l.expect("validated assignment is total"))
                    .collect::<Vec<_>>(),
            )
        }
    };

    let signatures = Signatures::build(dataset);
    let per_restart = config.budget / config.restarts;
    let extra = config.budget % config.restarts;
    let outcomes: Vec<Option<RestartOutcome>> = (0..config.restarts)
        .into_par_iter()
        .map(|r| {
            let budget = per_restart + usize::from(r < extra);
            if budget == 0 {
                return None;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(r as u64);
            let start = match (r, &initial_labels) {
                (0, Some(l)) => l.clone(),
                _ => random_labels(n, config.sizes, &mut rng),
            };
            Some(run_restart(
                &signatures,
                objective,
                config.has_validation(),
                start,
                budget,
                &mut rng,
                hooks,
            ))
        })
        .collect();

    let mut trace = Vec::new();
    let mut offset = 0;
    let mut best: Option<&RestartOutcome> = None;
    let mut initial_score = None;
    for o in outcomes.iter().flatten() {
        if initial_score.is_none() {
            initial_score = o.trace.first().map(|t| t.score);
        }
        for t in &o.trace {
            if trace.last().is_none_or(|last: &TracePoint| t.score < last.score - EPS) {
                trace.push(TracePoint {
                    evaluation: offset + t.evaluation,
                    score: t.score,
                });
            }
        }
        offset += o.evaluations;
        if best.is_none_or(|b| o.score < b.score - EPS) {
            best = Some(o);
        }
    }
    let best = best.expect("budget >= 1 runs at least one restart");
    let labels = dataset
        .surgeries()
        .iter()
        .zip(&best.labels)
        .map(|(s, &l)| (s.id.clone(), l))
        .collect();
    let assignment = SplitAssignment::from_labels(labels, config.has_validation())
        .expect("search never assigns val without a validation set");
    Ok(OptimizeResult {
        assignment,
        score: best.score,
        initial_score: initial_score.expect("first restart records its start"),
        trace,
        evaluations: offset,
    })
}

fn random_labels(n: usize, sizes: PerSet<usize>, rng: &mut ChaCha8Rng) -> Vec<SetLabel> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut labels = vec![SetLabel::Train; n];
    for (k, &i) in order.iter().enumerate() {
        labels[i] = if k < sizes.train {
            SetLabel::Train
        } else if k < sizes.train + sizes.val {
            SetLabel::Val
        } else {
            SetLabel::Test
        };
    }
    labels
}

/// Cross-set pairs `(i, j)` with `i < j`, in index order.
fn all_swaps(labels: &[SetLabel]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..labels.len() {
        for j in i + 1..labels.len() {
            if labels[i] != labels[j] {
                out.push((i, j));
            }
        }
    }
    out
}

fn cross_pairs(labels: &[SetLabel]) -> usize {
    let mut sizes = [0usize; 3];
    for l in labels {
        sizes[l.slot()] += 1;
    }
    sizes[0] * sizes[1] + sizes[0] * sizes[2] + sizes[1] * sizes[2]
}

fn sample_swaps(labels: &[SetLabel], rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let n = labels.len();
    let mut out: Vec<(usize, usize)> = Vec::with_capacity(SWAP_SAMPLE);
    while out.len() < SWAP_SAMPLE {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if labels[a] == labels[b] {
            continue;
        }
        let pair = (a.min(b), a.max(b));
        if !out.contains(&pair) {
            out.push(pair);
        }
    }
    // surgery indices follow id order, so this is the lexicographic id-pair order
    out.sort_unstable();
    out
}

fn random_swap(labels: &[SetLabel], rng: &mut ChaCha8Rng) -> (usize, usize) {
    let n = labels.len();
    loop {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if labels[a] != labels[b] {
            return (a, b);
        }
    }
}

fn run_restart(
    signatures: &Signatures,
    objective: &Objective,
    has_validation: bool,
    start: Vec<SetLabel>,
    budget: usize,
    rng: &mut ChaCha8Rng,
    hooks: Hooks<'_>,
) -> RestartOutcome {
    let tick = || {
        if let Some(p) = hooks.progress {
            p.fetch_add(1, Ordering::Relaxed);
        }
    };
    let moved = |labels: &[SetLabel]| {
        if let Some(f) = hooks.on_move {
            f(labels);
        }
    };
    let mut ev = Evaluator::new(signatures, objective, start, has_validation);
    let mut evals = 1;
    tick();
    let mut current = ev.score();
    let mut best_labels = ev.labels().to_vec();
    let mut best = current;
    let mut trace = vec![TracePoint {
        evaluation: 1,
        score: current,
    }];
    let exhaustive = cross_pairs(ev.labels()) <= SWAP_SAMPLE;
    let mut stale = 0;

    while evals < budget && best > EPS {
        let candidates = if exhaustive {
            all_swaps(ev.labels())
        } else {
            sample_swaps(ev.labels(), rng)
        };
        let mut chosen: Option<((usize, usize), f64, usize)> = None;
        for &(a, b) in &candidates {
            if evals >= budget {
                break;
            }
            ev.swap(a, b);
            let s = ev.score();
            ev.swap(a, b);
            evals += 1;
            tick();
            if chosen.is_none_or(|(_, cs, _)| s < cs - EPS) {
                chosen = Some(((a, b), s, evals));
            }
        }
        match chosen {
            Some(((a, b), s, at)) if s < current - EPS => {
                ev.swap(a, b);
                moved(ev.labels());
                current = s;
                stale = 0;
                if current < best - EPS {
                    best = current;
                    best_labels = ev.labels().to_vec();
                    trace.push(TracePoint {
                        evaluation: at,
                        score: best,
                    });
                }
            }
            _ => {
                stale += 1;
                if (exhaustive || stale >= STALE_LIMIT) && evals < budget {
                    for _ in 0..KICK_SWAPS {
                        let (a, b) = random_swap(ev.labels(), rng);
                        ev.swap(a, b);
                    }
                    moved(ev.labels());
                    current = ev.score();
                    evals += 1;
                    tick();
                    stale = 0;
                    if current < best - EPS {
                        best = current;
                        best_labels = ev.labels().to_vec();
                        trace.push(TracePoint {
                            evaluation: evals,
                            score: best,
                        });
                    }
                }
            }
        }
    }
    RestartOutcome {
        labels: best_labels,
        score: best,
        trace,
        evaluations: evals,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FrameRecord, InstrumentId};

    fn frame(t: u64, phase: u16, inst: &[u16]) -> FrameRecord {
        FrameRecord {
            time_index: t,
            phase: PhaseId(phase),
            instruments: inst.iter().map(|&i| InstrumentId(i)).collect(),
        }
    }

    fn dataset(surgeries: Vec<Vec<FrameRecord>>) -> Dataset {
        Dataset::new(
            (0..4).map(|p| format!("P{p}")).collect(),
            (0..4).map(|i| format!("I{i}")).collect(),
            surgeries
                .into_iter()
                .enumerate()
                .map(|(i, frames)| Surgery { id: format!("s{i:02}"), frames })
                .collect(),
        )
        .unwrap()
    }

    fn assignment(ds: &Dataset, labels: &[SetLabel], has_val: bool) -> SplitAssignment {
        SplitAssignment::from_labels(
            ds.surgeries().iter().zip(labels).map(|(s, &l)| (s.id.clone(), l)).collect(),
            has_val,
        )
        .unwrap()
    }

    use SetLabel::{Test as Te, Train as Tr, Val as Va};

    #[test]
    fn all_represented_scores_zero() {
        let s = vec![frame(0, 0, &[0, 1]), frame(1, 1, &[0])];
        let ds = dataset(vec![s.clone(), s.clone(), s]);
        let a = assignment(&ds, &[Tr, Va, Te], true);
        assert_eq!(score(&ds, &a, &Objective::default()).unwrap(), 0.0);
    }

    #[test]
    fn score_counts_missing_cells() {
        let ds = dataset(vec![
            vec![frame(0, 0, &[0, 1]), frame(1, 1, &[0])],
            vec![frame(0, 0, &[0])],
        ]);
        let a = assignment(&ds, &[Tr, Te], false);
        // test lacks: P0->P1, I1 during P0, I0 during P1, {I0,I1}
        assert_eq!(score(&ds, &a, &Objective::default()).unwrap(), 4.0);
        let mut o = Objective::default();
        o.instrument_combination.test = 10.0;
        assert_eq!(score(&ds, &a, &o).unwrap(), 13.0);
    }

    #[test]
    fn divergence_and_disparity_terms() {
        let ds = dataset(vec![
            vec![frame(0, 0, &[]), frame(1, 0, &[])],
            vec![frame(0, 1, &[]), frame(1, 1, &[]), frame(2, 1, &[]), frame(3, 1, &[])],
        ]);
        let a = assignment(&ds, &[Tr, Te], false);
        let o = Objective {
            phase_transition: PerSet::default(),
            instrument_during_phase: PerSet::default(),
            instrument_combination: PerSet::default(),
            divergence: 1.0,
            disparity: 0.0,
        };
        // overall (1/3, 2/3); train (1,0) tv=2/3; test (0,1) tv=1/3; mean 0.5
        assert!((score(&ds, &a, &o).unwrap() - 0.5).abs() < 1e-12);
        let o = Objective { divergence: 0.0, disparity: 1.0, ..o };
        // means 2 and 4, overall 3
        assert!((score(&ds, &a, &o).unwrap() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn objective_and_config_validation() {
        let mut o = Objective::default();
        o.divergence = -1.0;
        assert!(o.validate().is_err());
        let zero = Objective {
            phase_transition: PerSet::default(),
            instrument_during_phase: PerSet::default(),
            instrument_combination: PerSet::default(),
            divergence: 0.0,
            disparity: 0.0,
        };
        assert!(zero.validate().is_err());

        let ds = dataset(vec![vec![frame(0, 0, &[])], vec![frame(0, 0, &[])]]);
        let cfg = |train, val, test, budget| SearchConfig {
            sizes: PerSet { train, val, test },
            seed: 1,
            budget,
            restarts: 1,
        };
        let o = Objective::default();
        assert_eq!(optimize(&ds, &cfg(1, 0, 1, 0), &o, None).unwrap_err(), OptimizeError::ZeroBudget);
        assert!(matches!(
            optimize(&ds, &cfg(2, 0, 1, 10), &o, None).unwrap_err(),
            OptimizeError::InfeasibleSizes { .. }
        ));
        assert!(matches!(
            optimize(&ds, &cfg(2, 0, 0, 10), &o, None).unwrap_err(),
            OptimizeError::InfeasibleSizes { .. }
        ));
    }

    #[test]
    fn optimal_initial_is_returned_unchanged() {
        let common = vec![frame(0, 0, &[0, 1]), frame(1, 1, &[2])];
        let ds = dataset((0..6).map(|_| common.clone()).collect());
        let a = assignment(&ds, &[Tr, Tr, Va, Va, Te, Te], true);
        let cfg = SearchConfig {
            sizes: a.sizes(),
            seed: 3,
            budget: 500,
            restarts: 2,
        };
        let r = optimize(&ds, &cfg, &Objective::default(), Some(&a)).unwrap();
        assert_eq!(r.assignment, a);
        assert_eq!(r.score, 0.0);
        assert_eq!(r.trace, vec![TracePoint { evaluation: 1, score: 0.0 }]);
    }

    #[test]
    fn initial_size_mismatch_rejected() {
        let s = vec![frame(0, 0, &[])];
        let ds = dataset(vec![s.clone(), s.clone(), s]);
        let a = assignment(&ds, &[Tr, Tr, Te], false);
        let cfg = SearchConfig {
            sizes: PerSet { train: 1, val: 0, test: 2 },
            seed: 0,
            budget: 10,
            restarts: 1,
        };
        assert!(matches!(
            optimize(&ds, &cfg, &Objective::default(), Some(&a)),
            Err(OptimizeError::InitialSizeMismatch(_))
        ));
    }

    #[test]
    fn evaluator_tracks_full_rescoring() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let surgeries: Vec<Vec<FrameRecord>> = (0..9)
            .map(|_| {
                let len = rng.random_range(1..12);
                (0..len)
                    .map(|t| {
                        let inst: Vec<u16> = (0..4).filter(|_| rng.random_bool(0.35)).collect();
                        frame(t, rng.random_range(0..4), &inst)
                    })
                    .collect()
            })
            .collect();
        let ds = dataset(surgeries);
        let o = Objective {
            divergence: 0.7,
            disparity: 0.3,
            ..Objective::default()
        };
        let labels = vec![Tr, Tr, Tr, Va, Va, Te, Te, Te, Te];
        let sig = Signatures::build(&ds);
        let mut ev = Evaluator::new(&sig, &o, labels.clone(), true);
        for _ in 0..40 {
            let a = assignment(&ds, ev.labels(), true);
            let full = score(&ds, &a, &o).unwrap();
            assert!((ev.score() - full).abs() < 1e-9, "{} vs {full}", ev.score());
            let (i, j) = random_swap(ev.labels(), &mut rng);
            ev.swap(i, j);
        }
    }
}
