//! Naive full-scan oracles over a raw random dataset, independent of the
//! indexed aggregates they check.

#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::Rng;
use splitlens_core::coverage::{coverage_report, unrepresented, Entity, EntityCategory};
use splitlens_core::model::{
    CooccurrenceKey, Dataset, FrameRecord, InstrumentId, InstrumentSet, PhaseId, SetLabel,
    Surgery, Transition,
};
use splitlens_core::splits::SplitAssignment;
use splitlens_core::stats::{
    compute_cooccurrence_stats, compute_instrument_phase_stats, compute_phase_stats,
    compute_transition_stats, compute_transition_stats_filtered, filter_frames, FilterCriteria,
    FramePredicate,
};

macro_rules! check {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

macro_rules! check_eq {
    ($a:expr, $b:expr) => {{
        let (a, b) = (&$a, &$b);
        if a != b {
            return Err(format!("{} = {:?}, expected {:?}", stringify!($a), a, b));
        }
    }};
}

#[derive(Debug, Clone)]
pub struct Case {
    pub phases: usize,
    pub instruments: usize,
    /// Per surgery, per frame: phase index and instrument bitmask.
    pub surgeries: Vec<Vec<(u16, u64)>>,
    pub labels: Vec<u8>,
    pub has_val: bool,
}

impl Case {
    pub fn random(rng: &mut impl Rng) -> Case {
        let phases = rng.random_range(1..=5);
        let instruments = rng.random_range(1..=5);
        let n = rng.random_range(1..=10);
        let surgeries = (0..n)
            .map(|_| {
                (0..rng.random_range(1..=100))
                    .map(|_| (rng.random_range(0..phases as u16), rng.random_range(0..1u64 << instruments)))
                    .collect()
            })
            .collect();
        Case {
            phases,
            instruments,
            surgeries,
            labels: (0..n).map(|_| rng.random_range(0..3)).collect(),
            has_val: rng.random_bool(0.5),
        }
    }

    pub fn label(&self, k: usize) -> SetLabel {
        match self.labels[k] {
            0 => SetLabel::Train,
            1 if self.has_val => SetLabel::Val,
            _ => SetLabel::Test,
        }
    }

    pub fn id(k: usize) -> String {
        format!("s{k:02}")
    }

    pub fn build(&self) -> (Dataset, SplitAssignment) {
        let ds = Dataset::new(
            (0..self.phases).map(|p| format!("phase{p}")).collect(),
            (0..self.instruments).map(|i| format!("tool{i}")).collect(),
            self.surgeries
                .iter()
                .enumerate()
                .map(|(k, frames)| Surgery {
                    id: Case::id(k),
                    frames: frames
                        .iter()
                        .enumerate()
                        .map(|(t, &(p, bits))| FrameRecord {
                            time_index: t as u64,
                            phase: PhaseId(p),
                            instruments: InstrumentSet::from_bits(bits),
                        })
                        .collect(),
                })
                .collect(),
        )
        .unwrap();
        let labels = (0..self.labels.len()).map(|k| (Case::id(k), self.label(k))).collect();
        (ds, SplitAssignment::from_labels(labels, self.has_val).unwrap())
    }

    fn sets(&self) -> Vec<SetLabel> {
        if self.has_val {
            SetLabel::ALL.to_vec()
        } else {
            vec![SetLabel::Train, SetLabel::Test]
        }
    }

    fn in_set(&self, set: SetLabel) -> impl Iterator<Item = &Vec<(u16, u64)>> {
        self.surgeries.iter().enumerate().filter(move |(k, _)| self.label(*k) == set).map(|(_, s)| s)
    }

    /// Entities present anywhere, or only in `only`.
    fn entities(&self, only: Option<SetLabel>) -> BTreeSet<Entity> {
        let mut out = BTreeSet::new();
        for (k, s) in self.surgeries.iter().enumerate() {
            if only.is_some_and(|set| self.label(k) != set) {
                continue;
            }
            for t in 0..s.len() {
                let (p, bits) = s[t];
                if t > 0 && s[t - 1].0 != p {
                    out.insert(Entity::Transition(Transition {
                        from: PhaseId(s[t - 1].0),
                        to: PhaseId(p),
                    }));
                }
                for i in 0..self.instruments {
                    if bits_of(bits, i) {
                        out.insert(Entity::InstrumentDuringPhase(PhaseId(p), InstrumentId(i as u16)));
                    }
                }
                if bits.count_ones() >= 2 {
                    out.insert(Entity::Combination(InstrumentSet::from_bits(bits)));
                }
            }
        }
        out
    }
}

fn bits_of(bits: u64, i: usize) -> bool {
    bits >> i & 1 == 1
}

pub fn check_aggregates(c: &Case) -> Result<(), String> {
    let (ds, a) = c.build();
    let all = FramePredicate::all();
    let phases = compute_phase_stats(&ds, &a, &all);
    let ip = compute_instrument_phase_stats(&ds, &a, &all);
    let co = compute_cooccurrence_stats(&ds, &a, &all);
    let tr = compute_transition_stats(&ds, &a);

    for set in SetLabel::ALL {
        for p in 0..c.phases as u16 {
            let mut frames = 0;
            let mut surgeries = 0;
            for s in c.in_set(set) {
                let n = s.iter().filter(|f| f.0 == p).count() as u64;
                frames += n;
                surgeries += u64::from(n > 0);
            }
            check_eq!(phases.frames[p as usize][set], frames);
            check_eq!(phases.surgeries[p as usize][set], surgeries);
            for i in 0..c.instruments {
                let n: u64 = c.in_set(set).map(|s| s.iter().filter(|f| f.0 == p && bits_of(f.1, i)).count() as u64).sum();
                check_eq!(ip.count(PhaseId(p), InstrumentId(i as u16), set), n);
            }
            for q in 0..c.phases as u16 {
                if p == q {
                    continue;
                }
                let n: u64 = c.in_set(set).map(|s| s.windows(2).filter(|w| w[0].0 == p && w[1].0 == q).count() as u64).sum();
                let t = Transition { from: PhaseId(p), to: PhaseId(q) };
                check_eq!(tr.count(t, set), n);
            }
        }
        for bits in 0..(1u64 << c.instruments) {
            let n: u64 = c.in_set(set).map(|s| s.iter().filter(|f| f.1 == bits).count() as u64).sum();
            match bits.count_ones() {
                0 => check_eq!(co.idle[set], n),
                1 => check_eq!(co.exclusive[bits.trailing_zeros() as usize][set], n),
                _ => {
                    let key = CooccurrenceKey::new(InstrumentSet::from_bits(bits)).unwrap();
                    check_eq!(co.count(key, set), n);
                }
            }
        }
    }
    Ok(())
}

pub fn check_unrepresented(c: &Case) -> Result<(), String> {
    let (ds, a) = c.build();
    let universe = c.entities(None);
    let report = coverage_report(&ds, &a);
    for cat in EntityCategory::ALL {
        let got = unrepresented(&ds, &a, cat);
        let universe_cat: BTreeSet<Entity> = universe.iter().filter(|e| e.category() == cat).copied().collect();
        check_eq!(report.category(cat).universe, universe_cat.len());
        for set in SetLabel::ALL {
            let declared = c.sets().contains(&set);
            let populated = (0..c.labels.len()).any(|k| c.label(k) == set);
            if !(declared && populated) {
                check!(got[set].is_none(), "{set:?} should not be evaluated");
                check!(report.cell(cat, set).is_none(), "{set:?} cell should be absent");
                continue;
            }
            let present = c.entities(Some(set));
            let expected: Vec<Entity> = universe_cat.iter().filter(|e| !present.contains(e)).copied().collect();
            check_eq!(got[set].as_ref().unwrap(), &expected);
            check_eq!(report.cell(cat, set), Some(expected.len()));
        }
    }
    Ok(())
}

pub fn check_partition(c: &Case) -> Result<(), String> {
    let (ds, a) = c.build();
    let phases = compute_phase_stats(&ds, &a, &FramePredicate::all());
    let total: u64 = phases.frames.iter().map(|f| f.total()).sum();
    check_eq!(total, ds.total_frames());
    let co = compute_cooccurrence_stats(&ds, &a, &FramePredicate::all());
    let by_kind = co.idle.total()
        + co.exclusive.iter().map(|e| e.total()).sum::<u64>()
        + co.combinations.values().map(|v| v.total()).sum::<u64>();
    check_eq!(by_kind, ds.total_frames());
    let tr = compute_transition_stats(&ds, &a);
    let changes: u64 = c.surgeries.iter().map(|s| s.windows(2).filter(|w| w[0].0 != w[1].0).count() as u64).sum();
    check_eq!(tr.entries.values().map(|e| e.counts.total()).sum::<u64>(), changes);
    Ok(())
}

/// Moving surgery `k` never adds missing entities to its target set nor
/// removes them from a source set that stays populated.
pub fn check_monotone(c: &Case, k: usize) -> Result<(), String> {
    let (ds, a) = c.build();
    let id = Case::id(k);
    let from = c.label(k);
    for to in c.sets() {
        if to == from {
            continue;
        }
        let moved = a.reassign(&id, to).unwrap();
        let still_populated = (0..c.labels.len()).any(|j| j != k && c.label(j) == from);
        for cat in EntityCategory::ALL {
            let before = unrepresented(&ds, &a, cat);
            let after = unrepresented(&ds, &moved, cat);
            if let (Some(b), Some(x)) = (&before[to], &after[to]) {
                check!(x.len() <= b.len(), "moving {id} to {to:?} uncovered {cat:?} entities");
            }
            if still_populated {
                let (b, x) = (before[from].as_ref().unwrap(), after[from].as_ref().unwrap());
                check!(x.len() >= b.len(), "moving {id} out of {from:?} covered {cat:?} entities");
            }
        }
    }
    Ok(())
}

pub fn check_filters(c: &Case, phase_mask: u8, required: u8) -> Result<(), String> {
    let (ds, a) = c.build();
    let phases: Vec<String> = (0..c.phases).filter(|p| phase_mask >> p & 1 == 1).map(|p| format!("phase{p}")).collect();
    let req = u64::from(required) & ((1 << c.instruments) - 1);
    let instruments: Vec<String> = (0..c.instruments).filter(|&i| bits_of(req, i)).map(|i| format!("tool{i}")).collect();
    let crit = FilterCriteria { phases: phases.clone(), instruments, ..Default::default() };
    let pred = filter_frames(&ds, &crit).map_err(|e| e.to_string())?;
    let keep = |f: &(u16, u64)| (phases.is_empty() || phase_mask >> f.0 & 1 == 1) && f.1 & req == req;
    let stats = compute_phase_stats(&ds, &a, &pred);
    let unfiltered = compute_phase_stats(&ds, &a, &FramePredicate::all());
    let tr = compute_transition_stats_filtered(&ds, &a, &pred);
    for set in SetLabel::ALL {
        for p in 0..c.phases as u16 {
            let n: u64 = c.in_set(set).map(|s| s.iter().filter(|f| f.0 == p && keep(f)).count() as u64).sum();
            check_eq!(stats.frames[p as usize][set], n);
            check!(n <= unfiltered.frames[p as usize][set], "filter grew phase {p}");
            for q in 0..c.phases as u16 {
                if p == q {
                    continue;
                }
                let m: u64 = c
                    .in_set(set)
                    .map(|s| s.windows(2).filter(|w| w[0].0 == p && w[1].0 == q && keep(&w[0]) && keep(&w[1])).count() as u64)
                    .sum();
                check_eq!(tr.count(Transition { from: PhaseId(p), to: PhaseId(q) }, set), m);
            }
        }
    }
    Ok(())
}
