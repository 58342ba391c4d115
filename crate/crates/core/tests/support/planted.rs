//! Ten-surgery instance with a known zero-cost split, and an exhaustive
//! search over every labelling.

#![allow(dead_code)]

use std::collections::BTreeMap;

use splitlens_core::model::{
    Dataset, FrameRecord, InstrumentId, InstrumentSet, PerSet, PhaseId, SetLabel, Surgery,
};
use splitlens_core::optimizer::{score, Objective};
use splitlens_core::splits::SplitAssignment;

pub const SIZES: PerSet<usize> = PerSet {
    train: 4,
    val: 3,
    test: 3,
};

fn frame(t: u64, phase: u16, inst: &[u16]) -> FrameRecord {
    FrameRecord {
        time_index: t,
        phase: PhaseId(phase),
        instruments: inst.iter().map(|&i| InstrumentId(i)).collect::<InstrumentSet>(),
    }
}

/// Ten surgeries. Three rare cases each occur in exactly three surgeries, so a
/// zero-cost 4/3/3 split must place one carrier of each case in every set.
pub fn planted() -> Dataset {
    let base = |extra: Vec<FrameRecord>| {
        let mut f = vec![frame(0, 0, &[0]), frame(1, 1, &[0, 1])];
        for (k, mut e) in extra.into_iter().enumerate() {
            e.time_index = 2 + k as u64;
            f.push(e);
        }
        f
    };
    let rare_transition = || frame(0, 2, &[]);
    let rare_pair = || frame(0, 1, &[3]);
    let rare_combo = || frame(0, 0, &[1, 2]);
    let surgeries = vec![
        base(vec![rare_transition()]),
        base(vec![rare_pair()]),
        base(vec![rare_combo()]),
        base(vec![rare_transition()]),
        base(vec![]),
        base(vec![rare_pair()]),
        base(vec![rare_combo()]),
        base(vec![]),
        base(vec![rare_transition()]),
        base(vec![rare_pair(), frame(0, 1, &[]), rare_combo()]),
    ];
    Dataset::new(
        (0..3).map(|p| format!("P{p}")).collect(),
        (0..4).map(|i| format!("I{i}")).collect(),
        surgeries
            .into_iter()
            .enumerate()
            .map(|(k, frames)| Surgery {
                id: format!("s{k}"),
                frames,
            })
            .collect(),
    )
    .unwrap()
}

pub fn exhaustive_minimum(ds: &Dataset, sizes: PerSet<usize>, objective: &Objective) -> f64 {
    let n = ds.surgeries().len();
    let mut best = f64::INFINITY;
    for code in 0..3usize.pow(n as u32) {
        let mut c = code;
        let mut labels = BTreeMap::new();
        let mut count = PerSet::<usize>::default();
        for s in ds.surgeries() {
            let set = SetLabel::ALL[c % 3];
            c /= 3;
            count[set] += 1;
            labels.insert(s.id.clone(), set);
        }
        if count != sizes {
            continue;
        }
        let a = SplitAssignment::from_labels(labels, sizes.val > 0).unwrap();
        best = best.min(score(ds, &a, objective).unwrap());
    }
    best
}
