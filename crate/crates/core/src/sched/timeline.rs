use std::collections::BTreeMap;

use super::trace::Unit;

/// In-order occupancy of each unit: work issued to a unit starts no
/// earlier than the unit's previous event ended.
#[derive(Debug, Clone, Default)]
pub struct Timeline {
    free_at: BTreeMap<Unit, u64>,
}

impl Timeline {
    pub fn free_at(&self, unit: Unit) -> u64 {
        self.free_at.get(&unit).copied().unwrap_or(0)
    }

    /// Reserve `duration` cycles (at least one) on `unit` no earlier than
    /// `ready`. Returns (start, end).
    pub fn reserve(&mut self, unit: Unit, ready: u64, duration: u64) -> (u64, u64) {
        let start = ready.max(self.free_at(unit));
        let end = start + duration.max(1);
        self.free_at.insert(unit, end);
        (start, end)
    }

    /// Latest end over all units.
    pub fn horizon(&self) -> u64 {
        self.free_at.values().copied().max().unwrap_or(0)
    }
}

/// Makespan of a two-stage per-head stream on two units. Pipelined, head
/// `h` enters stage B as soon as its stage A finishes; otherwise stage B
/// waits for every head's stage A.
pub fn two_stage_makespan(stage_a: &[u64], stage_b: &[u64], pipelined: bool) -> u64 {
    assert_eq!(stage_a.len(), stage_b.len(), "one duration per head and stage");
    let mut tl = Timeline::default();
    let a_ends: Vec<u64> = stage_a.iter().map(|&d| tl.reserve(Unit::Tint(0), 0, d).1).collect();
    let all_a = a_ends.iter().copied().max().unwrap_or(0);
    for (h, &d) in stage_b.iter().enumerate() {
        let ready = if pipelined { a_ends[h] } else { all_a };
        tl.reserve(Unit::BoothFlex, ready, d);
    }
    tl.horizon()
}
