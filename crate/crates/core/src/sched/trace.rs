use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::arith::BoothMode;
use crate::error::{Error, Result};

/// A simulated hardware unit that executes events one at a time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Unit {
    Tint(u8),
    BoothFlex,
    Lop,
    /// Shared softmax / RMSNorm / quantization unit.
    Nonlinear,
    /// Port-B DMA engine serving KV fetches.
    DmaB,
}

impl Unit {
    pub fn name(&self) -> String {
        self.to_string()
    }

    pub fn is_tint(&self) -> bool {
        matches!(self, Unit::Tint(_))
    }
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Unit::Tint(i) => write!(f, "TINT-{i}"),
            Unit::BoothFlex => f.write_str("BoothFlex"),
            Unit::Lop => f.write_str("LOP"),
            Unit::Nonlinear => f.write_str("NLU"),
            Unit::DmaB => f.write_str("DMA-B"),
        }
    }
}

impl Serialize for Unit {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Unit {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        match s.as_str() {
            "BoothFlex" => Ok(Unit::BoothFlex),
            "LOP" => Ok(Unit::Lop),
            "NLU" => Ok(Unit::Nonlinear),
            "DMA-B" => Ok(Unit::DmaB),
            other => other
                .strip_prefix("TINT-")
                .and_then(|i| i.parse().ok())
                .map(Unit::Tint)
                .ok_or_else(|| serde::de::Error::custom(format!("unknown unit {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum EventKind {
    QkvProj,
    LopGate,
    QkT,
    Softmax,
    SV,
    WoProj,
    FfnUp,
    FfnGate,
    FfnDown,
    Rmsnorm,
    QuantBarrier,
    KvFetch,
}

impl EventKind {
    /// Kinds that make up multi-head attention.
    pub fn is_mha(self) -> bool {
        matches!(
            self,
            EventKind::QkvProj
                | EventKind::LopGate
                | EventKind::KvFetch
                | EventKind::QkT
                | EventKind::Softmax
                | EventKind::SV
        )
    }

    pub fn is_ffn(self) -> bool {
        matches!(self, EventKind::FfnUp | EventKind::FfnGate | EventKind::FfnDown)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventMode {
    Int8,
    Ternary,
    None,
}

impl From<BoothMode> for EventMode {
    fn from(m: BoothMode) -> Self {
        match m {
            BoothMode::Int8 => EventMode::Int8,
            BoothMode::Ternary => EventMode::Ternary,
        }
    }
}

/// One scheduled unit of work. Serialized field order is fixed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileEvent {
    pub cycle_start: u64,
    pub cycle_end: u64,
    pub core: Unit,
    pub kind: EventKind,
    pub head: Option<u32>,
    pub bytes: u64,
    pub mode: EventMode,
    /// Batch (decode step or prefill chunk) that issued the event.
    #[serde(skip)]
    pub step: u32,
}

impl TileEvent {
    pub fn duration(&self) -> u64 {
        self.cycle_end - self.cycle_start
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScheduleTrace {
    pub events: Vec<TileEvent>,
    pub makespan: u64,
}

impl ScheduleTrace {
    pub fn new(events: Vec<TileEvent>) -> Self {
        let makespan = events.iter().map(|e| e.cycle_end).max().unwrap_or(0);
        Self { events, makespan }
    }

    pub fn busy(&self, unit: Unit) -> u64 {
        self.events.iter().filter(|e| e.core == unit).map(TileEvent::duration).sum()
    }

    pub fn units(&self) -> Vec<Unit> {
        let mut u: Vec<Unit> = self.events.iter().map(|e| e.core).collect();
        u.sort();
        u.dedup();
        u
    }

    pub fn total_bytes(&self) -> u64 {
        self.events.iter().map(|e| e.bytes).sum()
    }

    pub fn bytes_of(&self, kind: EventKind) -> u64 {
        self.events.iter().filter(|e| e.kind == kind).map(|e| e.bytes).sum()
    }

    /// Cycles during which at least one event matching `pred` is active.
    pub fn covered_cycles(&self, pred: impl Fn(&TileEvent) -> bool) -> u64 {
        let mut spans: Vec<(u64, u64)> =
            self.events.iter().filter(|e| pred(e)).map(|e| (e.cycle_start, e.cycle_end)).collect();
        spans.sort_unstable();
        let mut total = 0;
        let mut cur: Option<(u64, u64)> = None;
        for (s, e) in spans {
            match cur {
                Some((cs, ce)) if s <= ce => cur = Some((cs, ce.max(e))),
                Some((cs, ce)) => {
                    total += ce - cs;
                    cur = Some((s, e));
                }
                None => cur = Some((s, e)),
            }
        }
        total + cur.map_or(0, |(s, e)| e - s)
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let events = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<TileEvent>, _>>()?;
        Ok(Self::new(events))
    }

    /// Structural invariants every trace must satisfy: positive durations
    /// and no overlap on a unit.
    pub fn check_well_formed(&self) -> Result<()> {
        for e in &self.events {
            if e.cycle_end <= e.cycle_start {
                return Err(Error::invariant(format!("non-positive duration: {e:?}")));
            }
        }
        for unit in self.units() {
            let mut spans: Vec<(u64, u64)> =
                self.events.iter().filter(|e| e.core == unit).map(|e| (e.cycle_start, e.cycle_end)).collect();
            spans.sort_unstable();
            if let Some(w) = spans.windows(2).find(|w| w[1].0 < w[0].1) {
                return Err(Error::invariant(format!("{unit} overlaps itself: {:?} / {:?}", w[0], w[1])));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(start: u64, end: u64, core: Unit, kind: EventKind) -> TileEvent {
        TileEvent {
            cycle_start: start,
            cycle_end: end,
            core,
            kind,
            head: Some(0),
            bytes: 3,
            mode: EventMode::None,
            step: 0,
        }
    }

    #[test]
    fn jsonl_field_order_is_fixed() {
        let t = ScheduleTrace::new(vec![ev(0, 5, Unit::Tint(2), EventKind::QkvProj)]);
        assert_eq!(
            t.to_jsonl(),
            "{\"cycle_start\":0,\"cycle_end\":5,\"core\":\"TINT-2\",\"kind\":\"qkvProj\",\"head\":0,\"bytes\":3,\"mode\":\"none\"}\n"
        );
        assert_eq!(ScheduleTrace::from_jsonl(&t.to_jsonl()).unwrap(), t);
    }

    #[test]
    fn coverage_merges_overlaps() {
        let t = ScheduleTrace::new(vec![
            ev(0, 5, Unit::Tint(0), EventKind::QkvProj),
            ev(3, 8, Unit::BoothFlex, EventKind::QkT),
            ev(10, 12, Unit::BoothFlex, EventKind::SV),
        ]);
        assert_eq!(t.covered_cycles(|_| true), 10);
        assert_eq!(t.makespan, 12);
        assert_eq!(t.busy(Unit::BoothFlex), 7);
    }

    #[test]
    fn overlap_detected() {
        let t = ScheduleTrace::new(vec![
            ev(0, 5, Unit::Nonlinear, EventKind::Softmax),
            ev(4, 6, Unit::Nonlinear, EventKind::QuantBarrier),
        ]);
        assert!(t.check_well_formed().is_err());
    }
}
