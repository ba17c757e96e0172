//! Off-chip KV cache, the LOP feature store, flat-bandwidth transfer costs,
//! per-lane tile credits and byte counters per traffic stream.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lop::{extract_features, feature_row_bytes, LopFeature};
use crate::quant::QuantVector;

/// Every stored vector carries one 32-bit scale.
pub const SCALE_BYTES: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stream {
    KvKeys,
    KvValues,
    LopFeatures,
    Weights,
    Activations,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrafficStats {
    pub bytes_kv_keys: u64,
    pub bytes_kv_values: u64,
    pub bytes_lop_features: u64,
    pub bytes_weights: u64,
    pub bytes_activations: u64,
    pub fetch_transactions: u64,
}

impl TrafficStats {
    pub fn charge(&mut self, stream: Stream, bytes: u64) {
        if bytes == 0 {
            return;
        }
        let slot = match stream {
            Stream::KvKeys => &mut self.bytes_kv_keys,
            Stream::KvValues => &mut self.bytes_kv_values,
            Stream::LopFeatures => &mut self.bytes_lop_features,
            Stream::Weights => &mut self.bytes_weights,
            Stream::Activations => &mut self.bytes_activations,
        };
        *slot += bytes;
        self.fetch_transactions += 1;
    }

    pub fn bytes_kv(&self) -> u64 {
        self.bytes_kv_keys + self.bytes_kv_values
    }

    pub fn total(&self) -> u64 {
        self.bytes_kv() + self.bytes_lop_features + self.bytes_weights + self.bytes_activations
    }

    pub fn merge(&mut self, other: &TrafficStats) {
        self.bytes_kv_keys += other.bytes_kv_keys;
        self.bytes_kv_values += other.bytes_kv_values;
        self.bytes_lop_features += other.bytes_lop_features;
        self.bytes_weights += other.bytes_weights;
        self.bytes_activations += other.bytes_activations;
        self.fetch_transactions += other.fetch_transactions;
    }
}

/// Cycles to move `bytes` over a link of `bytes_per_cycle`.
pub fn transfer_cycles(bytes: u64, bytes_per_cycle: u64) -> u64 {
    bytes.div_ceil(bytes_per_cycle.max(1))
}

#[derive(Debug, Clone, Default)]
struct HeadCache {
    keys: Vec<QuantVector>,
    values: Vec<QuantVector>,
    features: Vec<Vec<LopFeature>>,
}

/// Per-layer, per-head token rows. Rows are immutable once appended.
#[derive(Debug, Clone)]
pub struct KvCache {
    layers: usize,
    heads: usize,
    d_head: usize,
    capacity: usize,
    slots: Vec<HeadCache>,
}

/// Rows returned by a selective fetch.
#[derive(Debug, Clone, PartialEq)]
pub struct FetchedRows {
    pub keys: Vec<QuantVector>,
    pub values: Vec<QuantVector>,
    pub key_bytes: u64,
    pub value_bytes: u64,
}

impl KvCache {
    pub fn new(layers: usize, heads: usize, d_head: usize, capacity: usize) -> Self {
        Self { layers, heads, d_head, capacity, slots: vec![HeadCache::default(); layers * heads] }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn d_head(&self) -> usize {
        self.d_head
    }

    fn slot(&self, layer: usize, head: usize) -> Result<&HeadCache> {
        if layer >= self.layers || head >= self.heads {
            return Err(Error::invalid(format!("no cache slot for layer {layer} head {head}")));
        }
        Ok(&self.slots[layer * self.heads + head])
    }

    /// Tokens currently cached for (layer, head).
    pub fn len(&self, layer: usize, head: usize) -> usize {
        self.slot(layer, head).map_or(0, |s| s.keys.len())
    }

    pub fn is_empty(&self) -> bool {
        self.slots.iter().all(|s| s.keys.is_empty())
    }

    /// Append one token. Its LOP features are derived from the key row in
    /// the same step.
    pub fn append_token(&mut self, layer: usize, head: usize, k: QuantVector, v: QuantVector) -> Result<()> {
        if k.len() != self.d_head || v.len() != self.d_head {
            return Err(Error::invalid(format!(
                "KV rows must have {} elements (got {} / {})",
                self.d_head,
                k.len(),
                v.len()
            )));
        }
        self.slot(layer, head)?;
        let capacity = self.capacity;
        let slot = &mut self.slots[layer * self.heads + head];
        if slot.keys.len() >= capacity {
            return Err(Error::Capacity { what: format!("KV cache layer {layer} head {head}"), capacity });
        }
        slot.features.push(extract_features(&k));
        slot.keys.push(k);
        slot.values.push(v);
        Ok(())
    }

    pub fn features(&self, layer: usize, head: usize) -> Result<&[Vec<LopFeature>]> {
        Ok(&self.slot(layer, head)?.features)
    }

    pub fn key(&self, layer: usize, head: usize, token: usize) -> Result<&QuantVector> {
        self.slot(layer, head)?.keys.get(token).ok_or_else(|| Error::invalid(format!("token {token} not cached")))
    }

    pub fn value(&self, layer: usize, head: usize, token: usize) -> Result<&QuantVector> {
        self.slot(layer, head)?.values.get(token).ok_or_else(|| Error::invalid(format!("token {token} not cached")))
    }

    /// Bytes per stored key (or value) row.
    pub fn row_bytes(&self) -> u64 {
        self.d_head as u64 + SCALE_BYTES
    }

    /// On-chip feature bytes read when every cached token is scored.
    pub fn feature_scan_bytes(&self, layer: usize, head: usize) -> u64 {
        self.len(layer, head) as u64 * feature_row_bytes(self.d_head)
    }

    /// Read the key and value rows of `kept`, charging both KV streams.
    pub fn fetch_selected(
        &self,
        layer: usize,
        head: usize,
        kept: &[usize],
        traffic: &mut TrafficStats,
    ) -> Result<FetchedRows> {
        let slot = self.slot(layer, head)?;
        let m = slot.keys.len();
        if let Some(&bad) = kept.iter().find(|&&t| t >= m) {
            return Err(Error::invalid(format!("token {bad} out of range (M = {m})")));
        }
        let keys = kept.iter().map(|&t| slot.keys[t].clone()).collect();
        let values = kept.iter().map(|&t| slot.values[t].clone()).collect();
        let bytes = kept.len() as u64 * self.row_bytes();
        traffic.charge(Stream::KvKeys, bytes);
        traffic.charge(Stream::KvValues, bytes);
        Ok(FetchedRows { keys, values, key_bytes: bytes, value_bytes: bytes })
    }

    /// Consistency check: every stored feature row matches its key row.
    pub fn check_features(&self) -> Result<()> {
        for (i, s) in self.slots.iter().enumerate() {
            for (t, (k, f)) in s.keys.iter().zip(&s.features).enumerate() {
                if &extract_features(k) != f {
                    return Err(Error::invariant(format!("feature row {t} of slot {i} is stale")));
                }
            }
        }
        Ok(())
    }
}

/// Buffer-bank ports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Port {
    /// TINT side.
    A,
    /// BoothFlex side.
    B,
}

/// Outstanding-tile credits on one port lane.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CreditPool {
    depth: usize,
    outstanding: usize,
    peak: usize,
}

impl CreditPool {
    pub fn new(depth: usize) -> Self {
        assert!(depth > 0, "credit depth must be positive");
        Self { depth, outstanding: 0, peak: 0 }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn outstanding(&self) -> usize {
        self.outstanding
    }

    /// Highest number of simultaneously outstanding credits seen.
    pub fn peak(&self) -> usize {
        self.peak
    }

    /// Take a credit if one is free.
    pub fn try_acquire(&mut self) -> bool {
        if self.outstanding == self.depth {
            return false;
        }
        self.outstanding += 1;
        self.peak = self.peak.max(self.outstanding);
        true
    }

    pub fn release(&mut self) -> Result<()> {
        if self.outstanding == 0 {
            return Err(Error::invariant("credit released without a matching acquire"));
        }
        self.outstanding -= 1;
        Ok(())
    }
}

/// A port lane feeding one core: a credit pool plus the completion times of
/// tiles holding credits. Tiles on a lane complete in issue order.
#[derive(Debug, Clone)]
pub struct PortLane {
    pub port: Port,
    pub bytes_per_cycle: u64,
    credits: CreditPool,
    pending: VecDeque<u64>,
}

impl PortLane {
    pub fn new(port: Port, bytes_per_cycle: u64, credit_depth: usize) -> Self {
        Self { port, bytes_per_cycle, credits: CreditPool::new(credit_depth), pending: VecDeque::new() }
    }

    /// Earliest cycle >= `ready` at which a new tile can take a credit. While
    /// the pool is exhausted the dispatcher waits for the oldest outstanding
    /// tile to complete.
    pub fn acquire(&mut self, ready: u64) -> Result<u64> {
        let mut at = ready;
        // credits whose tiles have already retired by `ready` come back first
        while let Some(&end) = self.pending.front() {
            if end > at {
                break;
            }
            self.pending.pop_front();
            self.credits.release()?;
        }
        while !self.credits.try_acquire() {
            let end = self
                .pending
                .pop_front()
                .ok_or_else(|| Error::invariant("credit pool exhausted with nothing pending"))?;
            self.credits.release()?;
            at = at.max(end);
        }
        Ok(at)
    }

    /// Record when the tile holding the most recent credit completes.
    pub fn complete_at(&mut self, end: u64) -> Result<()> {
        if self.pending.len() >= self.credits.outstanding() {
            return Err(Error::invariant("completion recorded without an acquired credit"));
        }
        if self.pending.back().is_some_and(|&last| last > end) {
            return Err(Error::invariant("lane tiles completed out of order"));
        }
        self.pending.push_back(end);
        Ok(())
    }

    pub fn transfer_cycles(&self, bytes: u64) -> u64 {
        transfer_cycles(bytes, self.bytes_per_cycle)
    }

    pub fn peak_outstanding(&self) -> usize {
        self.credits.peak()
    }

    pub fn depth(&self) -> usize {
        self.credits.depth()
    }
}
