//! Cycle-level scheduling of a decoder layer across three TINT cores, one
//! BoothFlex core, the LOP gate, the shared nonlinear unit and the port-B
//! DMA engine.
//!
//! Work is issued in program order onto in-order units with integer cycle
//! timestamps. With head-level pipelining the attention of head `h` runs on
//! BoothFlex as soon as its Q/K/V are quantized while TINT moves on to head
//! `h + 1`; after attention both core types share the ternary W_O and FFN
//! tiles.

mod sim;
pub mod timeline;
pub mod trace;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lop::SelectorMode;
use crate::model::LayerConfig;

pub use sim::{BatchOutput, RunSummary, Simulator};
pub use timeline::{two_stage_makespan, Timeline};
pub use trace::{EventKind, EventMode, ScheduleTrace, TileEvent, Unit};

/// Where LOP key features live.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureStore {
    #[default]
    OnChip,
    /// Features are streamed from DDR over port B on every gate.
    OffChip,
}

/// The three ablation switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Toggles {
    pub lop: bool,
    pub hlp: bool,
    pub dual_mode: bool,
}

impl Toggles {
    pub const ALL_ON: Toggles = Toggles { lop: true, hlp: true, dual_mode: true };
    pub const ALL_OFF: Toggles = Toggles { lop: false, hlp: false, dual_mode: false };

    /// All eight combinations, all-off first.
    pub fn grid() -> [Toggles; 8] {
        let mut out = [Self::ALL_OFF; 8];
        for (i, t) in out.iter_mut().enumerate() {
            *t = Toggles { lop: i & 4 != 0, hlp: i & 2 != 0, dual_mode: i & 1 != 0 };
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub layer: LayerConfig,
    pub lop: bool,
    pub hlp: bool,
    pub dual_mode: bool,
    pub lop_features: FeatureStore,
    /// Keep every token whose surrogate bucket reaches this score instead of
    /// a fixed K.
    pub lop_threshold: Option<i64>,
    pub tint_cores: usize,
    pub tint_rows: usize,
    pub tint_cols: usize,
    pub boothflex_rows: usize,
    pub boothflex_cols: usize,
    pub tile_setup_cycles: u64,
    pub nlu_cycles_per_element: u64,
    pub barrier_cycles: u64,
    /// Extra LOP gate latency; a gate always occupies at least one cycle.
    pub lop_latency_cycles: u64,
    pub port_a_bytes_per_cycle: u64,
    pub port_b_bytes_per_cycle: u64,
    pub credit_depth: usize,
    /// Prompt tokens per prefill batch.
    pub prefill_batch: usize,
    pub zero_fraction: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            layer: LayerConfig::default(),
            lop: true,
            hlp: true,
            dual_mode: true,
            lop_features: FeatureStore::OnChip,
            lop_threshold: None,
            tint_cores: 3,
            tint_rows: 8,
            tint_cols: 8,
            boothflex_rows: 8,
            boothflex_cols: 8,
            tile_setup_cycles: 0,
            nlu_cycles_per_element: 1,
            barrier_cycles: 1,
            lop_latency_cycles: 0,
            port_a_bytes_per_cycle: 16,
            port_b_bytes_per_cycle: 16,
            credit_depth: 2,
            prefill_batch: 8,
            zero_fraction: 1.0 / 3.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.layer.validate()?;
        let positive = [
            ("tint_cores", self.tint_cores),
            ("tint_rows", self.tint_rows),
            ("tint_cols", self.tint_cols),
            ("boothflex_rows", self.boothflex_rows),
            ("boothflex_cols", self.boothflex_cols),
            ("credit_depth", self.credit_depth),
            ("prefill_batch", self.prefill_batch),
            ("port_a_bytes_per_cycle", self.port_a_bytes_per_cycle as usize),
            ("port_b_bytes_per_cycle", self.port_b_bytes_per_cycle as usize),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("{name} must be at least 1")));
        }
        if self.tint_cores > u8::MAX as usize {
            return Err(Error::invalid("too many TINT cores"));
        }
        if !(0.0..=1.0).contains(&self.zero_fraction) {
            return Err(Error::invalid("zero_fraction must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn toggles(&self) -> Toggles {
        Toggles { lop: self.lop, hlp: self.hlp, dual_mode: self.dual_mode }
    }

    pub fn selector(&self) -> SelectorMode {
        match self.lop_threshold {
            Some(t) => SelectorMode::Threshold(t),
            None => SelectorMode::TopK(self.layer.top_k),
        }
    }
}

/// `cfg` with the ablation switches replaced.
pub fn ablation_toggles(cfg: &SimConfig, t: Toggles) -> SimConfig {
    SimConfig { lop: t.lop, hlp: t.hlp, dual_mode: t.dual_mode, ..cfg.clone() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_covers_all_combinations() {
        let g = Toggles::grid();
        assert_eq!(g[0], Toggles::ALL_OFF);
        assert_eq!(g[7], Toggles::ALL_ON);
        let mut seen = g.to_vec();
        seen.dedup();
        assert_eq!(seen.len(), 8);
    }

    #[test]
    fn config_json_roundtrip_with_defaults() {
        let cfg: SimConfig = serde_json::from_str(r#"{"hlp": false, "layer": {"top_k": 8}}"#).unwrap();
        assert!(!cfg.hlp);
        assert_eq!(cfg.layer.top_k, 8);
        assert_eq!(cfg.layer.d_model, 256);
        let back: SimConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = SimConfig::default();
        cfg.layer.num_heads = 3;
        assert!(cfg.validate().is_err());
        let cfg = SimConfig { credit_depth: 0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn toggles_apply() {
        let cfg = ablation_toggles(&SimConfig::default(), Toggles::ALL_OFF);
        assert_eq!(cfg.toggles(), Toggles::ALL_OFF);
    }
}
