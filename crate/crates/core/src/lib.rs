//! Functional and cycle-level model of a mixed-precision edge accelerator
//! for ternary-weight transformer inference.
//!
//! * [`arith`]: ternary codec, select-negate unit, radix-4 Booth multiply
//! * [`tint`], [`boothflex`]: the two compute cores
//! * [`lop`]: leading-one surrogate scoring and comparison-free top-K
//! * [`quant`]: absmax quantization barrier and streaming reductions
//! * [`memsys`]: KV cache, feature store, credits, traffic counters
//! * [`sched`]: head-level pipelined scheduler and traces
//! * [`model`]: the toy decoder-layer workload and its float reference
//! * [`report`]: run reports, ablation grids and CSV output

pub mod arith;
pub mod boothflex;
pub mod error;
pub mod lop;
pub mod matrix;
pub mod memsys;
pub mod model;
pub mod quant;
pub mod report;
pub mod sched;
pub mod tint;
pub mod verify;

pub use arith::{BoothMode, Ternary, TernaryTensor};
pub use error::{Error, Result};
pub use lop::{LopFeature, TopKSelection};
pub use memsys::TrafficStats;
pub use model::{LayerConfig, LayerWeights};
pub use quant::QuantVector;
pub use sched::{ScheduleTrace, SimConfig, Simulator, TileEvent, Toggles};
