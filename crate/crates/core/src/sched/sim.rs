use std::ops::Range;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::timeline::Timeline;
use super::trace::{EventKind, EventMode, ScheduleTrace, TileEvent, Unit};
use super::{FeatureStore, SimConfig};
use crate::arith::{BoothMode, TernaryTensor};
use crate::boothflex::{BoothFlexCore, BoothRhs};
use crate::error::{Error, Result};
use crate::lop::{feature_row_bytes, lop_gate};
use crate::matrix::{output_tiles, AccMatrix, I8Matrix, TileRect};
use crate::memsys::{transfer_cycles, KvCache, Port, PortLane, Stream, TrafficStats, SCALE_BYTES};
use crate::model::{silu, LayerWeights};
use crate::quant::{
    absmax_quantize, requantize_accumulators, streaming_rms_norm, streaming_softmax, QuantVector, RMS_EPS,
};
use crate::tint::TintCore;

/// Result of one decode step or prefill chunk.
#[derive(Debug, Clone)]
pub struct BatchOutput {
    /// Layer output per token.
    pub outputs: Vec<Vec<f64>>,
    /// `kept[token][head]`: cache rows that took part in exact attention.
    pub kept: Vec<Vec<Vec<usize>>>,
    /// Indices of this batch's events in the simulator trace.
    pub events: Range<usize>,
    pub traffic: TrafficStats,
    pub start: u64,
    pub end: u64,
}

impl BatchOutput {
    pub fn cycles(&self) -> u64 {
        self.end - self.start
    }
}

/// End-of-run totals.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub trace: ScheduleTrace,
    pub traffic: TrafficStats,
    pub tokens: usize,
    pub tint_busy: Vec<u64>,
    pub tint_idle: Vec<u64>,
    pub boothflex_busy: u64,
    pub boothflex_idle: u64,
    pub boothflex_mode_switches: u64,
    /// Highest number of credits simultaneously held on any lane.
    pub peak_credits: usize,
}

impl RunSummary {
    pub fn tint_utilization(&self) -> f64 {
        let busy: u64 = self.tint_busy.iter().sum();
        let total: u64 = busy + self.tint_idle.iter().sum::<u64>();
        if total == 0 {
            0.0
        } else {
            busy as f64 / total as f64
        }
    }

    pub fn boothflex_utilization(&self) -> f64 {
        let total = self.boothflex_busy + self.boothflex_idle;
        if total == 0 {
            0.0
        } else {
            self.boothflex_busy as f64 / total as f64
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Proj {
    Q,
    K,
    V,
}

/// Simulates one decoder layer on the accelerator, batch by batch.
pub struct Simulator {
    cfg: SimConfig,
    weights: Arc<LayerWeights>,
    cache: KvCache,
    tint: Vec<TintCore>,
    boothflex: BoothFlexCore,
    lanes_a: Vec<PortLane>,
    lane_b: PortLane,
    timeline: Timeline,
    events: Vec<TileEvent>,
    traffic: TrafficStats,
    clock: u64,
    batch_start: u64,
    batches: u32,
    tokens: usize,
}

struct HeadQkv {
    q: Vec<QuantVector>,
    ready: u64,
}

impl Simulator {
    pub fn new(cfg: SimConfig, weights: LayerWeights) -> Result<Self> {
        cfg.validate()?;
        weights.check_shapes(&cfg.layer)?;
        let l = &cfg.layer;
        let cache = KvCache::new(1, l.num_heads, l.d_head, l.seq_capacity);
        let tint =
            (0..cfg.tint_cores).map(|_| TintCore::new(cfg.tint_rows, cfg.tint_cols, cfg.tile_setup_cycles)).collect();
        let boothflex = BoothFlexCore::new(cfg.boothflex_rows, cfg.boothflex_cols, cfg.tile_setup_cycles);
        let lanes_a =
            (0..cfg.tint_cores).map(|_| PortLane::new(Port::A, cfg.port_a_bytes_per_cycle, cfg.credit_depth)).collect();
        let lane_b = PortLane::new(Port::B, cfg.port_b_bytes_per_cycle, cfg.credit_depth);
        Ok(Self {
            cfg,
            weights: Arc::new(weights),
            cache,
            tint,
            boothflex,
            lanes_a,
            lane_b,
            timeline: Timeline::default(),
            events: Vec::new(),
            traffic: TrafficStats::default(),
            clock: 0,
            batch_start: 0,
            batches: 0,
            tokens: 0,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn cache(&self) -> &KvCache {
        &self.cache
    }

    pub fn cached_tokens(&self) -> usize {
        self.cache.len(0, 0)
    }

    pub fn events(&self) -> &[TileEvent] {
        &self.events
    }

    pub fn traffic(&self) -> &TrafficStats {
        &self.traffic
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn tokens_simulated(&self) -> usize {
        self.tokens
    }

    /// Fill every head's cache with `m` synthetic rows without simulating
    /// them. Used to study a decode step at a given cache length.
    pub fn warm_cache(&mut self, m: usize, seed: u64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dh = self.cfg.layer.d_head;
        for h in 0..self.cfg.layer.num_heads {
            for _ in 0..m {
                let k: Vec<f64> = (0..dh).map(|_| StandardNormal.sample(&mut rng)).collect();
                let v: Vec<f64> = (0..dh).map(|_| StandardNormal.sample(&mut rng)).collect();
                self.cache.append_token(0, h, absmax_quantize(&k)?, absmax_quantize(&v)?)?;
            }
        }
        Ok(())
    }

    pub fn decode_step(&mut self, x: &[f64]) -> Result<BatchOutput> {
        self.process_batch(&[x.to_vec()])
    }

    /// Run a prompt in chunks of `prefill_batch` tokens with causal masking.
    pub fn prefill(&mut self, xs: &[Vec<f64>]) -> Result<Vec<BatchOutput>> {
        if xs.is_empty() {
            return Err(Error::invalid("prefill needs at least one token"));
        }
        xs.chunks(self.cfg.prefill_batch).map(|c| self.process_batch(c)).collect()
    }

    /// Close the run: settle per-core idle time against the makespan.
    pub fn finish(mut self) -> Result<RunSummary> {
        let trace = ScheduleTrace::new(std::mem::take(&mut self.events));
        let elapsed = trace.makespan;
        for (i, core) in self.tint.iter_mut().enumerate() {
            core.account_elapsed(elapsed)?;
            let from_trace = trace.busy(Unit::Tint(i as u8));
            if from_trace != core.busy_cycles {
                return Err(Error::invariant(format!(
                    "TINT-{i} busy {} disagrees with trace {from_trace}",
                    core.busy_cycles
                )));
            }
        }
        self.boothflex.account_elapsed(elapsed)?;
        if trace.busy(Unit::BoothFlex) != self.boothflex.busy_cycles {
            return Err(Error::invariant("BoothFlex busy counter disagrees with trace"));
        }
        if trace.total_bytes() != self.traffic.total() {
            return Err(Error::invariant(format!(
                "traffic counters ({}) disagree with trace payloads ({})",
                self.traffic.total(),
                trace.total_bytes()
            )));
        }
        let peak_credits =
            self.lanes_a.iter().chain(std::iter::once(&self.lane_b)).map(PortLane::peak_outstanding).max().unwrap_or(0);
        Ok(RunSummary {
            trace,
            traffic: self.traffic,
            tokens: self.tokens,
            tint_busy: self.tint.iter().map(|c| c.busy_cycles).collect(),
            tint_idle: self.tint.iter().map(|c| c.idle_cycles).collect(),
            boothflex_busy: self.boothflex.busy_cycles,
            boothflex_idle: self.boothflex.idle_cycles,
            boothflex_mode_switches: self.boothflex.mode_switches,
            peak_credits,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn push_event(
        &mut self,
        unit: Unit,
        kind: EventKind,
        head: Option<usize>,
        ready: u64,
        duration: u64,
        bytes: u64,
        mode: EventMode,
    ) -> u64 {
        let (start, end) = self.timeline.reserve(unit, ready, duration);
        self.events.push(TileEvent {
            cycle_start: start,
            cycle_end: end,
            core: unit,
            kind,
            head: head.map(|h| h as u32),
            bytes,
            mode,
            step: self.batches,
        });
        end
    }

    /// Schedule a compute tile: take a lane credit, stage its weights over
    /// the lane, then run once operands are ready and the core is free.
    #[allow(clippy::too_many_arguments)]
    fn schedule_tile(
        &mut self,
        unit: Unit,
        kind: EventKind,
        head: Option<usize>,
        ready: u64,
        cycles: u64,
        weight_bytes: u64,
        mode: BoothMode,
    ) -> Result<u64> {
        let lane = match unit {
            Unit::Tint(i) => &mut self.lanes_a[i as usize],
            Unit::BoothFlex => &mut self.lane_b,
            other => return Err(Error::invariant(format!("{other} does not execute tiles"))),
        };
        let dispatch = lane.acquire(self.batch_start)?;
        let staged = dispatch + lane.transfer_cycles(weight_bytes);
        let (start, end) = self.timeline.reserve(unit, ready.max(staged), cycles);
        let lane = match unit {
            Unit::Tint(i) => &mut self.lanes_a[i as usize],
            _ => &mut self.lane_b,
        };
        lane.complete_at(end)?;
        self.traffic.charge(Stream::Weights, weight_bytes);
        self.events.push(TileEvent {
            cycle_start: start,
            cycle_end: end,
            core: unit,
            kind,
            head: head.map(|h| h as u32),
            bytes: weight_bytes,
            mode: mode.into(),
            step: self.batches,
        });
        Ok(end)
    }

    fn nlu(&mut self, kind: EventKind, head: Option<usize>, ready: u64, duration: u64, bytes: u64) -> u64 {
        self.push_event(Unit::Nonlinear, kind, head, ready, duration, bytes, EventMode::None)
    }

    fn process_batch(&mut self, xs: &[Vec<f64>]) -> Result<BatchOutput> {
        let l = self.cfg.layer.clone();
        let n = xs.len();
        if let Some(x) = xs.iter().find(|x| x.len() != l.d_model) {
            return Err(Error::invalid(format!("token width {} != d_model {}", x.len(), l.d_model)));
        }
        let base = self.cached_tokens();
        if base + n > self.cache.capacity() {
            return Err(Error::Capacity { what: "KV cache".into(), capacity: self.cache.capacity() });
        }
        let w = Arc::clone(&self.weights);
        let t0 = self.clock;
        self.batch_start = t0;
        let ev0 = self.events.len();
        let traffic0 = self.traffic.clone();
        let per_elem = self.cfg.nlu_cycles_per_element;
        let barrier = self.cfg.barrier_cycles;

        // attention input: RMSNorm then the absmax barrier, one vector per token
        let mut xq = Vec::with_capacity(n);
        for x in xs {
            let xn = streaming_rms_norm(x.iter().copied(), &w.attn_norm, RMS_EPS)?;
            xq.push(absmax_quantize(&xn)?);
        }
        let norm_end = self.nlu(EventKind::Rmsnorm, None, t0, n as u64 * l.d_model as u64 * per_elem, 0);
        let xq_ready = self.nlu(EventKind::QuantBarrier, None, norm_end, n as u64 * barrier, 0);
        let lhs = I8Matrix::from_rows(&xq)?;

        // multi-head attention
        self.boothflex.set_mode(BoothMode::Int8)?;
        let mut attn = vec![vec![0.0; l.d_model]; n];
        let mut kept = vec![vec![Vec::new(); l.num_heads]; n];
        let mut mha_end = xq_ready;
        if self.cfg.hlp {
            for h in 0..l.num_heads {
                let qkv = self.project_head(h, &lhs, &xq, &w, xq_ready)?;
                let end = self.attend_head(h, base, &qkv.q, qkv.ready, &mut attn, &mut kept)?;
                mha_end = mha_end.max(end);
            }
        } else {
            let heads =
                (0..l.num_heads).map(|h| self.project_head(h, &lhs, &xq, &w, xq_ready)).collect::<Result<Vec<_>>>()?;
            let all_ready = heads.iter().map(|q| q.ready).max().unwrap_or(xq_ready);
            for (h, qkv) in heads.iter().enumerate() {
                let end = self.attend_head(h, base, &qkv.q, all_ready, &mut attn, &mut kept)?;
                mha_end = mha_end.max(end);
            }
        }

        // W_O on the cooperative pool, residual in the real domain
        let attn_q = attn.iter().map(|a| absmax_quantize(a)).collect::<Result<Vec<_>>>()?;
        let attn_ready = self.nlu(EventKind::QuantBarrier, None, mha_end, n as u64 * barrier, 0);
        if self.cfg.dual_mode {
            self.boothflex.set_mode(BoothMode::Ternary)?;
        }
        let (wo_acc, wo_end) =
            self.cooperative_gemm(&I8Matrix::from_rows(&attn_q)?, &w.wo, EventKind::WoProj, attn_ready)?;
        let h1: Vec<Vec<f64>> = (0..n)
            .map(|r| {
                let s = attn_q[r].scale * w.wo.scale();
                xs[r].iter().zip(wo_acc.row(r)).map(|(x, &a)| x + a as f64 * s).collect()
            })
            .collect();

        // gated FFN
        let mut hq = Vec::with_capacity(n);
        for h in &h1 {
            let hn = streaming_rms_norm(h.iter().copied(), &w.ffn_norm, RMS_EPS)?;
            hq.push(absmax_quantize(&hn)?);
        }
        let norm2_end = self.nlu(EventKind::Rmsnorm, None, wo_end, n as u64 * l.d_model as u64 * per_elem, 0);
        let hq_ready = self.nlu(EventKind::QuantBarrier, None, norm2_end, n as u64 * barrier, 0);
        let hq_mat = I8Matrix::from_rows(&hq)?;
        let (up, up_end) = self.cooperative_gemm(&hq_mat, &w.w_up, EventKind::FfnUp, hq_ready)?;
        let (gate, gate_end) = self.cooperative_gemm(&hq_mat, &w.w_gate, EventKind::FfnGate, hq_ready)?;
        let mid_q = (0..n)
            .map(|r| {
                let su = hq[r].scale * w.w_up.scale();
                let sg = hq[r].scale * w.w_gate.scale();
                let mid: Vec<f64> =
                    up.row(r).iter().zip(gate.row(r)).map(|(&u, &g)| u as f64 * su * silu(g as f64 * sg)).collect();
                absmax_quantize(&mid)
            })
            .collect::<Result<Vec<_>>>()?;
        let mid_ready = self.nlu(EventKind::QuantBarrier, None, up_end.max(gate_end), n as u64 * barrier, 0);
        let (down, _) =
            self.cooperative_gemm(&I8Matrix::from_rows(&mid_q)?, &w.w_down, EventKind::FfnDown, mid_ready)?;
        let outputs = (0..n)
            .map(|r| {
                let s = mid_q[r].scale * w.w_down.scale();
                h1[r].iter().zip(down.row(r)).map(|(h, &a)| h + a as f64 * s).collect()
            })
            .collect();

        let end = self.timeline.horizon().max(t0);
        if end <= t0 {
            return Err(Error::invariant("simulated time did not advance"));
        }
        self.clock = end;
        self.batches += 1;
        self.tokens += n;
        let mut traffic = self.traffic.clone();
        traffic.bytes_kv_keys -= traffic0.bytes_kv_keys;
        traffic.bytes_kv_values -= traffic0.bytes_kv_values;
        traffic.bytes_lop_features -= traffic0.bytes_lop_features;
        traffic.bytes_weights -= traffic0.bytes_weights;
        traffic.bytes_activations -= traffic0.bytes_activations;
        traffic.fetch_transactions -= traffic0.fetch_transactions;
        Ok(BatchOutput { outputs, kept, events: ev0..self.events.len(), traffic, start: t0, end })
    }

    /// Q/K/V for one head, one projection per TINT core, followed by the
    /// per-vector requantization barrier and the KV-cache append.
    fn project_head(
        &mut self,
        h: usize,
        lhs: &I8Matrix,
        xq: &[QuantVector],
        w: &LayerWeights,
        ready: u64,
    ) -> Result<HeadQkv> {
        let l = &self.cfg.layer;
        let (n, dh) = (lhs.rows(), l.d_head);
        let mut accs = Vec::with_capacity(3);
        let mut proj_end = ready;
        for (p, proj) in [Proj::Q, Proj::K, Proj::V].into_iter().enumerate() {
            let weights = match proj {
                Proj::Q => &w.wq,
                Proj::K => &w.wk,
                Proj::V => &w.wv,
            };
            let core = p % self.tint.len();
            let mut acc = AccMatrix::zeros(n, dh);
            for rect in output_tiles(n, dh, self.cfg.tint_rows, self.cfg.tint_cols) {
                let global = TileRect { col0: rect.col0 + h * dh, ..rect };
                let tile = self.tint[core].run_tile(lhs, weights, global)?;
                let bytes = TernaryTensor::packed_bytes(lhs.cols(), rect.cols);
                let end = self.schedule_tile(
                    Unit::Tint(core as u8),
                    EventKind::QkvProj,
                    Some(h),
                    ready,
                    tile.cycles,
                    bytes,
                    BoothMode::Ternary,
                )?;
                proj_end = proj_end.max(end);
                let local = crate::matrix::TileOutput { rect, ..tile };
                local.scatter_into(&mut acc);
            }
            accs.push((acc, weights.scale()));
        }
        let requant = |(acc, ws): &(AccMatrix, f64)| -> Result<Vec<QuantVector>> {
            (0..n).map(|r| requantize_accumulators(acc.row(r), xq[r].scale * ws)).collect()
        };
        let q = requant(&accs[0])?;
        let k = requant(&accs[1])?;
        let v = requant(&accs[2])?;

        // without head-level pipelining Q/K/V round-trip through the buffer
        let spill = if self.cfg.hlp { 0 } else { 2 * 3 * n as u64 * (dh as u64 + SCALE_BYTES) };
        self.traffic.charge(Stream::Activations, spill);
        let barrier = 3 * n as u64 * self.cfg.barrier_cycles;
        let ready = self.nlu(EventKind::QuantBarrier, Some(h), proj_end, barrier, spill);
        for (kr, vr) in k.into_iter().zip(v) {
            self.cache.append_token(0, h, kr, vr)?;
        }
        Ok(HeadQkv { q, ready })
    }

    /// Exact attention for every token of the batch in head `h`, restricted
    /// to the LOP-selected rows when the gate is on.
    fn attend_head(
        &mut self,
        h: usize,
        base: usize,
        q_rows: &[QuantVector],
        ready: u64,
        attn: &mut [Vec<f64>],
        kept_out: &mut [Vec<Vec<usize>>],
    ) -> Result<u64> {
        let l = self.cfg.layer.clone();
        let dh = l.d_head;
        let inv_sqrt = 1.0 / (dh as f64).sqrt();
        let per_elem = self.cfg.nlu_cycles_per_element;
        let mut head_end = ready;
        for (r, q) in q_rows.iter().enumerate() {
            let m = base + r + 1;
            let (mut kept, gate_end) = if self.cfg.lop {
                let sel = lop_gate(q, &self.cache.features(0, h)?[..m], self.cfg.selector(), l.buckets)?;
                let bytes = m as u64 * feature_row_bytes(dh);
                self.traffic.charge(Stream::LopFeatures, bytes);
                let fetch = match self.cfg.lop_features {
                    FeatureStore::OnChip => 0,
                    FeatureStore::OffChip => transfer_cycles(bytes, self.cfg.port_b_bytes_per_cycle),
                };
                let dur = self.cfg.lop_latency_cycles + fetch;
                let end = self.push_event(Unit::Lop, EventKind::LopGate, Some(h), ready, dur, bytes, EventMode::None);
                (sel.kept, end)
            } else {
                ((0..m).collect(), ready)
            };
            kept.sort_unstable();
            if kept.is_empty() {
                // threshold mode can reject everything; attention output is zero
                kept_out[r][h] = kept;
                continue;
            }

            let rows = self.cache.fetch_selected(0, h, &kept, &mut self.traffic)?;
            let bw = self.cfg.port_b_bytes_per_cycle;
            let keys_end = self.push_event(
                Unit::DmaB,
                EventKind::KvFetch,
                Some(h),
                gate_end,
                transfer_cycles(rows.key_bytes, bw),
                rows.key_bytes,
                EventMode::None,
            );
            let values_end = self.push_event(
                Unit::DmaB,
                EventKind::KvFetch,
                Some(h),
                gate_end,
                transfer_cycles(rows.value_bytes, bw),
                rows.value_bytes,
                EventMode::None,
            );

            // scores = q K_C^T on the Booth array
            let c = kept.len();
            let q_mat = I8Matrix::from_rows(std::slice::from_ref(q))?;
            let k_t = I8Matrix::from_columns(&rows.keys)?;
            let mut scores_acc = vec![0i32; c];
            let mut qk_end = keys_end;
            for rect in output_tiles(1, c, self.cfg.boothflex_rows, self.cfg.boothflex_cols) {
                let tile = self.boothflex.run_tile(&q_mat, BoothRhs::Int8(&k_t), rect)?;
                let end = self.schedule_tile(
                    Unit::BoothFlex,
                    EventKind::QkT,
                    Some(h),
                    ready.max(keys_end),
                    tile.cycles,
                    0,
                    BoothMode::Int8,
                )?;
                qk_end = qk_end.max(end);
                scores_acc[rect.col0..rect.col0 + rect.cols].copy_from_slice(&tile.acc);
            }
            let scores = scores_acc.iter().zip(&rows.keys).map(|(&a, k)| a as f64 * q.scale * k.scale * inv_sqrt);
            let probs = streaming_softmax(scores)?;
            let sm_end = self.nlu(EventKind::Softmax, Some(h), qk_end, c as u64 * per_elem, 0);

            // fold each value row's scale into its probability before the barrier
            let weighted: Vec<f64> = probs.iter().zip(&rows.values).map(|(p, v)| p * v.scale).collect();
            let s = absmax_quantize(&weighted)?;
            let s_ready = self.nlu(EventKind::QuantBarrier, Some(h), sm_end, self.cfg.barrier_cycles, 0);

            let s_mat = I8Matrix::from_rows(std::slice::from_ref(&s))?;
            let v_mat = I8Matrix::from_rows(&rows.values)?;
            let out = &mut attn[r][h * dh..(h + 1) * dh];
            for rect in output_tiles(1, dh, self.cfg.boothflex_rows, self.cfg.boothflex_cols) {
                let tile = self.boothflex.run_tile(&s_mat, BoothRhs::Int8(&v_mat), rect)?;
                let end = self.schedule_tile(
                    Unit::BoothFlex,
                    EventKind::SV,
                    Some(h),
                    s_ready.max(values_end),
                    tile.cycles,
                    0,
                    BoothMode::Int8,
                )?;
                head_end = head_end.max(end);
                for (o, &a) in out[rect.col0..rect.col0 + rect.cols].iter_mut().zip(&tile.acc) {
                    *o = a as f64 * s.scale;
                }
            }
            kept_out[r][h] = kept;
        }
        Ok(head_end)
    }

    /// Ternary GEMM whose output tiles go to whichever core would finish
    /// them first: the TINT cores and, in dual mode, BoothFlex.
    fn cooperative_gemm(
        &mut self,
        lhs: &I8Matrix,
        weights: &TernaryTensor,
        kind: EventKind,
        ready: u64,
    ) -> Result<(AccMatrix, u64)> {
        let (n, m, d) = (lhs.rows(), weights.cols(), lhs.cols());
        let use_bf = self.cfg.dual_mode;
        let (tr, tc) = if use_bf {
            (self.cfg.tint_rows.min(self.cfg.boothflex_rows), self.cfg.tint_cols.min(self.cfg.boothflex_cols))
        } else {
            (self.cfg.tint_rows, self.cfg.tint_cols)
        };
        let mut acc = AccMatrix::zeros(n, m);
        let mut end_all = ready;
        for rect in output_tiles(n, m, tr, tc) {
            let mut best: Option<(u64, Unit)> = None;
            for (i, core) in self.tint.iter().enumerate() {
                let unit = Unit::Tint(i as u8);
                let fin = self.timeline.free_at(unit).max(ready) + core.tile_cycles(d);
                if best.is_none_or(|(b, _)| fin < b) {
                    best = Some((fin, unit));
                }
            }
            if use_bf {
                let fin = self.timeline.free_at(Unit::BoothFlex).max(ready)
                    + self.boothflex.tile_cycles(d, BoothMode::Ternary);
                if best.is_none_or(|(b, _)| fin < b) {
                    best = Some((fin, Unit::BoothFlex));
                }
            }
            let unit = best.expect("at least one TINT core").1;
            let tile = match unit {
                Unit::Tint(i) => self.tint[i as usize].run_tile(lhs, weights, rect)?,
                _ => self.boothflex.run_tile(lhs, BoothRhs::Ternary(weights), rect)?,
            };
            let bytes = TernaryTensor::packed_bytes(d, rect.cols);
            let end = self.schedule_tile(unit, kind, None, ready, tile.cycles, bytes, BoothMode::Ternary)?;
            end_all = end_all.max(end);
            tile.scatter_into(&mut acc);
        }
        Ok((acc, end_all))
    }
}
