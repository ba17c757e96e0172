//! Workload runs, ablation reports and CSV output.
//!
//! A [`RunReport`] is built from a [`ScheduleTrace`] plus a small config echo,
//! so every reported figure can be recomputed from the emitted JSONL.

use std::fmt::Write as _;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LayerWeights;
use crate::sched::{ablation_toggles, EventKind, RunSummary, ScheduleTrace, SimConfig, Simulator, Toggles, Unit};

pub const CSV_HEADER: &str = "lop,hlp,dual_mode,M,K,cycles_total,cycles_per_token,tint_util,boothflex_util,\
bytes_kv,bytes_features,kv_reduction,mha_speedup,ffn_speedup,overall_speedup";

/// How the KV cache is populated before decode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrefillMode {
    /// Run the prompt through the simulated layer.
    #[default]
    Simulate,
    /// Fill the cache with synthetic rows, untimed; only decode is simulated.
    Warm,
}

/// Workload shape for one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSpec {
    pub seq_len: usize,
    pub decode_steps: usize,
    pub prefill: PrefillMode,
    pub seed: u64,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self { seq_len: 64, decode_steps: 16, prefill: PrefillMode::Simulate, seed: 0 }
    }
}

impl RunSpec {
    /// Defaults for the ablation grid: one decode step at M = seq_len + 1.
    pub fn ablation() -> Self {
        Self { seq_len: 255, decode_steps: 1, prefill: PrefillMode::Warm, seed: 0 }
    }

    pub fn total_tokens(&self) -> usize {
        self.seq_len + self.decode_steps
    }

    pub fn simulated_tokens(&self) -> usize {
        match self.prefill {
            PrefillMode::Simulate => self.total_tokens(),
            PrefillMode::Warm => self.decode_steps,
        }
    }
}

/// Deterministic Gaussian token activations.
pub fn generate_inputs(d_model: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1bad_cafe_f00d);
    (0..count).map(|_| (0..d_model).map(|_| StandardNormal.sample(&mut rng)).collect()).collect()
}

/// Ratios against a baseline report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratios {
    pub kv_reduction: f64,
    pub mha_speedup: f64,
    pub ffn_speedup: f64,
    pub overall_speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub toggles: Toggles,
    /// Cache length seen by the last attention step.
    pub m: usize,
    pub k: usize,
    pub tokens_simulated: usize,
    pub cycles_total: u64,
    pub cycles_per_token: f64,
    pub tint_util: f64,
    pub boothflex_util: f64,
    pub bytes_kv: u64,
    pub bytes_features: u64,
    pub bytes_weights: u64,
    /// Cycles covered by at least one attention event.
    pub mha_cycles: u64,
    /// Cycles covered by at least one FFN event.
    pub ffn_cycles: u64,
    pub ratios: Option<Ratios>,
}

impl RunReport {
    /// Projection of a trace. `tint_cores` is needed for the utilization
    /// denominator since idle cores emit no events.
    pub fn from_trace(
        trace: &ScheduleTrace,
        toggles: Toggles,
        m: usize,
        k: usize,
        tokens_simulated: usize,
        tint_cores: usize,
    ) -> Self {
        let span = trace.makespan;
        let frac = |busy: u64, units: usize| {
            if span == 0 {
                0.0
            } else {
                busy as f64 / (span as f64 * units as f64)
            }
        };
        let tint_busy: u64 = (0..tint_cores).map(|i| trace.busy(Unit::Tint(i as u8))).sum();
        let bytes_weights = [EventKind::QkvProj, EventKind::QkT, EventKind::SV, EventKind::WoProj]
            .into_iter()
            .chain([EventKind::FfnUp, EventKind::FfnGate, EventKind::FfnDown])
            .map(|kind| trace.bytes_of(kind))
            .sum();
        Self {
            toggles,
            m,
            k,
            tokens_simulated,
            cycles_total: span,
            cycles_per_token: if tokens_simulated == 0 { 0.0 } else { span as f64 / tokens_simulated as f64 },
            tint_util: frac(tint_busy, tint_cores),
            boothflex_util: frac(trace.busy(Unit::BoothFlex), 1),
            bytes_kv: trace.bytes_of(EventKind::KvFetch),
            bytes_features: trace.bytes_of(EventKind::LopGate),
            bytes_weights,
            mha_cycles: trace.covered_cycles(|e| e.kind.is_mha()),
            ffn_cycles: trace.covered_cycles(|e| e.kind.is_ffn()),
            ratios: None,
        }
    }

    pub fn ratios_against(&self, baseline: &RunReport) -> Ratios {
        let ratio = |b: u64, x: u64| if x == 0 { f64::INFINITY } else { b as f64 / x as f64 };
        Ratios {
            kv_reduction: ratio(baseline.bytes_kv, self.bytes_kv),
            mha_speedup: ratio(baseline.mha_cycles, self.mha_cycles),
            ffn_speedup: ratio(baseline.ffn_cycles, self.ffn_cycles),
            overall_speedup: ratio(baseline.cycles_total, self.cycles_total),
        }
    }

    pub fn csv_row(&self) -> String {
        let r = self.ratios.unwrap_or(Ratios {
            kv_reduction: f64::NAN,
            mha_speedup: f64::NAN,
            ffn_speedup: f64::NAN,
            overall_speedup: f64::NAN,
        });
        let on = |b: bool| if b { "on" } else { "off" };
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            on(self.toggles.lop),
            on(self.toggles.hlp),
            on(self.toggles.dual_mode),
            self.m,
            self.k,
            self.cycles_total,
            fmt_g(self.cycles_per_token),
            fmt_g(self.tint_util),
            fmt_g(self.boothflex_util),
            self.bytes_kv,
            self.bytes_features,
            fmt_g(r.kv_reduction),
            fmt_g(r.mha_speedup),
            fmt_g(r.ffn_speedup),
            fmt_g(r.overall_speedup),
        )
    }
}

/// Fill in every report's ratios against the all-off row, which must be
/// present in the same set.
pub fn attach_ratios(reports: &mut [RunReport]) -> Result<()> {
    if reports.is_empty() {
        return Ok(());
    }
    let baseline = reports
        .iter()
        .find(|r| r.toggles == Toggles::ALL_OFF)
        .cloned()
        .ok_or_else(|| Error::invalid("ratios need the all-off baseline in the same run set"))?;
    for r in reports.iter_mut() {
        r.ratios = Some(r.ratios_against(&baseline));
    }
    Ok(())
}

/// Six significant digits, `%g` style.
pub fn fmt_g(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let m = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{m}e{sign}{:02}", exp.abs());
    }
    strip_zeros(&format!("{x:.*}", (5 - exp) as usize)).to_string()
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn to_csv(reports: &[RunReport]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in reports {
        writeln!(out, "{}", r.csv_row()).expect("string write");
    }
    out
}

pub fn emit_csv<W: Write>(reports: &[RunReport], mut w: W) -> Result<()> {
    w.write_all(to_csv(reports).as_bytes())?;
    Ok(())
}

/// One finished simulation.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub config: SimConfig,
    pub spec: RunSpec,
    pub report: RunReport,
    pub summary: RunSummary,
    /// Layer output of the last simulated token.
    pub last_output: Vec<f64>,
}

/// Simulate `spec` on one configuration.
pub fn run_workload(cfg: &SimConfig, weights: &LayerWeights, spec: &RunSpec) -> Result<RunOutcome> {
    if spec.simulated_tokens() == 0 {
        return Err(Error::invalid("nothing to simulate: seq_len and decode_steps are both zero"));
    }
    if spec.total_tokens() > cfg.layer.seq_capacity {
        return Err(Error::invalid(format!(
            "{} tokens exceed seq_capacity {}",
            spec.total_tokens(),
            cfg.layer.seq_capacity
        )));
    }
    let mut sim = Simulator::new(cfg.clone(), weights.clone())?;
    let inputs = generate_inputs(cfg.layer.d_model, spec.total_tokens(), spec.seed);
    let (prompt, rest) = inputs.split_at(spec.seq_len);
    let mut last_output = Vec::new();
    match spec.prefill {
        PrefillMode::Warm => sim.warm_cache(spec.seq_len, spec.seed)?,
        PrefillMode::Simulate if !prompt.is_empty() => {
            if let Some(b) = sim.prefill(prompt)?.pop() {
                last_output = b.outputs.last().cloned().unwrap_or_default();
            }
        }
        PrefillMode::Simulate => {}
    }
    for x in rest {
        last_output = sim.decode_step(x)?.outputs.pop().unwrap_or_default();
    }
    let m = sim.cached_tokens();
    let summary = sim.finish()?;
    let report = RunReport::from_trace(
        &summary.trace,
        cfg.toggles(),
        m,
        cfg.layer.top_k,
        spec.simulated_tokens(),
        cfg.tint_cores,
    );
    Ok(RunOutcome { config: cfg.clone(), spec: *spec, report, summary, last_output })
}

/// The eight toggle combinations of `cfg`, all-off first.
pub fn ablation_configs(cfg: &SimConfig) -> Vec<SimConfig> {
    Toggles::grid().iter().map(|&t| ablation_toggles(cfg, t)).collect()
}

/// Sequential ablation; the CLI runs the grid in parallel with the same
/// building blocks.
pub fn ablate(cfg: &SimConfig, weights: &LayerWeights, spec: &RunSpec) -> Result<Vec<RunOutcome>> {
    let mut runs = ablation_configs(cfg).iter().map(|c| run_workload(c, weights, spec)).collect::<Result<Vec<_>>>()?;
    finalize(&mut runs)?;
    Ok(runs)
}

/// Attach baseline ratios to a set of finished runs.
pub fn finalize(runs: &mut [RunOutcome]) -> Result<()> {
    let mut reports: Vec<RunReport> = runs.iter().map(|r| r.report.clone()).collect();
    attach_ratios(&mut reports)?;
    for (run, rep) in runs.iter_mut().zip(reports) {
        run.report = rep;
    }
    Ok(())
}
