//! Runtime invariant suite behind `ternsim verify`.
//!
//! Each check compares a module against a direct reference computation or
//! asserts a structural property of a simulated run. Checks never panic;
//! failures come back as data so the CLI can report all of them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arith::{booth_multiply, sel, BoothMode, Ternary, TernaryTensor};
use crate::boothflex::{BoothFlexCore, BoothRhs};
use crate::error::{Error, Result};
use crate::lop::{select_top_k, Bucketizer, ScoreRange, SurrogateScore};
use crate::matrix::I8Matrix;
use crate::model::generate_weights;
use crate::quant::{absmax_quantize, streaming_rms_norm, streaming_softmax, QMAX};
use crate::report::{ablation_configs, generate_inputs, run_workload, PrefillMode, RunSpec};
use crate::sched::{SimConfig, Simulator};
use crate::tint::TintCore;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type CheckFn = fn(&SimConfig, u64) -> Result<String>;

const CHECKS: &[(&str, CheckFn)] = &[
    ("booth-int8-exhaustive", booth_exhaustive),
    ("ternary-select", ternary_select),
    ("tint-gemm-oracle", tint_oracle),
    ("boothflex-gemm-oracle", boothflex_oracle),
    ("absmax-roundtrip", absmax_roundtrip),
    ("streaming-reductions", streaming_reductions),
    ("topk-sort-oracle", topk_oracle),
    ("schedule-invariants", schedule_invariants),
    ("causality", causality),
    ("determinism", determinism),
];

pub fn check_names() -> Vec<&'static str> {
    CHECKS.iter().map(|(n, _)| *n).collect()
}

/// Run every check against `cfg`'s layer shape.
pub fn run_suite(cfg: &SimConfig, seed: u64) -> Vec<Check> {
    CHECKS
        .iter()
        .map(|(name, f)| match f(cfg, seed) {
            Ok(detail) => Check { name, passed: true, detail },
            Err(e) => Check { name, passed: false, detail: e.to_string() },
        })
        .collect()
}

fn fail(msg: String) -> Error {
    Error::invariant(msg)
}

fn booth_exhaustive(_: &SimConfig, _: u64) -> Result<String> {
    for a in i8::MIN..=i8::MAX {
        for y in i8::MIN..=i8::MAX {
            let p = booth_multiply(a, y as i32, BoothMode::Int8)?;
            if p.product != a as i32 * y as i32 || p.cycles != 5 {
                return Err(fail(format!("{a} * {y} gave {p:?}")));
            }
        }
    }
    Ok("65536 pairs".into())
}

fn ternary_select(_: &SimConfig, _: u64) -> Result<String> {
    for a in i8::MIN..=i8::MAX {
        for w in [Ternary::Neg, Ternary::Zero, Ternary::Pos] {
            let want = a as i32 * w.value() as i32;
            let p = booth_multiply(a, w.value() as i32, BoothMode::Ternary)?;
            if sel(w, a) as i32 != want || p.product != want || p.cycles != 1 {
                return Err(fail(format!("{a} * {w:?}")));
            }
        }
    }
    Ok("768 pairs".into())
}

fn random_i8(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Result<I8Matrix> {
    I8Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-127..=127)).collect())
}

fn random_ternary(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Result<TernaryTensor> {
    TernaryTensor::pack(rows, cols, &(0..rows * cols).map(|_| rng.gen_range(-1..=1)).collect::<Vec<i8>>(), 1.0)
}

fn naive(lhs: &I8Matrix, rhs: impl Fn(usize, usize) -> i32, m: usize) -> Vec<i32> {
    let mut out = vec![0; lhs.rows() * m];
    for i in 0..lhs.rows() {
        for j in 0..m {
            out[i * m + j] = (0..lhs.cols()).map(|k| lhs.get(i, k) as i32 * rhs(k, j)).sum();
        }
    }
    out
}

fn tint_oracle(cfg: &SimConfig, seed: u64) -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
    for _ in 0..200 {
        let (n, d, m) = (rng.gen_range(1..=24), rng.gen_range(1..=40), rng.gen_range(1..=24));
        let lhs = random_i8(&mut rng, n, d)?;
        let w = random_ternary(&mut rng, d, m)?;
        let mut core = TintCore::new(cfg.tint_rows, cfg.tint_cols, cfg.tile_setup_cycles);
        let out = core.gemm(&lhs, &w)?;
        if out.acc.data != naive(&lhs, |k, j| w.get(k, j).value() as i32, m) {
            return Err(fail(format!("mismatch at {n}x{d}x{m}")));
        }
        if out.cycles != core.gemm_cycles(n, d, m) {
            return Err(fail("cycle count differs from tiling formula".into()));
        }
    }
    Ok("200 instances".into())
}

fn boothflex_oracle(cfg: &SimConfig, seed: u64) -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
    for _ in 0..100 {
        let (n, d, m) = (rng.gen_range(1..=16), rng.gen_range(1..=32), rng.gen_range(1..=16));
        let lhs = random_i8(&mut rng, n, d)?;
        let w = random_ternary(&mut rng, d, m)?;
        let y = random_i8(&mut rng, d, m)?;
        let mut core = BoothFlexCore::new(cfg.boothflex_rows, cfg.boothflex_cols, cfg.tile_setup_cycles);
        core.set_mode(BoothMode::Ternary)?;
        let t = core.gemm(&lhs, BoothRhs::Ternary(&w))?;
        core.set_mode(BoothMode::Int8)?;
        let i = core.gemm(&lhs, BoothRhs::Int8(&y))?;
        if t.acc.data != naive(&lhs, |k, j| w.get(k, j).value() as i32, m) {
            return Err(fail(format!("ternary mismatch at {n}x{d}x{m}")));
        }
        if i.acc.data != naive(&lhs, |k, j| y.get(k, j) as i32, m) {
            return Err(fail(format!("int8 mismatch at {n}x{d}x{m}")));
        }
        if cfg.tile_setup_cycles == 0 && i.cycles != 5 * t.cycles {
            return Err(fail(format!("int8 {} cycles vs ternary {}", i.cycles, t.cycles)));
        }
    }
    Ok("100 instances per mode".into())
}

fn absmax_roundtrip(_: &SimConfig, _: u64) -> Result<String> {
    let scale = 0.37;
    for c in -QMAX..=QMAX {
        for off in [-0.49, -0.25, 0.0, 0.25, 0.49] {
            let x = ((c as f64 + off) * scale).clamp(-127.0 * scale, 127.0 * scale);
            let q = absmax_quantize(&[127.0 * scale, x])?;
            let back = q.dequantize();
            if (back[1] - x).abs() > q.scale / 2.0 * (1.0 + 1e-12) {
                return Err(fail(format!("code {c} offset {off}: {x} -> {}", back[1])));
            }
        }
    }
    Ok("255 code points".into())
}

fn streaming_reductions(_: &SimConfig, seed: u64) -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 3);
    for i in 0..1000 {
        let len = rng.gen_range(1..=128);
        let spread = if i % 4 == 0 { 800.0 } else { 8.0 };
        let x: Vec<f64> = (0..len).map(|_| rng.gen_range(-spread..spread)).collect();
        let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = x.iter().map(|v| (v - max).exp()).sum();
        let p = streaming_softmax(x.iter().copied())?;
        for (pi, xi) in p.iter().zip(&x) {
            let want = (xi - max).exp() / denom;
            if (pi - want).abs() > 1e-6 * want.max(1e-300) && (pi - want).abs() > 1e-15 {
                return Err(fail(format!("softmax {pi} vs {want}")));
            }
        }
        let gain = vec![1.0; len];
        let rms = (x.iter().map(|v| v * v).sum::<f64>() / len as f64 + 1e-6).sqrt();
        let y = streaming_rms_norm(x.iter().copied(), &gain, 1e-6)?;
        if y.iter().zip(&x).any(|(a, b)| (a - b / rms).abs() > 1e-6 * (b / rms).abs().max(1e-12)) {
            return Err(fail("rmsnorm differs from two-pass".into()));
        }
    }
    Ok("1000 vectors".into())
}

fn topk_oracle(cfg: &SimConfig, seed: u64) -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 4);
    let d = cfg.layer.d_head;
    let coarse = Bucketizer::new(ScoreRange::for_dim(d), cfg.layer.buckets)?;
    for _ in 0..200 {
        let m = rng.gen_range(1..=300);
        let k = rng.gen_range(1..=m);
        let scores: Vec<SurrogateScore> =
            (0..m).map(|t| SurrogateScore { value: rng.gen_range(-2000..2000), token: t }).collect();
        let fine = Bucketizer::new(ScoreRange { lo: -2000, hi: 2000 }, 4000)?;
        let sel = select_top_k(&scores, k, &fine)?;
        let mut got: Vec<i64> = sel.kept.iter().map(|&t| scores[t].value).collect();
        let mut want: Vec<i64> = scores.iter().map(|s| s.value).collect();
        want.sort_unstable_by(|a, b| b.cmp(a));
        want.truncate(k);
        got.sort_unstable_by(|a, b| b.cmp(a));
        if got != want {
            return Err(fail(format!("top-{k} of {m} differs from sort")));
        }
        let c = select_top_k(&scores, k, &coarse)?;
        if c.kept.len() != k {
            return Err(fail("coarse selector kept the wrong count".into()));
        }
        let min_kept = c.kept.iter().map(|&t| coarse.bucket(scores[t].value)).min().unwrap_or(0);
        let dominated = scores.iter().filter(|s| !c.kept.contains(&s.token)).any(|s| coarse.bucket(s.value) > min_kept);
        if dominated {
            return Err(fail("a dropped token sits in a higher bucket than a kept one".into()));
        }
    }
    Ok("200 score vectors".into())
}

fn short_spec(cfg: &SimConfig, seed: u64) -> RunSpec {
    let seq_len = (cfg.layer.seq_capacity - 1).min(20);
    RunSpec { seq_len, decode_steps: 1.min(cfg.layer.seq_capacity - seq_len), prefill: PrefillMode::Simulate, seed }
}

fn schedule_invariants(cfg: &SimConfig, seed: u64) -> Result<String> {
    let weights = generate_weights(&cfg.layer, seed, cfg.zero_fraction)?;
    let spec = short_spec(cfg, seed);
    let mut makespans = Vec::new();
    for c in ablation_configs(cfg) {
        let run = run_workload(&c, &weights, &spec)?;
        let trace = &run.summary.trace;
        trace.check_well_formed()?;
        if run.summary.peak_credits > c.credit_depth {
            return Err(fail(format!(
                "{} credits outstanding with depth {}",
                run.summary.peak_credits, c.credit_depth
            )));
        }
        if run.report.bytes_kv != run.summary.traffic.bytes_kv() {
            return Err(fail("KV bytes in trace differ from counters".into()));
        }
        if run.report.bytes_features != run.summary.traffic.bytes_lop_features {
            return Err(fail("feature bytes in trace differ from counters".into()));
        }
        if !c.dual_mode && trace.events.iter().any(|e| e.kind.is_ffn() && e.core == crate::sched::Unit::BoothFlex) {
            return Err(fail("BoothFlex ran FFN tiles with dual mode off".into()));
        }
        makespans.push((c.toggles(), trace.makespan));
    }
    Ok(format!("{} grid points", makespans.len()))
}

fn causality(cfg: &SimConfig, seed: u64) -> Result<String> {
    let weights = generate_weights(&cfg.layer, seed, cfg.zero_fraction)?;
    let spec = short_spec(cfg, seed);
    let xs = generate_inputs(cfg.layer.d_model, spec.seq_len, seed);
    let mut sim = Simulator::new(cfg.clone(), weights)?;
    let mut t0 = 0;
    for batch in sim.prefill(&xs)? {
        for (r, heads) in batch.kept.iter().enumerate() {
            let t = t0 + r;
            if heads.iter().flatten().any(|&row| row > t) {
                return Err(fail(format!("token {t} attended to a later row")));
            }
        }
        t0 += batch.outputs.len();
    }
    sim.cache().check_features()?;
    Ok(format!("{t0} prefill tokens"))
}

fn determinism(cfg: &SimConfig, seed: u64) -> Result<String> {
    let weights = generate_weights(&cfg.layer, seed, cfg.zero_fraction)?;
    let spec = short_spec(cfg, seed);
    let a = run_workload(cfg, &weights, &spec)?;
    let b = run_workload(cfg, &weights, &spec)?;
    if a.summary.trace.to_jsonl() != b.summary.trace.to_jsonl() || a.last_output != b.last_output {
        return Err(fail("two identical runs diverged".into()));
    }
    Ok(format!("{} events", a.summary.trace.events.len()))
}
