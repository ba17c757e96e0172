//! `ternsim`: run, ablate, verify, gen-weights.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 internal
//! invariant violation.

mod args;

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use ternsim_core::model::{generate_weights, LayerWeights};
use ternsim_core::report::{
    ablation_configs, emit_csv, finalize, fmt_g, run_workload, PrefillMode, RunOutcome, RunReport, RunSpec,
};
use ternsim_core::sched::{ablation_toggles, FeatureStore};
use ternsim_core::verify::run_suite;
use ternsim_core::{Error, SimConfig, Toggles};

use args::{Cli, Command, ConfigArgs, FeatureArg, GenWeightsArgs, PrefillArg, RunArgs, VerifyArgs};

/// On-disk config: simulator settings plus an optional workload.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    sim: SimConfig,
    workload: Option<RunSpec>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    let internal = e.chain().any(|c| c.downcast_ref::<Error>().is_some_and(Error::is_internal));
    if internal {
        2
    } else {
        1
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(a) => cmd_run(&a),
        Command::Ablate(a) => cmd_ablate(&a),
        Command::Verify(a) => cmd_verify(&a),
        Command::GenWeights(a) => cmd_gen_weights(&a),
    }
}

fn load_config(args: &ConfigArgs) -> Result<(SimConfig, Option<RunSpec>)> {
    let file = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<FileConfig>(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => FileConfig::default(),
    };
    let mut cfg = file.sim;
    let layer = &mut cfg.layer;
    if let Some(s) = args.seed {
        layer.seed = s;
    }
    if let Some(k) = args.topk {
        layer.top_k = k;
    }
    if let Some(b) = args.buckets {
        layer.buckets = b;
    }
    if let Some(f) = args.dffn {
        layer.d_ffn = f;
    }
    if args.heads.is_some() || args.dmodel.is_some() {
        layer.num_heads = args.heads.unwrap_or(layer.num_heads);
        layer.d_model = args.dmodel.unwrap_or(layer.d_model);
        if layer.num_heads == 0 || layer.d_model % layer.num_heads != 0 {
            return Err(Error::InvalidInput(format!(
                "d_model {} is not divisible by {} heads",
                layer.d_model, layer.num_heads
            ))
            .into());
        }
        layer.d_head = layer.d_model / layer.num_heads;
    }
    if let Some(v) = args.lop {
        cfg.lop = v.enabled();
    }
    if let Some(v) = args.hlp {
        cfg.hlp = v.enabled();
    }
    if let Some(v) = args.dual_mode {
        cfg.dual_mode = v.enabled();
    }
    if let Some(f) = args.lop_features {
        cfg.lop_features = match f {
            FeatureArg::Onchip => FeatureStore::OnChip,
            FeatureArg::Offchip => FeatureStore::OffChip,
        };
    }
    Ok((cfg, file.workload))
}

/// Config, workload and weights for `run` / `ablate`. The KV cache grows to
/// fit the requested sequence.
fn prepare(args: &RunArgs, default_spec: RunSpec) -> Result<(SimConfig, RunSpec, LayerWeights)> {
    let (mut cfg, file_spec) = load_config(&args.config)?;
    let mut spec = file_spec.unwrap_or(default_spec);
    if let Some(n) = args.seq_len {
        spec.seq_len = n;
    }
    if let Some(n) = args.decode_steps {
        spec.decode_steps = n;
    }
    if let Some(p) = args.prefill {
        spec.prefill = match p {
            PrefillArg::Simulate => PrefillMode::Simulate,
            PrefillArg::Warm => PrefillMode::Warm,
        };
    }
    spec.seed = cfg.layer.seed;
    cfg.layer.seq_capacity = cfg.layer.seq_capacity.max(spec.total_tokens());
    cfg.validate()?;
    let weights = match &args.weights {
        Some(dir) => LayerWeights::load_dir(dir, &cfg.layer)?,
        None => generate_weights(&cfg.layer, cfg.layer.seed, cfg.zero_fraction)?,
    };
    Ok((cfg, spec, weights))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_trace(path: &Path, run: &RunOutcome) -> Result<()> {
    let mut w = create(path)?;
    run.summary.trace.write_jsonl(&mut w)?;
    w.flush()?;
    Ok(())
}

fn write_csv(path: Option<&PathBuf>, reports: &[RunReport]) -> Result<()> {
    match path {
        Some(p) => {
            let mut w = create(p)?;
            emit_csv(reports, &mut w)?;
            w.flush()?;
        }
        None => emit_csv(reports, io::stdout().lock())?,
    }
    Ok(())
}

fn grid_trace_path(base: &Path, t: Toggles) -> PathBuf {
    let bit = |b: bool| u8::from(b);
    let stem = base.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "trace".into());
    let tag = format!("lop{}-hlp{}-dual{}", bit(t.lop), bit(t.hlp), bit(t.dual_mode));
    let name = match base.extension() {
        Some(ext) => format!("{stem}.{tag}.{}", ext.to_string_lossy()),
        None => format!("{stem}.{tag}"),
    };
    base.with_file_name(name)
}

#[derive(Serialize)]
struct RunJson<'a> {
    config: &'a SimConfig,
    workload: &'a RunSpec,
    report: &'a RunReport,
    baseline: Option<&'a RunReport>,
    tokens_per_second: Option<f64>,
}

fn tokens_per_second(report: &RunReport, freq_ghz: Option<f64>) -> Option<f64> {
    freq_ghz.filter(|_| report.cycles_per_token > 0.0).map(|f| f * 1e9 / report.cycles_per_token)
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let (cfg, spec, weights) = prepare(args, RunSpec::default())?;
    let mut runs = Vec::with_capacity(2);
    if cfg.toggles() != Toggles::ALL_OFF {
        runs.push(run_workload(&ablation_toggles(&cfg, Toggles::ALL_OFF), &weights, &spec)?);
    }
    runs.push(run_workload(&cfg, &weights, &spec)?);
    finalize(&mut runs)?;
    let main = runs.last().expect("main run");
    let baseline = (runs.len() == 2).then(|| &runs[0].report);

    if let Some(path) = &args.trace {
        write_trace(path, main)?;
    }
    if let Some(path) = &args.out {
        let reports: Vec<RunReport> = runs.iter().map(|r| r.report.clone()).collect();
        write_csv(Some(path), &reports)?;
    }
    let tps = tokens_per_second(&main.report, args.freq_ghz);
    if args.json {
        let out = RunJson { config: &cfg, workload: &spec, report: &main.report, baseline, tokens_per_second: tps };
        println!("{}", serde_json::to_string_pretty(&out)?);
    } else {
        print_summary(&main.report, tps);
    }
    Ok(())
}

fn print_summary(r: &RunReport, tps: Option<f64>) {
    let on = |b: bool| if b { "on" } else { "off" };
    let t = r.toggles;
    println!("toggles      lop={} hlp={} dual_mode={}", on(t.lop), on(t.hlp), on(t.dual_mode));
    println!("cache        M={} K={}", r.m, r.k);
    println!("tokens       {}", r.tokens_simulated);
    print!("cycles       {} total, {} per token", r.cycles_total, fmt_g(r.cycles_per_token));
    match tps {
        Some(v) => println!(", {} tokens/s", fmt_g(v)),
        None => println!(),
    }
    println!("utilization  TINT {}  BoothFlex {}", fmt_g(r.tint_util), fmt_g(r.boothflex_util));
    println!("traffic      kv {} B, features {} B, weights {} B", r.bytes_kv, r.bytes_features, r.bytes_weights);
    if let Some(x) = r.ratios {
        println!(
            "vs all-off   kv x{}  mha x{}  ffn x{}  overall x{}",
            fmt_g(x.kv_reduction),
            fmt_g(x.mha_speedup),
            fmt_g(x.ffn_speedup),
            fmt_g(x.overall_speedup)
        );
    }
}

fn cmd_ablate(args: &RunArgs) -> Result<()> {
    let (cfg, spec, weights) = prepare(args, RunSpec::ablation())?;
    let mut runs = ablation_configs(&cfg)
        .par_iter()
        .map(|c| run_workload(c, &weights, &spec))
        .collect::<ternsim_core::Result<Vec<_>>>()?;
    finalize(&mut runs)?;

    if let Some(base) = &args.trace {
        for run in &runs {
            write_trace(&grid_trace_path(base, run.report.toggles), run)?;
        }
    }
    let reports: Vec<RunReport> = runs.iter().map(|r| r.report.clone()).collect();
    if args.json {
        if let Some(path) = &args.out {
            write_csv(Some(path), &reports)?;
        }
        println!("{}", serde_json::to_string_pretty(&reports)?);
    } else {
        write_csv(args.out.as_ref(), &reports)?;
    }
    Ok(())
}

fn cmd_verify(args: &VerifyArgs) -> Result<()> {
    let (cfg, _) = load_config(&args.config)?;
    cfg.validate()?;
    let results = run_suite(&cfg, cfg.layer.seed);
    if args.json {
        let rows: Vec<_> = results
            .iter()
            .map(|c| serde_json::json!({ "check": c.name, "passed": c.passed, "detail": c.detail }))
            .collect();
        println!("{}", serde_json::to_string_pretty(&rows)?);
    } else {
        for c in &results {
            println!("{} {:<24} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
    }
    let failed: Vec<&str> = results.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Invariant(format!("failed checks: {}", failed.join(", "))).into())
    }
}

fn cmd_gen_weights(args: &GenWeightsArgs) -> Result<()> {
    let (mut cfg, _) = load_config(&args.config)?;
    if let Some(z) = args.zero_fraction {
        cfg.zero_fraction = z;
    }
    cfg.validate()?;
    let weights = generate_weights(&cfg.layer, cfg.layer.seed, cfg.zero_fraction)?;
    weights.save_dir(&args.out)?;
    println!("wrote {} tensors to {}", weights.tensors().len(), args.out.display());
    Ok(())
}
