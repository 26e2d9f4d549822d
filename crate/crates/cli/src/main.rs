//! Command-line front end: reads a run configuration, runs one experiment and
//! writes data files, a summary and a manifest into the output directory.
//!
//! Exit status: 0 on success, 1 when the run fails or `verify` finds a
//! violation, 2 for usage and configuration errors.

mod config;
mod experiments;
mod output;

use anyhow::Context;
use clap::{CommandFactory, Parser};
use config::{Kind, RunConfig};
use output::Output;
use serde_json::json;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

#[derive(Parser, Debug)]
#[command(name = "nlinv", version, about = "Forward solves, measurements and inverse reconstructions")]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 lets the pool pick.
    #[arg(long, value_name = "N")]
    workers: Option<usize>,
    /// Experiment to run; overrides `kind` in the config.
    #[arg(long, value_name = "EXPERIMENT")]
    kind: Option<String>,
}

fn usage_error(msg: &str) -> ExitCode {
    eprintln!("error: {msg}\n\n{}", Cli::command().render_usage());
    let kinds: Vec<String> = [
        Kind::Forward,
        Kind::Adjoint,
        Kind::Linearize,
        Kind::InvertPotential,
        Kind::InvertInteraction,
        Kind::InvertOrder,
        Kind::Verify,
    ]
    .iter()
    .map(|k| k.name())
    .collect();
    eprintln!("experiments: {}", kinds.join(", "));
    ExitCode::from(2)
}

fn config_error(e: anyhow::Error) -> ExitCode {
    eprintln!("error: invalid configuration: {e:#}");
    ExitCode::from(2)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(p) => match config::load(p) {
            Ok(c) => c,
            Err(e) => return config_error(e),
        },
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    let Some(name) = cli.kind.as_deref().or(cfg.kind.as_deref()) else {
        return usage_error("no experiment kind; pass --kind or set kind in the config");
    };
    let Some(kind) = Kind::parse(name) else {
        return usage_error(&format!("unknown experiment kind '{name}'"));
    };
    cfg.kind = Some(kind.name());

    let setup = if kind == Kind::Verify {
        None
    } else {
        match cfg.setup() {
            Ok(s) => Some(s),
            Err(e) => return config_error(e),
        }
    };
    if let Err(e) = cfg.lambda() {
        return config_error(e);
    }
    if cfg.workers > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build_global() {
            return config_error(anyhow::anyhow!("workers: {e}"));
        }
    }
    let mut out = match Output::create(&cli.out) {
        Ok(o) => o,
        Err(e) => return config_error(e),
    };
    if let Some(s) = &setup {
        for w in &s.warnings {
            eprintln!("warning: {w}");
        }
    }

    let start = Instant::now();
    let result = experiments::run(kind, &cfg, setup.as_ref(), &mut out).and_then(|r| {
        let mut summary = r.summary;
        summary["kind"] = json!(kind.name());
        summary["seed"] = json!(cfg.seed);
        out.write_json("summary.json", &summary).context("writing summary")?;
        Ok(r.ok)
    });
    let (status, code) = match &result {
        Ok(true) => ("ok", ExitCode::SUCCESS),
        Ok(false) => ("violations", ExitCode::from(1)),
        Err(_) => ("failed", ExitCode::from(1)),
    };
    let mut record = json!({
        "tool": "nlinv",
        "version": env!("CARGO_PKG_VERSION"),
        "library_version": nonlocal_inverse::VERSION,
        "kind": kind.name(),
        "seed": cfg.seed,
        "workers": rayon::current_num_threads(),
        "status": status,
        "wall_time_s": start.elapsed().as_secs_f64(),
        "config": serde_json::to_value(&cfg).unwrap_or_default(),
    });
    if let Err(e) = &result {
        record["error"] = json!(format!("{e:#}"));
        eprintln!("error: {e}");
        for cause in e.chain().skip(1) {
            eprintln!("  caused by: {cause}");
        }
    }
    if let Err(e) = out.finish(record) {
        eprintln!("error: {e:#}");
        return ExitCode::from(1);
    }
    if status == "violations" {
        eprintln!("{}: violations found", kind.name());
    }
    code
}
