//! `gfom` command-line driver: one subcommand per experiment kind, each
//! reading a single JSON config.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use gfom::bench::{
    emit_csv, emit_json, format_timing, lower_bound, oamp_fuzz, run_pr_bench, se_check, spectral_sweep, step_sweep,
    ExperimentConfig,
};
use gfom::par::{self, Exec};

#[derive(Parser)]
#[command(name = "gfom", version, about = "GFOM lower bounds, AMP state evolution and phase-retrieval benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimal-error sequence (rank-one or GLM) as JSON.
    LowerBound(Common),
    /// Bayes AMP on the spiked model against its state evolution.
    SeCheck(Common),
    /// Phase-retrieval benchmark: CSV rows plus a theory sidecar.
    PrBench(Common),
    /// Step-size sweep with the best step per algorithm.
    StepSweep(Common),
    /// Spectral-initialization overlap theory, optionally with simulations.
    Spectral(Common),
    /// Random polynomial specs checked against the overlap bound.
    OampFuzz(Common),
}

#[derive(Args)]
struct Common {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output path; overrides `output` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `master_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for trial dispatch; 1 runs sequentially.
    #[arg(long)]
    workers: Option<usize>,
    /// Overrides `quadrature_order`.
    #[arg(long)]
    quadrature_order: Option<usize>,
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn json_out<T: serde::Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => emit_json(value, p).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut text = serde_json::to_string_pretty(value)?;
            text.push('\n');
            std::io::stdout().write_all(text.as_bytes()).context("writing to stdout")
        }
    }
}

fn run(command: Command) -> Result<()> {
    let (expected, common) = match &command {
        Command::LowerBound(c) => ("lower_bound", c),
        Command::SeCheck(c) => ("se_check", c),
        Command::PrBench(c) => ("pr_bench", c),
        Command::StepSweep(c) => ("step_sweep", c),
        Command::Spectral(c) => ("spectral_theory", c),
        Command::OampFuzz(c) => ("oamp_fuzz", c),
    };
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if cfg.kind() != expected {
        bail!("{} holds a `{}` config, not `{expected}`", common.config.display(), cfg.kind());
    }
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    if let Some(order) = common.quadrature_order {
        cfg.set_quadrature_order(order);
    }
    cfg.validate()?;
    let out = common.out.clone().or_else(|| cfg.output().map(Path::to_path_buf));
    let exec = if common.workers == Some(1) { Exec::Sequential } else { Exec::Parallel };

    par::with_workers(common.workers, move || -> Result<()> {
        let csv_out = || out.clone().with_context(|| format!("{expected} writes CSV and needs --out or `output`"));
        match cfg {
            ExperimentConfig::LowerBound(c) => json_out(&lower_bound(&c)?, out.as_deref()),
            ExperimentConfig::SeCheck(c) => {
                let path = csv_out()?;
                let (records, summary) = se_check(&c, exec)?;
                emit_csv(&records, &path)?;
                emit_json(&summary, &sibling(&path, "se.json"))?;
                for r in &summary.rows {
                    eprintln!(
                        "t={} overlap {:.4} (se {:.4})  mse {:.4} (se {:.4})  {}",
                        r.iter,
                        r.mean_overlap,
                        r.se_overlap,
                        r.mean_mse,
                        r.se_mmse,
                        if r.pass { "ok" } else { "off" }
                    );
                }
                Ok(())
            }
            ExperimentConfig::PrBench(c) => {
                let path = csv_out()?;
                let res = run_pr_bench(&c, exec)?;
                emit_csv(&res.records, &path)?;
                emit_json(&res.sidecar, &sibling(&path, "theory.json"))?;
                eprint!("{}", format_timing(&res.timing));
                Ok(())
            }
            ExperimentConfig::StepSweep(c) => {
                let path = csv_out()?;
                let res = step_sweep(&c, exec)?;
                emit_csv(&res.records, &path)?;
                emit_json(&res.sidecar, &sibling(&path, "theory.json"))?;
                emit_json(&res.best, &sibling(&path, "best.json"))?;
                for b in &res.best {
                    eprintln!("{}: best step {} -> mean correlation {:.5}", b.family, b.best_step, b.best_mean_correlation);
                }
                if let Some(b) = res.bayes_mean_correlation {
                    eprintln!("bayes_amp: mean correlation {b:.5}");
                }
                Ok(())
            }
            ExperimentConfig::SpectralTheory(c) => json_out(&spectral_sweep(&c, exec)?, out.as_deref()),
            ExperimentConfig::OampFuzz(c) => {
                let cases = oamp_fuzz(&c, exec)?;
                json_out(&cases, out.as_deref())?;
                let failed = cases.iter().filter(|k| !k.passed()).count();
                if failed > 0 {
                    bail!("{failed} of {} cases violate the overlap bound", cases.len());
                }
                Ok(())
            }
        }
    })?
}

fn main() -> Result<()> {
    run(Cli::parse().command)
}
