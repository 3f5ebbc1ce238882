//! `deqnc`: run layer-peeled neural-collapse experiments and the numerical
//! checks of the analytic bounds.
//!
//! Exit codes: 0 success, 1 other failure, 2 config error, 3 training
//! divergence (unstable DEQ head or non-finite loss), 4 fixed-point solver
//! non-convergence under `solver_on_failure = "error"`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use deqnc_core::etf::{etf_gram, make_etf};
use deqnc_core::harness::{
    desk_grid, execute, export_gram, load_dir, merge, read_features, run_all, write_grid, write_summary, ExperimentConfig,
    Overrides, Preset, RunRecord, FEATURES_FILE,
};
use deqnc_core::numerics::{Matrix, Rng};
use deqnc_core::theory::{balanced_lower_bounds, constants_from_ratio, lemma1_fuzz, ratio_from_gap};
use deqnc_core::Error;

#[derive(Parser)]
#[command(name = "deqnc", version, about = "Neural collapse for explicit and DEQ heads in the layer-peeled model")]
struct Cli {
    /// Override the seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (run) or output root (sweep).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,
    /// Defaults for keys the config leaves out.
    #[arg(long, global = true, value_parser = ["desk", "paper"])]
    preset: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured head(s) and write trace, Gram and report files.
    Run { config: PathBuf },
    /// Run every *.toml in a directory concurrently.
    Sweep {
        config_dir: PathBuf,
        /// Write the nine desk-grid configs into the directory and exit.
        #[arg(long)]
        write_grid: bool,
    },
    /// Build a simplex ETF and report how far it is from the defining identities.
    EtfCheck {
        #[arg(long)]
        k: usize,
        #[arg(long)]
        d: usize,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
    },
    /// Balanced-regime loss lower bounds for both heads.
    BoundCheck {
        #[arg(long)]
        k: usize,
        #[arg(long)]
        ew: f64,
        #[arg(long)]
        eh: f64,
        /// Mean logit gap used for the optimal constants; defaults to the gap
        /// of an ETF at the budgets.
        #[arg(long)]
        gap: Option<f64>,
    },
    /// Random trials of the log bound.
    LemmaFuzz {
        #[arg(long, default_value_t = 10_000)]
        draws: usize,
    },
    /// Rebuild gram_samples.csv and gram_class_means.csv from features.csv.
    ExportGram { run_dir: PathBuf },
}

struct Ctx {
    quiet: bool,
    overrides: Overrides,
}

impl Ctx {
    fn say(&self, line: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", line.as_ref());
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Divergence { .. } | Error::NonFiniteLoss { .. } => 3,
        Error::SolverNonConvergence { .. } => 4,
        _ => 1,
    }
}

fn summarize(ctx: &Ctx, record: &RunRecord, dir: &Path) {
    ctx.say(format!("{} ({}) seed {} in {:.1}s -> {}", record.name, &record.config_hash[..12], record.seed, record.duration_secs, dir.display()));
    for h in &record.heads {
        let r = &h.final_report;
        ctx.say(format!(
            "  {:<8} step {:>6}  loss {:.6}  acc {:.4}  nc1 {:.3e}  nc2 {:.3e}  nc3 {:.3e}",
            h.head.as_str(),
            h.final_step,
            r.loss,
            r.accuracy,
            r.nc1,
            r.nc2,
            r.nc3
        ));
        if let Some(b) = &h.bound {
            ctx.say(format!("           lower bound {:.6} ({})", b.bound, if b.holds { "holds" } else { "VIOLATED" }));
        }
    }
    if let Some(c) = &record.conditions {
        ctx.say(format!(
            "  conditions: nc2 {} (margin {:.3e}), nc3 {} (margin {:.3e})",
            c.nc2_condition_holds, c.nc2_margin, c.nc3_condition_holds, c.nc3_margin
        ));
    }
}

fn cmd_run(ctx: &Ctx, config: &Path) -> Result<(), Error> {
    let cfg = ExperimentConfig::load(config, &ctx.overrides)?;
    let out = execute(&cfg)?;
    summarize(ctx, &out.record, &out.dir);
    Ok(())
}

fn cmd_sweep(ctx: &Ctx, dir: &Path, write: bool) -> Result<(), Error> {
    if write {
        let root = ctx.overrides.output_dir.clone().unwrap_or_else(|| PathBuf::from("runs"));
        for p in write_grid(dir, &desk_grid(), &root)? {
            ctx.say(p.display().to_string());
        }
        return Ok(());
    }
    // --out names the root; each run gets a subdirectory
    let file_overrides = Overrides {
        output_dir: None,
        ..ctx.overrides.clone()
    };
    let mut configs: Vec<ExperimentConfig> = load_dir(dir, &file_overrides)?.into_iter().map(|(_, c)| c).collect();
    if let Some(root) = &ctx.overrides.output_dir {
        for c in &mut configs {
            c.output_dir = root.join(&c.name);
        }
    }
    let mut first_err = None;
    let mut done = Vec::new();
    for (cfg, result) in configs.iter().zip(run_all(&configs)) {
        match result {
            Ok(record) => {
                summarize(ctx, &record, &cfg.output_dir);
                done.push(record);
            }
            Err(e) => {
                eprintln!("{}: {e}", cfg.name);
                first_err.get_or_insert(e);
            }
        }
    }
    let merged = merge(done)?;
    let root = ctx.overrides.output_dir.clone().unwrap_or_else(|| PathBuf::from("runs"));
    let path = write_summary(&root, &merged)?;
    ctx.say(format!("{} of {} runs merged into {}", merged.len(), configs.len(), path.display()));
    first_err.map_or(Ok(()), Err)
}

fn cmd_etf(ctx: &Ctx, k: usize, d: usize, alpha: f64) -> Result<bool, Error> {
    let mut rng = Rng::new(ctx.overrides.seed.unwrap_or(0));
    let frame = make_etf(k, d, alpha, &mut rng)?;
    let orth = frame.p.t_matmul(&frame.p).sub(&Matrix::identity(k)).frobenius_norm();
    let gram = frame.gram().sub(&etf_gram(k, alpha)).frobenius_norm();
    ctx.say(format!("k {k}  d {d}  alpha {alpha}"));
    ctx.say(format!("  |PᵀP − I|_F          {orth:.3e}"));
    ctx.say(format!("  |SᵀS − target Gram|_F {gram:.3e}"));
    Ok(orth <= 1e-10 && gram <= 1e-10)
}

fn cmd_bound(ctx: &Ctx, k: usize, ew: f64, eh: f64, gap: Option<f64>) -> Result<bool, Error> {
    if k < 2 {
        return Err(Error::Config(format!("k must be >= 2, got {k}")));
    }
    let gap = gap.unwrap_or(k as f64 / (k as f64 - 1.0) * (ew * eh).sqrt());
    let ratio = ratio_from_gap(gap, k);
    let consts = constants_from_ratio(ratio, k)?;
    let b = balanced_lower_bounds(ew, eh, k, &consts)?;
    ctx.say(format!("gap {gap}  c1/c2 {ratio}  M1 {}  M2 {}", consts.m1, consts.m2));
    ctx.say(format!("explicit_bound {}", b.explicit_bound));
    ctx.say(format!("deq_bound      {}", b.deq_bound));
    ctx.say(format!("deq_bound <= explicit_bound: {}", b.deq_bound <= b.explicit_bound));
    Ok(b.deq_bound <= b.explicit_bound)
}

fn cmd_fuzz(ctx: &Ctx, draws: usize) -> Result<bool, Error> {
    let r = lemma1_fuzz(draws, ctx.overrides.seed.unwrap_or(0))?;
    ctx.say(format!("draws {}  violations {}  worst lhs−rhs {:.3e}  symmetric |lhs−rhs| {:.3e}", r.draws, r.violations, r.worst_excess, r.symmetric_gap));
    Ok(r.violations == 0 && r.symmetric_gap <= 1e-10)
}

fn cmd_export(ctx: &Ctx, run_dir: &Path) -> Result<(), Error> {
    let mut dirs: Vec<PathBuf> = ["explicit", "deq"].iter().map(|h| run_dir.join(h)).collect();
    dirs.push(run_dir.to_path_buf());
    let mut found = false;
    for dir in dirs {
        let features = dir.join(FEATURES_FILE);
        if !features.exists() {
            continue;
        }
        found = true;
        let (h, labels) = read_features(&features)?;
        let (samples, classes) = export_gram(&h, &labels, &dir)?;
        ctx.say(samples.display().to_string());
        ctx.say(classes.display().to_string());
    }
    if !found {
        return Err(Error::Io {
            path: run_dir.join(FEATURES_FILE),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no features.csv in the run directory"),
        });
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let ctx = Ctx {
        quiet: cli.quiet,
        overrides: Overrides {
            preset: cli.preset.as_deref().map(|p| p.parse::<Preset>().expect("clap restricts the values")),
            seed: cli.seed,
            output_dir: cli.out.clone(),
        },
    };
    let outcome = match &cli.command {
        Command::Run { config } => cmd_run(&ctx, config).map(|_| true),
        Command::Sweep { config_dir, write_grid } => cmd_sweep(&ctx, config_dir, *write_grid).map(|_| true),
        Command::EtfCheck { k, d, alpha } => cmd_etf(&ctx, *k, *d, *alpha),
        Command::BoundCheck { k, ew, eh, gap } => cmd_bound(&ctx, *k, *ew, *eh, *gap),
        Command::LemmaFuzz { draws } => cmd_fuzz(&ctx, *draws),
        Command::ExportGram { run_dir } => cmd_export(&ctx, run_dir).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
