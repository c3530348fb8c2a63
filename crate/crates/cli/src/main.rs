//! `evolab`: batch runner for the inequality harness.
//!
//! Exit status: 0 all pass, 2 at least one fail, 3 no fail but inconclusive
//! verdicts or skipped checks, 64 configuration or precondition error, 70
//! estimator failure.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod checks;
mod manifest;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use evolab_core::functions::FamilyKind;
use evolab_core::io::{
    summary, write_estimates_csv, write_measure, write_plot_data, write_reports_csv,
};
use evolab_core::measures::default_burn_in;
use evolab_core::{catalog, load_config};

use checks::{Artifacts, Settings, CHECKS};
use manifest::{sha256_hex, RunManifest};

#[derive(Parser)]
#[command(
    name = "evolab",
    version,
    about = "Monte Carlo checks of evolution-operator inequalities"
)]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "EVOLAB_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run checks for the operator described by a TOML configuration.
    Run(RunArgs),
    /// List the built-in operator presets.
    Presets,
}

#[derive(clap::Args)]
struct RunArgs {
    config: PathBuf,

    /// Comma-separated checks; `all` selects every check.
    #[arg(long, default_value = "gradient,harnack")]
    checks: String,

    /// Paths per estimate (and particles per measure).
    #[arg(long, default_value_t = 20_000)]
    samples: usize,

    /// Inner paths per particle for nested norms.
    #[arg(long, default_value_t = 16)]
    inner: usize,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Euler-Maruyama step size.
    #[arg(long, default_value_t = 1e-3)]
    step: f64,

    /// Burn-in for evolution measures [default: 10/|r0|].
    #[arg(long)]
    burn_in: Option<f64>,

    /// `standard` or a comma-separated list of gaussian, trig, polycutoff, indicator.
    #[arg(long, default_value = "standard")]
    family: String,

    /// Members per family kind.
    #[arg(long, default_value_t = 3)]
    family_size: usize,

    /// Comma-separated interval lengths t - s.
    #[arg(long, default_value = "0.25,1")]
    delta_grid: String,

    /// Output root; each run writes to a subdirectory named by its manifest hash.
    #[arg(long, default_value = "evolab-out")]
    out: PathBuf,

    /// Cross-check the engine against the closed-form Ornstein-Uhlenbeck oracle.
    #[arg(long)]
    oracle: bool,

    /// Replace an existing output directory for the same manifest.
    #[arg(long)]
    force: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("evolab: cannot configure {n} threads: {e}");
            return ExitCode::from(64);
        }
    }
    match cli.command {
        Command::Presets => {
            for p in catalog() {
                println!(
                    "{:<10} {:<32} {:<44} {}",
                    p.name, p.parameters, p.drift, p.regime
                );
            }
            ExitCode::SUCCESS
        }
        Command::Run(args) => match run(&args) {
            Ok(code) => ExitCode::from(code),
            Err(Failure { code, err }) => {
                eprintln!("evolab: {err:#}");
                ExitCode::from(code)
            }
        },
    }
}

struct Failure {
    code: u8,
    err: anyhow::Error,
}

fn usage(err: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: 64,
        err: err.into(),
    }
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, Failure> {
    s.split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| {
            v.parse()
                .map_err(|_| usage(anyhow::anyhow!("bad {what} entry {v:?}")))
        })
        .collect()
}

fn run(args: &RunArgs) -> Result<u8, Failure> {
    let cfg = load_config(&args.config).map_err(usage)?;
    let spec = &cfg.spec;

    let mut selected: Vec<String> = parse_list(&args.checks, "check")?;
    if selected.iter().any(|c| c == "all") {
        selected = CHECKS.iter().map(|c| c.to_string()).collect();
    }
    if let Some(bad) = selected.iter().find(|c| !CHECKS.contains(&c.as_str())) {
        return Err(usage(anyhow::anyhow!(
            "unknown check {bad:?}; known: {}",
            CHECKS.join(", ")
        )));
    }
    let delta_grid: Vec<f64> = parse_list(&args.delta_grid, "delta-grid")?;
    if delta_grid.is_empty() || delta_grid.iter().any(|d| !(*d > 0.0)) {
        return Err(usage(anyhow::anyhow!("delta-grid needs positive entries")));
    }
    if !(args.step > 0.0) || args.samples < 2 {
        return Err(usage(anyhow::anyhow!(
            "need step > 0 and at least 2 samples"
        )));
    }
    let family = if args.family == "standard" {
        FamilyKind::ALL.to_vec()
    } else {
        args.family
            .split(',')
            .map(|k| FamilyKind::parse(k.trim()))
            .collect::<Result<_, _>>()
            .map_err(usage)?
    };
    let burn_in = args.burn_in.unwrap_or_else(|| default_burn_in(spec));

    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION"),
        config_path: args.config.display().to_string(),
        config_sha256: sha256_hex(cfg.text.as_bytes()),
        checks: selected.clone(),
        samples: args.samples,
        inner: args.inner,
        seed: args.seed,
        step: args.step,
        burn_in,
        family: args.family.clone(),
        family_size: args.family_size,
        delta_grid: delta_grid.clone(),
        oracle: args.oracle,
    };
    let dir = manifest.prepare_dir(&args.out, args.force).map_err(usage)?;
    manifest
        .write(&dir, &args.out)
        .map_err(|e| Failure { code: 70, err: e })?;

    let settings = Settings {
        checks: selected,
        samples: args.samples,
        inner: args.inner,
        seed: args.seed,
        step: args.step,
        burn_in,
        family,
        family_size: args.family_size,
        delta_grid,
        oracle: args.oracle,
    };
    let artifacts = checks::run(&cfg, &settings).map_err(|e| Failure {
        code: checks::exit_code(&e),
        err: e.into(),
    })?;
    write_artifacts(&dir, &artifacts).map_err(|e| Failure { code: 70, err: e })?;

    let sum = summary(&artifacts.reports);
    println!("{}", dir.display());
    for (tag, c) in &sum.by_tag {
        println!(
            "{tag:<24} pass {:>5}  fail {:>5}  inconclusive {:>5}",
            c.pass, c.fail, c.inconclusive
        );
    }
    for d in &artifacts.diagnostics {
        eprintln!("evolab: skipped {d}");
    }
    Ok(if sum.total.fail > 0 {
        2
    } else if sum.total.inconclusive > 0 || !artifacts.diagnostics.is_empty() {
        3
    } else {
        0
    })
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_artifacts(dir: &Path, a: &Artifacts) -> anyhow::Result<()> {
    write_reports_csv(create(&dir.join("reports.csv"))?, &a.reports)?;
    write_estimates_csv(create(&dir.join("estimates.csv"))?, &a.estimates)?;
    fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&summary(&a.reports))? + "\n",
    )?;
    for (name, header, rows) in &a.plots {
        write_plot_data(
            create(&dir.join("plots").join(format!("{name}.dat")))?,
            *header,
            rows,
        )?;
    }
    if !a.diagnostics.is_empty() {
        fs::write(dir.join("diagnostics.txt"), a.diagnostics.join("\n") + "\n")?;
    }
    if !a.measures.is_empty() {
        fs::create_dir_all(dir.join("measures"))?;
        for (name, m) in &a.measures {
            write_measure(
                create(&dir.join("measures").join(format!("{name}.evomea")))?,
                m,
            )?;
        }
    }
    Ok(())
}
