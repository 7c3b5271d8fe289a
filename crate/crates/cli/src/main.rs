use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use plett::experiment::{
    aggregate, emit, group_rows, load_rows, pareto_front, run_grid, summarize, ExperimentSpec, Format, RunOutcome,
};
use plett::sim::{run_simulation, ScenarioConfig, ScenarioKind, SimError, SimResult};

#[derive(Parser)]
#[command(name = "plett", version, about = "Event-trigger threshold experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario config over several seeds.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        /// First seed.
        #[arg(long, default_value_t = 0)]
        seed_offset: u64,
        #[arg(long, env = "PLETT_OUT_DIR", default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
        /// Also write a per-step trace for every seed.
        #[arg(long)]
        trace: bool,
    },
    /// Run a parameter grid and write rows, Pareto fronts and a summary.
    Grid {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, env = "PLETT_OUT_DIR", default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
        /// Override the spec's seeds with `0..N`.
        #[arg(long)]
        seeds: Option<u64>,
    },
    /// Non-dominated rows (max rho_min, min m) of a rows file.
    Pareto {
        #[arg(long = "in")]
        input: PathBuf,
        /// Write the front here (csv or json by extension) instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// One front per label and context instead of one over all rows.
        #[arg(long)]
        by_label: bool,
        #[arg(long)]
        feasible_only: bool,
    },
    /// Best feasible configuration per label with event reductions.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Print a scenario config with published parameters.
    Preset {
        #[arg(long, value_enum)]
        kind: Kind,
        /// tt, cett, rho_ett, rho_ett_no_or or rho_ett_wc.
        #[arg(long)]
        policy: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    SingleLane,
    MultilaneCritical,
    MultilaneNoncritical,
    SyntheticLinear,
}

impl From<Kind> for ScenarioKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::SingleLane => ScenarioKind::SingleLane,
            Kind::MultilaneCritical => ScenarioKind::MultilaneCritical,
            Kind::MultilaneNoncritical => ScenarioKind::MultilaneNoncritical,
            Kind::SyntheticLinear => ScenarioKind::SyntheticLinear,
        }
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { config, seeds, seed_offset, out, jobs, trace } => {
            run(&config, seed_offset..seed_offset + seeds, &out, jobs, trace)
        }
        Command::Grid { spec, out, jobs, seeds } => grid(&spec, &out, jobs, seeds),
        Command::Pareto { input, out, by_label, feasible_only } => pareto(&input, out.as_deref(), by_label, feasible_only),
        Command::Report { input, json } => {
            let report = summarize(&load_rows(&input)?);
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{report}");
            }
            Ok(())
        }
        Command::Preset { kind, policy } => {
            let cfg = ScenarioConfig::preset(kind.into(), &policy)?;
            println!("{}", serde_json::to_string_pretty(&cfg)?);
            Ok(())
        }
    }
}

fn read_config(path: &Path) -> Result<ScenarioConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        b = b.num_threads(n.max(1));
    }
    Ok(b.build()?)
}

fn run(config: &Path, seeds: std::ops::Range<u64>, out: &Path, jobs: Option<usize>, trace: bool) -> Result<()> {
    if seeds.is_empty() {
        bail!("--seeds must be at least 1");
    }
    let mut cfg = read_config(config)?;
    cfg.record_trace |= trace;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let seeds: Vec<u64> = seeds.collect();
    let results: Vec<Result<SimResult, SimError>> =
        pool(jobs)?.install(|| seeds.par_iter().map(|s| run_simulation(&cfg, *s)).collect());

    let runs_path = out.join("runs.csv");
    let mut w = csv::Writer::from_path(&runs_path).with_context(|| format!("writing {}", runs_path.display()))?;
    w.write_record(["seed", "status", "rho_min_true", "rho_min_hat", "events", "sign_mismatches", "lane_changes"])?;
    let mut outcomes = Vec::new();
    for (seed, r) in seeds.iter().zip(&results) {
        match r {
            Ok(r) => {
                w.write_record([
                    seed.to_string(),
                    "ok".into(),
                    format!("{:?}", r.rho_min_true),
                    format!("{:?}", r.rho_min_hat),
                    r.total_events.to_string(),
                    r.sign_mismatches.to_string(),
                    r.lane_changes.to_string(),
                ])?;
                outcomes.push(RunOutcome::Completed { rho_min: r.rho_min_true, events: r.total_events });
                if r.trace.is_some() {
                    let p = out.join(format!("trace_seed{seed}.csv"));
                    let f = fs::File::create(&p).with_context(|| format!("writing {}", p.display()))?;
                    r.write_trace_csv(std::io::BufWriter::new(f))?;
                }
            }
            Err(SimError::Collision { t, gap }) => {
                w.write_record([seed.to_string(), format!("collision t={t:.2} gap={gap:.3}"), "".into(), "".into(), "".into(), "".into(), "".into()])?;
                outcomes.push(RunOutcome::Collided);
            }
            Err(e) => bail!("seed {seed}: {e}"),
        }
    }
    w.flush()?;
    let row = aggregate(cfg.policy.name(), Vec::new(), &outcomes, 0.0);
    emit(std::slice::from_ref(&row), Format::Csv, &out.join("rows.csv"))?;
    println!(
        "{}: rho_min {:.3}, m {:.1} +- {:.1}, feasible {}, {} collisions over {} seeds",
        row.label, row.rho_min, row.m_mean, row.m_std, row.feasible, row.failures, row.runs
    );
    Ok(())
}

fn grid(spec_path: &Path, out: &Path, jobs: Option<usize>, seeds: Option<u64>) -> Result<()> {
    let mut spec = ExperimentSpec::from_json_file(spec_path)?;
    if let Some(n) = seeds {
        spec.seeds = (0..n).collect();
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let rows = run_grid(&spec, jobs)?;
    emit(&rows, Format::Csv, &out.join("rows.csv"))?;
    emit(&rows, Format::Json, &out.join("rows.json"))?;
    emit(&fronts(&rows, true, true), Format::Csv, &out.join("pareto.csv"))?;
    let report = summarize(&rows);
    fs::write(out.join("summary.txt"), report.to_string())?;
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&report)?)?;
    print!("{report}");
    Ok(())
}

fn fronts(rows: &[plett::ExperimentRow], by_label: bool, feasible_only: bool) -> Vec<plett::ExperimentRow> {
    let rows: Vec<_> = rows.iter().filter(|r| !feasible_only || r.feasible).cloned().collect();
    if !by_label {
        return pareto_front(&rows);
    }
    group_rows(&rows)
        .into_iter()
        .flat_map(|g| pareto_front(&g.into_iter().cloned().collect::<Vec<_>>()))
        .collect()
}

fn pareto(input: &Path, out: Option<&Path>, by_label: bool, feasible_only: bool) -> Result<()> {
    let front = fronts(&load_rows(input)?, by_label, feasible_only);
    match out {
        Some(p) => {
            let format = Format::from_path(p).context("output extension must be .csv or .json")?;
            emit(&front, format, p)?;
        }
        None => plett::experiment::write_csv(&front, std::io::stdout().lock())?,
    }
    Ok(())
}
