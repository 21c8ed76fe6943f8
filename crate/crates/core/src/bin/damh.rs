use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use damh::delayed::OrderKind;
use damh::experiment::{
    bench_sweep, compare, run_experiment, write_bench, AlgoVariant, Comparison, ExperimentConfig, ModelKind,
    ReportFile,
};
use damh::prefetch::BranchKind;

#[derive(Parser)]
#[command(name = "damh", version, about = "Delayed-acceptance Metropolis-Hastings with prefetching")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one chain and write samples.csv and report.json.
    Run(RunArgs),
    /// Relative gain of a DA report over an MH report.
    Compare { report_da: PathBuf, report_mh: PathBuf },
    /// Sweep cost levels and worker counts, writing one CSV row per cell.
    Bench {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_value = "0,10,100")]
        costs: Vec<u64>,
        #[arg(long = "worker-grid", value_delimiter = ',', default_value = "1,2,4,8")]
        worker_grid: Vec<usize>,
    },
}

#[derive(Args, Clone, Default)]
struct RunArgs {
    /// TOML file whose keys are experiment config fields; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    algo: Option<AlgoVariant>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    data_seed: Option<u64>,
    #[arg(long, env = "DAMH_WORKERS")]
    workers: Option<usize>,
    #[arg(long)]
    iters: Option<u64>,
    #[arg(long)]
    burnin: Option<u64>,
    #[arg(long)]
    thin: Option<u64>,
    #[arg(long)]
    split_r: Option<f64>,
    #[arg(long)]
    parts: Option<usize>,
    #[arg(long)]
    cost_c: Option<u64>,
    #[arg(long)]
    policy: Option<BranchKind>,
    #[arg(long)]
    beta_cap: Option<f64>,
    #[arg(long)]
    order_policy: Option<OrderKind>,
    #[arg(long)]
    refresh_every: Option<u64>,
    #[arg(long)]
    adapt: bool,
    #[arg(long)]
    n_obs: Option<usize>,
    #[arg(long)]
    proposal_scale: Option<f64>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory for `run`, output CSV path for `bench`.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::from_toml_file(p).with_context(|| format!("reading {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => {$( if let Some(v) = self.$f.clone() { c.$f = v; } )*};
        }
        set!(model, algo, seed, workers, iters, burnin, thin, parts, cost_c, policy, beta_cap);
        set!(order_policy, refresh_every, n_obs, out);
        if self.split_r.is_some() {
            c.split_r = self.split_r;
        }
        if self.data_seed.is_some() {
            c.data_seed = self.data_seed;
        }
        if self.proposal_scale.is_some() {
            c.proposal_scale = self.proposal_scale;
        }
        if self.data.is_some() {
            c.data = self.data.clone();
        }
        c.adapt |= self.adapt;
        c.validate()?;
        Ok(c)
    }
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        // Downstream closed the pipe; nothing left to report.
        Err(e) if e.downcast_ref::<io::Error>().is_some_and(|e| e.kind() == io::ErrorKind::BrokenPipe) => {
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> Result<()> {
    let cli = Cli::parse();
    let mut out = io::stdout().lock();
    match cli.command {
        Command::Run(args) => {
            let config = args.resolve()?;
            let outcome = run_experiment(&config)?;
            let r = &outcome.report.report;
            writeln!(
                out,
                "model={:?} algo={} samples={} acceptance={:.4} ess={:.1} wall={:.3}s draws/iter={:.3}",
                config.model, config.algo, r.samples, r.acceptance_rate, r.ess, r.wall_seconds, r.draws_per_iteration
            )?;
            writeln!(out, "wrote {} and {}", outcome.samples_path.display(), outcome.report_path.display())?;
        }
        Command::Compare { report_da, report_mh } => {
            let a = ReportFile::read(&report_da).with_context(|| format!("reading {}", report_da.display()))?;
            let b = ReportFile::read(&report_mh).with_context(|| format!("reading {}", report_mh.display()))?;
            let cmp = compare(&a, &b)?;
            writeln!(out, "{}", Comparison::header())?;
            writeln!(out, "{}", cmp.row())?;
        }
        Command::Bench { run, costs, worker_grid } => {
            let mut config = run.resolve()?;
            let csv_path = run.out.clone().unwrap_or_else(|| PathBuf::from("bench.csv"));
            config.out = PathBuf::new();
            let rows = bench_sweep(&config, &costs, &worker_grid)?;
            for r in &rows {
                writeln!(
                    out,
                    "cost_c={} workers={} rg={:.3} t_da={:.3} t_mh={:.3}",
                    r.cost_c, r.workers, r.rg, r.t_da, r.t_mh
                )?;
            }
            write_bench(&csv_path, &rows)?;
            writeln!(out, "wrote {}", csv_path.display())?;
        }
    }
    Ok(())
}
