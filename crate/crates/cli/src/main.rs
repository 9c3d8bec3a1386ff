use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dmev::cluster::{run_worker, ClusterConfig, LocalMethod, Mode, WorkerTask};
use dmev::diagnostics::{make_synthetic_n, Scenario};
use dmev::rjmcmc::BetaBinomial;
use dmev::sharding::{ShardPlan, Strategy, DEFAULT_KMEANS_K};
use dmev::{Dataset, Error, Result, Shard};

use dmev_cli::config::{load_models, write_model, RunConfig};
use dmev_cli::diagnose::{run_diagnose, DiagnoseRun};
use dmev_cli::pipeline::{combine_dir, make_plan, plan_seed, run_pipeline};
use dmev_cli::report::emit_report;
use dmev_cli::rj::{parse_pair, run_rj, RjRun};

#[derive(Parser)]
#[command(name = "dmev", version, about = "Sharded marginal-likelihood estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset and its model suite.
    Synth {
        #[arg(long)]
        scenario: Scenario,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Partition a dataset into S shards and write the plan.
    Shard {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        splits: usize,
        #[arg(long, default_value = "uniform")]
        strategy: Strategy,
        #[arg(long, default_value_t = DEFAULT_KMEANS_K)]
        kmeans_k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "plan.json")]
        out: PathBuf,
    },
    /// Run the worker of one shard and write its result files.
    Worker(WorkerArgs),
    /// Combine worker results found in a directory.
    Combine {
        #[arg(long = "model", required = true)]
        models: Vec<PathBuf>,
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value = "approx")]
        mode: Mode,
    },
    /// Shard, run all workers and combine.
    Run(RunArgs),
    /// Reversible-jump model search per shard and distributed Bayes factors.
    Rjmcmc(RjArgs),
    /// Repeated synthetic runs over several S with error metrics.
    Diagnose(DiagnoseArgs),
    /// Rebuild report.csv and print the summary of a run directory.
    Report { dir: PathBuf },
}

#[derive(Args)]
struct WorkerArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    shard: usize,
    #[arg(long, default_value = "approx")]
    mode: Mode,
    #[arg(long, default_value = "importance")]
    evidence: LocalMethod,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long, default_value_t = 2_000)]
    burn_in: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    importance_draws: Option<usize>,
    #[arg(long)]
    inflation: Option<f64>,
    #[arg(long)]
    analytic_moments: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// JSON file mirroring the run configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long = "model")]
    models: Vec<PathBuf>,
    #[arg(long)]
    splits: Option<usize>,
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long)]
    kmeans_k: Option<usize>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    evidence: Option<LocalMethod>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    importance_draws: Option<usize>,
    #[arg(long)]
    inflation: Option<f64>,
    #[arg(long)]
    analytic_moments: bool,
    #[arg(long)]
    timings: bool,
    #[arg(long, short)]
    verbose: bool,
}

#[derive(Args)]
struct RjArgs {
    #[arg(long)]
    data: PathBuf,
    /// Base model listing every candidate feature.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 1)]
    splits: usize,
    #[arg(long, default_value = "uniform")]
    strategy: Strategy,
    #[arg(long, default_value_t = dmev::rjmcmc::DEFAULT_ITERATIONS)]
    samples: usize,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    parallelism: usize,
    /// Zero-based coefficient indices kept in every model.
    #[arg(long, value_delimiter = ',')]
    always_active: Vec<usize>,
    #[arg(long, default_value_t = 1.0)]
    prior_a: f64,
    #[arg(long, default_value_t = 1.0)]
    prior_b: f64,
    #[arg(long, default_value_t = dmev::rjmcmc::DEFAULT_MIN_VISITS)]
    min_visits: u64,
    /// Model pair `KEY1:KEY2` of bit-string keys; repeatable.
    #[arg(long)]
    compare: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long)]
    scenario: Scenario,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,5,10")]
    splits: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    repetitions: usize,
    #[arg(long, default_value = "approx")]
    mode: Mode,
    #[arg(long, default_value = "importance")]
    evidence: LocalMethod,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long, default_value_t = 2_000)]
    burn_in: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    parallelism: usize,
    #[arg(long)]
    analytic_moments: bool,
    #[arg(long)]
    timings: bool,
    #[arg(long)]
    out: PathBuf,
}

fn run_config(args: RunArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(v) = args.data {
        cfg.data = v;
    }
    if !args.models.is_empty() {
        cfg.models = args.models;
    }
    if let Some(v) = args.splits {
        cfg.splits = v;
    }
    if let Some(v) = args.strategy {
        cfg.strategy = v;
    }
    if let Some(v) = args.kmeans_k {
        cfg.kmeans_k = v;
    }
    if let Some(v) = args.mode {
        cfg.mode = v;
    }
    if let Some(v) = args.evidence {
        cfg.evidence = v;
    }
    if let Some(v) = args.samples {
        cfg.samples = v;
    }
    if let Some(v) = args.burn_in {
        cfg.burn_in = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.parallelism {
        cfg.parallelism = v;
    }
    if let Some(v) = args.out {
        cfg.out = v;
    }
    if let Some(v) = args.importance_draws {
        cfg.importance_draws = v;
    }
    if let Some(v) = args.inflation {
        cfg.inflation = v;
    }
    cfg.analytic_moments |= args.analytic_moments;
    cfg.timings |= args.timings;
    cfg.verbose |= args.verbose;
    Ok(cfg)
}

fn read_data(path: &Path) -> Result<Dataset> {
    if !path.is_file() {
        return Err(Error::Input(format!("data file {} does not exist", path.display())));
    }
    Dataset::from_csv(path)
}

fn single_model(path: &Path) -> Result<dmev::ModelSpec> {
    let mut models = load_models(&[path.to_path_buf()])?;
    if models.len() != 1 {
        return Err(Error::Config(format!("{} must contain exactly one model", path.display())));
    }
    Ok(models.remove(0))
}

fn print_report_warnings(report: &dmev_cli::Report) {
    for w in &report.warnings {
        eprintln!("{}", serde_json::json!({ "warning": w, "partial": true }));
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth { scenario, n, seed, out } => {
            let (data, models) = make_synthetic_n(scenario, n.unwrap_or(scenario.default_n()), seed)?;
            std::fs::create_dir_all(&out)?;
            data.to_csv(&out.join("data.csv"))?;
            println!("{}", out.join("data.csv").display());
            for m in &models {
                let path = out.join(format!("model_{}.json", m.model_id));
                write_model(&path, m)?;
                println!("{}", path.display());
            }
        }
        Command::Shard {
            data,
            splits,
            strategy,
            kmeans_k,
            seed,
            out,
        } => {
            let data = read_data(&data)?;
            let plan = make_plan(&data, splits, strategy, kmeans_k, plan_seed(seed))?;
            plan.write_file(&out)?;
            let sizes = plan.sizes()?;
            println!("{} shards of sizes {:?} written to {}", plan.splits, sizes, out.display());
        }
        Command::Worker(a) => {
            let data = read_data(&a.data)?;
            let model = single_model(&a.model)?;
            let plan = ShardPlan::read_file(&a.plan)?;
            plan.validate(data.n)?;
            if a.shard >= plan.splits {
                return Err(Error::Config(format!("shard {} out of range for S = {}", a.shard, plan.splits)));
            }
            let shard = Shard::new(&data, a.shard, plan.rows(a.shard))?;
            let mut config = ClusterConfig::new(a.mode, a.evidence);
            config.n_samples = a.samples;
            config.burn_in = a.burn_in;
            config.master_seed = a.seed;
            config.parallelism = 1;
            config.analytic_moments = a.analytic_moments;
            if let Some(v) = a.importance_draws {
                config.importance_draws = v;
            }
            if let Some(v) = a.inflation {
                config.inflation = v;
            }
            config.validate(&model)?;
            let output = run_worker(&WorkerTask::new(shard, model, plan.splits, config))?;
            std::fs::create_dir_all(&a.out)?;
            output.write_to_dir(&a.out)?;
            println!("shard {}: {} payload bytes", a.shard, output.payload_bytes()?);
        }
        Command::Combine { models, dir, mode } => {
            let models = load_models(&models)?;
            combine_dir(&dir, &models, mode)?;
            let report = emit_report(&dir)?;
            print_report_warnings(&report);
            print!("{}", report.summary);
        }
        Command::Run(args) => {
            let cfg = run_config(args)?;
            let summary = run_pipeline(&cfg)?;
            print_report_warnings(&summary.report);
            print!("{}", summary.report.summary);
        }
        Command::Rjmcmc(a) => {
            let model = single_model(&a.model)?;
            let mut run = RjRun::new(a.data, model);
            run.splits = a.splits;
            run.strategy = a.strategy;
            run.samples = a.samples;
            run.burn_in = a.burn_in.unwrap_or(a.samples / 5);
            run.seed = a.seed;
            run.parallelism = a.parallelism;
            run.always_active = a.always_active;
            run.model_prior = BetaBinomial {
                a: a.prior_a,
                b: a.prior_b,
            };
            run.min_visits = a.min_visits;
            run.compare = a.compare.iter().map(|s| parse_pair(s)).collect::<Result<_>>()?;
            run.out = Some(a.out);
            let summary = run_rj(&run)?;
            for o in &summary.outputs {
                let mut counts: Vec<_> = o.models.iter().map(|(k, s)| (s.visits, k.as_str())).collect();
                counts.sort_by(|x, y| y.cmp(x));
                println!("shard {}: {} models visited", o.shard_id, counts.len());
                for (v, k) in counts.iter().take(10) {
                    println!("  {k} {v}");
                }
            }
            for bf in &summary.bayes_factors {
                println!("log BF {}/{} = {:.4}", bf.m1, bf.m2, bf.log_bf);
            }
        }
        Command::Diagnose(a) => {
            let run = DiagnoseRun {
                scenario: a.scenario,
                n: a.n,
                splits: a.splits,
                repetitions: a.repetitions,
                mode: a.mode,
                evidence: a.evidence,
                samples: a.samples,
                burn_in: a.burn_in,
                seed: a.seed,
                parallelism: a.parallelism,
                analytic_moments: a.analytic_moments,
                timings: a.timings,
                out: a.out,
            };
            let summary = run_diagnose(&run)?;
            for (id, (v, source)) in &summary.references {
                println!("reference {id}: {v:.6} ({source})");
            }
            println!("{:<12} {:>4} {:>12} {:>10} {:>12}", "model", "S", "rmse", "%rmse", "bias2/var");
            for (id, m) in &summary.metrics {
                println!(
                    "{id:<12} {:>4} {:>12.6} {:>10.4} {:>12.4}",
                    m.splits, m.rmse, m.pct_rmse, m.bias_sq_over_var
                );
            }
        }
        Command::Report { dir } => {
            let report = emit_report(&dir)?;
            print_report_warnings(&report);
            print!("{}", report.summary);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", dmev_cli::error_json(&e));
            ExitCode::FAILURE
        }
    }
}
