use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dynbatch::adversary::{run_adversary, worst_pair_search, AdversaryConfig, Epsilon};
use dynbatch::cost::{Violation, Witness};
use dynbatch::io::{
    load_arrivals, save_arrivals, write_adversary_report, write_results, write_summary, SummaryRow,
};
use dynbatch::offline::BRUTE_FORCE_MAX_N;
use dynbatch::sim::{default_wta, run_study, summarize, GridPoint, RateFunction, StudyConfig};
use dynbatch::{
    brute_force_optimum, gamma, osp, run_policy, validate_cost_function, CostFunction, FeatureId,
    FeatureMultiset, PolicyConfig, ProblemInstance, Schedule, ScheduleCost,
};

#[derive(Parser)]
#[command(
    name = "dynbatch",
    version,
    about = "Batch arrivals to balance waiting time against processing cost"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimal offline schedule for an arrivals file
    Offline(FileArgs),
    /// Run an online policy on an arrivals file
    Online {
        #[command(flatten)]
        file: FileArgs,
        #[command(flatten)]
        policy: PolicyArgs,
    },
    /// Monte-Carlo study on Poisson arrivals
    Simulate(SimulateArgs),
    /// Adaptive lower-bound construction against a policy
    Adversary(AdversaryArgs),
    /// Print the curvature Γ of a cost function
    Gamma {
        #[arg(long, value_parser = parse_cost)]
        cost: CostFunction,
        /// Largest batch size searched for tabulated costs
        #[arg(long, default_value_t = 64)]
        max_batch: usize,
    },
    /// Check that a cost function is zero on the empty batch, monotone and subadditive
    Validate {
        #[arg(long, value_parser = parse_cost)]
        cost: CostFunction,
        #[arg(long, default_value_t = 64)]
        max_batch: usize,
        /// Number of features for set functions
        #[arg(long, default_value_t = 1)]
        universe: usize,
        /// Random pairs checked for set functions
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Exhaustive optimum for a small arrivals file
    Oracle {
        #[command(flatten)]
        file: FileArgs,
        #[arg(long, default_value_t = BRUTE_FORCE_MAX_N)]
        max_n: usize,
    },
}

#[derive(Args)]
struct FileArgs {
    /// CSV with header `time[,feature]`
    #[arg(long)]
    arrivals: PathBuf,
    #[arg(long, value_parser = parse_cost)]
    cost: CostFunction,
}

#[derive(Args)]
struct PolicyArgs {
    /// `wta:<alpha>`, `wte`, `fixed-size:<k>` or `fixed-delay:<d>`
    #[arg(long, value_parser = parse_policy, conflicts_with = "alpha")]
    policy: Option<PolicyConfig>,
    /// WaitTillAlpha parameter; defaults to Γ of the cost function
    #[arg(long)]
    alpha: Option<f64>,
}

impl PolicyArgs {
    fn resolve(&self, f: &CostFunction) -> Result<PolicyConfig> {
        Ok(match (self.policy, self.alpha) {
            (Some(p), _) => p,
            (None, Some(a)) => PolicyConfig::wta(a)?,
            (None, None) => default_wta(f)?,
        })
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_parser = parse_cost)]
    cost: CostFunction,
    /// Repeatable; defaults to WaitTillAlpha with α = --alpha or Γ
    #[arg(long, value_parser = parse_policy)]
    policy: Vec<PolicyConfig>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Arrivals per instance; comma-separated values form a grid
    #[arg(long, value_delimiter = ',', default_value = "30")]
    n: Vec<usize>,
    /// Constant arrival rates; comma-separated values form a grid
    #[arg(long, value_delimiter = ',', conflicts_with = "rate_fn")]
    rate: Vec<f64>,
    /// Time-varying rate, e.g. `sin:<base>,<amp>,<period>`
    #[arg(long, value_parser = parse_rate)]
    rate_fn: Option<RateFunction>,
    #[arg(long, default_value_t = 1000)]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads, 0 for all cores
    #[arg(long, default_value_t = 0)]
    parallelism: usize,
    /// Per-trial results CSV
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AdversaryArgs {
    #[arg(long, value_parser = parse_cost)]
    cost: CostFunction,
    #[command(flatten)]
    policy: PolicyArgs,
    #[arg(long, default_value_t = 200)]
    rounds: usize,
    /// Absolute gap between a processing time and the next wave; by default
    /// 1e-6 times the policy's first processing delay
    #[arg(long)]
    epsilon: Option<f64>,
    /// Size of the first group (all feature 0)
    #[arg(long, default_value_t = 1, conflicts_with = "worst_pair")]
    x1: u32,
    /// Size of the second group (all feature 0)
    #[arg(long, default_value_t = 1, conflicts_with = "worst_pair")]
    x2: u32,
    /// Pick the groups maximizing the lower bound, up to this combined size
    #[arg(long)]
    worst_pair: Option<usize>,
    /// Write the constructed arrivals here
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_cost(s: &str) -> Result<CostFunction, String> {
    s.parse().map_err(|e: dynbatch::Error| e.to_string())
}

fn parse_policy(s: &str) -> Result<PolicyConfig, String> {
    s.parse().map_err(|e: dynbatch::Error| e.to_string())
}

fn parse_rate(s: &str) -> Result<RateFunction, String> {
    s.parse().map_err(|e: dynbatch::Error| e.to_string())
}

fn load(path: &PathBuf) -> Result<ProblemInstance> {
    let loaded = load_arrivals(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(loaded.instance)
}

fn print_schedule(out: &mut impl Write, sched: &Schedule, cost: &ScheduleCost) -> io::Result<()> {
    for (k, b) in sched.batches().iter().enumerate() {
        writeln!(
            out,
            "batch {}: samples {}-{} at {}",
            k + 1,
            b.range.start + 1,
            b.range.end,
            b.time
        )?;
    }
    writeln!(out, "J = {}", cost.total)?;
    writeln!(out, "W = {}", cost.wait)?;
    writeln!(out, "F = {}", cost.processing)
}

fn witness(w: &Witness) -> String {
    match w {
        Witness::Count(k) => format!("|X|={k}"),
        Witness::Set(x) => {
            let items: Vec<String> = x.iter().map(|(id, c)| format!("{id}x{c}")).collect();
            format!("{{{}}}", items.join(" "))
        }
    }
}

fn describe(v: &Violation) -> String {
    match v {
        Violation::NonZeroEmpty { value } => format!("f(empty) = {value}"),
        Violation::NotMonotone {
            subset,
            superset,
            f_subset,
            f_superset,
        } => format!(
            "not monotone: f({}) = {f_subset} > f({}) = {f_superset}",
            witness(subset),
            witness(superset)
        ),
        Violation::NotSubadditive {
            x,
            y,
            f_x,
            f_y,
            f_union,
        } => format!(
            "not subadditive: f({} + {}) = {f_union} > {f_x} + {f_y}",
            witness(x),
            witness(y)
        ),
    }
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let policies = if args.policy.is_empty() {
        vec![PolicyArgs {
            policy: None,
            alpha: args.alpha,
        }
        .resolve(&args.cost)?]
    } else {
        args.policy
    };
    let rates = match (args.rate_fn, args.rate.is_empty()) {
        (Some(r), _) => vec![r],
        (None, true) => vec![RateFunction::constant(2.0)?],
        (None, false) => args
            .rate
            .iter()
            .map(|&r| RateFunction::constant(r))
            .collect::<Result<_, _>>()?,
    };
    let points = rates
        .iter()
        .flat_map(|rate| {
            args.n.iter().map(move |&n| GridPoint {
                rate: rate.clone(),
                n,
            })
        })
        .collect();
    let cfg = StudyConfig {
        points,
        policies,
        cost: args.cost,
        trials: args.trials,
        seed: args.seed,
        parallelism: args.parallelism,
    };
    let results = run_study(&cfg)?;
    if let Some(path) = &args.out {
        let all: Vec<_> = results
            .iter()
            .flat_map(|p| p.records.iter().cloned())
            .collect();
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        write_results(file, &all)?;
    }
    let mut rows = Vec::new();
    for pt in &results {
        for p in &cfg.policies {
            rows.push(SummaryRow {
                rate: pt.point.rate.to_string(),
                n: pt.point.n,
                policy: p.to_string(),
                summary: summarize(&pt.for_policy(p))?,
            });
        }
    }
    write_summary(io::stdout(), &rows)?;
    Ok(())
}

fn adversary(args: AdversaryArgs) -> Result<()> {
    let policy = args.policy.resolve(&args.cost)?;
    let (x1, x2) = match args.worst_pair {
        Some(cap) => {
            let w = worst_pair_search(&args.cost, cap)?;
            (w.x1, w.x2)
        }
        None => (
            FeatureMultiset::repeated(FeatureId(0), args.x1),
            FeatureMultiset::repeated(FeatureId(0), args.x2),
        ),
    };
    let mut cfg = AdversaryConfig::new(x1, x2, args.rounds);
    if let Some(e) = args.epsilon {
        cfg = cfg.with_epsilon(Epsilon::Absolute(e));
    }
    let report = run_adversary(policy, &args.cost, &cfg)?;
    if report.wave_split {
        log::warn!(
            "the policy split a wave across batches; the benchmark accounting assumes it does not"
        );
    }
    write_adversary_report(
        io::stdout(),
        &policy.to_string(),
        &args.cost.label(),
        args.rounds,
        &report,
    )?;
    if let Some(path) = &args.out {
        save_arrivals(path, &report.instance)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut out = io::stdout().lock();
    match cli.command {
        Command::Offline(args) => {
            let inst = load(&args.arrivals)?;
            let sol = osp(&inst, &args.cost)?;
            print_schedule(&mut out, &sol.schedule, &sol.cost)?;
        }
        Command::Online { file, policy } => {
            let inst = load(&file.arrivals)?;
            let p = policy.resolve(&file.cost)?;
            let res = run_policy(&inst, &file.cost, p)?;
            writeln!(out, "policy {p}")?;
            print_schedule(&mut out, &res.schedule, &res.cost)?;
        }
        Command::Oracle { file, max_n } => {
            let inst = load(&file.arrivals)?;
            let sol = brute_force_optimum(&inst, &file.cost, max_n)?;
            print_schedule(&mut out, &sol.schedule, &sol.cost)?;
        }
        Command::Simulate(args) => simulate(args)?,
        Command::Adversary(args) => adversary(args)?,
        Command::Gamma { cost, max_batch } => {
            let g = gamma(&cost, max_batch)?;
            writeln!(out, "{}", g.value)?;
            if g.is_upper_bound() {
                log::warn!("sampled estimate; the true Γ may be smaller");
            }
        }
        Command::Validate {
            cost,
            max_batch,
            universe,
            samples,
            seed,
        } => {
            let report = validate_cost_function(&cost, universe, max_batch, samples, seed)?;
            for v in &report.violations {
                writeln!(out, "{}", describe(v))?;
            }
            if !report.is_ok() {
                bail!(
                    "{} violations of the cost function assumptions",
                    report.violations.len()
                );
            }
            writeln!(
                out,
                "ok: checked sizes up to {} over {} pairs",
                report.checked_up_to, report.pairs_checked
            )?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
