use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};

use tpsim::config::{scenario_index, THETA_GRID};
use tpsim::dgm::{generate_trial, true_estimand};
use tpsim::harness::{self, PowerRule, RunPlan, ScenarioSpec, DEFAULT_REPLICATES, DEFAULT_TRUTH_N};
use tpsim::mi::DEFAULT_IMPUTATIONS;
use tpsim::{DfMethod, IeMechanism, Method, ScenarioConfig, ShiftModel};

/// Environment variable that replaces the default output directory.
const OUT_DIR_ENV: &str = "TPSIM_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "tpsim-out";

#[derive(Parser)]
#[command(name = "tpsim", version, about = "Treatment-policy estimator simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate replicates over a scenario grid and write results.csv / replicates.csv.
    Run(RunArgs),
    /// Large-sample true treatment effect with its Monte Carlo SE.
    Truth(TruthArgs),
    /// Check a configuration and print the resolved parameter tables.
    ValidateConfig(ConfigArgs),
    /// Write one generated trial as CSV.
    DumpDataset(DumpArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML configuration; the bundled defaults are used when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct ScenarioArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Intercurrent-event mechanism: dar, dnar or all.
    #[arg(long, default_value = "dar")]
    mechanism: String,
    /// Off-treatment shift model: instant, gradual or all.
    #[arg(long, default_value = "instant")]
    shift: String,
    /// Root seed (overrides the configuration).
    #[arg(long)]
    seed: Option<u64>,
    /// Generate both arms from the control parameters.
    #[arg(long)]
    null: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Withdrawal probability on the scenario grid, or `all`.
    #[arg(long, default_value = "0.1")]
    theta: String,
    /// Accept theta values outside the scenario grid.
    #[arg(long)]
    allow_offgrid: bool,
    /// Comma-separated methods (FULL, MMRM1-3, MI1-3, J2R, CIR, CR) or `all`.
    #[arg(long, default_value = "all")]
    methods: String,
    #[arg(long, default_value_t = DEFAULT_REPLICATES)]
    nsims: usize,
    #[arg(long, default_value_t = DEFAULT_IMPUTATIONS)]
    imputations: usize,
    /// Output directory (default: $TPSIM_OUT_DIR or ./tpsim-out).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Patients per arm for the true effect.
    #[arg(long, default_value_t = DEFAULT_TRUTH_N)]
    truth_n: usize,
    /// Denominator degrees of freedom for MMRM: kr or satterthwaite.
    #[arg(long, default_value = "kr")]
    df: String,
    /// Power rule: ci or ttest.
    #[arg(long, default_value = "ci")]
    power_rule: String,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Write fits and first imputations of replicate 0 of each scenario to this directory.
    #[arg(long, value_name = "DIR")]
    diagnostics: Option<PathBuf>,
    /// Write zero wall times so output is byte-reproducible.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Args)]
struct TruthArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value_t = DEFAULT_TRUTH_N)]
    truth_n: usize,
}

#[derive(Args)]
struct DumpArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value = "0.1")]
    theta: String,
    #[arg(long)]
    allow_offgrid: bool,
    #[arg(long, default_value_t = 0)]
    replicate: u64,
    /// Output file (default: stdout).
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<tpsim::Error> for Failure {
    fn from(e: tpsim::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn usage<T: std::fmt::Display>(e: T) -> Failure {
    Failure::Usage(e.to_string())
}

fn load_config(args: &ConfigArgs) -> Result<ScenarioConfig, Failure> {
    match &args.config {
        Some(p) => Ok(ScenarioConfig::from_file(p)?),
        None => Ok(ScenarioConfig::pioneer1_defaults()),
    }
}

fn parse_all<T: std::str::FromStr>(s: &str, all: &[T]) -> Result<Vec<T>, Failure>
where
    T: Copy,
    T::Err: std::fmt::Display,
{
    if s.eq_ignore_ascii_case("all") {
        return Ok(all.to_vec());
    }
    s.split(',').map(|x| x.trim().parse::<T>().map_err(usage)).collect()
}

fn grid_text() -> String {
    THETA_GRID.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(", ")
}

fn parse_thetas(s: &str, allow_offgrid: bool) -> Result<Vec<f64>, Failure> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(THETA_GRID.to_vec());
    }
    let t: f64 = s.parse().map_err(|_| usage(format!("invalid theta `{s}`")))?;
    if !(t > 0.0 && t < 1.0) {
        return Err(usage(format!("theta must lie in (0, 1), got {t}")));
    }
    if scenario_index(t).is_none() && !allow_offgrid {
        return Err(usage(format!(
            "theta {t} is not on the scenario grid ({}); pass --allow-offgrid to use it",
            grid_text()
        )));
    }
    Ok(vec![t])
}

/// Base configuration plus the selected mechanisms and shifts.
fn resolve(args: &ScenarioArgs) -> Result<(ScenarioConfig, Vec<IeMechanism>, Vec<ShiftModel>), Failure> {
    let mut cfg = load_config(&args.config)?;
    if let Some(s) = args.seed {
        cfg.root_seed = s;
    }
    if args.null {
        cfg.null_mode = true;
    }
    let mechanisms = parse_all(&args.mechanism, &[IeMechanism::Dar, IeMechanism::Dnar])?;
    let shifts = parse_all(&args.shift, &[ShiftModel::Instant, ShiftModel::Gradual])?;
    Ok((cfg, mechanisms, shifts))
}

fn out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

fn cmd_run(args: RunArgs) -> Outcome {
    let (mut base, mechanisms, shifts) = resolve(&args.scenario)?;
    let thetas = parse_thetas(&args.theta, args.allow_offgrid)?;
    base.allow_offgrid = base.allow_offgrid || args.allow_offgrid;
    let mut plan = RunPlan::new(base, ScenarioSpec::grid(&mechanisms, &shifts, &thetas));
    plan.methods = parse_all(&args.methods, &Method::ALL)?;
    plan.n_reps = args.nsims;
    plan.imputations = args.imputations;
    plan.truth_n = args.truth_n;
    plan.df_method = args.df.parse::<DfMethod>().map_err(usage)?;
    plan.power_rule = args.power_rule.parse::<PowerRule>().map_err(usage)?;
    plan.threads = args.threads;
    plan.record_timing = !args.no_timing;
    if args.threads == Some(0) {
        return Err(usage("--threads must be positive"));
    }
    plan.validate().map_err(usage)?;

    if let Some(dir) = &args.diagnostics {
        for s in &plan.scenarios {
            harness::write_replicate_diagnostics(&plan, s, 0, &dir.join(s.id(plan.null_mode())))?;
        }
    }
    let results = harness::run_plan(&plan)?;
    let out = out_dir(args.out);
    harness::write_results(&results, &out)?;
    let mut stdout = io::stdout().lock();
    for s in &results {
        for (m, oc) in &s.summaries {
            writeln!(stdout, "{}\t{}\t{}", s.id, m, oc)?;
        }
    }
    writeln!(stdout, "wrote {}", out.display())?;
    Ok(())
}

fn cmd_truth(args: TruthArgs) -> Outcome {
    let (base, mechanisms, shifts) = resolve(&args.scenario)?;
    if args.truth_n < 2 {
        return Err(usage("--truth-n must be at least 2"));
    }
    let mut stdout = io::stdout().lock();
    for s in ScenarioSpec::grid(&mechanisms, &shifts, &[base.missingness_theta]) {
        let cfg = s.config(&base);
        cfg.validate().map_err(usage)?;
        let t = true_estimand(&cfg, args.truth_n)?;
        writeln!(
            stdout,
            "{} {}\t{:.6}\tMC SE {:.6}\tn_per_arm {}",
            s.mechanism.label(),
            s.shift.label(),
            t.delta,
            t.mcse,
            t.n_per_arm
        )?;
    }
    Ok(())
}

fn cmd_validate(args: ConfigArgs) -> Outcome {
    let cfg = load_config(&args)?;
    cfg.validate()?;
    print!("{}", cfg.render_tables());
    Ok(())
}

fn cmd_dump(args: DumpArgs) -> Outcome {
    let (mut base, mechanisms, shifts) = resolve(&args.scenario)?;
    let thetas = parse_thetas(&args.theta, args.allow_offgrid)?;
    base.allow_offgrid = base.allow_offgrid || args.allow_offgrid;
    if mechanisms.len() != 1 || shifts.len() != 1 {
        return Err(usage("dump-dataset needs a single mechanism and shift"));
    }
    let cfg = ScenarioSpec::new(mechanisms[0], shifts[0], thetas[0]).config(&base);
    cfg.validate().map_err(usage)?;
    let data = generate_trial(&cfg, args.replicate)?;
    match &args.out {
        Some(p) => data.write_csv(create(p)?)?,
        None => data.write_csv(io::stdout().lock())?,
    }
    Ok(())
}

fn create(p: &Path) -> io::Result<File> {
    if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    File::create(p)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Truth(a) => cmd_truth(a),
        Command::ValidateConfig(a) => cmd_validate(a),
        Command::DumpDataset(a) => cmd_dump(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => Cli::command().error(ErrorKind::ValueValidation, msg).exit(),
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
