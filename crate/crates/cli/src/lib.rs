//! `lmstar` command line: solve, datagen, bench, validate, weights-info.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 timeout or node limit,
//! 3 no solution under the policy, 4 invalid solution or golden mismatch.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use lmstar::bench::{
    aggregate, compare, conflict_counts, cost_ratio_report, format_cost_ratio_report,
    format_reduction_report, reduction_report, run_suite, write_csv, BenchRow, BenchmarkSuite,
    Planner,
};
use lmstar::datagen::{generate_dataset, DatasetConfig};
use lmstar::grid_world::{
    parse_scen, validate_solution, GridMap, InstanceFile, MapfInstance, Solution, SolutionFile,
};
use lmstar::model::{
    load_golden, load_weights, save_weights, LearnedPolicy, Model, ModelConfig, ModelWeights,
};
use lmstar::policy::DijkstraPolicy;
use lmstar::search::{mstar_plan, plan_with_fallback, PlanConfig, PlanOutcome, PlanStatus};
use lmstar::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_TIMEOUT: i32 = 2;
pub const EXIT_UNSOLVABLE: i32 = 3;
pub const EXIT_INVALID: i32 = 4;

/// Golden logits must match within this bound.
pub const GOLDEN_TOLERANCE: f32 = 1e-4;

#[derive(Debug, Parser)]
#[command(
    name = "lmstar",
    version,
    about = "Inflated M* and LM* multi-agent path finding"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Plan one instance and print a metrics line.
    Solve(SolveArgs),
    /// Generate an imitation dataset from expert solutions.
    Datagen(DatagenArgs),
    /// Run a benchmark suite and write CSV rows and reports.
    Bench(BenchArgs),
    /// Check a solution file against an instance.
    Validate(ValidateArgs),
    /// Inspect, check or create a weight file.
    WeightsInfo(WeightsInfoArgs),
}

#[derive(Debug, Args)]
pub struct InstanceArgs {
    /// JSON instance file (map inline or as a path relative to the file).
    #[arg(long, conflicts_with_all = ["map", "scen"])]
    pub instance: Option<PathBuf>,
    /// MovingAI `.map` file; use with --scen.
    #[arg(long, requires = "scen")]
    pub map: Option<PathBuf>,
    /// MovingAI `.scen` file; use with --map.
    #[arg(long, requires = "map")]
    pub scen: Option<PathBuf>,
    /// Number of scenario entries to use (default: all).
    #[arg(long, requires = "scen")]
    pub agents: Option<usize>,
}

impl InstanceArgs {
    fn load(&self) -> Result<MapfInstance> {
        match (&self.instance, &self.map, &self.scen) {
            (Some(path), _, _) => Ok(InstanceFile::load(path)?.0),
            (None, Some(map), Some(scen)) => {
                let grid = GridMap::parse(&read_text(map)?)?;
                let entries = parse_scen(&read_text(scen)?)?;
                let n = self.agents.unwrap_or(entries.len());
                MapfInstance::from_scen(grid, &entries, n)
            }
            _ => Err(Error::InvalidArgument(
                "give --instance, or --map with --scen".into(),
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SolvePlanner {
    Mstar,
    Lmstar,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub input: InstanceArgs,
    /// Individual policy: shortest paths (mstar) or the learned model (lmstar).
    #[arg(long, value_enum, default_value = "mstar")]
    pub planner: SolvePlanner,
    /// Heuristic inflation, at least 1.
    #[arg(long, default_value_t = 1.0)]
    pub epsilon: f64,
    /// Time limit in seconds.
    #[arg(long, default_value_t = 60.0)]
    pub time_limit: f64,
    /// Stop after this many generated nodes.
    #[arg(long)]
    pub node_limit: Option<u64>,
    /// LMW1 weight file for --planner lmstar.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Do not rerun with shortest-path policies when the learned policy finds no solution.
    #[arg(long)]
    pub no_fallback: bool,
    /// Write the solution as JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write per-cell conflict counts as JSON here.
    #[arg(long)]
    pub conflicts: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DatagenArgs {
    /// Output directory for train.lmd1, test.lmd1 and manifest.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Master seed; every map and instance seed derives from it.
    #[arg(long)]
    pub seed: u64,
    /// JSON generation config; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of maps.
    #[arg(long)]
    pub maps: Option<u32>,
    /// Map width.
    #[arg(long)]
    pub width: Option<u32>,
    /// Map height.
    #[arg(long)]
    pub height: Option<u32>,
    /// Obstacle probabilities to draw from, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub obstacles: Option<Vec<f64>>,
    /// Smallest agent count per map.
    #[arg(long)]
    pub min_agents: Option<u32>,
    /// Largest agent count per map.
    #[arg(long)]
    pub max_agents: Option<u32>,
    /// Expert inflation.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Expert time limit per instance, seconds.
    #[arg(long)]
    pub time_limit: Option<f64>,
    /// Fraction of joint vertices sampled per solution.
    #[arg(long)]
    pub vertex_rate: Option<f64>,
    /// Fraction of agents sampled per joint vertex.
    #[arg(long)]
    pub agent_rate: Option<f64>,
    /// Fraction of records in the training split.
    #[arg(long)]
    pub train_fraction: Option<f64>,
    /// Worker threads (0 = one per core).
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BenchPlanner {
    Mstar,
    Lmstar,
    LmstarDijkstra,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// JSON suite file (default: built-in random 32x32 suite).
    #[arg(long)]
    pub suite: Option<PathBuf>,
    /// Seed for maps and instances; replaces the suite's seed.
    #[arg(long)]
    pub seed: u64,
    /// Planners to run, comma separated.
    #[arg(
        long,
        value_enum,
        value_delimiter = ',',
        default_value = "mstar,lmstar"
    )]
    pub planners: Vec<BenchPlanner>,
    /// LMW1 weight file, required by the lmstar planner.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Override the suite's agent counts, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub agents: Option<Vec<u32>>,
    /// Override the suite's inflations, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub epsilons: Option<Vec<f64>>,
    /// Override the suite's time limit, seconds.
    #[arg(long)]
    pub time_limit: Option<f64>,
    /// Override the suite's instances per agent count.
    #[arg(long)]
    pub trials: Option<u32>,
    /// Worker threads (0 = one per core).
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub input: InstanceArgs,
    /// Solution JSON to check.
    #[arg(long)]
    pub solution: PathBuf,
}

#[derive(Debug, Args)]
pub struct WeightsInfoArgs {
    /// LMW1 weight file to inspect.
    #[arg(long, required_unless_present = "emit_random")]
    pub weights: Option<PathBuf>,
    /// Golden file; checks the forward pass against its logits.
    #[arg(long, requires = "weights")]
    pub golden: Option<PathBuf>,
    /// Print every tensor name and shape.
    #[arg(long)]
    pub tensors: bool,
    /// Write randomly initialized weights here instead.
    #[arg(long, requires = "seed", conflicts_with_all = ["weights", "golden"])]
    pub emit_random: Option<PathBuf>,
    /// Seed for --emit-random.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Use the small test configuration for --emit-random.
    #[arg(long)]
    pub tiny: bool,
}

/// Parses `args` (program name first) and runs the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}

pub fn run(command: &Command) -> Result<i32> {
    match command {
        Command::Solve(a) => cmd_solve(a),
        Command::Datagen(a) => cmd_datagen(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Validate(a) => cmd_validate(a),
        Command::WeightsInfo(a) => cmd_weights_info(a),
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<Model> {
    let (weights, _) = load_weights(path).map_err(|e| match e {
        Error::Io(io) => Error::InvalidArgument(format!("{}: {io}", path.display())),
        other => other,
    })?;
    Model::new(&weights)
}

fn exit_code(status: PlanStatus) -> i32 {
    match status {
        PlanStatus::Solved => EXIT_OK,
        PlanStatus::Timeout | PlanStatus::NodeLimit => EXIT_TIMEOUT,
        PlanStatus::Exhausted => EXIT_UNSOLVABLE,
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

pub fn cmd_solve(a: &SolveArgs) -> Result<i32> {
    if a.epsilon.is_nan() || a.epsilon < 1.0 {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be at least 1, got {}",
            a.epsilon
        )));
    }
    if !a.time_limit.is_finite() || a.time_limit <= 0.0 {
        return Err(Error::InvalidArgument(
            "time limit must be a positive number of seconds".into(),
        ));
    }
    let instance = a.input.load()?;
    let config = PlanConfig {
        epsilon: a.epsilon,
        time_limit: Duration::from_secs_f64(a.time_limit),
        node_limit: a.node_limit,
        fallback: !a.no_fallback,
        record_conflicts: a.conflicts.is_some(),
    };
    let outcome = match (a.planner, &a.weights) {
        (SolvePlanner::Mstar, _) => {
            mstar_plan(&instance, DijkstraPolicy::new(&instance)?, &config)?
        }
        (SolvePlanner::Lmstar, Some(path)) => {
            let model = load_model(path)?;
            plan_with_fallback(&instance, LearnedPolicy::new(&instance, &model)?, &config)?
        }
        (SolvePlanner::Lmstar, None) if a.no_fallback => {
            return Err(Error::InvalidArgument(
                "--planner lmstar needs --weights unless fallback is enabled".into(),
            ));
        }
        (SolvePlanner::Lmstar, None) => fallback_only(&instance, &config)?,
    };
    println!("{}", outcome.metrics.summary_line());
    if let (Some(path), Some(solution)) = (&a.out, &outcome.solution) {
        write_json(path, &SolutionFile::from(solution))?;
    }
    if let Some(path) = &a.conflicts {
        write_json(path, &conflict_counts(&outcome.metrics.conflict_locations))?;
    }
    Ok(exit_code(outcome.metrics.status))
}

/// LM* without a model: only the shortest-path fallback runs.
fn fallback_only(instance: &MapfInstance, config: &PlanConfig) -> Result<PlanOutcome> {
    eprintln!("note: no weights given, running the shortest-path fallback only");
    let mut out = mstar_plan(instance, DijkstraPolicy::new(instance)?, config)?;
    out.metrics.fallback_used = true;
    Ok(out)
}

pub fn datagen_config(a: &DatagenArgs) -> Result<DatasetConfig> {
    let mut c: DatasetConfig = match &a.config {
        Some(path) => serde_json::from_str(&read_text(path)?)?,
        None => DatasetConfig::default(),
    };
    c.master_seed = a.seed;
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {
            $(if let Some(v) = a.$flag.clone() { c.$field = v; })*
        };
    }
    set!(
        maps => map_count, width => map_width, height => map_height, obstacles => obstacle_probabilities,
        min_agents => min_agents, max_agents => max_agents, epsilon => expert_epsilon,
        time_limit => expert_time_limit_s, vertex_rate => vertex_rate, agent_rate => agent_rate,
        train_fraction => train_fraction
    );
    c.validate()?;
    Ok(c)
}

pub fn cmd_datagen(a: &DatagenArgs) -> Result<i32> {
    let config = datagen_config(a)?;
    std::fs::create_dir_all(&a.out)?;
    let manifest = generate_dataset(&config, &a.out, a.jobs)?;
    println!("N\tinstances\tsolved\trecords");
    for (n, s) in &manifest.per_agent_count {
        println!("{n}\t{}\t{}\t{}", s.instances, s.solved, s.records);
    }
    println!(
        "records: {} (train {}, test {})",
        manifest.total_records, manifest.train_records, manifest.test_records
    );
    Ok(EXIT_OK)
}

pub fn bench_suite(a: &BenchArgs) -> Result<BenchmarkSuite> {
    let mut suite = match &a.suite {
        Some(path) => BenchmarkSuite::load(path)
            .map_err(|e| Error::InvalidArgument(format!("suite {}: {e}", path.display())))?,
        None => BenchmarkSuite::default(),
    };
    suite.seed = a.seed;
    if let Some(v) = &a.agents {
        suite.agent_counts = v.clone();
    }
    if let Some(v) = &a.epsilons {
        suite.epsilons = v.clone();
    }
    if let Some(v) = a.time_limit {
        suite.time_limit_s = v;
    }
    if let Some(v) = a.trials {
        suite.trials = v;
    }
    suite.validate()?;
    Ok(suite)
}

pub fn cmd_bench(a: &BenchArgs) -> Result<i32> {
    let suite = bench_suite(a)?;
    let model = match (&a.weights, a.planners.contains(&BenchPlanner::Lmstar)) {
        (Some(path), true) => Some(load_model(path)?),
        (None, true) => {
            return Err(Error::InvalidArgument(
                "the lmstar planner needs --weights".into(),
            ));
        }
        (_, false) => None,
    };
    let mut planners = Vec::new();
    for p in &a.planners {
        let planner = match p {
            BenchPlanner::Mstar => Planner::MStar,
            BenchPlanner::Lmstar => Planner::LmStar(model.as_ref().expect("model loaded above")),
            BenchPlanner::LmstarDijkstra => Planner::LmStarDijkstra,
        };
        if !planners.iter().any(|q: &Planner| q.id() == planner.id()) {
            planners.push(planner);
        }
    }
    let base_dir = a
        .suite
        .as_ref()
        .and_then(|p| p.parent())
        .map_or_else(|| PathBuf::from("."), Path::to_path_buf);
    let rows = run_suite(&suite, &planners, &base_dir, a.jobs)?;

    std::fs::create_dir_all(&a.out)?;
    write_csv(&a.out.join("rows.csv"), &rows)?;
    let aggregates = aggregate(&rows);
    write_csv(&a.out.join("aggregates.csv"), &aggregates)?;
    println!("planner\tN\teps\tsolved\tsuccess_%\tmean_wall_time_s\tmean_max_collision_set");
    for g in &aggregates {
        println!(
            "{}\t{}\t{}\t{}/{}\t{:.1}\t{}\t{:.2}",
            g.planner,
            g.n,
            g.epsilon,
            g.solved,
            g.runs,
            g.success_rate * 100.0,
            g.mean_wall_time_s
                .map_or("\u{2212}".into(), |x| format!("{x:.4}")),
            g.mean_max_collision_set,
        );
    }

    let select =
        |id: &str| -> Vec<BenchRow> { rows.iter().filter(|r| r.planner == id).cloned().collect() };
    if planners.iter().any(|p| matches!(p, Planner::MStar)) {
        let baseline = select("mstar");
        for p in planners.iter().filter(|p| !matches!(p, Planner::MStar)) {
            let candidate = select(p.id());
            let reduction = format_reduction_report(&reduction_report(&candidate, &baseline));
            let comparison = compare(&candidate, &baseline);
            let ratios = format_cost_ratio_report(&cost_ratio_report(&comparison));
            std::fs::write(a.out.join(format!("reduction-{}.txt", p.id())), &reduction)?;
            std::fs::write(a.out.join(format!("cost-ratio-{}.txt", p.id())), &ratios)?;
            write_csv(
                &a.out.join(format!("comparison-{}.csv", p.id())),
                &comparison,
            )?;
            println!(
                "\n{} vs mstar, percent decrease:\n{reduction}\ncost ratios:\n{ratios}",
                p.id()
            );
        }
    }
    Ok(EXIT_OK)
}

pub fn cmd_validate(a: &ValidateArgs) -> Result<i32> {
    let instance = a.input.load()?;
    let file: SolutionFile = serde_json::from_str(&read_text(&a.solution)?)?;
    let report = validate_solution(&instance, &Solution::from(file));
    if report.is_valid() {
        println!("valid");
        return Ok(EXIT_OK);
    }
    println!(
        "invalid: {} vertex conflicts, {} edge conflicts, {} violations",
        report.vertex_conflicts.len(),
        report.edge_conflicts.len(),
        report.violations.len()
    );
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(EXIT_INVALID)
}

fn describe(weights: &ModelWeights, list_tensors: bool) -> String {
    let c = &weights.config;
    let mut s = String::new();
    let _ = writeln!(s, "input_channels {}", c.input_channels);
    let _ = writeln!(s, "block_channels {:?}", c.block_channels);
    let _ = writeln!(s, "feature_map {}x{}", c.feature_h, c.feature_w);
    let _ = writeln!(
        s,
        "tokens {} token_dim {} qk_dim {}",
        c.tokens,
        c.token_dim,
        weights.qk_dim()
    );
    let _ = writeln!(
        s,
        "encoder_layers {} attention_heads {} mlp_dim {}",
        c.encoder_layers, c.attention_heads, c.mlp_dim
    );
    let _ = writeln!(s, "fc_hidden {} actions {}", c.fc_hidden, c.action_count);
    let _ = writeln!(
        s,
        "tensors {} parameters {}",
        weights.tensors.len(),
        weights.parameter_count()
    );
    if list_tensors {
        for (name, t) in &weights.tensors {
            let _ = writeln!(s, "  {name} {:?}", t.shape);
        }
    }
    s
}

pub fn cmd_weights_info(a: &WeightsInfoArgs) -> Result<i32> {
    if let Some(path) = &a.emit_random {
        let config = if a.tiny {
            ModelConfig::tiny()
        } else {
            ModelConfig::default()
        };
        let weights = ModelWeights::random(config, a.seed.expect("clap requires --seed"));
        save_weights(&weights, path)?;
        print!("{}", describe(&weights, a.tensors));
        return Ok(EXIT_OK);
    }
    let path = a.weights.as_ref().expect("clap requires --weights");
    let (weights, _) = load_weights(path)?;
    print!("{}", describe(&weights, a.tensors));
    let Some(golden) = &a.golden else {
        return Ok(EXIT_OK);
    };
    let model = Model::new(&weights)?;
    let (config, cases) = load_golden(golden)?;
    if config != weights.config {
        println!("golden: configuration differs from the weight file");
        return Ok(EXIT_INVALID);
    }
    let mut worst = 0f32;
    let mut worst_features = 0f32;
    for case in &cases {
        let logits = model.forward(&case.input)?;
        for (x, y) in logits.iter().zip(&case.logits) {
            worst = worst.max((x - y).abs());
        }
        if let Some(expected) = &case.features {
            let got = model.cnn_backbone(&case.input)?;
            for (x, y) in got.data.iter().zip(expected) {
                worst_features = worst_features.max((x - y).abs());
            }
        }
    }
    let pass = worst <= GOLDEN_TOLERANCE && worst_features <= GOLDEN_TOLERANCE;
    println!(
        "golden: {} cases, max abs logit diff {worst:.3e}, max abs feature diff {worst_features:.3e}: {}",
        cases.len(),
        if pass { "PASS" } else { "FAIL" }
    );
    Ok(if pass { EXIT_OK } else { EXIT_INVALID })
}
