//! Paired planner comparisons: suites of instances, per-run CSV rows,
//! aggregates, reduction and cost-ratio reports, and conflict maps.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid_world::{generate_instance, generate_random_map, Cell, GridMap, MapfInstance};
use crate::model::{DijkstraScorer, LearnedPolicy, Model};
use crate::policy::DijkstraPolicy;
use crate::search::{mstar_plan, plan_with_fallback, ConflictLocation, PlanConfig, PlanOutcome};

/// Where a suite's maps come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InstanceSource {
    /// Fresh maps drawn from the suite seed.
    Random {
        maps: u32,
        width: u32,
        height: u32,
        obstacle_probabilities: Vec<f64>,
    },
    /// Maps regenerated from known seeds, e.g. those of a training set.
    Seeded {
        width: u32,
        height: u32,
        maps: Vec<SeededMap>,
    },
    /// MovingAI map files, relative to the suite file.
    Files { paths: Vec<PathBuf> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeededMap {
    pub map_seed: u64,
    pub obstacle_probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSuite {
    pub sources: Vec<InstanceSource>,
    pub agent_counts: Vec<u32>,
    pub epsilons: Vec<f64>,
    pub time_limit_s: f64,
    /// Instances per agent count, spread round-robin over the maps.
    pub trials: u32,
    pub seed: u64,
}

impl Default for BenchmarkSuite {
    fn default() -> Self {
        BenchmarkSuite {
            sources: vec![InstanceSource::Random {
                maps: 5,
                width: 32,
                height: 32,
                obstacle_probabilities: vec![0.2],
            }],
            agent_counts: vec![5, 10, 15, 20],
            epsilons: vec![1.0, 1.1, 10.0],
            time_limit_s: 60.0,
            trials: 25,
            seed: 0,
        }
    }
}

impl BenchmarkSuite {
    pub fn load(path: &Path) -> Result<Self> {
        let suite: BenchmarkSuite = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        suite.validate()?;
        Ok(suite)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("suite: {m}")));
        if self.time_limit_s.is_nan() || self.time_limit_s <= 0.0 {
            return bad("time limit must be positive");
        }
        if self.agent_counts.is_empty()
            || self.agent_counts[0] == 0
            || self.agent_counts.windows(2).any(|w| w[0] >= w[1])
        {
            return bad("agent counts must be positive and strictly ascending");
        }
        if self.epsilons.is_empty() || self.epsilons.iter().any(|e| e.is_nan() || *e < 1.0) {
            return bad("inflations must be at least 1");
        }
        if self.sources.is_empty() || self.trials == 0 {
            return bad("need at least one source and one trial");
        }
        Ok(())
    }

    /// Loads or generates every map, in source order, with an identifier.
    pub fn maps(&self, base_dir: &Path) -> Result<Vec<(String, GridMap)>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut out = Vec::new();
        for source in &self.sources {
            match source {
                InstanceSource::Random {
                    maps,
                    width,
                    height,
                    obstacle_probabilities,
                } => {
                    if obstacle_probabilities.is_empty() {
                        return Err(Error::InvalidArgument(
                            "suite: empty obstacle probability list".into(),
                        ));
                    }
                    for _ in 0..*maps {
                        let seed = rng.next_u64();
                        let p =
                            obstacle_probabilities[rng.gen_range(0..obstacle_probabilities.len())];
                        out.push((
                            format!("random-{seed:016x}"),
                            generate_random_map(*width, *height, p, seed)?,
                        ));
                    }
                }
                InstanceSource::Seeded {
                    width,
                    height,
                    maps,
                } => {
                    for m in maps {
                        let map = generate_random_map(
                            *width,
                            *height,
                            m.obstacle_probability,
                            m.map_seed,
                        )?;
                        out.push((format!("seed-{}", m.map_seed), map));
                    }
                }
                InstanceSource::Files { paths } => {
                    for p in paths {
                        let map = GridMap::parse(&std::fs::read_to_string(base_dir.join(p))?)?;
                        out.push((p.display().to_string(), map));
                    }
                }
            }
        }
        Ok(out)
    }

    /// The suite's instances, identical for every planner.
    pub fn instances(&self, base_dir: &Path) -> Result<Vec<BenchInstance>> {
        let maps = self.maps(base_dir)?;
        if maps.is_empty() {
            return Err(Error::InvalidArgument("suite: no maps".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x9e37_79b9_7f4a_7c15);
        let mut out = Vec::new();
        for &n in &self.agent_counts {
            for trial in 0..self.trials {
                let (map_id, map) = &maps[trial as usize % maps.len()];
                let instance_seed = rng.next_u64();
                // Maps that cannot host this many agents are skipped; the
                // cell then has fewer trials.
                if let Ok(instance) = generate_instance(map, n as usize, instance_seed) {
                    out.push(BenchInstance {
                        map_id: map_id.clone(),
                        instance_seed,
                        instance,
                    });
                }
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug)]
pub struct BenchInstance {
    pub map_id: String,
    pub instance_seed: u64,
    pub instance: MapfInstance,
}

/// A planner under test.
#[derive(Clone, Copy)]
pub enum Planner<'a> {
    /// Inflated M* with shortest-path individual policies.
    MStar,
    /// M* with the learned policy; falls back to shortest-path policies if
    /// the learned one leaves no way to the goal.
    LmStar(&'a Model),
    /// The LM* machinery with a scorer that reproduces shortest-path
    /// policies; should match [`Planner::MStar`] exactly.
    LmStarDijkstra,
}

impl Planner<'_> {
    pub fn id(&self) -> &'static str {
        match self {
            Planner::MStar => "mstar",
            Planner::LmStar(_) => "lmstar",
            Planner::LmStarDijkstra => "lmstar-dijkstra",
        }
    }

    pub fn run(&self, instance: &MapfInstance, config: &PlanConfig) -> Result<PlanOutcome> {
        match self {
            Planner::MStar => mstar_plan(instance, DijkstraPolicy::new(instance)?, config),
            Planner::LmStar(model) => {
                plan_with_fallback(instance, LearnedPolicy::new(instance, *model)?, config)
            }
            Planner::LmStarDijkstra => plan_with_fallback(
                instance,
                LearnedPolicy::new(instance, DijkstraScorer)?,
                config,
            ),
        }
    }
}

/// One planner run, as written to CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub planner: String,
    pub map_id: String,
    pub instance_seed: u64,
    #[serde(rename = "N")]
    pub n: u32,
    pub epsilon: f64,
    pub success: bool,
    pub wall_time_s: f64,
    pub cost: Option<u64>,
    pub max_collision_set: u64,
    pub nodes_generated: u64,
    pub nodes_expanded: u64,
    pub conflicts_detected: u64,
    pub fallback_used: bool,
}

impl BenchRow {
    fn key(&self) -> (String, u64, u32, u64) {
        (
            self.map_id.clone(),
            self.instance_seed,
            self.n,
            self.epsilon.to_bits(),
        )
    }
}

fn row_from(planner: &str, inst: &BenchInstance, epsilon: f64, out: &PlanOutcome) -> BenchRow {
    let m = &out.metrics;
    BenchRow {
        planner: planner.into(),
        map_id: inst.map_id.clone(),
        instance_seed: inst.instance_seed,
        n: inst.instance.agent_count() as u32,
        epsilon,
        success: m.success,
        wall_time_s: m.wall_time_s,
        cost: m.cost,
        max_collision_set: m.max_collision_set as u64,
        nodes_generated: m.nodes_generated,
        nodes_expanded: m.nodes_expanded,
        conflicts_detected: m.conflicts_detected,
        fallback_used: m.fallback_used,
    }
}

/// Runs every planner on every instance at every inflation. Rows come
/// back in (instance, inflation, planner) order regardless of `jobs`.
pub fn run_suite(
    suite: &BenchmarkSuite,
    planners: &[Planner],
    base_dir: &Path,
    jobs: usize,
) -> Result<Vec<BenchRow>> {
    suite.validate()?;
    let instances = suite.instances(base_dir)?;
    run_instances(
        &instances,
        &suite.epsilons,
        suite.time_limit_s,
        planners,
        jobs,
    )
}

pub fn run_instances(
    instances: &[BenchInstance],
    epsilons: &[f64],
    time_limit_s: f64,
    planners: &[Planner],
    jobs: usize,
) -> Result<Vec<BenchRow>> {
    let mut tasks = Vec::new();
    for inst in instances {
        for &eps in epsilons {
            for p in planners {
                tasks.push((inst, eps, *p));
            }
        }
    }
    let run = |&(inst, eps, planner): &(&BenchInstance, f64, Planner)| -> Result<BenchRow> {
        let config = PlanConfig {
            epsilon: eps,
            time_limit: Duration::from_secs_f64(time_limit_s),
            record_conflicts: false,
            ..PlanConfig::default()
        };
        let out = planner.run(&inst.instance, &config)?;
        Ok(row_from(planner.id(), inst, eps, &out))
    };
    #[cfg(feature = "parallel")]
    if jobs != 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
        return pool.install(|| tasks.par_iter().map(run).collect());
    }
    let _ = jobs;
    tasks.iter().map(run).collect()
}

/// Per (planner, N, epsilon) summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub planner: String,
    #[serde(rename = "N")]
    pub n: u32,
    pub epsilon: f64,
    pub runs: u64,
    pub solved: u64,
    pub success_rate: f64,
    /// Over solved runs only.
    pub mean_wall_time_s: Option<f64>,
    pub mean_max_collision_set: f64,
    pub mean_nodes_generated: f64,
    pub mean_nodes_expanded: f64,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn aggregate(rows: &[BenchRow]) -> Vec<Aggregate> {
    let mut cells: BTreeMap<(String, u32, u64), Vec<&BenchRow>> = BTreeMap::new();
    for r in rows {
        cells
            .entry((r.planner.clone(), r.n, r.epsilon.to_bits()))
            .or_default()
            .push(r);
    }
    cells
        .into_iter()
        .map(|((planner, n, eps), rs)| {
            let solved = rs.iter().filter(|r| r.success).count() as u64;
            Aggregate {
                planner,
                n,
                epsilon: f64::from_bits(eps),
                runs: rs.len() as u64,
                solved,
                success_rate: solved as f64 / rs.len() as f64,
                mean_wall_time_s: mean(rs.iter().filter(|r| r.success).map(|r| r.wall_time_s)),
                mean_max_collision_set: mean(rs.iter().map(|r| r.max_collision_set as f64))
                    .unwrap_or(0.0),
                mean_nodes_generated: mean(rs.iter().map(|r| r.nodes_generated as f64))
                    .unwrap_or(0.0),
                mean_nodes_expanded: mean(rs.iter().map(|r| r.nodes_expanded as f64))
                    .unwrap_or(0.0),
            }
        })
        .collect()
}

/// `100 * (baseline - candidate) / baseline`. Negative when the candidate
/// is larger. `None` when the baseline is zero and the candidate is not.
pub fn percent_decrease(baseline: f64, candidate: f64) -> Option<f64> {
    if baseline == 0.0 {
        return (candidate == 0.0).then_some(0.0);
    }
    Some(100.0 * (baseline - candidate) / baseline)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReductionCell {
    pub n: u32,
    pub epsilon: f64,
    /// Instances solved by both planners.
    pub common: usize,
    pub max_collision_set: Option<f64>,
    pub nodes_generated: Option<f64>,
    pub nodes_expanded: Option<f64>,
}

/// Percentage decrease of LM* against M* per (N, epsilon), over instances
/// both solved. Cells with no such instance have every value absent.
pub fn reduction_report(lm_rows: &[BenchRow], m_rows: &[BenchRow]) -> Vec<ReductionCell> {
    let lm: BTreeMap<_, &BenchRow> = lm_rows.iter().map(|r| (r.key(), r)).collect();
    let mut cells: BTreeMap<(u32, u64), Vec<(&BenchRow, &BenchRow)>> = BTreeMap::new();
    for m in m_rows {
        let entry = cells.entry((m.n, m.epsilon.to_bits())).or_default();
        if let Some(l) = lm.get(&m.key()) {
            if m.success && l.success {
                entry.push((m, l));
            }
        }
    }
    cells
        .into_iter()
        .map(|((n, eps), pairs)| {
            let stat = |f: fn(&BenchRow) -> u64| {
                let mm = mean(pairs.iter().map(|(m, _)| f(m) as f64))?;
                let ll = mean(pairs.iter().map(|(_, l)| f(l) as f64))?;
                percent_decrease(mm, ll)
            };
            ReductionCell {
                n,
                epsilon: f64::from_bits(eps),
                common: pairs.len(),
                max_collision_set: stat(|r| r.max_collision_set),
                nodes_generated: stat(|r| r.nodes_generated),
                nodes_expanded: stat(|r| r.nodes_expanded),
            }
        })
        .collect()
}

/// Candidate-to-baseline cost ratio on one instance.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub map_id: String,
    pub instance_seed: u64,
    pub n: u32,
    pub epsilon: f64,
    /// Present only when both planners solved the instance.
    pub cost_ratio: Option<f64>,
}

pub fn compare(candidate: &[BenchRow], baseline: &[BenchRow]) -> Vec<ComparisonRow> {
    let base: BTreeMap<_, &BenchRow> = baseline.iter().map(|r| (r.key(), r)).collect();
    candidate
        .iter()
        .filter_map(|c| {
            let b = base.get(&c.key())?;
            let cost_ratio = match (c.cost, b.cost) {
                (Some(x), Some(y)) if c.success && b.success && y > 0 => Some(x as f64 / y as f64),
                _ => None,
            };
            Some(ComparisonRow {
                map_id: c.map_id.clone(),
                instance_seed: c.instance_seed,
                n: c.n,
                epsilon: c.epsilon,
                cost_ratio,
            })
        })
        .collect()
}

/// Percentage of ratios below 1.10 and the worst ratio; `None` if empty.
pub fn ratio_stats(ratios: &[f64]) -> Option<(f64, f64)> {
    if ratios.is_empty() {
        return None;
    }
    let below = ratios.iter().filter(|&&r| r < 1.10).count();
    let worst = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Some((100.0 * below as f64 / ratios.len() as f64, worst))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostRatioCell {
    pub epsilon: f64,
    pub instances: usize,
    pub percent_below_1_10: Option<f64>,
    pub worst_ratio: Option<f64>,
}

/// Cost-ratio statistics per inflation.
pub fn cost_ratio_report(rows: &[ComparisonRow]) -> Vec<CostRatioCell> {
    let mut by_eps: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for r in rows {
        let v = by_eps.entry(r.epsilon.to_bits()).or_default();
        if let Some(x) = r.cost_ratio {
            v.push(x);
        }
    }
    by_eps
        .into_iter()
        .map(|(eps, ratios)| {
            let stats = ratio_stats(&ratios);
            CostRatioCell {
                epsilon: f64::from_bits(eps),
                instances: ratios.len(),
                percent_below_1_10: stats.map(|s| s.0),
                worst_ratio: stats.map(|s| s.1),
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConflictCount {
    pub row: u32,
    pub col: u32,
    pub count: u64,
}

/// Tallies conflict locations per cell, sorted by cell.
pub fn conflict_counts(locations: &[ConflictLocation]) -> Vec<ConflictCount> {
    let mut counts: BTreeMap<Cell, u64> = BTreeMap::new();
    for l in locations {
        *counts.entry(l.cell).or_default() += 1;
    }
    counts
        .into_iter()
        .map(|(c, count)| ConflictCount {
            row: c.row,
            col: c.col,
            count,
        })
        .collect()
}

/// Runs `planner` once and returns where conflicts were detected during
/// the search, along with the run itself.
pub fn conflict_map(
    instance: &MapfInstance,
    planner: Planner,
    epsilon: f64,
    time_limit: Duration,
) -> Result<(Vec<ConflictCount>, PlanOutcome)> {
    let config = PlanConfig {
        epsilon,
        time_limit,
        record_conflicts: true,
        ..PlanConfig::default()
    };
    let out = planner.run(instance, &config)?;
    Ok((conflict_counts(&out.metrics.conflict_locations), out))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows_csv(path: &Path) -> Result<Vec<BenchRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

fn pct(v: Option<f64>) -> String {
    v.map_or("\u{2212}".to_string(), |x| format!("{x:.0}"))
}

/// Plain-text reduction table; absent cells print as a minus sign.
pub fn format_reduction_report(cells: &[ReductionCell]) -> String {
    let mut s =
        String::from("N\teps\tcommon\tmax_collision_set_%\tnodes_generated_%\tnodes_expanded_%\n");
    for c in cells {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}",
            c.n,
            c.epsilon,
            c.common,
            pct(c.max_collision_set),
            pct(c.nodes_generated),
            pct(c.nodes_expanded)
        );
    }
    s
}

pub fn format_cost_ratio_report(cells: &[CostRatioCell]) -> String {
    let mut s = String::from("eps\tinstances\tbelow_1.10_%\tworst_ratio\n");
    for c in cells {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}",
            c.epsilon,
            c.instances,
            c.percent_below_1_10
                .map_or("\u{2212}".into(), |x| format!("{x:.1}")),
            c.worst_ratio
                .map_or("\u{2212}".into(), |x| format!("{x:.3}"))
        );
    }
    s
}
