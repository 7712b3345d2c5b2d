//! Inflated M* with subdimensional expansion, and a brute-force joint-space
//! A* used as an optimality oracle.
//!
//! # Cost model
//!
//! Every move or wait costs one unit, except that waiting at one's goal is
//! free once the agent never leaves it again. The search realizes this with a
//! per-agent *parked* flag: an agent sitting on its goal may park (cost 0),
//! after which it can only stay. Waiting on the goal without parking costs 1,
//! so leaving the goal later is charged for every step spent there.

mod mstar;
mod oracle;

use std::fmt;
use std::time::Duration;

use serde::Serialize;

use crate::error::Result;
use crate::grid_world::{Cell, MapfInstance, Solution};
use crate::policy::{DijkstraPolicy, PolicyProvider};

pub use mstar::{limited_neighbors, mstar_plan};
pub use oracle::joint_astar_oracle;

/// Largest agent count a planner accepts (collision sets are 128-bit masks).
pub const MAX_AGENTS: usize = 128;

/// A set of agent indices.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct AgentSet(u128);

impl AgentSet {
    pub const EMPTY: AgentSet = AgentSet(0);

    pub fn from_agents(agents: impl IntoIterator<Item = usize>) -> Self {
        let mut s = AgentSet::EMPTY;
        for a in agents {
            s.insert(a);
        }
        s
    }

    pub fn insert(&mut self, agent: usize) {
        self.0 |= 1 << agent;
    }

    pub fn contains(self, agent: usize) -> bool {
        self.0 >> agent & 1 == 1
    }

    pub fn union(self, other: AgentSet) -> AgentSet {
        AgentSet(self.0 | other.0)
    }

    pub fn is_subset(self, other: AgentSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        (0..MAX_AGENTS).filter(move |&a| self.contains(a))
    }
}

impl fmt::Debug for AgentSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

/// Joint configuration: one cell per agent plus the parked flags.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct JointState {
    pub cells: Vec<Cell>,
    pub parked: Vec<bool>,
}

impl JointState {
    pub fn unparked(cells: Vec<Cell>) -> Self {
        let parked = vec![false; cells.len()];
        JointState { cells, parked }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ConflictKind {
    Vertex,
    Edge,
}

/// A conflict between agents `a < b` on the transition `from -> to`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Conflict {
    pub a: usize,
    pub b: usize,
    pub kind: ConflictKind,
}

/// Vertex and edge (swap) conflicts on a joint transition, sorted by agent
/// pair. A pair that is in both a vertex and an edge conflict is impossible,
/// so each pair appears at most once.
pub fn transition_conflicts<T: PartialEq + Copy>(from: &[T], to: &[T]) -> Vec<Conflict> {
    let n = to.len();
    let mut out = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let kind = if to[i] == to[j] {
                ConflictKind::Vertex
            } else if from[i] == to[j] && from[j] == to[i] {
                ConflictKind::Edge
            } else {
                continue;
            };
            out.push(Conflict { a: i, b: j, kind });
        }
    }
    out
}

/// Agent pairs `(i, j)`, `i < j`, that collide moving from `from` to `to`.
pub fn detect_conflicts(from: &[Cell], to: &[Cell]) -> Vec<(usize, usize)> {
    transition_conflicts(from, to)
        .into_iter()
        .map(|c| (c.a, c.b))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ConflictLocation {
    pub cell: Cell,
    pub time: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanStatus {
    Solved,
    Timeout,
    /// Open list ran dry: no solution reachable under the policy.
    Exhausted,
    NodeLimit,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunMetrics {
    pub success: bool,
    pub status: PlanStatus,
    pub wall_time_s: f64,
    pub max_collision_set: usize,
    pub nodes_generated: u64,
    pub nodes_expanded: u64,
    pub cost: Option<u64>,
    pub conflicts_detected: u64,
    #[serde(skip)]
    pub conflict_locations: Vec<ConflictLocation>,
    pub fallback_used: bool,
}

impl RunMetrics {
    pub(crate) fn new(status: PlanStatus) -> Self {
        RunMetrics {
            success: status == PlanStatus::Solved,
            status,
            wall_time_s: 0.0,
            max_collision_set: 0,
            nodes_generated: 0,
            nodes_expanded: 0,
            cost: None,
            conflicts_detected: 0,
            conflict_locations: Vec::new(),
            fallback_used: false,
        }
    }

    /// One-line `key=value` summary.
    pub fn summary_line(&self) -> String {
        format!(
            "status={:?} success={} cost={} wall_time_s={:.6} max_collision_set={} nodes_generated={} nodes_expanded={} conflicts_detected={} fallback_used={}",
            self.status,
            self.success,
            self.cost.map_or("-".to_string(), |c| c.to_string()),
            self.wall_time_s,
            self.max_collision_set,
            self.nodes_generated,
            self.nodes_expanded,
            self.conflicts_detected,
            self.fallback_used,
        )
    }
}

#[derive(Clone, Debug)]
pub struct PlanConfig {
    /// Heuristic inflation, at least 1.
    pub epsilon: f64,
    pub time_limit: Duration,
    /// Stop with [`PlanStatus::NodeLimit`] after this many generated nodes.
    pub node_limit: Option<u64>,
    /// Rerun with the shortest-path policy when a non-default policy
    /// exhausts the open list.
    pub fallback: bool,
    /// Keep per-conflict locations in the metrics.
    pub record_conflicts: bool,
}

impl Default for PlanConfig {
    fn default() -> Self {
        PlanConfig {
            epsilon: 1.0,
            time_limit: Duration::from_secs(60),
            node_limit: None,
            fallback: true,
            record_conflicts: true,
        }
    }
}

impl PlanConfig {
    pub fn with_epsilon(epsilon: f64) -> Self {
        PlanConfig {
            epsilon,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct PlanOutcome {
    pub solution: Option<Solution>,
    pub metrics: RunMetrics,
}

/// Runs M* under `policy`; if that exhausts the open list and
/// `config.fallback` is set, reruns with the shortest-path policy inside
/// whatever time remains. Metrics of both runs are merged.
pub fn plan_with_fallback<P: PolicyProvider>(
    instance: &MapfInstance,
    policy: P,
    config: &PlanConfig,
) -> Result<PlanOutcome> {
    let first = mstar_plan(instance, policy, config)?;
    if first.metrics.status != PlanStatus::Exhausted || !config.fallback {
        return Ok(first);
    }
    let spent = Duration::from_secs_f64(first.metrics.wall_time_s);
    let remaining = config.time_limit.saturating_sub(spent);
    let mut fallback_config = config.clone();
    fallback_config.time_limit = remaining;
    fallback_config.node_limit = config
        .node_limit
        .map(|l| l.saturating_sub(first.metrics.nodes_generated));
    let dijkstra = match DijkstraPolicy::new(instance) {
        Ok(p) => p,
        Err(_) => return Ok(first),
    };
    let second = mstar_plan(instance, dijkstra, &fallback_config)?;
    let mut metrics = second.metrics;
    let a = first.metrics;
    metrics.fallback_used = true;
    metrics.wall_time_s += a.wall_time_s;
    metrics.nodes_generated += a.nodes_generated;
    metrics.nodes_expanded += a.nodes_expanded;
    metrics.max_collision_set = metrics.max_collision_set.max(a.max_collision_set);
    metrics.conflicts_detected += a.conflicts_detected;
    let mut locations = a.conflict_locations;
    locations.append(&mut metrics.conflict_locations);
    metrics.conflict_locations = locations;
    Ok(PlanOutcome {
        solution: second.solution,
        metrics,
    })
}
