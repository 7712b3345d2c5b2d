use std::cmp::Ordering;
use std::collections::hash_map::Entry;
use std::collections::{BinaryHeap, HashMap};
use std::rc::Rc;

use web_time::Instant;

use super::{
    transition_conflicts, AgentSet, ConflictKind, ConflictLocation, JointState, PlanConfig,
    PlanOutcome, PlanStatus, RunMetrics, MAX_AGENTS,
};
use crate::error::{Error, Result};
use crate::grid_world::{Action, AgentPath, Cell, GridMap, MapfInstance, Solution};
use crate::policy::{goal_fields, CostToGoField, PolicyProvider};

const INF: u64 = u64::MAX;
const TIME_CHECK_INTERVAL: u64 = 256;

type NodeId = u32;

/// Per-agent state packed as `cell_index << 1 | parked`.
type Packed = u32;

#[inline]
fn pack(cell_index: usize, parked: bool) -> Packed {
    (cell_index as u32) << 1 | parked as u32
}

#[inline]
fn cell_of(p: Packed) -> u32 {
    p >> 1
}

#[inline]
fn is_parked(p: Packed) -> bool {
    p & 1 == 1
}

/// Static per-instance data shared by the expansion routines.
struct Problem<'a> {
    map: &'a GridMap,
    goals: Vec<u32>,
    fields: Vec<CostToGoField>,
}

impl Problem<'_> {
    fn heuristic(&self, key: &[Packed]) -> u64 {
        key.iter()
            .zip(&self.fields)
            .map(|(&p, f)| u64::from(f.values()[cell_of(p) as usize]))
            .sum()
    }

    fn cells(&self, key: &[Packed]) -> Vec<Cell> {
        key.iter()
            .map(|&p| self.map.cell_at(cell_of(p) as usize))
            .collect()
    }

    /// Every option of one agent, with step costs: park / wait / moves.
    fn all_options(&self, agent: usize, p: Packed, out: &mut Vec<(Packed, u64)>) {
        out.clear();
        let ci = cell_of(p);
        if is_parked(p) {
            out.push((p, 0));
            return;
        }
        if ci == self.goals[agent] {
            out.push((p | 1, 0));
        }
        let cell = self.map.cell_at(ci as usize);
        for a in Action::ALL {
            if let Some(n) = self.map.step(cell, a) {
                out.push((pack(self.map.index(n), false), 1));
            }
        }
    }

    /// The single option dictated by the agent's policy.
    fn policy_option<P: PolicyProvider>(
        &self,
        agent: usize,
        p: Packed,
        positions: &[Cell],
        policy: &mut P,
    ) -> Result<(Packed, u64)> {
        if is_parked(p) {
            return Ok((p, 0));
        }
        let from = positions[agent];
        let to = policy.next_cell(positions, agent)?;
        if !self.map.is_free(to) || !from.is_adjacent_or_same(to) {
            return Err(Error::IllegalPolicyMove { agent, from, to });
        }
        let ti = self.map.index(to) as u32;
        if to == from && ti == self.goals[agent] {
            Ok((p | 1, 0))
        } else {
            Ok((pack(ti as usize, false), 1))
        }
    }

    fn options_for<P: PolicyProvider>(
        &self,
        key: &[Packed],
        collision: AgentSet,
        policy: &mut P,
    ) -> Result<Vec<Vec<(Packed, u64)>>> {
        let mut positions: Option<Vec<Cell>> = None;
        let mut options = Vec::with_capacity(key.len());
        for (agent, &p) in key.iter().enumerate() {
            if collision.contains(agent) {
                let mut v = Vec::with_capacity(6);
                self.all_options(agent, p, &mut v);
                options.push(v);
            } else {
                let pos = positions.get_or_insert_with(|| self.cells(key));
                options.push(vec![self.policy_option(agent, p, pos, policy)?]);
            }
        }
        Ok(options)
    }
}

/// Odometer over the Cartesian product of per-agent options.
struct Product {
    options: Vec<Vec<(Packed, u64)>>,
    digits: Vec<usize>,
    done: bool,
}

impl Product {
    fn new(options: Vec<Vec<(Packed, u64)>>) -> Self {
        let done = options.iter().any(Vec::is_empty);
        let digits = vec![0; options.len()];
        Product {
            options,
            digits,
            done,
        }
    }

    fn next_into(&mut self, key: &mut Vec<Packed>) -> Option<u64> {
        if self.done {
            return None;
        }
        key.clear();
        let mut cost = 0;
        for (opts, &d) in self.options.iter().zip(&self.digits) {
            key.push(opts[d].0);
            cost += opts[d].1;
        }
        // Last agent varies fastest.
        let mut i = self.digits.len();
        loop {
            if i == 0 {
                self.done = true;
                break;
            }
            i -= 1;
            self.digits[i] += 1;
            if self.digits[i] < self.options[i].len() {
                break;
            }
            self.digits[i] = 0;
        }
        Some(cost)
    }
}

/// Successors of `state` under subdimensional expansion: agents in
/// `collision` take every legal option, the others follow `policy`.
/// Successors with conflicts are included.
pub fn limited_neighbors<P: PolicyProvider>(
    instance: &MapfInstance,
    state: &JointState,
    collision: AgentSet,
    mut policy: P,
) -> Result<Vec<JointState>> {
    let problem = Problem {
        map: &instance.map,
        goals: instance
            .goals
            .iter()
            .map(|&g| instance.map.index(g) as u32)
            .collect(),
        fields: Vec::new(),
    };
    for &c in &state.cells {
        if !instance.map.is_free(c) {
            return Err(Error::InvalidCell(c));
        }
    }
    let key: Vec<Packed> = state
        .cells
        .iter()
        .zip(&state.parked)
        .map(|(&c, &p)| pack(instance.map.index(c), p))
        .collect();
    let mut product = Product::new(problem.options_for(&key, collision, &mut policy)?);
    let mut out = Vec::new();
    let mut next = Vec::new();
    while product.next_into(&mut next).is_some() {
        out.push(JointState {
            cells: problem.cells(&next),
            parked: next.iter().map(|&p| is_parked(p)).collect(),
        });
    }
    Ok(out)
}

struct Node {
    key: Rc<[Packed]>,
    g: u64,
    h: u64,
    depth: u32,
    collision: AgentSet,
    backprop: Vec<NodeId>,
    parent: Option<NodeId>,
    in_open: bool,
}

struct OpenEntry {
    f: f64,
    g: u64,
    key: Rc<[Packed]>,
    id: NodeId,
}

impl PartialEq for OpenEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for OpenEntry {}

impl PartialOrd for OpenEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OpenEntry {
    /// Max-heap priority: lower f, then higher g, then smaller joint vertex.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then(self.g.cmp(&other.g))
            .then_with(|| other.key.cmp(&self.key))
    }
}

/// Search graph: node arena, vertex index, open list and the
/// collision-set bookkeeping of M*.
struct Graph {
    nodes: Vec<Node>,
    index: HashMap<Rc<[Packed]>, NodeId>,
    open: BinaryHeap<OpenEntry>,
    epsilon: f64,
    max_collision_set: usize,
}

impl Graph {
    fn new(epsilon: f64) -> Self {
        Graph {
            nodes: Vec::new(),
            index: HashMap::new(),
            open: BinaryHeap::new(),
            epsilon,
            max_collision_set: 0,
        }
    }

    fn get_or_insert(&mut self, key: &[Packed], problem: &Problem) -> NodeId {
        if let Some(&id) = self.index.get(key) {
            return id;
        }
        let key: Rc<[Packed]> = Rc::from(key);
        let id = self.nodes.len() as NodeId;
        self.nodes.push(Node {
            h: problem.heuristic(&key),
            key: key.clone(),
            g: INF,
            depth: 0,
            collision: AgentSet::EMPTY,
            backprop: Vec::new(),
            parent: None,
            in_open: false,
        });
        match self.index.entry(key) {
            Entry::Vacant(v) => {
                v.insert(id);
            }
            Entry::Occupied(_) => unreachable!(),
        }
        id
    }

    fn push_open(&mut self, id: NodeId) {
        let node = &mut self.nodes[id as usize];
        node.in_open = true;
        self.open.push(OpenEntry {
            f: node.g as f64 + self.epsilon * node.h as f64,
            g: node.g,
            key: node.key.clone(),
            id,
        });
    }

    /// Merges `set` into the collision set of `start` and, whenever a set
    /// grows, reopens that node and continues through its backpropagation
    /// set.
    fn backpropagate(&mut self, start: NodeId, set: AgentSet) {
        let mut stack = vec![(start, set)];
        while let Some((id, set)) = stack.pop() {
            let node = &mut self.nodes[id as usize];
            if set.is_subset(node.collision) {
                continue;
            }
            node.collision = node.collision.union(set);
            let merged = node.collision;
            self.max_collision_set = self.max_collision_set.max(merged.len());
            if !node.in_open {
                self.push_open(id);
            }
            let preds = self.nodes[id as usize].backprop.clone();
            stack.extend(preds.into_iter().map(|p| (p, merged)));
        }
    }

    fn add_backprop(&mut self, to: NodeId, from: NodeId) {
        let bp = &mut self.nodes[to as usize].backprop;
        if !bp.contains(&from) {
            bp.push(from);
        }
    }

    fn path_to(&self, mut id: NodeId) -> Vec<Rc<[Packed]>> {
        let mut keys = vec![self.nodes[id as usize].key.clone()];
        while let Some(p) = self.nodes[id as usize].parent {
            keys.push(self.nodes[p as usize].key.clone());
            id = p;
        }
        keys.reverse();
        keys
    }
}

/// Plans with M*: agents follow `policy` until a conflict couples them.
/// With the shortest-path policy and `epsilon = 1` the result is optimal
/// for the sum of costs; in general it is within `epsilon` of optimal for
/// the shortest-path policy.
///
/// Timeouts and an exhausted open list are reported through the metrics.
/// An illegal policy move aborts with [`Error::IllegalPolicyMove`].
pub fn mstar_plan<P: PolicyProvider>(
    instance: &MapfInstance,
    mut policy: P,
    config: &PlanConfig,
) -> Result<PlanOutcome> {
    let started = Instant::now();
    let n = instance.agent_count();
    if n > MAX_AGENTS {
        return Err(Error::InvalidArgument(format!(
            "{n} agents exceeds the limit of {MAX_AGENTS}"
        )));
    }
    if config.epsilon.is_nan() || config.epsilon < 1.0 {
        return Err(Error::InvalidArgument(format!(
            "inflation {} must be at least 1",
            config.epsilon
        )));
    }
    let map = &instance.map;
    let finish = |mut metrics: RunMetrics, solution: Option<Solution>| {
        metrics.wall_time_s = started.elapsed().as_secs_f64();
        PlanOutcome { solution, metrics }
    };

    let fields = match goal_fields(instance) {
        Ok(f) => f,
        Err(_) => return Ok(finish(RunMetrics::new(PlanStatus::Exhausted), None)),
    };
    let starts_ok = instance.starts.iter().all(|&c| map.is_free(c))
        && instance
            .starts
            .iter()
            .zip(&fields)
            .all(|(&s, f)| f.get(s).is_some())
        && transition_conflicts(&instance.starts, &instance.starts).is_empty();
    if !starts_ok {
        return Ok(finish(RunMetrics::new(PlanStatus::Exhausted), None));
    }

    let problem = Problem {
        map,
        goals: instance
            .goals
            .iter()
            .map(|&g| map.index(g) as u32)
            .collect(),
        fields,
    };
    let mut graph = Graph::new(config.epsilon);
    let mut metrics = RunMetrics::new(PlanStatus::Exhausted);

    let start_key: Vec<Packed> = instance
        .starts
        .iter()
        .map(|&c| pack(map.index(c), false))
        .collect();
    let start = graph.get_or_insert(&start_key, &problem);
    graph.nodes[start as usize].g = 0;
    graph.push_open(start);
    metrics.nodes_generated = 1;

    let mut succ_key: Vec<Packed> = Vec::with_capacity(n);
    let mut from_cells: Vec<u32> = Vec::with_capacity(n);
    let mut to_cells: Vec<u32> = Vec::with_capacity(n);
    let mut ticks = 0u64;

    while let Some(entry) = graph.open.pop() {
        let id = entry.id;
        if entry.g != graph.nodes[id as usize].g {
            continue;
        }
        graph.nodes[id as usize].in_open = false;

        let key = graph.nodes[id as usize].key.clone();
        if key
            .iter()
            .zip(&problem.goals)
            .all(|(&p, &g)| cell_of(p) == g)
        {
            metrics.status = PlanStatus::Solved;
            metrics.success = true;
            let keys = graph.path_to(id);
            let mut paths = vec![AgentPath::default(); n];
            for k in &keys {
                for (path, &p) in paths.iter_mut().zip(k.iter()) {
                    path.vertices.push(map.cell_at(cell_of(p) as usize));
                }
            }
            let solution = Solution::from_paths(instance, paths);
            metrics.cost = Some(solution.sum_of_costs);
            metrics.max_collision_set = graph.max_collision_set;
            return Ok(finish(metrics, Some(solution)));
        }

        metrics.nodes_expanded += 1;
        let (g, depth, collision) = {
            let node = &graph.nodes[id as usize];
            (node.g, node.depth, node.collision)
        };
        let mut product = Product::new(problem.options_for(&key, collision, &mut policy)?);
        from_cells.clear();
        from_cells.extend(key.iter().map(|&p| cell_of(p)));

        while let Some(step_cost) = product.next_into(&mut succ_key) {
            ticks += 1;
            if ticks.is_multiple_of(TIME_CHECK_INTERVAL) && started.elapsed() >= config.time_limit {
                metrics.status = PlanStatus::Timeout;
                metrics.max_collision_set = graph.max_collision_set;
                return Ok(finish(metrics, None));
            }
            if let Some(limit) = config.node_limit {
                if metrics.nodes_generated >= limit {
                    metrics.status = PlanStatus::NodeLimit;
                    metrics.max_collision_set = graph.max_collision_set;
                    return Ok(finish(metrics, None));
                }
            }
            metrics.nodes_generated += 1;

            to_cells.clear();
            to_cells.extend(succ_key.iter().map(|&p| cell_of(p)));
            let conflicts = transition_conflicts(&from_cells, &to_cells);

            let succ = graph.get_or_insert(&succ_key, &problem);
            graph.add_backprop(succ, id);

            if !conflicts.is_empty() {
                let mut colliding = AgentSet::EMPTY;
                for c in &conflicts {
                    colliding.insert(c.a);
                    colliding.insert(c.b);
                    metrics.conflicts_detected += match c.kind {
                        ConflictKind::Vertex => 1,
                        ConflictKind::Edge => 2,
                    };
                    if config.record_conflicts {
                        let time = depth + 1;
                        let mut mark = |ci: u32| {
                            metrics.conflict_locations.push(ConflictLocation {
                                cell: map.cell_at(ci as usize),
                                time,
                            })
                        };
                        match c.kind {
                            ConflictKind::Vertex => mark(to_cells[c.a]),
                            ConflictKind::Edge => {
                                mark(from_cells[c.a]);
                                mark(to_cells[c.a]);
                            }
                        }
                    }
                }
                let node = &mut graph.nodes[succ as usize];
                if !colliding.is_subset(node.collision) {
                    node.collision = node.collision.union(colliding);
                    graph.max_collision_set = graph.max_collision_set.max(node.collision.len());
                }
            }

            let succ_collision = graph.nodes[succ as usize].collision;
            if !succ_collision.is_empty() {
                graph.backpropagate(id, succ_collision);
            }

            if conflicts.is_empty() && g + step_cost < graph.nodes[succ as usize].g {
                let node = &mut graph.nodes[succ as usize];
                node.g = g + step_cost;
                node.parent = Some(id);
                node.depth = depth + 1;
                graph.push_open(succ);
            }
        }
    }

    metrics.max_collision_set = graph.max_collision_set;
    Ok(finish(metrics, None))
}
