//! Four-connected grid maps, MAPF instances and solution checking.

mod io;

use std::collections::VecDeque;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{parse_scen, write_scen, InstanceFile, ScenEntry, SolutionFile};

/// A grid cell addressed by `(row, col)`. Serializes as a `[row, col]` pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "(u32, u32)", into = "(u32, u32)")]
pub struct Cell {
    pub row: u32,
    pub col: u32,
}

impl Cell {
    pub const fn new(row: u32, col: u32) -> Self {
        Cell { row, col }
    }

    pub fn is_adjacent_or_same(self, other: Cell) -> bool {
        self.row.abs_diff(other.row) + self.col.abs_diff(other.col) <= 1
    }
}

impl From<(u32, u32)> for Cell {
    fn from((row, col): (u32, u32)) -> Self {
        Cell { row, col }
    }
}

impl From<Cell> for (u32, u32) {
    fn from(c: Cell) -> Self {
        (c.row, c.col)
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

/// The five agent actions, in the fixed order used for tie-breaking and
/// for the model's logits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Wait = 0,
    North = 1,
    East = 2,
    South = 3,
    West = 4,
}

impl Action {
    pub const ALL: [Action; 5] = [
        Action::Wait,
        Action::North,
        Action::East,
        Action::South,
        Action::West,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Action> {
        Action::ALL.get(index).copied()
    }

    /// Target cell of this action, or `None` when it leaves the
    /// non-negative quadrant. Bounds against a map are checked separately.
    pub fn apply(self, cell: Cell) -> Option<Cell> {
        let Cell { row, col } = cell;
        match self {
            Action::Wait => Some(cell),
            Action::North => row.checked_sub(1).map(|r| Cell::new(r, col)),
            Action::East => Some(Cell::new(row, col + 1)),
            Action::South => Some(Cell::new(row + 1, col)),
            Action::West => col.checked_sub(1).map(|c| Cell::new(row, c)),
        }
    }

    /// The action that moves `from` to `to`, if they are equal or 4-adjacent.
    pub fn between(from: Cell, to: Cell) -> Option<Action> {
        Action::ALL.into_iter().find(|a| a.apply(from) == Some(to))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridMap {
    width: u32,
    height: u32,
    blocked: Vec<bool>,
}

impl GridMap {
    pub fn empty(width: u32, height: u32) -> Self {
        GridMap {
            width,
            height,
            blocked: vec![false; (width * height) as usize],
        }
    }

    /// Builds a map from a list of blocked cells. Duplicates collapse.
    pub fn with_blocked(
        width: u32,
        height: u32,
        blocked: impl IntoIterator<Item = Cell>,
    ) -> Result<Self> {
        let mut map = GridMap::empty(width, height);
        for cell in blocked {
            if !map.in_bounds(cell) {
                return Err(Error::InvalidCell(cell));
            }
            let i = map.index(cell);
            map.blocked[i] = true;
        }
        Ok(map)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn cell_count(&self) -> usize {
        self.blocked.len()
    }

    pub fn in_bounds(&self, cell: Cell) -> bool {
        cell.row < self.height && cell.col < self.width
    }

    pub fn is_blocked(&self, cell: Cell) -> bool {
        self.blocked[self.index(cell)]
    }

    /// In bounds and not an obstacle.
    pub fn is_free(&self, cell: Cell) -> bool {
        self.in_bounds(cell) && !self.is_blocked(cell)
    }

    pub fn set_blocked(&mut self, cell: Cell, blocked: bool) {
        let i = self.index(cell);
        self.blocked[i] = blocked;
    }

    #[inline]
    pub fn index(&self, cell: Cell) -> usize {
        (cell.row * self.width + cell.col) as usize
    }

    #[inline]
    pub fn cell_at(&self, index: usize) -> Cell {
        let index = index as u32;
        Cell::new(index / self.width, index % self.width)
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.cell_count()).map(|i| self.cell_at(i))
    }

    pub fn blocked_cells(&self) -> impl Iterator<Item = Cell> + '_ {
        self.cells().filter(|&c| self.is_blocked(c))
    }

    pub fn free_cells(&self) -> impl Iterator<Item = Cell> + '_ {
        self.cells().filter(|&c| !self.is_blocked(c))
    }

    /// Target of `action` from `cell` if it is a free cell.
    #[inline]
    pub fn step(&self, cell: Cell, action: Action) -> Option<Cell> {
        action.apply(cell).filter(|&c| self.is_free(c))
    }

    /// Legal next cells from `cell`: wait first, then north, east, south, west.
    pub fn neighbors(&self, cell: Cell) -> Result<Vec<Cell>> {
        if !self.is_free(cell) {
            return Err(Error::InvalidCell(cell));
        }
        Ok(Action::ALL
            .into_iter()
            .filter_map(|a| self.step(cell, a))
            .collect())
    }

    /// Connected-component label per cell (`None` for obstacles), by BFS.
    pub fn components(&self) -> Vec<Option<u32>> {
        let mut label = vec![None; self.cell_count()];
        let mut next = 0;
        let mut queue = VecDeque::new();
        for seed in 0..self.cell_count() {
            if self.blocked[seed] || label[seed].is_some() {
                continue;
            }
            label[seed] = Some(next);
            queue.push_back(self.cell_at(seed));
            while let Some(c) = queue.pop_front() {
                for a in &Action::ALL[1..] {
                    if let Some(n) = self.step(c, *a) {
                        let ni = self.index(n);
                        if label[ni].is_none() {
                            label[ni] = Some(next);
                            queue.push_back(n);
                        }
                    }
                }
            }
            next += 1;
        }
        label
    }

    /// Fraction of blocked cells.
    pub fn obstacle_density(&self) -> f64 {
        if self.blocked.is_empty() {
            return 0.0;
        }
        self.blocked.iter().filter(|b| **b).count() as f64 / self.blocked.len() as f64
    }

    pub fn parse(text: &str) -> Result<GridMap> {
        io::parse_map(text)
    }

    pub fn to_map_string(&self) -> String {
        io::write_map(self)
    }
}

/// Random map where each cell is independently an obstacle with
/// probability `obstacle_prob` (0 to 0.5).
pub fn generate_random_map(
    width: u32,
    height: u32,
    obstacle_prob: f64,
    seed: u64,
) -> Result<GridMap> {
    if !(0.0..=0.5).contains(&obstacle_prob) {
        return Err(Error::InvalidArgument(format!(
            "obstacle probability {obstacle_prob} outside [0, 0.5]"
        )));
    }
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument(
            "map dimensions must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut map = GridMap::empty(width, height);
    for b in map.blocked.iter_mut() {
        *b = rng.gen::<f64>() < obstacle_prob;
    }
    Ok(map)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MapfInstance {
    pub map: GridMap,
    pub starts: Vec<Cell>,
    pub goals: Vec<Cell>,
}

impl MapfInstance {
    /// Checks the instance invariants: matching lengths, free and pairwise
    /// distinct starts and goals, and start-goal connectivity.
    pub fn new(map: GridMap, starts: Vec<Cell>, goals: Vec<Cell>) -> Result<Self> {
        if starts.len() != goals.len() {
            return Err(Error::InvalidArgument(format!(
                "{} starts but {} goals",
                starts.len(),
                goals.len()
            )));
        }
        for &c in starts.iter().chain(&goals) {
            if !map.is_free(c) {
                return Err(Error::InvalidCell(c));
            }
        }
        for (label, cells) in [("start", &starts), ("goal", &goals)] {
            let mut sorted = cells.clone();
            sorted.sort_unstable();
            if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate {label} cell {}",
                    w[0]
                )));
            }
        }
        let comps = map.components();
        for (&s, &g) in starts.iter().zip(&goals) {
            if comps[map.index(s)] != comps[map.index(g)] {
                return Err(Error::Unreachable { cell: s, goal: g });
            }
        }
        Ok(MapfInstance { map, starts, goals })
    }

    /// Builds an instance without the connectivity and distinctness checks.
    /// Planners report such instances as unsolvable instead of rejecting them.
    pub fn new_unchecked(map: GridMap, starts: Vec<Cell>, goals: Vec<Cell>) -> Self {
        MapfInstance { map, starts, goals }
    }

    pub fn agent_count(&self) -> usize {
        self.starts.len()
    }
}

/// Places `agents` start/goal pairs uniformly at random on free cells, each
/// pair in one connected component, with a start different from its goal.
/// Gives up after `100 * agents` pair draws.
pub fn generate_instance(map: &GridMap, agents: usize, seed: u64) -> Result<MapfInstance> {
    let free: Vec<Cell> = map.free_cells().collect();
    if agents == 0 {
        return Err(Error::InvalidArgument(
            "agent count must be positive".into(),
        ));
    }
    if free.len() < 2 || agents > free.len() {
        return Err(Error::PlacementFailed {
            agents,
            attempts: 0,
        });
    }
    let comps = map.components();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut used_start = vec![false; map.cell_count()];
    let mut used_goal = vec![false; map.cell_count()];
    let mut starts = Vec::with_capacity(agents);
    let mut goals = Vec::with_capacity(agents);
    let budget = 100 * agents;
    let mut attempts = 0;
    while starts.len() < agents {
        if attempts >= budget {
            return Err(Error::PlacementFailed { agents, attempts });
        }
        attempts += 1;
        let s = *free.choose(&mut rng).expect("free cells exist");
        let g = *free.choose(&mut rng).expect("free cells exist");
        let (si, gi) = (map.index(s), map.index(g));
        if s == g || used_start[si] || used_goal[gi] || comps[si] != comps[gi] {
            continue;
        }
        used_start[si] = true;
        used_goal[gi] = true;
        starts.push(s);
        goals.push(g);
    }
    Ok(MapfInstance {
        map: map.clone(),
        starts,
        goals,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentPath {
    pub vertices: Vec<Cell>,
}

impl AgentPath {
    /// Position at time `t`; past the end the agent stays at its last cell.
    pub fn at(&self, t: usize) -> Cell {
        self.vertices[t.min(self.vertices.len() - 1)]
    }

    /// Cost with free waiting at the goal once the agent never leaves again:
    /// the time of the final arrival at `goal`. Paths that do not end at the
    /// goal are charged for every step.
    pub fn cost(&self, goal: Cell) -> u64 {
        let mut t = self.vertices.len();
        if self.vertices.last() != Some(&goal) {
            return t.saturating_sub(1) as u64;
        }
        while t > 0 && self.vertices[t - 1] == goal {
            t -= 1;
        }
        t as u64
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Solution {
    pub paths: Vec<AgentPath>,
    pub sum_of_costs: u64,
}

impl Solution {
    /// Pads every path to the common horizon and computes the sum of costs.
    pub fn from_paths(instance: &MapfInstance, mut paths: Vec<AgentPath>) -> Solution {
        let horizon = paths.iter().map(|p| p.vertices.len()).max().unwrap_or(0);
        for p in &mut paths {
            if let Some(&last) = p.vertices.last() {
                p.vertices.resize(horizon, last);
            }
        }
        let sum_of_costs = paths
            .iter()
            .zip(&instance.goals)
            .map(|(p, &g)| p.cost(g))
            .sum();
        Solution {
            paths,
            sum_of_costs,
        }
    }

    /// Number of time steps covered (vertices per padded path).
    pub fn horizon(&self) -> usize {
        self.paths
            .iter()
            .map(|p| p.vertices.len())
            .max()
            .unwrap_or(0)
    }

    /// Joint vertex at time `t` (goals repeat past the horizon).
    pub fn joint_at(&self, t: usize) -> Vec<Cell> {
        self.paths.iter().map(|p| p.at(t)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct VertexConflict {
    pub agents: (usize, usize),
    pub time: usize,
    pub cell: Cell,
}

/// Agents swap across `edge` between `time` and `time + 1`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct EdgeConflict {
    pub agents: (usize, usize),
    pub time: usize,
    pub edge: (Cell, Cell),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum Violation {
    AgentCount {
        expected: usize,
        found: usize,
    },
    EmptyPath {
        agent: usize,
    },
    WrongStart {
        agent: usize,
        expected: Cell,
        found: Cell,
    },
    WrongGoal {
        agent: usize,
        expected: Cell,
        found: Cell,
    },
    InvalidCell {
        agent: usize,
        time: usize,
        cell: Cell,
    },
    InvalidStep {
        agent: usize,
        time: usize,
        from: Cell,
        to: Cell,
    },
    CostMismatch {
        claimed: u64,
        actual: u64,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub vertex_conflicts: Vec<VertexConflict>,
    pub edge_conflicts: Vec<EdgeConflict>,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.vertex_conflicts.is_empty()
            && self.edge_conflicts.is_empty()
            && self.violations.is_empty()
    }

    pub fn conflict_count(&self) -> usize {
        self.vertex_conflicts.len() + self.edge_conflicts.len()
    }
}

/// Lists every conflict and validity violation of `solution`. Shorter
/// paths are treated as waiting at their last cell.
pub fn validate_solution(instance: &MapfInstance, solution: &Solution) -> ValidationReport {
    let mut report = ValidationReport::default();
    let n = instance.agent_count();
    if solution.paths.len() != n {
        report.violations.push(Violation::AgentCount {
            expected: n,
            found: solution.paths.len(),
        });
        return report;
    }
    for (agent, path) in solution.paths.iter().enumerate() {
        if path.vertices.is_empty() {
            report.violations.push(Violation::EmptyPath { agent });
        }
    }
    if !report.violations.is_empty() {
        return report;
    }

    let map = &instance.map;
    let mut actual_cost = 0;
    for (agent, path) in solution.paths.iter().enumerate() {
        let first = path.vertices[0];
        let last = *path.vertices.last().unwrap();
        if first != instance.starts[agent] {
            report.violations.push(Violation::WrongStart {
                agent,
                expected: instance.starts[agent],
                found: first,
            });
        }
        if last != instance.goals[agent] {
            report.violations.push(Violation::WrongGoal {
                agent,
                expected: instance.goals[agent],
                found: last,
            });
        }
        for (time, &cell) in path.vertices.iter().enumerate() {
            if !map.is_free(cell) {
                report
                    .violations
                    .push(Violation::InvalidCell { agent, time, cell });
            }
        }
        for (time, w) in path.vertices.windows(2).enumerate() {
            if !w[0].is_adjacent_or_same(w[1]) {
                report.violations.push(Violation::InvalidStep {
                    agent,
                    time,
                    from: w[0],
                    to: w[1],
                });
            }
        }
        actual_cost += path.cost(instance.goals[agent]);
    }
    if actual_cost != solution.sum_of_costs {
        report.violations.push(Violation::CostMismatch {
            claimed: solution.sum_of_costs,
            actual: actual_cost,
        });
    }

    let horizon = solution.horizon();
    for t in 0..horizon {
        for i in 0..n {
            for j in (i + 1)..n {
                let (pi, pj) = (&solution.paths[i], &solution.paths[j]);
                if pi.at(t) == pj.at(t) {
                    report.vertex_conflicts.push(VertexConflict {
                        agents: (i, j),
                        time: t,
                        cell: pi.at(t),
                    });
                }
                if t + 1 < horizon
                    && pi.at(t) != pi.at(t + 1)
                    && pi.at(t) == pj.at(t + 1)
                    && pj.at(t) == pi.at(t + 1)
                {
                    report.edge_conflicts.push(EdgeConflict {
                        agents: (i, j),
                        time: t,
                        edge: (pi.at(t), pi.at(t + 1)),
                    });
                }
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(cells: &[(u32, u32)]) -> AgentPath {
        AgentPath {
            vertices: cells.iter().map(|&c| c.into()).collect(),
        }
    }

    #[test]
    fn neighbor_counts() {
        let map = GridMap::empty(3, 3);
        assert_eq!(map.neighbors(Cell::new(1, 1)).unwrap().len(), 5);
        assert_eq!(map.neighbors(Cell::new(0, 0)).unwrap().len(), 3);
        let mut map = map;
        map.set_blocked(Cell::new(0, 1), true);
        assert_eq!(map.neighbors(Cell::new(1, 1)).unwrap().len(), 4);
        assert!(map.neighbors(Cell::new(0, 1)).is_err());
        assert!(map.neighbors(Cell::new(3, 0)).is_err());
    }

    #[test]
    fn neighbor_order_is_wait_north_east_south_west() {
        let map = GridMap::empty(3, 3);
        let n = map.neighbors(Cell::new(1, 1)).unwrap();
        assert_eq!(
            n,
            vec![
                Cell::new(1, 1),
                Cell::new(0, 1),
                Cell::new(1, 2),
                Cell::new(2, 1),
                Cell::new(1, 0)
            ]
        );
    }

    #[test]
    fn zero_probability_map_is_empty() {
        let map = generate_random_map(16, 16, 0.0, 3).unwrap();
        assert_eq!(map.blocked_cells().count(), 0);
        assert!(generate_random_map(4, 4, 0.6, 0).is_err());
    }

    #[test]
    fn random_map_is_deterministic() {
        let a = generate_random_map(32, 32, 0.3, 99).unwrap();
        let b = generate_random_map(32, 32, 0.3, 99).unwrap();
        assert_eq!(a, b);
        let c = generate_random_map(32, 32, 0.3, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn random_map_density_within_binomial_bound() {
        // 1024 cells at p = 0.2: sd = sqrt(1024 * 0.2 * 0.8) = 12.8 cells,
        // so [0.1, 0.3] is a +-8 sd window.
        for seed in 0..20 {
            let d = generate_random_map(32, 32, 0.2, seed)
                .unwrap()
                .obstacle_density();
            assert!((0.1..=0.3).contains(&d), "seed {seed}: density {d}");
        }
    }

    #[test]
    fn single_agent_instance_on_tiny_map() {
        let map = GridMap::empty(3, 3);
        let inst = generate_instance(&map, 1, 5).unwrap();
        assert_ne!(inst.starts[0], inst.goals[0]);
    }

    #[test]
    fn too_many_agents_is_an_error() {
        let map = GridMap::empty(3, 3);
        assert!(matches!(
            generate_instance(&map, 10, 0),
            Err(Error::PlacementFailed { .. })
        ));
    }

    #[test]
    fn dense_placement_gives_up() {
        // Two isolated free cells: a pair needs both in one component.
        let mut map = GridMap::empty(3, 1);
        map.set_blocked(Cell::new(0, 1), true);
        assert!(matches!(
            generate_instance(&map, 1, 0),
            Err(Error::PlacementFailed { attempts: 100, .. })
        ));
    }

    #[test]
    fn instance_generation_is_deterministic() {
        let map = generate_random_map(16, 16, 0.2, 1).unwrap();
        let a = generate_instance(&map, 5, 42).unwrap();
        let b = generate_instance(&map, 5, 42).unwrap();
        assert_eq!(a, b);
        MapfInstance::new(a.map.clone(), a.starts.clone(), a.goals.clone()).unwrap();
    }

    #[test]
    fn instance_constructor_rejects_duplicates_and_disconnection() {
        let map = GridMap::empty(3, 3);
        let c = Cell::new;
        assert!(
            MapfInstance::new(map.clone(), vec![c(0, 0), c(0, 0)], vec![c(1, 1), c(2, 2)]).is_err()
        );
        assert!(
            MapfInstance::new(map.clone(), vec![c(0, 0), c(0, 1)], vec![c(1, 1), c(1, 1)]).is_err()
        );
        let walled = GridMap::with_blocked(3, 3, [c(0, 1), c(1, 1), c(2, 1)]).unwrap();
        assert!(matches!(
            MapfInstance::new(walled, vec![c(0, 0)], vec![c(0, 2)]),
            Err(Error::Unreachable { .. })
        ));
        // A start may coincide with another agent's goal.
        MapfInstance::new(map, vec![c(0, 0), c(1, 1)], vec![c(1, 1), c(2, 2)]).unwrap();
    }

    #[test]
    fn disjoint_paths_validate() {
        let map = GridMap::empty(3, 3);
        let inst = MapfInstance::new(
            map,
            vec![Cell::new(0, 0), Cell::new(2, 0)],
            vec![Cell::new(0, 2), Cell::new(2, 2)],
        )
        .unwrap();
        let sol = Solution::from_paths(
            &inst,
            vec![
                path(&[(0, 0), (0, 1), (0, 2)]),
                path(&[(2, 0), (2, 1), (2, 2)]),
            ],
        );
        assert_eq!(sol.sum_of_costs, 4);
        assert!(validate_solution(&inst, &sol).is_valid());
    }

    #[test]
    fn vertex_conflict_reported_once() {
        let map = GridMap::empty(3, 3);
        let inst = MapfInstance::new_unchecked(
            map,
            vec![Cell::new(0, 1), Cell::new(1, 0)],
            vec![Cell::new(1, 1), Cell::new(1, 1)],
        );
        let a = path(&[(0, 1), (0, 1), (0, 1), (1, 1)]);
        let b = path(&[(1, 0), (1, 0), (1, 0), (1, 1)]);
        let sol = Solution::from_paths(&inst, vec![a, b]);
        let report = validate_solution(&inst, &sol);
        assert_eq!(report.vertex_conflicts.len(), 1);
        assert_eq!(report.vertex_conflicts[0].time, 3);
        assert_eq!(report.vertex_conflicts[0].cell, Cell::new(1, 1));
        assert!(report.edge_conflicts.is_empty());
    }

    #[test]
    fn edge_conflict_reported_once() {
        let map = GridMap::empty(3, 3);
        let inst = MapfInstance::new(
            map,
            vec![Cell::new(0, 0), Cell::new(0, 1)],
            vec![Cell::new(0, 1), Cell::new(0, 0)],
        )
        .unwrap();
        let a = path(&[(0, 0), (0, 0), (0, 0), (0, 1)]);
        let b = path(&[(0, 1), (0, 1), (0, 1), (0, 0)]);
        let sol = Solution::from_paths(&inst, vec![a, b]);
        let report = validate_solution(&inst, &sol);
        assert_eq!(report.edge_conflicts.len(), 1);
        assert_eq!(report.edge_conflicts[0].time, 2);
        assert_eq!(
            report.edge_conflicts[0].edge,
            (Cell::new(0, 0), Cell::new(0, 1))
        );
        assert!(report.vertex_conflicts.is_empty());
    }

    #[test]
    fn bad_steps_and_endpoints_are_violations() {
        let map = GridMap::with_blocked(3, 3, [Cell::new(1, 1)]).unwrap();
        let inst = MapfInstance::new(map, vec![Cell::new(0, 0)], vec![Cell::new(2, 2)]).unwrap();
        let sol = Solution {
            paths: vec![path(&[(0, 1), (1, 1), (2, 2)])],
            sum_of_costs: 7,
        };
        let v = validate_solution(&inst, &sol).violations;
        assert!(v.iter().any(|x| matches!(x, Violation::WrongStart { .. })));
        assert!(v.iter().any(|x| matches!(x, Violation::InvalidCell { .. })));
        assert!(v.iter().any(|x| matches!(x, Violation::InvalidStep { .. })));
        assert!(v
            .iter()
            .any(|x| matches!(x, Violation::CostMismatch { .. })));
    }

    #[test]
    fn goal_waits_are_free_only_at_the_end() {
        let g = Cell::new(0, 1);
        assert_eq!(path(&[(0, 0), (0, 1), (0, 1), (0, 1)]).cost(g), 1);
        // Leaves the goal after waiting: every earlier step is charged.
        assert_eq!(path(&[(0, 0), (0, 1), (0, 1), (0, 0), (0, 1)]).cost(g), 4);
        assert_eq!(path(&[(0, 1)]).cost(g), 0);
    }

    #[test]
    fn action_roundtrip() {
        let c = Cell::new(2, 2);
        for a in Action::ALL {
            assert_eq!(Action::between(c, a.apply(c).unwrap()), Some(a));
        }
        assert_eq!(Action::North.apply(Cell::new(0, 0)), None);
    }
}
