//! Cost-to-go fields and individual policies.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::grid_world::{Action, Cell, GridMap, MapfInstance};

/// Marker for cells that cannot reach the goal (and obstacles).
pub const UNREACHABLE: u32 = u32::MAX;

/// Unit-cost distance from every cell to one goal.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CostToGoField {
    goal: Cell,
    width: u32,
    values: Vec<u32>,
}

impl CostToGoField {
    pub fn goal(&self) -> Cell {
        self.goal
    }

    /// Distance to the goal, `None` if unreachable, blocked or out of bounds.
    pub fn get(&self, cell: Cell) -> Option<u32> {
        if cell.col >= self.width {
            return None;
        }
        let i = (cell.row * self.width + cell.col) as usize;
        self.values.get(i).copied().filter(|&v| v != UNREACHABLE)
    }

    /// Raw values in row-major order, [`UNREACHABLE`] for infinite entries.
    pub fn values(&self) -> &[u32] {
        &self.values
    }

    pub fn max_finite(&self) -> Option<u32> {
        self.values
            .iter()
            .copied()
            .filter(|&v| v != UNREACHABLE)
            .max()
    }

    /// Neighbor of `cell` with the smallest distance; ties go to the earlier
    /// action in (wait, north, east, south, west) order.
    pub fn policy_step(&self, map: &GridMap, cell: Cell) -> Result<Cell> {
        let here = self.get(cell).ok_or(Error::Unreachable {
            cell,
            goal: self.goal,
        })?;
        if here == 0 {
            return Ok(cell);
        }
        let mut best = (here, cell);
        for a in &Action::ALL[1..] {
            if let Some(n) = map.step(cell, *a) {
                if let Some(v) = self.get(n) {
                    if v < best.0 {
                        best = (v, n);
                    }
                }
            }
        }
        Ok(best.1)
    }
}

/// Exact distances to `goal` by Dijkstra's algorithm run backwards over
/// free cells.
pub fn backward_dijkstra(map: &GridMap, goal: Cell) -> Result<CostToGoField> {
    if !map.is_free(goal) {
        return Err(Error::InvalidCell(goal));
    }
    let mut values = vec![UNREACHABLE; map.cell_count()];
    let mut heap = BinaryHeap::new();
    values[map.index(goal)] = 0;
    heap.push(Reverse((0u32, goal)));
    while let Some(Reverse((d, c))) = heap.pop() {
        if d > values[map.index(c)] {
            continue;
        }
        for a in &Action::ALL[1..] {
            if let Some(n) = map.step(c, *a) {
                let ni = map.index(n);
                if d + 1 < values[ni] {
                    values[ni] = d + 1;
                    heap.push(Reverse((d + 1, n)));
                }
            }
        }
    }
    Ok(CostToGoField {
        goal,
        width: map.width(),
        values,
    })
}

/// One field per agent goal.
pub fn goal_fields(instance: &MapfInstance) -> Result<Vec<CostToGoField>> {
    instance
        .goals
        .iter()
        .map(|&g| backward_dijkstra(&instance.map, g))
        .collect()
}

/// Sum of the agents' distances to their goals.
pub fn joint_heuristic(fields: &[CostToGoField], cells: &[Cell]) -> Result<u64> {
    fields
        .iter()
        .zip(cells)
        .map(|(f, &c)| {
            f.get(c).map(u64::from).ok_or(Error::Unreachable {
                cell: c,
                goal: f.goal,
            })
        })
        .sum()
}

/// Supplies each agent's preferred next cell during search.
///
/// The returned cell must be the agent's current cell or a free 4-neighbor
/// of it. Implementations take `&mut self` so they may cache; a planner
/// queries its provider from a single thread.
pub trait PolicyProvider {
    fn next_cell(&mut self, positions: &[Cell], agent: usize) -> Result<Cell>;
}

impl<P: PolicyProvider + ?Sized> PolicyProvider for &mut P {
    fn next_cell(&mut self, positions: &[Cell], agent: usize) -> Result<Cell> {
        (**self).next_cell(positions, agent)
    }
}

impl<P: PolicyProvider + ?Sized> PolicyProvider for Box<P> {
    fn next_cell(&mut self, positions: &[Cell], agent: usize) -> Result<Cell> {
        (**self).next_cell(positions, agent)
    }
}

/// Decoupled shortest-path policy: every agent follows its own cost-to-go
/// field and ignores the others.
#[derive(Clone, Debug)]
pub struct DijkstraPolicy {
    map: GridMap,
    fields: Vec<CostToGoField>,
}

impl DijkstraPolicy {
    pub fn new(instance: &MapfInstance) -> Result<Self> {
        Ok(DijkstraPolicy {
            map: instance.map.clone(),
            fields: goal_fields(instance)?,
        })
    }

    pub fn from_fields(map: GridMap, fields: Vec<CostToGoField>) -> Self {
        DijkstraPolicy { map, fields }
    }

    pub fn fields(&self) -> &[CostToGoField] {
        &self.fields
    }
}

impl PolicyProvider for DijkstraPolicy {
    fn next_cell(&mut self, positions: &[Cell], agent: usize) -> Result<Cell> {
        self.fields[agent].policy_step(&self.map, positions[agent])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_world::{generate_instance, generate_random_map};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::VecDeque;

    fn bfs_oracle(map: &GridMap, goal: Cell) -> Vec<Option<u32>> {
        let mut dist = vec![None; map.cell_count()];
        let mut q = VecDeque::from([goal]);
        dist[map.index(goal)] = Some(0);
        while let Some(c) = q.pop_front() {
            let d = dist[map.index(c)].unwrap();
            let around = [
                (c.row.wrapping_sub(1), c.col),
                (c.row + 1, c.col),
                (c.row, c.col.wrapping_sub(1)),
                (c.row, c.col + 1),
            ];
            for (r, col) in around {
                let n = Cell::new(r, col);
                if map.is_free(n) && dist[map.index(n)].is_none() {
                    dist[map.index(n)] = Some(d + 1);
                    q.push_back(n);
                }
            }
        }
        dist
    }

    #[test]
    fn goal_and_neighbors() {
        let map = GridMap::empty(5, 5);
        let f = backward_dijkstra(&map, Cell::new(2, 2)).unwrap();
        assert_eq!(f.get(Cell::new(2, 2)), Some(0));
        for n in map.neighbors(Cell::new(2, 2)).unwrap().into_iter().skip(1) {
            assert_eq!(f.get(n), Some(1));
        }
        let blocked = GridMap::with_blocked(3, 3, [Cell::new(1, 1)]).unwrap();
        assert!(backward_dijkstra(&blocked, Cell::new(1, 1)).is_err());
    }

    #[test]
    fn matches_bfs_on_random_maps() {
        for seed in 0..20 {
            let map = generate_random_map(16, 16, 0.3, seed).unwrap();
            let Some(goal) = map.free_cells().next() else {
                continue;
            };
            let f = backward_dijkstra(&map, goal).unwrap();
            let oracle = bfs_oracle(&map, goal);
            for c in map.cells() {
                assert_eq!(f.get(c), oracle[map.index(c)], "seed {seed} cell {c}");
            }
        }
    }

    #[test]
    fn policy_step_rules() {
        let map = GridMap::empty(5, 5);
        let goal = Cell::new(2, 2);
        let f = backward_dijkstra(&map, goal).unwrap();
        assert_eq!(f.policy_step(&map, goal).unwrap(), goal);
        assert_eq!(f.policy_step(&map, Cell::new(2, 3)).unwrap(), goal);
        // (1,1): north-west of goal; east and south are both optimal, east wins.
        assert_eq!(
            f.policy_step(&map, Cell::new(1, 1)).unwrap(),
            Cell::new(1, 2)
        );
        // (3,3): north and west optimal, north wins.
        assert_eq!(
            f.policy_step(&map, Cell::new(3, 3)).unwrap(),
            Cell::new(2, 3)
        );

        let walled =
            GridMap::with_blocked(3, 3, [Cell::new(0, 1), Cell::new(1, 1), Cell::new(2, 1)])
                .unwrap();
        let f = backward_dijkstra(&walled, Cell::new(0, 0)).unwrap();
        assert!(matches!(
            f.policy_step(&walled, Cell::new(0, 2)),
            Err(Error::Unreachable { .. })
        ));
    }

    #[test]
    fn following_the_policy_takes_exactly_the_distance() {
        for seed in 0..10 {
            let map = generate_random_map(16, 16, 0.25, seed).unwrap();
            let free: Vec<Cell> = map.free_cells().collect();
            let goal = free[free.len() / 2];
            let f = backward_dijkstra(&map, goal).unwrap();
            for &start in &free {
                let Some(d) = f.get(start) else { continue };
                let mut c = start;
                for _ in 0..d {
                    c = f.policy_step(&map, c).unwrap();
                }
                assert_eq!(c, goal);
            }
        }
    }

    #[test]
    fn joint_heuristic_sums_distances() {
        let map = GridMap::empty(5, 5);
        let fields = vec![
            backward_dijkstra(&map, Cell::new(0, 3)).unwrap(),
            backward_dijkstra(&map, Cell::new(4, 4)).unwrap(),
        ];
        assert_eq!(
            joint_heuristic(&fields, &[Cell::new(0, 3), Cell::new(4, 4)]).unwrap(),
            0
        );
        assert_eq!(
            joint_heuristic(&fields, &[Cell::new(0, 0), Cell::new(4, 2)]).unwrap(),
            5
        );

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for seed in 0..20 {
            let map = generate_random_map(10, 10, 0.2, seed).unwrap();
            let Ok(inst) = generate_instance(&map, 3, seed) else {
                continue;
            };
            let fields = goal_fields(&inst).unwrap();
            let oracles: Vec<_> = inst.goals.iter().map(|&g| bfs_oracle(&map, g)).collect();
            let free: Vec<Cell> = map.free_cells().collect();
            let cells: Vec<Cell> = (0..3).map(|_| free[rng.gen_range(0..free.len())]).collect();
            let expected: Option<u64> = cells
                .iter()
                .zip(&oracles)
                .map(|(c, o)| o[map.index(*c)].map(u64::from))
                .sum();
            assert_eq!(joint_heuristic(&fields, &cells).ok(), expected);
        }
    }

    #[test]
    fn dijkstra_policy_is_always_legal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut queries = 0;
        for seed in 0..60 {
            let map = generate_random_map(12, 12, 0.3, seed).unwrap();
            let Ok(inst) = generate_instance(&map, 4, seed) else {
                continue;
            };
            let mut policy = DijkstraPolicy::new(&inst).unwrap();
            let free: Vec<Cell> = map.free_cells().collect();
            for _ in 0..250 {
                let pos: Vec<Cell> = (0..4).map(|_| free[rng.gen_range(0..free.len())]).collect();
                let agent = rng.gen_range(0..4);
                if policy.fields()[agent].get(pos[agent]).is_none() {
                    assert!(policy.next_cell(&pos, agent).is_err());
                    continue;
                }
                let next = policy.next_cell(&pos, agent).unwrap();
                assert!(map.is_free(next) && next.is_adjacent_or_same(pos[agent]));
                queries += 1;
            }
        }
        assert!(queries >= 10_000, "only {queries} legal queries");
    }
}
