//! Ten-channel 32x32 per-agent observation tensors.
//!
//! | index   | content                                                     |
//! |---------|-------------------------------------------------------------|
//! | 0       | obstacles (1 = blocked)                                     |
//! | 1       | this agent's current cell                                   |
//! | 2       | this agent's goal                                           |
//! | 3       | this agent's cost-to-go, normalized to [0, 1]              |
//! | 4       | other agents' current cells                                 |
//! | 5       | other agents' goals                                         |
//! | 6       | sum of the other agents' cost-to-go, normalized to [0, 1]  |
//! | 7..=9   | other agents' cells 1, 2 and 3 steps ahead                  |
//!
//! Maps smaller than 32x32 occupy the top-left corner; the rest is zero.
//! Cells that cannot reach a goal (including obstacles) encode as 1.0 in the
//! cost-to-go channels.

use crate::error::{Error, Result};
use crate::grid_world::{Cell, GridMap, MapfInstance, Solution};
use crate::policy::CostToGoField;

pub const CHANNELS: usize = 10;
pub const SIDE: usize = 32;
pub const PLANE: usize = SIDE * SIDE;
pub const LEN: usize = CHANNELS * PLANE;

/// Channel-major, row-major-within-channel tensor of `f32`.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationTensor {
    pub data: Vec<f32>,
    pub agent: usize,
    pub time: u32,
}

impl ObservationTensor {
    pub fn zeros(agent: usize, time: u32) -> Self {
        ObservationTensor {
            data: vec![0.0; LEN],
            agent,
            time,
        }
    }

    pub fn channel(&self, ch: usize) -> &[f32] {
        &self.data[ch * PLANE..(ch + 1) * PLANE]
    }

    pub fn get(&self, ch: usize, cell: Cell) -> f32 {
        self.data[ch * PLANE + cell.row as usize * SIDE + cell.col as usize]
    }

    fn set(&mut self, ch: usize, cell: Cell, v: f32) {
        self.data[ch * PLANE + cell.row as usize * SIDE + cell.col as usize] = v;
    }

    /// Little-endian `f32` payload.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn from_le_bytes(bytes: &[u8], agent: usize, time: u32) -> Result<Self> {
        if bytes.len() != LEN * 4 {
            return Err(Error::InvalidArgument(format!(
                "observation payload is {} bytes, expected {}",
                bytes.len(),
                LEN * 4
            )));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(ObservationTensor { data, agent, time })
    }

    /// Checks the value-range invariants; returns a description of the
    /// first violation.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        for ch in 0..CHANNELS {
            let binary = !matches!(ch, 3 | 6);
            for (i, &v) in self.channel(ch).iter().enumerate() {
                let ok = if binary {
                    v == 0.0 || v == 1.0
                } else {
                    (0.0..=1.0).contains(&v)
                };
                if !ok {
                    return Err(format!("channel {} index {i}: value {v}", ch + 1));
                }
            }
        }
        for ch in [1, 2] {
            let ones = self.channel(ch).iter().filter(|&&v| v == 1.0).count();
            if ones != 1 {
                return Err(format!("channel {} has {ones} marks", ch + 1));
            }
        }
        Ok(())
    }
}

/// Other agents' cells at `t + 1`, `t + 2` and `t + 3`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FutureMarks(pub [Vec<Cell>; 3]);

impl FutureMarks {
    /// The three steps as binary 32x32 matrices.
    pub fn to_matrices(&self) -> [Vec<f32>; 3] {
        self.0.clone().map(|cells| {
            let mut m = vec![0.0; PLANE];
            for c in cells {
                m[c.row as usize * SIDE + c.col as usize] = 1.0;
            }
            m
        })
    }
}

/// Future cells of every agent but `excluded`, read from a stored joint
/// path (goals repeat past its end).
pub fn future_positions_from_path(solution: &Solution, excluded: usize, t: usize) -> FutureMarks {
    FutureMarks([1, 2, 3].map(|k| {
        solution
            .paths
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != excluded)
            .map(|(_, p)| p.at(t + k))
            .collect()
    }))
}

/// Future cells of every agent but `excluded`, rolling each one three
/// steps along its own shortest-path policy.
pub fn future_positions_predicted(
    map: &GridMap,
    positions: &[Cell],
    excluded: usize,
    fields: &[CostToGoField],
) -> Result<FutureMarks> {
    let mut marks: [Vec<Cell>; 3] = Default::default();
    for (j, (&start, field)) in positions.iter().zip(fields).enumerate() {
        if j == excluded {
            continue;
        }
        let mut c = start;
        for m in marks.iter_mut() {
            c = field.policy_step(map, c)?;
            m.push(c);
        }
    }
    Ok(FutureMarks(marks))
}

/// Per-cell value scaled by the largest finite entry; infinite entries
/// become 1.0 and `0 / 0` becomes 0.
fn normalized(values: &[Option<u64>]) -> Vec<f32> {
    let max = values.iter().flatten().copied().max().unwrap_or(0);
    values
        .iter()
        .map(|v| match v {
            None => 1.0,
            Some(_) if max == 0 => 0.0,
            Some(x) => (*x as f64 / max as f64) as f32,
        })
        .collect()
}

/// Builds agent `agent`'s observation with its own and the other agents'
/// current cells taken from `positions`.
pub fn encode(
    instance: &MapfInstance,
    positions: &[Cell],
    agent: usize,
    fields: &[CostToGoField],
    future: &FutureMarks,
    time: u32,
) -> Result<ObservationTensor> {
    let map = &instance.map;
    let n = instance.agent_count();
    if agent >= n {
        return Err(Error::InvalidArgument(format!(
            "agent {agent} out of range (N = {n})"
        )));
    }
    if map.width() as usize > SIDE || map.height() as usize > SIDE {
        return Err(Error::InvalidArgument(format!(
            "map {}x{} exceeds the {SIDE}x{SIDE} observation",
            map.width(),
            map.height()
        )));
    }
    if positions.len() != n || fields.len() != n {
        return Err(Error::InvalidArgument(
            "positions/fields do not match agent count".into(),
        ));
    }

    let mut obs = ObservationTensor::zeros(agent, time);
    for c in map.blocked_cells() {
        obs.set(0, c, 1.0);
    }
    obs.set(1, positions[agent], 1.0);
    obs.set(2, instance.goals[agent], 1.0);

    let cells: Vec<Cell> = map.cells().collect();
    let own: Vec<Option<u64>> = cells
        .iter()
        .map(|&c| fields[agent].get(c).map(u64::from))
        .collect();
    for (&c, v) in cells.iter().zip(normalized(&own)) {
        obs.set(3, c, v);
    }

    if n > 1 {
        let others: Vec<usize> = (0..n).filter(|&j| j != agent).collect();
        let summed: Vec<Option<u64>> = cells
            .iter()
            .map(|&c| {
                others
                    .iter()
                    .map(|&j| fields[j].get(c).map(u64::from))
                    .sum()
            })
            .collect();
        for (&c, v) in cells.iter().zip(normalized(&summed)) {
            obs.set(6, c, v);
        }
        for &j in &others {
            obs.set(4, positions[j], 1.0);
            obs.set(5, instance.goals[j], 1.0);
        }
    }

    for (k, marks) in future.0.iter().enumerate() {
        for &c in marks {
            if !map.in_bounds(c) {
                return Err(Error::InvalidCell(c));
            }
            obs.set(7 + k, c, 1.0);
        }
    }
    Ok(obs)
}
