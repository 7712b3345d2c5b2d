//! WebAssembly bindings for the static demo in `www/`.
//!
//! Instances cross the boundary as JSON:
//! `{"width", "height", "blocked": [0|1 row-major], "starts": [[r,c]], "goals": [[r,c]]}`.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use lmstar::bench::{conflict_counts, ConflictCount};
use lmstar::grid_world::{generate_instance, generate_random_map, Cell, GridMap, MapfInstance};
use lmstar::model::{read_weights, LearnedPolicy, Model};
use lmstar::observation::{encode, future_positions_predicted, CHANNELS, SIDE};
use lmstar::policy::{goal_fields, DijkstraPolicy, UNREACHABLE};
use lmstar::search::{mstar_plan, plan_with_fallback, PlanConfig, RunMetrics};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoInstance {
    pub width: u32,
    pub height: u32,
    pub blocked: Vec<u8>,
    pub starts: Vec<Cell>,
    pub goals: Vec<Cell>,
}

impl DemoInstance {
    pub fn from_instance(inst: &MapfInstance) -> Self {
        DemoInstance {
            width: inst.map.width(),
            height: inst.map.height(),
            blocked: inst
                .map
                .cells()
                .map(|c| inst.map.is_blocked(c) as u8)
                .collect(),
            starts: inst.starts.clone(),
            goals: inst.goals.clone(),
        }
    }

    pub fn to_instance(&self) -> Result<MapfInstance, String> {
        if self.blocked.len() != (self.width * self.height) as usize {
            return Err("blocked mask does not match the map size".into());
        }
        let blocked = self
            .blocked
            .iter()
            .enumerate()
            .filter(|(_, &b)| b != 0)
            .map(|(i, _)| Cell::new(i as u32 / self.width, i as u32 % self.width));
        let map =
            GridMap::with_blocked(self.width, self.height, blocked).map_err(|e| e.to_string())?;
        MapfInstance::new(map, self.starts.clone(), self.goals.clone()).map_err(|e| e.to_string())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveResult {
    pub metrics: RunMetrics,
    pub paths: Vec<Vec<Cell>>,
    pub conflicts: Vec<ConflictCount>,
}

fn parse(json: &str) -> Result<MapfInstance, String> {
    serde_json::from_str::<DemoInstance>(json)
        .map_err(|e| e.to_string())?
        .to_instance()
}

pub fn random_instance_json(
    width: u32,
    height: u32,
    obstacles: f64,
    agents: u32,
    seed: u64,
) -> Result<String, String> {
    let map = generate_random_map(width, height, obstacles, seed).map_err(|e| e.to_string())?;
    let inst = generate_instance(&map, agents as usize, seed).map_err(|e| e.to_string())?;
    serde_json::to_string(&DemoInstance::from_instance(&inst)).map_err(|e| e.to_string())
}

/// Plans with shortest-path policies, or with the learned policy when
/// `weights` holds an `LMW1` file.
pub fn solve_json(
    instance: &str,
    epsilon: f64,
    time_limit_ms: u32,
    weights: Option<&[u8]>,
) -> Result<String, String> {
    let inst = parse(instance)?;
    let config = PlanConfig {
        epsilon,
        time_limit: Duration::from_millis(time_limit_ms as u64),
        record_conflicts: true,
        ..PlanConfig::default()
    };
    let outcome = match weights {
        Some(bytes) => {
            let model = Model::new(&read_weights(bytes).map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())?;
            let policy = LearnedPolicy::new(&inst, &model).map_err(|e| e.to_string())?;
            plan_with_fallback(&inst, policy, &config)
        }
        None => mstar_plan(
            &inst,
            DijkstraPolicy::new(&inst).map_err(|e| e.to_string())?,
            &config,
        ),
    }
    .map_err(|e| e.to_string())?;
    let result = SolveResult {
        conflicts: conflict_counts(&outcome.metrics.conflict_locations),
        paths: outcome
            .solution
            .map(|s| s.paths.into_iter().map(|p| p.vertices).collect())
            .unwrap_or_default(),
        metrics: outcome.metrics,
    };
    serde_json::to_string(&result).map_err(|e| e.to_string())
}

/// Agent `agent`'s observation at the start positions, `CHANNELS` planes
/// of `SIDE * SIDE` values.
pub fn observation_at_start(instance: &str, agent: u32) -> Result<Vec<f32>, String> {
    let inst = parse(instance)?;
    let fields = goal_fields(&inst).map_err(|e| e.to_string())?;
    let agent = agent as usize;
    let future = future_positions_predicted(&inst.map, &inst.starts, agent, &fields)
        .map_err(|e| e.to_string())?;
    let obs = encode(&inst, &inst.starts, agent, &fields, &future, 0).map_err(|e| e.to_string())?;
    Ok(obs.data)
}

/// Shortest-path distances to agent `agent`'s goal, row-major; -1 where
/// the goal cannot be reached.
pub fn cost_to_go_values(instance: &str, agent: u32) -> Result<Vec<i32>, String> {
    let inst = parse(instance)?;
    let fields = goal_fields(&inst).map_err(|e| e.to_string())?;
    let field = fields.get(agent as usize).ok_or("agent out of range")?;
    Ok(field
        .values()
        .iter()
        .map(|&v| if v == UNREACHABLE { -1 } else { v as i32 })
        .collect())
}

#[wasm_bindgen]
pub fn observation_channels() -> u32 {
    CHANNELS as u32
}

#[wasm_bindgen]
pub fn observation_side() -> u32 {
    SIDE as u32
}

#[wasm_bindgen]
pub fn random_instance(
    width: u32,
    height: u32,
    obstacles: f64,
    agents: u32,
    seed: u32,
) -> Result<String, JsError> {
    random_instance_json(width, height, obstacles, agents, seed as u64)
        .map_err(|e| JsError::new(&e))
}

/// `weights` may be empty to use shortest-path policies.
#[wasm_bindgen]
pub fn solve(
    instance: &str,
    epsilon: f64,
    time_limit_ms: u32,
    weights: &[u8],
) -> Result<String, JsError> {
    let weights = (!weights.is_empty()).then_some(weights);
    solve_json(instance, epsilon, time_limit_ms, weights).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn observation(instance: &str, agent: u32) -> Result<Vec<f32>, JsError> {
    observation_at_start(instance, agent).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn cost_to_go(instance: &str, agent: u32) -> Result<Vec<i32>, JsError> {
    cost_to_go_values(instance, agent).map_err(|e| JsError::new(&e))
}
