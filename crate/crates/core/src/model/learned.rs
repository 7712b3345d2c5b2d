use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::grid_world::{Action, Cell, MapfInstance};
use crate::observation::{encode, future_positions_predicted, ObservationTensor};
use crate::policy::{goal_fields, CostToGoField, PolicyProvider};

use super::Model;

/// Everything a scorer may look at for one (joint state, agent) query.
pub struct ScoringContext<'a> {
    pub instance: &'a MapfInstance,
    pub fields: &'a [CostToGoField],
    pub positions: &'a [Cell],
    pub agent: usize,
}

impl ScoringContext<'_> {
    /// The agent's observation, with the other agents' next three cells
    /// predicted by their shortest-path policies.
    pub fn observation(&self) -> Result<ObservationTensor> {
        let future = future_positions_predicted(
            &self.instance.map,
            self.positions,
            self.agent,
            self.fields,
        )?;
        encode(
            self.instance,
            self.positions,
            self.agent,
            self.fields,
            &future,
            0,
        )
    }
}

/// Produces one logit per action, in `Action` index order.
pub trait ActionScorer {
    fn scores(&mut self, ctx: &ScoringContext) -> Result<Vec<f32>>;
}

impl ActionScorer for Model {
    fn scores(&mut self, ctx: &ScoringContext) -> Result<Vec<f32>> {
        self.forward(&ctx.observation()?)
    }
}

impl ActionScorer for &Model {
    fn scores(&mut self, ctx: &ScoringContext) -> Result<Vec<f32>> {
        self.forward(&ctx.observation()?)
    }
}

impl<S: ActionScorer + ?Sized> ActionScorer for Box<S> {
    fn scores(&mut self, ctx: &ScoringContext) -> Result<Vec<f32>> {
        (**self).scores(ctx)
    }
}

/// One-hot logits on the shortest-path move. Behind [`LearnedPolicy`] it
/// reproduces [`crate::policy::DijkstraPolicy`] exactly.
#[derive(Clone, Copy, Debug, Default)]
pub struct DijkstraScorer;

impl ActionScorer for DijkstraScorer {
    fn scores(&mut self, ctx: &ScoringContext) -> Result<Vec<f32>> {
        let from = ctx.positions[ctx.agent];
        let to = ctx.fields[ctx.agent].policy_step(&ctx.instance.map, from)?;
        let action = Action::between(from, to).ok_or(Error::IllegalPolicyMove {
            agent: ctx.agent,
            from,
            to,
        })?;
        let mut logits = vec![0.0; Action::ALL.len()];
        logits[action.index()] = 1.0;
        Ok(logits)
    }
}

/// Entries kept before the memo is cleared.
const MEMO_CAPACITY: usize = 1 << 20;

/// Policy that takes the arg-max action of a scorer. Moves into obstacles
/// or off the map become waits. Answers are memoized per joint state.
pub struct LearnedPolicy<S> {
    instance: MapfInstance,
    fields: Vec<CostToGoField>,
    scorer: S,
    memo: HashMap<Vec<Cell>, Vec<Option<Cell>>>,
    evaluations: u64,
}

impl<S: ActionScorer> LearnedPolicy<S> {
    pub fn new(instance: &MapfInstance, scorer: S) -> Result<Self> {
        Ok(LearnedPolicy {
            instance: instance.clone(),
            fields: goal_fields(instance)?,
            scorer,
            memo: HashMap::new(),
            evaluations: 0,
        })
    }

    /// Number of scorer calls so far (memo misses).
    pub fn evaluations(&self) -> u64 {
        self.evaluations
    }

    pub fn into_scorer(self) -> S {
        self.scorer
    }
}

impl<S: ActionScorer> PolicyProvider for LearnedPolicy<S> {
    fn next_cell(&mut self, positions: &[Cell], agent: usize) -> Result<Cell> {
        let n = self.instance.agent_count();
        if positions.len() != n || agent >= n {
            return Err(Error::InvalidArgument(format!(
                "policy query for agent {agent} with {} positions (N = {n})",
                positions.len()
            )));
        }
        if let Some(Some(c)) = self.memo.get(positions).map(|v| v[agent]) {
            return Ok(c);
        }
        let ctx = ScoringContext {
            instance: &self.instance,
            fields: &self.fields,
            positions,
            agent,
        };
        let logits = self.scorer.scores(&ctx)?;
        self.evaluations += 1;
        if logits.len() != Action::ALL.len() {
            return Err(Error::Tensor {
                name: "logits".into(),
                msg: format!("expected 5 values, got {}", logits.len()),
            });
        }
        let action = Action::from_index(Model::argmax(&logits)).expect("argmax below 5");
        let from = positions[agent];
        let next = self.instance.map.step(from, action).unwrap_or(from);

        if self.memo.len() >= MEMO_CAPACITY {
            self.memo.clear();
        }
        self.memo
            .entry(positions.to_vec())
            .or_insert_with(|| vec![None; n])[agent] = Some(next);
        Ok(next)
    }
}
