use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::time::Duration;

use web_time::Instant;

use crate::error::{Error, Result};
use crate::grid_world::{Cell, MapfInstance};
use crate::policy::goal_fields;

/// (cell, parked) per agent.
type Joint = Vec<(Cell, bool)>;

/// Optimal sum of costs by A* over the full joint configuration space,
/// with the same cost and conflict rules as [`super::mstar_plan`].
///
/// Returns `Ok(None)` when no solution exists. Exponential in the agent
/// count; intended for a handful of agents on small maps.
pub fn joint_astar_oracle(instance: &MapfInstance, time_limit: Duration) -> Result<Option<u64>> {
    let started = Instant::now();
    let map = &instance.map;
    let n = instance.agent_count();
    let Ok(fields) = goal_fields(instance) else {
        return Ok(None);
    };
    let h = |j: &Joint| -> Option<u64> {
        j.iter()
            .zip(&fields)
            .map(|((c, _), f)| f.get(*c).map(u64::from))
            .sum()
    };

    let start: Joint = instance.starts.iter().map(|&c| (c, false)).collect();
    let Some(h0) = h(&start) else {
        return Ok(None);
    };
    let mut best: HashMap<Joint, u64> = HashMap::from([(start.clone(), 0)]);
    let mut open = BinaryHeap::from([Reverse((h0, Reverse(0u64), start))]);
    let mut pops = 0u64;

    while let Some(Reverse((_, Reverse(g), joint))) = open.pop() {
        if best.get(&joint).is_some_and(|&b| b < g) {
            continue;
        }
        pops += 1;
        if pops.is_multiple_of(1024) && started.elapsed() >= time_limit {
            return Err(Error::Timeout);
        }
        if joint.iter().zip(&instance.goals).all(|((c, _), g)| c == g) {
            return Ok(Some(g));
        }

        // Per-agent moves with their costs.
        let per_agent: Vec<Vec<((Cell, bool), u64)>> = joint
            .iter()
            .enumerate()
            .map(|(i, &(c, parked))| {
                if parked {
                    return vec![((c, true), 0)];
                }
                let mut v: Vec<_> = map
                    .neighbors(c)
                    .expect("joint states only hold free cells")
                    .into_iter()
                    .map(|nc| ((nc, false), 1))
                    .collect();
                if c == instance.goals[i] {
                    v.push(((c, true), 0));
                }
                v
            })
            .collect();

        let mut idx = vec![0usize; n];
        'product: loop {
            let next: Joint = (0..n).map(|i| per_agent[i][idx[i]].0).collect();
            let cost: u64 = (0..n).map(|i| per_agent[i][idx[i]].1).sum();
            let collides = (0..n).any(|i| {
                ((i + 1)..n).any(|j| {
                    next[i].0 == next[j].0 || (joint[i].0 == next[j].0 && joint[j].0 == next[i].0)
                })
            });
            if !collides {
                let ng = g + cost;
                if best.get(&next).is_none_or(|&b| ng < b) {
                    if let Some(nh) = h(&next) {
                        best.insert(next.clone(), ng);
                        open.push(Reverse((ng + nh, Reverse(ng), next)));
                    }
                }
            }
            for i in (0..n).rev() {
                idx[i] += 1;
                if idx[i] < per_agent[i].len() {
                    continue 'product;
                }
                idx[i] = 0;
            }
            break;
        }
    }
    Ok(None)
}
