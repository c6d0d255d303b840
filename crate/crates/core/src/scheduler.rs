//! Per-round sample budget for each difficulty level.
//!
//! Level `k` gets an attention weight that starts at `1 - t_k` and moves
//! geometrically (rate `1/lambda` per epoch) towards `t_k`, where `t_k` runs
//! linearly from 0 for the simplest level to 1 for the most complex one.
//! The weight times the level's population is the number of its samples
//! trained on in that round, unless the freeze rule keeps last round's counts.

use rand::seq::index;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::difficulty::DifficultyAssignment;
use crate::seed;

#[derive(Debug, Error, PartialEq)]
pub enum SchedulerError {
    #[error("level {level} outside 1..={levels}")]
    InvalidLevel { level: usize, levels: usize },
    #[error("length mismatch: expected {expected} entries, got {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("level {level}: target {target} exceeds the {available} available samples")]
    TargetExceedsAvailable {
        level: usize,
        target: usize,
        available: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulerConfig {
    pub levels: usize,
    pub lambda: f64,
    pub omega_floor: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            lambda: 2.0,
            omega_floor: 0.1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SchedulerState {
    pub epoch: usize,
    /// Per-level counts trained on in the previous round.
    pub prev_used_counts: Option<Vec<usize>>,
}

/// Attention weight `ω_k` at `epoch`.
pub fn weight(level: usize, epoch: usize, cfg: &SchedulerConfig) -> Result<f64, SchedulerError> {
    if level == 0 || level > cfg.levels {
        return Err(SchedulerError::InvalidLevel {
            level,
            levels: cfg.levels,
        });
    }
    if cfg.levels == 1 {
        return Ok(1.0);
    }
    let t = (level - 1) as f64 / (cfg.levels - 1) as f64;
    let decay = cfg.lambda.powi(-(epoch as i32));
    Ok((t + (1.0 - 2.0 * t) * decay).clamp(cfg.omega_floor, 1.0))
}

pub fn weights(epoch: usize, cfg: &SchedulerConfig) -> Vec<f64> {
    (1..=cfg.levels)
        .map(|k| weight(k, epoch, cfg).expect("level in range"))
        .collect()
}

/// `round_half_up(ω_k · Num_k)`, kept within `[min(1, Num_k), Num_k]`.
pub fn target_counts(level_counts: &[usize], omegas: &[f64]) -> Result<Vec<usize>, SchedulerError> {
    check_len(level_counts.len(), omegas.len())?;
    Ok(level_counts
        .iter()
        .zip(omegas)
        .map(|(&n, &w)| {
            let raw = (w * n as f64 + 0.5).floor().max(0.0) as usize;
            raw.clamp(n.min(1), n)
        })
        .collect())
}

fn check_len(expected: usize, found: usize) -> Result<(), SchedulerError> {
    if expected == found {
        Ok(())
    } else {
        Err(SchedulerError::LengthMismatch { expected, found })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FreezeOutcome {
    pub targets: Vec<usize>,
    pub frozen: bool,
}

/// Reuses last round's per-level counts when the most complex level did not
/// shrink; otherwise takes `proposed`. Either way the result is clamped to
/// `avail`.
pub fn apply_freeze_rule(
    state: &SchedulerState,
    avail: &[usize],
    proposed: &[usize],
) -> Result<FreezeOutcome, SchedulerError> {
    check_len(avail.len(), proposed.len())?;
    let clamp = |xs: &[usize]| -> Vec<usize> {
        xs.iter().zip(avail).map(|(&x, &a)| x.min(a)).collect()
    };
    if let Some(prev) = &state.prev_used_counts {
        check_len(avail.len(), prev.len())?;
        if let (Some(&now), Some(&before)) = (avail.last(), prev.last()) {
            if now >= before {
                return Ok(FreezeOutcome {
                    targets: clamp(prev),
                    frozen: true,
                });
            }
        }
    }
    Ok(FreezeOutcome {
        targets: clamp(proposed),
        frozen: false,
    })
}

/// Draws `targets[k]` ids uniformly without replacement from each level.
/// Ids come back ascending within a level, levels in order.
pub fn select_samples(
    assignment: &DifficultyAssignment,
    targets: &[usize],
    seed: u64,
    round: usize,
) -> Result<Vec<u64>, SchedulerError> {
    check_len(assignment.k_requested, targets.len())?;
    let mut out = Vec::with_capacity(targets.iter().sum());
    for (k, &target) in targets.iter().enumerate() {
        let level = k + 1;
        let ids = assignment.ids_at_level(level);
        if target > ids.len() {
            return Err(SchedulerError::TargetExceedsAvailable {
                level,
                target,
                available: ids.len(),
            });
        }
        if target == ids.len() {
            out.extend(ids);
            continue;
        }
        let mut rng = seed::derived_rng(seed, "select", round as u64, level as u64);
        let mut picked: Vec<u64> = index::sample(&mut rng, ids.len(), target)
            .into_iter()
            .map(|i| ids[i])
            .collect();
        picked.sort_unstable();
        out.extend(picked);
    }
    Ok(out)
}

/// What the scheduler decided for one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundPlan {
    pub round: usize,
    pub omegas: Vec<f64>,
    pub avail: Vec<usize>,
    pub proposed: Vec<usize>,
    pub targets: Vec<usize>,
    pub frozen: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scheduler {
    pub config: SchedulerConfig,
    pub state: SchedulerState,
}

impl Scheduler {
    pub fn new(config: SchedulerConfig) -> Self {
        Self {
            config,
            state: SchedulerState::default(),
        }
    }

    /// Plans the current round from per-level availability and advances the
    /// state.
    pub fn plan(&mut self, avail: &[usize]) -> Result<RoundPlan, SchedulerError> {
        check_len(self.config.levels, avail.len())?;
        let omegas = weights(self.state.epoch, &self.config);
        let proposed = target_counts(avail, &omegas)?;
        let outcome = apply_freeze_rule(&self.state, avail, &proposed)?;
        let plan = RoundPlan {
            round: self.state.epoch,
            omegas,
            avail: avail.to_vec(),
            proposed,
            targets: outcome.targets.clone(),
            frozen: outcome.frozen,
        };
        self.state.prev_used_counts = Some(outcome.targets);
        self.state.epoch += 1;
        Ok(plan)
    }
}
