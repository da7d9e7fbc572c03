//! Epoch-indexed sparsity / group-size schedule and the freeze state machine.
//!
//! Sparsity starts at `initial_sparsity` and grows by `base_step` per epoch;
//! the step halves after each epoch listed in `halve_epochs` (an epoch equal
//! to a halving point still uses the previous step). Group size is 1 before
//! `gs_start_epoch`, 2 at `gs_start_epoch`, and grows by one every
//! `gs_step_interval` epochs up to `max_group_size`.

use crate::error::{Error, Result};

/// Upper bound on the scheduled sparsity so no layer is emptied completely.
pub const SPARSITY_CEILING: f64 = 0.999;

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleConfig {
    pub initial_sparsity: f64,
    pub base_step: f64,
    pub halve_epochs: Vec<usize>,
    pub gs_start_epoch: usize,
    pub gs_step_interval: usize,
    pub max_group_size: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            initial_sparsity: 0.30,
            base_step: 0.01,
            halve_epochs: vec![20, 50],
            gs_start_epoch: 20,
            gs_step_interval: 10,
            max_group_size: 16,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.initial_sparsity) {
            return Err(Error::Config("initial_sparsity must be in [0, 1)".into()));
        }
        if self.base_step.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::Config("base_step must be positive".into()));
        }
        if self.halve_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("halve_epochs must be strictly increasing".into()));
        }
        if self.gs_step_interval == 0 {
            return Err(Error::Config("gs_step_interval must be at least 1".into()));
        }
        if self.max_group_size == 0 {
            return Err(Error::Config("max_group_size must be at least 1".into()));
        }
        Ok(())
    }

    /// Sparsity step taken when moving from epoch `i - 1` to epoch `i`.
    pub fn step(&self, i: usize) -> f64 {
        let halvings = self.halve_epochs.iter().filter(|&&h| i > h).count();
        self.base_step / f64::from(1u32 << halvings.min(31))
    }
}

pub fn target_sparsity(cfg: &ScheduleConfig, epoch: usize) -> f64 {
    // closed form over the piecewise-constant step
    let mut total = cfg.initial_sparsity;
    let mut prev = 0;
    let mut step = cfg.base_step;
    for &h in &cfg.halve_epochs {
        if epoch <= h {
            break;
        }
        total += (h - prev) as f64 * step;
        prev = h;
        step /= 2.0;
    }
    total += (epoch - prev.min(epoch)) as f64 * step;
    total.min(SPARSITY_CEILING)
}

pub fn group_size_at(cfg: &ScheduleConfig, epoch: usize) -> usize {
    if epoch < cfg.gs_start_epoch {
        return 1;
    }
    let gs = 2 + (epoch - cfg.gs_start_epoch) / cfg.gs_step_interval;
    gs.min(cfg.max_group_size).max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleState {
    pub epoch: usize,
    pub current_sparsity: f64,
    pub current_gs: usize,
    pub frozen: bool,
    pub freeze_epoch: Option<usize>,
}

impl ScheduleState {
    pub fn initial(cfg: &ScheduleConfig) -> Self {
        Self {
            epoch: 0,
            current_sparsity: target_sparsity(cfg, 0),
            current_gs: group_size_at(cfg, 0),
            frozen: false,
            freeze_epoch: None,
        }
    }

    /// Step the schedule past the current epoch. Meeting the constraint
    /// latches sparsity and group size for good; nothing ever unfreezes.
    pub fn advance(&self, cfg: &ScheduleConfig, constraint_met: bool) -> Self {
        let mut next = self.clone();
        next.epoch = self.epoch + 1;
        if self.frozen {
            return next;
        }
        if constraint_met {
            next.frozen = true;
            next.freeze_epoch = Some(self.epoch);
            return next;
        }
        next.current_sparsity = target_sparsity(cfg, next.epoch);
        next.current_gs = group_size_at(cfg, next.epoch);
        next
    }
}

/// Convenience alias for the free-function form.
pub fn advance(state: &ScheduleState, cfg: &ScheduleConfig, constraint_met: bool) -> ScheduleState {
    state.advance(cfg, constraint_met)
}
