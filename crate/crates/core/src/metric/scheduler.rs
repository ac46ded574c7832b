//! Dynamic margin schedule.
//!
//! The margin starts small and grows by a fixed step whenever the miner
//! keeps coming up nearly empty: if the mined-triplet count stays below a
//! threshold for a full window of consecutive iterations, the margin is
//! raised (hard-clamped at the cap) and the window starts over, so the
//! network first gets time to satisfy the new, harder constraint.

use serde::{Deserialize, Serialize};

use crate::config::MarginConfig;

/// Margin schedule state. A pure value: [`scheduler_update`] consumes a
/// state and returns the successor, so replaying a count sequence always
/// reproduces the same margin trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginState {
    pub alpha: f64,
    /// Mined-triplet counts, appended once per mining iteration.
    pub counts: Vec<u32>,
    /// Iterations since the last margin increment (or since the start).
    pub since_increment: usize,
    pub cfg: MarginConfig,
}

impl MarginState {
    pub fn new(cfg: MarginConfig) -> Self {
        Self {
            alpha: cfg.alpha_init,
            counts: Vec::new(),
            since_increment: 0,
            cfg,
        }
    }

    /// True once the margin has reached its cap.
    pub fn at_cap(&self) -> bool {
        self.alpha >= self.cfg.alpha_cap
    }
}

/// Append a mined count and raise the margin when the last `window` counts
/// (all observed since the previous increment) fall below the threshold.
pub fn scheduler_update(mut state: MarginState, t: u32) -> MarginState {
    state.counts.push(t);
    state.since_increment += 1;

    let w = state.cfg.window;
    if state.since_increment >= w && state.alpha < state.cfg.alpha_cap {
        let tail = &state.counts[state.counts.len() - w..];
        if tail.iter().all(|&c| c < state.cfg.thresh) {
            state.alpha = (state.alpha + state.cfg.alpha_step).min(state.cfg.alpha_cap);
            state.since_increment = 0;
        }
    }
    state
}
