//! Ground-truth driven policies used as the harness upper bound and as the
//! teacher for supervised data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Action, DecisionContext, DecisionPolicy};
use crate::timebase::State;

/// A speech event heard while the assistant may be talking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Probe {
    pub onset_block: u64,
    pub last_block: u64,
    /// True barge-in (should stop) versus backchannel or distractor.
    pub positive: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Last block containing the question that ends the user's turn.
    pub turn_end_block: Option<u64>,
    pub probes: Vec<Probe>,
    /// Blocks after a barge-in onset during which stopping still counts.
    pub window_blocks: u64,
}

impl GroundTruth {
    fn active_barge_in(&self, block: u64, after: Option<u64>) -> bool {
        self.probes.iter().any(|p| {
            p.positive
                && after.is_none_or(|s| s < p.onset_block)
                && p.onset_block <= block
                && block < p.onset_block + self.window_blocks
        })
    }
}

/// The ideal action for `ctx` and its training weight. A zero weight marks
/// a block whose label is irrelevant to every metric.
pub fn teacher(gt: &GroundTruth, ctx: &DecisionContext<'_>) -> (Action, f64) {
    let k = ctx.block;
    match ctx.dialogue.state {
        State::Listening => {
            if ctx.interrupted {
                return (Action::Think, 0.0);
            }
            if ctx.responses_started == 0 && gt.turn_end_block.is_some_and(|t| t <= k) {
                (Action::Shift, 1.0)
            } else {
                (Action::Think, 1.0)
            }
        }
        State::Speaking => {
            if gt.active_barge_in(k, ctx.speaking_shift_block) {
                (Action::Shift, 1.0)
            } else if !ctx.status.text_done {
                (Action::Text, 1.0)
            } else if !ctx.status.playing {
                (Action::Shift, 1.0)
            } else {
                (Action::Think, 1.0)
            }
        }
    }
}

/// Perfect policy reading the scenario's labels.
pub struct OraclePolicy {
    pub truth: GroundTruth,
}

impl DecisionPolicy for OraclePolicy {
    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Action {
        teacher(&self.truth, ctx).0
    }
}

/// Oracle that reacts to every Shift the teacher asks for a few blocks
/// late, drawing a fresh lag per episode. Used to visit the off-oracle
/// states a trained model will see.
pub struct LaggedOracle {
    truth: GroundTruth,
    rng: ChaCha8Rng,
    max_lag: u64,
    lag: u64,
    want_since: Option<u64>,
}

impl LaggedOracle {
    pub fn new(truth: GroundTruth, max_lag: u64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lag = rng.gen_range(0..=max_lag);
        LaggedOracle {
            truth,
            rng,
            max_lag,
            lag,
            want_since: None,
        }
    }
}

impl DecisionPolicy for LaggedOracle {
    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Action {
        let (ideal, _) = teacher(&self.truth, ctx);
        if ideal != Action::Shift {
            self.want_since = None;
            return ideal;
        }
        let since = *self.want_since.get_or_insert(ctx.block);
        if ctx.block - since < self.lag {
            return if ctx.dialogue.state == State::Speaking && !ctx.status.text_done {
                Action::Text
            } else {
                Action::Think
            };
        }
        self.want_since = None;
        self.lag = self.rng.gen_range(0..=self.max_lag);
        Action::Shift
    }
}
