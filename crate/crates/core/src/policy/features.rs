//! Per-block context features and the rolling history window.

use serde::{Deserialize, Serialize};

use crate::encoder::{slot, FeatureVector, FRAME_DIM};

/// Width of one block's feature vector.
pub const BLOCK_DIM: usize = 11;

pub mod idx {
    pub const ENV_ACTIVITY: usize = 0;
    pub const ENV_USER: usize = 1;
    pub const ENV_THIRD: usize = 2;
    pub const ENV_ECHO: usize = 3;
    pub const RELEVANCE: usize = 4;
    pub const ECHO_ENERGY: usize = 5;
    pub const ENV_ACTIVITY_EMA: usize = 6;
    pub const SPEAKING: usize = 7;
    pub const ASST_PLAYING: usize = 8;
    pub const TEXT_DONE: usize = 9;
    pub const SINCE_TRANSITION: usize = 10;
}

/// Blocks after which `blocks_since_transition` saturates at 1.
const SINCE_TRANSITION_SCALE: f64 = 32.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSpec {
    /// Number of previous blocks appended to the current one.
    pub history: usize,
    /// When false the echo channels are zeroed before the policy sees them.
    pub use_echo: bool,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        FeatureSpec {
            history: 8,
            use_echo: false,
        }
    }
}

impl FeatureSpec {
    pub fn input_dim(&self) -> usize {
        BLOCK_DIM * (self.history + 1)
    }
}

/// Engine-side facts about the assistant for the current block.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AssistantStatus {
    pub speaking: bool,
    pub playing: bool,
    pub text_done: bool,
    pub blocks_since_transition: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockFeatures {
    pub current: [f64; BLOCK_DIM],
    /// Current block followed by `history` previous blocks, newest first.
    pub input: Vec<f64>,
}

/// Summarises one block's 25 Hz environment embeddings (each `2 * FRAME_DIM`
/// wide) together with the assistant status.
pub fn summarize_block(
    env: &[FeatureVector],
    status: &AssistantStatus,
    spec: &FeatureSpec,
) -> [f64; BLOCK_DIM] {
    let halves: Vec<&[f64]> = env.iter().flat_map(|v| v.0.chunks(FRAME_DIM)).collect();
    let n = halves.len().max(1) as f64;
    let mean = |s: usize| halves.iter().map(|h| h[s]).sum::<f64>() / n;
    let max = |s: usize| halves.iter().map(|h| h[s]).fold(0.0f64, f64::max);

    let mut v = [0.0; BLOCK_DIM];
    v[idx::ENV_ACTIVITY] = mean(slot::ACTIVITY);
    v[idx::ENV_USER] = mean(slot::USER);
    v[idx::ENV_THIRD] = mean(slot::THIRD);
    v[idx::RELEVANCE] = max(slot::RELEVANCE);
    v[idx::ENV_ACTIVITY_EMA] = halves.last().map_or(0.0, |h| h[slot::EMA_MEDIUM]);
    if spec.use_echo {
        let echo = mean(slot::ECHO);
        v[idx::ENV_ECHO] = if echo > 0.0 { 1.0 } else { 0.0 };
        v[idx::ECHO_ENERGY] = echo;
    }
    v[idx::SPEAKING] = f64::from(u8::from(status.speaking));
    v[idx::ASST_PLAYING] = f64::from(u8::from(status.playing));
    v[idx::TEXT_DONE] = f64::from(u8::from(status.text_done));
    v[idx::SINCE_TRANSITION] = (status.blocks_since_transition as f64).min(SINCE_TRANSITION_SCALE)
        / SINCE_TRANSITION_SCALE;
    v
}

/// Rolling window of recent block summaries.
#[derive(Debug, Clone)]
pub struct FeatureWindow {
    spec: FeatureSpec,
    recent: std::collections::VecDeque<[f64; BLOCK_DIM]>,
}

impl FeatureWindow {
    pub fn new(spec: FeatureSpec) -> Self {
        FeatureWindow {
            spec,
            recent: std::collections::VecDeque::with_capacity(spec.history + 1),
        }
    }

    pub fn push(&mut self, current: [f64; BLOCK_DIM]) -> BlockFeatures {
        self.recent.push_front(current);
        self.recent.truncate(self.spec.history + 1);
        let mut input = Vec::with_capacity(self.spec.input_dim());
        for i in 0..=self.spec.history {
            match self.recent.get(i) {
                Some(b) => input.extend_from_slice(b),
                None => input.extend_from_slice(&[0.0; BLOCK_DIM]),
            }
        }
        BlockFeatures { current, input }
    }
}
