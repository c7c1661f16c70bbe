//! Frames, blocks, tokens, dialogue state and the timing arithmetic every
//! other module builds on. All durations are integer milliseconds.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Duration of one audio-proxy frame (100 Hz).
pub const FRAME_MS: u64 = 10;

/// Granularity at which the encoder emits one stream embedding (25 Hz).
pub const EMBEDDING_MS: u64 = 40;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TimingError {
    #[error("block duration must be non-zero")]
    ZeroBlock,
    #[error("block duration {0} ms is not a multiple of the {EMBEDDING_MS} ms embedding period")]
    BlockNotAligned(u64),
    #[error("text group size N must be at least 1")]
    ZeroTextGroup,
    #[error("speech token duration must be non-zero")]
    ZeroSpeechToken,
}

/// Who is producing the sound carried by a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    #[default]
    None,
    User,
    ThirdParty,
    /// The assistant's own playback as heard through the environment.
    AssistantEcho,
    /// The assistant's own playback in its dedicated stream.
    Assistant,
}

/// A 10 ms unit of symbolic acoustic features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub t_index: u64,
    pub activity: f64,
    pub speaker: Speaker,
    pub relevance: f64,
    pub energy: f64,
    /// Energy of the assistant's echo heard on top of the frame's own sound.
    #[serde(default)]
    pub echo_energy: f64,
}

impl Frame {
    pub fn silent(t_index: u64) -> Self {
        Frame {
            t_index,
            activity: 0.0,
            speaker: Speaker::None,
            relevance: 0.0,
            energy: 0.0,
            echo_energy: 0.0,
        }
    }

    pub fn speech(t_index: u64, speaker: Speaker, relevance: f64) -> Self {
        Frame {
            t_index,
            activity: 1.0,
            speaker,
            relevance,
            energy: 1.0,
            echo_energy: 0.0,
        }
    }

    /// Start time of the frame in milliseconds.
    pub fn start_ms(&self) -> u64 {
        self.t_index * FRAME_MS
    }

    /// Silent frames carry no speaker.
    pub fn is_consistent(&self) -> bool {
        let ranges = (0.0..=1.0).contains(&self.activity)
            && (0.0..=1.0).contains(&self.relevance)
            && self.energy >= 0.0
            && self.echo_energy >= 0.0;
        ranges && (self.activity > 0.0 || self.speaker == Speaker::None)
    }
}

/// Identifier of a symbolic text token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SymbolId(pub u32);

impl SymbolId {
    /// Transcript symbol for a block in which nothing was heard.
    pub const SILENCE: SymbolId = SymbolId(0);
    /// Placeholder "inner thought" emitted while waiting for synthesis.
    pub const THOUGHT: SymbolId = SymbolId(1);
    /// Proxy transcript symbol for speech from the user.
    pub const HEARD_USER: SymbolId = SymbolId(2);
    /// Proxy transcript symbol for speech from a third party.
    pub const HEARD_THIRD: SymbolId = SymbolId(3);
    /// First symbol available for response text.
    pub const RESPONSE_BASE: u32 = 100;

    pub fn response(index: u32) -> SymbolId {
        SymbolId(Self::RESPONSE_BASE + index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "symbol", rename_all = "snake_case")]
pub enum TokenKind {
    Text(SymbolId),
    Think,
    Shift,
    Listen,
    Speak,
}

impl TokenKind {
    pub fn is_control(&self) -> bool {
        !matches!(self, TokenKind::Text(_))
    }

    pub fn short_name(&self) -> String {
        match self {
            TokenKind::Text(s) => format!("text:{}", s.0),
            TokenKind::Think => "<think>".into(),
            TokenKind::Shift => "<shift>".into(),
            TokenKind::Listen => "<listen>".into(),
            TokenKind::Speak => "<speak>".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token {
    pub kind: TokenKind,
    pub block_index: u64,
}

impl Token {
    pub fn new(kind: TokenKind, block_index: u64) -> Self {
        Token { kind, block_index }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum State {
    #[default]
    Listening,
    Speaking,
}

impl State {
    pub fn flipped(self) -> State {
        match self {
            State::Listening => State::Speaking,
            State::Speaking => State::Listening,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct DialogueState {
    pub state: State,
    pub since_block: u64,
}

impl DialogueState {
    /// Applies a transition decided during `block`; the new state holds from
    /// the next block boundary.
    pub fn shift(&mut self, block: u64) {
        self.state = self.state.flipped();
        self.since_block = block + 1;
    }
}

/// Timing constants of the block-synchronous loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingConfig {
    pub block_ms: u64,
    /// Text tokens consumed per synthesis call.
    pub n_text: u32,
    /// Speech tokens produced per synthesis call.
    pub m_speech: u32,
    pub speech_token_ms: u64,
}

impl Default for TimingConfig {
    fn default() -> Self {
        TimingConfig {
            block_ms: 80,
            n_text: 4,
            m_speech: 12,
            speech_token_ms: 40,
        }
    }
}

impl TimingConfig {
    pub fn validate(&self) -> Result<(), TimingError> {
        if self.block_ms == 0 {
            return Err(TimingError::ZeroBlock);
        }
        if !self.block_ms.is_multiple_of(EMBEDDING_MS) {
            return Err(TimingError::BlockNotAligned(self.block_ms));
        }
        if self.n_text == 0 {
            return Err(TimingError::ZeroTextGroup);
        }
        if self.speech_token_ms == 0 {
            return Err(TimingError::ZeroSpeechToken);
        }
        Ok(())
    }

    pub fn frames_per_block(&self) -> usize {
        (self.block_ms / FRAME_MS) as usize
    }

    pub fn embeddings_per_block(&self) -> usize {
        (self.block_ms / EMBEDDING_MS) as usize
    }

    pub fn block_start_ms(&self, block: u64) -> u64 {
        block * self.block_ms
    }

    pub fn block_end_ms(&self, block: u64) -> u64 {
        (block + 1) * self.block_ms
    }

    /// Index of the block containing the instant `ms`.
    pub fn block_of(&self, ms: u64) -> u64 {
        ms / self.block_ms
    }
}

/// Delay between the decision to speak and the first audible speech.
pub fn onset_latency(cfg: &TimingConfig) -> u64 {
    u64::from(cfg.n_text) * cfg.block_ms
}

/// Playback duration produced by one synthesis call.
pub fn speech_chunk_duration(cfg: &TimingConfig) -> u64 {
    u64::from(cfg.m_speech) * cfg.speech_token_ms
}

pub fn blocks_per_second(cfg: &TimingConfig) -> Result<f64, TimingError> {
    if cfg.block_ms == 0 {
        return Err(TimingError::ZeroBlock);
    }
    Ok(1000.0 / cfg.block_ms as f64)
}

/// One scheduling quantum: the environment and assistant frames covering the
/// same 80 ms interval, plus the token decided at its end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeBlock {
    pub block_index: u64,
    pub env_frames: Vec<Frame>,
    pub asst_frames: Vec<Frame>,
    pub emitted_token: Option<Token>,
}

impl TimeBlock {
    pub fn silent(block_index: u64, cfg: &TimingConfig) -> Self {
        let n = cfg.frames_per_block() as u64;
        let frames: Vec<Frame> = (0..n).map(|i| Frame::silent(block_index * n + i)).collect();
        TimeBlock {
            block_index,
            env_frames: frames.clone(),
            asst_frames: frames,
            emitted_token: None,
        }
    }

    /// Both streams hold one frame per 10 ms and cover the identical interval.
    pub fn is_well_formed(&self, cfg: &TimingConfig) -> bool {
        let n = cfg.frames_per_block();
        if self.env_frames.len() != n || self.asst_frames.len() != n {
            return false;
        }
        let first = self.block_index * n as u64;
        self.env_frames
            .iter()
            .zip(&self.asst_frames)
            .enumerate()
            .all(|(i, (e, a))| e.t_index == first + i as u64 && a.t_index == e.t_index)
    }
}
