//! Fixed-ratio interleaved synthesis: every `n_text` text tokens become one
//! chunk of `m_speech` speech tokens queued for playback.

use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timebase::{speech_chunk_duration, TimingConfig, Token, TokenKind};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SynthError {
    #[error("control token {0} cannot be synthesized")]
    ControlToken(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeechChunk {
    pub tokens: u32,
    pub start_ms: u64,
    pub duration_ms: u64,
    pub source_text_blocks: RangeInclusive<u64>,
}

impl SpeechChunk {
    pub fn end_ms(&self) -> u64 {
        self.start_ms + self.duration_ms
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct PlaybackState {
    /// Speech queued beyond the current block boundary.
    pub buffered_ms: u64,
    pub playing: bool,
    /// Text tokens waiting for the next synthesis call.
    pub pending_text: u32,
    /// Block of the oldest pending text token.
    pub pending_since: Option<u64>,
    chunk_emitted: bool,
}

impl PlaybackState {
    pub fn is_idle(&self) -> bool {
        self.buffered_ms == 0 && self.pending_text == 0
    }
}

fn make_chunk(
    state: &mut PlaybackState,
    tokens: u32,
    block: u64,
    cfg: &TimingConfig,
) -> SpeechChunk {
    let now = cfg.block_end_ms(block);
    let duration_ms = u64::from(tokens) * cfg.speech_token_ms;
    let chunk = SpeechChunk {
        tokens,
        start_ms: now + state.buffered_ms,
        duration_ms,
        source_text_blocks: state.pending_since.unwrap_or(block)..=block,
    };
    state.buffered_ms += duration_ms;
    state.pending_text = 0;
    state.pending_since = None;
    state.playing = true;
    state.chunk_emitted = true;
    chunk
}

/// Queues one text token decided in `tok.block_index`; a full group of
/// `n_text` tokens triggers a synthesis call at the end of that block.
pub fn feed_text_token(
    state: PlaybackState,
    tok: Token,
    cfg: &TimingConfig,
) -> Result<(PlaybackState, Option<SpeechChunk>), SynthError> {
    if !matches!(tok.kind, TokenKind::Text(_)) {
        return Err(SynthError::ControlToken(tok.kind.short_name()));
    }
    let mut s = state;
    s.pending_text += 1;
    s.pending_since.get_or_insert(tok.block_index);
    if s.pending_text >= cfg.n_text {
        debug_assert_eq!(
            u64::from(cfg.m_speech) * cfg.speech_token_ms,
            speech_chunk_duration(cfg)
        );
        let chunk = make_chunk(&mut s, cfg.m_speech, tok.block_index, cfg);
        return Ok((s, Some(chunk)));
    }
    Ok((s, None))
}

/// Synthesizes the residual (< `n_text`) tokens at the end of a response,
/// keeping the `m_speech : n_text` ratio.
pub fn flush_tail(
    state: PlaybackState,
    block: u64,
    cfg: &TimingConfig,
) -> (PlaybackState, Option<SpeechChunk>) {
    let mut s = state;
    if s.pending_text == 0 {
        return (s, None);
    }
    let tokens = s.pending_text * cfg.m_speech / cfg.n_text;
    let chunk = make_chunk(&mut s, tokens, block, cfg);
    (s, Some(chunk))
}

/// Plays one block of queued speech.
pub fn advance_block(state: PlaybackState, cfg: &TimingConfig) -> PlaybackState {
    let mut s = state;
    s.buffered_ms -= s.buffered_ms.min(cfg.block_ms);
    s.playing = s.buffered_ms > 0;
    s.chunk_emitted = false;
    s
}

/// Drops everything queued or pending. Idempotent.
pub fn flush_on_interrupt(_state: PlaybackState) -> PlaybackState {
    PlaybackState::default()
}
