//! Construction of the single autoregressive sequence the policy consumes.
//!
//! Each block contributes, in order:
//!
//! ```text
//! [TokenInput]? EnvEmbedding x2  AsstEmbedding x2  TokenLabel
//! ```
//!
//! The optional `TokenInput` is the previous block's token fed back into the
//! sequence; whether it is present depends on the thinking strategy. The
//! embedding items keep the frames they summarise so the sequence can be
//! split back into blocks without loss.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{EncoderConfig, EncoderError, FeatureVector, StreamEncoder};
use crate::schema::{SchemaError, SchemaTag, INTERLEAVED_SCHEMA};
use crate::timebase::{
    Frame, Speaker, State, SymbolId, TimeBlock, TimingConfig, Token, TokenKind, EMBEDDING_MS,
    FRAME_MS,
};

/// Magnitude of the negative loss weight used by `ExplicitNs` by default.
pub const DEFAULT_NS_WEIGHT: f64 = 0.1;

const FRAMES_PER_EMBEDDING: usize = (EMBEDDING_MS / FRAME_MS) as usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Implicit,
    #[default]
    Explicit,
    ImplicitAsr,
    ExplicitAsr,
    ExplicitNs,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [
        StrategyKind::Implicit,
        StrategyKind::Explicit,
        StrategyKind::ImplicitAsr,
        StrategyKind::ExplicitAsr,
        StrategyKind::ExplicitNs,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            StrategyKind::Implicit => "implicit",
            StrategyKind::Explicit => "explicit",
            StrategyKind::ImplicitAsr => "implicit_asr",
            StrategyKind::ExplicitAsr => "explicit_asr",
            StrategyKind::ExplicitNs => "explicit_ns",
        }
    }

    pub fn parse(s: &str) -> Option<StrategyKind> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s || k.name().replace('_', "-") == s)
    }

    pub fn is_explicit_family(&self) -> bool {
        matches!(
            self,
            StrategyKind::Explicit | StrategyKind::ExplicitAsr | StrategyKind::ExplicitNs
        )
    }

    pub fn is_asr(&self) -> bool {
        matches!(self, StrategyKind::ImplicitAsr | StrategyKind::ExplicitAsr)
    }

    /// Whether `kind` may appear as a label under this strategy.
    pub fn allows_label(&self, kind: &TokenKind) -> bool {
        match (self, kind) {
            (_, TokenKind::Text(_)) => true,
            (StrategyKind::Implicit, k) => matches!(k, TokenKind::Listen | TokenKind::Speak),
            (StrategyKind::Explicit, k) => matches!(k, TokenKind::Think | TokenKind::Shift),
            (_, k) => matches!(k, TokenKind::Shift),
        }
    }

    /// State after a block whose label is `label` (with its loss weight).
    pub fn next_state(&self, state: State, label: &LabeledToken) -> State {
        match label.token.kind {
            TokenKind::Listen => State::Listening,
            TokenKind::Speak => State::Speaking,
            TokenKind::Shift if *self == StrategyKind::ExplicitNs && label.loss_weight < 0.0 => {
                state
            }
            TokenKind::Shift => state.flipped(),
            _ => state,
        }
    }

    /// Token fed back at the start of the next block, if any.
    pub fn feedback(&self, state: State, label: &LabeledToken) -> Option<Token> {
        let tok = label.token;
        match self {
            StrategyKind::Explicit | StrategyKind::ExplicitAsr => Some(tok),
            StrategyKind::ExplicitNs => {
                if tok.kind == TokenKind::Shift && label.loss_weight < 0.0 {
                    Some(Token::new(TokenKind::Think, tok.block_index))
                } else {
                    Some(tok)
                }
            }
            StrategyKind::Implicit | StrategyKind::ImplicitAsr => match tok.kind {
                TokenKind::Text(sym) if state == State::Speaking && sym != SymbolId::THOUGHT => {
                    Some(tok)
                }
                _ => None,
            },
        }
    }
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledToken {
    pub token: Token,
    pub loss_weight: f64,
}

impl From<Token> for LabeledToken {
    fn from(token: Token) -> Self {
        LabeledToken {
            token,
            loss_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotKind {
    EnvEmbedding,
    AsstEmbedding,
    TokenInput,
    TokenLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Payload {
    Embedding {
        features: FeatureVector,
        frames: Vec<Frame>,
    },
    Token(Token),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotItem {
    pub kind: SlotKind,
    pub payload: Payload,
    pub block_index: u64,
    pub loss_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterleavedSequence {
    pub strategy: StrategyKind,
    pub items: Vec<SlotItem>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InterleaveError {
    #[error("{blocks} blocks but {labels} labels")]
    LengthMismatch { blocks: usize, labels: usize },
    #[error("label {position} belongs to block {label} but is aligned with block {block}")]
    BlockIndexMismatch {
        position: usize,
        block: u64,
        label: u64,
    },
    #[error("block indices must increase strictly (block {0})")]
    NonMonotonicBlocks(u64),
    #[error("block {0} does not hold whole embedding periods of aligned frames")]
    MalformedBlock(u64),
    #[error("block {block}: token {token} is not allowed under the {strategy} strategy")]
    TokenNotAllowed {
        block: u64,
        token: String,
        strategy: StrategyKind,
    },
    #[error("block {0}: response text while listening")]
    TextWhileListening(u64),
    #[error("block {0}: emitted token disagrees with its label")]
    EmittedTokenMismatch(u64),
    #[error("block {0}: zero loss weight")]
    ZeroWeight(u64),
    #[error("label event at block {block} outside a {n_blocks}-block dialogue")]
    EventOutOfRange { block: u64, n_blocks: usize },
    #[error("block {0}: conflicting label events")]
    ConflictingEvents(u64),
    #[error("malformed sequence at item {index}: {reason}")]
    Layout { index: usize, reason: String },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("jsonl line {line}: {message}")]
    Json { line: usize, message: String },
}

fn encode_stream(enc: &mut StreamEncoder, frames: &[Frame]) -> Vec<(FeatureVector, Vec<Frame>)> {
    frames
        .chunks(FRAMES_PER_EMBEDDING)
        .map(|chunk| {
            let mut out = enc.push(chunk);
            debug_assert_eq!(out.len(), 1);
            (out.pop().unwrap_or_default(), chunk.to_vec())
        })
        .collect()
}

fn check_block(block: &TimeBlock) -> Result<(), InterleaveError> {
    let n = block.env_frames.len();
    let aligned = n > 0
        && n.is_multiple_of(FRAMES_PER_EMBEDDING)
        && block.asst_frames.len() == n
        && block
            .env_frames
            .iter()
            .zip(&block.asst_frames)
            .enumerate()
            .all(|(i, (e, a))| {
                e.t_index == block.block_index * n as u64 + i as u64 && a.t_index == e.t_index
            });
    if aligned {
        Ok(())
    } else {
        Err(InterleaveError::MalformedBlock(block.block_index))
    }
}

fn check_label(
    strategy: StrategyKind,
    state: State,
    label: &LabeledToken,
) -> Result<(), InterleaveError> {
    let block = label.token.block_index;
    if !strategy.allows_label(&label.token.kind) {
        return Err(InterleaveError::TokenNotAllowed {
            block,
            token: label.token.kind.short_name(),
            strategy,
        });
    }
    if label.loss_weight == 0.0 {
        return Err(InterleaveError::ZeroWeight(block));
    }
    if !strategy.is_asr() && state == State::Listening && !label.token.kind.is_control() {
        return Err(InterleaveError::TextWhileListening(block));
    }
    Ok(())
}

/// Interleaves aligned blocks and labels into one sequence.
pub fn build_sequence(
    blocks: &[TimeBlock],
    labels: &[LabeledToken],
    strategy: StrategyKind,
    encoder: &EncoderConfig,
) -> Result<InterleavedSequence, InterleaveError> {
    if blocks.len() != labels.len() {
        return Err(InterleaveError::LengthMismatch {
            blocks: blocks.len(),
            labels: labels.len(),
        });
    }
    let mut env_enc = StreamEncoder::new(*encoder);
    let mut asst_enc = StreamEncoder::new(*encoder);
    let mut items = Vec::new();
    let mut state = State::Listening;
    let mut feedback: Option<Token> = None;
    let mut last_index: Option<u64> = None;

    for (position, (block, label)) in blocks.iter().zip(labels).enumerate() {
        let k = block.block_index;
        if last_index.is_some_and(|prev| k <= prev) {
            return Err(InterleaveError::NonMonotonicBlocks(k));
        }
        last_index = Some(k);
        if label.token.block_index != k {
            return Err(InterleaveError::BlockIndexMismatch {
                position,
                block: k,
                label: label.token.block_index,
            });
        }
        if block.emitted_token.is_some_and(|t| t != label.token) {
            return Err(InterleaveError::EmittedTokenMismatch(k));
        }
        check_block(block)?;
        check_label(strategy, state, label)?;

        if let Some(tok) = feedback.take() {
            items.push(SlotItem {
                kind: SlotKind::TokenInput,
                payload: Payload::Token(tok),
                block_index: k,
                loss_weight: 1.0,
            });
        }
        for (kind, enc, frames) in [
            (SlotKind::EnvEmbedding, &mut env_enc, &block.env_frames),
            (SlotKind::AsstEmbedding, &mut asst_enc, &block.asst_frames),
        ] {
            for (features, frames) in encode_stream(enc, frames) {
                items.push(SlotItem {
                    kind,
                    payload: Payload::Embedding { features, frames },
                    block_index: k,
                    loss_weight: 1.0,
                });
            }
        }
        items.push(SlotItem {
            kind: SlotKind::TokenLabel,
            payload: Payload::Token(label.token),
            block_index: k,
            loss_weight: label.loss_weight,
        });
        feedback = strategy.feedback(state, label);
        state = strategy.next_state(state, label);
    }
    Ok(InterleavedSequence { strategy, items })
}

/// Splits a sequence back into its blocks and labels, checking the layout.
/// Reconstructed blocks carry their label as the emitted token.
pub fn deinterleave(
    seq: &InterleavedSequence,
) -> Result<(Vec<TimeBlock>, Vec<LabeledToken>), InterleaveError> {
    let strategy = seq.strategy;
    let items = &seq.items;
    let mut blocks = Vec::new();
    let mut labels = Vec::new();
    let mut state = State::Listening;
    let mut expected_input: Option<Token> = None;
    let mut per_stream: Option<usize> = None;
    let mut i = 0;
    let layout = |index: usize, reason: &str| InterleaveError::Layout {
        index,
        reason: reason.to_string(),
    };

    while i < items.len() {
        let k = items[i].block_index;
        if blocks
            .last()
            .is_some_and(|b: &TimeBlock| k <= b.block_index)
        {
            return Err(layout(i, "block index does not increase"));
        }
        if items[i].kind == SlotKind::TokenInput {
            let Payload::Token(tok) = items[i].payload else {
                return Err(layout(i, "token input without token payload"));
            };
            if expected_input != Some(tok) {
                return Err(layout(i, "token input does not match the fed-back label"));
            }
            i += 1;
        } else if expected_input.is_some() {
            return Err(layout(i, "missing token input"));
        }

        let mut streams: [Vec<Frame>; 2] = [Vec::new(), Vec::new()];
        for (s, kind) in [SlotKind::EnvEmbedding, SlotKind::AsstEmbedding]
            .into_iter()
            .enumerate()
        {
            let start = i;
            while i < items.len() && items[i].kind == kind {
                if items[i].block_index != k {
                    return Err(layout(i, "embedding assigned to another block"));
                }
                let Payload::Embedding { frames, .. } = &items[i].payload else {
                    return Err(layout(i, "embedding without feature payload"));
                };
                streams[s].extend_from_slice(frames);
                i += 1;
            }
            let count = i - start;
            match per_stream {
                None if count > 0 => per_stream = Some(count),
                Some(n) if n == count => {}
                _ => {
                    return Err(layout(
                        i.min(items.len().saturating_sub(1)),
                        "wrong embedding count",
                    ))
                }
            }
        }

        let Some(item) = items.get(i) else {
            return Err(layout(items.len(), "sequence ends before the block label"));
        };
        if item.kind != SlotKind::TokenLabel || item.block_index != k {
            return Err(layout(i, "expected the block's token label"));
        }
        let Payload::Token(tok) = item.payload else {
            return Err(layout(i, "label without token payload"));
        };
        let label = LabeledToken {
            token: tok,
            loss_weight: item.loss_weight,
        };
        if tok.block_index != k {
            return Err(layout(i, "label token belongs to another block"));
        }
        check_label(strategy, state, &label).map_err(|e| layout(i, &e.to_string()))?;
        i += 1;

        let [env_frames, asst_frames] = streams;
        blocks.push(TimeBlock {
            block_index: k,
            env_frames,
            asst_frames,
            emitted_token: Some(tok),
        });
        labels.push(label);
        expected_input = strategy.feedback(state, &label);
        state = strategy.next_state(state, &label);
    }
    Ok((blocks, labels))
}

/// A ground-truth annotation used to derive training labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LabelEvent {
    /// The environment transcript symbol audible in `block`.
    Heard { block: u64, symbol: SymbolId },
    /// The assistant emits response text in `block`.
    Respond { block: u64, symbol: SymbolId },
    /// The dialogue state must change at the end of `block`.
    Transition { block: u64 },
}

impl LabelEvent {
    pub fn block(&self) -> u64 {
        match *self {
            LabelEvent::Heard { block, .. }
            | LabelEvent::Respond { block, .. }
            | LabelEvent::Transition { block } => block,
        }
    }
}

/// Derives per-block labels and loss weights for a strategy. Block indices
/// in `events` are positions in `blocks`.
pub fn label_scheme(
    blocks: &[TimeBlock],
    events: &[LabelEvent],
    strategy: StrategyKind,
    ns_weight: f64,
) -> Result<Vec<LabeledToken>, InterleaveError> {
    let n = blocks.len();
    let mut heard = vec![None; n];
    let mut respond = vec![None; n];
    let mut transition = vec![false; n];
    for ev in events {
        let b = ev.block();
        if b as usize >= n {
            return Err(InterleaveError::EventOutOfRange {
                block: b,
                n_blocks: n,
            });
        }
        let b = b as usize;
        match *ev {
            LabelEvent::Heard { symbol, .. } => {
                if heard[b].replace(symbol).is_some() {
                    return Err(InterleaveError::ConflictingEvents(b as u64));
                }
            }
            LabelEvent::Respond { symbol, .. } => {
                if respond[b].replace(symbol).is_some() || transition[b] {
                    return Err(InterleaveError::ConflictingEvents(b as u64));
                }
            }
            LabelEvent::Transition { .. } => {
                if transition[b] || respond[b].is_some() {
                    return Err(InterleaveError::ConflictingEvents(b as u64));
                }
                transition[b] = true;
            }
        }
    }

    let mut state = State::Listening;
    let mut out = Vec::with_capacity(n);
    for (pos, block) in blocks.iter().enumerate() {
        let k = block.block_index;
        let label = |kind: TokenKind, loss_weight: f64| LabeledToken {
            token: Token::new(kind, k),
            loss_weight,
        };
        let lt = if transition[pos] {
            let kind = match strategy {
                StrategyKind::Implicit => match state {
                    State::Listening => TokenKind::Speak,
                    State::Speaking => TokenKind::Listen,
                },
                _ => TokenKind::Shift,
            };
            state = state.flipped();
            label(kind, 1.0)
        } else if let Some(sym) = respond[pos] {
            if state == State::Listening {
                return Err(InterleaveError::TextWhileListening(k));
            }
            label(TokenKind::Text(sym), 1.0)
        } else {
            match strategy {
                StrategyKind::Explicit => label(TokenKind::Think, 1.0),
                StrategyKind::Implicit => match state {
                    State::Listening => label(TokenKind::Listen, 1.0),
                    State::Speaking => label(TokenKind::Speak, 1.0),
                },
                StrategyKind::ImplicitAsr | StrategyKind::ExplicitAsr => match state {
                    State::Listening => label(
                        TokenKind::Text(heard[pos].unwrap_or(SymbolId::SILENCE)),
                        1.0,
                    ),
                    State::Speaking => label(TokenKind::Text(SymbolId::THOUGHT), 1.0),
                },
                StrategyKind::ExplicitNs => label(TokenKind::Shift, -ns_weight.abs()),
            }
        };
        out.push(lt);
    }
    Ok(out)
}

/// Two listening blocks with the user talking, a shift, two response
/// tokens, and a shift back. The golden files are built from this.
pub fn golden_dialogue(timing: &TimingConfig) -> (Vec<TimeBlock>, Vec<LabelEvent>) {
    let blocks = (0..6u64)
        .map(|k| {
            let mut b = TimeBlock::silent(k, timing);
            if k < 2 {
                for f in &mut b.env_frames {
                    *f = Frame::speech(f.t_index, Speaker::User, 0.9);
                }
            }
            if k >= 4 {
                for f in &mut b.asst_frames {
                    *f = Frame::speech(f.t_index, Speaker::Assistant, 0.0);
                }
            }
            b
        })
        .collect();
    let events = vec![
        LabelEvent::Heard {
            block: 0,
            symbol: SymbolId::HEARD_USER,
        },
        LabelEvent::Heard {
            block: 1,
            symbol: SymbolId::HEARD_USER,
        },
        LabelEvent::Transition { block: 2 },
        LabelEvent::Respond {
            block: 3,
            symbol: SymbolId::response(0),
        },
        LabelEvent::Respond {
            block: 4,
            symbol: SymbolId::response(1),
        },
        LabelEvent::Transition { block: 5 },
    ];
    (blocks, events)
}

/// Seeded random dialogue of `n_blocks` blocks: random frames on both
/// streams and a label event list the labeller accepts.
pub fn random_dialogue(
    seed: u64,
    n_blocks: usize,
    timing: &TimingConfig,
) -> (Vec<TimeBlock>, Vec<LabelEvent>) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let speakers = [Speaker::User, Speaker::ThirdParty, Speaker::AssistantEcho];
    let frame = |rng: &mut rand_chacha::ChaCha8Rng, t: u64, speakers: &[Speaker]| {
        if rng.gen_bool(0.4) {
            Frame::silent(t)
        } else {
            let mut f = Frame::speech(
                t,
                speakers[rng.gen_range(0..speakers.len())],
                rng.gen_range(0.0..=1.0),
            );
            f.activity = rng.gen_range(0.05..=1.0);
            f.energy = rng.gen_range(0.0..2.0);
            f.echo_energy = if rng.gen_bool(0.3) {
                rng.gen_range(0.0..1.0)
            } else {
                0.0
            };
            f
        }
    };
    let n = timing.frames_per_block() as u64;
    let mut blocks = Vec::with_capacity(n_blocks);
    let mut events = Vec::new();
    let mut state = State::Listening;
    let mut next_symbol = 0;
    for k in 0..n_blocks as u64 {
        let env = (0..n)
            .map(|i| frame(&mut rng, k * n + i, &speakers))
            .collect();
        let asst = (0..n)
            .map(|i| frame(&mut rng, k * n + i, &[Speaker::Assistant]))
            .collect();
        blocks.push(TimeBlock {
            block_index: k,
            env_frames: env,
            asst_frames: asst,
            emitted_token: None,
        });
        if rng.gen_bool(0.5) {
            events.push(LabelEvent::Heard {
                block: k,
                symbol: SymbolId(rng.gen_range(0..4)),
            });
        }
        if rng.gen_bool(0.2) {
            events.push(LabelEvent::Transition { block: k });
            state = state.flipped();
        } else if state == State::Speaking && rng.gen_bool(0.6) {
            events.push(LabelEvent::Respond {
                block: k,
                symbol: SymbolId::response(next_symbol),
            });
            next_symbol += 1;
        }
    }
    (blocks, events)
}

/// Compact one-line rendering of the layout, e.g.
/// `E E A A L:<think> | I:<think> E E A A L:<shift>`.
pub fn layout_signature(seq: &InterleavedSequence) -> String {
    let mut out = String::new();
    let mut prev_block = None;
    for item in &seq.items {
        if prev_block.is_some_and(|b| b != item.block_index) {
            out.push_str(" |");
        }
        if !out.is_empty() {
            out.push(' ');
        }
        prev_block = Some(item.block_index);
        match (&item.kind, &item.payload) {
            (SlotKind::EnvEmbedding, _) => out.push('E'),
            (SlotKind::AsstEmbedding, _) => out.push('A'),
            (SlotKind::TokenInput, Payload::Token(t)) => {
                out.push_str("I:");
                out.push_str(&t.kind.short_name());
            }
            (SlotKind::TokenLabel, Payload::Token(t)) => {
                out.push_str("L:");
                out.push_str(&t.kind.short_name());
                if item.loss_weight != 1.0 {
                    out.push_str(&format!("@{}", item.loss_weight));
                }
            }
            _ => out.push('?'),
        }
    }
    out
}

#[derive(Serialize, Deserialize)]
struct SequenceHeader {
    #[serde(flatten)]
    tag: SchemaTag,
    strategy: StrategyKind,
    items: usize,
}

impl InterleavedSequence {
    /// One header line followed by one item per line.
    pub fn to_jsonl(&self) -> String {
        let header = SequenceHeader {
            tag: SchemaTag::current(INTERLEAVED_SCHEMA),
            strategy: self.strategy,
            items: self.items.len(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for item in &self.items {
            out.push_str(&serde_json::to_string(item).expect("item serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, InterleaveError> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or(InterleaveError::Json {
            line: 1,
            message: "missing header".into(),
        })?;
        let header: SequenceHeader =
            serde_json::from_str(first).map_err(|e| InterleaveError::Json {
                line: 1,
                message: e.to_string(),
            })?;
        header.tag.check(INTERLEAVED_SCHEMA)?;
        let items = lines
            .map(|(n, l)| {
                serde_json::from_str(l).map_err(|e| InterleaveError::Json {
                    line: n + 1,
                    message: e.to_string(),
                })
            })
            .collect::<Result<Vec<SlotItem>, _>>()?;
        if items.len() != header.items {
            return Err(InterleaveError::Json {
                line: 1,
                message: format!(
                    "header declares {} items, found {}",
                    header.items,
                    items.len()
                ),
            });
        }
        Ok(InterleavedSequence {
            strategy: header.strategy,
            items,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timebase::{Speaker, TimingConfig};

    fn blocks(n: u64) -> Vec<TimeBlock> {
        let cfg = TimingConfig::default();
        (0..n).map(|k| TimeBlock::silent(k, &cfg)).collect()
    }

    fn think_labels(n: u64) -> Vec<LabeledToken> {
        (0..n)
            .map(|k| Token::new(TokenKind::Think, k).into())
            .collect()
    }

    #[test]
    fn explicit_listening_feeds_back_every_think() {
        let seq = build_sequence(
            &blocks(3),
            &think_labels(3),
            StrategyKind::Explicit,
            &EncoderConfig::default(),
        )
        .unwrap();
        assert_eq!(
            layout_signature(&seq),
            "E E A A L:<think> | I:<think> E E A A L:<think> | I:<think> E E A A L:<think>"
        );
    }

    #[test]
    fn empty_dialogue_is_empty_sequence() {
        let seq =
            build_sequence(&[], &[], StrategyKind::Implicit, &EncoderConfig::default()).unwrap();
        assert!(seq.items.is_empty());
        let (b, l) = deinterleave(&seq).unwrap();
        assert!(b.is_empty() && l.is_empty());
    }

    #[test]
    fn misaligned_inputs_rejected() {
        let enc = EncoderConfig::default();
        assert!(matches!(
            build_sequence(&blocks(2), &think_labels(3), StrategyKind::Explicit, &enc),
            Err(InterleaveError::LengthMismatch { .. })
        ));
        let mut labels = think_labels(2);
        labels[1].token.block_index = 5;
        assert!(matches!(
            build_sequence(&blocks(2), &labels, StrategyKind::Explicit, &enc),
            Err(InterleaveError::BlockIndexMismatch { position: 1, .. })
        ));
    }

    #[test]
    fn strategy_token_families_are_enforced() {
        let enc = EncoderConfig::default();
        let listen: Vec<LabeledToken> = vec![Token::new(TokenKind::Listen, 0).into()];
        assert!(matches!(
            build_sequence(&blocks(1), &listen, StrategyKind::Explicit, &enc),
            Err(InterleaveError::TokenNotAllowed { .. })
        ));
        assert!(matches!(
            build_sequence(&blocks(1), &think_labels(1), StrategyKind::Implicit, &enc),
            Err(InterleaveError::TokenNotAllowed { .. })
        ));
        let text: Vec<LabeledToken> = vec![Token::new(TokenKind::Text(SymbolId(7)), 0).into()];
        assert!(matches!(
            build_sequence(&blocks(1), &text, StrategyKind::Explicit, &enc),
            Err(InterleaveError::TextWhileListening(0))
        ));
        build_sequence(&blocks(1), &text, StrategyKind::ExplicitAsr, &enc).unwrap();
    }

    #[test]
    fn malformed_blocks_rejected() {
        let mut b = blocks(1);
        b[0].asst_frames.pop();
        assert!(matches!(
            build_sequence(
                &b,
                &think_labels(1),
                StrategyKind::Explicit,
                &EncoderConfig::default()
            ),
            Err(InterleaveError::MalformedBlock(0))
        ));
    }

    #[test]
    fn ns_labels_listening_blocks_negative() {
        let labels =
            label_scheme(&blocks(3), &[], StrategyKind::ExplicitNs, DEFAULT_NS_WEIGHT).unwrap();
        for l in &labels {
            assert_eq!(l.token.kind, TokenKind::Shift);
            assert_eq!(l.loss_weight, -0.1);
        }
    }

    #[test]
    fn transition_blocks_get_unit_weight() {
        let ev = [LabelEvent::Transition { block: 1 }];
        for s in StrategyKind::ALL {
            let labels = label_scheme(&blocks(3), &ev, s, DEFAULT_NS_WEIGHT).unwrap();
            let expected = if s == StrategyKind::Implicit {
                TokenKind::Speak
            } else {
                TokenKind::Shift
            };
            assert_eq!(labels[1].token.kind, expected, "{s}");
            assert_eq!(labels[1].loss_weight, 1.0);
        }
    }

    #[test]
    fn asr_labels_echo_heard_symbols() {
        let ev = [
            LabelEvent::Heard {
                block: 0,
                symbol: SymbolId(10),
            },
            LabelEvent::Heard {
                block: 1,
                symbol: SymbolId(11),
            },
        ];
        let labels = label_scheme(
            &blocks(2),
            &ev,
            StrategyKind::ImplicitAsr,
            DEFAULT_NS_WEIGHT,
        )
        .unwrap();
        assert_eq!(labels[0].token.kind, TokenKind::Text(SymbolId(10)));
        assert_eq!(labels[1].token.kind, TokenKind::Text(SymbolId(11)));
        assert!(labels.iter().all(|l| l.loss_weight == 1.0));
    }

    #[test]
    fn label_event_errors() {
        let b = blocks(2);
        assert!(matches!(
            label_scheme(
                &b,
                &[LabelEvent::Transition { block: 2 }],
                StrategyKind::Explicit,
                0.1
            ),
            Err(InterleaveError::EventOutOfRange {
                block: 2,
                n_blocks: 2
            })
        ));
        assert!(matches!(
            label_scheme(
                &b,
                &[LabelEvent::Respond {
                    block: 0,
                    symbol: SymbolId(100)
                }],
                StrategyKind::Explicit,
                0.1
            ),
            Err(InterleaveError::TextWhileListening(0))
        ));
        assert!(matches!(
            label_scheme(
                &b,
                &[
                    LabelEvent::Transition { block: 1 },
                    LabelEvent::Transition { block: 1 }
                ],
                StrategyKind::Explicit,
                0.1
            ),
            Err(InterleaveError::ConflictingEvents(1))
        ));
    }

    #[test]
    fn deinterleave_reports_first_bad_item() {
        let mut b = blocks(2);
        b[0].env_frames[0] = Frame::speech(0, Speaker::User, 0.5);
        let seq = build_sequence(
            &b,
            &think_labels(2),
            StrategyKind::Explicit,
            &EncoderConfig::default(),
        )
        .unwrap();
        let mut broken = seq.clone();
        broken.items.remove(5);
        match deinterleave(&broken) {
            Err(InterleaveError::Layout { index, .. }) => assert_eq!(index, 5),
            other => panic!("unexpected {other:?}"),
        }
        let mut swapped = seq;
        swapped.items.swap(1, 2);
        assert!(matches!(
            deinterleave(&swapped),
            Err(InterleaveError::Layout { .. })
        ));
    }
}
