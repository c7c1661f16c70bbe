//! Block-aligned execution logs, stored as JSONL: a header line followed by
//! one record per block.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interleave::StrategyKind;
use crate::policy::{Action, BLOCK_DIM};
use crate::schema::{SchemaError, SchemaTag, TRANSCRIPT_SCHEMA};
use crate::sim::{Direction, ScenarioEvent, SuiteKind};
use crate::timebase::{State, Token};

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("transcript is empty")]
    Empty,
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error("record {position} has block index {found}")]
    BlockGap { position: usize, found: u64 },
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PlaybackEvent {
    SpeechStart {
        t_ms: u64,
    },
    SpeechChunk {
        t_ms: u64,
        tokens: u32,
        duration_ms: u64,
        first_text_block: u64,
        last_text_block: u64,
    },
    SpeechEnd {
        t_ms: u64,
    },
    SpeechTruncated {
        t_ms: u64,
        dropped_ms: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Violation {
    TextWhileListening,
    NoTextRemaining,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockRecord {
    pub block: u64,
    pub t_ms: u64,
    /// State after this block's decision.
    pub state: State,
    pub token: Token,
    pub action: Action,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transition: Option<Direction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub violation: Option<Violation>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub playback: Vec<PlaybackEvent>,
    pub features: [f64; BLOCK_DIM],
    pub buffered_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptHeader {
    #[serde(flatten)]
    pub tag: SchemaTag,
    pub scenario_id: String,
    pub kind: Option<SuiteKind>,
    pub strategy: StrategyKind,
    pub policy: String,
    pub config_hash: String,
    pub engine_version: String,
    pub block_ms: u64,
    pub echo_factor: f64,
    pub events: Vec<ScenarioEvent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transcript {
    pub header: TranscriptHeader,
    pub records: Vec<BlockRecord>,
}

impl Transcript {
    pub fn duration_ms(&self) -> u64 {
        self.records.len() as u64 * self.header.block_ms
    }

    pub fn playback_events(&self) -> impl Iterator<Item = &PlaybackEvent> {
        self.records.iter().flat_map(|r| &r.playback)
    }

    /// Start of the first audible speech.
    pub fn first_speech_ms(&self) -> Option<u64> {
        self.playback_events().find_map(|e| match e {
            PlaybackEvent::SpeechStart { t_ms } => Some(*t_ms),
            _ => None,
        })
    }

    pub fn violations(&self) -> usize {
        self.records
            .iter()
            .filter(|r| r.violation.is_some())
            .count()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, TranscriptError> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or(TranscriptError::Empty)?;
        let header: TranscriptHeader = serde_json::from_str(first)
            .map_err(|source| TranscriptError::Json { line: 1, source })?;
        header.tag.check(TRANSCRIPT_SCHEMA)?;
        let mut records = Vec::new();
        for (i, line) in lines {
            let r: BlockRecord =
                serde_json::from_str(line).map_err(|source| TranscriptError::Json {
                    line: i + 1,
                    source,
                })?;
            if r.block != records.len() as u64 {
                return Err(TranscriptError::BlockGap {
                    position: records.len(),
                    found: r.block,
                });
            }
            records.push(r);
        }
        Ok(Transcript { header, records })
    }
}
