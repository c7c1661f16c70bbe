//! Versioning shared by every on-disk artifact.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const INTERLEAVED_SCHEMA: &str = "duplex.interleaved";
pub const SCENARIO_SCHEMA: &str = "duplex.scenario";
pub const MANIFEST_SCHEMA: &str = "duplex.manifest";
pub const TRANSCRIPT_SCHEMA: &str = "duplex.transcript";
pub const MODEL_SCHEMA: &str = "duplex.model";
pub const REPORT_SCHEMA: &str = "duplex.report";
pub const CONFIG_SCHEMA: &str = "duplex.config";
pub const TRAIN_LOG_SCHEMA: &str = "duplex.trainlog";

/// Major version written by this build for every schema.
pub const CURRENT_MAJOR: u32 = 1;

pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchemaError {
    #[error("expected schema `{expected}`, found `{found}`")]
    WrongSchema { expected: String, found: String },
    #[error("schema `{schema}` version {found} is newer than supported version {supported}")]
    TooNew {
        schema: String,
        found: u32,
        supported: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaTag {
    pub schema: String,
    pub version: u32,
}

impl SchemaTag {
    pub fn current(schema: &str) -> Self {
        SchemaTag {
            schema: schema.to_string(),
            version: CURRENT_MAJOR,
        }
    }

    pub fn check(&self, expected: &str) -> Result<(), SchemaError> {
        if self.schema != expected {
            return Err(SchemaError::WrongSchema {
                expected: expected.to_string(),
                found: self.schema.clone(),
            });
        }
        if self.version > CURRENT_MAJOR {
            return Err(SchemaError::TooNew {
                schema: self.schema.clone(),
                found: self.version,
                supported: CURRENT_MAJOR,
            });
        }
        Ok(())
    }
}

/// Hex SHA-256 of arbitrary bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
