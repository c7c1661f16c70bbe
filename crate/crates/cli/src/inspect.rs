use std::path::PathBuf;

use clap::Args;
use duplex_core::config::EngineConfig;
use duplex_core::eval::Report;
use duplex_core::interleave::{layout_signature, InterleavedSequence};
use duplex_core::policy::PolicyModel;
use duplex_core::schema::{
    CONFIG_SCHEMA, INTERLEAVED_SCHEMA, MANIFEST_SCHEMA, MODEL_SCHEMA, REPORT_SCHEMA,
    SCENARIO_SCHEMA, TRANSCRIPT_SCHEMA,
};
use duplex_core::sim::{Manifest, Scenario, Suite};
use duplex_core::transcript::Transcript;
use serde_json::Value;

use crate::error::{CliError, CliResult};
use crate::files;

#[derive(Args)]
pub struct InspectArgs {
    path: PathBuf,
}

/// Identifies the artifact by its schema tag, validates it through its
/// reader and prints a short summary.
pub fn run(a: InspectArgs) -> CliResult<()> {
    let text = files::read(&a.path)?;
    let first = text
        .lines()
        .find(|l| !l.trim().is_empty())
        .unwrap_or_default();
    let head: Value = serde_json::from_str(&text)
        .or_else(|_| serde_json::from_str(first))
        .map_err(|e| CliError::data(&a.path, e))?;
    let schema = head
        .get("schema")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    let bad = |e: &dyn std::fmt::Display| CliError::data(&a.path, e);
    let summary = match schema.as_str() {
        SCENARIO_SCHEMA if head.get("scenarios").is_some() => {
            let s = Suite::from_json(&text).map_err(|e| bad(&e))?;
            let m = s.manifest();
            format!(
                "suite {} seed {}: {} scenarios, {} positives, {} negatives, hash {}",
                s.kind.name(),
                s.seed,
                m.count,
                m.positives,
                m.negatives,
                m.suite_hash
            )
        }
        SCENARIO_SCHEMA => {
            let s = Scenario::from_json(&text).map_err(|e| bad(&e))?;
            format!(
                "scenario {} ({}): {} events, ends at {} ms",
                s.id,
                s.kind.name(),
                s.events.len(),
                s.end_ms()
            )
        }
        MANIFEST_SCHEMA => {
            let m = Manifest::from_json(&text).map_err(|e| bad(&e))?;
            format!(
                "manifest {} seed {}: {} scenarios, labels {:?}",
                m.kind.name(),
                m.seed,
                m.count,
                m.label_counts
            )
        }
        MODEL_SCHEMA => {
            let m = PolicyModel::from_json(&text).map_err(|e| bad(&e))?;
            format!(
                "model {} strategy {} input {} hidden {} params {}",
                m.content_hash(),
                m.strategy,
                m.input_dim(),
                m.mlp.hidden,
                m.mlp.theta.len()
            )
        }
        TRANSCRIPT_SCHEMA => {
            let t = Transcript::from_jsonl(&text).map_err(|e| bad(&e))?;
            format!(
                "transcript {} policy {}: {} blocks, {} transitions, {} violations, first speech {:?} ms",
                t.header.scenario_id,
                t.header.policy,
                t.records.len(),
                t.records.iter().filter(|r| r.transition.is_some()).count(),
                t.violations(),
                t.first_speech_ms()
            )
        }
        REPORT_SCHEMA => {
            let r = Report::from_json(&text).map_err(|e| bad(&e))?;
            r.check().map_err(|e| bad(&e))?;
            r.to_text()
        }
        INTERLEAVED_SCHEMA => {
            let s = InterleavedSequence::from_jsonl(&text).map_err(|e| bad(&e))?;
            format!(
                "interleaved {} with {} items\n{}",
                s.strategy,
                s.items.len(),
                layout_signature(&s)
            )
        }
        CONFIG_SCHEMA => {
            let c = EngineConfig::from_json(&text).map_err(|e| bad(&e))?;
            format!("config {} strategy {}", c.hash(), c.strategy)
        }
        other => {
            return Err(CliError::Data(format!(
                "{}: unknown schema `{other}`",
                a.path.display()
            )))
        }
    };
    println!("{}", summary.trim_end());
    Ok(())
}
