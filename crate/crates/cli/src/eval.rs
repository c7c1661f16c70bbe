use std::path::{Path, PathBuf};

use clap::Args;
use duplex_core::eval::{evaluate, latency_report, Report};
use duplex_core::pipeline::{run_model, run_oracle};
use duplex_core::schema::sha256_hex;
use duplex_core::transcript::Transcript;

use crate::error::{CliError, CliResult};
use crate::{files, Global};

#[derive(Args)]
pub struct EvalArgs {
    /// Suite file(s) to run.
    #[arg(long, required = true)]
    suite: Vec<PathBuf>,
    /// Use the ground-truth oracle policy.
    #[arg(long, conflicts_with = "model")]
    oracle: bool,
    /// Trained model file. Defaults to policy_path from the config.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Comma-separated echo factors; one report row each.
    #[arg(long, value_delimiter = ',')]
    echo: Vec<f64>,
    /// Output directory for transcripts and the report.
    #[arg(long)]
    out: PathBuf,
    /// Exit with the protocol-violation code if any block was a violation.
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
pub struct LatencyArgs {
    /// Transcript files or directories searched recursively for .jsonl files.
    #[arg(required = true)]
    transcripts: Vec<PathBuf>,
    /// JSON output file.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn echo_label(echo: Option<f64>) -> String {
    echo.map_or("suite".to_string(), |e| format!("echo-{e}"))
}

pub fn run(g: &Global, a: EvalArgs) -> CliResult<()> {
    let cfg = g.config(&[])?;
    let suites = files::load_suites(&a.suite)?;
    let scenarios = files::scenarios(&suites);
    let model = if a.oracle {
        None
    } else {
        let path = a
            .model
            .clone()
            .or_else(|| cfg.policy_path.as_ref().map(PathBuf::from))
            .ok_or_else(|| {
                CliError::Usage("pass --oracle or --model (or set policy_path)".into())
            })?;
        let m = files::load_model(&path)?;
        if m.strategy != cfg.strategy {
            return Err(CliError::Data(format!(
                "{}: model strategy {} does not match configured strategy {}",
                path.display(),
                m.strategy,
                cfg.strategy
            )));
        }
        Some(m)
    };
    for e in &a.echo {
        if !(*e >= 0.0 && e.is_finite()) {
            return Err(CliError::Usage(format!(
                "echo factor {e} must be a non-negative number"
            )));
        }
    }
    let echoes: Vec<Option<f64>> = if a.echo.is_empty() {
        vec![None]
    } else {
        a.echo.iter().copied().map(Some).collect()
    };
    let manifest_hash = sha256_hex(
        suites
            .iter()
            .map(|s| s.manifest().suite_hash)
            .collect::<Vec<_>>()
            .join(",")
            .as_bytes(),
    );
    let config_value = serde_json::to_value(&cfg).expect("config serializes");
    let mut report = Report::new(&cfg.hash(), config_value, cfg.tolerances, &manifest_hash);
    let policy_label = if model.is_some() { "model" } else { "oracle" };
    for echo in &echoes {
        let ts = match &model {
            Some(m) => run_model(&cfg, m, &scenarios, *echo),
            None => run_oracle(&cfg, &scenarios, *echo),
        };
        let dir = if echoes.len() > 1 {
            a.out.join("transcripts").join(echo_label(*echo))
        } else {
            a.out.join("transcripts")
        };
        for t in &ts {
            files::write(
                &dir.join(format!("{}.jsonl", t.header.scenario_id)),
                &t.to_jsonl(),
            )?;
        }
        let echo_value = echo.unwrap_or(cfg.echo.factor);
        let label = format!("{policy_label}/{}", echo_label(*echo));
        report
            .rows
            .push(evaluate(&ts, &cfg.tolerances, &label, echo_value));
        if report.latency.is_none() {
            report.latency = Some(latency_report(&ts, &cfg.tolerances));
        }
    }
    files::write(&a.out.join("report.json"), &report.to_json())?;
    let text = report.to_text();
    files::write(&a.out.join("report.txt"), &text)?;
    print!("{text}");
    let violations: usize = report.rows.iter().map(|r| r.violations).sum();
    if a.strict && violations > 0 {
        return Err(CliError::Violation(format!(
            "{violations} protocol violations"
        )));
    }
    Ok(())
}

fn collect(path: &Path, out: &mut Vec<PathBuf>) -> CliResult<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| CliError::io(path, e))?
            .map(|e| e.map(|e| e.path()).map_err(|err| CliError::io(path, err)))
            .collect::<CliResult<_>>()?;
        entries.sort();
        for e in entries {
            if e.is_dir() || e.extension().is_some_and(|x| x == "jsonl") {
                collect(&e, out)?;
            }
        }
    } else {
        out.push(path.to_path_buf());
    }
    Ok(())
}

pub fn load_transcript(path: &Path) -> CliResult<Transcript> {
    Transcript::from_jsonl(&files::read(path)?).map_err(|e| CliError::data(path, e))
}

pub fn latency(g: &Global, a: LatencyArgs) -> CliResult<()> {
    let cfg = g.config(&[])?;
    let mut paths = Vec::new();
    for p in &a.transcripts {
        if !p.exists() {
            return Err(CliError::Io(format!(
                "{}: no such file or directory",
                p.display()
            )));
        }
        collect(p, &mut paths)?;
    }
    let ts = paths
        .iter()
        .map(|p| load_transcript(p))
        .collect::<CliResult<Vec<_>>>()?;
    let report = latency_report(&ts, &cfg.tolerances);
    let json = serde_json::to_string_pretty(&report).expect("latency serializes") + "\n";
    if let Some(out) = &a.out {
        files::write(out, &json)?;
    }
    println!("{} transcripts ({})", ts.len(), report.convention);
    for (name, s) in [
        ("turn_taking_ms", &report.turn_taking_ms),
        ("interrupt_ms", &report.interrupt_ms),
    ] {
        println!(
            "{name:<16} count {:>5} excluded {:>5} mean {:>9} p50 {:>6} p95 {:>6}",
            s.count,
            s.excluded,
            s.mean.map_or("-".into(), |m| format!("{m:.1}")),
            s.p50.map_or("-".into(), |v| v.to_string()),
            s.p95.map_or("-".into(), |v| v.to_string()),
        );
    }
    Ok(())
}
