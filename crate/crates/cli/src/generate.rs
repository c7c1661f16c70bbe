use std::path::PathBuf;

use clap::Args;
use duplex_core::sim::{generate_suite, Suite, SuiteKind};

use crate::error::{CliError, CliResult};
use crate::{files, Global};

#[derive(Args)]
pub struct GenerateArgs {
    /// turn-taking, barge-in-independent, barge-in-dependent, backchannel or mixed.
    kind: String,
    count: usize,
    /// Suite seed. Defaults to seeds.suite from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Suite file. Defaults to <kind>-<seed>.json.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Manifest file. Defaults to the suite path with a .manifest.json suffix.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

pub fn manifest_path(suite: &std::path::Path) -> PathBuf {
    let stem = suite
        .file_stem()
        .map_or("suite".into(), |s| s.to_string_lossy().into_owned());
    suite.with_file_name(format!("{stem}.manifest.json"))
}

pub fn run(g: &Global, a: GenerateArgs) -> CliResult<()> {
    let cfg = g.config(&[])?;
    let kind = SuiteKind::parse(&a.kind).map_err(|e| CliError::Usage(e.to_string()))?;
    if a.count == 0 {
        return Err(CliError::Usage("count must be positive".into()));
    }
    let seed = a.seed.unwrap_or(cfg.seeds.suite);
    let scenarios =
        generate_suite(kind, a.count, seed).map_err(|e| CliError::Usage(e.to_string()))?;
    let suite = Suite::new(kind, seed, scenarios);
    let out = a
        .out
        .unwrap_or_else(|| PathBuf::from(format!("{}-{seed}.json", kind.name())));
    let manifest = suite.manifest();
    files::write(&out, &suite.to_json())?;
    files::write(
        &a.manifest.unwrap_or_else(|| manifest_path(&out)),
        &manifest.to_json(),
    )?;
    println!(
        "{} scenarios of {} (seed {seed}) -> {}",
        manifest.count,
        kind.name(),
        out.display()
    );
    println!(
        "positives {}  negatives {}",
        manifest.positives, manifest.negatives
    );
    for (label, n) in &manifest.label_counts {
        println!("  {label:<16} {n}");
    }
    Ok(())
}
