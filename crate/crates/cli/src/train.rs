use std::path::{Path, PathBuf};

use clap::Args;
use duplex_core::eval::Prf;
use duplex_core::pipeline::{dpo_data, train_dpo, train_sft, MonitorRow};
use duplex_core::policy::train::TrainError;
use duplex_core::policy::PolicyModel;
use duplex_core::schema::{SchemaTag, TRAIN_LOG_SCHEMA};
use serde_json::json;

use crate::error::{CliError, CliResult};
use crate::{files, Global, StrategyArg};

#[derive(Args)]
pub struct SftArgs {
    /// Training suite(s).
    #[arg(long, required = true)]
    data: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Training log. Defaults to the model path with a .log.json suffix.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
}

#[derive(Args)]
pub struct DpoArgs {
    /// Starting model, also used as the frozen reference.
    #[arg(long)]
    init: PathBuf,
    /// Suites the preference pairs are drawn from.
    #[arg(long, required = true)]
    data: Vec<PathBuf>,
    /// Suites evaluated before training and every `training.monitor_every` steps.
    #[arg(long, required = true)]
    monitor: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    log: Option<PathBuf>,
}

fn log_path(model: &Path, log: Option<PathBuf>) -> PathBuf {
    log.unwrap_or_else(|| {
        let stem = model
            .file_stem()
            .map_or("model".into(), |s| s.to_string_lossy().into_owned());
        model.with_file_name(format!("{stem}.log.json"))
    })
}

fn train_error(e: TrainError, out: &Path) -> CliError {
    match e {
        TrainError::NonFinite { step, last_good } => {
            match files::write(out, &last_good.to_json()) {
                Ok(()) => CliError::Divergence(format!(
                    "non-finite loss at step {step}; last good model written to {}",
                    out.display()
                )),
                Err(w) => w,
            }
        }
        TrainError::EmptyDataset => CliError::Data("no training examples".into()),
        e @ (TrainError::BadLearningRate(_) | TrainError::BadBeta(_)) => {
            CliError::Config(e.to_string())
        }
        e @ TrainError::Policy(_) => CliError::Data(e.to_string()),
    }
}

fn write_log(
    path: &Path,
    mode: &str,
    config_hash: &str,
    model: &PolicyModel,
    log: serde_json::Value,
) -> CliResult<()> {
    let tag = SchemaTag::current(TRAIN_LOG_SCHEMA);
    let doc = json!({
        "schema": tag.schema,
        "version": tag.version,
        "mode": mode,
        "config_hash": config_hash,
        "model_hash": model.content_hash(),
        "log": log,
    });
    files::write(
        path,
        &(serde_json::to_string_pretty(&doc).expect("log serializes") + "\n"),
    )
}

pub fn sft(g: &Global, a: SftArgs) -> CliResult<()> {
    let extra: Vec<String> = a
        .strategy
        .map(StrategyArg::override_string)
        .into_iter()
        .collect();
    let cfg = g.config(&extra)?;
    let suites = files::load_suites(&a.data)?;
    let scenarios = files::scenarios(&suites);
    let (model, log) = train_sft(&cfg, &scenarios).map_err(|e| train_error(e, &a.out))?;
    for s in &log.steps {
        println!(
            "step {:>6}  loss {:.6}  accuracy {:.4}",
            s.step, s.loss, s.accuracy
        );
    }
    println!(
        "sft: {} scenarios, loss {:.6} -> {:.6}, final training accuracy {:.4}",
        scenarios.len(),
        log.initial_loss,
        log.final_loss,
        log.final_accuracy
    );
    files::write(&a.out, &model.to_json())?;
    let log_value = serde_json::to_value(&log).expect("log serializes");
    write_log(
        &log_path(&a.out, a.log),
        "sft",
        &cfg.hash(),
        &model,
        log_value,
    )
}

pub fn monitor_table(rows: &[MonitorRow]) -> String {
    let cell = |p: Option<Prf>, f: fn(&Prf) -> f64| {
        p.as_ref()
            .map_or("-".to_string(), |p| format!("{:.2}", f(p)))
    };
    let mut out = format!(
        "{:<10} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>8} {:>8}\n",
        "step", "ind_p", "ind_r", "ind_f1", "dep_p", "dep_r", "dep_f1", "overall", "loss"
    );
    for r in rows {
        let name = if r.step == 0 {
            "sft".to_string()
        } else {
            format!("dpo-{}", r.step)
        };
        out.push_str(&format!(
            "{:<10} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>8} {:>8}\n",
            name,
            cell(r.row.independent, |p| p.precision),
            cell(r.row.independent, |p| p.recall),
            cell(r.row.independent, |p| p.f1),
            cell(r.row.dependent, |p| p.precision),
            cell(r.row.dependent, |p| p.recall),
            cell(r.row.dependent, |p| p.f1),
            r.row.overall_f1.map_or("-".into(), |v| format!("{v:.2}")),
            r.loss.map_or("-".into(), |v| format!("{v:.4}")),
        ));
    }
    out
}

pub fn dpo(g: &Global, a: DpoArgs) -> CliResult<()> {
    let init = files::load_model(&a.init)?;
    let strategy = format!("strategy=\"{}\"", init.strategy.name());
    let cfg = g.config(&[strategy])?;
    if init.features != cfg.features {
        return Err(CliError::Data(format!(
            "{}: model features {:?} differ from config features {:?}",
            a.init.display(),
            init.features,
            cfg.features
        )));
    }
    let data = files::scenarios(&files::load_suites(&a.data)?);
    let monitor = files::scenarios(&files::load_suites(&a.monitor)?);
    let pairs = dpo_data(&cfg, &data);
    if pairs.pairs.is_empty() {
        return Err(CliError::Data(
            "the data suites yield no preference pairs".into(),
        ));
    }
    let (model, log) =
        train_dpo(&cfg, &init, &pairs, &monitor).map_err(|e| train_error(e, &a.out))?;
    println!(
        "dpo: {} pairs ({} positive), {} retained examples",
        log.pairs, log.positive_pairs, log.retained
    );
    print!("{}", monitor_table(&log.monitor));
    files::write(&a.out, &model.to_json())?;
    let log_value = serde_json::to_value(&log).expect("log serializes");
    write_log(
        &log_path(&a.out, a.log),
        "dpo",
        &cfg.hash(),
        &model,
        log_value,
    )
}
