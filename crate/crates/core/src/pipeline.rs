//! End-to-end flows shared by the command line and the test suites.

use serde::{Deserialize, Serialize};

use crate::config::EngineConfig;
use crate::data::{
    apply_strategy_weights, collect_dpo, collect_sft, oracle_for, DpoData, SftCollect,
};
use crate::engine::{run_suite, EngineParams, RunInfo};
use crate::eval::{evaluate, ReportRow};
use crate::policy::train::{
    train_supervised, DpoParams, DpoTrainer, Example, SupervisedParams, TrainError, TrainLog,
};
use crate::policy::{ModelPolicy, PolicyModel};
use crate::sim::Scenario;
use crate::transcript::Transcript;

pub fn run_info(cfg: &EngineConfig, policy: &str) -> RunInfo {
    RunInfo {
        config_hash: cfg.hash(),
        policy: policy.to_string(),
        grace_ms: cfg.grace_ms,
    }
}

fn with_echo(scenarios: &[Scenario], echo: Option<f64>) -> Vec<Scenario> {
    scenarios
        .iter()
        .map(|s| Scenario {
            echo_factor: echo.unwrap_or(s.echo_factor),
            ..s.clone()
        })
        .collect()
}

/// Runs the oracle over `scenarios`, optionally overriding the echo factor.
pub fn run_oracle(
    cfg: &EngineConfig,
    scenarios: &[Scenario],
    echo: Option<f64>,
) -> Vec<Transcript> {
    let params = cfg.engine_params();
    let window = cfg.tolerances.window_blocks;
    run_suite(
        &with_echo(scenarios, echo),
        &params,
        &run_info(cfg, "oracle"),
        |s| Box::new(oracle_for(s, &params, window)),
    )
}

pub fn run_model(
    cfg: &EngineConfig,
    model: &PolicyModel,
    scenarios: &[Scenario],
    echo: Option<f64>,
) -> Vec<Transcript> {
    let params = EngineParams {
        strategy: model.strategy,
        features: model.features,
        ..cfg.engine_params()
    };
    let info = run_info(cfg, &format!("model:{}", model.content_hash()));
    run_suite(&with_echo(scenarios, echo), &params, &info, |_| {
        Box::new(ModelPolicy { model })
    })
}

pub fn sft_examples(cfg: &EngineConfig, scenarios: &[Scenario]) -> Vec<Example> {
    let t = &cfg.training;
    let opts = SftCollect {
        lag_max_blocks: t.lag_max_blocks,
        interrupt_bias: t.interrupt_bias,
        window_blocks: cfg.tolerances.window_blocks,
        seed: cfg.seeds.train,
    };
    let ex = collect_sft(scenarios, &cfg.engine_params(), &opts);
    apply_strategy_weights(ex, cfg.strategy, t.ns_weight)
}

pub fn train_sft(
    cfg: &EngineConfig,
    scenarios: &[Scenario],
) -> Result<(PolicyModel, TrainLog), TrainError> {
    let data = sft_examples(cfg, scenarios);
    let t = &cfg.training;
    let init = PolicyModel::new(cfg.strategy, cfg.features, t.hidden, cfg.seeds.init);
    let hp = SupervisedParams {
        lr: t.lr,
        steps: t.steps,
        batch: t.batch,
        optimizer: t.optimizer,
        seed: cfg.seeds.train,
        log_every: t.log_every,
    };
    train_supervised(&init, &data, &hp)
}

pub fn evaluate_model(
    cfg: &EngineConfig,
    model: &PolicyModel,
    scenarios: &[Scenario],
    label: &str,
) -> ReportRow {
    let ts = run_model(cfg, model, scenarios, None);
    evaluate(
        &ts,
        &cfg.tolerances,
        label,
        scenarios.first().map_or(0.0, |s| s.echo_factor),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorRow {
    pub step: usize,
    pub loss: Option<f64>,
    pub row: ReportRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpoLog {
    pub pairs: usize,
    pub positive_pairs: usize,
    pub retained: usize,
    pub monitor: Vec<MonitorRow>,
}

pub fn dpo_data(cfg: &EngineConfig, scenarios: &[Scenario]) -> DpoData {
    collect_dpo(
        scenarios,
        &cfg.engine_params(),
        cfg.tolerances.window_blocks,
    )
}

/// DPO from `init`, evaluating on `monitor` before training and every
/// `monitor_every` steps.
pub fn train_dpo(
    cfg: &EngineConfig,
    init: &PolicyModel,
    data: &DpoData,
    monitor: &[Scenario],
) -> Result<(PolicyModel, DpoLog), TrainError> {
    let t = &cfg.training;
    let hp = DpoParams {
        beta: t.beta,
        lambda: t.lambda,
        lr: t.dpo_lr,
        clip_norm: t.dpo_clip_norm,
    };
    let mut trainer = DpoTrainer::new(init, hp, t.dpo_optimizer, cfg.seeds.dpo);
    let mut log = DpoLog {
        pairs: data.pairs.len(),
        positive_pairs: data
            .pairs
            .iter()
            .filter(|p| p.chosen == crate::policy::Action::Shift)
            .count(),
        retained: data.retained.len(),
        monitor: vec![MonitorRow {
            step: 0,
            loss: None,
            row: evaluate_model(cfg, init, monitor, "step-0"),
        }],
    };
    for step in 1..=t.dpo_steps {
        let loss = trainer.step(&data.pairs, &data.retained, t.dpo_batch)?;
        if t.monitor_every > 0 && (step % t.monitor_every == 0 || step == t.dpo_steps) {
            log.monitor.push(MonitorRow {
                step,
                loss: Some(loss),
                row: evaluate_model(cfg, &trainer.model, monitor, &format!("step-{step}")),
            });
        }
    }
    Ok((trainer.model, log))
}
