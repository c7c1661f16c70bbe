//! Training data drawn from closed-loop rollouts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::engine::{run_collecting, EngineParams, RunInfo};
use crate::interleave::StrategyKind;
use crate::policy::oracle::{teacher, GroundTruth, LaggedOracle, OraclePolicy};
use crate::policy::train::{Example, PreferencePair};
use crate::policy::{Action, DecisionContext, DecisionPolicy};
use crate::sim::Scenario;
use crate::timebase::State;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SftCollect {
    /// Largest reaction lag of the behaviour policy, in blocks.
    pub lag_max_blocks: u64,
    /// Probability that a non-interrupting event is labelled as an
    /// interruption, per event.
    pub interrupt_bias: f64,
    pub window_blocks: u64,
    pub seed: u64,
}

/// A probe block the assistant hears while speaking.
fn probe_at(gt: &GroundTruth, ctx: &DecisionContext<'_>) -> Option<(usize, bool)> {
    if ctx.dialogue.state != State::Speaking {
        return None;
    }
    gt.probes.iter().enumerate().find_map(|(i, p)| {
        let in_window = p.onset_block <= ctx.block
            && ctx.block < p.onset_block + gt.window_blocks
            && ctx.block <= p.last_block;
        in_window.then_some((i, p.positive))
    })
}

struct Recorder<P> {
    truth: GroundTruth,
    behaviour: P,
    flips: Vec<bool>,
    examples: Vec<Example>,
}

impl<P: DecisionPolicy> DecisionPolicy for Recorder<P> {
    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Action {
        let (mut action, weight) = teacher(&self.truth, ctx);
        if let Some((i, false)) = probe_at(&self.truth, ctx) {
            if self.flips[i] {
                action = Action::Shift;
            }
        }
        if weight != 0.0 {
            self.examples.push(Example {
                features: ctx.features.input.clone(),
                action,
                weight,
            });
        }
        self.behaviour.decide(ctx)
    }
}

fn scenario_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Teacher-labelled examples gathered along lagged-oracle rollouts.
pub fn collect_sft(
    scenarios: &[Scenario],
    params: &EngineParams,
    opts: &SftCollect,
) -> Vec<Example> {
    let info = RunInfo {
        config_hash: String::new(),
        policy: "lagged-oracle".into(),
        grace_ms: 2000,
    };
    let per: Vec<Vec<Example>> = scenarios
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let truth = s.ground_truth(&params.timing, opts.window_blocks);
            let mut rng = scenario_rng(opts.seed, i);
            let flips = truth
                .probes
                .iter()
                .map(|_| rng.gen_bool(opts.interrupt_bias))
                .collect();
            let mut rec = Recorder {
                behaviour: LaggedOracle::new(truth.clone(), opts.lag_max_blocks, rng.gen()),
                truth,
                flips,
                examples: Vec::new(),
            };
            run_collecting(s, &mut rec, params, &info, |_| {});
            rec.examples
        })
        .collect();
    per.into_iter().flatten().collect()
}

/// Rewrites stay labels as down-weighted shift labels for the
/// negative-sampling strategy; other strategies pass through.
pub fn apply_strategy_weights(
    examples: Vec<Example>,
    strategy: StrategyKind,
    ns_weight: f64,
) -> Vec<Example> {
    if strategy != StrategyKind::ExplicitNs {
        return examples;
    }
    examples
        .into_iter()
        .map(|e| match e.action {
            Action::Think => Example {
                action: Action::Shift,
                weight: -ns_weight.abs(),
                ..e
            },
            _ => e,
        })
        .collect()
}

#[derive(Debug, Clone, Default)]
pub struct DpoData {
    pub pairs: Vec<PreferencePair>,
    /// Examples outside probe windows, kept to preserve other behaviour.
    pub retained: Vec<Example>,
}

struct PairCollector {
    truth: GroundTruth,
    pairs: Vec<PreferencePair>,
    retained: Vec<Example>,
}

impl DecisionPolicy for PairCollector {
    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Action {
        let (ideal, weight) = teacher(&self.truth, ctx);
        let cont = if ctx.status.text_done {
            Action::Think
        } else {
            Action::Text
        };
        match probe_at(&self.truth, ctx) {
            Some((i, true)) => {
                if ctx.block == self.truth.probes[i].onset_block {
                    self.pairs.push(PreferencePair {
                        context: ctx.features.input.clone(),
                        chosen: Action::Shift,
                        rejected: cont,
                    });
                }
            }
            Some((_, false)) => self.pairs.push(PreferencePair {
                context: ctx.features.input.clone(),
                chosen: cont,
                rejected: Action::Shift,
            }),
            None if weight != 0.0 => self.retained.push(Example {
                features: ctx.features.input.clone(),
                action: ideal,
                weight,
            }),
            None => {}
        }
        ideal
    }
}

/// Preference pairs at barge-in and backchannel blocks along oracle
/// rollouts, plus retained supervised examples from the same rollouts.
pub fn collect_dpo(scenarios: &[Scenario], params: &EngineParams, window_blocks: u64) -> DpoData {
    let info = RunInfo {
        config_hash: String::new(),
        policy: "oracle".into(),
        grace_ms: 2000,
    };
    let per: Vec<DpoData> = scenarios
        .par_iter()
        .map(|s| {
            let mut c = PairCollector {
                truth: s.ground_truth(&params.timing, window_blocks),
                pairs: Vec::new(),
                retained: Vec::new(),
            };
            run_collecting(s, &mut c, params, &info, |_| {});
            DpoData {
                pairs: c.pairs,
                retained: c.retained,
            }
        })
        .collect();
    let mut out = DpoData::default();
    for d in per {
        out.pairs.extend(d.pairs);
        out.retained.extend(d.retained);
    }
    out
}

/// Oracle policy for a scenario.
pub fn oracle_for(s: &Scenario, params: &EngineParams, window_blocks: u64) -> OraclePolicy {
    OraclePolicy {
        truth: s.ground_truth(&params.timing, window_blocks),
    }
}
