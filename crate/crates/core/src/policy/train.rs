//! Weighted cross-entropy and DPO objectives with analytic gradients.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{log_softmax, softmax, Action, Mlp, PolicyError, PolicyModel, N_ACTIONS};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyDataset,
    #[error("learning rate must be positive, got {0}")]
    BadLearningRate(f64),
    #[error("beta must be positive, got {0}")]
    BadBeta(f64),
    #[error("non-finite loss at step {step}; last good parameters retained")]
    NonFinite {
        step: usize,
        last_good: Box<PolicyModel>,
    },
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub features: Vec<f64>,
    pub action: Action,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub context: Vec<f64>,
    pub chosen: Action,
    pub rejected: Action,
}

/// Softplus of `-x`, i.e. `-log(sigmoid(x))`, without overflow.
fn neg_log_sigmoid(x: f64) -> f64 {
    if x > 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `sum_i w_i * CE_i / sum_i |w_i|` and its gradient. Zero total weight
/// gives a zero loss and gradient.
pub fn cross_entropy(mlp: &Mlp, batch: &[&Example], grad: Option<&mut [f64]>) -> f64 {
    let norm: f64 = batch.iter().map(|e| e.weight.abs()).sum();
    if norm == 0.0 {
        return 0.0;
    }
    let mut grad = grad;
    let mut loss = 0.0;
    for ex in batch {
        if ex.weight == 0.0 {
            continue;
        }
        let (h, z) = mlp.forward_raw(&ex.features);
        let lp = log_softmax(&z);
        let y = ex.action.index();
        let w = ex.weight / norm;
        loss -= w * lp[y];
        if let Some(g) = grad.as_deref_mut() {
            let mut dz = [0.0; N_ACTIONS];
            for (o, d) in dz.iter_mut().enumerate() {
                *d = w * (lp[o].exp() - f64::from(u8::from(o == y)));
            }
            mlp.backward(&ex.features, &h, &dz, g);
        }
    }
    loss
}

/// Per-pair loss `-log sigmoid(beta * margin)` with
/// `margin = (log pi(c) - log ref(c)) - (log pi(r) - log ref(r))`.
pub fn dpo_pair_loss(policy: &Mlp, reference: &Mlp, pair: &PreferencePair, beta: f64) -> f64 {
    let lp = log_softmax(&policy.forward_raw(&pair.context).1);
    let lr = log_softmax(&reference.forward_raw(&pair.context).1);
    let (c, r) = (pair.chosen.index(), pair.rejected.index());
    neg_log_sigmoid(beta * ((lp[c] - lr[c]) - (lp[r] - lr[r])))
}

/// Mean DPO loss over `pairs` plus `lambda` times the weighted
/// cross-entropy on `retained`, with gradient accumulated into `grad`.
pub fn dpo_objective(
    policy: &Mlp,
    reference: &Mlp,
    pairs: &[&PreferencePair],
    retained: &[&Example],
    beta: f64,
    lambda: f64,
    grad: Option<&mut [f64]>,
) -> f64 {
    let mut grad = grad;
    let mut loss = 0.0;
    let n = pairs.len() as f64;
    for pair in pairs {
        let (h, z) = policy.forward_raw(&pair.context);
        let lp = log_softmax(&z);
        let lr = log_softmax(&reference.forward_raw(&pair.context).1);
        let (c, r) = (pair.chosen.index(), pair.rejected.index());
        let margin = (lp[c] - lr[c]) - (lp[r] - lr[r]);
        loss += neg_log_sigmoid(beta * margin) / n;
        if let Some(g) = grad.as_deref_mut() {
            // d/dz of the margin is e_c - e_r; the softmax terms cancel
            let coeff = -beta * sigmoid(-beta * margin) / n;
            let mut dz = [0.0; N_ACTIONS];
            dz[c] += coeff;
            dz[r] -= coeff;
            policy.backward(&pair.context, &h, &dz, g);
        }
    }
    if lambda != 0.0 && !retained.is_empty() {
        let mut ce_grad = grad.as_ref().map(|g| vec![0.0; g.len()]);
        loss += lambda * cross_entropy(policy, retained, ce_grad.as_deref_mut());
        if let (Some(g), Some(cg)) = (grad, ce_grad) {
            g.iter_mut().zip(cg).for_each(|(a, b)| *a += lambda * b);
        }
    }
    loss
}

/// Largest relative deviation between analytic and central-difference
/// gradients over every parameter. `floor` bounds the denominator away
/// from zero for parameters whose gradient vanishes.
pub fn gradcheck<F>(theta: &[f64], loss_and_grad: F, step: f64, floor: f64) -> f64
where
    F: Fn(&[f64], Option<&mut [f64]>) -> f64,
{
    let mut analytic = vec![0.0; theta.len()];
    loss_and_grad(theta, Some(&mut analytic));
    let mut probe = theta.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..theta.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let up = loss_and_grad(&probe, None);
        probe[i] = orig - step;
        let down = loss_and_grad(&probe, None);
        probe[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let denom = analytic[i].abs().max(numeric.abs()).max(floor);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}

pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Optimizer {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(kind: OptimizerKind, lr: f64, n: usize) -> Self {
        Optimizer {
            kind,
            lr,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        match self.kind {
            OptimizerKind::Sgd => theta
                .iter_mut()
                .zip(grad)
                .for_each(|(p, g)| *p -= self.lr * g),
            OptimizerKind::Adam => {
                self.t += 1;
                let c1 = 1.0 - Self::B1.powi(self.t);
                let c2 = 1.0 - Self::B2.powi(self.t);
                for i in 0..theta.len() {
                    self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
                    self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
                    let mh = self.m[i] / c1;
                    let vh = self.v[i] / c2;
                    theta[i] -= self.lr * mh / (vh.sqrt() + Self::EPS);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupervisedParams {
    pub lr: f64,
    pub steps: usize,
    /// Mini-batch size; 0 means full batch.
    pub batch: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Record the full-data loss every this many steps (0 disables).
    pub log_every: usize,
}

impl Default for SupervisedParams {
    fn default() -> Self {
        SupervisedParams {
            lr: 0.01,
            steps: 3000,
            batch: 256,
            optimizer: OptimizerKind::Adam,
            seed: 1,
            log_every: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub final_accuracy: f64,
    pub steps: Vec<StepMetrics>,
}

/// Argmax accuracy over positively weighted examples.
pub fn accuracy(mlp: &Mlp, data: &[Example]) -> f64 {
    let scored: Vec<&Example> = data.iter().filter(|e| e.weight > 0.0).collect();
    if scored.is_empty() {
        return 0.0;
    }
    let hits = scored
        .iter()
        .filter(|e| super::argmax(&softmax(&mlp.forward_raw(&e.features).1)) == e.action)
        .count();
    hits as f64 / scored.len() as f64
}

fn check_features(model: &PolicyModel, data: &[Example]) -> Result<(), PolicyError> {
    match data.iter().find(|e| e.features.len() != model.input_dim()) {
        Some(e) => Err(PolicyError::DimMismatch {
            expected: model.input_dim(),
            got: e.features.len(),
        }),
        None => Ok(()),
    }
}

pub fn train_supervised(
    model: &PolicyModel,
    data: &[Example],
    hp: &SupervisedParams,
) -> Result<(PolicyModel, TrainLog), TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if !(hp.lr > 0.0) {
        return Err(TrainError::BadLearningRate(hp.lr));
    }
    check_features(model, data)?;
    model.check_finite()?;

    let all: Vec<&Example> = data.iter().collect();
    let full_loss = |m: &Mlp| cross_entropy(m, &all, None);
    let mut current = model.clone();
    let mut log = TrainLog {
        initial_loss: full_loss(&current.mlp),
        ..Default::default()
    };
    let mut opt = Optimizer::new(hp.optimizer, hp.lr, current.mlp.theta.len());
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let batch = if hp.batch == 0 {
        data.len()
    } else {
        hp.batch.min(data.len())
    };
    let mut cursor = data.len();
    let mut grad = vec![0.0; current.mlp.theta.len()];

    for step in 1..=hp.steps {
        if cursor + batch > data.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let mb: Vec<&Example> = order[cursor..cursor + batch]
            .iter()
            .map(|&i| &data[i])
            .collect();
        cursor += batch;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let loss = cross_entropy(&current.mlp, &mb, Some(&mut grad));
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(TrainError::NonFinite {
                step,
                last_good: Box::new(current),
            });
        }
        let before = current.mlp.theta.clone();
        opt.step(&mut current.mlp.theta, &grad);
        if current.mlp.theta.iter().any(|v| !v.is_finite()) {
            current.mlp.theta = before;
            return Err(TrainError::NonFinite {
                step,
                last_good: Box::new(current),
            });
        }
        if hp.log_every > 0 && (step % hp.log_every == 0 || step == hp.steps) {
            log.steps.push(StepMetrics {
                step,
                loss: full_loss(&current.mlp),
                accuracy: accuracy(&current.mlp, data),
            });
        }
    }
    log.final_loss = full_loss(&current.mlp);
    log.final_accuracy = accuracy(&current.mlp, data);
    Ok((current, log))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpoParams {
    pub beta: f64,
    pub lambda: f64,
    pub lr: f64,
    /// Rescales the gradient to at most this L2 norm before the update.
    pub clip_norm: Option<f64>,
}

impl Default for DpoParams {
    fn default() -> Self {
        DpoParams {
            beta: 0.1,
            lambda: 0.5,
            lr: 1e-6,
            clip_norm: None,
        }
    }
}

/// One plain gradient step on the DPO objective. Returns the updated model
/// and the loss before the step.
pub fn dpo_step(
    model: &PolicyModel,
    reference: &PolicyModel,
    pairs: &[PreferencePair],
    retained: &[Example],
    hp: &DpoParams,
) -> Result<(PolicyModel, f64), TrainError> {
    let mut opt = Optimizer::new(OptimizerKind::Sgd, hp.lr, model.mlp.theta.len());
    let pairs: Vec<&PreferencePair> = pairs.iter().collect();
    let retained: Vec<&Example> = retained.iter().collect();
    dpo_update(model, reference, &pairs, &retained, hp, &mut opt, 0)
}

fn dpo_update(
    model: &PolicyModel,
    reference: &PolicyModel,
    pairs: &[&PreferencePair],
    retained: &[&Example],
    hp: &DpoParams,
    opt: &mut Optimizer,
    step: usize,
) -> Result<(PolicyModel, f64), TrainError> {
    if !(hp.beta > 0.0) {
        return Err(TrainError::BadBeta(hp.beta));
    }
    if !(hp.lr > 0.0) {
        return Err(TrainError::BadLearningRate(hp.lr));
    }
    let mut grad = vec![0.0; model.mlp.theta.len()];
    let loss = dpo_objective(
        &model.mlp,
        &reference.mlp,
        pairs,
        retained,
        hp.beta,
        hp.lambda,
        Some(&mut grad),
    );
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(TrainError::NonFinite {
            step,
            last_good: Box::new(model.clone()),
        });
    }
    if let Some(max) = hp.clip_norm {
        clip_to_norm(&mut grad, max);
    }
    let mut next = model.clone();
    opt.step(&mut next.mlp.theta, &grad);
    Ok((next, loss))
}

pub fn clip_to_norm(grad: &mut [f64], max: f64) {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max && norm > 0.0 {
        let k = max / norm;
        grad.iter_mut().for_each(|g| *g *= k);
    }
}

/// Stateful DPO loop with a frozen reference and seeded batch sampling.
pub struct DpoTrainer {
    pub model: PolicyModel,
    reference: PolicyModel,
    hp: DpoParams,
    opt: Optimizer,
    rng: ChaCha8Rng,
    steps_done: usize,
}

impl DpoTrainer {
    pub fn new(init: &PolicyModel, hp: DpoParams, optimizer: OptimizerKind, seed: u64) -> Self {
        DpoTrainer {
            model: init.clone(),
            reference: init.clone(),
            hp,
            opt: Optimizer::new(optimizer, hp.lr, init.mlp.theta.len()),
            rng: ChaCha8Rng::seed_from_u64(seed),
            steps_done: 0,
        }
    }

    pub fn reference(&self) -> &PolicyModel {
        &self.reference
    }

    /// Samples `batch` pairs (and as many retained examples) without
    /// replacement and applies one update. Returns the batch loss.
    pub fn step(
        &mut self,
        pairs: &[PreferencePair],
        retained: &[Example],
        batch: usize,
    ) -> Result<f64, TrainError> {
        let pick = |n: usize, rng: &mut ChaCha8Rng| -> Vec<usize> {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(rng);
            idx.truncate(batch.min(n));
            idx
        };
        let pb: Vec<&PreferencePair> = pick(pairs.len(), &mut self.rng)
            .into_iter()
            .map(|i| &pairs[i])
            .collect();
        let rb: Vec<&Example> = pick(retained.len(), &mut self.rng)
            .into_iter()
            .map(|i| &retained[i])
            .collect();
        self.steps_done += 1;
        let (next, loss) = dpo_update(
            &self.model,
            &self.reference,
            &pb,
            &rb,
            &self.hp,
            &mut self.opt,
            self.steps_done,
        )?;
        self.model = next;
        Ok(loss)
    }

    pub fn steps_done(&self) -> usize {
        self.steps_done
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interleave::StrategyKind;
    use crate::policy::FeatureSpec;
    use rand::Rng;

    fn spec(history: usize) -> FeatureSpec {
        FeatureSpec {
            history,
            use_echo: true,
        }
    }

    fn random_examples(rng: &mut ChaCha8Rng, dim: usize, n: usize) -> Vec<Example> {
        (0..n)
            .map(|_| Example {
                features: (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                action: Action::from_index(rng.gen_range(0..N_ACTIONS)),
                weight: rng.gen_range(-0.5..1.5),
            })
            .collect()
    }

    fn random_pair(rng: &mut ChaCha8Rng, dim: usize) -> PreferencePair {
        let c = rng.gen_range(0..N_ACTIONS);
        let r = (c + rng.gen_range(1..N_ACTIONS)) % N_ACTIONS;
        PreferencePair {
            context: (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            chosen: Action::from_index(c),
            rejected: Action::from_index(r),
        }
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn identical_policies_give_log2() {
        let m = PolicyModel::new(StrategyKind::Explicit, spec(1), 5, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pair = random_pair(&mut rng, m.input_dim());
        let l = dpo_pair_loss(&m.mlp, &m.mlp, &pair, 0.1);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((l - 0.6931).abs() < 1e-4);
    }

    #[test]
    fn confident_policy_drives_loss_to_zero() {
        // reference uniform (zero weights), policy with a huge chosen logit
        let dim = spec(0).input_dim();
        let reference = Mlp::zeros(dim, 2);
        let mut policy = Mlp::zeros(dim, 2);
        let b2 = policy.theta.len() - N_ACTIONS;
        policy.theta[b2] = 200.0;
        policy.theta[b2 + 1] = -200.0;
        let pair = PreferencePair {
            context: vec![0.0; dim],
            chosen: Action::Think,
            rejected: Action::Shift,
        };
        assert!(dpo_pair_loss(&policy, &reference, &pair, 1.0) < 1e-100);
    }

    #[test]
    fn tiny_beta_approaches_log2() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = PolicyModel::new(StrategyKind::Explicit, spec(1), 4, 1);
        let b = PolicyModel::new(StrategyKind::Explicit, spec(1), 4, 2);
        for _ in 0..10 {
            let pair = random_pair(&mut rng, a.input_dim());
            let l = dpo_pair_loss(&a.mlp, &b.mlp, &pair, 1e-8);
            assert!((l - std::f64::consts::LN_2).abs() < 1e-6);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..10 {
            let hidden = 1 + trial % 4;
            let m = PolicyModel::new(StrategyKind::Explicit, spec(0), hidden, trial as u64);
            let r = PolicyModel::new(StrategyKind::Explicit, spec(0), hidden, 100 + trial as u64);
            let data = random_examples(&mut rng, m.input_dim(), 6);
            let pairs: Vec<_> = (0..4)
                .map(|_| random_pair(&mut rng, m.input_dim()))
                .collect();
            let (input, hidden) = (m.mlp.input, m.mlp.hidden);
            let refs: Vec<&Example> = data.iter().collect();
            let prefs: Vec<&PreferencePair> = pairs.iter().collect();
            let ce = |t: &[f64], g: Option<&mut [f64]>| {
                let mlp = Mlp {
                    input,
                    hidden,
                    theta: t.to_vec(),
                };
                cross_entropy(&mlp, &refs, g)
            };
            assert!(gradcheck(&m.mlp.theta, ce, GRADCHECK_STEP, GRADCHECK_FLOOR) < 1e-4);
            let dpo = |t: &[f64], g: Option<&mut [f64]>| {
                let mlp = Mlp {
                    input,
                    hidden,
                    theta: t.to_vec(),
                };
                dpo_objective(&mlp, &r.mlp, &prefs, &refs, 0.7, 0.5, g)
            };
            assert!(gradcheck(&m.mlp.theta, dpo, GRADCHECK_STEP, GRADCHECK_FLOOR) < 1e-4);
        }
    }

    #[test]
    fn single_hidden_unit_gradcheck_is_finite() {
        let m = PolicyModel::new(StrategyKind::Explicit, spec(0), 1, 0);
        let ex = [Example {
            features: vec![0.5; m.input_dim()],
            action: Action::Shift,
            weight: 1.0,
        }];
        let refs: Vec<&Example> = ex.iter().collect();
        let (input, hidden) = (m.mlp.input, m.mlp.hidden);
        let err = gradcheck(
            &m.mlp.theta,
            |t, g| {
                cross_entropy(
                    &Mlp {
                        input,
                        hidden,
                        theta: t.to_vec(),
                    },
                    &refs,
                    g,
                )
            },
            GRADCHECK_STEP,
            GRADCHECK_FLOOR,
        );
        assert!(err.is_finite());
    }

    #[test]
    fn separable_toy_set_is_learned() {
        // relevance (feature 0) above 0.5 means Shift, otherwise Think
        let fs = spec(0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<Example> = (0..400)
            .map(|_| {
                let mut x: Vec<f64> = (0..fs.input_dim())
                    .map(|_| rng.gen_range(0.0..1.0))
                    .collect();
                let rel: f64 = loop {
                    let r = rng.gen_range(0.0..1.0);
                    if (r - 0.5f64).abs() > 0.05 {
                        break r;
                    }
                };
                x[0] = rel;
                Example {
                    features: x,
                    action: if rel > 0.5 {
                        Action::Shift
                    } else {
                        Action::Think
                    },
                    weight: 1.0,
                }
            })
            .collect();
        let m = PolicyModel::new(StrategyKind::Explicit, fs, 8, 7);
        let hp = SupervisedParams {
            lr: 0.05,
            steps: 500,
            batch: 64,
            log_every: 0,
            ..Default::default()
        };
        let (_, log) = train_supervised(&m, &data, &hp).unwrap();
        assert!(
            log.final_accuracy >= 0.99,
            "accuracy {}",
            log.final_accuracy
        );
        assert!(log.final_loss < log.initial_loss);
    }

    #[test]
    fn empty_dataset_and_bad_lr_rejected() {
        let m = PolicyModel::new(StrategyKind::Explicit, spec(0), 2, 0);
        assert!(matches!(
            train_supervised(&m, &[], &SupervisedParams::default()),
            Err(TrainError::EmptyDataset)
        ));
        let ex = vec![Example {
            features: vec![0.0; m.input_dim()],
            action: Action::Think,
            weight: 1.0,
        }];
        let hp = SupervisedParams {
            lr: 0.0,
            ..Default::default()
        };
        assert!(matches!(
            train_supervised(&m, &ex, &hp),
            Err(TrainError::BadLearningRate(_))
        ));
    }

    #[test]
    fn repeated_single_example_loss_never_rises() {
        let m = PolicyModel::new(StrategyKind::Explicit, spec(0), 4, 5);
        let ex = Example {
            features: (0..m.input_dim())
                .map(|i| (i as f64 * 0.37).cos())
                .collect(),
            action: Action::Text,
            weight: 1.0,
        };
        let data = vec![ex; 8];
        let hp = SupervisedParams {
            lr: 0.01,
            steps: 200,
            batch: 0,
            optimizer: OptimizerKind::Sgd,
            seed: 0,
            log_every: 1,
        };
        let (_, log) = train_supervised(&m, &data, &hp).unwrap();
        let mut prev = log.initial_loss;
        for s in &log.steps {
            assert!(
                s.loss <= prev + 1e-15,
                "step {}: {} > {}",
                s.step,
                s.loss,
                prev
            );
            prev = s.loss;
        }
    }

    #[test]
    fn zero_weights_leave_parameters_unchanged() {
        let m = PolicyModel::new(StrategyKind::Explicit, spec(0), 3, 5);
        let data: Vec<Example> = (0..10)
            .map(|i| Example {
                features: vec![i as f64 * 0.1; m.input_dim()],
                action: Action::Shift,
                weight: 0.0,
            })
            .collect();
        for optimizer in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let hp = SupervisedParams {
                steps: 20,
                optimizer,
                log_every: 0,
                ..Default::default()
            };
            let (out, _) = train_supervised(&m, &data, &hp).unwrap();
            assert_eq!(out.mlp.theta, m.mlp.theta);
        }
    }

    #[test]
    fn negative_weights_push_probability_down() {
        let m = PolicyModel::new(StrategyKind::ExplicitNs, spec(0), 4, 1);
        let x = vec![0.2; m.input_dim()];
        let data = vec![Example {
            features: x.clone(),
            action: Action::Shift,
            weight: -0.1,
        }];
        let hp = SupervisedParams {
            lr: 0.01,
            steps: 20,
            batch: 0,
            optimizer: OptimizerKind::Sgd,
            seed: 0,
            log_every: 0,
        };
        let (out, _) = train_supervised(&m, &data, &hp).unwrap();
        assert!(out.forward(&x).unwrap()[1] < m.forward(&x).unwrap()[1]);
    }

    #[test]
    fn empty_dpo_batch_without_retention_is_a_no_op() {
        let m = PolicyModel::new(StrategyKind::Explicit, spec(0), 3, 5);
        let hp = DpoParams {
            beta: 0.1,
            lambda: 0.0,
            lr: 0.1,
            clip_norm: None,
        };
        let (next, loss) = dpo_step(&m, &m, &[], &[], &hp).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(next.mlp.theta, m.mlp.theta);
    }

    #[test]
    fn dpo_step_raises_chosen_margin() {
        let m = PolicyModel::new(StrategyKind::Explicit, spec(0), 4, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pairs: Vec<_> = (0..8)
            .map(|_| random_pair(&mut rng, m.input_dim()))
            .collect();
        let hp = DpoParams {
            beta: 1.0,
            lambda: 0.0,
            lr: 0.5,
            clip_norm: None,
        };
        let (next, before) = dpo_step(&m, &m, &pairs, &[], &hp).unwrap();
        let refs: Vec<&PreferencePair> = pairs.iter().collect();
        let after = dpo_objective(&next.mlp, &m.mlp, &refs, &[], hp.beta, 0.0, None);
        assert!(after < before);
    }

    #[test]
    fn clipping_caps_the_norm_and_keeps_direction() {
        let mut g = vec![3.0, 4.0];
        clip_to_norm(&mut g, 1.0);
        assert!((g[0] - 0.6).abs() < 1e-12 && (g[1] - 0.8).abs() < 1e-12);
        let mut small = vec![0.1, 0.2];
        clip_to_norm(&mut small, 1.0);
        assert_eq!(small, vec![0.1, 0.2]);
    }
}
