//! The per-block decision core.
//!
//! A [`PolicyModel`] is a two-layer scorer that maps the block context to
//! three relative actions: stay in the current state, shift to the other
//! state, or emit the next response text token. The engine renders these as
//! strategy-specific tokens (`<think>`/`<shift>` or `<listen>`/`<speak>`).

pub mod features;
pub mod oracle;
pub mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interleave::StrategyKind;
use crate::schema::{sha256_hex, SchemaError, SchemaTag, MODEL_SCHEMA};
use crate::timebase::DialogueState;

pub use features::{AssistantStatus, BlockFeatures, FeatureSpec, FeatureWindow, BLOCK_DIM};

pub const N_ACTIONS: usize = 3;

/// Relative decision for one block. Ties resolve to the lowest index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    /// Keep the current state (`<think>`, or `<listen>`/`<speak>` when implicit).
    Think = 0,
    /// Switch between listening and speaking.
    Shift = 1,
    /// Emit the next response text token.
    Text = 2,
}

impl Action {
    pub const ALL: [Action; N_ACTIONS] = [Action::Think, Action::Shift, Action::Text];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Action {
        Self::ALL[i]
    }
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("feature dimension {got} does not match model input {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("model parameters contain non-finite values")]
    NonFiniteParams,
    #[error("model file content hash mismatch (stored {stored}, computed {computed})")]
    HashMismatch { stored: String, computed: String },
    #[error("model file is inconsistent: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("model json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Two-layer tanh scorer, parameters stored flat as `[w1, b1, w2, b2]` with
/// row-major weight matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub input: usize,
    pub hidden: usize,
    pub theta: Vec<f64>,
}

impl Mlp {
    pub fn n_params(input: usize, hidden: usize) -> usize {
        hidden * input + hidden + N_ACTIONS * hidden + N_ACTIONS
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        Mlp {
            input,
            hidden,
            theta: vec![0.0; Self::n_params(input, hidden)],
        }
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and zero biases.
    pub fn init(input: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Self::zeros(input, hidden);
        let (w1, rest) = m.theta.split_at_mut(hidden * input);
        let s1 = 1.0 / (input as f64).sqrt();
        w1.iter_mut().for_each(|w| *w = rng.gen_range(-s1..s1));
        let s2 = 1.0 / (hidden as f64).sqrt();
        rest[hidden..hidden + N_ACTIONS * hidden]
            .iter_mut()
            .for_each(|w| *w = rng.gen_range(-s2..s2));
        m
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let b1 = self.hidden * self.input;
        let w2 = b1 + self.hidden;
        let b2 = w2 + N_ACTIONS * self.hidden;
        (b1, w2, b2)
    }

    /// Hidden activations and logits.
    pub fn forward_raw(&self, x: &[f64]) -> (Vec<f64>, [f64; N_ACTIONS]) {
        let (ob1, ow2, ob2) = self.offsets();
        let t = &self.theta;
        let h: Vec<f64> = (0..self.hidden)
            .map(|j| {
                let row = &t[j * self.input..(j + 1) * self.input];
                let a: f64 = row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + t[ob1 + j];
                a.tanh()
            })
            .collect();
        let mut z = [0.0; N_ACTIONS];
        for (o, zo) in z.iter_mut().enumerate() {
            let row = &t[ow2 + o * self.hidden..ow2 + (o + 1) * self.hidden];
            *zo = row.iter().zip(&h).map(|(w, hj)| w * hj).sum::<f64>() + t[ob2 + o];
        }
        (h, z)
    }

    /// Accumulates `scale * d(out)/d(theta)` given `dz = d(out)/d(logits)`.
    pub fn backward(&self, x: &[f64], h: &[f64], dz: &[f64; N_ACTIONS], grad: &mut [f64]) {
        let (ob1, ow2, ob2) = self.offsets();
        let mut dh = vec![0.0; self.hidden];
        for o in 0..N_ACTIONS {
            if dz[o] == 0.0 {
                continue;
            }
            grad[ob2 + o] += dz[o];
            let base = ow2 + o * self.hidden;
            for j in 0..self.hidden {
                grad[base + j] += dz[o] * h[j];
                dh[j] += dz[o] * self.theta[base + j];
            }
        }
        for j in 0..self.hidden {
            let da = dh[j] * (1.0 - h[j] * h[j]);
            if da == 0.0 {
                continue;
            }
            grad[ob1 + j] += da;
            let row = &mut grad[j * self.input..(j + 1) * self.input];
            row.iter_mut().zip(x).for_each(|(g, xi)| *g += da * xi);
        }
    }
}

pub fn log_softmax(z: &[f64; N_ACTIONS]) -> [f64; N_ACTIONS] {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    [z[0] - lse, z[1] - lse, z[2] - lse]
}

pub fn softmax(z: &[f64; N_ACTIONS]) -> [f64; N_ACTIONS] {
    let l = log_softmax(z);
    [l[0].exp(), l[1].exp(), l[2].exp()]
}

pub fn argmax(p: &[f64; N_ACTIONS]) -> Action {
    let mut best = 0;
    for i in 1..N_ACTIONS {
        if p[i] > p[best] {
            best = i;
        }
    }
    Action::from_index(best)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyModel {
    pub version: String,
    pub strategy: StrategyKind,
    pub features: FeatureSpec,
    pub mlp: Mlp,
}

impl PolicyModel {
    pub fn new(strategy: StrategyKind, features: FeatureSpec, hidden: usize, seed: u64) -> Self {
        PolicyModel {
            version: crate::schema::ENGINE_VERSION.to_string(),
            strategy,
            features,
            mlp: Mlp::init(features.input_dim(), hidden, seed),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.mlp.input
    }

    pub fn check_finite(&self) -> Result<(), PolicyError> {
        if self.mlp.theta.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(PolicyError::NonFiniteParams)
        }
    }

    /// Action probabilities, positive and summing to one.
    pub fn forward(&self, x: &[f64]) -> Result<[f64; N_ACTIONS], PolicyError> {
        if x.len() != self.mlp.input {
            return Err(PolicyError::DimMismatch {
                expected: self.mlp.input,
                got: x.len(),
            });
        }
        self.check_finite()?;
        Ok(softmax(&self.mlp.forward_raw(x).1))
    }

    pub fn act(&self, x: &[f64]) -> Result<Action, PolicyError> {
        Ok(argmax(&self.forward(x)?))
    }

    pub fn content_hash(&self) -> String {
        let mut bytes = Vec::with_capacity(16 + 8 * self.mlp.theta.len());
        bytes.extend_from_slice(&(self.mlp.input as u64).to_le_bytes());
        bytes.extend_from_slice(&(self.mlp.hidden as u64).to_le_bytes());
        for v in &self.mlp.theta {
            bytes.extend_from_slice(&v.to_bits().to_le_bytes());
        }
        sha256_hex(&bytes)
    }

    pub fn to_json(&self) -> String {
        let (ob1, ow2, ob2) = self.mlp.offsets();
        let t = &self.mlp.theta;
        let file = ModelFile {
            tag: SchemaTag::current(MODEL_SCHEMA),
            model_version: self.version.clone(),
            strategy: self.strategy,
            features: self.features,
            dims: Dims {
                input: self.mlp.input,
                hidden: self.mlp.hidden,
                output: N_ACTIONS,
            },
            w1: t[..ob1].to_vec(),
            b1: t[ob1..ow2].to_vec(),
            w2: t[ow2..ob2].to_vec(),
            b2: t[ob2..].to_vec(),
            content_hash: self.content_hash(),
        };
        serde_json::to_string_pretty(&file).expect("model serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, PolicyError> {
        let file: ModelFile = serde_json::from_str(text)?;
        file.tag.check(MODEL_SCHEMA)?;
        let Dims {
            input,
            hidden,
            output,
        } = file.dims;
        if output != N_ACTIONS {
            return Err(PolicyError::Inconsistent(format!("{output} outputs")));
        }
        if input != file.features.input_dim() {
            return Err(PolicyError::Inconsistent(format!(
                "input {input} but feature spec needs {}",
                file.features.input_dim()
            )));
        }
        let sizes = [
            (file.w1.len(), hidden * input, "w1"),
            (file.b1.len(), hidden, "b1"),
            (file.w2.len(), N_ACTIONS * hidden, "w2"),
            (file.b2.len(), N_ACTIONS, "b2"),
        ];
        for (got, want, name) in sizes {
            if got != want {
                return Err(PolicyError::Inconsistent(format!(
                    "{name} has {got} values, expected {want}"
                )));
            }
        }
        let theta = [file.w1, file.b1, file.w2, file.b2].concat();
        let model = PolicyModel {
            version: file.model_version,
            strategy: file.strategy,
            features: file.features,
            mlp: Mlp {
                input,
                hidden,
                theta,
            },
        };
        let computed = model.content_hash();
        if computed != file.content_hash {
            return Err(PolicyError::HashMismatch {
                stored: file.content_hash,
                computed,
            });
        }
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Dims {
    input: usize,
    hidden: usize,
    output: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    #[serde(flatten)]
    tag: SchemaTag,
    model_version: String,
    strategy: StrategyKind,
    features: FeatureSpec,
    dims: Dims,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
    content_hash: String,
}

/// What a policy may look at when deciding block `block`.
#[derive(Debug, Clone)]
pub struct DecisionContext<'a> {
    pub block: u64,
    pub dialogue: DialogueState,
    pub features: &'a BlockFeatures,
    pub status: AssistantStatus,
    /// Responses begun so far in this conversation.
    pub responses_started: u32,
    /// Set once the assistant has been cut off mid-response.
    pub interrupted: bool,
    /// Block whose Shift put the assistant into its current speaking turn.
    pub speaking_shift_block: Option<u64>,
}

pub trait DecisionPolicy {
    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Action;
}

/// Argmax inference over a trained model.
pub struct ModelPolicy<'m> {
    pub model: &'m PolicyModel,
}

impl DecisionPolicy for ModelPolicy<'_> {
    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Action {
        // input width is validated when the engine is built
        self.model
            .act(&ctx.features.input)
            .expect("model input matches engine features")
    }
}
