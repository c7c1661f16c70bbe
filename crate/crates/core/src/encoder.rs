//! Causal feature pipeline standing in for the streaming speech encoder.
//!
//! Frames arrive at 100 Hz. A stride-2 two-tap average brings them to 50 Hz,
//! and adjacent 50 Hz vectors are concatenated to give the 25 Hz embeddings
//! that enter the interleaved sequence: two per stream per 80 ms block.
//!
//! Per-frame projection layout (`FRAME_DIM` = 8):
//!
//! | slot | meaning                                   |
//! |------|-------------------------------------------|
//! | 0    | speech activity (echo excluded)           |
//! | 1    | speech energy (echo excluded)             |
//! | 2    | user indicator                            |
//! | 3    | third-party indicator                     |
//! | 4    | echo energy                               |
//! | 5    | relevance                                 |
//! | 6    | short EMA of speech activity              |
//! | 7    | medium EMA of speech activity             |

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timebase::{Frame, Speaker, FRAME_MS};

pub const FRAME_DIM: usize = 8;

pub mod slot {
    pub const ACTIVITY: usize = 0;
    pub const ENERGY: usize = 1;
    pub const USER: usize = 2;
    pub const THIRD: usize = 3;
    pub const ECHO: usize = 4;
    pub const RELEVANCE: usize = 5;
    pub const EMA_SHORT: usize = 6;
    pub const EMA_MEDIUM: usize = 7;
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EncoderError {
    #[error("pairwise concatenation needs an even number of vectors, got {0}")]
    OddLength(usize),
    #[error("sequence length mismatch: student {student}, teacher {teacher}")]
    LengthMismatch { student: usize, teacher: usize },
    #[error("dimension mismatch at position {index}: student {student}, teacher {teacher}")]
    DimMismatch {
        index: usize,
        student: usize,
        teacher: usize,
    },
    #[error("alignment map expects input dimension {expected}, got {got}")]
    AlignDim { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn zeros(dim: usize) -> Self {
        FeatureVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    /// Weights of the (previous, current) frame in the stride-2 reduction.
    pub tap_weights: [f64; 2],
    pub ema_short_ms: f64,
    pub ema_medium_ms: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            tap_weights: [0.5, 0.5],
            ema_short_ms: 160.0,
            ema_medium_ms: 640.0,
        }
    }
}

/// Per-frame smoothing factor for an EMA with the given half-life.
fn ema_alpha(half_life_ms: f64) -> f64 {
    1.0 - 0.5f64.powf(FRAME_MS as f64 / half_life_ms)
}

#[derive(Debug, Clone, Copy, Default)]
struct EmaState {
    short: Option<f64>,
    medium: Option<f64>,
}

impl EmaState {
    fn update(&mut self, x: f64, cfg: &EncoderConfig) -> (f64, f64) {
        let step = |prev: Option<f64>, alpha: f64| match prev {
            None => x,
            Some(p) => p + alpha * (x - p),
        };
        let s = step(self.short, ema_alpha(cfg.ema_short_ms));
        let m = step(self.medium, ema_alpha(cfg.ema_medium_ms));
        self.short = Some(s);
        self.medium = Some(m);
        (s, m)
    }
}

/// Instantaneous (non-EMA) part of a frame's projection.
fn instant_features(frame: &Frame) -> [f64; FRAME_DIM] {
    let mut v = [0.0; FRAME_DIM];
    let is_speech = matches!(
        frame.speaker,
        Speaker::User | Speaker::ThirdParty | Speaker::Assistant
    );
    if is_speech {
        v[slot::ACTIVITY] = frame.activity;
        v[slot::ENERGY] = frame.energy;
        v[slot::RELEVANCE] = frame.relevance;
    }
    match frame.speaker {
        Speaker::User => v[slot::USER] = frame.activity,
        Speaker::ThirdParty => v[slot::THIRD] = frame.activity,
        _ => {}
    }
    v[slot::ECHO] = frame.echo_energy;
    v
}

fn project(frame: &Frame, ema: &mut EmaState, cfg: &EncoderConfig) -> [f64; FRAME_DIM] {
    let mut v = instant_features(frame);
    let (s, m) = ema.update(v[slot::ACTIVITY], cfg);
    v[slot::EMA_SHORT] = s;
    v[slot::EMA_MEDIUM] = m;
    v
}

fn combine(a: &[f64; FRAME_DIM], b: &[f64; FRAME_DIM], w: [f64; 2]) -> FeatureVector {
    FeatureVector(a.iter().zip(b).map(|(x, y)| w[0] * x + w[1] * y).collect())
}

/// Result of the 100 Hz to 50 Hz reduction.
#[derive(Debug, Clone, PartialEq)]
pub struct Downsampled {
    pub vectors: Vec<FeatureVector>,
    /// Set when an odd-length input was padded by repeating its last frame.
    pub padded: bool,
}

/// Projects every frame and reduces pairs with the causal two-tap filter.
pub fn downsample_100_to_50(frames: &[Frame], cfg: &EncoderConfig) -> Downsampled {
    let mut ema = EmaState::default();
    let projected: Vec<[f64; FRAME_DIM]> =
        frames.iter().map(|f| project(f, &mut ema, cfg)).collect();
    let padded = projected.len() % 2 == 1;
    let mut vectors = Vec::with_capacity(projected.len().div_ceil(2));
    for pair in projected.chunks(2) {
        let second = pair.get(1).unwrap_or(&pair[0]);
        vectors.push(combine(&pair[0], second, cfg.tap_weights));
    }
    Downsampled { vectors, padded }
}

pub fn concat_pairs_50_to_25(vecs: &[FeatureVector]) -> Result<Vec<FeatureVector>, EncoderError> {
    if !vecs.len().is_multiple_of(2) {
        return Err(EncoderError::OddLength(vecs.len()));
    }
    Ok(vecs
        .chunks(2)
        .map(|p| {
            let mut v = Vec::with_capacity(p[0].dim() + p[1].dim());
            v.extend_from_slice(&p[0].0);
            v.extend_from_slice(&p[1].0);
            FeatureVector(v)
        })
        .collect())
}

/// Full 100 Hz to 25 Hz pipeline over a frame sequence.
pub fn encode_frames(
    frames: &[Frame],
    cfg: &EncoderConfig,
) -> Result<Vec<FeatureVector>, EncoderError> {
    concat_pairs_50_to_25(&downsample_100_to_50(frames, cfg).vectors)
}

/// Row-major linear map applied to teacher features before the L1 match.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearAlign {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
}

impl LinearAlign {
    pub fn identity(dim: usize) -> Self {
        let mut weights = vec![0.0; dim * dim];
        for i in 0..dim {
            weights[i * dim + i] = 1.0;
        }
        LinearAlign {
            rows: dim,
            cols: dim,
            weights,
        }
    }

    pub fn apply(&self, v: &FeatureVector) -> Result<FeatureVector, EncoderError> {
        if v.dim() != self.cols {
            return Err(EncoderError::AlignDim {
                expected: self.cols,
                got: v.dim(),
            });
        }
        Ok(FeatureVector(
            self.weights
                .chunks(self.cols)
                .map(|row| row.iter().zip(&v.0).map(|(w, x)| w * x).sum())
                .collect(),
        ))
    }
}

/// Mean absolute elementwise difference between student features and the
/// (optionally aligned) teacher features. Empty sequences give 0.
pub fn l1_distill_loss(
    student: &[FeatureVector],
    teacher: &[FeatureVector],
    align: Option<&LinearAlign>,
) -> Result<f64, EncoderError> {
    if student.len() != teacher.len() {
        return Err(EncoderError::LengthMismatch {
            student: student.len(),
            teacher: teacher.len(),
        });
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (index, (s, t)) in student.iter().zip(teacher).enumerate() {
        let aligned;
        let t = match align {
            Some(map) => {
                aligned = map.apply(t)?;
                &aligned
            }
            None => t,
        };
        if s.dim() != t.dim() {
            return Err(EncoderError::DimMismatch {
                index,
                student: s.dim(),
                teacher: t.dim(),
            });
        }
        total +=
            s.0.iter()
                .zip(&t.0)
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>();
        count += s.dim();
    }
    Ok(if count == 0 {
        0.0
    } else {
        total / count as f64
    })
}

/// Streaming counterpart of [`encode_frames`] for one stream. Feeding a
/// sequence in arbitrary chunks yields the same embeddings as the batch path.
#[derive(Debug, Clone)]
pub struct StreamEncoder {
    cfg: EncoderConfig,
    ema: EmaState,
    pending_frame: Option<[f64; FRAME_DIM]>,
    pending_vector: Option<FeatureVector>,
}

impl StreamEncoder {
    pub fn new(cfg: EncoderConfig) -> Self {
        StreamEncoder {
            cfg,
            ema: EmaState::default(),
            pending_frame: None,
            pending_vector: None,
        }
    }

    pub fn push(&mut self, frames: &[Frame]) -> Vec<FeatureVector> {
        let mut out = Vec::new();
        for f in frames {
            let p = project(f, &mut self.ema, &self.cfg);
            let Some(prev) = self.pending_frame.take() else {
                self.pending_frame = Some(p);
                continue;
            };
            let v = combine(&prev, &p, self.cfg.tap_weights);
            match self.pending_vector.take() {
                None => self.pending_vector = Some(v),
                Some(first) => {
                    let mut joined = first.0;
                    joined.extend_from_slice(&v.0);
                    out.push(FeatureVector(joined));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn speech_frames(n: usize) -> Vec<Frame> {
        (0..n as u64)
            .map(|t| {
                if (t / 13) % 2 == 0 {
                    Frame::speech(t, Speaker::User, 0.8)
                } else {
                    Frame::silent(t)
                }
            })
            .collect()
    }

    #[test]
    fn one_second_of_frames_gives_50_then_25() {
        let frames = speech_frames(100);
        let half = downsample_100_to_50(&frames, &EncoderConfig::default());
        assert_eq!(half.vectors.len(), 50);
        assert!(!half.padded);
        let quarter = concat_pairs_50_to_25(&half.vectors).unwrap();
        assert_eq!(quarter.len(), 25);
        assert!(quarter.iter().all(|v| v.dim() == 2 * FRAME_DIM));
    }

    #[test]
    fn one_block_gives_four_then_two() {
        let frames = speech_frames(8);
        let half = downsample_100_to_50(&frames, &EncoderConfig::default());
        assert_eq!(half.vectors.len(), 4);
        assert_eq!(concat_pairs_50_to_25(&half.vectors).unwrap().len(), 2);
    }

    #[test]
    fn identical_frames_give_their_projection() {
        let f = Frame::speech(0, Speaker::ThirdParty, 0.25);
        let g = Frame { t_index: 1, ..f };
        let out = downsample_100_to_50(&[f, g], &EncoderConfig::default());
        assert_eq!(out.vectors.len(), 1);
        let expected = vec![1.0, 1.0, 0.0, 1.0, 0.0, 0.25, 1.0, 1.0];
        assert_eq!(out.vectors[0].0, expected);
    }

    #[test]
    fn odd_input_is_padded_and_flagged() {
        let out = downsample_100_to_50(&speech_frames(5), &EncoderConfig::default());
        assert_eq!(out.vectors.len(), 3);
        assert!(out.padded);
        assert!(downsample_100_to_50(&[], &EncoderConfig::default())
            .vectors
            .is_empty());
    }

    #[test]
    fn concat_rejects_odd_and_zero_pairs_stay_zero() {
        let z = FeatureVector::zeros(3);
        assert_eq!(
            concat_pairs_50_to_25(std::slice::from_ref(&z)),
            Err(EncoderError::OddLength(1))
        );
        let out = concat_pairs_50_to_25(&[z.clone(), z]).unwrap();
        assert_eq!(out, vec![FeatureVector::zeros(6)]);
    }

    #[test]
    fn l1_examples() {
        let a = vec![
            FeatureVector(vec![0.5, -1.0]),
            FeatureVector(vec![2.0, 0.0]),
        ];
        assert_eq!(l1_distill_loss(&a, &a, None).unwrap(), 0.0);
        let shifted: Vec<_> = a
            .iter()
            .map(|v| FeatureVector(v.0.iter().map(|x| x + 1.0).collect()))
            .collect();
        assert!((l1_distill_loss(&shifted, &a, None).unwrap() - 1.0).abs() < 1e-12);
        // hand-computed: |0.3-0.1| + |-0.2-0.4| + |1.0-1.5| + |0.0-(-0.5)| + |0.7-0.7| + |-1.1-0.9|
        //   = 0.2 + 0.6 + 0.5 + 0.5 + 0.0 + 2.0 = 3.8, mean over 6 = 0.6333...
        let s = vec![
            FeatureVector(vec![0.3, -0.2]),
            FeatureVector(vec![1.0, 0.0]),
            FeatureVector(vec![0.7, -1.1]),
        ];
        let t = vec![
            FeatureVector(vec![0.1, 0.4]),
            FeatureVector(vec![1.5, -0.5]),
            FeatureVector(vec![0.7, 0.9]),
        ];
        assert!((l1_distill_loss(&s, &t, None).unwrap() - 3.8 / 6.0).abs() < 1e-12);
        let id = LinearAlign::identity(2);
        assert_eq!(
            l1_distill_loss(&s, &t, Some(&id)).unwrap(),
            l1_distill_loss(&s, &t, None).unwrap()
        );
    }

    #[test]
    fn l1_shape_errors() {
        let a = vec![FeatureVector(vec![0.0, 1.0])];
        let b = vec![FeatureVector(vec![0.0])];
        assert!(matches!(
            l1_distill_loss(&a, &b, None),
            Err(EncoderError::DimMismatch { index: 0, .. })
        ));
        assert!(matches!(
            l1_distill_loss(&a, &[], None),
            Err(EncoderError::LengthMismatch { .. })
        ));
        let map = LinearAlign::identity(3);
        assert!(matches!(
            l1_distill_loss(&a, &a, Some(&map)),
            Err(EncoderError::AlignDim { .. })
        ));
    }

    #[test]
    fn alignment_map_projects_teacher() {
        let map = LinearAlign {
            rows: 1,
            cols: 2,
            weights: vec![1.0, 1.0],
        };
        let s = vec![FeatureVector(vec![3.0])];
        let t = vec![FeatureVector(vec![1.0, 2.0])];
        assert_eq!(l1_distill_loss(&s, &t, Some(&map)).unwrap(), 0.0);
    }

    #[test]
    fn streaming_matches_batch_for_any_chunking() {
        let frames = speech_frames(96);
        let cfg = EncoderConfig::default();
        let batch = encode_frames(&frames, &cfg).unwrap();
        for chunk in [1, 3, 8, 11] {
            let mut enc = StreamEncoder::new(cfg);
            let streamed: Vec<_> = frames.chunks(chunk).flat_map(|c| enc.push(c)).collect();
            assert_eq!(streamed, batch, "chunk size {chunk}");
        }
    }

    #[test]
    fn echo_only_touches_echo_slot() {
        let clean = Frame::speech(0, Speaker::User, 0.9);
        let echoed = Frame {
            echo_energy: 0.7,
            ..clean
        };
        let a = instant_features(&clean);
        let b = instant_features(&echoed);
        for i in 0..FRAME_DIM {
            if i != slot::ECHO {
                assert_eq!(a[i], b[i], "slot {i}");
            }
        }
        assert_eq!(b[slot::ECHO], 0.7);
    }
}
