//! Scenario scripts, suite generation and environment rendering.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::oracle::{GroundTruth, Probe};
use crate::schema::{sha256_hex, SchemaError, SchemaTag, MANIFEST_SCHEMA, SCENARIO_SCHEMA};
use crate::timebase::{Frame, Speaker, TimingConfig, FRAME_MS};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("suite count must be positive")]
    ZeroCount,
    #[error("unknown suite kind `{0}`")]
    UnknownKind(String),
    #[error("scenario {id}: {reason}")]
    Invalid { id: String, reason: String },
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("scenario json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    UserUtterance,
    ThirdPartyUtterance,
    Backchannel,
    Silence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventLabel {
    TrueBargeIn,
    FalseBargeIn,
    Backchannel,
    TurnEnd,
    None,
}

impl EventLabel {
    /// Labels whose events are judged as interruption attempts.
    pub fn is_probe(self) -> bool {
        matches!(
            self,
            EventLabel::TrueBargeIn | EventLabel::FalseBargeIn | EventLabel::Backchannel
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioEvent {
    pub kind: EventKind,
    pub start_ms: u64,
    pub duration_ms: u64,
    pub relevance: f64,
    pub label: EventLabel,
}

impl ScenarioEvent {
    pub fn end_ms(&self) -> u64 {
        self.start_ms + self.duration_ms
    }

    pub fn speaker(&self) -> Speaker {
        match self.kind {
            EventKind::UserUtterance | EventKind::Backchannel => Speaker::User,
            EventKind::ThirdPartyUtterance => Speaker::ThirdParty,
            EventKind::Silence => Speaker::None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuiteKind {
    TurnTaking,
    BargeInIndependent,
    BargeInDependent,
    Backchannel,
    Mixed,
}

impl SuiteKind {
    pub const ALL: [SuiteKind; 5] = [
        SuiteKind::TurnTaking,
        SuiteKind::BargeInIndependent,
        SuiteKind::BargeInDependent,
        SuiteKind::Backchannel,
        SuiteKind::Mixed,
    ];
    const CONCRETE: [SuiteKind; 4] = [
        SuiteKind::TurnTaking,
        SuiteKind::BargeInIndependent,
        SuiteKind::BargeInDependent,
        SuiteKind::Backchannel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SuiteKind::TurnTaking => "turn-taking",
            SuiteKind::BargeInIndependent => "barge-in-independent",
            SuiteKind::BargeInDependent => "barge-in-dependent",
            SuiteKind::Backchannel => "backchannel",
            SuiteKind::Mixed => "mixed",
        }
    }

    pub fn parse(s: &str) -> Result<SuiteKind, SimError> {
        let norm = s.replace('_', "-");
        Self::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| SimError::UnknownKind(s.to_string()))
    }
}

impl std::fmt::Display for SuiteKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    ToSpeaking,
    ToListening,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedTransition {
    pub block: u64,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub id: String,
    pub seed: u64,
    pub kind: SuiteKind,
    pub events: Vec<ScenarioEvent>,
    pub echo_factor: f64,
    pub expected_transitions: Vec<ExpectedTransition>,
    /// Length of the assistant's reply in text tokens.
    pub response_tokens: u32,
    /// Minimum simulated length before the grace period.
    pub duration_ms: u64,
    /// Allows user and third-party speech to overlap.
    #[serde(default)]
    pub multi_speaker: bool,
}

/// Input for interrupt decision windows.
pub const DEFAULT_WINDOW_BLOCKS: u64 = 6;

impl Scenario {
    pub fn end_ms(&self) -> u64 {
        self.events
            .iter()
            .map(ScenarioEvent::end_ms)
            .max()
            .unwrap_or(0)
            .max(self.duration_ms)
    }

    pub fn n_blocks(&self, cfg: &TimingConfig, grace_ms: u64) -> u64 {
        (self.end_ms() + grace_ms).div_ceil(cfg.block_ms)
    }

    pub fn turn_end(&self) -> Option<&ScenarioEvent> {
        self.events.iter().find(|e| e.label == EventLabel::TurnEnd)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |reason: String| SimError::Invalid {
            id: self.id.clone(),
            reason,
        };
        if !(self.echo_factor >= 0.0 && self.echo_factor.is_finite()) {
            return Err(bad(format!("echo factor {} is negative", self.echo_factor)));
        }
        for (i, e) in self.events.iter().enumerate() {
            if !(0.0..=1.0).contains(&e.relevance) {
                return Err(bad(format!(
                    "event {i} relevance {} outside [0,1]",
                    e.relevance
                )));
            }
            if e.start_ms % FRAME_MS != 0 || e.duration_ms % FRAME_MS != 0 {
                return Err(bad(format!(
                    "event {i} is not aligned to {FRAME_MS} ms frames"
                )));
            }
            if i > 0 && e.start_ms < self.events[i - 1].start_ms {
                return Err(bad(format!("event {i} starts before event {}", i - 1)));
            }
        }
        if !self.multi_speaker {
            let speech: Vec<&ScenarioEvent> = self
                .events
                .iter()
                .filter(|e| e.kind != EventKind::Silence)
                .collect();
            for w in speech.windows(2) {
                if w[1].start_ms < w[0].end_ms() {
                    return Err(bad(format!("overlapping speech at {} ms", w[1].start_ms)));
                }
            }
        }
        Ok(())
    }

    /// Environment frames of `block` from the scripted events alone.
    pub fn env_frames(&self, block: u64, cfg: &TimingConfig) -> Vec<Frame> {
        render_events(&self.events, block, cfg)
    }

    pub fn ground_truth(&self, cfg: &TimingConfig, window_blocks: u64) -> GroundTruth {
        GroundTruth {
            turn_end_block: self.turn_end().map(|e| last_block(e, cfg)),
            probes: self
                .events
                .iter()
                .filter(|e| e.label.is_probe())
                .map(|e| Probe {
                    onset_block: cfg.block_of(e.start_ms),
                    last_block: last_block(e, cfg),
                    positive: e.label == EventLabel::TrueBargeIn,
                })
                .collect(),
            window_blocks,
        }
    }

    pub fn to_json(&self) -> String {
        let file = ScenarioFile {
            tag: SchemaTag::current(SCENARIO_SCHEMA),
            scenario: self.clone(),
        };
        serde_json::to_string_pretty(&file).expect("scenario serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let file: ScenarioFile = serde_json::from_str(text)?;
        file.tag.check(SCENARIO_SCHEMA)?;
        file.scenario.validate()?;
        Ok(file.scenario)
    }
}

fn last_block(e: &ScenarioEvent, cfg: &TimingConfig) -> u64 {
    cfg.block_of(e.end_ms().max(e.start_ms + 1) - 1)
}

#[derive(Serialize, Deserialize)]
struct ScenarioFile {
    #[serde(flatten)]
    tag: SchemaTag,
    scenario: Scenario,
}

/// Renders one block of frames from `events`; where speech overlaps, the
/// most relevant (then earliest) utterance wins.
pub fn render_events(events: &[ScenarioEvent], block: u64, cfg: &TimingConfig) -> Vec<Frame> {
    let n = cfg.frames_per_block() as u64;
    (block * n..(block + 1) * n)
        .map(|t| {
            let ms = t * FRAME_MS;
            let mut best: Option<&ScenarioEvent> = None;
            for e in events {
                if e.kind == EventKind::Silence || ms < e.start_ms || ms >= e.end_ms() {
                    continue;
                }
                if best.is_none_or(|b| e.relevance > b.relevance) {
                    best = Some(e);
                }
            }
            match best {
                Some(e) => Frame::speech(t, e.speaker(), e.relevance),
                None => Frame::silent(t),
            }
        })
        .collect()
}

/// The assistant's playback as heard in the environment: frames shifted by
/// `delay_blocks` with energy scaled by `factor`.
pub fn echo_inject(
    asst: &[Frame],
    factor: f64,
    delay_blocks: u64,
    cfg: &TimingConfig,
) -> Vec<Frame> {
    if factor == 0.0 {
        return Vec::new();
    }
    let shift = delay_blocks * cfg.frames_per_block() as u64;
    asst.iter()
        .filter(|f| f.energy > 0.0)
        .map(|f| {
            let energy = f.energy * factor;
            Frame {
                t_index: f.t_index + shift,
                activity: (f.activity * factor).min(1.0),
                speaker: Speaker::AssistantEcho,
                relevance: 0.0,
                energy,
                echo_energy: energy,
            }
        })
        .collect()
}

/// Adds echo contributions to the matching environment frames. Speech keeps
/// its speaker and energy; silent frames become echo-only frames.
pub fn mix_echo(env: &mut [Frame], echo: &[Frame]) {
    for e in echo {
        let Some(f) = env.iter_mut().find(|f| f.t_index == e.t_index) else {
            continue;
        };
        if f.speaker == Speaker::None {
            *f = *e;
        } else {
            f.echo_energy += e.energy;
        }
    }
}

/// Generates `count` scenarios. Scenario `i` draws from its own stream of
/// the seeded generator, so suites are prefix-stable in `count`.
pub fn generate_suite(kind: SuiteKind, count: usize, seed: u64) -> Result<Vec<Scenario>, SimError> {
    if count == 0 {
        return Err(SimError::ZeroCount);
    }
    Ok((0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let (concrete, sub) = match kind {
                SuiteKind::Mixed => (SuiteKind::CONCRETE[i % 4], i / 4),
                k => (k, i),
            };
            let mut s = generate_one(concrete, sub, &mut rng);
            s.id = format!("{}-{seed}-{i:05}", kind.name());
            s.seed = seed;
            s
        })
        .collect())
}

const BLOCK: u64 = 80;

fn blocks(rng: &mut ChaCha8Rng, lo: u64, hi: u64) -> u64 {
    rng.gen_range(lo..=hi) * BLOCK
}

fn utterance(
    kind: EventKind,
    start_ms: u64,
    duration_ms: u64,
    relevance: f64,
    label: EventLabel,
) -> ScenarioEvent {
    ScenarioEvent {
        kind,
        start_ms,
        duration_ms,
        relevance,
        label,
    }
}

fn generate_one(kind: SuiteKind, sub: usize, rng: &mut ChaCha8Rng) -> Scenario {
    let mut events = Vec::new();
    let mut t = blocks(rng, 3, 10);
    if kind == SuiteKind::TurnTaking && rng.gen_bool(0.25) {
        let d = blocks(rng, 4, 10);
        events.push(utterance(
            EventKind::ThirdPartyUtterance,
            t,
            d,
            rng.gen_range(0.0..=0.3),
            EventLabel::None,
        ));
        t += d + blocks(rng, 2, 5);
    }
    let q = blocks(rng, 10, 30);
    events.push(utterance(
        EventKind::UserUtterance,
        t,
        q,
        rng.gen_range(0.7..=1.0),
        EventLabel::TurnEnd,
    ));
    let q_end = t + q;
    let response_tokens = rng.gen_range(24..=40u32);
    // onset 320 ms after the shift, 3 speech tokens of 40 ms per text token
    let speech_start = q_end + 320;
    let speech_end = speech_start + u64::from(response_tokens) * 120;
    let direct = |rng: &mut ChaCha8Rng, lo: u64, hi: u64| {
        let speaker = if (sub / 2).is_multiple_of(2) {
            EventKind::UserUtterance
        } else {
            EventKind::ThirdPartyUtterance
        };
        (speaker, blocks(rng, lo, hi), rng.gen_range(0.7..=1.0))
    };
    match kind {
        SuiteKind::TurnTaking | SuiteKind::Mixed => {}
        SuiteKind::BargeInIndependent => {
            let onset = speech_start + blocks(rng, 8, 24);
            if sub.is_multiple_of(2) {
                let (k, d, r) = direct(rng, 9, 20);
                events.push(utterance(k, onset, d, r, EventLabel::TrueBargeIn));
            } else {
                let d = blocks(rng, 3, 5);
                let r = rng.gen_range(0.0..=0.3);
                events.push(utterance(
                    EventKind::Backchannel,
                    onset,
                    d,
                    r,
                    EventLabel::Backchannel,
                ));
            }
        }
        SuiteKind::BargeInDependent => {
            let onset = speech_start + blocks(rng, 8, 24);
            match sub % 4 {
                0 | 2 => {
                    let (k, d, r) = direct(rng, 12, 25);
                    events.push(utterance(k, onset, d, r, EventLabel::TrueBargeIn));
                }
                1 => {
                    let d = blocks(rng, 12, 25);
                    let r = rng.gen_range(0.0..=0.3);
                    events.push(utterance(
                        EventKind::ThirdPartyUtterance,
                        onset,
                        d,
                        r,
                        EventLabel::FalseBargeIn,
                    ));
                }
                _ => {
                    let d = blocks(rng, 12, 25);
                    events.push(utterance(
                        EventKind::Silence,
                        onset,
                        d,
                        0.0,
                        EventLabel::FalseBargeIn,
                    ));
                }
            }
        }
        SuiteKind::Backchannel => {
            let mut onset = speech_start + blocks(rng, 8, 16);
            for _ in 0..3 {
                let d = blocks(rng, 3, 5);
                // the whole stop window has to fall before the reply ends
                // on its own, or a natural finish reads as a stop
                if onset + (DEFAULT_WINDOW_BLOCKS + 2) * BLOCK > speech_end {
                    break;
                }
                let r = rng.gen_range(0.0..=0.3);
                events.push(utterance(
                    EventKind::Backchannel,
                    onset,
                    d,
                    r,
                    EventLabel::Backchannel,
                ));
                onset += d + blocks(rng, 8, 14);
            }
        }
    }
    let mut expected = Vec::new();
    let cfg = TimingConfig::default();
    for e in &events {
        match e.label {
            EventLabel::TurnEnd => expected.push(ExpectedTransition {
                block: last_block(e, &cfg),
                direction: Direction::ToSpeaking,
            }),
            EventLabel::TrueBargeIn => expected.push(ExpectedTransition {
                block: cfg.block_of(e.start_ms),
                direction: Direction::ToListening,
            }),
            _ => {}
        }
    }
    Scenario {
        id: String::new(),
        seed: 0,
        kind,
        events,
        echo_factor: 0.0,
        expected_transitions: expected,
        response_tokens,
        duration_ms: speech_end + BLOCK,
        multi_speaker: false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub seed: u64,
    pub kind: SuiteKind,
    pub labels: Vec<EventLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(flatten)]
    pub tag: SchemaTag,
    pub kind: SuiteKind,
    pub seed: u64,
    pub count: usize,
    pub positives: usize,
    pub negatives: usize,
    pub label_counts: std::collections::BTreeMap<String, usize>,
    pub scenarios: Vec<ManifestEntry>,
    /// Hash of the suite file the manifest describes.
    pub suite_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suite {
    #[serde(flatten)]
    pub tag: SchemaTag,
    pub kind: SuiteKind,
    pub seed: u64,
    pub scenarios: Vec<Scenario>,
}

impl Suite {
    pub fn new(kind: SuiteKind, seed: u64, scenarios: Vec<Scenario>) -> Self {
        Suite {
            tag: SchemaTag::current(SCENARIO_SCHEMA),
            kind,
            seed,
            scenarios,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("suite serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let suite: Suite = serde_json::from_str(text)?;
        suite.tag.check(SCENARIO_SCHEMA)?;
        for s in &suite.scenarios {
            s.validate()?;
        }
        Ok(suite)
    }

    pub fn manifest(&self) -> Manifest {
        let mut label_counts = std::collections::BTreeMap::new();
        let (mut positives, mut negatives) = (0, 0);
        let scenarios = self
            .scenarios
            .iter()
            .map(|s| {
                let labels: Vec<EventLabel> = s.events.iter().map(|e| e.label).collect();
                for l in &labels {
                    let key = serde_json::to_value(l)
                        .expect("label")
                        .as_str()
                        .unwrap_or_default()
                        .to_string();
                    *label_counts.entry(key).or_insert(0) += 1;
                    match l {
                        EventLabel::TrueBargeIn => positives += 1,
                        l if l.is_probe() => negatives += 1,
                        _ => {}
                    }
                }
                ManifestEntry {
                    id: s.id.clone(),
                    seed: s.seed,
                    kind: s.kind,
                    labels,
                }
            })
            .collect();
        Manifest {
            tag: SchemaTag::current(MANIFEST_SCHEMA),
            kind: self.kind,
            seed: self.seed,
            count: self.scenarios.len(),
            positives,
            negatives,
            label_counts,
            scenarios,
            suite_hash: sha256_hex(self.to_json().as_bytes()),
        }
    }
}

impl Manifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let m: Manifest = serde_json::from_str(text)?;
        m.tag.check(MANIFEST_SCHEMA)?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn count(suite: &[Scenario], pred: impl Fn(&ScenarioEvent) -> bool) -> usize {
        suite
            .iter()
            .flat_map(|s| &s.events)
            .filter(|e| pred(e))
            .count()
    }

    #[test]
    fn independent_split() {
        let s = generate_suite(SuiteKind::BargeInIndependent, 200, 3).unwrap();
        assert_eq!(count(&s, |e| e.label == EventLabel::TrueBargeIn), 100);
        assert_eq!(count(&s, |e| e.label == EventLabel::Backchannel), 100);
        let user = count(&s, |e| {
            e.label == EventLabel::TrueBargeIn && e.kind == EventKind::UserUtterance
        });
        assert_eq!(user, 50);
    }

    #[test]
    fn dependent_joint_distribution() {
        let s = generate_suite(SuiteKind::BargeInDependent, 200, 7).unwrap();
        let pos = count(&s, |e| e.label == EventLabel::TrueBargeIn);
        assert_eq!(pos, 100);
        assert_eq!(
            count(&s, |e| e.label == EventLabel::TrueBargeIn
                && e.relevance >= 0.7),
            100
        );
        assert_eq!(
            count(&s, |e| e.label == EventLabel::FalseBargeIn
                && e.kind == EventKind::ThirdPartyUtterance
                && e.relevance <= 0.3),
            50
        );
        assert_eq!(
            count(&s, |e| e.label == EventLabel::FalseBargeIn
                && e.kind == EventKind::Silence),
            50
        );
        assert_eq!(
            count(&s, |e| e.label == EventLabel::TrueBargeIn
                && e.kind == EventKind::ThirdPartyUtterance),
            50
        );
    }

    #[test]
    fn single_turn_taking_scenario() {
        let s = generate_suite(SuiteKind::TurnTaking, 1, 1).unwrap();
        assert_eq!(s.len(), 1);
        let tt = &s[0];
        assert_eq!(
            tt.events
                .iter()
                .filter(|e| e.label == EventLabel::TurnEnd)
                .count(),
            1
        );
        assert_eq!(tt.expected_transitions.len(), 1);
        let q = tt.turn_end().unwrap();
        assert_eq!(tt.expected_transitions[0].direction, Direction::ToSpeaking);
        assert_eq!((tt.expected_transitions[0].block + 1) * 80, q.end_ms());
    }

    #[test]
    fn zero_count_and_unknown_kind_rejected() {
        assert!(matches!(
            generate_suite(SuiteKind::Mixed, 0, 1),
            Err(SimError::ZeroCount)
        ));
        assert!(matches!(
            SuiteKind::parse("nope"),
            Err(SimError::UnknownKind(_))
        ));
        assert_eq!(
            SuiteKind::parse("barge_in_dependent").unwrap(),
            SuiteKind::BargeInDependent
        );
    }

    #[test]
    fn generation_is_deterministic_and_valid() {
        for kind in SuiteKind::ALL {
            let a = generate_suite(kind, 40, 11).unwrap();
            assert_eq!(a, generate_suite(kind, 40, 11).unwrap());
            for s in &a {
                s.validate().unwrap();
                assert_eq!(Scenario::from_json(&s.to_json()).unwrap(), *s);
            }
        }
    }

    #[test]
    fn echo_factors() {
        let cfg = TimingConfig::default();
        let asst: Vec<Frame> = (0..8)
            .map(|t| Frame::speech(t, Speaker::Assistant, 0.0))
            .collect();
        assert!(echo_inject(&asst, 0.0, 1, &cfg).is_empty());
        let one = echo_inject(&asst, 1.0, 1, &cfg);
        for (a, e) in asst.iter().zip(&one) {
            assert_eq!(e.t_index, a.t_index + 8);
            assert_eq!(e.energy, a.energy);
            assert_eq!(e.speaker, Speaker::AssistantEcho);
        }
        let tenth = echo_inject(&asst, 0.1, 1, &cfg);
        for (a, e) in asst.iter().zip(&tenth) {
            assert_eq!(e.energy, a.energy * 0.1);
        }
    }

    #[test]
    fn overlapping_relevance_wins() {
        let cfg = TimingConfig::default();
        let events = [
            utterance(EventKind::ThirdPartyUtterance, 0, 80, 0.2, EventLabel::None),
            utterance(EventKind::UserUtterance, 40, 80, 0.9, EventLabel::None),
        ];
        let f = render_events(&events, 0, &cfg);
        assert_eq!(f[0].speaker, Speaker::ThirdParty);
        assert_eq!(f[4].speaker, Speaker::User);
        let s = Scenario {
            id: "x".into(),
            seed: 0,
            kind: SuiteKind::Mixed,
            events: events.to_vec(),
            echo_factor: 0.0,
            expected_transitions: vec![],
            response_tokens: 4,
            duration_ms: 0,
            multi_speaker: false,
        };
        assert!(s.validate().is_err());
        assert!(Scenario {
            multi_speaker: true,
            ..s
        }
        .validate()
        .is_ok());
    }
}
