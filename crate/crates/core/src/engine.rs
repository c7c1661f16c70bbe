//! The closed block loop: environment in, one token out, playback advanced.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderConfig, StreamEncoder};
use crate::interleave::StrategyKind;
use crate::policy::features::summarize_block;
use crate::policy::{
    Action, AssistantStatus, DecisionContext, DecisionPolicy, FeatureSpec, FeatureWindow,
};
use crate::schema::{SchemaTag, ENGINE_VERSION, TRANSCRIPT_SCHEMA};
use crate::sim::{echo_inject, mix_echo, Direction, Scenario, ScenarioEvent, SuiteKind};
use crate::synth::{
    advance_block, feed_text_token, flush_on_interrupt, flush_tail, PlaybackState, SpeechChunk,
};
use crate::timebase::{
    DialogueState, Frame, Speaker, State, SymbolId, TimeBlock, TimingConfig, Token, TokenKind,
    FRAME_MS,
};
use crate::transcript::{BlockRecord, PlaybackEvent, Transcript, TranscriptHeader, Violation};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineParams {
    pub timing: TimingConfig,
    pub encoder: EncoderConfig,
    pub strategy: StrategyKind,
    pub features: FeatureSpec,
    pub echo_delay_blocks: u64,
}

impl Default for EngineParams {
    fn default() -> Self {
        EngineParams {
            timing: TimingConfig::default(),
            encoder: EncoderConfig::default(),
            strategy: StrategyKind::default(),
            features: FeatureSpec::default(),
            echo_delay_blocks: 1,
        }
    }
}

/// Everything produced by one block.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub record: BlockRecord,
    pub block: TimeBlock,
}

pub struct Engine {
    params: EngineParams,
    echo_factor: f64,
    block: u64,
    dialogue: DialogueState,
    playback: PlaybackState,
    audible: bool,
    env_encoder: StreamEncoder,
    window: FeatureWindow,
    asst_history: VecDeque<Vec<Frame>>,
    responses_started: u32,
    response_len: u32,
    emitted: u32,
    interrupted: bool,
    speaking_shift_block: Option<u64>,
}

impl Engine {
    pub fn new(params: EngineParams, echo_factor: f64) -> Self {
        Engine {
            params,
            echo_factor,
            block: 0,
            dialogue: DialogueState::default(),
            playback: PlaybackState::default(),
            audible: false,
            env_encoder: StreamEncoder::new(params.encoder),
            window: FeatureWindow::new(params.features),
            asst_history: VecDeque::new(),
            responses_started: 0,
            response_len: 0,
            emitted: 0,
            interrupted: false,
            speaking_shift_block: None,
        }
    }

    pub fn block(&self) -> u64 {
        self.block
    }

    pub fn state(&self) -> State {
        self.dialogue.state
    }

    pub fn buffered_ms(&self) -> u64 {
        self.playback.buffered_ms
    }

    fn text_done(&self) -> bool {
        self.dialogue.state == State::Speaking && self.emitted >= self.response_len
    }

    /// Runs one block. `raw_env` holds the scripted environment frames of
    /// the block; `response_tokens` is the reply length used if the policy
    /// starts a new response in this block.
    pub fn step(
        &mut self,
        raw_env: Vec<Frame>,
        response_tokens: u32,
        policy: &mut dyn DecisionPolicy,
    ) -> StepOutput {
        let cfg = self.params.timing;
        let k = self.block;
        let start = cfg.block_start_ms(k);
        let end = cfg.block_end_ms(k);
        let mut events = Vec::new();

        // playback of speech queued before this block
        let played = self.playback.buffered_ms.min(cfg.block_ms);
        if played > 0 && !self.audible {
            events.push(PlaybackEvent::SpeechStart { t_ms: start });
            self.audible = true;
        }
        if self.audible && played < cfg.block_ms {
            events.push(PlaybackEvent::SpeechEnd {
                t_ms: start + played,
            });
            self.audible = false;
        }
        self.playback = advance_block(self.playback, &cfg);
        let n = cfg.frames_per_block() as u64;
        let asst_frames: Vec<Frame> = (0..n)
            .map(|i| {
                let t = k * n + i;
                if i * FRAME_MS < played {
                    Frame::speech(t, Speaker::Assistant, 0.0)
                } else {
                    Frame::silent(t)
                }
            })
            .collect();

        let mut env = raw_env;
        let delay = self.params.echo_delay_blocks as usize;
        self.asst_history.push_back(asst_frames.clone());
        while self.asst_history.len() > delay + 1 {
            self.asst_history.pop_front();
        }
        if self.asst_history.len() == delay + 1 {
            let echo = echo_inject(&self.asst_history[0], self.echo_factor, delay as u64, &cfg);
            mix_echo(&mut env, &echo);
        }

        let embeddings = self.env_encoder.push(&env);
        let status = AssistantStatus {
            speaking: self.dialogue.state == State::Speaking,
            playing: self.playback.buffered_ms > 0,
            text_done: self.text_done(),
            blocks_since_transition: k.saturating_sub(self.dialogue.since_block),
        };
        let current = summarize_block(&embeddings, &status, &self.params.features);
        let features = self.window.push(current);
        let ctx = DecisionContext {
            block: k,
            dialogue: self.dialogue,
            features: &features,
            status,
            responses_started: self.responses_started,
            interrupted: self.interrupted,
            speaking_shift_block: self.speaking_shift_block,
        };
        let action = policy.decide(&ctx);

        let state = self.dialogue.state;
        let mut violation = None;
        let mut effective = action;
        if action == Action::Text {
            if state == State::Listening {
                violation = Some(Violation::TextWhileListening);
                effective = Action::Think;
            } else if status.text_done {
                violation = Some(Violation::NoTextRemaining);
                effective = Action::Think;
            }
        }

        let strategy = self.params.strategy;
        let mut transition = None;
        let kind = match effective {
            Action::Think => stay_token(strategy, state, &env),
            Action::Shift => {
                match state {
                    State::Listening => {
                        self.responses_started += 1;
                        self.response_len = response_tokens;
                        self.emitted = 0;
                        self.speaking_shift_block = Some(k);
                        transition = Some(Direction::ToSpeaking);
                    }
                    State::Speaking => {
                        if !status.text_done || status.playing {
                            self.interrupted = true;
                        }
                        if !self.playback.is_idle() {
                            events.push(PlaybackEvent::SpeechTruncated {
                                t_ms: end,
                                dropped_ms: self.playback.buffered_ms,
                            });
                        }
                        self.playback = flush_on_interrupt(self.playback);
                        self.audible = false;
                        self.speaking_shift_block = None;
                        transition = Some(Direction::ToListening);
                    }
                }
                self.dialogue.shift(k);
                match (strategy, state) {
                    (StrategyKind::Implicit, State::Listening) => TokenKind::Speak,
                    (StrategyKind::Implicit, State::Speaking) => TokenKind::Listen,
                    _ => TokenKind::Shift,
                }
            }
            Action::Text => {
                let kind = TokenKind::Text(SymbolId::response(self.emitted));
                self.emitted += 1;
                let (next, chunk) =
                    feed_text_token(self.playback, Token::new(kind, k), &cfg).expect("text token");
                self.playback = next;
                events.extend(chunk.map(chunk_event));
                if self.emitted == self.response_len {
                    let (next, tail) = flush_tail(self.playback, k, &cfg);
                    self.playback = next;
                    events.extend(tail.map(chunk_event));
                }
                kind
            }
        };

        let token = Token::new(kind, k);
        let record = BlockRecord {
            block: k,
            t_ms: start,
            state: self.dialogue.state,
            token,
            action,
            transition,
            violation,
            playback: events,
            features: current,
            buffered_ms: self.playback.buffered_ms,
        };
        self.block += 1;
        StepOutput {
            record,
            block: TimeBlock {
                block_index: k,
                env_frames: env,
                asst_frames,
                emitted_token: Some(token),
            },
        }
    }
}

fn chunk_event(c: SpeechChunk) -> PlaybackEvent {
    PlaybackEvent::SpeechChunk {
        t_ms: c.start_ms,
        tokens: c.tokens,
        duration_ms: c.duration_ms,
        first_text_block: *c.source_text_blocks.start(),
        last_text_block: *c.source_text_blocks.end(),
    }
}

/// Token for a block in which the state is kept.
fn stay_token(strategy: StrategyKind, state: State, env: &[Frame]) -> TokenKind {
    match strategy {
        StrategyKind::Explicit | StrategyKind::ExplicitNs => TokenKind::Think,
        StrategyKind::Implicit => match state {
            State::Listening => TokenKind::Listen,
            State::Speaking => TokenKind::Speak,
        },
        StrategyKind::ImplicitAsr | StrategyKind::ExplicitAsr => match state {
            State::Speaking => TokenKind::Text(SymbolId::THOUGHT),
            State::Listening => TokenKind::Text(heard_symbol(env)),
        },
    }
}

/// Proxy transcript symbol for the dominant speaker of a block.
pub fn heard_symbol(env: &[Frame]) -> SymbolId {
    let count = |s: Speaker| {
        env.iter()
            .filter(|f| f.speaker == s && f.activity > 0.0)
            .count()
    };
    let (user, third) = (count(Speaker::User), count(Speaker::ThirdParty));
    if user == 0 && third == 0 {
        SymbolId::SILENCE
    } else if user >= third {
        SymbolId::HEARD_USER
    } else {
        SymbolId::HEARD_THIRD
    }
}

/// Static description of a run, copied into the transcript header.
#[derive(Debug, Clone)]
pub struct RunInfo {
    pub config_hash: String,
    pub policy: String,
    pub grace_ms: u64,
}

pub fn transcript_header(
    id: &str,
    kind: Option<SuiteKind>,
    events: &[ScenarioEvent],
    echo_factor: f64,
    params: &EngineParams,
    info: &RunInfo,
) -> TranscriptHeader {
    TranscriptHeader {
        tag: SchemaTag::current(TRANSCRIPT_SCHEMA),
        scenario_id: id.to_string(),
        kind,
        strategy: params.strategy,
        policy: info.policy.clone(),
        config_hash: info.config_hash.clone(),
        engine_version: ENGINE_VERSION.to_string(),
        block_ms: params.timing.block_ms,
        echo_factor,
        events: events.to_vec(),
    }
}

/// Executes `scenario` until its end plus the grace period.
pub fn run_conversation(
    scenario: &Scenario,
    policy: &mut dyn DecisionPolicy,
    params: &EngineParams,
    info: &RunInfo,
) -> Transcript {
    run_collecting(scenario, policy, params, info, |_| {})
}

/// Like [`run_conversation`], also handing every step to `sink`.
pub fn run_collecting(
    scenario: &Scenario,
    policy: &mut dyn DecisionPolicy,
    params: &EngineParams,
    info: &RunInfo,
    mut sink: impl FnMut(&StepOutput),
) -> Transcript {
    let cfg = params.timing;
    let mut engine = Engine::new(*params, scenario.echo_factor);
    let n = scenario.n_blocks(&cfg, info.grace_ms);
    let mut records = Vec::with_capacity(n as usize);
    for k in 0..n {
        let out = engine.step(
            scenario.env_frames(k, &cfg),
            scenario.response_tokens,
            policy,
        );
        sink(&out);
        records.push(out.record);
    }
    Transcript {
        header: transcript_header(
            &scenario.id,
            Some(scenario.kind),
            &scenario.events,
            scenario.echo_factor,
            params,
            info,
        ),
        records,
    }
}

/// Runs every scenario with its own policy instance, in parallel; output
/// order follows `scenarios`.
pub fn run_suite<'p, F>(
    scenarios: &[Scenario],
    params: &EngineParams,
    info: &RunInfo,
    make_policy: F,
) -> Vec<Transcript>
where
    F: Fn(&Scenario) -> Box<dyn DecisionPolicy + 'p> + Sync,
{
    use rayon::prelude::*;
    scenarios
        .par_iter()
        .map(|s| {
            let mut p = make_policy(s);
            run_conversation(s, p.as_mut(), params, info)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::oracle::OraclePolicy;
    use crate::sim::{generate_suite, EventKind, EventLabel, SuiteKind, DEFAULT_WINDOW_BLOCKS};
    use crate::timebase::onset_latency;

    fn info() -> RunInfo {
        RunInfo {
            config_hash: "test".into(),
            policy: "oracle".into(),
            grace_ms: 2000,
        }
    }

    fn run_oracle(s: &Scenario, params: &EngineParams) -> Transcript {
        let mut p = OraclePolicy {
            truth: s.ground_truth(&params.timing, DEFAULT_WINDOW_BLOCKS),
        };
        run_conversation(s, &mut p, params, &info())
    }

    fn count_shifts(t: &Transcript) -> usize {
        t.records.iter().filter(|r| r.transition.is_some()).count()
    }

    #[test]
    fn oracle_turn_taking_has_two_shifts_and_320ms_onset() {
        let params = EngineParams::default();
        for s in generate_suite(SuiteKind::TurnTaking, 20, 5).unwrap() {
            let t = run_oracle(&s, &params);
            assert_eq!(count_shifts(&t), 2, "{}", s.id);
            assert_eq!(t.violations(), 0);
            let u = s.turn_end().unwrap().end_ms();
            assert_eq!(t.first_speech_ms(), Some(u + onset_latency(&params.timing)));
            assert_eq!(
                *t.records.last().map(|r| &r.state).unwrap(),
                State::Listening
            );
            assert_eq!(t.duration_ms(), s.n_blocks(&params.timing, 2000) * 80);
        }
    }

    #[test]
    fn scripted_barge_in_truncates_at_block_30() {
        let params = EngineParams::default();
        let s = Scenario {
            id: "barge-30".into(),
            seed: 0,
            kind: SuiteKind::BargeInIndependent,
            events: vec![
                ScenarioEvent {
                    kind: EventKind::UserUtterance,
                    start_ms: 240,
                    duration_ms: 800,
                    relevance: 0.9,
                    label: EventLabel::TurnEnd,
                },
                ScenarioEvent {
                    kind: EventKind::UserUtterance,
                    start_ms: 30 * 80,
                    duration_ms: 960,
                    relevance: 0.95,
                    label: EventLabel::TrueBargeIn,
                },
            ],
            echo_factor: 0.0,
            expected_transitions: vec![],
            response_tokens: 32,
            duration_ms: 6000,
            multi_speaker: false,
        };
        let t = run_oracle(&s, &params);
        let shift = t
            .records
            .iter()
            .find(|r| r.transition == Some(Direction::ToListening))
            .unwrap();
        assert_eq!(shift.block, 30);
        assert_eq!(shift.token.kind, TokenKind::Shift);
        assert!(shift
            .playback
            .iter()
            .any(|e| matches!(e, PlaybackEvent::SpeechTruncated { t_ms: 2480, .. })));
        assert_eq!(shift.buffered_ms, 0);
    }

    #[test]
    fn echo_factor_does_not_change_oracle_decisions() {
        let params = EngineParams::default();
        for s in generate_suite(SuiteKind::Mixed, 12, 2).unwrap() {
            let a = run_oracle(&s, &params);
            let loud = Scenario {
                echo_factor: 1.0,
                ..s.clone()
            };
            let b = run_oracle(&loud, &params);
            let tokens = |t: &Transcript| t.records.iter().map(|r| r.token).collect::<Vec<_>>();
            assert_eq!(tokens(&a), tokens(&b));
        }
    }

    #[test]
    fn echo_never_reaches_assistant_stream() {
        let params = EngineParams::default();
        let s = Scenario {
            echo_factor: 1.0,
            ..generate_suite(SuiteKind::TurnTaking, 1, 9)
                .unwrap()
                .remove(0)
        };
        let mut p = OraclePolicy {
            truth: s.ground_truth(&params.timing, DEFAULT_WINDOW_BLOCKS),
        };
        let mut saw_echo = false;
        run_collecting(&s, &mut p, &params, &info(), |out| {
            assert!(out
                .block
                .asst_frames
                .iter()
                .all(|f| f.speaker != Speaker::AssistantEcho));
            assert!(out.block.is_well_formed(&params.timing));
            saw_echo |= out.block.env_frames.iter().any(|f| f.echo_energy > 0.0);
        });
        assert!(saw_echo);
    }

    #[test]
    fn implicit_renders_state_tokens() {
        let params = EngineParams {
            strategy: StrategyKind::Implicit,
            ..Default::default()
        };
        let s = generate_suite(SuiteKind::TurnTaking, 1, 4)
            .unwrap()
            .remove(0);
        let t = run_oracle(&s, &params);
        for r in &t.records {
            assert!(params.strategy.allows_label(&r.token.kind), "{:?}", r.token);
        }
        let speaks = t
            .records
            .iter()
            .filter(|r| r.token.kind == TokenKind::Speak)
            .count();
        assert!(speaks > 0);
    }

    struct Chatty;
    impl DecisionPolicy for Chatty {
        fn decide(&mut self, _: &DecisionContext<'_>) -> Action {
            Action::Text
        }
    }

    #[test]
    fn text_while_listening_is_a_violation() {
        let params = EngineParams::default();
        let s = generate_suite(SuiteKind::TurnTaking, 1, 4)
            .unwrap()
            .remove(0);
        let t = run_conversation(&s, &mut Chatty, &params, &info());
        assert_eq!(t.violations(), t.records.len());
        assert!(t
            .records
            .iter()
            .all(|r| r.state == State::Listening && r.token.kind == TokenKind::Think));
    }
}
