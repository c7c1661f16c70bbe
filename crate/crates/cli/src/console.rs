//! Interactive session: an input reader feeds commands through a queue to
//! the ticker, which owns the engine and advances it one block per tick.

use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::time::{Duration, Instant};

use clap::Args;
use duplex_core::config::EngineConfig;
use duplex_core::engine::{transcript_header, Engine, EngineParams, RunInfo};
use duplex_core::pipeline::run_info;
use duplex_core::policy::{ModelPolicy, PolicyModel};
use duplex_core::sim::{EventKind, EventLabel, Scenario, ScenarioEvent, Suite, SuiteKind};
use duplex_core::timebase::State;
use duplex_core::transcript::{BlockRecord, Transcript};

use crate::error::{CliError, CliResult};
use crate::{files, Global};

#[derive(Args)]
pub struct ConsoleArgs {
    /// Trained model file. Defaults to policy_path from the config.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Advance only on `step` commands instead of every 80 ms.
    #[arg(long)]
    no_realtime: bool,
    /// Transcript written when the session ends.
    #[arg(long, default_value = "session.jsonl")]
    out: PathBuf,
    /// Also save the session as a one-scenario suite for replay.
    #[arg(long)]
    save_suite: Option<PathBuf>,
    /// Reply length in text tokens.
    #[arg(long, default_value_t = 24)]
    response_tokens: u32,
    /// Exit with the protocol-violation code if any block was a violation.
    #[arg(long)]
    strict: bool,
}

const USAGE: &str = "commands: say|barge|backchannel|silence [blocks] [--relevance R], \
third say|barge|backchannel [blocks] [--relevance R], step [n], quit";

#[derive(Debug, Clone, Copy, PartialEq)]
enum Utterance {
    Say,
    Barge,
    Backchannel,
    Silence,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Inject {
    what: Utterance,
    third_party: bool,
    blocks: u64,
    relevance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
enum Msg {
    Inject(Inject),
    Step(u64),
    Quit,
    Bad(String),
}

fn parse_line(line: &str) -> Option<Msg> {
    let mut words: Vec<&str> = line.split_whitespace().collect();
    let Some(&first) = words.first() else {
        return Some(Msg::Step(1));
    };
    let bad = || Some(Msg::Bad(format!("cannot parse `{}`", line.trim())));
    match first {
        "quit" | "exit" => return Some(Msg::Quit),
        "help" => return Some(Msg::Bad(String::new())),
        "step" => {
            return match words.get(1).map(|n| n.parse::<u64>()) {
                None => Some(Msg::Step(1)),
                Some(Ok(n)) if words.len() == 2 => Some(Msg::Step(n)),
                _ => bad(),
            }
        }
        _ => {}
    }
    let third_party = first == "third";
    if third_party {
        words.remove(0);
    }
    let what = match words.first().copied() {
        Some("say") => Utterance::Say,
        Some("barge") => Utterance::Barge,
        Some("backchannel") => Utterance::Backchannel,
        Some("silence") if !third_party => Utterance::Silence,
        _ => return bad(),
    };
    let mut inject = Inject {
        what,
        third_party,
        blocks: match what {
            Utterance::Say => 15,
            Utterance::Barge => 12,
            Utterance::Backchannel => 4,
            Utterance::Silence => 5,
        },
        relevance: None,
    };
    let mut rest = words[1..].iter();
    while let Some(w) = rest.next() {
        if *w == "--relevance" {
            match rest.next().and_then(|r| r.parse::<f64>().ok()) {
                Some(r) if (0.0..=1.0).contains(&r) => inject.relevance = Some(r),
                _ => return bad(),
            }
        } else {
            match w.parse::<u64>() {
                Ok(n) if n > 0 => inject.blocks = n,
                _ => return bad(),
            }
        }
    }
    Some(Msg::Inject(inject))
}

fn reader(tx: Sender<Msg>) {
    let stdin = std::io::stdin();
    for line in stdin.lock().lines() {
        let Ok(line) = line else { break };
        if let Some(msg) = parse_line(&line) {
            let quit = msg == Msg::Quit;
            if tx.send(msg).is_err() || quit {
                return;
            }
        }
    }
    let _ = tx.send(Msg::Quit);
}

struct Session<'m> {
    params: EngineParams,
    info: RunInfo,
    scenario: Scenario,
    engine: Engine,
    policy: ModelPolicy<'m>,
    records: Vec<BlockRecord>,
    turn_end_used: bool,
}

impl<'m> Session<'m> {
    fn new(cfg: &EngineConfig, model: &'m PolicyModel, response_tokens: u32) -> Self {
        let params = EngineParams {
            strategy: model.strategy,
            features: model.features,
            ..cfg.engine_params()
        };
        let info = run_info(cfg, &format!("model:{}", model.content_hash()));
        let scenario = Scenario {
            id: "console".into(),
            seed: 0,
            kind: SuiteKind::Mixed,
            events: Vec::new(),
            echo_factor: cfg.echo.factor,
            expected_transitions: Vec::new(),
            response_tokens,
            duration_ms: 0,
            multi_speaker: true,
        };
        Session {
            engine: Engine::new(params, cfg.echo.factor),
            params,
            info,
            scenario,
            policy: ModelPolicy { model },
            records: Vec::new(),
            turn_end_used: false,
        }
    }

    /// Adds an event starting at the next block.
    fn inject(&mut self, i: Inject) {
        let speaking = self.engine.state() == State::Speaking;
        let (kind, label, relevance) = match (i.what, i.third_party) {
            (Utterance::Silence, _) => (EventKind::Silence, EventLabel::None, 0.0),
            (Utterance::Backchannel, false) => {
                (EventKind::Backchannel, EventLabel::Backchannel, 0.2)
            }
            (_, true) => (
                EventKind::ThirdPartyUtterance,
                if speaking {
                    EventLabel::FalseBargeIn
                } else {
                    EventLabel::None
                },
                0.2,
            ),
            (Utterance::Barge, false) => (EventKind::UserUtterance, EventLabel::TrueBargeIn, 0.9),
            (Utterance::Say, false) if speaking => {
                (EventKind::UserUtterance, EventLabel::TrueBargeIn, 0.9)
            }
            (Utterance::Say, false) if !self.turn_end_used => {
                (EventKind::UserUtterance, EventLabel::TurnEnd, 0.9)
            }
            (Utterance::Say, false) => (EventKind::UserUtterance, EventLabel::None, 0.9),
        };
        self.turn_end_used |= label == EventLabel::TurnEnd;
        let block_ms = self.params.timing.block_ms;
        let event = ScenarioEvent {
            kind,
            start_ms: self.engine.block() * block_ms,
            duration_ms: i.blocks * block_ms,
            relevance: i.relevance.unwrap_or(relevance),
            label,
        };
        println!(
            "# block {}: {:?} {} ms relevance {:.2} ({:?})",
            self.engine.block(),
            event.kind,
            event.duration_ms,
            event.relevance,
            event.label
        );
        self.scenario.events.push(event);
    }

    fn step(&mut self) {
        let k = self.engine.block();
        let env = self.scenario.env_frames(k, &self.params.timing);
        let out = self
            .engine
            .step(env, self.scenario.response_tokens, &mut self.policy);
        let r = &out.record;
        let mut line = format!(
            "{:>5} {:>7}ms {:<9} {:<12} buf {:>4}ms",
            r.block,
            r.t_ms,
            format!("{:?}", r.state).to_lowercase(),
            r.token.kind.short_name(),
            r.buffered_ms
        );
        if let Some(d) = r.transition {
            line.push_str(&format!("  {d:?}"));
        }
        if let Some(v) = r.violation {
            line.push_str(&format!("  violation {v:?}"));
        }
        println!("{line}");
        let _ = std::io::stdout().flush();
        self.records.push(out.record);
    }

    /// Runs out the grace period and pins the scenario length so that a
    /// replay covers exactly the blocks that were run.
    fn finish(mut self) -> (Scenario, Transcript) {
        let grace = self.info.grace_ms;
        while self.engine.block() < self.scenario.n_blocks(&self.params.timing, grace) {
            self.step();
        }
        let ran_ms = self.engine.block() * self.params.timing.block_ms;
        self.scenario.duration_ms = ran_ms.saturating_sub(grace);
        let t = Transcript {
            header: transcript_header(
                &self.scenario.id,
                Some(self.scenario.kind),
                &self.scenario.events,
                self.scenario.echo_factor,
                &self.params,
                &self.info,
            ),
            records: self.records,
        };
        (self.scenario, t)
    }
}

fn ticker(mut s: Session<'_>, rx: Receiver<Msg>, realtime: bool) -> (Scenario, Transcript) {
    let tick = Duration::from_millis(s.params.timing.block_ms);
    let start = Instant::now();
    loop {
        let msg = if realtime {
            let deadline = start + tick * (s.engine.block() as u32 + 1);
            match rx.recv_timeout(deadline.saturating_duration_since(Instant::now())) {
                Ok(m) => m,
                Err(RecvTimeoutError::Timeout) => {
                    s.step();
                    continue;
                }
                Err(RecvTimeoutError::Disconnected) => Msg::Quit,
            }
        } else {
            rx.recv().unwrap_or(Msg::Quit)
        };
        match msg {
            Msg::Inject(i) => s.inject(i),
            Msg::Step(n) if !realtime => (0..n).for_each(|_| s.step()),
            Msg::Step(_) => {}
            Msg::Bad(m) => {
                if !m.is_empty() {
                    eprintln!("{m}");
                }
                eprintln!("{USAGE}");
            }
            Msg::Quit => break,
        }
    }
    s.finish()
}

pub fn run(g: &Global, a: ConsoleArgs) -> CliResult<()> {
    let cfg = g.config(&[])?;
    let path = a
        .model
        .clone()
        .or_else(|| cfg.policy_path.as_ref().map(PathBuf::from))
        .ok_or_else(|| CliError::Config("no policy: pass --model or set policy_path".into()))?;
    let model = files::load_model(&path)?;
    let session = Session::new(&cfg, &model, a.response_tokens);
    eprintln!("{USAGE}");
    let (tx, rx) = mpsc::channel();
    let input = std::thread::spawn(move || reader(tx));
    let (scenario, transcript) = std::thread::scope(|sc| {
        sc.spawn(|| ticker(session, rx, !a.no_realtime))
            .join()
            .expect("ticker thread panicked")
    });
    // the ticker stops only on the reader's quit, so the reader is done
    let _ = input.join();
    files::write(&a.out, &transcript.to_jsonl())?;
    if let Some(p) = &a.save_suite {
        files::write(
            p,
            &Suite::new(SuiteKind::Mixed, 0, vec![scenario]).to_json(),
        )?;
    }
    let violations = transcript.violations();
    println!(
        "# {} blocks, {} violations -> {}",
        transcript.records.len(),
        violations,
        a.out.display()
    );
    if a.strict && violations > 0 {
        return Err(CliError::Violation(format!(
            "{violations} protocol violations"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_commands() {
        assert_eq!(parse_line(""), Some(Msg::Step(1)));
        assert_eq!(parse_line("step 4"), Some(Msg::Step(4)));
        assert_eq!(parse_line("quit"), Some(Msg::Quit));
        assert_eq!(
            parse_line("barge --relevance 0.9"),
            Some(Msg::Inject(Inject {
                what: Utterance::Barge,
                third_party: false,
                blocks: 12,
                relevance: Some(0.9)
            }))
        );
        assert_eq!(
            parse_line("third say 7"),
            Some(Msg::Inject(Inject {
                what: Utterance::Say,
                third_party: true,
                blocks: 7,
                relevance: None
            }))
        );
        for bad in [
            "dance",
            "say -3",
            "barge --relevance 2",
            "third silence",
            "step x",
        ] {
            assert!(matches!(parse_line(bad), Some(Msg::Bad(_))), "{bad}");
        }
    }
}
