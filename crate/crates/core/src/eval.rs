//! Duplex metrics computed from transcripts.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{SchemaError, SchemaTag, ENGINE_VERSION, REPORT_SCHEMA};
use crate::sim::{Direction, EventLabel, SuiteKind};
use crate::transcript::Transcript;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("transcript {0} has no turn-end label")]
    NoTurnEnd(String),
    #[error("transcript {0} has more than one turn-end label")]
    MultipleTurnEnds(String),
    #[error("no transcripts to evaluate")]
    Empty,
    #[error("precision is undefined: no predicted positives")]
    NoPredictedPositives,
    #[error("recall is undefined: no positive examples")]
    NoPositives,
    #[error("f1 is undefined: precision and recall are both zero")]
    ZeroPrecisionRecall,
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub early_ms: u64,
    pub late_ms: u64,
    /// Blocks after a barge-in onset within which a stop counts.
    pub window_blocks: u64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            early_ms: 240,
            late_ms: 1000,
            window_blocks: crate::sim::DEFAULT_WINDOW_BLOCKS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnTakingJudgment {
    pub scenario_id: String,
    pub utterance_end_ms: u64,
    pub speak_onset_ms: Option<u64>,
    pub success: bool,
    pub latency_ms: Option<u64>,
}

/// Onset must fall in `(end - early, end + late]`.
pub fn judge_turn_taking(
    t: &Transcript,
    early_ms: u64,
    late_ms: u64,
) -> Result<TurnTakingJudgment, EvalError> {
    let id = &t.header.scenario_id;
    let mut ends = t
        .header
        .events
        .iter()
        .filter(|e| e.label == EventLabel::TurnEnd);
    let end = ends
        .next()
        .ok_or_else(|| EvalError::NoTurnEnd(id.clone()))?
        .end_ms();
    if ends.next().is_some() {
        return Err(EvalError::MultipleTurnEnds(id.clone()));
    }
    let onset = t.first_speech_ms();
    let success = onset.is_some_and(|o| o + early_ms > end && o <= end + late_ms);
    Ok(TurnTakingJudgment {
        scenario_id: id.clone(),
        utterance_end_ms: end,
        speak_onset_ms: onset,
        success,
        latency_ms: onset.filter(|_| success).map(|o| o.saturating_sub(end)),
    })
}

pub fn turn_taking_success(
    ts: &[Transcript],
    early_ms: u64,
    late_ms: u64,
) -> Result<f64, EvalError> {
    if ts.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut ok = 0usize;
    for t in ts {
        ok += usize::from(judge_turn_taking(t, early_ms, late_ms)?.success);
    }
    Ok(ok as f64 / ts.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    Independent,
    Dependent,
}

impl Setting {
    pub fn of(kind: Option<SuiteKind>) -> Option<Setting> {
        match kind? {
            SuiteKind::BargeInIndependent | SuiteKind::Backchannel => Some(Setting::Independent),
            SuiteKind::BargeInDependent => Some(Setting::Dependent),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterruptJudgment {
    pub scenario_id: String,
    pub setting: Option<Setting>,
    pub positive: bool,
    pub stopped: bool,
    pub decision_latency_blocks: Option<u64>,
    pub onset_ms: u64,
}

/// One judgment per barge-in, backchannel or distractor event.
pub fn judge_interrupts(t: &Transcript, window_blocks: u64) -> Vec<InterruptJudgment> {
    let block_ms = t.header.block_ms;
    t.header
        .events
        .iter()
        .filter(|e| e.label.is_probe())
        .map(|e| {
            let b = e.start_ms / block_ms;
            let stop = t.records.iter().find(|r| {
                r.block >= b
                    && r.block < b + window_blocks
                    && r.transition == Some(Direction::ToListening)
            });
            InterruptJudgment {
                scenario_id: t.header.scenario_id.clone(),
                setting: Setting::of(t.header.kind),
                positive: e.label == EventLabel::TrueBargeIn,
                stopped: stop.is_some(),
                decision_latency_blocks: stop.map(|r| r.block - b),
                onset_ms: e.start_ms,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn from_judgments<'a>(js: impl IntoIterator<Item = &'a InterruptJudgment>) -> Self {
        let mut c = Confusion::default();
        for j in js {
            match (j.positive, j.stopped) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (false, false) => c.tn += 1,
                (true, false) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn prf(&self) -> Result<Prf, EvalError> {
        if self.tp + self.fp == 0 {
            return Err(EvalError::NoPredictedPositives);
        }
        if self.tp + self.fn_ == 0 {
            return Err(EvalError::NoPositives);
        }
        let precision = self.tp as f64 / (self.tp + self.fp) as f64;
        let recall = self.tp as f64 / (self.tp + self.fn_) as f64;
        if precision + recall == 0.0 {
            return Err(EvalError::ZeroPrecisionRecall);
        }
        Ok(Prf {
            precision,
            recall,
            f1: f1(precision, recall),
            confusion: *self,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: Confusion,
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    2.0 * precision * recall / (precision + recall)
}

pub fn interruption_prf(js: &[InterruptJudgment]) -> Result<Prf, EvalError> {
    Confusion::from_judgments(js).prf()
}

pub fn overall_f1(f1_independent: f64, f1_dependent: f64) -> f64 {
    (f1_independent + f1_dependent) / 2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub excluded: usize,
    pub mean: Option<f64>,
    /// Lower median.
    pub p50: Option<u64>,
    /// Nearest-rank 95th percentile.
    pub p95: Option<u64>,
}

pub fn summarize(values: &[u64], excluded: usize) -> Summary {
    if values.is_empty() {
        return Summary {
            count: 0,
            excluded,
            ..Default::default()
        };
    }
    let mut v = values.to_vec();
    v.sort_unstable();
    let n = v.len();
    let rank95 = (95 * n).div_ceil(100).max(1);
    Summary {
        count: n,
        excluded,
        mean: Some(v.iter().sum::<u64>() as f64 / n as f64),
        p50: Some(v[(n - 1) / 2]),
        p95: Some(v[rank95 - 1]),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub convention: String,
    pub turn_taking_ms: Summary,
    pub interrupt_ms: Summary,
}

/// Latency statistics over successful judgments only. Transcripts without
/// a turn end are skipped for the turn-taking part.
pub fn latency_report(ts: &[Transcript], tol: &Tolerances) -> LatencyReport {
    let mut turn = Vec::new();
    let mut turn_excluded = 0;
    let mut inter = Vec::new();
    let mut inter_excluded = 0;
    for t in ts {
        if let Ok(j) = judge_turn_taking(t, tol.early_ms, tol.late_ms) { match j.latency_ms {
            Some(l) => turn.push(l),
            None => turn_excluded += 1,
        } }
        for j in judge_interrupts(t, tol.window_blocks)
            .iter()
            .filter(|j| j.positive)
        {
            match j.decision_latency_blocks {
                Some(b) => {
                    let stop_end = (j.onset_ms / t.header.block_ms + b + 1) * t.header.block_ms;
                    inter.push(stop_end - j.onset_ms);
                }
                None => inter_excluded += 1,
            }
        }
    }
    LatencyReport {
        convention: "p50 is the lower median; p95 is nearest-rank".into(),
        turn_taking_ms: summarize(&turn, turn_excluded),
        interrupt_ms: summarize(&inter, inter_excluded),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub echo_factor: f64,
    pub conversations: usize,
    pub violations: usize,
    pub turn_taking_success: Option<f64>,
    pub independent: Option<Prf>,
    pub dependent: Option<Prf>,
    pub overall_f1: Option<f64>,
    /// Barge-in metrics pooled over both settings.
    pub pooled: Option<Prf>,
}

/// Aggregates one set of transcripts into a row.
pub fn evaluate(ts: &[Transcript], tol: &Tolerances, label: &str, echo_factor: f64) -> ReportRow {
    let with_turn: Vec<Transcript> = ts
        .iter()
        .filter(|t| {
            t.header
                .events
                .iter()
                .any(|e| e.label == EventLabel::TurnEnd)
        })
        .cloned()
        .collect();
    let judgments: Vec<InterruptJudgment> = ts
        .iter()
        .flat_map(|t| judge_interrupts(t, tol.window_blocks))
        .collect();
    let of = |s: Setting| {
        Confusion::from_judgments(judgments.iter().filter(|j| j.setting == Some(s)))
            .prf()
            .ok()
    };
    let independent = of(Setting::Independent);
    let dependent = of(Setting::Dependent);
    ReportRow {
        label: label.to_string(),
        echo_factor,
        conversations: ts.len(),
        violations: ts.iter().map(Transcript::violations).sum(),
        turn_taking_success: turn_taking_success(&with_turn, tol.early_ms, tol.late_ms).ok(),
        independent,
        dependent,
        overall_f1: independent
            .zip(dependent)
            .map(|(a, b)| overall_f1(a.f1, b.f1)),
        pooled: interruption_prf(&judgments).ok(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    #[serde(flatten)]
    pub tag: SchemaTag,
    pub engine_version: String,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub tolerances: Tolerances,
    pub manifest_hash: String,
    pub rows: Vec<ReportRow>,
    pub latency: Option<LatencyReport>,
}

impl Report {
    pub fn new(
        config_hash: &str,
        config: serde_json::Value,
        tolerances: Tolerances,
        manifest_hash: &str,
    ) -> Self {
        Report {
            tag: SchemaTag::current(REPORT_SCHEMA),
            engine_version: ENGINE_VERSION.to_string(),
            config_hash: config_hash.to_string(),
            config,
            tolerances,
            manifest_hash: manifest_hash.to_string(),
            rows: Vec::new(),
            latency: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn check(&self) -> Result<(), EvalError> {
        Ok(self.tag.check(REPORT_SCHEMA)?)
    }

    pub fn to_text(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
        let mut out = format!(
            "# engine {}  config {}  manifest {}\n# turn-taking window ({} ms, +{} ms], interrupt window {} blocks\n",
            self.engine_version,
            &self.config_hash[..self.config_hash.len().min(12)],
            &self.manifest_hash[..self.manifest_hash.len().min(12)],
            self.tolerances.early_ms,
            self.tolerances.late_ms,
            self.tolerances.window_blocks
        );
        out.push_str(&format!(
            "{:<16} {:>6} {:>6} {:>6} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
            "row",
            "echo",
            "convs",
            "viol",
            "turn",
            "ind_p",
            "ind_r",
            "ind_f1",
            "dep_p",
            "dep_r",
            "dep_f1"
        ));
        for r in &self.rows {
            out.push_str(&format!(
                "{:<16} {:>6} {:>6} {:>6} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}  overall {}\n",
                r.label,
                format!("{:.2}", r.echo_factor),
                r.conversations,
                r.violations,
                fmt(r.turn_taking_success),
                fmt(r.independent.map(|p| p.precision)),
                fmt(r.independent.map(|p| p.recall)),
                fmt(r.independent.map(|p| p.f1)),
                fmt(r.dependent.map(|p| p.precision)),
                fmt(r.dependent.map(|p| p.recall)),
                fmt(r.dependent.map(|p| p.f1)),
                fmt(r.overall_f1),
            ));
        }
        if let Some(l) = &self.latency {
            out.push_str(&format!("# latency ({})\n", l.convention));
            for (name, s) in [
                ("turn_taking_ms", &l.turn_taking_ms),
                ("interrupt_ms", &l.interrupt_ms),
            ] {
                out.push_str(&format!(
                    "{:<16} count {:>5} excluded {:>5} mean {:>8} p50 {:>6} p95 {:>6}\n",
                    name,
                    s.count,
                    s.excluded,
                    fmt(s.mean),
                    s.p50.map_or("-".into(), |v| v.to_string()),
                    s.p95.map_or("-".into(), |v| v.to_string()),
                ));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interleave::StrategyKind;
    use crate::policy::Action;
    use crate::sim::{EventKind, ScenarioEvent};
    use crate::timebase::{State, Token, TokenKind};
    use crate::transcript::{BlockRecord, PlaybackEvent, TranscriptHeader};

    fn crafted(end_ms: u64, onset: Option<u64>) -> Transcript {
        let header = TranscriptHeader {
            tag: SchemaTag::current(crate::schema::TRANSCRIPT_SCHEMA),
            scenario_id: "c".into(),
            kind: Some(SuiteKind::TurnTaking),
            strategy: StrategyKind::Explicit,
            policy: "crafted".into(),
            config_hash: String::new(),
            engine_version: String::new(),
            block_ms: 80,
            echo_factor: 0.0,
            events: vec![ScenarioEvent {
                kind: EventKind::UserUtterance,
                start_ms: 0,
                duration_ms: end_ms,
                relevance: 1.0,
                label: EventLabel::TurnEnd,
            }],
        };
        let blocks = (end_ms + 2000) / 80;
        let records = (0..blocks)
            .map(|b| BlockRecord {
                block: b,
                t_ms: b * 80,
                state: State::Listening,
                token: Token::new(TokenKind::Think, b),
                action: Action::Think,
                transition: None,
                violation: None,
                playback: match onset {
                    Some(o) if o / 80 == b => vec![PlaybackEvent::SpeechStart { t_ms: o }],
                    _ => vec![],
                },
                features: [0.0; crate::policy::BLOCK_DIM],
                buffered_ms: 0,
            })
            .collect();
        Transcript { header, records }
    }

    #[test]
    fn turn_taking_window_bounds() {
        let end = 800;
        assert!(
            judge_turn_taking(&crafted(end, Some(end + 1000)), 240, 1000)
                .unwrap()
                .success
        );
        assert!(
            !judge_turn_taking(&crafted(end, Some(end + 1040)), 240, 1000)
                .unwrap()
                .success
        );
        // early edge is open
        assert!(
            !judge_turn_taking(&crafted(end, Some(end - 240)), 240, 1000)
                .unwrap()
                .success
        );
        assert!(
            judge_turn_taking(&crafted(end, Some(end - 160)), 240, 1000)
                .unwrap()
                .success
        );
        assert_eq!(
            turn_taking_success(&[crafted(end, None)], 240, 1000).unwrap(),
            0.0
        );
        let mut none = crafted(end, None);
        none.header.events.clear();
        assert_eq!(
            turn_taking_success(&[none], 240, 1000),
            Err(EvalError::NoTurnEnd("c".into()))
        );
    }

    #[test]
    fn prf_examples() {
        // 1581 / 2325 = 0.68 and 1581 / 1700 = 0.93 exactly
        let c = Confusion {
            tp: 1581,
            fp: 744,
            tn: 0,
            fn_: 119,
        };
        let p = c.prf().unwrap();
        assert!((p.precision - 0.68).abs() < 1e-12);
        assert!((p.recall - 0.93).abs() < 1e-12);
        assert!((p.f1 - 0.79).abs() <= 0.005);
        let perfect = Confusion {
            tp: 5,
            fp: 0,
            tn: 5,
            fn_: 0,
        }
        .prf()
        .unwrap();
        assert_eq!(
            (perfect.precision, perfect.recall, perfect.f1),
            (1.0, 1.0, 1.0)
        );
        assert_eq!(f1(0.5, 0.5), 0.5);
    }

    #[test]
    fn undefined_prf_is_an_error() {
        assert_eq!(
            Confusion {
                tp: 0,
                fp: 0,
                tn: 3,
                fn_: 2
            }
            .prf(),
            Err(EvalError::NoPredictedPositives)
        );
        assert_eq!(
            Confusion {
                tp: 0,
                fp: 2,
                tn: 3,
                fn_: 0
            }
            .prf(),
            Err(EvalError::NoPositives)
        );
        assert_eq!(
            Confusion {
                tp: 0,
                fp: 2,
                tn: 3,
                fn_: 1
            }
            .prf(),
            Err(EvalError::ZeroPrecisionRecall)
        );
    }

    #[test]
    fn overall_examples() {
        assert!((overall_f1(0.79, 0.93) - 0.86).abs() < 1e-12);
        assert!((overall_f1(0.88, 0.93) - 0.90).abs() <= 0.005 + 1e-12);
        assert_eq!(overall_f1(0.37, 0.37), 0.37);
    }

    #[test]
    fn summary_examples() {
        let s = summarize(&[320, 480], 1);
        assert_eq!(s.mean, Some(400.0));
        assert_eq!(s.p50, Some(320));
        assert_eq!(s.excluded, 1);
        let e = summarize(&[], 4);
        assert_eq!((e.count, e.excluded, e.mean), (0, 4, None));
    }
}
