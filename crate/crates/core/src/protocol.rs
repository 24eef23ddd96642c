//! Text wire format of the keyframe selector: prompt rendering and parsing
//! of `<think>…</think><answer>…</answer>` responses.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::math::round;
use crate::seed::{rng_for, Stream};

/// Why a response was rejected.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("response has no <answer> block")]
    MissingAnswer,
    #[error("answer payload is not a valid entry or entry list: {0}")]
    BadJson(String),
    #[error("bad timestamp: {0}")]
    BadTimestamp(String),
    #[error("entry {0} has an empty description")]
    EmptyDescription(usize),
}

/// Whole seconds, written `MM:SS`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(u32);

impl Timestamp {
    /// Largest representable time, 59:59.
    pub const MAX_SECS: u32 = 59 * 60 + 59;

    pub fn from_secs(secs: u32) -> Option<Timestamp> {
        (secs <= Self::MAX_SECS).then_some(Timestamp(secs))
    }

    pub fn secs(&self) -> u32 {
        self.0
    }

    /// Parse zero-padded `MM:SS` with both fields in 0..=59.
    pub fn parse(text: &str) -> Result<Timestamp, ParseError> {
        let bad = || ParseError::BadTimestamp(text.to_string());
        let (mm, ss) = text.split_once(':').ok_or_else(bad)?;
        let field = |s: &str| -> Result<u32, ParseError> {
            if s.len() != 2 || !s.bytes().all(|b| b.is_ascii_digit()) {
                return Err(bad());
            }
            let v: u32 = s.parse().map_err(|_| bad())?;
            if v > 59 {
                return Err(bad());
            }
            Ok(v)
        };
        Ok(Timestamp(field(mm)? * 60 + field(ss)?))
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:02}:{:02}", self.0 / 60, self.0 % 60)
    }
}

/// One selected moment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnswerEntry {
    pub start_time: Timestamp,
    pub end_time: Timestamp,
    pub description: String,
}

/// A parsed response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyframeAnswer {
    pub entries: Vec<AnswerEntry>,
    pub think: String,
}

impl KeyframeAnswer {
    /// One zero-length span per frame, at the frame's time on a `frames`-frame
    /// resampling of a `duration`-second video.
    pub fn from_frames(
        frames: &[usize],
        descriptions: &[String],
        total: usize,
        duration: u32,
        think: &str,
    ) -> KeyframeAnswer {
        let entries = frames
            .iter()
            .zip(descriptions)
            .map(|(&f, d)| {
                let s = round(f as f64 * duration as f64 / total.max(1) as f64) as u32;
                let t = Timestamp(s.min(Timestamp::MAX_SECS));
                AnswerEntry {
                    start_time: t,
                    end_time: t,
                    description: d.clone(),
                }
            })
            .collect();
        KeyframeAnswer {
            entries,
            think: think.to_string(),
        }
    }
}

/// Inputs of [`render_prompt`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub duration_secs: u32,
    /// The reference instruction naming the object to segment.
    pub instruction: String,
    /// Suggested number of moments.
    pub moment_hint: usize,
    /// Seed of the example timestamps.
    pub seed: u64,
    /// Render the audio-question variant.
    pub audio: bool,
}

impl PromptSpec {
    pub fn new(duration_secs: u32, instruction: impl Into<String>, seed: u64) -> PromptSpec {
        PromptSpec {
            duration_secs,
            instruction: instruction.into(),
            moment_hint: 4,
            seed,
            audio: false,
        }
    }

    /// Example span shown in the prompt, drawn from the seed.
    pub fn example_span(&self) -> (Timestamp, Timestamp) {
        let d = self.duration_secs.clamp(1, Timestamp::MAX_SECS);
        let mut rng = rng_for(self.seed, Stream::Protocol, 0, 0);
        let a = rng.random_range(0..=d);
        let b = rng.random_range(0..=d);
        (Timestamp(a.min(b)), Timestamp(a.max(b)))
    }
}

/// Fill the prompt template.
pub fn render_prompt(spec: &PromptSpec) -> String {
    let (start, end) = spec.example_span();
    let task = if spec.audio {
        format!(
            "Listen to the audio track of this {}-second video and find the object that answers: \"{}\".",
            spec.duration_secs, spec.instruction
        )
    } else {
        format!(
            "You are watching a {}-second video. Referring expression: \"{}\".",
            spec.duration_secs, spec.instruction
        )
    };
    format!(
        "{task}\n\
         Select about {hint} most relevant moments where the referred object can be located, \
         for example right after it reappears or changes.\n\
         For each moment, describe the referred object in a few plain words so it can be found in that frame alone.\n\
         Reason inside <think> </think> tags, then give the result inside <answer> </answer> tags as JSON, e.g.\n\
         <think>...</think><answer>[{{\"start_time\": \"{start}\", \"end_time\": \"{end}\", \"description\": \"short description of the object\"}}]</answer>",
        hint = spec.moment_hint,
    )
}

/// Render an answer as a response text that [`parse_response`] reads back.
pub fn serialize_answer(answer: &KeyframeAnswer) -> String {
    let entry = |e: &AnswerEntry| {
        let mut m = Map::new();
        m.insert("start_time".into(), Value::String(e.start_time.to_string()));
        m.insert("end_time".into(), Value::String(e.end_time.to_string()));
        m.insert("description".into(), Value::String(e.description.clone()));
        Value::Object(m)
    };
    let payload = match answer.entries.as_slice() {
        [one] => entry(one),
        many => Value::Array(many.iter().map(entry).collect()),
    };
    // '<' never appears raw in the payload, so no tag can hide inside it
    let json = serde_json::to_string(&payload)
        .unwrap_or_default()
        .replace('<', "\\u003c");
    format!("<think>{}</think><answer>{}</answer>", answer.think, json)
}

/// Parse the last `<answer>` block of `text`, validating spans against
/// `duration_secs`.
pub fn parse_response(text: &str, duration_secs: u32) -> Result<KeyframeAnswer, ParseError> {
    let open = text.rfind("<answer>").ok_or(ParseError::MissingAnswer)?;
    let body_start = open + "<answer>".len();
    let body_len = text[body_start..].find("</answer>").ok_or(ParseError::MissingAnswer)?;
    let body = &text[body_start..body_start + body_len];

    let before = &text[..open];
    let think = match (before.find("<think>"), before.rfind("</think>")) {
        (Some(s), Some(e)) if s + "<think>".len() <= e => before[s + "<think>".len()..e].to_string(),
        _ => String::new(),
    };

    let value: Value = serde_json::from_str(body.trim()).map_err(|e| ParseError::BadJson(e.to_string()))?;
    let items = match value {
        Value::Array(items) => items,
        obj @ Value::Object(_) => alloc::vec![obj],
        _ => return Err(ParseError::BadJson("expected an object or a list".into())),
    };
    if items.is_empty() {
        return Err(ParseError::BadJson("empty entry list".into()));
    }
    let mut entries = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let field = |name: &str| -> Result<&str, ParseError> {
            item.get(name)
                .and_then(Value::as_str)
                .ok_or_else(|| ParseError::BadJson(format!("entry {i}: missing string field {name}")))
        };
        let (start, end, description) = (field("start_time")?, field("end_time")?, field("description")?);
        let start_time = Timestamp::parse(start)?;
        let end_time = Timestamp::parse(end)?;
        if start_time > end_time {
            return Err(ParseError::BadTimestamp(format!("{start} is after {end}")));
        }
        if end_time.secs() > duration_secs {
            return Err(ParseError::BadTimestamp(format!(
                "{end} is past the {duration_secs}s video"
            )));
        }
        if description.trim().is_empty() {
            return Err(ParseError::EmptyDescription(i));
        }
        entries.push(AnswerEntry {
            start_time,
            end_time,
            description: description.to_string(),
        });
    }
    Ok(KeyframeAnswer { entries, think })
}

/// Map each span's midpoint to the nearest of `frames` evenly spaced frames.
/// Duplicates are kept.
pub fn answer_to_frames(answer: &KeyframeAnswer, frames: usize, duration_secs: u32) -> Vec<usize> {
    if frames == 0 {
        return Vec::new();
    }
    let duration = duration_secs.max(1) as f64;
    answer
        .entries
        .iter()
        .map(|e| {
            let mid = (e.start_time.secs() + e.end_time.secs()) as f64 / 2.0;
            let f = round(mid * frames as f64 / duration);
            (f.max(0.0) as usize).min(frames - 1)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn parses_single_object_answer() {
        let text =
            r#"<think>x</think><answer>{"start_time":"00:02","end_time":"00:05","description":"red ball"}</answer>"#;
        let a = parse_response(text, 10).unwrap();
        assert_eq!(a.think, "x");
        assert_eq!(
            a.entries,
            vec![AnswerEntry {
                start_time: Timestamp(2),
                end_time: Timestamp(5),
                description: "red ball".into(),
            }]
        );
    }

    #[test]
    fn error_kinds_are_distinct() {
        assert_eq!(parse_response("no tags here", 10), Err(ParseError::MissingAnswer));
        assert_eq!(parse_response("<answer>{\"a\":1", 10), Err(ParseError::MissingAnswer));
        assert!(matches!(
            parse_response("<answer>{oops}</answer>", 10),
            Err(ParseError::BadJson(_))
        ));
        assert!(matches!(
            parse_response("<answer>[]</answer>", 10),
            Err(ParseError::BadJson(_))
        ));
        let reversed = r#"<answer>{"start_time":"00:08","end_time":"00:03","description":"x"}</answer>"#;
        assert!(matches!(parse_response(reversed, 10), Err(ParseError::BadTimestamp(_))));
        let late = r#"<answer>{"start_time":"00:08","end_time":"00:12","description":"x"}</answer>"#;
        assert!(matches!(parse_response(late, 10), Err(ParseError::BadTimestamp(_))));
        let blank = r#"<answer>[{"start_time":"00:01","end_time":"00:02","description":"  "}]</answer>"#;
        assert_eq!(parse_response(blank, 10), Err(ParseError::EmptyDescription(0)));
    }

    #[test]
    fn timestamps_need_two_digit_fields() {
        assert_eq!(Timestamp::parse("01:05"), Ok(Timestamp(65)));
        for bad in ["1:05", "00:60", "60:00", "00-05", "0a:00", "00:05:00", ""] {
            assert!(Timestamp::parse(bad).is_err(), "{bad}");
        }
        assert_eq!(Timestamp(65).to_string(), "01:05");
    }

    #[test]
    fn last_answer_block_wins() {
        let text = r#"chatter <answer>{"start_time":"00:01","end_time":"00:01","description":"a"}</answer>
            more <think>t</think><answer>{"start_time":"00:03","end_time":"00:04","description":"b"}</answer> bye"#;
        let a = parse_response(text, 10).unwrap();
        assert_eq!(a.entries.len(), 1);
        assert_eq!(a.entries[0].description, "b");
    }

    #[test]
    fn span_midpoints_map_to_frames() {
        let span = |s, e| AnswerEntry {
            start_time: Timestamp(s),
            end_time: Timestamp(e),
            description: "x".into(),
        };
        let a = KeyframeAnswer {
            entries: vec![span(0, 0), span(10, 14), span(11, 13), span(24, 24)],
            think: String::new(),
        };
        assert_eq!(answer_to_frames(&a, 24, 24), vec![0, 12, 12, 23]);
    }

    #[test]
    fn frames_survive_the_text_round_trip() {
        let frames = [0usize, 3, 7, 7, 12, 23];
        let desc: Vec<String> = frames.iter().map(|f| format!("thing {f}")).collect();
        let a = KeyframeAnswer::from_frames(&frames, &desc, 24, 24, "");
        let back = parse_response(&serialize_answer(&a), 24).unwrap();
        assert_eq!(answer_to_frames(&back, 24, 24), frames.to_vec());
    }

    #[test]
    fn prompt_differs_only_in_example_timestamps() {
        let p1 = PromptSpec::new(60, "the last object to disappear", 1);
        let p2 = PromptSpec { seed: 2, ..p1.clone() };
        let (t1, t2) = (render_prompt(&p1), render_prompt(&p2));
        for t in [&t1, &t2] {
            assert!(t.contains("<think>") && t.contains("<answer>"));
            assert!(t.contains("about 4"));
        }
        let strip = |p: &PromptSpec, t: &str| {
            let (a, b) = p.example_span();
            t.replacen(&a.to_string(), "#", 1).replacen(&b.to_string(), "#", 1)
        };
        assert_eq!(strip(&p1, &t1), strip(&p2, &t2));
        assert_ne!(p1.example_span(), p2.example_span());
        let (a, b) = p1.example_span();
        assert!(a <= b && b.secs() <= 60);
        let audio = render_prompt(&PromptSpec { audio: true, ..p1 });
        assert!(audio.contains("audio") && audio.contains("<answer>"));
    }

    fn entry_strategy(duration: u32) -> impl Strategy<Value = AnswerEntry> {
        (0..=duration, 0..=duration, "[ -~]{0,12}[a-z]", any::<bool>()).prop_map(|(a, b, d, lt)| AnswerEntry {
            start_time: Timestamp(a.min(b)),
            end_time: Timestamp(a.max(b)),
            description: if lt { format!("<{d}>") } else { d },
        })
    }

    proptest! {
        #[test]
        fn serialize_then_parse_is_identity(
            entries in proptest::collection::vec(entry_strategy(90), 1..6),
            think in "[ -~\n]{0,40}",
        ) {
            let a = KeyframeAnswer { entries, think };
            prop_assert_eq!(parse_response(&serialize_answer(&a), 90), Ok(a));
        }

        #[test]
        fn parser_is_total_on_arbitrary_text(bytes in proptest::collection::vec(any::<u8>(), 0..200)) {
            let text = String::from_utf8_lossy(&bytes);
            let _ = parse_response(&text, 30);
            let _ = parse_response(&format!("<answer>{text}</answer>"), 30);
        }

        #[test]
        fn frames_stay_in_range(
            entries in proptest::collection::vec(entry_strategy(59), 1..6),
            frames in 1usize..64,
            duration in 1u32..60,
        ) {
            let a = KeyframeAnswer { entries, think: String::new() };
            prop_assert!(answer_to_frames(&a, frames, duration).iter().all(|&f| f < frames));
        }
    }
}
