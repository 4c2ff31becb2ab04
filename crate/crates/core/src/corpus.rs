//! Message corpora and per-theme timelines.
//!
//! A corpus is read from JSON-lines, validated, and stored sorted by id so
//! that the order of lines in the input file never leaks into downstream
//! artifacts. Timelines order each theme's messages by `(timestamp, id)`;
//! consecutive entries of a timeline are the temporal edges used by the
//! propagation module.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, TimeZone, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("failed to read corpus: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed JSON: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: missing required field \"{field}\"")]
    MissingField { line: usize, field: &'static str },
    #[error("line {line}: invalid field \"{field}\": {message}")]
    InvalidField {
        line: usize,
        field: &'static str,
        message: String,
    },
    #[error("line {line}: duplicate message id \"{id}\"")]
    DuplicateId { line: usize, id: String },
}

/// Position on the five-point political spectrum, ordered Left to Right.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StanceLabel {
    Left,
    LeanLeft,
    Neutral,
    LeanRight,
    Right,
}

impl StanceLabel {
    pub const ALL: [StanceLabel; 5] = [
        StanceLabel::Left,
        StanceLabel::LeanLeft,
        StanceLabel::Neutral,
        StanceLabel::LeanRight,
        StanceLabel::Right,
    ];

    /// Wire name used in JSON (`"lean_left"` etc).
    pub fn as_str(self) -> &'static str {
        match self {
            StanceLabel::Left => "left",
            StanceLabel::LeanLeft => "lean_left",
            StanceLabel::Neutral => "neutral",
            StanceLabel::LeanRight => "lean_right",
            StanceLabel::Right => "right",
        }
    }

    /// Index in spectrum order, 0 for Left through 4 for Right.
    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for StanceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown stance label \"{0}\"")]
pub struct UnknownStance(pub String);

impl FromStr for StanceLabel {
    type Err = UnknownStance;

    /// Accepts both the `lean_left` and `lean_to_left` spellings, any case,
    /// with `_`, `-` or no separator.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .trim()
            .chars()
            .filter(|c| !matches!(c, '_' | '-' | ' '))
            .flat_map(char::to_lowercase)
            .collect();
        match key.as_str() {
            "left" => Ok(StanceLabel::Left),
            "leanleft" | "leantoleft" => Ok(StanceLabel::LeanLeft),
            "neutral" => Ok(StanceLabel::Neutral),
            "leanright" | "leantoright" => Ok(StanceLabel::LeanRight),
            "right" => Ok(StanceLabel::Right),
            _ => Err(UnknownStance(s.to_string())),
        }
    }
}

impl Serialize for StanceLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for StanceLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

/// UTC timestamps at second precision, serialized as `2022-03-01T12:00:00Z`.
pub mod timestamp_format {
    use super::*;

    pub fn serialize<S: Serializer>(ts: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&ts.to_rfc3339_opts(SecondsFormat::Secs, true))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let raw = String::deserialize(d)?;
        parse_timestamp(&raw).map_err(serde::de::Error::custom)
    }
}

/// Parses an ISO-8601 timestamp with offset and truncates it to whole UTC seconds.
pub fn parse_timestamp(raw: &str) -> Result<DateTime<Utc>, String> {
    let parsed = DateTime::parse_from_rfc3339(raw.trim())
        .map_err(|e| format!("\"{raw}\" is not an ISO-8601 timestamp with offset: {e}"))?;
    let secs = parsed.timestamp();
    Utc.timestamp_opt(secs, 0)
        .single()
        .ok_or_else(|| format!("\"{raw}\" is out of range"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub id: String,
    pub text: String,
    #[serde(with = "timestamp_format")]
    pub timestamp: DateTime<Utc>,
    pub theme: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stance: Option<StanceLabel>,
}

/// A validated, immutable set of messages, held sorted by id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    messages: Vec<Message>,
}

#[derive(Deserialize)]
struct RawMessage {
    id: Option<serde_json::Value>,
    text: Option<String>,
    timestamp: Option<String>,
    theme: Option<String>,
    stance: Option<String>,
}

impl Corpus {
    /// Builds a corpus from already-constructed messages, applying the same
    /// validation as [`load_messages`]. Line numbers in errors are 1-based
    /// positions in `messages`.
    pub fn from_messages(messages: Vec<Message>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        for (i, m) in messages.iter().enumerate() {
            let line = i + 1;
            validate_nonempty(line, "id", &m.id)?;
            validate_nonempty(line, "text", &m.text)?;
            validate_nonempty(line, "theme", &m.theme)?;
            if !seen.insert(m.id.as_str()) {
                return Err(CorpusError::DuplicateId {
                    line,
                    id: m.id.clone(),
                });
            }
        }
        let mut messages = messages;
        messages.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(Corpus { messages })
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    /// Messages in ascending id order.
    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    pub fn get(&self, id: &str) -> Option<&Message> {
        self.messages
            .binary_search_by(|m| m.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.messages[i])
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.messages.iter().map(|m| m.id.as_str())
    }

    /// Writes the corpus back out as JSON-lines, one message per line, in id order.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for m in &self.messages {
            serde_json::to_writer(&mut out, m)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn validate_nonempty(line: usize, field: &'static str, value: &str) -> Result<(), CorpusError> {
    if value.trim().is_empty() {
        return Err(CorpusError::InvalidField {
            line,
            field,
            message: "must be nonempty".into(),
        });
    }
    Ok(())
}

fn parse_line(line: usize, raw: &str) -> Result<Message, CorpusError> {
    let parsed: RawMessage = serde_json::from_str(raw).map_err(|e| CorpusError::Malformed {
        line,
        message: e.to_string(),
    })?;
    let id = match parsed.id {
        None | Some(serde_json::Value::Null) => {
            return Err(CorpusError::MissingField { line, field: "id" })
        }
        Some(serde_json::Value::String(s)) => s,
        // Numeric ids are common in crawled data; keep their textual form.
        Some(serde_json::Value::Number(n)) => n.to_string(),
        Some(other) => {
            return Err(CorpusError::InvalidField {
                line,
                field: "id",
                message: format!("expected string, got {other}"),
            })
        }
    };
    let text = parsed.text.ok_or(CorpusError::MissingField {
        line,
        field: "text",
    })?;
    let timestamp = parsed.timestamp.ok_or(CorpusError::MissingField {
        line,
        field: "timestamp",
    })?;
    let theme = parsed.theme.ok_or(CorpusError::MissingField {
        line,
        field: "theme",
    })?;
    let timestamp = parse_timestamp(&timestamp).map_err(|message| CorpusError::InvalidField {
        line,
        field: "timestamp",
        message,
    })?;
    let stance = parsed
        .stance
        .map(|s| s.parse::<StanceLabel>())
        .transpose()
        .map_err(|e| CorpusError::InvalidField {
            line,
            field: "stance",
            message: e.to_string(),
        })?;
    validate_nonempty(line, "id", &id)?;
    validate_nonempty(line, "text", &text)?;
    validate_nonempty(line, "theme", &theme)?;
    Ok(Message {
        id,
        text,
        timestamp,
        theme,
        stance,
    })
}

/// Reads JSON-lines from any buffered reader. Blank lines are skipped;
/// errors report the 1-based physical line number.
pub fn read_messages<R: BufRead>(reader: R) -> Result<Corpus, CorpusError> {
    let mut messages = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let msg = parse_line(line_no, &line)?;
        if !seen.insert(msg.id.clone()) {
            return Err(CorpusError::DuplicateId {
                line: line_no,
                id: msg.id,
            });
        }
        messages.push(msg);
    }
    messages.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(Corpus { messages })
}

pub fn load_messages(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let file = File::open(path.as_ref())?;
    read_messages(BufReader::new(file))
}

/// One theme's messages in temporal order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThemeTimeline {
    pub theme: String,
    pub ordered_ids: Vec<String>,
}

impl ThemeTimeline {
    pub fn len(&self) -> usize {
        self.ordered_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ordered_ids.is_empty()
    }

    /// Consecutive `(earlier, later)` id pairs.
    pub fn successions(&self) -> impl Iterator<Item = (&str, &str)> {
        self.ordered_ids
            .windows(2)
            .map(|w| (w[0].as_str(), w[1].as_str()))
    }
}

pub fn build_theme_timelines(corpus: &Corpus) -> BTreeMap<String, ThemeTimeline> {
    let mut grouped: BTreeMap<&str, Vec<&Message>> = BTreeMap::new();
    for m in corpus.messages() {
        grouped.entry(m.theme.as_str()).or_default().push(m);
    }
    grouped
        .into_iter()
        .map(|(theme, mut msgs)| {
            msgs.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.id.cmp(&b.id)));
            let timeline = ThemeTimeline {
                theme: theme.to_string(),
                ordered_ids: msgs.into_iter().map(|m| m.id.clone()).collect(),
            };
            (theme.to_string(), timeline)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn ts(secs: i64) -> DateTime<Utc> {
        Utc.timestamp_opt(secs, 0).unwrap()
    }

    fn msg(id: &str, secs: i64, theme: &str) -> Message {
        Message {
            id: id.into(),
            text: format!("text of {id}"),
            timestamp: ts(secs),
            theme: theme.into(),
            stance: None,
        }
    }

    #[test]
    fn empty_input_gives_empty_corpus() {
        let corpus = read_messages(Cursor::new("")).unwrap();
        assert!(corpus.is_empty());
        assert!(build_theme_timelines(&corpus).is_empty());
    }

    #[test]
    fn three_valid_lines() {
        let input = r#"{"id":"m1","text":"a","timestamp":"2022-03-01T12:00:00Z","theme":"t","stance":"left"}
{"id":"m2","text":"b","timestamp":"2022-03-01T12:00:01Z","theme":"t"}
{"id":"m3","text":"c","timestamp":"2022-03-01T13:00:00+01:00","theme":"u","stance":"lean_to_right"}
"#;
        let corpus = read_messages(Cursor::new(input)).unwrap();
        assert_eq!(corpus.ids().collect::<Vec<_>>(), ["m1", "m2", "m3"]);
        assert_eq!(corpus.get("m1").unwrap().stance, Some(StanceLabel::Left));
        assert_eq!(corpus.get("m3").unwrap().stance, Some(StanceLabel::LeanRight));
        // +01:00 offset normalized to UTC
        assert_eq!(corpus.get("m3").unwrap().timestamp, corpus.get("m1").unwrap().timestamp);
    }

    #[test]
    fn missing_theme_names_line() {
        let input = r#"{"id":"m1","text":"a","timestamp":"2022-03-01T12:00:00Z","theme":"t"}
{"id":"m2","text":"b","timestamp":"2022-03-01T12:00:01Z"}
"#;
        let err = read_messages(Cursor::new(input)).unwrap_err();
        assert!(matches!(err, CorpusError::MissingField { line: 2, field: "theme" }));
        assert!(err.to_string().contains("line 2"));
    }

    #[test]
    fn malformed_and_duplicate_lines() {
        let err = read_messages(Cursor::new("{not json}\n")).unwrap_err();
        assert!(matches!(err, CorpusError::Malformed { line: 1, .. }));

        let dup = r#"{"id":"m1","text":"a","timestamp":"2022-03-01T12:00:00Z","theme":"t"}

{"id":"m1","text":"b","timestamp":"2022-03-01T12:00:01Z","theme":"t"}
"#;
        let err = read_messages(Cursor::new(dup)).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateId { line: 3, .. }));
    }

    #[test]
    fn blank_text_and_bad_stance_rejected() {
        let blank = r#"{"id":"m1","text":"   ","timestamp":"2022-03-01T12:00:00Z","theme":"t"}"#;
        assert!(matches!(
            read_messages(Cursor::new(blank)).unwrap_err(),
            CorpusError::InvalidField { field: "text", .. }
        ));
        let bad = r#"{"id":"m1","text":"x","timestamp":"2022-03-01T12:00:00Z","theme":"t","stance":"centre"}"#;
        assert!(matches!(
            read_messages(Cursor::new(bad)).unwrap_err(),
            CorpusError::InvalidField { field: "stance", .. }
        ));
        let no_offset = r#"{"id":"m1","text":"x","timestamp":"2022-03-01 12:00","theme":"t"}"#;
        assert!(matches!(
            read_messages(Cursor::new(no_offset)).unwrap_err(),
            CorpusError::InvalidField { field: "timestamp", .. }
        ));
    }

    #[test]
    fn subsecond_precision_truncated() {
        let a = parse_timestamp("2022-03-01T12:00:00.999Z").unwrap();
        let b = parse_timestamp("2022-03-01T12:00:00Z").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn timelines_group_and_sort() {
        let corpus = Corpus::from_messages(vec![msg("B", 2, "t1"), msg("C", 1, "t2"), msg("A", 1, "t1")]).unwrap();
        let tl = build_theme_timelines(&corpus);
        assert_eq!(tl["t1"].ordered_ids, ["A", "B"]);
        assert_eq!(tl["t2"].ordered_ids, ["C"]);
    }

    #[test]
    fn timestamp_ties_break_by_id() {
        let corpus = Corpus::from_messages(vec![msg("b", 5, "t"), msg("a", 5, "t")]).unwrap();
        assert_eq!(build_theme_timelines(&corpus)["t"].ordered_ids, ["a", "b"]);
    }

    #[test]
    fn stance_spellings() {
        for (raw, want) in [
            ("left", StanceLabel::Left),
            ("LeanLeft", StanceLabel::LeanLeft),
            ("lean_to_left", StanceLabel::LeanLeft),
            ("LeanToRight", StanceLabel::LeanRight),
            ("lean-right", StanceLabel::LeanRight),
            ("NEUTRAL", StanceLabel::Neutral),
            ("right", StanceLabel::Right),
        ] {
            assert_eq!(raw.parse::<StanceLabel>().unwrap(), want);
        }
        assert!(StanceLabel::Left < StanceLabel::LeanLeft);
        assert!(StanceLabel::LeanRight < StanceLabel::Right);
    }

    #[test]
    fn serialization_is_stable() {
        let input = r#"{"id":"z","text":"a","timestamp":"2022-03-01T12:00:00.5Z","theme":"t","stance":"LeanLeft"}
{"id":"a","text":"b","timestamp":"2022-03-01T12:00:01Z","theme":"t"}
"#;
        let corpus = read_messages(Cursor::new(input)).unwrap();
        let mut out = Vec::new();
        corpus.write_jsonl(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(
            text,
            "{\"id\":\"a\",\"text\":\"b\",\"timestamp\":\"2022-03-01T12:00:01Z\",\"theme\":\"t\"}\n\
             {\"id\":\"z\",\"text\":\"a\",\"timestamp\":\"2022-03-01T12:00:00Z\",\"theme\":\"t\",\"stance\":\"lean_left\"}\n"
        );
        let reread = read_messages(Cursor::new(text)).unwrap();
        assert_eq!(reread, corpus);
    }
}
