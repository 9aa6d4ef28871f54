//! Streaming ingestion of tokenized conversations and assistant-span extraction.
//!
//! Two line-oriented JSONL layouts are understood:
//!
//! * role labeled: `{"messages":[{"role":"assistant","tokens":[5,7]}, ...]}`
//! * raw stream: `{"tokens":[...]}`, where assistant spans are recovered by
//!   scanning for chat-template delimiter token sequences.
//!
//! Readers hold one line in memory at a time. Malformed lines are skipped and
//! counted against an error budget.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::TokenId;

/// Default fraction of malformed lines tolerated before a stream errors.
pub const DEFAULT_ERROR_BUDGET: f64 = 0.01;

/// Mid-stream budget checks start after this many lines; before that a single
/// early bad line would trip any percentage budget.
const BUDGET_WARMUP_LINES: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    System,
    User,
    Assistant,
    Other,
}

impl Role {
    pub fn parse(s: &str) -> Role {
        match s {
            "system" => Role::System,
            "user" => Role::User,
            "assistant" => Role::Assistant,
            _ => Role::Other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub role: Role,
    pub tokens: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ConversationRecord {
    pub messages: Vec<Message>,
}

/// One parsed line of a corpus file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CorpusRecord {
    Labeled(ConversationRecord),
    Raw(Vec<TokenId>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputFormat {
    RoleLabeled,
    RawStream,
}

/// Token sequences marking the start and end of an assistant turn.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DelimiterSpec {
    start: Vec<TokenId>,
    end: Vec<TokenId>,
}

impl DelimiterSpec {
    pub fn new(start: Vec<TokenId>, end: Vec<TokenId>) -> Result<Self> {
        if start.is_empty() {
            return Err(Error::InvalidDelimiters("assistant_start is empty"));
        }
        if end.is_empty() {
            return Err(Error::InvalidDelimiters("assistant_end is empty"));
        }
        if start == end {
            return Err(Error::InvalidDelimiters(
                "assistant_start and assistant_end are identical",
            ));
        }
        Ok(Self { start, end })
    }

    pub fn start(&self) -> &[TokenId] {
        &self.start
    }

    pub fn end(&self) -> &[TokenId] {
        &self.end
    }
}

#[derive(Deserialize)]
struct LabeledLine {
    messages: Vec<LabeledMessage>,
}

#[derive(Deserialize)]
struct LabeledMessage {
    role: String,
    tokens: Vec<TokenId>,
}

#[derive(Deserialize)]
struct RawLine {
    tokens: Vec<TokenId>,
}

fn parse_line(line: &str, format: InputFormat) -> Option<CorpusRecord> {
    match format {
        InputFormat::RoleLabeled => {
            let parsed: LabeledLine = serde_json::from_str(line).ok()?;
            Some(CorpusRecord::Labeled(ConversationRecord {
                messages: parsed
                    .messages
                    .into_iter()
                    .map(|m| Message {
                        role: Role::parse(&m.role),
                        tokens: m.tokens,
                    })
                    .collect(),
            }))
        }
        InputFormat::RawStream => {
            let parsed: RawLine = serde_json::from_str(line).ok()?;
            Some(CorpusRecord::Raw(parsed.tokens))
        }
    }
}

/// Line counters for a [`RecordReader`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReadStats {
    pub lines: u64,
    pub records: u64,
    pub malformed: u64,
    pub first_malformed_line: Option<u64>,
    pub last_malformed_line: Option<u64>,
}

/// Streaming JSONL record reader over any buffered source.
pub struct RecordReader<R> {
    source: R,
    format: InputFormat,
    error_budget: f64,
    buf: String,
    stats: ReadStats,
    line_no: u64,
    done: bool,
}

/// Opens `path` and streams its records.
pub fn read_conversations(
    path: impl AsRef<Path>,
    format: InputFormat,
) -> Result<RecordReader<BufReader<File>>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    Ok(RecordReader::new(BufReader::new(file), format))
}

impl<R: BufRead> RecordReader<R> {
    pub fn new(source: R, format: InputFormat) -> Self {
        Self {
            source,
            format,
            error_budget: DEFAULT_ERROR_BUDGET,
            buf: String::new(),
            stats: ReadStats::default(),
            line_no: 0,
            done: false,
        }
    }

    /// Fraction of lines (in `[0, 1]`) allowed to be malformed.
    pub fn with_error_budget(mut self, budget: f64) -> Self {
        self.error_budget = budget.clamp(0.0, 1.0);
        self
    }

    pub fn stats(&self) -> &ReadStats {
        &self.stats
    }

    fn over_budget(&self) -> bool {
        self.stats.malformed as f64 > self.error_budget * self.stats.lines as f64
    }

    fn budget_error(&self) -> Error {
        Error::MalformedBudgetExceeded {
            malformed: self.stats.malformed,
            lines: self.stats.lines,
            budget: self.error_budget * 100.0,
            first_line: self.stats.first_malformed_line.unwrap_or(0),
            last_line: self.stats.last_malformed_line.unwrap_or(0),
        }
    }
}

impl<R: BufRead> Iterator for RecordReader<R> {
    type Item = Result<CorpusRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        loop {
            self.buf.clear();
            match self.source.read_line(&mut self.buf) {
                Ok(0) => {
                    self.done = true;
                    if self.stats.malformed > 0 && self.over_budget() {
                        return Some(Err(self.budget_error()));
                    }
                    return None;
                }
                Ok(_) => self.line_no += 1,
                Err(e) => {
                    self.done = true;
                    return Some(Err(Error::io("<corpus stream>", e)));
                }
            }
            let line = self.buf.trim();
            if line.is_empty() {
                continue;
            }
            self.stats.lines += 1;
            match parse_line(line, self.format) {
                Some(record) => {
                    self.stats.records += 1;
                    return Some(Ok(record));
                }
                None => {
                    let n = self.line_no;
                    log::debug!("skipping malformed line {n}");
                    self.stats.malformed += 1;
                    self.stats.first_malformed_line.get_or_insert(n);
                    self.stats.last_malformed_line = Some(n);
                    if self.stats.lines >= BUDGET_WARMUP_LINES && self.over_budget() {
                        self.done = true;
                        return Some(Err(self.budget_error()));
                    }
                }
            }
        }
    }
}

/// Spans recovered from one raw token sequence.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DelimitedSpans {
    pub spans: Vec<Vec<TokenId>>,
    /// Start markers with no closing end marker; their span runs to the end
    /// of the sequence.
    pub unterminated: usize,
}

fn find(haystack: &[TokenId], needle: &[TokenId], from: usize) -> Option<usize> {
    if from > haystack.len() || needle.len() > haystack.len() - from {
        return None;
    }
    haystack[from..]
        .windows(needle.len())
        .position(|w| w == needle)
        .map(|p| p + from)
}

/// Extracts the token runs strictly between each `assistant_start` marker and
/// the next `assistant_end` marker. Matching is exact, non-overlapping and
/// left to right; marker tokens are never part of a span.
pub fn extract_spans_by_delimiter(tokens: &[TokenId], spec: &DelimiterSpec) -> DelimitedSpans {
    let mut out = DelimitedSpans::default();
    let mut pos = 0;
    while let Some(s) = find(tokens, &spec.start, pos) {
        let content = s + spec.start.len();
        match find(tokens, &spec.end, content) {
            Some(e) => {
                out.spans.push(tokens[content..e].to_vec());
                pos = e + spec.end.len();
            }
            None => {
                out.spans.push(tokens[content..].to_vec());
                out.unterminated += 1;
                break;
            }
        }
    }
    out
}

/// Counters accumulated while extracting assistant spans.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SpanStats {
    pub records_read: u64,
    pub spans_found: u64,
    pub tokens_emitted: u64,
    pub out_of_range_tokens: u64,
    pub unterminated_spans: u64,
}

/// Turns a record stream into a stream of assistant token spans.
///
/// Out-of-range token ids (`>= vocab_size`) are dropped from spans and
/// counted. Raw records require a [`DelimiterSpec`].
pub struct AssistantSpanStream<I> {
    records: I,
    delimiters: Option<DelimiterSpec>,
    vocab_size: u64,
    pending: std::collections::VecDeque<Vec<TokenId>>,
    stats: SpanStats,
}

impl<I> AssistantSpanStream<I>
where
    I: Iterator<Item = Result<CorpusRecord>>,
{
    pub fn new(records: I, vocab_size: u64, delimiters: Option<DelimiterSpec>) -> Self {
        Self {
            records,
            delimiters,
            vocab_size,
            pending: Default::default(),
            stats: SpanStats::default(),
        }
    }

    pub fn stats(&self) -> &SpanStats {
        &self.stats
    }

    fn filter(&mut self, span: Vec<TokenId>) -> Vec<TokenId> {
        let before = span.len();
        let v = self.vocab_size;
        let kept: Vec<TokenId> = span.into_iter().filter(|&t| u64::from(t) < v).collect();
        self.stats.out_of_range_tokens += (before - kept.len()) as u64;
        kept
    }

    /// Spans of a single record, collected eagerly. Counters are updated.
    pub fn record_spans(&mut self, record: CorpusRecord) -> Result<Vec<Vec<TokenId>>> {
        self.stats.records_read += 1;
        let raw_spans = match record {
            CorpusRecord::Labeled(conv) => conv
                .messages
                .into_iter()
                .filter(|m| m.role == Role::Assistant)
                .map(|m| m.tokens)
                .collect(),
            CorpusRecord::Raw(tokens) => {
                let spec = self.delimiters.as_ref().ok_or(Error::MissingDelimiters)?;
                let found = extract_spans_by_delimiter(&tokens, spec);
                self.stats.unterminated_spans += found.unterminated as u64;
                found.spans
            }
        };
        let mut out = Vec::with_capacity(raw_spans.len());
        for span in raw_spans {
            let span = self.filter(span);
            self.stats.spans_found += 1;
            self.stats.tokens_emitted += span.len() as u64;
            out.push(span);
        }
        Ok(out)
    }
}

impl<I> Iterator for AssistantSpanStream<I>
where
    I: Iterator<Item = Result<CorpusRecord>>,
{
    type Item = Result<Vec<TokenId>>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if let Some(span) = self.pending.pop_front() {
                return Some(Ok(span));
            }
            let record = match self.records.next()? {
                Ok(r) => r,
                Err(e) => return Some(Err(e)),
            };
            match self.record_spans(record) {
                Ok(spans) => self.pending.extend(spans),
                Err(e) => return Some(Err(e)),
            }
        }
    }
}

/// Convenience: assistant spans from an already materialized record list.
pub fn extract_assistant_spans(
    records: impl IntoIterator<Item = ConversationRecord>,
    vocab_size: u64,
) -> AssistantSpanStream<impl Iterator<Item = Result<CorpusRecord>>> {
    AssistantSpanStream::new(
        records.into_iter().map(|r| Ok(CorpusRecord::Labeled(r))),
        vocab_size,
        None,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn delims() -> DelimiterSpec {
        DelimiterSpec::new(vec![100, 101], vec![102]).unwrap()
    }

    fn reader(text: &str, format: InputFormat) -> RecordReader<Cursor<Vec<u8>>> {
        RecordReader::new(Cursor::new(text.as_bytes().to_vec()), format)
    }

    #[test]
    fn assistant_line_maps_directly() {
        let recs: Vec<_> = reader(
            r#"{"messages":[{"role":"assistant","tokens":[5,7]}]}"#,
            InputFormat::RoleLabeled,
        )
        .collect::<Result<_>>()
        .unwrap();
        assert_eq!(
            recs,
            vec![CorpusRecord::Labeled(ConversationRecord {
                messages: vec![Message {
                    role: Role::Assistant,
                    tokens: vec![5, 7]
                }]
            })]
        );
    }

    #[test]
    fn unknown_role_is_other() {
        let recs: Vec<_> = reader(
            r#"{"messages":[{"role":"narrator","tokens":[1]}]}"#,
            InputFormat::RoleLabeled,
        )
        .collect::<Result<_>>()
        .unwrap();
        let CorpusRecord::Labeled(conv) = &recs[0] else {
            panic!("expected labeled record")
        };
        assert_eq!(conv.messages[0].role, Role::Other);
    }

    #[test]
    fn malformed_lines_within_budget_are_skipped() {
        let text = concat!(
            r#"{"messages":[]}"#,
            "\n",
            "not json\n",
            r#"{"messages":[{"role":"user","tokens":[]}]}"#,
            "\n",
            r#"{"messages":[{"role":"assistant","tokens":[1]}]}"#,
            "\n",
        );
        let mut r = reader(text, InputFormat::RoleLabeled).with_error_budget(0.5);
        let recs: Vec<_> = r.by_ref().collect::<Result<_>>().unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(r.stats().malformed, 1);
        assert_eq!(r.stats().first_malformed_line, Some(2));
    }

    #[test]
    fn malformed_budget_exceeded_reports_lines() {
        let text = "x\n{\"messages\":[]}\ny\n";
        let results: Vec<_> = reader(text, InputFormat::RoleLabeled).collect();
        match results.last().unwrap() {
            Err(Error::MalformedBudgetExceeded {
                malformed,
                first_line,
                last_line,
                ..
            }) => {
                assert_eq!(*malformed, 2);
                assert_eq!((*first_line, *last_line), (1, 3));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn budget_trips_mid_stream_on_systematic_failure() {
        let text = "garbage\n".repeat(5000);
        let mut r = reader(&text, InputFormat::RoleLabeled);
        let first = r.next().unwrap();
        assert!(matches!(first, Err(Error::MalformedBudgetExceeded { .. })));
        assert_eq!(r.stats().lines, BUDGET_WARMUP_LINES);
        assert!(r.next().is_none());
    }

    #[test]
    fn missing_file() {
        let err = read_conversations("/definitely/not/here.jsonl", InputFormat::RoleLabeled)
            .err()
            .unwrap();
        assert!(matches!(err, Error::FileNotFound(_)));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn role_spans_skip_non_assistant() {
        let rec = ConversationRecord {
            messages: vec![
                Message {
                    role: Role::User,
                    tokens: vec![1, 2],
                },
                Message {
                    role: Role::Assistant,
                    tokens: vec![3],
                },
                Message {
                    role: Role::Assistant,
                    tokens: vec![4, 5],
                },
            ],
        };
        let mut stream = extract_assistant_spans(vec![rec], 10);
        let spans: Vec<_> = stream.by_ref().collect::<Result<_>>().unwrap();
        assert_eq!(spans, vec![vec![3], vec![4, 5]]);
        assert_eq!(stream.stats().tokens_emitted, 3);
        assert_eq!(stream.stats().spans_found, 2);
    }

    #[test]
    fn record_without_assistant_has_no_spans() {
        let rec = ConversationRecord {
            messages: vec![Message {
                role: Role::System,
                tokens: vec![1],
            }],
        };
        let spans: Vec<_> = extract_assistant_spans(vec![rec], 10)
            .collect::<Result<_>>()
            .unwrap();
        assert!(spans.is_empty());
    }

    #[test]
    fn out_of_range_tokens_are_dropped_and_counted() {
        let rec = ConversationRecord {
            messages: vec![Message {
                role: Role::Assistant,
                tokens: vec![1, 10, 2, 99],
            }],
        };
        let mut stream = extract_assistant_spans(vec![rec], 10);
        let spans: Vec<_> = stream.by_ref().collect::<Result<_>>().unwrap();
        assert_eq!(spans, vec![vec![1, 2]]);
        assert_eq!(stream.stats().out_of_range_tokens, 2);
        assert_eq!(stream.stats().tokens_emitted, 2);
    }

    #[test]
    fn delimiter_scan_basic() {
        let got = extract_spans_by_delimiter(&[9, 100, 101, 7, 8, 102, 3], &delims());
        assert_eq!(got.spans, vec![vec![7, 8]]);
        assert_eq!(got.unterminated, 0);
    }

    #[test]
    fn adjacent_markers_give_empty_span() {
        let got = extract_spans_by_delimiter(&[100, 101, 102], &delims());
        assert_eq!(got.spans, vec![Vec::<TokenId>::new()]);
    }

    #[test]
    fn unterminated_span_runs_to_end() {
        let got = extract_spans_by_delimiter(&[100, 101, 5, 6], &delims());
        assert_eq!(got.spans, vec![vec![5, 6]]);
        assert_eq!(got.unterminated, 1);
    }

    #[test]
    fn degenerate_inputs() {
        assert_eq!(
            extract_spans_by_delimiter(&[], &delims()),
            DelimitedSpans::default()
        );
        assert_eq!(
            extract_spans_by_delimiter(&[100], &delims()),
            DelimitedSpans::default()
        );
        // a lone end marker opens nothing
        assert!(extract_spans_by_delimiter(&[102, 4, 102], &delims())
            .spans
            .is_empty());
    }

    #[test]
    fn multiple_spans_and_nested_start_is_content() {
        let toks = [100, 101, 1, 100, 101, 2, 102, 0, 100, 101, 3, 102];
        let got = extract_spans_by_delimiter(&toks, &delims());
        assert_eq!(got.spans, vec![vec![1, 100, 101, 2], vec![3]]);
    }

    #[test]
    fn delimiter_spec_validation() {
        assert!(DelimiterSpec::new(vec![], vec![1]).is_err());
        assert!(DelimiterSpec::new(vec![1], vec![]).is_err());
        assert!(DelimiterSpec::new(vec![1, 2], vec![1, 2]).is_err());
        assert!(DelimiterSpec::new(vec![1, 2], vec![1]).is_ok());
    }

    #[test]
    fn raw_records_need_delimiters() {
        let text = "{\"tokens\":[100,101,4,102]}\n";
        let recs = reader(text, InputFormat::RawStream);
        let mut stream = AssistantSpanStream::new(recs, 200, None);
        assert!(matches!(stream.next(), Some(Err(Error::MissingDelimiters))));

        let recs = reader(text, InputFormat::RawStream);
        let mut stream = AssistantSpanStream::new(recs, 200, Some(delims()));
        let spans: Vec<_> = stream.by_ref().collect::<Result<_>>().unwrap();
        assert_eq!(spans, vec![vec![4]]);
        assert_eq!(stream.stats().records_read, 1);
    }
}
