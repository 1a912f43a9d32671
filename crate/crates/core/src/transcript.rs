//! Tagged reasoning transcripts.
//!
//! Layout: an optional `<background>`, one `<question>`, any number of
//! `<search>`/`<result>` pairs keyed on the question, then rounds that each
//! open with `<think>` and may carry further `<search>`/`<result>` pairs, and
//! finally a single terminal `<short_answer>`, `<long_answer>` or `<answer>`
//! (an `<answer>` may instead wrap one of the other two). Whitespace between
//! segments is kept verbatim so rendering a parsed transcript reproduces the
//! input byte for byte.
//!
//! Tokens: every tag is one token; segment content is split on whitespace.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tag {
    Background,
    Question,
    Think,
    Search,
    Result,
    ShortAnswer,
    LongAnswer,
    Answer,
}

impl Tag {
    pub const ALL: [Tag; 8] = [
        Tag::Background,
        Tag::Question,
        Tag::Think,
        Tag::Search,
        Tag::Result,
        Tag::ShortAnswer,
        Tag::LongAnswer,
        Tag::Answer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Tag::Background => "background",
            Tag::Question => "question",
            Tag::Think => "think",
            Tag::Search => "search",
            Tag::Result => "result",
            Tag::ShortAnswer => "short_answer",
            Tag::LongAnswer => "long_answer",
            Tag::Answer => "answer",
        }
    }

    pub fn from_name(name: &str) -> Option<Tag> {
        Tag::ALL.into_iter().find(|t| t.name() == name)
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, Tag::ShortAnswer | Tag::LongAnswer | Tag::Answer)
    }

    pub fn open(self) -> String {
        format!("<{}>", self.name())
    }

    pub fn close(self) -> String {
        format!("</{}>", self.name())
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Grammar violations; `offset` is a byte position in the input text, or the
/// segment index for transcripts assembled programmatically.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TranscriptError {
    #[error("unknown tag <{tag}> at byte {offset}")]
    UnknownTag { tag: String, offset: usize },
    #[error("<{tag}> opened at byte {offset} is never closed")]
    Unclosed { tag: Tag, offset: usize },
    #[error("improper nesting: <{inner}> inside <{outer}> at byte {offset}")]
    Nested { outer: Tag, inner: Tag, offset: usize },
    #[error("closing </{found}> at byte {offset} does not match {expected}")]
    MismatchedClose {
        found: Tag,
        expected: String,
        offset: usize,
    },
    #[error("text outside any tag at byte {offset}")]
    StrayText { offset: usize },
    #[error("<{tag}> at position {offset} is out of order: expected {expected}")]
    OutOfOrder {
        tag: Tag,
        expected: &'static str,
        offset: usize,
    },
    #[error("second terminal answer <{tag}> at position {offset}")]
    DuplicateTerminal { tag: Tag, offset: usize },
    #[error("transcript has no terminal answer")]
    MissingTerminal,
    #[error("segment {index} contains tag-like text `{text}`")]
    TagInContent { index: usize, text: String },
}

type TResult<T> = std::result::Result<T, TranscriptError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub tag: Tag,
    pub text: String,
    /// 0 before the first `<think>`; each `<think>` starts the next round.
    pub round: usize,
}

/// Whitespace inside an `<answer>` wrapper, around the wrapped terminal.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AnswerWrapper {
    pub leading: String,
    pub trailing: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub is_tag: bool,
    /// Segment owning this token.
    pub segment: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Start,
    AfterBackground,
    AfterQuestion,
    InRound,
    AwaitResult { in_round: bool },
    Done,
}

fn advance(phase: Phase, tag: Tag, position: usize) -> TResult<Phase> {
    use Phase::*;
    let out_of_order = |expected| TranscriptError::OutOfOrder {
        tag,
        expected,
        offset: position,
    };
    match (phase, tag) {
        (Done, t) if t.is_terminal() => Err(TranscriptError::DuplicateTerminal { tag, offset: position }),
        (Done, _) => Err(out_of_order("nothing after the terminal answer")),
        (AwaitResult { in_round }, Tag::Result) => Ok(if in_round { InRound } else { AfterQuestion }),
        (AwaitResult { .. }, _) => Err(out_of_order("<result> after <search>")),
        (Start, Tag::Background) => Ok(AfterBackground),
        (Start | AfterBackground, Tag::Question) => Ok(AfterQuestion),
        (Start | AfterBackground, _) => Err(out_of_order("<question> (optionally after <background>)")),
        (AfterQuestion | InRound, Tag::Think) => Ok(InRound),
        (AfterQuestion, Tag::Search) => Ok(AwaitResult { in_round: false }),
        (InRound, Tag::Search) => Ok(AwaitResult { in_round: true }),
        (AfterQuestion | InRound, t) if t.is_terminal() => Ok(Done),
        (AfterQuestion | InRound, _) => Err(out_of_order("<think>, <search> or a terminal answer")),
    }
}

/// Finds a tag-shaped token `<name>` / `</name>` (name = `[a-z_]+`) at the
/// start of `s`. Returns (is_close, name, byte length).
fn tag_at(s: &str) -> Option<(bool, &str, usize)> {
    let b = s.as_bytes();
    if b.first() != Some(&b'<') {
        return None;
    }
    let close = b.get(1) == Some(&b'/');
    let start = if close { 2 } else { 1 };
    let mut end = start;
    while end < b.len() && (b[end].is_ascii_lowercase() || b[end] == b'_') {
        end += 1;
    }
    if end == start || b.get(end) != Some(&b'>') {
        return None;
    }
    Some((close, &s[start..end], end + 1))
}

fn first_tag_like(text: &str) -> Option<String> {
    text.char_indices()
        .filter(|&(_, c)| c == '<')
        .find_map(|(i, _)| tag_at(&text[i..]).map(|(_, _, len)| text[i..i + len].to_owned()))
}

fn is_gap(s: &str) -> bool {
    s.chars().all(char::is_whitespace)
}

/// Serializes as a JSON sidecar; read transcripts back with
/// [`parse_transcript`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReasoningTranscript {
    segments: Vec<Segment>,
    /// `gaps[i]` precedes segment `i`; the last entry trails the transcript.
    gaps: Vec<String>,
    wrapper: Option<AnswerWrapper>,
    #[serde(skip)]
    phase: Phase,
}

impl Default for ReasoningTranscript {
    fn default() -> Self {
        Self::new()
    }
}

impl ReasoningTranscript {
    pub fn new() -> Self {
        Self {
            segments: Vec::new(),
            gaps: vec![String::new()],
            wrapper: None,
            phase: Phase::Start,
        }
    }

    /// Appends a segment separated from the previous one by a newline.
    pub fn push(&mut self, tag: Tag, text: impl Into<String>) -> TResult<()> {
        let gap = if self.segments.is_empty() { "" } else { "\n" };
        let index = self.segments.len();
        self.push_at(gap, tag, text.into(), index)
    }

    /// Appends the terminal answer inside an `<answer>` wrapper.
    pub fn push_wrapped_answer(&mut self, tag: Tag, text: impl Into<String>) -> TResult<()> {
        if !matches!(tag, Tag::ShortAnswer | Tag::LongAnswer) {
            return Err(TranscriptError::Nested {
                outer: Tag::Answer,
                inner: tag,
                offset: self.segments.len(),
            });
        }
        self.push(tag, text)?;
        self.wrapper = Some(AnswerWrapper::default());
        Ok(())
    }

    /// `position` is reported in ordering errors (byte offset when parsing).
    fn push_at(&mut self, gap: &str, tag: Tag, text: String, position: usize) -> TResult<()> {
        let index = self.segments.len();
        if let Some(found) = first_tag_like(&text) {
            return Err(TranscriptError::TagInContent { index, text: found });
        }
        let phase = advance(self.phase, tag, position)?;
        let round = match (tag, self.segments.last()) {
            (Tag::Think, Some(prev)) => prev.round + 1,
            (Tag::Think, None) => 1,
            (_, Some(prev)) => prev.round,
            (_, None) => 0,
        };
        self.phase = phase;
        self.gaps.last_mut().expect("gap list is never empty").push_str(gap);
        self.gaps.push(String::new());
        self.segments.push(Segment { tag, text, round });
        Ok(())
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn is_complete(&self) -> bool {
        self.phase == Phase::Done
    }

    pub fn terminal(&self) -> Option<&Segment> {
        self.segments.last().filter(|s| s.tag.is_terminal())
    }

    pub fn is_wrapped(&self) -> bool {
        self.wrapper.is_some()
    }

    pub fn rounds(&self) -> usize {
        self.segments.last().map_or(0, |s| s.round)
    }

    pub fn count(&self, tag: Tag) -> usize {
        self.segments.iter().filter(|s| s.tag == tag).count()
    }

    pub fn question(&self) -> Option<&str> {
        self.segments
            .iter()
            .find(|s| s.tag == Tag::Question)
            .map(|s| s.text.as_str())
    }

    /// Renders a complete transcript.
    pub fn render(&self) -> TResult<String> {
        if !self.is_complete() {
            return Err(TranscriptError::MissingTerminal);
        }
        Ok(self.render_partial())
    }

    /// Renders whatever has been recorded so far, terminal or not.
    pub fn render_partial(&self) -> String {
        let mut out = String::new();
        for (i, seg) in self.segments.iter().enumerate() {
            out.push_str(&self.gaps[i]);
            let wrapped = seg.tag.is_terminal() && seg.tag != Tag::Answer;
            match (&self.wrapper, wrapped) {
                (Some(w), true) => {
                    out.push_str("<answer>");
                    out.push_str(&w.leading);
                    push_segment(&mut out, seg);
                    out.push_str(&w.trailing);
                    out.push_str("</answer>");
                }
                _ => push_segment(&mut out, seg),
            }
        }
        out.push_str(&self.gaps[self.segments.len()]);
        out
    }

    /// Tokens in rendered order; tags are single tokens.
    pub fn tokens(&self) -> Vec<Token> {
        let mut out = Vec::new();
        for (i, seg) in self.segments.iter().enumerate() {
            let wrapped = self.wrapper.is_some() && seg.tag.is_terminal() && seg.tag != Tag::Answer;
            let tag_token = |text: String| Token {
                text,
                is_tag: true,
                segment: i,
            };
            if wrapped {
                out.push(tag_token(Tag::Answer.open()));
            }
            out.push(tag_token(seg.tag.open()));
            out.extend(seg.text.split_whitespace().map(|w| Token {
                text: w.to_owned(),
                is_tag: false,
                segment: i,
            }));
            out.push(tag_token(seg.tag.close()));
            if wrapped {
                out.push(tag_token(Tag::Answer.close()));
            }
        }
        out
    }

    /// Half-open token ranges of each segment's content.
    pub fn content_spans(&self) -> Vec<(usize, usize)> {
        let mut spans = Vec::with_capacity(self.segments.len());
        let mut pos = 0;
        for seg in &self.segments {
            let wrapped = self.wrapper.is_some() && seg.tag.is_terminal() && seg.tag != Tag::Answer;
            pos += 1 + usize::from(wrapped);
            let n = seg.text.split_whitespace().count();
            spans.push((pos, pos + n));
            pos += n + 1 + usize::from(wrapped);
        }
        spans
    }

    /// Tokens the model produced: think, search and answer segments with
    /// their tags. Input segments and retrieved results are excluded.
    pub fn response_token_count(&self) -> usize {
        self.tokens()
            .iter()
            .filter(|t| {
                matches!(
                    self.segments[t.segment].tag,
                    Tag::Think | Tag::Search | Tag::ShortAnswer | Tag::LongAnswer | Tag::Answer
                )
            })
            .count()
    }
}

fn push_segment(out: &mut String, seg: &Segment) {
    out.push('<');
    out.push_str(seg.tag.name());
    out.push('>');
    out.push_str(&seg.text);
    out.push_str("</");
    out.push_str(seg.tag.name());
    out.push('>');
}

/// Payload of the first `\boxed{...}` (or bare `boxed{...}`), braces matched.
pub fn extract_boxed(text: &str) -> Option<String> {
    let at = text.find("boxed{")?;
    let body = &text[at + "boxed{".len()..];
    let mut depth = 1usize;
    for (i, c) in body.char_indices() {
        match c {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(body[..i].to_owned());
                }
            }
            _ => {}
        }
    }
    None
}

/// The usual terminal payload wording.
pub fn boxed_answer(answer: &str) -> String {
    format!("The final answer is \\boxed{{{answer}}}")
}

/// Parses a complete transcript.
pub fn parse_transcript(input: &str) -> TResult<ReasoningTranscript> {
    let t = parse_inner(input)?;
    if !t.is_complete() {
        return Err(TranscriptError::MissingTerminal);
    }
    Ok(t)
}

/// Renders a complete transcript.
pub fn render_transcript(transcript: &ReasoningTranscript) -> TResult<String> {
    transcript.render()
}

#[derive(Debug, Clone, Copy)]
enum Lexeme {
    Text { start: usize, end: usize },
    Open { tag: Tag, at: usize },
    Close { tag: Tag, at: usize },
}

fn lex(input: &str) -> TResult<Vec<Lexeme>> {
    let mut out = Vec::new();
    let mut text_start = 0;
    let mut i = 0;
    while i < input.len() {
        let rest = &input[i..];
        if let Some((is_close, name, len)) = tag_at(rest) {
            let tag = Tag::from_name(name).ok_or_else(|| TranscriptError::UnknownTag {
                tag: name.to_owned(),
                offset: i,
            })?;
            if text_start < i {
                out.push(Lexeme::Text { start: text_start, end: i });
            }
            let end = i + len;
            out.push(if is_close {
                Lexeme::Close { tag, at: i }
            } else {
                Lexeme::Open { tag, at: i }
            });
            i = end;
            text_start = end;
        } else {
            i += rest.chars().next().map_or(1, char::len_utf8);
        }
    }
    if text_start < input.len() {
        out.push(Lexeme::Text { start: text_start, end: input.len() });
    }
    Ok(out)
}

struct Parser<'a> {
    input: &'a str,
    lexemes: Vec<Lexeme>,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<Lexeme> {
        self.lexemes.get(self.pos).copied()
    }

    /// Optional whitespace-only text; returns it (possibly empty).
    fn gap(&mut self) -> TResult<&'a str> {
        if let Some(Lexeme::Text { start, end }) = self.peek() {
            let s = &self.input[start..end];
            if !is_gap(s) {
                return Err(TranscriptError::StrayText {
                    offset: start + s.find(|c: char| !c.is_whitespace()).unwrap_or(0),
                });
            }
            self.pos += 1;
            return Ok(s);
        }
        Ok("")
    }

    /// Content after an opening tag up to and including its close.
    fn content(&mut self, tag: Tag, opened_at: usize) -> TResult<String> {
        let mut text = "";
        if let Some(Lexeme::Text { start, end }) = self.peek() {
            text = &self.input[start..end];
            self.pos += 1;
        }
        match self.peek() {
            Some(Lexeme::Close { tag: found, .. }) if found == tag => {
                self.pos += 1;
                Ok(text.to_owned())
            }
            Some(Lexeme::Close { tag: found, at, .. }) => Err(TranscriptError::MismatchedClose {
                found,
                expected: format!("</{tag}> opened at byte {opened_at}"),
                offset: at,
            }),
            Some(Lexeme::Open { tag: inner, at, .. }) => Err(TranscriptError::Nested {
                outer: tag,
                inner,
                offset: at,
            }),
            _ => Err(TranscriptError::Unclosed { tag, offset: opened_at }),
        }
    }
}

fn parse_inner(input: &str) -> TResult<ReasoningTranscript> {
    let mut p = Parser {
        input,
        lexemes: lex(input)?,
        pos: 0,
    };
    let mut t = ReasoningTranscript::new();
    loop {
        let gap = p.gap()?;
        let Some(lexeme) = p.peek() else {
            *t.gaps.last_mut().expect("gap list is never empty") = gap.to_owned();
            return Ok(t);
        };
        p.pos += 1;
        let (tag, at) = match lexeme {
            Lexeme::Open { tag, at, .. } => (tag, at),
            Lexeme::Close { tag, at, .. } => {
                return Err(TranscriptError::MismatchedClose {
                    found: tag,
                    expected: "no open tag".into(),
                    offset: at,
                })
            }
            Lexeme::Text { .. } => unreachable!("gap() consumes text"),
        };
        if tag != Tag::Answer {
            let text = p.content(tag, at)?;
            t.push_at(gap, tag, text, at)?;
            continue;
        }
        // `<answer>` either holds plain text or wraps one terminal segment.
        let leading = match (p.peek(), p.lexemes.get(p.pos + 1).copied()) {
            (Some(Lexeme::Open { .. }), _) => Some(""),
            (Some(Lexeme::Text { start, end }), Some(Lexeme::Open { .. })) if is_gap(&input[start..end]) => {
                p.pos += 1;
                Some(&input[start..end])
            }
            _ => None,
        };
        let Some(leading) = leading else {
            let text = p.content(Tag::Answer, at)?;
            t.push_at(gap, Tag::Answer, text, at)?;
            continue;
        };
        let Some(Lexeme::Open { tag: inner, at: inner_at, .. }) = p.peek() else {
            unreachable!("checked above")
        };
        if !matches!(inner, Tag::ShortAnswer | Tag::LongAnswer) {
            return Err(TranscriptError::Nested {
                outer: Tag::Answer,
                inner,
                offset: inner_at,
            });
        }
        p.pos += 1;
        let text = p.content(inner, inner_at)?;
        t.push_at(gap, inner, text, inner_at)?;
        let trailing = p.gap()?;
        match p.peek() {
            Some(Lexeme::Close { tag: Tag::Answer, .. }) => p.pos += 1,
            Some(Lexeme::Open { tag: second, at, .. }) if second.is_terminal() => {
                return Err(TranscriptError::DuplicateTerminal { tag: second, offset: at })
            }
            Some(Lexeme::Open { tag: second, at, .. }) => {
                return Err(TranscriptError::Nested {
                    outer: Tag::Answer,
                    inner: second,
                    offset: at,
                })
            }
            Some(Lexeme::Close { tag: found, at, .. }) => {
                return Err(TranscriptError::MismatchedClose {
                    found,
                    expected: format!("</answer> opened at byte {at}"),
                    offset: at,
                })
            }
            _ => return Err(TranscriptError::Unclosed { tag: Tag::Answer, offset: at }),
        }
        t.wrapper = Some(AnswerWrapper {
            leading: leading.to_owned(),
            trailing: trailing.to_owned(),
        });
    }
}
