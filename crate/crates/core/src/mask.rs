//! Dense label maps and their run-length string form.
//!
//! A map is scanned row-major into `value:count` runs joined by commas, e.g.
//! `[[0,0],[0,1]]` becomes `0:3,1:1`. Encodings are canonical: adjacent runs
//! never share a value and no count is zero, so decoding rejects anything the
//! encoder would not produce.

use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("zero-length run at byte {pos}")]
    ZeroCount { pos: usize },
    #[error("run at byte {pos} repeats value {value} of the previous run")]
    NonCanonical { pos: usize, value: u32 },
    #[error("runs cover {got} pixels, map has {expected}")]
    Length { expected: u64, got: u64 },
    #[error("label map: {0}")]
    Map(String),
}

/// Row-major grid of non-negative integer labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u32>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u32>) -> Result<Self, CodecError> {
        if labels.len() != height * width {
            return Err(CodecError::Map(format!("{} labels for a {height}x{width} map", labels.len())));
        }
        Ok(Self { height, width, labels })
    }

    pub fn filled(height: usize, width: usize, value: u32) -> Self {
        Self { height, width, labels: vec![value; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [u32] {
        &mut self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: u32) {
        self.labels[row * self.width + col] = v;
    }

    /// Text form: `H W` header, then H lines of W space-separated labels.
    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}\n", self.height, self.width);
        for row in self.labels.chunks(self.width.max(1)).take(self.height) {
            let line: Vec<String> = row.iter().map(u32::to_string).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, CodecError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let (h, w) = parse_dims(lines.next().unwrap_or_default())?;
        let mut labels = Vec::with_capacity(h * w);
        for (r, line) in lines.enumerate() {
            let before = labels.len();
            for tok in line.split_whitespace() {
                labels.push(
                    tok.parse::<u32>()
                        .map_err(|_| CodecError::Map(format!("row {}: bad label {tok:?}", r + 1)))?,
                );
            }
            if labels.len() - before != w {
                return Err(CodecError::Map(format!(
                    "row {} has {} labels, expected {w}",
                    r + 1,
                    labels.len() - before
                )));
            }
        }
        Self::new(h, w, labels)
    }
}

pub(crate) fn parse_dims(line: &str) -> Result<(usize, usize), CodecError> {
    let dims: Vec<usize> = line
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| CodecError::Map(format!("bad header {line:?}, expected `H W`")))?;
    match dims[..] {
        [h, w] => Ok((h, w)),
        _ => Err(CodecError::Map(format!("bad header {line:?}, expected `H W`"))),
    }
}

/// Canonical run-length string of a label map.
pub fn rle_encode(map: &LabelMap) -> String {
    let mut out = String::new();
    let mut iter = map.labels.iter().copied();
    let Some(mut current) = iter.next() else {
        return out;
    };
    let mut count = 1u64;
    let push = |out: &mut String, v: u32, c: u64| {
        if !out.is_empty() {
            out.push(',');
        }
        write!(out, "{v}:{c}").expect("writing to a String cannot fail");
    };
    for v in iter {
        if v == current {
            count += 1;
        } else {
            push(&mut out, current, count);
            current = v;
            count = 1;
        }
    }
    push(&mut out, current, count);
    out
}

/// Decodes a canonical run-length string into a `height` x `width` map.
pub fn rle_decode(s: &str, height: usize, width: usize) -> Result<LabelMap, CodecError> {
    let expected = (height * width) as u64;
    let s = s.trim();
    let mut labels = Vec::with_capacity(height * width);
    let mut total = 0u64;
    let mut prev: Option<u32> = None;
    if !s.is_empty() {
        let mut pos = 0;
        for run in s.split(',') {
            let (v, c) = run.split_once(':').ok_or_else(|| CodecError::Syntax {
                pos,
                msg: format!("expected `value:count`, found {run:?}"),
            })?;
            let digits = |t: &str, what: &str, at: usize| -> Result<u64, CodecError> {
                if t.is_empty() || !t.bytes().all(|b| b.is_ascii_digit()) {
                    return Err(CodecError::Syntax { pos: at, msg: format!("bad {what} {t:?}") });
                }
                t.parse().map_err(|_| CodecError::Syntax { pos: at, msg: format!("{what} {t:?} overflows") })
            };
            let value = digits(v, "value", pos)?;
            let value = u32::try_from(value)
                .map_err(|_| CodecError::Syntax { pos, msg: format!("value {value} overflows u32") })?;
            let count = digits(c, "count", pos + v.len() + 1)?;
            if count == 0 {
                return Err(CodecError::ZeroCount { pos });
            }
            if prev == Some(value) {
                return Err(CodecError::NonCanonical { pos, value });
            }
            total = total.saturating_add(count);
            if total > expected {
                return Err(CodecError::Length { expected, got: total });
            }
            labels.extend(std::iter::repeat_n(value, count as usize));
            prev = Some(value);
            pos += run.len() + 1;
        }
    }
    if total != expected {
        return Err(CodecError::Length { expected, got: total });
    }
    LabelMap::new(height, width, labels)
}

/// Wraps an RLE payload for the language interface.
pub fn wrap_mask(rle: &str) -> String {
    format!("<mask>{rle}</mask>")
}

/// Extracts the payload of the first `<mask>...</mask>` span.
pub fn unwrap_mask(text: &str) -> Option<&str> {
    let start = text.find("<mask>")? + "<mask>".len();
    let len = text[start..].find("</mask>")?;
    Some(&text[start..start + len])
}
