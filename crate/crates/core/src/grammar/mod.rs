//! Structured text outputs: boxes, detections, polygon outlines and poses,
//! expressed with coordinate and parsing tokens.
//!
//! Surface syntax:
//!
//! ```text
//! box        <box><x_a><y_b><x_c><y_d></box>
//! detections (<ref>name</ref>(<box>..</box>)+)+
//! outline    <ins>(<poly>(<x_><y_>){3,20}</poly>)+</ins>
//! poses      (<person><box>..</box>(<kpt><x_><y_><v_1.0></kpt>){16}</person>)+
//! ```
//!
//! Whitespace between tokens is ignored by the parser. The parser is total:
//! every input yields a value or a [`ParseError`] naming the violated rule and
//! the token offset.

mod geometry;
mod records;

pub use geometry::{compress_polygon, crop_transform, expand_box, CropTransform};
pub use records::{parse_records, records_from_value, value_from_records, RecordError, StructuredRecord};

use std::fmt;

use thiserror::Error;

use crate::vocab::{Axis, TokenClass, TokenId, UnifiedVocab, VocabError};

/// Number of MPII joints.
pub const POSE_KEYPOINTS: usize = 16;
/// Point budget for polygon parts.
pub const MAX_POLYGON_POINTS: usize = 20;

/// Axis-aligned box in absolute pixel coordinates (XYXY).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BoundingBox {
    pub x1: u32,
    pub y1: u32,
    pub x2: u32,
    pub y2: u32,
}

impl BoundingBox {
    pub fn new(x1: u32, y1: u32, x2: u32, y2: u32) -> Result<Self, GrammarError> {
        let b = Self { x1, y1, x2, y2 };
        if x1 > x2 || y1 > y2 {
            return Err(GrammarError::Shape(format!("inverted box {b}")));
        }
        Ok(b)
    }

    pub fn width(&self) -> u32 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> u32 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() as f64 * self.height() as f64
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 as f64 + self.x2 as f64) / 2.0, (self.y1 as f64 + self.y2 as f64) / 2.0)
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{})", self.x1, self.y1, self.x2, self.y2)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Detection {
    pub category: String,
    pub boxes: Vec<BoundingBox>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Polygon {
    pub points: Vec<(u32, u32)>,
}

/// One object as one or more polygon parts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceOutline {
    pub parts: Vec<Polygon>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Keypoint {
    pub x: u32,
    pub y: u32,
    pub visible: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoseInstance {
    pub bbox: BoundingBox,
    /// MPII joint order.
    pub keypoints: [Keypoint; POSE_KEYPOINTS],
}

impl PoseInstance {
    /// Mean of the visible keypoints, or of all keypoints when none are visible.
    pub fn keypoint_center(&self) -> (f64, f64) {
        let visible: Vec<_> = self.keypoints.iter().filter(|k| k.visible).collect();
        let pts: Vec<&Keypoint> = if visible.is_empty() { self.keypoints.iter().collect() } else { visible };
        let n = pts.len() as f64;
        let sx: f64 = pts.iter().map(|k| k.x as f64).sum();
        let sy: f64 = pts.iter().map(|k| k.y as f64).sum();
        (sx / n, sy / n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StructuredKind {
    Box,
    Detections,
    Outline,
    Poses,
}

impl std::str::FromStr for StructuredKind {
    type Err = GrammarError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "box" | "boxes" => Ok(Self::Box),
            "detections" | "det" => Ok(Self::Detections),
            "poly" | "polygon" | "outline" => Ok(Self::Outline),
            "pose" | "poses" => Ok(Self::Poses),
            _ => Err(GrammarError::Shape(format!("unknown structured kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StructuredValue {
    Box(BoundingBox),
    Detections(Vec<Detection>),
    Outline(InstanceOutline),
    Poses(Vec<PoseInstance>),
}

impl StructuredValue {
    pub fn kind(&self) -> StructuredKind {
        match self {
            StructuredValue::Box(_) => StructuredKind::Box,
            StructuredValue::Detections(_) => StructuredKind::Detections,
            StructuredValue::Outline(_) => StructuredKind::Outline,
            StructuredValue::Poses(_) => StructuredKind::Poses,
        }
    }
}

/// Which grammar rule a parse failure violated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseRule {
    UnexpectedEnd,
    UnexpectedToken,
    UnbalancedTag,
    AxisOrder,
    OddCoordinateCount,
    PointCount,
    KeypointCount,
    InvertedBox,
    EmptyCategory,
    Empty,
    TrailingInput,
    UnknownToken,
}

impl fmt::Display for ParseRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ParseRule::UnexpectedEnd => "unexpected end",
            ParseRule::UnexpectedToken => "unexpected token",
            ParseRule::UnbalancedTag => "unbalanced tag",
            ParseRule::AxisOrder => "axis order",
            ParseRule::OddCoordinateCount => "odd coordinate count",
            ParseRule::PointCount => "point count",
            ParseRule::KeypointCount => "keypoint count",
            ParseRule::InvertedBox => "inverted box",
            ParseRule::EmptyCategory => "empty category",
            ParseRule::Empty => "empty value",
            ParseRule::TrailingInput => "trailing input",
            ParseRule::UnknownToken => "unknown token",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{rule} at token {offset}: {detail}")]
pub struct ParseError {
    pub rule: ParseRule,
    pub offset: usize,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GrammarError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error("shape error: {0}")]
    Shape(String),
}

/// Coordinate handling during emission.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EmitMode {
    /// Out-of-range coordinates are an error.
    #[default]
    Strict,
    /// Out-of-range coordinates are clamped to the last coordinate token.
    Clamp,
}

struct Emitter<'a> {
    vocab: &'a UnifiedVocab,
    mode: EmitMode,
    out: Vec<TokenId>,
}

impl Emitter<'_> {
    fn tag(&mut self, tag: &str) -> Result<(), GrammarError> {
        self.out.push(self.vocab.parsing_token(tag)?);
        Ok(())
    }

    fn coord(&mut self, axis: Axis, v: u32) -> Result<(), GrammarError> {
        let v = match self.mode {
            EmitMode::Strict => v,
            EmitMode::Clamp => v.min(self.vocab.coords_per_axis() - 1),
        };
        self.out.push(self.vocab.coord_token(axis, v)?);
        Ok(())
    }

    fn point(&mut self, x: u32, y: u32) -> Result<(), GrammarError> {
        self.coord(Axis::X, x)?;
        self.coord(Axis::Y, y)
    }

    fn bbox(&mut self, b: &BoundingBox) -> Result<(), GrammarError> {
        if b.x1 > b.x2 || b.y1 > b.y2 {
            return Err(GrammarError::Shape(format!("inverted box {b}")));
        }
        self.tag("box")?;
        self.point(b.x1, b.y1)?;
        self.point(b.x2, b.y2)?;
        self.tag("/box")
    }
}

/// Serializes a structured value into tokens.
pub fn emit_structured(
    value: &StructuredValue,
    vocab: &UnifiedVocab,
    mode: EmitMode,
) -> Result<Vec<TokenId>, GrammarError> {
    let mut e = Emitter { vocab, mode, out: Vec::new() };
    match value {
        StructuredValue::Box(b) => e.bbox(b)?,
        StructuredValue::Detections(dets) => {
            if dets.is_empty() {
                return Err(GrammarError::Shape("no detections".into()));
            }
            for d in dets {
                if d.category.is_empty() || d.boxes.is_empty() {
                    return Err(GrammarError::Shape(
                        "detection needs a category and at least one box".into(),
                    ));
                }
                if d.category.contains(['<', '>']) {
                    return Err(GrammarError::Shape(format!(
                        "category {:?} contains tag delimiters",
                        d.category
                    )));
                }
                e.tag("ref")?;
                e.out.extend(vocab.encode_text(&d.category));
                e.tag("/ref")?;
                for b in &d.boxes {
                    e.bbox(b)?;
                }
            }
        }
        StructuredValue::Outline(o) => {
            if o.parts.is_empty() {
                return Err(GrammarError::Shape("outline without parts".into()));
            }
            e.tag("ins")?;
            for p in &o.parts {
                if !(3..=MAX_POLYGON_POINTS).contains(&p.points.len()) {
                    return Err(GrammarError::Shape(format!(
                        "polygon with {} points, expected 3..={MAX_POLYGON_POINTS}",
                        p.points.len()
                    )));
                }
                e.tag("poly")?;
                for &(x, y) in &p.points {
                    e.point(x, y)?;
                }
                e.tag("/poly")?;
            }
            e.tag("/ins")?;
        }
        StructuredValue::Poses(poses) => {
            if poses.is_empty() {
                return Err(GrammarError::Shape("no pose instances".into()));
            }
            for p in poses {
                e.tag("person")?;
                e.bbox(&p.bbox)?;
                for k in &p.keypoints {
                    e.tag("kpt")?;
                    e.point(k.x, k.y)?;
                    e.out.push(vocab.visibility_token(k.visible));
                    e.tag("/kpt")?;
                }
                e.tag("/person")?;
            }
        }
    }
    Ok(e.out)
}

/// Emits and renders to the surface string.
pub fn emit_string(
    value: &StructuredValue,
    vocab: &UnifiedVocab,
    mode: EmitMode,
) -> Result<String, GrammarError> {
    Ok(vocab.render(&emit_structured(value, vocab, mode)?)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Tok {
    Tag(TokenId),
    Coord(Axis, u32),
    Vis(bool),
    Byte(u8),
    Other,
}

struct Parser<'a> {
    vocab: &'a UnifiedVocab,
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end_offset: usize,
}

impl<'a> Parser<'a> {
    fn new(vocab: &'a UnifiedVocab, ids: &[TokenId]) -> Self {
        let toks = ids
            .iter()
            .enumerate()
            .map(|(i, &id)| {
                let t = match vocab.classify(id) {
                    Ok(TokenClass::Parsing(_)) => Tok::Tag(id),
                    Ok(TokenClass::Coord(a, v)) => Tok::Coord(a, v),
                    Ok(TokenClass::Visibility(v)) => Tok::Vis(v),
                    Ok(TokenClass::Text(b)) if b < 256 => Tok::Byte(b as u8),
                    _ => Tok::Other,
                };
                (i, t)
            })
            .collect();
        Self { vocab, toks, pos: 0, end_offset: ids.len() }
    }

    fn err(&self, rule: ParseRule, detail: impl Into<String>) -> ParseError {
        ParseError { rule, offset: self.offset(), detail: detail.into() }
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map(|&(o, _)| o).unwrap_or(self.end_offset)
    }

    fn skip_ws(&mut self) {
        while let Some((_, Tok::Byte(b))) = self.toks.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    /// Next significant token, skipping whitespace.
    fn peek(&mut self) -> Option<Tok> {
        self.skip_ws();
        self.toks.get(self.pos).map(|&(_, t)| t)
    }

    fn is_tag(&mut self, tag: &str) -> bool {
        let id = self.vocab.parsing_token(tag).ok();
        matches!(self.peek(), Some(Tok::Tag(t)) if Some(t) == id)
    }

    fn tag_name(&self, t: Tok) -> String {
        match t {
            Tok::Tag(id) => format!("<{}>", self.vocab.parsing_tag(id).unwrap_or("?")),
            Tok::Coord(a, v) => format!("<{a}_{v}>"),
            Tok::Vis(v) => format!("<v_{}>", if v { "1.0" } else { "0.0" }),
            Tok::Byte(b) => format!("{:?}", b as char),
            Tok::Other => "non-structural token".into(),
        }
    }

    fn expect_tag(&mut self, tag: &str) -> Result<(), ParseError> {
        match self.peek() {
            None => Err(self.err(ParseRule::UnexpectedEnd, format!("expected <{tag}>"))),
            Some(_) if self.is_tag(tag) => {
                self.pos += 1;
                Ok(())
            }
            Some(t) => {
                let rule = if tag.starts_with('/') && matches!(t, Tok::Tag(_)) {
                    ParseRule::UnbalancedTag
                } else if matches!(t, Tok::Other) {
                    ParseRule::UnknownToken
                } else {
                    ParseRule::UnexpectedToken
                };
                Err(self.err(rule, format!("expected <{tag}>, found {}", self.tag_name(t))))
            }
        }
    }

    fn coord(&mut self, axis: Axis) -> Result<u32, ParseError> {
        match self.peek() {
            Some(Tok::Coord(a, v)) if a == axis => {
                self.pos += 1;
                Ok(v)
            }
            Some(Tok::Coord(a, _)) => {
                Err(self.err(ParseRule::AxisOrder, format!("expected {axis} coordinate, found {a}")))
            }
            None => Err(self.err(ParseRule::UnexpectedEnd, format!("expected {axis} coordinate"))),
            Some(t) => {
                let rule = if matches!(t, Tok::Tag(_)) {
                    ParseRule::UnbalancedTag
                } else {
                    ParseRule::UnexpectedToken
                };
                Err(self.err(rule, format!("expected {axis} coordinate, found {}", self.tag_name(t))))
            }
        }
    }

    fn bbox(&mut self) -> Result<BoundingBox, ParseError> {
        self.expect_tag("box")?;
        let start = self.offset();
        let x1 = self.coord(Axis::X)?;
        let y1 = self.coord(Axis::Y)?;
        let x2 = self.coord(Axis::X)?;
        let y2 = self.coord(Axis::Y)?;
        self.expect_tag("/box")?;
        if x1 > x2 || y1 > y2 {
            return Err(ParseError {
                rule: ParseRule::InvertedBox,
                offset: start,
                detail: format!("box ({x1},{y1},{x2},{y2}) has x1>x2 or y1>y2"),
            });
        }
        Ok(BoundingBox { x1, y1, x2, y2 })
    }

    fn category(&mut self) -> Result<String, ParseError> {
        self.expect_tag("ref")?;
        let mut bytes = Vec::new();
        while let Some(Tok::Byte(b)) = self.toks.get(self.pos).map(|&(_, t)| t) {
            bytes.push(b);
            self.pos += 1;
        }
        self.expect_tag("/ref")?;
        let name = String::from_utf8_lossy(&bytes).trim().to_string();
        if name.is_empty() {
            return Err(self.err(ParseRule::EmptyCategory, "empty <ref> category"));
        }
        Ok(name)
    }

    fn polygon(&mut self) -> Result<Polygon, ParseError> {
        self.expect_tag("poly")?;
        let start = self.offset();
        let mut coords = Vec::new();
        let mut expected = Axis::X;
        while let Some(Tok::Coord(a, v)) = self.peek() {
            if a != expected {
                return Err(
                    self.err(ParseRule::AxisOrder, format!("expected {expected} coordinate in polygon"))
                );
            }
            coords.push(v);
            self.pos += 1;
            expected = if expected == Axis::X { Axis::Y } else { Axis::X };
        }
        if coords.len() % 2 == 1 {
            return Err(
                self.err(ParseRule::OddCoordinateCount, format!("{} coordinates in polygon", coords.len()))
            );
        }
        self.expect_tag("/poly")?;
        let points: Vec<_> = coords.chunks(2).map(|c| (c[0], c[1])).collect();
        if !(3..=MAX_POLYGON_POINTS).contains(&points.len()) {
            return Err(ParseError {
                rule: ParseRule::PointCount,
                offset: start,
                detail: format!("polygon has {} points, expected 3..={MAX_POLYGON_POINTS}", points.len()),
            });
        }
        Ok(Polygon { points })
    }

    fn keypoint(&mut self) -> Result<Keypoint, ParseError> {
        self.expect_tag("kpt")?;
        let x = self.coord(Axis::X)?;
        let y = self.coord(Axis::Y)?;
        // Visibility is optional; keypoints without it are taken as visible.
        let visible = match self.peek() {
            Some(Tok::Vis(v)) => {
                self.pos += 1;
                v
            }
            _ => true,
        };
        self.expect_tag("/kpt")?;
        Ok(Keypoint { x, y, visible })
    }

    fn person(&mut self) -> Result<PoseInstance, ParseError> {
        self.expect_tag("person")?;
        let bbox = self.bbox()?;
        let start = self.offset();
        let mut kps = Vec::with_capacity(POSE_KEYPOINTS);
        while self.is_tag("kpt") {
            kps.push(self.keypoint()?);
        }
        if kps.len() != POSE_KEYPOINTS {
            return Err(ParseError {
                rule: ParseRule::KeypointCount,
                offset: start,
                detail: format!("{} keypoints, expected {POSE_KEYPOINTS}", kps.len()),
            });
        }
        self.expect_tag("/person")?;
        Ok(PoseInstance { bbox, keypoints: kps.try_into().expect("length checked") })
    }

    fn value(&mut self, kind: StructuredKind) -> Result<StructuredValue, ParseError> {
        let v = match kind {
            StructuredKind::Box => StructuredValue::Box(self.bbox()?),
            StructuredKind::Detections => {
                let mut dets = Vec::new();
                while self.is_tag("ref") {
                    let category = self.category()?;
                    let mut boxes = vec![self.bbox()?];
                    while self.is_tag("box") {
                        boxes.push(self.bbox()?);
                    }
                    dets.push(Detection { category, boxes });
                }
                if dets.is_empty() {
                    return Err(match self.peek() {
                        None => self.err(ParseRule::Empty, "no <ref> block"),
                        Some(_) => self.expect_tag("ref").unwrap_err(),
                    });
                }
                StructuredValue::Detections(dets)
            }
            StructuredKind::Outline => {
                self.expect_tag("ins")?;
                let mut parts = vec![self.polygon()?];
                while self.is_tag("poly") {
                    parts.push(self.polygon()?);
                }
                self.expect_tag("/ins")?;
                StructuredValue::Outline(InstanceOutline { parts })
            }
            StructuredKind::Poses => {
                let mut poses = vec![self.person()?];
                while self.is_tag("person") {
                    poses.push(self.person()?);
                }
                StructuredValue::Poses(poses)
            }
        };
        Ok(v)
    }
}

/// Parses a complete structured value; only whitespace may surround it.
pub fn parse_structured(
    ids: &[TokenId],
    kind: StructuredKind,
    vocab: &UnifiedVocab,
) -> Result<StructuredValue, ParseError> {
    let mut p = Parser::new(vocab, ids);
    let v = p.value(kind)?;
    if let Some(t) = p.peek() {
        return Err(p.err(ParseRule::TrailingInput, format!("unexpected {} after value", p.tag_name(t))));
    }
    Ok(v)
}

/// Parses the first structured value of `kind` embedded in free text, e.g.
/// `"Answer: <box>..</box>"` or a detection list followed by `The answer is 3`.
pub fn extract_structured(
    ids: &[TokenId],
    kind: StructuredKind,
    vocab: &UnifiedVocab,
) -> Result<StructuredValue, ParseError> {
    let opener = match kind {
        StructuredKind::Box => "box",
        StructuredKind::Detections => "ref",
        StructuredKind::Outline => "ins",
        StructuredKind::Poses => "person",
    };
    let open_id = vocab.parsing_token(opener).map_err(|e| ParseError {
        rule: ParseRule::UnknownToken,
        offset: 0,
        detail: e.to_string(),
    })?;
    let start = ids.iter().position(|&t| t == open_id).ok_or(ParseError {
        rule: ParseRule::Empty,
        offset: ids.len(),
        detail: format!("no <{opener}> found"),
    })?;
    let mut p = Parser::new(vocab, ids);
    p.pos = start;
    p.value(kind)
}

/// Parses a surface string (see [`UnifiedVocab::tokenize`]).
pub fn parse_str(s: &str, kind: StructuredKind, vocab: &UnifiedVocab) -> Result<StructuredValue, ParseError> {
    parse_structured(&vocab.tokenize(s), kind, vocab)
}
