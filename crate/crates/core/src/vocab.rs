//! Unified image-text vocabulary.
//!
//! The id space is split into contiguous, disjoint ranges:
//!
//! | range        | surface form            |
//! |--------------|-------------------------|
//! | text         | raw bytes `0x00..=0xff` |
//! | image codes  | `<img_N>`               |
//! | x coords     | `<x_N>`                 |
//! | y coords     | `<y_N>`                 |
//! | visibility   | `<v_0.0>`, `<v_1.0>`    |
//! | depth bins   | `<custom_1>`..          |
//! | parsing tags | `<box>`, `</box>`, ...  |
//!
//! Text is tokenized byte-wise, so every byte string has an encoding and the
//! round trip is exact. Everything else is an atomic token.

use std::fmt;

use thiserror::Error;

/// Index into a [`UnifiedVocab`].
pub type TokenId = u32;

/// Number of byte-level base tokens.
pub const BYTE_TOKENS: usize = 256;

/// Tags every vocabulary must carry for structured output parsing.
pub const REQUIRED_PARSING_TAGS: [&str; 18] = [
    "box", "/box", "ref", "/ref", "poly", "/poly", "ins", "/ins", "kpt", "/kpt", "person", "/person", "mask",
    "/mask", "FG", "BG", "OTHERS", "depth",
];

const MANIFEST_HEADER: &str = "vlkit-vocab-manifest v1";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VocabError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{axis} coordinate {value} outside [0, {limit})")]
    CoordRange { axis: Axis, value: u32, limit: u32 },
    #[error("token {id} is {found}, expected {expected}")]
    Class { id: TokenId, found: &'static str, expected: &'static str },
    #[error("token id {id} outside vocabulary of size {size}")]
    OutOfVocab { id: TokenId, size: u32 },
    #[error("unknown token literal {0:?}")]
    UnknownLiteral(String),
    #[error("decoded bytes are not valid UTF-8")]
    Utf8,
    #[error("malformed manifest at line {line}: {msg}")]
    Manifest { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Axis::X => f.write_str("x"),
            Axis::Y => f.write_str("y"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabConfig {
    pub text_vocab_size: usize,
    pub image_codebook_size: usize,
    pub coords_per_axis: usize,
    pub depth_bins: usize,
    pub parsing_tokens: Vec<String>,
}

impl Default for VocabConfig {
    fn default() -> Self {
        Self {
            text_vocab_size: BYTE_TOKENS,
            image_codebook_size: 512,
            coords_per_axis: 2048,
            depth_bins: 1000,
            parsing_tokens: REQUIRED_PARSING_TAGS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl VocabConfig {
    pub fn validate(&self) -> Result<(), VocabError> {
        if self.text_vocab_size < BYTE_TOKENS {
            return Err(VocabError::Config(format!(
                "text_vocab_size {} is smaller than the {BYTE_TOKENS} byte tokens",
                self.text_vocab_size
            )));
        }
        for (name, v) in [
            ("image_codebook_size", self.image_codebook_size),
            ("coords_per_axis", self.coords_per_axis),
            ("depth_bins", self.depth_bins),
        ] {
            if v == 0 {
                return Err(VocabError::Config(format!("{name} must be at least 1")));
            }
        }
        for tag in REQUIRED_PARSING_TAGS {
            if !self.parsing_tokens.iter().any(|t| t == tag) {
                return Err(VocabError::Config(format!("missing parsing tag <{tag}>")));
            }
        }
        for (i, t) in self.parsing_tokens.iter().enumerate() {
            if t.is_empty() || t.contains(['<', '>']) {
                return Err(VocabError::Config(format!("invalid parsing tag {t:?}")));
            }
            if self.parsing_tokens[..i].contains(t) {
                return Err(VocabError::Config(format!("duplicate parsing tag <{t}>")));
            }
        }
        let total: u64 = [
            self.text_vocab_size,
            self.image_codebook_size,
            2 * self.coords_per_axis,
            2,
            self.depth_bins,
            self.parsing_tokens.len(),
        ]
        .iter()
        .map(|&v| v as u64)
        .sum();
        if total > u32::MAX as u64 {
            return Err(VocabError::Config("vocabulary exceeds 32-bit id space".into()));
        }
        Ok(())
    }
}

/// Token class of a single id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenClass {
    /// Byte-level text token (or a reserved text id beyond the byte range).
    Text(u32),
    ImageCode(u32),
    Coord(Axis, u32),
    Visibility(bool),
    /// Depth bin label, 1-based.
    DepthBin(u32),
    /// Index into the configured parsing tag list.
    Parsing(u32),
}

impl TokenClass {
    pub fn name(&self) -> &'static str {
        match self {
            TokenClass::Text(_) => "text",
            TokenClass::ImageCode(_) => "image code",
            TokenClass::Coord(..) => "coordinate",
            TokenClass::Visibility(_) => "visibility",
            TokenClass::DepthBin(_) => "depth bin",
            TokenClass::Parsing(_) => "parsing tag",
        }
    }
}

/// A named contiguous id range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IdRange {
    pub base: u32,
    pub size: u32,
}

impl IdRange {
    pub fn contains(&self, id: TokenId) -> bool {
        id >= self.base && id - self.base < self.size
    }

    pub fn end(&self) -> u32 {
        self.base + self.size
    }

    pub fn ids(&self) -> std::ops::Range<u32> {
        self.base..self.end()
    }
}

pub const RANGE_NAMES: [&str; 7] =
    ["text", "image_codes", "x_coords", "y_coords", "visibility", "depth_bins", "parsing"];

/// Immutable partitioned vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnifiedVocab {
    config: VocabConfig,
    ranges: [IdRange; 7],
}

impl UnifiedVocab {
    pub fn build(config: VocabConfig) -> Result<Self, VocabError> {
        config.validate()?;
        let sizes = [
            config.text_vocab_size,
            config.image_codebook_size,
            config.coords_per_axis,
            config.coords_per_axis,
            2,
            config.depth_bins,
            config.parsing_tokens.len(),
        ];
        let mut base = 0u32;
        let ranges = sizes.map(|size| {
            let r = IdRange { base, size: size as u32 };
            base += size as u32;
            r
        });
        Ok(Self { config, ranges })
    }

    pub fn config(&self) -> &VocabConfig {
        &self.config
    }

    pub fn total_size(&self) -> usize {
        self.ranges[6].end() as usize
    }

    /// Ranges in layout order, paired with [`RANGE_NAMES`].
    pub fn ranges(&self) -> impl Iterator<Item = (&'static str, IdRange)> + '_ {
        RANGE_NAMES.iter().copied().zip(self.ranges.iter().copied())
    }

    pub fn text_range(&self) -> IdRange {
        self.ranges[0]
    }
    pub fn image_range(&self) -> IdRange {
        self.ranges[1]
    }
    pub fn coord_range(&self, axis: Axis) -> IdRange {
        match axis {
            Axis::X => self.ranges[2],
            Axis::Y => self.ranges[3],
        }
    }
    pub fn visibility_range(&self) -> IdRange {
        self.ranges[4]
    }
    pub fn depth_bin_range(&self) -> IdRange {
        self.ranges[5]
    }
    pub fn parsing_range(&self) -> IdRange {
        self.ranges[6]
    }

    pub fn coords_per_axis(&self) -> u32 {
        self.config.coords_per_axis as u32
    }

    pub fn classify(&self, id: TokenId) -> Result<TokenClass, VocabError> {
        let r = &self.ranges;
        let class = if r[0].contains(id) {
            TokenClass::Text(id - r[0].base)
        } else if r[1].contains(id) {
            TokenClass::ImageCode(id - r[1].base)
        } else if r[2].contains(id) {
            TokenClass::Coord(Axis::X, id - r[2].base)
        } else if r[3].contains(id) {
            TokenClass::Coord(Axis::Y, id - r[3].base)
        } else if r[4].contains(id) {
            TokenClass::Visibility(id - r[4].base == 1)
        } else if r[5].contains(id) {
            TokenClass::DepthBin(id - r[5].base + 1)
        } else if r[6].contains(id) {
            TokenClass::Parsing(id - r[6].base)
        } else {
            return Err(VocabError::OutOfVocab { id, size: self.total_size() as u32 });
        };
        Ok(class)
    }

    pub fn coord_token(&self, axis: Axis, value: u32) -> Result<TokenId, VocabError> {
        let range = self.coord_range(axis);
        if value >= range.size {
            return Err(VocabError::CoordRange { axis, value, limit: range.size });
        }
        Ok(range.base + value)
    }

    pub fn coord_value(&self, id: TokenId) -> Result<(Axis, u32), VocabError> {
        match self.classify(id)? {
            TokenClass::Coord(axis, v) => Ok((axis, v)),
            other => Err(VocabError::Class { id, found: other.name(), expected: "coordinate" }),
        }
    }

    pub fn image_token(&self, code: u32) -> Result<TokenId, VocabError> {
        let r = self.image_range();
        if code >= r.size {
            return Err(VocabError::Config(format!("image code {code} outside codebook of size {}", r.size)));
        }
        Ok(r.base + code)
    }

    pub fn visibility_token(&self, visible: bool) -> TokenId {
        self.visibility_range().base + visible as u32
    }

    /// Token for 1-based depth bin `bin`.
    pub fn depth_bin_token(&self, bin: u32) -> Result<TokenId, VocabError> {
        let r = self.depth_bin_range();
        if bin == 0 || bin > r.size {
            return Err(VocabError::Config(format!("depth bin {bin} outside 1..={}", r.size)));
        }
        Ok(r.base + bin - 1)
    }

    /// Id of the parsing tag `tag` (without angle brackets).
    pub fn parsing_token(&self, tag: &str) -> Result<TokenId, VocabError> {
        self.config
            .parsing_tokens
            .iter()
            .position(|t| t == tag)
            .map(|i| self.parsing_range().base + i as u32)
            .ok_or_else(|| VocabError::UnknownLiteral(format!("<{tag}>")))
    }

    pub fn parsing_tag(&self, id: TokenId) -> Option<&str> {
        match self.classify(id) {
            Ok(TokenClass::Parsing(i)) => Some(&self.config.parsing_tokens[i as usize]),
            _ => None,
        }
    }

    pub fn encode_bytes(&self, bytes: &[u8]) -> Vec<TokenId> {
        let base = self.text_range().base;
        bytes.iter().map(|&b| base + b as u32).collect()
    }

    pub fn encode_text(&self, s: &str) -> Vec<TokenId> {
        self.encode_bytes(s.as_bytes())
    }

    /// Decodes text and parsing ids; parsing tags render as `<tag>`.
    pub fn decode_bytes(&self, ids: &[TokenId]) -> Result<Vec<u8>, VocabError> {
        let mut out = Vec::with_capacity(ids.len());
        for &id in ids {
            match self.classify(id)? {
                TokenClass::Text(b) if b < BYTE_TOKENS as u32 => out.push(b as u8),
                TokenClass::Parsing(i) => {
                    out.push(b'<');
                    out.extend_from_slice(self.config.parsing_tokens[i as usize].as_bytes());
                    out.push(b'>');
                }
                other => {
                    return Err(VocabError::Class {
                        id,
                        found: other.name(),
                        expected: "text or parsing tag",
                    })
                }
            }
        }
        Ok(out)
    }

    pub fn decode_text(&self, ids: &[TokenId]) -> Result<String, VocabError> {
        String::from_utf8(self.decode_bytes(ids)?).map_err(|_| VocabError::Utf8)
    }

    /// Token ids a category name expands to, in encoder order (with repeats).
    pub fn category_token_ids(&self, name: &str) -> CategoryTokens {
        CategoryTokens { ids: self.encode_text(name) }
    }

    /// Surface literal of a single token.
    pub fn token_literal(&self, id: TokenId) -> Result<String, VocabError> {
        Ok(match self.classify(id)? {
            TokenClass::Text(b) if b < BYTE_TOKENS as u32 => String::from_utf8_lossy(&[b as u8]).into_owned(),
            TokenClass::Text(b) => format!("<text_{b}>"),
            TokenClass::ImageCode(c) => format!("<img_{c}>"),
            TokenClass::Coord(axis, v) => format!("<{axis}_{v}>"),
            TokenClass::Visibility(v) => format!("<v_{}>", if v { "1.0" } else { "0.0" }),
            TokenClass::DepthBin(b) => format!("<custom_{b}>"),
            TokenClass::Parsing(i) => format!("<{}>", self.config.parsing_tokens[i as usize]),
        })
    }

    /// Looks up an atomic token literal such as `<x_12>` or `<box>`.
    pub fn lookup_literal(&self, literal: &str) -> Option<TokenId> {
        let inner = literal.strip_prefix('<')?.strip_suffix('>')?;
        if let Ok(id) = self.parsing_token(inner) {
            return Some(id);
        }
        let number = |s: &str| -> Option<u32> {
            if s.is_empty() || (s.len() > 1 && s.starts_with('0')) {
                return None;
            }
            s.bytes().all(|b| b.is_ascii_digit()).then(|| s.parse().ok()).flatten()
        };
        if let Some(v) = inner.strip_prefix("x_") {
            return self.coord_token(Axis::X, number(v)?).ok();
        }
        if let Some(v) = inner.strip_prefix("y_") {
            return self.coord_token(Axis::Y, number(v)?).ok();
        }
        if let Some(v) = inner.strip_prefix("custom_") {
            return self.depth_bin_token(number(v)?).ok();
        }
        if let Some(v) = inner.strip_prefix("img_") {
            return self.image_token(number(v)?).ok();
        }
        match inner {
            "v_0.0" => Some(self.visibility_token(false)),
            "v_1.0" => Some(self.visibility_token(true)),
            _ => None,
        }
    }

    /// Tokenizes a mixed string: recognised `<...>` literals become atomic
    /// ids, everything else falls back to bytes.
    pub fn tokenize(&self, s: &str) -> Vec<TokenId> {
        let bytes = s.as_bytes();
        let mut out = Vec::with_capacity(bytes.len());
        let mut i = 0;
        while i < bytes.len() {
            if bytes[i] == b'<' {
                if let Some(len) = bytes[i..].iter().take(32).position(|&b| b == b'>') {
                    // Token literals are ASCII, so slicing on these byte offsets is safe.
                    if let Some(id) = s.get(i..i + len + 1).and_then(|lit| self.lookup_literal(lit)) {
                        out.push(id);
                        i += len + 1;
                        continue;
                    }
                }
            }
            out.push(self.text_range().base + bytes[i] as u32);
            i += 1;
        }
        out
    }

    /// Inverse of [`tokenize`](Self::tokenize) for any id sequence.
    pub fn render(&self, ids: &[TokenId]) -> Result<String, VocabError> {
        let mut bytes = Vec::with_capacity(ids.len());
        for &id in ids {
            match self.classify(id)? {
                TokenClass::Text(b) if b < BYTE_TOKENS as u32 => bytes.push(b as u8),
                _ => bytes.extend_from_slice(self.token_literal(id)?.as_bytes()),
            }
        }
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }

    /// Versioned text manifest: one `name base size` line per range.
    pub fn manifest(&self) -> String {
        let mut s = String::from(MANIFEST_HEADER);
        s.push('\n');
        for (name, r) in self.ranges() {
            s.push_str(&format!("{name} {} {}\n", r.base, r.size));
        }
        s.push_str(&format!("parsing_tags {}\n", self.config.parsing_tokens.join(" ")));
        s
    }

    /// Rebuilds a vocabulary from a manifest and checks the recorded layout.
    pub fn from_manifest(text: &str) -> Result<Self, VocabError> {
        let err = |line: usize, msg: &str| VocabError::Manifest { line, msg: msg.to_string() };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == MANIFEST_HEADER => {}
            _ => return Err(err(1, "missing or unsupported header")),
        }
        let mut recorded = Vec::new();
        let mut tags = None;
        for (n, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let name = parts.next().unwrap_or_default();
            if name == "parsing_tags" {
                tags = Some(parts.map(str::to_string).collect::<Vec<_>>());
                continue;
            }
            let nums: Vec<u32> = parts
                .map(|p| p.parse::<u32>().map_err(|_| err(n + 1, "expected integers")))
                .collect::<Result<_, _>>()?;
            if nums.len() != 2 {
                return Err(err(n + 1, "expected `name base size`"));
            }
            recorded.push((name.to_string(), IdRange { base: nums[0], size: nums[1] }));
        }
        let find = |name: &str| {
            recorded
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, r)| r.size as usize)
                .ok_or_else(|| err(0, &format!("missing range {name}")))
        };
        let x = find("x_coords")?;
        if find("y_coords")? != x {
            return Err(err(0, "x and y coordinate ranges differ in size"));
        }
        let config = VocabConfig {
            text_vocab_size: find("text")?,
            image_codebook_size: find("image_codes")?,
            coords_per_axis: x,
            depth_bins: find("depth_bins")?,
            parsing_tokens: tags.ok_or_else(|| err(0, "missing parsing_tags line"))?,
        };
        let vocab = Self::build(config)?;
        for (name, r) in vocab.ranges() {
            if !recorded.iter().any(|(n, rr)| n == name && *rr == r) {
                return Err(err(0, &format!("range {name} does not match layout")));
            }
        }
        Ok(vocab)
    }
}

/// Token ids of one category name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryTokens {
    /// Encoder output, repeats preserved.
    pub ids: Vec<TokenId>,
}

impl CategoryTokens {
    /// Distinct ids, ascending.
    pub fn as_set(&self) -> Vec<TokenId> {
        let mut s = self.ids.clone();
        s.sort_unstable();
        s.dedup();
        s
    }
}
