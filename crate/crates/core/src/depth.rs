//! Metric depth to discrete bin labels and back.
//!
//! Bins are numbered `1..=bins`; label 0 is the ignore label. Binning uses
//! the ceiling of the normalized position so that bin `b` covers the
//! half-open interval `((b-1)/N, b/N]` of the normalized range.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mask::{parse_dims, CodecError, LabelMap};

pub const IGNORE_LABEL: u32 = 0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DepthError {
    #[error("invalid quantization spec: {0}")]
    Spec(String),
    #[error("label {label} exceeds {bins} bins")]
    Range { label: u32, bins: u32 },
    #[error("{0}")]
    Shape(String),
    #[error("depth file: {0}")]
    Format(String),
}

impl From<CodecError> for DepthError {
    fn from(e: CodecError) -> Self {
        DepthError::Format(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Linear,
    LogUniform,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Linear => "linear",
            Scheme::LogUniform => "log_uniform",
        })
    }
}

impl FromStr for Scheme {
    type Err = DepthError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear" => Ok(Scheme::Linear),
            "log" | "log_uniform" => Ok(Scheme::LogUniform),
            _ => Err(DepthError::Spec(format!("unknown scheme {s:?}"))),
        }
    }
}

/// What happens to valid depths outside `[d_min, d_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutOfRange {
    /// Snap to bin 1 or bin N.
    #[default]
    Clamp,
    /// Emit the ignore label.
    Ignore,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantSpec {
    pub scheme: Scheme,
    pub d_min: f64,
    pub d_max: f64,
    pub bins: u32,
    pub out_of_range: OutOfRange,
}

impl QuantSpec {
    pub fn new(scheme: Scheme, d_min: f64, d_max: f64, bins: u32) -> Result<Self, DepthError> {
        let spec = Self { scheme, d_min, d_max, bins, out_of_range: OutOfRange::Clamp };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_out_of_range(mut self, mode: OutOfRange) -> Self {
        self.out_of_range = mode;
        self
    }

    pub fn validate(&self) -> Result<(), DepthError> {
        if self.bins == 0 {
            return Err(DepthError::Spec("bins must be at least 1".into()));
        }
        if !(self.d_min.is_finite() && self.d_max.is_finite()) || self.d_min >= self.d_max {
            return Err(DepthError::Spec(format!(
                "need d_min < d_max, got {} and {}",
                self.d_min, self.d_max
            )));
        }
        let min_ok = match self.scheme {
            Scheme::Linear => self.d_min >= 0.0,
            Scheme::LogUniform => self.d_min > 0.0,
        };
        if !min_ok {
            return Err(DepthError::Spec(format!(
                "d_min {} not allowed for {} scheme",
                self.d_min, self.scheme
            )));
        }
        Ok(())
    }

    pub fn nyuv2() -> Self {
        Self::new(Scheme::Linear, 0.0, 10.0, 1000).expect("valid builtin")
    }

    pub fn cityscapes() -> Self {
        Self::new(Scheme::Linear, 0.0, 80.0, 1000).expect("valid builtin")
    }

    pub fn ddad() -> Self {
        Self::new(Scheme::Linear, 0.05, 120.0, 1000).expect("valid builtin")
    }

    pub fn open_world() -> Self {
        Self::new(Scheme::LogUniform, 0.5, 100.0, 1000)
            .expect("valid builtin")
            .with_out_of_range(OutOfRange::Ignore)
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "nyuv2" => Some(Self::nyuv2()),
            "cityscapes" => Some(Self::cityscapes()),
            "ddad" => Some(Self::ddad()),
            "open_world" | "open-world" => Some(Self::open_world()),
            _ => None,
        }
    }

    pub const BUILTIN_NAMES: [&'static str; 4] = ["nyuv2", "cityscapes", "ddad", "open_world"];

    /// Position of `d` in the range, 0 at `d_min` and 1 at `d_max`.
    fn normalized(&self, d: f64) -> f64 {
        match self.scheme {
            Scheme::Linear => (d - self.d_min) / (self.d_max - self.d_min),
            Scheme::LogUniform => (d / self.d_min).ln() / (self.d_max / self.d_min).ln(),
        }
    }

    fn denormalized(&self, t: f64) -> f64 {
        match self.scheme {
            Scheme::Linear => self.d_min + t * (self.d_max - self.d_min),
            Scheme::LogUniform => self.d_min * (t * (self.d_max / self.d_min).ln()).exp(),
        }
    }

    /// Bin label of one depth value. Zero, negative and non-finite depths
    /// are invalid and map to the ignore label.
    pub fn quantize_value(&self, d: f64) -> u32 {
        if !d.is_finite() || d <= 0.0 {
            return IGNORE_LABEL;
        }
        if (d < self.d_min || d > self.d_max) && self.out_of_range == OutOfRange::Ignore {
            return IGNORE_LABEL;
        }
        let n = self.bins as f64;
        let b = (self.normalized(d) * n).ceil();
        b.clamp(1.0, n) as u32
    }

    /// Bin-center depth, or `None` for the ignore label.
    pub fn dequantize_value(&self, label: u32) -> Result<Option<f64>, DepthError> {
        if label == IGNORE_LABEL {
            return Ok(None);
        }
        if label > self.bins {
            return Err(DepthError::Range { label, bins: self.bins });
        }
        Ok(Some(self.denormalized((label as f64 - 0.5) / self.bins as f64)))
    }

    /// Depth interval `(lo, hi]` covered by a bin.
    pub fn bin_edges(&self, label: u32) -> (f64, f64) {
        let n = self.bins as f64;
        (self.denormalized((label as f64 - 1.0) / n), self.denormalized(label as f64 / n))
    }

    /// One-line header used by the text format.
    pub fn header(&self) -> String {
        format!("{} {} {} {}", self.scheme, self.d_min, self.d_max, self.bins)
    }

    pub fn parse_header(line: &str) -> Result<Self, DepthError> {
        let parts: Vec<&str> = line.split_whitespace().collect();
        let [scheme, lo, hi, bins] = parts[..] else {
            return Err(DepthError::Format(format!("expected `scheme d_min d_max bins`, got {line:?}")));
        };
        let num = |t: &str| t.parse::<f64>().map_err(|_| DepthError::Format(format!("bad number {t:?}")));
        let bins = bins.parse::<u32>().map_err(|_| DepthError::Format(format!("bad bin count {bins:?}")))?;
        let scheme: Scheme = scheme.parse()?;
        let spec = Self::new(scheme, num(lo)?, num(hi)?, bins)?;
        Ok(match scheme {
            Scheme::LogUniform => spec.with_out_of_range(OutOfRange::Ignore),
            Scheme::Linear => spec,
        })
    }
}

/// Row-major metric depths. Zero or NaN marks an invalid pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    height: usize,
    width: usize,
    depths: Vec<f64>,
}

impl DepthMap {
    pub fn new(height: usize, width: usize, depths: Vec<f64>) -> Result<Self, DepthError> {
        if depths.len() != height * width {
            return Err(DepthError::Shape(format!("{} depths for a {height}x{width} map", depths.len())));
        }
        Ok(Self { height, width, depths })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn depths(&self) -> &[f64] {
        &self.depths
    }

    pub fn is_valid(d: f64) -> bool {
        d.is_finite() && d > 0.0
    }

    /// Text form: optional spec header, `H W`, then rows of reals.
    pub fn to_text(&self, spec: Option<&QuantSpec>) -> String {
        let mut s = String::new();
        if let Some(spec) = spec {
            s.push_str(&spec.header());
            s.push('\n');
        }
        s.push_str(&format!("{} {}\n", self.height, self.width));
        for row in self.depths.chunks(self.width.max(1)).take(self.height) {
            let line: Vec<String> = row.iter().map(|d| format!("{d}")).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }

    /// Parses the text form. A first line starting with a scheme name is
    /// read as the spec header.
    pub fn from_text(text: &str) -> Result<(Self, Option<QuantSpec>), DepthError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty()).peekable();
        let mut spec = None;
        if let Some(first) = lines.peek() {
            if first.split_whitespace().next().is_some_and(|t| t.parse::<Scheme>().is_ok()) {
                spec = Some(QuantSpec::parse_header(first)?);
                lines.next();
            }
        }
        let (h, w) = parse_dims(lines.next().unwrap_or_default())?;
        let mut depths = Vec::with_capacity(h * w);
        for (r, line) in lines.enumerate() {
            let before = depths.len();
            for tok in line.split_whitespace() {
                depths.push(
                    tok.parse::<f64>()
                        .map_err(|_| DepthError::Format(format!("row {}: bad depth {tok:?}", r + 1)))?,
                );
            }
            if depths.len() - before != w {
                return Err(DepthError::Format(format!(
                    "row {} has {} values, expected {w}",
                    r + 1,
                    depths.len() - before
                )));
            }
        }
        Ok((Self::new(h, w, depths)?, spec))
    }
}

pub fn quantize(d: &DepthMap, spec: &QuantSpec) -> LabelMap {
    let labels = d.depths.iter().map(|&x| spec.quantize_value(x)).collect();
    LabelMap::new(d.height, d.width, labels).expect("same shape")
}

/// Bin-center depths; ignore labels become 0.0.
pub fn dequantize(m: &LabelMap, spec: &QuantSpec) -> Result<DepthMap, DepthError> {
    let depths = m
        .labels()
        .iter()
        .map(|&l| spec.dequantize_value(l).map(|d| d.unwrap_or(0.0)))
        .collect::<Result<_, _>>()?;
    DepthMap::new(m.height(), m.width(), depths)
}

/// Geometry rescale factor bringing a camera to the target focal length.
pub fn focal_rescale_factor(f_source: f64, f_target: f64) -> Result<f64, DepthError> {
    if !(f_source > 0.0 && f_target > 0.0) {
        return Err(DepthError::Spec(format!(
            "focal lengths must be positive, got {f_source} and {f_target}"
        )));
    }
    Ok(f_target / f_source)
}
