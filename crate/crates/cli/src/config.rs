//! Versioned `key: value` configuration file.
//!
//! ```text
//! version: 1
//! # vocabulary layout
//! text_vocab_size: 256
//! image_codebook_size: 512
//! coords_per_axis: 2048
//! depth_bins: 1000
//! parsing_tags: box /box ref /ref ...
//! # depth quantization: a builtin name or `scheme d_min d_max bins`
//! depth_spec: nyuv2
//! ```
//!
//! Every key except `version` is optional. Command-line flags take
//! precedence over values read here.

use std::path::Path;

use anyhow::{bail, Context, Result};
use vlkit_core::depth::QuantSpec;
use vlkit_core::VocabConfig;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FileConfig {
    pub text_vocab_size: Option<usize>,
    pub image_codebook_size: Option<usize>,
    pub coords_per_axis: Option<usize>,
    pub depth_bins: Option<usize>,
    pub parsing_tags: Option<Vec<String>>,
    pub depth_spec: Option<QuantSpec>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = FileConfig::default();
        let mut version = None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once(':') else {
                bail!("line {}: expected `key: value`", n + 1);
            };
            let (key, value) = (key.trim(), value.trim());
            let count = || {
                value.parse::<usize>().with_context(|| format!("line {}: {key} must be an integer", n + 1))
            };
            if version.is_none() && key != "version" {
                bail!("line {}: the first entry must be `version`", n + 1);
            }
            match key {
                "version" => {
                    if version.is_some() {
                        bail!("line {}: duplicate version", n + 1);
                    }
                    let v: u32 =
                        value.parse().with_context(|| format!("line {}: bad version {value:?}", n + 1))?;
                    if v != CONFIG_VERSION {
                        bail!("unsupported config version {v}, expected {CONFIG_VERSION}");
                    }
                    version = Some(v);
                }
                "text_vocab_size" => cfg.text_vocab_size = Some(count()?),
                "image_codebook_size" => cfg.image_codebook_size = Some(count()?),
                "coords_per_axis" => cfg.coords_per_axis = Some(count()?),
                "depth_bins" => cfg.depth_bins = Some(count()?),
                "parsing_tags" => {
                    cfg.parsing_tags = Some(value.split_whitespace().map(str::to_string).collect())
                }
                "depth_spec" => {
                    cfg.depth_spec = Some(parse_spec(value).with_context(|| format!("line {}", n + 1))?)
                }
                other => bail!("line {}: unknown key {other:?}", n + 1),
            }
        }
        if version.is_none() {
            bail!("missing `version` entry");
        }
        Ok(cfg)
    }

    pub fn vocab_config(&self) -> VocabConfig {
        let d = VocabConfig::default();
        VocabConfig {
            text_vocab_size: self.text_vocab_size.unwrap_or(d.text_vocab_size),
            image_codebook_size: self.image_codebook_size.unwrap_or(d.image_codebook_size),
            coords_per_axis: self.coords_per_axis.unwrap_or(d.coords_per_axis),
            depth_bins: self.depth_bins.unwrap_or(d.depth_bins),
            parsing_tokens: self.parsing_tags.clone().unwrap_or(d.parsing_tokens),
        }
    }
}

/// A builtin spec name or a `scheme d_min d_max bins` header line.
pub fn parse_spec(s: &str) -> Result<QuantSpec> {
    let s = s.trim();
    if let Some(spec) = QuantSpec::builtin(s) {
        return Ok(spec);
    }
    QuantSpec::parse_header(s).with_context(|| {
        format!(
            "depth spec {s:?} is neither a builtin ({}) nor `scheme d_min d_max bins`",
            QuantSpec::BUILTIN_NAMES.join(", ")
        )
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_all_keys() {
        let cfg = FileConfig::parse(
            "version: 1\n# c\ncoords_per_axis: 100\ndepth_bins: 10\ndepth_spec: linear 0 5 10\n",
        )
        .unwrap();
        assert_eq!(cfg.coords_per_axis, Some(100));
        assert_eq!(cfg.depth_spec.unwrap().d_max, 5.0);
        assert_eq!(cfg.vocab_config().image_codebook_size, 512);
    }

    #[test]
    fn rejects_bad_files() {
        assert!(FileConfig::parse("depth_bins: 3\n").is_err());
        assert!(FileConfig::parse("version: 2\n").is_err());
        assert!(FileConfig::parse("version: 1\ncolour: red\n").is_err());
        assert!(FileConfig::parse("version: 1\ndepth_bins: many\n").is_err());
        assert!(FileConfig::parse("").is_err());
    }

    #[test]
    fn builtin_and_explicit_specs() {
        assert_eq!(parse_spec("ddad").unwrap(), QuantSpec::ddad());
        assert_eq!(parse_spec("log_uniform 0.5 100 1000").unwrap(), QuantSpec::open_world());
        assert!(parse_spec("nyu").is_err());
    }
}
