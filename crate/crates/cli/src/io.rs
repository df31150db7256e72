use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::ValueEnum;
use rayon::prelude::*;
use serde_json::Value;
use tempfile::NamedTempFile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Format {
    #[default]
    Text,
    Json,
}

/// Ordered key/value report. Text form is one `key: value` line per entry;
/// JSON form is a single object with the same key order.
#[derive(Debug, Default)]
pub struct Report {
    fields: Vec<(String, Value)>,
}

impl Report {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(&mut self, key: impl Into<String>, value: impl Into<Value>) -> &mut Self {
        self.fields.push((key.into(), value.into()));
        self
    }

    pub fn float(&mut self, key: impl Into<String>, v: f64) -> &mut Self {
        let value = serde_json::Number::from_f64(v).map_or(Value::Null, Value::Number);
        self.put(key, value)
    }

    pub fn maybe_float(&mut self, key: impl Into<String>, v: Option<f64>) -> &mut Self {
        match v {
            Some(v) => self.float(key, v),
            None => self.put(key, Value::Null),
        }
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Text => self.fields.iter().map(|(k, v)| format!("{k}: {}\n", text_value(v))).collect(),
            Format::Json => {
                let body: Vec<String> =
                    self.fields.iter().map(|(k, v)| format!("{}:{}", Value::from(k.as_str()), v)).collect();
                format!("{{{}}}\n", body.join(","))
            }
        }
    }
}

fn text_value(v: &Value) -> String {
    match v {
        Value::Null => "none".into(),
        Value::String(s) => s.clone(),
        Value::Number(n) if n.is_f64() => format!("{:?}", n.as_f64().expect("f64")),
        other => other.to_string(),
    }
}

/// Reads a file, or stdin for `-`.
pub fn read_text(path: &Path) -> Result<String> {
    if path.as_os_str() == "-" {
        let mut s = String::new();
        std::io::stdin().read_to_string(&mut s).context("reading stdin")?;
        return Ok(s);
    }
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("reading {}", path.display()))
}

/// Files staged in memory and committed together. Each file goes to a
/// temporary sibling first and is renamed into place, so an error never
/// leaves a partial output behind.
#[derive(Default)]
pub struct Outputs {
    files: Vec<(PathBuf, Vec<u8>)>,
    stdout: Vec<u8>,
}

impl Outputs {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stages `bytes` for `dest`; `None` or `-` means stdout.
    pub fn add(&mut self, dest: Option<&Path>, bytes: impl Into<Vec<u8>>) {
        match dest {
            Some(p) if p.as_os_str() != "-" => self.files.push((p.to_path_buf(), bytes.into())),
            _ => self.stdout.extend(bytes.into()),
        }
    }

    pub fn print(&mut self, text: impl AsRef<str>) {
        self.stdout.extend_from_slice(text.as_ref().as_bytes());
    }

    pub fn commit(self) -> Result<()> {
        let mut staged = Vec::with_capacity(self.files.len());
        for (path, bytes) in &self.files {
            let dir = match path.parent() {
                Some(p) if !p.as_os_str().is_empty() => p,
                _ => Path::new("."),
            };
            let mut tmp = NamedTempFile::new_in(dir)
                .with_context(|| format!("creating temporary file in {}", dir.display()))?;
            tmp.write_all(bytes)
                .and_then(|_| tmp.as_file().sync_all())
                .with_context(|| format!("writing {}", path.display()))?;
            staged.push((tmp, path));
        }
        for (tmp, path) in staged {
            tmp.persist(path).with_context(|| format!("renaming into {}", path.display()))?;
        }
        let mut out = std::io::stdout().lock();
        out.write_all(&self.stdout)?;
        out.flush()?;
        Ok(())
    }
}

/// Maps `f` over `items` on `jobs` threads, keeping input order.
pub fn par_map<T, U, F>(jobs: usize, items: &[T], f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> Result<U> + Sync + Send,
{
    if jobs <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let pool =
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build().context("starting worker threads")?;
    pool.install(|| items.par_iter().map(f).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_formats_keep_order_and_precision() {
        let mut r = Report::new();
        r.float("b", 1.0).float("a", 0.1 + 0.2).put("n", 3).maybe_float("m", None);
        assert_eq!(r.render(Format::Text), "b: 1.0\na: 0.30000000000000004\nn: 3\nm: none\n");
        assert_eq!(r.render(Format::Json), "{\"b\":1.0,\"a\":0.30000000000000004,\"n\":3,\"m\":null}\n");
    }

    #[test]
    fn par_map_keeps_order() {
        let items: Vec<u64> = (0..100).collect();
        let out = par_map(4, &items, |x| Ok(x * x)).unwrap();
        assert_eq!(out, items.iter().map(|x| x * x).collect::<Vec<_>>());
        assert!(par_map(4, &items, |x| if *x == 50 { anyhow::bail!("no") } else { Ok(*x) }).is_err());
    }

    #[test]
    fn failed_commit_leaves_no_file() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("a.txt");
        let mut out = Outputs::new();
        out.add(Some(&good), "x");
        out.add(Some(&dir.path().join("missing/b.txt")), "y");
        assert!(out.commit().is_err());
        assert!(!good.exists());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    }
}
