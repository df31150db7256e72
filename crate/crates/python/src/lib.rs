//! Python bindings. Arrays cross the boundary as nested lists.

use ndarray::Array2;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use vlkit_core::decode::{self, DecodeConfig, LogitTensor};
use vlkit_core::depth::{self, DepthMap, QuantSpec};
use vlkit_core::grammar::{
    emit_string, parse_records, parse_str, records_from_value, value_from_records, EmitMode, StructuredKind,
};
use vlkit_core::losses::{self, MultiLabelBatch, Target, VluasConfig};
use vlkit_core::mask::{self, LabelMap};
use vlkit_core::metrics::{self, FilterConfig, LabeledBox, RolloutGroup, ScoredBox};
use vlkit_core::model::{run_demo, DemoConfig};
use vlkit_core::tokenizer::{codebook_utilization, quantize_ibq, Codebook, FeatureGrid};
use vlkit_core::{UnifiedVocab, VocabConfig};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Like `err`, with the source chain appended.
fn err_chain(e: impl std::error::Error) -> PyErr {
    let mut msg = e.to_string();
    let mut cur = e.source();
    while let Some(s) = cur {
        msg = format!("{msg}: {s}");
        cur = s.source();
    }
    PyValueError::new_err(msg)
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(err("ragged matrix"));
    }
    Array2::from_shape_vec((r, c), rows.into_iter().flatten().collect()).map_err(err)
}

fn nested(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

type Rows = Vec<Vec<u32>>;

fn label_map(rows: Rows) -> PyResult<LabelMap> {
    let h = rows.len();
    let w = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != w) {
        return Err(err("ragged label map"));
    }
    LabelMap::new(h, w, rows.into_iter().flatten().collect()).map_err(err)
}

fn label_rows(m: &LabelMap) -> Vec<Vec<u32>> {
    m.labels().chunks(m.width().max(1)).take(m.height()).map(<[u32]>::to_vec).collect()
}

fn depth_map(rows: Vec<Vec<f64>>) -> PyResult<DepthMap> {
    let a = matrix(rows)?;
    let (h, w) = a.dim();
    DepthMap::new(h, w, a.into_raw_vec_and_offset().0).map_err(err)
}

fn depth_rows(d: &DepthMap) -> Vec<Vec<f64>> {
    d.depths().chunks(d.width().max(1)).take(d.height()).map(<[f64]>::to_vec).collect()
}

fn kind(name: &str) -> PyResult<StructuredKind> {
    name.parse().map_err(err)
}

fn bbox(b: (u32, u32, u32, u32)) -> PyResult<vlkit_core::grammar::BoundingBox> {
    vlkit_core::grammar::BoundingBox::new(b.0, b.1, b.2, b.3).map_err(err)
}

/// Unified token vocabulary.
#[pyclass(name = "Vocab", module = "vlkit", frozen)]
struct PyVocab {
    inner: UnifiedVocab,
}

#[pymethods]
impl PyVocab {
    #[new]
    #[pyo3(signature = (text_vocab_size=256, image_codebook_size=512, coords_per_axis=2048, depth_bins=1000))]
    fn new(
        text_vocab_size: usize,
        image_codebook_size: usize,
        coords_per_axis: usize,
        depth_bins: usize,
    ) -> PyResult<Self> {
        let cfg = VocabConfig {
            text_vocab_size,
            image_codebook_size,
            coords_per_axis,
            depth_bins,
            ..VocabConfig::default()
        };
        Ok(Self { inner: UnifiedVocab::build(cfg).map_err(err)? })
    }

    #[staticmethod]
    fn from_manifest(text: &str) -> PyResult<Self> {
        Ok(Self { inner: UnifiedVocab::from_manifest(text).map_err(err)? })
    }

    fn manifest(&self) -> String {
        self.inner.manifest()
    }

    fn __len__(&self) -> usize {
        self.inner.total_size()
    }

    /// Token class of an id, e.g. `Coord(X, 155)`.
    fn classify(&self, id: u32) -> PyResult<String> {
        Ok(format!("{:?}", self.inner.classify(id).map_err(err)?))
    }

    /// `(name, base, size)` for each range in id order.
    fn ranges(&self) -> Vec<(&'static str, u32, u32)> {
        self.inner.ranges().map(|(n, r)| (n, r.base, r.size)).collect()
    }

    fn encode_text(&self, s: &str) -> Vec<u32> {
        self.inner.encode_text(s)
    }

    fn decode_text(&self, ids: Vec<u32>) -> PyResult<String> {
        self.inner.decode_text(&ids).map_err(err)
    }

    /// Surface string, special tokens included, to ids.
    fn tokenize(&self, s: &str) -> Vec<u32> {
        self.inner.tokenize(s)
    }

    fn render(&self, ids: Vec<u32>) -> PyResult<String> {
        self.inner.render(&ids).map_err(err)
    }

    /// Distinct token ids of a category name.
    fn category_ids(&self, name: &str) -> Vec<u32> {
        self.inner.category_token_ids(name).as_set()
    }

    /// Parses a structured token string of the given kind into JSON lines.
    #[pyo3(signature = (kind_name, text))]
    fn parse(&self, kind_name: &str, text: &str) -> PyResult<String> {
        let value = parse_str(text, kind(kind_name)?, &self.inner).map_err(err)?;
        Ok(records_from_value(&value).iter().map(|r| r.to_line() + "\n").collect())
    }

    /// Serializes JSON-line records of the given kind into a token string.
    #[pyo3(signature = (kind_name, records, clamp=false))]
    fn emit(&self, kind_name: &str, records: &str, clamp: bool) -> PyResult<String> {
        let recs = parse_records(records).map_err(err_chain)?;
        let value = value_from_records(kind(kind_name)?, &recs).map_err(err)?;
        let mode = if clamp { EmitMode::Clamp } else { EmitMode::Strict };
        emit_string(&value, &self.inner, mode).map_err(err)
    }
}

/// Depth quantization spec.
#[pyclass(name = "DepthSpec", module = "vlkit", frozen)]
struct PyDepthSpec {
    inner: QuantSpec,
}

#[pymethods]
impl PyDepthSpec {
    /// A builtin name (`nyuv2`, `cityscapes`, `ddad`, `open_world`) or
    /// `scheme d_min d_max bins`.
    #[new]
    fn new(spec: &str) -> PyResult<Self> {
        let inner = match QuantSpec::builtin(spec) {
            Some(s) => s,
            None => QuantSpec::parse_header(spec).map_err(err)?,
        };
        Ok(Self { inner })
    }

    #[getter]
    fn bins(&self) -> u32 {
        self.inner.bins
    }

    fn __repr__(&self) -> String {
        format!("DepthSpec('{}')", self.inner.header())
    }

    fn quantize(&self, depths: Vec<Vec<f64>>) -> PyResult<Vec<Vec<u32>>> {
        Ok(label_rows(&depth::quantize(&depth_map(depths)?, &self.inner)))
    }

    fn dequantize(&self, labels: Vec<Vec<u32>>) -> PyResult<Vec<Vec<f64>>> {
        let d = depth::dequantize(&label_map(labels)?, &self.inner).map_err(err)?;
        Ok(depth_rows(&d))
    }
}

#[pyfunction]
fn rle_encode(labels: Vec<Vec<u32>>) -> PyResult<String> {
    Ok(mask::rle_encode(&label_map(labels)?))
}

#[pyfunction]
fn rle_decode(runs: &str, height: usize, width: usize) -> PyResult<Vec<Vec<u32>>> {
    Ok(label_rows(&mask::rle_decode(runs, height, width).map_err(err)?))
}

/// Label map from logits; `categories` lists token ids per category.
#[pyfunction]
#[pyo3(signature = (logits, categories, grid, size, temperature=None, background=false))]
fn decode_semseg(
    logits: Vec<Vec<f64>>,
    categories: Vec<Vec<u32>>,
    grid: (usize, usize),
    size: (usize, usize),
    temperature: Option<f64>,
    background: bool,
) -> PyResult<Vec<Vec<u32>>> {
    let z = LogitTensor::new(matrix(logits)?).map_err(err)?;
    let cfg = DecodeConfig { temperature, background_mode: background, ..DecodeConfig::default() };
    Ok(label_rows(&decode::decode_semseg(&z, &categories, &cfg, grid, size).map_err(err)?))
}

/// Metric depth from logits over the spec's bins.
#[pyfunction]
fn decode_depth(
    logits: Vec<Vec<f64>>,
    spec: &PyDepthSpec,
    grid: (usize, usize),
    size: (usize, usize),
) -> PyResult<Vec<Vec<f64>>> {
    let z = LogitTensor::new(matrix(logits)?).map_err(err)?;
    Ok(depth_rows(&decode::decode_depth(&z, &spec.inner, grid, size).map_err(err)?))
}

/// Codebook indices and utilization for `h*w` feature rows.
#[pyfunction]
#[pyo3(signature = (features, codebook, h, w, temperature=1.0))]
fn quantize(
    features: Vec<Vec<f64>>,
    codebook: Vec<Vec<f64>>,
    h: usize,
    w: usize,
    temperature: f64,
) -> PyResult<(Vec<u32>, f64)> {
    let grid = FeatureGrid::new(h, w, matrix(features)?).map_err(err)?;
    let book = Codebook::new(matrix(codebook)?).map_err(err)?;
    let q = quantize_ibq(&grid, &book, temperature).map_err(err)?;
    let mut usage = vec![0u64; book.k()];
    for &i in &q.indices {
        usage[i as usize] += 1;
    }
    Ok((q.indices, codebook_utilization(&usage)))
}

/// Unified next-token loss. Targets are `("text", id)`, `("image", id)` or
/// `None`. Returns the loss and its gradient.
#[pyfunction]
#[pyo3(signature = (logits, targets, lam=1.0))]
fn vluas_loss(
    logits: Vec<Vec<f64>>,
    targets: Vec<Option<(String, u32)>>,
    lam: f64,
) -> PyResult<(f64, Vec<Vec<f64>>)> {
    let targets = targets
        .into_iter()
        .map(|t| match t {
            None => Ok(Target::None),
            Some((m, id)) if m == "text" => Ok(Target::Text(id)),
            Some((m, id)) if m == "image" => Ok(Target::Image(id)),
            Some((m, _)) => Err(err(format!("unknown modality {m:?}"))),
        })
        .collect::<PyResult<Vec<_>>>()?;
    let cfg = VluasConfig { lambda: lam, ..VluasConfig::default() };
    let out = losses::vluas_loss(&matrix(logits)?, &targets, &cfg).map_err(err)?;
    Ok((out.total, nested(&out.grad)))
}

/// Multi-label loss with `k` hard negatives per position.
#[pyfunction]
fn ntp_m_loss(
    logits: Vec<Vec<f64>>,
    labels: Vec<Vec<u8>>,
    valid: Vec<Vec<bool>>,
    k: usize,
) -> PyResult<(f64, Vec<Vec<f64>>)> {
    let z = matrix(logits)?;
    let dim = z.dim();
    let labels = Array2::from_shape_vec(dim, labels.into_iter().flatten().collect()).map_err(err)?;
    let valid = Array2::from_shape_vec(dim, valid.into_iter().flatten().collect()).map_err(err)?;
    let out = losses::ntp_m_loss(&z, &MultiLabelBatch { labels, valid, k }).map_err(err)?;
    Ok((out.total, nested(&out.grad)))
}

#[pyfunction]
fn box_iou(a: (u32, u32, u32, u32), b: (u32, u32, u32, u32)) -> PyResult<f64> {
    Ok(metrics::box_iou(&bbox(a)?, &bbox(b)?))
}

/// COCO mAP. Per image: predictions `(category, box, score)` and ground
/// truth `(category, box)`.
#[pyfunction]
#[allow(clippy::type_complexity)]
fn map_coco(
    preds: Vec<Vec<(String, (u32, u32, u32, u32), f64)>>,
    gts: Vec<Vec<(String, (u32, u32, u32, u32))>>,
) -> PyResult<f64> {
    let preds = preds
        .into_iter()
        .map(|img| {
            img.into_iter()
                .map(|(category, b, score)| Ok(ScoredBox { category, bbox: bbox(b)?, score }))
                .collect()
        })
        .collect::<PyResult<Vec<Vec<_>>>>()?;
    let gts = gts
        .into_iter()
        .map(|img| img.into_iter().map(|(category, b)| Ok(LabeledBox { category, bbox: bbox(b)? })).collect())
        .collect::<PyResult<Vec<Vec<_>>>>()?;
    Ok(metrics::map_coco(&preds, &gts))
}

#[pyfunction]
#[pyo3(signature = (pred, gt, num_classes, ignore=None))]
fn miou(pred: Vec<Vec<u32>>, gt: Vec<Vec<u32>>, num_classes: u32, ignore: Option<u32>) -> PyResult<f64> {
    metrics::miou(&label_map(pred)?, &label_map(gt)?, num_classes, ignore).map_err(err)
}

#[pyfunction]
fn ciou(pairs: Vec<(Rows, Rows)>) -> PyResult<f64> {
    let pairs =
        pairs.into_iter().map(|(p, g)| Ok((label_map(p)?, label_map(g)?))).collect::<PyResult<Vec<_>>>()?;
    metrics::ciou(&pairs).map_err(err)
}

#[pyfunction]
fn delta1(pred: Vec<Vec<f64>>, gt: Vec<Vec<f64>>) -> PyResult<f64> {
    metrics::delta1(&depth_map(pred)?, &depth_map(gt)?).map_err(err)
}

#[pyfunction]
fn kl_metric(ratios: Vec<f64>) -> PyResult<f64> {
    metrics::kl_metric(&ratios).map_err(err)
}

type Group = (Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>);

fn group((rewards, ratios, advantages): Group) -> RolloutGroup {
    RolloutGroup { rewards, ratios, advantages }
}

/// Indices of the admitted `(rewards, ratios, advantages)` groups.
#[pyfunction]
#[pyo3(signature = (groups, tau_v=0.0, tau_k=0.1))]
fn filter_rollout_groups(groups: Vec<Group>, tau_v: f64, tau_k: f64) -> PyResult<Vec<usize>> {
    let cfg = FilterConfig { tau_v, tau_k, ..FilterConfig::default() };
    cfg.validate().map_err(err)?;
    let mut kept = Vec::new();
    for (i, g) in groups.into_iter().enumerate() {
        if metrics::admission(&group(g), &cfg).map_err(err)?.admitted() {
            kept.push(i);
        }
    }
    Ok(kept)
}

#[pyfunction]
#[pyo3(signature = (rewards, ratios, advantages, eps_low=0.2, eps_high=0.24))]
fn dapo_objective(
    rewards: Vec<f64>,
    ratios: Vec<Vec<f64>>,
    advantages: Vec<Vec<f64>>,
    eps_low: f64,
    eps_high: f64,
) -> PyResult<f64> {
    let cfg = FilterConfig { eps_low, eps_high, ..FilterConfig::default() };
    metrics::dapo_objective(&group((rewards, ratios, advantages)), &cfg).map_err(err)
}

/// `(alpha, log_a, r2)` of `loss = exp(log_a) * compute^-alpha`.
#[pyfunction]
fn fit_power_law(points: Vec<(f64, f64)>) -> PyResult<(f64, f64, f64)> {
    let f = metrics::fit_power_law(&points).map_err(err)?;
    Ok((f.alpha, f.log_a, f.r2))
}

#[pyfunction]
fn counting_reward(pred: u64, gt: u64) -> f64 {
    metrics::counting_reward(pred, gt, &metrics::RewardConfig::default())
}

#[pyfunction]
fn grounding_reward(pred: (u32, u32, u32, u32), gt: (u32, u32, u32, u32)) -> PyResult<f64> {
    let iou = metrics::box_iou(&bbox(pred)?, &bbox(gt)?);
    Ok(metrics::grounding_reward(iou, &metrics::RewardConfig::default()))
}

/// Trains the toy model on its synthetic batch and reports the losses.
#[pyfunction]
#[pyo3(signature = (seed=0, steps=200))]
fn train_demo(py: Python<'_>, seed: u64, steps: usize) -> PyResult<Bound<'_, PyDict>> {
    let (_, report) = run_demo(&DemoConfig { seed, steps, ..DemoConfig::default() }).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("losses", report.losses)?;
    d.set_item("smoothed_start", report.smoothed_start)?;
    d.set_item("smoothed_end", report.smoothed_end)?;
    d.set_item("reduction", report.reduction)?;
    Ok(d)
}

#[pymodule]
fn vlkit(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyVocab>()?;
    m.add_class::<PyDepthSpec>()?;
    m.add_function(wrap_pyfunction!(rle_encode, m)?)?;
    m.add_function(wrap_pyfunction!(rle_decode, m)?)?;
    m.add_function(wrap_pyfunction!(decode_semseg, m)?)?;
    m.add_function(wrap_pyfunction!(decode_depth, m)?)?;
    m.add_function(wrap_pyfunction!(quantize, m)?)?;
    m.add_function(wrap_pyfunction!(vluas_loss, m)?)?;
    m.add_function(wrap_pyfunction!(ntp_m_loss, m)?)?;
    m.add_function(wrap_pyfunction!(box_iou, m)?)?;
    m.add_function(wrap_pyfunction!(map_coco, m)?)?;
    m.add_function(wrap_pyfunction!(miou, m)?)?;
    m.add_function(wrap_pyfunction!(ciou, m)?)?;
    m.add_function(wrap_pyfunction!(delta1, m)?)?;
    m.add_function(wrap_pyfunction!(kl_metric, m)?)?;
    m.add_function(wrap_pyfunction!(filter_rollout_groups, m)?)?;
    m.add_function(wrap_pyfunction!(dapo_objective, m)?)?;
    m.add_function(wrap_pyfunction!(fit_power_law, m)?)?;
    m.add_function(wrap_pyfunction!(counting_reward, m)?)?;
    m.add_function(wrap_pyfunction!(grounding_reward, m)?)?;
    m.add_function(wrap_pyfunction!(train_demo, m)?)?;
    Ok(())
}
