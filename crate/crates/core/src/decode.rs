//! Pixel-level predictions from vision-token logits.
//!
//! Semantic maps: per-category mean of the category's token logits, reshape
//! to the token grid, bilinear upsampling, optional temperature softmax, then
//! argmax. Depth maps: bilinear x2 on bin logits, argmax, nearest-neighbour
//! resize, then bin-center dequantization. Argmax ties always go to the
//! lowest index.

use std::io::{Read, Write};

use ndarray::{Array2, ArrayView2};
use thiserror::Error;

use crate::depth::{dequantize, DepthError, DepthMap, QuantSpec};
use crate::grammar::{crop_transform, expand_box, BoundingBox, GrammarError};
use crate::mask::LabelMap;
use crate::vocab::{TokenId, UnifiedVocab, VocabError};

const MAGIC: &[u8; 4] = b"VLLT";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("category {0} has no token ids")]
    EmptyCategory(usize),
    #[error("token id {id} outside the {cols}-column logit tensor")]
    TokenOutOfRange { id: TokenId, cols: usize },
    #[error("invalid decode configuration: {0}")]
    Config(String),
    #[error("logit file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Geometry(#[from] GrammarError),
    #[error(transparent)]
    Depth(#[from] DepthError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
}

/// Raw logits, one row per vision-token position.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitTensor {
    pub values: Array2<f64>,
}

impl LogitTensor {
    pub fn new(values: Array2<f64>) -> Result<Self, DecodeError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DecodeError::Shape("non-finite logit".into()));
        }
        Ok(Self { values })
    }

    pub fn positions(&self) -> usize {
        self.values.nrows()
    }

    pub fn columns(&self) -> usize {
        self.values.ncols()
    }

    /// Columns for the given token ids, in order.
    pub fn select(&self, ids: &[TokenId]) -> Result<LogitTensor, DecodeError> {
        let cols = self.columns();
        if let Some(&id) = ids.iter().find(|&&id| id as usize >= cols) {
            return Err(DecodeError::TokenOutOfRange { id, cols });
        }
        let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        Ok(LogitTensor { values: self.values.select(ndarray::Axis(1), &idx) })
    }

    /// Binary form: magic, version, ndims, dims, then row-major f32 values,
    /// all little-endian.
    pub fn write_to(&self, mut w: impl Write) -> Result<(), DecodeError> {
        let mut buf = Vec::with_capacity(20 + 4 * self.values.len());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&2u32.to_le_bytes());
        for d in [self.positions(), self.columns()] {
            let d = u32::try_from(d).map_err(|_| DecodeError::Format("dimension too large".into()))?;
            buf.extend_from_slice(&d.to_le_bytes());
        }
        for &v in self.values.iter() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    /// Reads the binary form. Three-dimensional `h x w x c` tensors are
    /// flattened to `h*w` positions.
    pub fn read_from(mut r: impl Read) -> Result<Self, DecodeError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let fmt = |m: String| DecodeError::Format(m);
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(fmt("missing VLLT header".into()));
        }
        let word = |i: usize| -> Result<usize, DecodeError> {
            bytes
                .get(i..i + 4)
                .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
                .ok_or_else(|| DecodeError::Format("truncated header".into()))
        };
        let version = word(4)?;
        if version != FORMAT_VERSION as usize {
            return Err(fmt(format!("unsupported version {version}")));
        }
        let ndims = word(8)?;
        if !(2..=3).contains(&ndims) {
            return Err(fmt(format!("expected 2 or 3 dimensions, found {ndims}")));
        }
        let dims: Vec<usize> = (0..ndims).map(|i| word(12 + 4 * i)).collect::<Result<_, _>>()?;
        let cols = dims[ndims - 1];
        let rows: usize = dims[..ndims - 1].iter().product();
        let body = &bytes[12 + 4 * ndims..];
        if body.len() != 4 * rows * cols {
            return Err(fmt(format!(
                "expected {} payload bytes for dims {dims:?}, found {}",
                4 * rows * cols,
                body.len()
            )));
        }
        let values = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
        Self::new(Array2::from_shape_vec((rows, cols), values).expect("length checked"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeConfig {
    /// Softmax temperature over categories; `None` skips the softmax.
    pub temperature: Option<f64>,
    pub background_mode: bool,
    pub background_scale: f64,
    pub background_score: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self { temperature: None, background_mode: false, background_scale: 0.25, background_score: 0.5 }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<(), DecodeError> {
        if let Some(t) = self.temperature {
            if !(t > 0.0 && t.is_finite()) {
                return Err(DecodeError::Config(format!("temperature must be positive, got {t}")));
            }
        }
        Ok(())
    }
}

/// Optional refinement applied to a decoded map given its per-pixel scores.
pub trait PostProcess {
    fn apply(&self, scores: &Array2<f64>, map: &mut LabelMap);
}

/// Per-position mean of each category's token logits.
pub fn aggregate_category_logits(
    z: &LogitTensor,
    categories: &[Vec<TokenId>],
) -> Result<Array2<f64>, DecodeError> {
    let cols = z.columns();
    for (c, ids) in categories.iter().enumerate() {
        if ids.is_empty() {
            return Err(DecodeError::EmptyCategory(c));
        }
        if let Some(&id) = ids.iter().find(|&&id| id as usize >= cols) {
            return Err(DecodeError::TokenOutOfRange { id, cols });
        }
    }
    let mut out = Array2::zeros((z.positions(), categories.len()));
    for (p, row) in z.values.rows().into_iter().enumerate() {
        for (c, ids) in categories.iter().enumerate() {
            let sum: f64 = ids.iter().map(|&id| row[id as usize]).sum();
            out[[p, c]] = sum / ids.len() as f64;
        }
    }
    Ok(out)
}

/// Source index pair and weight of the upper neighbour for each output
/// coordinate, using half-pixel centers.
fn axis_weights(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let x = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = x.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, x - i0 as f64)
        })
        .collect()
}

/// Bilinear resize of a multi-channel grid stored as `(h*w) x c`.
pub fn resize_channels(
    values: ArrayView2<f64>,
    src: (usize, usize),
    dst: (usize, usize),
) -> Result<Array2<f64>, DecodeError> {
    let (h, w) = src;
    let (oh, ow) = dst;
    if h * w == 0 {
        return Err(DecodeError::Shape("source grid is empty".into()));
    }
    if oh * ow == 0 {
        return Err(DecodeError::Shape("target size has a zero dimension".into()));
    }
    if values.nrows() != h * w {
        return Err(DecodeError::Shape(format!("{} positions for a {h}x{w} grid", values.nrows())));
    }
    let c = values.ncols();
    let ry = axis_weights(h, oh);
    let rx = axis_weights(w, ow);
    let mut out = Array2::zeros((oh * ow, c));
    for (oy, &(y0, y1, ty)) in ry.iter().enumerate() {
        for (ox, &(x0, x1, tx)) in rx.iter().enumerate() {
            let o = oy * ow + ox;
            for ch in 0..c {
                let v = |y: usize, x: usize| values[[y * w + x, ch]];
                let top = (1.0 - tx) * v(y0, x0) + tx * v(y0, x1);
                let bot = (1.0 - tx) * v(y1, x0) + tx * v(y1, x1);
                out[[o, ch]] = (1.0 - ty) * top + ty * bot;
            }
        }
    }
    Ok(out)
}

/// Bilinear resize of a single-channel `h x w` matrix.
pub fn bilinear_resize(grid: &Array2<f64>, target: (usize, usize)) -> Result<Array2<f64>, DecodeError> {
    let (h, w) = grid.dim();
    let flat = grid.to_shape((h * w, 1)).map_err(|e| DecodeError::Shape(e.to_string()))?;
    let out = resize_channels(flat.view(), (h, w), target)?;
    Ok(out.into_shape_with_order(target).expect("resize returns target-sized output"))
}

fn argmax(row: impl IntoIterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in row.into_iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

fn softmax_in_place(row: &mut [f64], temperature: f64) {
    let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = ((*v - max) / temperature).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

fn check_grid(z: &LogitTensor, grid: (usize, usize)) -> Result<(), DecodeError> {
    if z.positions() != grid.0 * grid.1 {
        return Err(DecodeError::Shape(format!(
            "{} logit rows for a {}x{} token grid",
            z.positions(),
            grid.0,
            grid.1
        )));
    }
    Ok(())
}

fn labels_from_scores(scores: &Array2<f64>, image: (usize, usize)) -> LabelMap {
    let labels = scores.rows().into_iter().map(|r| argmax(r.iter().copied()) as u32).collect();
    LabelMap::new(image.0, image.1, labels).expect("one score row per pixel")
}

/// Per-pixel category scores at image resolution. In background mode the
/// last column is the constant background score.
pub fn semseg_scores(
    z: &LogitTensor,
    categories: &[Vec<TokenId>],
    cfg: &DecodeConfig,
    grid: (usize, usize),
    image: (usize, usize),
) -> Result<Array2<f64>, DecodeError> {
    cfg.validate()?;
    if categories.is_empty() {
        return Err(DecodeError::Shape("at least one category is required".into()));
    }
    check_grid(z, grid)?;
    let mut agg = aggregate_category_logits(z, categories)?;
    if cfg.background_mode {
        let k = cfg.background_scale;
        agg.mapv_inplace(|v| 1.0 / (1.0 + (-k * v).exp()));
    }
    let mut up = resize_channels(agg.view(), grid, image)?;
    if cfg.background_mode {
        let c = up.ncols();
        let mut with_bg = Array2::from_elem((up.nrows(), c + 1), cfg.background_score);
        with_bg.slice_mut(ndarray::s![.., ..c]).assign(&up);
        return Ok(with_bg);
    }
    if let Some(t) = cfg.temperature {
        for mut row in up.rows_mut() {
            softmax_in_place(row.as_slice_mut().expect("standard layout"), t);
        }
    }
    Ok(up)
}

/// Category index per pixel, `0..C`. With `background_mode` set this is
/// [`decode_semseg_background`].
pub fn decode_semseg(
    z: &LogitTensor,
    categories: &[Vec<TokenId>],
    cfg: &DecodeConfig,
    grid: (usize, usize),
    image: (usize, usize),
) -> Result<LabelMap, DecodeError> {
    let scores = semseg_scores(z, categories, cfg, grid, image)?;
    Ok(labels_from_scores(&scores, image))
}

pub fn decode_semseg_with(
    z: &LogitTensor,
    categories: &[Vec<TokenId>],
    cfg: &DecodeConfig,
    grid: (usize, usize),
    image: (usize, usize),
    post: &dyn PostProcess,
) -> Result<LabelMap, DecodeError> {
    let scores = semseg_scores(z, categories, cfg, grid, image)?;
    let mut map = labels_from_scores(&scores, image);
    post.apply(&scores, &mut map);
    Ok(map)
}

/// Sigmoid scores against a constant background channel. Background pixels
/// get label `C`, the number of categories.
pub fn decode_semseg_background(
    z: &LogitTensor,
    categories: &[Vec<TokenId>],
    cfg: &DecodeConfig,
    grid: (usize, usize),
    image: (usize, usize),
) -> Result<LabelMap, DecodeError> {
    let cfg = DecodeConfig { background_mode: true, ..*cfg };
    decode_semseg(z, categories, &cfg, grid, image)
}

/// Source index for nearest-neighbour resizing, half-pixel aligned.
fn nearest_index(o: usize, src: usize, dst: usize) -> usize {
    ((2 * o + 1) * src / (2 * dst)).min(src - 1)
}

/// Bin label map (1-based) at image resolution.
pub fn decode_depth_labels(
    z: &LogitTensor,
    bins: u32,
    grid: (usize, usize),
    image: (usize, usize),
) -> Result<LabelMap, DecodeError> {
    check_grid(z, grid)?;
    if z.columns() != bins as usize {
        return Err(DecodeError::Shape(format!("{} logit columns for {bins} depth bins", z.columns())));
    }
    if image.0 * image.1 == 0 {
        return Err(DecodeError::Shape("target size has a zero dimension".into()));
    }
    let up_dims = (grid.0 * 2, grid.1 * 2);
    let up = resize_channels(z.values.view(), grid, up_dims)?;
    let bins_up: Vec<u32> = up.rows().into_iter().map(|r| argmax(r.iter().copied()) as u32 + 1).collect();
    let (oh, ow) = image;
    let mut labels = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        let sy = nearest_index(y, up_dims.0, oh);
        for x in 0..ow {
            let sx = nearest_index(x, up_dims.1, ow);
            labels.push(bins_up[sy * up_dims.1 + sx]);
        }
    }
    Ok(LabelMap::new(oh, ow, labels).expect("sized above"))
}

/// Metric depth map from logits over the depth-bin tokens, in bin order.
pub fn decode_depth(
    z: &LogitTensor,
    spec: &QuantSpec,
    grid: (usize, usize),
    image: (usize, usize),
) -> Result<DepthMap, DecodeError> {
    let labels = decode_depth_labels(z, spec.bins, grid, image)?;
    Ok(dequantize(&labels, spec)?)
}

/// Logit columns of the depth-bin tokens from a full-vocabulary tensor.
pub fn depth_bin_slice(z: &LogitTensor, vocab: &UnifiedVocab) -> Result<LogitTensor, DecodeError> {
    let ids: Vec<TokenId> = vocab.depth_bin_range().ids().collect();
    z.select(&ids)
}

/// `[BG, FG]` logit columns from a full-vocabulary tensor.
pub fn fg_bg_slice(z: &LogitTensor, vocab: &UnifiedVocab) -> Result<LogitTensor, DecodeError> {
    z.select(&[vocab.parsing_token("BG")?, vocab.parsing_token("FG")?])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundingConfig {
    pub pad_ratio: f64,
    pub shorter_side: u32,
}

impl Default for GroundingConfig {
    fn default() -> Self {
        Self { pad_ratio: 1.2, shorter_side: 1280 }
    }
}

/// Binary mask on the original image from foreground/background logits
/// predicted over the crop around a grounded box.
///
/// `fg_bg` holds `[BG, FG]` columns for each position of the crop's token
/// grid; `image` is `(height, width)`. The crop is the box expanded by
/// `pad_ratio` and resized so its shorter side equals `shorter_side`. Each
/// image pixel inside the crop takes the decision of the crop pixel its
/// center maps to; pixels outside the crop are 0.
pub fn grounding_then_segment(
    bbox: &BoundingBox,
    fg_bg: &LogitTensor,
    grid: (usize, usize),
    image: (usize, usize),
    cfg: &GroundingConfig,
) -> Result<LabelMap, DecodeError> {
    check_grid(fg_bg, grid)?;
    if fg_bg.columns() != 2 {
        return Err(DecodeError::Shape(format!("expected [BG, FG] columns, found {}", fg_bg.columns())));
    }
    let (ih, iw) = image;
    let (iw32, ih32) = (
        u32::try_from(iw).map_err(|_| DecodeError::Shape("image too large".into()))?,
        u32::try_from(ih).map_err(|_| DecodeError::Shape("image too large".into()))?,
    );
    if bbox.x2 > iw32 || bbox.y2 > ih32 {
        return Err(DecodeError::Shape(format!("box {bbox} outside the {iw}x{ih} image")));
    }
    let crop = expand_box(bbox, cfg.pad_ratio, (iw32, ih32));
    let t = crop_transform(&crop, cfg.shorter_side)?;
    let (tw, th) = (t.target_size.0 as usize, t.target_size.1 as usize);
    let ry = axis_weights(grid.0, th);
    let rx = axis_weights(grid.1, tw);
    let gw = grid.1;
    let sample = |cy: usize, cx: usize| -> u32 {
        let (y0, y1, ty) = ry[cy];
        let (x0, x1, tx) = rx[cx];
        let mut s = [0.0; 2];
        for (ch, out) in s.iter_mut().enumerate() {
            let v = |y: usize, x: usize| fg_bg.values[[y * gw + x, ch]];
            let top = (1.0 - tx) * v(y0, x0) + tx * v(y0, x1);
            let bot = (1.0 - tx) * v(y1, x0) + tx * v(y1, x1);
            *out = (1.0 - ty) * top + ty * bot;
        }
        u32::from(s[1] > s[0])
    };
    let mut map = LabelMap::filled(ih, iw, 0);
    for y in crop.y1 as usize..crop.y2 as usize {
        for x in crop.x1 as usize..crop.x2 as usize {
            let (u, v) = t.forward(x as f64 + 0.5, y as f64 + 0.5);
            let cx = (u.floor().max(0.0) as usize).min(tw - 1);
            let cy = (v.floor().max(0.0) as usize).min(th - 1);
            map.set(y, x, sample(cy, cx));
        }
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn aggregate_mean() {
        let z = LogitTensor::new(array![[0.0, 0.0, 0.0, 1.0, 9.0, 3.0]]).unwrap();
        let a = aggregate_category_logits(&z, &[vec![3, 5], vec![4]]).unwrap();
        assert_eq!(a, array![[2.0, 9.0]]);
        assert_eq!(aggregate_category_logits(&z, &[vec![5, 3]]).unwrap(), array![[2.0]]);
        assert!(matches!(aggregate_category_logits(&z, &[vec![]]), Err(DecodeError::EmptyCategory(0))));
    }

    #[test]
    fn bilinear_identity_and_constant() {
        let g = array![[1.5, -2.0, 0.25], [3.0, 7.0, -1.0]];
        assert_eq!(bilinear_resize(&g, (2, 3)).unwrap(), g);
        let c = bilinear_resize(&array![[4.0]], (5, 3)).unwrap();
        assert!(c.iter().all(|&v| v == 4.0));
        assert!(bilinear_resize(&g, (0, 3)).is_err());
    }

    #[test]
    fn bilinear_two_to_four() {
        // Output centers at 0.5, 1.5, 2.5, 3.5 map to source -0.25, 0.25,
        // 0.75, 1.25, clamped to [0, 1].
        let g = array![[0.0], [8.0]];
        let r = bilinear_resize(&g, (4, 1)).unwrap();
        let want = [0.0, 2.0, 6.0, 8.0];
        for (a, b) in r.iter().zip(want) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn semseg_constant_grid() {
        let z = LogitTensor::new(array![[2.0, 1.0]]).unwrap();
        let cats = [vec![0], vec![1]];
        let m = decode_semseg(&z, &cats, &DecodeConfig::default(), (1, 1), (5, 7)).unwrap();
        assert_eq!((m.height(), m.width()), (5, 7));
        assert!(m.labels().iter().all(|&l| l == 0));
    }

    #[test]
    fn background_mode() {
        let z = LogitTensor::new(array![[-1000.0, -1000.0]]).unwrap();
        let cats = [vec![0], vec![1]];
        let m = decode_semseg_background(&z, &cats, &DecodeConfig::default(), (1, 1), (3, 3)).unwrap();
        assert!(m.labels().iter().all(|&l| l == 2));
        let z = LogitTensor::new(array![[0.0, -5.0]]).unwrap();
        let m = decode_semseg_background(&z, &cats, &DecodeConfig::default(), (1, 1), (2, 2)).unwrap();
        assert!(m.labels().iter().all(|&l| l == 0));
    }

    #[test]
    fn depth_single_token() {
        let spec = QuantSpec::nyuv2();
        let mut v = Array2::zeros((1, 1000));
        v[[0, 499]] = 5.0;
        let d = decode_depth(&LogitTensor::new(v).unwrap(), &spec, (1, 1), (3, 4)).unwrap();
        assert!(d.depths().iter().all(|&x| (x - 4.995).abs() < 1e-12));
        let flat = LogitTensor::new(Array2::zeros((4, 1000))).unwrap();
        let l = decode_depth_labels(&flat, 1000, (2, 2), (4, 4)).unwrap();
        assert!(l.labels().iter().all(|&b| b == 1));
    }

    #[test]
    fn grounding_full_and_empty() {
        let b = BoundingBox::new(10, 20, 30, 60).unwrap();
        let fg = LogitTensor::new(Array2::from_shape_fn((4, 2), |(_, c)| c as f64 * 10.0)).unwrap();
        let m = grounding_then_segment(&b, &fg, (2, 2), (100, 80), &GroundingConfig::default()).unwrap();
        let crop = expand_box(&b, 1.2, (80, 100));
        for y in 0..100 {
            for x in 0..80 {
                let inside = x >= crop.x1 as usize
                    && x < crop.x2 as usize
                    && y >= crop.y1 as usize
                    && y < crop.y2 as usize;
                assert_eq!(m.get(y, x), inside as u32);
            }
        }
        let bg = LogitTensor::new(Array2::from_shape_fn((4, 2), |(_, c)| -(c as f64) * 10.0)).unwrap();
        let m = grounding_then_segment(&b, &bg, (2, 2), (100, 80), &GroundingConfig::default()).unwrap();
        assert!(m.labels().iter().all(|&l| l == 0));
    }

    #[test]
    fn binary_round_trip() {
        let t = LogitTensor::new(array![[1.0, 2.5], [-3.0, 0.125], [4.0, 8.0]]).unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"VLLT");
        assert_eq!(LogitTensor::read_from(&buf[..]).unwrap(), t);
        buf[4] = 9;
        assert!(LogitTensor::read_from(&buf[..]).is_err());
    }
}
