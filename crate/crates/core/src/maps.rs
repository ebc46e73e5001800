use ndarray::{Array2, Array3, ArrayView2, ArrayView3, Axis};

use crate::error::{Error, Result};
use crate::hand::{Handedness, PARAM_DIM};
use crate::rig::PARTS_PER_HAND;

/// Per-hand parameter channels twice over (left 0..109, right 109..218).
pub const PARAM_CHANNELS: usize = 2 * PARAM_DIM;
/// One center heatmap channel per hand.
pub const CENTER_CHANNELS: usize = 2;
/// Background + 16 part classes per hand.
pub const PART_CHANNELS: usize = 1 + 2 * PARTS_PER_HAND;
/// Cross-hand prior mirrors the parameter layout.
pub const CROSS_CHANNELS: usize = PARAM_CHANNELS;
/// Channel count of the stacked on-disk tensor.
pub const STACK_CHANNELS: usize =
    PARAM_CHANNELS + CENTER_CHANNELS + PART_CHANNELS + CROSS_CHANNELS; // 471

/// Default map resolution (the backbone's output stride applied to a
/// 512 x 512 input).
pub const MAP_SIZE: usize = 64;

/// The four dense map representations at one resolution. Pixel coordinates
/// are (x = column, y = row); arrays index as (channel, y, x).
#[derive(Debug, Clone, PartialEq)]
pub struct MapStack {
    pub param: Array3<f64>,
    pub center: Array3<f64>,
    pub part: Array3<f64>,
    pub cross: Array3<f64>,
}

impl MapStack {
    pub fn zeros(h: usize, w: usize) -> Self {
        MapStack {
            param: Array3::zeros((PARAM_CHANNELS, h, w)),
            center: Array3::zeros((CENTER_CHANNELS, h, w)),
            part: Array3::zeros((PART_CHANNELS, h, w)),
            cross: Array3::zeros((CROSS_CHANNELS, h, w)),
        }
    }

    pub fn height(&self) -> usize {
        self.param.dim().1
    }

    pub fn width(&self) -> usize {
        self.param.dim().2
    }

    /// This hand's 109 parameter channels.
    pub fn param_slice(&self, hand: Handedness) -> ArrayView3<'_, f64> {
        let off = hand.param_offset();
        self.param
            .slice(ndarray::s![off..off + PARAM_DIM, .., ..])
    }

    /// This hand's 109 cross-prior channels (attended with the opposite
    /// hand's center map).
    pub fn cross_slice(&self, hand: Handedness) -> ArrayView3<'_, f64> {
        let off = hand.param_offset();
        self.cross
            .slice(ndarray::s![off..off + PARAM_DIM, .., ..])
    }

    pub fn center_channel(&self, hand: Handedness) -> ArrayView2<'_, f64> {
        self.center.index_axis(Axis(0), hand.center_channel())
    }

    /// This hand's 16 part attention channels.
    pub fn part_slice(&self, hand: Handedness) -> ArrayView3<'_, f64> {
        let base = hand.part_label_base();
        self.part
            .slice(ndarray::s![base..base + PARTS_PER_HAND, .., ..])
    }

    /// Concatenates the four maps into one (471, h, w) f32 tensor.
    pub fn to_flat_tensor(&self) -> (Vec<u32>, Vec<f32>) {
        let (h, w) = (self.height(), self.width());
        let mut data = Vec::with_capacity(STACK_CHANNELS * h * w);
        for arr in [&self.param, &self.center, &self.part, &self.cross] {
            data.extend(arr.iter().map(|&v| v as f32));
        }
        (vec![STACK_CHANNELS as u32, h as u32, w as u32], data)
    }

    pub fn from_flat_tensor(dims: &[u32], data: &[f32]) -> Result<Self> {
        if dims.len() != 3 || dims[0] as usize != STACK_CHANNELS {
            return Err(Error::Format(format!(
                "map stack tensor dims {dims:?}, expected [{STACK_CHANNELS}, h, w]"
            )));
        }
        let (h, w) = (dims[1] as usize, dims[2] as usize);
        if data.len() != STACK_CHANNELS * h * w {
            return Err(Error::Format("map stack payload size mismatch".into()));
        }
        let plane = h * w;
        let mut offset = 0;
        let mut take = |channels: usize| {
            let slice: Vec<f64> = data[offset..offset + channels * plane]
                .iter()
                .map(|&v| v as f64)
                .collect();
            offset += channels * plane;
            Array3::from_shape_vec((channels, h, w), slice).expect("sizes checked")
        };
        Ok(MapStack {
            param: take(PARAM_CHANNELS),
            center: take(CENTER_CHANNELS),
            part: take(PART_CHANNELS),
            cross: take(CROSS_CHANNELS),
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let (dims, data) = self.to_flat_tensor();
        crate::tensor::write_tensor(path, &dims, &data)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let (dims, data) = crate::tensor::read_tensor(path)?;
        MapStack::from_flat_tensor(&dims, &data)
    }
}

/// Hand center: mean of the visible MCP joint projections; `None` when no
/// MCP joint is visible.
pub fn compute_center(
    joints2d: &[(f64, f64)],
    mcp_indices: &[usize; 5],
    visibility: &[bool],
) -> Option<(f64, f64)> {
    let mut sum = (0.0, 0.0);
    let mut n = 0usize;
    for &m in mcp_indices {
        if visibility[m] {
            sum.0 += joints2d[m].0;
            sum.1 += joints2d[m].1;
            n += 1;
        }
    }
    (n > 0).then(|| (sum.0 / n as f64, sum.1 / n as f64))
}

/// Gaussian kernel radius from a 2D bounding box: a tenth of the longer
/// side, rounded, clamped to [2, 16] pixels.
pub fn kernel_from_bbox(width: f64, height: f64) -> f64 {
    (0.1 * width.max(height)).round().clamp(2.0, 16.0)
}

/// One hand's center heatmap spec: subpixel center and kernel radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenterSpec {
    pub center: (f64, f64),
    pub kernel: f64,
}

/// Renders per-hand center heatmaps. The center is rounded to the nearest
/// integer pixel first, so the peak value is exactly 1 there; elsewhere the
/// value is exp(-d^2 / (2 k^2)). Absent hands get an all-zero channel.
pub fn render_center_map(h: usize, w: usize, specs: &[Option<CenterSpec>; 2]) -> Array3<f64> {
    let mut out = Array3::zeros((CENTER_CHANNELS, h, w));
    for (ch, spec) in specs.iter().enumerate() {
        let Some(spec) = spec else { continue };
        let cx = spec.center.0.round();
        let cy = spec.center.1.round();
        let two_k2 = 2.0 * spec.kernel * spec.kernel;
        for y in 0..h {
            for x in 0..w {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                out[(ch, y, x)] = (-d2 / two_k2).exp();
            }
        }
    }
    out
}

/// Softmax over all pixels of one channel; invariant to adding a constant.
pub fn spatial_softmax(map: &ArrayView2<f64>) -> Array2<f64> {
    let max = map.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = map.mapv(|v| (v - max).exp());
    let sum = out.sum();
    out.mapv_inplace(|v| v / sum);
    out
}

/// Softmax across a logit vector (used per pixel across part channels).
pub fn channel_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&v| v / sum).collect()
}

/// One projected vertex with depth and final part label (1..=32).
#[derive(Debug, Clone, Copy)]
pub struct PartSplat {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub label: u16,
}

/// Rasterizes vertex splats (integer pixels within Euclidean distance 1 of
/// the projection) into a one-hot part map plus a label map. Depth conflicts
/// resolve to the smallest z; exact ties keep the earlier splat.
pub fn render_part_segmentation(
    splats: &[PartSplat],
    h: usize,
    w: usize,
) -> Result<(Array3<f64>, Array2<u16>)> {
    let mut labels = Array2::<u16>::zeros((h, w));
    let mut depth = Array2::<f64>::from_elem((h, w), f64::INFINITY);
    for s in splats {
        if s.label == 0 || s.label as usize >= PART_CHANNELS {
            return Err(Error::InvalidLabel(s.label as u32));
        }
        if !(s.x.is_finite() && s.y.is_finite() && s.z.is_finite()) {
            continue;
        }
        let x_lo = (s.x - 1.0).ceil().max(0.0) as i64;
        let x_hi = (s.x + 1.0).floor().min(w as f64 - 1.0) as i64;
        let y_lo = (s.y - 1.0).ceil().max(0.0) as i64;
        let y_hi = (s.y + 1.0).floor().min(h as f64 - 1.0) as i64;
        for py in y_lo..=y_hi {
            for px in x_lo..=x_hi {
                let d2 = (px as f64 - s.x).powi(2) + (py as f64 - s.y).powi(2);
                if d2 <= 1.0 && s.z < depth[(py as usize, px as usize)] {
                    depth[(py as usize, px as usize)] = s.z;
                    labels[(py as usize, px as usize)] = s.label;
                }
            }
        }
    }
    let mut onehot = Array3::<f64>::zeros((PART_CHANNELS, h, w));
    for y in 0..h {
        for x in 0..w {
            onehot[(labels[(y, x)] as usize, y, x)] = 1.0;
        }
    }
    Ok((onehot, labels))
}

/// Appends normalized x and y coordinate channels (each in [-1, 1]) to a
/// feature volume, mirroring a coord-conv input.
pub fn append_coord_channels(feature: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = feature.dim();
    let mut out = Array3::zeros((c + 2, h, w));
    out.slice_mut(ndarray::s![..c, .., ..]).assign(feature);
    for y in 0..h {
        for x in 0..w {
            let xv = if w > 1 {
                -1.0 + 2.0 * x as f64 / (w - 1) as f64
            } else {
                0.0
            };
            let yv = if h > 1 {
                -1.0 + 2.0 * y as f64 / (h - 1) as f64
            } else {
                0.0
            };
            out[(c, y, x)] = xv;
            out[(c + 1, y, x)] = yv;
        }
    }
    out
}
