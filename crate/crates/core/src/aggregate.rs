use ndarray::{Array1, Array2, ArrayView2, ArrayView3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hand::{Camera, HandParams, Handedness, PARAM_DIM};
use crate::maps::{spatial_softmax, MapStack};
use crate::rig::PARTS_PER_HAND;

/// Centers closer than this are rejected as coincident.
pub const COINCIDENT_EPS: f64 = 1e-9;
/// Additive floor keeping the decoded camera scale positive.
pub const SCALE_FLOOR: f64 = 1e-4;
/// Center channel peaks at or below this read as "hand absent".
pub const CENTER_PRESENT_THRESHOLD: f64 = 0.05;
/// Hidden width of the fusion head.
pub const FUSION_HIDDEN: usize = 256;
/// Fusion head input: global (109) + 16 part rows (1744) + cross (109).
pub const FUSION_INPUT: usize = PARAM_DIM + PARTS_PER_HAND * PARAM_DIM + PARAM_DIM;

/// Knobs of the cross-hand interaction model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InteractionConfig {
    /// Repulsion step fraction along the center offset.
    pub alpha: f64,
    /// Interaction field radius multiplier: IF = gamma * (k_l + k_r + 1).
    pub gamma: f64,
    /// Optional cap on the interaction intensity (unclamped when None).
    pub lambda_clamp: Option<f64>,
}

impl Default for InteractionConfig {
    fn default() -> Self {
        InteractionConfig {
            alpha: 0.5,
            gamma: 2.0,
            lambda_clamp: None,
        }
    }
}

impl InteractionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::Format(format!("alpha {} must be >= 0", self.alpha)));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::Format(format!("gamma {} must be > 0", self.gamma)));
        }
        if let Some(c) = self.lambda_clamp {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::Format(format!("lambda clamp {c} must be > 0")));
            }
        }
        Ok(())
    }
}

/// Pushes overlapping hand centers apart along their offset direction.
/// With d = |c_l - c_r| and the contact distance k_l + k_r + 1: centers
/// further apart than that are unchanged; otherwise each moves by
/// alpha * (k_l + k_r + 1 - d) / d times the offset, preserving the midpoint
/// and growing the distance to d + 2 alpha (k_l + k_r + 1 - d).
pub fn collision_aware_repulsion(
    c_l: (f64, f64),
    c_r: (f64, f64),
    k_l: f64,
    k_r: f64,
    alpha: f64,
) -> Result<((f64, f64), (f64, f64))> {
    let dx = c_l.0 - c_r.0;
    let dy = c_l.1 - c_r.1;
    let d = (dx * dx + dy * dy).sqrt();
    if d < COINCIDENT_EPS {
        return Err(Error::CoincidentCenters(d));
    }
    let contact = k_l + k_r + 1.0;
    if d >= contact {
        return Ok((c_l, c_r));
    }
    let scale = alpha * (contact - d) / d;
    Ok((
        (c_l.0 + scale * dx, c_l.1 + scale * dy),
        (c_r.0 - scale * dx, c_r.1 - scale * dy),
    ))
}

/// Interaction intensity: zero outside the interaction field
/// IF = gamma * (k_l + k_r + 1); inside, ((IF - d) / d) * |c_l - c_r|_1,
/// optionally clamped. Errors on coincident centers.
pub fn interaction_intensity(
    c_l: (f64, f64),
    c_r: (f64, f64),
    k_l: f64,
    k_r: f64,
    gamma: f64,
    lambda_clamp: Option<f64>,
) -> Result<f64> {
    let dx = c_l.0 - c_r.0;
    let dy = c_l.1 - c_r.1;
    let d = (dx * dx + dy * dy).sqrt();
    if d < COINCIDENT_EPS {
        return Err(Error::CoincidentCenters(d));
    }
    let field = gamma * (k_l + k_r + 1.0);
    if d > field {
        return Ok(0.0);
    }
    let lambda = (field - d) / d * (dx.abs() + dy.abs());
    Ok(match lambda_clamp {
        Some(cap) => lambda.min(cap),
        None => lambda,
    })
}

// ---------------------------------------------------------------------------
// Parameter vector transform
// ---------------------------------------------------------------------------

/// Numerically stable log(1 + e^x).
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Inverse of [`softplus`] on y > 0.
pub fn inv_softplus(y: f64) -> f64 {
    // ln(e^y - 1), split for stability
    if y > std::f64::consts::LN_2 {
        y + (-(-y).exp()).ln_1p()
    } else {
        y.exp_m1().ln()
    }
}

/// Interprets a raw 109-entry network output as hand parameters. Pose and
/// shape entries are taken literally; the scale entry passes through
/// softplus plus a small floor so s is always positive. Handedness selects
/// nothing today (both hands share one rig) but is part of the call contract.
pub fn decode_param_vector(raw: &[f64], _handedness: Handedness) -> Result<HandParams> {
    if raw.len() != PARAM_DIM {
        return Err(Error::Shape(format!(
            "raw vector has {} entries, expected {PARAM_DIM}",
            raw.len()
        )));
    }
    let mut params = HandParams::unflatten(raw)?;
    params.camera = Camera::new(softplus(raw[106]) + SCALE_FLOOR, raw[107], raw[108]);
    Ok(params)
}

/// Exact preimage of [`decode_param_vector`]: the scale entry becomes
/// inv_softplus(s - floor). Requires s above the floor.
pub fn encode_param_vector(params: &HandParams) -> Result<[f64; PARAM_DIM]> {
    let mut raw = params.flatten();
    let shifted = params.camera.s - SCALE_FLOOR;
    if !(shifted > 0.0) {
        return Err(Error::Format(format!(
            "camera scale {} not above the {SCALE_FLOOR} floor",
            params.camera.s
        )));
    }
    raw[106] = inv_softplus(shifted);
    Ok(raw)
}

// ---------------------------------------------------------------------------
// Aggregation heads
// ---------------------------------------------------------------------------

/// Point-wise linear map over per-pixel-pooled features.
#[derive(Debug, Clone, PartialEq)]
pub struct PointwiseMap {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl PointwiseMap {
    pub fn identity(n: usize) -> Self {
        PointwiseMap {
            weight: Array2::eye(n),
            bias: Array1::zeros(n),
        }
    }

    pub fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng, scale: f64) -> Self {
        PointwiseMap {
            weight: Array2::from_shape_fn((rows, cols), |_| rng.random_range(-scale..scale)),
            bias: Array1::from_shape_fn(rows, |_| rng.random_range(-scale..scale)),
        }
    }

    pub fn apply(&self, x: &Array1<f64>) -> Array1<f64> {
        self.weight.dot(x) + &self.bias
    }
}

/// Two-layer ReLU map used to fuse global, part and cross features.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoLayerMap {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl TwoLayerMap {
    /// Exact pass-through of the first `out` inputs despite the ReLU:
    /// x = relu(x) - relu(-x), encoded in paired hidden units.
    pub fn pass_through(input: usize, hidden: usize, out: usize) -> Self {
        assert!(hidden >= 2 * out, "hidden width too small for pass-through");
        let mut w1 = Array2::zeros((hidden, input));
        let mut w2 = Array2::zeros((out, hidden));
        for i in 0..out {
            w1[(i, i)] = 1.0;
            w1[(out + i, i)] = -1.0;
            w2[(i, i)] = 1.0;
            w2[(i, out + i)] = -1.0;
        }
        TwoLayerMap {
            w1,
            b1: Array1::zeros(hidden),
            w2,
            b2: Array1::zeros(out),
        }
    }

    pub fn random(input: usize, hidden: usize, out: usize, rng: &mut ChaCha8Rng, scale: f64) -> Self {
        TwoLayerMap {
            w1: Array2::from_shape_fn((hidden, input), |_| rng.random_range(-scale..scale)),
            b1: Array1::from_shape_fn(hidden, |_| rng.random_range(-scale..scale)),
            w2: Array2::from_shape_fn((out, hidden), |_| rng.random_range(-scale..scale)),
            b2: Array1::from_shape_fn(out, |_| rng.random_range(-scale..scale)),
        }
    }

    pub fn apply(&self, x: &Array1<f64>) -> Array1<f64> {
        let mut h = self.w1.dot(x) + &self.b1;
        h.mapv_inplace(|v| v.max(0.0));
        self.w2.dot(&h) + &self.b2
    }
}

/// The three learned heads of the aggregation stage. Identity initialization
/// makes the whole stage recover broadcast parameter maps exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationHeads {
    pub f_global: PointwiseMap,
    pub f_cross: PointwiseMap,
    pub f_fuse: TwoLayerMap,
}

impl AggregationHeads {
    pub fn identity_init() -> Self {
        AggregationHeads {
            f_global: PointwiseMap::identity(PARAM_DIM),
            f_cross: PointwiseMap::identity(PARAM_DIM),
            f_fuse: TwoLayerMap::pass_through(FUSION_INPUT, FUSION_HIDDEN, PARAM_DIM),
        }
    }

    pub fn random(seed: u64, scale: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AggregationHeads {
            f_global: PointwiseMap::random(PARAM_DIM, PARAM_DIM, &mut rng, scale),
            f_cross: PointwiseMap::random(PARAM_DIM, PARAM_DIM, &mut rng, scale),
            f_fuse: TwoLayerMap::random(FUSION_INPUT, FUSION_HIDDEN, PARAM_DIM, &mut rng, scale),
        }
    }
}

/// Attention-weighted sum of a channel volume: out[c] = sum_pix att * vol[c].
fn attention_pool(att: &ArrayView2<f64>, vol: &ArrayView3<f64>) -> Array1<f64> {
    let (c, h, w) = vol.dim();
    debug_assert_eq!(att.dim(), (h, w));
    let mut out = Array1::zeros(c);
    for ci in 0..c {
        let mut acc = 0.0;
        for y in 0..h {
            for x in 0..w {
                acc += att[(y, x)] * vol[(ci, y, x)];
            }
        }
        out[ci] = acc;
    }
    out
}

/// Global feature: spatial softmax of the hand's center channel pools the
/// parameter channels, then the point-wise map.
pub fn global_feature(
    center_channel: &ArrayView2<f64>,
    param_slice: &ArrayView3<f64>,
    f_global: &PointwiseMap,
) -> Array1<f64> {
    let att = spatial_softmax(center_channel);
    f_global.apply(&attention_pool(&att.view(), param_slice))
}

/// Part feature: one pooled row per part attention channel (no MLP here).
pub fn part_feature(part_slice: &ArrayView3<f64>, param_slice: &ArrayView3<f64>) -> Array2<f64> {
    let parts = part_slice.dim().0;
    let mut out = Array2::zeros((parts, param_slice.dim().0));
    for j in 0..parts {
        let att = spatial_softmax(&part_slice.index_axis(Axis(0), j));
        out.row_mut(j)
            .assign(&attention_pool(&att.view(), param_slice));
    }
    out
}

/// Cross-hand feature: the opposite hand's center attention pools this
/// hand's cross-prior channels.
pub fn cross_hand_feature(
    opposite_center: &ArrayView2<f64>,
    cross_slice: &ArrayView3<f64>,
    f_cross: &PointwiseMap,
) -> Array1<f64> {
    let att = spatial_softmax(opposite_center);
    f_cross.apply(&attention_pool(&att.view(), cross_slice))
}

/// Fuses global, part and (intensity-scaled) cross features into the raw
/// 109-entry output vector.
pub fn aggregate_output(
    f_global: &Array1<f64>,
    f_part: &Array2<f64>,
    f_cross: &Array1<f64>,
    lambda: f64,
    f_fuse: &TwoLayerMap,
) -> Array1<f64> {
    let mut x = Array1::zeros(FUSION_INPUT);
    let mut i = 0;
    for &v in f_global {
        x[i] = v;
        i += 1;
    }
    for &v in f_part.iter() {
        x[i] = v;
        i += 1;
    }
    for &v in f_cross {
        x[i] = lambda * v;
        i += 1;
    }
    debug_assert_eq!(i, FUSION_INPUT);
    f_fuse.apply(&x)
}

// ---------------------------------------------------------------------------
// Whole-stack aggregation
// ---------------------------------------------------------------------------

/// Center and kernel read back from a rendered center channel: peak position
/// (row-major argmax) and a radius estimate from the pixel count above the
/// 1-sigma level, k = clamp(round(sqrt(n / pi)), 2, 16). `None` when the
/// peak is at or below the presence threshold.
pub fn extract_center(channel: &ArrayView2<f64>) -> Option<((f64, f64), f64)> {
    let mut peak = f64::NEG_INFINITY;
    let mut pos = (0usize, 0usize);
    for (idx, &v) in channel.indexed_iter() {
        if v > peak {
            peak = v;
            pos = idx;
        }
    }
    if !(peak > CENTER_PRESENT_THRESHOLD) {
        return None;
    }
    let level = peak * (-0.5f64).exp();
    let n = channel.iter().filter(|&&v| v >= level).count();
    let k = (n as f64 / std::f64::consts::PI).sqrt().round().clamp(2.0, 16.0);
    Some(((pos.1 as f64, pos.0 as f64), k))
}

/// One hand's aggregation outcome.
#[derive(Debug, Clone, Serialize)]
pub struct HandAggregate {
    /// Whether the center channel shows this hand at all.
    pub present: bool,
    /// Center as read from the map (the oracle renders disentangled centers,
    /// so this already carries any repulsion applied at render time).
    pub center: Option<(f64, f64)>,
    /// Center after (re-)applying collision-aware repulsion at aggregation
    /// time; a no-op for centers already at contact distance.
    pub center_disentangled: Option<(f64, f64)>,
    /// Estimated kernel radius.
    pub kernel: Option<f64>,
    /// Raw fused 109-entry output.
    pub output: Vec<f64>,
    /// Decoded parameters (meaningful when `present`).
    pub params: HandParams,
}

/// Aggregation outcome for a map stack.
#[derive(Debug, Clone, Serialize)]
pub struct AggregationResult {
    pub lambda: f64,
    pub left: HandAggregate,
    pub right: HandAggregate,
}

/// Runs the full attention aggregation over a map stack: center/kernel
/// extraction, interaction intensity, center disentanglement, the three
/// feature paths per hand, fusion, and parameter decoding. Absent hands are
/// still regressed (their zero center channel pools uniformly) but flagged.
pub fn aggregate_maps(
    maps: &MapStack,
    heads: &AggregationHeads,
    cfg: &InteractionConfig,
) -> Result<AggregationResult> {
    cfg.validate()?;
    let left_ex = extract_center(&maps.center_channel(Handedness::Left));
    let right_ex = extract_center(&maps.center_channel(Handedness::Right));

    let (lambda, left_post, right_post) = match (left_ex, right_ex) {
        (Some((cl, kl)), Some((cr, kr))) => {
            let lambda =
                interaction_intensity(cl, cr, kl, kr, cfg.gamma, cfg.lambda_clamp)?;
            let (pl, pr) = collision_aware_repulsion(cl, cr, kl, kr, cfg.alpha)?;
            (lambda, Some(pl), Some(pr))
        }
        _ => (0.0, left_ex.map(|(c, _)| c), right_ex.map(|(c, _)| c)),
    };

    let build = |hand: Handedness,
                     extracted: Option<((f64, f64), f64)>,
                     post: Option<(f64, f64)>|
     -> Result<HandAggregate> {
        let own_center = maps.center_channel(hand);
        let other_center = maps.center_channel(hand.other());
        let fg = global_feature(&own_center, &maps.param_slice(hand), &heads.f_global);
        let fp = part_feature(&maps.part_slice(hand), &maps.param_slice(hand));
        let fc = cross_hand_feature(&other_center, &maps.cross_slice(hand), &heads.f_cross);
        let out = aggregate_output(&fg, &fp, &fc, lambda, &heads.f_fuse);
        let raw: Vec<f64> = out.to_vec();
        let params = decode_param_vector(&raw, hand)?;
        Ok(HandAggregate {
            present: extracted.is_some(),
            center: extracted.map(|(c, _)| c),
            center_disentangled: post,
            kernel: extracted.map(|(_, k)| k),
            output: raw,
            params,
        })
    };

    Ok(AggregationResult {
        lambda,
        left: build(Handedness::Left, left_ex, left_post)?,
        right: build(Handedness::Right, right_ex, right_post)?,
    })
}
