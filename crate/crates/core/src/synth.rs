use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::aggregate::{
    collision_aware_repulsion, encode_param_vector, interaction_intensity, InteractionConfig,
};
use crate::error::{Error, Result};
use crate::hand::{
    bone_lengths, posed_joints, project_weak_perspective, rot6d_from_matrix, skin_mesh, Camera,
    HandParams, Handedness,
};
use crate::maps::{
    compute_center, kernel_from_bbox, render_center_map, render_part_segmentation, CenterSpec,
    MapStack, PartSplat,
};
use crate::rig::HandRig;

/// Scene sampling knobs; everything is drawn from one seeded stream so a
/// (seed, config) pair pins the scene exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub map_size: usize,
    /// Probability of a two-hand scene (vs a single hand).
    pub two_hand_prob: f64,
    /// Given two hands, probability they are placed inside the interaction
    /// field (d <= 0.95 IF) instead of clearly outside it (d >= 1.3 IF).
    pub interaction_prob: f64,
    /// Probability of cropping the view to a sub-rectangle.
    pub truncation_prob: f64,
    /// Probability of dropping one occluder rectangle over a hand.
    pub occlusion_prob: f64,
    /// Per-joint rotation magnitude bound, degrees.
    pub max_joint_angle_deg: f64,
    /// Shape coefficients are uniform in [-shape_range, shape_range].
    pub shape_range: f64,
    /// Projected hand bounding box target, pixels.
    pub bbox_px_min: f64,
    pub bbox_px_max: f64,
    /// Gaussian sigma added per pixel to the parameter and cross maps of the
    /// oracle (0 = exact oracle).
    pub param_map_noise: f64,
    pub interaction: InteractionConfig,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            map_size: crate::maps::MAP_SIZE,
            two_hand_prob: 0.7,
            interaction_prob: 0.5,
            truncation_prob: 0.15,
            occlusion_prob: 0.15,
            max_joint_angle_deg: 45.0,
            shape_range: 2.0,
            bbox_px_min: 16.0,
            bbox_px_max: 30.0,
            param_map_noise: 0.0,
            interaction: InteractionConfig::default(),
        }
    }
}

/// Axis-aligned pixel rectangle, inclusive of x0/y0, exclusive of x1/y1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

/// Everything derivable for one present hand.
#[derive(Debug, Clone)]
pub struct HandTruth {
    pub params: HandParams,
    pub mesh: Vec<Vector3<f64>>,
    pub joints3d: Vec<Vector3<f64>>,
    pub joints2d: Vec<(f64, f64)>,
    /// Joint visibility: inside the map, inside the crop, outside occluders.
    pub visibility: Vec<bool>,
    /// Mean of visible MCP projections (pre-repulsion); None if none visible.
    pub center: Option<(f64, f64)>,
    /// Gaussian kernel radius from the visible-joint bounding box.
    pub kernel: f64,
    pub bones: Vec<f64>,
}

/// A synthetic two-hand scene: sampled parameters plus derived ground truth.
#[derive(Debug, Clone)]
pub struct Scene {
    pub seed: u64,
    pub left: Option<HandParams>,
    pub right: Option<HandParams>,
    pub crop: Option<Rect>,
    pub occluders: Vec<Rect>,
    pub map_size: usize,
    pub param_map_noise: f64,
    pub interaction: InteractionConfig,
    pub truth_left: Option<HandTruth>,
    pub truth_right: Option<HandTruth>,
    /// Centers after collision-aware repulsion (what the center map renders).
    pub centers_disentangled: [Option<(f64, f64)>; 2],
    /// Interaction intensity from the disentangled centers; 0 unless both
    /// hands have visible centers.
    pub lambda: f64,
}

fn derive_hand(
    rig: &HandRig,
    params: &HandParams,
    map_size: usize,
    crop: &Option<Rect>,
    occluders: &[Rect],
) -> Result<HandTruth> {
    let mesh = skin_mesh(rig, params)?;
    let joints3d = crate::hand::regress_joints(rig, &mesh)?;
    let joints2d = project_weak_perspective(&joints3d, &params.camera);
    let m = map_size as f64;
    let visibility: Vec<bool> = joints2d
        .iter()
        .map(|&(x, y)| {
            let in_map = x >= 0.0 && x < m && y >= 0.0 && y < m;
            let in_crop = crop.is_none_or(|c| c.contains(x, y));
            let occluded = occluders.iter().any(|o| o.contains(x, y));
            in_map && in_crop && !occluded
        })
        .collect();
    let center = compute_center(&joints2d, rig.mcp_indices(), &visibility);
    let (mut min_x, mut min_y) = (f64::INFINITY, f64::INFINITY);
    let (mut max_x, mut max_y) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (v, &(x, y)) in visibility.iter().zip(&joints2d) {
        if *v {
            min_x = min_x.min(x);
            min_y = min_y.min(y);
            max_x = max_x.max(x);
            max_y = max_y.max(y);
        }
    }
    let kernel = if max_x >= min_x {
        kernel_from_bbox(max_x - min_x, max_y - min_y)
    } else {
        2.0
    };
    let bones = bone_lengths(&joints3d, rig.bone_edges())?;
    Ok(HandTruth {
        params: params.clone(),
        mesh,
        joints3d,
        joints2d,
        visibility,
        center,
        kernel,
        bones,
    })
}

impl Scene {
    /// Builds a scene from explicit parameters, deriving all ground truth.
    /// Falls back to no crop/occluders if they degenerate the centers into
    /// coincidence (keeps construction total and deterministic).
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        rig: &HandRig,
        seed: u64,
        left: Option<HandParams>,
        right: Option<HandParams>,
        crop: Option<Rect>,
        occluders: Vec<Rect>,
        cfg: &SceneConfig,
    ) -> Result<Scene> {
        cfg.interaction.validate()?;
        if left.is_none() && right.is_none() {
            return Err(Error::Format("scene needs at least one hand".into()));
        }
        let mut scene = Scene {
            seed,
            left,
            right,
            crop,
            occluders,
            map_size: cfg.map_size,
            param_map_noise: cfg.param_map_noise,
            interaction: cfg.interaction,
            truth_left: None,
            truth_right: None,
            centers_disentangled: [None, None],
            lambda: 0.0,
        };
        if scene.rederive(rig).is_err() {
            scene.crop = None;
            scene.occluders = Vec::new();
            scene.rederive(rig)?;
        }
        Ok(scene)
    }

    fn rederive(&mut self, rig: &HandRig) -> Result<()> {
        self.truth_left = match &self.left {
            Some(p) => Some(derive_hand(rig, p, self.map_size, &self.crop, &self.occluders)?),
            None => None,
        };
        self.truth_right = match &self.right {
            Some(p) => Some(derive_hand(rig, p, self.map_size, &self.crop, &self.occluders)?),
            None => None,
        };
        let lc = self.truth_left.as_ref().and_then(|t| t.center);
        let rc = self.truth_right.as_ref().and_then(|t| t.center);
        match (lc, rc) {
            (Some(cl), Some(cr)) => {
                let kl = self.truth_left.as_ref().unwrap().kernel;
                let kr = self.truth_right.as_ref().unwrap().kernel;
                let (pl, pr) =
                    collision_aware_repulsion(cl, cr, kl, kr, self.interaction.alpha)?;
                self.centers_disentangled = [Some(pl), Some(pr)];
                self.lambda = interaction_intensity(
                    pl,
                    pr,
                    kl,
                    kr,
                    self.interaction.gamma,
                    self.interaction.lambda_clamp,
                )?;
            }
            _ => {
                self.centers_disentangled = [lc, rc];
                self.lambda = 0.0;
            }
        }
        Ok(())
    }

    pub fn truth(&self, hand: Handedness) -> Option<&HandTruth> {
        match hand {
            Handedness::Left => self.truth_left.as_ref(),
            Handedness::Right => self.truth_right.as_ref(),
        }
    }

    pub fn params(&self, hand: Handedness) -> Option<&HandParams> {
        match hand {
            Handedness::Left => self.left.as_ref(),
            Handedness::Right => self.right.as_ref(),
        }
    }

    pub fn present_hands(&self) -> Vec<Handedness> {
        let mut out = Vec::new();
        if self.left.is_some() {
            out.push(Handedness::Left);
        }
        if self.right.is_some() {
            out.push(Handedness::Right);
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

fn random_unit_vector(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    let z: f64 = rng.random_range(-1.0..1.0);
    let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let r = (1.0 - z * z).sqrt();
    Vector3::new(r * phi.cos(), r * phi.sin(), z)
}

fn sample_pose_shape(rng: &mut ChaCha8Rng, cfg: &SceneConfig) -> ([[f64; 6]; 16], [f64; 10]) {
    let max_angle = cfg.max_joint_angle_deg.to_radians();
    let mut pose = [[0.0; 6]; 16];
    for row in pose.iter_mut() {
        let axis = random_unit_vector(rng);
        let angle = rng.random_range(-max_angle..max_angle);
        let m = nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle)
            .into_inner();
        *row = rot6d_from_matrix(&m);
    }
    let mut shape = [0.0; 10];
    for b in shape.iter_mut() {
        *b = rng.random_range(-cfg.shape_range..cfg.shape_range);
    }
    (pose, shape)
}

/// Projected-extent statistics of a posed hand at unit scale.
struct Extent {
    bbox: f64,
    mcp_mean: (f64, f64),
}

fn unit_extent(rig: &HandRig, pose: &[[f64; 6]; 16], shape: &[f64; 10]) -> Result<Extent> {
    let params = HandParams {
        pose6d: *pose,
        shape: *shape,
        camera: Camera::new(1.0, 0.0, 0.0),
    };
    let joints = posed_joints(rig, &params)?;
    let (mut min_x, mut min_y) = (f64::INFINITY, f64::INFINITY);
    let (mut max_x, mut max_y) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for j in &joints {
        min_x = min_x.min(j.x);
        min_y = min_y.min(j.y);
        max_x = max_x.max(j.x);
        max_y = max_y.max(j.y);
    }
    let mut mcp = (0.0, 0.0);
    for &m in rig.mcp_indices() {
        mcp.0 += joints[m].x;
        mcp.1 += joints[m].y;
    }
    mcp.0 /= 5.0;
    mcp.1 /= 5.0;
    Ok(Extent {
        bbox: (max_x - min_x).max(max_y - min_y).max(1e-6),
        mcp_mean: mcp,
    })
}

/// One hand sampled up to camera placement.
struct SampledHand {
    pose: [[f64; 6]; 16],
    shape: [f64; 10],
    s: f64,
    extent: Extent,
}

fn sample_hand(rng: &mut ChaCha8Rng, rig: &HandRig, cfg: &SceneConfig) -> Result<SampledHand> {
    let (pose, shape) = sample_pose_shape(rng, cfg);
    let extent = unit_extent(rig, &pose, &shape)?;
    let bbox_px = rng.random_range(cfg.bbox_px_min..cfg.bbox_px_max);
    let s = bbox_px / extent.bbox;
    Ok(SampledHand {
        pose,
        shape,
        s,
        extent,
    })
}

fn place(hand: &SampledHand, center: (f64, f64)) -> HandParams {
    // translation chosen so the projected MCP mean lands exactly on `center`
    HandParams {
        pose6d: hand.pose,
        shape: hand.shape,
        camera: Camera::new(
            hand.s,
            center.0 - hand.s * hand.extent.mcp_mean.0,
            center.1 - hand.s * hand.extent.mcp_mean.1,
        ),
    }
}

/// Translates all hands by one shared offset so every joint projects inside
/// the map (best effort if the group is wider than the map). The shared
/// offset keeps center distances exact.
fn shift_into_bounds(rig: &HandRig, hands: &mut [&mut HandParams], m: f64) -> Result<()> {
    let (mut min_x, mut min_y) = (f64::INFINITY, f64::INFINITY);
    let (mut max_x, mut max_y) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in hands.iter() {
        let joints = posed_joints(rig, p)?;
        for (x, y) in project_weak_perspective(&joints, &p.camera) {
            min_x = min_x.min(x);
            min_y = min_y.min(y);
            max_x = max_x.max(x);
            max_y = max_y.max(y);
        }
    }
    let lo = 1.5;
    let hi = m - 2.5;
    let shift = |min_v: f64, max_v: f64| -> f64 {
        let a = lo - min_v; // minimum shift keeping the left edge inside
        let b = hi - max_v; // maximum shift keeping the right edge inside
        // a > b means both edges cannot fit; anchor the low one
        if a > b || a > 0.0 {
            a
        } else if b < 0.0 {
            b
        } else {
            0.0
        }
    };
    let dx = shift(min_x, max_x);
    let dy = shift(min_y, max_y);
    if dx != 0.0 || dy != 0.0 {
        for p in hands.iter_mut() {
            p.camera.tx += dx;
            p.camera.ty += dy;
        }
    }
    Ok(())
}

/// Draws a complete scene for `seed`: hand count, poses, shapes, cameras
/// placed by center distance relative to the interaction field, optional
/// truncation crop and occluder. Rerunning with the same inputs reproduces
/// the scene exactly.
pub fn sample_scene(rig: &HandRig, seed: u64, cfg: &SceneConfig) -> Result<Scene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = cfg.map_size as f64;
    let lo = 0.2 * m; // keep centers comfortably inside the map
    let hi = 0.8 * m;

    let two_hands = rng.random_range(0.0..1.0) < cfg.two_hand_prob;
    let (mut left, mut right) = if two_hands {
        let a = sample_hand(&mut rng, rig, cfg)?;
        let b = sample_hand(&mut rng, rig, cfg)?;
        let ka = kernel_from_bbox(a.s * a.extent.bbox, a.s * a.extent.bbox);
        let kb = kernel_from_bbox(b.s * b.extent.bbox, b.s * b.extent.bbox);
        let field = cfg.interaction.gamma * (ka + kb + 1.0);
        let interacting = rng.random_range(0.0..1.0) < cfg.interaction_prob;
        let d = if interacting {
            rng.random_range((0.3 * field).max(2.0)..0.95 * field)
        } else {
            rng.random_range(1.3 * field..2.2 * field)
        };
        let c1 = (rng.random_range(lo..hi), rng.random_range(lo..hi));
        let mut c2 = None;
        for _ in 0..16 {
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            let cand = (c1.0 + d * phi.cos(), c1.1 + d * phi.sin());
            if cand.0 >= lo && cand.0 <= hi && cand.1 >= lo && cand.1 <= hi {
                c2 = Some(cand);
                break;
            }
        }
        let c2 = c2.unwrap_or_else(|| {
            // deterministic fallback: horizontal strip placement
            let y = (c1.1).clamp(lo, hi);
            let x = if c1.0 < m * 0.5 { c1.0 + d } else { c1.0 - d };
            (x.clamp(2.0, m - 2.0), y)
        });
        (Some(place(&a, c1)), Some(place(&b, c2)))
    } else {
        let a = sample_hand(&mut rng, rig, cfg)?;
        let c = (rng.random_range(lo..hi), rng.random_range(lo..hi));
        let params = place(&a, c);
        if rng.random_range(0.0..1.0) < 0.5 {
            (Some(params), None)
        } else {
            (None, Some(params))
        }
    };
    {
        let mut group: Vec<&mut HandParams> = Vec::new();
        if let Some(p) = left.as_mut() {
            group.push(p);
        }
        if let Some(p) = right.as_mut() {
            group.push(p);
        }
        shift_into_bounds(rig, &mut group, m)?;
    }

    let crop = if rng.random_range(0.0..1.0) < cfg.truncation_prob {
        let cut = rng.random_range(0.12 * m..0.35 * m);
        Some(match rng.random_range(0..4u32) {
            0 => Rect { x0: cut, y0: 0.0, x1: m, y1: m },
            1 => Rect { x0: 0.0, y0: 0.0, x1: m - cut, y1: m },
            2 => Rect { x0: 0.0, y0: cut, x1: m, y1: m },
            _ => Rect { x0: 0.0, y0: 0.0, x1: m, y1: m - cut },
        })
    } else {
        None
    };

    let occluders = if rng.random_range(0.0..1.0) < cfg.occlusion_prob {
        let cx = rng.random_range(lo..hi);
        let cy = rng.random_range(lo..hi);
        let half = rng.random_range(3.0..7.0);
        vec![Rect {
            x0: cx - half,
            y0: cy - half,
            x1: cx + half,
            y1: cy + half,
        }]
    } else {
        Vec::new()
    };

    Scene::new(rig, seed, left, right, crop, occluders, cfg)
}

/// Jitters parameters for fitting starts: pose and shape additively, scale
/// multiplicatively (stays positive), translation by a few pixels per unit
/// noise.
pub fn perturb_params(params: &HandParams, noise: f64, rng: &mut ChaCha8Rng) -> HandParams {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut draw = || normal.sample(rng);
    let mut out = params.clone();
    for row in out.pose6d.iter_mut() {
        for v in row.iter_mut() {
            *v += noise * draw();
        }
    }
    for b in out.shape.iter_mut() {
        *b += noise * draw();
    }
    out.camera.s *= (noise * draw()).exp();
    out.camera.tx += 8.0 * noise * draw();
    out.camera.ty += 8.0 * noise * draw();
    out
}

// ---------------------------------------------------------------------------
// Oracle maps
// ---------------------------------------------------------------------------

/// Renders the ground-truth map stack a perfect backbone would emit:
/// broadcast-constant parameter and cross-prior channels (so any attention
/// recovers the exact parameters), center Gaussians at the disentangled
/// centers, and the rasterized part segmentation. Optional Gaussian noise on
/// the parameter and cross channels is seeded from the scene.
pub fn oracle_maps(rig: &HandRig, scene: &Scene) -> Result<MapStack> {
    let h = scene.map_size;
    let w = scene.map_size;
    let mut maps = MapStack::zeros(h, w);

    for hand in [Handedness::Left, Handedness::Right] {
        let Some(truth) = scene.truth(hand) else { continue };
        let raw = encode_param_vector(&truth.params)?;
        let off = hand.param_offset();
        for (c, &v) in raw.iter().enumerate() {
            for y in 0..h {
                for x in 0..w {
                    maps.param[(off + c, y, x)] = v;
                    maps.cross[(off + c, y, x)] = v;
                }
            }
        }
    }

    let specs: [Option<CenterSpec>; 2] = std::array::from_fn(|i| {
        let hand = if i == 0 { Handedness::Left } else { Handedness::Right };
        let truth = scene.truth(hand)?;
        let center = scene.centers_disentangled[i]?;
        Some(CenterSpec {
            center,
            kernel: truth.kernel,
        })
    });
    maps.center = render_center_map(h, w, &specs);

    let mut splats = Vec::new();
    for hand in [Handedness::Left, Handedness::Right] {
        let Some(truth) = scene.truth(hand) else { continue };
        let proj = project_weak_perspective(&truth.mesh, &truth.params.camera);
        let base = hand.part_label_base();
        for (v, &(x, y)) in proj.iter().enumerate() {
            splats.push(PartSplat {
                x,
                y,
                z: truth.mesh[v].z,
                label: (base + rig.vertex_parts()[v]) as u16,
            });
        }
    }
    let (mut onehot, mut labels) = render_part_segmentation(&splats, h, w)?;
    // truncation and occluders blank the segmentation back to background
    for y in 0..h {
        for x in 0..w {
            let (fx, fy) = (x as f64, y as f64);
            let outside = scene.crop.is_some_and(|c| !c.contains(fx, fy));
            let occluded = scene.occluders.iter().any(|o| o.contains(fx, fy));
            if outside || occluded {
                let old = labels[(y, x)] as usize;
                if old != 0 {
                    onehot[(old, y, x)] = 0.0;
                    onehot[(0, y, x)] = 1.0;
                    labels[(y, x)] = 0;
                }
            }
        }
    }
    maps.part = onehot;

    if scene.param_map_noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(scene.seed ^ 0x9E37_79B9_7F4A_7C15);
        let normal = Normal::new(0.0, scene.param_map_noise).expect("noise sigma");
        for v in maps.param.iter_mut() {
            *v += normal.sample(&mut rng);
        }
        for v in maps.cross.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }

    Ok(maps)
}

/// Ground-truth part label map for loss evaluation (recomputed on demand).
pub fn oracle_part_labels(rig: &HandRig, scene: &Scene) -> Result<ndarray::Array2<u16>> {
    let maps = oracle_maps(rig, scene)?;
    let (c, h, w) = maps.part.dim();
    let mut labels = ndarray::Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut best = 0;
            let mut best_v = f64::NEG_INFINITY;
            for ch in 0..c {
                if maps.part[(ch, y, x)] > best_v {
                    best_v = maps.part[(ch, y, x)];
                    best = ch;
                }
            }
            labels[(y, x)] = best as u16;
        }
    }
    Ok(labels)
}

// ---------------------------------------------------------------------------
// Scene files
// ---------------------------------------------------------------------------

/// Wire form of a scene: the seed and the sampled parameters only. Derived
/// data (and any truncation/occlusion) is reconstructed or reset on load.
#[derive(Serialize, Deserialize)]
struct SceneFile {
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    left: Option<HandParams>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    right: Option<HandParams>,
}

pub fn scene_to_json(scene: &Scene) -> serde_json::Value {
    serde_json::to_value(SceneFile {
        seed: scene.seed,
        left: scene.left.clone(),
        right: scene.right.clone(),
    })
    .expect("scene serialization cannot fail")
}

pub fn scene_from_json(
    rig: &HandRig,
    value: serde_json::Value,
    cfg: &SceneConfig,
) -> Result<Scene> {
    let file: SceneFile = serde_json::from_value(value)?;
    Scene::new(rig, file.seed, file.left, file.right, None, Vec::new(), cfg)
}

pub fn save_scene(path: &std::path::Path, scene: &Scene) -> Result<()> {
    let text = serde_json::to_string_pretty(&scene_to_json(scene))?;
    crate::export::atomic_write(path, text.as_bytes())
}

pub fn load_scene(rig: &HandRig, path: &std::path::Path, cfg: &SceneConfig) -> Result<Scene> {
    let text = std::fs::read_to_string(path)?;
    scene_from_json(rig, serde_json::from_str(&text)?, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregate::{aggregate_maps, AggregationHeads};
    use approx::assert_abs_diff_eq;

    fn rig() -> HandRig {
        HandRig::toy()
    }

    #[test]
    fn sampling_is_deterministic() {
        let rig = rig();
        let cfg = SceneConfig::default();
        let a = sample_scene(&rig, 42, &cfg).unwrap();
        let b = sample_scene(&rig, 42, &cfg).unwrap();
        assert_eq!(a.left, b.left);
        assert_eq!(a.right, b.right);
        assert_eq!(a.crop, b.crop);
        assert_eq!(a.occluders, b.occluders);
        assert_eq!(a.lambda, b.lambda);
        let c = sample_scene(&rig, 43, &cfg).unwrap();
        assert!(a.left != c.left || a.right != c.right);
    }

    #[test]
    fn hand_count_probabilities_are_respected() {
        let rig = rig();
        let mut cfg = SceneConfig {
            two_hand_prob: 0.0,
            truncation_prob: 0.0,
            occlusion_prob: 0.0,
            ..Default::default()
        };
        for seed in 0..50 {
            let s = sample_scene(&rig, seed, &cfg).unwrap();
            assert_eq!(s.present_hands().len(), 1);
        }
        cfg.two_hand_prob = 1.0;
        for seed in 0..50 {
            let s = sample_scene(&rig, seed, &cfg).unwrap();
            assert_eq!(s.present_hands().len(), 2);
        }
    }

    #[test]
    fn interaction_placement_controls_field_membership() {
        let rig = rig();
        let base = SceneConfig {
            two_hand_prob: 1.0,
            truncation_prob: 0.0,
            occlusion_prob: 0.0,
            ..Default::default()
        };
        let interacting = SceneConfig {
            interaction_prob: 1.0,
            ..base
        };
        for seed in 0..100 {
            let s = sample_scene(&rig, seed, &interacting).unwrap();
            let cl = s.truth_left.as_ref().unwrap().center.unwrap();
            let cr = s.truth_right.as_ref().unwrap().center.unwrap();
            let d = (cl.0 - cr.0).hypot(cl.1 - cr.1);
            let field = s.interaction.gamma
                * (s.truth_left.as_ref().unwrap().kernel
                    + s.truth_right.as_ref().unwrap().kernel
                    + 1.0);
            assert!(d <= field, "seed {seed}: d {d} outside field {field}");
            assert!(s.lambda > 0.0, "seed {seed}: interacting scene with zero lambda");
        }
        let separated = SceneConfig {
            interaction_prob: 0.0,
            ..base
        };
        for seed in 0..100 {
            let s = sample_scene(&rig, seed, &separated).unwrap();
            let cl = s.truth_left.as_ref().unwrap().center.unwrap();
            let cr = s.truth_right.as_ref().unwrap().center.unwrap();
            let d = (cl.0 - cr.0).hypot(cl.1 - cr.1);
            let field = s.interaction.gamma
                * (s.truth_left.as_ref().unwrap().kernel
                    + s.truth_right.as_ref().unwrap().kernel
                    + 1.0);
            assert!(d > field, "seed {seed}: d {d} inside field {field}");
            assert_eq!(s.lambda, 0.0);
        }
    }

    #[test]
    fn oracle_param_map_broadcasts_exact_parameters() {
        let rig = rig();
        let cfg = SceneConfig {
            two_hand_prob: 1.0,
            truncation_prob: 0.0,
            occlusion_prob: 0.0,
            ..Default::default()
        };
        let scene = sample_scene(&rig, 7, &cfg).unwrap();
        let maps = oracle_maps(&rig, &scene).unwrap();
        for hand in [Handedness::Left, Handedness::Right] {
            let gt = scene.params(hand).unwrap();
            let raw = encode_param_vector(gt).unwrap();
            let slice = maps.param_slice(hand);
            for &(y, x) in &[(0usize, 0usize), (31, 17), (63, 63)] {
                for c in 0..109 {
                    assert_eq!(slice[(c, y, x)], raw[c]);
                }
            }
        }
    }

    #[test]
    fn oracle_identity_recovery_through_aggregation() {
        let rig = rig();
        let cfg = SceneConfig {
            two_hand_prob: 1.0,
            interaction_prob: 1.0,
            truncation_prob: 0.0,
            occlusion_prob: 0.0,
            ..Default::default()
        };
        let heads = AggregationHeads::identity_init();
        for seed in [1u64, 2, 3] {
            let scene = sample_scene(&rig, seed, &cfg).unwrap();
            let maps = oracle_maps(&rig, &scene).unwrap();
            let agg = aggregate_maps(&maps, &heads, &scene.interaction).unwrap();
            for (hand, out) in [(Handedness::Left, &agg.left), (Handedness::Right, &agg.right)] {
                assert!(out.present);
                let gt = scene.params(hand).unwrap();
                for j in 0..16 {
                    for c in 0..6 {
                        assert_abs_diff_eq!(
                            out.params.pose6d[j][c],
                            gt.pose6d[j][c],
                            epsilon = 1e-9
                        );
                    }
                }
                for k in 0..10 {
                    assert_abs_diff_eq!(out.params.shape[k], gt.shape[k], epsilon = 1e-9);
                }
                assert_abs_diff_eq!(out.params.camera.s, gt.camera.s, epsilon = 1e-7);
                assert_abs_diff_eq!(out.params.camera.tx, gt.camera.tx, epsilon = 1e-9);
                assert_abs_diff_eq!(out.params.camera.ty, gt.camera.ty, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn oracle_center_map_peaks_at_disentangled_centers() {
        let rig = rig();
        let cfg = SceneConfig {
            two_hand_prob: 1.0,
            interaction_prob: 1.0,
            truncation_prob: 0.0,
            occlusion_prob: 0.0,
            ..Default::default()
        };
        let scene = sample_scene(&rig, 11, &cfg).unwrap();
        let maps = oracle_maps(&rig, &scene).unwrap();
        for (i, hand) in [Handedness::Left, Handedness::Right].into_iter().enumerate() {
            let c = scene.centers_disentangled[i].unwrap();
            let (px, py) = (c.0.round() as usize, c.1.round() as usize);
            assert_eq!(maps.center_channel(hand)[(py, px)], 1.0);
        }
    }

    #[test]
    fn oracle_part_labels_respect_hand_ranges_and_crop() {
        let rig = rig();
        let cfg = SceneConfig {
            two_hand_prob: 0.0,
            truncation_prob: 0.0,
            occlusion_prob: 0.0,
            ..Default::default()
        };
        // find a left-handed single scene
        let scene = (0..20)
            .map(|s| sample_scene(&rig, s, &cfg).unwrap())
            .find(|s| s.left.is_some())
            .expect("a left hand in 20 seeds");
        let labels = oracle_part_labels(&rig, &scene).unwrap();
        let mut covered = 0usize;
        for &l in labels.iter() {
            assert!(l == 0 || (1..=16).contains(&l), "label {l} out of range");
            if l != 0 {
                covered += 1;
            }
        }
        assert!(covered > 20, "hand should cover pixels, got {covered}");

        // crop blanks everything outside
        let crop = Rect {
            x0: 0.0,
            y0: 0.0,
            x1: 5.0,
            y1: 5.0,
        };
        let cropped = Scene::new(
            &rig,
            scene.seed,
            scene.left.clone(),
            None,
            Some(crop),
            Vec::new(),
            &cfg,
        )
        .unwrap();
        if cropped.crop.is_some() {
            let labels = oracle_part_labels(&rig, &cropped).unwrap();
            for y in 0..64 {
                for x in 0..64 {
                    if !crop.contains(x as f64, y as f64) {
                        assert_eq!(labels[(y, x)], 0);
                    }
                }
            }
        }
    }

    #[test]
    fn truncation_marks_joints_invisible() {
        let rig = rig();
        let cfg = SceneConfig {
            two_hand_prob: 1.0,
            truncation_prob: 1.0,
            occlusion_prob: 0.0,
            ..Default::default()
        };
        let mut saw_invisible = false;
        for seed in 0..40 {
            let s = sample_scene(&rig, seed, &cfg).unwrap();
            for t in [&s.truth_left, &s.truth_right].into_iter().flatten() {
                if t.visibility.iter().any(|&v| !v) {
                    saw_invisible = true;
                }
                // center only from visible mcps
                if let Some(c) = t.center {
                    assert!(c.0.is_finite() && c.1.is_finite());
                }
            }
        }
        assert!(saw_invisible, "forced truncation never hid a joint");
    }

    #[test]
    fn perturbation_is_seeded_and_scales() {
        let params = HandParams::rest();
        let mut rng1 = ChaCha8Rng::seed_from_u64(5);
        let mut rng2 = ChaCha8Rng::seed_from_u64(5);
        let a = perturb_params(&params, 0.05, &mut rng1);
        let b = perturb_params(&params, 0.05, &mut rng2);
        assert_eq!(a, b);
        assert_ne!(a, params);
        assert!(a.camera.s > 0.0);
        let mut rng3 = ChaCha8Rng::seed_from_u64(5);
        let zero = perturb_params(&params, 0.0, &mut rng3);
        assert_eq!(zero, params);
    }

    #[test]
    fn scene_json_round_trip_is_value_exact() {
        let rig = rig();
        let cfg = SceneConfig {
            two_hand_prob: 1.0,
            ..Default::default()
        };
        let scene = sample_scene(&rig, 99, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scene.json");
        save_scene(&path, &scene).unwrap();
        let back = load_scene(&rig, &path, &cfg).unwrap();
        assert_eq!(back.seed, scene.seed);
        assert_eq!(back.left, scene.left);
        assert_eq!(back.right, scene.right);
        assert!(back.crop.is_none());
    }

    #[test]
    fn noisy_oracle_still_recovers_approximately() {
        let rig = rig();
        let cfg = SceneConfig {
            two_hand_prob: 1.0,
            interaction_prob: 1.0,
            truncation_prob: 0.0,
            occlusion_prob: 0.0,
            param_map_noise: 0.05,
            ..Default::default()
        };
        let scene = sample_scene(&rig, 3, &cfg).unwrap();
        let maps = oracle_maps(&rig, &scene).unwrap();
        let heads = AggregationHeads::identity_init();
        let agg = aggregate_maps(&maps, &heads, &scene.interaction).unwrap();
        let gt = scene.params(Handedness::Left).unwrap();
        let mut max_err = 0.0f64;
        for j in 0..16 {
            for c in 0..6 {
                max_err = max_err.max((agg.left.params.pose6d[j][c] - gt.pose6d[j][c]).abs());
            }
        }
        assert!(max_err > 0.0, "noise must leave a trace");
        assert!(max_err < 0.2, "noise-averaged error too large: {max_err}");
    }
}
