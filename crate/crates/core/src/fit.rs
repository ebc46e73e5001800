use ndarray::{Array2, Array3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::{collision_aware_repulsion, SCALE_FLOOR};
use crate::error::{Error, Result};
use crate::hand::{
    bone_lengths, project_weak_perspective, regress_joints, skin_mesh, HandParams, Handedness,
    PARAM_DIM,
};
use crate::loss::{
    focal_center_loss, joint_errors, pa_mpjpe_m, part_seg_loss, root_aligned_mpjpe_m, total_loss,
    LossBreakdown, LossTerm, LossWeights, TermInputs,
};
use crate::maps::{render_center_map, CenterSpec, PART_CHANNELS};
use crate::rig::HandRig;
use crate::synth::{oracle_part_labels, Scene};

/// Logit magnitude used when turning a rasterized one-hot segmentation into
/// part logits for the cross-entropy term.
pub const PART_LOGIT_SCALE: f64 = 20.0;

/// Totals at or below this count as a solved objective. Exact zeros are rare:
/// the similarity-aligned joint term keeps SVD noise around 1e-16 even on
/// identical point sets.
pub const CONVERGED_LOSS: f64 = 1e-12;

/// Which objective terms the fitter evaluates. The map terms (center, part)
/// are off by default: they are expensive and carry a constant floor at the
/// optimum, so they serve as extra regularizers rather than primary signals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TermMask {
    pub mano: bool,
    pub joint3d: bool,
    pub pa_joint3d: bool,
    pub joint2d: bool,
    pub bone: bool,
    pub center: bool,
    pub part: bool,
}

impl Default for TermMask {
    fn default() -> Self {
        TermMask {
            mano: true,
            joint3d: true,
            pa_joint3d: true,
            joint2d: true,
            bone: true,
            center: false,
            part: false,
        }
    }
}

/// Fitting hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub max_iters: usize,
    /// Initial step along the search direction; 1.0 means a full
    /// quasi-Newton step.
    pub step: f64,
    /// Backtracking halvings before an iteration counts as stuck.
    pub max_halvings: u32,
    /// Central-difference probe size.
    pub fd_step: f64,
    /// Relative improvement below which the fit stops early.
    pub tol: f64,
    pub mask: TermMask,
    pub weights: LossWeights,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_iters: 300,
            step: 1.0,
            max_halvings: 20,
            fd_step: 1e-4,
            tol: 1e-7,
            mask: TermMask::default(),
            weights: LossWeights::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Format("max_iters must be positive".into()));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::Format(format!("step {} must be > 0", self.step)));
        }
        if !(self.fd_step > 0.0 && self.fd_step.is_finite()) {
            return Err(Error::Format(format!(
                "fd_step {} must be > 0",
                self.fd_step
            )));
        }
        if !(self.tol >= 0.0 && self.tol.is_finite()) {
            return Err(Error::Format(format!("tol {} must be >= 0", self.tol)));
        }
        let m = self.mask;
        if !(m.mano || m.joint3d || m.pa_joint3d || m.joint2d || m.bone || m.center || m.part) {
            return Err(Error::Format("term mask enables nothing".into()));
        }
        Ok(())
    }
}

/// One accepted iteration of the trace (row 0 is the starting point).
#[derive(Debug, Clone, Serialize)]
pub struct TraceRow {
    pub iter: usize,
    pub total: f64,
    pub terms: Vec<LossTerm>,
}

/// Joint error metrics for one hand.
#[derive(Debug, Clone, Serialize)]
pub struct HandMetric {
    pub hand: Handedness,
    pub mpjpe_mm: f64,
    pub pa_mpjpe_mm: f64,
}

/// Joint error metrics over the present hands.
#[derive(Debug, Clone, Serialize)]
pub struct FitMetrics {
    pub hands: Vec<HandMetric>,
    pub mean_mpjpe_mm: f64,
    pub mean_pa_mpjpe_mm: f64,
}

/// Fitting outcome: final parameters, loss trace, and joint metrics before
/// and after.
#[derive(Debug, Clone, Serialize)]
pub struct FitResult {
    pub left: Option<HandParams>,
    pub right: Option<HandParams>,
    /// True when the fit stopped on its own (no improving step or below
    /// tolerance) rather than by exhausting the iteration budget.
    pub converged: bool,
    /// Number of accepted descent steps.
    pub iterations: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub trace: Vec<TraceRow>,
    pub initial_metrics: FitMetrics,
    pub final_metrics: FitMetrics,
}

/// Joint metrics of candidate parameters against a scene's ground truth.
pub fn scene_metrics(
    rig: &HandRig,
    scene: &Scene,
    left: Option<&HandParams>,
    right: Option<&HandParams>,
) -> Result<FitMetrics> {
    let mut hands = Vec::new();
    for (hand, cand) in [(Handedness::Left, left), (Handedness::Right, right)] {
        let Some(truth) = scene.truth(hand) else { continue };
        let Some(params) = cand else {
            return Err(Error::Format(format!(
                "no candidate parameters for the {hand:?} hand"
            )));
        };
        let joints = regress_joints(rig, &skin_mesh(rig, params)?)?;
        let e = joint_errors(&joints, &truth.joints3d)?;
        hands.push(HandMetric {
            hand,
            mpjpe_mm: e.mpjpe_mm,
            pa_mpjpe_mm: e.pa_mpjpe_mm,
        });
    }
    if hands.is_empty() {
        return Err(Error::Format("scene has no hands to score".into()));
    }
    let n = hands.len() as f64;
    Ok(FitMetrics {
        mean_mpjpe_mm: hands.iter().map(|h| h.mpjpe_mm).sum::<f64>() / n,
        mean_pa_mpjpe_mm: hands.iter().map(|h| h.pa_mpjpe_mm).sum::<f64>() / n,
        hands,
    })
}

/// The fitting objective over the concatenated parameter vectors of the
/// present hands. Evaluation is total: candidates that break the geometry
/// (degenerate rotations, coincident centers, failed alignment) score
/// infinity and are rejected by the line search.
struct Objective<'a> {
    rig: &'a HandRig,
    scene: &'a Scene,
    hands: Vec<Handedness>,
    cfg: &'a FitConfig,
    gt_center: Option<Array3<f64>>,
    gt_labels: Option<Array2<u16>>,
}

impl<'a> Objective<'a> {
    fn new(rig: &'a HandRig, scene: &'a Scene, cfg: &'a FitConfig) -> Result<Self> {
        let hands = scene.present_hands();
        let gt_center = cfg.mask.center.then(|| {
            let specs: [Option<CenterSpec>; 2] = std::array::from_fn(|i| {
                let hand = if i == 0 { Handedness::Left } else { Handedness::Right };
                let truth = scene.truth(hand)?;
                Some(CenterSpec {
                    center: scene.centers_disentangled[i]?,
                    kernel: truth.kernel,
                })
            });
            render_center_map(scene.map_size, scene.map_size, &specs)
        });
        let gt_labels = if cfg.mask.part {
            Some(oracle_part_labels(rig, scene)?)
        } else {
            None
        };
        Ok(Objective {
            rig,
            scene,
            hands,
            cfg,
            gt_center,
            gt_labels,
        })
    }

    fn dim(&self) -> usize {
        self.hands.len() * PARAM_DIM
    }

    fn unpack(&self, x: &[f64]) -> Result<Vec<HandParams>> {
        debug_assert_eq!(x.len(), self.dim());
        self.hands
            .iter()
            .enumerate()
            .map(|(i, _)| {
                let mut chunk = [0.0; PARAM_DIM];
                chunk.copy_from_slice(&x[i * PARAM_DIM..(i + 1) * PARAM_DIM]);
                chunk[106] = chunk[106].max(SCALE_FLOOR);
                HandParams::unflatten(&chunk)
            })
            .collect()
    }

    fn eval(&self, x: &[f64]) -> (f64, LossBreakdown) {
        match self.try_eval(x) {
            Ok(bd) => (bd.total, bd),
            Err(_) => (
                f64::INFINITY,
                LossBreakdown {
                    terms: Vec::new(),
                    total: f64::INFINITY,
                },
            ),
        }
    }

    fn try_eval(&self, x: &[f64]) -> Result<LossBreakdown> {
        let mask = self.cfg.mask;
        let params = self.unpack(x)?;
        let mut inputs = TermInputs::default();
        let mut meshes = Vec::with_capacity(params.len());
        let mut joint_sets = Vec::with_capacity(params.len());
        for p in &params {
            let mesh = skin_mesh(self.rig, p)?;
            joint_sets.push(regress_joints(self.rig, &mesh)?);
            meshes.push(mesh);
        }

        let nh = params.len() as f64;
        for (i, &hand) in self.hands.iter().enumerate() {
            let truth = self.scene.truth(hand).expect("hand presence checked");
            let p = &params[i];
            let joints = &joint_sets[i];

            if mask.mano {
                let gt = &truth.params;
                let mut pose_sq = 0.0;
                for j in 0..16 {
                    for c in 0..6 {
                        let d = p.pose6d[j][c] - gt.pose6d[j][c];
                        pose_sq += d * d;
                    }
                }
                let mut shape_sq = 0.0;
                for k in 0..10 {
                    let d = p.shape[k] - gt.shape[k];
                    shape_sq += d * d;
                }
                *inputs.pose_sq.get_or_insert(0.0) += pose_sq;
                *inputs.shape_sq.get_or_insert(0.0) += shape_sq;
            }
            if mask.joint3d {
                let m = root_aligned_mpjpe_m(joints, &truth.joints3d)?;
                *inputs.joint3d_m.get_or_insert(0.0) += m / nh;
            }
            if mask.pa_joint3d {
                let m = pa_mpjpe_m(joints, &truth.joints3d)?;
                *inputs.pa_joint3d_m.get_or_insert(0.0) += m / nh;
            }
            if mask.joint2d {
                let mut acc = 0.0;
                for (j, gt2d) in joints.iter().zip(&truth.joints2d) {
                    let rx = p.camera.s * j.x + p.camera.tx - gt2d.0;
                    let ry = p.camera.s * j.y + p.camera.ty - gt2d.1;
                    acc += rx * rx + ry * ry;
                }
                *inputs.joint2d_sq.get_or_insert(0.0) += acc;
            }
            if mask.bone {
                let bones = bone_lengths(joints, self.rig.bone_edges())?;
                let acc: f64 = bones
                    .iter()
                    .zip(&truth.bones)
                    .map(|(b, g)| (b - g) * (b - g))
                    .sum();
                *inputs.bone_sq.get_or_insert(0.0) += acc;
            }
        }

        if mask.center {
            let gt = self.gt_center.as_ref().expect("built when masked in");
            inputs.center_focal = Some(self.center_term(&params, &joint_sets, gt)?);
        }
        if mask.part {
            let gt = self.gt_labels.as_ref().expect("built when masked in");
            inputs.part_ce = Some(self.part_term(&params, &meshes, gt)?);
        }

        Ok(total_loss(&inputs, &self.cfg.weights))
    }

    /// Focal loss between the candidate's rendered center map and the
    /// ground-truth one.
    fn center_term(
        &self,
        params: &[HandParams],
        joint_sets: &[Vec<nalgebra::Vector3<f64>>],
        gt: &Array3<f64>,
    ) -> Result<f64> {
        let mut spec_of = [None, None];
        for (i, &hand) in self.hands.iter().enumerate() {
            let proj = project_weak_perspective(&joint_sets[i], &params[i].camera);
            let (mut min_x, mut min_y) = (f64::INFINITY, f64::INFINITY);
            let (mut max_x, mut max_y) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            let mut mcp = (0.0, 0.0);
            for &m in self.rig.mcp_indices() {
                mcp.0 += proj[m].0;
                mcp.1 += proj[m].1;
            }
            for &(x, y) in &proj {
                min_x = min_x.min(x);
                min_y = min_y.min(y);
                max_x = max_x.max(x);
                max_y = max_y.max(y);
            }
            spec_of[hand.center_channel()] = Some(CenterSpec {
                center: (mcp.0 / 5.0, mcp.1 / 5.0),
                kernel: crate::maps::kernel_from_bbox(max_x - min_x, max_y - min_y),
            });
        }
        if let (Some(l), Some(r)) = (spec_of[0], spec_of[1]) {
            let (pl, pr) = collision_aware_repulsion(
                l.center,
                r.center,
                l.kernel,
                r.kernel,
                self.scene.interaction.alpha,
            )?;
            spec_of[0] = Some(CenterSpec { center: pl, ..l });
            spec_of[1] = Some(CenterSpec { center: pr, ..r });
        }
        let mut pred = render_center_map(self.scene.map_size, self.scene.map_size, &spec_of);
        pred.mapv_inplace(|v| v.clamp(1e-7, 1.0 - 1e-7));
        Ok(focal_center_loss(&pred, gt))
    }

    /// Cross entropy between one-hot logits of the candidate's rasterized
    /// segmentation and the ground-truth labels.
    fn part_term(
        &self,
        params: &[HandParams],
        meshes: &[Vec<nalgebra::Vector3<f64>>],
        gt: &Array2<u16>,
    ) -> Result<f64> {
        let mut splats = Vec::new();
        for (i, &hand) in self.hands.iter().enumerate() {
            let proj = project_weak_perspective(&meshes[i], &params[i].camera);
            let base = hand.part_label_base();
            for (v, &(x, y)) in proj.iter().enumerate() {
                splats.push(crate::maps::PartSplat {
                    x,
                    y,
                    z: meshes[i][v].z,
                    label: (base + self.rig.vertex_parts()[v]) as u16,
                });
            }
        }
        let size = self.scene.map_size;
        let (onehot, _) = crate::maps::render_part_segmentation(&splats, size, size)?;
        let mut logits = Array3::zeros((PART_CHANNELS, size, size));
        logits.zip_mut_with(&onehot, |l, &o| *l = o * PART_LOGIT_SCALE);
        part_seg_loss(&logits, gt)
    }
}

/// Central differences of the objective along every coordinate; the same
/// probes yield the diagonal second differences used as a preconditioner.
/// Central differences over the coordinate range [lo, hi): per-coordinate
/// gradient and second-difference curvature estimates.
fn probe_gradient(
    obj: &Objective,
    x: &[f64],
    f0: f64,
    h: f64,
    lo: usize,
    hi: usize,
) -> (Vec<f64>, Vec<f64>) {
    let pairs: Vec<(f64, f64)> = (lo..hi)
        .into_par_iter()
        .map(|i| {
            let mut xp = x.to_vec();
            xp[i] = x[i] + h;
            let fp = obj.eval(&xp).0;
            xp[i] = x[i] - h;
            let fm = obj.eval(&xp).0;
            ((fp - fm) / (2.0 * h), (fp - 2.0 * f0 + fm) / (h * h))
        })
        .collect();
    pairs.into_iter().unzip()
}

/// Limited-memory quasi-Newton state for one hand's parameter block.
struct BlockState {
    lo: usize,
    hi: usize,
    /// Recent (step, gradient change, 1 / (step . change)) pairs.
    mem: std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)>,
    /// Block coordinates and block gradient before the last accepted step.
    prev: Option<(Vec<f64>, Vec<f64>)>,
}

impl BlockState {
    const MEMORY: usize = 10;

    fn new(lo: usize, hi: usize) -> Self {
        BlockState {
            lo,
            hi,
            mem: std::collections::VecDeque::with_capacity(Self::MEMORY),
            prev: None,
        }
    }

    /// One descent step on this block with the rest of the vector held
    /// fixed: finite-difference probe, two-loop direction, backtracking plus
    /// doubling line search with one parabolic refinement. On success the
    /// vector is updated in place and the new total is returned.
    fn step(
        &mut self,
        obj: &Objective,
        x: &mut Vec<f64>,
        f0: f64,
        h: f64,
        cfg: &FitConfig,
    ) -> Option<(f64, Vec<LossTerm>)> {
        let (grad, curv) = probe_gradient(obj, x, f0, h, self.lo, self.hi);
        let c_max = curv
            .iter()
            .copied()
            .filter(|c| c.is_finite() && *c > 0.0)
            .fold(0.0f64, f64::max)
            .max(1e-12);
        // Jacobi scaling from the probe second differences seeds the inverse
        // curvature model; flat or negative entries fall back to the
        // stiffest scale so those steps stay small.
        let h0: Vec<f64> = curv
            .iter()
            .map(|&c| {
                let c_eff = if c.is_finite() && c > 0.0 {
                    c.max(1e-4 * c_max)
                } else {
                    c_max
                };
                1.0 / c_eff
            })
            .collect();
        let sanitized: Vec<f64> = grad
            .iter()
            .map(|&g| if g.is_finite() { g } else { 0.0 })
            .collect();

        if let Some((xb_prev, g_prev)) = self.prev.take() {
            let s: Vec<f64> = x[self.lo..self.hi]
                .iter()
                .zip(&xb_prev)
                .map(|(&a, &b)| a - b)
                .collect();
            let y: Vec<f64> = sanitized
                .iter()
                .zip(&g_prev)
                .map(|(&a, &b)| a - b)
                .collect();
            let sy: f64 = s.iter().zip(&y).map(|(&a, &b)| a * b).sum();
            let ns: f64 = s.iter().map(|v| v * v).sum::<f64>().sqrt();
            let ny: f64 = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            // only pairs with solid positive curvature enter the memory
            if sy.is_finite() && sy > 1e-10 * ns * ny {
                if self.mem.len() == Self::MEMORY {
                    self.mem.pop_front();
                }
                self.mem.push_back((s, y, 1.0 / sy));
            }
        }

        // two-loop recursion: dir = -(approximate inverse Hessian) * grad
        let mut q = sanitized.clone();
        let mut alphas = Vec::with_capacity(self.mem.len());
        for (s, y, rho) in self.mem.iter().rev() {
            let a = rho * s.iter().zip(&q).map(|(&si, &qi)| si * qi).sum::<f64>();
            for (qi, &yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        let mut r: Vec<f64> = q.iter().zip(&h0).map(|(&qi, &h0i)| qi * h0i).collect();
        for ((s, y, rho), &a) in self.mem.iter().zip(alphas.iter().rev()) {
            let b = rho * y.iter().zip(&r).map(|(&yi, &ri)| yi * ri).sum::<f64>();
            for (ri, &si) in r.iter_mut().zip(s) {
                *ri += (a - b) * si;
            }
        }
        let mut dir: Vec<f64> = r.iter().map(|&v| -v).collect();
        let mut slope: f64 = dir.iter().zip(&sanitized).map(|(&d, &g)| d * g).sum();
        if !(slope < 0.0) {
            // curvature model turned uphill; drop it and take the scaled
            // gradient instead
            self.mem.clear();
            dir = sanitized
                .iter()
                .zip(&h0)
                .map(|(&g, &h0i)| -g * h0i)
                .collect();
            slope = dir.iter().zip(&sanitized).map(|(&d, &g)| d * g).sum();
        }
        if dir.iter().all(|&d| d == 0.0) {
            return None;
        }

        let xs: &[f64] = x;
        let lo = self.lo;
        let try_at = |t: f64| -> (Vec<f64>, f64, LossBreakdown) {
            let mut cand = xs.to_vec();
            for (k, &d) in dir.iter().enumerate() {
                cand[lo + k] += t * d;
            }
            let (f, bd) = obj.eval(&cand);
            (cand, f, bd)
        };
        let mut t = cfg.step;
        let mut accepted = None;
        for _ in 0..=cfg.max_halvings {
            let (cand, f_new, bd_new) = try_at(t);
            if f_new < f0 {
                accepted = Some((t, cand, f_new, bd_new));
                break;
            }
            t *= 0.5;
        }
        let Some((mut t_acc, mut cand, mut f_new, mut bd_new)) = accepted else {
            // a fresh probe could not improve this block; its curvature
            // history is no longer trustworthy
            self.mem.clear();
            return None;
        };
        // expand while doubling keeps improving: quasi-Newton directions
        // often support a much longer step than the unit one
        for _ in 0..6 {
            let (cand2, f2, bd2) = try_at(2.0 * t_acc);
            if f2 < f_new {
                t_acc *= 2.0;
                cand = cand2;
                f_new = f2;
                bd_new = bd2;
            } else {
                break;
            }
        }
        // one parabolic refinement through (0, f0) with the probe slope and
        // the best point so far; keeps whichever is lower
        let denom = f_new - f0 - slope * t_acc;
        if denom > 0.0 {
            let t_star = -slope * t_acc * t_acc / (2.0 * denom);
            if t_star.is_finite() && t_star > 0.0 && t_star <= 4.0 * t_acc && t_star != t_acc {
                let (cand2, f2, bd2) = try_at(t_star);
                if f2 < f_new {
                    cand = cand2;
                    f_new = f2;
                    bd_new = bd2;
                }
            }
        }

        self.prev = Some((x[self.lo..self.hi].to_vec(), sanitized));
        *x = cand;
        Some((f_new, bd_new.terms))
    }
}

/// Fits hand parameters to a scene's ground truth by limited-memory
/// quasi-Newton descent on finite-difference gradients, one curvature model
/// per hand block, with a backtracking plus expansion line search. The probe
/// second differences seed the inverse curvature model. The initial guess
/// must cover exactly the hands present in the scene.
pub fn fit_scene(
    rig: &HandRig,
    scene: &Scene,
    init_left: Option<&HandParams>,
    init_right: Option<&HandParams>,
    cfg: &FitConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    for (hand, init) in [(Handedness::Left, init_left), (Handedness::Right, init_right)] {
        match (scene.truth(hand).is_some(), init.is_some()) {
            (true, false) => {
                return Err(Error::Format(format!(
                    "scene has a {hand:?} hand but no initial guess was given"
                )))
            }
            (false, true) => {
                return Err(Error::Format(format!(
                    "initial guess given for a {hand:?} hand the scene does not have"
                )))
            }
            _ => {}
        }
    }

    let obj = Objective::new(rig, scene, cfg)?;
    let mut x: Vec<f64> = Vec::with_capacity(obj.dim());
    for &hand in &obj.hands {
        let init = match hand {
            Handedness::Left => init_left,
            Handedness::Right => init_right,
        };
        x.extend_from_slice(&init.expect("presence checked").flatten());
    }

    let unpack_result = |obj: &Objective, x: &[f64]| -> Result<(Option<HandParams>, Option<HandParams>)> {
        let params = obj.unpack(x)?;
        let mut left = None;
        let mut right = None;
        for (i, &hand) in obj.hands.iter().enumerate() {
            match hand {
                Handedness::Left => left = Some(params[i].clone()),
                Handedness::Right => right = Some(params[i].clone()),
            }
        }
        Ok((left, right))
    };

    let (mut f0, bd0) = obj.eval(&x);
    if !f0.is_finite() {
        return Err(Error::InitializationError(f0));
    }
    let (init_l, init_r) = unpack_result(&obj, &x)?;
    let initial_metrics = scene_metrics(rig, scene, init_l.as_ref(), init_r.as_ref())?;
    let initial_loss = f0;
    let mut trace = vec![TraceRow {
        iter: 0,
        total: f0,
        terms: bd0.terms,
    }];

    let mut iterations = 0usize;
    let mut converged = false;
    let h = cfg.fd_step;
    // One quasi-Newton state per hand block. The default objective is
    // separable across hands, so per-block curvature models condition as
    // well as a single-hand fit; with the map terms enabled the blocks
    // couple and this becomes plain block-coordinate descent, still
    // monotone.
    let mut blocks: Vec<BlockState> = (0..obj.hands.len())
        .map(|i| BlockState::new(i * PARAM_DIM, (i + 1) * PARAM_DIM))
        .collect();
    for iter in 1..=cfg.max_iters {
        if f0 <= CONVERGED_LOSS {
            converged = true;
            break;
        }
        let f_start = f0;
        let mut latest_terms: Option<Vec<LossTerm>> = None;
        for blk in &mut blocks {
            if let Some((f_new, terms)) = blk.step(&obj, &mut x, f0, h, cfg) {
                f0 = f_new;
                latest_terms = Some(terms);
            }
        }
        let Some(terms) = latest_terms else {
            // no block found an improving step
            converged = true;
            break;
        };
        iterations += 1;
        trace.push(TraceRow {
            iter,
            total: f0,
            terms,
        });
        if f_start - f0 < cfg.tol * f0.max(1e-12) {
            converged = true;
            break;
        }
    }
    if f0 <= CONVERGED_LOSS {
        converged = true;
    }

    let (left, right) = unpack_result(&obj, &x)?;
    let final_metrics = scene_metrics(rig, scene, left.as_ref(), right.as_ref())?;
    Ok(FitResult {
        left,
        right,
        converged,
        iterations,
        initial_loss,
        final_loss: f0,
        trace,
        initial_metrics,
        final_metrics,
    })
}
