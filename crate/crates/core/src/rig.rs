use nalgebra::Vector3;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};

/// Kinematic joints (wrist + 3 per finger x 5).
pub const JOINTS: usize = 16;
/// Regressed output joints (the 16 kinematic joints + 5 fingertips).
pub const OUT_JOINTS: usize = 21;
/// Shape space dimension.
pub const SHAPE_DIM: usize = 10;
/// Part classes per hand (one per skinning joint).
pub const PARTS_PER_HAND: usize = 16;
/// Bone edges over the 21 output joints.
pub const BONES: usize = 20;

/// Articulated hand rig: template surface, shape basis, skinning weights,
/// joint regressor and kinematic tree. Both hands share one rig; handedness
/// only selects map channels and labels downstream.
#[derive(Debug, Clone)]
pub struct HandRig {
    template: Vec<Vector3<f64>>,
    faces: Vec<[u32; 3]>,
    shape_basis: Vec<[Vector3<f64>; SHAPE_DIM]>,
    skin_weights: Array2<f64>,
    joint_regressor: Array2<f64>,
    parent: [i32; JOINTS],
    rest_joints: Vec<Vector3<f64>>,
    mcp_indices: [usize; 5],
    bone_edges: Vec<[usize; 2]>,
    // caches derived at construction
    sparse_weights: Vec<Vec<(usize, f64)>>,
    sparse_regressor: Vec<Vec<(usize, f64)>>,
    vertex_parts: Vec<usize>,
}

impl HandRig {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        template: Vec<Vector3<f64>>,
        faces: Vec<[u32; 3]>,
        shape_basis: Vec<[Vector3<f64>; SHAPE_DIM]>,
        skin_weights: Array2<f64>,
        joint_regressor: Array2<f64>,
        parent: [i32; JOINTS],
        rest_joints: Vec<Vector3<f64>>,
        mcp_indices: [usize; 5],
        bone_edges: Vec<[usize; 2]>,
    ) -> Result<Self> {
        let mut rig = HandRig {
            template,
            faces,
            shape_basis,
            skin_weights,
            joint_regressor,
            parent,
            rest_joints,
            mcp_indices,
            bone_edges,
            sparse_weights: Vec::new(),
            sparse_regressor: Vec::new(),
            vertex_parts: Vec::new(),
        };
        rig.validate()?;
        rig.build_caches();
        Ok(rig)
    }

    /// Structural checks: tree ordering, convex weight rows, regressor rows
    /// summing to 1, index ranges, finite values.
    pub fn validate(&self) -> Result<()> {
        let v = self.template.len();
        if v == 0 {
            return Err(Error::Rig("empty template".into()));
        }
        if self.shape_basis.len() != v {
            return Err(Error::Rig(format!(
                "shape basis covers {} vertices, template has {v}",
                self.shape_basis.len()
            )));
        }
        if self.skin_weights.dim() != (v, JOINTS) {
            return Err(Error::Rig(format!(
                "skin weights shaped {:?}, expected ({v}, {JOINTS})",
                self.skin_weights.dim()
            )));
        }
        if self.joint_regressor.dim() != (OUT_JOINTS, v) {
            return Err(Error::Rig(format!(
                "joint regressor shaped {:?}, expected ({OUT_JOINTS}, {v})",
                self.joint_regressor.dim()
            )));
        }
        if self.rest_joints.len() != JOINTS {
            return Err(Error::Rig(format!(
                "{} rest joints, expected {JOINTS}",
                self.rest_joints.len()
            )));
        }
        if self.parent[0] != -1 {
            return Err(Error::Rig("joint 0 must be the root (parent -1)".into()));
        }
        for j in 1..JOINTS {
            if self.parent[j] < 0 || self.parent[j] as usize >= j {
                return Err(Error::Rig(format!(
                    "parent[{j}] = {} violates parent[j] < j",
                    self.parent[j]
                )));
            }
        }
        for p in self.template.iter().chain(&self.rest_joints) {
            if !p.iter().all(|c| c.is_finite()) {
                return Err(Error::Rig("non-finite coordinates".into()));
            }
        }
        for row in &self.shape_basis {
            for d in row {
                if !d.iter().all(|c| c.is_finite()) {
                    return Err(Error::Rig("non-finite shape basis".into()));
                }
            }
        }
        for (i, row) in self.skin_weights.rows().into_iter().enumerate() {
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Rig(format!(
                    "skin weight row {i} sums to {sum}, expected 1"
                )));
            }
            if row.iter().any(|&w| !w.is_finite() || w < -1e-12) {
                return Err(Error::Rig(format!("skin weight row {i} not convex")));
            }
        }
        for (i, row) in self.joint_regressor.rows().into_iter().enumerate() {
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Rig(format!(
                    "regressor row {i} sums to {sum}, expected 1"
                )));
            }
            if row.iter().any(|&w| !w.is_finite() || w < -1e-12) {
                return Err(Error::Rig(format!("regressor row {i} not convex")));
            }
        }
        let mut seen = [false; JOINTS];
        for &m in &self.mcp_indices {
            if m >= JOINTS || seen[m] {
                return Err(Error::Rig(format!("bad mcp index {m}")));
            }
            seen[m] = true;
        }
        if self.bone_edges.len() != BONES {
            return Err(Error::Rig(format!(
                "{} bone edges, expected {BONES}",
                self.bone_edges.len()
            )));
        }
        for e in &self.bone_edges {
            if e[0] >= OUT_JOINTS || e[1] >= OUT_JOINTS || e[0] == e[1] {
                return Err(Error::Rig(format!("bad bone edge {:?}", e)));
            }
        }
        for f in &self.faces {
            if f.iter().any(|&i| i as usize >= v) {
                return Err(Error::Rig(format!("face {:?} outside template", f)));
            }
        }
        Ok(())
    }

    fn build_caches(&mut self) {
        let v = self.template.len();
        self.sparse_weights = (0..v)
            .map(|i| {
                self.skin_weights
                    .row(i)
                    .iter()
                    .enumerate()
                    .filter(|(_, &w)| w != 0.0)
                    .map(|(j, &w)| (j, w))
                    .collect()
            })
            .collect();
        self.sparse_regressor = (0..OUT_JOINTS)
            .map(|r| {
                self.joint_regressor
                    .row(r)
                    .iter()
                    .enumerate()
                    .filter(|(_, &w)| w != 0.0)
                    .map(|(i, &w)| (i, w))
                    .collect()
            })
            .collect();
        // part of a vertex = its dominant skinning joint
        self.vertex_parts = (0..v)
            .map(|i| {
                let row = self.skin_weights.row(i);
                let mut best = 0;
                let mut best_w = f64::NEG_INFINITY;
                for (j, &w) in row.iter().enumerate() {
                    if w > best_w {
                        best_w = w;
                        best = j;
                    }
                }
                best
            })
            .collect();
    }

    pub fn vertex_count(&self) -> usize {
        self.template.len()
    }

    pub fn template(&self) -> &[Vector3<f64>] {
        &self.template
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn shape_basis(&self) -> &[[Vector3<f64>; SHAPE_DIM]] {
        &self.shape_basis
    }

    pub fn skin_weights(&self) -> &Array2<f64> {
        &self.skin_weights
    }

    pub fn joint_regressor(&self) -> &Array2<f64> {
        &self.joint_regressor
    }

    pub fn parent_of(&self, j: usize) -> Option<usize> {
        let p = self.parent[j];
        (p >= 0).then_some(p as usize)
    }

    pub fn parent(&self) -> &[i32; JOINTS] {
        &self.parent
    }

    pub fn rest_joints(&self) -> &[Vector3<f64>] {
        &self.rest_joints
    }

    pub fn mcp_indices(&self) -> &[usize; 5] {
        &self.mcp_indices
    }

    pub fn bone_edges(&self) -> &[[usize; 2]] {
        &self.bone_edges
    }

    pub fn sparse_weights(&self, v: usize) -> &[(usize, f64)] {
        &self.sparse_weights[v]
    }

    pub fn sparse_regressor(&self) -> &[Vec<(usize, f64)>] {
        &self.sparse_regressor
    }

    /// Per-vertex part index in 0..16 (dominant skinning joint).
    pub fn vertex_parts(&self) -> &[usize] {
        &self.vertex_parts
    }
}

// ---------------------------------------------------------------------------
// Deterministic toy rig
// ---------------------------------------------------------------------------

const FINGERS: usize = 5;
const RINGS_PER_FINGER: usize = 7;
const RING_VERTS: usize = 8;
const FINGER_VERTS: usize = RINGS_PER_FINGER * RING_VERTS; // 56
const WRIST_RING_START: usize = FINGERS * FINGER_VERTS; // 280
const PALM_START: usize = WRIST_RING_START + RING_VERTS; // 288
const PALM_ROWS: usize = 14;
const PALM_COLS: usize = 35;
/// Toy rig vertex count: 5 finger tubes + wrist ring + palm grid.
pub const TOY_VERTS: usize = PALM_START + PALM_ROWS * PALM_COLS; // 778

fn toy_shape_basis(p: &Vector3<f64>) -> [Vector3<f64>; SHAPE_DIM] {
    let (x, y, z) = (p.x, p.y, p.z);
    [
        Vector3::new(0.05 * x, 0.05 * y, 0.05 * z),
        Vector3::new(0.0, 0.08 * y, 0.0),
        Vector3::new(0.08 * x, 0.0, 0.0),
        Vector3::new(0.0, 0.0, 0.6 * z),
        Vector3::new(0.004 * (40.0 * y).sin(), 0.0, 0.004 * (40.0 * x).cos()),
        Vector3::new(
            0.004 * (30.0 * x + 1.0).cos(),
            0.004 * (30.0 * y + 0.5).sin(),
            0.0,
        ),
        Vector3::new(
            0.003 * (25.0 * (x + y)).sin(),
            0.003 * (25.0 * (x - y)).cos(),
            0.003 * (20.0 * z + 1.0).sin(),
        ),
        Vector3::new(-0.05 * y, 0.05 * x, 0.0),
        Vector3::new(
            0.004 * (50.0 * x).sin() * (20.0 * y).cos(),
            0.002 * (35.0 * y).cos(),
            0.0,
        ),
        Vector3::new(
            0.002 * (15.0 * y).cos(),
            0.002 * (15.0 * x).sin(),
            0.002 * (25.0 * (x + y)).cos(),
        ),
    ]
}

impl HandRig {
    /// The built-in rig: 778 vertices, five finger tubes of stacked 8-vertex
    /// rings, a wrist ring and a palm grid. Rings are centered exactly on the
    /// kinematic joints and fingertips and each ring shares one skinning
    /// weight row, so the regressed joints coincide with forward kinematics.
    pub fn toy() -> Self {
        let angles_deg = [-50.0f64, -20.0, 0.0, 20.0, 40.0];
        let mcp_radius = [0.035f64, 0.045, 0.045, 0.045, 0.045];
        let seg_lengths = [
            [0.032f64, 0.022, 0.020],
            [0.036, 0.024, 0.020],
            [0.040, 0.026, 0.021],
            [0.036, 0.024, 0.020],
            [0.028, 0.018, 0.016],
        ];
        let ring_radii = [0.0085f64, 0.008, 0.0075, 0.007, 0.0065, 0.006, 0.005];
        let radius_scale = [1.15f64, 1.0, 1.0, 1.0, 0.85];

        let mut template = vec![Vector3::zeros(); TOY_VERTS];
        let mut weights = Array2::<f64>::zeros((TOY_VERTS, JOINTS));
        let mut regressor = Array2::<f64>::zeros((OUT_JOINTS, TOY_VERTS));
        let mut rest_joints = vec![Vector3::zeros(); JOINTS];
        let mut faces: Vec<[u32; 3]> = Vec::new();

        let zhat = Vector3::new(0.0, 0.0, 1.0);
        for f in 0..FINGERS {
            let theta = angles_deg[f].to_radians();
            let u = Vector3::new(theta.sin(), theta.cos(), 0.0);
            let e1 = Vector3::new(u.y, -u.x, 0.0);
            let mcp = u * mcp_radius[f];
            let pip = mcp + u * seg_lengths[f][0];
            let dip = pip + u * seg_lengths[f][1];
            let tip = dip + u * seg_lengths[f][2];
            let jm = 1 + 3 * f; // mcp joint index
            let jp = 2 + 3 * f;
            let jd = 3 + 3 * f;
            rest_joints[jm] = mcp;
            rest_joints[jp] = pip;
            rest_joints[jd] = dip;

            let centers = [
                mcp,
                (mcp + pip) * 0.5,
                pip,
                (pip + dip) * 0.5,
                dip,
                (dip + tip) * 0.5,
                tip,
            ];
            // (joint, weight) rows shared by every vertex of a ring
            let ring_weights: [&[(usize, f64)]; RINGS_PER_FINGER] = [
                &[(jm, 0.6), (0, 0.4)],
                &[(jm, 1.0)],
                &[(jp, 0.55), (jm, 0.45)],
                &[(jp, 1.0)],
                &[(jd, 0.55), (jp, 0.45)],
                &[(jd, 1.0)],
                &[(jd, 1.0)],
            ];
            for r in 0..RINGS_PER_FINGER {
                let rho = ring_radii[r] * radius_scale[f];
                let phase = r as f64 * 0.2;
                for i in 0..RING_VERTS {
                    let phi = phase + std::f64::consts::TAU * i as f64 / RING_VERTS as f64;
                    let idx = f * FINGER_VERTS + r * RING_VERTS + i;
                    template[idx] = centers[r] + (e1 * phi.cos() + zhat * phi.sin()) * rho;
                    for &(j, w) in ring_weights[r] {
                        weights[(idx, j)] = w;
                    }
                }
            }
            // regressor rows: uniform over the ring centered on each target
            let targets = [(jm, 0usize), (jp, 2), (jd, 4), (16 + f, 6)];
            for (row, ring) in targets {
                for i in 0..RING_VERTS {
                    regressor[(row, f * FINGER_VERTS + ring * RING_VERTS + i)] =
                        1.0 / RING_VERTS as f64;
                }
            }
            // tube faces between consecutive rings
            let base = (f * FINGER_VERTS) as u32;
            for r in 0..RINGS_PER_FINGER - 1 {
                for i in 0..RING_VERTS {
                    let a = base + (r * RING_VERTS + i) as u32;
                    let a2 = base + (r * RING_VERTS + (i + 1) % RING_VERTS) as u32;
                    let b = base + ((r + 1) * RING_VERTS + i) as u32;
                    let b2 = base + ((r + 1) * RING_VERTS + (i + 1) % RING_VERTS) as u32;
                    faces.push([a, a2, b2]);
                    faces.push([a, b2, b]);
                }
            }
            // tip cap
            let t0 = base + ((RINGS_PER_FINGER - 1) * RING_VERTS) as u32;
            for i in 1..RING_VERTS - 1 {
                faces.push([t0, t0 + i as u32, t0 + i as u32 + 1]);
            }
        }

        // wrist ring in the x-z plane around the origin
        rest_joints[0] = Vector3::zeros();
        for i in 0..RING_VERTS {
            let phi = std::f64::consts::TAU * i as f64 / RING_VERTS as f64;
            let idx = WRIST_RING_START + i;
            template[idx] = Vector3::new(0.016 * phi.cos(), 0.0, 0.016 * phi.sin());
            weights[(idx, 0)] = 1.0;
            regressor[(0, idx)] = 1.0 / RING_VERTS as f64;
        }
        let w0 = WRIST_RING_START as u32;
        for i in 1..RING_VERTS - 1 {
            faces.push([w0, w0 + i as u32, w0 + i as u32 + 1]);
        }

        // palm grid
        for row in 0..PALM_ROWS {
            for col in 0..PALM_COLS {
                let idx = PALM_START + row * PALM_COLS + col;
                let x = -0.042 + 0.084 * col as f64 / (PALM_COLS - 1) as f64;
                let y = 0.004 + 0.036 * row as f64 / (PALM_ROWS - 1) as f64;
                let z = 0.002 * (std::f64::consts::PI * x / 0.084).sin()
                    * (std::f64::consts::PI * y / 0.08).cos()
                    - 0.001;
                template[idx] = Vector3::new(x, y, z);
                weights[(idx, 0)] = 1.0;
            }
        }
        for row in 0..PALM_ROWS - 1 {
            for col in 0..PALM_COLS - 1 {
                let a = (PALM_START + row * PALM_COLS + col) as u32;
                let b = a + 1;
                let c = a + PALM_COLS as u32;
                let d = c + 1;
                faces.push([a, b, d]);
                faces.push([a, d, c]);
            }
        }

        let shape_basis = template.iter().map(toy_shape_basis).collect();

        let mut parent = [0i32; JOINTS];
        parent[0] = -1;
        for f in 0..FINGERS {
            parent[1 + 3 * f] = 0;
            parent[2 + 3 * f] = (1 + 3 * f) as i32;
            parent[3 + 3 * f] = (2 + 3 * f) as i32;
        }

        let mut bone_edges = Vec::with_capacity(BONES);
        for f in 0..FINGERS {
            bone_edges.push([0, 1 + 3 * f]);
            bone_edges.push([1 + 3 * f, 2 + 3 * f]);
            bone_edges.push([2 + 3 * f, 3 + 3 * f]);
            bone_edges.push([3 + 3 * f, 16 + f]);
        }

        HandRig::new(
            template,
            faces,
            shape_basis,
            weights,
            regressor,
            parent,
            rest_joints,
            [1, 4, 7, 10, 13],
            bone_edges,
        )
        .expect("built-in rig must validate")
    }
}

// ---------------------------------------------------------------------------
// JSON serialization
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct RigIo {
    version: u32,
    template: Vec<[f64; 3]>,
    faces: Vec<[u32; 3]>,
    /// per vertex: 10 displacement vectors
    shape_basis: Vec<Vec<[f64; 3]>>,
    skin_weights: Vec<Vec<f64>>,
    joint_regressor: Vec<Vec<f64>>,
    parent: Vec<i32>,
    rest_joints: Vec<[f64; 3]>,
    mcp_indices: Vec<usize>,
    bone_edges: Vec<[usize; 2]>,
}

impl HandRig {
    pub fn to_json(&self) -> serde_json::Value {
        let io = RigIo {
            version: 1,
            template: self.template.iter().map(|p| [p.x, p.y, p.z]).collect(),
            faces: self.faces.clone(),
            shape_basis: self
                .shape_basis
                .iter()
                .map(|row| row.iter().map(|d| [d.x, d.y, d.z]).collect())
                .collect(),
            skin_weights: self
                .skin_weights
                .rows()
                .into_iter()
                .map(|r| r.to_vec())
                .collect(),
            joint_regressor: self
                .joint_regressor
                .rows()
                .into_iter()
                .map(|r| r.to_vec())
                .collect(),
            parent: self.parent.to_vec(),
            rest_joints: self.rest_joints.iter().map(|p| [p.x, p.y, p.z]).collect(),
            mcp_indices: self.mcp_indices.to_vec(),
            bone_edges: self.bone_edges.clone(),
        };
        serde_json::to_value(io).expect("rig serialization cannot fail")
    }

    pub fn from_json(value: serde_json::Value) -> Result<Self> {
        let io: RigIo = serde_json::from_value(value)?;
        if io.version != 1 {
            return Err(Error::Format(format!(
                "unsupported rig version {}",
                io.version
            )));
        }
        let v = io.template.len();
        if io.skin_weights.len() != v || io.skin_weights.iter().any(|r| r.len() != JOINTS) {
            return Err(Error::Rig("skin weight rows malformed".into()));
        }
        if io.joint_regressor.len() != OUT_JOINTS
            || io.joint_regressor.iter().any(|r| r.len() != v)
        {
            return Err(Error::Rig("regressor rows malformed".into()));
        }
        if io.shape_basis.len() != v || io.shape_basis.iter().any(|r| r.len() != SHAPE_DIM) {
            return Err(Error::Rig("shape basis rows malformed".into()));
        }
        if io.parent.len() != JOINTS {
            return Err(Error::Rig(format!(
                "{} parent entries, expected {JOINTS}",
                io.parent.len()
            )));
        }
        if io.mcp_indices.len() != 5 {
            return Err(Error::Rig(format!(
                "{} mcp indices, expected 5",
                io.mcp_indices.len()
            )));
        }
        let mut weights = Array2::zeros((v, JOINTS));
        for (i, row) in io.skin_weights.iter().enumerate() {
            for (j, &w) in row.iter().enumerate() {
                weights[(i, j)] = w;
            }
        }
        let mut regressor = Array2::zeros((OUT_JOINTS, v));
        for (i, row) in io.joint_regressor.iter().enumerate() {
            for (j, &w) in row.iter().enumerate() {
                regressor[(i, j)] = w;
            }
        }
        HandRig::new(
            io.template
                .iter()
                .map(|p| Vector3::new(p[0], p[1], p[2]))
                .collect(),
            io.faces,
            io.shape_basis
                .iter()
                .map(|row| std::array::from_fn(|k| Vector3::new(row[k][0], row[k][1], row[k][2])))
                .collect(),
            weights,
            regressor,
            io.parent
                .try_into()
                .map_err(|_| Error::Rig("parent array size".into()))?,
            io.rest_joints
                .iter()
                .map(|p| Vector3::new(p[0], p[1], p[2]))
                .collect(),
            io.mcp_indices
                .try_into()
                .map_err(|_| Error::Rig("mcp index array size".into()))?,
            io.bone_edges,
        )
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&self.to_json())?;
        crate::export::atomic_write(path, text.as_bytes())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        HandRig::from_json(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn toy_rig_validates_and_has_expected_shape() {
        let rig = HandRig::toy();
        assert_eq!(rig.vertex_count(), 778);
        assert_eq!(rig.rest_joints().len(), 16);
        assert_eq!(rig.bone_edges().len(), 20);
        assert_eq!(rig.mcp_indices(), &[1, 4, 7, 10, 13]);
        assert!(rig.validate().is_ok());
    }

    #[test]
    fn toy_regressor_reproduces_rest_joints_exactly() {
        let rig = HandRig::toy();
        let joints = crate::hand::regress_joints(&rig, rig.template()).unwrap();
        for (joint, rest) in joints.iter().zip(rig.rest_joints()) {
            assert_abs_diff_eq!(joint, rest, epsilon = 1e-12);
        }
    }

    #[test]
    fn toy_every_part_has_vertices() {
        let rig = HandRig::toy();
        let mut seen = [false; PARTS_PER_HAND];
        for &p in rig.vertex_parts() {
            seen[p] = true;
        }
        assert!(seen.iter().all(|&s| s), "parts missing vertices: {seen:?}");
    }

    #[test]
    fn toy_faces_reference_every_vertex() {
        let rig = HandRig::toy();
        let mut used = vec![false; rig.vertex_count()];
        for f in rig.faces() {
            for &i in f {
                used[i as usize] = true;
            }
        }
        assert!(used.iter().all(|&u| u));
    }

    #[test]
    fn json_round_trip_preserves_geometry() {
        let rig = HandRig::toy();
        let back = HandRig::from_json(rig.to_json()).unwrap();
        assert_eq!(rig.vertex_count(), back.vertex_count());
        for (a, b) in rig.template().iter().zip(back.template()) {
            assert_eq!(a, b);
        }
        assert_eq!(rig.skin_weights(), back.skin_weights());
        assert_eq!(rig.joint_regressor(), back.joint_regressor());
        assert_eq!(rig.parent(), back.parent());
        assert_eq!(rig.bone_edges(), back.bone_edges());
    }

    #[test]
    fn validation_rejects_broken_rigs() {
        let rig = HandRig::toy();
        // parent cycle
        let mut bad = rig.to_json();
        bad["parent"][2] = serde_json::json!(5);
        assert!(HandRig::from_json(bad).is_err());
        // weight row not summing to 1
        let mut bad = rig.to_json();
        bad["skin_weights"][0][0] = serde_json::json!(0.5);
        bad["skin_weights"][0][1] = serde_json::json!(0.1);
        assert!(HandRig::from_json(bad).is_err());
        // face index out of range
        let mut bad = rig.to_json();
        bad["faces"][0][0] = serde_json::json!(100000);
        assert!(HandRig::from_json(bad).is_err());
        // bone edge self loop
        let mut bad = rig.to_json();
        bad["bone_edges"][0] = serde_json::json!([3, 3]);
        assert!(HandRig::from_json(bad).is_err());
    }
}
