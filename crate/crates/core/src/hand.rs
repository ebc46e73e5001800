use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rig::{HandRig, JOINTS, OUT_JOINTS, SHAPE_DIM};

/// Entries per flattened hand parameter vector: 16 joints x 6 rotation
/// entries + 10 shape coefficients + (s, tx, ty).
pub const PARAM_DIM: usize = JOINTS * 6 + SHAPE_DIM + 3;

/// Pose + shape entries, the differentiable block of the parameter vector.
pub const POSE_SHAPE_DIM: usize = JOINTS * 6 + SHAPE_DIM;

/// Norm threshold under which 6D rotation inputs are rejected.
pub const ROT6D_DEGENERATE_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Handedness {
    Left,
    Right,
}

impl Handedness {
    /// Offset of this hand's 109 channels inside a 218-channel map.
    pub fn param_offset(self) -> usize {
        match self {
            Handedness::Left => 0,
            Handedness::Right => PARAM_DIM,
        }
    }

    /// Center map channel (left first).
    pub fn center_channel(self) -> usize {
        match self {
            Handedness::Left => 0,
            Handedness::Right => 1,
        }
    }

    /// First of this hand's 16 part labels (0 is background).
    pub fn part_label_base(self) -> usize {
        match self {
            Handedness::Left => 1,
            Handedness::Right => 17,
        }
    }

    pub fn other(self) -> Handedness {
        match self {
            Handedness::Left => Handedness::Right,
            Handedness::Right => Handedness::Left,
        }
    }
}

/// Weak-perspective camera: px = s * x + tx, py = s * y + ty, with s in
/// pixels per meter and (tx, ty) in map pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub s: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Camera {
    pub fn new(s: f64, tx: f64, ty: f64) -> Self {
        Camera { s, tx, ty }
    }
}

/// One hand's parameters: 16 per-joint rotations in 6D form, 10 shape
/// coefficients, and the weak-perspective camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HandParamsIo", into = "HandParamsIo")]
pub struct HandParams {
    pub pose6d: [[f64; 6]; 16],
    pub shape: [f64; 10],
    pub camera: Camera,
}

/// Wire form: pose as 96 numbers row-major (joint-major), camera as [s, tx, ty].
#[derive(Serialize, Deserialize)]
struct HandParamsIo {
    pose6d: Vec<f64>,
    shape: Vec<f64>,
    camera: [f64; 3],
}

impl From<HandParams> for HandParamsIo {
    fn from(p: HandParams) -> Self {
        HandParamsIo {
            pose6d: p.pose6d.iter().flatten().copied().collect(),
            shape: p.shape.to_vec(),
            camera: [p.camera.s, p.camera.tx, p.camera.ty],
        }
    }
}

impl TryFrom<HandParamsIo> for HandParams {
    type Error = Error;

    fn try_from(io: HandParamsIo) -> Result<Self> {
        if io.pose6d.len() != 96 {
            return Err(Error::Shape(format!(
                "pose6d has {} entries, expected 96",
                io.pose6d.len()
            )));
        }
        if io.shape.len() != 10 {
            return Err(Error::Shape(format!(
                "shape has {} entries, expected 10",
                io.shape.len()
            )));
        }
        let mut pose6d = [[0.0; 6]; 16];
        for (j, row) in pose6d.iter_mut().enumerate() {
            row.copy_from_slice(&io.pose6d[j * 6..(j + 1) * 6]);
        }
        let mut shape = [0.0; 10];
        shape.copy_from_slice(&io.shape);
        Ok(HandParams {
            pose6d,
            shape,
            camera: Camera::new(io.camera[0], io.camera[1], io.camera[2]),
        })
    }
}

impl HandParams {
    /// Rest pose (identity rotations), neutral shape, a camera that places
    /// the hand mid-map at a plausible scale.
    pub fn rest() -> Self {
        HandParams {
            pose6d: [IDENTITY_ROT6D; 16],
            shape: [0.0; 10],
            camera: Camera::new(150.0, 32.0, 32.0),
        }
    }

    /// Literal 109-entry layout: pose row-major, shape, then (s, tx, ty).
    pub fn flatten(&self) -> [f64; PARAM_DIM] {
        let mut out = [0.0; PARAM_DIM];
        for j in 0..16 {
            out[j * 6..(j + 1) * 6].copy_from_slice(&self.pose6d[j]);
        }
        out[96..106].copy_from_slice(&self.shape);
        out[106] = self.camera.s;
        out[107] = self.camera.tx;
        out[108] = self.camera.ty;
        out
    }

    /// Inverse of [`HandParams::flatten`]; the s entry is taken literally.
    pub fn unflatten(v: &[f64]) -> Result<Self> {
        if v.len() != PARAM_DIM {
            return Err(Error::Shape(format!(
                "parameter vector has {} entries, expected {PARAM_DIM}",
                v.len()
            )));
        }
        let mut pose6d = [[0.0; 6]; 16];
        for (j, row) in pose6d.iter_mut().enumerate() {
            row.copy_from_slice(&v[j * 6..(j + 1) * 6]);
        }
        let mut shape = [0.0; 10];
        shape.copy_from_slice(&v[96..106]);
        Ok(HandParams {
            pose6d,
            shape,
            camera: Camera::new(v[106], v[107], v[108]),
        })
    }
}

/// 6D encoding of the identity rotation (first two identity columns).
pub const IDENTITY_ROT6D: [f64; 6] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];

/// Decodes a 6D rotation (first two target columns, Gram-Schmidt
/// orthonormalized, third column by cross product). Always yields a proper
/// rotation; near-zero or near-parallel inputs are rejected.
pub fn rot6d_to_matrix(r: &[f64; 6]) -> Result<Matrix3<f64>> {
    let a1 = Vector3::new(r[0], r[1], r[2]);
    let a2 = Vector3::new(r[3], r[4], r[5]);
    let n1 = a1.norm();
    if !(n1 > ROT6D_DEGENERATE_EPS) {
        return Err(Error::DegenerateRotation("first column near zero"));
    }
    let b1 = a1 / n1;
    let u2 = a2 - b1 * b1.dot(&a2);
    let n2 = u2.norm();
    if !(n2 > ROT6D_DEGENERATE_EPS) {
        return Err(Error::DegenerateRotation(
            "second column parallel to the first",
        ));
    }
    let b2 = u2 / n2;
    let b3 = b1.cross(&b2);
    Ok(Matrix3::from_columns(&[b1, b2, b3]))
}

/// First two columns of a rotation matrix, the exact preimage of
/// [`rot6d_to_matrix`] for orthonormal input.
pub fn rot6d_from_matrix(m: &Matrix3<f64>) -> [f64; 6] {
    [
        m[(0, 0)],
        m[(1, 0)],
        m[(2, 0)],
        m[(0, 1)],
        m[(1, 1)],
        m[(2, 1)],
    ]
}

/// Directional derivative of [`rot6d_to_matrix`] at `r` along `dr`.
/// `r` must be non-degenerate.
pub fn rot6d_differential(r: &[f64; 6], dr: &[f64; 6]) -> Result<Matrix3<f64>> {
    let a1 = Vector3::new(r[0], r[1], r[2]);
    let a2 = Vector3::new(r[3], r[4], r[5]);
    let da1 = Vector3::new(dr[0], dr[1], dr[2]);
    let da2 = Vector3::new(dr[3], dr[4], dr[5]);
    let n1 = a1.norm();
    if !(n1 > ROT6D_DEGENERATE_EPS) {
        return Err(Error::DegenerateRotation("first column near zero"));
    }
    let b1 = a1 / n1;
    let db1 = (da1 - b1 * b1.dot(&da1)) / n1;
    let dot = b1.dot(&a2);
    let u2 = a2 - b1 * dot;
    let n2 = u2.norm();
    if !(n2 > ROT6D_DEGENERATE_EPS) {
        return Err(Error::DegenerateRotation(
            "second column parallel to the first",
        ));
    }
    let b2 = u2 / n2;
    let ddot = db1.dot(&a2) + b1.dot(&da2);
    let du2 = da2 - b1 * ddot - db1 * dot;
    let db2 = (du2 - b2 * b2.dot(&du2)) / n2;
    let db3 = db1.cross(&b2) + b1.cross(&db2);
    Ok(Matrix3::from_columns(&[db1, db2, db3]))
}

/// World rotations and joint positions from forward kinematics of the 16
/// decoded local rotations along the parent tree.
struct ForwardKinematics {
    world_rot: Vec<Matrix3<f64>>,
    joint_pos: Vec<Vector3<f64>>,
}

fn forward_kinematics(rig: &HandRig, pose6d: &[[f64; 6]; 16]) -> Result<ForwardKinematics> {
    let mut world_rot = Vec::with_capacity(JOINTS);
    let mut joint_pos = Vec::with_capacity(JOINTS);
    for (j, rot) in pose6d.iter().enumerate() {
        let local = rot6d_to_matrix(rot)?;
        match rig.parent_of(j) {
            None => {
                world_rot.push(local);
                joint_pos.push(rig.rest_joints()[j]);
            }
            Some(p) => {
                world_rot.push(world_rot[p] * local);
                let offset = rig.rest_joints()[j] - rig.rest_joints()[p];
                joint_pos.push(joint_pos[p] + world_rot[p] * offset);
            }
        }
    }
    Ok(ForwardKinematics {
        world_rot,
        joint_pos,
    })
}

/// Template displaced by the shape basis (rest joints stay fixed; shape
/// moves the surface only).
fn shaped_template(rig: &HandRig, shape: &[f64; 10]) -> Vec<Vector3<f64>> {
    let mut verts = rig.template().to_vec();
    for (v, vert) in verts.iter_mut().enumerate() {
        let basis = &rig.shape_basis()[v];
        for (k, &beta) in shape.iter().enumerate() {
            if beta != 0.0 {
                *vert += basis[k] * beta;
            }
        }
    }
    verts
}

/// Poses the rig: shape-displaced template, forward kinematics of the 16
/// rotations, linear blend skinning. Identity pose with zero shape returns
/// the template exactly.
pub fn skin_mesh(rig: &HandRig, params: &HandParams) -> Result<Vec<Vector3<f64>>> {
    let fk = forward_kinematics(rig, &params.pose6d)?;
    let template = shaped_template(rig, &params.shape);
    let mut out = Vec::with_capacity(rig.vertex_count());
    for (v, t) in template.iter().enumerate() {
        let mut p = Vector3::zeros();
        for &(j, w) in rig.sparse_weights(v) {
            let moved = fk.joint_pos[j] + fk.world_rot[j] * (t - rig.rest_joints()[j]);
            p += moved * w;
        }
        out.push(p);
    }
    Ok(out)
}

/// 21 joints as convex combinations of mesh vertices.
pub fn regress_joints(rig: &HandRig, mesh: &[Vector3<f64>]) -> Result<Vec<Vector3<f64>>> {
    if mesh.len() != rig.vertex_count() {
        return Err(Error::Shape(format!(
            "mesh has {} vertices, rig has {}",
            mesh.len(),
            rig.vertex_count()
        )));
    }
    let mut joints = Vec::with_capacity(OUT_JOINTS);
    for row in rig.sparse_regressor() {
        let mut p = Vector3::zeros();
        for &(v, w) in row {
            p += mesh[v] * w;
        }
        joints.push(p);
    }
    Ok(joints)
}

/// skin_mesh then regress_joints.
pub fn posed_joints(rig: &HandRig, params: &HandParams) -> Result<Vec<Vector3<f64>>> {
    regress_joints(rig, &skin_mesh(rig, params)?)
}

/// Weak-perspective projection of 3D points to map pixels; z is dropped.
pub fn project_weak_perspective(points: &[Vector3<f64>], camera: &Camera) -> Vec<(f64, f64)> {
    points
        .iter()
        .map(|p| (camera.s * p.x + camera.tx, camera.s * p.y + camera.ty))
        .collect()
}

/// Euclidean length of each rig bone edge over a 21-joint set.
pub fn bone_lengths(joints: &[Vector3<f64>], edges: &[[usize; 2]]) -> Result<Vec<f64>> {
    for e in edges {
        if e[0] >= joints.len() || e[1] >= joints.len() {
            return Err(Error::Shape(format!(
                "bone edge ({}, {}) outside joint set of {}",
                e[0],
                e[1],
                joints.len()
            )));
        }
    }
    Ok(edges
        .iter()
        .map(|e| (joints[e[1]] - joints[e[0]]).norm())
        .collect())
}

/// Analytic Jacobian of the 21 regressed joints w.r.t. the 106 pose+shape
/// entries. Row layout: 3 * joint + coordinate; column layout matches
/// [`HandParams::flatten`] entries 0..106.
pub fn joint_jacobian(rig: &HandRig, params: &HandParams) -> Result<ndarray::Array2<f64>> {
    let fk = forward_kinematics(rig, &params.pose6d)?;
    let template = shaped_template(rig, &params.shape);
    let mut jac = ndarray::Array2::zeros((OUT_JOINTS * 3, POSE_SHAPE_DIM));

    // Vertices touched by each skinning joint, for sparse accumulation.
    let mut verts_of_joint: Vec<Vec<usize>> = vec![Vec::new(); JOINTS];
    for v in 0..rig.vertex_count() {
        for &(j, _) in rig.sparse_weights(v) {
            verts_of_joint[j].push(v);
        }
    }
    // Regressor rows touching each vertex.
    let mut rows_of_vert: Vec<Vec<(usize, f64)>> = vec![Vec::new(); rig.vertex_count()];
    for (r, row) in rig.sparse_regressor().iter().enumerate() {
        for &(v, w) in row {
            rows_of_vert[v].push((r, w));
        }
    }

    // Pose entries: differentiate one local rotation, propagate through the
    // subtree, push through skinning weights and the regressor.
    let mut unit = [0.0; 6];
    for m in 0..JOINTS {
        for c in 0..6 {
            unit[c] = 1.0;
            let d_local = rot6d_differential(&params.pose6d[m], &unit)?;
            unit[c] = 0.0;
            let col = m * 6 + c;

            // d world rotation / d joint position per joint; zero outside the
            // subtree rooted at m. Positions depend on ancestors only, so
            // d position of m itself is zero.
            let mut d_rot: Vec<Option<Matrix3<f64>>> = vec![None; JOINTS];
            let mut d_pos: Vec<Vector3<f64>> = vec![Vector3::zeros(); JOINTS];
            let parent_rot = match rig.parent_of(m) {
                None => Matrix3::identity(),
                Some(p) => fk.world_rot[p],
            };
            d_rot[m] = Some(parent_rot * d_local);
            for j in (m + 1)..JOINTS {
                if let Some(p) = rig.parent_of(j) {
                    if let Some(dr_p) = d_rot[p] {
                        let local = fk.world_rot[p].transpose() * fk.world_rot[j];
                        d_rot[j] = Some(dr_p * local);
                        let offset = rig.rest_joints()[j] - rig.rest_joints()[p];
                        d_pos[j] = d_pos[p] + dr_p * offset;
                    }
                }
            }

            for j in m..JOINTS {
                let Some(dr) = d_rot[j] else { continue };
                for &v in &verts_of_joint[j] {
                    let w = rig
                        .sparse_weights(v)
                        .iter()
                        .find(|&&(jj, _)| jj == j)
                        .map(|&(_, w)| w)
                        .unwrap_or(0.0);
                    let dvert = (d_pos[j] + dr * (template[v] - rig.rest_joints()[j])) * w;
                    for &(r, rw) in &rows_of_vert[v] {
                        for axis in 0..3 {
                            jac[(r * 3 + axis, col)] += rw * dvert[axis];
                        }
                    }
                }
            }
        }
    }

    // Shape entries: skinning is affine in the template, so the derivative is
    // the blended world rotation applied to the basis displacement.
    for k in 0..SHAPE_DIM {
        let col = JOINTS * 6 + k;
        for (v, rows) in rows_of_vert.iter().enumerate() {
            if rows.is_empty() {
                continue;
            }
            let mut dvert = Vector3::zeros();
            for &(j, w) in rig.sparse_weights(v) {
                dvert += fk.world_rot[j] * rig.shape_basis()[v][k] * w;
            }
            for &(r, rw) in rows {
                for axis in 0..3 {
                    jac[(r * 3 + axis, col)] += rw * dvert[axis];
                }
            }
        }
    }

    Ok(jac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rig::HandRig;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose6d(rng: &mut ChaCha8Rng) -> [[f64; 6]; 16] {
        let mut pose = [[0.0; 6]; 16];
        for row in pose.iter_mut() {
            for v in row.iter_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
        }
        pose
    }

    #[test]
    fn rot6d_identity_input_gives_identity() {
        let m = rot6d_to_matrix(&IDENTITY_ROT6D).unwrap();
        assert_abs_diff_eq!(m, Matrix3::identity(), epsilon = 1e-15);
    }

    #[test]
    fn rot6d_gram_schmidt_example() {
        // Scaled first column plus a non-orthogonal second column reduce to
        // the identity columns.
        let m = rot6d_to_matrix(&[2.0, 0.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_abs_diff_eq!(m, Matrix3::identity(), epsilon = 1e-15);
    }

    #[test]
    fn rot6d_rejects_degenerate_input() {
        assert!(matches!(
            rot6d_to_matrix(&[0.0; 6]),
            Err(Error::DegenerateRotation(_))
        ));
        assert!(matches!(
            rot6d_to_matrix(&[1.0, 0.0, 0.0, 2.0, 0.0, 0.0]),
            Err(Error::DegenerateRotation(_))
        ));
        assert!(matches!(
            rot6d_to_matrix(&[f64::NAN, 0.0, 0.0, 0.0, 1.0, 0.0]),
            Err(Error::DegenerateRotation(_))
        ));
    }

    #[test]
    fn rot6d_outputs_are_proper_rotations() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..2000 {
            let mut r = [0.0; 6];
            for v in r.iter_mut() {
                *v = rng.random_range(-2.0..2.0);
            }
            let Ok(m) = rot6d_to_matrix(&r) else { continue };
            let gram = m.transpose() * m;
            assert_abs_diff_eq!(gram, Matrix3::identity(), epsilon = 1e-9);
            assert_abs_diff_eq!(m.determinant(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn rot6d_round_trips_through_matrix_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..200 {
            let mut r = [0.0; 6];
            for v in r.iter_mut() {
                *v = rng.random_range(-2.0..2.0);
            }
            let Ok(m) = rot6d_to_matrix(&r) else { continue };
            let again = rot6d_to_matrix(&rot6d_from_matrix(&m)).unwrap();
            assert_abs_diff_eq!(m, again, epsilon = 1e-12);
        }
    }

    #[test]
    fn rot6d_differential_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let h = 1e-6;
        for _ in 0..100 {
            let mut r = [0.0; 6];
            for v in r.iter_mut() {
                *v = rng.random_range(-1.5..1.5);
            }
            if rot6d_to_matrix(&r).is_err() {
                continue;
            }
            for c in 0..6 {
                let mut unit = [0.0; 6];
                unit[c] = 1.0;
                let analytic = rot6d_differential(&r, &unit).unwrap();
                let mut rp = r;
                rp[c] += h;
                let mut rm = r;
                rm[c] -= h;
                let fd = (rot6d_to_matrix(&rp).unwrap() - rot6d_to_matrix(&rm).unwrap()) / (2.0 * h);
                assert_abs_diff_eq!(analytic, fd, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn params_flatten_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let params = HandParams {
            pose6d: random_pose6d(&mut rng),
            shape: std::array::from_fn(|_| rng.random_range(-2.0..2.0)),
            camera: Camera::new(123.25, -3.5, 17.0),
        };
        let flat = params.flatten();
        assert_eq!(flat.len(), 109);
        let back = HandParams::unflatten(&flat).unwrap();
        assert_eq!(params, back);
    }

    #[test]
    fn params_json_round_trip_is_value_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let params = HandParams {
            pose6d: random_pose6d(&mut rng),
            shape: std::array::from_fn(|_| rng.random_range(-2.0..2.0)),
            camera: Camera::new(151.0 + 1.0 / 3.0, 0.1, -0.7),
        };
        let text = serde_json::to_string(&params).unwrap();
        let back: HandParams = serde_json::from_str(&text).unwrap();
        assert_eq!(params, back);
    }

    #[test]
    fn params_unflatten_rejects_wrong_length() {
        assert!(HandParams::unflatten(&[0.0; 108]).is_err());
    }

    #[test]
    fn projection_examples() {
        let cam = Camera::new(2.0, 1.0, -1.0);
        let pts = vec![Vector3::new(3.0, 4.0, 9.0)];
        assert_eq!(project_weak_perspective(&pts, &cam), vec![(7.0, 7.0)]);
        // z never matters
        let pts2 = vec![Vector3::new(3.0, 4.0, -120.0)];
        assert_eq!(project_weak_perspective(&pts2, &cam), vec![(7.0, 7.0)]);
        // s = 0 collapses everything onto t
        let cam0 = Camera::new(0.0, 5.0, 6.0);
        assert_eq!(project_weak_perspective(&pts, &cam0), vec![(5.0, 6.0)]);
    }

    #[test]
    fn skin_identity_pose_returns_template() {
        let rig = HandRig::toy();
        let mesh = skin_mesh(&rig, &HandParams::rest()).unwrap();
        for (a, b) in mesh.iter().zip(rig.template()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn skin_shape_is_linear_in_coefficients() {
        let rig = HandRig::toy();
        let mut p1 = HandParams::rest();
        p1.shape[3] = 1.0;
        let mesh1 = skin_mesh(&rig, &p1).unwrap();
        let mut p2 = HandParams::rest();
        p2.shape[3] = -2.0;
        let mesh2 = skin_mesh(&rig, &p2).unwrap();
        for (v, (m1, m2)) in mesh1.iter().zip(&mesh2).enumerate() {
            let d1 = m1 - rig.template()[v];
            let d2 = m2 - rig.template()[v];
            assert_abs_diff_eq!(d2, -d1 * 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn root_rotation_is_rigid_about_the_wrist() {
        let rig = HandRig::toy();
        let q = rot6d_to_matrix(&[0.0, 1.0, 0.0, -1.0, 0.0, 0.0]).unwrap(); // 90 deg about z
        let mut params = HandParams::rest();
        params.pose6d[0] = rot6d_from_matrix(&q);
        let mesh = skin_mesh(&rig, &params).unwrap();
        let root = rig.rest_joints()[0];
        for (v, t) in rig.template().iter().enumerate() {
            let expect = root + q * (t - root);
            assert_abs_diff_eq!(mesh[v], expect, epsilon = 1e-12);
        }
        // bone lengths unchanged by the rigid motion
        let joints = regress_joints(&rig, &mesh).unwrap();
        let rest_joints = regress_joints(&rig, rig.template()).unwrap();
        let a = bone_lengths(&joints, rig.bone_edges()).unwrap();
        let b = bone_lengths(&rest_joints, rig.bone_edges()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn regressed_joints_match_forward_kinematics() {
        // Every ring shares one weight row and is centered on its joint, so
        // the regressed kinematic joints equal the FK positions even posed.
        let rig = HandRig::toy();
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for _ in 0..5 {
            let mut params = HandParams::rest();
            for j in 0..16 {
                let axis = Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
                .normalize();
                let angle: f64 = rng.random_range(-0.7..0.7);
                let m = nalgebra::Rotation3::from_axis_angle(
                    &nalgebra::Unit::new_normalize(axis),
                    angle,
                )
                .into_inner();
                params.pose6d[j] = rot6d_from_matrix(&m);
            }
            let fk = forward_kinematics(&rig, &params.pose6d).unwrap();
            let joints = posed_joints(&rig, &params).unwrap();
            for (joint, fk_joint) in joints.iter().zip(&fk.joint_pos) {
                assert_abs_diff_eq!(joint, fk_joint, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn regress_matches_dense_brute_force() {
        let rig = HandRig::toy();
        let mut params = HandParams::rest();
        params.pose6d[0] = [0.8, 0.1, -0.2, 0.0, 1.1, 0.3];
        params.shape[0] = 1.0;
        let mesh = skin_mesh(&rig, &params).unwrap();
        let joints = regress_joints(&rig, &mesh).unwrap();
        let reg = rig.joint_regressor();
        for j in 0..OUT_JOINTS {
            let mut p = Vector3::zeros();
            for v in 0..rig.vertex_count() {
                p += mesh[v] * reg[(j, v)];
            }
            assert_abs_diff_eq!(joints[j], p, epsilon = 1e-12);
        }
    }

    #[test]
    fn bone_lengths_brute_force() {
        let rig = HandRig::toy();
        let joints = regress_joints(&rig, rig.template()).unwrap();
        let lens = bone_lengths(&joints, rig.bone_edges()).unwrap();
        assert_eq!(lens.len(), 20);
        for (i, e) in rig.bone_edges().iter().enumerate() {
            let d = joints[e[1]] - joints[e[0]];
            let manual = (d.x * d.x + d.y * d.y + d.z * d.z).sqrt();
            assert_abs_diff_eq!(lens[i], manual, epsilon = 1e-15);
            assert!(lens[i] > 0.0);
        }
    }

    #[test]
    fn joint_jacobian_matches_central_differences() {
        let rig = HandRig::toy();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let h = 1e-4;
        for _ in 0..3 {
            let mut params = HandParams::rest();
            for j in 0..16 {
                for c in 0..6 {
                    params.pose6d[j][c] += rng.random_range(-0.3..0.3);
                }
            }
            for k in 0..10 {
                params.shape[k] = rng.random_range(-1.5..1.5);
            }
            let jac = joint_jacobian(&rig, &params).unwrap();
            let flat = params.flatten();
            for col in 0..POSE_SHAPE_DIM {
                let mut fp = flat;
                fp[col] += h;
                let mut fm = flat;
                fm[col] -= h;
                let jp = posed_joints(&rig, &HandParams::unflatten(&fp).unwrap()).unwrap();
                let jm = posed_joints(&rig, &HandParams::unflatten(&fm).unwrap()).unwrap();
                let mut num = 0.0f64;
                let mut den = 0.0f64;
                for r in 0..OUT_JOINTS {
                    for axis in 0..3 {
                        let fd = (jp[r][axis] - jm[r][axis]) / (2.0 * h);
                        let an = jac[(r * 3 + axis, col)];
                        num += (fd - an) * (fd - an);
                        den += fd * fd;
                    }
                }
                let rel = num.sqrt() / den.sqrt().max(1e-9);
                assert!(
                    rel < 1e-3,
                    "jacobian column {col} off by relative {rel:.2e}"
                );
            }
        }
    }
}
