//! DH-parameter human kinematics model.
//!
//! The skeleton is five kinematic branches (torso-head, two legs, two arms)
//! rooted at the pelvis. Every branch is an ordered list of DH rows using the
//! modified (proximal) convention, one row per degree of freedom. Rows that
//! several branches have in common (the pelvis root stack, the spine and
//! thorax stacks shared by the arms) alias the same canonical parameters and
//! are evaluated once.
//!
//! A [`ParamVector`] holds 48 deltas relative to the rest configuration:
//! 33 joint-angle deltas followed by 15 bone-length deltas. Keypoints are
//! read from the translation column of the cumulative transforms, then the
//! global rotation `Rx·Ry·Rz` and translation are applied.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::path::Path;
use std::sync::OnceLock;

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const NUM_BRANCHES: usize = 5;
pub const NUM_KEYPOINTS: usize = 16;
pub const NUM_BONES: usize = 15;
pub const NUM_ANGLE_PARAMS: usize = 33;
pub const NUM_LENGTH_PARAMS: usize = 15;
pub const NUM_PARAMS: usize = NUM_ANGLE_PARAMS + NUM_LENGTH_PARAMS;

const SHIPPED_TOPOLOGY: &str = include_str!("../data/topology.toml");

/// `(sin, cos)` that is exact for integer multiples of 90 degrees.
///
/// Table angles are written in degrees, so twists like 90° would otherwise
/// leave `cos` residues of 6e-17 in every matrix.
pub fn exact_sin_cos(angle: f64) -> (f64, f64) {
    let quarter = angle / FRAC_PI_2;
    let nearest = quarter.round();
    if (quarter - nearest).abs() < 1e-12 && nearest.abs() < 1e9 {
        match (nearest as i64).rem_euclid(4) {
            0 => (0.0, 1.0),
            1 => (1.0, 0.0),
            2 => (0.0, -1.0),
            _ => (-1.0, 0.0),
        }
    } else {
        angle.sin_cos()
    }
}

/// One of the four DH quantities of a row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DhField {
    A,
    D,
    Alpha,
    Theta,
}

impl DhField {
    pub const ALL: [DhField; 4] = [DhField::A, DhField::D, DhField::Alpha, DhField::Theta];

    fn index(self) -> usize {
        match self {
            DhField::A => 0,
            DhField::D => 1,
            DhField::Alpha => 2,
            DhField::Theta => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableMask {
    pub a: bool,
    pub d: bool,
    pub alpha: bool,
    pub theta: bool,
}

impl VariableMask {
    pub fn get(&self, field: DhField) -> bool {
        match field {
            DhField::A => self.a,
            DhField::D => self.d,
            DhField::Alpha => self.alpha,
            DhField::Theta => self.theta,
        }
    }

    fn set(&mut self, field: DhField) {
        match field {
            DhField::A => self.a = true,
            DhField::D => self.d = true,
            DhField::Alpha => self.alpha = true,
            DhField::Theta => self.theta = true,
        }
    }
}

/// A single DH row. Lengths in meters, angles in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DhRow {
    pub a: f64,
    pub d: f64,
    pub alpha: f64,
    pub theta: f64,
    pub variable: VariableMask,
}

impl DhRow {
    pub fn fixed(a: f64, d: f64, alpha: f64, theta: f64) -> Self {
        Self {
            a,
            d,
            alpha,
            theta,
            variable: VariableMask::default(),
        }
    }

    pub fn get(&self, field: DhField) -> f64 {
        match field {
            DhField::A => self.a,
            DhField::D => self.d,
            DhField::Alpha => self.alpha,
            DhField::Theta => self.theta,
        }
    }

    fn add(&mut self, field: DhField, delta: f64) {
        match field {
            DhField::A => self.a += delta,
            DhField::D => self.d += delta,
            DhField::Alpha => self.alpha += delta,
            DhField::Theta => self.theta += delta,
        }
    }

    pub fn matrix(&self) -> Result<Matrix4<f64>> {
        dh_matrix(self.a, self.d, self.alpha, self.theta)
    }
}

/// Homogeneous transform of one DH row: `RotX(alpha)·TransX(a)·RotZ(theta)·TransZ(d)`.
pub fn dh_matrix(a: f64, d: f64, alpha: f64, theta: f64) -> Result<Matrix4<f64>> {
    if ![a, d, alpha, theta].iter().all(|v| v.is_finite()) {
        return Err(Error::invalid(format!(
            "non-finite DH input (a={a}, d={d}, alpha={alpha}, theta={theta})"
        )));
    }
    let (sa, ca) = exact_sin_cos(alpha);
    let (st, ct) = exact_sin_cos(theta);
    #[rustfmt::skip]
    let m = Matrix4::new(
        ct,      -st,      0.0,  a,
        st * ca,  ct * ca, -sa,  -d * sa,
        st * sa,  ct * sa,  ca,   d * ca,
        0.0,      0.0,      0.0,  1.0,
    );
    Ok(m)
}

/// Cumulative transforms `M'_0 = M_0`, `M'_{k+1} = M'_k · M_{k+1}`.
pub fn compose_chain(rows: &[DhRow]) -> Result<Vec<Matrix4<f64>>> {
    if rows.is_empty() {
        return Err(Error::invalid("compose_chain needs at least one row"));
    }
    let mut out = Vec::with_capacity(rows.len());
    let mut acc = rows[0].matrix()?;
    out.push(acc);
    for row in &rows[1..] {
        acc *= row.matrix()?;
        out.push(acc);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Angle,
    Length,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamSlot {
    pub branch: usize,
    pub row: usize,
    pub field: DhField,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KinematicBranch {
    pub name: String,
    pub rows: Vec<DhRow>,
    /// Joint stack each row belongs to (e.g. `l_knee`).
    pub joints: Vec<String>,
    /// `(row index, keypoint id)`, row indices strictly increasing.
    pub keypoint_map: Vec<(usize, usize)>,
    /// Leading rows that alias rows of another branch.
    pub shared_prefix_len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct PlanNode {
    parent: Option<usize>,
    branch: usize,
    row: usize,
}

#[derive(Debug, Clone)]
pub struct SkeletonTopology {
    keypoint_names: Vec<String>,
    root_keypoint: usize,
    branches: Vec<KinematicBranch>,
    /// Parameter id per `(branch, row, field)`; indexed `[branch][row][field]`.
    slots: Vec<Vec<[Option<usize>; 4]>>,
    param_kinds: Vec<ParamKind>,
    param_joints: Vec<String>,
    rest_lengths: Vec<Option<f64>>,
    bone_list: Vec<(usize, usize)>,
    rest_pose: Option<Pose3D>,
    plan: Vec<PlanNode>,
    branch_nodes: Vec<Vec<usize>>,
    keypoint_nodes: Vec<usize>,
    hash: String,
}

/// 48 deltas by canonical parameter id (radians for angle ids, meters for length ids).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector {
    pub values: Vec<f64>,
}

impl ParamVector {
    pub fn zeros() -> Self {
        Self {
            values: vec![0.0; NUM_PARAMS],
        }
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GlobalTransform {
    pub rx: f64,
    pub ry: f64,
    pub rz: f64,
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
}

impl GlobalTransform {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn translation(tx: f64, ty: f64, tz: f64) -> Self {
        Self {
            tx,
            ty,
            tz,
            ..Self::default()
        }
    }

    pub fn from_array(v: [f64; 6]) -> Self {
        Self {
            rx: v[0],
            ry: v[1],
            rz: v[2],
            tx: v[3],
            ty: v[4],
            tz: v[5],
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.rx, self.ry, self.rz, self.tx, self.ty, self.tz]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// `Rx(rx)·Ry(ry)·Rz(rz)` acting on column vectors.
    pub fn rotation(&self) -> Matrix3<f64> {
        let (sx, cx) = self.rx.sin_cos();
        let (sy, cy) = self.ry.sin_cos();
        let (sz, cz) = self.rz.sin_cos();
        let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cx, -sx, 0.0, sx, cx);
        let ry = Matrix3::new(cy, 0.0, sy, 0.0, 1.0, 0.0, -sy, 0.0, cy);
        let rz = Matrix3::new(cz, -sz, 0.0, sz, cz, 0.0, 0.0, 0.0, 1.0);
        rx * ry * rz
    }
}

/// 16 keypoints in camera-space meters, ordered by keypoint id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose3D {
    pub joints: Vec<[f64; 3]>,
}

impl Pose3D {
    pub fn new(joints: Vec<[f64; 3]>) -> Self {
        Self { joints }
    }

    pub fn is_finite(&self) -> bool {
        self.joints.iter().flatten().all(|v| v.is_finite())
    }

    pub fn joint(&self, k: usize) -> Vector3<f64> {
        Vector3::from(self.joints[k])
    }

    pub fn bone_lengths(&self, bones: &[(usize, usize)]) -> Vec<f64> {
        bones
            .iter()
            .map(|&(p, c)| (self.joint(c) - self.joint(p)).norm())
            .collect()
    }
}

pub fn apply_global_transform(pose: &Pose3D, g: &GlobalTransform) -> Result<Pose3D> {
    if !pose.is_finite() || !g.is_finite() {
        return Err(Error::invalid("non-finite pose or global transform"));
    }
    let r = g.rotation();
    let t = Vector3::new(g.tx, g.ty, g.tz);
    let joints = pose
        .joints
        .iter()
        .map(|p| {
            let q = r * Vector3::from(*p) + t;
            [q.x, q.y, q.z]
        })
        .collect();
    Ok(Pose3D { joints })
}

/// Runs the full model: resolve rows, compose each branch, extract keypoints,
/// apply the global transform.
pub fn forward_kinematics(
    topology: &SkeletonTopology,
    params: &ParamVector,
    g: &GlobalTransform,
) -> Result<Pose3D> {
    let frames = topology.plan_frames(params)?;
    let joints = topology
        .keypoint_nodes
        .iter()
        .map(|&n| {
            let m = &frames[n];
            [m[(0, 3)], m[(1, 3)], m[(2, 3)]]
        })
        .collect();
    apply_global_transform(&Pose3D { joints }, g)
}

/// Cumulative transforms of every row of every branch, before the global transform.
pub fn forward_frames(
    topology: &SkeletonTopology,
    params: &ParamVector,
) -> Result<Vec<Vec<Matrix4<f64>>>> {
    let frames = topology.plan_frames(params)?;
    Ok(topology
        .branch_nodes
        .iter()
        .map(|nodes| nodes.iter().map(|&n| frames[n]).collect())
        .collect())
}

pub fn default_topology() -> SkeletonTopology {
    static SHIPPED: OnceLock<SkeletonTopology> = OnceLock::new();
    SHIPPED
        .get_or_init(|| {
            SkeletonTopology::from_toml_str(SHIPPED_TOPOLOGY)
                .expect("shipped topology table is valid")
        })
        .clone()
}

impl SkeletonTopology {
    pub fn branches(&self) -> &[KinematicBranch] {
        &self.branches
    }

    pub fn keypoint_count(&self) -> usize {
        self.keypoint_names.len()
    }

    pub fn keypoint_names(&self) -> &[String] {
        &self.keypoint_names
    }

    pub fn keypoint_id(&self, name: &str) -> Option<usize> {
        self.keypoint_names.iter().position(|n| n == name)
    }

    pub fn root_keypoint(&self) -> usize {
        self.root_keypoint
    }

    /// `(parent keypoint, child keypoint)` pairs, sorted by child id.
    pub fn bone_list(&self) -> &[(usize, usize)] {
        &self.bone_list
    }

    pub fn num_params(&self) -> usize {
        self.param_kinds.len()
    }

    pub fn param_kind(&self, id: usize) -> ParamKind {
        self.param_kinds[id]
    }

    pub fn param_kinds(&self) -> &[ParamKind] {
        &self.param_kinds
    }

    /// Joint stack that owns the parameter (for length ids: the joint the bone ends at).
    pub fn param_joint(&self, id: usize) -> &str {
        &self.param_joints[id]
    }

    /// Ids of the angle-type parameters of the named joint stack, in row order.
    pub fn angle_params_of(&self, joint: &str) -> Vec<usize> {
        (0..self.num_params())
            .filter(|&id| {
                self.param_kinds[id] == ParamKind::Angle && self.param_joints[id] == joint
            })
            .collect()
    }

    pub fn angle_param_ids(&self) -> Vec<usize> {
        (0..self.num_params())
            .filter(|&id| self.param_kinds[id] == ParamKind::Angle)
            .collect()
    }

    pub fn length_param_ids(&self) -> Vec<usize> {
        (0..self.num_params())
            .filter(|&id| self.param_kinds[id] == ParamKind::Length)
            .collect()
    }

    /// Rest length of a length-type parameter.
    pub fn rest_length(&self, id: usize) -> Option<f64> {
        self.rest_lengths.get(id).copied().flatten()
    }

    pub fn param_id(&self, branch: usize, row: usize, field: DhField) -> Option<usize> {
        self.slots
            .get(branch)
            .and_then(|b| b.get(row))
            .and_then(|s| s[field.index()])
    }

    /// Every variable slot and its canonical parameter id.
    pub fn param_index(&self) -> BTreeMap<ParamSlot, usize> {
        let mut map = BTreeMap::new();
        for (b, rows) in self.slots.iter().enumerate() {
            for (r, slots) in rows.iter().enumerate() {
                for field in DhField::ALL {
                    if let Some(id) = slots[field.index()] {
                        map.insert(
                            ParamSlot {
                                branch: b,
                                row: r,
                                field,
                            },
                            id,
                        );
                    }
                }
            }
        }
        map
    }

    /// Count of distinct DOF rows after merging shared prefixes.
    pub fn unique_dof_rows(&self) -> usize {
        self.plan
            .iter()
            .filter(|n| self.branches[n.branch].rows[n.row].variable.theta)
            .count()
    }

    /// The rest pose published in the topology file, if any.
    pub fn rest_pose(&self) -> Option<&Pose3D> {
        self.rest_pose.as_ref()
    }

    /// Short content hash of the table, used to tag dataset files.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    /// Rows of one branch with the deltas added to their variable fields.
    pub fn resolve_branch(&self, branch: usize, params: &ParamVector) -> Result<Vec<DhRow>> {
        self.check_params(params)?;
        let b = self
            .branches
            .get(branch)
            .ok_or_else(|| Error::invalid(format!("no branch {branch}")))?;
        Ok((0..b.rows.len())
            .map(|r| self.resolve_row(branch, r, params))
            .collect())
    }

    fn resolve_row(&self, branch: usize, row: usize, params: &ParamVector) -> DhRow {
        let mut out = self.branches[branch].rows[row];
        for field in DhField::ALL {
            if let Some(id) = self.slots[branch][row][field.index()] {
                out.add(field, params.values[id]);
            }
        }
        out
    }

    fn check_params(&self, params: &ParamVector) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                params.len()
            )));
        }
        if !params.values.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("non-finite parameter value"));
        }
        Ok(())
    }

    fn plan_frames(&self, params: &ParamVector) -> Result<Vec<Matrix4<f64>>> {
        self.check_params(params)?;
        let mut frames: Vec<Matrix4<f64>> = Vec::with_capacity(self.plan.len());
        for node in &self.plan {
            let local = self.resolve_row(node.branch, node.row, params).matrix()?;
            let m = match node.parent {
                Some(p) => frames[p] * local,
                None => local,
            };
            frames.push(m);
        }
        Ok(frames)
    }

    /// Unique row evaluation order: `(parent node, branch, row)` per node.
    /// Parents always precede children.
    pub fn evaluation_plan(&self) -> Vec<(Option<usize>, usize, usize)> {
        self.plan
            .iter()
            .map(|n| (n.parent, n.branch, n.row))
            .collect()
    }

    /// Plan node whose frame origin is keypoint `k`.
    pub fn keypoint_node(&self, k: usize) -> usize {
        self.keypoint_nodes[k]
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: TopologyFile =
            toml::from_str(text).map_err(|e| Error::Data(format!("topology table: {e}")))?;
        Self::from_file(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&self.to_file()).expect("topology serializes")
    }

    fn to_file(&self) -> TopologyFile {
        let mut rows = Vec::new();
        let mut seen: Vec<usize> = Vec::new();
        for (b, branch) in self.branches.iter().enumerate() {
            for (r, row) in branch.rows.iter().enumerate() {
                let node = self.branch_nodes[b][r];
                let shared = seen.contains(&node);
                seen.push(node);
                let slots = self.slots[b][r];
                let mut vary = Vec::new();
                for field in DhField::ALL {
                    if row.variable.get(field) {
                        vary.push(field);
                    }
                }
                let length_param = slots[DhField::A.index()].or(slots[DhField::D.index()]);
                rows.push(RowEntry {
                    branch: b,
                    row: r,
                    joint: branch.joints[r].clone(),
                    a: row.a,
                    d: row.d,
                    alpha: row.alpha.to_degrees(),
                    theta: row.theta.to_degrees(),
                    vary,
                    theta_param: slots[DhField::Theta.index()],
                    alpha_param: slots[DhField::Alpha.index()],
                    length_param,
                    shared,
                    keypoint: branch
                        .keypoint_map
                        .iter()
                        .find(|(ri, _)| *ri == r)
                        .map(|(_, k)| *k),
                });
            }
        }
        TopologyFile {
            root_keypoint: self.root_keypoint,
            keypoints: self
                .keypoint_names
                .iter()
                .enumerate()
                .map(|(id, name)| KeypointEntry {
                    id,
                    name: name.clone(),
                })
                .collect(),
            branches: self
                .branches
                .iter()
                .enumerate()
                .map(|(id, b)| BranchEntry {
                    id,
                    name: b.name.clone(),
                })
                .collect(),
            rows,
            rest_pose: self.rest_pose.as_ref().map(|p| p.joints.clone()),
        }
    }

    fn from_file(file: TopologyFile) -> Result<Self> {
        let bad = |msg: String| Error::Data(format!("topology table: {msg}"));

        let mut keypoint_names = vec![String::new(); file.keypoints.len()];
        for kp in &file.keypoints {
            if kp.id >= keypoint_names.len() || !keypoint_names[kp.id].is_empty() {
                return Err(bad(format!(
                    "keypoint ids must be 0..{}",
                    file.keypoints.len()
                )));
            }
            keypoint_names[kp.id] = kp.name.clone();
        }
        let n_branches = file.branches.len();
        let mut branch_names = vec![String::new(); n_branches];
        for b in &file.branches {
            if b.id >= n_branches {
                return Err(bad(format!("branch id {} out of range", b.id)));
            }
            branch_names[b.id] = b.name.clone();
        }

        let mut per_branch: Vec<Vec<&RowEntry>> = vec![Vec::new(); n_branches];
        for row in &file.rows {
            if row.branch >= n_branches {
                return Err(bad(format!("row references unknown branch {}", row.branch)));
            }
            per_branch[row.branch].push(row);
        }

        let mut branches = Vec::with_capacity(n_branches);
        let mut slots = Vec::with_capacity(n_branches);
        let mut param_info: BTreeMap<usize, (ParamKind, String, Option<f64>)> = BTreeMap::new();
        for (b, rows) in per_branch.iter_mut().enumerate() {
            rows.sort_by_key(|r| r.row);
            if rows.iter().enumerate().any(|(i, r)| r.row != i) {
                return Err(bad(format!("branch {b} row indices must be 0..n")));
            }
            let mut dh_rows = Vec::with_capacity(rows.len());
            let mut joints = Vec::with_capacity(rows.len());
            let mut keypoint_map = Vec::new();
            let mut branch_slots = Vec::with_capacity(rows.len());
            for entry in rows.iter() {
                let mut row = DhRow::fixed(
                    entry.a,
                    entry.d,
                    entry.alpha.to_radians(),
                    entry.theta.to_radians(),
                );
                if ![row.a, row.d, row.alpha, row.theta]
                    .iter()
                    .all(|v| v.is_finite())
                {
                    return Err(bad(format!(
                        "branch {b} row {}: non-finite value",
                        entry.row
                    )));
                }
                if row.a < 0.0 {
                    return Err(bad(format!(
                        "branch {b} row {}: negative link length",
                        entry.row
                    )));
                }
                let mut row_slots = [None; 4];
                for &field in &entry.vary {
                    row.variable.set(field);
                    let id = match field {
                        DhField::Theta => entry.theta_param,
                        DhField::Alpha => entry.alpha_param,
                        DhField::A | DhField::D => entry.length_param,
                    }
                    .ok_or_else(|| {
                        bad(format!(
                            "branch {b} row {}: variable {field:?} has no parameter id",
                            entry.row
                        ))
                    })?;
                    row_slots[field.index()] = Some(id);
                    let (kind, rest) = match field {
                        DhField::A => (ParamKind::Length, Some(entry.a)),
                        DhField::D => (ParamKind::Length, Some(entry.d)),
                        _ => (ParamKind::Angle, None),
                    };
                    let info = (kind, entry.joint.clone(), rest);
                    match param_info.get(&id) {
                        Some(existing) if *existing != info => {
                            return Err(bad(format!(
                                "parameter {id} is bound to inconsistent slots"
                            )))
                        }
                        _ => {
                            param_info.insert(id, info);
                        }
                    }
                }
                if row.variable.a && row.variable.d {
                    return Err(bad(format!(
                        "branch {b} row {}: a bone length lives in a or d, not both",
                        entry.row
                    )));
                }
                if let Some(k) = entry.keypoint {
                    if k >= keypoint_names.len() {
                        return Err(bad(format!("unknown keypoint {k}")));
                    }
                    keypoint_map.push((entry.row, k));
                }
                dh_rows.push(row);
                joints.push(entry.joint.clone());
                branch_slots.push(row_slots);
            }
            branches.push(KinematicBranch {
                name: branch_names[b].clone(),
                rows: dh_rows,
                joints,
                keypoint_map,
                shared_prefix_len: 0,
            });
            slots.push(branch_slots);
        }

        let n_params = param_info.len();
        if param_info.keys().copied().ne(0..n_params) {
            return Err(bad("parameter ids must be contiguous from 0".into()));
        }
        let param_kinds: Vec<ParamKind> = param_info.values().map(|v| v.0).collect();
        let param_joints: Vec<String> = param_info.values().map(|v| v.1.clone()).collect();
        let rest_lengths: Vec<Option<f64>> = param_info.values().map(|v| v.2).collect();

        // Shared prefixes: longest run of identical leading rows with any other branch.
        let same_row = |b1: usize, r: usize, b2: usize| {
            branches[b1].rows[r] == branches[b2].rows[r] && slots[b1][r] == slots[b2][r]
        };
        let prefix_lens: Vec<usize> = (0..n_branches)
            .map(|b| {
                (0..n_branches)
                    .filter(|&o| o != b)
                    .map(|other| {
                        let n = branches[b].rows.len().min(branches[other].rows.len());
                        (0..n).take_while(|&r| same_row(b, r, other)).count()
                    })
                    .max()
                    .unwrap_or(0)
            })
            .collect();

        // Evaluation plan: a prefix trie over branch rows.
        let mut plan: Vec<PlanNode> = Vec::new();
        let mut branch_nodes = Vec::with_capacity(n_branches);
        for b in 0..n_branches {
            let mut parent = None;
            let mut nodes = Vec::with_capacity(branches[b].rows.len());
            for r in 0..branches[b].rows.len() {
                let existing = plan
                    .iter()
                    .position(|n| n.parent == parent && n.row == r && same_row(n.branch, r, b));
                let idx = match existing {
                    Some(i) => i,
                    None => {
                        let flagged = per_branch[b][r].shared;
                        if flagged {
                            return Err(bad(format!(
                                "branch {b} row {r} is marked shared but matches no earlier branch"
                            )));
                        }
                        plan.push(PlanNode {
                            parent,
                            branch: b,
                            row: r,
                        });
                        plan.len() - 1
                    }
                };
                nodes.push(idx);
                parent = Some(idx);
            }
            branch_nodes.push(nodes);
        }
        for (branch, len) in branches.iter_mut().zip(prefix_lens) {
            branch.shared_prefix_len = len;
        }

        // Keypoints and bones.
        let n_kp = keypoint_names.len();
        let mut keypoint_nodes: Vec<Option<usize>> = vec![None; n_kp];
        let mut parents: Vec<Option<usize>> = vec![None; n_kp];
        let root = file.root_keypoint;
        if root >= n_kp {
            return Err(bad("root keypoint out of range".into()));
        }
        for (b, branch) in branches.iter().enumerate() {
            if !branch.keypoint_map.windows(2).all(|w| w[0].0 < w[1].0) {
                return Err(bad(format!("branch {b}: keypoint rows must increase")));
            }
            match branch.keypoint_map.first() {
                Some(&(_, k)) if k == root => {}
                _ => return Err(bad(format!("branch {b} must start at the root keypoint"))),
            }
            let mut prev: Option<usize> = None;
            for &(r, k) in &branch.keypoint_map {
                let node = branch_nodes[b][r];
                match keypoint_nodes[k] {
                    Some(existing) if existing != node => {
                        return Err(bad(format!(
                            "keypoint {k} reached through rows that are not shared"
                        )))
                    }
                    _ => keypoint_nodes[k] = Some(node),
                }
                if let Some(p) = prev {
                    match parents[k] {
                        Some(existing) if existing != p => {
                            return Err(bad(format!("keypoint {k} has two parents")))
                        }
                        _ => parents[k] = Some(p),
                    }
                }
                prev = Some(k);
            }
        }
        let keypoint_nodes: Vec<usize> = keypoint_nodes
            .into_iter()
            .enumerate()
            .map(|(k, n)| n.ok_or_else(|| bad(format!("keypoint {k} is never emitted"))))
            .collect::<Result<_>>()?;
        let mut bone_list = Vec::new();
        for (k, p) in parents.iter().enumerate() {
            match (k == root, p) {
                (true, None) => {}
                (false, Some(p)) => bone_list.push((*p, k)),
                _ => return Err(bad(format!("keypoint {k} is not attached to the tree"))),
            }
        }

        let rest_pose = match file.rest_pose {
            Some(joints) if joints.len() == n_kp => Some(Pose3D { joints }),
            Some(_) => return Err(bad("rest_pose must list every keypoint".into())),
            None => None,
        };

        let mut topology = SkeletonTopology {
            keypoint_names,
            root_keypoint: root,
            branches,
            slots,
            param_kinds,
            param_joints,
            rest_lengths,
            bone_list,
            rest_pose,
            plan,
            branch_nodes,
            keypoint_nodes,
            hash: String::new(),
        };
        topology.validate_counts()?;
        let canonical = serde_json::to_vec(&TopologyFile {
            rest_pose: None,
            ..topology.to_file()
        })
        .expect("topology serializes");
        topology.hash = hex::encode(&Sha256::digest(&canonical)[..8]);
        Ok(topology)
    }

    fn validate_counts(&self) -> Result<()> {
        let bad = |msg: String| Error::Data(format!("topology table: {msg}"));
        if self.branches.len() != NUM_BRANCHES {
            return Err(bad(format!("expected {NUM_BRANCHES} branches")));
        }
        if self.keypoint_count() != NUM_KEYPOINTS || self.bone_list.len() != NUM_BONES {
            return Err(bad(format!(
                "expected {NUM_KEYPOINTS} keypoints and {NUM_BONES} bones"
            )));
        }
        let angles = self.angle_param_ids().len();
        let lengths = self.length_param_ids().len();
        if angles != NUM_ANGLE_PARAMS || lengths != NUM_LENGTH_PARAMS {
            return Err(bad(format!(
                "expected {NUM_ANGLE_PARAMS} angle and {NUM_LENGTH_PARAMS} length parameters, \
                 found {angles} and {lengths}"
            )));
        }
        if self.unique_dof_rows() != NUM_ANGLE_PARAMS {
            return Err(bad(format!("expected {NUM_ANGLE_PARAMS} DOF rows")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TopologyFile {
    root_keypoint: usize,
    keypoints: Vec<KeypointEntry>,
    branches: Vec<BranchEntry>,
    rows: Vec<RowEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rest_pose: Option<Vec<[f64; 3]>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct KeypointEntry {
    id: usize,
    name: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BranchEntry {
    id: usize,
    name: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RowEntry {
    branch: usize,
    row: usize,
    joint: String,
    a: f64,
    d: f64,
    /// Degrees.
    alpha: f64,
    /// Degrees.
    theta: f64,
    #[serde(default)]
    vary: Vec<DhField>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    theta_param: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha_param: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    length_param: Option<usize>,
    #[serde(default)]
    shared: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    keypoint: Option<usize>,
}

#[cfg(test)]
mod tests {
    use std::f64::consts::{FRAC_PI_2, PI};

    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn dh_matrix_identity_and_pure_length() {
        let m = dh_matrix(0.0, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(m, Matrix4::identity());
        let m = dh_matrix(0.7, 0.0, 0.0, 0.0).unwrap();
        let mut expected = Matrix4::identity();
        expected[(0, 3)] = 0.7;
        assert_eq!(m, expected);
    }

    #[test]
    fn dh_matrix_quarter_turns() {
        let m = dh_matrix(0.0, 0.0, 0.0, FRAC_PI_2).unwrap();
        assert_eq!(
            [m[(0, 0)], m[(0, 1)], m[(0, 2)], m[(0, 3)]],
            [0.0, -1.0, 0.0, 0.0]
        );
        assert_eq!(
            [m[(1, 0)], m[(1, 1)], m[(1, 2)], m[(1, 3)]],
            [1.0, 0.0, 0.0, 0.0]
        );

        let d = 0.3;
        let m = dh_matrix(0.0, d, FRAC_PI_2, 0.0).unwrap();
        assert_eq!(
            [m[(0, 3)], m[(1, 3)], m[(2, 3)], m[(3, 3)]],
            [0.0, -d, 0.0, 1.0]
        );
    }

    #[test]
    fn dh_matrix_general_angle_is_rigid() {
        let m = dh_matrix(0.2, -0.1, 0.4, -1.3).unwrap();
        let r = m.fixed_view::<3, 3>(0, 0).into_owned();
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        assert!(err < 1e-15);
        assert!(close(r.determinant(), 1.0, 1e-15));
        assert_eq!(
            m.row(3).iter().copied().collect::<Vec<_>>(),
            vec![0.0, 0.0, 0.0, 1.0]
        );
    }

    #[test]
    fn dh_matrix_rejects_nan() {
        assert!(matches!(
            dh_matrix(f64::NAN, 0.0, 0.0, 0.0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(dh_matrix(0.0, 0.0, f64::INFINITY, 0.0).is_err());
    }

    #[test]
    fn compose_collinear_and_rotated_rows() {
        let rows = [
            DhRow::fixed(0.4, 0.0, 0.0, 0.0),
            DhRow::fixed(0.5, 0.0, 0.0, 0.0),
        ];
        let chain = compose_chain(&rows).unwrap();
        assert!(close(chain[1][(0, 3)], 0.9, 1e-15));
        assert_eq!(chain[1][(1, 3)], 0.0);

        let single = compose_chain(&rows[..1]).unwrap();
        assert_eq!(single, vec![rows[0].matrix().unwrap()]);

        // Rotating the first frame by 90° swings the second link onto +y.
        let rows = [
            DhRow::fixed(0.0, 0.0, 0.0, FRAC_PI_2),
            DhRow::fixed(0.6, 0.0, 0.0, 0.0),
        ];
        let chain = compose_chain(&rows).unwrap();
        assert_eq!(
            [chain[1][(0, 3)], chain[1][(1, 3)], chain[1][(2, 3)]],
            [0.0, 0.6, 0.0]
        );

        assert!(compose_chain(&[]).is_err());
    }

    #[test]
    fn shipped_topology_counts() {
        let topo = default_topology();
        assert_eq!(topo.branches().len(), 5);
        assert_eq!(topo.num_params(), 48);
        assert_eq!(topo.angle_param_ids().len(), 33);
        assert_eq!(topo.length_param_ids().len(), 15);
        assert_eq!(topo.unique_dof_rows(), 33);
        assert_eq!(topo.keypoint_count(), 16);
        assert_eq!(topo.bone_list().len(), 15);
        // Root stack shared by all, spine+thorax shared by torso and arms.
        let shared: Vec<usize> = topo
            .branches()
            .iter()
            .map(|b| b.shared_prefix_len)
            .collect();
        assert_eq!(shared, vec![9, 3, 3, 9, 9]);
        let index = topo.param_index();
        let distinct: std::collections::BTreeSet<usize> = index.values().copied().collect();
        assert_eq!(distinct.len(), 48);
        assert!(index.len() > 48, "shared slots alias canonical ids");
    }

    #[test]
    fn topology_round_trips_through_toml() {
        let topo = default_topology();
        let again = SkeletonTopology::from_toml_str(&topo.to_toml_string()).unwrap();
        assert_eq!(again.hash(), topo.hash());
        assert_eq!(again.bone_list(), topo.bone_list());
    }

    #[test]
    fn zero_params_give_published_rest_pose() {
        let topo = default_topology();
        let pose =
            forward_kinematics(&topo, &ParamVector::zeros(), &GlobalTransform::identity()).unwrap();
        let rest = topo.rest_pose().unwrap();
        for (a, b) in pose.joints.iter().zip(&rest.joints) {
            for i in 0..3 {
                assert!(close(a[i], b[i], 1e-12), "{a:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn translation_and_half_turn() {
        let topo = default_topology();
        let params = ParamVector::zeros();
        let base = forward_kinematics(&topo, &params, &GlobalTransform::identity()).unwrap();
        let moved =
            forward_kinematics(&topo, &params, &GlobalTransform::translation(1.0, 2.0, 3.0))
                .unwrap();
        for (a, b) in base.joints.iter().zip(&moved.joints) {
            assert_eq!([a[0] + 1.0, a[1] + 2.0, a[2] + 3.0], *b);
        }
        let mut params = ParamVector::zeros();
        params.values[20] = 0.3;
        params.values[3] = -0.2;
        let base = forward_kinematics(&topo, &params, &GlobalTransform::identity()).unwrap();
        let g = GlobalTransform {
            rz: PI,
            ..Default::default()
        };
        let turned = forward_kinematics(&topo, &params, &g).unwrap();
        for (a, b) in base.joints.iter().zip(&turned.joints) {
            assert!(close(b[0], -a[0], 1e-12) && close(b[1], -a[1], 1e-12) && b[2] == a[2]);
        }
    }

    #[test]
    fn wrong_param_length_is_rejected() {
        let topo = default_topology();
        let err = forward_kinematics(
            &topo,
            &ParamVector::from_vec(vec![0.0; 47]),
            &GlobalTransform::identity(),
        );
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn global_transform_identity_and_full_turn() {
        let pose = Pose3D::new(vec![[0.1, -0.2, 3.0], [0.5, 0.5, 4.0]]);
        assert_eq!(
            apply_global_transform(&pose, &GlobalTransform::identity()).unwrap(),
            pose
        );
        let g = GlobalTransform {
            rx: 2.0 * PI,
            ..Default::default()
        };
        let out = apply_global_transform(&pose, &g).unwrap();
        for (a, b) in pose.joints.iter().zip(&out.joints) {
            for i in 0..3 {
                assert!(close(a[i], b[i], 1e-9));
            }
        }
        let t = GlobalTransform::translation(-1.0, 0.25, 2.0);
        let out = apply_global_transform(&pose, &t).unwrap();
        assert_eq!(out.joints[0], [0.1 - 1.0, -0.2 + 0.25, 5.0]);
    }

    #[test]
    fn broken_tables_are_rejected() {
        let text = default_topology().to_toml_string();
        // Dropping a branch breaks the counts.
        let cut = text.replace("branch = 4", "branch = 9");
        assert!(SkeletonTopology::from_toml_str(&cut).is_err());
        assert!(SkeletonTopology::from_toml_str("root_keypoint = 0").is_err());
    }

    #[test]
    fn exact_sin_cos_snaps_quarter_turns() {
        assert_eq!(exact_sin_cos(FRAC_PI_2), (1.0, 0.0));
        assert_eq!(exact_sin_cos(-FRAC_PI_2), (-1.0, 0.0));
        assert_eq!(exact_sin_cos(PI), (0.0, -1.0));
        assert_eq!(exact_sin_cos(90f64.to_radians()), (1.0, 0.0));
        assert_eq!(exact_sin_cos(0.3), 0.3f64.sin_cos());
    }
}
