//! The DH generator: latent vector → network → squash → forward kinematics → projection.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::autodiff::{Activation, Checkpoint, Mlp, NodeId, TapeGraph, Tensor};
use crate::camera::{project_pose, CameraIntrinsics, Pose2D};
use crate::constraint::{squash_params, squash_scalar, ConstraintTable};
use crate::error::{Error, Result};
use crate::gan::config::{GlobalRanges, Mode, TrainConfig};
use crate::gan::inputs::InputLayout;
use crate::skeleton::{
    exact_sin_cos, forward_kinematics, DhField, GlobalTransform, ParamKind, ParamVector, Pose3D,
    SkeletonTopology,
};

/// Independent standard normal entries, `count × z_dim`.
pub fn sample_latent(count: usize, z_dim: usize, rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(count, z_dim, |_, _| rng.sample(StandardNormal))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedFrame {
    pub params: ParamVector,
    pub global: GlobalTransform,
    pub pose3d: Pose3D,
    pub pose2d: Pose2D,
}

/// One latent sample: a single frame, or `T` frames in video mode.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSample {
    pub frames: Vec<GeneratedFrame>,
}

/// Critic inputs recorded on a tape for a generated batch.
#[derive(Debug, Clone)]
pub struct GraphOutput {
    /// One `[B, single_width]` node per frame.
    pub single: Vec<NodeId>,
    /// `[B, motion_width]` in video mode.
    pub motion: Option<NodeId>,
}

#[derive(Debug, Clone)]
pub struct DhGenerator {
    pub net: Mlp,
    pub topology: SkeletonTopology,
    pub table: ConstraintTable,
    pub camera: CameraIntrinsics,
    pub mode: Mode,
    frames: usize,
    global: [(f64, f64); 6],
    layout: InputLayout,
    /// Output column of each length-type id (shared by all frames).
    length_col: Vec<Option<usize>>,
    /// Offset of each angle-type id inside a frame block.
    angle_col: Vec<Option<usize>>,
}

impl DhGenerator {
    pub fn new(
        config: &TrainConfig,
        topology: SkeletonTopology,
        table: ConstraintTable,
        camera: CameraIntrinsics,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let frames = match config.mode {
            Mode::Single => 1,
            Mode::Video => config.frames,
        };
        let mut dims = vec![config.z_dim];
        dims.extend(&config.generator_hidden);
        dims.push(Self::width_for(&topology, config.mode, frames));
        let net = Mlp::new(&dims, Activation::Tanh, Activation::Identity, rng);
        Self::from_net(
            net,
            topology,
            table,
            camera,
            config.mode,
            frames,
            config.global,
        )
    }

    pub fn from_net(
        net: Mlp,
        topology: SkeletonTopology,
        table: ConstraintTable,
        camera: CameraIntrinsics,
        mode: Mode,
        frames: usize,
        global: GlobalRanges,
    ) -> Result<Self> {
        net.check()?;
        camera.check()?;
        table.check_against(&topology)?;
        let frames = if mode == Mode::Single { 1 } else { frames };
        if frames == 0 {
            return Err(Error::invalid("frame count must be positive"));
        }
        let n = topology.num_params();
        let mut length_col = vec![None; n];
        let mut angle_col = vec![None; n];
        let (mut nl, mut na) = (0, 0);
        for id in 0..n {
            match (mode, topology.param_kind(id)) {
                (Mode::Single, _) => angle_col[id] = Some(id),
                (Mode::Video, ParamKind::Length) => {
                    length_col[id] = Some(nl);
                    nl += 1;
                }
                (Mode::Video, ParamKind::Angle) => {
                    angle_col[id] = Some(na);
                    na += 1;
                }
            }
        }
        let gen = Self {
            layout: InputLayout::new(&topology),
            net,
            topology,
            table,
            camera,
            mode,
            frames,
            global: global.bounds(),
            length_col,
            angle_col,
        };
        let want = gen.output_width();
        if gen.net.output_dim() != want {
            return Err(Error::shape(
                "generator output",
                &[gen.net.output_dim()],
                &[want],
            ));
        }
        Ok(gen)
    }

    /// Generator stored in a training checkpoint. The checkpoint must have
    /// been written for `topology`.
    pub fn from_checkpoint(
        ckpt: &Checkpoint,
        topology: SkeletonTopology,
        table: ConstraintTable,
        camera: CameraIntrinsics,
    ) -> Result<Self> {
        let found = ckpt
            .meta
            .get("topology")
            .and_then(|v| v.as_str())
            .unwrap_or("");
        if found != topology.hash() {
            return Err(Error::TopologyMismatch {
                expected: topology.hash().to_string(),
                found: found.to_string(),
            });
        }
        let config: TrainConfig = ckpt
            .meta
            .get("config")
            .cloned()
            .map(serde_json::from_value)
            .transpose()
            .map_err(|e| Error::Data(format!("checkpoint config: {e}")))?
            .ok_or_else(|| Error::Data("checkpoint has no config".into()))?;
        let net = ckpt
            .net("generator")
            .ok_or_else(|| Error::Data("checkpoint has no generator".into()))?
            .clone();
        Self::from_net(
            net,
            topology,
            table,
            camera,
            config.mode,
            config.frames,
            config.global,
        )
    }

    fn width_for(topology: &SkeletonTopology, mode: Mode, frames: usize) -> usize {
        let n = topology.num_params();
        match mode {
            Mode::Single => n + 6,
            Mode::Video => {
                let lengths = topology.length_param_ids().len();
                lengths + frames * (n - lengths + 6)
            }
        }
    }

    pub fn output_width(&self) -> usize {
        Self::width_for(&self.topology, self.mode, self.frames)
    }

    pub fn z_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn layout(&self) -> &InputLayout {
        &self.layout
    }

    pub fn global_bounds(&self) -> [(f64, f64); 6] {
        self.global
    }

    fn lengths_total(&self) -> usize {
        self.length_col.iter().flatten().count()
    }

    fn block_width(&self) -> usize {
        self.angle_col.iter().flatten().count() + 6
    }

    fn block_start(&self, t: usize) -> usize {
        self.lengths_total() + t * self.block_width()
    }

    /// Output column holding parameter `id` for frame `t`.
    pub fn param_column(&self, t: usize, id: usize) -> usize {
        match (self.length_col[id], self.angle_col[id]) {
            (Some(c), _) => c,
            (None, Some(c)) => self.block_start(t) + c,
            (None, None) => unreachable!("every id has a column"),
        }
    }

    /// Output column of global value `k` (`rx, ry, rz, tx, ty, tz`) for frame `t`.
    pub fn global_column(&self, t: usize, k: usize) -> usize {
        self.block_start(t) + self.block_width() - 6 + k
    }

    /// Squash bounds of every output column.
    pub fn raw_bounds(&self) -> Vec<(f64, f64)> {
        let mut b = vec![(0.0, 0.0); self.output_width()];
        for t in 0..self.frames {
            for id in 0..self.topology.num_params() {
                b[self.param_column(t, id)] = self.table.bound(id);
            }
            for k in 0..6 {
                b[self.global_column(t, k)] = self.global[k];
            }
        }
        b
    }

    /// Turns one row of raw network output into poses.
    pub fn decode(&self, raw: &[f64]) -> Result<GeneratedSample> {
        if raw.len() != self.output_width() {
            return Err(Error::shape("decode", &[raw.len()], &[self.output_width()]));
        }
        let n = self.topology.num_params();
        let mut frames = Vec::with_capacity(self.frames);
        for t in 0..self.frames {
            let raw_params: Vec<f64> = (0..n).map(|id| raw[self.param_column(t, id)]).collect();
            let params = squash_params(&raw_params, &self.table)?;
            let mut g = [0.0; 6];
            for (k, v) in g.iter_mut().enumerate() {
                let (lo, hi) = self.global[k];
                *v = squash_scalar(raw[self.global_column(t, k)], lo, hi);
            }
            let global = GlobalTransform::from_array(g);
            let pose3d = forward_kinematics(&self.topology, &params, &global)?;
            let pose2d = project_pose(&pose3d, &self.camera)?;
            frames.push(GeneratedFrame {
                params,
                global,
                pose3d,
                pose2d,
            });
        }
        Ok(GeneratedSample { frames })
    }

    /// One result per latent row; depth violations are reported per row.
    pub fn generate(&self, z: &Tensor) -> Result<Vec<Result<GeneratedSample>>> {
        let raw = self.net.forward(z)?;
        Ok((0..raw.rows())
            .into_par_iter()
            .map(|i| self.decode(raw.row(i)))
            .collect())
    }

    /// `count` samples, redrawing latents for rows that put a joint behind `z_min`.
    /// Returns the samples and how many rows were redrawn.
    pub fn generate_valid(
        &self,
        count: usize,
        rng: &mut impl Rng,
    ) -> Result<(Vec<GeneratedSample>, usize)> {
        let mut out = Vec::with_capacity(count);
        let mut redrawn = 0;
        let mut attempts = 0;
        while out.len() < count {
            let need = count - out.len();
            let z = sample_latent(need, self.z_dim(), rng);
            for r in self.generate(&z)? {
                match r {
                    Ok(s) => out.push(s),
                    Err(Error::DepthViolation { .. }) => redrawn += 1,
                    Err(e) => return Err(e),
                }
            }
            attempts += 1;
            if attempts > 1000 {
                return Err(Error::Data(
                    "generator keeps placing joints behind the camera".into(),
                ));
            }
        }
        Ok((out, redrawn))
    }

    /// Critic input vectors of generated samples, without a tape.
    pub fn encode(&self, samples: &[GeneratedSample]) -> Result<(Tensor, Option<Tensor>)> {
        let single_rows: Vec<Vec<f64>> = samples
            .par_iter()
            .flat_map_iter(|s| {
                s.frames.iter().map(|f| {
                    self.layout
                        .encode_single(&f.pose3d, &f.pose2d, &self.camera)
                })
            })
            .collect::<Result<_>>()?;
        let single = Tensor::from_rows(&single_rows)?;
        let motion = match self.mode {
            Mode::Single => None,
            Mode::Video => {
                let rows: Vec<Vec<f64>> = samples
                    .par_iter()
                    .map(|s| {
                        let p3: Vec<Pose3D> = s.frames.iter().map(|f| f.pose3d.clone()).collect();
                        let p2: Vec<Pose2D> = s.frames.iter().map(|f| f.pose2d.clone()).collect();
                        self.layout.encode_motion(&p3, &p2, &self.camera)
                    })
                    .collect::<Result<_>>()?;
                Some(Tensor::from_rows(&rows)?)
            }
        };
        Ok((single, motion))
    }

    /// Records the full generator on `tape` and returns the critic inputs as
    /// nodes differentiable in the network weights `params`.
    pub fn record(
        &self,
        tape: &mut TapeGraph,
        params: &[NodeId],
        z: &Tensor,
    ) -> Result<GraphOutput> {
        let rows = z.rows();
        let zc = tape.constant(z.clone());
        let trace = self.net.record(tape, params, zc)?;
        let squashed = tape.squash(trace.output(), self.raw_bounds())?;
        let cols: Vec<Col> = (0..self.output_width())
            .map(|j| tape.slice_cols(squashed, j, 1).map(Col::N))
            .collect::<Result<_>>()?;
        let mut ops = ColOps { tape, rows };

        let mut frames_cam = Vec::with_capacity(self.frames);
        for t in 0..self.frames {
            let delta = |id: usize| cols[self.param_column(t, id)];
            let local = graph_keypoints(&mut ops, &self.topology, &delta)?;
            let g: Vec<Col> = (0..6).map(|k| cols[self.global_column(t, k)]).collect();
            frames_cam.push(graph_global(&mut ops, &local, &g)?);
        }

        let layout = &self.layout;
        let mut single = Vec::with_capacity(self.frames);
        let mut rel = Vec::new();
        let mut cosines = Vec::new();
        let mut image = Vec::new();
        for joints in &frames_cam {
            let r = graph_root_relative(&mut ops, joints, layout.root)?;
            let c = graph_cosines(&mut ops, joints, layout)?;
            let i = graph_image(&mut ops, joints)?;
            let all: Vec<Col> = r.iter().chain(&c).chain(&i).copied().collect();
            single.push(ops.concat(&all)?);
            rel.push(r);
            cosines.push(c);
            image.push(i);
        }
        let motion = match self.mode {
            Mode::Single => None,
            Mode::Video => {
                let mut all: Vec<Col> = rel.concat();
                for w in frames_cam.windows(2) {
                    for (a, b) in w[1].iter().zip(&w[0]) {
                        for c in 0..3 {
                            all.push(ops.sub(a[c], b[c])?);
                        }
                    }
                }
                all.extend(cosines.concat());
                for w in cosines.windows(2) {
                    for (a, b) in w[1].iter().zip(&w[0]) {
                        all.push(ops.sub(*a, *b)?);
                    }
                }
                all.extend(image.concat());
                let root = layout.root;
                for w in image.windows(2) {
                    all.push(ops.sub(w[1][2 * root], w[0][2 * root])?);
                    all.push(ops.sub(w[1][2 * root + 1], w[0][2 * root + 1])?);
                }
                Some(ops.concat(&all)?)
            }
        };
        Ok(GraphOutput { single, motion })
    }
}

/// A `[B, 1]` column on the tape, or a value shared by every row.
#[derive(Debug, Clone, Copy)]
enum Col {
    C(f64),
    N(NodeId),
}

struct ColOps<'a> {
    tape: &'a mut TapeGraph,
    rows: usize,
}

impl ColOps<'_> {
    fn node(&mut self, c: Col) -> NodeId {
        match c {
            Col::N(n) => n,
            Col::C(v) => self.tape.constant(Tensor::full(self.rows, 1, v)),
        }
    }

    fn add(&mut self, a: Col, b: Col) -> Result<Col> {
        Ok(match (a, b) {
            (Col::C(x), Col::C(y)) => Col::C(x + y),
            (Col::C(c), n) | (n, Col::C(c)) if c == 0.0 => n,
            (Col::C(c), Col::N(n)) | (Col::N(n), Col::C(c)) => Col::N(self.tape.offset(n, c)),
            (Col::N(x), Col::N(y)) => Col::N(self.tape.add(x, y)?),
        })
    }

    fn sub(&mut self, a: Col, b: Col) -> Result<Col> {
        Ok(match (a, b) {
            (Col::C(x), Col::C(y)) => Col::C(x - y),
            (n, Col::C(c)) if c == 0.0 => n,
            (Col::N(n), Col::C(c)) => Col::N(self.tape.offset(n, -c)),
            (Col::C(c), Col::N(n)) => {
                let neg = self.tape.scale(n, -1.0);
                Col::N(self.tape.offset(neg, c))
            }
            (Col::N(x), Col::N(y)) => Col::N(self.tape.sub(x, y)?),
        })
    }

    fn mul(&mut self, a: Col, b: Col) -> Result<Col> {
        Ok(match (a, b) {
            (Col::C(x), Col::C(y)) => Col::C(x * y),
            (Col::C(c), _) | (_, Col::C(c)) if c == 0.0 => Col::C(0.0),
            (Col::C(c), n) | (n, Col::C(c)) if c == 1.0 => n,
            (Col::C(c), Col::N(n)) | (Col::N(n), Col::C(c)) => Col::N(self.tape.scale(n, c)),
            (Col::N(x), Col::N(y)) => Col::N(self.tape.mul(x, y)?),
        })
    }

    fn div(&mut self, a: Col, b: Col) -> Result<Col> {
        match b {
            Col::C(c) => self.mul(a, Col::C(1.0 / c)),
            Col::N(d) => {
                let n = self.node(a);
                Ok(Col::N(self.tape.div(n, d)?))
            }
        }
    }

    fn sqrt(&mut self, a: Col) -> Col {
        match a {
            Col::C(v) => Col::C(v.sqrt()),
            Col::N(n) => Col::N(self.tape.sqrt(n)),
        }
    }

    fn sin_cos(&mut self, a: Col) -> (Col, Col) {
        match a {
            Col::C(v) => {
                let (s, c) = exact_sin_cos(v);
                (Col::C(s), Col::C(c))
            }
            Col::N(n) => (Col::N(self.tape.sin(n)), Col::N(self.tape.cos(n))),
        }
    }

    fn dot(&mut self, a: &[Col], b: &[Col]) -> Result<Col> {
        let mut acc = Col::C(0.0);
        for (x, y) in a.iter().zip(b) {
            let p = self.mul(*x, *y)?;
            acc = self.add(acc, p)?;
        }
        Ok(acc)
    }

    fn concat(&mut self, cols: &[Col]) -> Result<NodeId> {
        let nodes: Vec<NodeId> = cols.iter().map(|&c| self.node(c)).collect();
        self.tape.concat_cols(&nodes)
    }
}

/// Rigid transform as the top three rows of a 4×4 matrix.
type Rigid = [[Col; 4]; 3];

/// Keypoints before the global transform, one `[x, y, z]` per keypoint.
fn graph_keypoints(
    ops: &mut ColOps<'_>,
    topology: &SkeletonTopology,
    delta: &dyn Fn(usize) -> Col,
) -> Result<Vec<[Col; 3]>> {
    let plan = topology.evaluation_plan();
    let mut frames: Vec<Rigid> = Vec::with_capacity(plan.len());
    for &(parent, b, r) in &plan {
        let row = topology.branches()[b].rows[r];
        let value = |field: DhField, ops: &mut ColOps<'_>| -> Result<Col> {
            let rest = Col::C(row.get(field));
            match topology.param_id(b, r, field) {
                Some(id) => ops.add(rest, delta(id)),
                None => Ok(rest),
            }
        };
        let a = value(DhField::A, ops)?;
        let d = value(DhField::D, ops)?;
        let alpha = value(DhField::Alpha, ops)?;
        let theta = value(DhField::Theta, ops)?;
        let (st, ct) = ops.sin_cos(theta);
        let (sa, ca) = ops.sin_cos(alpha);
        let neg_st = ops.mul(st, Col::C(-1.0))?;
        let neg_sa = ops.mul(sa, Col::C(-1.0))?;
        let local: Rigid = [
            [ct, neg_st, Col::C(0.0), a],
            [ops.mul(st, ca)?, ops.mul(ct, ca)?, neg_sa, {
                let x = ops.mul(d, sa)?;
                ops.mul(x, Col::C(-1.0))?
            }],
            [ops.mul(st, sa)?, ops.mul(ct, sa)?, ca, ops.mul(d, ca)?],
        ];
        let m = match parent {
            None => local,
            Some(p) => compose(ops, &frames[p], &local)?,
        };
        frames.push(m);
    }
    Ok((0..topology.keypoint_count())
        .map(|k| {
            let m = &frames[topology.keypoint_node(k)];
            [m[0][3], m[1][3], m[2][3]]
        })
        .collect())
}

fn compose(ops: &mut ColOps<'_>, p: &Rigid, l: &Rigid) -> Result<Rigid> {
    let mut out = [[Col::C(0.0); 4]; 3];
    for i in 0..3 {
        for j in 0..4 {
            let mut acc = if j == 3 { p[i][3] } else { Col::C(0.0) };
            for k in 0..3 {
                let t = ops.mul(p[i][k], l[k][j])?;
                acc = ops.add(acc, t)?;
            }
            out[i][j] = acc;
        }
    }
    Ok(out)
}

fn matmul3(ops: &mut ColOps<'_>, a: &[[Col; 3]; 3], b: &[[Col; 3]; 3]) -> Result<[[Col; 3]; 3]> {
    let mut out = [[Col::C(0.0); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let row = [a[i][0], a[i][1], a[i][2]];
            let col = [b[0][j], b[1][j], b[2][j]];
            out[i][j] = ops.dot(&row, &col)?;
        }
    }
    Ok(out)
}

/// `Rx·Ry·Rz·p + t` with `g = [rx, ry, rz, tx, ty, tz]`.
fn graph_global(ops: &mut ColOps<'_>, joints: &[[Col; 3]], g: &[Col]) -> Result<Vec<[Col; 3]>> {
    let (z, o) = (Col::C(0.0), Col::C(1.0));
    let (sx, cx) = ops.sin_cos(g[0]);
    let (sy, cy) = ops.sin_cos(g[1]);
    let (sz, cz) = ops.sin_cos(g[2]);
    let nsx = ops.mul(sx, Col::C(-1.0))?;
    let nsy = ops.mul(sy, Col::C(-1.0))?;
    let nsz = ops.mul(sz, Col::C(-1.0))?;
    let rx = [[o, z, z], [z, cx, nsx], [z, sx, cx]];
    let ry = [[cy, z, sy], [z, o, z], [nsy, z, cy]];
    let rz = [[cz, nsz, z], [sz, cz, z], [z, z, o]];
    let rxy = matmul3(ops, &rx, &ry)?;
    let r = matmul3(ops, &rxy, &rz)?;
    joints
        .iter()
        .map(|p| {
            let mut q = [Col::C(0.0); 3];
            for i in 0..3 {
                let rp = ops.dot(&r[i], p)?;
                q[i] = ops.add(rp, g[3 + i])?;
            }
            Ok(q)
        })
        .collect()
}

fn graph_root_relative(ops: &mut ColOps<'_>, joints: &[[Col; 3]], root: usize) -> Result<Vec<Col>> {
    let r = joints[root];
    let mut out = Vec::with_capacity(3 * joints.len());
    for p in joints {
        for c in 0..3 {
            out.push(ops.sub(p[c], r[c])?);
        }
    }
    Ok(out)
}

fn graph_cosines(
    ops: &mut ColOps<'_>,
    joints: &[[Col; 3]],
    layout: &InputLayout,
) -> Result<Vec<Col>> {
    let pairs = &layout.pairs;
    let mut vectors = Vec::with_capacity(pairs.bones.len());
    for &(p, c) in &pairs.bones {
        let mut v = [Col::C(0.0); 3];
        for k in 0..3 {
            v[k] = ops.sub(joints[c][k], joints[p][k])?;
        }
        vectors.push(v);
    }
    let sq: Vec<Col> = vectors
        .iter()
        .map(|v| ops.dot(v, v))
        .collect::<Result<_>>()?;
    pairs
        .pairs
        .iter()
        .map(|&(prev, next)| {
            let num = ops.dot(&vectors[next], &vectors[prev])?;
            let den2 = ops.mul(sq[next], sq[prev])?;
            let den = ops.sqrt(den2);
            ops.div(num, den)
        })
        .collect()
}

fn graph_image(ops: &mut ColOps<'_>, joints: &[[Col; 3]]) -> Result<Vec<Col>> {
    let mut out = Vec::with_capacity(2 * joints.len());
    for p in joints {
        out.push(ops.div(p[0], p[2])?);
        out.push(ops.div(p[1], p[2])?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::bind;
    use crate::camera::default_camera;
    use crate::constraint::{default_constraint_table, validate_params};
    use crate::skeleton::default_topology;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config(mode: Mode, frames: usize) -> TrainConfig {
        TrainConfig {
            mode,
            frames,
            z_dim: 8,
            generator_hidden: vec![16],
            ..TrainConfig::default()
        }
    }

    fn generator(mode: Mode, frames: usize, seed: u64) -> DhGenerator {
        DhGenerator::new(
            &small_config(mode, frames),
            default_topology(),
            default_constraint_table(),
            default_camera(),
            &mut ChaCha8Rng::seed_from_u64(seed),
        )
        .unwrap()
    }

    #[test]
    fn output_widths() {
        assert_eq!(generator(Mode::Single, 1, 0).output_width(), 54);
        assert_eq!(generator(Mode::Video, 9, 0).output_width(), 15 + 9 * 39);
        assert_eq!(generator(Mode::Video, 27, 0).output_width(), 15 + 27 * 39);
    }

    #[test]
    fn latent_is_deterministic() {
        let a = sample_latent(4, 128, &mut ChaCha8Rng::seed_from_u64(5));
        let b = sample_latent(4, 128, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
        assert_eq!(a.shape(), [4, 128]);
    }

    #[test]
    fn zero_network_gives_mid_range_pose() {
        let mut g = generator(Mode::Single, 1, 0);
        g.net = Mlp::zeros(&g.net.dims(), Activation::Tanh, Activation::Identity);
        let s = g.generate(&Tensor::zeros(1, 8)).unwrap().remove(0).unwrap();
        let f = &s.frames[0];
        assert_eq!(f.params, g.table.midpoint());
        let bounds = g.global_bounds();
        let mid = GlobalTransform::from_array(std::array::from_fn(|k| {
            squash_scalar(0.0, bounds[k].0, bounds[k].1)
        }));
        let want = forward_kinematics(&g.topology, &g.table.midpoint(), &mid).unwrap();
        assert_eq!(f.pose3d, want);
    }

    #[test]
    fn generated_frames_are_valid_and_video_lengths_shared() {
        let g = generator(Mode::Video, 5, 3);
        let (samples, _) = g
            .generate_valid(20, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        let bones = g.topology.bone_list().to_vec();
        for s in &samples {
            assert_eq!(s.frames.len(), 5);
            let l0 = s.frames[0].pose3d.bone_lengths(&bones);
            for f in &s.frames {
                assert!(validate_params(&f.params, &g.table).ok);
                for (a, b) in f.pose3d.bone_lengths(&bones).iter().zip(&l0) {
                    assert!((a - b).abs() <= 1e-9 * b);
                }
            }
        }
    }

    #[test]
    fn graph_matches_plain_path() {
        for (mode, frames) in [(Mode::Single, 1), (Mode::Video, 3)] {
            let g = generator(mode, frames, 11);
            let z = sample_latent(6, 8, &mut ChaCha8Rng::seed_from_u64(2));
            let samples: Vec<GeneratedSample> = g
                .generate(&z)
                .unwrap()
                .into_iter()
                .map(|r| r.unwrap())
                .collect();
            let (single, motion) = g.encode(&samples).unwrap();
            let mut tape = TapeGraph::new();
            let params = bind(&mut tape, &g.net, true);
            let out = g.record(&mut tape, &params, &z).unwrap();
            assert_eq!(out.single.len(), frames);
            for (t, node) in out.single.iter().enumerate() {
                let v = tape.value(*node);
                for i in 0..6 {
                    let plain = single.row(i * frames + t);
                    for (a, b) in v.row(i).iter().zip(plain) {
                        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
                    }
                }
            }
            if let (Some(node), Some(m)) = (out.motion, motion) {
                let v = tape.value(node);
                assert_eq!(v.shape(), m.shape());
                for (a, b) in v.data().iter().zip(m.data()) {
                    assert!((a - b).abs() < 1e-9, "{a} vs {b}");
                }
            }
        }
    }
}
