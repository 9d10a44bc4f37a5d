//! Stream-fusion critics.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Mlp, MlpTrace, NodeId, ScalarNet, TapeGraph, Tensor};
use crate::camera::{CameraIntrinsics, Pose2D};
use crate::error::{Error, Result};
use crate::features::FeatureBundle;
use crate::gan::inputs::InputLayout;
use crate::skeleton::Pose3D;

/// Splits its input into contiguous streams, encodes each with its own MLP,
/// concatenates the codes and scores them with a head MLP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionCritic {
    pub widths: Vec<usize>,
    pub encoders: Vec<Mlp>,
    pub head: Mlp,
}

#[derive(Debug, Clone)]
pub struct FusionTrace {
    encoders: Vec<MlpTrace>,
    head: MlpTrace,
}

impl FusionCritic {
    pub fn new(
        widths: &[usize],
        encoder_hidden: &[usize],
        head_hidden: &[usize],
        rng: &mut impl Rng,
    ) -> Self {
        let encoders: Vec<Mlp> = widths
            .iter()
            .map(|&w| {
                let mut dims = vec![w];
                dims.extend(encoder_hidden);
                Mlp::new(&dims, Activation::LeakyRelu, Activation::LeakyRelu, rng)
            })
            .collect();
        let code: usize = encoders.iter().map(Mlp::output_dim).sum();
        let mut dims = vec![code];
        dims.extend(head_hidden);
        dims.push(1);
        let head = Mlp::new(&dims, Activation::LeakyRelu, Activation::Identity, rng);
        Self {
            widths: widths.to_vec(),
            encoders,
            head,
        }
    }

    pub fn zero_weights(&mut self) {
        for p in self.parameters_mut() {
            p.data_mut().fill(0.0);
        }
    }

    fn ranges(&self) -> Vec<(usize, usize)> {
        let mut start = 0;
        self.widths
            .iter()
            .map(|&w| {
                let r = (start, w);
                start += w;
                r
            })
            .collect()
    }

    fn split_params<'a>(&self, params: &'a [NodeId]) -> Result<(Vec<&'a [NodeId]>, &'a [NodeId])> {
        let want: usize = self.parameters().len();
        if params.len() != want {
            return Err(Error::shape(
                "FusionCritic params",
                &[want],
                &[params.len()],
            ));
        }
        let mut out = Vec::with_capacity(self.encoders.len());
        let mut i = 0;
        for e in &self.encoders {
            let n = 2 * e.layers.len();
            out.push(&params[i..i + n]);
            i += n;
        }
        Ok((out, &params[i..]))
    }
}

impl ScalarNet for FusionCritic {
    type Trace = FusionTrace;

    fn input_dim(&self) -> usize {
        self.widths.iter().sum()
    }

    fn parameters(&self) -> Vec<&Tensor> {
        self.encoders
            .iter()
            .chain(std::iter::once(&self.head))
            .flat_map(Mlp::parameters)
            .collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.encoders
            .iter_mut()
            .chain(std::iter::once(&mut self.head))
            .flat_map(Mlp::parameters_mut)
            .collect()
    }

    fn record(&self, tape: &mut TapeGraph, params: &[NodeId], x: NodeId) -> Result<FusionTrace> {
        let width = tape.shape(x)[1];
        if width != self.input_dim() {
            return Err(Error::shape(
                "critic input",
                &tape.shape(x),
                &[self.input_dim()],
            ));
        }
        let (enc_params, head_params) = self.split_params(params)?;
        let mut encoders = Vec::with_capacity(self.encoders.len());
        let mut codes = Vec::with_capacity(self.encoders.len());
        for ((enc, p), (start, w)) in self.encoders.iter().zip(enc_params).zip(self.ranges()) {
            let slice = tape.slice_cols(x, start, w)?;
            let tr = enc.record(tape, p, slice)?;
            codes.push(tr.output());
            encoders.push(tr);
        }
        let joined = tape.concat_cols(&codes)?;
        let head = self.head.record(tape, head_params, joined)?;
        Ok(FusionTrace { encoders, head })
    }

    fn trace_output(trace: &FusionTrace) -> NodeId {
        trace.head.output()
    }

    fn record_input_gradient(&self, tape: &mut TapeGraph, trace: &FusionTrace) -> Result<NodeId> {
        let g_code = self.head.record_input_gradient(tape, &trace.head)?;
        let mut parts = Vec::with_capacity(self.encoders.len());
        let mut start = 0;
        for (enc, tr) in self.encoders.iter().zip(&trace.encoders) {
            let w = enc.output_dim();
            let seed = tape.slice_cols(g_code, start, w)?;
            parts.push(enc.record_backprop(tape, tr, seed)?);
            start += w;
        }
        tape.concat_cols(&parts)
    }

    fn score(&self, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.input_dim() {
            return Err(Error::shape(
                "critic input",
                &x.shape(),
                &[self.input_dim()],
            ));
        }
        let codes: Vec<Tensor> = self
            .encoders
            .iter()
            .zip(self.ranges())
            .map(|(e, (start, w))| e.forward(&x.slice_cols(start, w)?))
            .collect::<Result<_>>()?;
        let refs: Vec<&Tensor> = codes.iter().collect();
        self.head.forward(&Tensor::concat_cols(&refs)?)
    }
}

/// Three streams: 3D pose, joint cosines, 2D pose.
pub type SingleFrameDiscriminator = FusionCritic;

pub fn single_frame_discriminator(
    layout: &InputLayout,
    encoder_hidden: &[usize],
    head_hidden: &[usize],
    rng: &mut impl Rng,
) -> SingleFrameDiscriminator {
    FusionCritic::new(&layout.single_widths(), encoder_hidden, head_hidden, rng)
}

/// Three two-stream branches (3D, cosines, 2D); the score is the sum of the branch scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiStreamMotionDiscriminator {
    pub frames: usize,
    pub branches: Vec<FusionCritic>,
}

#[derive(Debug, Clone)]
pub struct MotionTrace {
    branches: Vec<FusionTrace>,
    score: NodeId,
}

impl MultiStreamMotionDiscriminator {
    pub fn new(
        layout: &InputLayout,
        frames: usize,
        encoder_hidden: &[usize],
        head_hidden: &[usize],
        rng: &mut impl Rng,
    ) -> Self {
        let branches = layout
            .motion_widths(frames)
            .iter()
            .map(|w| FusionCritic::new(w, encoder_hidden, head_hidden, rng))
            .collect();
        Self { frames, branches }
    }

    pub fn zero_weights(&mut self) {
        for b in &mut self.branches {
            b.zero_weights();
        }
    }

    fn branch_ranges(&self) -> Vec<(usize, usize)> {
        let mut start = 0;
        self.branches
            .iter()
            .map(|b| {
                let r = (start, b.input_dim());
                start += b.input_dim();
                r
            })
            .collect()
    }

    /// Each branch's contribution, one column per branch.
    pub fn branch_scores(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        if x.cols() != self.input_dim() {
            return Err(Error::shape(
                "motion critic input",
                &x.shape(),
                &[self.input_dim()],
            ));
        }
        self.branches
            .iter()
            .zip(self.branch_ranges())
            .map(|(b, (start, w))| b.score(&x.slice_cols(start, w)?))
            .collect()
    }
}

impl ScalarNet for MultiStreamMotionDiscriminator {
    type Trace = MotionTrace;

    fn input_dim(&self) -> usize {
        self.branches.iter().map(|b| b.input_dim()).sum()
    }

    fn parameters(&self) -> Vec<&Tensor> {
        self.branches.iter().flat_map(|b| b.parameters()).collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.branches
            .iter_mut()
            .flat_map(|b| b.parameters_mut())
            .collect()
    }

    fn record(&self, tape: &mut TapeGraph, params: &[NodeId], x: NodeId) -> Result<MotionTrace> {
        if tape.shape(x)[1] != self.input_dim() {
            return Err(Error::shape(
                "motion critic input",
                &tape.shape(x),
                &[self.input_dim()],
            ));
        }
        let mut traces = Vec::with_capacity(self.branches.len());
        let mut score: Option<NodeId> = None;
        let mut offset = 0;
        for (b, (start, w)) in self.branches.iter().zip(self.branch_ranges()) {
            let n = b.parameters().len();
            let p = params.get(offset..offset + n).ok_or_else(|| {
                Error::shape("motion critic params", &[offset + n], &[params.len()])
            })?;
            offset += n;
            let slice = tape.slice_cols(x, start, w)?;
            let tr = b.record(tape, p, slice)?;
            let s = FusionCritic::trace_output(&tr);
            score = Some(match score {
                None => s,
                Some(acc) => tape.add(acc, s)?,
            });
            traces.push(tr);
        }
        Ok(MotionTrace {
            branches: traces,
            score: score.ok_or_else(|| Error::invalid("motion critic has no branches"))?,
        })
    }

    fn trace_output(trace: &MotionTrace) -> NodeId {
        trace.score
    }

    fn record_input_gradient(&self, tape: &mut TapeGraph, trace: &MotionTrace) -> Result<NodeId> {
        let parts: Vec<NodeId> = self
            .branches
            .iter()
            .zip(&trace.branches)
            .map(|(b, tr)| b.record_input_gradient(tape, tr))
            .collect::<Result<_>>()?;
        tape.concat_cols(&parts)
    }

    fn score(&self, x: &Tensor) -> Result<Tensor> {
        let parts = self.branch_scores(x)?;
        let mut total = parts[0].clone();
        for p in &parts[1..] {
            total.add_assign(p);
        }
        Ok(total)
    }
}

/// Score of one frame. `cosines` must be the joint cosines of `pose3d`.
pub fn discriminate_single(
    d: &SingleFrameDiscriminator,
    layout: &InputLayout,
    pose3d: &Pose3D,
    pose2d: &Pose2D,
    cosines: &[f64],
    cam: &CameraIntrinsics,
) -> Result<f64> {
    let mut x = layout.encode_single(pose3d, pose2d, cam)?;
    let n = 3 * layout.keypoints;
    if cosines.len() != layout.pairs.len() {
        return Err(Error::shape(
            "cosines",
            &[cosines.len()],
            &[layout.pairs.len()],
        ));
    }
    x[n..n + cosines.len()].copy_from_slice(cosines);
    Ok(d.score(&Tensor::new(1, x.len(), x)?)?.item())
}

/// Score of one sequence. The cosine streams are taken from `bundle`.
pub fn discriminate_motion(
    d: &MultiStreamMotionDiscriminator,
    layout: &InputLayout,
    seq3d: &[Pose3D],
    seq2d: &[Pose2D],
    bundle: &FeatureBundle,
    cam: &CameraIntrinsics,
) -> Result<f64> {
    if seq3d.len() != d.frames {
        return Err(Error::shape(
            "motion critic frames",
            &[seq3d.len()],
            &[d.frames],
        ));
    }
    let mut x = layout.encode_motion(seq3d, seq2d, cam)?;
    let t = d.frames;
    let p = layout.pairs.len();
    let start = t * 3 * layout.keypoints + (t - 1) * 3 * layout.keypoints;
    let cos: Vec<f64> = bundle
        .cosines
        .iter()
        .flatten()
        .chain(bundle.diff_angle.iter().flatten())
        .copied()
        .collect();
    if cos.len() != t * p + (t - 1) * p {
        return Err(Error::shape(
            "feature bundle",
            &[cos.len()],
            &[t * p + (t - 1) * p],
        ));
    }
    x[start..start + cos.len()].copy_from_slice(&cos);
    Ok(d.score(&Tensor::new(1, x.len(), x)?)?.item())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{bind, input_gradient};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(widths: &[usize], seed: u64) -> FusionCritic {
        FusionCritic::new(widths, &[5, 4], &[3], &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn zero_critic_scores_zero() {
        let mut c = small(&[3, 2, 4], 0);
        c.zero_weights();
        let x = Tensor::from_fn(4, 9, |i, j| (i * j) as f64 - 3.0);
        assert_eq!(c.score(&x).unwrap(), Tensor::zeros(4, 1));
    }

    #[test]
    fn recorded_and_plain_scores_agree() {
        let c = small(&[3, 2, 4], 1);
        let x = Tensor::from_fn(4, 9, |i, j| ((i + 2 * j) as f64).sin());
        let mut tape = TapeGraph::new();
        let p = bind(&mut tape, &c, true);
        let xi = tape.constant(x.clone());
        let tr = c.record(&mut tape, &p, xi).unwrap();
        assert_eq!(
            tape.value(FusionCritic::trace_output(&tr)),
            &c.score(&x).unwrap()
        );
    }

    #[test]
    fn fusion_input_gradient_matches_finite_differences() {
        let c = small(&[3, 2, 4], 2);
        let x = Tensor::from_fn(2, 9, |i, j| ((3 * i + j) as f64 * 0.7).cos());
        let g = input_gradient(&c, &x).unwrap();
        let h = 1e-6;
        for i in 0..2 {
            for j in 0..9 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp.set(i, j, x.get(i, j) + h);
                xm.set(i, j, x.get(i, j) - h);
                let fd =
                    (c.score(&xp).unwrap().get(i, 0) - c.score(&xm).unwrap().get(i, 0)) / (2.0 * h);
                assert!((fd - g.get(i, j)).abs() < 1e-6, "{fd} vs {}", g.get(i, j));
            }
        }
    }

    #[test]
    fn motion_score_is_sum_of_branches() {
        let layout = InputLayout::new(&crate::skeleton::default_topology());
        let mut d = MultiStreamMotionDiscriminator::new(
            &layout,
            3,
            &[6],
            &[4],
            &mut ChaCha8Rng::seed_from_u64(4),
        );
        let x = Tensor::from_fn(2, d.input_dim(), |i, j| ((i + j) as f64 * 0.01).sin());
        let parts = d.branch_scores(&x).unwrap();
        let total = d.score(&x).unwrap();
        for i in 0..2 {
            let s: f64 = parts.iter().map(|p| p.get(i, 0)).sum();
            assert_eq!(s, total.get(i, 0));
        }
        // Zeroing branch 1's head removes exactly its contribution.
        for p in d.branches[1].head.parameters_mut() {
            p.data_mut().fill(0.0);
        }
        let after = d.score(&x).unwrap();
        for i in 0..2 {
            let want = total.get(i, 0) - parts[1].get(i, 0);
            assert!((after.get(i, 0) - want).abs() < 1e-12);
        }
    }
}
