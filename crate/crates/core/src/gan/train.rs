//! Alternating critic / generator optimization.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    bind, AdamState, Checkpoint, Gradients, Mlp, NodeId, ScalarNet, TapeGraph, Tensor,
};
use crate::camera::CameraIntrinsics;
use crate::constraint::{validate_params, ConstraintTable};
use crate::dataset::DatasetRecord;
use crate::error::{Error, Result};
use crate::gan::config::{Mode, TrainConfig};
use crate::gan::critic::{
    single_frame_discriminator, FusionCritic, MultiStreamMotionDiscriminator,
    SingleFrameDiscriminator,
};
use crate::gan::generator::{sample_latent, DhGenerator, GeneratedSample};
use crate::gan::inputs::InputLayout;
use crate::gan::loss::{
    critic_loss, gamma_schedule, record_generator_loss, CriticBatch, LossTerms,
};
use crate::skeleton::SkeletonTopology;

/// Encoded real data. In video mode a sample is a window of `frames` records
/// of one sequence.
#[derive(Debug, Clone)]
pub struct RealData {
    pub single: Tensor,
    pub motion: Option<Tensor>,
    pub frames: usize,
}

impl RealData {
    pub fn from_records(
        records: &[DatasetRecord],
        layout: &InputLayout,
        mode: Mode,
        frames: usize,
    ) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Data("training data is empty".into()));
        }
        match mode {
            Mode::Single => {
                let rows = records
                    .iter()
                    .map(|r| layout.encode_single(&r.pose3d, &r.pose2d, &r.camera))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Self {
                    single: Tensor::from_rows(&rows)?,
                    motion: None,
                    frames: 1,
                })
            }
            Mode::Video => {
                let mut seqs: BTreeMap<u64, Vec<&DatasetRecord>> = BTreeMap::new();
                for r in records {
                    seqs.entry(r.sequence_id).or_default().push(r);
                }
                let mut single = Vec::new();
                let mut motion = Vec::new();
                for seq in seqs.values_mut() {
                    seq.sort_by_key(|r| r.frame_index);
                    for w in seq.chunks_exact(frames) {
                        let p3: Vec<_> = w.iter().map(|r| r.pose3d.clone()).collect();
                        let p2: Vec<_> = w.iter().map(|r| r.pose2d.clone()).collect();
                        motion.push(layout.encode_motion(&p3, &p2, &w[0].camera)?);
                        for r in w {
                            single.push(layout.encode_single(&r.pose3d, &r.pose2d, &r.camera)?);
                        }
                    }
                }
                if motion.is_empty() {
                    return Err(Error::Data(format!(
                        "no sequence has {frames} consecutive frames"
                    )));
                }
                Ok(Self {
                    single: Tensor::from_rows(&single)?,
                    motion: Some(Tensor::from_rows(&motion)?),
                    frames,
                })
            }
        }
    }

    /// Samples: poses in single-frame mode, windows in video mode.
    pub fn len(&self) -> usize {
        self.single.rows() / self.frames
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// 2D-3D pairs covered.
    pub fn pair_count(&self) -> usize {
        self.single.rows()
    }

    pub fn batch(&self, idx: &[usize]) -> CriticBatch {
        let rows: Vec<usize> = idx
            .iter()
            .flat_map(|&i| i * self.frames..(i + 1) * self.frames)
            .collect();
        CriticBatch {
            single: self.single.select_rows(&rows),
            motion: self.motion.as_ref().map(|m| m.select_rows(idx)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub gamma: f64,
    pub critic_steps: usize,
    pub generator_steps: usize,
    pub critic_loss: f64,
    pub generator_loss: f64,
    /// Mean of `E[Ds(real)] − E[Ds(fake)]` over critic steps.
    pub wasserstein: f64,
    pub penalty: f64,
    /// Mean gated motion term; exactly 0 before the motion critic switches on.
    pub motion_term: f64,
    pub violations: usize,
    pub redrawn: usize,
    pub synthesized_pairs: usize,
    pub training_pairs: usize,
}

pub struct TrainState {
    pub config: TrainConfig,
    pub generator: DhGenerator,
    pub ds: SingleFrameDiscriminator,
    pub dm: Option<MultiStreamMotionDiscriminator>,
    adam_g: AdamState,
    adam_ds: AdamState,
    adam_dm: AdamState,
    rng: ChaCha8Rng,
    pub epoch: usize,
    pub critic_steps_taken: usize,
    pub generator_steps_taken: usize,
}

fn apply(
    adam: &mut AdamState,
    net: &mut impl ScalarNet,
    ids: &[NodeId],
    grads: &Gradients,
) -> Result<()> {
    let g: Vec<Tensor> = ids
        .iter()
        .zip(net.parameters())
        .map(|(&id, p)| grads.wrt(id, p))
        .collect();
    adam.step(&mut net.parameters_mut(), &g)
}

impl TrainState {
    pub fn new(
        config: TrainConfig,
        topology: SkeletonTopology,
        table: ConstraintTable,
        camera: CameraIntrinsics,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let generator = DhGenerator::new(&config, topology, table, camera, &mut rng)?;
        let layout = generator.layout().clone();
        let ds = single_frame_discriminator(
            &layout,
            &config.encoder_hidden,
            &config.head_hidden,
            &mut rng,
        );
        let dm = match config.mode {
            Mode::Single => None,
            Mode::Video => Some(MultiStreamMotionDiscriminator::new(
                &layout,
                config.frames,
                &config.encoder_hidden,
                &config.head_hidden,
                &mut rng,
            )),
        };
        let lr = config.learning_rate;
        Ok(Self {
            config,
            generator,
            ds,
            dm,
            adam_g: AdamState::new(lr),
            adam_ds: AdamState::new(lr),
            adam_dm: AdamState::new(lr),
            rng,
            epoch: 0,
            critic_steps_taken: 0,
            generator_steps_taken: 0,
        })
    }

    /// Motion-term weight for the current epoch; always 0 without a motion critic.
    pub fn gamma(&self) -> f64 {
        match self.dm {
            Some(_) => gamma_schedule(self.epoch, self.config.beta_epoch),
            None => 0.0,
        }
    }

    fn non_finite(&self, snapshot: String) -> Error {
        Error::NonFiniteLoss {
            epoch: self.epoch,
            step: self.critic_steps_taken + self.generator_steps_taken,
            snapshot,
        }
    }

    /// Generated critic inputs for `n` samples.
    pub fn fake_batch(&mut self, n: usize) -> Result<(CriticBatch, Vec<GeneratedSample>, usize)> {
        let (samples, redrawn) = self.generator.generate_valid(n, &mut self.rng)?;
        let (single, motion) = self.generator.encode(&samples)?;
        Ok((CriticBatch { single, motion }, samples, redrawn))
    }

    /// One Adam step of the critics against freshly generated fakes.
    pub fn critic_step(&mut self, real: &CriticBatch, gamma: f64) -> Result<LossTerms> {
        let n = match &real.motion {
            Some(m) if self.config.mode == Mode::Video => m.rows(),
            _ => real.single.rows(),
        };
        let (fake, _, _) = self.fake_batch(n)?;
        let cl = critic_loss(
            &self.ds,
            self.dm.as_ref(),
            real,
            &fake,
            self.config.alpha,
            gamma,
            &mut self.rng,
        )?;
        if !cl.terms.is_finite() {
            return Err(self.non_finite(format!("{:?}", cl.terms)));
        }
        let grads = cl.tape.backward(cl.loss)?;
        apply(&mut self.adam_ds, &mut self.ds, &cl.ds_params, &grads)?;
        if let (Some(ids), Some(dm)) = (&cl.dm_params, self.dm.as_mut()) {
            apply(&mut self.adam_dm, dm, ids, &grads)?;
        }
        self.critic_steps_taken += 1;
        Ok(cl.terms)
    }

    /// One Adam step of the generator on `n` latent samples.
    pub fn generator_step(&mut self, n: usize, gamma: f64) -> Result<f64> {
        let z = sample_latent(n, self.generator.z_dim(), &mut self.rng);
        let mut tape = TapeGraph::new();
        let params = bind(&mut tape, &self.generator.net, true);
        let out = self.generator.record(&mut tape, &params, &z)?;
        let loss = record_generator_loss(
            &mut tape,
            &self.ds,
            self.dm.as_ref(),
            &out.single,
            out.motion,
            gamma,
        )?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(self.non_finite(format!("generator loss {value}")));
        }
        let grads = tape.backward(loss)?;
        apply(&mut self.adam_g, &mut self.generator.net, &params, &grads)?;
        self.generator_steps_taken += 1;
        Ok(value)
    }

    /// One pass over `real`, then synthesis of as many pairs as the training
    /// set holds, handed to `sink` in batches.
    pub fn train_epoch(
        &mut self,
        real: &RealData,
        sink: &mut dyn FnMut(&[GeneratedSample]) -> Result<()>,
    ) -> Result<EpochMetrics> {
        if real.is_empty() {
            return Err(Error::Data("training data is empty".into()));
        }
        let gamma = self.gamma();
        let batch = self.config.batch_size().min(real.len());
        let mut order: Vec<usize> = (0..real.len()).collect();
        order.shuffle(&mut self.rng);

        let mut m = EpochMetrics {
            epoch: self.epoch,
            gamma,
            critic_steps: 0,
            generator_steps: 0,
            critic_loss: 0.0,
            generator_loss: 0.0,
            wasserstein: 0.0,
            penalty: 0.0,
            motion_term: 0.0,
            violations: 0,
            redrawn: 0,
            synthesized_pairs: 0,
            training_pairs: real.pair_count(),
        };
        for idx in order.chunks(batch) {
            let terms = self.critic_step(&real.batch(idx), gamma)?;
            m.critic_steps += 1;
            m.critic_loss += terms.total;
            m.wasserstein += terms.ds_real - terms.ds_fake;
            m.penalty += terms.ds_penalty + terms.dm_penalty;
            m.motion_term += terms.motion_term;
            if m.critic_steps.is_multiple_of(self.config.critic_steps) {
                m.generator_loss += self.generator_step(idx.len(), gamma)?;
                m.generator_steps += 1;
            }
        }
        let c = m.critic_steps as f64;
        m.critic_loss /= c;
        m.wasserstein /= c;
        m.penalty /= c;
        m.motion_term /= c;
        if m.generator_steps > 0 {
            m.generator_loss /= m.generator_steps as f64;
        }

        let mut remaining = real.len();
        while remaining > 0 {
            let n = remaining.min(batch);
            let (samples, redrawn) = self.generator.generate_valid(n, &mut self.rng)?;
            m.redrawn += redrawn;
            for s in &samples {
                for f in &s.frames {
                    m.violations += validate_params(&f.params, &self.generator.table)
                        .violations
                        .len();
                    m.synthesized_pairs += 1;
                }
            }
            sink(&samples)?;
            remaining -= n;
        }
        self.epoch += 1;
        Ok(m)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut nets: Vec<(String, Mlp)> = vec![("generator".into(), self.generator.net.clone())];
        let mut push_critic = |prefix: &str, c: &FusionCritic| {
            for (i, e) in c.encoders.iter().enumerate() {
                nets.push((format!("{prefix}.enc{i}"), e.clone()));
            }
            nets.push((format!("{prefix}.head"), c.head.clone()));
        };
        push_critic("ds", &self.ds);
        if let Some(dm) = &self.dm {
            for (b, branch) in dm.branches.iter().enumerate() {
                push_critic(&format!("dm.b{b}"), branch);
            }
        }
        Checkpoint {
            seed: self.config.seed,
            meta: serde_json::json!({
                "topology": self.generator.topology.hash(),
                "config": self.config,
                "epoch": self.epoch,
            }),
            nets,
        }
    }
}
