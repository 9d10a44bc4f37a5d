//! Gated gradient-penalty Wasserstein objectives.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{bind, gradient_penalty, NodeId, ScalarNet, TapeGraph, Tensor};
use crate::error::{Error, Result};
use crate::gan::critic::{MultiStreamMotionDiscriminator, SingleFrameDiscriminator};

/// 1 once `epoch` (0-based) reaches `beta_epoch`, else 0.
pub fn gamma_schedule(epoch: usize, beta_epoch: usize) -> f64 {
    if epoch >= beta_epoch {
        1.0
    } else {
        0.0
    }
}

/// Critic inputs for a batch: single-frame rows, and one motion row per sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticBatch {
    pub single: Tensor,
    pub motion: Option<Tensor>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub ds_real: f64,
    pub ds_fake: f64,
    pub ds_penalty: f64,
    pub dm_real: f64,
    pub dm_fake: f64,
    pub dm_penalty: f64,
    /// `γ · (E[Dm(fake)] − E[Dm(real)] + penalty)`; exactly 0 when γ = 0.
    pub motion_term: f64,
    pub total: f64,
}

impl LossTerms {
    pub fn is_finite(&self) -> bool {
        [
            self.ds_real,
            self.ds_fake,
            self.ds_penalty,
            self.dm_real,
            self.dm_fake,
            self.dm_penalty,
            self.motion_term,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// A recorded critic objective.
pub struct CriticLoss {
    pub tape: TapeGraph,
    pub loss: NodeId,
    pub ds_params: Vec<NodeId>,
    /// Present only when γ > 0.
    pub dm_params: Option<Vec<NodeId>>,
    pub terms: LossTerms,
}

/// Per-row `ε·real + (1 − ε)·fake` with `ε ~ U[0, 1]`.
pub fn interpolate(real: &Tensor, fake: &Tensor, rng: &mut impl Rng) -> Result<Tensor> {
    real.same_shape(fake, "interpolate")?;
    let mut out = fake.clone();
    for i in 0..real.rows() {
        let eps: f64 = rng.random();
        for j in 0..real.cols() {
            out.set(i, j, eps * real.get(i, j) + (1.0 - eps) * fake.get(i, j));
        }
    }
    Ok(out)
}

struct Wgan {
    real: f64,
    fake: f64,
    penalty: f64,
    loss: NodeId,
}

fn wgan_terms<N: ScalarNet>(
    tape: &mut TapeGraph,
    net: &N,
    params: &[NodeId],
    real: &Tensor,
    fake: &Tensor,
    alpha: f64,
    rng: &mut impl Rng,
) -> Result<Wgan> {
    let x_hat = interpolate(real, fake, rng)?;
    let r = tape.constant(real.clone());
    let f = tape.constant(fake.clone());
    let h = tape.constant(x_hat);
    let tr = net.record(tape, params, r)?;
    let sr = tape.mean(N::trace_output(&tr));
    let tf = net.record(tape, params, f)?;
    let sf = tape.mean(N::trace_output(&tf));
    let gp = gradient_penalty(tape, net, params, h, alpha)?;
    let w = tape.sub(sf, sr)?;
    let loss = tape.add(w, gp)?;
    Ok(Wgan {
        real: tape.value(sr).item(),
        fake: tape.value(sf).item(),
        penalty: tape.value(gp).item(),
        loss,
    })
}

/// `E[Ds(fake)] − E[Ds(real)] + α·GP(Ds) + γ·(E[Dm(fake)] − E[Dm(real)] + α·GP(Dm))`.
pub fn critic_loss(
    ds: &SingleFrameDiscriminator,
    dm: Option<&MultiStreamMotionDiscriminator>,
    real: &CriticBatch,
    fake: &CriticBatch,
    alpha: f64,
    gamma: f64,
    rng: &mut impl Rng,
) -> Result<CriticLoss> {
    let mut tape = TapeGraph::new();
    let ds_params = bind(&mut tape, ds, true);
    let s = wgan_terms(
        &mut tape,
        ds,
        &ds_params,
        &real.single,
        &fake.single,
        alpha,
        rng,
    )?;
    let mut terms = LossTerms {
        ds_real: s.real,
        ds_fake: s.fake,
        ds_penalty: s.penalty,
        ..LossTerms::default()
    };
    let mut loss = s.loss;
    let mut dm_params = None;
    if gamma != 0.0 {
        let dm = dm.ok_or_else(|| Error::invalid("motion term enabled without a motion critic"))?;
        let (Some(rm), Some(fm)) = (&real.motion, &fake.motion) else {
            return Err(Error::invalid("motion term enabled without motion inputs"));
        };
        let params = bind(&mut tape, dm, true);
        let m = wgan_terms(&mut tape, dm, &params, rm, fm, alpha, rng)?;
        let gated = tape.scale(m.loss, gamma);
        loss = tape.add(loss, gated)?;
        terms.dm_real = m.real;
        terms.dm_fake = m.fake;
        terms.dm_penalty = m.penalty;
        terms.motion_term = tape.value(gated).item();
        dm_params = Some(params);
    }
    terms.total = tape.value(loss).item();
    Ok(CriticLoss {
        tape,
        loss,
        ds_params,
        dm_params,
        terms,
    })
}

/// `−E[Ds(fake)] − γ·E[Dm(fake)]` on nodes already recorded on `tape`.
/// Critic weights enter as constants.
pub fn record_generator_loss(
    tape: &mut TapeGraph,
    ds: &SingleFrameDiscriminator,
    dm: Option<&MultiStreamMotionDiscriminator>,
    fake_single: &[NodeId],
    fake_motion: Option<NodeId>,
    gamma: f64,
) -> Result<NodeId> {
    if fake_single.is_empty() {
        return Err(Error::invalid("no generated frames"));
    }
    let ds_params = bind(tape, ds, false);
    let mut acc: Option<NodeId> = None;
    for &x in fake_single {
        let tr = ds.record(tape, &ds_params, x)?;
        let m = tape.mean(SingleFrameDiscriminator::trace_output(&tr));
        acc = Some(match acc {
            None => m,
            Some(a) => tape.add(a, m)?,
        });
    }
    let mean_ds = tape.scale(acc.expect("non-empty"), -1.0 / fake_single.len() as f64);
    if gamma == 0.0 {
        return Ok(mean_ds);
    }
    let (Some(dm), Some(xm)) = (dm, fake_motion) else {
        return Err(Error::invalid(
            "motion term enabled without a motion critic",
        ));
    };
    let dm_params = bind(tape, dm, false);
    let tr = dm.record(tape, &dm_params, xm)?;
    let m = tape.mean(MultiStreamMotionDiscriminator::trace_output(&tr));
    let gated = tape.scale(m, -gamma);
    tape.add(mean_ds, gated)
}

/// Generator loss value on fixed critic inputs.
pub fn generator_loss(
    ds: &SingleFrameDiscriminator,
    dm: Option<&MultiStreamMotionDiscriminator>,
    fake: &CriticBatch,
    gamma: f64,
) -> Result<f64> {
    let mut tape = TapeGraph::new();
    let x = tape.constant(fake.single.clone());
    let xm = fake.motion.clone().map(|m| tape.constant(m));
    let l = record_generator_loss(&mut tape, ds, dm, &[x], xm, gamma)?;
    Ok(tape.value(l).item())
}
