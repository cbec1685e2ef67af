//! Training losses and their analytic gradients.
//!
//! All losses are squared log-ratios over a single complete trajectory.
//! Gradients are accumulated (added) into a [`Grads`] buffer, so a batch is
//! the sum of per-trajectory calls followed by [`Grads::scale`].

mod guide;

pub use guide::SubstructureGuide;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::flow::{Evaluated, FlowModel, PolicyHead};
use crate::mdp::{Env, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Tb,
    Maxent,
    GtbSub,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    pub log_z: f64,
    pub pf: Vec<f64>,
    pub pb: Vec<f64>,
}

impl Grads {
    pub fn zeros(model: &FlowModel) -> Self {
        Grads {
            log_z: 0.0,
            pf: vec![0.0; model.pf.param_count()],
            pb: vec![0.0; model.pb.param_count()],
        }
    }

    pub fn add(&mut self, other: &Grads) {
        self.log_z += other.log_z;
        for (a, b) in self.pf.iter_mut().zip(&other.pf) {
            *a += b;
        }
        for (a, b) in self.pb.iter_mut().zip(&other.pb) {
            *a += b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.log_z *= c;
        self.pf.iter_mut().for_each(|g| *g *= c);
        self.pb.iter_mut().for_each(|g| *g *= c);
    }

    pub fn is_finite(&self) -> bool {
        self.log_z.is_finite() && self.pf.iter().chain(&self.pb).all(|g| g.is_finite())
    }
}

/// Per-step evaluations of one head along a trajectory.
pub struct HeadTerms {
    pub log_prob: f64,
    steps: Vec<(Evaluated, usize)>,
}

impl HeadTerms {
    pub fn new(head: &PolicyHead, env: &Env, tau: &Trajectory) -> Result<Self> {
        let mut steps = Vec::with_capacity(tau.len());
        let mut log_prob = 0.0;
        for e in &tau.steps {
            let (ev, i) = head.evaluate_step(env, e)?;
            log_prob += ev.log_probs[i];
            steps.push((ev, i));
        }
        Ok(HeadTerms { log_prob, steps })
    }

    /// Adds `coeff * d log P(tau) / d params` into `grad`.
    pub fn backprop(&self, head: &PolicyHead, coeff: f64, grad: &mut [f64]) {
        if head.param_count() == 0 || coeff == 0.0 {
            return;
        }
        for (ev, i) in &self.steps {
            let mut w = vec![0.0; ev.len()];
            w[*i] = coeff;
            head.backprop(ev, &w, grad);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossEval {
    pub loss: f64,
    pub residual: f64,
    pub log_pf: f64,
    pub log_pb: f64,
}

/// `(log Z + log P_F(tau) - log R - log P_B(tau))^2`.
///
/// With a uniform backward head this is the maximum-entropy loss and the
/// backward gradient is empty.
pub fn tb_loss(env: &Env, model: &FlowModel, tau: &Trajectory, log_r: f64, grads: Option<&mut Grads>) -> Result<LossEval> {
    let pf = HeadTerms::new(&model.pf, env, tau)?;
    let pb = HeadTerms::new(&model.pb, env, tau)?;
    let residual = model.log_z + pf.log_prob - log_r - pb.log_prob;
    if let Some(g) = grads {
        g.log_z += 2.0 * residual;
        pf.backprop(&model.pf, 2.0 * residual, &mut g.pf);
        pb.backprop(&model.pb, -2.0 * residual, &mut g.pb);
    }
    Ok(LossEval {
        loss: residual * residual,
        residual,
        log_pf: pf.log_prob,
        log_pb: pb.log_prob,
    })
}

/// `(log P_B(tau) - log p_guide(tau))^2`, gradients to the backward head only.
pub fn back_gtb_loss(env: &Env, pb_head: &PolicyHead, tau: &Trajectory, guide_log_prob: f64, grad: Option<&mut [f64]>) -> Result<LossEval> {
    let pb = HeadTerms::new(pb_head, env, tau)?;
    let residual = pb.log_prob - guide_log_prob;
    if let Some(g) = grad {
        pb.backprop(pb_head, 2.0 * residual, g);
    }
    Ok(LossEval {
        loss: residual * residual,
        residual,
        log_pf: f64::NAN,
        log_pb: pb.log_prob,
    })
}

/// `(psi_f - psi_b)^2` with `psi_f = log Z + log P_F(tau)` and the constant
/// target `psi_b = log R + alpha * log p_guide(tau) + (1 - alpha) * log P_B(tau)`.
/// Gradients go to `log Z` and the forward head.
pub fn forward_gtb_loss(
    env: &Env,
    model: &FlowModel,
    tau: &Trajectory,
    log_r: f64,
    guide_log_prob: f64,
    alpha: f64,
    grads: Option<&mut Grads>,
) -> Result<LossEval> {
    let pf = HeadTerms::new(&model.pf, env, tau)?;
    let (log_pb, psi_b) = if alpha == 1.0 {
        (f64::NAN, log_r + guide_log_prob)
    } else {
        let lpb = model.pb.traj_log_prob(env, tau)?;
        let g = if alpha == 0.0 { 0.0 } else { alpha * guide_log_prob };
        (lpb, log_r + g + (1.0 - alpha) * lpb)
    };
    let residual = model.log_z + pf.log_prob - psi_b;
    if let Some(g) = grads {
        g.log_z += 2.0 * residual;
        pf.backprop(&model.pf, 2.0 * residual, &mut g.pf);
    }
    Ok(LossEval {
        loss: residual * residual,
        residual,
        log_pf: pf.log_prob,
        log_pb,
    })
}
