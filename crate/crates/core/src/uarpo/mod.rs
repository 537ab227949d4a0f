//! Advantage estimation and the clipped, KL-penalised surrogate objective.
//!
//! Per group of `G` rollouts for one question: the in-group advantage
//! standardises each reward within the group; the cross-group advantage
//! standardises the group's mean reward against the last `L` group means for
//! the same target; both are summed and scaled by the uncertainty
//! adjustment derived from the rollout's self-reported confidence.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chart::TargetSpec;

/// Standard deviations below this are treated as zero.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum UarpoError {
    #[error("invalid hyperparameter: {0}")]
    Hyper(String),
    #[error("non-finite importance ratio at rollout {rollout}, token {token} (logp_new {new}, logp_old {old})")]
    NonFiniteRatio {
        rollout: usize,
        token: usize,
        new: f64,
        old: f64,
    },
    #[error("rollout {0} is empty")]
    EmptyRollout(usize),
    #[error("misaligned inputs: {0}")]
    Misaligned(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Uarpo,
    /// Û ≡ 1 and Â^S ≡ 0.
    Grpo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UarpoHyper {
    /// Clip radius ε.
    pub epsilon: f64,
    /// KL weight β.
    pub beta: f64,
    /// Uncertainty coefficient α.
    pub alpha: f64,
    /// Uncertainty offset.
    pub constant: f64,
    /// Stack window L.
    pub window: usize,
    /// Group size G.
    pub group: usize,
    /// When false, Û ≡ 1 even in UARPO mode.
    pub uncertainty: bool,
}

impl Default for UarpoHyper {
    fn default() -> Self {
        Self {
            epsilon: 0.2,
            beta: 0.04,
            alpha: 1.0,
            constant: 0.0,
            window: 8,
            group: 8,
            uncertainty: true,
        }
    }
}

impl UarpoHyper {
    pub fn validate(&self) -> Result<(), UarpoError> {
        let bad = |m: String| Err(UarpoError::Hyper(m));
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad(format!("epsilon {} must be in (0, 1)", self.epsilon));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return bad(format!("beta {} must be finite and >= 0", self.beta));
        }
        if !self.alpha.is_finite() || !self.constant.is_finite() {
            return bad("alpha and constant must be finite".into());
        }
        if self.window < 1 {
            return bad("window must be at least 1".into());
        }
        if self.group < 2 {
            return bad(format!("group {} must be at least 2", self.group));
        }
        Ok(())
    }
}

/// Population mean and standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// In-group relative advantage: rewards standardised within the group.
pub fn igra(rewards: &[f64]) -> Vec<f64> {
    let (mean, std) = mean_std(rewards);
    if std < STD_FLOOR {
        return vec![0.0; rewards.len()];
    }
    rewards.iter().map(|r| (r - mean) / std).collect()
}

/// The last `window` group-mean rewards of one target, newest last.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetStack {
    window: usize,
    past: VecDeque<f64>,
}

impl TargetStack {
    pub fn new(window: usize) -> Self {
        Self {
            window: window.max(1),
            past: VecDeque::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.past.len()
    }

    pub fn is_empty(&self) -> bool {
        self.past.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = f64> + '_ {
        self.past.iter().copied()
    }

    /// Cross-group advantage of a group with mean reward `mean`, standardised
    /// over the `window` stored means plus `mean` itself; 0 until the stack
    /// is full. `mean` is then stored, evicting the oldest entry.
    pub fn push_mean(&mut self, mean: f64) -> f64 {
        let adv = if self.past.len() == self.window {
            let all: Vec<f64> = self.past.iter().copied().chain([mean]).collect();
            let (m, s) = mean_std(&all);
            if s < STD_FLOOR {
                0.0
            } else {
                (mean - m) / s
            }
        } else {
            0.0
        };
        self.past.push_back(mean);
        if self.past.len() > self.window {
            self.past.pop_front();
        }
        adv
    }

    pub fn push_and_cgra(&mut self, rewards: &[f64]) -> f64 {
        self.push_mean(mean_std(rewards).0)
    }
}

/// One stack per prediction target, indexed by [`TargetSpec::index`].
#[derive(Clone, Debug, PartialEq)]
pub struct TargetStacks {
    stacks: Vec<TargetStack>,
}

impl TargetStacks {
    pub fn new(window: usize) -> Self {
        Self {
            stacks: TargetSpec::ALL
                .iter()
                .map(|_| TargetStack::new(window))
                .collect(),
        }
    }

    pub fn get(&self, target: TargetSpec) -> &TargetStack {
        &self.stacks[target.index()]
    }

    pub fn get_mut(&mut self, target: TargetSpec) -> &mut TargetStack {
        &mut self.stacks[target.index()]
    }
}

/// α·(score − const)/100 before clamping.
pub fn raw_uncertainty(score: u32, hyper: &UarpoHyper) -> f64 {
    hyper.alpha * (f64::from(score) - hyper.constant) / 100.0
}

/// Uncertainty adjustment Û, clamped below at 0.
pub fn uncertainty_adjust(score: u32, hyper: &UarpoHyper) -> f64 {
    raw_uncertainty(score, hyper).max(0.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdvantageSet {
    pub igra: Vec<f64>,
    pub cgra: f64,
    pub uncertainty: Vec<f64>,
    /// (Â^I_i + Â^S)·Û_i, shared by every token of rollout i.
    pub combined: Vec<f64>,
}

/// Advantages for one group. In GRPO mode the stack is left untouched.
pub fn group_advantages(
    rewards: &[f64],
    scores: &[u32],
    stack: &mut TargetStack,
    hyper: &UarpoHyper,
    mode: Mode,
) -> Result<AdvantageSet, UarpoError> {
    if rewards.len() != scores.len() || rewards.len() < 2 {
        return Err(UarpoError::Misaligned(format!(
            "{} rewards and {} scores (need equal counts >= 2)",
            rewards.len(),
            scores.len()
        )));
    }
    let a_i = igra(rewards);
    let (a_s, u) = match mode {
        Mode::Grpo => (0.0, vec![1.0; rewards.len()]),
        Mode::Uarpo => {
            let a_s = stack.push_and_cgra(rewards);
            let u = if hyper.uncertainty {
                scores
                    .iter()
                    .map(|&s| uncertainty_adjust(s, hyper))
                    .collect()
            } else {
                vec![1.0; rewards.len()]
            };
            (a_s, u)
        }
    };
    let combined = a_i.iter().zip(&u).map(|(a, u)| (a + a_s) * u).collect();
    Ok(AdvantageSet {
        igra: a_i,
        cgra: a_s,
        uncertainty: u,
        combined,
    })
}

/// Non-negative KL estimate exp(Δ) − Δ − 1 with Δ = logp_ref − logp_new.
pub fn kl_estimate(logp_new: f64, logp_ref: f64) -> f64 {
    let d = logp_ref - logp_new;
    d.exp() - d - 1.0
}

/// Per-token objective value and its derivative with respect to `logp_new`.
/// When the clipped branch is strictly smaller the surrogate is flat in
/// `logp_new`.
pub fn token_objective_and_grad(
    logp_new: f64,
    logp_old: f64,
    logp_ref: f64,
    advantage: f64,
    hyper: &UarpoHyper,
) -> Option<(f64, f64)> {
    let ratio = (logp_new - logp_old).exp();
    if !ratio.is_finite() {
        return None;
    }
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - hyper.epsilon, 1.0 + hyper.epsilon) * advantage;
    let (term, dterm) = if unclipped <= clipped {
        (unclipped, unclipped)
    } else {
        (clipped, 0.0)
    };
    let delta = logp_ref - logp_new;
    let kl = delta.exp() - delta - 1.0;
    let dkl = 1.0 - delta.exp();
    Some((term - hyper.beta * kl, dterm - hyper.beta * dkl))
}

pub fn token_objective(
    logp_new: f64,
    logp_old: f64,
    logp_ref: f64,
    advantage: f64,
    hyper: &UarpoHyper,
) -> Result<f64, UarpoError> {
    token_objective_and_grad(logp_new, logp_old, logp_ref, advantage, hyper)
        .map(|(v, _)| v)
        .ok_or(UarpoError::NonFiniteRatio {
            rollout: 0,
            token: 0,
            new: logp_new,
            old: logp_old,
        })
}

/// Token log-probabilities of one rollout under the three policies.
#[derive(Clone, Copy, Debug)]
pub struct RolloutLogprobs<'a> {
    pub new: &'a [f64],
    pub old: &'a [f64],
    pub reference: &'a [f64],
}

/// J = (1/G)·Σ_i (1/|o_i|)·Σ_t objective, and ∂J/∂logp_new per token.
pub fn batch_objective_with_grad(
    rollouts: &[RolloutLogprobs<'_>],
    combined: &[f64],
    hyper: &UarpoHyper,
) -> Result<(f64, Vec<Vec<f64>>), UarpoError> {
    if rollouts.len() != combined.len() || rollouts.is_empty() {
        return Err(UarpoError::Misaligned(format!(
            "{} rollouts and {} advantages",
            rollouts.len(),
            combined.len()
        )));
    }
    let g = rollouts.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(rollouts.len());
    for (i, (r, &a)) in rollouts.iter().zip(combined).enumerate() {
        let n = r.new.len();
        if n == 0 {
            return Err(UarpoError::EmptyRollout(i));
        }
        if r.old.len() != n || r.reference.len() != n {
            return Err(UarpoError::Misaligned(format!(
                "rollout {i}: {n} new, {} old, {} reference log-probs",
                r.old.len(),
                r.reference.len()
            )));
        }
        let mut sum = 0.0;
        let mut gi = Vec::with_capacity(n);
        for t in 0..n {
            let (v, d) = token_objective_and_grad(r.new[t], r.old[t], r.reference[t], a, hyper)
                .ok_or(UarpoError::NonFiniteRatio {
                    rollout: i,
                    token: t,
                    new: r.new[t],
                    old: r.old[t],
                })?;
            sum += v;
            gi.push(d / (g * n as f64));
        }
        total += sum / n as f64;
        grads.push(gi);
    }
    Ok((total / g, grads))
}

pub fn batch_objective(
    rollouts: &[RolloutLogprobs<'_>],
    combined: &[f64],
    hyper: &UarpoHyper,
) -> Result<f64, UarpoError> {
    batch_objective_with_grad(rollouts, combined, hyper).map(|(j, _)| j)
}
