use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::metrics::{MetricsRow, METRICS_HEADER, TIMING_HEADER};
use super::warm::warm_start;
use super::{TrainError, TrainSetup};
use crate::autodiff::{adam_step, clip_global_norm, AdamConfig, AdamState, Tensor};
use crate::chart::{load_dataset, Dataset, Split, TargetSpec};
use crate::policy::{
    load_checkpoint, sample_group, save_checkpoint, score_group, PolicyParams, Rollout,
};
use crate::reward::score_output;
use crate::seed::mix_keys;
use crate::uarpo::{batch_objective_with_grad, group_advantages, RolloutLogprobs, TargetStacks};

/// Everything computed for one question's group during a step.
#[derive(Clone, Debug)]
pub struct GroupTrace {
    pub sample: usize,
    pub target: TargetSpec,
    pub rollouts: Vec<Rollout>,
    pub rewards: Vec<f64>,
    pub scores: Vec<u32>,
    pub combined: Vec<f64>,
    pub logp_old: Vec<Vec<f64>>,
    pub logp_ref: Vec<Vec<f64>>,
    /// Live-policy log-probabilities at the start of each inner epoch.
    pub logp_new: Vec<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub row: MetricsRow,
    /// −J per inner epoch (mean over the batch's groups).
    pub epoch_losses: Vec<f64>,
    pub groups: Vec<GroupTrace>,
}

/// Owns the policies, optimiser state, target stacks and batch order.
pub struct Trainer {
    setup: TrainSetup,
    dataset: Dataset,
    train_indices: Vec<usize>,
    policy: PolicyParams,
    reference: PolicyParams,
    adam: AdamState,
    stacks: TargetStacks,
    order: Vec<usize>,
    cursor: usize,
    epoch: u64,
    iteration: usize,
    step_in_iteration: usize,
    global_step: usize,
}

fn to_f64(xs: &[f32]) -> Vec<f64> {
    xs.iter().map(|&x| f64::from(x)).collect()
}

fn add_into(acc: &mut [Tensor], grads: &[Tensor]) {
    for (a, g) in acc.iter_mut().zip(grads) {
        for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
            *x += y;
        }
    }
}

impl Trainer {
    /// Fresh policy from `setup.train.init_checkpoint`, or initialised and
    /// warm-started from the seed.
    pub fn new(setup: TrainSetup, dataset: Dataset) -> Result<Self, TrainError> {
        setup.validate()?;
        let train_indices = dataset.split(Split::Train);
        let policy = match &setup.train.init_checkpoint {
            Some(path) => load_checkpoint(path)?,
            None => {
                let mut p = PolicyParams::init(&setup.model, mix_keys(setup.train.seed, &[1]))?;
                warm_start(
                    &mut p,
                    &dataset,
                    &train_indices,
                    &setup.warm_start,
                    setup.train.seed,
                )?;
                p
            }
        };
        Self::with_policy(setup, dataset, policy)
    }

    pub fn with_policy(
        setup: TrainSetup,
        dataset: Dataset,
        policy: PolicyParams,
    ) -> Result<Self, TrainError> {
        setup.validate()?;
        let train_indices = dataset.split(Split::Train);
        if train_indices.len() < setup.train.batch_size {
            return Err(TrainError::Config(format!(
                "batch_size {} exceeds the {} training samples",
                setup.train.batch_size,
                train_indices.len()
            )));
        }
        if policy.config().max_len < setup.train.max_len {
            return Err(TrainError::Config(format!(
                "policy supports max_len {}, config asks for {}",
                policy.config().max_len,
                setup.train.max_len
            )));
        }
        for s in &dataset.samples {
            let (h, w) = (s.image.height(), s.image.width());
            if (h, w) != (policy.config().image_height, policy.config().image_width) {
                return Err(TrainError::Config(format!(
                    "dataset image {} is {h}x{w}, policy expects {}x{}",
                    s.record.image_path,
                    policy.config().image_height,
                    policy.config().image_width
                )));
            }
        }
        let adam = AdamState::new(policy.tensors());
        Ok(Self {
            stacks: TargetStacks::new(setup.uarpo.window),
            reference: policy.clone(),
            policy,
            adam,
            order: Vec::new(),
            cursor: 0,
            epoch: 0,
            iteration: 0,
            step_in_iteration: 0,
            global_step: 0,
            train_indices,
            dataset,
            setup,
        })
    }

    pub fn policy(&self) -> &PolicyParams {
        &self.policy
    }

    pub fn reference(&self) -> &PolicyParams {
        &self.reference
    }

    pub fn stacks(&self) -> &TargetStacks {
        &self.stacks
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn global_step(&self) -> usize {
        self.global_step
    }

    pub fn steps_per_iteration(&self) -> usize {
        let t = &self.setup.train;
        if t.steps_per_iteration > 0 {
            t.steps_per_iteration
        } else {
            (2 * self.train_indices.len()).div_ceil(t.iterations * t.batch_size)
        }
    }

    /// Starts outer iteration `iteration`: π_ref ← π_θ.
    pub fn begin_iteration(&mut self, iteration: usize) {
        self.iteration = iteration;
        self.step_in_iteration = 0;
        self.reference = self.policy.clone();
        if self.setup.train.reset_stacks_each_iteration {
            self.stacks = TargetStacks::new(self.setup.uarpo.window);
        }
    }

    /// Next batch, drawn without replacement within each pass over the
    /// training split.
    fn next_batch(&mut self) -> Vec<usize> {
        let mut batch = Vec::with_capacity(self.setup.train.batch_size);
        while batch.len() < self.setup.train.batch_size {
            if self.cursor == self.order.len() {
                self.order = self.train_indices.clone();
                let mut rng = ChaCha8Rng::seed_from_u64(mix_keys(
                    self.setup.train.seed,
                    &[0xE90C, self.epoch],
                ));
                self.order.shuffle(&mut rng);
                self.cursor = 0;
                self.epoch += 1;
            }
            let next = self.order[self.cursor];
            self.cursor += 1;
            if !batch.contains(&next) {
                batch.push(next);
            }
        }
        batch
    }

    pub fn step(&mut self) -> Result<StepOutcome, TrainError> {
        let t = self.setup.train.clone();
        let hyper = self.setup.uarpo.clone();
        let old = self.policy.clone();
        let batch = self.next_batch();
        let step_seed = mix_keys(t.seed, &[0x57E9, self.global_step as u64]);

        let mut groups = Vec::with_capacity(batch.len());
        for &s in &batch {
            let sample = &self.dataset.samples[s];
            let target = sample.target();
            let rollouts = sample_group(
                &old,
                &sample.image,
                target,
                s as u64,
                hyper.group,
                t.temperature,
                t.max_len,
                step_seed,
            )?;
            let mut rewards = Vec::with_capacity(rollouts.len());
            let mut scores = Vec::with_capacity(rollouts.len());
            for r in &rollouts {
                let (_, b) = score_output(&r.tokens, sample.label(), &self.setup.reward);
                rewards.push(b.total);
                scores.push(b.score);
            }
            let adv = group_advantages(
                &rewards,
                &scores,
                self.stacks.get_mut(target),
                &hyper,
                t.mode,
            )?;
            let seqs: Vec<&[usize]> = rollouts.iter().map(|r| r.tokens.as_slice()).collect();
            let logp_ref = score_group(&self.reference, &sample.image, target, &seqs, false)?
                .logprobs()
                .iter()
                .map(|l| to_f64(l))
                .collect();
            groups.push((
                adv,
                GroupTrace {
                    sample: s,
                    target,
                    logp_old: rollouts.iter().map(|r| to_f64(&r.logprobs)).collect(),
                    rollouts,
                    rewards,
                    scores,
                    combined: Vec::new(),
                    logp_ref,
                    logp_new: Vec::new(),
                },
            ));
        }
        for (adv, g) in groups.iter_mut() {
            g.combined = adv.combined.clone();
        }

        let adam_cfg = AdamConfig {
            lr: t.learning_rate as f32,
            ..AdamConfig::default()
        };
        let b = groups.len() as f64;
        let mut epoch_losses = Vec::with_capacity(t.inner_epochs);
        for _ in 0..t.inner_epochs {
            let mut total: Option<Vec<Tensor>> = None;
            let mut j_sum = 0.0;
            for (_, g) in groups.iter_mut() {
                let sample = &self.dataset.samples[g.sample];
                let seqs: Vec<&[usize]> = g.rollouts.iter().map(|r| r.tokens.as_slice()).collect();
                let scored = score_group(&self.policy, &sample.image, g.target, &seqs, true)?;
                let logp_new: Vec<Vec<f64>> = scored.logprobs().iter().map(|l| to_f64(l)).collect();
                let views: Vec<RolloutLogprobs<'_>> = (0..seqs.len())
                    .map(|i| RolloutLogprobs {
                        new: &logp_new[i],
                        old: &g.logp_old[i],
                        reference: &g.logp_ref[i],
                    })
                    .collect();
                let (j, dj) = batch_objective_with_grad(&views, &g.combined, &hyper)?;
                j_sum += j;
                let weights: Vec<Vec<f32>> = dj
                    .iter()
                    .map(|row| row.iter().map(|&d| (-d / b) as f32).collect())
                    .collect();
                let grads = scored.backward(&weights)?;
                match total.as_mut() {
                    None => total = Some(grads),
                    Some(acc) => add_into(acc, &grads),
                }
                g.logp_new.push(logp_new);
            }
            let loss = -j_sum / b;
            let mut grads = total.expect("batch is non-empty");
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    step: self.global_step,
                });
            }
            if t.grad_clip > 0.0 {
                clip_global_norm(&mut grads, t.grad_clip);
            }
            adam_step(
                &mut self.policy.tensors_mut(),
                &grads,
                &mut self.adam,
                &adam_cfg,
            )
            .map_err(|_| TrainError::NonFiniteLoss {
                step: self.global_step,
            })?;
            epoch_losses.push(loss);
        }

        let row = self.metrics(&groups, &epoch_losses);
        self.global_step += 1;
        self.step_in_iteration += 1;
        Ok(StepOutcome {
            row,
            epoch_losses,
            groups: groups.into_iter().map(|(_, g)| g).collect(),
        })
    }

    fn metrics(
        &self,
        groups: &[(crate::uarpo::AdvantageSet, GroupTrace)],
        epoch_losses: &[f64],
    ) -> MetricsRow {
        let cfg = &self.setup.reward;
        let mut n = 0.0;
        let (mut acc, mut fmt, mut len, mut tot) = (0.0, 0.0, 0.0, 0.0);
        let (mut abs_i, mut unc, mut correct, mut valid, mut tokens) = (0.0, 0.0, 0.0, 0.0, 0.0);
        let mut cgra_sum = [0.0; 6];
        let mut cgra_n = [0usize; 6];
        for (adv, g) in groups {
            let label = self.dataset.samples[g.sample].label();
            for (i, r) in g.rollouts.iter().enumerate() {
                let (p, b) = score_output(&r.tokens, label, cfg);
                acc += b.accuracy;
                fmt += b.format;
                len += b.length;
                tot += b.total;
                abs_i += adv.igra[i].abs();
                unc += adv.uncertainty[i];
                correct += f64::from(u8::from(p.format_valid && p.direction == Some(label)));
                valid += f64::from(u8::from(p.format_valid));
                tokens += r.tokens.len() as f64;
                n += 1.0;
            }
            if self.setup.train.mode == crate::uarpo::Mode::Uarpo {
                cgra_sum[g.target.index()] += adv.cgra;
                cgra_n[g.target.index()] += 1;
            }
        }
        let mut cgra = [None; 6];
        for k in 0..6 {
            if cgra_n[k] > 0 {
                cgra[k] = Some(cgra_sum[k] / cgra_n[k] as f64);
            }
        }
        MetricsRow {
            iteration: self.iteration,
            step: self.step_in_iteration,
            global_step: self.global_step,
            reward_accuracy: acc / n,
            reward_format: fmt / n,
            reward_length: len / n,
            reward_total: tot / n,
            mean_abs_igra: abs_i / n,
            cgra,
            mean_uncertainty: unc / n,
            loss: epoch_losses.iter().sum::<f64>() / epoch_losses.len() as f64,
            train_accuracy: correct / n,
            format_valid: valid / n,
            mean_tokens: tokens / n,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub rows: Vec<MetricsRow>,
    pub final_checkpoint: PathBuf,
    pub metrics_path: PathBuf,
}

fn create(path: &Path) -> Result<fs::File, TrainError> {
    fs::File::create(path).map_err(|e| TrainError::io(path, e))
}

/// Full run: loads the dataset, trains for `iterations × steps`, writes
/// `metrics.csv`, `timing.csv`, `checkpoints/iter_NNN.ckpt` after every
/// iteration and `final.ckpt`. On a non-finite loss the pre-update policy is
/// saved as `last_good.ckpt` before the error is returned.
pub fn run_training(setup: &TrainSetup) -> Result<TrainSummary, TrainError> {
    setup.validate()?;
    let dataset = load_dataset(&setup.train.dataset)?;
    let out = setup.train.output.clone();
    let ckpt_dir = out.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).map_err(|e| TrainError::io(&ckpt_dir, e))?;
    let metrics_path = out.join("metrics.csv");
    let timing_path = out.join("timing.csv");
    let mut metrics = create(&metrics_path)?;
    let mut timing = create(&timing_path)?;
    writeln!(metrics, "{METRICS_HEADER}").map_err(|e| TrainError::io(&metrics_path, e))?;
    writeln!(timing, "{TIMING_HEADER}").map_err(|e| TrainError::io(&timing_path, e))?;

    let mut trainer = Trainer::new(setup.clone(), dataset)?;
    let steps = trainer.steps_per_iteration();
    let mut rows = Vec::new();
    let start = Instant::now();
    for it in 0..setup.train.iterations {
        trainer.begin_iteration(it);
        for _ in 0..steps {
            let outcome = match trainer.step() {
                Ok(o) => o,
                Err(e @ TrainError::NonFiniteLoss { .. }) => {
                    save_checkpoint(trainer.policy(), &out.join("last_good.ckpt"))?;
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            writeln!(metrics, "{}", outcome.row.to_csv())
                .map_err(|e| TrainError::io(&metrics_path, e))?;
            writeln!(
                timing,
                "{},{:.3}",
                outcome.row.global_step,
                start.elapsed().as_secs_f64()
            )
            .map_err(|e| TrainError::io(&timing_path, e))?;
            log::info!(
                "iter {it} step {} reward {:.3} valid {:.2} acc {:.2} loss {:.4}",
                outcome.row.step,
                outcome.row.reward_total,
                outcome.row.format_valid,
                outcome.row.train_accuracy,
                outcome.row.loss
            );
            rows.push(outcome.row);
        }
        save_checkpoint(
            trainer.policy(),
            &ckpt_dir.join(format!("iter_{it:03}.ckpt")),
        )?;
    }
    let final_checkpoint = out.join("final.ckpt");
    save_checkpoint(trainer.policy(), &final_checkpoint)?;
    metrics
        .flush()
        .map_err(|e| TrainError::io(&metrics_path, e))?;
    Ok(TrainSummary {
        rows,
        final_checkpoint,
        metrics_path,
    })
}
