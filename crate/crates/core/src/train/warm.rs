use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::autodiff::{adam_step, clip_global_norm, AdamConfig, AdamState};
use crate::chart::{Dataset, Direction};
use crate::policy::vocab::{FILLER_0, FILLER_COUNT, PAD, VOCAB_SIZE};
use crate::policy::{score_group, PolicyParams};
use crate::reward::{format_answer, MAX_CONFIDENCE};
use crate::seed::mix_keys;

/// Supervised format prior fitted before reinforcement learning. Targets
/// are well-formed answers with random content, each token independently
/// replaced by a uniformly random non-PAD token with probability
/// `corruption`, so the prior follows the grammar only loosely.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WarmStartConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub corruption: f64,
    pub learning_rate: f64,
    pub max_filler: usize,
}

impl Default for WarmStartConfig {
    fn default() -> Self {
        Self {
            steps: 150,
            batch_size: 8,
            corruption: 0.25,
            learning_rate: 1e-3,
            max_filler: 8,
        }
    }
}

impl WarmStartConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(0.0..=1.0).contains(&self.corruption) {
            return Err(TrainError::Config(format!(
                "warm_start.corruption {} must be in [0, 1]",
                self.corruption
            )));
        }
        if self.steps > 0 && (self.batch_size == 0 || !(self.learning_rate > 0.0)) {
            return Err(TrainError::Config(
                "warm_start.batch_size and learning_rate must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One noisy training sequence of the format prior.
pub fn warm_start_sequence(cfg: &WarmStartConfig, rng: &mut impl Rng) -> Vec<usize> {
    let think: Vec<usize> = (0..rng.random_range(0..=cfg.max_filler))
        .map(|_| FILLER_0 + rng.random_range(0..FILLER_COUNT))
        .collect();
    let dir = if rng.random_bool(0.5) {
        Direction::Up
    } else {
        Direction::Down
    };
    let mut seq = format_answer(&think, dir, rng.random_range(0..=MAX_CONFIDENCE));
    for t in seq.iter_mut() {
        if rng.random_bool(cfg.corruption) {
            *t = rng.random_range(PAD + 1..VOCAB_SIZE);
        }
    }
    seq
}

/// Fits the format prior by teacher-forced maximum likelihood on charts
/// drawn from `indices`. Returns the mean token NLL per step.
pub fn warm_start(
    params: &mut PolicyParams,
    dataset: &Dataset,
    indices: &[usize],
    cfg: &WarmStartConfig,
    seed: u64,
) -> Result<Vec<f64>, TrainError> {
    if cfg.steps == 0 {
        return Ok(Vec::new());
    }
    if indices.is_empty() {
        return Err(TrainError::Config(
            "warm start needs training samples".into(),
        ));
    }
    let max_len = params.config().max_len;
    let adam_cfg = AdamConfig {
        lr: cfg.learning_rate as f32,
        ..AdamConfig::default()
    };
    let mut adam = AdamState::new(params.tensors());
    let mut rng = ChaCha8Rng::seed_from_u64(mix_keys(seed, &[0x3A53]));
    let mut losses = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let batch: Vec<(usize, Vec<usize>)> = (0..cfg.batch_size)
            .map(|_| {
                let s = indices[rng.random_range(0..indices.len())];
                let mut seq = warm_start_sequence(cfg, &mut rng);
                seq.truncate(max_len);
                (s, seq)
            })
            .collect();
        let n_tokens: usize = batch.iter().map(|(_, s)| s.len()).sum();
        let w = -1.0 / n_tokens as f32;
        let mut total: Option<Vec<crate::autodiff::Tensor>> = None;
        let mut nll = 0.0;
        for (s, seq) in &batch {
            let sample = &dataset.samples[*s];
            let scored = score_group(params, &sample.image, sample.target(), &[seq], true)?;
            nll -= scored.logprobs()[0]
                .iter()
                .map(|&l| f64::from(l))
                .sum::<f64>();
            let grads = scored.backward(&[vec![w; seq.len()]])?;
            total = Some(match total {
                None => grads,
                Some(mut acc) => {
                    for (a, g) in acc.iter_mut().zip(&grads) {
                        for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                            *x += y;
                        }
                    }
                    acc
                }
            });
        }
        let mut grads = total.expect("batch is non-empty");
        clip_global_norm(&mut grads, 1.0);
        adam_step(&mut params.tensors_mut(), &grads, &mut adam, &adam_cfg)?;
        losses.push(nll / n_tokens as f64);
    }
    Ok(losses)
}
