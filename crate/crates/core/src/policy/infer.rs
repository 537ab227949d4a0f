use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::{
    check_tokens, decoder_logits, image_memory, pad_mask, patch_matrix, Head, ParamVars,
};
use super::vocab::{target_tokens, EOS, VOCAB_SIZE};
use super::{PolicyError, PolicyParams};
use crate::autodiff::kernels::{dot, log_softmax_row, rms_norm_row, softmax_row, vec_mat};
use crate::autodiff::{Tape, Tensor, Var};
use crate::chart::{GrayImage, TargetSpec};
use crate::seed::mix_keys;

/// One sampled output sequence with the sampling policy's per-token
/// log-probabilities (at temperature 1).
#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub tokens: Vec<usize>,
    pub logprobs: Vec<f32>,
    pub terminated: bool,
}

/// Incremental decoder over one chart. Each fed token reuses the cached keys
/// and values and runs the same row kernels as the tape, so its logits are
/// bit-identical to the matching row of [`super::forward_logits`].
#[derive(Clone)]
pub struct Session<'a> {
    head: std::rc::Rc<Head<'a, Tensor>>,
    d: usize,
    scale: f32,
    keys: Vec<Vec<f32>>,
    values: Vec<Vec<f32>>,
    fed: usize,
    positions: usize,
    logits: Vec<f32>,
}

fn add_into(x: &mut [f32], y: &[f32]) {
    for (a, &b) in x.iter_mut().zip(y) {
        *a += b;
    }
}

impl<'a> Session<'a> {
    /// Encodes the chart and feeds the two target tokens.
    pub fn new(
        params: &'a PolicyParams,
        image: &GrayImage,
        target: TargetSpec,
    ) -> Result<Self, PolicyError> {
        let config = params.config();
        let head = params.head();
        let d = config.d_model;
        let patches = patch_matrix(config, image)?;
        let n = config.n_patches();
        let mut memory = vec![0.0f32; n * d];
        let mut row = vec![0.0f32; d];
        for (i, m) in memory.chunks_exact_mut(d).enumerate() {
            vec_mat(patches.row(i), head.patch_w.data(), d, &mut row);
            add_into(&mut row, head.patch_b.data());
            add_into(&mut row, head.pos_img.row(i));
            rms_norm_row(&row, m);
        }
        let mut keys = Vec::with_capacity(head.blocks.len());
        let mut values = Vec::with_capacity(head.blocks.len());
        for b in &head.blocks {
            let mut k = vec![0.0f32; n * d];
            let mut v = vec![0.0f32; n * d];
            for (i, m) in memory.chunks_exact(d).enumerate() {
                vec_mat(m, b.wk.data(), d, &mut k[i * d..(i + 1) * d]);
                vec_mat(m, b.wv.data(), d, &mut v[i * d..(i + 1) * d]);
            }
            keys.push(k);
            values.push(v);
        }
        let mut session = Self {
            head: std::rc::Rc::new(head),
            d,
            scale: 1.0 / (d as f32).sqrt(),
            keys,
            values,
            fed: 0,
            positions: config.text_positions(),
            logits: Vec::new(),
        };
        for t in target_tokens(target) {
            session.feed(t)?;
        }
        Ok(session)
    }

    /// Logits for the next output token.
    pub fn logits(&self) -> &[f32] {
        &self.logits
    }

    pub fn outputs_fed(&self) -> usize {
        self.fed.saturating_sub(2)
    }

    pub fn feed(&mut self, token: usize) -> Result<(), PolicyError> {
        check_tokens(&[token])?;
        if self.fed >= self.positions {
            return Err(PolicyError::PrefixTooLong {
                len: self.fed - 1,
                max: self.positions - 2,
            });
        }
        let d = self.d;
        let head = self.head.clone();
        let mut x = head.tok_emb.row(token).to_vec();
        add_into(&mut x, head.pos_text.row(self.fed));
        let mut xn = vec![0.0f32; d];
        let mut q = vec![0.0f32; d];
        let mut kv = vec![0.0f32; d];
        let mut attn = vec![0.0f32; d];
        let mut proj = vec![0.0f32; d];
        for (bi, b) in head.blocks.iter().enumerate() {
            rms_norm_row(&x, &mut xn);
            vec_mat(&xn, b.wq.data(), d, &mut q);
            vec_mat(&xn, b.wk.data(), d, &mut kv);
            self.keys[bi].extend_from_slice(&kv);
            vec_mat(&xn, b.wv.data(), d, &mut kv);
            self.values[bi].extend_from_slice(&kv);
            let scores: Vec<f32> = self.keys[bi]
                .chunks_exact(d)
                .map(|k| dot(&q, k) * self.scale)
                .collect();
            let mut p = vec![0.0f32; scores.len()];
            softmax_row(&scores, &mut p);
            vec_mat(&p, &self.values[bi], d, &mut attn);
            vec_mat(&attn, b.wo.data(), d, &mut proj);
            add_into(&mut x, &proj);
            rms_norm_row(&x, &mut xn);
            let hidden = b.b1.len();
            let mut f = vec![0.0f32; hidden];
            vec_mat(&xn, b.w1.data(), hidden, &mut f);
            add_into(&mut f, b.b1.data());
            for v in f.iter_mut() {
                *v = v.max(0.0);
            }
            vec_mat(&f, b.w2.data(), d, &mut proj);
            add_into(&mut proj, b.b2.data());
            add_into(&mut x, &proj);
        }
        rms_norm_row(&x, &mut xn);
        let mut logits = vec![0.0f32; VOCAB_SIZE];
        vec_mat(&xn, head.out_w.data(), VOCAB_SIZE, &mut logits);
        add_into(&mut logits, head.out_b.data());
        add_into(&mut logits, pad_mask().data());
        self.logits = logits;
        self.fed += 1;
        Ok(())
    }
}

fn argmax(xs: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// Draws from softmax(logits / temperature) by inverse CDF in f64.
fn draw(logits: &[f32], temperature: f64, rng: &mut impl Rng) -> usize {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let weights: Vec<f64> = logits
        .iter()
        .map(|&l| ((l as f64 - max) / temperature).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    argmax(logits)
}

fn decode(
    mut session: Session<'_>,
    max_len: usize,
    mut pick: impl FnMut(&[f32]) -> usize,
) -> Result<Rollout, PolicyError> {
    let mut tokens = Vec::new();
    let mut logprobs = Vec::new();
    let mut lp = vec![0.0f32; VOCAB_SIZE];
    loop {
        let logits = session.logits();
        let tok = pick(logits);
        log_softmax_row(logits, &mut lp);
        tokens.push(tok);
        logprobs.push(lp[tok]);
        if tok == EOS {
            return Ok(Rollout {
                tokens,
                logprobs,
                terminated: true,
            });
        }
        if tokens.len() == max_len {
            return Ok(Rollout {
                tokens,
                logprobs,
                terminated: false,
            });
        }
        session.feed(tok)?;
    }
}

fn check_max_len(params: &PolicyParams, max_len: usize) -> Result<(), PolicyError> {
    if max_len == 0 || max_len > params.config().max_len {
        return Err(PolicyError::Config(format!(
            "max_len {max_len} must be in 1..={}",
            params.config().max_len
        )));
    }
    Ok(())
}

/// Greedy decoding; ties go to the lowest token id.
pub fn greedy(
    params: &PolicyParams,
    image: &GrayImage,
    target: TargetSpec,
    max_len: usize,
) -> Result<Rollout, PolicyError> {
    check_max_len(params, max_len)?;
    decode(Session::new(params, image, target)?, max_len, argmax)
}

/// Samples `group` rollouts. Rollout `i` draws from its own ChaCha8 stream
/// keyed by `(seed, sample_id, i)`; temperature 0 is greedy.
#[allow(clippy::too_many_arguments)]
pub fn sample_group(
    params: &PolicyParams,
    image: &GrayImage,
    target: TargetSpec,
    sample_id: u64,
    group: usize,
    temperature: f64,
    max_len: usize,
    seed: u64,
) -> Result<Vec<Rollout>, PolicyError> {
    if group < 2 {
        return Err(PolicyError::Config(format!(
            "group size {group} must be at least 2"
        )));
    }
    if !(temperature >= 0.0) || !temperature.is_finite() {
        return Err(PolicyError::Config(format!(
            "temperature {temperature} must be finite and >= 0"
        )));
    }
    check_max_len(params, max_len)?;
    let base = Session::new(params, image, target)?;
    (0..group)
        .map(|i| {
            let session = base.clone();
            if temperature == 0.0 {
                decode(session, max_len, argmax)
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_keys(seed, &[sample_id, i as u64]));
                decode(session, max_len, |l| draw(l, temperature, &mut rng))
            }
        })
        .collect()
}

/// Rollouts of one chart scored on a tape. Keeps the graph so that a
/// weighted sum of the token log-probabilities can be differentiated.
pub struct ScoredGroup {
    tape: Tape,
    params: ParamVars,
    logps: Vec<Var>,
}

/// Token log-probabilities of each rollout under `params`, recorded on a
/// fresh tape (with trainable leaves when `trainable`).
pub fn score_group(
    params: &PolicyParams,
    image: &GrayImage,
    target: TargetSpec,
    rollouts: &[&[usize]],
    trainable: bool,
) -> Result<ScoredGroup, PolicyError> {
    let mut tape = Tape::new();
    let pv = params.to_vars(&mut tape, trainable);
    let mem = image_memory(&mut tape, &pv, params.config(), image)?;
    let mut logps = Vec::with_capacity(rollouts.len());
    for tokens in rollouts {
        if tokens.is_empty() {
            return Err(PolicyError::EmptyRollout);
        }
        check_tokens(tokens)?;
        let n = tokens.len();
        let logits = decoder_logits(
            &mut tape,
            &pv,
            params.config(),
            &mem,
            target,
            &tokens[..n - 1],
        )?;
        let rows = tape.slice_rows(logits, 1, n + 1)?;
        let lp = tape.log_softmax(rows)?;
        logps.push(tape.pick(lp, tokens.to_vec())?);
    }
    Ok(ScoredGroup {
        tape,
        params: pv,
        logps,
    })
}

/// Token log-probabilities of one sequence.
pub fn score_tokens(
    params: &PolicyParams,
    image: &GrayImage,
    target: TargetSpec,
    tokens: &[usize],
) -> Result<Vec<f32>, PolicyError> {
    Ok(score_group(params, image, target, &[tokens], false)?
        .logprobs()
        .remove(0))
}

impl ScoredGroup {
    pub fn logprobs(&self) -> Vec<Vec<f32>> {
        self.logps
            .iter()
            .map(|&v| self.tape.value(v).data().to_vec())
            .collect()
    }

    /// Gradient of `Σ_i Σ_t weights[i][t] · logp[i][t]` for every parameter
    /// tensor, in canonical order.
    pub fn backward(mut self, weights: &[Vec<f32>]) -> Result<Vec<Tensor>, PolicyError> {
        if weights.len() != self.logps.len() {
            return Err(PolicyError::Config(format!(
                "{} weight rows for {} rollouts",
                weights.len(),
                self.logps.len()
            )));
        }
        let mut total: Option<Var> = None;
        for (&lp, w) in self.logps.iter().zip(weights) {
            let wv = self.tape.constant(Tensor::matrix(w.len(), 1, w.clone()));
            let prod = self.tape.mul(lp, wv)?;
            let s = self.tape.sum(prod)?;
            total = Some(match total {
                Some(t) => self.tape.add(t, s)?,
                None => s,
            });
        }
        let root = total.ok_or(PolicyError::EmptyRollout)?;
        let mut grads = self.tape.backward(root)?;
        self.params
            .vars()
            .iter()
            .map(|&v| {
                grads
                    .take(v)
                    .ok_or_else(|| PolicyError::Config("parameters were not trainable".into()))
            })
            .collect()
    }
}
