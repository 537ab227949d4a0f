use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::vocab::{self, PAD, VOCAB_SIZE};
use super::PolicyError;
use crate::autodiff::{Tape, Tensor, Var};
use crate::chart::{GrayImage, TargetSpec};

/// Large negative logit that removes PAD from every distribution.
pub const PAD_LOGIT: f32 = -1e9;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub image_height: usize,
    pub image_width: usize,
    pub patch: usize,
    pub d_model: usize,
    pub n_blocks: usize,
    pub ffn_hidden: usize,
    /// Longest rollout, EOS included.
    pub max_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_height: 64,
            image_width: 96,
            patch: 8,
            d_model: 64,
            n_blocks: 2,
            ffn_hidden: 128,
            max_len: 64,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let bad = |m: String| Err(PolicyError::Config(m));
        if self.patch == 0
            || self.image_height % self.patch != 0
            || self.image_width % self.patch != 0
        {
            return bad(format!(
                "image {}x{} is not divisible into {}x{} patches",
                self.image_height, self.image_width, self.patch, self.patch
            ));
        }
        if self.image_height == 0 || self.image_width == 0 {
            return bad("image dimensions must be positive".into());
        }
        if self.d_model == 0 || self.n_blocks == 0 || self.ffn_hidden == 0 {
            return bad("d_model, n_blocks and ffn_hidden must be positive".into());
        }
        if self.max_len < 2 {
            return bad(format!("max_len {} must be at least 2", self.max_len));
        }
        Ok(())
    }

    pub fn n_patches(&self) -> usize {
        (self.image_height / self.patch) * (self.image_width / self.patch)
    }

    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch
    }

    /// Decoder input rows: two conditioning tokens plus every fed output token.
    pub fn text_positions(&self) -> usize {
        self.max_len + 2
    }

    /// Parameter names and shapes in canonical order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.d_model;
        let mut out = vec![
            ("patch_w".to_string(), vec![self.patch_dim(), d]),
            ("patch_b".to_string(), vec![1, d]),
            ("pos_img".to_string(), vec![self.n_patches(), d]),
            ("tok_emb".to_string(), vec![VOCAB_SIZE, d]),
            ("pos_text".to_string(), vec![self.text_positions(), d]),
        ];
        for b in 0..self.n_blocks {
            for (name, shape) in [
                ("wq", vec![d, d]),
                ("wk", vec![d, d]),
                ("wv", vec![d, d]),
                ("wo", vec![d, d]),
                ("w1", vec![d, self.ffn_hidden]),
                ("b1", vec![1, self.ffn_hidden]),
                ("w2", vec![self.ffn_hidden, d]),
                ("b2", vec![1, d]),
            ] {
                out.push((format!("block{b}.{name}"), shape));
            }
        }
        out.push(("out_w".to_string(), vec![d, VOCAB_SIZE]));
        out.push(("out_b".to_string(), vec![1, VOCAB_SIZE]));
        out
    }
}

const BLOCK_TENSORS: usize = 8;
const HEAD_TENSORS: usize = 5;

/// All policy weights, stored flat in [`ModelConfig::layout`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    config: ModelConfig,
    tensors: Vec<Tensor>,
}

impl PolicyParams {
    /// Scaled-normal initialisation. Output and residual projections start
    /// small so the initial next-token distribution is close to uniform.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, PolicyError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let residual = 1.0 / (2.0 * config.n_blocks as f32).sqrt();
        let tensors = config
            .layout()
            .into_iter()
            .map(|(name, shape)| {
                let short = name.rsplit('.').next().unwrap_or(&name);
                let std = match short {
                    "patch_b" | "b1" | "b2" | "out_b" => 0.0,
                    "pos_img" | "pos_text" => 0.1,
                    "tok_emb" => 1.0,
                    "out_w" => 0.02,
                    "wo" | "w2" => residual / (shape[0] as f32).sqrt(),
                    _ => 1.0 / (shape[0] as f32).sqrt(),
                };
                let n: usize = shape.iter().product();
                let data = if std == 0.0 {
                    vec![0.0; n]
                } else {
                    let dist = Normal::new(0.0f32, std).expect("positive std");
                    (0..n).map(|_| dist.sample(&mut rng)).collect()
                };
                Tensor::new(shape, data)
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            tensors,
        })
    }

    /// Assembles parameters from named tensors, checking every shape.
    pub fn from_tensors(
        config: &ModelConfig,
        named: Vec<(String, Tensor)>,
    ) -> Result<Self, PolicyError> {
        config.validate()?;
        let layout = config.layout();
        let mut by_name: std::collections::BTreeMap<String, Tensor> = named.into_iter().collect();
        let mut tensors = Vec::with_capacity(layout.len());
        for (name, shape) in layout {
            let t = by_name
                .remove(&name)
                .ok_or_else(|| PolicyError::MissingTensor(name.clone()))?;
            if t.shape() != shape.as_slice() {
                return Err(PolicyError::ShapeMismatch {
                    tensor: name,
                    expected: shape,
                    found: t.shape().to_vec(),
                });
            }
            if !t.is_finite() {
                return Err(PolicyError::NonFinite(name));
            }
            tensors.push(t);
        }
        if let Some(extra) = by_name.into_keys().next() {
            return Err(PolicyError::UnexpectedTensor(extra));
        }
        Ok(Self {
            config: config.clone(),
            tensors,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.tensors.iter_mut().collect()
    }

    pub fn named(&self) -> impl Iterator<Item = (String, &Tensor)> {
        self.config
            .layout()
            .into_iter()
            .map(|(n, _)| n)
            .zip(&self.tensors)
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// FNV-1a over the raw bits of every tensor.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in &self.tensors {
            for v in t.data() {
                for b in v.to_bits().to_le_bytes() {
                    h ^= u64::from(b);
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }

    pub(crate) fn head(&self) -> Head<'_, Tensor> {
        Head::new(&self.tensors, self.config.n_blocks)
    }

    /// Copies every tensor onto `tape`, as trainable leaves or constants.
    pub fn to_vars(&self, tape: &mut Tape, trainable: bool) -> ParamVars {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        ParamVars {
            vars,
            n_blocks: self.config.n_blocks,
        }
    }
}

/// Named views into a flat parameter list.
pub(crate) struct Head<'a, T> {
    pub patch_w: &'a T,
    pub patch_b: &'a T,
    pub pos_img: &'a T,
    pub tok_emb: &'a T,
    pub pos_text: &'a T,
    pub blocks: Vec<Block<'a, T>>,
    pub out_w: &'a T,
    pub out_b: &'a T,
}

pub(crate) struct Block<'a, T> {
    pub wq: &'a T,
    pub wk: &'a T,
    pub wv: &'a T,
    pub wo: &'a T,
    pub w1: &'a T,
    pub b1: &'a T,
    pub w2: &'a T,
    pub b2: &'a T,
}

impl<'a, T> Head<'a, T> {
    fn new(flat: &'a [T], n_blocks: usize) -> Self {
        let blocks = (0..n_blocks)
            .map(|b| {
                let s = &flat[HEAD_TENSORS + b * BLOCK_TENSORS..];
                Block {
                    wq: &s[0],
                    wk: &s[1],
                    wv: &s[2],
                    wo: &s[3],
                    w1: &s[4],
                    b1: &s[5],
                    w2: &s[6],
                    b2: &s[7],
                }
            })
            .collect();
        let tail = HEAD_TENSORS + n_blocks * BLOCK_TENSORS;
        Self {
            patch_w: &flat[0],
            patch_b: &flat[1],
            pos_img: &flat[2],
            tok_emb: &flat[3],
            pos_text: &flat[4],
            blocks,
            out_w: &flat[tail],
            out_b: &flat[tail + 1],
        }
    }
}

/// Parameters placed on a tape, in canonical order.
pub struct ParamVars {
    vars: Vec<Var>,
    n_blocks: usize,
}

impl ParamVars {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub(crate) fn head(&self) -> Head<'_, Var> {
        Head::new(&self.vars, self.n_blocks)
    }
}

/// Row-major 8-bit pixels of each patch scaled to [0, 1], one row per patch,
/// patches in row-major grid order.
pub fn patch_matrix(config: &ModelConfig, image: &GrayImage) -> Result<Tensor, PolicyError> {
    if image.height() != config.image_height || image.width() != config.image_width {
        return Err(PolicyError::ImageSize {
            expected: (config.image_height, config.image_width),
            found: (image.height(), image.width()),
        });
    }
    let p = config.patch;
    let cols = config.image_width / p;
    let mut data = Vec::with_capacity(config.n_patches() * p * p);
    for idx in 0..config.n_patches() {
        let (pr, pc) = (idx / cols, idx % cols);
        for r in 0..p {
            for c in 0..p {
                data.push(f32::from(image.get(pr * p + r, pc * p + c)) / 255.0);
            }
        }
    }
    Ok(Tensor::matrix(config.n_patches(), p * p, data))
}

pub(crate) fn pad_mask() -> Tensor {
    let mut m = vec![0.0; VOCAB_SIZE];
    m[PAD] = PAD_LOGIT;
    Tensor::matrix(1, VOCAB_SIZE, m)
}

pub(crate) fn check_tokens(tokens: &[usize]) -> Result<(), PolicyError> {
    match tokens.iter().find(|&&t| t >= VOCAB_SIZE) {
        Some(&id) => Err(PolicyError::UnknownToken(id)),
        None => Ok(()),
    }
}

/// Per-block image keys and values, computed once per chart.
pub struct ImageMemory {
    pub(crate) kv: Vec<(Var, Var)>,
    pub(crate) n_patches: usize,
}

pub(crate) fn patch_embeddings(
    tape: &mut Tape,
    pv: &ParamVars,
    patches: Tensor,
    with_position: bool,
) -> Result<Var, PolicyError> {
    let h = pv.head();
    let x = tape.constant(patches);
    let e = tape.matmul(x, *h.patch_w)?;
    let e = tape.add_row_bias(e, *h.patch_b)?;
    Ok(if with_position {
        tape.add(e, *h.pos_img)?
    } else {
        e
    })
}

pub fn image_memory(
    tape: &mut Tape,
    pv: &ParamVars,
    config: &ModelConfig,
    image: &GrayImage,
) -> Result<ImageMemory, PolicyError> {
    let e = patch_embeddings(tape, pv, patch_matrix(config, image)?, true)?;
    let m = tape.rms_norm(e)?;
    let h = pv.head();
    let mut kv = Vec::with_capacity(h.blocks.len());
    for b in &h.blocks {
        let k = tape.matmul(m, *b.wk)?;
        let v = tape.matmul(m, *b.wv)?;
        kv.push((k, v));
    }
    Ok(ImageMemory {
        kv,
        n_patches: config.n_patches(),
    })
}

/// Next-token logits for every decoder input row. Row 0 holds the quantity
/// token; row `j + 1` scores the output token that follows `outputs[..j]`.
pub fn decoder_logits(
    tape: &mut Tape,
    pv: &ParamVars,
    config: &ModelConfig,
    memory: &ImageMemory,
    target: TargetSpec,
    outputs: &[usize],
) -> Result<Var, PolicyError> {
    check_tokens(outputs)?;
    let n = outputs.len() + 2;
    if n > config.text_positions() {
        return Err(PolicyError::PrefixTooLong {
            len: outputs.len(),
            max: config.max_len,
        });
    }
    let mut ids = target_tokens_vec(target);
    ids.extend_from_slice(outputs);
    let h = pv.head();
    let tok = tape.gather_rows(*h.tok_emb, ids)?;
    let pos = tape.gather_rows(*h.pos_text, (0..n).collect())?;
    let mut x = tape.add(tok, pos)?;
    let scale = 1.0 / (config.d_model as f32).sqrt();
    for (b, &(k_img, v_img)) in h.blocks.iter().zip(&memory.kv) {
        let xn = tape.rms_norm(x)?;
        let q = tape.matmul(xn, *b.wq)?;
        let k = tape.matmul(xn, *b.wk)?;
        let v = tape.matmul(xn, *b.wv)?;
        let keys = tape.concat_rows(k_img, k)?;
        let values = tape.concat_rows(v_img, v)?;
        let s = tape.matmul_t(q, keys)?;
        let s = tape.scale(s, scale)?;
        let p = tape.causal_softmax(s, memory.n_patches)?;
        let a = tape.matmul(p, values)?;
        let o = tape.matmul(a, *b.wo)?;
        x = tape.add(x, o)?;
        let xn = tape.rms_norm(x)?;
        let f = tape.matmul(xn, *b.w1)?;
        let f = tape.add_row_bias(f, *b.b1)?;
        let f = tape.relu(f)?;
        let f = tape.matmul(f, *b.w2)?;
        let f = tape.add_row_bias(f, *b.b2)?;
        x = tape.add(x, f)?;
    }
    let xf = tape.rms_norm(x)?;
    let logits = tape.matmul(xf, *h.out_w)?;
    let logits = tape.add_row_bias(logits, *h.out_b)?;
    let mask = tape.constant(pad_mask());
    Ok(tape.add_row_bias(logits, mask)?)
}

fn target_tokens_vec(target: TargetSpec) -> Vec<usize> {
    vocab::target_tokens(target).to_vec()
}

/// Image patch embeddings (optionally with positions), one row per patch.
pub fn encode_image(
    params: &PolicyParams,
    image: &GrayImage,
    with_position: bool,
) -> Result<Tensor, PolicyError> {
    let mut tape = Tape::new();
    let pv = params.to_vars(&mut tape, false);
    let patches = patch_matrix(params.config(), image)?;
    let e = patch_embeddings(&mut tape, &pv, patches, with_position)?;
    Ok(tape.value(e).clone())
}

/// Logit rows for `prefix.len() + 1` positions: row `j` is the distribution
/// over the output token following `prefix[..j]`.
pub fn forward_logits(
    params: &PolicyParams,
    image: &GrayImage,
    target: TargetSpec,
    prefix: &[usize],
) -> Result<Tensor, PolicyError> {
    let mut tape = Tape::new();
    let pv = params.to_vars(&mut tape, false);
    let mem = image_memory(&mut tape, &pv, params.config(), image)?;
    let logits = decoder_logits(&mut tape, &pv, params.config(), &mem, target, prefix)?;
    let rows = tape.slice_rows(logits, 1, prefix.len() + 2)?;
    Ok(tape.value(rows).clone())
}
