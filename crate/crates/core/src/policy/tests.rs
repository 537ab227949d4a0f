use std::path::Path;

use super::vocab::*;
use super::*;
use crate::chart::{render_chart, GrayImage, Quantity, Style, TargetSpec};

fn tiny() -> ModelConfig {
    ModelConfig {
        image_height: 16,
        image_width: 24,
        patch: 8,
        d_model: 8,
        n_blocks: 2,
        ffn_hidden: 16,
        max_len: 12,
    }
}

fn chart(seed: u64, cfg: &ModelConfig) -> GrayImage {
    let w: Vec<f64> = (0..40)
        .map(|i| 100.0 + ((i as f64) * 0.3 + seed as f64).sin() * (1.0 + seed as f64))
        .collect();
    render_chart(&w, Style::LineThin, cfg.image_height, cfg.image_width).unwrap()
}

fn price5() -> TargetSpec {
    TargetSpec::new(Quantity::Price, 5).unwrap()
}

#[test]
fn default_model_has_about_a_hundred_thousand_parameters() {
    let p = PolicyParams::init(&ModelConfig::default(), 0).unwrap();
    let n = p.num_parameters();
    assert!((60_000..140_000).contains(&n), "{n}");
    let img = GrayImage::new(64, 96, 255);
    assert_eq!(encode_image(&p, &img, true).unwrap().shape(), &[96, 64]);
}

#[test]
fn indivisible_image_is_rejected_at_construction() {
    let cfg = ModelConfig {
        image_width: 20,
        ..tiny()
    };
    assert!(matches!(
        PolicyParams::init(&cfg, 0),
        Err(PolicyError::Config(_))
    ));
}

#[test]
fn zero_image_embeds_to_bias_plus_position() {
    let cfg = tiny();
    let p = PolicyParams::init(&cfg, 1).unwrap();
    let e = encode_image(&p, &GrayImage::new(16, 24, 0), true).unwrap();
    let named: Vec<_> = p.named().collect();
    let bias = named.iter().find(|(n, _)| n == "patch_b").unwrap().1;
    let pos = named.iter().find(|(n, _)| n == "pos_img").unwrap().1;
    for r in 0..cfg.n_patches() {
        for c in 0..cfg.d_model {
            assert_eq!(e.row(r)[c], bias.data()[c] + pos.row(r)[c]);
        }
    }
}

#[test]
fn swapping_patches_swaps_pre_position_embeddings() {
    let cfg = tiny();
    let p = PolicyParams::init(&cfg, 2).unwrap();
    let img = chart(3, &cfg);
    let mut swapped = img.clone();
    // patches 0 (rows 0..8, cols 0..8) and 2 (rows 0..8, cols 16..24)
    for r in 0..8 {
        for c in 0..8 {
            swapped.set(r, c, img.get(r, c + 16));
            swapped.set(r, c + 16, img.get(r, c));
        }
    }
    let a = encode_image(&p, &img, false).unwrap();
    let b = encode_image(&p, &swapped, false).unwrap();
    assert_eq!(a.row(0), b.row(2));
    assert_eq!(a.row(2), b.row(0));
    assert_eq!(a.row(1), b.row(1));
    assert_eq!(a.row(3), b.row(3));
}

#[test]
fn rows_are_causal_and_normalised() {
    let cfg = tiny();
    let p = PolicyParams::init(&cfg, 4).unwrap();
    let img = chart(1, &cfg);
    let prefix = [THINK_OPEN, FILLER_0, FILLER_0 + 3, THINK_CLOSE];
    let short = forward_logits(&p, &img, price5(), &prefix[..2]).unwrap();
    let long = forward_logits(&p, &img, price5(), &prefix).unwrap();
    assert_eq!(short.shape(), &[3, VOCAB_SIZE]);
    for r in 0..3 {
        for (x, y) in short.row(r).iter().zip(long.row(r)) {
            assert!((x - y).abs() <= 1e-6);
        }
    }
    let mut perturbed = prefix;
    perturbed[3] = DOWN;
    let other = forward_logits(&p, &img, price5(), &perturbed).unwrap();
    for r in 0..4 {
        assert_eq!(other.row(r), long.row(r));
    }
    for r in 0..5 {
        let m = long.row(r).iter().copied().fold(f32::MIN, f32::max) as f64;
        let z: f64 = long.row(r).iter().map(|&l| (l as f64 - m).exp()).sum();
        let probs: f64 = long.row(r).iter().map(|&l| (l as f64 - m).exp() / z).sum();
        assert!((probs - 1.0).abs() <= 1e-5);
        assert!(long.row(r)[PAD] < -1e8);
    }
}

#[test]
fn images_change_the_first_row() {
    let cfg = tiny();
    let p = PolicyParams::init(&cfg, 5).unwrap();
    let a = forward_logits(&p, &chart(1, &cfg), price5(), &[]).unwrap();
    let b = forward_logits(&p, &chart(2, &cfg), price5(), &[]).unwrap();
    assert_ne!(a.row(0), b.row(0));
}

#[test]
fn unknown_tokens_and_long_prefixes_are_rejected() {
    let cfg = tiny();
    let p = PolicyParams::init(&cfg, 5).unwrap();
    let img = chart(1, &cfg);
    assert!(matches!(
        forward_logits(&p, &img, price5(), &[VOCAB_SIZE]),
        Err(PolicyError::UnknownToken(_))
    ));
    let long = vec![FILLER_0; cfg.max_len + 1];
    assert!(matches!(
        forward_logits(&p, &img, price5(), &long),
        Err(PolicyError::PrefixTooLong { .. })
    ));
}

#[test]
fn incremental_session_is_bit_identical_to_the_tape() {
    let cfg = tiny();
    let p = PolicyParams::init(&cfg, 6).unwrap();
    let img = chart(2, &cfg);
    let prefix = [THINK_OPEN, FILLER_0 + 5, THINK_CLOSE, ANSWER_OPEN, UP];
    let full = forward_logits(&p, &img, price5(), &prefix).unwrap();
    let mut s = Session::new(&p, &img, price5()).unwrap();
    assert_eq!(s.logits(), full.row(0));
    for (j, &t) in prefix.iter().enumerate() {
        s.feed(t).unwrap();
        assert_eq!(s.logits(), full.row(j + 1));
    }
}

#[test]
fn sampling_contract() {
    let cfg = tiny();
    let p = PolicyParams::init(&cfg, 7).unwrap();
    let img = chart(4, &cfg);
    let target = TargetSpec::new(Quantity::Volatility, 21).unwrap();
    let greedy_group = sample_group(&p, &img, target, 3, 4, 0.0, cfg.max_len, 9).unwrap();
    assert!(greedy_group.windows(2).all(|w| w[0] == w[1]));
    assert_eq!(
        greedy_group[0],
        greedy(&p, &img, target, cfg.max_len).unwrap()
    );

    let group = sample_group(&p, &img, target, 3, 8, 1.0, cfg.max_len, 9).unwrap();
    assert_eq!(
        group,
        sample_group(&p, &img, target, 3, 8, 1.0, cfg.max_len, 9).unwrap()
    );
    assert_ne!(
        group,
        sample_group(&p, &img, target, 4, 8, 1.0, cfg.max_len, 9).unwrap()
    );
    for r in &group {
        assert!((1..=cfg.max_len).contains(&r.tokens.len()));
        assert_eq!(r.terminated, r.tokens.last() == Some(&EOS));
        assert!(!r.tokens.contains(&PAD));
        assert!(r.logprobs.iter().all(|&l| l <= 0.0));
        let again = score_tokens(&p, &img, target, &r.tokens).unwrap();
        for (a, b) in r.logprobs.iter().zip(&again) {
            assert!((a - b).abs() <= 1e-5);
        }
    }
    assert!(sample_group(&p, &img, target, 0, 1, 1.0, 4, 0).is_err());
    assert!(sample_group(&p, &img, target, 0, 2, -1.0, 4, 0).is_err());
}

#[test]
fn weighted_logprob_gradient_matches_finite_differences() {
    let cfg = tiny();
    let p = PolicyParams::init(&cfg, 8).unwrap();
    let img = chart(5, &cfg);
    let seqs: Vec<Vec<usize>> = vec![
        vec![THINK_OPEN, FILLER_0, THINK_CLOSE],
        vec![ANSWER_OPEN, DOWN, ANSWER_CLOSE, EOS],
    ];
    let refs: Vec<&[usize]> = seqs.iter().map(Vec::as_slice).collect();
    let weights = vec![vec![0.3, -0.7, 1.1], vec![-0.2, 0.5, 0.9, -1.3]];
    let loss = |q: &PolicyParams| -> f64 {
        let lps = score_group(q, &img, price5(), &refs, false)
            .unwrap()
            .logprobs();
        lps.iter()
            .zip(&weights)
            .flat_map(|(l, w)| l.iter().zip(w).map(|(&a, &b)| a as f64 * b as f64))
            .sum()
    };
    let grads = score_group(&p, &img, price5(), &refs, true)
        .unwrap()
        .backward(&weights)
        .unwrap();
    let h = 1e-2f32;
    for (ti, name) in [(3usize, "tok_emb"), (5, "block0.wq"), (12, "block0.b2")] {
        let g = &grads[ti];
        let mut worst = 0.0f64;
        let mut scale = 0.0f64;
        for k in (0..g.len()).step_by(7) {
            let mut plus = p.clone();
            plus.tensors_mut()[ti].data_mut()[k] += h;
            let mut minus = p.clone();
            minus.tensors_mut()[ti].data_mut()[k] -= h;
            let num = (loss(&plus) - loss(&minus)) / (2.0 * h as f64);
            worst = worst.max((num - g.data()[k] as f64).abs());
            scale = scale.max((g.data()[k] as f64).abs());
        }
        assert!(
            worst <= 2e-2 * scale.max(1e-3),
            "{name}: {worst} vs {scale}"
        );
    }
}

fn write_raw(path: &Path, version: u32, tensors: &[(&str, Vec<usize>)]) {
    let mut out = Vec::new();
    out.extend_from_slice(b"UARP");
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&42u32.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, shape) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for _ in 0..shape.iter().product::<usize>() {
            out.extend_from_slice(&0.5f32.to_le_bytes());
        }
    }
    std::fs::write(path, out).unwrap();
}

#[test]
fn checkpoint_round_trip_and_diagnostics() {
    let cfg = tiny();
    let p = PolicyParams::init(&cfg, 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.ckpt");
    save_checkpoint(&p, &path).unwrap();
    let q = load_checkpoint(&path).unwrap();
    assert_eq!(p, q);
    assert_eq!(p.checksum(), q.checksum());

    let bytes = std::fs::read(&path).unwrap();
    let cut = dir.path().join("cut.ckpt");
    std::fs::write(&cut, &bytes[..bytes.len() - 3]).unwrap();
    let err = load_checkpoint(&cut).unwrap_err();
    assert!(err.to_string().contains("truncated checkpoint"), "{err}");

    let magic = dir.path().join("magic.ckpt");
    let mut bad = bytes.clone();
    bad[0] = b'X';
    std::fs::write(&magic, &bad).unwrap();
    assert!(matches!(
        load_checkpoint(&magic),
        Err(PolicyError::BadMagic { .. })
    ));

    let version = dir.path().join("version.ckpt");
    write_raw(&version, 7, &[]);
    assert!(matches!(
        load_checkpoint(&version),
        Err(PolicyError::Version { found: 7, .. })
    ));

    // a checkpoint from a build with one extra token
    let foreign = dir.path().join("foreign.ckpt");
    let mut tensors: Vec<(String, Vec<usize>)> = vec![("config".into(), vec![7])];
    for (name, mut shape) in cfg.layout() {
        if name == "tok_emb" {
            shape[0] += 1;
        }
        tensors.push((name, shape));
    }
    let borrowed: Vec<(&str, Vec<usize>)> = tensors
        .iter()
        .map(|(n, s)| (n.as_str(), s.clone()))
        .collect();
    write_raw(&foreign, 1, &borrowed);
    // patch the config payload to describe the tiny model
    let mut raw = std::fs::read(&foreign).unwrap();
    let cfg_floats = [16.0f32, 24.0, 8.0, 8.0, 2.0, 16.0, 12.0];
    let start = 16 + 4 + "config".len() + 4 + 4;
    for (i, v) in cfg_floats.iter().enumerate() {
        raw[start + 4 * i..start + 4 * i + 4].copy_from_slice(&v.to_le_bytes());
    }
    std::fs::write(&foreign, raw).unwrap();
    match load_checkpoint(&foreign) {
        Err(PolicyError::ShapeMismatch { tensor, .. }) => assert_eq!(tensor, "tok_emb"),
        other => panic!("expected shape mismatch, got {other:?}"),
    }
}

#[test]
fn snapshot_copies_are_independent() {
    let p = PolicyParams::init(&tiny(), 10).unwrap();
    let snap = p.clone();
    let mut live = p.clone();
    live.tensors_mut()[0].data_mut()[0] += 1.0;
    assert_eq!(snap, p);
    assert_ne!(live.checksum(), snap.checksum());
}
