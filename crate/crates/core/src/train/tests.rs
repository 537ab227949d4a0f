use std::fs;
use std::path::Path;

use super::*;
use crate::chart::{
    build_dataset, load_dataset, Difficulty, GenConfig, Quantity, StratumSpec, Style,
};
use crate::policy::{load_checkpoint, PolicyParams};
use crate::uarpo::{batch_objective, RolloutLogprobs};

fn tiny_data(dir: &Path, count: usize) {
    let cfg = GenConfig {
        seed: 5,
        strata: vec![
            StratumSpec {
                quantity: Quantity::Price,
                horizon: 5,
                length: [32, 64],
                style: Style::LineThin,
                difficulty: Difficulty::Learnable,
                count,
            },
            StratumSpec {
                quantity: Quantity::Volatility,
                horizon: 21,
                length: [48, 80],
                style: Style::FilledArea,
                difficulty: Difficulty::Noise,
                count,
            },
        ],
        image_height: 32,
        image_width: 48,
        ..GenConfig::default()
    };
    build_dataset(&cfg, dir).unwrap();
}

fn tiny_setup(data: &Path, out: &Path) -> TrainSetup {
    TrainSetup {
        train: TrainConfig {
            iterations: 1,
            steps_per_iteration: 2,
            inner_epochs: 2,
            batch_size: 2,
            max_len: 24,
            learning_rate: 1e-3,
            dataset: data.to_path_buf(),
            output: out.to_path_buf(),
            ..TrainConfig::default()
        },
        model: ModelConfig {
            image_height: 32,
            image_width: 48,
            d_model: 16,
            n_blocks: 1,
            ffn_hidden: 32,
            max_len: 24,
            ..ModelConfig::default()
        },
        uarpo: UarpoHyper {
            group: 2,
            window: 2,
            ..UarpoHyper::default()
        },
        warm_start: WarmStartConfig {
            steps: 3,
            batch_size: 2,
            ..WarmStartConfig::default()
        },
        ..TrainSetup::default()
    }
}

#[test]
fn smoke_run_writes_rows_and_checkpoints() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    let out = root.path().join("run");
    tiny_data(&data, 5);
    let summary = run_training(&tiny_setup(&data, &out)).unwrap();
    assert_eq!(summary.rows.len(), 2);
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert_eq!(csv.lines().next().unwrap(), METRICS_HEADER);
    assert!(out.join("checkpoints/iter_000.ckpt").exists());
    let p = load_checkpoint(&summary.final_checkpoint).unwrap();
    assert!(p.is_finite());
    for r in &summary.rows {
        assert!(r.loss.is_finite());
        assert!((0.0..=1.0).contains(&r.format_valid));
    }
}

#[test]
fn same_seed_same_bytes() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    tiny_data(&data, 5);
    let a = root.path().join("a");
    let b = root.path().join("b");
    run_training(&tiny_setup(&data, &a)).unwrap();
    run_training(&tiny_setup(&data, &b)).unwrap();
    for f in ["metrics.csv", "final.ckpt", "checkpoints/iter_000.ckpt"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

fn trainer_with(setup: TrainSetup, data: &Path) -> Trainer {
    let ds = load_dataset(data).unwrap();
    let p = PolicyParams::init(&setup.model, 3).unwrap();
    Trainer::with_policy(setup, ds, p).unwrap()
}

#[test]
fn first_epoch_ratio_is_exactly_one() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    tiny_data(&data, 5);
    let mut t = trainer_with(tiny_setup(&data, root.path()), &data);
    t.begin_iteration(0);
    let o = t.step().unwrap();
    for g in &o.groups {
        assert_eq!(g.logp_new.len(), 2);
        assert_eq!(g.logp_new[0], g.logp_old);
        // reference == old at the first step of an iteration
        assert_eq!(g.logp_ref, g.logp_old);
    }
}

#[test]
fn loss_matches_objective_recomputed_from_trace() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    tiny_data(&data, 5);
    let setup = tiny_setup(&data, root.path());
    let hyper = setup.uarpo.clone();
    let mut t = trainer_with(setup, &data);
    t.begin_iteration(0);
    t.step().unwrap();
    let o = t.step().unwrap();
    for epoch in 0..2 {
        let mut j = 0.0;
        for g in &o.groups {
            let views: Vec<RolloutLogprobs<'_>> = (0..g.rollouts.len())
                .map(|i| RolloutLogprobs {
                    new: &g.logp_new[epoch][i],
                    old: &g.logp_old[i],
                    reference: &g.logp_ref[i],
                })
                .collect();
            j += batch_objective(&views, &g.combined, &hyper).unwrap();
        }
        let expect = -j / o.groups.len() as f64;
        assert!((o.epoch_losses[epoch] - expect).abs() < 1e-12);
    }
}

#[test]
fn grpo_mode_leaves_stacks_untouched() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    tiny_data(&data, 5);
    let mut setup = tiny_setup(&data, root.path());
    setup.train.mode = Mode::Grpo;
    let mut t = trainer_with(setup.clone(), &data);
    t.begin_iteration(0);
    let o = t.step().unwrap();
    for g in &o.groups {
        assert!(t.stacks().get(g.target).is_empty());
    }
    assert!(o.row.cgra.iter().all(Option::is_none));

    setup.train.mode = Mode::Uarpo;
    let mut u = trainer_with(setup, &data);
    u.begin_iteration(0);
    let o = u.step().unwrap();
    for g in &o.groups {
        assert!(!u.stacks().get(g.target).is_empty());
    }
}

#[test]
fn uarpo_without_uncertainty_or_full_stack_reduces_to_grpo() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    tiny_data(&data, 5);
    let mut setup = tiny_setup(&data, root.path());
    setup.train.steps_per_iteration = 3;
    setup.uarpo.window = 1000;
    setup.uarpo.uncertainty = false;
    let mut a = trainer_with(setup.clone(), &data);
    setup.train.mode = Mode::Grpo;
    let mut b = trainer_with(setup, &data);
    a.begin_iteration(0);
    b.begin_iteration(0);
    for _ in 0..3 {
        let x = a.step().unwrap();
        let y = b.step().unwrap();
        assert_eq!(x.epoch_losses, y.epoch_losses);
    }
    assert_eq!(a.policy().checksum(), b.policy().checksum());
}

#[test]
fn batch_larger_than_train_split_is_rejected() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    tiny_data(&data, 2);
    let mut setup = tiny_setup(&data, root.path());
    setup.train.batch_size = 50;
    let ds = load_dataset(&data).unwrap();
    let p = PolicyParams::init(&setup.model, 3).unwrap();
    assert!(matches!(
        Trainer::with_policy(setup, ds, p),
        Err(TrainError::Config(_))
    ));
}

#[test]
fn mismatched_image_size_is_rejected() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    tiny_data(&data, 3);
    let mut setup = tiny_setup(&data, root.path());
    setup.model.image_width = 64;
    let ds = load_dataset(&data).unwrap();
    let p = PolicyParams::init(&setup.model, 3).unwrap();
    assert!(matches!(
        Trainer::with_policy(setup, ds, p),
        Err(TrainError::Config(_))
    ));
}

#[test]
fn unknown_config_key_is_rejected() {
    let err = serde_json::from_str::<TrainConfig>(r#"{"iterations": 1, "bogus": 2}"#);
    assert!(err.is_err());
}
