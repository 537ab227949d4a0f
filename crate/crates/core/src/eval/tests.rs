use std::fs;

use proptest::prelude::*;

use super::*;
use crate::chart::{build_dataset, load_dataset, GenConfig, StratumSpec, Style};
use crate::policy::{save_checkpoint, ModelConfig};
use crate::reward::format_answer;

fn record(sample: usize, confidence: u32, correct: bool) -> EvalRecord {
    EvalRecord {
        sample,
        target: TargetSpec::ALL[sample % 6],
        difficulty: None,
        label: Direction::Up,
        prediction: Some(if correct {
            Direction::Up
        } else {
            Direction::Down
        }),
        confidence,
        correct,
    }
}

fn small_dataset(dir: &Path, per_stratum: usize) -> Dataset {
    let cfg = GenConfig {
        seed: 3,
        styles: vec![Style::LineThin],
        length_buckets: vec![[140, 200]],
        per_stratum,
        image_height: 32,
        image_width: 48,
        ..GenConfig::default()
    };
    build_dataset(&cfg, dir).unwrap();
    load_dataset(dir).unwrap()
}

#[test]
fn naive_follows_the_last_k_periods() {
    let rising: Vec<f64> = (0..10).map(f64::from).collect();
    for k in 1..10 {
        assert_eq!(naive_predict(&rising, k).unwrap(), Direction::Up);
    }
    assert_eq!(naive_predict(&[5.0; 8], 3).unwrap(), Direction::Down);
    assert_eq!(naive_predict(&[1.0, 3.0, 2.0], 1).unwrap(), Direction::Down);
    assert!(matches!(
        naive_predict(&[1.0, 2.0], 2),
        Err(EvalError::SeriesTooShort { len: 2, k: 2 })
    ));
    assert!(matches!(
        naive_predict(&rising, 0),
        Err(EvalError::ZeroWindow)
    ));
}

#[test]
fn naive_is_a_coin_on_pure_noise() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = GenConfig {
        seed: 17,
        strata: vec![StratumSpec {
            quantity: Quantity::Price,
            horizon: 5,
            length: [32, 127],
            style: Style::LineThin,
            difficulty: Difficulty::Noise,
            count: 1250,
        }],
        image_height: 16,
        image_width: 16,
        ..GenConfig::default()
    };
    build_dataset(&cfg, dir.path()).unwrap();
    let ds = load_dataset(dir.path()).unwrap();
    let (report, records) = evaluate_naive(&ds, Split::Test).unwrap();
    assert_eq!(records.len(), 250);
    // 1000 test samples are needed for the published band; widen the
    // 3σ interval to this split size: 50 ± 3·sqrt(0.25/250)·100
    let band = 300.0 * (0.25f64 / 250.0).sqrt();
    let acc = report.total().accuracy().unwrap();
    assert!((acc - 50.0).abs() <= band, "{acc}");
}

#[test]
fn oracle_policy_scores_every_cell_full() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small_dataset(dir.path(), 5);
    let records =
        evaluate_with(&ds, Split::Test, |s| Ok(format_answer(&[], s.label(), 90))).unwrap();
    let report = EvalReport::from_records(&records, "oracle");
    for t in TargetSpec::ALL {
        assert_eq!(report.accuracy(t), Some(100.0), "{t}");
    }
    assert_eq!(report.total().total, ds.split(Split::Test).len());
}

#[test]
fn invalid_outputs_are_wrong_with_zero_confidence() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small_dataset(dir.path(), 2);
    let s = &ds.samples[0];
    let r = EvalRecord::from_output(s, &[1]);
    assert_eq!(r.prediction, None);
    assert_eq!(r.confidence, 0);
    assert!(!r.correct);
    assert!(r.to_csv().contains(",invalid,0,0"));
}

#[test]
fn greedy_evaluation_is_deterministic_and_counts_match() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small_dataset(dir.path(), 3);
    let cfg = ModelConfig {
        image_height: 32,
        image_width: 48,
        d_model: 16,
        n_blocks: 1,
        ffn_hidden: 16,
        max_len: 20,
        ..ModelConfig::default()
    };
    let p = PolicyParams::init(&cfg, 9).unwrap();
    let (a, ra) = evaluate(&p, &ds, Split::Test, 20).unwrap();
    let (b, rb) = evaluate(&p, &ds, Split::Test, 20).unwrap();
    assert_eq!(a, b);
    assert_eq!(ra, rb);
    assert_eq!(a.total().total, ds.split(Split::Test).len());
    assert_eq!(records_csv(&ra), records_csv(&rb));
}

#[test]
fn corrupted_checkpoint_fails_before_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small_dataset(&dir.path().join("data"), 2);
    let cfg = ModelConfig {
        image_height: 32,
        image_width: 48,
        d_model: 8,
        n_blocks: 1,
        ffn_hidden: 8,
        max_len: 12,
        ..ModelConfig::default()
    };
    let path = dir.path().join("p.ckpt");
    save_checkpoint(&PolicyParams::init(&cfg, 1).unwrap(), &path).unwrap();
    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    let mut decoded = 0;
    let err = load_checkpoint(&path)
        .map_err(EvalError::from)
        .and_then(|p| {
            evaluate_with(&ds, Split::Test, |s| {
                decoded += 1;
                Ok(greedy(&p, &s.image, s.target(), 12)?.tokens)
            })
        })
        .unwrap_err();
    assert_eq!(decoded, 0);
    assert!(matches!(err, EvalError::Policy(_)), "{err}");
    assert!(evaluate_checkpoint(&path, &ds, Split::Test, 12).is_err());
}

#[test]
fn mismatched_image_size_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small_dataset(dir.path(), 2);
    let p = PolicyParams::init(&ModelConfig::default(), 1).unwrap();
    assert!(matches!(
        evaluate(&p, &ds, Split::Test, 8),
        Err(EvalError::ImageSize { .. })
    ));
}

#[test]
fn averages_recompute_from_cells() {
    let mut records = Vec::new();
    for i in 0..60 {
        records.push(record(i, 50, i % 4 != 0 || i % 6 == 1));
    }
    let report = EvalReport::from_records(&records, "greedy");
    let row = report.row();
    for q in 0..2 {
        let mean = (row[q * 4].unwrap() + row[q * 4 + 1].unwrap() + row[q * 4 + 2].unwrap()) / 3.0;
        assert_eq!(row[q * 4 + 3].unwrap(), mean);
    }
}

#[test]
fn empty_cells_are_excluded_from_averages() {
    let records = vec![record(5, 10, true), record(11, 10, false)];
    let report = EvalReport::from_records(&records, "greedy");
    // sample 5 and 11 are both price_63
    assert_eq!(report.average(Quantity::Price), Some(50.0));
    assert_eq!(report.average(Quantity::Volatility), None);
    assert!(table1_markdown(&[("M", &report)]).contains("n/a"));
}

#[test]
fn hand_enumerated_terciles() {
    let conf = [90, 80, 70, 30, 20, 10];
    let correct = [true, true, true, false, false, true];
    let records: Vec<EvalRecord> = (0..6).map(|i| record(i, conf[i], correct[i])).collect();
    let g = confidence_grouping(&records).unwrap();
    assert_eq!(g.high.accuracy(), Some(100.0));
    assert_eq!(g.middle.accuracy(), Some(50.0));
    assert_eq!(g.low.accuracy(), Some(50.0));
    assert_eq!(g.high.mean_confidence, 85.0);
}

#[test]
fn equal_confidence_gives_index_contiguous_thirds() {
    let records: Vec<EvalRecord> = (0..7).rev().map(|i| record(i, 40, true)).collect();
    let g = confidence_grouping(&records).unwrap();
    assert_eq!(g.members, [vec![0, 1, 2], vec![3, 4], vec![5, 6]]);
}

#[test]
fn grouping_needs_three_records() {
    let records = vec![record(0, 1, true), record(1, 2, true)];
    assert!(matches!(
        confidence_grouping(&records),
        Err(EvalError::TooFewRecords(2))
    ));
}

#[test]
fn relative_improvement_of_published_terciles() {
    assert!((relative_improvement(62.13, 54.75) - 13.48).abs() < 0.005);
    assert_eq!(relative_improvement(50.0, 50.0), 0.0);
}

proptest! {
    #[test]
    fn terciles_partition_the_records(
        confs in proptest::collection::vec(0u32..=100, 3..60),
        flags in proptest::collection::vec(any::<bool>(), 60),
    ) {
        let records: Vec<EvalRecord> = confs
            .iter()
            .enumerate()
            .map(|(i, &c)| record(i, c, flags[i]))
            .collect();
        let g = confidence_grouping(&records).unwrap();
        let sizes: Vec<usize> = g.members.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        prop_assert!(sizes[0] >= sizes[1] && sizes[1] >= sizes[2]);
        let mut all: Vec<usize> = g.members.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..records.len()).collect::<Vec<_>>());
        // every high member is at least as confident as every low member
        let min_high = g.members[0].iter().map(|&i| confs[i]).min().unwrap();
        let max_low = g.members[2].iter().map(|&i| confs[i]).max().unwrap();
        prop_assert!(min_high >= max_low);
        let correct: usize = g.stats().iter().map(|s| s.correct).sum();
        prop_assert_eq!(correct, records.iter().filter(|r| r.correct).count());
    }
}

fn write_metrics(path: &Path, steps: &[u64]) {
    let mut s = String::from("iteration,global_step,train_accuracy\n");
    for &st in steps {
        s.push_str(&format!("0,{st},{}\n", st as f64 / 10.0));
    }
    fs::write(path, s).unwrap();
}

#[test]
fn identical_runs_give_identical_columns() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    write_metrics(&a, &[0, 1, 2]);
    let out = compare_runs(
        &[("x".into(), a.clone()), ("y".into(), a)],
        "train_accuracy",
    )
    .unwrap();
    assert_eq!(out, "global_step,x,y\n0,0,0\n1,0.1,0.1\n2,0.2,0.2\n");
}

#[test]
fn shorter_run_is_padded_with_blanks() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    write_metrics(&a, &[0, 1, 2, 3]);
    write_metrics(&b, &[0, 1]);
    let out = compare_runs(&[("a".into(), a), ("b".into(), b)], "train_accuracy").unwrap();
    assert_eq!(out, "global_step,a,b\n0,0,0\n1,0.1,0.1\n2,0.2,\n3,0.3,\n");
}

#[test]
fn duplicated_step_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    write_metrics(&a, &[0, 1, 1]);
    let err = compare_runs(&[("a".into(), a)], "train_accuracy").unwrap_err();
    assert!(
        matches!(
            err,
            EvalError::DuplicateStep {
                step: 1,
                row: 4,
                ..
            }
        ),
        "{err}"
    );
}

#[test]
fn missing_column_names_the_column() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    write_metrics(&a, &[0]);
    let err = compare_runs(&[("a".into(), a)], "loss").unwrap_err();
    assert!(err.to_string().contains("\"loss\""), "{err}");
}

#[test]
fn table_layouts() {
    let records: Vec<EvalRecord> = (0..12)
        .map(|i| record(i, (i * 7 % 100) as u32, i % 3 != 0))
        .collect();
    let report = EvalReport::from_records(&records, "greedy");
    let t1 = table1_markdown(&[("Policy", &report)]);
    let header = t1.lines().next().unwrap();
    assert_eq!(header.matches('|').count(), 10);
    let naive = EvalReport::from_records(&records, "naive");
    let both = table1_markdown(&[("Naive", &naive), ("Policy", &report)]);
    assert!(
        both.contains("Decoding: Naive naive, Policy greedy. Test samples: 12."),
        "{both}"
    );
    let groups = confidence_grouping(&records).unwrap();
    let t2 = table2_markdown(&[("Policy", &groups)]);
    assert!(t2.starts_with("| Model | Low (%) | Middle (%) | High (%) |"));
    let csv = groups_csv(&groups);
    let names: Vec<&str> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(names, GROUP_NAMES);
    let rep = report_csv(&[("Policy", &report)]);
    assert_eq!(rep.lines().count(), 3);
    assert!(rep.lines().last().unwrap().starts_with("n,2,2,2,6,2,2,2,6"));
}
