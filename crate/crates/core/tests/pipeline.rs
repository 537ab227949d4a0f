use uarpo_lab::chart::{build_dataset, load_dataset, GenConfig, Quantity, Split, Style};
use uarpo_lab::eval::{confidence_grouping, evaluate, evaluate_naive, table1_markdown};
use uarpo_lab::policy::{load_checkpoint, ModelConfig};
use uarpo_lab::train::{run_training, TrainSetup};

#[test]
fn generate_train_and_evaluate() {
    let root = tempfile::tempdir().unwrap();
    let data_dir = root.path().join("data");
    let run_dir = root.path().join("run");
    let gen = GenConfig {
        seed: 2,
        quantities: vec![Quantity::Price, Quantity::Volatility],
        horizons: vec![5],
        styles: vec![Style::LineThin],
        length_buckets: vec![[32, 64]],
        per_stratum: 8,
        image_height: 16,
        image_width: 24,
        ..GenConfig::default()
    };
    build_dataset(&gen, &data_dir).unwrap();
    let data = load_dataset(&data_dir).unwrap();

    let mut setup = TrainSetup::default();
    setup.model = ModelConfig {
        image_height: 16,
        image_width: 24,
        d_model: 16,
        ffn_hidden: 16,
        max_len: 24,
        ..ModelConfig::default()
    };
    setup.train.iterations = 2;
    setup.train.steps_per_iteration = 2;
    setup.train.batch_size = 2;
    setup.train.max_len = 24;
    setup.train.dataset = data_dir.clone();
    setup.train.output = run_dir.clone();
    setup.uarpo.group = 4;
    setup.warm_start.steps = 5;
    let summary = run_training(&setup).unwrap();

    let metrics = std::fs::read_to_string(run_dir.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 4, "header plus one row per step");
    assert_eq!(summary.rows.len(), 4);

    let policy = load_checkpoint(&summary.final_checkpoint).unwrap();
    let (report, records) = evaluate(&policy, &data, Split::Test, 24).unwrap();
    assert_eq!(records.len(), data.split(Split::Test).len());
    let groups = confidence_grouping(&records).unwrap();
    let sizes = [groups.high.count, groups.middle.count, groups.low.count];
    assert_eq!(sizes.iter().sum::<usize>(), records.len());
    assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);

    let (naive, _) = evaluate_naive(&data, Split::Test).unwrap();
    let table = table1_markdown(&[("Naive", &naive), ("Policy", &report)]);
    assert!(table.contains("| Naive |") && table.contains("| Policy |"));
}
