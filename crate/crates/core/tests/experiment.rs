use std::fs;
use std::path::Path;

use mman_core::checkpoint;
use mman_core::data::{save_dataset, Complementarity};
use mman_core::experiment::{load_experiment_config, run_experiment, DataConfig, ExperimentConfig, GridConfig};
use mman_core::{Architecture, EvalReport, ModelConfig, SyntheticSpec, TrainConfig};

fn small_spec(cfg: &ModelConfig) -> SyntheticSpec {
    SyntheticSpec {
        num_classes: cfg.num_classes,
        d_s: cfg.d_s,
        d_v_feat: cfg.d_v_feat,
        d_t: cfg.d_t,
        n_conversations: 20,
        n_speakers: 10,
        min_len: 3,
        max_len: 4,
        snr: [2.0; 3],
        ..Default::default()
    }
}

fn small_config(variants: Vec<Architecture>, seeds: Vec<u64>) -> ExperimentConfig {
    let model = ModelConfig::tiny();
    ExperimentConfig {
        data: DataConfig {
            synthetic: Some(small_spec(&model)),
            ..Default::default()
        },
        training: TrainConfig {
            epochs: 3,
            ..Default::default()
        },
        fusion_training: Some(TrainConfig {
            epochs: 4,
            learning_rate: 1e-2,
            ..Default::default()
        }),
        experiment: GridConfig { variants, seeds },
        model,
    }
}

const CELL_FILES: [&str; 5] = ["train_log.jsonl", "eval_report.json", "confusion.txt", "confusion.csv", "checkpoint.bin"];

fn assert_cell(dir: &Path) {
    for f in CELL_FILES {
        assert!(dir.join(f).is_file(), "{}/{f}", dir.display());
    }
    assert!(!dir.join("FAILED").exists());
}

#[test]
fn two_variants_five_seeds() {
    let cfg = small_config(vec![Architecture::Speech, Architecture::Mma], vec![0, 1, 2, 3, 4]);
    let out = tempfile::tempdir().unwrap();
    let summary = run_experiment(&cfg, out.path()).unwrap();
    assert_eq!(summary.rows.len(), 2);
    for row in &summary.rows {
        assert_eq!(row.runs, 5);
        assert_eq!(row.failures, 0);
        assert_eq!(row.accuracies.len(), 5);
        let accs: Vec<f64> = row.accuracies.iter().map(|a| a.unwrap()).collect();
        let mean = accs.iter().sum::<f64>() / 5.0;
        assert!((row.mean_accuracy.unwrap() - mean).abs() < 1e-15);
        let var = accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 4.0;
        assert!((row.sd_accuracy.unwrap() - var.sqrt()).abs() < 1e-15);
    }
    assert_eq!(summary.row(Architecture::Mma).unwrap().model, "cLSTM-MMA");
    for v in ["speech", "mma"] {
        for s in 0..5 {
            assert_cell(&out.path().join(v).join(format!("seed-{s}")));
        }
    }
    let tsv = fs::read_to_string(out.path().join("summary.tsv")).unwrap();
    assert_eq!(tsv.lines().count(), 3);
    assert!(tsv.lines().nth(1).unwrap().starts_with("speech\t"));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(json["rows"].as_array().unwrap().len(), 2);
}

#[test]
fn rerun_gives_identical_bundle() {
    let cfg = small_config(vec![Architecture::Text, Architecture::Lf, Architecture::Mman], vec![3, 8]);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let sa = run_experiment(&cfg, a.path()).unwrap();
    let sb = run_experiment(&cfg, b.path()).unwrap();
    assert_eq!(sa, sb);
    for f in ["summary.tsv", "summary.json", "mman/seed-8/train_log.jsonl", "mman/seed-8/checkpoint.bin", "lf/seed-3/stage1_speech.jsonl"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    // Different seeds really are different runs.
    let cells = &sa.row(Architecture::Mman).unwrap().accuracies;
    let logs: Vec<Vec<u8>> = ["seed-3", "seed-8"]
        .iter()
        .map(|s| fs::read(a.path().join("mman").join(s).join("train_log.jsonl")).unwrap())
        .collect();
    assert_ne!(logs[0], logs[1], "{cells:?}");
}

#[test]
fn single_class_data_reports_absent_recall() {
    let mut cfg = small_config(vec![Architecture::Ef], vec![0]);
    let spec = cfg.data.synthetic.as_mut().unwrap();
    spec.class_weights = Some(vec![0.0, 1.0, 0.0]);
    let out = tempfile::tempdir().unwrap();
    run_experiment(&cfg, out.path()).unwrap();
    let text = fs::read_to_string(out.path().join("ef/seed-0/eval_report.json")).unwrap();
    let report: EvalReport = serde_json::from_str(&text).unwrap();
    assert_eq!(report.per_class_recall[0], None);
    assert_eq!(report.per_class_recall[2], None);
    assert!(report.per_class_recall[1].is_some());
    let csv = fs::read_to_string(out.path().join("ef/seed-0/confusion.csv")).unwrap();
    assert_eq!(csv.matches("NA").count(), 6, "{csv}");
}

#[test]
fn failed_cells_are_marked_and_the_bundle_still_emitted() {
    let model = ModelConfig::tiny();
    let dir = tempfile::tempdir().unwrap();
    let train = mman_core::data::generate_synthetic(&small_spec(&model)).unwrap();
    // Held-out speech features of the wrong width: training works, and only
    // models that read speech fail at evaluation.
    let test = mman_core::data::generate_synthetic(&SyntheticSpec {
        d_s: model.d_s + 1,
        ..small_spec(&model)
    })
    .unwrap();
    save_dataset(dir.path().join("train.jsonl"), &train).unwrap();
    save_dataset(dir.path().join("test.jsonl"), &test).unwrap();
    let toml = r#"
        [data]
        path = "train.jsonl"
        test_path = "test.jsonl"

        [model]
        d_s = 5
        d_v_feat = 4
        d_t = 3
        d_model = 4
        d_q = 3
        d_k = 3
        d_val = 3
        hidden_mma = 4
        hidden_speech = [4, 4]
        hidden_visual = [4, 4]
        hidden_text = [4, 4]
        hidden_ef = [4, 4]
        hidden_lf = [4]
        num_classes = 3

        [training]
        epochs = 1

        [experiment]
        variants = ["visual", "mman"]
        seeds = [0, 1]
    "#;
    fs::write(dir.path().join("exp.toml"), toml).unwrap();
    let cfg = load_experiment_config(dir.path().join("exp.toml")).unwrap();
    assert_eq!(cfg.model, model);
    let out = dir.path().join("out");
    let summary = run_experiment(&cfg, &out).unwrap();
    let visual = summary.row(Architecture::Visual).unwrap();
    assert_eq!((visual.runs, visual.failures), (2, 0));
    let mman = summary.row(Architecture::Mman).unwrap();
    assert_eq!((mman.runs, mman.failures), (2, 2));
    assert_eq!(mman.mean_accuracy, None);
    assert_cell(&out.join("visual/seed-1"));
    let marker = fs::read_to_string(out.join("mman/seed-1/FAILED")).unwrap();
    assert!(marker.contains("speech"), "{marker}");
    assert!(!out.join("mman/seed-1/eval_report.json").exists());
    let tsv = fs::read_to_string(out.join("summary.tsv")).unwrap();
    assert!(tsv.lines().nth(2).unwrap().contains("\tNA\tNA\tNA,NA"), "{tsv}");
}

#[test]
fn checkpoint_from_a_run_predicts_identically() {
    let cfg = small_config(vec![Architecture::Mman], vec![2]);
    let out = tempfile::tempdir().unwrap();
    run_experiment(&cfg, out.path()).unwrap();
    let cell = out.path().join("mman/seed-2");
    let model = checkpoint::load(cell.join("checkpoint.bin")).unwrap();
    assert_eq!(model.arch, Architecture::Mman);
    let (_, test) = cfg.load_data().unwrap();
    let report = mman_core::metrics::evaluate(&model, &test, "test").unwrap();
    let saved: EvalReport = serde_json::from_str(&fs::read_to_string(cell.join("eval_report.json")).unwrap()).unwrap();
    assert_eq!(report.confusion, saved.confusion);
    assert_eq!(report.accuracy.to_bits(), saved.accuracy.to_bits());
    // Sub-network tensors come back frozen, fusion tensors trainable.
    for (name, p) in model.store.iter() {
        assert_eq!(p.frozen, !mman_core::models::is_fusion_param(name), "{name}");
    }
}

#[test]
fn config_errors_surface_before_training() {
    let out = tempfile::tempdir().unwrap();
    let mut cfg = small_config(vec![Architecture::Mma], vec![0]);
    cfg.data.synthetic.as_mut().unwrap().mode = Complementarity::Xor;
    cfg.data.synthetic.as_mut().unwrap().d_t = 9;
    assert!(run_experiment(&cfg, out.path()).is_err());
    let cfg = small_config(vec![], vec![0]);
    assert!(run_experiment(&cfg, out.path()).is_err());
    let mut cfg = small_config(vec![Architecture::Mma], vec![0]);
    cfg.data.path = Some("x.jsonl".into());
    assert!(run_experiment(&cfg, out.path()).is_err());
    assert!(!out.path().join("summary.tsv").exists());
}
