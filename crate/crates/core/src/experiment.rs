//! Seed sweeps over model variants.
//!
//! An experiment config is TOML with five sections:
//!
//! ```toml
//! [data]
//! synthetic = { mode = "complementary" }   # or: path = "train.jsonl"
//! split_fraction = 0.8
//! split_seed = 0
//!
//! [model]            # ModelConfig fields
//! [training]         # TrainConfig for single-stage models
//! [fusion_training]  # TrainConfig for the LF / MMAN fusion stage
//!
//! [experiment]
//! variants = ["speech", "mma", "mman"]
//! seeds = [0, 1, 2, 3, 4]
//! ```
//!
//! Each (variant, seed) cell gets a directory `<variant>/seed-<seed>/` with
//! `train_log.jsonl`, `eval_report.json`, `confusion.txt`, `confusion.csv`
//! and `checkpoint.bin`. A failed cell gets `FAILED` holding the error
//! instead. `summary.tsv` and `summary.json` aggregate test accuracy per
//! variant and contain no timing, so identical inputs give identical bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::data::{generate_synthetic, load_dataset, speaker_split, Conversation, SyntheticSpec};
use crate::error::{Error, Result};
use crate::metrics::{emit_confusion_plot, evaluate, EvalReport};
use crate::models::{Architecture, Model, ModelConfig};
use crate::training::{train_fusion_head, train_subnetwork, TrainConfig, TrainReport};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Generate the dataset from this spec.
    pub synthetic: Option<SyntheticSpec>,
    /// Load the dataset (or, with `test_path`, the training side) from disk.
    pub path: Option<PathBuf>,
    /// Held-out file; when set no split is made.
    pub test_path: Option<PathBuf>,
    pub split_fraction: f64,
    pub split_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            synthetic: None,
            path: None,
            test_path: None,
            split_fraction: 0.8,
            split_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub variants: Vec<Architecture>,
    pub seeds: Vec<u64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            variants: Architecture::ALL.to_vec(),
            seeds: vec![0],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub training: TrainConfig,
    /// Defaults to `training` when absent.
    pub fusion_training: Option<TrainConfig>,
    pub experiment: GridConfig,
}

impl ExperimentConfig {
    pub fn fusion_config(&self) -> &TrainConfig {
        self.fusion_training.as_ref().unwrap_or(&self.training)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.training.validate()?;
        self.fusion_config().validate()?;
        match (&self.data.synthetic, &self.data.path) {
            (Some(_), Some(_)) => return Err(Error::config("data: give either `synthetic` or `path`, not both")),
            (None, None) => return Err(Error::config("data: one of `synthetic` or `path` is required")),
            (Some(_), None) if self.data.test_path.is_some() => {
                return Err(Error::config("data: `test_path` needs `path`"));
            }
            _ => {}
        }
        if let Some(spec) = &self.data.synthetic {
            spec.validate()?;
            if spec.dims() != self.model.input_dims() || spec.num_classes != self.model.num_classes {
                return Err(Error::config(format!(
                    "synthetic data has dims {:?} and {} classes but the model expects {:?} and {}",
                    spec.dims(),
                    spec.num_classes,
                    self.model.input_dims(),
                    self.model.num_classes
                )));
            }
        }
        if self.experiment.variants.is_empty() || self.experiment.seeds.is_empty() {
            return Err(Error::config("experiment: need at least one variant and one seed"));
        }
        let mut seen = Vec::new();
        for v in &self.experiment.variants {
            if seen.contains(v) {
                return Err(Error::config(format!("experiment: variant `{v}` listed twice")));
            }
            seen.push(*v);
        }
        Ok(())
    }

    /// Train and test sides, in file order.
    pub fn load_data(&self) -> Result<(Vec<Conversation>, Vec<Conversation>)> {
        let c = self.model.num_classes;
        if let Some(test_path) = &self.data.test_path {
            let train = load_dataset(self.data.path.as_ref().unwrap(), c)?;
            let test = load_dataset(test_path, c)?;
            return Ok((train, test));
        }
        let all = match (&self.data.synthetic, &self.data.path) {
            (Some(spec), _) => generate_synthetic(spec)?,
            (None, Some(path)) => load_dataset(path, c)?,
            (None, None) => return Err(Error::config("data: one of `synthetic` or `path` is required")),
        };
        speaker_split(&all, self.data.split_fraction, self.data.split_seed)
    }
}

/// Reads a TOML config. Relative data paths resolve against the file's
/// directory.
pub fn load_experiment_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg: ExperimentConfig = toml::from_str(&text)?;
    cfg.resolve_paths(path.parent().unwrap_or(Path::new("")));
    Ok(cfg)
}

impl ExperimentConfig {
    /// Joins relative data paths onto `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.data.path, &mut self.data.test_path].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellOutcome {
    pub variant: Architecture,
    pub seed: u64,
    pub accuracy: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub variant: Architecture,
    pub model: String,
    pub parameters: usize,
    pub runs: usize,
    pub failures: usize,
    /// Mean and sample standard deviation over successful runs.
    pub mean_accuracy: Option<f64>,
    pub sd_accuracy: Option<f64>,
    pub accuracies: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub seeds: Vec<u64>,
    pub train_utterances: usize,
    pub test_utterances: usize,
    pub rows: Vec<SummaryRow>,
    pub cells: Vec<CellOutcome>,
}

impl ExperimentSummary {
    pub fn row(&self, variant: Architecture) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("variant\tmodel\tparameters\truns\tfailures\tmean_accuracy\tsd_accuracy\taccuracies\n");
        let fmt = |x: Option<f64>| x.map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"));
        for r in &self.rows {
            let accs: Vec<String> = r.accuracies.iter().map(|&a| fmt(a)).collect();
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.variant,
                r.model,
                r.parameters,
                r.runs,
                r.failures,
                fmt(r.mean_accuracy),
                fmt(r.sd_accuracy),
                accs.join(",")
            );
        }
        out
    }
}

fn mean_sd(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (Some(mean), Some(sd))
}

struct Trained {
    model: Model,
    report: TrainReport,
}

fn train_single(arch: Architecture, cfg: &ExperimentConfig, seed: u64, train: &[Conversation]) -> Result<Trained> {
    let mut model = Model::new(arch, &cfg.model, seed)?;
    let tcfg = TrainConfig {
        seed,
        ..cfg.training.clone()
    };
    let report = train_subnetwork(&mut model, train, &tcfg)?;
    Ok(Trained { model, report })
}

fn train_two_stage(
    arch: Architecture,
    cfg: &ExperimentConfig,
    seed: u64,
    train: &[Conversation],
    parts: &BTreeMap<(Architecture, u64), Result<Trained, String>>,
) -> Result<Trained> {
    let mut subs = Vec::new();
    for sub in arch.subnetworks() {
        match &parts[&(*sub, seed)] {
            Ok(t) => subs.push(&t.model),
            Err(e) => return Err(Error::Data(format!("sub-network {sub} failed: {e}"))),
        }
    }
    let mut model = Model::assemble(arch, &cfg.model, seed, &subs)?;
    let tcfg = TrainConfig {
        seed,
        ..cfg.fusion_config().clone()
    };
    let report = train_fusion_head(&mut model, train, &tcfg)?;
    Ok(Trained { model, report })
}

fn write_cell(dir: &Path, trained: &Trained, eval: &EvalReport, stage_one: &[(Architecture, &TrainReport)]) -> Result<()> {
    let mut log = Vec::new();
    trained.report.write_jsonl(&mut log)?;
    let p = dir.join("train_log.jsonl");
    fs::write(&p, log).map_err(|e| Error::io(&p, e))?;
    for (arch, report) in stage_one {
        let mut log = Vec::new();
        report.write_jsonl(&mut log)?;
        let p = dir.join(format!("stage1_{arch}.jsonl"));
        fs::write(&p, log).map_err(|e| Error::io(&p, e))?;
    }
    let p = dir.join("eval_report.json");
    fs::write(&p, serde_json::to_string_pretty(eval)?).map_err(|e| Error::io(&p, e))?;
    emit_confusion_plot(eval, dir.join("confusion.txt"))?;
    checkpoint::save(&trained.model, dir.join("checkpoint.bin"))
}

/// Trains and evaluates every (variant, seed) cell and writes the bundle to
/// `out_dir`. Cell failures are recorded in the summary rather than
/// returned; only config, data and I/O problems at the top level are errors.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: impl AsRef<Path>) -> Result<ExperimentSummary> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    let (train, test) = cfg.load_data()?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let seeds = &cfg.experiment.seeds;
    let variants = &cfg.experiment.variants;

    // Stage one: every single-stage model any variant needs, once per seed.
    let mut singles: Vec<Architecture> = Vec::new();
    for v in variants {
        let needed: &[Architecture] = if v.is_two_stage() { v.subnetworks() } else { std::slice::from_ref(v) };
        for a in needed {
            if !singles.contains(a) {
                singles.push(*a);
            }
        }
    }
    let jobs: Vec<(Architecture, u64)> = singles.iter().flat_map(|&a| seeds.iter().map(move |&s| (a, s))).collect();
    let stage_one: BTreeMap<(Architecture, u64), Result<Trained, String>> = jobs
        .par_iter()
        .map(|&(a, s)| ((a, s), train_single(a, cfg, s, &train).map_err(|e| e.to_string())))
        .collect();

    let jobs: Vec<(Architecture, u64)> = variants
        .iter()
        .filter(|v| v.is_two_stage())
        .flat_map(|&a| seeds.iter().map(move |&s| (a, s)))
        .collect();
    let stage_two: BTreeMap<(Architecture, u64), Result<Trained, String>> = jobs
        .par_iter()
        .map(|&(a, s)| ((a, s), train_two_stage(a, cfg, s, &train, &stage_one).map_err(|e| e.to_string())))
        .collect();

    let cells: Vec<(Architecture, u64)> = variants.iter().flat_map(|&a| seeds.iter().map(move |&s| (a, s))).collect();
    let outcomes: Vec<CellOutcome> = cells
        .par_iter()
        .map(|&(variant, seed)| -> Result<CellOutcome> {
            let dir = out_dir.join(variant.key()).join(format!("seed-{seed}"));
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let trained = if variant.is_two_stage() {
                &stage_two[&(variant, seed)]
            } else {
                &stage_one[&(variant, seed)]
            };
            let result = trained.as_ref().map_err(Clone::clone).and_then(|t| {
                let eval = evaluate(&t.model, &test, "test").map_err(|e| e.to_string())?;
                let subs: Vec<(Architecture, &TrainReport)> = variant
                    .subnetworks()
                    .iter()
                    .filter_map(|a| stage_one[&(*a, seed)].as_ref().ok().map(|t| (*a, &t.report)))
                    .collect();
                write_cell(&dir, t, &eval, &subs).map_err(|e| e.to_string())?;
                Ok(eval.accuracy)
            });
            let failed = dir.join("FAILED");
            match &result {
                Err(msg) => fs::write(&failed, format!("{msg}\n")).map_err(|e| Error::io(&failed, e))?,
                Ok(_) if failed.exists() => fs::remove_file(&failed).map_err(|e| Error::io(&failed, e))?,
                Ok(_) => {}
            }
            Ok(CellOutcome {
                variant,
                seed,
                accuracy: result.as_ref().ok().copied(),
                error: result.err(),
            })
        })
        .collect::<Result<_>>()?;

    let rows = variants
        .iter()
        .map(|&variant| {
            let accuracies: Vec<Option<f64>> = outcomes
                .iter()
                .filter(|c| c.variant == variant)
                .map(|c| c.accuracy)
                .collect();
            let ok: Vec<f64> = accuracies.iter().flatten().copied().collect();
            let (mean_accuracy, sd_accuracy) = mean_sd(&ok);
            SummaryRow {
                variant,
                model: variant.display_name().to_string(),
                parameters: crate::models::analytic_parameter_count(variant, &cfg.model),
                runs: accuracies.len(),
                failures: accuracies.len() - ok.len(),
                mean_accuracy,
                sd_accuracy,
                accuracies,
            }
        })
        .collect();
    let summary = ExperimentSummary {
        seeds: seeds.clone(),
        train_utterances: crate::data::num_utterances(&train),
        test_utterances: crate::data::num_utterances(&test),
        rows,
        cells: outcomes,
    };
    let p = out_dir.join("summary.tsv");
    fs::write(&p, summary.to_tsv()).map_err(|e| Error::io(&p, e))?;
    let p = out_dir.join("summary.json");
    fs::write(&p, serde_json::to_string_pretty(&summary)?).map_err(|e| Error::io(&p, e))?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_sample_sd() {
        let (m, s) = mean_sd(&[1.0, 2.0, 3.0]);
        assert_eq!(m, Some(2.0));
        assert_eq!(s, Some(1.0));
        assert_eq!(mean_sd(&[0.5]), (Some(0.5), Some(0.0)));
        assert_eq!(mean_sd(&[]), (None, None));
    }

    #[test]
    fn config_parses_from_toml() {
        let cfg: ExperimentConfig = toml::from_str(
            r#"
            [data]
            synthetic = { mode = "xor", num_classes = 2, n_conversations = 20 }
            [model]
            num_classes = 2
            [training]
            epochs = 3
            [experiment]
            variants = ["speech", "mman"]
            seeds = [1, 2]
            "#,
        )
        .unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.experiment.variants, vec![Architecture::Speech, Architecture::Mman]);
        assert_eq!(cfg.fusion_config().epochs, 3);
        assert!(toml::from_str::<ExperimentConfig>("[data]\nbogus = 1\n").is_err());
    }

    #[test]
    fn validation_catches_dim_mismatch() {
        let cfg = ExperimentConfig {
            data: DataConfig {
                synthetic: Some(SyntheticSpec {
                    d_s: 7,
                    ..Default::default()
                }),
                ..Default::default()
            },
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
