//! Config file loading with `--set key=value` overrides.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use mman_core::experiment::ExperimentConfig;
use toml::{Table, Value};

#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// TOML config with [data], [model], [training], [fusion_training] and
    /// [experiment] sections; every section and field is optional.
    #[arg(short, long, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Override a config field, e.g. `--set training.epochs=5` or
    /// `--set model.hidden_lf=[16]`. Values are TOML; bare words are strings.
    /// Applied in order, after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    pub fn load(&self) -> Result<ExperimentConfig> {
        let (mut table, base) = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                let table: Table = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
                (table, path.parent().map(Path::to_path_buf).unwrap_or_default())
            }
            None => (Table::new(), PathBuf::new()),
        };
        for o in &self.overrides {
            apply_override(&mut table, o)?;
        }
        let mut cfg: ExperimentConfig = table.try_into().context("invalid config")?;
        cfg.resolve_paths(&base);
        Ok(cfg)
    }
}

fn parse_value(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

pub fn apply_override(table: &mut Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| anyhow!("override `{spec}` is not KEY=VALUE"))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("override key `{key}` has an empty segment");
    }
    let (last, path) = parts.split_last().unwrap();
    let mut cur = table;
    for p in path {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| anyhow!("override `{key}`: `{p}` is not a table"))?;
    }
    cur.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}
