//! `RunConfig`: one TOML file with a section per component. Unknown keys
//! are rejected; `--set section.key=value` and the global flags override
//! file values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use uarpo_lab::chart::{GenConfig, Split};
use uarpo_lab::policy::ModelConfig;
use uarpo_lab::reward::RewardConfig;
use uarpo_lab::train::{TrainConfig, TrainSetup, WarmStartConfig};
use uarpo_lab::uarpo::UarpoHyper;

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Empty means `<train.output>/final.ckpt`.
    pub checkpoint: PathBuf,
    pub split: Split,
    pub max_len: usize,
    /// Empty means `<train.output>/eval`.
    pub output: PathBuf,
    pub model_name: String,
    pub include_naive: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            checkpoint: PathBuf::new(),
            split: Split::Test,
            max_len: 64,
            output: PathBuf::new(),
            model_name: "Policy".into(),
            include_naive: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: GenConfig,
    pub model: ModelConfig,
    pub reward: RewardConfig,
    pub uarpo: UarpoHyper,
    pub warm_start: WarmStartConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn train_setup(&self) -> TrainSetup {
        TrainSetup {
            train: self.train.clone(),
            model: self.model.clone(),
            reward: self.reward.clone(),
            uarpo: self.uarpo.clone(),
            warm_start: self.warm_start.clone(),
        }
    }

    pub fn eval_checkpoint(&self) -> PathBuf {
        if self.eval.checkpoint.as_os_str().is_empty() {
            self.train.output.join("final.ckpt")
        } else {
            self.eval.checkpoint.clone()
        }
    }

    pub fn eval_output(&self) -> PathBuf {
        if self.eval.output.as_os_str().is_empty() {
            self.train.output.join("eval")
        } else {
            self.eval.output.clone()
        }
    }
}

/// Parses `value` as a TOML value, falling back to a bare string.
fn parse_value(value: &str) -> toml::Value {
    let doc = format!("v = {value}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("just inserted"),
        Err(_) => toml::Value::String(value.to_string()),
    }
}

/// Applies `section.key=value` to the raw table.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (path, value) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--set {assignment:?}: expected key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Config(format!("--set {assignment:?}: empty key")));
    }
    let (last, parents) = keys.split_last().expect("split yields one item");
    let mut cur = table;
    for k in parents {
        cur = cur
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| {
                CliError::Config(format!("--set {assignment:?}: {k} is not a section"))
            })?;
    }
    cur.insert(last.to_string(), parse_value(value.trim()));
    Ok(())
}

pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, CliError> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            text.parse::<toml::Table>()
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let origin = path.map_or_else(|| "config".to_string(), |p| p.display().to_string());
    RunConfig::deserialize(toml::Value::Table(table))
        .map_err(|e| CliError::Config(format!("{origin}: {e}")))
}

/// The default values of `sections`, rendered as TOML.
pub fn defaults_help(sections: &[&str]) -> String {
    let full = toml::Value::try_from(RunConfig::default()).expect("defaults serialize");
    let table = full.as_table().expect("struct serializes to a table");
    let mut out = String::from(
        "Config keys and defaults (set in --config or with --set section.key=value):\n",
    );
    for name in sections {
        let mut one = toml::Table::new();
        one.insert(name.to_string(), table[*name].clone());
        out.push('\n');
        out.push_str(&toml::to_string(&one).expect("table renders"));
    }
    if sections.contains(&"train") {
        out.push_str(
            "# init_checkpoint = \"<path>\"  (optional; default: fresh warm-started model)\n",
        );
    }
    out
}
