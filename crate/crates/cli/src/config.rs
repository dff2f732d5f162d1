//! Run configuration: one TOML document over every default, merged in the
//! order modality defaults, config file, `--set` overrides.

use std::path::{Path, PathBuf};

use clea::eval::ExperimentPlan;
use clea::Modality;
use clea_service::ServiceConfig;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{CliError, Result};

/// Environment variable overriding `output`.
pub const OUTPUT_ENV: &str = "CLEA_OUTPUT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Root for relative artifact directories.
    pub output: PathBuf,
    pub plan: ExperimentPlan,
    pub service: ServiceConfig,
}

impl RunConfig {
    pub fn for_modality(modality: Modality) -> Self {
        Self {
            seed: 0,
            output: PathBuf::from("runs"),
            plan: ExperimentPlan::for_modality(modality),
            service: ServiceConfig::default(),
        }
    }

    /// Resolves the config from an optional file and `key=value` overrides.
    /// `implied` overrides come from subcommand flags and win over both.
    pub fn resolve(file: Option<&Path>, sets: &[String], implied: &[(String, Value)]) -> Result<Self> {
        let mut user = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::data(e.to_string()).at(path))?;
                text.parse::<Table>().map_err(|e| CliError::usage(format!("config: {e}")).at(path))?
            }
            None => Table::new(),
        };
        for s in sets {
            let (key, raw) = s.split_once('=').ok_or_else(|| CliError::usage(format!("--set expects key=value, got `{s}`")))?;
            set_path(&mut user, key.trim(), parse_value(raw.trim()))?;
        }
        for (key, value) in implied {
            set_path(&mut user, key, value.clone())?;
        }
        let modality = match user.get("plan").and_then(|p| p.get("modality")) {
            Some(Value::String(m)) => m.parse().map_err(CliError::usage)?,
            Some(other) => return Err(CliError::usage(format!("plan.modality must be a string, got {other}"))),
            None => Modality::Visual,
        };
        // The generator follows the plan's modality unless set explicitly.
        let mut merged = Value::try_from(Self::for_modality(modality)).expect("defaults serialize");
        merge(&mut merged, Value::Table(user));
        let mut config: RunConfig = merged.try_into().map_err(|e: toml::de::Error| CliError::usage(format!("config: {}", e.message())))?;
        if let Ok(root) = std::env::var(OUTPUT_ENV) {
            config.output = PathBuf::from(root);
        }
        config.plan.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// `dir` itself when absolute, else under the output root.
    pub fn artifact_dir(&self, dir: &Path) -> PathBuf {
        if dir.is_absolute() {
            dir.to_path_buf()
        } else {
            self.output.join(dir)
        }
    }
}

/// TOML literal when it parses as one, else a bare string.
fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn set_path(table: &mut Table, key: &str, value: Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::usage(format!("bad config key `{key}`")));
    }
    let last = parts.pop().expect("nonempty");
    let mut cur = table;
    for p in parts {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| CliError::usage(format!("config key `{p}` in `{key}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Table(b), Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_layer_over_modality_defaults() {
        let sets = vec!["plan.eval_users=7".to_string(), "plan.hyper.alpha = 0.5".to_string(), "seed=3".into()];
        let implied = vec![("plan.modality".to_string(), Value::String("kinetic".into()))];
        let c = RunConfig::resolve(None, &sets, &implied).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.plan.modality, Modality::Kinetic);
        assert_eq!(c.plan.generator.modality, Modality::Kinetic);
        assert_eq!(c.plan.eval_users, 7);
        assert_eq!(c.plan.hyper.alpha, 0.5);
        // Untouched kinetic defaults survive.
        assert_eq!(c.plan.hyper.beta, 10.0);
        let again: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn unknown_keys_are_usage_errors() {
        for bad in ["plan.nonsense=1", "bogus=1", "plan.hyper.alpah=1"] {
            let e = RunConfig::resolve(None, &[bad.to_string()], &[]).unwrap_err();
            assert_eq!(e.exit_code(), 1, "{bad}: {e}");
        }
        assert_eq!(RunConfig::resolve(None, &["novalue".into()], &[]).unwrap_err().exit_code(), 1);
    }

    #[test]
    fn values_parse_as_toml_or_string() {
        assert_eq!(parse_value("3"), Value::Integer(3));
        assert_eq!(parse_value("[2, 4]"), Value::Array(vec![Value::Integer(2), Value::Integer(4)]));
        assert_eq!(parse_value("auditory"), Value::String("auditory".into()));
    }
}
