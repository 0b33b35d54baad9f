// SPDX-License-Identifier: Apache-2.0

//! Configuration document and task manifests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use coevolve::backends::EndpointConfig;
use coevolve::engine::RunConfig;
use coevolve::Error;
use regex::Regex;
use serde::Deserialize;
use serde_json::Value;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    /// Defaults for every run; tasks and flags override them.
    #[serde(default)]
    pub run: Value,
    #[serde(default = "default_backend")]
    pub backend: String,
    #[serde(default)]
    pub http: Option<EndpointConfig>,
    #[serde(default)]
    pub toolchain: Option<ToolchainConfig>,
    #[serde(default)]
    pub templates_dir: Option<PathBuf>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_test_cases")]
    pub test_cases: u32,
    #[serde(default)]
    pub suite: SuiteConfig,
    pub tasks: Vec<TaskManifest>,
    /// Directory of the config file; relative paths resolve against it.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_backend() -> String {
    "synthetic".into()
}

fn default_output_dir() -> PathBuf {
    "runs".into()
}

fn default_test_cases() -> u32 {
    20
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    #[serde(default = "default_runs")]
    pub runs: u32,
    #[serde(default)]
    pub seed_base: u64,
}

fn default_runs() -> u32 {
    10
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            runs: default_runs(),
            seed_base: 0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolchainConfig {
    /// Shell template with `{design}`, `{testbench}` and `{outdir}`.
    pub simulate: String,
    /// Shell template with `{design}`, `{outdir}`, `{liberty}` and any
    /// `extra` keys.
    pub synthesize: String,
    #[serde(default = "default_ppa_format")]
    pub ppa_format: String,
    #[serde(default)]
    pub liberty: Option<String>,
    #[serde(default)]
    pub extra: BTreeMap<String, String>,
    #[serde(default = "default_sim_timeout")]
    pub simulation_timeout_secs: u64,
    #[serde(default = "default_synth_timeout")]
    pub synthesis_timeout_secs: u64,
    #[serde(default = "default_tb_attempts")]
    pub testbench_attempts: u32,
    #[serde(default)]
    pub scratch_dir: Option<PathBuf>,
}

fn default_ppa_format() -> String {
    "yosys-opensta".into()
}

fn default_sim_timeout() -> u64 {
    60
}

fn default_synth_timeout() -> u64 {
    600
}

fn default_tb_attempts() -> u32 {
    2
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskManifest {
    pub id: String,
    pub spec: PathBuf,
    #[serde(default)]
    pub golden_reference: Option<PathBuf>,
    #[serde(default)]
    pub testbench: Option<PathBuf>,
    #[serde(default)]
    pub overrides: Value,
}

/// A task with its files read.
#[derive(Debug, Clone)]
pub struct LoadedTask {
    pub id: String,
    pub spec: String,
    pub golden_reference: Option<String>,
    pub testbench: Option<String>,
    pub overrides: Value,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut doc: Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        interpolate(&mut doc, &|name| std::env::var(name).ok())?;
        let mut config: Config = serde_json::from_value(doc)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        config.output_dir = config.resolve(&config.output_dir);
        Ok(config)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn task(&self, id: &str) -> Result<LoadedTask, Error> {
        let manifest = self
            .tasks
            .iter()
            .find(|t| t.id == id)
            .ok_or_else(|| Error::Config(format!("no task '{id}' in the configuration")))?;
        self.load_task(manifest)
    }

    pub fn load_task(&self, m: &TaskManifest) -> Result<LoadedTask, Error> {
        let read = |p: &Path| {
            let full = self.resolve(p);
            std::fs::read_to_string(&full)
                .map_err(|e| Error::Config(format!("task '{}': cannot read {}: {e}", m.id, full.display())))
        };
        let spec = read(&m.spec)?;
        if spec.trim().is_empty() {
            return Err(Error::Config(format!("task '{}': specification is empty", m.id)));
        }
        Ok(LoadedTask {
            id: m.id.clone(),
            spec,
            golden_reference: m.golden_reference.as_deref().map(read).transpose()?,
            testbench: m.testbench.as_deref().map(read).transpose()?,
            overrides: m.overrides.clone(),
        })
    }

    /// Run defaults, then task overrides, then the command line.
    pub fn run_config(&self, task: &LoadedTask, flags: &Value) -> Result<RunConfig, Error> {
        let mut merged = serde_json::to_value(RunConfig::default())?;
        for layer in [&self.run, &task.overrides, flags] {
            merge(&mut merged, layer);
        }
        let mut config: RunConfig = serde_json::from_value(merged)
            .map_err(|e| Error::Config(format!("run settings: {e}")))?;
        config.task = task.id.clone();
        config.validate()?;
        Ok(config)
    }
}

/// Overlays `layer` onto `base`, recursing into objects.
pub fn merge(base: &mut Value, layer: &Value) {
    match (base, layer) {
        (Value::Object(b), Value::Object(l)) => {
            for (k, v) in l.iter().filter(|(_, v)| !v.is_null()) {
                merge(b.entry(k.clone()).or_insert(Value::Null), v);
            }
        }
        (_, Value::Null) => {}
        (b, l) => *b = l.clone(),
    }
}

/// Replaces `${NAME}` in every string value.
pub fn interpolate(doc: &mut Value, lookup: &dyn Fn(&str) -> Option<String>) -> Result<(), Error> {
    let re = Regex::new(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}").expect("valid regex");
    fn walk(v: &mut Value, re: &Regex, lookup: &dyn Fn(&str) -> Option<String>) -> Result<(), Error> {
        match v {
            Value::String(s) if s.contains("${") => {
                let mut missing = None;
                let replaced = re.replace_all(s, |caps: &regex::Captures| {
                    lookup(&caps[1]).unwrap_or_else(|| {
                        missing.get_or_insert_with(|| caps[1].to_string());
                        String::new()
                    })
                });
                if let Some(name) = missing {
                    return Err(Error::Config(format!("environment variable {name} is not set")));
                }
                *s = replaced.into_owned();
            }
            Value::Array(items) => {
                for item in items {
                    walk(item, re, lookup)?;
                }
            }
            Value::Object(map) => {
                for item in map.values_mut() {
                    walk(item, re, lookup)?;
                }
            }
            _ => {}
        }
        Ok(())
    }
    walk(doc, &re, lookup)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn interpolates_nested_strings() {
        let mut doc = json!({"http": {"api_key": "${KEY}", "url": "http://${HOST}:8000/v1"}, "n": 3});
        let env = |k: &str| match k {
            "KEY" => Some("secret".to_string()),
            "HOST" => Some("localhost".to_string()),
            _ => None,
        };
        interpolate(&mut doc, &env).unwrap();
        assert_eq!(doc["http"]["api_key"], "secret");
        assert_eq!(doc["http"]["url"], "http://localhost:8000/v1");
        let mut bad = json!(["${NOPE}"]);
        assert!(matches!(interpolate(&mut bad, &env), Err(Error::Config(_))));
    }

    #[test]
    fn merge_overlays_objects() {
        let mut base = json!({"a": 1, "gate": {"theta_min": 0.25, "alpha": 2.0}});
        merge(&mut base, &json!({"gate": {"alpha": 3.0}, "b": true, "c": null}));
        assert_eq!(base, json!({"a": 1, "b": true, "gate": {"theta_min": 0.25, "alpha": 3.0}}));
    }
}
