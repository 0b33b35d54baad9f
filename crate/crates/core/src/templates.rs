// SPDX-License-Identifier: Apache-2.0

//! Prompt templates: plain text files with `{name}` placeholders, one per
//! prompt kind. Defaults are compiled in; a directory holding any subset of
//! the files overrides them.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;

use crate::error::{Error, Result};

/// Every placeholder name a template may use.
pub const PLACEHOLDERS: &[&str] = &[
    "spec",
    "parent_source",
    "diagnostics",
    "synthesis_diagnosis",
    "second_parent_source",
    "first_parent_strength",
    "second_parent_strength",
    "population_digest",
    "strategy",
    "strategy_description",
    "strategies",
    "synthesis_error",
    "case_count",
];

const DEFAULTS: &[(&str, &str)] = &[
    ("fix", include_str!("../templates/fix.txt")),
    ("simplify", include_str!("../templates/simplify.txt")),
    ("optimize", include_str!("../templates/optimize.txt")),
    ("restructure", include_str!("../templates/restructure.txt")),
    ("explore", include_str!("../templates/explore.txt")),
    ("ppa_aware_fix", include_str!("../templates/ppa_aware_fix.txt")),
    ("architecture_fusion", include_str!("../templates/architecture_fusion.txt")),
    ("init", include_str!("../templates/init.txt")),
    ("strategy_query", include_str!("../templates/strategy_query.txt")),
    ("repair", include_str!("../templates/repair.txt")),
    ("testbench", include_str!("../templates/testbench.txt")),
];

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([a-z_]+)\}").expect("valid regex"))
}

#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: BTreeMap<String, String>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self {
            templates: DEFAULTS
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }
}

impl TemplateSet {
    /// Defaults overridden by `<dir>/<name>.txt` for each file present.
    pub fn load(dir: &Path) -> Result<Self> {
        let mut set = Self::default();
        for (name, _) in DEFAULTS {
            let path = dir.join(format!("{name}.txt"));
            if path.exists() {
                let text = std::fs::read_to_string(&path)?;
                set.insert(name, text)?;
            }
        }
        Ok(set)
    }

    pub fn insert(&mut self, name: &str, text: String) -> Result<()> {
        check_placeholders(name, &text)?;
        self.templates.insert(name.to_string(), text);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&str> {
        self.templates
            .get(name)
            .map(String::as_str)
            .ok_or_else(|| Error::Config(format!("no template named '{name}'")))
    }

    /// Fills placeholders in a single left-to-right pass, so substituted text
    /// is never itself scanned for placeholders. Placeholders without a value
    /// become empty.
    pub fn render(&self, name: &str, values: &BTreeMap<&str, String>) -> Result<String> {
        let template = self.get(name)?;
        Ok(placeholder_re()
            .replace_all(template, |caps: &regex::Captures<'_>| {
                values.get(&caps[1]).cloned().unwrap_or_default()
            })
            .into_owned())
    }
}

fn check_placeholders(name: &str, text: &str) -> Result<()> {
    for caps in placeholder_re().captures_iter(text) {
        if !PLACEHOLDERS.contains(&&caps[1]) {
            return Err(Error::Config(format!(
                "template '{name}' uses unknown placeholder {{{}}}",
                &caps[1]
            )));
        }
    }
    Ok(())
}
