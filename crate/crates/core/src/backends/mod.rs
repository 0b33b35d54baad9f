// SPDX-License-Identifier: Apache-2.0

//! Generation, simulation and synthesis backends.

use std::collections::BTreeMap;
use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::operators::GenerationRequest;

pub mod http;
pub mod process;
pub mod synthetic;

pub use http::{ChatTransport, EndpointConfig, HttpGenerationBackend, ReqwestTransport, RetryPolicy};
pub use process::{CommandTemplate, ProcessSimulator, ProcessSynthesizer};
pub use synthetic::{SyntheticDesignSpace, SyntheticGenome};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Capabilities {
    pub max_prompt_chars: Option<usize>,
    pub sampling_params: bool,
}

/// Produces model replies for prompts.
pub trait GenerationBackend: Send + Sync {
    fn generate(&self, request: &GenerationRequest) -> Result<String>;

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            max_prompt_chars: None,
            sampling_params: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ToolStatus {
    Exited(i32),
    /// Killed by a signal or otherwise ended without an exit code.
    Terminated,
    TimedOut,
}

impl fmt::Display for ToolStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ToolStatus::Exited(code) => write!(f, "exited with status {code}"),
            ToolStatus::Terminated => f.write_str("was terminated"),
            ToolStatus::TimedOut => f.write_str("timed out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolOutput {
    pub stdout: String,
    pub stderr: String,
    pub status: ToolStatus,
}

impl ToolOutput {
    pub fn combined(&self) -> String {
        if self.stderr.is_empty() {
            self.stdout.clone()
        } else {
            format!("{}\n{}", self.stdout, self.stderr)
        }
    }
}

pub trait SimulationBackend: Send + Sync {
    fn simulate(&self, design: &str, testbench: &str, timeout: Duration) -> Result<ToolOutput>;
}

/// Technology settings handed to the synthesis command.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LibraryConfig {
    #[serde(default)]
    pub liberty: Option<String>,
    #[serde(default)]
    pub extra: BTreeMap<String, String>,
}

pub trait SynthesisBackend: Send + Sync {
    fn synthesize(&self, design: &str, library: &LibraryConfig, timeout: Duration) -> Result<ToolOutput>;
}
