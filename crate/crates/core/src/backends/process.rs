// SPDX-License-Identifier: Apache-2.0

//! Simulation and synthesis through external tools.
//!
//! Commands are shell templates with `{design}`, `{testbench}`, `{outdir}` and
//! `{liberty}` placeholders. Every invocation runs in its own scratch
//! directory, which is removed afterwards unless artifacts are kept.

use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{LibraryConfig, SimulationBackend, SynthesisBackend, ToolOutput, ToolStatus};
use crate::error::{Error, Result};

const POLL: Duration = Duration::from_millis(5);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandTemplate {
    pub command: String,
    /// Name of the design file written into the scratch directory.
    #[serde(default = "default_design_file")]
    pub design_file: String,
    #[serde(default = "default_testbench_file")]
    pub testbench_file: String,
}

fn default_design_file() -> String {
    "design.v".into()
}

fn default_testbench_file() -> String {
    "testbench.v".into()
}

impl CommandTemplate {
    pub fn new(command: impl Into<String>) -> Self {
        Self {
            command: command.into(),
            design_file: default_design_file(),
            testbench_file: default_testbench_file(),
        }
    }

    fn render(&self, outdir: &Path, liberty: Option<&str>) -> String {
        let quote = |p: &Path| shell_quote(&p.display().to_string());
        self.command
            .replace("{design}", &quote(&outdir.join(&self.design_file)))
            .replace("{testbench}", &quote(&outdir.join(&self.testbench_file)))
            .replace("{outdir}", &quote(outdir))
            .replace("{liberty}", &liberty.map(shell_quote).unwrap_or_default())
    }
}

fn shell_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', r"'\''"))
}

/// Scratch-directory policy shared by the process adapters.
#[derive(Debug, Clone, Default)]
pub struct Scratch {
    pub root: Option<PathBuf>,
    pub keep_artifacts: bool,
}

impl Scratch {
    fn run(
        &self,
        template: &CommandTemplate,
        files: &[(&str, &str)],
        liberty: Option<&str>,
        timeout: Duration,
    ) -> Result<ToolOutput> {
        let mut builder = tempfile::Builder::new();
        builder.prefix("coevolve-");
        let dir = match &self.root {
            Some(root) => {
                std::fs::create_dir_all(root)?;
                builder.tempdir_in(root)?
            }
            None => builder.tempdir()?,
        };
        for (name, contents) in files {
            std::fs::write(dir.path().join(name), contents)?;
        }
        let command = template.render(dir.path(), liberty);
        let out = run_with_timeout(&command, dir.path(), timeout);
        if self.keep_artifacts {
            let kept = dir.keep();
            log::info!("kept tool artifacts in {}", kept.display());
        }
        out
    }
}

/// Runs `command` through `sh -c` in `cwd`. On timeout the whole process
/// group is killed.
pub fn run_with_timeout(command: &str, cwd: &Path, timeout: Duration) -> Result<ToolOutput> {
    let mut cmd = Command::new("sh");
    cmd.arg("-c")
        .arg(command)
        .current_dir(cwd)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    #[cfg(unix)]
    {
        use std::os::unix::process::CommandExt;
        cmd.process_group(0);
    }
    let mut child = cmd
        .spawn()
        .map_err(|e| Error::BackendUnavailable(format!("cannot launch '{command}': {e}")))?;

    let stdout = drain(child.stdout.take());
    let stderr = drain(child.stderr.take());

    let start = Instant::now();
    let status = loop {
        if let Some(status) = child.try_wait()? {
            break status.code().map_or(ToolStatus::Terminated, ToolStatus::Exited);
        }
        if start.elapsed() >= timeout {
            kill_group(&mut child);
            let _ = child.wait();
            break ToolStatus::TimedOut;
        }
        thread::sleep(POLL);
    };
    Ok(ToolOutput {
        stdout: stdout.join().unwrap_or_default(),
        stderr: stderr.join().unwrap_or_default(),
        status,
    })
}

fn drain<R: Read + Send + 'static>(pipe: Option<R>) -> thread::JoinHandle<String> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        if let Some(mut p) = pipe {
            let _ = p.read_to_end(&mut buf);
        }
        String::from_utf8_lossy(&buf).into_owned()
    })
}

fn kill_group(child: &mut Child) {
    #[cfg(unix)]
    {
        // Negative pid addresses the process group created at spawn.
        let pgid = child.id() as libc::pid_t;
        unsafe {
            libc::kill(-pgid, libc::SIGKILL);
        }
    }
    let _ = child.kill();
}

pub struct ProcessSimulator {
    pub template: CommandTemplate,
    pub scratch: Scratch,
}

impl SimulationBackend for ProcessSimulator {
    fn simulate(&self, design: &str, testbench: &str, timeout: Duration) -> Result<ToolOutput> {
        self.scratch.run(
            &self.template,
            &[
                (&self.template.design_file, design),
                (&self.template.testbench_file, testbench),
            ],
            None,
            timeout,
        )
    }
}

pub struct ProcessSynthesizer {
    pub template: CommandTemplate,
    pub scratch: Scratch,
}

impl SynthesisBackend for ProcessSynthesizer {
    fn synthesize(&self, design: &str, library: &LibraryConfig, timeout: Duration) -> Result<ToolOutput> {
        let mut template = self.template.clone();
        for (key, value) in &library.extra {
            template.command = template.command.replace(&format!("{{{key}}}"), value);
        }
        self.scratch.run(
            &template,
            &[(&self.template.design_file, design)],
            library.liberty.as_deref(),
            timeout,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn captures_output_and_status() {
        let dir = tempfile::tempdir().unwrap();
        let out = run_with_timeout("echo hi; echo err >&2; exit 3", dir.path(), Duration::from_secs(5)).unwrap();
        assert_eq!(out.stdout.trim(), "hi");
        assert_eq!(out.stderr.trim(), "err");
        assert_eq!(out.status, ToolStatus::Exited(3));
    }

    #[test]
    fn timeout_kills_the_process_tree() {
        let dir = tempfile::tempdir().unwrap();
        let start = Instant::now();
        let out = run_with_timeout("sleep 30 & sleep 30; echo done", dir.path(), Duration::from_millis(200)).unwrap();
        assert_eq!(out.status, ToolStatus::TimedOut);
        assert!(start.elapsed() < Duration::from_secs(5));
        assert!(!out.stdout.contains("done"));
    }

    #[test]
    fn simulator_writes_files_into_scratch() {
        let sim = ProcessSimulator {
            template: CommandTemplate::new("cat {design} {testbench}"),
            scratch: Scratch::default(),
        };
        let out = sim.simulate("module a; endmodule", "// tb", Duration::from_secs(5)).unwrap();
        assert!(out.stdout.contains("module a; endmodule"));
        assert!(out.stdout.contains("// tb"));
    }

    #[test]
    fn scratch_removed_unless_kept() {
        let root = tempfile::tempdir().unwrap();
        let mk = |keep| ProcessSynthesizer {
            template: CommandTemplate::new("pwd"),
            scratch: Scratch {
                root: Some(root.path().to_path_buf()),
                keep_artifacts: keep,
            },
        };
        mk(false).synthesize("x", &LibraryConfig::default(), Duration::from_secs(5)).unwrap();
        assert_eq!(std::fs::read_dir(root.path()).unwrap().count(), 0);
        mk(true).synthesize("x", &LibraryConfig::default(), Duration::from_secs(5)).unwrap();
        assert_eq!(std::fs::read_dir(root.path()).unwrap().count(), 1);
    }

    #[test]
    fn liberty_and_extra_placeholders() {
        let syn = ProcessSynthesizer {
            template: CommandTemplate::new("echo {liberty} {corner}"),
            scratch: Scratch::default(),
        };
        let lib = LibraryConfig {
            liberty: Some("/libs/ng45.lib".into()),
            extra: [("corner".to_string(), "typical".to_string())].into(),
        };
        let out = syn.synthesize("x", &lib, Duration::from_secs(5)).unwrap();
        assert_eq!(out.stdout.trim(), "/libs/ng45.lib typical");
    }
}
