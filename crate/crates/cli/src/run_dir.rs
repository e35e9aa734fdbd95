use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::CliError;

#[derive(Serialize)]
struct Versions {
    hignn: &'static str,
    parallel: bool,
}

/// The manifest carries the run's only timestamp and duration, so output
/// files of identical runs match byte for byte.
#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a [String],
    subcommand: &'a str,
    config: &'a serde_json::Value,
    seed: Option<u64>,
    outputs: &'a [String],
    versions: Versions,
    threads: usize,
    started_unix_secs: u64,
    duration_secs: f64,
}

pub struct RunDir {
    path: PathBuf,
    outputs: Vec<String>,
    started: SystemTime,
    clock: Instant,
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

impl RunDir {
    /// Creates `out`, or `runs/<hash12>-<unix-time>` when absent.
    pub fn create(out: Option<PathBuf>, subcommand: &str, config: &serde_json::Value) -> Result<Self, CliError> {
        let started = SystemTime::now();
        let path = out.unwrap_or_else(|| {
            let hash = hignn_core::pipeline::json_hash(&(subcommand, config));
            let secs = started.duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
            PathBuf::from("runs").join(format!("{}-{secs}", &hash[..12]))
        });
        fs::create_dir_all(&path).map_err(|e| io_error(&path, e))?;
        Ok(Self {
            path,
            outputs: Vec::new(),
            started,
            clock: Instant::now(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Records a file written by other means.
    pub fn record(&mut self, name: &str) {
        self.outputs.push(name.to_string());
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let target = self.path.join(name);
        fs::write(&target, contents).map_err(|e| io_error(&target, e))?;
        self.record(name);
        Ok(())
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Run(e.to_string()))?;
        text.push('\n');
        self.write(name, &text)
    }

    pub fn finish(
        self,
        argv: &[String],
        subcommand: &str,
        config: &serde_json::Value,
        seed: Option<u64>,
    ) -> Result<PathBuf, CliError> {
        let manifest = RunManifest {
            command: argv,
            subcommand,
            config,
            seed,
            outputs: &self.outputs,
            versions: Versions {
                hignn: env!("CARGO_PKG_VERSION"),
                parallel: hignn_core::par::is_parallel(),
            },
            threads: hignn_core::par::current_threads(),
            started_unix_secs: self.started.duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            duration_secs: self.clock.elapsed().as_secs_f64(),
        };
        let target = self.path.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Run(e.to_string()))?;
        fs::write(&target, text + "\n").map_err(|e| io_error(&target, e))?;
        Ok(self.path)
    }
}
