//! The run directory and its manifest. Every command writes only under its
//! run directory and appends one step to `manifest.json` there.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{io_err, CliError, CliResult, Kind};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub command: String,
    /// Full argument list, enough to re-execute the step.
    pub argv: Vec<String>,
    /// Working directory the arguments are relative to.
    pub cwd: PathBuf,
    /// Settings after defaults, config file and flags were merged.
    pub config: Value,
    pub config_path: Option<PathBuf>,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    /// Seconds since the Unix epoch.
    pub started: f64,
    pub finished: f64,
    /// Free-form facts about the step, such as a rendered value range.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub notes: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub tool_version: String,
    pub steps: Vec<Step>,
}

impl RunManifest {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::new(Kind::Parse, format!("{}: {e}", path.display())))
    }
}

pub fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

/// A run directory being written by one command.
pub struct Run {
    dir: PathBuf,
    step: Step,
}

impl Run {
    pub fn open(dir: &Path, command: &str, argv: &[String]) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        Ok(Run {
            dir: dir.to_path_buf(),
            step: Step {
                command: command.to_string(),
                argv: argv.to_vec(),
                cwd: std::env::current_dir().unwrap_or_default(),
                config: Value::Null,
                config_path: None,
                seeds: BTreeMap::new(),
                inputs: Vec::new(),
                outputs: Vec::new(),
                started: now(),
                finished: 0.0,
                notes: BTreeMap::new(),
            },
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Path of an output file inside the run directory. Names with path
    /// components are refused so nothing lands elsewhere.
    pub fn output(&mut self, name: &str) -> CliResult<PathBuf> {
        let plain = Path::new(name)
            .file_name()
            .is_some_and(|f| f == name && name != MANIFEST);
        if !plain {
            return Err(CliError::new(
                Kind::Usage,
                format!("output name {name:?} must be a plain file name other than {MANIFEST}"),
            ));
        }
        let path = self.dir.join(name);
        self.step.outputs.push(path.clone());
        Ok(path)
    }

    /// Directory for intermediate files inside the run directory.
    pub fn subdir(&mut self, name: &str) -> CliResult<PathBuf> {
        let path = self.dir.join(name);
        fs::create_dir_all(&path).map_err(|e| io_err(&path, e))?;
        self.step.outputs.push(path.clone());
        Ok(path)
    }

    pub fn input(&mut self, path: &Path) {
        self.step.inputs.push(path.to_path_buf());
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.step.seeds.insert(name.to_string(), value);
    }

    pub fn config(&mut self, config: &impl Serialize, path: Option<&Path>) {
        self.step.config = serde_json::to_value(config).unwrap_or(Value::Null);
        self.step.config_path = path.map(Path::to_path_buf);
    }

    pub fn note(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).unwrap_or(Value::Null);
        self.step.notes.insert(key.to_string(), v);
    }

    pub fn write(&self, name: &Path, text: &str) -> CliResult<()> {
        fs::write(name, text).map_err(|e| io_err(name, e))
    }

    /// Append the finished step to the manifest.
    pub fn finish(mut self) -> CliResult<PathBuf> {
        let path = self.dir.join(MANIFEST);
        let mut manifest = if path.exists() {
            RunManifest::load(&path)?
        } else {
            RunManifest {
                tool: env!("CARGO_PKG_NAME").to_string(),
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                steps: Vec::new(),
            }
        };
        self.step.finished = now();
        manifest.steps.push(self.step);
        let text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| CliError::new(Kind::Parse, e.to_string()))?;
        fs::write(&path, text).map_err(|e| io_err(&path, e))?;
        Ok(path)
    }
}
