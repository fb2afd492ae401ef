//! Error classification, config-file merging, and the attribution method
//! names shared by the explain and evaluate subcommands.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Failures split by exit code: usage errors (bad flags, unknown names,
/// missing input paths) exit 2, everything that breaks mid-run exits 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<ape_core::Error> for CliError {
    fn from(e: ape_core::Error) -> CliError {
        match e {
            ape_core::Error::Config(_) | ape_core::Error::Precondition(_) => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> CliError {
        CliError::Runtime(e.to_string())
    }
}

/// Attribution methods the explain and evaluate subcommands understand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ape,
    Gradients,
    Pcsn,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Ape => "ape",
            Method::Gradients => "gradients",
            Method::Pcsn => "pcsn",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Method, CliError> {
        match s {
            "ape" => Ok(Method::Ape),
            "gradients" => Ok(Method::Gradients),
            "pcsn" => Ok(Method::Pcsn),
            other => Err(CliError::Usage(format!(
                "unknown method '{other}' (valid methods: ape, gradients, pcsn)"
            ))),
        }
    }
}

/// CLI value if given, else config-file value, else the default.
pub fn pick<T>(cli: Option<T>, file: Option<T>, default: T) -> T {
    cli.or(file).unwrap_or(default)
}

/// Like [`pick`] but with no default to fall back on.
pub fn require<T>(cli: Option<T>, file: Option<T>, flag: &str) -> Result<T, CliError> {
    cli.or(file)
        .ok_or_else(|| CliError::Usage(format!("{flag} is required (flag or config file)")))
}

/// Usage error when an input path the user named does not exist.
pub fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!(
            "{what} not found: {}",
            path.display()
        )))
    }
}

/// Reads the optional `--config` JSON file. Unknown keys are rejected so
/// typos fail loudly instead of silently using defaults.
pub fn load_file_config<T: DeserializeOwned + Default>(
    path: Option<&Path>,
) -> Result<T, CliError> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    require_file(path, "config file")?;
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config file {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("invalid config file {}: {e}", path.display())))
}

/// Writes the fully resolved parameters of a run into its output
/// directory, creating the directory first if needed.
pub fn write_run_config<T: Serialize>(dir: &Path, config: &T) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(config)
        .map_err(|e| CliError::Runtime(format!("cannot serialize run config: {e}")))?;
    fs::write(dir.join("run_config.json"), json + "\n")?;
    Ok(())
}

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
