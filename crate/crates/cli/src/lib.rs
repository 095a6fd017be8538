//! Command implementations behind the `radkg` binary.

pub mod app;
pub mod commands;
pub mod config;

use std::fmt;
use std::path::PathBuf;

use app::{CommandKind, Invocation};
use config::{RunConfig, CONFIG_ENV};
use radkg::Error;

/// A command failure, classified by exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags or configuration.
    Usage(String),
    /// Unreadable, malformed or mismatched input.
    Data(String),
    /// Non-finite values or a failed gradient check.
    Numerical(String),
    /// The evaluation report has no defined AUC.
    Undefined(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numerical(_) => 3,
            Failure::Undefined(_) => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Numerical(m) | Failure::Undefined(m) => f.write_str(m),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Usage(e.to_string()),
            Error::Numerical(_) => Failure::Numerical(e.to_string()),
            other => Failure::Data(other.to_string()),
        }
    }
}

/// Defaults, then the config file (`--config` or the environment), then flags.
pub fn resolve_config(inv: &Invocation, env_path: Option<PathBuf>) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::default();
    if let Some(path) = inv.config_path.clone().or(env_path) {
        cfg.apply_file(&path).map_err(|e| match e {
            Error::Io { .. } => Failure::Usage(format!("cannot read configuration: {e}")),
            other => Failure::from(other),
        })?;
    }
    for (k, v) in &inv.overrides {
        cfg.set(k, v)?;
    }
    Ok(cfg)
}

pub fn run(inv: &Invocation) -> Result<String, Failure> {
    let env_path = std::env::var_os(CONFIG_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from);
    let cfg = resolve_config(inv, env_path)?;
    match inv.command {
        CommandKind::BuildKg => commands::build_kg(&cfg),
        CommandKind::Train => commands::train_cmd(&cfg),
        CommandKind::Eval => commands::eval_cmd(&cfg),
        CommandKind::Predict => commands::predict_cmd(&cfg),
        CommandKind::Synth => commands::synth_cmd(&cfg),
        CommandKind::Gradcheck => commands::gradcheck_cmd(&cfg, inv.corrupt_gradient),
    }
}
