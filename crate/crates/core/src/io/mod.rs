//! Configuration, file formats, run manifests and the command implementations
//! behind the `opo-tomo` binary.

pub mod commands;
pub mod config;
pub mod formats;
pub mod manifest;

use std::path::Path;

use thiserror::Error;

use crate::model::ModelError;
use crate::protocol::ProtocolError;
use crate::reconstruct::ReconstructError;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{field}: {reason}")]
    Config { field: String, reason: String },
    #[error("{path}: {reason}")]
    File { path: String, reason: String },
    #[error("{file}:{line}: {reason}")]
    Parse {
        file: String,
        line: usize,
        reason: String,
    },
    #[error("axis mismatch between {files}: {reason}")]
    AxisMismatch { files: String, reason: String },
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Reconstruct(#[from] ReconstructError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl IoError {
    pub fn file(path: &Path, e: std::io::Error) -> Self {
        IoError::File {
            path: path.display().to_string(),
            reason: e.to_string(),
        }
    }

    pub fn parse(file: &str, line: usize, reason: impl Into<String>) -> Self {
        IoError::Parse {
            file: file.to_string(),
            line,
            reason: reason.into(),
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            IoError::Config { .. } => "validation",
            IoError::File { .. } => "io",
            IoError::Parse { .. } => "parse",
            IoError::AxisMismatch { .. } => "axis_mismatch",
            IoError::Input(_) => "input",
            IoError::Protocol(ProtocolError::Validation { .. }) | IoError::Model(_) => "validation",
            IoError::Protocol(_) => "simulation",
            IoError::Reconstruct(_) => "reconstruct",
        }
    }

    /// Field path or file the error refers to, when there is one.
    pub fn subject(&self) -> Option<String> {
        match self {
            IoError::Config { field, .. } => Some(field.clone()),
            IoError::File { path, .. } => Some(path.clone()),
            IoError::Parse { file, .. } => Some(file.clone()),
            IoError::AxisMismatch { files, .. } => Some(files.clone()),
            IoError::Protocol(ProtocolError::Validation { field, .. }) => Some(field.clone()),
            IoError::Model(ModelError::Invalid { field, .. }) => Some(field.to_string()),
            IoError::Model(ModelError::BelowThreshold(_)) => Some("lambda".to_string()),
            _ => None,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.code() {
            "validation" => 2,
            "io" | "parse" | "input" | "axis_mismatch" => 3,
            _ => 4,
        }
    }

    /// Single `key=value` line for stderr.
    pub fn error_line(&self) -> String {
        let mut line = format!("error code={}", self.code());
        if let Some(s) = self.subject() {
            line.push_str(&format!(" field={}", quote(&s)));
        }
        line.push_str(&format!(" message={}", quote(&self.to_string())));
        line
    }
}

/// Quotes a value for a `key=value` line when it contains spaces or quotes.
pub fn quote(s: &str) -> String {
    if !s.is_empty() && !s.contains(|c: char| c.is_whitespace() || c == '"' || c == '=') {
        return s.to_string();
    }
    format!(
        "\"{}\"",
        s.replace('\\', "\\\\")
            .replace('"', "\\\"")
            .replace('\n', " ")
    )
}
