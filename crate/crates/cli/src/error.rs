use std::fmt;
use std::path::Path;

use oralscan_core::Error as CoreError;
use oralscan_service::ServiceError;

/// A failed command: a stable category for scripts plus a human message.
#[derive(Debug)]
pub struct CliError {
    category: &'static str,
    message: String,
}

impl CliError {
    pub fn new(category: &'static str, message: impl Into<String>) -> Self {
        CliError {
            category,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new("config", message)
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CoreError::io(path, e).into()
    }

    /// An input another subcommand should have produced.
    pub fn missing_artifact(path: &Path, producer: &str) -> Self {
        Self::new(
            "missing_artifact",
            format!(
                "{} not found; run `oralscan {producer}` first (with the same --out)",
                path.display()
            ),
        )
    }

    pub fn category(&self) -> &'static str {
        self.category
    }

    pub fn message(&self) -> &str {
        &self.message
    }

    /// One JSON object, for stderr.
    pub fn to_json(&self) -> String {
        serde_json::json!({ "category": self.category, "message": self.message }).to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.category, self.message)
    }
}

impl std::error::Error for CliError {}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError::new(e.category(), e.to_string())
    }
}

impl From<ServiceError> for CliError {
    fn from(e: ServiceError) -> Self {
        CliError::new(e.category(), e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CoreError::from(e).into()
    }
}
