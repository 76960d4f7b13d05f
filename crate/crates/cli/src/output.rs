use std::io::Write;

use serde::Serialize;
use serde_json::Value;

use crate::error::CliError;

#[derive(Debug, Clone, Copy)]
pub struct Output {
    pub json: bool,
}

impl Output {
    /// Compact JSON in `--json` mode, pretty JSON otherwise.
    pub fn value(&self, value: &impl Serialize) -> Result<(), CliError> {
        let text = if self.json {
            serde_json::to_string(value)
        } else {
            serde_json::to_string_pretty(value)
        }
        .map_err(|e| CliError::Failed(e.to_string()))?;
        self.line(&text)
    }

    /// The canonical (compact) encoding regardless of mode.
    pub fn canonical(&self, value: &Value) -> Result<(), CliError> {
        self.line(&serde_json::to_string(value).map_err(|e| CliError::Failed(e.to_string()))?)
    }

    /// `text` for people, `value` for machines.
    pub fn either(&self, text: &str, value: &impl Serialize) -> Result<(), CliError> {
        if self.json {
            self.value(value)
        } else {
            self.line(text)
        }
    }

    pub fn line(&self, text: &str) -> Result<(), CliError> {
        let mut out = std::io::stdout().lock();
        // A closed pipe is not worth a failure exit.
        let _ = writeln!(out, "{text}");
        let _ = out.flush();
        Ok(())
    }

    pub fn error(&self, e: &CliError) {
        if self.json {
            let doc = serde_json::json!({ "error": { "code": e.code(), "message": e.to_string() } });
            println!("{doc}");
        } else {
            eprintln!("error: {e}");
        }
    }
}
