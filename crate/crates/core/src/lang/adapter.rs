//! Optional backend for real projects: validation delegates to external
//! compile and test commands instead of the MiniLang interpreter.

use std::path::Path;
use std::process::Command;

use crate::config::parse_kv;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdapterConfig {
    pub compile_cmd: String,
    pub test_cmd: String,
    pub pass_exit_code: i32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdapterOutcome {
    Uncompilable,
    TestsFailed,
    TestsPassed,
}

#[derive(Debug, thiserror::Error)]
pub enum AdapterError {
    #[error("adapter config: {0}")]
    Config(String),
    #[error("adapter command: {0}")]
    Io(#[from] std::io::Error),
}

impl AdapterConfig {
    /// Reads `compile_cmd`, `test_cmd` and `pass_exit_code` from `key = value` text.
    pub fn parse(text: &str) -> Result<Self, AdapterError> {
        let kv = parse_kv(text).map_err(AdapterError::Config)?;
        let get = |k: &str| {
            kv.get(k)
                .cloned()
                .ok_or_else(|| AdapterError::Config(format!("missing `{k}`")))
        };
        let pass_exit_code = match kv.get("pass_exit_code") {
            Some(v) => v
                .parse()
                .map_err(|_| AdapterError::Config(format!("bad pass_exit_code `{v}`")))?,
            None => 0,
        };
        Ok(Self {
            compile_cmd: get("compile_cmd")?,
            test_cmd: get("test_cmd")?,
            pass_exit_code,
        })
    }

    fn run(&self, cmd: &str, workdir: &Path) -> Result<i32, AdapterError> {
        let status = Command::new("sh").arg("-c").arg(cmd).current_dir(workdir).status()?;
        Ok(status.code().unwrap_or(-1))
    }

    /// Runs both commands in `workdir`, which must already hold the patched project.
    pub fn validate(&self, workdir: &Path) -> Result<AdapterOutcome, AdapterError> {
        if self.run(&self.compile_cmd, workdir)? != 0 {
            return Ok(AdapterOutcome::Uncompilable);
        }
        if self.run(&self.test_cmd, workdir)? == self.pass_exit_code {
            Ok(AdapterOutcome::TestsPassed)
        } else {
            Ok(AdapterOutcome::TestsFailed)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_run() {
        let cfg = AdapterConfig::parse("compile_cmd = true\ntest_cmd = exit 3\npass_exit_code = 3\n").unwrap();
        assert_eq!(cfg.pass_exit_code, 3);
        let dir = std::env::temp_dir();
        assert_eq!(cfg.validate(&dir).unwrap(), AdapterOutcome::TestsPassed);
        let bad = AdapterConfig {
            compile_cmd: "false".into(),
            ..cfg
        };
        assert_eq!(bad.validate(&dir).unwrap(), AdapterOutcome::Uncompilable);
        assert!(AdapterConfig::parse("test_cmd = x").is_err());
    }
}
