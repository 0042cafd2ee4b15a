//! Run configuration file.
//!
//! A TOML file with three optional tables. `[engine]` mirrors `EngineConfig`
//! (including `[engine.train]` and `stop_rules`), `[run]` holds paths and the
//! annotator, `[serve]` the annotation service. Command-line flags override
//! values from the file, which override built-in defaults.
//!
//! ```toml
//! [engine]
//! strategy = "ALC3"
//! flag_fraction = 0.025
//! delta = 0.9
//! stop_rules = [{ rule = "close_to_oracle", band = 0.01 }]
//!
//! [run]
//! dataset = "train.jsonl"
//! test = "test.jsonl"
//! out = "runs/alc3"
//!
//! [serve]
//! port = 8080
//! tokens = { alice = "secret-a" }
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use alc3_core::engine::EngineConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub engine: EngineConfig,
    pub run: RunSection,
    pub serve: ServeSection,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub dataset: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub label_space: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// `oracle`, `replay` or `serve`.
    pub annotator: Option<String>,
    pub transcript: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSection {
    pub host: String,
    pub port: u16,
    /// Annotator name to bearer token. Empty disables authentication.
    pub tokens: BTreeMap<String, String>,
    pub lease_seconds: u64,
    /// Directory with the built web console; a placeholder page is served without it.
    pub console_dir: Option<PathBuf>,
}

impl Default for ServeSection {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
            tokens: BTreeMap::new(),
            lease_seconds: alc3_core::annotator::DEFAULT_LEASE.as_secs(),
            console_dir: None,
        }
    }
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self, CliError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }
}

/// Parses `name:token` pairs given on the command line.
pub fn parse_token(arg: &str) -> Result<(String, String), String> {
    match arg.split_once(':') {
        Some((name, token)) if !name.is_empty() && !token.is_empty() => Ok((name.to_string(), token.to_string())),
        _ => Err(format!("expected NAME:TOKEN, got {arg:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alc3_core::engine::{StopRule, Strategy};

    #[test]
    fn parses_all_tables() {
        let c = FileConfig::parse(
            r#"
            [engine]
            strategy = "DALC"
            M = 0.05
            stop_rules = [{ rule = "budget", max_annotated_fraction = 0.2 }]
            [engine.train]
            epochs = 3
            [run]
            dataset = "d.jsonl"
            [serve]
            port = 9000
            tokens = { ann = "t1" }
            "#,
        )
        .unwrap();
        assert_eq!(c.engine.strategy, Strategy::Dalc);
        assert_eq!(c.engine.flag_fraction, 0.05);
        assert_eq!(c.engine.train.epochs, 3);
        assert_eq!(
            c.engine.stop_rules,
            vec![StopRule::Budget {
                max_annotated_fraction: 0.2
            }]
        );
        assert_eq!(c.run.dataset.as_deref(), Some(Path::new("d.jsonl")));
        assert_eq!(c.serve.port, 9000);
        assert_eq!(c.serve.tokens["ann"], "t1");
        assert_eq!(c.serve.host, "127.0.0.1");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = FileConfig::parse("[engine]\nflag_fractoin = 0.1\n").unwrap_err();
        assert!(err.to_string().contains("flag_fractoin"), "{err}");
    }

    #[test]
    fn token_pairs() {
        assert_eq!(parse_token("a:b").unwrap(), ("a".into(), "b".into()));
        assert!(parse_token("nocolon").is_err());
        assert!(parse_token(":x").is_err());
    }
}
