//! Configuration precedence: flags beat environment variables, which beat the
//! config file, which beats built-in defaults.

use std::path::Path;

use anyhow::Context;

pub const LLM_TOKEN_ENV: &str = "ONTONORM_LLM_TOKEN";
pub const OMIM_KEY_ENV: &str = "ONTONORM_OMIM_KEY";
pub const EMBED_URL_ENV: &str = "ONTONORM_EMBED_URL";

/// Values loaded from an optional TOML key/value config file.
#[derive(Debug, Default)]
pub struct Settings {
    file: toml::Table,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Settings::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let file: toml::Table = toml::from_str(&text)
            .with_context(|| format!("cannot parse config file {}", path.display()))?;
        Ok(Settings { file })
    }

    /// flag > env > file > none. `env_value` is passed in (rather than read
    /// here) so precedence is unit-testable without mutating process state.
    pub fn string(
        &self,
        flag: Option<String>,
        env_value: Option<String>,
        key: &str,
    ) -> Option<String> {
        flag.or(env_value).or_else(|| {
            self.file
                .get(key)
                .and_then(|v| v.as_str())
                .map(str::to_string)
        })
    }

    pub fn integer(&self, flag: Option<usize>, key: &str, default: usize) -> usize {
        flag.or_else(|| {
            self.file
                .get(key)
                .and_then(|v| v.as_integer())
                .and_then(|v| usize::try_from(v).ok())
        })
        .unwrap_or(default)
    }
}

pub fn env(name: &str) -> Option<String> {
    std::env::var(name).ok().filter(|v| !v.is_empty())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings(text: &str) -> Settings {
        Settings {
            file: toml::from_str(text).unwrap(),
        }
    }

    #[test]
    fn flag_beats_env_beats_file_beats_default() {
        let s = settings("model = \"from-file\"\nk = 3\n");
        assert_eq!(
            s.string(Some("from-flag".into()), Some("from-env".into()), "model"),
            Some("from-flag".to_string())
        );
        assert_eq!(
            s.string(None, Some("from-env".into()), "model"),
            Some("from-env".to_string())
        );
        assert_eq!(s.string(None, None, "model"), Some("from-file".to_string()));
        assert_eq!(s.string(None, None, "missing"), None);

        assert_eq!(s.integer(Some(2), "k", 20), 2);
        assert_eq!(s.integer(None, "k", 20), 3);
        assert_eq!(s.integer(None, "missing", 20), 20);
    }
}
