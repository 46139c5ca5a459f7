//! `key = value` config files. `#` starts a comment (whole-line or
//! trailing); keys are consumed by the subcommand that loads the file and
//! anything left over is an error, so typos never silently no-op.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Debug)]
pub struct KvConfig {
    path: PathBuf,
    entries: BTreeMap<String, (String, usize)>,
}

impl KvConfig {
    pub fn load(path: &Path) -> Result<KvConfig, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let mut entries = BTreeMap::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = || format!("{}:{}: expected `key = value`", path.display(), ln + 1);
            let (key, value) = line.split_once('=').ok_or_else(bad)?;
            let (key, value) = (key.trim().to_string(), value.trim().to_string());
            if key.is_empty() || value.is_empty() {
                return Err(bad());
            }
            if entries.insert(key.clone(), (value, ln + 1)).is_some() {
                return Err(format!(
                    "{}:{}: duplicate key `{key}`",
                    path.display(),
                    ln + 1
                ));
            }
        }
        Ok(KvConfig {
            path: path.to_path_buf(),
            entries,
        })
    }

    /// Consumes `key` if present, filling `slot` unless a command-line
    /// flag already did. The value is parsed either way so a bad file
    /// never passes silently.
    pub fn fill<T: FromStr>(&mut self, slot: &mut Option<T>, key: &str) -> Result<(), String>
    where
        T::Err: Display,
    {
        if let Some((value, line)) = self.entries.remove(key) {
            let parsed = value.parse().map_err(|e| {
                format!(
                    "{}:{}: bad value `{value}` for `{key}`: {e}",
                    self.path.display(),
                    line
                )
            })?;
            if slot.is_none() {
                *slot = Some(parsed);
            }
        }
        Ok(())
    }

    pub fn finish(self) -> Result<(), String> {
        if let Some((key, (_, line))) = self.entries.into_iter().next() {
            return Err(format!(
                "{}:{}: unknown config key `{key}`",
                self.path.display(),
                line
            ));
        }
        Ok(())
    }
}
