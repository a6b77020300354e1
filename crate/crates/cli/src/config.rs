//! JSON run configurations.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde_path_to_error::Segment;

pub const SCHEMA_VERSION: u32 = 1;
pub const SEED_ENV: &str = "EXCIREC_SEED";

/// Invalid or unreadable configuration. Maps to exit code 2.
#[derive(Debug)]
pub struct ConfigError {
    /// JSON pointer of the offending value, empty for the document root.
    pub pointer: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(message: impl Into<String>) -> Self {
        ConfigError {
            pointer: String::new(),
            message: message.into(),
        }
    }

    pub fn at(pointer: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError {
            pointer: pointer.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.pointer.is_empty() {
            write!(f, "config error: {}", self.message)
        } else {
            write!(f, "config error at {}: {}", self.pointer, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

fn pointer(path: &serde_path_to_error::Path) -> String {
    let mut s = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => s += &format!("/{index}"),
            Segment::Map { key } => s += &format!("/{}", key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => s += &format!("/{variant}"),
            Segment::Unknown => s += "/?",
        }
    }
    s
}

/// A parsed config together with the directory relative paths resolve
/// against.
pub struct Loaded<T> {
    pub config: T,
    pub base: PathBuf,
    pub raw: serde_json::Value,
}

impl<T> Loaded<T> {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }
}

/// Parses `text`, checks `schema_version` and deserializes into `T`,
/// reporting the JSON pointer of the first offending value.
pub fn parse<T: DeserializeOwned>(text: &str) -> Result<(T, serde_json::Value), ConfigError> {
    let raw: serde_json::Value =
        serde_json::from_str(text).map_err(|e| ConfigError::new(format!("invalid JSON: {e}")))?;
    match raw.get("schema_version") {
        None => return Err(ConfigError::at("/schema_version", "missing field")),
        Some(v) if v.as_u64() != Some(SCHEMA_VERSION as u64) => {
            return Err(ConfigError::at(
                "/schema_version",
                format!("unsupported schema version {v}, expected {SCHEMA_VERSION}"),
            ))
        }
        Some(_) => {}
    }
    let mut de = serde_json::Deserializer::from_str(text);
    let cfg = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let p = pointer(e.path());
        ConfigError::at(p, e.into_inner().to_string())
    })?;
    Ok((cfg, raw))
}

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<Loaded<T>, ConfigError> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError::new(format!("cannot read {}: {e}", path.display())))?;
    let (config, raw) = parse(&text)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Loaded { config, base, raw })
}

/// `EXCIREC_SEED` if set, else the configured seed.
pub fn effective_seed(configured: u64) -> Result<u64, ConfigError> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map_err(|_| ConfigError::new(format!("{SEED_ENV}={s:?} is not an unsigned integer"))),
        Err(std::env::VarError::NotPresent) => Ok(configured),
        Err(e) => Err(ConfigError::new(format!("{SEED_ENV}: {e}"))),
    }
}

/// Output directory: `--out` wins over the config's `out_dir`.
pub fn out_dir<T>(loaded: &Loaded<T>, cli: Option<&Path>, configured: Option<&Path>) -> Result<PathBuf, ConfigError> {
    match (cli, configured) {
        (Some(p), _) => Ok(p.to_path_buf()),
        (None, Some(p)) => Ok(loaded.resolve(p)),
        (None, None) => Err(ConfigError::at("/out_dir", "no output directory (set out_dir or pass --out)")),
    }
}
