use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use graphtone::Error;

/// Bad input detected before any work is done; exits with status 1.
#[derive(Debug)]
pub struct Invalid(pub String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

pub fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

/// 1 for validation failures, 2 for everything else.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Invalid>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Usage(_)
                | Error::Config(_)
                | Error::Dimension { .. }
                | Error::TooSmall { .. }
                | Error::EmptyMap
                | Error::Ingest { .. } => 1,
                _ => 2,
            };
        }
    }
    2
}

/// Creates the output directory (after validation has passed).
pub fn create_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

pub fn write(out: &Path, name: impl AsRef<Path>, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
    let path = out.join(name);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

pub fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(invalid(format!("{what} {} does not exist", path.display())))
    }
}

pub fn require_dir(path: &Path, what: &str) -> Result<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(invalid(format!("{what} {} is not a directory", path.display())))
    }
}

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "tif", "tiff"];

/// Image files of `dir` keyed by file stem, in sorted order.
pub fn images_by_stem(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .unwrap_or_default();
        if !path.is_file() || !IMAGE_EXTENSIONS.contains(&ext.as_str()) {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            if let Some(prev) = out.insert(stem.to_string(), path.clone()) {
                log::warn!("{} and {} share a stem; using the latter", prev.display(), path.display());
            }
        }
    }
    Ok(out)
}

/// Parses `WxH`.
pub fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WIDTHxHEIGHT, got `{s}`"))?;
    let w: usize = w.trim().parse().map_err(|e| format!("width: {e}"))?;
    let h: usize = h.trim().parse().map_err(|e| format!("height: {e}"))?;
    if w == 0 || h == 0 {
        return Err("size must be positive".into());
    }
    Ok((w, h))
}

/// File-name-safe class name of a label.
pub fn class_name(label: u8) -> &'static str {
    graphtone::CoarseClass::from_index(label).map_or("unknown", graphtone::CoarseClass::name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes() {
        assert_eq!(parse_size("100x100"), Ok((100, 100)));
        assert_eq!(parse_size("64X32"), Ok((64, 32)));
        assert!(parse_size("100").is_err());
        assert!(parse_size("0x4").is_err());
    }

    #[test]
    fn classification() {
        assert_eq!(exit_code(&invalid("x")), 1);
        assert_eq!(exit_code(&Error::Usage("x".into()).into()), 1);
        assert_eq!(exit_code(&Error::Checkpoint("x".into()).into()), 2);
        assert_eq!(exit_code(&anyhow::anyhow!("boom")), 2);
        let wrapped = anyhow::Error::from(Error::Config("x".into())).context("loading");
        assert_eq!(exit_code(&wrapped), 1);
    }
}
