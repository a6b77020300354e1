use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

/// Output directory; created on construction.
pub struct Out {
    pub dir: PathBuf,
}

impl Out {
    pub fn create(dir: PathBuf) -> Result<Out> {
        fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
        Ok(Out { dir })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn writer(&self, name: &str) -> Result<BufWriter<File>> {
        let p = self.path(name);
        let f = File::create(&p).with_context(|| format!("cannot create {}", p.display()))?;
        Ok(BufWriter::new(f))
    }

    /// Runs `f` on a buffered writer for `name` and flushes it.
    pub fn write_with<F>(&self, name: &str, f: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> excirec_core::Result<()>,
    {
        let mut w = self.writer(name)?;
        f(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        fs::write(self.path(name), s)?;
        Ok(())
    }
}

/// Reads a spectrum from CSV: the last field of every line that parses as a
/// number; header and blank lines are skipped.
pub fn read_spectrum_csv(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let last = line.rsplit(',').next().unwrap_or("").trim();
        match last.parse::<f64>() {
            Ok(v) => out.push(v),
            Err(_) if out.is_empty() => continue,
            Err(_) => {
                return Err(excirec_core::Error::InvalidInput(format!(
                    "{}:{}: not a number: {last:?}",
                    path.display(),
                    i + 1
                ))
                .into())
            }
        }
    }
    if out.is_empty() {
        return Err(excirec_core::Error::InvalidInput(format!("{}: no values", path.display())).into());
    }
    Ok(out)
}

pub fn write_vector_csv<W: Write>(w: &mut W, header: &str, values: &[f64]) -> std::io::Result<()> {
    writeln!(w, "index,{header}")?;
    for (i, v) in values.iter().enumerate() {
        writeln!(w, "{i},{v}")?;
    }
    Ok(())
}
