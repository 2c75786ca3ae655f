use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use tempfile::NamedTempFile;

use crate::settings::Settings;

/// Writes an artifact atomically: the content goes to a temporary file in
/// the target directory, which is then renamed over `path`.
pub fn write_atomic<F>(path: &Path, fill: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> std::io::Result<()>,
{
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let tmp = NamedTempFile::new_in(dir).with_context(|| format!("creating temp file in {}", dir.display()))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        fill(&mut w).with_context(|| format!("writing {}", path.display()))?;
        w.flush()?;
    }
    tmp.persist(path)
        .with_context(|| format!("moving output into {}", path.display()))?;
    Ok(())
}

/// Comment lines opening every CSV this tool writes.
pub fn header(settings: &Settings, extra: &[(&str, &str)]) -> String {
    let mut h = format!(
        "# codeattn {} seed={} config={}\n",
        env!("CARGO_PKG_VERSION"),
        settings.seed(),
        settings.hash()
    );
    for (k, v) in extra {
        h.push_str(&format!("# {k}={v}\n"));
    }
    h
}

/// Writes `header` followed by the body produced by `fill`.
pub fn write_csv<F>(dir: &Path, name: &str, header: &str, fill: F) -> Result<PathBuf>
where
    F: FnOnce(&mut dyn Write) -> std::io::Result<()>,
{
    let path = dir.join(name);
    write_atomic(&path, |w| {
        w.write_all(header.as_bytes())?;
        fill(w)
    })?;
    log::info!("wrote {}", path.display());
    Ok(path)
}
