use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use voxplan::harness::sim::TickRecord;

/// Output directory writer.
pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn text(&self, name: &str, body: &str) -> Result<()> {
        let p = self.path(name);
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(&p, body).with_context(|| format!("writing {}", p.display()))?;
        log::info!("wrote {}", p.display());
        Ok(())
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut body = serde_json::to_string_pretty(value)?;
        body.push('\n');
        self.text(name, &body)
    }

    pub fn file(&self, name: &str) -> Result<BufWriter<File>> {
        let p = self.path(name);
        log::info!("writing {}", p.display());
        Ok(BufWriter::new(File::create(&p).with_context(|| format!("creating {}", p.display()))?))
    }

    /// One JSON line per optimization attempt.
    pub fn attempts(&self, name: &str, ticks: &[TickRecord]) -> Result<()> {
        let mut w = self.file(name)?;
        for tick in ticks {
            for o in &tick.outcomes {
                for (i, a) in o.attempts.iter().enumerate() {
                    let line = serde_json::json!({
                        "t": tick.t,
                        "behavior": o.behavior,
                        "attempt": i,
                        "record": a,
                    });
                    writeln!(w, "{line}")?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}
