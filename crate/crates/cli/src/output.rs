//! CSV writing. Every file may start with one `#` line carrying the
//! generation time; everything after it depends only on the config.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::error::CliError;

#[derive(Debug, Clone)]
pub struct OutputDir {
    dir: PathBuf,
    stem: String,
    header_comment: bool,
}

impl OutputDir {
    pub fn new(dir: &Path, stem: &str, header_comment: bool) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)?;
        Ok(OutputDir {
            dir: dir.to_path_buf(),
            stem: stem.to_string(),
            header_comment,
        })
    }

    pub fn path(&self, suffix: &str) -> PathBuf {
        self.dir.join(format!("{}{suffix}.csv", self.stem))
    }

    /// Opens `<stem><suffix>.csv`, writes the optional timestamp line and
    /// any fixed `comments`, and returns a CSV writer positioned after them.
    pub fn create(
        &self,
        suffix: &str,
        command: &str,
        comments: &[String],
    ) -> Result<csv::Writer<BufWriter<File>>, CliError> {
        let mut out = BufWriter::new(File::create(self.path(suffix))?);
        if self.header_comment {
            let secs = SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0);
            writeln!(out, "# regq {command} generated_at={secs}")?;
        }
        for c in comments {
            writeln!(out, "# {c}")?;
        }
        Ok(csv::Writer::from_writer(out))
    }
}

pub fn fmt_f64(x: f64) -> String {
    if x.is_infinite() {
        if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        x.to_string()
    }
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}
