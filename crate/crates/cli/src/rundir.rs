//! Run directories and their bookkeeping files.

use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use artfield::Error;
use serde::Serialize;

use crate::{CliError, CliResult};

/// Environment variable naming the default root for run directories.
pub const RUNS_ENV: &str = "ARTFIELD_RUNS";
pub const DEFAULT_ROOT: &str = "runs";

/// `explicit` when given, otherwise a fresh `<root>/<command>-<UTC timestamp>`.
pub fn create(command: &str, explicit: Option<&Path>, root: Option<&Path>) -> CliResult<PathBuf> {
    let dir = match explicit {
        Some(p) => p.to_path_buf(),
        None => {
            let root = root.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(DEFAULT_ROOT));
            let stamp = chrono::DateTime::<chrono::Utc>::from(std::time::SystemTime::now()).format("%Y%m%dT%H%M%S%.3fZ");
            let base = root.join(format!("{command}-{stamp}"));
            let mut dir = base.clone();
            let mut n = 1;
            while dir.exists() {
                dir = PathBuf::from(format!("{}-{n}", base.display()));
                n += 1;
            }
            dir
        }
    };
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Core(Error::json(path, e)))?;
    fs::write(path, text + "\n").map_err(|e| CliError::Core(Error::io(path, e)))
}

/// Copies everything written to it into a file and standard error.
pub struct Tee {
    file: File,
}

impl Tee {
    pub fn create(path: &Path) -> CliResult<Self> {
        Ok(Self {
            file: File::create(path).map_err(|e| Error::io(path, e))?,
        })
    }
}

impl Write for Tee {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.file.write_all(buf)?;
        io::stderr().write_all(buf)?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        self.file.flush()?;
        io::stderr().flush()
    }
}
