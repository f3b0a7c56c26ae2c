use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use tumorseg::Error;

/// Flat `key=value` record of one invocation.
#[derive(Debug, Clone)]
pub struct RunManifest {
    command: String,
    started: u64,
    entries: Vec<(String, String)>,
    artifacts: Vec<PathBuf>,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl RunManifest {
    pub fn start(command: &str) -> Self {
        Self {
            command: command.to_string(),
            started: unix_now(),
            entries: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn artifact(&mut self, path: impl Into<PathBuf>) {
        self.artifacts.push(path.into());
    }

    pub fn render(&self) -> String {
        let mut out = format!("command={}\n", self.command);
        for (k, v) in &self.entries {
            writeln!(out, "{k}={v}").unwrap();
        }
        for (i, a) in self.artifacts.iter().enumerate() {
            writeln!(out, "artifact.{i}={}", a.display()).unwrap();
        }
        writeln!(out, "started_at={}", self.started).unwrap();
        writeln!(out, "finished_at={}", unix_now()).unwrap();
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), Error> {
        fs::write(path, self.render()).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Manifest location for a file artifact: `<file>.manifest`.
pub fn beside(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".manifest");
    PathBuf::from(name)
}

/// Manifest location for a directory artifact.
pub fn inside(dir: &Path) -> PathBuf {
    dir.join("manifest.txt")
}
