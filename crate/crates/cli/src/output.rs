use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{CliError, CliResult};

/// Writes result files into one directory and records them, in order, in
/// `manifest.json`.
pub struct OutputDir {
    dir: PathBuf,
    files: Vec<String>,
}

#[derive(Serialize)]
struct Manifest<'a, A: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    arguments: &'a A,
    outputs: &'a [String],
}

impl OutputDir {
    pub fn create(dir: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    fn record(&mut self, name: &str, bytes: &[u8]) -> CliResult<PathBuf> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.files.push(name.to_string());
        Ok(path)
    }

    /// Records a file written by other means.
    pub fn note(&mut self, name: &str) {
        self.files.push(name.to_string());
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<PathBuf> {
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))? + "\n";
        self.record(name, text.as_bytes())
    }

    pub fn text(&mut self, name: &str, text: &str) -> CliResult<PathBuf> {
        self.record(name, text.as_bytes())
    }

    pub fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> CliResult<PathBuf> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let to_err = |e: csv::Error| CliError::Config(format!("{name}: {e}"));
        w.write_record(header).map_err(to_err)?;
        for row in rows {
            w.write_record(row).map_err(to_err)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Config(format!("{name}: {e}")))?;
        self.record(name, &bytes)
    }

    pub fn finish<A: Serialize>(mut self, command: &str, seed: u64, arguments: &A) -> CliResult<Vec<String>> {
        let files = std::mem::take(&mut self.files);
        let manifest = Manifest {
            tool: "trajgp",
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed,
            arguments,
            outputs: &files,
        };
        self.json("manifest.json", &manifest)?;
        Ok(files)
    }
}

pub fn num(x: f64) -> String {
    x.to_string()
}
