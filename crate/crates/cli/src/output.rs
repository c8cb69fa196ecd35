use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

/// Names and headers for the files of one command invocation:
/// `<command>-<seed>-<timestamp>[-<part>].<ext>`.
pub struct Outputs {
    dir: PathBuf,
    stem: String,
    seed: u64,
    config_hash: String,
    written: Vec<PathBuf>,
}

impl Outputs {
    pub fn new(
        dir: &Path,
        command: &str,
        seed: u64,
        config_hash: String,
        stamp: Option<&str>,
    ) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let stamp = match stamp {
            Some(s) => s.to_string(),
            None => SystemTime::now()
                .duration_since(UNIX_EPOCH)?
                .as_secs()
                .to_string(),
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            stem: format!("{command}-{seed}-{stamp}"),
            seed,
            config_hash,
            written: Vec::new(),
        })
    }

    fn path(&self, part: Option<&str>, ext: &str) -> PathBuf {
        match part {
            Some(p) => self.dir.join(format!("{}-{p}.{ext}", self.stem)),
            None => self.dir.join(format!("{}.{ext}", self.stem)),
        }
    }

    /// Opens a CSV file whose first line is `# seed=<seed>, config_hash=<hash>`.
    pub fn csv(&mut self, part: Option<&str>) -> Result<csv::Writer<BufWriter<File>>> {
        let path = self.path(part, "csv");
        let mut f = BufWriter::new(
            File::create(&path).with_context(|| format!("creating {}", path.display()))?,
        );
        writeln!(f, "# seed={}, config_hash={}", self.seed, self.config_hash)?;
        self.written.push(path);
        Ok(csv::Writer::from_writer(f))
    }

    /// Raw writer with the same header line, for library CSV writers.
    pub fn raw_csv(&mut self, part: Option<&str>) -> Result<BufWriter<File>> {
        let path = self.path(part, "csv");
        let mut f = BufWriter::new(
            File::create(&path).with_context(|| format!("creating {}", path.display()))?,
        );
        writeln!(f, "# seed={}, config_hash={}", self.seed, self.config_hash)?;
        self.written.push(path);
        Ok(f)
    }

    /// Writes `{"seed", "config_hash", "result"}`.
    pub fn json<T: Serialize>(&mut self, part: Option<&str>, result: &T) -> Result<()> {
        let path = self.path(part, "json");
        let body = serde_json::json!({
            "seed": self.seed,
            "config_hash": self.config_hash,
            "result": result,
        });
        std::fs::write(&path, serde_json::to_string_pretty(&body)?)?;
        self.written.push(path);
        Ok(())
    }

    /// Writes the manifest last and returns every path written.
    pub fn finish(
        mut self,
        command: &str,
        config_path: Option<&Path>,
        config: Value,
    ) -> Result<Vec<PathBuf>> {
        let path = self.dir.join(format!("{}.manifest.json", self.stem));
        let body = serde_json::json!({
            "manifest_version": 1,
            "command": command,
            "config_path": config_path.map(|p| p.display().to_string()),
            "seed": self.seed,
            "output_dir": self.dir.display().to_string(),
            "config_hash": self.config_hash,
            "config": config,
            "outputs": self.written.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        });
        std::fs::write(&path, serde_json::to_string_pretty(&body)?)?;
        self.written.push(path);
        Ok(self.written)
    }
}
