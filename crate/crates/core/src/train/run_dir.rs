use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One line of `metrics.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold: Option<usize>,
    pub epoch: usize,
    pub train_loss: f64,
    pub train_f1: f64,
    pub val_loss: f64,
    pub val_f1: f64,
}

/// `config.json`, `metrics.jsonl` and the best checkpoint of a run.
/// A fold view shares the directory, tags its metric lines and writes
/// its own checkpoint file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunDir {
    path: PathBuf,
    fold: Option<usize>,
}

impl RunDir {
    pub fn create(path: &Path) -> Result<Self> {
        std::fs::create_dir_all(path)?;
        Ok(Self {
            path: path.to_path_buf(),
            fold: None,
        })
    }

    pub fn for_fold(&self, fold: usize) -> Self {
        Self {
            path: self.path.clone(),
            fold: Some(fold),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn fold(&self) -> Option<usize> {
        self.fold
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.path.join("metrics.jsonl")
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        match self.fold {
            None => self.path.join("best.ckpt"),
            Some(f) => self.path.join(format!("fold{f}.best.ckpt")),
        }
    }

    pub fn write_config<S: Serialize>(&self, config: &S) -> Result<()> {
        std::fs::write(
            self.path.join("config.json"),
            serde_json::to_string_pretty(config)?,
        )?;
        Ok(())
    }

    /// Writes `name` as pretty JSON inside the run directory.
    pub fn write_json<S: Serialize>(&self, name: &str, value: &S) -> Result<PathBuf> {
        let p = self.path.join(name);
        std::fs::write(&p, serde_json::to_string_pretty(value)?)?;
        Ok(p)
    }

    pub fn append_metrics(&self, m: &EpochMetrics) -> Result<()> {
        let mut line = serde_json::to_string(&EpochMetrics {
            fold: self.fold,
            ..m.clone()
        })?;
        line.push('\n');
        std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.metrics_path())?
            .write_all(line.as_bytes())?;
        Ok(())
    }

    pub fn read_metrics(&self) -> Result<Vec<EpochMetrics>> {
        let text = std::fs::read_to_string(self.metrics_path())?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| Ok(serde_json::from_str(l)?))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_lines_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::create(&dir.path().join("r")).unwrap();
        let m = EpochMetrics {
            fold: None,
            epoch: 1,
            train_loss: 1.5,
            train_f1: 0.25,
            val_loss: 1.4,
            val_f1: 0.3,
        };
        run.append_metrics(&m).unwrap();
        run.for_fold(3).append_metrics(&m).unwrap();
        let back = run.read_metrics().unwrap();
        assert_eq!(back[0], m);
        assert_eq!(back[1].fold, Some(3));
        let first = std::fs::read_to_string(run.metrics_path()).unwrap();
        assert!(!first.lines().next().unwrap().contains("fold"));
        assert_ne!(run.checkpoint_path(), run.for_fold(3).checkpoint_path());
    }
}
