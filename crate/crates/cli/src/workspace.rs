//! Workspace layout, overwrite protection, and the single-writer lock.

use std::fs::OpenOptions;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};

pub struct Workspace {
    pub dir: PathBuf,
    pub force: bool,
}

impl Workspace {
    pub fn new(dir: PathBuf, force: bool) -> anyhow::Result<Self> {
        std::fs::create_dir_all(&dir)
            .with_context(|| format!("cannot create workspace {}", dir.display()))?;
        Ok(Workspace { dir, force })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn dataset(&self) -> PathBuf {
        self.path("dataset.bin")
    }
    pub fn ingest_stats(&self) -> PathBuf {
        self.path("ingest_stats.csv")
    }
    pub fn community_map(&self) -> PathBuf {
        self.path("community_map.csv")
    }
    pub fn community_meta(&self) -> PathBuf {
        self.path("community_map.json")
    }
    pub fn community_sweep(&self) -> PathBuf {
        self.path("community_sweep.csv")
    }
    pub fn community_sizes(&self) -> PathBuf {
        self.path("community_sizes.csv")
    }
    pub fn checkpoints_dir(&self) -> PathBuf {
        self.path("checkpoints")
    }
    pub fn loss_trace(&self) -> PathBuf {
        self.path("loss_trace.csv")
    }
    pub fn bubble_report(&self) -> PathBuf {
        self.path("bubble_report.csv")
    }
    pub fn categories_train(&self) -> PathBuf {
        self.path("categories_train.csv")
    }
    pub fn self_vs_random(&self) -> PathBuf {
        self.path("self_vs_random.json")
    }
    pub fn influence_matrix(&self) -> PathBuf {
        self.path("influence_matrix.csv")
    }
    pub fn influence_heatmap(&self) -> PathBuf {
        self.path("influence_heatmap.csv")
    }
    pub fn modification_report(&self) -> PathBuf {
        self.path("modification_report.csv")
    }
    pub fn modification_summary(&self) -> PathBuf {
        self.path("modification_summary.csv")
    }
    pub fn modification_summary_json(&self) -> PathBuf {
        self.path("modification_summary.json")
    }
    pub fn manifest(&self) -> PathBuf {
        self.path("manifest.json")
    }

    /// Refuse to clobber a stage's outputs unless --force was given.
    pub fn guard_outputs(&self, outputs: &[PathBuf]) -> anyhow::Result<()> {
        if self.force {
            return Ok(());
        }
        for path in outputs {
            if path.exists() {
                bail!(
                    "refusing to overwrite {} (pass --force to replace it)",
                    path.display()
                );
            }
        }
        Ok(())
    }

    /// Fail with a stage-naming message when an upstream artifact is absent.
    pub fn require(&self, path: &Path, produced_by: &str) -> anyhow::Result<()> {
        if !path.exists() {
            bail!(
                "{} not found: run `recdiv {produced_by}` first",
                path.display()
            );
        }
        Ok(())
    }

    pub fn checkpoint_files(&self) -> anyhow::Result<Vec<PathBuf>> {
        let dir = self.checkpoints_dir();
        let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
            .with_context(|| format!("cannot list {}", dir.display()))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().map(|e| e == "ckpt").unwrap_or(false))
            .collect();
        files.sort();
        Ok(files)
    }
}

/// Exclusive advisory lock over the workspace directory, held for the
/// lifetime of one command.
pub struct WorkspaceLock {
    path: PathBuf,
}

impl WorkspaceLock {
    pub fn acquire(workspace: &Workspace) -> anyhow::Result<Self> {
        let path = workspace.path("workspace.lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(WorkspaceLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => bail!(
                "workspace is locked by another command ({} exists; delete it if stale)",
                path.display()
            ),
            Err(e) => Err(e).with_context(|| format!("cannot create lock {}", path.display())),
        }
    }
}

impl Drop for WorkspaceLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}
