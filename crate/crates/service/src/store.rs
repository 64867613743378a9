//! Run records and their on-disk persistence: one JSON document per run id,
//! replaced atomically on every state transition.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::RwLock;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    Plan,
    Auction,
}

/// One submitted run. `result` is present iff `status` is `done`; `error`
/// iff it is `failed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRun {
    pub run_id: String,
    pub kind: RunKind,
    pub status: RunStatus,
    /// The validated request, frozen at submission.
    pub config: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Completed fraction while running.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub progress: Option<f64>,
    pub created_at_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completed_at_ms: Option<u64>,
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

/// Writes `bytes` to `path` through a temporary file in the same directory
/// and an atomic rename.
pub fn write_atomically(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// In-memory index of runs backed by `<dir>/<run_id>.json`.
pub struct RunStore {
    dir: PathBuf,
    runs: RwLock<HashMap<String, ScenarioRun>>,
}

impl RunStore {
    /// Loads every stored run. Runs left queued or running by a previous
    /// process are marked failed rather than executed a second time.
    pub fn open(dir: impl Into<PathBuf>) -> anyhow::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        let mut runs = HashMap::new();
        for entry in std::fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.extension().is_none_or(|e| e != "json") {
                continue;
            }
            let mut run: ScenarioRun = serde_json::from_slice(&std::fs::read(&path)?)?;
            if matches!(run.status, RunStatus::Queued | RunStatus::Running) {
                run.status = RunStatus::Failed;
                run.error = Some("interrupted by a service restart".into());
                run.progress = None;
                run.completed_at_ms = Some(now_ms());
                write_atomically(&path, &serde_json::to_vec_pretty(&run)?)?;
            }
            runs.insert(run.run_id.clone(), run);
        }
        Ok(Self { dir, runs: RwLock::new(runs) })
    }

    fn persist(&self, run: &ScenarioRun) -> anyhow::Result<()> {
        write_atomically(&self.dir.join(format!("{}.json", run.run_id)), &serde_json::to_vec_pretty(run)?)?;
        Ok(())
    }

    fn update(&self, id: &str, f: impl FnOnce(&mut ScenarioRun)) -> anyhow::Result<()> {
        let snapshot = {
            let mut runs = self.runs.write().expect("run index lock");
            let run = runs.get_mut(id).ok_or_else(|| anyhow::anyhow!("unknown run `{id}`"))?;
            f(run);
            run.clone()
        };
        self.persist(&snapshot)
    }

    /// Records a new queued run.
    pub fn create(&self, kind: RunKind, config: Value) -> anyhow::Result<ScenarioRun> {
        let run = ScenarioRun {
            run_id: uuid::Uuid::new_v4().to_string(),
            kind,
            status: RunStatus::Queued,
            config,
            result: None,
            error: None,
            progress: None,
            created_at_ms: now_ms(),
            completed_at_ms: None,
        };
        self.persist(&run)?;
        self.runs.write().expect("run index lock").insert(run.run_id.clone(), run.clone());
        Ok(run)
    }

    pub fn mark_running(&self, id: &str) -> anyhow::Result<()> {
        self.update(id, |r| {
            r.status = RunStatus::Running;
            r.progress = Some(0.0);
        })
    }

    /// Progress is kept in memory only; it is not worth a disk write.
    pub fn set_progress(&self, id: &str, fraction: f64) {
        if let Some(r) = self.runs.write().expect("run index lock").get_mut(id) {
            if r.status == RunStatus::Running {
                r.progress = Some(fraction);
            }
        }
    }

    pub fn finish(&self, id: &str, outcome: Result<Value, String>) -> anyhow::Result<()> {
        self.update(id, |r| {
            r.progress = None;
            r.completed_at_ms = Some(now_ms());
            match outcome {
                Ok(v) => {
                    r.status = RunStatus::Done;
                    r.result = Some(v);
                }
                Err(e) => {
                    r.status = RunStatus::Failed;
                    r.error = Some(e);
                }
            }
        })
    }

    pub fn get(&self, id: &str) -> Option<ScenarioRun> {
        self.runs.read().expect("run index lock").get(id).cloned()
    }

    /// All runs, oldest first.
    pub fn list(&self) -> Vec<ScenarioRun> {
        let mut v: Vec<ScenarioRun> = self.runs.read().expect("run index lock").values().cloned().collect();
        v.sort_by(|a, b| a.created_at_ms.cmp(&b.created_at_ms).then_with(|| a.run_id.cmp(&b.run_id)));
        v
    }
}
