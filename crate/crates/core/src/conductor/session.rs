//! Multi-round edit sessions persisted as an append-only JSON-lines journal
//! per session plus PNG artifacts.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::bundle::ModelBundle;
use super::execute::{apply_overrides, execute_plan, Overrides, RoundParams};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::instructor::{EditPlan, PlanRecord};
use crate::mask::Mask;

const JOURNAL: &str = "journal.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundStatus {
    Done,
    Failed,
}

/// Overrides as journaled; the mask is an artifact reference.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OverrideRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blur_radius: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredPlan {
    pub plan_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction: Option<String>,
    pub plan: PlanRecord,
}

/// One executed (or failed) edit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditRound {
    pub index: usize,
    pub status: RoundStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan_id: Option<String>,
    /// Plan as produced by the agent.
    pub plan: PlanRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overrides: Option<OverrideRecord>,
    /// Plan actually executed, overrides applied.
    pub effective_plan: PlanRecord,
    pub params: RoundParams,
    pub source: String,
    pub source_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result_digest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<String>,
    pub denoiser_calls: usize,
    pub timing_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub completed_at: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum JournalEntry {
    Created {
        session_id: String,
        created_at: String,
        source: String,
        source_digest: String,
    },
    Plan(StoredPlan),
    Round(Box<EditRound>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditSession {
    pub id: String,
    pub created_at: String,
    pub source: String,
    pub source_digest: String,
    pub plans: Vec<StoredPlan>,
    pub rounds: Vec<EditRound>,
}

impl EditSession {
    /// Artifact holding the image the next round edits.
    pub fn current_ref(&self) -> &str {
        self.rounds
            .iter()
            .rev()
            .find_map(|r| r.result.as_deref())
            .unwrap_or(&self.source)
    }
}

/// Directory-backed store. Rounds within one session are serialized;
/// different sessions proceed independently.
pub struct SessionStore {
    root: PathBuf,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

fn valid_name(s: &str) -> bool {
    !s.is_empty()
        && s.len() <= 128
        && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.')
        && !s.starts_with('.')
}

impl SessionStore {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(root.join("sessions"))?;
        fs::create_dir_all(root.join("artifacts"))?;
        Ok(Self {
            root,
            locks: Mutex::new(HashMap::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn lock_for(&self, id: &str) -> Arc<Mutex<()>> {
        let mut map = self.locks.lock().expect("lock table poisoned");
        map.entry(id.to_string()).or_default().clone()
    }

    fn session_dir(&self, id: &str) -> Result<PathBuf> {
        if !valid_name(id) {
            return Err(Error::NotFound(format!("session {id:?}")));
        }
        let dir = self.root.join("sessions").join(id);
        if !dir.join(JOURNAL).is_file() {
            return Err(Error::NotFound(format!("session {id:?}")));
        }
        Ok(dir)
    }

    fn append(&self, id: &str, entry: &JournalEntry) -> Result<()> {
        let path = self.root.join("sessions").join(id).join(JOURNAL);
        let mut line = serde_json::to_vec(entry)?;
        line.push(b'\n');
        let mut f = OpenOptions::new().create(true).append(true).open(path)?;
        f.write_all(&line)?;
        f.sync_data()?;
        Ok(())
    }

    pub fn artifact_path(&self, name: &str) -> Result<PathBuf> {
        if !valid_name(name) {
            return Err(Error::NotFound(format!("artifact {name:?}")));
        }
        let p = self.root.join("artifacts").join(name);
        if !p.is_file() {
            return Err(Error::NotFound(format!("artifact {name:?}")));
        }
        Ok(p)
    }

    pub fn read_artifact(&self, name: &str) -> Result<Vec<u8>> {
        Ok(fs::read(self.artifact_path(name)?)?)
    }

    pub fn load_image(&self, name: &str) -> Result<Image> {
        Image::load_png(self.artifact_path(name)?)
    }

    pub fn load_mask(&self, name: &str) -> Result<Mask> {
        Mask::load_png(self.artifact_path(name)?)
    }

    fn write_artifact(&self, name: &str, png: &[u8]) -> Result<String> {
        debug_assert!(valid_name(name));
        fs::write(self.root.join("artifacts").join(name), png)?;
        Ok(name.to_string())
    }

    pub fn create(&self, image: &Image) -> Result<EditSession> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let image = image.quantized();
        fs::create_dir_all(self.root.join("sessions").join(&id))?;
        let source = self.write_artifact(&format!("{id}-source.png"), &image.encode_png()?)?;
        let entry = JournalEntry::Created {
            session_id: id.clone(),
            created_at: chrono::Utc::now().to_rfc3339(),
            source,
            source_digest: image.digest(),
        };
        self.append(&id, &entry)?;
        self.get(&id)
    }

    pub fn get(&self, id: &str) -> Result<EditSession> {
        let dir = self.session_dir(id)?;
        let text = fs::read_to_string(dir.join(JOURNAL))?;
        let mut session: Option<EditSession> = None;
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let entry: JournalEntry = serde_json::from_str(line)
                .map_err(|e| Error::load(dir.join(JOURNAL), format!("line {}: {e}", n + 1)))?;
            match (entry, session.as_mut()) {
                (JournalEntry::Created { session_id, created_at, source, source_digest }, None) => {
                    session = Some(EditSession {
                        id: session_id,
                        created_at,
                        source,
                        source_digest,
                        plans: Vec::new(),
                        rounds: Vec::new(),
                    })
                }
                (JournalEntry::Plan(p), Some(s)) => s.plans.push(p),
                (JournalEntry::Round(r), Some(s)) => s.rounds.push(*r),
                _ => return Err(Error::load(dir.join(JOURNAL), format!("line {}: out-of-order entry", n + 1))),
            }
        }
        session.ok_or_else(|| Error::load(dir.join(JOURNAL), "journal is empty"))
    }

    /// All sessions, oldest first.
    pub fn list(&self) -> Result<Vec<EditSession>> {
        let mut out = Vec::new();
        for entry in fs::read_dir(self.root.join("sessions"))? {
            let name = entry?.file_name().to_string_lossy().to_string();
            if let Ok(s) = self.get(&name) {
                out.push(s);
            }
        }
        out.sort_by(|a, b| a.created_at.cmp(&b.created_at).then(a.id.cmp(&b.id)));
        Ok(out)
    }

    pub fn current_image(&self, session: &EditSession) -> Result<Image> {
        self.load_image(session.current_ref())
    }

    pub fn add_plan(&self, id: &str, plan: &EditPlan, instruction: Option<&str>) -> Result<StoredPlan> {
        let lock = self.lock_for(id);
        let _guard = lock.lock().expect("session lock poisoned");
        let session = self.get(id)?;
        let plan_id = format!("p{}", session.plans.len() + 1);
        let mask_ref = self.write_artifact(&format!("{id}-{plan_id}-mask.png"), &plan.mask.encode_png()?)?;
        let stored = StoredPlan {
            plan_id,
            instruction: instruction.map(String::from),
            plan: plan.to_record(mask_ref),
        };
        self.append(id, &JournalEntry::Plan(stored.clone()))?;
        Ok(stored)
    }

    pub fn plan(&self, id: &str, plan_id: &str) -> Result<EditPlan> {
        let session = self.get(id)?;
        let stored = session
            .plans
            .iter()
            .find(|p| p.plan_id == plan_id)
            .ok_or_else(|| Error::NotFound(format!("plan {plan_id:?} in session {id:?}")))?;
        EditPlan::from_record(&stored.plan, Some(&self.root.join("artifacts")))
    }

    /// Apply overrides, execute against the session's current image and
    /// journal the round. Validation failures leave the session untouched;
    /// execution failures are journaled as failed rounds and returned.
    pub fn run_round(
        &self,
        id: &str,
        bundle: &ModelBundle,
        plan: &EditPlan,
        plan_id: Option<&str>,
        overrides: &Overrides,
        params: &RoundParams,
    ) -> Result<EditRound> {
        let lock = self.lock_for(id);
        let _guard = lock.lock().expect("session lock poisoned");
        let session = self.get(id)?;
        let source = session.current_ref().to_string();
        let current = self.load_image(&source)?;
        params.validate()?;
        let (effective, eparams) = apply_overrides(plan, params, overrides, current.dims())?;
        effective.validate_for(&current).map_err(|e| Error::Validation(e.to_string()))?;

        let k = session.rounds.len() + 1;
        let prefix = format!("{id}-r{k}");
        let agent_mask = self.write_artifact(&format!("{prefix}-agent-mask.png"), &plan.mask.encode_png()?)?;
        let eff_mask = self.write_artifact(&format!("{prefix}-mask.png"), &effective.mask.encode_png()?)?;
        let override_record = if overrides.is_empty() {
            None
        } else {
            Some(OverrideRecord {
                mask_ref: match &overrides.mask {
                    Some(m) => Some(self.write_artifact(&format!("{prefix}-override-mask.png"), &m.encode_png()?)?),
                    None => None,
                },
                caption: overrides.caption.clone(),
                w: overrides.w,
                blur_radius: overrides.blur_radius,
            })
        };
        let mut round = EditRound {
            index: k,
            status: RoundStatus::Failed,
            plan_id: plan_id.map(String::from),
            plan: plan.to_record(agent_mask),
            overrides: override_record,
            effective_plan: effective.to_record(eff_mask),
            params: eparams,
            source_digest: current.digest(),
            source,
            result: None,
            result_digest: None,
            raw: None,
            denoiser_calls: 0,
            timing_ms: 0.0,
            error: None,
            completed_at: String::new(),
        };
        match execute_plan(bundle, &current, &effective, &eparams) {
            Ok(exec) => {
                round.status = RoundStatus::Done;
                round.result = Some(self.write_artifact(&format!("{prefix}-result.png"), &exec.result.encode_png()?)?);
                round.result_digest = Some(exec.result.digest());
                round.raw = Some(self.write_artifact(&format!("{prefix}-raw.png"), &exec.raw.encode_png()?)?);
                round.denoiser_calls = exec.denoiser_calls;
                round.timing_ms = exec.timing_ms;
            }
            Err(e) => {
                log::error!("round {k} of session {id} failed: {e}");
                round.error = Some(e.to_string());
            }
        }
        round.completed_at = chrono::Utc::now().to_rfc3339();
        self.append(id, &JournalEntry::Round(Box::new(round.clone())))?;
        Ok(round)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conductor::BundleConfig;
    use crate::instructor::{EditInstruction, Instructor};
    use crate::scene::{Color, SceneGraph, SceneObject, ShapeKind};

    fn scene_image() -> Image {
        SceneGraph {
            height: 16,
            width: 16,
            background: Color::White,
            objects: vec![
                SceneObject { kind: ShapeKind::Circle, color: Color::Red, cy: 4, cx: 4, size: 3 },
                SceneObject { kind: ShapeKind::Square, color: Color::Blue, cy: 11, cx: 11, size: 2 },
            ],
        }
        .render()
    }

    #[test]
    fn create_get_missing() {
        let dir = tempfile::tempdir().unwrap();
        let store = SessionStore::open(dir.path()).unwrap();
        let s = store.create(&scene_image()).unwrap();
        assert!(s.rounds.is_empty());
        assert_eq!(store.get(&s.id).unwrap(), s);
        assert!(matches!(store.get("missing"), Err(Error::NotFound(_))));
        assert!(matches!(store.get("../etc"), Err(Error::NotFound(_))));
        assert_eq!(store.list().unwrap().len(), 1);
    }

    #[test]
    fn rounds_chain_on_previous_results() {
        let dir = tempfile::tempdir().unwrap();
        let store = SessionStore::open(dir.path()).unwrap();
        let bundle = ModelBundle::untrained(BundleConfig::default(), 0).unwrap();
        let s = store.create(&scene_image()).unwrap();
        let params = RoundParams { steps: 3, blur_radius: 0, ..RoundParams::default() };
        let ins = Instructor::offline();
        for text in ["remove the red circle", "remove the blue square"] {
            let current = store.current_image(&store.get(&s.id).unwrap()).unwrap();
            let plan = ins.build_plan(&EditInstruction::new(text).unwrap(), &current).unwrap();
            let stored = store.add_plan(&s.id, &plan, Some(text)).unwrap();
            let reloaded = store.plan(&s.id, &stored.plan_id).unwrap();
            assert_eq!(reloaded, plan);
            let r = store
                .run_round(&s.id, &bundle, &plan, Some(&stored.plan_id), &Overrides::default(), &params)
                .unwrap();
            assert_eq!(r.status, RoundStatus::Done);
        }
        let s = store.get(&s.id).unwrap();
        assert_eq!(s.rounds.len(), 2);
        assert_eq!(s.rounds[0].source_digest, s.source_digest);
        assert_eq!(Some(&s.rounds[1].source_digest), s.rounds[0].result_digest.as_ref());
        let r1 = store.load_image(s.rounds[0].result.as_ref().unwrap()).unwrap();
        assert_eq!(&r1.digest(), s.rounds[0].result_digest.as_ref().unwrap());
    }

    #[test]
    fn invalid_override_leaves_session_untouched() {
        let dir = tempfile::tempdir().unwrap();
        let store = SessionStore::open(dir.path()).unwrap();
        let bundle = ModelBundle::untrained(BundleConfig::default(), 0).unwrap();
        let s = store.create(&scene_image()).unwrap();
        let plan = Instructor::offline()
            .build_plan(&EditInstruction::new("remove the red circle").unwrap(), &scene_image())
            .unwrap();
        let ov = Overrides { w: Some(2.0), ..Overrides::default() };
        let err = store.run_round(&s.id, &bundle, &plan, None, &ov, &RoundParams::default());
        assert!(matches!(err, Err(Error::Validation(_))));
        assert_eq!(store.get(&s.id).unwrap(), s);
    }
}
