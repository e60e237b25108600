//! TST case records and follow-up reminders.
//!
//! Cases live in `records.jsonl` inside the store directory: one JSON object
//! per line, appended on every mutation, the last line for a `case_id` wins.
//! Fields this version does not know about are kept and written back.
//!
//! Binary artifacts go to `artifacts/<h0h1>/<sha256>.<ext>` next to the record
//! file, where `<sha256>` is the hex digest of the file contents and `<h0h1>`
//! its first two characters.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chord::ChordMeasurement;
use crate::interpret::{Assessment, Questionnaire};

pub const RECORD_FILE: &str = "records.jsonl";
pub const ARTIFACT_DIR: &str = "artifacts";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt record at line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error("unknown case {0}")]
    CaseNotFound(String),
    #[error("unknown capture {capture_id} in case {case_id}")]
    CaptureNotFound { case_id: String, capture_id: String },
    #[error("unknown reminder {0}")]
    ReminderNotFound(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("invalid read window [{start_hours}, {end_hours}] h")]
    InvalidWindow { start_hours: f64, end_hours: f64 },
    #[error("record invariant violated: {0}")]
    Invariant(String),
}

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> StoreError {
    let context = context.into();
    move |source| StoreError::Io { context, source }
}

/// 128-bit random identifier, lowercase hex.
pub fn new_id() -> String {
    format!("{:032x}", rand::random::<u128>())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseStatus {
    AwaitingRead,
    Measured,
    Assessed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaptureState {
    Pending,
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaptureDecision {
    Accept,
    Retake,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureArtifact {
    pub capture_id: String,
    pub captured_at: DateTime<Utc>,
    pub image_path: String,
    pub depth_path: Option<String>,
    pub mask_path: Option<String>,
    pub measurement: Option<ChordMeasurement>,
    pub state: CaptureState,
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl CaptureArtifact {
    pub fn new(image_path: impl Into<String>, captured_at: DateTime<Utc>) -> Self {
        Self {
            capture_id: new_id(),
            captured_at,
            image_path: image_path.into(),
            depth_path: None,
            mask_path: None,
            measurement: None,
            state: CaptureState::Pending,
            extra: Default::default(),
        }
    }

    pub fn accepted(&self) -> bool {
        self.state == CaptureState::Accepted
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reminder {
    pub reminder_id: String,
    pub case_id: String,
    pub window_start: DateTime<Utc>,
    pub window_end: DateTime<Utc>,
    pub acknowledged: bool,
}

/// Read window relative to administration, in hours.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadWindow {
    pub start_hours: f64,
    pub end_hours: f64,
}

impl Default for ReadWindow {
    fn default() -> Self {
        Self {
            start_hours: 48.0,
            end_hours: 72.0,
        }
    }
}

fn hours(h: f64) -> Duration {
    Duration::milliseconds((h * 3_600_000.0).round() as i64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TstCase {
    pub case_id: String,
    pub created_at: DateTime<Utc>,
    pub administered_at: DateTime<Utc>,
    pub questionnaire: Option<Questionnaire>,
    pub captures: Vec<CaptureArtifact>,
    pub assessment: Option<Assessment>,
    pub status: CaseStatus,
    #[serde(default)]
    pub reminders: Vec<Reminder>,
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl TstCase {
    pub fn new(administered_at: DateTime<Utc>, created_at: DateTime<Utc>) -> Self {
        Self {
            case_id: new_id(),
            created_at,
            administered_at,
            questionnaire: None,
            captures: Vec::new(),
            assessment: None,
            status: CaseStatus::AwaitingRead,
            reminders: Vec::new(),
            extra: Default::default(),
        }
    }

    pub fn accepted_capture(&self) -> Option<&CaptureArtifact> {
        self.captures.iter().find(|c| c.accepted())
    }

    pub fn capture(&self, capture_id: &str) -> Option<&CaptureArtifact> {
        self.captures.iter().find(|c| c.capture_id == capture_id)
    }

    /// Recomputes `status` from the assessment and accepted capture.
    pub fn refresh_status(&mut self) {
        self.status = if self.assessment.is_some() {
            CaseStatus::Assessed
        } else if self
            .accepted_capture()
            .is_some_and(|c| c.measurement.is_some())
        {
            CaseStatus::Measured
        } else {
            CaseStatus::AwaitingRead
        };
    }

    pub fn validate(&self) -> Result<(), StoreError> {
        let bad = |m: String| Err(StoreError::Invariant(m));
        let accepted = self.captures.iter().filter(|c| c.accepted()).count();
        if accepted > 1 {
            return bad(format!("case {} has {accepted} accepted captures", self.case_id));
        }
        if self.assessment.is_some() != (self.status == CaseStatus::Assessed) {
            return bad(format!(
                "case {} status {:?} disagrees with assessment presence",
                self.case_id, self.status
            ));
        }
        if self
            .captures
            .windows(2)
            .any(|w| w[0].captured_at > w[1].captured_at)
        {
            return bad(format!("case {} captures out of time order", self.case_id));
        }
        if let Some(r) = self.reminders.iter().find(|r| r.window_start >= r.window_end) {
            return bad(format!("reminder {} has an empty window", r.reminder_id));
        }
        Ok(())
    }

    /// Applies an accept/retake decision to a pending capture.
    pub fn decide(&mut self, capture_id: &str, decision: CaptureDecision) -> Result<(), StoreError> {
        let case_id = self.case_id.clone();
        let other_accepted = self
            .captures
            .iter()
            .any(|c| c.accepted() && c.capture_id != capture_id);
        let cap = self
            .captures
            .iter_mut()
            .find(|c| c.capture_id == capture_id)
            .ok_or_else(|| StoreError::CaptureNotFound {
                case_id: case_id.clone(),
                capture_id: capture_id.to_string(),
            })?;
        if cap.state != CaptureState::Pending {
            return Err(StoreError::Conflict(format!(
                "capture {capture_id} already decided ({:?})",
                cap.state
            )));
        }
        match decision {
            CaptureDecision::Accept if other_accepted => {
                return Err(StoreError::Conflict(format!(
                    "case {case_id} already has an accepted capture"
                )))
            }
            CaptureDecision::Accept => cap.state = CaptureState::Accepted,
            CaptureDecision::Retake => cap.state = CaptureState::Rejected,
        }
        self.refresh_status();
        Ok(())
    }
}

/// Reminder covering `[administered_at + start, administered_at + end]`.
pub fn schedule_reminder(case: &TstCase, window: ReadWindow) -> Result<Reminder, StoreError> {
    if !(window.start_hours.is_finite()
        && window.end_hours.is_finite()
        && window.start_hours < window.end_hours)
    {
        return Err(StoreError::InvalidWindow {
            start_hours: window.start_hours,
            end_hours: window.end_hours,
        });
    }
    Ok(Reminder {
        reminder_id: new_id(),
        case_id: case.case_id.clone(),
        window_start: case.administered_at + hours(window.start_hours),
        window_end: case.administered_at + hours(window.end_hours),
        acknowledged: false,
    })
}

/// Unacknowledged reminders whose window contains `now`, by window start.
pub fn due_reminders<'a>(
    reminders: impl IntoIterator<Item = &'a Reminder>,
    now: DateTime<Utc>,
) -> Vec<Reminder> {
    let mut due: Vec<Reminder> = reminders
        .into_iter()
        .filter(|r| !r.acknowledged && r.window_start <= now && now <= r.window_end)
        .cloned()
        .collect();
    due.sort_by(|a, b| {
        (a.window_start, &a.reminder_id).cmp(&(b.window_start, &b.reminder_id))
    });
    due
}

pub fn encode_case(case: &TstCase) -> String {
    serde_json::to_string(case).expect("case serializes")
}

pub fn decode_case(line: &str) -> Result<TstCase, serde_json::Error> {
    serde_json::from_str(line)
}

struct Inner {
    cases: HashMap<String, TstCase>,
    writer: Box<dyn Write + Send + Sync>,
}

/// Single-writer, multi-reader case store.
pub struct RecordStore {
    root: PathBuf,
    inner: RwLock<Inner>,
}

impl std::fmt::Debug for RecordStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RecordStore").field("root", &self.root).finish()
    }
}

fn parse_records(text: &str) -> Result<HashMap<String, TstCase>, StoreError> {
    let mut cases = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let case = decode_case(line).map_err(|e| StoreError::Corrupt {
            line: i + 1,
            message: e.to_string(),
        })?;
        cases.insert(case.case_id.clone(), case);
    }
    Ok(cases)
}

impl RecordStore {
    /// Opens (creating if needed) the store rooted at `dir`.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let root = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&root)
            .map_err(io_err(format!("create store dir {}", root.display())))?;
        let path = root.join(RECORD_FILE);
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(io_err(format!("read {}", path.display()))(e)),
        };
        if !text.is_empty() && !text.ends_with('\n') {
            return Err(StoreError::Corrupt {
                line: text.lines().count(),
                message: "truncated final record".into(),
            });
        }
        let cases = parse_records(&text)?;
        let file: File = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(format!("open {}", path.display())))?;
        Ok(Self {
            root,
            inner: RwLock::new(Inner {
                cases,
                writer: Box::new(file),
            }),
        })
    }

    #[cfg(test)]
    fn with_writer(root: PathBuf, writer: Box<dyn Write + Send + Sync>) -> Self {
        Self {
            root,
            inner: RwLock::new(Inner {
                cases: HashMap::new(),
                writer,
            }),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn record_path(&self) -> PathBuf {
        self.root.join(RECORD_FILE)
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, Inner> {
        self.inner.read().unwrap_or_else(|p| p.into_inner())
    }

    fn write(&self) -> std::sync::RwLockWriteGuard<'_, Inner> {
        self.inner.write().unwrap_or_else(|p| p.into_inner())
    }

    fn persist(inner: &mut Inner, case: &TstCase) -> Result<(), StoreError> {
        case.validate()?;
        let mut line = encode_case(case);
        line.push('\n');
        inner
            .writer
            .write_all(line.as_bytes())
            .and_then(|_| inner.writer.flush())
            .map_err(io_err("append record"))?;
        inner.cases.insert(case.case_id.clone(), case.clone());
        Ok(())
    }

    pub fn create_case(&self, administered_at: DateTime<Utc>) -> Result<TstCase, StoreError> {
        let case = TstCase::new(administered_at, Utc::now());
        let mut inner = self.write();
        Self::persist(&mut inner, &case)?;
        Ok(case)
    }

    pub fn save_case(&self, case: &TstCase) -> Result<(), StoreError> {
        let mut inner = self.write();
        Self::persist(&mut inner, case)
    }

    pub fn load_case(&self, case_id: &str) -> Result<TstCase, StoreError> {
        self.read()
            .cases
            .get(case_id)
            .cloned()
            .ok_or_else(|| StoreError::CaseNotFound(case_id.to_string()))
    }

    pub fn case_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.read().cases.keys().cloned().collect();
        ids.sort();
        ids
    }

    /// Runs `f` on a copy of the case under the write lock and persists the
    /// result. Nothing is written when `f` fails.
    pub fn update_case<T>(
        &self,
        case_id: &str,
        f: impl FnOnce(&mut TstCase) -> Result<T, StoreError>,
    ) -> Result<(TstCase, T), StoreError> {
        let mut inner = self.write();
        let mut case = inner
            .cases
            .get(case_id)
            .cloned()
            .ok_or_else(|| StoreError::CaseNotFound(case_id.to_string()))?;
        let out = f(&mut case)?;
        Self::persist(&mut inner, &case)?;
        Ok((case, out))
    }

    pub fn add_capture(
        &self,
        case_id: &str,
        capture: CaptureArtifact,
    ) -> Result<TstCase, StoreError> {
        self.update_case(case_id, |case| {
            if case.capture(&capture.capture_id).is_some() {
                return Err(StoreError::Conflict(format!(
                    "capture {} already exists",
                    capture.capture_id
                )));
            }
            case.captures.push(capture);
            case.refresh_status();
            Ok(())
        })
        .map(|(c, _)| c)
    }

    pub fn decide_capture(
        &self,
        case_id: &str,
        capture_id: &str,
        decision: CaptureDecision,
    ) -> Result<TstCase, StoreError> {
        self.update_case(case_id, |case| case.decide(capture_id, decision))
            .map(|(c, _)| c)
    }

    pub fn schedule_reminder(
        &self,
        case_id: &str,
        window: ReadWindow,
    ) -> Result<Reminder, StoreError> {
        self.update_case(case_id, |case| {
            let r = schedule_reminder(case, window)?;
            case.reminders.push(r.clone());
            Ok(r)
        })
        .map(|(_, r)| r)
    }

    pub fn due_reminders(&self, now: DateTime<Utc>) -> Vec<Reminder> {
        let inner = self.read();
        due_reminders(inner.cases.values().flat_map(|c| c.reminders.iter()), now)
    }

    pub fn acknowledge_reminder(&self, reminder_id: &str) -> Result<Reminder, StoreError> {
        let case_id = self
            .read()
            .cases
            .values()
            .find(|c| c.reminders.iter().any(|r| r.reminder_id == reminder_id))
            .map(|c| c.case_id.clone())
            .ok_or_else(|| StoreError::ReminderNotFound(reminder_id.to_string()))?;
        self.update_case(&case_id, |case| {
            let r = case
                .reminders
                .iter_mut()
                .find(|r| r.reminder_id == reminder_id)
                .ok_or_else(|| StoreError::ReminderNotFound(reminder_id.to_string()))?;
            r.acknowledged = true;
            Ok(r.clone())
        })
        .map(|(_, r)| r)
    }

    /// Stores `bytes` under its content hash; returns the path relative to the
    /// store root.
    pub fn put_artifact(&self, bytes: &[u8], ext: &str) -> Result<String, StoreError> {
        let digest = hex::encode(Sha256::digest(bytes));
        let rel = format!("{ARTIFACT_DIR}/{}/{digest}.{ext}", &digest[..2]);
        let path = self.root.join(&rel);
        if !path.exists() {
            let dir = path.parent().expect("artifact has a parent dir");
            std::fs::create_dir_all(dir)
                .map_err(io_err(format!("create {}", dir.display())))?;
            let tmp = path.with_extension(format!("{ext}.tmp{:x}", rand::random::<u32>()));
            std::fs::write(&tmp, bytes).map_err(io_err(format!("write {}", tmp.display())))?;
            std::fs::rename(&tmp, &path).map_err(io_err(format!("rename {}", path.display())))?;
        }
        Ok(rel)
    }

    pub fn artifact_path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn read_artifact(&self, rel: &str) -> Result<Vec<u8>, StoreError> {
        let path = self.artifact_path(rel);
        std::fs::read(&path).map_err(io_err(format!("read {}", path.display())))
    }
}
