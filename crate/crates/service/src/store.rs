//! Directory-per-session file store.
//!
//! ```text
//! <root>/<session_id>/events.jsonl     append-only event log
//! <root>/<session_id>/images/<iid>.png cropped model input
//! <root>/<session_id>/uploads/<iid>    uploaded bytes, untouched
//! <root>/<session_id>/report.json      written once by analyze
//! <root>/<session_id>/artifacts/       heatmaps, masks
//! ```

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use oralscan_core::{Error, OralImage};

use crate::error::{ServiceError, ServiceResult};
use crate::session::{ExamSession, SessionEvent};

#[derive(Debug, Clone)]
pub struct SessionStore {
    root: PathBuf,
}

/// Ids and artifact names become path components, so only a safe alphabet
/// is accepted.
pub fn check_name(kind: &str, name: &str) -> ServiceResult<()> {
    let ok = !name.is_empty()
        && name.len() <= 128
        && !name.starts_with('.')
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(ServiceError::NotFound(format!("{kind} {name:?}")))
    }
}

fn io(path: &Path, e: std::io::Error) -> ServiceError {
    ServiceError::Core(Error::io(path, e))
}

impl SessionStore {
    pub fn open(root: impl Into<PathBuf>) -> ServiceResult<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| io(&root, e))?;
        Ok(SessionStore { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir(&self, session_id: &str) -> ServiceResult<PathBuf> {
        check_name("session", session_id)?;
        Ok(self.root.join(session_id))
    }

    pub fn exists(&self, session_id: &str) -> bool {
        self.dir(session_id)
            .map(|d| d.join("events.jsonl").is_file())
            .unwrap_or(false)
    }

    pub fn create(&self, session_id: &str, event: &SessionEvent) -> ServiceResult<()> {
        let dir = self.dir(session_id)?;
        if dir.exists() {
            return Err(ServiceError::Conflict(format!("session {session_id} already exists")));
        }
        for sub in ["images", "uploads", "artifacts"] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(|e| io(&p, e))?;
        }
        self.append(session_id, event)
    }

    pub fn append(&self, session_id: &str, event: &SessionEvent) -> ServiceResult<()> {
        let path = self.dir(session_id)?.join("events.jsonl");
        let mut line = serde_json::to_string(event).map_err(Error::from)?;
        line.push('\n');
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| io(&path, e))?;
        f.write_all(line.as_bytes()).map_err(|e| io(&path, e))?;
        f.sync_data().map_err(|e| io(&path, e))
    }

    pub fn events(&self, session_id: &str) -> ServiceResult<Vec<SessionEvent>> {
        if !self.exists(session_id) {
            return Err(ServiceError::NotFound(format!("session {session_id}")));
        }
        let path = self.dir(session_id)?.join("events.jsonl");
        let text = fs::read_to_string(&path).map_err(|e| io(&path, e))?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| {
                    ServiceError::Core(Error::Parse {
                        record: format!("{session_id} event {}", i + 1),
                        field: "event".into(),
                        message: e.to_string(),
                    })
                })
            })
            .collect()
    }

    pub fn load(&self, session_id: &str) -> ServiceResult<ExamSession> {
        ExamSession::replay(&self.events(session_id)?)
    }

    pub fn save_upload(&self, session_id: &str, image_id: &str, bytes: &[u8], crop: &OralImage) -> ServiceResult<()> {
        check_name("image", image_id)?;
        let dir = self.dir(session_id)?;
        let raw = dir.join("uploads").join(image_id);
        fs::write(&raw, bytes).map_err(|e| io(&raw, e))?;
        crop.save_png(&dir.join("images").join(format!("{image_id}.png")))?;
        Ok(())
    }

    pub fn load_crop(&self, session_id: &str, image_id: &str) -> ServiceResult<OralImage> {
        check_name("image", image_id)?;
        let path = self.dir(session_id)?.join("images").join(format!("{image_id}.png"));
        Ok(OralImage::load_png(&path, image_id, session_id)?)
    }

    pub fn report_path(&self, session_id: &str) -> ServiceResult<PathBuf> {
        Ok(self.dir(session_id)?.join("report.json"))
    }

    pub fn write_report(&self, session_id: &str, bytes: &[u8]) -> ServiceResult<()> {
        let path = self.report_path(session_id)?;
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, bytes).map_err(|e| io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| io(&path, e))
    }

    pub fn read_report(&self, session_id: &str) -> ServiceResult<Option<Vec<u8>>> {
        let path = self.report_path(session_id)?;
        match fs::read(&path) {
            Ok(b) => Ok(Some(b)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io(&path, e)),
        }
    }

    pub fn artifact_path(&self, session_id: &str, name: &str) -> ServiceResult<PathBuf> {
        check_name("artifact", name)?;
        Ok(self.dir(session_id)?.join("artifacts").join(name))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::Utc;

    #[test]
    fn rejects_path_like_names() {
        for bad in ["", "..", "../x", "a/b", ".hidden", "a\\b"] {
            assert!(check_name("session", bad).is_err(), "{bad}");
        }
        check_name("session", "4f1c-aa_01.png").unwrap();
    }

    #[test]
    fn events_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = SessionStore::open(dir.path()).unwrap();
        let at = Utc::now();
        store
            .create("s1", &SessionEvent::Created { session_id: "s1".into(), at })
            .unwrap();
        store.append("s1", &SessionEvent::Analyzed { at }).unwrap();
        let events = store.events("s1").unwrap();
        assert_eq!(events.len(), 2);
        assert!(matches!(store.events("nope"), Err(ServiceError::NotFound(_))));
    }
}
