use chrono::{DateTime, Utc};
use oralscan_core::{GuideGeometry, QuestionnaireSchema, Stroke};
use serde::{Deserialize, Serialize};

use crate::error::{ServiceError, ServiceResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Collecting,
    Analyzed,
}

/// One line of a session's append-only event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SessionEvent {
    Created {
        session_id: String,
        at: DateTime<Utc>,
    },
    QuestionnaireSubmitted {
        answers: Vec<Option<usize>>,
        at: DateTime<Utc>,
    },
    ImageUploaded {
        image_id: String,
        guide: GuideGeometry,
        source_width: u32,
        source_height: u32,
        at: DateTime<Utc>,
    },
    Annotated {
        image_id: String,
        strokes: Vec<Stroke>,
        at: DateTime<Utc>,
    },
    Analyzed {
        at: DateTime<Utc>,
    },
}

impl SessionEvent {
    fn at(&self) -> DateTime<Utc> {
        match self {
            SessionEvent::Created { at, .. }
            | SessionEvent::QuestionnaireSubmitted { at, .. }
            | SessionEvent::ImageUploaded { at, .. }
            | SessionEvent::Annotated { at, .. }
            | SessionEvent::Analyzed { at } => *at,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub guide: GuideGeometry,
    pub source_width: u32,
    pub source_height: u32,
    /// Every stroke drawn so far, in crop-frame fractional coordinates.
    pub strokes: Vec<Stroke>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExamSession {
    pub session_id: String,
    /// One slot per questionnaire question; `None` until answered.
    pub answers: Vec<Option<usize>>,
    pub images: Vec<ImageRecord>,
    pub status: SessionStatus,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
}

impl ExamSession {
    /// Rebuild a session from its event log.
    pub fn replay(events: &[SessionEvent]) -> ServiceResult<Self> {
        let Some(SessionEvent::Created { session_id, at }) = events.first() else {
            return Err(ServiceError::Config("session log does not start with a creation event".into()));
        };
        let mut s = ExamSession {
            session_id: session_id.clone(),
            answers: Vec::new(),
            images: Vec::new(),
            status: SessionStatus::Collecting,
            created_at: *at,
            updated_at: *at,
        };
        for e in &events[1..] {
            s.apply(e);
        }
        Ok(s)
    }

    pub fn apply(&mut self, event: &SessionEvent) {
        match event {
            SessionEvent::Created { .. } => {}
            SessionEvent::QuestionnaireSubmitted { answers, .. } => self.answers = answers.clone(),
            SessionEvent::ImageUploaded {
                image_id,
                guide,
                source_width,
                source_height,
                ..
            } => self.images.push(ImageRecord {
                image_id: image_id.clone(),
                guide: *guide,
                source_width: *source_width,
                source_height: *source_height,
                strokes: Vec::new(),
            }),
            SessionEvent::Annotated { image_id, strokes, .. } => {
                if let Some(img) = self.images.iter_mut().find(|i| &i.image_id == image_id) {
                    img.strokes.extend(strokes.iter().cloned());
                }
            }
            SessionEvent::Analyzed { .. } => self.status = SessionStatus::Analyzed,
        }
        self.updated_at = event.at();
    }

    pub fn image(&self, image_id: &str) -> ServiceResult<&ImageRecord> {
        self.images
            .iter()
            .find(|i| i.image_id == image_id)
            .ok_or_else(|| ServiceError::NotFound(format!("image {image_id}")))
    }

    pub fn require_collecting(&self) -> ServiceResult<()> {
        match self.status {
            SessionStatus::Collecting => Ok(()),
            SessionStatus::Analyzed => Err(ServiceError::Conflict(format!(
                "session {} is already analyzed",
                self.session_id
            ))),
        }
    }

    /// All answers, if every question has one.
    pub fn complete_answers(&self, schema: &QuestionnaireSchema) -> Option<Vec<usize>> {
        if self.answers.len() != schema.questions.len() {
            return None;
        }
        self.answers.iter().copied().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replay_rebuilds_state() {
        let at = Utc::now();
        let events = vec![
            SessionEvent::Created {
                session_id: "s1".into(),
                at,
            },
            SessionEvent::ImageUploaded {
                image_id: "img-1".into(),
                guide: GuideGeometry::full_frame(),
                source_width: 10,
                source_height: 10,
                at,
            },
            SessionEvent::QuestionnaireSubmitted {
                answers: vec![Some(1), None],
                at,
            },
            SessionEvent::Analyzed { at },
        ];
        let s = ExamSession::replay(&events).unwrap();
        assert_eq!(s.images.len(), 1);
        assert_eq!(s.answers, vec![Some(1), None]);
        assert_eq!(s.status, SessionStatus::Analyzed);
        assert!(s.require_collecting().is_err());
        let schema = QuestionnaireSchema::with_choice_counts(&[3, 3]);
        assert_eq!(s.complete_answers(&schema), None);
    }

    #[test]
    fn event_json_is_tagged() {
        let e = SessionEvent::Analyzed { at: Utc::now() };
        let v = serde_json::to_value(&e).unwrap();
        assert_eq!(v["event"], "analyzed");
    }
}
