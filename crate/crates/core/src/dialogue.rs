//! Ground-truth annotations and dialogue history.
//!
//! A [`TurnAnnotation`] says what a correct assistant turn must contain: the
//! expected tool calls and whether a chat response is required. A
//! [`DialogueHistory`] is the transcript leading up to the turn being scored,
//! starting from the user's first message.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::call::ToolCall;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DialogueError {
    #[error("annotation requires at least one expected call or a required response")]
    EmptyAnnotation,
    #[error("dialogue history must start with a user event")]
    MissingUserOpening,
}

/// Ground truth for one assistant turn.
///
/// At least one of `expected_calls` non-empty or `response_required` must hold;
/// a turn with nothing to produce is not a scorable turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TurnAnnotationWire", into = "TurnAnnotationWire")]
pub struct TurnAnnotation {
    pub expected_calls: Vec<ToolCall>,
    pub response_required: bool,
    pub reference_response: Option<String>,
}

impl TurnAnnotation {
    pub fn new(
        expected_calls: Vec<ToolCall>,
        response_required: bool,
        reference_response: Option<String>,
    ) -> Result<Self, DialogueError> {
        if expected_calls.is_empty() && !response_required {
            return Err(DialogueError::EmptyAnnotation);
        }
        Ok(TurnAnnotation {
            expected_calls,
            response_required,
            reference_response,
        })
    }

    pub fn calls_only(expected_calls: Vec<ToolCall>) -> Result<Self, DialogueError> {
        TurnAnnotation::new(expected_calls, false, None)
    }

    pub fn response_only(reference: impl Into<String>) -> Self {
        TurnAnnotation {
            expected_calls: Vec::new(),
            response_required: true,
            reference_response: Some(reference.into()),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct TurnAnnotationWire {
    #[serde(default)]
    expected_calls: Vec<ToolCall>,
    #[serde(default)]
    response_required: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reference_response: Option<String>,
}

impl TryFrom<TurnAnnotationWire> for TurnAnnotation {
    type Error = DialogueError;

    fn try_from(wire: TurnAnnotationWire) -> Result<Self, DialogueError> {
        TurnAnnotation::new(
            wire.expected_calls,
            wire.response_required,
            wire.reference_response,
        )
    }
}

impl From<TurnAnnotation> for TurnAnnotationWire {
    fn from(a: TurnAnnotation) -> Self {
        TurnAnnotationWire {
            expected_calls: a.expected_calls,
            response_required: a.response_required,
            reference_response: a.reference_response,
        }
    }
}

/// One event in a dialogue transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DialogueEvent {
    User { text: String },
    Think { text: String },
    ToolCallBlock { calls: Vec<ToolCall> },
    Response { text: String },
    Obs { text: String },
}

/// An ordered transcript whose first event is always a user message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<DialogueEvent>", into = "Vec<DialogueEvent>")]
pub struct DialogueHistory {
    events: Vec<DialogueEvent>,
}

impl DialogueHistory {
    /// Opens a history with the user's initial message.
    pub fn opening(user_text: impl Into<String>) -> Self {
        DialogueHistory {
            events: vec![DialogueEvent::User {
                text: user_text.into(),
            }],
        }
    }

    pub fn from_events(events: Vec<DialogueEvent>) -> Result<Self, DialogueError> {
        match events.first() {
            Some(DialogueEvent::User { .. }) => Ok(DialogueHistory { events }),
            _ => Err(DialogueError::MissingUserOpening),
        }
    }

    pub fn push(&mut self, event: DialogueEvent) {
        self.events.push(event);
    }

    pub fn events(&self) -> &[DialogueEvent] {
        &self.events
    }
}

impl TryFrom<Vec<DialogueEvent>> for DialogueHistory {
    type Error = DialogueError;

    fn try_from(events: Vec<DialogueEvent>) -> Result<Self, DialogueError> {
        DialogueHistory::from_events(events)
    }
}

impl From<DialogueHistory> for Vec<DialogueEvent> {
    fn from(h: DialogueHistory) -> Self {
        h.events
    }
}
