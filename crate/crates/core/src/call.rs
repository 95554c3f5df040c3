//! Tool calls and tool declarations.
//!
//! A [`ToolCall`] is what the scorer compares: a tool name plus an ordered map of
//! parameter names to JSON values. [`canonicalize`] trims the name and sorts the
//! parameter keys so rendered calls are byte-stable; equality of the values
//! themselves never depends on that ordering.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::value::{values_match, JsonValue};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CallError {
    #[error("tool call name is empty after trimming")]
    EmptyName,
}

/// One tool invocation: a name and its parameters.
///
/// The name must be non-empty after whitespace trimming; parameter keys are
/// unique by construction of the map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ToolCallWire", into = "ToolCallWire")]
pub struct ToolCall {
    pub name: String,
    pub parameters: IndexMap<String, JsonValue>,
}

impl ToolCall {
    pub fn new(
        name: impl Into<String>,
        parameters: IndexMap<String, JsonValue>,
    ) -> Result<Self, CallError> {
        let name = name.into();
        if name.trim().is_empty() {
            return Err(CallError::EmptyName);
        }
        Ok(ToolCall { name, parameters })
    }

    /// Builds a call from `(key, value)` pairs; convenient in tests and generators.
    pub fn with_params<K, V, I>(name: &str, params: I) -> Result<Self, CallError>
    where
        K: Into<String>,
        V: Into<JsonValue>,
        I: IntoIterator<Item = (K, V)>,
    {
        ToolCall::new(
            name,
            params
                .into_iter()
                .map(|(k, v)| (k.into(), v.into()))
                .collect(),
        )
    }

    /// Parameterless call.
    pub fn bare(name: &str) -> Result<Self, CallError> {
        ToolCall::new(name, IndexMap::new())
    }
}

#[derive(Serialize, Deserialize)]
struct ToolCallWire {
    name: String,
    #[serde(default)]
    parameters: IndexMap<String, JsonValue>,
}

impl TryFrom<ToolCallWire> for ToolCall {
    type Error = CallError;

    fn try_from(wire: ToolCallWire) -> Result<Self, CallError> {
        ToolCall::new(wire.name, wire.parameters)
    }
}

impl From<ToolCall> for ToolCallWire {
    fn from(call: ToolCall) -> Self {
        ToolCallWire {
            name: call.name,
            parameters: call.parameters,
        }
    }
}

/// Returns the call with its name trimmed and parameter keys sorted
/// lexicographically. Values are untouched, so every parameter still compares
/// equal to its pre-canonicalization self.
pub fn canonicalize(call: &ToolCall) -> Result<ToolCall, CallError> {
    let name = call.name.trim();
    if name.is_empty() {
        return Err(CallError::EmptyName);
    }
    let mut parameters = call.parameters.clone();
    parameters.sort_keys();
    Ok(ToolCall {
        name: name.to_owned(),
        parameters,
    })
}

/// Whole-call equality under the scorer's comparison mode: names match exactly
/// after trimming, key sets match, and every shared key's value matches.
pub fn calls_match(g: &ToolCall, p: &ToolCall, strict: bool) -> bool {
    g.name.trim() == p.name.trim() && params_match(g, p, strict)
}

/// Parameter-map equality alone, ignoring the tool names: same key set and
/// every value matching under the comparison mode.
pub fn params_match(g: &ToolCall, p: &ToolCall, strict: bool) -> bool {
    g.parameters.len() == p.parameters.len()
        && g.parameters
            .iter()
            .all(|(k, gv)| p.parameters.get(k).is_some_and(|pv| values_match(gv, pv, strict)))
}

/// The JSON type tag a declared parameter accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamType {
    String,
    Number,
    Boolean,
    Object,
    Array,
}

/// A declared parameter of a tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub param_type: ParamType,
    pub required: bool,
    pub description: String,
}

/// A tool made available to the model. Scoring never consults this; it exists
/// so prompts can list what the model may call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub parameters: Vec<ParamSpec>,
}
