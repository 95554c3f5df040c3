//! Parsing and rendering of tag-structured assistant output.
//!
//! Assistant turns are plain text carrying up to three literal ASCII blocks, in
//! canonical order `<think>...</think>`, `<tool_call>...</tool_call>`,
//! `<response>...</response>`, with one JSON tool call per line inside the
//! tool_call block. Parsing is total: any input produces a [`ParsedOutput`], and
//! every defect is recorded instead of raised. Stray text outside tags, repeated
//! blocks, and unparseable call lines all land in dedicated fields so the reward
//! layer can price them.
//!
//! Tags match byte-for-byte: no attributes, no case folding, no whitespace inside
//! the angle brackets.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::call::{ToolCall, ToolSpec};
use crate::dialogue::{DialogueEvent, DialogueHistory};

/// Identifier of one block kind, in the order it appeared in the output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tag {
    Think,
    ToolCall,
    Response,
}

impl Tag {
    fn open(self) -> &'static str {
        match self {
            Tag::Think => "<think>",
            Tag::ToolCall => "<tool_call>",
            Tag::Response => "<response>",
        }
    }

    fn close(self) -> &'static str {
        match self {
            Tag::Think => "</think>",
            Tag::ToolCall => "</tool_call>",
            Tag::Response => "</response>",
        }
    }

    fn rank(self) -> u8 {
        match self {
            Tag::Think => 0,
            Tag::ToolCall => 1,
            Tag::Response => 2,
        }
    }
}

/// The structured form of one assistant turn.
///
/// A canonical output has at most one block per tag, in canonical order, no
/// stray text, and no malformed call lines. Parsed values may violate any of
/// that; the violations are visible here. When a tag appears more than once,
/// the first block's content wins and later duplicates are only recorded in
/// `tag_sequence`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedOutput {
    pub think: Option<String>,
    pub tool_calls: Vec<ToolCall>,
    pub malformed_call_count: usize,
    pub response: Option<String>,
    pub tag_sequence: Vec<Tag>,
    pub stray_segments: Vec<String>,
}

impl ParsedOutput {
    /// Builds a canonical output directly from its content, with the tag
    /// sequence derived from which parts are present.
    pub fn canonical(
        think: Option<String>,
        tool_calls: Vec<ToolCall>,
        response: Option<String>,
    ) -> Self {
        let mut tag_sequence = Vec::new();
        if think.is_some() {
            tag_sequence.push(Tag::Think);
        }
        if !tool_calls.is_empty() {
            tag_sequence.push(Tag::ToolCall);
        }
        if response.is_some() {
            tag_sequence.push(Tag::Response);
        }
        ParsedOutput {
            think,
            tool_calls,
            malformed_call_count: 0,
            response,
            tag_sequence,
            stray_segments: Vec::new(),
        }
    }

    pub fn contains(&self, tag: Tag) -> bool {
        self.tag_sequence.contains(&tag)
    }

    /// True when each tag appears at most once and the sequence follows
    /// think, tool_call, response order.
    pub fn tags_canonical(&self) -> bool {
        self.tag_sequence
            .windows(2)
            .all(|w| w[0].rank() < w[1].rank())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RenderError {
    #[error("output is not canonical: {0}")]
    NonCanonical(&'static str),
}

/// Parses raw assistant text. Total and deterministic; never panics on any
/// input. An opening tag with no matching close is itself recorded as stray
/// and scanning resumes right after it, so later well-formed blocks survive.
pub fn parse_output(text: &str) -> ParsedOutput {
    let mut out = ParsedOutput {
        think: None,
        tool_calls: Vec::new(),
        malformed_call_count: 0,
        response: None,
        tag_sequence: Vec::new(),
        stray_segments: Vec::new(),
    };
    let mut cursor = 0;

    while cursor < text.len() {
        let next_open = [Tag::Think, Tag::ToolCall, Tag::Response]
            .iter()
            .filter_map(|&tag| {
                text[cursor..]
                    .find(tag.open())
                    .map(|offset| (cursor + offset, tag))
            })
            .min_by_key(|&(idx, _)| idx);

        let Some((open_idx, tag)) = next_open else {
            record_stray(&mut out, &text[cursor..]);
            break;
        };

        record_stray(&mut out, &text[cursor..open_idx]);
        let content_start = open_idx + tag.open().len();

        match text[content_start..].find(tag.close()) {
            None => {
                record_stray(&mut out, tag.open());
                cursor = content_start;
            }
            Some(rel) => {
                let content = &text[content_start..content_start + rel];
                record_block(&mut out, tag, content);
                cursor = content_start + rel + tag.close().len();
            }
        }
    }

    out
}

fn record_stray(out: &mut ParsedOutput, segment: &str) {
    let trimmed = segment.trim();
    if !trimmed.is_empty() {
        out.stray_segments.push(trimmed.to_owned());
    }
}

fn record_block(out: &mut ParsedOutput, tag: Tag, content: &str) {
    let first = !out.contains(tag);
    out.tag_sequence.push(tag);
    if !first {
        return;
    }
    match tag {
        Tag::Think => out.think = Some(content.to_owned()),
        Tag::Response => out.response = Some(content.to_owned()),
        Tag::ToolCall => {
            for line in content.lines() {
                let line = line.trim();
                if line.is_empty() {
                    continue;
                }
                match serde_json::from_str::<ToolCall>(line) {
                    Ok(call) => out.tool_calls.push(call),
                    Err(_) => out.malformed_call_count += 1,
                }
            }
        }
    }
}

/// Renders a canonical [`ParsedOutput`] back to tagged text. Inverse of
/// [`parse_output`] on canonical values (tool-call lines re-serialize with
/// canonical JSON spacing).
pub fn render_output(p: &ParsedOutput) -> Result<String, RenderError> {
    if !p.stray_segments.is_empty() {
        return Err(RenderError::NonCanonical("stray content present"));
    }
    if p.malformed_call_count != 0 {
        return Err(RenderError::NonCanonical("malformed call lines present"));
    }
    if !p.tags_canonical() {
        return Err(RenderError::NonCanonical(
            "tag sequence violates think, tool_call, response order",
        ));
    }
    if p.think.is_some() != p.contains(Tag::Think) {
        return Err(RenderError::NonCanonical(
            "think content disagrees with tag sequence",
        ));
    }
    if p.response.is_some() != p.contains(Tag::Response) {
        return Err(RenderError::NonCanonical(
            "response content disagrees with tag sequence",
        ));
    }
    if !p.tool_calls.is_empty() && !p.contains(Tag::ToolCall) {
        return Err(RenderError::NonCanonical(
            "tool calls present without a tool_call block",
        ));
    }

    let mut blocks = Vec::with_capacity(p.tag_sequence.len());
    for tag in &p.tag_sequence {
        match tag {
            Tag::Think => {
                let think = p.think.as_deref().unwrap_or_default();
                blocks.push(format!("<think>{think}</think>"));
            }
            Tag::ToolCall => {
                let mut block = String::from("<tool_call>\n");
                for call in &p.tool_calls {
                    block.push_str(
                        &serde_json::to_string(call).expect("tool call serializes to JSON"),
                    );
                    block.push('\n');
                }
                block.push_str("</tool_call>");
                blocks.push(block);
            }
            Tag::Response => {
                let response = p.response.as_deref().unwrap_or_default();
                blocks.push(format!("<response>{response}</response>"));
            }
        }
    }
    Ok(blocks.join("\n"))
}

const SYSTEM_TEMPLATE: &str = r#"You are a helpful dialogue assistant capable of leveraging tool calls to solve user tasks and provide structured chat responses.

**Available Tools**
In your response, you can use the following tools:
{{TOOL_LIST}}

**Steps for Each Turn**
1. **Think:** Recall relevant context and analyze the current user goal.
2. **Decide on Tool Usage:** If a tool is needed, specify the tool and its parameters.
3. **Respond Appropriately:** If a response is needed, generate one while maintaining consistency across user queries.

**Output Format**
<think> Your thoughts and reasoning </think>
<tool_call>
{"name": "Tool name", "parameters": {"Parameter name": "Parameter content", "... ...": "... ..."}}
{"name": "... ...", "parameters": {"... ...": "... ...", "... ...": "... ..."}}
...
</tool_call>
<response> AI's final response </response>

**Important Notes**
1. You must always include the <think> field to outline your reasoning. Provide at least one of <tool_call> or <response>. Decide whether to use <tool_call> (possibly multiple times), <response>, or both.
2. You can invoke multiple tool calls simultaneously in the <tool_call> fields. Each tool call should be a JSON object with a "name" field and a "parameters" field containing a dictionary of parameters. If no parameters are needed, leave the "parameters" field an empty dictionary.
3. Refer to the previous dialogue records in the history, including the user's queries, previous <tool_call>, <response>, and any tool feedback noted as <obs> (if exists)."#;

/// Renders the prompt pair for one turn: the fixed system instruction with the
/// tool list spliced in (one JSON spec per line), and the running dialogue
/// history wrapped in history tags.
pub fn render_history(history: &DialogueHistory, tools: &[ToolSpec]) -> (String, String) {
    let tool_list = tools
        .iter()
        .map(|t| serde_json::to_string(t).expect("tool spec serializes to JSON"))
        .collect::<Vec<_>>()
        .join("\n");
    let system_prompt = SYSTEM_TEMPLATE.replace("{{TOOL_LIST}}", &tool_list);

    let mut user_prompt = String::from("**Dialogue History**");
    for event in history.events() {
        user_prompt.push('\n');
        match event {
            DialogueEvent::User { text } => {
                user_prompt.push_str(&format!("<user>{text}</user>"));
            }
            DialogueEvent::Think { text } => {
                user_prompt.push_str(&format!("<think>{text}</think>"));
            }
            DialogueEvent::Response { text } => {
                user_prompt.push_str(&format!("<response>{text}</response>"));
            }
            DialogueEvent::Obs { text } => {
                user_prompt.push_str(&format!("<obs>{text}</obs>"));
            }
            DialogueEvent::ToolCallBlock { calls } => {
                user_prompt.push_str("<tool_call>\n");
                for call in calls {
                    user_prompt.push_str(
                        &serde_json::to_string(call).expect("tool call serializes to JSON"),
                    );
                    user_prompt.push('\n');
                }
                user_prompt.push_str("</tool_call>");
            }
        }
    }
    (system_prompt, user_prompt)
}
