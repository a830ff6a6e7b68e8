//! Tool-using question answering loop over a scene memory.
//!
//! The model replies either with a fenced tool block
//!
//! ````text
//! ```tool
//! {"name": "search", "arguments": {"query": "outlet"}, "call_id": "c1"}
//! ```
//! ````
//!
//! or with plain text, which ends the loop as the final answer. Object
//! references in the answer are written `<component_ID>text</component_ID>`.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::clients::{ClientError, RetryPolicy};
use crate::error::{Error, Result};
use crate::memory::SceneMemory;
use crate::tools::{canonical_json, Registry, ToolCall, ToolResult, ToolSpec};

pub const DEFAULT_MAX_STEPS: usize = 20;
pub const MAX_RESULT_BYTES: usize = 8 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

/// Produces the next model action given the system prompt and history.
pub trait ModelClient: Send + Sync {
    fn complete(&self, system: &str, history: &[Message]) -> std::result::Result<String, ClientError>;
}

/// Replays a fixed list of actions in order.
#[derive(Debug)]
pub struct ScriptedClient {
    actions: Vec<String>,
    next: AtomicUsize,
}

impl ScriptedClient {
    pub fn new(actions: Vec<String>) -> Self {
        Self {
            actions,
            next: AtomicUsize::new(0),
        }
    }

    /// Reads a JSON array of action strings.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let actions = serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
        Ok(Self::new(actions))
    }
}

impl ModelClient for ScriptedClient {
    fn complete(&self, _system: &str, _history: &[Message]) -> std::result::Result<String, ClientError> {
        let i = self.next.fetch_add(1, Ordering::SeqCst);
        self.actions
            .get(i)
            .cloned()
            .ok_or_else(|| ClientError(format!("script exhausted after {} actions", self.actions.len())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Entry {
    UserQuery { text: String },
    ModelAction { text: String },
    ToolCall { call: ToolCall },
    ToolResult { result: ToolResult },
    /// Parse feedback sent back to the model after a malformed action.
    Feedback { text: String },
    FinalAnswer { text: String },
    Abort { reason: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub entries: Vec<Entry>,
}

impl Transcript {
    pub fn tool_calls(&self) -> usize {
        self.entries.iter().filter(|e| matches!(e, Entry::ToolCall { .. })).count()
    }

    pub fn to_json(&self) -> String {
        canonical_json(self)
    }

    /// Checks ordering rules: a leading query, results only for earlier
    /// calls, and a terminal entry only in last position. With `complete`,
    /// the transcript must also end in a final answer or an abort.
    pub fn audit(&self, complete: bool) -> std::result::Result<(), String> {
        if !matches!(self.entries.first(), Some(Entry::UserQuery { .. })) {
            return Err("transcript must start with the user query".into());
        }
        let mut calls: Vec<Option<&str>> = Vec::new();
        for (i, e) in self.entries.iter().enumerate() {
            let last = i + 1 == self.entries.len();
            match e {
                Entry::UserQuery { .. } if i > 0 => return Err(format!("extra user query at {i}")),
                Entry::ToolCall { call } => calls.push(call.call_id.as_deref()),
                Entry::ToolResult { result } => {
                    if !calls.contains(&result.call_id.as_deref()) {
                        return Err(format!("result at {i} has no matching call"));
                    }
                }
                Entry::FinalAnswer { .. } | Entry::Abort { .. } if !last => {
                    return Err(format!("terminal entry at {i} is not last"))
                }
                _ => {}
            }
        }
        if complete && !matches!(self.entries.last(), Some(Entry::FinalAnswer { .. } | Entry::Abort { .. })) {
            return Err("transcript does not end in an answer or abort".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tag {
    pub component_id: u64,
    pub text: String,
    /// Byte range of the whole `<component_N>…</component_N>` span.
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundedAnswer {
    pub text: String,
    pub tags: Vec<Tag>,
    /// Tagged ids absent from the memory, in first-seen order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dangling: Vec<u64>,
}

impl GroundedAnswer {
    /// Tagged ids, deduplicated, in ascending order.
    pub fn ids(&self) -> std::collections::BTreeSet<u64> {
        self.tags.iter().map(|t| t.component_id).collect()
    }

    /// Text with tags replaced by their inner text.
    pub fn plain_text(&self) -> String {
        let mut out = String::with_capacity(self.text.len());
        let mut at = 0;
        for t in &self.tags {
            out.push_str(&self.text[at..t.start]);
            out.push_str(&t.text);
            at = t.end;
        }
        out.push_str(&self.text[at..]);
        out
    }

    /// Rebuilds the source text from the plain segments and tags.
    pub fn render(&self) -> String {
        let mut out = String::with_capacity(self.text.len());
        let mut at = 0;
        for t in &self.tags {
            out.push_str(&self.text[at..t.start]);
            let _ = write!(out, "<component_{id}>{}</component_{id}>", t.text, id = t.component_id);
            at = t.end;
        }
        out.push_str(&self.text[at..]);
        out
    }

    pub fn flag_dangling(&mut self, memory: &SceneMemory) {
        self.dangling.clear();
        for t in &self.tags {
            if !memory.contains(t.component_id) && !self.dangling.contains(&t.component_id) {
                self.dangling.push(t.component_id);
            }
        }
    }
}

static TAG_TOKEN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"<(/?)component_(0|[1-9][0-9]*)>").expect("valid regex"));

/// Extracts well-formed `<component_N>text</component_N>` spans in order.
/// An opening tag counts only when the next tag token is its own closing
/// tag; anything else is left as plain text.
pub fn parse_component_tags(text: &str) -> GroundedAnswer {
    struct Tok {
        close: bool,
        id: Option<u64>,
        start: usize,
        end: usize,
    }
    let toks: Vec<Tok> = TAG_TOKEN
        .captures_iter(text)
        .map(|c| {
            let m = c.get(0).expect("whole match");
            Tok {
                close: !c[1].is_empty(),
                id: c[2].parse().ok(),
                start: m.start(),
                end: m.end(),
            }
        })
        .collect();
    let mut tags = Vec::new();
    let mut i = 0;
    while i + 1 < toks.len() {
        let (open, close) = (&toks[i], &toks[i + 1]);
        let pair = (!open.close && close.close && open.id == close.id).then_some(open.id).flatten();
        if let Some(component_id) = pair {
            tags.push(Tag {
                component_id,
                text: text[open.end..close.start].to_string(),
                start: open.start,
                end: close.end,
            });
            i += 2;
        } else {
            i += 1;
        }
    }
    GroundedAnswer {
        text: text.to_string(),
        tags,
        dangling: Vec::new(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Tool(ToolCall),
    Final(String),
    Feedback(String),
}

static TOOL_BLOCK: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?s)```tool[ \t]*\r?\n?(.*?)```").expect("valid regex"));

pub fn parse_model_action(text: &str) -> Action {
    if let Some(c) = TOOL_BLOCK.captures(text) {
        return match serde_json::from_str::<ToolCall>(c[1].trim()) {
            Ok(call) => Action::Tool(call),
            Err(e) => Action::Feedback(format!("Could not parse the tool block: {e}. Reply with one valid ```tool``` block or a final answer.")),
        };
    }
    if text.contains("```tool") {
        return Action::Feedback("The tool block is not closed with ```. Reply with one valid ```tool``` block or a final answer.".into());
    }
    Action::Final(text.trim().to_string())
}

/// Compact JSON of a tool result, cut at [`MAX_RESULT_BYTES`] with a marker.
pub fn render_tool_result(result: &ToolResult) -> String {
    let json = result.to_json();
    if json.len() <= MAX_RESULT_BYTES {
        return json;
    }
    let mut cut = MAX_RESULT_BYTES;
    while !json.is_char_boundary(cut) {
        cut -= 1;
    }
    format!("{}…[truncated {} of {} bytes]", &json[..cut], json.len() - cut, json.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MemorySummary {
    pub component_count: usize,
}

impl MemorySummary {
    pub fn of(memory: &SceneMemory) -> Self {
        Self {
            component_count: memory.len(),
        }
    }
}

pub fn render_system_prompt<'a>(specs: impl IntoIterator<Item = &'a ToolSpec>, summary: MemorySummary) -> String {
    let mut p = String::new();
    p.push_str("You answer questions about one indoor scene using its scene memory and the tools below.\n\n");
    let _ = writeln!(
        p,
        "The scene memory holds {} components. Each has an integer id, a centroid and an axis-aligned \
         bounding box in meters (z is up), a caption, image crops and free-form text attributes.\n",
        summary.component_count
    );
    p.push_str("# Tools\n");
    for spec in specs {
        let _ = write!(p, "\n## {}\n{}\n", spec.name, spec.description);
        if spec.params.is_empty() {
            p.push_str("Parameters: none\n");
        } else {
            p.push_str("Parameters:\n");
            for param in &spec.params {
                let need = if param.required { "required" } else { "optional" };
                let _ = writeln!(p, "- {} ({}, {}): {}", param.name, param.kind.as_str(), need, param.description);
            }
        }
    }
    p.push_str(
        "\n# Protocol\n\
         To call a tool, reply with exactly one fenced block and nothing else:\n\
         ```tool\n\
         {\"name\": \"<tool>\", \"arguments\": {...}, \"call_id\": \"<id>\"}\n\
         ```\n\
         The result arrives as JSON in the next message. Break multi-part questions into several calls, \
         one per turn.\n\n\
         When you can answer, reply in plain text without a tool block. Wrap every mention of a scene \
         object in a component tag, for example <component_12>the red chair</component_12>.\n",
    );
    p
}

#[derive(Debug, Clone)]
pub struct AgentConfig {
    pub max_steps: usize,
    pub retry: RetryPolicy,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            max_steps: DEFAULT_MAX_STEPS,
            retry: RetryPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryOutcome {
    pub answer: GroundedAnswer,
    pub transcript: Transcript,
    pub aborted: bool,
}

pub fn run_query(question: &str, registry: &Registry, client: &dyn ModelClient, config: &AgentConfig) -> QueryOutcome {
    let summary = MemorySummary::of(&registry.context().read());
    let system = render_system_prompt(registry.specs(), summary);
    let mut transcript = Transcript {
        entries: vec![Entry::UserQuery { text: question.to_string() }],
    };
    let mut history = vec![Message {
        role: Role::User,
        content: question.to_string(),
    }];
    let abort = |mut transcript: Transcript, reason: String| {
        transcript.entries.push(Entry::Abort { reason });
        debug_assert!(transcript.audit(true).is_ok());
        QueryOutcome {
            answer: GroundedAnswer::default(),
            transcript,
            aborted: true,
        }
    };

    for step in 1..=config.max_steps {
        let text = match config.retry.run(|| client.complete(&system, &history)) {
            Ok(t) => t,
            Err(e) => return abort(transcript, format!("model client failed: {e}")),
        };
        transcript.entries.push(Entry::ModelAction { text: text.clone() });
        history.push(Message {
            role: Role::Assistant,
            content: text.clone(),
        });
        match parse_model_action(&text) {
            Action::Final(answer) => {
                let mut grounded = parse_component_tags(&answer);
                grounded.flag_dangling(&registry.context().read());
                transcript.entries.push(Entry::FinalAnswer { text: answer });
                debug_assert!(transcript.audit(true).is_ok());
                return QueryOutcome {
                    answer: grounded,
                    transcript,
                    aborted: false,
                };
            }
            Action::Tool(mut call) => {
                if call.call_id.is_none() {
                    call.call_id = Some(format!("step{step}"));
                }
                let result = registry.dispatch(&call);
                let rendered = render_tool_result(&result);
                transcript.entries.push(Entry::ToolCall { call });
                transcript.entries.push(Entry::ToolResult { result });
                history.push(Message {
                    role: Role::User,
                    content: format!("Tool result:\n{rendered}"),
                });
            }
            Action::Feedback(msg) => {
                transcript.entries.push(Entry::Feedback { text: msg.clone() });
                history.push(Message {
                    role: Role::User,
                    content: msg,
                });
            }
        }
        debug_assert!(transcript.audit(false).is_ok());
    }
    abort(transcript, format!("step limit of {} reached", config.max_steps))
}
