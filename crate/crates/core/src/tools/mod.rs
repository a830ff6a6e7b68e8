//! Tool registry and dispatch over a shared scene memory.
//!
//! Every failure becomes a [`ToolResult`] error so that a calling agent can
//! read it and recover. Handlers that panic are reported as `internal`.

pub mod kv;
pub mod occupancy;
pub mod ops;

use std::collections::BTreeMap;
use std::fmt;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::{Arc, OnceLock, RwLock, RwLockReadGuard, RwLockWriteGuard};

use base64::Engine as _;
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::memory::SceneMemory;
use crate::smql;
use occupancy::{OccupancyConfig, OccupancyGrid};

pub type SharedMemory = Arc<RwLock<SceneMemory>>;

pub fn shared(memory: SceneMemory) -> SharedMemory {
    Arc::new(RwLock::new(memory))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    UnknownTool,
    InvalidArguments,
    NotFound,
    Unreachable,
    OutOfBounds,
    IoError,
    Conflict,
    ResourceLimit,
    TypeError,
    UnknownFunction,
    UnknownVariable,
    SyntaxError,
    Internal,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::UnknownTool => "unknown_tool",
            ErrorCode::InvalidArguments => "invalid_arguments",
            ErrorCode::NotFound => "not_found",
            ErrorCode::Unreachable => "unreachable",
            ErrorCode::OutOfBounds => "out_of_bounds",
            ErrorCode::IoError => "io_error",
            ErrorCode::Conflict => "conflict",
            ErrorCode::ResourceLimit => "resource_limit",
            ErrorCode::TypeError => "type_error",
            ErrorCode::UnknownFunction => "unknown_function",
            ErrorCode::UnknownVariable => "unknown_variable",
            ErrorCode::SyntaxError => "syntax_error",
            ErrorCode::Internal => "internal",
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, thiserror::Error)]
#[error("{code}: {message}")]
pub struct ToolError {
    pub code: ErrorCode,
    pub message: String,
    /// Offending argument names for `invalid_arguments`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fields: Vec<String>,
}

impl ToolError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            fields: Vec::new(),
        }
    }

    pub fn with_fields<S: Into<String>>(mut self, fields: impl IntoIterator<Item = S>) -> Self {
        self.fields = fields.into_iter().map(Into::into).collect();
        self
    }
}

impl From<crate::Error> for ToolError {
    fn from(e: crate::Error) -> Self {
        use crate::Error as E;
        let code = match &e {
            E::InvalidArgument(_) | E::Validation { .. } => ErrorCode::InvalidArguments,
            E::NotFound(_) => ErrorCode::NotFound,
            E::Conflict(_) => ErrorCode::Conflict,
            E::Io { .. } => ErrorCode::IoError,
            _ => ErrorCode::Internal,
        };
        ToolError::new(code, e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub name: String,
    #[serde(default)]
    pub arguments: Map<String, Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub call_id: Option<String>,
}

impl ToolCall {
    pub fn new(name: impl Into<String>, arguments: Value) -> Self {
        let arguments = match arguments {
            Value::Object(m) => m,
            _ => Map::new(),
        };
        Self {
            name: name.into(),
            arguments,
            call_id: None,
        }
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.call_id = Some(id.into());
        self
    }
}

fn present<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Value>, D::Error> {
    Value::deserialize(d).map(Some)
}

/// Exactly one of `payload` and `error` is present. Fields are declared in
/// key order so direct serialization is already canonical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub call_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ToolError>,
    pub ok: bool,
    #[serde(default, deserialize_with = "present", skip_serializing_if = "Option::is_none")]
    pub payload: Option<Value>,
}

impl ToolResult {
    pub fn success(call_id: Option<String>, payload: Value) -> Self {
        Self {
            call_id,
            error: None,
            ok: true,
            payload: Some(payload),
        }
    }

    pub fn failure(call_id: Option<String>, error: ToolError) -> Self {
        Self {
            call_id,
            error: Some(error),
            ok: false,
            payload: None,
        }
    }

    pub fn to_json(&self) -> String {
        canonical_json(self)
    }
}

/// Compact JSON with object keys sorted.
pub fn canonical_json<T: Serialize + ?Sized>(value: &T) -> String {
    serde_json::to_value(value).expect("serializable value").to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamType {
    /// Non-negative integer, used for component ids and counts.
    Id,
    Number,
    String,
    Boolean,
}

impl ParamType {
    fn accepts(self, v: &Value) -> bool {
        match self {
            ParamType::Id => v.as_u64().is_some(),
            ParamType::Number => v.as_f64().is_some_and(f64::is_finite),
            ParamType::String => v.is_string(),
            ParamType::Boolean => v.is_boolean(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ParamType::Id => "id",
            ParamType::Number => "number",
            ParamType::String => "string",
            ParamType::Boolean => "boolean",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamType,
    pub required: bool,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub params: Vec<ParamSpec>,
}

impl ToolSpec {
    pub fn new(name: &str, description: &str) -> Self {
        Self {
            name: name.into(),
            description: description.into(),
            params: Vec::new(),
        }
    }

    pub fn param(mut self, name: &str, kind: ParamType, required: bool, description: &str) -> Self {
        self.params.push(ParamSpec {
            name: name.into(),
            kind,
            required,
            description: description.into(),
        });
        self
    }

    /// Missing, mistyped and unexpected argument names, in that order.
    pub fn validate(&self, args: &Map<String, Value>) -> Result<(), ToolError> {
        let mut bad = Vec::new();
        for p in &self.params {
            match args.get(&p.name) {
                None if p.required => bad.push(p.name.clone()),
                Some(v) if !p.kind.accepts(v) => bad.push(p.name.clone()),
                _ => {}
            }
        }
        for key in args.keys() {
            if !self.params.iter().any(|p| &p.name == key) {
                bad.push(key.clone());
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(ToolError::new(
                ErrorCode::InvalidArguments,
                format!("invalid arguments for `{}`: {}", self.name, bad.join(", ")),
            )
            .with_fields(bad))
        }
    }
}

/// Everything a handler may touch.
pub struct ToolContext {
    pub memory: SharedMemory,
    /// Directory that crop references are resolved against.
    pub memory_dir: Option<PathBuf>,
    pub occupancy_config: OccupancyConfig,
    pub limits: smql::Limits,
    grid: OnceLock<Option<Arc<OccupancyGrid>>>,
}

impl ToolContext {
    pub fn new(memory: SharedMemory) -> Self {
        Self {
            memory,
            memory_dir: None,
            occupancy_config: OccupancyConfig::default(),
            limits: smql::Limits::default(),
            grid: OnceLock::new(),
        }
    }

    /// Loads the snapshot and any stored occupancy grid from `dir`.
    pub fn open(dir: impl Into<PathBuf>) -> crate::Result<Self> {
        let dir = dir.into();
        let memory = SceneMemory::load(&dir)?;
        let grid = OccupancyGrid::load(&dir)?;
        let mut ctx = Self::new(shared(memory)).with_dir(dir);
        if let Some(g) = grid {
            ctx = ctx.with_grid(g);
        }
        Ok(ctx)
    }

    pub fn with_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.memory_dir = Some(dir.into());
        self
    }

    pub fn with_grid(self, grid: OccupancyGrid) -> Self {
        let _ = self.grid.set(Some(Arc::new(grid)));
        self
    }

    pub fn read(&self) -> RwLockReadGuard<'_, SceneMemory> {
        self.memory.read().unwrap_or_else(|e| e.into_inner())
    }

    pub fn write(&self) -> RwLockWriteGuard<'_, SceneMemory> {
        self.memory.write().unwrap_or_else(|e| e.into_inner())
    }

    /// The stored grid, or one derived from component boxes on first use.
    /// Geometry is never mutated through tools, so the derived grid stays valid.
    pub fn grid(&self) -> Option<Arc<OccupancyGrid>> {
        self.grid
            .get_or_init(|| match ops::occupancy_from_memory(&self.read(), &self.occupancy_config) {
                Ok(g) => Some(Arc::new(g)),
                Err(e) => {
                    log::warn!("no occupancy grid: {e}");
                    None
                }
            })
            .clone()
    }
}

pub type ToolHandler = Arc<dyn Fn(&ToolContext, &Map<String, Value>) -> Result<Value, ToolError> + Send + Sync>;

pub struct Registry {
    ctx: ToolContext,
    tools: BTreeMap<String, (ToolSpec, ToolHandler)>,
}

impl Registry {
    pub fn new(ctx: ToolContext) -> Self {
        Self {
            ctx,
            tools: BTreeMap::new(),
        }
    }

    /// Registry with the built-in tools: search, distance, vicinity,
    /// navigation_distance, get_image, execute and annotate.
    pub fn standard(ctx: ToolContext) -> Self {
        let mut r = Self::new(ctx);
        for (spec, handler) in builtin_tools() {
            r.register(spec, handler).expect("builtin names are unique");
        }
        r
    }

    pub fn context(&self) -> &ToolContext {
        &self.ctx
    }

    pub fn register(&mut self, spec: ToolSpec, handler: ToolHandler) -> Result<(), ToolError> {
        if self.tools.contains_key(&spec.name) {
            return Err(ToolError::new(ErrorCode::Conflict, format!("tool `{}` is already registered", spec.name)));
        }
        self.tools.insert(spec.name.clone(), (spec, handler));
        Ok(())
    }

    /// Alias of [`Registry::register`] for adapters over outside data sources.
    pub fn register_external(&mut self, spec: ToolSpec, handler: ToolHandler) -> Result<(), ToolError> {
        self.register(spec, handler)
    }

    /// Specs sorted by name.
    pub fn specs(&self) -> impl Iterator<Item = &ToolSpec> {
        self.tools.values().map(|(s, _)| s)
    }

    pub fn dispatch(&self, call: &ToolCall) -> ToolResult {
        let id = call.call_id.clone();
        let Some((spec, handler)) = self.tools.get(&call.name) else {
            return ToolResult::failure(id, ToolError::new(ErrorCode::UnknownTool, format!("unknown tool `{}`", call.name)));
        };
        if let Err(e) = spec.validate(&call.arguments) {
            return ToolResult::failure(id, e);
        }
        match catch_unwind(AssertUnwindSafe(|| handler(&self.ctx, &call.arguments))) {
            Ok(Ok(payload)) => ToolResult::success(id, payload),
            Ok(Err(e)) => ToolResult::failure(id, e),
            Err(_) => ToolResult::failure(id, ToolError::new(ErrorCode::Internal, format!("tool `{}` panicked", call.name))),
        }
    }

    /// Parses a wire request and dispatches it; malformed JSON becomes an
    /// `invalid_arguments` result.
    pub fn dispatch_json(&self, request: &str) -> ToolResult {
        match serde_json::from_str::<ToolCall>(request) {
            Ok(call) => self.dispatch(&call),
            Err(e) => ToolResult::failure(None, ToolError::new(ErrorCode::InvalidArguments, format!("malformed tool call: {e}"))),
        }
    }
}

// Argument accessors; validation has already checked presence and type.
fn id_arg(args: &Map<String, Value>, key: &str) -> u64 {
    args[key].as_u64().expect("validated id")
}

fn num_arg(args: &Map<String, Value>, key: &str) -> f64 {
    args[key].as_f64().expect("validated number")
}

fn str_arg<'a>(args: &'a Map<String, Value>, key: &str) -> &'a str {
    args[key].as_str().expect("validated string")
}

fn to_payload<T: Serialize>(v: T) -> Result<Value, ToolError> {
    serde_json::to_value(v).map_err(|e| ToolError::new(ErrorCode::Internal, e.to_string()))
}

fn handler<F>(f: F) -> ToolHandler
where
    F: Fn(&ToolContext, &Map<String, Value>) -> Result<Value, ToolError> + Send + Sync + 'static,
{
    Arc::new(f)
}

pub const DEFAULT_SEARCH_LIMIT: u64 = 10;

fn builtin_tools() -> Vec<(ToolSpec, ToolHandler)> {
    use ParamType::*;
    vec![
        (
            ToolSpec::new("search", "Rank components whose caption or attributes match a text query.")
                .param("query", String, true, "free text")
                .param("limit", Id, false, "maximum results, default 10"),
            handler(|ctx, args| {
                let limit = args.get("limit").and_then(Value::as_u64).unwrap_or(DEFAULT_SEARCH_LIMIT);
                to_payload(ops::search(&ctx.read(), str_arg(args, "query"), limit as usize)?)
            }),
        ),
        (
            ToolSpec::new("distance", "Straight-line distance in meters between two component centroids.")
                .param("a", Id, true, "component id")
                .param("b", Id, true, "component id"),
            handler(|ctx, args| to_payload(ops::distance(&ctx.read(), id_arg(args, "a"), id_arg(args, "b"))?)),
        ),
        (
            ToolSpec::new("vicinity", "Components whose centroids lie within a radius of a component, nearest first.")
                .param("id", Id, true, "component id")
                .param("radius", Number, true, "meters"),
            handler(|ctx, args| to_payload(ops::vicinity(&ctx.read(), id_arg(args, "id"), num_arg(args, "radius"))?)),
        ),
        (
            ToolSpec::new(
                "navigation_distance",
                "Walkable path length in meters between two components on the floor plane, avoiding obstacles.",
            )
            .param("a", Id, true, "component id")
            .param("b", Id, true, "component id"),
            handler(|ctx, args| {
                let grid = ctx.grid();
                to_payload(ops::navigation_distance(&ctx.read(), grid.as_deref(), id_arg(args, "a"), id_arg(args, "b"))?)
            }),
        ),
        (
            ToolSpec::new("get_image", "Representative image crops of a component.")
                .param("id", Id, true, "component id")
                .param("include_bytes", Boolean, false, "inline base64 bytes and sha256"),
            handler(get_image),
        ),
        (
            ToolSpec::new(
                "execute",
                "Run a scene query program. Statements: `let x = expr;` or `expr;`. The last value is returned.",
            )
            .param("source", String, true, "program text"),
            handler(|ctx, args| {
                let grid = ctx.grid();
                let memory = ctx.read();
                let env = smql::Env {
                    memory: &memory,
                    grid: grid.as_deref(),
                };
                let out = smql::run(str_arg(args, "source"), &env, &ctx.limits).map_err(ToolError::from)?;
                Ok(json!({ "value": out.value.to_json(), "warnings": out.warnings }))
            }),
        ),
        (
            ToolSpec::new("annotate", "Attach or overwrite a text attribute on a component.")
                .param("id", Id, true, "component id")
                .param("key", String, true, "attribute name")
                .param("value", String, true, "attribute text"),
            handler(|ctx, args| {
                let id = id_arg(args, "id");
                let mut memory = ctx.write();
                memory.append_attribute(id, str_arg(args, "key"), str_arg(args, "value"))?;
                to_payload(memory.get(id).expect("just updated"))
            }),
        ),
    ]
}

fn get_image(ctx: &ToolContext, args: &Map<String, Value>) -> Result<Value, ToolError> {
    let refs = ops::crop_refs(&ctx.read(), id_arg(args, "id"))?;
    let with_bytes = args.get("include_bytes").and_then(Value::as_bool).unwrap_or(false);
    let mut out = Vec::with_capacity(refs.len());
    for r in refs {
        let mut entry = Map::new();
        if with_bytes {
            let path = ctx.memory_dir.clone().unwrap_or_default().join(&r);
            let bytes = std::fs::read(&path)
                .map_err(|e| ToolError::new(ErrorCode::IoError, format!("cannot read {}: {e}", path.display())))?;
            entry.insert("bytes_base64".into(), base64::engine::general_purpose::STANDARD.encode(&bytes).into());
            entry.insert("sha256".into(), hex_digest(&bytes).into());
        }
        entry.insert("ref".into(), r.into());
        out.push(Value::Object(entry));
    }
    Ok(Value::Array(out))
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
