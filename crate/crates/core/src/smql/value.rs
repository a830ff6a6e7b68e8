use std::collections::BTreeMap;
use std::sync::Arc;

use serde_json::{json, Value as Json};

use super::ast::Expr;
use crate::geometry::Aabb3;

/// Runtime value. Composite values are immutable and shared.
#[derive(Debug, Clone)]
pub enum Value {
    Nil,
    Bool(bool),
    Num(f64),
    Str(Arc<str>),
    Vec3([f64; 3]),
    Box(Aabb3),
    Comp(u64),
    List(Arc<Seq>),
    Map(Arc<Dict>),
    Lambda(Arc<Closure>),
}

#[derive(Debug)]
pub struct Seq {
    pub items: Vec<Value>,
    pub depth: u32,
}

#[derive(Debug)]
pub struct Dict {
    pub entries: BTreeMap<String, Value>,
    pub depth: u32,
}

#[derive(Debug)]
pub struct Frame {
    pub names: Vec<String>,
    pub values: Vec<Value>,
    pub parent: Option<Arc<Frame>>,
}

/// Lexical scope: lambda parameter frames plus a prefix of the program's
/// `let` bindings.
#[derive(Debug, Clone, Default)]
pub struct Scope {
    pub locals: Option<Arc<Frame>>,
    pub globals_visible: usize,
}

#[derive(Debug)]
pub struct Closure {
    pub params: Vec<String>,
    pub body: Arc<Expr>,
    pub scope: Scope,
    pub depth: u32,
}

impl Value {
    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Nil => "nil",
            Value::Bool(_) => "boolean",
            Value::Num(_) => "number",
            Value::Str(_) => "string",
            Value::Vec3(_) => "vector",
            Value::Box(_) => "box",
            Value::Comp(_) => "component",
            Value::List(_) => "list",
            Value::Map(_) => "map",
            Value::Lambda(_) => "lambda",
        }
    }

    /// Nesting depth of composites; scalars are 0.
    pub fn depth(&self) -> u32 {
        match self {
            Value::List(s) => s.depth,
            Value::Map(d) => d.depth,
            Value::Lambda(c) => c.depth,
            _ => 0,
        }
    }

    pub fn str(s: &str) -> Value {
        Value::Str(Arc::from(s))
    }

    pub fn list(items: Vec<Value>) -> Value {
        let depth = 1 + items.iter().map(Value::depth).max().unwrap_or(0);
        Value::List(Arc::new(Seq { items, depth }))
    }

    pub fn map(entries: BTreeMap<String, Value>) -> Value {
        let depth = 1 + entries.values().map(Value::depth).max().unwrap_or(0);
        Value::Map(Arc::new(Dict { entries, depth }))
    }

    pub fn as_list(&self) -> Option<&[Value]> {
        match self {
            Value::List(s) => Some(&s.items),
            _ => None,
        }
    }

    /// Wire form: component refs become `{"component_id": n}`, boxes
    /// `{"min": [..], "max": [..]}`, non-finite numbers `null`.
    pub fn to_json(&self) -> Json {
        match self {
            Value::Nil => Json::Null,
            Value::Bool(b) => json!(b),
            Value::Num(n) => json!(n),
            Value::Str(s) => json!(s.as_ref()),
            Value::Vec3(v) => json!(v),
            Value::Box(b) => json!({"min": b.min.to_array(), "max": b.max.to_array()}),
            Value::Comp(id) => json!({ "component_id": id }),
            Value::List(s) => Json::Array(s.items.iter().map(Value::to_json).collect()),
            Value::Map(d) => Json::Object(d.entries.iter().map(|(k, v)| (k.clone(), v.to_json())).collect()),
            Value::Lambda(c) => json!(format!("<lambda/{}>", c.params.len())),
        }
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Value::Nil, Value::Nil) => true,
            (Value::Bool(a), Value::Bool(b)) => a == b,
            (Value::Num(a), Value::Num(b)) => a == b,
            (Value::Str(a), Value::Str(b)) => a == b,
            (Value::Vec3(a), Value::Vec3(b)) => a == b,
            (Value::Box(a), Value::Box(b)) => a == b,
            (Value::Comp(a), Value::Comp(b)) => a == b,
            (Value::List(a), Value::List(b)) => a.items == b.items,
            (Value::Map(a), Value::Map(b)) => a.entries == b.entries,
            (Value::Lambda(a), Value::Lambda(b)) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }
}
