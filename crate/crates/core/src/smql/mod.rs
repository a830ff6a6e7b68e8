//! A small, deterministic scene query language.
//!
//! Programs are `let name = expr;` and `expr;` statements; the value of the
//! last statement is the result. Evaluation is read-only over the memory and
//! bounded by [`Limits`]. Tool failures inside builtins produce `nil` and a
//! warning instead of aborting the program.
//!
//! ```text
//! let ext = search("fire extinguisher", 5);
//! let near = filter(ext, |e| distance(e, 12) < 3);
//! min_by(near, |e| nav_distance(e, 12));
//! ```

pub mod ast;
mod eval;
pub mod lexer;
pub mod parser;
pub mod value;

use std::fmt;

use serde::Serialize;

use crate::memory::SceneMemory;
use crate::tools::occupancy::OccupancyGrid;
use crate::tools::{ErrorCode, ToolError};

pub use ast::{BinOp, Expr, ExprKind, Program, Stmt, UnOp};
pub use eval::fits;
pub use parser::{parse, parse_expr, MAX_PARSE_DEPTH};
pub use value::Value;

/// 1-based source position; column counts characters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Pos {
    pub line: u32,
    pub column: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Limits {
    pub max_steps: u64,
    /// Cumulative bytes of composite values created during one evaluation.
    pub max_values_bytes: u64,
    pub max_list_len: u64,
    pub max_call_depth: u32,
    pub max_value_depth: u32,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            max_steps: 100_000,
            max_values_bytes: 1 << 20,
            max_list_len: 100_000,
            max_call_depth: 64,
            max_value_depth: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Syntax,
    Type,
    ResourceLimit,
    UnknownFunction,
    UnknownVariable,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct SmqlError {
    pub kind: ErrorKind,
    pub message: String,
    pub line: u32,
    pub column: u32,
    /// For syntax errors, what the parser would have accepted.
    pub expected: Vec<String>,
}

impl fmt::Display for SmqlError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.column, self.message)?;
        if !self.expected.is_empty() {
            write!(f, " (expected {})", self.expected.join(", "))?;
        }
        Ok(())
    }
}

impl SmqlError {
    pub fn at(kind: ErrorKind, pos: Pos, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
            line: pos.line,
            column: pos.column,
            expected: Vec::new(),
        }
    }

    pub fn syntax(pos: Pos, message: impl Into<String>, expected: Vec<String>) -> Self {
        Self {
            expected,
            ..Self::at(ErrorKind::Syntax, pos, message)
        }
    }
}

impl From<SmqlError> for ToolError {
    fn from(e: SmqlError) -> Self {
        let code = match e.kind {
            ErrorKind::Syntax => ErrorCode::SyntaxError,
            ErrorKind::Type => ErrorCode::TypeError,
            ErrorKind::ResourceLimit => ErrorCode::ResourceLimit,
            ErrorKind::UnknownFunction => ErrorCode::UnknownFunction,
            ErrorKind::UnknownVariable => ErrorCode::UnknownVariable,
            ErrorKind::Internal => ErrorCode::Internal,
        };
        ToolError::new(code, e.to_string())
    }
}

/// What a program may read.
#[derive(Clone, Copy)]
pub struct Env<'a> {
    pub memory: &'a SceneMemory,
    pub grid: Option<&'a OccupancyGrid>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub value: Value,
    pub warnings: Vec<String>,
    pub steps: u64,
}

const EVAL_STACK: usize = 64 << 20;

/// Evaluates a parsed program on a dedicated thread with a large stack, so
/// nesting within the configured limits cannot exhaust the caller's stack.
pub fn eval(program: &Program, env: &Env<'_>, limits: &Limits) -> Result<Outcome, SmqlError> {
    let internal = |m: &str| SmqlError::at(ErrorKind::Internal, Pos::default(), m);
    std::thread::scope(|s| {
        let handle = std::thread::Builder::new()
            .name("smql-eval".into())
            .stack_size(EVAL_STACK)
            .spawn_scoped(s, || {
                let mut ev = eval::Evaluator::new(env, *limits);
                let value = ev.run(program)?;
                Ok(Outcome {
                    value,
                    warnings: ev.warnings,
                    steps: ev.steps,
                })
            })
            .map_err(|e| internal(&format!("cannot start evaluator: {e}")))?;
        handle.join().unwrap_or_else(|_| Err(internal("evaluator panicked")))
    })
}

/// Parses and evaluates `source`.
pub fn run(source: &str, env: &Env<'_>, limits: &Limits) -> Result<Outcome, SmqlError> {
    let program = parse(source)?;
    eval(&program, env, limits)
}
