use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use super::ast::{BinOp, Expr, ExprKind, Program, Stmt, UnOp};
use super::value::{Closure, Frame, Scope, Value};
use super::{Env, ErrorKind, Limits, Pos, SmqlError};
use crate::geometry::{Aabb3, Point3};
use crate::tools::{ops, ToolError};

/// Largest integer exactly representable as f64.
const MAX_EXACT_INT: f64 = 9_007_199_254_740_992.0;

type R<T> = Result<T, SmqlError>;

pub struct Evaluator<'a> {
    env: &'a Env<'a>,
    limits: Limits,
    pub steps: u64,
    pub bytes: u64,
    pub warnings: Vec<String>,
    call_depth: u32,
    globals: Vec<Value>,
    global_index: HashMap<String, usize>,
}

impl<'a> Evaluator<'a> {
    pub fn new(env: &'a Env<'a>, limits: Limits) -> Self {
        Self {
            env,
            limits,
            steps: 0,
            bytes: 0,
            warnings: Vec::new(),
            call_depth: 0,
            globals: Vec::new(),
            global_index: HashMap::new(),
        }
    }

    pub fn run(&mut self, program: &Program) -> R<Value> {
        let mut last = Value::Nil;
        for stmt in &program.stmts {
            let scope = Scope {
                locals: None,
                globals_visible: self.globals.len(),
            };
            match stmt {
                Stmt::Let(name, e) => {
                    let v = self.eval(e, &scope)?;
                    self.global_index.insert(name.clone(), self.globals.len());
                    self.globals.push(v.clone());
                    last = v;
                }
                Stmt::Expr(e) => last = self.eval(e, &scope)?,
            }
        }
        Ok(last)
    }

    fn limit(&self, pos: Pos, what: &str) -> SmqlError {
        SmqlError::at(ErrorKind::ResourceLimit, pos, format!("{what} limit exceeded"))
    }

    fn tick(&mut self, n: u64, pos: Pos) -> R<()> {
        self.steps = self.steps.saturating_add(n);
        if self.steps > self.limits.max_steps {
            return Err(self.limit(pos, "step"));
        }
        Ok(())
    }

    fn charge(&mut self, bytes: u64, pos: Pos) -> R<()> {
        self.bytes = self.bytes.saturating_add(bytes);
        if self.bytes > self.limits.max_values_bytes {
            return Err(self.limit(pos, "memory"));
        }
        Ok(())
    }

    fn check_depth(&self, v: &Value, pos: Pos) -> R<()> {
        if v.depth() > self.limits.max_value_depth {
            return Err(self.limit(pos, "value nesting"));
        }
        Ok(())
    }

    fn make_list(&mut self, items: Vec<Value>, pos: Pos) -> R<Value> {
        if items.len() as u64 > self.limits.max_list_len {
            return Err(self.limit(pos, "list length"));
        }
        self.charge(32 + 16 * items.len() as u64, pos)?;
        let v = Value::list(items);
        self.check_depth(&v, pos)?;
        Ok(v)
    }

    fn make_map(&mut self, entries: BTreeMap<String, Value>, pos: Pos) -> R<Value> {
        self.charge(32 + 64 * entries.len() as u64, pos)?;
        let v = Value::map(entries);
        self.check_depth(&v, pos)?;
        Ok(v)
    }

    fn make_str(&mut self, s: String, pos: Pos) -> R<Value> {
        self.charge(32 + s.len() as u64, pos)?;
        Ok(Value::Str(Arc::from(s)))
    }

    fn type_err(&self, pos: Pos, msg: impl Into<String>) -> SmqlError {
        SmqlError::at(ErrorKind::Type, pos, msg)
    }

    fn lookup(&self, name: &str, scope: &Scope, pos: Pos) -> R<Value> {
        let mut frame = scope.locals.as_deref();
        while let Some(f) = frame {
            if let Some(i) = f.names.iter().position(|n| n == name) {
                return Ok(f.values[i].clone());
            }
            frame = f.parent.as_deref();
        }
        match self.global_index.get(name) {
            Some(&i) if i < scope.globals_visible => Ok(self.globals[i].clone()),
            _ => Err(SmqlError::at(ErrorKind::UnknownVariable, pos, format!("unknown variable `{name}`"))),
        }
    }

    pub fn eval(&mut self, e: &Expr, scope: &Scope) -> R<Value> {
        self.tick(1, e.pos)?;
        match &e.kind {
            ExprKind::Num(n) => Ok(Value::Num(*n)),
            ExprKind::Str(s) => self.make_str(s.clone(), e.pos),
            ExprKind::Bool(b) => Ok(Value::Bool(*b)),
            ExprKind::Nil => Ok(Value::Nil),
            ExprKind::Var(name) => self.lookup(name, scope, e.pos),
            ExprKind::List(items) => {
                let mut out = Vec::with_capacity(items.len());
                for item in items {
                    out.push(self.eval(item, scope)?);
                }
                self.make_list(out, e.pos)
            }
            ExprKind::Unary(op, inner) => {
                let v = self.eval(inner, scope)?;
                match (op, v) {
                    (UnOp::Neg, Value::Num(n)) => Ok(Value::Num(-n)),
                    (UnOp::Neg, Value::Vec3(v)) => Ok(Value::Vec3([-v[0], -v[1], -v[2]])),
                    (UnOp::Not, Value::Bool(b)) => Ok(Value::Bool(!b)),
                    (op, v) => Err(self.type_err(e.pos, format!("cannot apply {op:?} to {}", v.type_name()))),
                }
            }
            ExprKind::Binary(BinOp::And, a, b) => {
                let l = self.eval_bool(a, scope)?;
                Ok(Value::Bool(l && self.eval_bool(b, scope)?))
            }
            ExprKind::Binary(BinOp::Or, a, b) => {
                let l = self.eval_bool(a, scope)?;
                Ok(Value::Bool(l || self.eval_bool(b, scope)?))
            }
            ExprKind::Binary(op, a, b) => {
                let l = self.eval(a, scope)?;
                let r = self.eval(b, scope)?;
                self.binary(*op, l, r, e.pos)
            }
            ExprKind::If(c, t, f) => {
                if self.eval_bool(c, scope)? {
                    self.eval(t, scope)
                } else {
                    self.eval(f, scope)
                }
            }
            ExprKind::Lambda(params, body) => {
                let depth = 1 + captured_depth(&scope.locals);
                self.charge(64, e.pos)?;
                let v = Value::Lambda(Arc::new(Closure {
                    params: params.clone(),
                    body: body.clone(),
                    scope: scope.clone(),
                    depth,
                }));
                self.check_depth(&v, e.pos)?;
                Ok(v)
            }
            ExprKind::Index(target, index) => {
                let t = self.eval(target, scope)?;
                let i = self.eval(index, scope)?;
                self.index(t, i, e.pos)
            }
            ExprKind::Call(name, args) => {
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    vals.push(self.eval(a, scope)?);
                }
                self.builtin(name, vals, e.pos)
            }
        }
    }

    fn eval_bool(&mut self, e: &Expr, scope: &Scope) -> R<bool> {
        match self.eval(e, scope)? {
            Value::Bool(b) => Ok(b),
            other => Err(self.type_err(e.pos, format!("expected boolean, found {}", other.type_name()))),
        }
    }

    fn binary(&mut self, op: BinOp, l: Value, r: Value, pos: Pos) -> R<Value> {
        use Value::*;
        let v = match (op, &l, &r) {
            (BinOp::Eq, _, _) => Bool(l == r),
            (BinOp::Ne, _, _) => Bool(l != r),
            (BinOp::Add, Num(a), Num(b)) => Num(a + b),
            (BinOp::Sub, Num(a), Num(b)) => Num(a - b),
            (BinOp::Mul, Num(a), Num(b)) => Num(a * b),
            (BinOp::Div, Num(_), Num(b)) if *b == 0.0 => return Err(self.type_err(pos, "division by zero")),
            (BinOp::Div, Num(a), Num(b)) => Num(a / b),
            (BinOp::Add, Vec3(a), Vec3(b)) => Vec3(vadd(a, b)),
            (BinOp::Sub, Vec3(a), Vec3(b)) => Vec3(vsub(a, b)),
            (BinOp::Mul, Vec3(a), Num(s)) | (BinOp::Mul, Num(s), Vec3(a)) => Vec3(vscale(a, *s)),
            (BinOp::Div, Vec3(_), Num(s)) if *s == 0.0 => return Err(self.type_err(pos, "division by zero")),
            (BinOp::Div, Vec3(a), Num(s)) => Vec3(vscale(a, 1.0 / s)),
            (BinOp::Add, Str(a), Str(b)) => return self.make_str(format!("{a}{b}"), pos),
            (BinOp::Add, List(a), List(b)) => {
                let items: Vec<Value> = a.items.iter().chain(b.items.iter()).cloned().collect();
                self.tick(items.len() as u64, pos)?;
                return self.make_list(items, pos);
            }
            (BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge, _, _) => {
                let ord = self.compare(&l, &r, pos)?;
                Bool(match op {
                    BinOp::Lt => ord == Ordering::Less,
                    BinOp::Le => ord != Ordering::Greater,
                    BinOp::Gt => ord == Ordering::Greater,
                    _ => ord != Ordering::Less,
                })
            }
            _ => {
                return Err(self.type_err(
                    pos,
                    format!("cannot apply `{}` to {} and {}", op.symbol(), l.type_name(), r.type_name()),
                ))
            }
        };
        Ok(v)
    }

    fn compare(&self, a: &Value, b: &Value, pos: Pos) -> R<Ordering> {
        match (a, b) {
            (Value::Num(x), Value::Num(y)) => Ok(x.total_cmp(y)),
            (Value::Str(x), Value::Str(y)) => Ok(x.cmp(y)),
            _ => Err(self.type_err(pos, format!("cannot order {} and {}", a.type_name(), b.type_name()))),
        }
    }

    fn index(&mut self, t: Value, i: Value, pos: Pos) -> R<Value> {
        match (&t, &i) {
            (Value::List(s), Value::Num(n)) => {
                let k = self.as_index(*n, s.items.len(), pos)?;
                Ok(s.items[k].clone())
            }
            (Value::Vec3(v), Value::Num(n)) => Ok(Value::Num(v[self.as_index(*n, 3, pos)?])),
            (Value::Map(d), Value::Str(k)) => Ok(d.entries.get(k.as_ref()).cloned().unwrap_or(Value::Nil)),
            _ => Err(self.type_err(pos, format!("cannot index {} with {}", t.type_name(), i.type_name()))),
        }
    }

    fn as_index(&self, n: f64, len: usize, pos: Pos) -> R<usize> {
        if n.fract() != 0.0 || n < 0.0 || n >= len as f64 {
            return Err(self.type_err(pos, format!("index {n} out of range for length {len}")));
        }
        Ok(n as usize)
    }

    fn call_lambda(&mut self, f: &Closure, args: Vec<Value>, pos: Pos) -> R<Value> {
        if f.params.len() != args.len() {
            return Err(self.type_err(
                pos,
                format!("lambda takes {} argument(s), given {}", f.params.len(), args.len()),
            ));
        }
        if self.call_depth >= self.limits.max_call_depth {
            return Err(self.limit(pos, "lambda depth"));
        }
        self.call_depth += 1;
        let scope = Scope {
            locals: Some(Arc::new(Frame {
                names: f.params.clone(),
                values: args,
                parent: f.scope.locals.clone(),
            })),
            globals_visible: f.scope.globals_visible,
        };
        let r = self.eval(&f.body, &scope);
        self.call_depth -= 1;
        r
    }

    fn warn(&mut self, func: &str, e: ToolError) -> Value {
        self.warnings.push(format!("{func}: {}: {}", e.code, e.message));
        Value::Nil
    }

    fn builtin(&mut self, name: &str, args: Vec<Value>, pos: Pos) -> R<Value> {
        let a = Args {
            name,
            args,
            pos,
        };
        let memory = self.env.memory;
        match name {
            "components" => {
                a.arity(0, 0)?;
                let ids: Vec<Value> = memory.components().map(|c| Value::Comp(c.id)).collect();
                self.tick(ids.len() as u64, pos)?;
                self.make_list(ids, pos)
            }
            "search" => {
                a.arity(1, 2)?;
                let q = a.string(0)?;
                let limit = if a.len() > 1 { a.count(1)? } else { 10 };
                match ops::search(memory, &q, limit as usize) {
                    Ok(hits) => {
                        let ids = hits.into_iter().map(|h| Value::Comp(h.id)).collect();
                        self.make_list(ids, pos)
                    }
                    Err(e) => Ok(self.warn(name, e)),
                }
            }
            "component" => {
                a.arity(1, 1)?;
                let id = a.id(0)?;
                let Some(c) = memory.get(id) else {
                    return Ok(self.warn(name, ops::component(memory, id).unwrap_err()));
                };
                let attrs = c
                    .attributes
                    .iter()
                    .map(|(k, v)| (k.clone(), Value::str(v)))
                    .collect::<BTreeMap<_, _>>();
                let crops = c.crop_refs.iter().map(|r| Value::str(r)).collect::<Vec<_>>();
                let attrs = self.make_map(attrs, pos)?;
                let crops = self.make_list(crops, pos)?;
                let mut m = BTreeMap::new();
                m.insert("id".to_string(), Value::Comp(id));
                m.insert("caption".to_string(), Value::str(&c.caption));
                m.insert("centroid".to_string(), Value::Vec3(c.centroid.to_array()));
                m.insert("bbox".to_string(), Value::Box(c.bbox));
                m.insert("attrs".to_string(), attrs);
                m.insert("crops".to_string(), crops);
                self.make_map(m, pos)
            }
            "caption" | "centroid" | "bbox" | "dims" => {
                a.arity(1, 1)?;
                let id = a.id(0)?;
                match ops::component(memory, id) {
                    Ok(c) => Ok(match name {
                        "caption" => return self.make_str(c.caption.clone(), pos),
                        "centroid" => Value::Vec3(c.centroid.to_array()),
                        "bbox" => Value::Box(c.bbox),
                        _ => Value::Vec3(c.bbox.extents().to_array()),
                    }),
                    Err(e) => Ok(self.warn(name, e)),
                }
            }
            "attr" => {
                a.arity(2, 2)?;
                let id = a.id(0)?;
                let key = a.string(1)?;
                match ops::component(memory, id) {
                    Ok(c) => match c.attributes.get(&key) {
                        Some(v) => self.make_str(v.clone(), pos),
                        None => Ok(Value::Nil),
                    },
                    Err(e) => Ok(self.warn(name, e)),
                }
            }
            "distance" | "nav_distance" => {
                a.arity(2, 2)?;
                let (x, y) = (a.id(0)?, a.id(1)?);
                let r = if name == "distance" {
                    ops::distance(memory, x, y)
                } else {
                    ops::navigation_distance(memory, self.env.grid, x, y)
                };
                Ok(r.map(Value::Num).unwrap_or_else(|e| self.warn(name, e)))
            }
            "vicinity" => {
                a.arity(2, 2)?;
                let id = a.id(0)?;
                let r = a.num(1)?;
                match ops::vicinity(memory, id, r) {
                    Ok(n) => {
                        let ids = n.into_iter().map(|n| Value::Comp(n.id)).collect();
                        self.make_list(ids, pos)
                    }
                    Err(e) => Ok(self.warn(name, e)),
                }
            }
            "id" => {
                a.arity(1, 1)?;
                Ok(Value::Num(a.id(0)? as f64))
            }
            "vec" => {
                a.arity(3, 3)?;
                Ok(Value::Vec3([a.num(0)?, a.num(1)?, a.num(2)?]))
            }
            "dot" => {
                a.arity(2, 2)?;
                let (u, v) = (a.vec(0)?, a.vec(1)?);
                Ok(Value::Num(u[0] * v[0] + u[1] * v[1] + u[2] * v[2]))
            }
            "add" | "sub" => {
                a.arity(2, 2)?;
                let (u, v) = (a.vec(0)?, a.vec(1)?);
                Ok(Value::Vec3(if name == "add" { vadd(&u, &v) } else { vsub(&u, &v) }))
            }
            "scale" => {
                a.arity(2, 2)?;
                Ok(Value::Vec3(vscale(&a.vec(0)?, a.num(1)?)))
            }
            "norm" => {
                a.arity(1, 1)?;
                let v = a.vec(0)?;
                Ok(Value::Num(Point3::from(v).norm()))
            }
            "lo" | "hi" => {
                a.arity(1, 1)?;
                let b = a.boxed(0)?;
                Ok(Value::Vec3(if name == "lo" { b.min.to_array() } else { b.max.to_array() }))
            }
            "fits" => {
                a.arity(2, 2)?;
                let d = a.vec(0)?;
                let container = match &a.args[1] {
                    Value::Box(b) => b.extents().to_array(),
                    _ => a.vec(1)?,
                };
                Ok(Value::Bool(fits(d, container)))
            }
            "abs" | "sqrt" => {
                a.arity(1, 1)?;
                let x = a.num(0)?;
                if name == "abs" {
                    Ok(Value::Num(x.abs()))
                } else if x < 0.0 {
                    Err(self.type_err(pos, "sqrt of a negative number"))
                } else {
                    Ok(Value::Num(x.sqrt()))
                }
            }
            "min" | "max" => {
                a.arity(1, usize::MAX)?;
                let nums: Vec<f64> = if a.len() == 1 {
                    let list = a.list(0)?;
                    self.tick(list.len() as u64, pos)?;
                    list.iter()
                        .map(|v| match v {
                            Value::Num(n) => Ok(*n),
                            other => Err(self.type_err(pos, format!("{name} expects numbers, found {}", other.type_name()))),
                        })
                        .collect::<R<_>>()?
                } else {
                    (0..a.len()).map(|i| a.num(i)).collect::<R<_>>()?
                };
                let best = nums.into_iter().reduce(|x, y| {
                    let take_y = if name == "min" { y < x } else { y > x };
                    if take_y {
                        y
                    } else {
                        x
                    }
                });
                Ok(best.map(Value::Num).unwrap_or(Value::Nil))
            }
            "len" => {
                a.arity(1, 1)?;
                match &a.args[0] {
                    Value::List(s) => Ok(Value::Num(s.items.len() as f64)),
                    Value::Str(s) => Ok(Value::Num(s.chars().count() as f64)),
                    Value::Map(d) => Ok(Value::Num(d.entries.len() as f64)),
                    other => Err(self.type_err(pos, format!("len expects a list, string or map, found {}", other.type_name()))),
                }
            }
            "range" => {
                a.arity(1, 2)?;
                let (lo, hi) = if a.len() == 1 { (0.0, a.int(0)?) } else { (a.int(0)?, a.int(1)?) };
                let n = (hi - lo).max(0.0);
                if n > self.limits.max_list_len as f64 {
                    return Err(self.limit(pos, "list length"));
                }
                self.tick(n as u64, pos)?;
                let items = (0..n as u64).map(|i| Value::Num(lo + i as f64)).collect();
                self.make_list(items, pos)
            }
            "pairs" => {
                a.arity(1, 1)?;
                let list = a.list(0)?.to_vec();
                let n = list.len() as u64;
                let total = n * n.saturating_sub(1) / 2;
                if total > self.limits.max_list_len {
                    return Err(self.limit(pos, "list length"));
                }
                self.tick(total, pos)?;
                let mut out = Vec::with_capacity(total as usize);
                for i in 0..list.len() {
                    for j in i + 1..list.len() {
                        out.push(self.make_list(vec![list[i].clone(), list[j].clone()], pos)?);
                    }
                }
                self.make_list(out, pos)
            }
            "map" | "filter" => {
                a.arity(2, 2)?;
                let list = a.list(0)?.to_vec();
                let f = a.lambda(1)?;
                let mut out = Vec::with_capacity(list.len());
                for item in list {
                    let r = self.call_lambda(&f, vec![item.clone()], pos)?;
                    if name == "map" {
                        out.push(r);
                    } else {
                        match r {
                            Value::Bool(true) => out.push(item),
                            Value::Bool(false) => {}
                            other => return Err(self.type_err(pos, format!("filter predicate returned {}", other.type_name()))),
                        }
                    }
                }
                self.make_list(out, pos)
            }
            "sort_by" | "min_by" | "max_by" => {
                a.arity(2, 2)?;
                let list = a.list(0)?.to_vec();
                let f = a.lambda(1)?;
                let mut keys = Vec::with_capacity(list.len());
                for item in &list {
                    keys.push(self.call_lambda(&f, vec![item.clone()], pos)?);
                }
                for k in keys.iter().skip(1) {
                    self.compare(&keys[0], k, pos)?;
                }
                self.tick(list.len() as u64, pos)?;
                match name {
                    "sort_by" => {
                        let mut order: Vec<usize> = (0..list.len()).collect();
                        order.sort_by(|&i, &j| self.compare(&keys[i], &keys[j], pos).expect("keys checked"));
                        let sorted = order.into_iter().map(|i| list[i].clone()).collect();
                        self.make_list(sorted, pos)
                    }
                    _ => {
                        let want = if name == "min_by" { Ordering::Less } else { Ordering::Greater };
                        let mut best: Option<usize> = None;
                        for i in 0..list.len() {
                            if best.is_none_or(|b| self.compare(&keys[i], &keys[b], pos).expect("keys checked") == want) {
                                best = Some(i);
                            }
                        }
                        Ok(best.map(|i| list[i].clone()).unwrap_or(Value::Nil))
                    }
                }
            }
            "count" | "sum" => {
                a.arity(1, 2)?;
                let list = a.list(0)?.to_vec();
                let f = if a.len() == 2 { Some(a.lambda(1)?) } else { None };
                self.tick(list.len() as u64, pos)?;
                let mut count = 0.0;
                let mut total = 0.0;
                for item in list {
                    let v = match &f {
                        Some(f) => self.call_lambda(f, vec![item], pos)?,
                        None => item,
                    };
                    match (name, v) {
                        ("count", Value::Bool(b)) if f.is_some() => count += if b { 1.0 } else { 0.0 },
                        ("count", _) if f.is_none() => count += 1.0,
                        ("sum", Value::Num(n)) => total += n,
                        (_, other) => {
                            return Err(self.type_err(pos, format!("{name} cannot use a {} element", other.type_name())))
                        }
                    }
                }
                Ok(Value::Num(if name == "count" { count } else { total }))
            }
            _ => Err(SmqlError::at(ErrorKind::UnknownFunction, pos, format!("unknown function `{name}`"))),
        }
    }
}

fn captured_depth(frame: &Option<Arc<Frame>>) -> u32 {
    let mut depth = 0;
    let mut f = frame.as_deref();
    while let Some(fr) = f {
        depth = fr.values.iter().map(Value::depth).fold(depth, u32::max);
        f = fr.parent.as_deref();
    }
    depth
}

fn vadd(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn vsub(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn vscale(a: &[f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

/// Whether an object of extents `dims` fits in `container` under some
/// assignment of its axes to the container's axes.
pub fn fits(dims: [f64; 3], container: [f64; 3]) -> bool {
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    PERMS
        .iter()
        .any(|p| (0..3).all(|i| dims[p[i]] <= container[i]))
}

struct Args<'n> {
    name: &'n str,
    args: Vec<Value>,
    pos: Pos,
}

impl Args<'_> {
    fn len(&self) -> usize {
        self.args.len()
    }

    fn err(&self, msg: String) -> SmqlError {
        SmqlError::at(ErrorKind::Type, self.pos, format!("{}: {msg}", self.name))
    }

    fn arity(&self, min: usize, max: usize) -> R<()> {
        let n = self.args.len();
        if n < min || n > max {
            let want = if min == max {
                format!("{min}")
            } else if max == usize::MAX {
                format!("at least {min}")
            } else {
                format!("{min} to {max}")
            };
            return Err(self.err(format!("expects {want} argument(s), given {n}")));
        }
        Ok(())
    }

    fn wrong(&self, i: usize, want: &str) -> SmqlError {
        self.err(format!("argument {} must be {want}, found {}", i + 1, self.args[i].type_name()))
    }

    fn num(&self, i: usize) -> R<f64> {
        match self.args[i] {
            Value::Num(n) => Ok(n),
            _ => Err(self.wrong(i, "a number")),
        }
    }

    fn int(&self, i: usize) -> R<f64> {
        match self.args[i] {
            Value::Num(n) if n.fract() == 0.0 && n.abs() <= MAX_EXACT_INT => Ok(n),
            _ => Err(self.wrong(i, "an integer")),
        }
    }

    fn count(&self, i: usize) -> R<u64> {
        match self.args[i] {
            Value::Num(n) if n.fract() == 0.0 && (0.0..=MAX_EXACT_INT).contains(&n) => Ok(n as u64),
            _ => Err(self.wrong(i, "a non-negative integer")),
        }
    }

    fn id(&self, i: usize) -> R<u64> {
        match self.args[i] {
            Value::Comp(id) => Ok(id),
            Value::Num(_) => self.count(i),
            _ => Err(self.wrong(i, "a component or id")),
        }
    }

    fn string(&self, i: usize) -> R<String> {
        match &self.args[i] {
            Value::Str(s) => Ok(s.to_string()),
            _ => Err(self.wrong(i, "a string")),
        }
    }

    fn vec(&self, i: usize) -> R<[f64; 3]> {
        match self.args[i] {
            Value::Vec3(v) => Ok(v),
            _ => Err(self.wrong(i, "a vector")),
        }
    }

    fn boxed(&self, i: usize) -> R<Aabb3> {
        match self.args[i] {
            Value::Box(b) => Ok(b),
            _ => Err(self.wrong(i, "a box")),
        }
    }

    fn list(&self, i: usize) -> R<&[Value]> {
        self.args[i].as_list().ok_or_else(|| self.wrong(i, "a list"))
    }

    fn lambda(&self, i: usize) -> R<Arc<Closure>> {
        match &self.args[i] {
            Value::Lambda(c) => Ok(c.clone()),
            _ => Err(self.wrong(i, "a lambda")),
        }
    }
}
