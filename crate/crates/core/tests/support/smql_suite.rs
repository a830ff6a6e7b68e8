//! Query language: fuzzing, tool equivalence and print/parse round trips.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scenemem::geometry::{Aabb3, Point3};
use scenemem::memory::{Component, SceneMemory};
use scenemem::smql::{self, parse_expr, BinOp, Env, Expr, ExprKind, Limits, UnOp, Value};
use scenemem::tools::occupancy::{OccupancyConfig, OccupancyGrid};
use scenemem::tools::ops;

const WORDS: [&str; 8] = ["red", "chair", "lamp", "desk", "fire", "extinguisher", "box", "door"];
const BUILTINS: [&str; 38] = [
    "components", "search", "component", "caption", "centroid", "bbox", "dims", "attr", "distance", "nav_distance",
    "vicinity", "id", "vec", "dot", "add", "sub", "scale", "norm", "lo", "hi", "fits", "abs", "sqrt", "min", "max",
    "len", "range", "pairs", "map", "filter", "sort_by", "min_by", "max_by", "count", "sum", "frob", "caption", "len",
];

fn scene() -> (SceneMemory, OccupancyGrid) {
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let comps: Vec<Component> = (0..30u64)
        .map(|id| {
            let at = Point3::new(r.random_range(0.0..8.0), r.random_range(0.0..8.0), r.random_range(0.2..1.0));
            let h = Point3::new(r.random_range(0.1..0.5), r.random_range(0.1..0.5), 0.2);
            let caption = format!(
                "{} {} {}",
                WORDS[r.random_range(0..WORDS.len())],
                WORDS[r.random_range(0..WORDS.len())],
                WORDS[r.random_range(0..WORDS.len())]
            );
            let mut attributes = BTreeMap::new();
            if id % 4 == 0 {
                attributes.insert("color".to_string(), "red".to_string());
            }
            Component {
                id,
                centroid: at,
                bbox: Aabb3::new(at - h, at + h).unwrap(),
                caption,
                crop_refs: vec![format!("crops/{id}_0.png")],
                attributes,
            }
        })
        .collect();
    let memory = SceneMemory::from_components(comps).unwrap();
    let grid = ops::occupancy_from_memory(&memory, &OccupancyConfig::default()).unwrap();
    (memory, grid)
}

fn fingerprint(m: &SceneMemory) -> String {
    m.components().map(|c| serde_json::to_string(c).unwrap()).collect::<Vec<_>>().join("\n")
}

fn limits() -> Limits {
    Limits {
        max_steps: 20_000,
        ..Limits::default()
    }
}

// ---------------------------------------------------------------- fuzzing

pub fn random_bytes_never_crash() {
    let (memory, grid) = scene();
    let before = fingerprint(&memory);
    let env = Env {
        memory: &memory,
        grid: Some(&grid),
    };
    let mut r = ChaCha8Rng::seed_from_u64(1);
    // Mostly printable bytes so some inputs get past the lexer.
    const ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyz_0123456789 ()[]{},;|=<>!+-*/.\"#\n\\ letifthenelsandornotmapfiltersearch";
    for i in 0..10_000 {
        let len = r.random_range(0..64);
        let bytes: Vec<u8> = (0..len)
            .map(|_| {
                if i % 3 == 0 {
                    r.random()
                } else {
                    ALPHABET[r.random_range(0..ALPHABET.len())]
                }
            })
            .collect();
        let src = String::from_utf8_lossy(&bytes);
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(|| smql::run(&src, &env, &limits()));
        assert!(outcome.is_ok(), "panic on {src:?}");
        assert!(start.elapsed() < Duration::from_secs(5), "slow on {src:?}");
    }
    assert_eq!(fingerprint(&memory), before);
}

struct Gen {
    r: ChaCha8Rng,
    vars: Vec<String>,
}

impl Gen {
    fn expr(&mut self, depth: u32) -> String {
        let r = &mut self.r;
        if depth == 0 || r.random_range(0..10) < 3 {
            return match r.random_range(0..7) {
                0 => format!("{}", r.random_range(0..40)),
                1 => format!("{:.2}", r.random_range(-3.0..3.0)),
                2 => format!("\"{}\"", WORDS[r.random_range(0..WORDS.len())]),
                3 => ["true", "false", "nil"][r.random_range(0..3)].to_string(),
                4 if !self.vars.is_empty() => self.vars[r.random_range(0..self.vars.len())].clone(),
                5 => "undefined_name".to_string(),
                _ => "components()".to_string(),
            };
        }
        match r.random_range(0..12) {
            0..=4 => {
                let name = BUILTINS[r.random_range(0..BUILTINS.len())];
                let n = r.random_range(0..4);
                let args: Vec<String> = (0..n).map(|_| self.expr(depth - 1)).collect();
                format!("{name}({})", args.join(", "))
            }
            5 => {
                let op = BinOp::ALL[self.r.random_range(0..BinOp::ALL.len())].symbol();
                format!("({} {op} {})", self.expr(depth - 1), self.expr(depth - 1))
            }
            6 => {
                let n = self.r.random_range(0..4);
                let items: Vec<String> = (0..n).map(|_| self.expr(depth - 1)).collect();
                format!("[{}]", items.join(", "))
            }
            7 => {
                let p = format!("p{}", self.vars.len());
                self.vars.push(p.clone());
                let body = self.expr(depth - 1);
                self.vars.pop();
                let list = self.expr(depth - 1);
                let f = ["map", "filter", "sort_by", "min_by", "max_by", "count", "sum"][self.r.random_range(0..7)];
                format!("{f}({list}, |{p}| {body})")
            }
            8 => format!("if {} then {} else {}", self.expr(depth - 1), self.expr(depth - 1), self.expr(depth - 1)),
            9 => format!("{}[{}]", self.expr(depth - 1), self.expr(depth - 1)),
            10 => format!("(not {})", self.expr(depth - 1)),
            // Deliberately expensive shapes.
            _ => ["map(range(100000), |i| range(1000))", "count(pairs(range(500)))", "sum(range(90000))", "range(1e9)"]
                [self.r.random_range(0..4)]
            .to_string(),
        }
    }

    fn program(&mut self) -> String {
        self.vars.clear();
        let mut out = String::new();
        for i in 0..self.r.random_range(0..4) {
            let e = self.expr(4);
            out.push_str(&format!("let v{i} = {e};\n"));
            self.vars.push(format!("v{i}"));
        }
        out.push_str(&self.expr(5));
        out.push(';');
        out
    }
}

pub fn generated_programs_terminate_without_side_effects() {
    let (memory, grid) = scene();
    let before = fingerprint(&memory);
    let env = Env {
        memory: &memory,
        grid: Some(&grid),
    };
    let mut g = Gen {
        r: ChaCha8Rng::seed_from_u64(2),
        vars: vec![],
    };
    let mut ok = 0;
    let mut limited = 0;
    for _ in 0..1_000 {
        let src = g.program();
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(|| smql::run(&src, &env, &limits()));
        let elapsed = start.elapsed();
        let outcome = outcome.unwrap_or_else(|_| panic!("panic on {src}"));
        assert!(elapsed < Duration::from_secs(5), "slow on {src}");
        match outcome {
            Ok(out) => {
                assert!(out.steps <= limits().max_steps);
                ok += 1;
            }
            Err(e) if e.kind == smql::ErrorKind::ResourceLimit => limited += 1,
            Err(e) => assert_ne!(e.kind, smql::ErrorKind::Internal, "{src}: {e}"),
        }
    }
    assert_eq!(fingerprint(&memory), before);
    assert!(ok > 50 && limited > 5, "ok {ok}, limited {limited}");
}

// ---------------------------------------------------------------- equivalence

fn ids(v: &Value) -> Vec<u64> {
    v.as_list()
        .expect("list")
        .iter()
        .map(|x| match x {
            Value::Comp(id) => *id,
            other => panic!("not a component: {other:?}"),
        })
        .collect()
}

fn num(v: &Value) -> Option<f64> {
    match v {
        Value::Num(n) => Some(*n),
        Value::Nil => None,
        other => panic!("not a number: {other:?}"),
    }
}

pub fn tool_programs_equal_direct_calls() {
    let (memory, grid) = scene();
    let env = Env {
        memory: &memory,
        grid: Some(&grid),
    };
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let run = |src: &str| smql::run(src, &env, &Limits::default()).unwrap_or_else(|e| panic!("{src}: {e}"));
    for case in 0..200 {
        // Ids 30 and up do not exist, so failure paths are covered too.
        let a = r.random_range(0..34u64);
        let b = r.random_range(0..34u64);
        let radius = (r.random_range(0.0..4.0f64) * 100.0).round() / 100.0;
        let word = WORDS[r.random_range(0..WORDS.len())];
        let limit = r.random_range(1..8);
        match case % 5 {
            0 => {
                let out = run(&format!("distance({a}, {b});"));
                assert_eq!(num(&out.value), ops::distance(&memory, a, b).ok(), "case {case}");
                assert_eq!(out.warnings.is_empty(), ops::distance(&memory, a, b).is_ok());
            }
            1 => {
                let out = run(&format!("nav_distance({a}, {b});"));
                assert_eq!(num(&out.value), ops::navigation_distance(&memory, Some(&grid), a, b).ok(), "case {case}");
            }
            2 => {
                let out = run(&format!("vicinity({a}, {radius});"));
                match ops::vicinity(&memory, a, radius) {
                    Ok(n) => assert_eq!(ids(&out.value), n.iter().map(|x| x.id).collect::<Vec<_>>()),
                    Err(_) => assert_eq!(out.value, Value::Nil),
                }
            }
            3 => {
                let out = run(&format!("search(\"{word}\", {limit});"));
                let direct: Vec<u64> = ops::search(&memory, word, limit).unwrap().iter().map(|h| h.id).collect();
                assert_eq!(ids(&out.value), direct);
            }
            _ => {
                // search -> vicinity -> distance chain.
                let src = format!(
                    "let hits = search(\"{word}\", {limit});\n\
                     let near = if len(hits) > 0 then vicinity(hits[0], {radius}) else [];\n\
                     map(near, |c| distance(c, {b}));"
                );
                let out = run(&src);
                let hits = ops::search(&memory, word, limit).unwrap();
                let near = match hits.first() {
                    Some(h) => ops::vicinity(&memory, h.id, radius).unwrap(),
                    None => vec![],
                };
                let expected: Vec<Option<f64>> = near.iter().map(|n| ops::distance(&memory, n.id, b).ok()).collect();
                let got: Vec<Option<f64>> = out.value.as_list().unwrap().iter().map(num).collect();
                assert_eq!(got, expected, "case {case}");
            }
        }
    }
}

// ---------------------------------------------------------------- round trip

fn random_ast(r: &mut ChaCha8Rng, depth: u32, scope: &mut Vec<String>) -> Expr {
    use ExprKind::*;
    if depth == 0 || r.random_range(0..10) < 3 {
        let kind = match r.random_range(0..6) {
            0 => Num(r.random_range(0..1000) as f64 / 8.0),
            1 => Str(["", "a b", "quote\"d", "back\\slash", "tab\tnew\nline"][r.random_range(0..5)].to_string()),
            2 => Bool(r.random()),
            3 => Nil,
            4 if !scope.is_empty() => Var(scope[r.random_range(0..scope.len())].clone()),
            _ => Var(format!("x{}", r.random_range(0..3))),
        };
        return Expr::bare(kind);
    }
    let sub = |r: &mut ChaCha8Rng, scope: &mut Vec<String>| Box::new(random_ast(r, depth - 1, scope));
    let kind = match r.random_range(0..8) {
        0 => List((0..r.random_range(0..4)).map(|_| *sub(r, scope)).collect()),
        1 => Unary([UnOp::Neg, UnOp::Not][r.random_range(0..2)], sub(r, scope)),
        2 | 3 => Binary(BinOp::ALL[r.random_range(0..BinOp::ALL.len())], sub(r, scope), sub(r, scope)),
        4 => Call(
            BUILTINS[r.random_range(0..BUILTINS.len())].to_string(),
            (0..r.random_range(0..4)).map(|_| *sub(r, scope)).collect(),
        ),
        5 => {
            let n = r.random_range(1..3);
            let params: Vec<String> = (0..n).map(|i| format!("q{}_{i}", scope.len())).collect();
            let mark = scope.len();
            scope.extend(params.iter().cloned());
            let body = random_ast(r, depth - 1, scope);
            scope.truncate(mark);
            Lambda(params, Arc::new(body))
        }
        6 => Index(sub(r, scope), sub(r, scope)),
        _ => If(sub(r, scope), sub(r, scope), sub(r, scope)),
    };
    Expr::bare(kind)
}

pub fn printed_ast_reparses_to_itself() {
    let mut r = ChaCha8Rng::seed_from_u64(4);
    for case in 0..100 {
        let ast = random_ast(&mut r, 5, &mut Vec::new());
        let printed = ast.to_string();
        let reparsed = parse_expr(&printed).unwrap_or_else(|e| panic!("case {case}: {printed}: {e}"));
        assert_eq!(reparsed, ast, "case {case}: {printed}");
        assert_eq!(reparsed.to_string(), printed);
    }
}
