//! Scripted agent sessions replayed against a small room memory.
//!
//! Golden files live in `tests/golden`; set `SCENEMEM_UPDATE_GOLDEN=1` to
//! rewrite them after an intended change.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::PathBuf;

use scenemem::agent::{parse_component_tags, render_system_prompt, run_query, AgentConfig, MemorySummary, QueryOutcome, ScriptedClient};
use scenemem::clients::RetryPolicy;
use scenemem::geometry::{Aabb3, Point3};
use scenemem::memory::{Component, SceneMemory};
use scenemem::tools::{shared, Registry, ToolContext};

fn golden(name: &str, actual: &str) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).parent().unwrap().join("core").join("tests/golden").join(name);
    if std::env::var_os("SCENEMEM_UPDATE_GOLDEN").is_some() {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, actual).unwrap();
        return;
    }
    let expected = fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(actual, expected, "golden file {name} differs");
}

fn comp(id: u64, at: [f64; 3], half: [f64; 3], caption: &str) -> Component {
    let c = Point3::from(at);
    let h = Point3::from(half);
    Component {
        id,
        centroid: c,
        bbox: Aabb3::new(c - h, c + h).unwrap(),
        caption: caption.to_string(),
        crop_refs: vec![format!("crops/{id}_0.png")],
        attributes: BTreeMap::new(),
    }
}

/// A room with filler objects and a few named ones at fixed ids.
fn room() -> SceneMemory {
    let named = [
        (49, [0.3, 4.2, 0.6], [0.1, 0.1, 0.3], "red fire extinguisher mounted on the wall"),
        (93, [0.4, 3.1, 1.2], [0.2, 0.1, 0.15], "white first aid kit in a wall cabinet"),
        (12, [3.0, 2.0, 0.4], [1.0, 0.45, 0.4], "grey fabric sofa"),
        (13, [3.1, 3.2, 0.25], [0.5, 0.3, 0.25], "low wooden coffee table"),
        (14, [4.6, 2.0, 0.9], [0.2, 0.2, 0.9], "standing floor lamp"),
        (20, [1.8, 0.4, 0.45], [0.6, 0.3, 0.45], "kitchen counter with a sink"),
    ];
    let mut comps: Vec<Component> = named.iter().map(|&(id, at, h, cap)| comp(id, at, h, cap)).collect();
    let ids: BTreeSet<u64> = named.iter().map(|n| n.0).collect();
    for id in (0..100u64).filter(|i| !ids.contains(i)) {
        let x = 6.0 + (id % 10) as f64 * 0.8;
        let y = (id / 10) as f64 * 0.8;
        comps.push(comp(id, [x, y, 0.3], [0.2, 0.2, 0.3], &format!("storage bin number {id}")));
    }
    SceneMemory::from_components(comps).unwrap()
}

fn registry() -> Registry {
    Registry::standard(ToolContext::new(shared(room())))
}

fn config(max_steps: usize) -> AgentConfig {
    AgentConfig {
        max_steps,
        retry: RetryPolicy::immediate(1),
    }
}

fn tool(name: &str, args: &str, id: &str) -> String {
    format!("```tool\n{{\"name\": \"{name}\", \"arguments\": {args}, \"call_id\": \"{id}\"}}\n```")
}

fn replay(question: &str, actions: &[String], max_steps: usize) -> QueryOutcome {
    let reg = registry();
    let first = run_query(question, &reg, &ScriptedClient::new(actions.to_vec()), &config(max_steps));
    let again = run_query(question, &registry(), &ScriptedClient::new(actions.to_vec()), &config(max_steps));
    assert_eq!(first.transcript.to_json(), again.transcript.to_json());
    assert_eq!(first.answer, again.answer);
    first.transcript.audit(true).unwrap();
    first
}

fn record(name: &str, outcome: &QueryOutcome) {
    let body = serde_json::json!({
        "aborted": outcome.aborted,
        "answer": outcome.answer,
        "transcript": outcome.transcript,
    });
    golden(&format!("agent_{name}.json"), &format!("{}\n", serde_json::to_string_pretty(&body).unwrap()));
}

pub fn fire_extinguisher_grounding() {
    let answer = "There is a <component_49>fire extinguisher</component_49> and a <component_93>first aid kit</component_93> in the room.";
    let out = replay(
        "Is there any safety equipment in this room?",
        &[
            tool("search", r#"{"query": "fire extinguisher", "limit": 3}"#, "c1"),
            tool("search", r#"{"query": "first aid", "limit": 3}"#, "c2"),
            answer.to_string(),
        ],
        20,
    );
    assert!(!out.aborted);
    assert_eq!(out.answer.ids(), BTreeSet::from([49, 93]));
    assert!(out.answer.dangling.is_empty());
    assert_eq!(out.answer.render(), answer);
    assert_eq!(out.transcript.tool_calls(), 2);
    assert_eq!(parse_component_tags(answer).ids(), BTreeSet::from([49, 93]));
    record("fire_extinguisher", &out);
}

pub fn search_vicinity_distance_chain() {
    let out = replay(
        "How far is the lamp from the table in front of the sofa?",
        &[
            tool("search", r#"{"query": "sofa", "limit": 1}"#, "c1"),
            tool("vicinity", r#"{"id": 12, "radius": 1.5}"#, "c2"),
            tool("search", r#"{"query": "lamp"}"#, "c3"),
            tool("distance", r#"{"a": 13, "b": 14}"#, "c4"),
            "The <component_14>floor lamp</component_14> is about 2.0 m from the <component_13>coffee table</component_13> in front of the <component_12>sofa</component_12>.".to_string(),
        ],
        20,
    );
    assert!(!out.aborted);
    assert_eq!(out.answer.ids(), BTreeSet::from([12, 13, 14]));
    let json = out.transcript.to_json();
    // The vicinity result contains the table, and the distance is exact.
    let near = Point3::new(3.0, 2.0, 0.4).distance(&Point3::new(3.1, 3.2, 0.25));
    assert!(json.contains(&format!(r#"[{{"distance":{near},"id":13}}]"#)), "{json}");
    let d = Point3::new(3.1, 3.2, 0.25).distance(&Point3::new(4.6, 2.0, 0.9));
    assert!(json.contains(&format!(r#""payload":{d}"#)), "{json}");
    record("chain", &out);
}

pub fn program_tool_and_dangling_reference() {
    let program = r#"min_by(search("storage bin", 50), |c| distance(c, 20));"#;
    let out = replay(
        "Which storage bin is closest to the kitchen counter?",
        &[
            tool("execute", &serde_json::json!({ "source": program }).to_string(), "c1"),
            "Bin <component_0>number 0</component_0> is closest; <component_777>this</component_777> does not exist.".to_string(),
        ],
        20,
    );
    assert!(!out.aborted);
    assert!(out.transcript.to_json().contains(r#"{"component_id":0}"#));
    assert_eq!(out.answer.dangling, vec![777]);
    record("program", &out);
}

pub fn malformed_actions_get_feedback() {
    let out = replay(
        "Where is the sofa?",
        &[
            "```tool\n{\"name\": \"search\", \"arguments\": {\"query\": \n```".to_string(),
            "```tool\n{\"name\": \"search\"".to_string(),
            tool("teleport", r#"{"id": 12}"#, "c3"),
            tool("distance", r#"{"a": 12}"#, "c4"),
            tool("search", r#"{"query": "sofa"}"#, "c5"),
            "The <component_12>sofa</component_12> is in the middle of the room.".to_string(),
        ],
        20,
    );
    assert!(!out.aborted);
    let json = out.transcript.to_json();
    assert_eq!(json.matches(r#""kind":"feedback""#).count(), 2);
    assert!(json.contains("unknown_tool"));
    assert!(json.contains("invalid_arguments"));
    assert_eq!(out.answer.ids(), BTreeSet::from([12]));
    record("feedback", &out);
}

pub fn step_limit_and_exhausted_script_abort() {
    let looping: Vec<String> = (0..10).map(|i| tool("distance", r#"{"a": 12, "b": 13}"#, &format!("c{i}"))).collect();
    let out = replay("Keep measuring.", &looping, 3);
    assert!(out.aborted);
    assert_eq!(out.transcript.tool_calls(), 3);
    assert!(out.answer.tags.is_empty());

    let short = replay("Anything?", &[tool("search", r#"{"query": "lamp"}"#, "c1")], 20);
    assert!(short.aborted);
    assert!(short.transcript.to_json().contains("script exhausted"));
    record("abort", &out);
}

pub fn system_prompt_is_stable() {
    let reg = registry();
    let prompt = render_system_prompt(reg.specs(), MemorySummary::of(&reg.context().read()));
    golden("system_prompt.txt", &prompt);
}
