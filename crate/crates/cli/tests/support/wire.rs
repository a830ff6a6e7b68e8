//! HTTP checks against a server bound to a loopback port.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scenemem::agent::{AgentConfig, ModelClient};
use scenemem::pipeline::{ingest_dir, IngestConfig};
use scenemem::tools::{Registry, ToolContext};
use scenemem_cli::server::{router, status_for, AppState};
use serde_json::{json, Value};

pub fn boxes3_bundle() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).parent().unwrap().join("core/tests/fixtures/boxes3")
}

/// Ingests boxes3 into a fresh directory.
pub fn boxes3_memory() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ingest_dir(&boxes3_bundle(), dir.path(), &IngestConfig::default()).unwrap();
    dir
}

pub fn state(memory_dir: &Path, client: Option<Arc<dyn ModelClient>>) -> AppState {
    AppState {
        registry: Registry::standard(ToolContext::open(memory_dir).unwrap()),
        crops_root: Some(memory_dir.to_path_buf()),
        client,
        agent: AgentConfig::default(),
    }
}

pub struct Server {
    pub base: String,
    agent: ureq::Agent,
    _runtime: tokio::runtime::Runtime,
}

pub struct Reply {
    pub status: u16,
    pub content_type: String,
    pub body: Vec<u8>,
}

impl Reply {
    pub fn text(&self) -> &str {
        std::str::from_utf8(&self.body).expect("UTF-8 body")
    }

    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap_or_else(|e| panic!("status {} body is not JSON: {e}", self.status))
    }
}

impl Server {
    pub fn start(state: AppState) -> Self {
        let runtime = tokio::runtime::Runtime::new().unwrap();
        let listener = runtime.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
        let addr = listener.local_addr().unwrap();
        let app = router(Arc::new(state));
        runtime.spawn(async move { axum::serve(listener, app).await });
        let agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
        Self {
            base: format!("http://{addr}"),
            agent,
            _runtime: runtime,
        }
    }

    fn finish(resp: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> Reply {
        let mut resp = resp.unwrap();
        let content_type = resp
            .headers()
            .get("content-type")
            .map(|v| v.to_str().unwrap().to_string())
            .unwrap_or_default();
        Reply {
            status: resp.status().as_u16(),
            content_type,
            body: resp.body_mut().read_to_vec().unwrap(),
        }
    }

    pub fn get(&self, path: &str) -> Reply {
        Self::finish(self.agent.get(format!("{}{path}", self.base)).call())
    }

    pub fn post(&self, path: &str, body: impl AsRef<[u8]>) -> Reply {
        Self::finish(self.agent.post(format!("{}{path}", self.base)).send(body.as_ref()))
    }
}

/// 25 calls touching every registered tool, including failures and writes.
pub fn probe_calls() -> Vec<Value> {
    vec![
        json!({"name": "search", "arguments": {"query": "box"}, "call_id": "p1"}),
        json!({"name": "search", "arguments": {"query": "wooden storage chest", "limit": 1}}),
        json!({"name": "search", "arguments": {"query": "zebra"}}),
        json!({"name": "search", "arguments": {"query": ""}}),
        json!({"name": "distance", "arguments": {"a": 0, "b": 0}}),
        json!({"name": "distance", "arguments": {"a": 0, "b": 2}, "call_id": "p6"}),
        json!({"name": "distance", "arguments": {"a": 0, "b": 99}}),
        json!({"name": "distance", "arguments": {"a": 0}}),
        json!({"name": "vicinity", "arguments": {"id": 0, "radius": 1.0}}),
        json!({"name": "vicinity", "arguments": {"id": 2, "radius": 0.1}}),
        json!({"name": "vicinity", "arguments": {"id": 1, "radius": -1.0}}),
        json!({"name": "navigation_distance", "arguments": {"a": 0, "b": 2}}),
        json!({"name": "navigation_distance", "arguments": {"a": 1, "b": 1}}),
        json!({"name": "navigation_distance", "arguments": {"a": 1, "b": 7}}),
        json!({"name": "get_image", "arguments": {"id": 0}}),
        json!({"name": "get_image", "arguments": {"id": 2, "include_bytes": true}}),
        json!({"name": "get_image", "arguments": {"id": "zero"}}),
        json!({"name": "execute", "arguments": {"source": "distance(0, 1);"}}),
        json!({"name": "execute", "arguments": {"source": "map(search(\"box\", 5), |c| id(c));"}}),
        json!({"name": "execute", "arguments": {"source": "let x = ;"}}),
        json!({"name": "execute", "arguments": {"source": "len(range(0, 100000000));"}}),
        json!({"name": "annotate", "arguments": {"id": 1, "key": "color", "value": "brown"}, "call_id": "w1"}),
        json!({"name": "search", "arguments": {"query": "brown"}}),
        json!({"name": "annotate", "arguments": {"id": 42, "key": "k", "value": "v"}}),
        json!({"name": "teleport", "arguments": {}}),
    ]
}

/// Each HTTP response must equal dispatching the same request in process
/// against an identically loaded memory. Returns the number of calls checked.
pub fn wire_probe() -> usize {
    let memory = boxes3_memory();
    let server = Server::start(state(memory.path(), None));
    let local = Registry::standard(ToolContext::open(memory.path()).unwrap());
    let calls = probe_calls();
    let mut tools_seen = std::collections::BTreeSet::new();
    for call in &calls {
        let request = call.to_string();
        let expected = local.dispatch_json(&request);
        let reply = server.post("/tools/call", &request);
        assert_eq!(reply.text(), expected.to_json(), "{request}");
        let status = expected.error.as_ref().map_or(200, |e| status_for(e.code).as_u16());
        assert_eq!(reply.status, status, "{request}");
        assert_eq!(reply.content_type, "application/json");
        tools_seen.insert(call["name"].as_str().unwrap().to_string());
    }
    for spec in local.specs() {
        assert!(tools_seen.contains(&spec.name), "probe does not cover `{}`", spec.name);
    }
    assert_eq!(server.post("/tools/call", calls[0].to_string()).status, 200);
    let unknown = server.post("/tools/call", calls[24].to_string());
    assert_eq!(unknown.status, 404);
    assert_eq!(unknown.json()["error"]["code"], "unknown_tool");
    calls.len()
}

fn assert_structured_4xx(reply: &Reply, what: &str) {
    assert!((400..500).contains(&reply.status), "{what}: status {}", reply.status);
    assert_eq!(reply.content_type, "application/json", "{what}");
    let v = reply.json();
    assert_eq!(v["ok"], false, "{what}");
    assert!(v["error"]["code"].is_string() && v["error"]["message"].is_string(), "{what}: {v}");
}

fn mutate(r: &mut ChaCha8Rng, base: &[u8]) -> Vec<u8> {
    let mut out = base.to_vec();
    for _ in 0..r.random_range(1..4) {
        if out.is_empty() {
            break;
        }
        let i = r.random_range(0..out.len());
        match r.random_range(0..3) {
            0 => out[i] = r.random(),
            1 => {
                out.remove(i);
            }
            _ => out.truncate(i),
        }
    }
    out
}

/// Random and structurally broken requests all get a JSON 4xx. Returns the
/// number of requests sent.
pub fn malformed_fuzz() -> usize {
    let memory = boxes3_memory();
    let server = Server::start(state(memory.path(), None));
    let mut r = ChaCha8Rng::seed_from_u64(8);
    let mut sent = 0;

    let fixed: Vec<(&str, String)> = vec![
        ("/tools/call", String::new()),
        ("/tools/call", "{".into()),
        ("/tools/call", "[]".into()),
        ("/tools/call", "null".into()),
        ("/tools/call", r#"{"arguments": {}}"#.into()),
        ("/tools/call", r#"{"name": 5, "arguments": {}}"#.into()),
        ("/tools/call", r#"{"name": "distance", "arguments": [0, 1]}"#.into()),
        ("/tools/call", r#"{"name": "distance", "arguments": {"a": -1, "b": 0}}"#.into()),
        ("/tools/call", r#"{"name": "distance", "arguments": {"a": 1.5, "b": 0}}"#.into()),
        ("/tools/call", r#"{"name": "search", "arguments": {"query": 3}}"#.into()),
        ("/tools/call", r#"{"name": "vicinity", "arguments": {"id": 0, "radius": "far"}}"#.into()),
        ("/query", String::new()),
        ("/query", "{}".into()),
        ("/query", r#"{"question": 7}"#.into()),
        ("/query", r#"{"question": "q", "extra": 1}"#.into()),
    ];
    for (path, body) in &fixed {
        assert_structured_4xx(&server.post(path, body), &format!("{path} {body}"));
        sent += 1;
    }
    for path in ["/components/abc", "/components/-1", "/components/99", "/components/0/crops/x", "/components/0/crops/50", "/nope"] {
        assert_structured_4xx(&server.get(path), path);
        sent += 1;
    }
    assert_structured_4xx(&server.get("/tools/call"), "GET on a POST route");
    sent += 1;

    let seeds: Vec<Vec<u8>> = probe_calls().iter().map(|c| c.to_string().into_bytes()).collect();
    for i in 0..300 {
        let body: Vec<u8> = if i % 3 == 0 {
            (0..r.random_range(0..64)).map(|_| r.random()).collect()
        } else {
            let seed = r.random_range(0..seeds.len());
            mutate(&mut r, &seeds[seed])
        };
        let reply = server.post("/tools/call", &body);
        // A mutation can still be a valid call; only malformed ones must fail.
        if reply.status != 200 {
            assert_structured_4xx(&reply, &String::from_utf8_lossy(&body));
        }
        let query_body = mutate(&mut r, br#"{"question": "where is the box?"}"#);
        if serde_json::from_slice::<Value>(&query_body).ok().and_then(|v| v.get("question").cloned()).is_none() {
            assert_structured_4xx(&server.post("/query", &query_body), &String::from_utf8_lossy(&query_body));
        }
        sent += 2;
    }
    let health = server.get("/healthz").json();
    assert_eq!(health["component_count"], 3, "fuzzing must not disturb the memory");
    sent
}
