//! A small scripted HTTP/1.1 server for integration tests.
//!
//! Each [`FixtureServer`] binds an ephemeral port on 127.0.0.1 and answers
//! every request through a user-supplied handler. All requests are recorded
//! so tests can assert on what the client sent.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

#[derive(Debug, Clone)]
pub struct RecordedRequest {
    pub method: String,
    /// Path including the query string, e.g. `/feed?x=1`.
    pub url: String,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl RecordedRequest {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    /// Path without the query string.
    pub fn path(&self) -> &str {
        self.url.split('?').next().unwrap_or("")
    }
}

#[derive(Debug, Clone)]
pub struct FixtureResponse {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

impl FixtureResponse {
    pub fn new(status: u16, content_type: &str, body: impl Into<Vec<u8>>) -> Self {
        Self {
            status,
            headers: vec![("Content-Type".into(), content_type.into())],
            body: body.into(),
        }
    }

    pub fn html(body: impl Into<Vec<u8>>) -> Self {
        Self::new(200, "text/html; charset=utf-8", body)
    }

    pub fn json(status: u16, body: impl Into<Vec<u8>>) -> Self {
        Self::new(status, "application/json", body)
    }

    pub fn atom(body: impl Into<Vec<u8>>) -> Self {
        Self::new(200, "application/atom+xml", body)
    }

    pub fn status(status: u16) -> Self {
        Self::new(status, "text/plain", format!("status {status}"))
    }

    pub fn redirect(location: &str) -> Self {
        Self::new(302, "text/plain", "").with_header("Location", location)
    }

    pub fn with_header(mut self, name: &str, value: &str) -> Self {
        self.headers.push((name.into(), value.into()));
        self
    }
}

type Handler = dyn Fn(&RecordedRequest) -> FixtureResponse + Send + Sync;

pub struct FixtureServer {
    addr: String,
    requests: Arc<Mutex<Vec<RecordedRequest>>>,
    stop: Arc<AtomicBool>,
    worker: Option<JoinHandle<()>>,
}

impl FixtureServer {
    pub fn start<F>(handler: F) -> Self
    where
        F: Fn(&RecordedRequest) -> FixtureResponse + Send + Sync + 'static,
    {
        let server = tiny_http::Server::http("127.0.0.1:0").expect("bind fixture server");
        let addr = format!("http://{}", server.server_addr().to_ip().expect("ip listener"));
        let requests = Arc::new(Mutex::new(Vec::new()));
        let stop = Arc::new(AtomicBool::new(false));
        let handler: Arc<Handler> = Arc::new(handler);

        let worker = {
            let requests = Arc::clone(&requests);
            let stop = Arc::clone(&stop);
            std::thread::spawn(move || {
                let server = Arc::new(server);
                while !stop.load(Ordering::SeqCst) {
                    let req = match server.recv_timeout(Duration::from_millis(20)) {
                        Ok(Some(req)) => req,
                        Ok(None) => continue,
                        Err(_) => break,
                    };
                    // One thread per request so slow handlers do not serialize clients.
                    let handler = Arc::clone(&handler);
                    let requests = Arc::clone(&requests);
                    std::thread::spawn(move || serve_one(req, &*handler, &requests));
                }
            })
        };

        Self {
            addr,
            requests,
            stop,
            worker: Some(worker),
        }
    }

    /// Base URL, e.g. `http://127.0.0.1:41234`.
    pub fn url(&self) -> &str {
        &self.addr
    }

    pub fn url_for(&self, path: &str) -> String {
        format!("{}{}", self.addr, path)
    }

    pub fn requests(&self) -> Vec<RecordedRequest> {
        self.requests.lock().unwrap().clone()
    }

    pub fn request_count(&self) -> usize {
        self.requests.lock().unwrap().len()
    }
}

impl Drop for FixtureServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(worker) = self.worker.take() {
            let _ = worker.join();
        }
    }
}

fn serve_one(mut req: tiny_http::Request, handler: &Handler, requests: &Mutex<Vec<RecordedRequest>>) {
    let mut body = String::new();
    let _ = req.as_reader().read_to_string(&mut body);
    let recorded = RecordedRequest {
        method: req.method().to_string(),
        url: req.url().to_string(),
        headers: req
            .headers()
            .iter()
            .map(|h| (h.field.to_string(), h.value.to_string()))
            .collect(),
        body,
    };
    requests.lock().unwrap().push(recorded.clone());

    let reply = handler(&recorded);
    let mut response = tiny_http::Response::from_data(reply.body).with_status_code(reply.status);
    for (name, value) in &reply.headers {
        if let Ok(h) = tiny_http::Header::from_bytes(name.as_bytes(), value.as_bytes()) {
            response.add_header(h);
        }
    }
    let _ = req.respond(response);
}

/// Hands out scripted responses in order, repeating the last one once exhausted.
pub struct Script {
    steps: Mutex<std::collections::VecDeque<FixtureResponse>>,
    last: Mutex<Option<FixtureResponse>>,
}

impl Script {
    pub fn new(steps: Vec<FixtureResponse>) -> Self {
        Self {
            steps: Mutex::new(steps.into()),
            last: Mutex::new(None),
        }
    }

    pub fn next(&self) -> FixtureResponse {
        let mut steps = self.steps.lock().unwrap();
        let mut last = self.last.lock().unwrap();
        match steps.pop_front() {
            Some(step) => {
                *last = Some(step.clone());
                step
            }
            None => last.clone().unwrap_or_else(|| FixtureResponse::status(500)),
        }
    }
}

/// Directory holding the shared HTML, feed and model-response fixtures.
pub fn fixtures_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn read_fixture(rel: &str) -> String {
    let path = fixtures_dir().join(rel);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("fixture {}: {e}", path.display()))
}

/// One article of the news scenario: where it is served, its HTML page, a
/// phrase unique to its text and the model response returned for it.
pub struct ScenarioArticle {
    pub path: &'static str,
    pub html: &'static str,
    pub marker: &'static str,
    pub response: &'static str,
}

pub const SCENARIO_ARTICLES: [ScenarioArticle; 5] = [
    ScenarioArticle {
        path: "/news/council-transcripts",
        html: "html/01-transcription-desk.html",
        marker: "Northfield Courier",
        response: "llm/01-transcription-desk.json",
    },
    ScenarioArticle {
        path: "/tech/archive-assistant",
        html: "html/02-archive-chatbot.html",
        marker: "Baltic Ledger",
        response: "llm/02-archive-chatbot.json",
    },
    ScenarioArticle {
        path: "/verification/photos",
        html: "html/03-verification-workflow.html",
        marker: "VerifyDesk",
        response: "llm/03-verification-workflow.json",
    },
    ScenarioArticle {
        path: "/sport/match-reports",
        html: "html/04-local-sports-automation.html",
        marker: "Valley Sports Network",
        response: "llm/04-local-sports-automation.json",
    },
    ScenarioArticle {
        path: "/audience/headline-tests",
        html: "html/05-headline-testing.html",
        marker: "Harbor Tribune",
        response: "llm/05-headline-testing.json",
    },
];

/// Chat-completions response body wrapping `content`.
pub fn completion_json(content: &str, prompt_tokens: u64, completion_tokens: u64) -> String {
    serde_json::json!({
        "id": "chatcmpl-fixture",
        "object": "chat.completion",
        "choices": [{ "index": 0, "finish_reason": "stop",
                      "message": { "role": "assistant", "content": content } }],
        "usage": { "prompt_tokens": prompt_tokens, "completion_tokens": completion_tokens,
                   "total_tokens": prompt_tokens + completion_tokens }
    })
    .to_string()
}

/// Token usage reported by the scenario model for every request.
pub const SCENARIO_TOKENS: (u64, u64) = (1200, 300);

/// A news site serving an alert feed with five redirect-wrapped entries and
/// their articles, plus a model endpoint answering each article with its
/// canned structured report.
pub struct NewsScenario {
    pub site: FixtureServer,
    pub model: FixtureServer,
}

impl NewsScenario {
    pub fn start() -> Self {
        let base: Arc<std::sync::OnceLock<String>> = Arc::new(std::sync::OnceLock::new());
        let site = {
            let base = Arc::clone(&base);
            FixtureServer::start(move |req| {
                let base = base.get().expect("base set before first request");
                match req.path() {
                    "/feeds/alerts.atom" => {
                        FixtureResponse::atom(read_fixture("feeds/google-alerts.atom").replace("{{BASE}}", base))
                    }
                    "/feeds/digest.rss" => FixtureResponse::new(
                        200,
                        "application/rss+xml",
                        read_fixture("feeds/newsroom.rss").replace("{{BASE}}", base),
                    ),
                    "/subscribe/teaser" => FixtureResponse::html(read_fixture("html/09-thin-teaser.html")),
                    path => match SCENARIO_ARTICLES.iter().find(|a| a.path == path) {
                        Some(a) => FixtureResponse::html(read_fixture(a.html)),
                        None => FixtureResponse::status(404),
                    },
                }
            })
        };
        base.set(site.url().to_string()).unwrap();

        let model = FixtureServer::start(|req| {
            let (p, c) = SCENARIO_TOKENS;
            match SCENARIO_ARTICLES.iter().find(|a| req.body.contains(a.marker)) {
                Some(a) => FixtureResponse::json(200, completion_json(&read_fixture(a.response), p, c)),
                None => FixtureResponse::json(400, r#"{"error":{"message":"unknown article"}}"#),
            }
        });
        Self { site, model }
    }

    pub fn alerts_feed_url(&self) -> String {
        self.site.url_for("/feeds/alerts.atom")
    }

    pub fn digest_feed_url(&self) -> String {
        self.site.url_for("/feeds/digest.rss")
    }

    pub fn model_endpoint(&self) -> String {
        self.model.url_for("/v1/chat/completions")
    }

    /// Number of use cases across all canned responses.
    pub fn expected_use_cases() -> usize {
        SCENARIO_ARTICLES
            .iter()
            .map(|a| {
                let v: serde_json::Value = serde_json::from_str(&read_fixture(a.response)).unwrap();
                v["use_cases"].as_array().map_or(0, Vec::len)
            })
            .sum()
    }

    /// Model requests received so far.
    pub fn model_requests(&self) -> usize {
        self.model.request_count()
    }
}
