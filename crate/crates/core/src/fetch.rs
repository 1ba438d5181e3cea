//! Article retrieval and HTML-to-text reduction.

use std::collections::HashMap;
use std::io::Read;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use ego_tree::iter::Edge;
use scraper::{Html, Node};
use serde::{Deserialize, Serialize};
use url::Url;

use crate::config::duration_ms;
use crate::retry::{parse_retry_after, RetryPolicy};

#[derive(Debug, Clone, thiserror::Error)]
pub enum FetchError {
    #[error("invalid url {url:?}: {reason}")]
    InvalidUrl { url: String, reason: String },
    #[error("retryable fetch failure for {url}: {reason}")]
    Retryable {
        url: String,
        status: Option<u16>,
        reason: String,
    },
    #[error("permanent fetch failure for {url}: {reason}")]
    Permanent {
        url: String,
        status: Option<u16>,
        reason: String,
    },
    #[error("unsupported content type {content_type:?} at {url}")]
    UnsupportedContent { url: String, content_type: String },
}

impl FetchError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, FetchError::Retryable { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FetchPolicy {
    #[serde(with = "duration_ms")]
    pub timeout: Duration,
    pub max_redirects: usize,
    pub max_body_bytes: usize,
    pub retry: RetryPolicy,
    pub user_agent: String,
    /// Documents with fewer words are "thin" and never sent to the model.
    pub min_words: usize,
    /// Minimum spacing between requests to one host.
    #[serde(with = "duration_ms")]
    pub per_host_interval: Duration,
    /// Global cap on concurrent fetches.
    pub max_concurrent: usize,
}

impl Default for FetchPolicy {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(20),
            max_redirects: 5,
            max_body_bytes: 2 * 1024 * 1024,
            retry: RetryPolicy::default(),
            user_agent: concat!("leadwatch/", env!("CARGO_PKG_VERSION")).to_string(),
            min_words: 50,
            per_host_interval: Duration::from_secs(1),
            max_concurrent: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArticleDocument {
    /// Final URL after redirects.
    pub url: String,
    pub requested_url: String,
    pub fetched_at: DateTime<Utc>,
    pub http_status: u16,
    pub html: String,
    pub title: String,
    pub text: String,
    pub word_count: usize,
    /// Body was cut at `max_body_bytes`.
    pub truncated: bool,
}

impl ArticleDocument {
    pub fn is_thin(&self, min_words: usize) -> bool {
        self.word_count < min_words
    }
}

pub struct Fetcher {
    client: reqwest::blocking::Client,
    policy: FetchPolicy,
}

impl Fetcher {
    pub fn new(policy: FetchPolicy) -> Result<Self, FetchError> {
        let client = reqwest::blocking::Client::builder()
            .redirect(reqwest::redirect::Policy::limited(policy.max_redirects))
            .timeout(policy.timeout)
            .user_agent(policy.user_agent.clone())
            .build()
            .map_err(|e| FetchError::Permanent {
                url: String::new(),
                status: None,
                reason: format!("http client: {e}"),
            })?;
        Ok(Self { client, policy })
    }

    pub fn policy(&self) -> &FetchPolicy {
        &self.policy
    }

    /// Fetch with retries on retryable failures.
    pub fn fetch_article(&self, url: &str) -> Result<ArticleDocument, FetchError> {
        let mut attempt = 1;
        loop {
            match self.fetch_once(url) {
                Ok(doc) => return Ok(doc),
                Err((err, advised)) if err.is_retryable() && attempt < self.policy.retry.max_attempts => {
                    let wait = self.policy.retry.delay_for(attempt, advised);
                    tracing::debug!(url, attempt, ?wait, error = %err, "retrying fetch");
                    std::thread::sleep(wait);
                    attempt += 1;
                }
                Err((err, _)) => return Err(err),
            }
        }
    }

    fn fetch_once(&self, url: &str) -> Result<ArticleDocument, (FetchError, Option<Duration>)> {
        let parsed = Url::parse(url).map_err(|e| {
            (
                FetchError::InvalidUrl {
                    url: url.into(),
                    reason: e.to_string(),
                },
                None,
            )
        })?;
        let resp = self.client.get(parsed).send().map_err(|e| (classify(url, &e), None))?;

        let status = resp.status().as_u16();
        let advised = resp
            .headers()
            .get(reqwest::header::RETRY_AFTER)
            .and_then(|v| v.to_str().ok())
            .and_then(parse_retry_after);
        match status {
            200 => {}
            408 | 429 | 500..=599 => {
                return Err((
                    FetchError::Retryable {
                        url: url.into(),
                        status: Some(status),
                        reason: format!("HTTP {status}"),
                    },
                    advised,
                ))
            }
            _ => {
                return Err((
                    FetchError::Permanent {
                        url: url.into(),
                        status: Some(status),
                        reason: format!("HTTP {status}"),
                    },
                    None,
                ))
            }
        }

        let content_type = resp
            .headers()
            .get(reqwest::header::CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .unwrap_or("")
            .to_string();
        if !is_html_content_type(&content_type) {
            return Err((
                FetchError::UnsupportedContent {
                    url: url.into(),
                    content_type,
                },
                None,
            ));
        }

        let final_url = resp.url().to_string();
        let cap = self.policy.max_body_bytes;
        let mut body = Vec::with_capacity(cap.min(256 * 1024));
        resp.take(cap as u64 + 1).read_to_end(&mut body).map_err(|e| {
            (
                FetchError::Retryable {
                    url: url.into(),
                    status: Some(status),
                    reason: format!("reading body: {e}"),
                },
                None,
            )
        })?;
        let truncated = body.len() > cap;
        body.truncate(cap);
        let html = String::from_utf8_lossy(&body).into_owned();
        let (title, text) = extract_text(&html);
        Ok(ArticleDocument {
            url: final_url,
            requested_url: url.into(),
            fetched_at: crate::now_millis(),
            http_status: status,
            word_count: word_count(&text),
            html,
            title,
            text,
            truncated,
        })
    }

    /// Fetch many URLs with at most `max_concurrent` in flight, one request at a
    /// time per host, spaced by `per_host_interval`. Results follow input order.
    pub fn fetch_many(&self, urls: &[String]) -> Vec<Result<ArticleDocument, FetchError>> {
        let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
        let mut by_host: HashMap<String, usize> = HashMap::new();
        for (i, url) in urls.iter().enumerate() {
            let host = Url::parse(url)
                .ok()
                .and_then(|u| u.host_str().map(str::to_ascii_lowercase))
                .unwrap_or_default();
            let slot = *by_host.entry(host.clone()).or_insert_with(|| {
                groups.push((host, Vec::new()));
                groups.len() - 1
            });
            groups[slot].1.push(i);
        }

        let interval = self.policy.per_host_interval;
        let per_group = crate::par::bounded_map(groups, self.policy.max_concurrent, |(_, idxs)| {
            let mut last: Option<Instant> = None;
            idxs.into_iter()
                .map(|i| {
                    if let Some(prev) = last {
                        let elapsed = prev.elapsed();
                        if elapsed < interval {
                            std::thread::sleep(interval - elapsed);
                        }
                    }
                    last = Some(Instant::now());
                    (i, self.fetch_article(&urls[i]))
                })
                .collect::<Vec<_>>()
        });

        let mut out: Vec<Option<Result<ArticleDocument, FetchError>>> = (0..urls.len()).map(|_| None).collect();
        for (i, res) in per_group.into_iter().flatten() {
            out[i] = Some(res);
        }
        out.into_iter().map(|r| r.expect("every url fetched")).collect()
    }
}

/// Build a one-off fetcher and fetch a single article.
pub fn fetch_article(url: &str, policy: &FetchPolicy) -> Result<ArticleDocument, FetchError> {
    Fetcher::new(policy.clone())?.fetch_article(url)
}

fn classify(url: &str, e: &reqwest::Error) -> FetchError {
    if e.is_redirect() || e.is_builder() {
        FetchError::Permanent {
            url: url.into(),
            status: None,
            reason: e.to_string(),
        }
    } else {
        FetchError::Retryable {
            url: url.into(),
            status: None,
            reason: e.to_string(),
        }
    }
}

fn is_html_content_type(ct: &str) -> bool {
    let mime = ct.split(';').next().unwrap_or("").trim().to_ascii_lowercase();
    mime.is_empty() || mime == "text/html" || mime == "application/xhtml+xml"
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

// Subtrees dropped entirely.
const SKIPPED: &[&str] = &[
    "script", "style", "noscript", "template", "head", "nav", "header", "footer", "aside", "svg", "iframe", "button",
    "select", "canvas", "object",
];

const BLOCKS: &[&str] = &[
    "address",
    "article",
    "blockquote",
    "body",
    "br",
    "caption",
    "dd",
    "details",
    "div",
    "dl",
    "dt",
    "fieldset",
    "figcaption",
    "figure",
    "form",
    "h1",
    "h2",
    "h3",
    "h4",
    "h5",
    "h6",
    "hr",
    "li",
    "main",
    "ol",
    "p",
    "pre",
    "section",
    "summary",
    "table",
    "tbody",
    "td",
    "tfoot",
    "th",
    "thead",
    "tr",
    "ul",
];

struct LineWriter {
    lines: Vec<String>,
    current: String,
}

impl LineWriter {
    fn new() -> Self {
        Self {
            lines: Vec::new(),
            current: String::new(),
        }
    }

    fn push_text(&mut self, text: &str) {
        self.current.push_str(text);
    }

    fn break_line(&mut self) {
        let line = collapse_whitespace(&self.current);
        if !line.is_empty() {
            self.lines.push(line);
        }
        self.current.clear();
    }

    fn finish(mut self) -> String {
        self.break_line();
        self.lines.join("\n")
    }
}

/// Reduce an HTML page to `(title, text)`.
///
/// Script, style, navigation, header, footer and comment content is dropped;
/// block-level elements end up on their own lines and entities are decoded.
/// Never fails: malformed markup is parsed leniently and empty input gives
/// empty outputs.
pub fn extract_text(html: &str) -> (String, String) {
    let doc = Html::parse_document(html);

    let mut title = String::new();
    let mut first_h1 = None;
    let mut out = LineWriter::new();
    let mut skip_depth = 0usize;
    // Inside <article>/<main> a <header> usually holds the headline: keep it.
    let mut content_depth = 0usize;
    let skipped =
        |name: &str, content_depth: usize| SKIPPED.contains(&name) && !(name == "header" && content_depth > 0);

    for edge in doc.tree.root().traverse() {
        match edge {
            Edge::Open(node) => match node.value() {
                Node::Element(el) => {
                    let name = el.name();
                    if name == "title" && title.is_empty() {
                        title = collapse_whitespace(&node_text(node));
                    }
                    if name == "h1" && first_h1.is_none() && skip_depth == 0 {
                        first_h1 = Some(collapse_whitespace(&node_text(node)));
                    }
                    if skipped(name, content_depth) {
                        skip_depth += 1;
                    } else if skip_depth == 0 && BLOCKS.contains(&name) {
                        out.break_line();
                    }
                    if name == "article" || name == "main" {
                        content_depth += 1;
                    }
                }
                Node::Text(t) if skip_depth == 0 => out.push_text(t),
                _ => {}
            },
            Edge::Close(node) => {
                if let Node::Element(el) = node.value() {
                    let name = el.name();
                    if name == "article" || name == "main" {
                        content_depth -= 1;
                    }
                    if skipped(name, content_depth) {
                        skip_depth -= 1;
                    } else if skip_depth == 0 && BLOCKS.contains(&name) {
                        out.break_line();
                    }
                }
            }
        }
    }

    if title.is_empty() {
        title = first_h1.unwrap_or_default();
    }
    (defuse_markup(&title), defuse_markup(&out.finish()))
}

fn node_text(node: ego_tree::NodeRef<'_, Node>) -> String {
    node.descendants()
        .filter_map(|n| match n.value() {
            Node::Text(t) => Some(&**t),
            _ => None,
        })
        .collect()
}

/// Plain text of an HTML fragment on a single line.
pub fn strip_markup(fragment: &str) -> String {
    let doc = Html::parse_fragment(fragment);
    let text: String = doc
        .tree
        .root()
        .descendants()
        .filter_map(|n| match n.value() {
            Node::Text(t) => Some(&**t),
            _ => None,
        })
        .collect();
    defuse_markup(&collapse_whitespace(&text))
}

fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

// Decoded entities can reintroduce tag-like sequences such as "<b"; separate
// them so downstream consumers never see markup.
fn defuse_markup(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars().peekable();
    while let Some(c) = chars.next() {
        out.push(c);
        if c == '<' && chars.peek().is_some_and(|n| n.is_alphabetic()) {
            out.push(' ');
        }
    }
    out
}

const TRACKING_EXACT: &[&str] = &["gclid", "fbclid"];

/// Normalize a URL for identity comparison.
///
/// Lowercases scheme and host, drops default ports, fragments and tracking
/// parameters (`utm_*`, `gclid`, `fbclid`), and collapses repeated trailing
/// slashes. Other query parameters keep their original order and encoding.
pub fn canonicalize_url(url: &str) -> Result<String, FetchError> {
    let mut parsed = Url::parse(url.trim()).map_err(|e| FetchError::InvalidUrl {
        url: url.into(),
        reason: e.to_string(),
    })?;
    if parsed.cannot_be_a_base() {
        return Err(FetchError::InvalidUrl {
            url: url.into(),
            reason: "not an absolute hierarchical URL".into(),
        });
    }
    parsed.set_fragment(None);

    if let Some(query) = parsed.query().map(str::to_string) {
        let kept: Vec<&str> = query
            .split('&')
            .filter(|pair| !pair.is_empty())
            .filter(|pair| {
                let key = pair.split('=').next().unwrap_or("");
                let key = url::form_urlencoded::parse(key.as_bytes())
                    .next()
                    .map(|(k, _)| k.to_ascii_lowercase())
                    .unwrap_or_default();
                !(key.starts_with("utm_") || TRACKING_EXACT.contains(&key.as_str()))
            })
            .collect();
        if kept.is_empty() {
            parsed.set_query(None);
        } else {
            parsed.set_query(Some(&kept.join("&")));
        }
    }

    let path = parsed.path().to_string();
    if path.ends_with("//") {
        let trimmed = path.trim_end_matches('/');
        parsed.set_path(&format!("{trimmed}/"));
    }
    Ok(parsed.to_string())
}
