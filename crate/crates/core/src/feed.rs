//! Alert-feed ingestion: RSS 2.0 / Atom 1.0 parsing, redirect unwrapping and
//! seen-URL filtering.

use std::collections::HashSet;
use std::time::Duration;

use chrono::{DateTime, Utc};
use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;
use serde::{Deserialize, Serialize};
use url::Url;

#[derive(Debug, thiserror::Error)]
pub enum FeedError {
    #[error("malformed feed XML at byte {offset}: {message}")]
    Malformed { offset: u64, message: String },
    #[error("unsupported feed format: root element <{0}>")]
    UnsupportedFormat(String),
    #[error("feed entry {index} has no usable link: {reason}")]
    InvalidEntry { index: usize, reason: String },
    #[error("cannot resolve alert link {link}: {reason}")]
    Resolution { link: String, reason: String },
    #[error("invalid feed configuration: {0}")]
    Config(String),
    #[error("feed request failed: {0}")]
    Http(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedSpec {
    pub id: String,
    pub url: String,
    /// Descriptive label, e.g. `["Generative AI", "Newsroom", "Use Cases"]`.
    #[serde(default)]
    pub keywords: Vec<String>,
    #[serde(default = "enabled_default")]
    pub enabled: bool,
}

fn enabled_default() -> bool {
    true
}

impl FeedSpec {
    pub fn validate(&self) -> Result<(), FeedError> {
        if self.id.trim().is_empty() {
            return Err(FeedError::Config("feed id must not be empty".into()));
        }
        let parsed = Url::parse(&self.url)
            .map_err(|e| FeedError::Config(format!("feed {}: bad url {:?}: {e}", self.id, self.url)))?;
        if parsed.cannot_be_a_base() {
            return Err(FeedError::Config(format!("feed {}: url is not absolute", self.id)));
        }
        Ok(())
    }
}

/// Check every feed and enforce unique ids.
pub fn validate_feeds(feeds: &[FeedSpec]) -> Result<(), FeedError> {
    let mut ids = HashSet::new();
    for feed in feeds {
        feed.validate()?;
        if !ids.insert(feed.id.as_str()) {
            return Err(FeedError::Config(format!("duplicate feed id {:?}", feed.id)));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedEntry {
    pub feed_id: String,
    pub raw_link: String,
    pub resolved_url: String,
    pub title: String,
    pub published_at: Option<DateTime<Utc>>,
}

/// Hosts whose `/url`-style links wrap the real target in a query parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Redirector {
    /// Matches the host itself and any subdomain of it.
    pub host_suffix: String,
    pub path: String,
    #[serde(default = "redirector_param_default")]
    pub param: String,
}

fn redirector_param_default() -> String {
    "url".into()
}

impl Redirector {
    pub fn google_alerts() -> Self {
        Self {
            host_suffix: "google.com".into(),
            path: "/url".into(),
            param: "url".into(),
        }
    }

    fn matches(&self, url: &Url) -> bool {
        let Some(host) = url.host_str() else {
            return false;
        };
        let host = host.to_ascii_lowercase();
        let suffix = self.host_suffix.to_ascii_lowercase();
        let host_ok = host == suffix || host.ends_with(&format!(".{suffix}"));
        host_ok && url.path() == self.path
    }
}

pub fn default_redirectors() -> Vec<Redirector> {
    vec![Redirector::google_alerts()]
}

// Nested wrappers are unwrapped up to this depth.
const MAX_UNWRAP: usize = 8;

/// Unwrap an alert redirect link to its target. Links that are not wrapped are
/// returned unchanged.
pub fn resolve_alert_link(raw_link: &str, redirectors: &[Redirector]) -> Result<String, FeedError> {
    let resolution = |reason: String| FeedError::Resolution {
        link: raw_link.to_string(),
        reason,
    };
    let mut current = raw_link.trim().to_string();
    for _ in 0..MAX_UNWRAP {
        let url = Url::parse(&current).map_err(|e| resolution(e.to_string()))?;
        let Some(rule) = redirectors.iter().find(|r| r.matches(&url)) else {
            return Ok(current);
        };
        // query_pairs() percent-decodes.
        let Some((_, target)) = url.query_pairs().find(|(k, _)| k == rule.param.as_str()) else {
            return Ok(current);
        };
        let target = target.into_owned();
        match Url::parse(&target) {
            Ok(t) if !t.cannot_be_a_base() && matches!(t.scheme(), "http" | "https") => {
                current = target;
            }
            Ok(_) => return Err(resolution(format!("{target:?} is not an absolute http(s) URL"))),
            Err(e) => return Err(resolution(format!("{target:?}: {e}"))),
        }
    }
    Err(resolution("too many nested redirect wrappers".into()))
}

/// Entries whose `resolved_url` is not in `seen`, keeping only the first
/// occurrence of each URL within the batch.
pub fn filter_new(entries: &[FeedEntry], seen: &HashSet<String>) -> Vec<FeedEntry> {
    let mut batch = HashSet::new();
    entries
        .iter()
        .filter(|e| !seen.contains(&e.resolved_url) && batch.insert(e.resolved_url.clone()))
        .cloned()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dialect {
    Rss,
    Atom,
}

#[derive(Default)]
struct PendingEntry {
    title: String,
    title_is_html: bool,
    link: Option<String>,
    rss_date: Option<String>,
    published: Option<String>,
    updated: Option<String>,
}

/// Parse RSS 2.0 or Atom 1.0 text into entries, in document order.
pub fn parse_feed(feed_xml: &str, feed_id: &str, redirectors: &[Redirector]) -> Result<Vec<FeedEntry>, FeedError> {
    let mut reader = Reader::from_str(feed_xml);
    reader.config_mut().trim_text(true);

    let mut dialect = None;
    // Local names of open elements, outermost first.
    let mut stack: Vec<String> = Vec::new();
    let mut pending: Option<PendingEntry> = None;
    let mut pendings: Vec<PendingEntry> = Vec::new();

    let malformed = |reader: &Reader<&[u8]>, message: String| FeedError::Malformed {
        offset: reader.error_position().max(reader.buffer_position()),
        message,
    };

    loop {
        let event = reader.read_event().map_err(|e| malformed(&reader, e.to_string()))?;
        match event {
            Event::Start(e) => {
                let name = local_name(&e);
                if dialect.is_none() {
                    dialect = Some(detect_dialect(&name)?);
                }
                let d = dialect.unwrap();
                if is_entry_element(d, &stack, &name) {
                    pending = Some(PendingEntry::default());
                } else if let Some(p) = pending.as_mut() {
                    if stack.len() == entry_depth(d) + 1 {
                        open_child(d, p, &name, &e);
                    }
                }
                stack.push(name);
            }
            Event::Empty(e) => {
                let name = local_name(&e);
                if dialect.is_none() {
                    dialect = Some(detect_dialect(&name)?);
                }
                let d = dialect.unwrap();
                if is_entry_element(d, &stack, &name) {
                    pendings.push(PendingEntry::default());
                } else if let Some(p) = pending.as_mut() {
                    if stack.len() == entry_depth(d) + 1 {
                        open_child(d, p, &name, &e);
                    }
                }
            }
            Event::End(_) => {
                let closed = stack.pop();
                if let (Some(d), Some(name)) = (dialect, closed) {
                    if is_entry_element(d, &stack, &name) {
                        if let Some(p) = pending.take() {
                            pendings.push(p);
                        }
                    }
                }
            }
            Event::Text(t) => {
                let text = t.unescape().map_err(|e| malformed(&reader, e.to_string()))?;
                if let (Some(d), Some(p)) = (dialect, pending.as_mut()) {
                    append_child_text(d, p, &stack, &text);
                }
            }
            Event::CData(c) => {
                let text = String::from_utf8_lossy(&c).into_owned();
                if let (Some(d), Some(p)) = (dialect, pending.as_mut()) {
                    append_child_text(d, p, &stack, &text);
                }
            }
            Event::Eof => break,
            _ => {}
        }
    }

    if !stack.is_empty() {
        return Err(FeedError::Malformed {
            offset: reader.buffer_position(),
            message: format!("unexpected end of document inside <{}>", stack.last().unwrap()),
        });
    }
    if dialect.is_none() {
        return Err(FeedError::Malformed {
            offset: reader.buffer_position(),
            message: "document has no root element".into(),
        });
    }

    pendings
        .into_iter()
        .enumerate()
        .map(|(index, p)| finish_entry(index, p, feed_id, redirectors))
        .collect()
}

fn local_name(e: &BytesStart<'_>) -> String {
    String::from_utf8_lossy(e.local_name().as_ref()).into_owned()
}

fn detect_dialect(root: &str) -> Result<Dialect, FeedError> {
    match root {
        "rss" => Ok(Dialect::Rss),
        "feed" => Ok(Dialect::Atom),
        other => Err(FeedError::UnsupportedFormat(other.to_string())),
    }
}

// Depth of the stack when an entry element is opened.
fn entry_depth(d: Dialect) -> usize {
    match d {
        Dialect::Rss => 2,
        Dialect::Atom => 1,
    }
}

fn is_entry_element(d: Dialect, stack: &[String], name: &str) -> bool {
    match d {
        Dialect::Rss => name == "item" && stack.len() == 2 && stack[1] == "channel",
        Dialect::Atom => name == "entry" && stack.len() == 1,
    }
}

fn open_child(d: Dialect, p: &mut PendingEntry, name: &str, e: &BytesStart<'_>) {
    match (d, name) {
        (Dialect::Atom, "link") if p.link.is_none() => {
            let mut href = None;
            let mut rel = None;
            for attr in e.attributes().flatten() {
                let value = attr.unescape_value().map(|v| v.into_owned()).ok();
                match attr.key.local_name().as_ref() {
                    b"href" => href = value,
                    b"rel" => rel = value,
                    _ => {}
                }
            }
            if matches!(rel.as_deref(), None | Some("alternate")) {
                p.link = href;
            }
        }
        (Dialect::Atom, "title") => {
            p.title_is_html = e
                .attributes()
                .flatten()
                .any(|a| a.key.local_name().as_ref() == b"type" && matches!(a.value.as_ref(), b"html" | b"xhtml"));
        }
        _ => {}
    }
}

fn append_child_text(d: Dialect, p: &mut PendingEntry, stack: &[String], text: &str) {
    let depth = entry_depth(d) + 1;
    if stack.len() < depth + 1 {
        return;
    }
    let child = stack[depth].as_str();
    let slot = match (d, child) {
        (_, "title") => Some(&mut p.title),
        (Dialect::Rss, "link") => {
            p.link.get_or_insert_with(String::new).push_str(text);
            None
        }
        (Dialect::Rss, "pubDate") => Some(p.rss_date.get_or_insert_with(String::new)),
        (Dialect::Atom, "published") => Some(p.published.get_or_insert_with(String::new)),
        (Dialect::Atom, "updated") => Some(p.updated.get_or_insert_with(String::new)),
        _ => None,
    };
    if let Some(slot) = slot {
        slot.push_str(text);
    }
}

fn finish_entry(
    index: usize,
    p: PendingEntry,
    feed_id: &str,
    redirectors: &[Redirector],
) -> Result<FeedEntry, FeedError> {
    let raw_link = p
        .link
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty())
        .ok_or_else(|| FeedError::InvalidEntry {
            index,
            reason: "missing link".into(),
        })?;
    let resolved_url = resolve_alert_link(&raw_link, redirectors).map_err(|e| FeedError::InvalidEntry {
        index,
        reason: e.to_string(),
    })?;
    let title = if p.title_is_html {
        crate::fetch::strip_markup(&p.title)
    } else {
        p.title.split_whitespace().collect::<Vec<_>>().join(" ")
    };
    let published_at = match (p.rss_date, p.published, p.updated) {
        (Some(d), _, _) => DateTime::parse_from_rfc2822(d.trim()).ok(),
        (None, Some(d), _) | (None, None, Some(d)) => DateTime::parse_from_rfc3339(d.trim()).ok(),
        _ => None,
    }
    .map(|d| d.with_timezone(&Utc));
    Ok(FeedEntry {
        feed_id: feed_id.to_string(),
        raw_link,
        resolved_url,
        title,
        published_at,
    })
}

/// HTTP cache validators remembered between polls of one feed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CacheValidators {
    pub etag: Option<String>,
    pub last_modified: Option<String>,
}

#[derive(Debug)]
pub enum PollOutcome {
    NotModified,
    Fetched { body: String, validators: CacheValidators },
}

/// GET a feed, sending conditional headers when validators are known.
pub fn poll_feed(
    client: &reqwest::blocking::Client,
    feed: &FeedSpec,
    validators: &CacheValidators,
    timeout: Duration,
) -> Result<PollOutcome, FeedError> {
    let mut req = client.get(&feed.url).timeout(timeout);
    if let Some(etag) = &validators.etag {
        req = req.header(reqwest::header::IF_NONE_MATCH, etag);
    }
    if let Some(lm) = &validators.last_modified {
        req = req.header(reqwest::header::IF_MODIFIED_SINCE, lm);
    }
    let resp = req.send().map_err(|e| FeedError::Http(e.to_string()))?;
    let status = resp.status();
    if status == reqwest::StatusCode::NOT_MODIFIED {
        return Ok(PollOutcome::NotModified);
    }
    if !status.is_success() {
        return Err(FeedError::Http(format!(
            "{} returned HTTP {}",
            feed.url,
            status.as_u16()
        )));
    }
    let header = |name: reqwest::header::HeaderName| {
        resp.headers()
            .get(name)
            .and_then(|v| v.to_str().ok())
            .map(str::to_string)
    };
    let validators = CacheValidators {
        etag: header(reqwest::header::ETAG),
        last_modified: header(reqwest::header::LAST_MODIFIED),
    };
    let body = resp.text().map_err(|e| FeedError::Http(e.to_string()))?;
    Ok(PollOutcome::Fetched { body, validators })
}
