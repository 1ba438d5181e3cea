//! Persistent state: runs, processed articles, leads and feed cache
//! validators, in one SQLite file.
//!
//! Leads are deduplicated on insert. A lead whose normalized name matches an
//! existing primary, or whose name+description tokens are near-identical to
//! one, is stored pointing at the earliest such primary. Duplicates never
//! point at other duplicates.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};
use rusqlite::{params, Connection, OptionalExtension, Transaction};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::feed::CacheValidators;
use crate::llm::UseCase;
use crate::par::{self, Execution};
use crate::text;

pub const SCHEMA_VERSION: i64 = 1;
pub const DEFAULT_THETA: f64 = 0.6;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("database error: {0}")]
    Sqlite(#[from] rusqlite::Error),
    #[error("stored data is corrupt: {0}")]
    Corrupt(String),
    #[error("database schema version {found} is newer than supported version {SCHEMA_VERSION}")]
    SchemaTooNew { found: i64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeadRecord {
    pub lead_id: String,
    pub use_case: UseCase,
    pub source_url: String,
    pub article_summary: String,
    pub run_id: String,
    pub first_seen: DateTime<Utc>,
    pub duplicate_of: Option<String>,
}

impl LeadRecord {
    /// New, not yet deduplicated lead. `source_url` should already be canonical.
    pub fn new(
        use_case: UseCase,
        source_url: impl Into<String>,
        article_summary: impl Into<String>,
        run_id: impl Into<String>,
        first_seen: DateTime<Utc>,
    ) -> Self {
        let source_url = source_url.into();
        let lead_id = lead_id(&dedup_key(&use_case), &source_url);
        Self {
            lead_id,
            use_case,
            source_url,
            article_summary: article_summary.into(),
            run_id: run_id.into(),
            first_seen,
            duplicate_of: None,
        }
    }

    pub fn is_primary(&self) -> bool {
        self.duplicate_of.is_none()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub started_at: Option<DateTime<Utc>>,
    pub finished_at: Option<DateTime<Utc>>,
    pub articles_seen: u64,
    pub articles_processed: u64,
    pub articles_failed: u64,
    /// New articles dropped before the model, e.g. too short.
    pub articles_skipped: u64,
    pub leads_extracted: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub estimated_cost: f64,
}

impl RunRecord {
    pub fn counts_consistent(&self) -> bool {
        self.articles_processed + self.articles_failed + self.articles_skipped <= self.articles_seen
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArticleStatus {
    Processed,
    Thin,
    Failed,
}

impl ArticleStatus {
    fn as_str(self) -> &'static str {
        match self {
            ArticleStatus::Processed => "processed",
            ArticleStatus::Thin => "thin",
            ArticleStatus::Failed => "failed",
        }
    }
}

/// Bookkeeping row for one article URL.
#[derive(Debug, Clone, PartialEq)]
pub struct ArticleRow {
    pub url: String,
    pub feed_id: String,
    pub title: String,
    pub status: ArticleStatus,
    pub run_id: String,
    pub updated_at: DateTime<Utc>,
    pub summary: Option<String>,
    pub usefulness_rating: Option<f64>,
    pub word_count: Option<u64>,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub raw_response: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InsertOutcome {
    Inserted,
    MarkedDuplicate { of: String },
}

/// Lowercased name tokens with punctuation removed, sorted and space-joined.
pub fn dedup_key(u: &UseCase) -> String {
    let mut tokens: Vec<String> = text::tokens(&u.name).collect();
    tokens.sort();
    tokens.join(" ")
}

/// Jaccard similarity of name+description token sets is at least `theta`.
pub fn near_duplicate(a: &UseCase, b: &UseCase, theta: f64) -> bool {
    let ta = text::name_description_tokens(&a.name, &a.description);
    let tb = text::name_description_tokens(&b.name, &b.description);
    text::jaccard(&ta, &tb) >= theta
}

/// Stable content id: first 16 bytes of SHA-256 over key and source URL, hex.
pub fn lead_id(dedup_key: &str, source_url: &str) -> String {
    let mut h = Sha256::new();
    h.update(dedup_key.as_bytes());
    h.update([0u8]);
    h.update(source_url.as_bytes());
    h.finalize()[..16].iter().map(|b| format!("{b:02x}")).collect()
}

pub(crate) fn ts(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

fn parse_ts(s: &str) -> Result<DateTime<Utc>, StoreError> {
    DateTime::parse_from_rfc3339(s)
        .map(|d| d.with_timezone(&Utc))
        .map_err(|e| StoreError::Corrupt(format!("timestamp {s:?}: {e}")))
}

#[derive(Debug, Clone)]
struct PrimarySig {
    lead_id: String,
    key: String,
    tokens: BTreeSet<String>,
}

impl PrimarySig {
    fn of(lead_id: &str, u: &UseCase) -> Self {
        Self {
            lead_id: lead_id.to_string(),
            key: dedup_key(u),
            tokens: text::name_description_tokens(&u.name, &u.description),
        }
    }
}

pub struct LeadStore {
    conn: Connection,
    theta: f64,
    exec: Execution,
    // Primaries in insertion order, mirrored from the leads table.
    primaries: Vec<PrimarySig>,
}

const SCHEMA: &str = r#"
CREATE TABLE IF NOT EXISTS meta (
    key   TEXT PRIMARY KEY,
    value TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS runs (
    run_id             TEXT PRIMARY KEY,
    started_at         TEXT NOT NULL,
    finished_at        TEXT,
    articles_seen      INTEGER NOT NULL DEFAULT 0,
    articles_processed INTEGER NOT NULL DEFAULT 0,
    articles_failed    INTEGER NOT NULL DEFAULT 0,
    articles_skipped   INTEGER NOT NULL DEFAULT 0,
    leads_extracted    INTEGER NOT NULL DEFAULT 0,
    input_tokens       INTEGER NOT NULL DEFAULT 0,
    output_tokens      INTEGER NOT NULL DEFAULT 0,
    estimated_cost     REAL NOT NULL DEFAULT 0
);
CREATE TABLE IF NOT EXISTS articles (
    url               TEXT PRIMARY KEY,
    feed_id           TEXT NOT NULL,
    title             TEXT NOT NULL,
    status            TEXT NOT NULL,
    run_id            TEXT NOT NULL,
    updated_at        TEXT NOT NULL,
    summary           TEXT,
    usefulness_rating REAL,
    word_count        INTEGER,
    input_tokens      INTEGER NOT NULL DEFAULT 0,
    output_tokens     INTEGER NOT NULL DEFAULT 0,
    raw_response      TEXT,
    error             TEXT
);
CREATE TABLE IF NOT EXISTS leads (
    seq             INTEGER PRIMARY KEY AUTOINCREMENT,
    lead_id         TEXT NOT NULL UNIQUE,
    dedup_key       TEXT NOT NULL,
    use_case        TEXT NOT NULL,
    source_url      TEXT NOT NULL,
    article_summary TEXT NOT NULL,
    run_id          TEXT NOT NULL,
    first_seen      TEXT NOT NULL,
    duplicate_of    TEXT REFERENCES leads(lead_id)
);
CREATE UNIQUE INDEX IF NOT EXISTS leads_primary_key ON leads(dedup_key) WHERE duplicate_of IS NULL;
CREATE TABLE IF NOT EXISTS feed_state (
    feed_id       TEXT PRIMARY KEY,
    etag          TEXT,
    last_modified TEXT
);
"#;

impl LeadStore {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let conn = Connection::open(path)?;
        conn.pragma_update(None, "journal_mode", "WAL")?;
        Self::init(conn)
    }

    pub fn open_in_memory() -> Result<Self, StoreError> {
        Self::init(Connection::open_in_memory()?)
    }

    fn init(conn: Connection) -> Result<Self, StoreError> {
        conn.pragma_update(None, "foreign_keys", "ON")?;
        conn.busy_timeout(std::time::Duration::from_secs(10))?;
        conn.execute_batch(SCHEMA)?;
        let version: Option<String> = conn
            .query_row("SELECT value FROM meta WHERE key = 'schema_version'", [], |r| r.get(0))
            .optional()?;
        match version {
            None => {
                conn.execute(
                    "INSERT INTO meta (key, value) VALUES ('schema_version', ?1)",
                    [SCHEMA_VERSION.to_string()],
                )?;
            }
            Some(v) => {
                let found: i64 = v
                    .parse()
                    .map_err(|_| StoreError::Corrupt(format!("schema_version {v:?}")))?;
                if found > SCHEMA_VERSION {
                    return Err(StoreError::SchemaTooNew { found });
                }
            }
        }
        let mut store = Self {
            conn,
            theta: DEFAULT_THETA,
            exec: Execution::default(),
            primaries: Vec::new(),
        };
        store.primaries = store
            .all_leads()?
            .into_iter()
            .filter(LeadRecord::is_primary)
            .map(|l| PrimarySig::of(&l.lead_id, &l.use_case))
            .collect();
        Ok(store)
    }

    pub fn with_theta(mut self, theta: f64) -> Self {
        self.theta = theta;
        self
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Insert one lead in its own transaction.
    pub fn insert_lead(&mut self, lead: &LeadRecord) -> Result<InsertOutcome, StoreError> {
        let tx = self.conn.transaction()?;
        let mut pending = Vec::new();
        let outcome = insert_in_tx(&tx, &self.primaries, &mut pending, lead, self.theta, self.exec)?;
        tx.commit()?;
        self.primaries.extend(pending);
        Ok(outcome)
    }

    /// Record an article and insert its leads atomically. On error nothing
    /// from this call is kept.
    pub fn commit_article(
        &mut self,
        article: &ArticleRow,
        leads: &[LeadRecord],
    ) -> Result<Vec<InsertOutcome>, StoreError> {
        let tx = self.conn.transaction()?;
        upsert_article(&tx, article)?;
        let mut pending = Vec::new();
        let mut outcomes = Vec::with_capacity(leads.len());
        for lead in leads {
            outcomes.push(insert_in_tx(
                &tx,
                &self.primaries,
                &mut pending,
                lead,
                self.theta,
                self.exec,
            )?);
        }
        tx.commit()?;
        self.primaries.extend(pending);
        Ok(outcomes)
    }

    /// Record an article without leads (failed or thin).
    pub fn record_article(&mut self, article: &ArticleRow) -> Result<(), StoreError> {
        let tx = self.conn.transaction()?;
        upsert_article(&tx, article)?;
        tx.commit()?;
        Ok(())
    }

    /// URLs that need no further processing.
    pub fn seen_urls(&self) -> Result<HashSet<String>, StoreError> {
        let mut stmt = self
            .conn
            .prepare("SELECT url FROM articles WHERE status IN ('processed', 'thin')")?;
        let urls = stmt
            .query_map([], |r| r.get::<_, String>(0))?
            .collect::<Result<_, _>>()?;
        Ok(urls)
    }

    pub fn article_status(&self, url: &str) -> Result<Option<ArticleStatus>, StoreError> {
        let s: Option<String> = self
            .conn
            .query_row("SELECT status FROM articles WHERE url = ?1", [url], |r| r.get(0))
            .optional()?;
        Ok(match s.as_deref() {
            None => None,
            Some("processed") => Some(ArticleStatus::Processed),
            Some("thin") => Some(ArticleStatus::Thin),
            Some("failed") => Some(ArticleStatus::Failed),
            Some(other) => return Err(StoreError::Corrupt(format!("article status {other:?}"))),
        })
    }

    /// Every lead in insertion order.
    pub fn all_leads(&self) -> Result<Vec<LeadRecord>, StoreError> {
        let mut stmt = self.conn.prepare(
            "SELECT lead_id, use_case, source_url, article_summary, run_id, first_seen, duplicate_of
             FROM leads ORDER BY seq",
        )?;
        let rows = stmt.query_map([], |r| {
            Ok((
                r.get::<_, String>(0)?,
                r.get::<_, String>(1)?,
                r.get::<_, String>(2)?,
                r.get::<_, String>(3)?,
                r.get::<_, String>(4)?,
                r.get::<_, String>(5)?,
                r.get::<_, Option<String>>(6)?,
            ))
        })?;
        rows.map(|row| {
            let (lead_id, use_case, source_url, article_summary, run_id, first_seen, duplicate_of) = row?;
            Ok(LeadRecord {
                use_case: serde_json::from_str(&use_case)
                    .map_err(|e| StoreError::Corrupt(format!("lead {lead_id}: {e}")))?,
                first_seen: parse_ts(&first_seen)?,
                lead_id,
                source_url,
                article_summary,
                run_id,
                duplicate_of,
            })
        })
        .collect()
    }

    pub fn count_leads(&self) -> Result<(u64, u64), StoreError> {
        let (total, primaries): (i64, i64) = self.conn.query_row(
            "SELECT COUNT(*), COALESCE(SUM(duplicate_of IS NULL), 0) FROM leads",
            [],
            |r| Ok((r.get(0)?, r.get(1)?)),
        )?;
        Ok((total as u64, primaries as u64))
    }

    pub fn begin_run(&mut self, run_id: &str, started_at: DateTime<Utc>) -> Result<(), StoreError> {
        self.conn.execute(
            "INSERT INTO runs (run_id, started_at) VALUES (?1, ?2)",
            params![run_id, ts(&started_at)],
        )?;
        Ok(())
    }

    pub fn finish_run(&mut self, run: &RunRecord) -> Result<(), StoreError> {
        self.conn.execute(
            "UPDATE runs SET finished_at = ?2, articles_seen = ?3, articles_processed = ?4,
                 articles_failed = ?5, articles_skipped = ?6, leads_extracted = ?7,
                 input_tokens = ?8, output_tokens = ?9, estimated_cost = ?10
             WHERE run_id = ?1",
            params![
                run.run_id,
                run.finished_at.as_ref().map(ts),
                run.articles_seen as i64,
                run.articles_processed as i64,
                run.articles_failed as i64,
                run.articles_skipped as i64,
                run.leads_extracted as i64,
                run.input_tokens as i64,
                run.output_tokens as i64,
                run.estimated_cost,
            ],
        )?;
        Ok(())
    }

    pub fn runs(&self) -> Result<Vec<RunRecord>, StoreError> {
        let mut stmt = self.conn.prepare(
            "SELECT run_id, started_at, finished_at, articles_seen, articles_processed, articles_failed,
                    articles_skipped, leads_extracted, input_tokens, output_tokens, estimated_cost
             FROM runs ORDER BY started_at, run_id",
        )?;
        let rows = stmt.query_map([], |r| {
            Ok((
                r.get::<_, String>(0)?,
                r.get::<_, String>(1)?,
                r.get::<_, Option<String>>(2)?,
                [
                    r.get::<_, i64>(3)?,
                    r.get::<_, i64>(4)?,
                    r.get::<_, i64>(5)?,
                    r.get::<_, i64>(6)?,
                    r.get::<_, i64>(7)?,
                    r.get::<_, i64>(8)?,
                    r.get::<_, i64>(9)?,
                ],
                r.get::<_, f64>(10)?,
            ))
        })?;
        rows.map(|row| {
            let (run_id, started, finished, n, cost) = row?;
            Ok(RunRecord {
                run_id,
                started_at: Some(parse_ts(&started)?),
                finished_at: finished.as_deref().map(parse_ts).transpose()?,
                articles_seen: n[0] as u64,
                articles_processed: n[1] as u64,
                articles_failed: n[2] as u64,
                articles_skipped: n[3] as u64,
                leads_extracted: n[4] as u64,
                input_tokens: n[5] as u64,
                output_tokens: n[6] as u64,
                estimated_cost: cost,
            })
        })
        .collect()
    }

    pub fn last_run_started(&self) -> Result<Option<DateTime<Utc>>, StoreError> {
        let s: Option<String> = self
            .conn
            .query_row("SELECT MAX(started_at) FROM runs", [], |r| r.get(0))?;
        s.as_deref().map(parse_ts).transpose()
    }

    pub fn feed_validators(&self, feed_id: &str) -> Result<CacheValidators, StoreError> {
        Ok(self
            .conn
            .query_row(
                "SELECT etag, last_modified FROM feed_state WHERE feed_id = ?1",
                [feed_id],
                |r| {
                    Ok(CacheValidators {
                        etag: r.get(0)?,
                        last_modified: r.get(1)?,
                    })
                },
            )
            .optional()?
            .unwrap_or_default())
    }

    pub fn set_feed_validators(&mut self, feed_id: &str, v: &CacheValidators) -> Result<(), StoreError> {
        self.conn.execute(
            "INSERT INTO feed_state (feed_id, etag, last_modified) VALUES (?1, ?2, ?3)
             ON CONFLICT(feed_id) DO UPDATE SET etag = excluded.etag, last_modified = excluded.last_modified",
            params![feed_id, v.etag, v.last_modified],
        )?;
        Ok(())
    }

    /// Full scan of the no-chain and unique-primary-key invariants.
    pub fn check_invariants(&self) -> Result<(), StoreError> {
        let leads = self.all_leads()?;
        let primary: HashSet<&str> = leads
            .iter()
            .filter(|l| l.is_primary())
            .map(|l| l.lead_id.as_str())
            .collect();
        for lead in &leads {
            if let Some(of) = &lead.duplicate_of {
                if !primary.contains(of.as_str()) {
                    return Err(StoreError::Corrupt(format!(
                        "lead {} points at {of}, which is not a primary",
                        lead.lead_id
                    )));
                }
            }
        }
        let mut keys = HashSet::new();
        for lead in leads.iter().filter(|l| l.is_primary()) {
            if !keys.insert(dedup_key(&lead.use_case)) {
                return Err(StoreError::Corrupt(format!(
                    "two primaries share the key of {}",
                    lead.lead_id
                )));
            }
        }
        Ok(())
    }

    /// Write-path failure hook for tests: makes every later insert fail.
    #[doc(hidden)]
    pub fn break_for_tests(&self) -> Result<(), StoreError> {
        self.conn.execute_batch(
            "CREATE TRIGGER IF NOT EXISTS fail_leads BEFORE INSERT ON leads
             BEGIN SELECT RAISE(ABORT, 'injected failure'); END;",
        )?;
        Ok(())
    }
}

fn upsert_article(tx: &Transaction<'_>, a: &ArticleRow) -> Result<(), StoreError> {
    tx.execute(
        "INSERT INTO articles (url, feed_id, title, status, run_id, updated_at, summary, usefulness_rating,
                               word_count, input_tokens, output_tokens, raw_response, error)
         VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9, ?10, ?11, ?12, ?13)
         ON CONFLICT(url) DO UPDATE SET
             feed_id = excluded.feed_id, title = excluded.title, status = excluded.status,
             run_id = excluded.run_id, updated_at = excluded.updated_at, summary = excluded.summary,
             usefulness_rating = excluded.usefulness_rating, word_count = excluded.word_count,
             input_tokens = excluded.input_tokens, output_tokens = excluded.output_tokens,
             raw_response = excluded.raw_response, error = excluded.error",
        params![
            a.url,
            a.feed_id,
            a.title,
            a.status.as_str(),
            a.run_id,
            ts(&a.updated_at),
            a.summary,
            a.usefulness_rating,
            a.word_count.map(|w| w as i64),
            a.input_tokens as i64,
            a.output_tokens as i64,
            a.raw_response,
            a.error,
        ],
    )?;
    Ok(())
}

fn insert_in_tx(
    tx: &Transaction<'_>,
    committed: &[PrimarySig],
    pending: &mut Vec<PrimarySig>,
    lead: &LeadRecord,
    theta: f64,
    exec: Execution,
) -> Result<InsertOutcome, StoreError> {
    // Exact re-submission: same content from the same source.
    let existing: Option<Option<String>> = tx
        .query_row(
            "SELECT duplicate_of FROM leads WHERE lead_id = ?1",
            [&lead.lead_id],
            |r| r.get(0),
        )
        .optional()?;
    if let Some(dup_of) = existing {
        return Ok(InsertOutcome::MarkedDuplicate {
            of: dup_of.unwrap_or_else(|| lead.lead_id.clone()),
        });
    }

    let sig = PrimarySig::of(&lead.lead_id, &lead.use_case);
    let matches = |p: &PrimarySig| p.key == sig.key || text::jaccard(&p.tokens, &sig.tokens) >= theta;
    let earliest = par::position_first(exec, committed, matches)
        .map(|i| committed[i].lead_id.clone())
        .or_else(|| pending.iter().find(|p| matches(p)).map(|p| p.lead_id.clone()));

    let use_case = serde_json::to_string(&lead.use_case).map_err(|e| StoreError::Corrupt(e.to_string()))?;
    tx.execute(
        "INSERT INTO leads (lead_id, dedup_key, use_case, source_url, article_summary, run_id, first_seen, duplicate_of)
         VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8)",
        params![
            lead.lead_id,
            sig.key,
            use_case,
            lead.source_url,
            lead.article_summary,
            lead.run_id,
            ts(&lead.first_seen),
            earliest,
        ],
    )?;
    Ok(match earliest {
        Some(of) => InsertOutcome::MarkedDuplicate { of },
        None => {
            pending.push(sig);
            InsertOutcome::Inserted
        }
    })
}
