//! One end-to-end pass: poll feeds, fetch new articles, extract with the
//! model, store leads.
//!
//! Per-article problems (fetch errors, model errors, invalid output) are
//! recorded on the article row and the run continues. A rejected credential
//! or a store failure ends the run.

use std::collections::HashSet;
use std::sync::atomic::{AtomicBool, AtomicU32, Ordering};

use chrono::{DateTime, Utc};

use crate::config::{ConfigError, PipelineConfig};
use crate::feed::{parse_feed, poll_feed, CacheValidators, FeedEntry, FeedSpec, PollOutcome};
use crate::fetch::{canonicalize_url, ArticleDocument, FetchError, Fetcher};
use crate::llm::{
    build_prompt, parse_article_output, LlmClient, LlmError, ParseOptions, ParsedArticle, PromptTemplate,
};
use crate::now_millis;
use crate::par;
use crate::store::{ArticleRow, ArticleStatus, InsertOutcome, LeadRecord, LeadStore, RunRecord, StoreError};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("run aborted: {0}")]
    Aborted(LlmError),
    #[error("run aborted by storage failure: {0}")]
    Store(#[from] StoreError),
    #[error("another run is already in progress")]
    Busy,
}

static RUNNING: AtomicBool = AtomicBool::new(false);

/// Process-wide exclusive run slot, released on drop.
pub struct RunGuard(());

impl RunGuard {
    pub fn try_acquire() -> Result<Self, RunError> {
        RUNNING
            .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .map(|_| RunGuard(()))
            .map_err(|_| RunError::Busy)
    }
}

impl Drop for RunGuard {
    fn drop(&mut self) {
        RUNNING.store(false, Ordering::Release);
    }
}

/// Totals of one run plus the dedup outcome of its inserts.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub record: RunRecord,
    pub primaries_inserted: u64,
    pub duplicates_marked: u64,
}

impl RunReport {
    /// Nothing got through although something was attempted.
    pub fn all_failed(&self) -> bool {
        self.record.articles_processed == 0 && self.record.articles_failed > 0
    }
}

/// A polled feed with its new entries and the validators to save, if any.
type PolledFeed = (FeedSpec, Vec<FeedEntry>, Option<CacheValidators>);

pub struct Pipeline {
    config: PipelineConfig,
    store: LeadStore,
    fetcher: Fetcher,
    llm: LlmClient,
    template: PromptTemplate,
    feed_client: reqwest::blocking::Client,
}

impl Pipeline {
    /// Open the configured database and read the API key from the environment.
    pub fn from_config(config: PipelineConfig) -> Result<Self, RunError> {
        let store = LeadStore::open(&config.database_path)?;
        let llm = LlmClient::new(config.model.clone()).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Self::new(config, store, llm)
    }

    pub fn new(config: PipelineConfig, store: LeadStore, llm: LlmClient) -> Result<Self, RunError> {
        config.validate()?;
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        let template = config.prompt_template()?;
        let fetcher = Fetcher::new(config.fetch.clone()).map_err(|e| invalid(&e))?;
        let feed_client = reqwest::blocking::Client::builder()
            .user_agent(config.fetch.user_agent.clone())
            .build()
            .map_err(|e| invalid(&e))?;
        let store = store.with_theta(config.dedup_theta);
        Ok(Self {
            config,
            store,
            fetcher,
            llm,
            template,
            feed_client,
        })
    }

    pub fn store(&self) -> &LeadStore {
        &self.store
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    /// Execute one full run. Holds the process-wide run slot throughout.
    pub fn run_once(&mut self) -> Result<RunReport, RunError> {
        let _guard = RunGuard::try_acquire()?;
        let started = now_millis();
        let run_id = new_run_id(started);
        self.store.begin_run(&run_id, started)?;
        tracing::info!(run_id, "run started");

        let mut record = RunRecord {
            run_id: run_id.clone(),
            started_at: Some(started),
            ..RunRecord::default()
        };
        let mut report = RunReport {
            record: RunRecord::default(),
            primaries_inserted: 0,
            duplicates_marked: 0,
        };
        let result = self.run_stages(&run_id, &mut record, &mut report);

        record.estimated_cost = self.config.cost(record.input_tokens, record.output_tokens);
        record.finished_at = Some(now_millis());
        // Best effort when the store itself is what failed.
        if let Err(e) = self.store.finish_run(&record) {
            tracing::error!(run_id, error = %e, "could not record run totals");
            result?;
            return Err(e.into());
        }
        tracing::info!(
            run_id,
            seen = record.articles_seen,
            processed = record.articles_processed,
            failed = record.articles_failed,
            skipped = record.articles_skipped,
            leads = record.leads_extracted,
            input_tokens = record.input_tokens,
            output_tokens = record.output_tokens,
            cost = record.estimated_cost,
            "run finished"
        );
        result?;
        report.record = record;
        Ok(report)
    }

    fn run_stages(&mut self, run_id: &str, record: &mut RunRecord, report: &mut RunReport) -> Result<(), RunError> {
        let polled = self.poll_feeds()?;

        // One candidate per canonical URL, first occurrence wins.
        let mut unique = HashSet::new();
        let mut candidates: Vec<FeedEntry> = Vec::new();
        for (_, entries, _) in &polled {
            for entry in entries {
                match canonicalize_url(&entry.resolved_url) {
                    Ok(url) => {
                        if unique.insert(url.clone()) {
                            candidates.push(FeedEntry {
                                resolved_url: url,
                                ..entry.clone()
                            });
                        }
                    }
                    Err(e) => {
                        tracing::warn!(feed = %entry.feed_id, link = %entry.raw_link, error = %e, "skipping entry")
                    }
                }
            }
        }
        record.articles_seen = candidates.len() as u64;

        let seen = self.store.seen_urls()?;
        let fresh = crate::feed::filter_new(&candidates, &seen);
        tracing::info!(run_id, candidates = candidates.len(), new = fresh.len(), "feeds polled");

        let urls: Vec<String> = fresh.iter().map(|e| e.resolved_url.clone()).collect();
        let fetched = self.fetcher.fetch_many(&urls);

        let min_words = self.config.fetch.min_words;
        let mut to_model = Vec::new();
        let mut outcomes: Vec<Option<ArticleOutcome>> = (0..fresh.len()).map(|_| None).collect();
        for (i, res) in fetched.into_iter().enumerate() {
            match res {
                Err(e) => outcomes[i] = Some(ArticleOutcome::FetchFailed(e)),
                Ok(doc) if doc.is_thin(min_words) => outcomes[i] = Some(ArticleOutcome::Thin(doc)),
                Ok(doc) => to_model.push((i, doc)),
            }
        }

        let abort = AtomicBool::new(false);
        let (llm, template, max_chars) = (&self.llm, &self.template, self.config.model.max_input_chars);
        let extracted = par::bounded_map(to_model, self.config.model.max_concurrent, |(i, doc)| {
            (i, extract(llm, template, max_chars, doc, &abort))
        });
        let mut fatal = None;
        for (i, outcome) in extracted {
            outcomes[i] = Some(match outcome {
                ArticleOutcome::Extracted { result: Err(e), .. } if e.is_fatal() => {
                    // Not the article's fault; leave it for the next run.
                    fatal.get_or_insert(e);
                    ArticleOutcome::Abandoned
                }
                other => other,
            });
        }

        // Serial commit in feed order; the store is the only writer.
        for (entry, outcome) in fresh.iter().zip(outcomes) {
            let Some(outcome) = outcome else { continue };
            self.commit(run_id, entry, outcome, record, report)?;
        }

        match fatal {
            Some(e) => Err(RunError::Aborted(e)),
            None => {
                let clean = record.articles_failed == 0;
                for (feed, _, validators) in &polled {
                    if let (true, Some(v)) = (clean, validators) {
                        self.store.set_feed_validators(&feed.id, v)?;
                    }
                }
                Ok(())
            }
        }
    }

    /// Poll every enabled feed; a feed that fails is logged and skipped.
    fn poll_feeds(&self) -> Result<Vec<PolledFeed>, RunError> {
        let feeds: Vec<(FeedSpec, CacheValidators)> = self
            .config
            .feeds
            .iter()
            .filter(|f| f.enabled)
            .map(|f| Ok((f.clone(), self.store.feed_validators(&f.id)?)))
            .collect::<Result<_, StoreError>>()?;
        let redirectors = &self.config.redirectors;
        let timeout = self.config.feed_timeout;
        let client = &self.feed_client;
        let polled = par::bounded_map(feeds, self.config.fetch.max_concurrent, |(feed, validators)| {
            let res = poll_feed(client, &feed, &validators, timeout).and_then(|outcome| match outcome {
                PollOutcome::NotModified => Ok((Vec::new(), None)),
                PollOutcome::Fetched { body, validators } => {
                    parse_feed(&body, &feed.id, redirectors).map(|entries| (entries, Some(validators)))
                }
            });
            (feed, res)
        });
        Ok(polled
            .into_iter()
            .filter_map(|(feed, res)| match res {
                Ok((entries, validators)) => {
                    tracing::debug!(feed = %feed.id, entries = entries.len(), "feed polled");
                    Some((feed, entries, validators))
                }
                Err(e) => {
                    tracing::warn!(feed = %feed.id, error = %e, "feed skipped");
                    None
                }
            })
            .collect())
    }

    fn commit(
        &mut self,
        run_id: &str,
        entry: &FeedEntry,
        outcome: ArticleOutcome,
        record: &mut RunRecord,
        report: &mut RunReport,
    ) -> Result<(), RunError> {
        let now = now_millis();
        let mut row = ArticleRow {
            url: entry.resolved_url.clone(),
            feed_id: entry.feed_id.clone(),
            title: entry.title.clone(),
            status: ArticleStatus::Failed,
            run_id: run_id.to_string(),
            updated_at: now,
            summary: None,
            usefulness_rating: None,
            word_count: None,
            input_tokens: 0,
            output_tokens: 0,
            raw_response: None,
            error: None,
        };
        match outcome {
            // Left unrecorded so the next run tries again.
            ArticleOutcome::Abandoned => {}
            ArticleOutcome::FetchFailed(e) => {
                tracing::warn!(url = %row.url, error = %e, "fetch failed");
                row.error = Some(e.to_string());
                record.articles_failed += 1;
                self.store.record_article(&row)?;
            }
            ArticleOutcome::Thin(doc) => {
                tracing::info!(url = %row.url, words = doc.word_count, min = self.config.fetch.min_words, "thin article skipped");
                fill_from_doc(&mut row, &doc);
                row.status = ArticleStatus::Thin;
                record.articles_skipped += 1;
                self.store.record_article(&row)?;
            }
            ArticleOutcome::Extracted {
                doc,
                raw,
                tokens,
                result,
            } => {
                fill_from_doc(&mut row, &doc);
                row.input_tokens = tokens.0;
                row.output_tokens = tokens.1;
                row.raw_response = raw;
                record.input_tokens += tokens.0;
                record.output_tokens += tokens.1;
                match result {
                    Err(e) => {
                        tracing::warn!(url = %row.url, error = %e, "extraction failed");
                        row.error = Some(e.to_string());
                        record.articles_failed += 1;
                        self.store.record_article(&row)?;
                    }
                    Ok(ParsedArticle { article, adjusted }) => {
                        if adjusted {
                            tracing::info!(url = %row.url, "ratings rescaled onto 1-5");
                        }
                        row.status = ArticleStatus::Processed;
                        row.summary = Some(article.summary.clone());
                        row.usefulness_rating = Some(article.usefulness_rating);
                        let leads: Vec<LeadRecord> = article
                            .use_cases
                            .into_iter()
                            .map(|u| LeadRecord::new(u, row.url.clone(), article.summary.clone(), run_id, now))
                            .collect();
                        let outcomes = self.store.commit_article(&row, &leads)?;
                        record.articles_processed += 1;
                        record.leads_extracted += leads.len() as u64;
                        for o in outcomes {
                            match o {
                                InsertOutcome::Inserted => report.primaries_inserted += 1,
                                InsertOutcome::MarkedDuplicate { .. } => report.duplicates_marked += 1,
                            }
                        }
                        tracing::info!(url = %row.url, use_cases = leads.len(), "article processed");
                    }
                }
            }
        }
        Ok(())
    }
}

fn extract(
    llm: &LlmClient,
    template: &PromptTemplate,
    max_chars: usize,
    doc: ArticleDocument,
    abort: &AtomicBool,
) -> ArticleOutcome {
    if abort.load(Ordering::Acquire) {
        return ArticleOutcome::Abandoned;
    }
    let messages = build_prompt(&doc.text, template, max_chars);
    let raw = match llm.request_extraction(&messages) {
        Ok(raw) => raw,
        Err(e) => {
            if e.is_fatal() {
                abort.store(true, Ordering::Release);
            }
            return ArticleOutcome::Extracted {
                doc,
                raw: None,
                tokens: (0, 0),
                result: Err(e),
            };
        }
    };
    let opts = ParseOptions {
        usefulness_scale: template.usefulness_scale(),
    };
    let result = parse_article_output(&raw.content, opts);
    ArticleOutcome::Extracted {
        doc,
        tokens: (raw.input_tokens, raw.output_tokens),
        raw: Some(raw.content),
        result,
    }
}

enum ArticleOutcome {
    FetchFailed(FetchError),
    Thin(ArticleDocument),
    Extracted {
        doc: ArticleDocument,
        raw: Option<String>,
        tokens: (u64, u64),
        result: Result<ParsedArticle, LlmError>,
    },
    /// Not attempted because the run is aborting.
    Abandoned,
}

fn fill_from_doc(row: &mut ArticleRow, doc: &ArticleDocument) {
    if row.title.is_empty() {
        row.title = doc.title.clone();
    }
    row.word_count = Some(doc.word_count as u64);
}

fn new_run_id(started: DateTime<Utc>) -> String {
    static SEQ: AtomicU32 = AtomicU32::new(0);
    format!(
        "run-{}-{}-{}",
        started.format("%Y%m%dT%H%M%S%.3fZ"),
        std::process::id(),
        SEQ.fetch_add(1, Ordering::Relaxed)
    )
}

/// Projected cost of `runs` runs like `record`.
pub fn projected_cost(record: &RunRecord, runs: u32) -> f64 {
    record.estimated_cost * runs as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn guard_is_exclusive() {
        let g = RunGuard::try_acquire().unwrap();
        assert!(matches!(RunGuard::try_acquire(), Err(RunError::Busy)));
        drop(g);
        drop(RunGuard::try_acquire().unwrap());
    }

    #[test]
    fn run_ids_are_unique() {
        let t = now_millis();
        assert_ne!(new_run_id(t), new_run_id(t));
    }
}
