//! End-to-end runs against the fixture news site and scripted model endpoints.

use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use chrono::{DateTime, Utc};
use leadwatch::feed::FeedSpec;
use leadwatch::llm::LlmClient;
use leadwatch::retry::RetryPolicy;
use leadwatch::runner::{Pipeline, RunError, RunGuard};
use leadwatch::schedule::{schedule_loop, SimulatedClock};
use leadwatch::store::ArticleStatus;
use leadwatch::{LeadStore, PipelineConfig};
use leadwatch_testkit::{completion_json, FixtureResponse, FixtureServer, NewsScenario, SCENARIO_TOKENS};
use tempfile::TempDir;

// run_once holds a process-wide slot, so tests in this binary take turns.
static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn feed(id: &str, url: String) -> FeedSpec {
    FeedSpec {
        id: id.into(),
        url,
        keywords: vec!["Generative AI".into(), "Newsroom".into()],
        enabled: true,
    }
}

fn config(dir: &Path, feeds: Vec<FeedSpec>, endpoint: String) -> PipelineConfig {
    let mut c = PipelineConfig {
        feeds,
        database_path: dir.join("leads.db"),
        ..Default::default()
    };
    c.model.endpoint_url = endpoint;
    c.model.retry = RetryPolicy::immediate(3);
    c.fetch.retry = RetryPolicy::immediate(2);
    c.fetch.per_host_interval = Duration::ZERO;
    c
}

fn pipeline(c: PipelineConfig) -> Pipeline {
    let store = LeadStore::open(&c.database_path).unwrap();
    let llm = LlmClient::with_api_key(c.model.clone(), Some("sk-test".into())).unwrap();
    Pipeline::new(c, store, llm).unwrap()
}

#[test]
fn fresh_run_then_idempotent_rerun() {
    let _g = serial();
    let s = NewsScenario::start();
    let dir = TempDir::new().unwrap();
    let cfg = config(
        dir.path(),
        vec![feed("alerts", s.alerts_feed_url())],
        s.model_endpoint(),
    );
    let mut p = pipeline(cfg.clone());

    let first = p.run_once().unwrap();
    let r = &first.record;
    let expected = NewsScenario::expected_use_cases() as u64;
    assert_eq!(r.articles_seen, 5);
    assert_eq!(r.articles_processed, 5);
    assert_eq!(r.articles_failed, 0);
    assert_eq!(r.articles_skipped, 0);
    assert_eq!(r.leads_extracted, expected);
    assert_eq!(r.input_tokens, 5 * SCENARIO_TOKENS.0);
    assert_eq!(r.output_tokens, 5 * SCENARIO_TOKENS.1);
    assert_eq!(r.estimated_cost, cfg.cost(r.input_tokens, r.output_tokens));
    assert!(r.counts_consistent());
    // One response repeats the council transcription use case under another case.
    assert_eq!(first.primaries_inserted, expected - 1);
    assert_eq!(first.duplicates_marked, 1);
    assert_eq!(p.store().count_leads().unwrap(), (expected, expected - 1));
    p.store().check_invariants().unwrap();

    // Every request carried the bearer token and the schema response format.
    for req in s.model.requests() {
        assert_eq!(req.header("authorization"), Some("Bearer sk-test"));
        let body: serde_json::Value = serde_json::from_str(&req.body).unwrap();
        assert_eq!(body["model"], "o3");
        assert_eq!(body["response_format"]["type"], "json_schema");
    }

    // Leads point at canonical article URLs: tracking query and fragment gone.
    let leads = p.store().all_leads().unwrap();
    assert!(leads
        .iter()
        .any(|l| l.source_url == s.site.url_for("/news/council-transcripts")));
    assert!(leads
        .iter()
        .any(|l| l.source_url == s.site.url_for("/verification/photos")));
    assert!(leads
        .iter()
        .all(|l| !l.source_url.contains("utm_") && !l.source_url.contains('#')));

    let model_calls = s.model_requests();
    let second = p.run_once().unwrap();
    assert_eq!(second.record.articles_seen, 5);
    assert_eq!(second.record.articles_processed, 0);
    assert_eq!(second.primaries_inserted, 0);
    assert_eq!(s.model_requests(), model_calls);
    assert_eq!(p.store().count_leads().unwrap(), (expected, expected - 1));
    assert_eq!(p.store().runs().unwrap().len(), 2);
}

#[test]
fn overlapping_feeds_and_thin_pages() {
    let _g = serial();
    let s = NewsScenario::start();
    let dir = TempDir::new().unwrap();
    let feeds = vec![feed("alerts", s.alerts_feed_url()), feed("digest", s.digest_feed_url())];
    let mut p = pipeline(config(dir.path(), feeds, s.model_endpoint()));
    let r = p.run_once().unwrap().record;
    // The RSS feed repeats one alert article (without tracking params) and adds a teaser.
    assert_eq!(r.articles_seen, 6);
    assert_eq!(r.articles_processed, 5);
    assert_eq!(r.articles_skipped, 1);
    assert_eq!(s.model_requests(), 5);
    let teaser = s.site.url_for("/subscribe/teaser");
    assert_eq!(p.store().article_status(&teaser).unwrap(), Some(ArticleStatus::Thin));

    // Thin pages count as seen and are not fetched again.
    let fetched = s.site.request_count();
    let again = p.run_once().unwrap().record;
    assert_eq!(again.articles_skipped, 0);
    assert_eq!(s.site.request_count(), fetched + 2, "only the two feeds are polled");
}

#[test]
fn rejected_credential_aborts_without_marking_articles() {
    let _g = serial();
    let s = NewsScenario::start();
    let model = FixtureServer::start(|_| FixtureResponse::json(401, r#"{"error":{"message":"bad key"}}"#));
    let dir = TempDir::new().unwrap();
    let mut p = pipeline(config(
        dir.path(),
        vec![feed("alerts", s.alerts_feed_url())],
        model.url_for("/v1/chat/completions"),
    ));
    let err = p.run_once().unwrap_err();
    assert!(matches!(err, RunError::Aborted(_)), "{err}");
    // No retries on a credential failure; the abort stops further requests early.
    assert!(model.request_count() <= p.config().model.max_concurrent);
    assert!(p.store().seen_urls().unwrap().is_empty());
    assert_eq!(p.store().count_leads().unwrap(), (0, 0));
    let runs = p.store().runs().unwrap();
    assert_eq!(runs.len(), 1);
    assert!(runs[0].finished_at.is_some());
}

#[test]
fn transient_model_failures_are_per_article_and_retried_next_run() {
    let _g = serial();
    let s = NewsScenario::start();
    let healthy = Arc::new(AtomicBool::new(false));
    let model = {
        let healthy = Arc::clone(&healthy);
        FixtureServer::start(move |req| {
            if !healthy.load(Ordering::SeqCst) {
                return FixtureResponse::status(503);
            }
            let article = leadwatch_testkit::SCENARIO_ARTICLES
                .iter()
                .find(|a| req.body.contains(a.marker))
                .unwrap();
            let body = leadwatch_testkit::read_fixture(article.response);
            FixtureResponse::json(200, completion_json(&body, 10, 5))
        })
    };
    let dir = TempDir::new().unwrap();
    let mut p = pipeline(config(
        dir.path(),
        vec![feed("alerts", s.alerts_feed_url())],
        model.url_for("/v1/chat/completions"),
    ));

    let down = p.run_once().unwrap();
    assert_eq!(down.record.articles_failed, 5);
    assert_eq!(down.record.articles_processed, 0);
    assert!(down.all_failed());
    assert_eq!(model.request_count(), 5 * 3, "three attempts per article");
    assert_eq!(p.store().count_leads().unwrap(), (0, 0));
    let url = s.site.url_for("/tech/archive-assistant");
    assert_eq!(p.store().article_status(&url).unwrap(), Some(ArticleStatus::Failed));

    healthy.store(true, Ordering::SeqCst);
    let up = p.run_once().unwrap();
    assert_eq!(up.record.articles_processed, 5);
    assert_eq!(up.record.input_tokens, 50);
    assert_eq!(p.store().article_status(&url).unwrap(), Some(ArticleStatus::Processed));
}

#[test]
fn invalid_output_and_missing_pages_fail_only_their_article() {
    let _g = serial();
    let s = NewsScenario::start();
    let model = FixtureServer::start(|req| {
        let (p, c) = SCENARIO_TOKENS;
        if req.body.contains("VerifyDesk") {
            // usefulness 6 is outside the 1-5 scale.
            let bad = r#"{"summary":"s","usefulness_rating":6,"use_cases":[]}"#;
            return FixtureResponse::json(200, completion_json(bad, p, c));
        }
        let article = leadwatch_testkit::SCENARIO_ARTICLES
            .iter()
            .find(|a| req.body.contains(a.marker))
            .unwrap();
        FixtureResponse::json(
            200,
            completion_json(&leadwatch_testkit::read_fixture(article.response), p, c),
        )
    });
    // Feed whose articles include one that 404s.
    let feed_body = leadwatch_testkit::read_fixture("feeds/google-alerts.atom")
        .replace("{{BASE}}", s.site.url())
        .replace("/sport/match-reports", "/sport/gone");
    let feed_server = FixtureServer::start(move |_| FixtureResponse::atom(feed_body.clone()));
    let dir = TempDir::new().unwrap();
    let mut p = pipeline(config(
        dir.path(),
        vec![feed("alerts", feed_server.url_for("/alerts"))],
        model.url_for("/v1/chat/completions"),
    ));
    let r = p.run_once().unwrap().record;
    assert_eq!(r.articles_seen, 5);
    assert_eq!(r.articles_processed, 3);
    assert_eq!(r.articles_failed, 2);
    // Tokens of the invalid response still count.
    assert_eq!(r.input_tokens, 4 * SCENARIO_TOKENS.0);
    assert!(r.counts_consistent());
    let photos = s.site.url_for("/verification/photos");
    assert_eq!(p.store().article_status(&photos).unwrap(), Some(ArticleStatus::Failed));
}

#[test]
fn store_failure_aborts_and_rolls_back_the_article() {
    let _g = serial();
    let s = NewsScenario::start();
    let dir = TempDir::new().unwrap();
    let mut p = pipeline(config(
        dir.path(),
        vec![feed("alerts", s.alerts_feed_url())],
        s.model_endpoint(),
    ));
    p.store().break_for_tests().unwrap();
    let err = p.run_once().unwrap_err();
    assert!(matches!(err, RunError::Store(_)), "{err}");
    assert_eq!(p.store().count_leads().unwrap(), (0, 0));
    // The article whose leads failed to insert is not recorded either.
    assert!(p.store().seen_urls().unwrap().is_empty());
}

#[test]
fn concurrent_run_is_refused() {
    let _g = serial();
    let s = NewsScenario::start();
    let dir = TempDir::new().unwrap();
    let mut p = pipeline(config(
        dir.path(),
        vec![feed("alerts", s.alerts_feed_url())],
        s.model_endpoint(),
    ));
    let held = RunGuard::try_acquire().unwrap();
    assert!(matches!(p.run_once(), Err(RunError::Busy)));
    drop(held);
    p.run_once().unwrap();
}

fn at(s: &str) -> DateTime<Utc> {
    DateTime::parse_from_rfc3339(s).unwrap().with_timezone(&Utc)
}

#[test]
fn two_simulated_days_give_two_runs() {
    let _g = serial();
    let s = NewsScenario::start();
    let dir = TempDir::new().unwrap();
    let mut p = pipeline(config(
        dir.path(),
        vec![feed("alerts", s.alerts_feed_url())],
        s.model_endpoint(),
    ));
    let schedule = p.config().schedule;
    // Started before the day's window with yesterday's run already done.
    let clock = SimulatedClock::new(at("2026-03-02T05:00:00Z"));
    let stop = AtomicBool::new(false);
    let fired = Mutex::new(Vec::new());
    let runs = schedule_loop(schedule, Some(at("2026-03-01T07:00:00Z")), &clock, &stop, || {
        fired.lock().unwrap().push(clock_now(&clock));
        let result = p.run_once().map(|_| ());
        if fired.lock().unwrap().len() == 2 {
            stop.store(true, Ordering::SeqCst);
        }
        result
    });
    assert_eq!(runs, 2);
    assert_eq!(
        *fired.lock().unwrap(),
        vec![at("2026-03-02T07:00:00Z"), at("2026-03-03T07:00:00Z")]
    );
    let records = p.store().runs().unwrap();
    assert_eq!(records.len(), 2);
    assert_eq!(records[0].articles_processed, 5);
    assert_eq!(records[1].articles_processed, 0);
}

fn clock_now(c: &SimulatedClock) -> DateTime<Utc> {
    use leadwatch::schedule::Clock;
    c.now()
}

#[test]
fn late_start_catches_up_once_and_busy_window_is_skipped() {
    let clock = SimulatedClock::new(at("2026-03-02T15:00:00Z"));
    let schedule = "07:00".parse().unwrap();
    let stop = AtomicBool::new(false);
    let calls = AtomicUsize::new(0);
    let runs = schedule_loop(schedule, Some(at("2026-03-01T07:00:00Z")), &clock, &stop, || {
        let n = calls.fetch_add(1, Ordering::SeqCst);
        let now = clock_now(&clock);
        match n {
            // Catch-up run at startup, not deferred to the next window.
            0 => assert_eq!(now, at("2026-03-02T15:00:00Z")),
            1 => {
                assert_eq!(now, at("2026-03-03T07:00:00Z"));
                return Err(RunError::Busy);
            }
            _ => {
                assert_eq!(now, at("2026-03-04T07:00:00Z"));
                stop.store(true, Ordering::SeqCst);
            }
        }
        Ok(())
    });
    assert_eq!(calls.load(Ordering::SeqCst), 3);
    assert_eq!(runs, 2, "the busy window is not counted");
}
