//! Threshold-filtered lead digests and lossless CSV / JSONL tables.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::llm::UseCase;
use crate::store::{ts, LeadRecord, LeadStore, StoreError};

#[derive(Debug, thiserror::Error)]
pub enum DigestError {
    #[error("unknown digest format {0:?} (expected markdown, csv or jsonl)")]
    UnknownFormat(String),
    #[error("threshold {0} outside [1, 5]")]
    Threshold(f64),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("cannot parse export: {0}")]
    Import(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DigestFormat {
    Markdown,
    Csv,
    Jsonl,
}

impl FromStr for DigestFormat {
    type Err = DigestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "markdown" | "md" => Ok(DigestFormat::Markdown),
            "csv" => Ok(DigestFormat::Csv),
            "jsonl" => Ok(DigestFormat::Jsonl),
            _ => Err(DigestError::UnknownFormat(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DigestSpec {
    threshold: f64,
    pub since: Option<DateTime<Utc>>,
    pub format: DigestFormat,
    pub include_duplicates: bool,
}

impl DigestSpec {
    pub fn new(threshold: f64, format: DigestFormat) -> Result<Self, DigestError> {
        if !(1.0..=5.0).contains(&threshold) {
            return Err(DigestError::Threshold(threshold));
        }
        Ok(Self {
            threshold,
            since: None,
            format,
            include_duplicates: false,
        })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }
}

impl Default for DigestSpec {
    fn default() -> Self {
        Self::new(4.0, DigestFormat::Markdown).unwrap()
    }
}

/// Digest order: rating descending, then newest first, then lead id.
pub fn digest_order(a: &LeadRecord, b: &LeadRecord) -> Ordering {
    b.use_case
        .newsworthiness_rating
        .total_cmp(&a.use_case.newsworthiness_rating)
        .then_with(|| b.first_seen.cmp(&a.first_seen))
        .then_with(|| a.lead_id.cmp(&b.lead_id))
}

/// Filter and order leads for a digest.
pub fn select_from(leads: &[LeadRecord], spec: &DigestSpec) -> Vec<LeadRecord> {
    let mut out: Vec<LeadRecord> = leads
        .iter()
        .filter(|l| spec.include_duplicates || l.is_primary())
        .filter(|l| l.use_case.newsworthiness_rating >= spec.threshold)
        .filter(|l| spec.since.is_none_or(|since| l.first_seen >= since))
        .cloned()
        .collect();
    out.sort_by(digest_order);
    out
}

pub fn select_leads(store: &LeadStore, spec: &DigestSpec) -> Result<Vec<LeadRecord>, DigestError> {
    Ok(select_from(&store.all_leads()?, spec))
}

/// CSV column order. Stable; downstream spreadsheets depend on it.
pub const CSV_COLUMNS: [&str; 16] = [
    "lead_id",
    "newsworthiness_rating",
    "name",
    "description",
    "ai_model_used",
    "strengths",
    "challenges",
    "newsroom_impact",
    "link_to_demo",
    "is_original",
    "comparison_to_other_use_cases",
    "source_url",
    "article_summary",
    "run_id",
    "first_seen",
    "duplicate_of",
];

pub fn render_digest(leads: &[LeadRecord], format: DigestFormat) -> String {
    match format {
        DigestFormat::Markdown => render_markdown(leads),
        DigestFormat::Csv => render_csv(leads),
        DigestFormat::Jsonl => render_jsonl(leads),
    }
}

fn render_markdown(leads: &[LeadRecord]) -> String {
    let mut out = String::from("# Lead digest\n\n");
    if leads.is_empty() {
        out.push_str("No leads.\n");
        return out;
    }
    let noun = if leads.len() == 1 { "lead" } else { "leads" };
    let _ = writeln!(out, "{} {noun}.", leads.len());
    for (i, lead) in leads.iter().enumerate() {
        let u = &lead.use_case;
        let _ = writeln!(
            out,
            "\n## {}. {} ({:.1})\n",
            i + 1,
            one_line(&u.name),
            u.newsworthiness_rating
        );
        let _ = writeln!(out, "- Newsworthiness: {:.1}", u.newsworthiness_rating);
        let _ = writeln!(out, "- Source: <{}>", lead.source_url);
        let _ = writeln!(
            out,
            "- AI model: {}",
            u.ai_model_used.as_deref().map_or("not specified".into(), one_line)
        );
        let _ = writeln!(
            out,
            "- Demo: {}",
            u.link_to_demo.as_deref().map_or("none".into(), one_line)
        );
        let _ = writeln!(out, "- Original: {}", if u.is_original { "yes" } else { "no" });
        if let Some(of) = &lead.duplicate_of {
            let _ = writeln!(out, "- Duplicate of: {of}");
        }
        let _ = writeln!(out, "- First seen: {}", ts(&lead.first_seen));
        let _ = writeln!(out, "- Lead id: {}", lead.lead_id);
        if !u.description.is_empty() {
            let _ = writeln!(out, "\n{}", u.description.trim());
        }
        for (label, value) in [
            ("Newsroom impact", Some(u.newsroom_impact.as_str())),
            ("Strengths", Some(u.strengths.as_str())),
            ("Challenges", Some(u.challenges.as_str())),
            ("Comparison", u.comparison_to_other_use_cases.as_deref()),
        ] {
            if let Some(v) = value.filter(|v| !v.trim().is_empty()) {
                let _ = writeln!(out, "\n**{label}:** {}", v.trim());
            }
        }
    }
    out
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn render_csv(leads: &[LeadRecord]) -> String {
    let mut w = csv::WriterBuilder::new()
        .quote_style(csv::QuoteStyle::Always)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(CSV_COLUMNS).expect("in-memory write");
    for lead in leads {
        let u = &lead.use_case;
        let opt = |o: &Option<String>| o.clone().unwrap_or_default();
        w.write_record([
            lead.lead_id.clone(),
            u.newsworthiness_rating.to_string(),
            u.name.clone(),
            u.description.clone(),
            opt(&u.ai_model_used),
            u.strengths.clone(),
            u.challenges.clone(),
            u.newsroom_impact.clone(),
            opt(&u.link_to_demo),
            u.is_original.to_string(),
            opt(&u.comparison_to_other_use_cases),
            lead.source_url.clone(),
            lead.article_summary.clone(),
            lead.run_id.clone(),
            ts(&lead.first_seen),
            opt(&lead.duplicate_of),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8 input gives utf-8 output")
}

fn render_jsonl(leads: &[LeadRecord]) -> String {
    leads
        .iter()
        .map(|l| serde_json::to_string(l).expect("lead serializes") + "\n")
        .collect()
}

/// Parse a CSV export back into leads. Empty optional cells read as absent.
pub fn parse_csv(text: &str) -> Result<Vec<LeadRecord>, DigestError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let headers = r.headers().map_err(|e| DigestError::Import(e.to_string()))?.clone();
    if headers.iter().ne(CSV_COLUMNS.iter().copied()) {
        return Err(DigestError::Import("unexpected CSV header".into()));
    }
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| DigestError::Import(e.to_string()))?;
            let f = |i: usize| rec.get(i).unwrap_or("").to_string();
            let opt = |i: usize| Some(f(i)).filter(|s| !s.is_empty());
            let bad = |what: &str| DigestError::Import(format!("bad {what} in row {:?}", rec.position()));
            Ok(LeadRecord {
                lead_id: f(0),
                use_case: UseCase {
                    newsworthiness_rating: f(1).parse().map_err(|_| bad("rating"))?,
                    name: f(2),
                    description: f(3),
                    ai_model_used: opt(4),
                    strengths: f(5),
                    challenges: f(6),
                    newsroom_impact: f(7),
                    link_to_demo: opt(8),
                    is_original: f(9).parse().map_err(|_| bad("is_original"))?,
                    comparison_to_other_use_cases: opt(10),
                },
                source_url: f(11),
                article_summary: f(12),
                run_id: f(13),
                first_seen: DateTime::parse_from_rfc3339(&f(14))
                    .map_err(|_| bad("first_seen"))?
                    .with_timezone(&Utc),
                duplicate_of: opt(15),
            })
        })
        .collect()
}

pub fn parse_jsonl(text: &str) -> Result<Vec<LeadRecord>, DigestError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| DigestError::Import(e.to_string())))
        .collect()
}
