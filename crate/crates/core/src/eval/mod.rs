//! Evaluation against annotated ground truth: use-case coverage, rating
//! agreement, inter-annotator agreement and threshold triage.
//!
//! Metrics that are undefined on the given data (0/0, zero variance) are
//! `None`, never a conventional zero.

mod io;
mod kappa;
mod matching;
mod metrics;
mod report;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use io::{
    agreement_pairs, evaluate_coverage, load_annotations, load_model_outputs, parse_overrides, ArticleOutput,
    CoverageEvaluation,
};
pub use kappa::{cohen_kappa, pairwise_kappa, PairwiseKappa};
pub use matching::{match_use_cases, match_use_cases_with, MatchPair, MatchResult, DEFAULT_TAU};
pub use metrics::{coverage_metrics, rating_agreement, round_half_up, triage_metrics, AgreementReport, CoverageReport};
pub use report::{agreement_table, coverage_table, format_fixed, TableFormat};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("override {0}")]
    Override(String),
    #[error("invalid annotations: {0}")]
    Annotations(String),
    #[error("cannot read {path}: {reason}")]
    Input { path: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthUseCase {
    pub gt_id: String,
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub article_id: String,
    /// Annotator id to rating on the 1-5 scale.
    pub human_ratings: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationSet {
    pub items: Vec<GroundTruthUseCase>,
    pub annotators: Vec<String>,
}

impl AnnotationSet {
    /// Validates ratings and derives the annotator list when none is given.
    pub fn new(items: Vec<GroundTruthUseCase>, annotators: Option<Vec<String>>) -> Result<Self, EvalError> {
        let annotators = annotators.unwrap_or_else(|| {
            let mut all: Vec<String> = items.iter().flat_map(|i| i.human_ratings.keys().cloned()).collect();
            all.sort();
            all.dedup();
            all
        });
        for item in &items {
            if item.human_ratings.is_empty() {
                return Err(EvalError::Annotations(format!("{} has no human ratings", item.gt_id)));
            }
            for (who, r) in &item.human_ratings {
                if !annotators.contains(who) {
                    return Err(EvalError::Annotations(format!(
                        "{}: unknown annotator {who:?}",
                        item.gt_id
                    )));
                }
                if !(1.0..=5.0).contains(r) {
                    return Err(EvalError::Annotations(format!(
                        "{}: rating {r} outside [1, 5]",
                        item.gt_id
                    )));
                }
            }
        }
        Ok(Self { items, annotators })
    }
}

/// Mean of all annotator ratings.
pub fn aggregate_human(ratings: &BTreeMap<String, f64>) -> Result<f64, EvalError> {
    if ratings.is_empty() {
        return Err(EvalError::Empty("no human ratings"));
    }
    Ok(ratings.values().sum::<f64>() / ratings.len() as f64)
}
