//! File inputs for evaluation runs.
//!
//! * ground truth: JSONL, one [`GroundTruthUseCase`] per line;
//! * model output: JSONL, one article report per line with an extra
//!   `article_id` field;
//! * overrides: text lines `extracted_index,gt_id`, where the index counts
//!   use cases across the whole model-output file in order. Blank lines and
//!   `#` comments are ignored.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde_json::Value;

use super::{
    aggregate_human, coverage_metrics, match_use_cases_with, CoverageReport, EvalError, GroundTruthUseCase, MatchPair,
    MatchResult,
};
use crate::llm::{parse_article_output, Article, ParseOptions};
use crate::par::Execution;

#[derive(Debug, Clone, PartialEq)]
pub struct ArticleOutput {
    pub article_id: String,
    pub article: Article,
}

fn read(path: &Path) -> Result<String, EvalError> {
    std::fs::read_to_string(path).map_err(|e| EvalError::Input {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

fn line_err(path: &Path, line: usize, reason: impl ToString) -> EvalError {
    EvalError::Input {
        path: format!("{}:{line}", path.display()),
        reason: reason.to_string(),
    }
}

pub fn load_annotations(path: &Path) -> Result<Vec<GroundTruthUseCase>, EvalError> {
    let text = read(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| line_err(path, i + 1, e)))
        .collect()
}

pub fn load_model_outputs(path: &Path) -> Result<Vec<ArticleOutput>, EvalError> {
    let text = read(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let mut v: Value = serde_json::from_str(l).map_err(|e| line_err(path, i + 1, e))?;
            let article_id = match v.as_object_mut().and_then(|o| o.remove("article_id")) {
                Some(Value::String(s)) => s,
                _ => return Err(line_err(path, i + 1, "missing string field article_id")),
            };
            let article = parse_article_output(&v.to_string(), ParseOptions::default())
                .map_err(|e| line_err(path, i + 1, e))?
                .article;
            Ok(ArticleOutput { article_id, article })
        })
        .collect()
}

pub fn parse_overrides(text: &str) -> Result<Vec<(usize, String)>, EvalError> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .map(|(i, l)| {
            let (idx, gt) = l
                .split_once(',')
                .ok_or_else(|| EvalError::Override(format!("line {}: expected extracted_index,gt_id", i + 1)))?;
            let idx = idx
                .trim()
                .parse()
                .map_err(|_| EvalError::Override(format!("line {}: bad index {idx:?}", i + 1)))?;
            Ok((idx, gt.trim().to_string()))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageEvaluation {
    /// Pairs use file-wide extracted indices.
    pub matches: MatchResult,
    pub report: CoverageReport,
}

/// Match use cases article by article and pool the counts.
pub fn evaluate_coverage(
    exec: Execution,
    truth: &[GroundTruthUseCase],
    outputs: &[ArticleOutput],
    tau: f64,
    overrides: &[(usize, String)],
) -> Result<CoverageEvaluation, EvalError> {
    // File-wide index -> (article position, local index).
    let mut global = Vec::new();
    for (a, out) in outputs.iter().enumerate() {
        for k in 0..out.article.use_cases.len() {
            global.push((a, k));
        }
    }
    let mut articles: BTreeSet<&str> = truth.iter().map(|g| g.article_id.as_str()).collect();
    articles.extend(outputs.iter().map(|o| o.article_id.as_str()));

    let mut by_article: BTreeMap<&str, Vec<(usize, String)>> = BTreeMap::new();
    for (idx, gt_id) in overrides {
        let &(a, _) = global.get(*idx).ok_or_else(|| {
            EvalError::Override(format!("references extracted index {idx}, only {} exist", global.len()))
        })?;
        let article_id = outputs[a].article_id.as_str();
        let gt = truth
            .iter()
            .find(|g| &g.gt_id == gt_id)
            .ok_or_else(|| EvalError::Override(format!("references unknown gt_id {gt_id:?}")))?;
        if gt.article_id != article_id {
            return Err(EvalError::Override(format!(
                "pairs extracted {idx} (article {article_id}) with {gt_id} (article {})",
                gt.article_id
            )));
        }
        by_article.entry(article_id).or_default().push((*idx, gt_id.clone()));
    }

    let mut pairs = Vec::new();
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for article_id in articles {
        let gts: Vec<GroundTruthUseCase> = truth.iter().filter(|g| g.article_id == article_id).cloned().collect();
        // Offsets of this article's use cases in the file-wide numbering.
        let mut extracted = Vec::new();
        let mut offsets = Vec::new();
        for (a, out) in outputs.iter().enumerate().filter(|(_, o)| o.article_id == article_id) {
            let base = global.iter().position(|&(x, _)| x == a).unwrap_or(0);
            for (k, u) in out.article.use_cases.iter().enumerate() {
                extracted.push(u.clone());
                offsets.push(base + k);
            }
        }
        // File-wide override indices become positions within this article.
        let local_overrides: Vec<(usize, String)> = by_article
            .get(article_id)
            .into_iter()
            .flatten()
            .map(|(idx, g)| {
                (
                    offsets.iter().position(|o| o == idx).expect("index belongs to article"),
                    g.clone(),
                )
            })
            .collect();
        let m = match_use_cases_with(exec, &extracted, &gts, tau, &local_overrides)?;
        tp += m.tp;
        fp += m.fp;
        fn_ += m.fn_;
        pairs.extend(m.pairs.into_iter().map(|p| MatchPair {
            extracted_index: offsets[p.extracted_index],
            ..p
        }));
    }
    pairs.sort_by_key(|p| p.extracted_index);
    let report = coverage_metrics(tp as i64, fp as i64, fn_ as i64)?;
    Ok(CoverageEvaluation {
        matches: MatchResult { pairs, tp, fp, fn_ },
        report,
    })
}

/// Model rating and human mean for every matched pair, in extracted order.
pub fn agreement_pairs(
    truth: &[GroundTruthUseCase],
    outputs: &[ArticleOutput],
    matches: &MatchResult,
) -> Result<(Vec<f64>, Vec<f64>), EvalError> {
    let flat: Vec<f64> = outputs
        .iter()
        .flat_map(|o| o.article.use_cases.iter().map(|u| u.newsworthiness_rating))
        .collect();
    let mut pred = Vec::with_capacity(matches.pairs.len());
    let mut human = Vec::with_capacity(matches.pairs.len());
    for p in &matches.pairs {
        let gt = truth
            .iter()
            .find(|g| g.gt_id == p.gt_id)
            .ok_or_else(|| EvalError::Domain(format!("unknown gt_id {:?}", p.gt_id)))?;
        let rating = *flat
            .get(p.extracted_index)
            .ok_or_else(|| EvalError::Domain(format!("extracted index {} out of range", p.extracted_index)))?;
        pred.push(rating);
        human.push(aggregate_human(&gt.human_ratings)?);
    }
    Ok((pred, human))
}
