use std::collections::{BTreeSet, HashSet};

use serde::Serialize;

use super::{EvalError, GroundTruthUseCase};
use crate::llm::UseCase;
use crate::par::{self, Execution};
use crate::text;

pub const DEFAULT_TAU: f64 = 0.4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchPair {
    pub extracted_index: usize,
    pub gt_id: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchResult {
    pub pairs: Vec<MatchPair>,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

pub fn match_use_cases(
    extracted: &[UseCase],
    truth: &[GroundTruthUseCase],
    tau: f64,
    overrides: &[(usize, String)],
) -> Result<MatchResult, EvalError> {
    match_use_cases_with(Execution::default(), extracted, truth, tau, overrides)
}

/// Greedy one-to-one matching on name+description token Jaccard.
///
/// Overrides are applied first and ignore `tau`. The remaining pairs are
/// taken highest similarity first (ties: lower extracted index, then smaller
/// `gt_id`) while similarity is at least `tau`.
pub fn match_use_cases_with(
    exec: Execution,
    extracted: &[UseCase],
    truth: &[GroundTruthUseCase],
    tau: f64,
    overrides: &[(usize, String)],
) -> Result<MatchResult, EvalError> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(EvalError::Domain(format!("tau {tau} outside [0, 1]")));
    }
    let ext_tokens: Vec<BTreeSet<String>> = par::map(exec, extracted, |u| {
        text::name_description_tokens(&u.name, &u.description)
    });
    let gt_tokens: Vec<BTreeSet<String>> =
        par::map(exec, truth, |g| text::name_description_tokens(&g.name, &g.description));
    let sim = |i: usize, j: usize| text::jaccard(&ext_tokens[i], &gt_tokens[j]);

    let mut used_ext = vec![false; extracted.len()];
    let mut used_gt = vec![false; truth.len()];
    let mut pairs = Vec::new();

    let mut seen_ids = HashSet::new();
    for g in truth {
        if !seen_ids.insert(g.gt_id.as_str()) {
            return Err(EvalError::Domain(format!("duplicate gt_id {:?}", g.gt_id)));
        }
    }

    for (i, gt_id) in overrides {
        let j = truth
            .iter()
            .position(|g| &g.gt_id == gt_id)
            .ok_or_else(|| EvalError::Override(format!("references unknown gt_id {gt_id:?}")))?;
        if *i >= extracted.len() {
            return Err(EvalError::Override(format!(
                "references extracted index {i}, but only {} use cases were extracted",
                extracted.len()
            )));
        }
        if used_ext[*i] || used_gt[j] {
            return Err(EvalError::Override(format!(
                "pair ({i}, {gt_id}) reuses an already matched item"
            )));
        }
        used_ext[*i] = true;
        used_gt[j] = true;
        pairs.push(MatchPair {
            extracted_index: *i,
            gt_id: gt_id.clone(),
            similarity: sim(*i, j),
        });
    }

    let rows = par::map_range(exec, extracted.len(), |i| {
        if used_ext[i] {
            return Vec::new();
        }
        (0..truth.len())
            .filter(|&j| !used_gt[j])
            .map(|j| (sim(i, j), i, j))
            .filter(|&(s, _, _)| s >= tau)
            .collect::<Vec<_>>()
    });
    let mut candidates: Vec<(f64, usize, usize)> = rows.into_iter().flatten().collect();
    candidates.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then(a.1.cmp(&b.1))
            .then_with(|| truth[a.2].gt_id.cmp(&truth[b.2].gt_id))
    });
    for (s, i, j) in candidates {
        if used_ext[i] || used_gt[j] {
            continue;
        }
        used_ext[i] = true;
        used_gt[j] = true;
        pairs.push(MatchPair {
            extracted_index: i,
            gt_id: truth[j].gt_id.clone(),
            similarity: s,
        });
    }

    let tp = pairs.len() as u64;
    Ok(MatchResult {
        tp,
        fp: extracted.len() as u64 - tp,
        fn_: truth.len() as u64 - tp,
        pairs,
    })
}
