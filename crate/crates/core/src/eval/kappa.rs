use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

use serde::Serialize;

use super::metrics::round_half_up;
use super::{AnnotationSet, EvalError};

/// Unweighted Cohen's kappa between two label sequences.
///
/// Returns `Ok(None)` when chance agreement is certain but observed agreement
/// is not perfect. Counts are kept as integers so the result is exactly
/// symmetric and independent of how categories are labelled.
pub fn cohen_kappa<T: Eq + Hash>(a: &[T], b: &[T]) -> Result<Option<f64>, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(EvalError::Empty("kappa needs at least one item"));
    }
    let n = a.len() as i128;
    let mut agree: i128 = 0;
    let mut margins: HashMap<&T, (i128, i128)> = HashMap::new();
    for (x, y) in a.iter().zip(b) {
        if x == y {
            agree += 1;
        }
        margins.entry(x).or_default().0 += 1;
        margins.entry(y).or_default().1 += 1;
    }
    let chance: i128 = margins.values().map(|(ca, cb)| ca * cb).sum();
    // kappa = (p_o - p_e) / (1 - p_e) with p_o = agree/n, p_e = chance/n^2.
    let den = n * n - chance;
    if den == 0 {
        return Ok((agree == n).then_some(1.0));
    }
    Ok(Some((agree * n - chance) as f64 / den as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairwiseKappa {
    /// Unordered annotator pairs (lexicographically ordered) to kappa; `None`
    /// when the pair shares no items or kappa is undefined.
    pub pairs: BTreeMap<(String, String), Option<f64>>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

/// Kappa for every annotator pair over the items both rated, on ratings
/// rounded half up to integers.
pub fn pairwise_kappa(annotations: &AnnotationSet) -> Result<PairwiseKappa, EvalError> {
    let mut names = annotations.annotators.clone();
    names.sort();
    names.dedup();
    if names.len() < 2 {
        return Err(EvalError::Annotations("need at least two annotators".into()));
    }
    let mut pairs = BTreeMap::new();
    for (i, x) in names.iter().enumerate() {
        for y in &names[i + 1..] {
            let (mut la, mut lb) = (Vec::new(), Vec::new());
            for item in &annotations.items {
                if let (Some(rx), Some(ry)) = (item.human_ratings.get(x), item.human_ratings.get(y)) {
                    la.push(round_half_up(*rx) as i64);
                    lb.push(round_half_up(*ry) as i64);
                }
            }
            let k = if la.is_empty() { None } else { cohen_kappa(&la, &lb)? };
            pairs.insert((x.clone(), y.clone()), k);
        }
    }
    let defined = pairs.values().flatten().copied();
    let min = defined.clone().reduce(f64::min);
    let max = defined.reduce(f64::max);
    Ok(PairwiseKappa { pairs, min, max })
}
