use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub fp_pct: Option<f64>,
    pub fn_pct: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Precision, recall, F1 and the FP/FN shares from confusion counts.
pub fn coverage_metrics(tp: i64, fp: i64, fn_: i64) -> Result<CoverageReport, EvalError> {
    if tp < 0 || fp < 0 || fn_ < 0 {
        return Err(EvalError::Domain(format!("negative count in ({tp}, {fp}, {fn_})")));
    }
    let (tp, fp, fn_) = (tp as u64, fp as u64, fn_ as u64);
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        // Both defined and both zero: no true positives at all.
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    };
    Ok(CoverageReport {
        tp,
        fp,
        fn_,
        fp_pct: ratio(fp, tp + fp).map(|x| 100.0 * x),
        fn_pct: ratio(fn_, tp + fn_).map(|x| 100.0 * x),
        precision,
        recall,
        f1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub n: usize,
    pub mae: f64,
    pub rmse: f64,
    /// `None` when the human ratings have zero variance. May be negative.
    pub r_squared: Option<f64>,
    /// `None` when either vector has zero variance or n < 2.
    pub pearson_r: Option<f64>,
    pub exact_accuracy: f64,
    pub within_one_accuracy: f64,
}

/// Round half up to an integer.
pub fn round_half_up(x: f64) -> f64 {
    (x + 0.5).floor()
}

/// Agreement of model ratings with (mean) human ratings.
pub fn rating_agreement(pred: &[f64], human: &[f64]) -> Result<AgreementReport, EvalError> {
    if pred.len() != human.len() {
        return Err(EvalError::LengthMismatch {
            left: pred.len(),
            right: human.len(),
        });
    }
    if pred.is_empty() {
        return Err(EvalError::Empty("no rating pairs"));
    }
    if pred.iter().chain(human).any(|x| !x.is_finite()) {
        return Err(EvalError::Domain("ratings must be finite".into()));
    }
    let n = pred.len();
    let nf = n as f64;

    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    let mut exact = 0usize;
    let mut within = 0usize;
    for (&p, &h) in pred.iter().zip(human) {
        let d = p - h;
        abs_sum += d.abs();
        sq_sum += d * d;
        if round_half_up(p) == round_half_up(h) {
            exact += 1;
        }
        if d.abs() <= 1.0 {
            within += 1;
        }
    }
    let mae = abs_sum / nf;
    // mean |d| <= sqrt(mean d^2) always holds; guard the last-ulp rounding
    // case where every |d| is equal.
    let rmse = (sq_sum / nf).sqrt().max(mae);

    let mean_p = pred.iter().sum::<f64>() / nf;
    let mean_h = human.iter().sum::<f64>() / nf;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&p, &h) in pred.iter().zip(human) {
        let (dx, dy) = (p - mean_p, h - mean_h);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    let r_squared = (syy > 0.0).then(|| 1.0 - sq_sum / syy);
    let pearson_r = (n >= 2 && sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0));

    Ok(AgreementReport {
        n,
        mae,
        rmse,
        r_squared,
        pearson_r,
        exact_accuracy: exact as f64 / nf,
        within_one_accuracy: within as f64 / nf,
    })
}

/// Binarize both vectors at `>= threshold` and score predicted positives
/// against human positives.
pub fn triage_metrics(pred: &[f64], human: &[f64], threshold: f64) -> Result<CoverageReport, EvalError> {
    if pred.len() != human.len() {
        return Err(EvalError::LengthMismatch {
            left: pred.len(),
            right: human.len(),
        });
    }
    let (mut tp, mut fp, mut fn_) = (0i64, 0i64, 0i64);
    for (&p, &h) in pred.iter().zip(human) {
        match (p >= threshold, h >= threshold) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    coverage_metrics(tp, fp, fn_)
}
