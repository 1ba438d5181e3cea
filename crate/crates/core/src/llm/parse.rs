use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{Article, LlmError, UseCase};

/// Scale a rating was requested on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RatingScale {
    Five,
    Ten,
}

impl RatingScale {
    pub fn max(self) -> f64 {
        match self {
            RatingScale::Five => 5.0,
            RatingScale::Ten => 10.0,
        }
    }
}

/// Map a rating onto `[1, 5]`. Ten-point values use the affine map taking 1
/// to 1 and 10 to 5; the result is clamped either way.
pub fn normalize_rating(value: f64, scale: RatingScale) -> Result<f64, LlmError> {
    if !value.is_finite() {
        return Err(LlmError::Schema {
            path: "rating".into(),
            reason: format!("{value} is not a finite number"),
        });
    }
    let mapped = match scale {
        RatingScale::Five => value,
        RatingScale::Ten => 1.0 + (value - 1.0) * (4.0 / 9.0),
    };
    Ok(mapped.clamp(1.0, 5.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParseOptions {
    pub usefulness_scale: RatingScale,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self {
            usefulness_scale: RatingScale::Five,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedArticle {
    pub article: Article,
    /// Some rating was changed by rescaling.
    pub adjusted: bool,
}

/// Validate model output against the article schema.
///
/// Unknown fields are ignored. Optional strings that are missing, null or
/// empty become `None`; missing descriptive strings become empty. Ratings
/// outside their requested scale are rejected; in-range ratings are
/// normalized onto `[1, 5]`.
pub fn parse_article_output(raw: &str, opts: ParseOptions) -> Result<ParsedArticle, LlmError> {
    let value: Value = serde_json::from_str(raw.trim()).map_err(|e| LlmError::NotJson(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| schema("$", "top level must be an object"))?;

    let mut adjusted = false;
    let summary = required_string(obj, "summary", "$")?;
    let usefulness_rating = rating(obj, "usefulness_rating", "$", opts.usefulness_scale, &mut adjusted)?;

    let use_cases = match obj.get("use_cases") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(items)) => items
            .iter()
            .enumerate()
            .map(|(i, item)| parse_use_case(item, &format!("$.use_cases[{i}]"), &mut adjusted))
            .collect::<Result<_, _>>()?,
        Some(_) => return Err(schema("$.use_cases", "must be an array")),
    };

    Ok(ParsedArticle {
        article: Article {
            summary,
            usefulness_rating,
            use_cases,
        },
        adjusted,
    })
}

fn parse_use_case(item: &Value, path: &str, adjusted: &mut bool) -> Result<UseCase, LlmError> {
    let obj = item
        .as_object()
        .ok_or_else(|| schema(path, "use case must be an object"))?;
    let name = required_string(obj, "name", path)?;
    if name.trim().is_empty() {
        return Err(schema(&format!("{path}.name"), "must not be empty"));
    }
    Ok(UseCase {
        name,
        description: lenient_string(obj, "description", path)?,
        ai_model_used: optional_string(obj, "ai_model_used", path)?,
        strengths: lenient_string(obj, "strengths", path)?,
        challenges: lenient_string(obj, "challenges", path)?,
        newsroom_impact: lenient_string(obj, "newsroom_impact", path)?,
        link_to_demo: optional_string(obj, "link_to_demo", path)?,
        is_original: match obj.get("is_original") {
            None | Some(Value::Null) => false,
            Some(Value::Bool(b)) => *b,
            Some(_) => return Err(schema(&format!("{path}.is_original"), "must be a boolean")),
        },
        comparison_to_other_use_cases: optional_string(obj, "comparison_to_other_use_cases", path)?,
        newsworthiness_rating: rating(obj, "newsworthiness_rating", path, RatingScale::Five, adjusted)?,
    })
}

fn schema(path: &str, reason: &str) -> LlmError {
    LlmError::Schema {
        path: path.into(),
        reason: reason.into(),
    }
}

fn required_string(obj: &Map<String, Value>, key: &str, path: &str) -> Result<String, LlmError> {
    match obj.get(key) {
        Some(Value::String(s)) => Ok(s.clone()),
        None | Some(Value::Null) => Err(schema(&format!("{path}.{key}"), "required field missing")),
        Some(_) => Err(schema(&format!("{path}.{key}"), "must be a string")),
    }
}

fn lenient_string(obj: &Map<String, Value>, key: &str, path: &str) -> Result<String, LlmError> {
    Ok(optional_string(obj, key, path)?.unwrap_or_default())
}

fn optional_string(obj: &Map<String, Value>, key: &str, path: &str) -> Result<Option<String>, LlmError> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) if s.is_empty() => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(_) => Err(schema(&format!("{path}.{key}"), "must be a string or null")),
    }
}

fn rating(
    obj: &Map<String, Value>,
    key: &str,
    path: &str,
    scale: RatingScale,
    adjusted: &mut bool,
) -> Result<f64, LlmError> {
    let at = format!("{path}.{key}");
    let value = match obj.get(key) {
        None | Some(Value::Null) => return Err(schema(&at, "required field missing")),
        Some(Value::Number(n)) => n.as_f64().ok_or_else(|| schema(&at, "not representable as f64"))?,
        Some(_) => return Err(schema(&at, "rating must be a number")),
    };
    if !(1.0..=scale.max()).contains(&value) {
        return Err(schema(&at, &format!("rating {value} outside 1..={}", scale.max())));
    }
    let normalized = normalize_rating(value, scale)?;
    if normalized != value {
        *adjusted = true;
    }
    Ok(normalized)
}
