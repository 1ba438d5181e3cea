//! JSON Schema for the article report, in the strict form accepted by
//! OpenAI-compatible `response_format` blocks (every key required, optional
//! values nullable, no extra properties).

use serde::Serialize;
use serde_json::{json, Value};

pub const SCHEMA_NAME: &str = "article_report";

pub fn article_schema() -> Value {
    let nullable = json!({ "type": ["string", "null"] });
    let use_case = json!({
        "type": "object",
        "additionalProperties": false,
        "properties": {
            "name": { "type": "string" },
            "description": { "type": "string" },
            "ai_model_used": nullable,
            "strengths": { "type": "string" },
            "challenges": { "type": "string" },
            "newsroom_impact": { "type": "string" },
            "link_to_demo": nullable,
            "is_original": { "type": "boolean" },
            "comparison_to_other_use_cases": nullable,
            "newsworthiness_rating": { "type": "number" }
        },
        "required": [
            "name", "description", "ai_model_used", "strengths", "challenges",
            "newsroom_impact", "link_to_demo", "is_original",
            "comparison_to_other_use_cases", "newsworthiness_rating"
        ]
    });
    json!({
        "type": "object",
        "additionalProperties": false,
        "properties": {
            "summary": { "type": "string" },
            "usefulness_rating": { "type": "number" },
            "use_cases": { "type": "array", "items": use_case }
        },
        "required": ["summary", "usefulness_rating", "use_cases"]
    })
}

/// The `response_format` request field.
#[derive(Debug, Clone, Serialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ResponseFormat {
    JsonObject,
    JsonSchema { json_schema: JsonSchemaSpec },
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct JsonSchemaSpec {
    pub name: String,
    pub strict: bool,
    pub schema: Value,
}

impl ResponseFormat {
    pub fn article() -> Self {
        ResponseFormat::JsonSchema {
            json_schema: JsonSchemaSpec {
                name: SCHEMA_NAME.into(),
                strict: true,
                schema: article_schema(),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strict_schema_requires_every_property() {
        let s = article_schema();
        let uc = &s["properties"]["use_cases"]["items"];
        let props = uc["properties"].as_object().unwrap();
        let required: Vec<&str> = uc["required"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_str().unwrap())
            .collect();
        assert_eq!(props.len(), required.len());
        assert!(props.keys().all(|k| required.contains(&k.as_str())));
    }

    #[test]
    fn response_format_wire_shape() {
        let v = serde_json::to_value(ResponseFormat::article()).unwrap();
        assert_eq!(v["type"], "json_schema");
        assert_eq!(v["json_schema"]["name"], SCHEMA_NAME);
        assert_eq!(v["json_schema"]["strict"], true);
        assert_eq!(
            serde_json::to_value(ResponseFormat::JsonObject).unwrap(),
            json!({"type": "json_object"})
        );
    }
}
