//! Named structured-output contracts the gateway validates model output against.

use serde_json::Value;

use crate::scenario::{normalize_units, RawSpecDraft};

pub const SCENARIO_SPEC_V1: &str = "scenario-spec-v1";
pub const ROUTE_V1: &str = "route-v1";

/// Route labels accepted by [`ROUTE_V1`].
pub const ROUTE_LABELS: &[&str] = &[
    "GeneralQuery",
    "GenerateCpp",
    "GeneratePython",
    "Execute",
    "Interpret",
    "Debug",
];

pub fn is_registered(contract: &str) -> bool {
    matches!(contract, SCENARIO_SPEC_V1 | ROUTE_V1)
}

/// Pulls the JSON object out of a model reply, tolerating code fences and
/// surrounding prose.
pub fn extract_json_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    (end > start).then(|| &text[start..=end])
}

/// Checks `text` against `contract`; the error string is what gets fed back to
/// the model on the repair pass.
pub fn validate(contract: &str, text: &str) -> Result<Value, String> {
    let body = extract_json_object(text).ok_or("output must be a single JSON object")?;
    let value: Value = serde_json::from_str(body).map_err(|e| format!("invalid JSON: {e}"))?;
    if !value.is_object() {
        return Err("output must be a JSON object".into());
    }
    match contract {
        SCENARIO_SPEC_V1 => {
            let draft: RawSpecDraft = serde_json::from_value(value.clone())
                .map_err(|e| format!("does not match {SCENARIO_SPEC_V1}: {e}"))?;
            normalize_units(&draft).map_err(|e| format!("{SCENARIO_SPEC_V1}: {e}"))?;
            Ok(value)
        }
        ROUTE_V1 => {
            let route = value
                .get("route")
                .and_then(Value::as_str)
                .ok_or("missing string field \"route\"")?;
            if !ROUTE_LABELS.contains(&route) {
                return Err(format!(
                    "route {route:?} is not one of {}",
                    ROUTE_LABELS.join(", ")
                ));
            }
            if let Some(c) = value.get("confidence") {
                let c = c.as_f64().ok_or("\"confidence\" must be a number")?;
                if !(0.0..=1.0).contains(&c) {
                    return Err("\"confidence\" must lie in [0, 1]".into());
                }
            }
            Ok(value)
        }
        other => Err(format!("unknown contract {other:?}")),
    }
}
