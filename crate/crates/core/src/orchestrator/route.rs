//! Turn classification: a keyword table first, one model call otherwise.

use std::fmt;
use std::str::FromStr;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::llm::{contract, GatewayError, LlmGateway, LlmRequest};

pub const DEFAULT_ROUTE_TABLE: &str = include_str!("../../data/routes.tsv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Route {
    GeneralQuery,
    GenerateCpp,
    GeneratePython,
    Execute,
    Interpret,
    Debug,
}

impl Route {
    pub const ALL: [Route; 6] = [
        Route::GeneralQuery,
        Route::GenerateCpp,
        Route::GeneratePython,
        Route::Execute,
        Route::Interpret,
        Route::Debug,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Route::GeneralQuery => "GeneralQuery",
            Route::GenerateCpp => "GenerateCpp",
            Route::GeneratePython => "GeneratePython",
            Route::Execute => "Execute",
            Route::Interpret => "Interpret",
            Route::Debug => "Debug",
        }
    }
}

impl fmt::Display for Route {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Route {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Route::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown route {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecidedBy {
    Keyword,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteDecision {
    pub route: Route,
    pub confidence: f64,
    pub rationale: String,
    pub decided_by: DecidedBy,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("route table line {line}: {message}")]
pub struct RouteTableError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug)]
struct RouteRule {
    route: Route,
    groups: Vec<(Regex, Vec<String>)>,
}

/// Ordered keyword rules; see `data/routes.tsv` for the format.
#[derive(Debug)]
pub struct RouteTable {
    rules: Vec<RouteRule>,
}

fn phrase_regex(phrases: &[String]) -> Regex {
    let alts: Vec<String> = phrases.iter().map(|p| regex::escape(p)).collect();
    Regex::new(&format!(r"(?:^|[^\p{{L}}\p{{N}}])({})(?:$|[^\p{{L}}\p{{N}}])", alts.join("|"))).unwrap()
}

impl RouteTable {
    pub fn parse(text: &str) -> Result<Self, RouteTableError> {
        let mut rules = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let err = |message: String| RouteTableError { line: i + 1, message };
            let line = line.trim_end();
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let mut cols = line.split('\t');
            let route: Route = cols.next().unwrap_or_default().trim().parse().map_err(err)?;
            let mut groups = Vec::new();
            for col in cols {
                let phrases: Vec<String> = col
                    .split('|')
                    .map(|p| p.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase())
                    .filter(|p| !p.is_empty())
                    .collect();
                if phrases.is_empty() {
                    return Err(err("empty phrase column".into()));
                }
                groups.push((phrase_regex(&phrases), phrases));
            }
            if groups.is_empty() {
                return Err(err("rule has no phrase columns".into()));
            }
            rules.push(RouteRule { route, groups });
        }
        Ok(Self { rules })
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// The first rule that fires, with the phrase that satisfied each column.
    pub fn classify(&self, message: &str) -> Option<(usize, Route, Vec<String>)> {
        let text = message.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
        self.rules.iter().enumerate().find_map(|(i, rule)| {
            let hits: Option<Vec<String>> = rule
                .groups
                .iter()
                .map(|(re, _)| re.captures(&text).map(|c| c[1].to_string()))
                .collect();
            hits.map(|h| (i + 1, rule.route, h))
        })
    }
}

impl Default for RouteTable {
    fn default() -> Self {
        Self::parse(DEFAULT_ROUTE_TABLE).expect("built-in route table parses")
    }
}

const ROUTE_SYSTEM_PROMPT: &str = "\
You classify one message sent to an ns-3 simulation assistant. Reply with a
JSON object {\"route\": ..., \"confidence\": ..., \"rationale\": ...} where route
is one of GeneralQuery, GenerateCpp, GeneratePython, Execute, Interpret, Debug.";

/// The classification request used when no keyword rule fires.
pub fn route_request(message: &str, context: &str) -> LlmRequest {
    let user = if context.is_empty() {
        format!("Message:\n{message}")
    } else {
        format!("Conversation so far:\n{context}\n\nMessage:\n{message}")
    };
    LlmRequest::new(ROUTE_SYSTEM_PROMPT, user)
        .with_contract(contract::ROUTE_V1)
        .with_max_tokens(100)
}

/// Classifies `message`. Attached output files route to Interpret; then the
/// keyword table; then one gateway call.
pub fn route(
    message: &str,
    has_attachments: bool,
    table: &RouteTable,
    gateway: &LlmGateway,
    context: &str,
) -> Result<RouteDecision, GatewayError> {
    if has_attachments {
        return Ok(RouteDecision {
            route: Route::Interpret,
            confidence: 1.0,
            rationale: "an output file is attached".into(),
            decided_by: DecidedBy::Keyword,
        });
    }
    if let Some((rule, route, hits)) = table.classify(message) {
        return Ok(RouteDecision {
            route,
            confidence: 1.0,
            rationale: format!("keyword rule {rule} matched {}", hits.join(" + ")),
            decided_by: DecidedBy::Keyword,
        });
    }
    let resp = gateway.complete(&route_request(message, context))?;
    let value = contract::validate(contract::ROUTE_V1, &resp.text).map_err(|message| {
        GatewayError::ContractViolation {
            contract: contract::ROUTE_V1.into(),
            message,
        }
    })?;
    let route = value["route"].as_str().and_then(|s| s.parse().ok()).unwrap_or(Route::GeneralQuery);
    Ok(RouteDecision {
        route,
        confidence: value["confidence"].as_f64().unwrap_or(0.5),
        rationale: value["rationale"].as_str().unwrap_or("model classification").to_string(),
        decided_by: DecidedBy::Llm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{Cassette, RecordedResponse};

    const XR_PROMPT: &str = "I want to use XR traffic with the 5G-Lena NR helper, which uses a 3GPP UMI \
        channel model with a frequency of 28 GHz and a 200 MHz bandwidth and 1 component carrier \
        with 100 UE's. Also, I want to have a TCP application and a scanning beamforming method.";

    fn offline() -> LlmGateway {
        LlmGateway::replay(Cassette::new())
    }

    fn keyword(message: &str) -> RouteDecision {
        route(message, false, &RouteTable::default(), &offline(), "").unwrap()
    }

    #[test]
    fn demo_prompts_route_by_keyword() {
        let d = keyword("What is numerology in 5G NR?");
        assert_eq!(d.route, Route::GeneralQuery);
        assert_eq!(d.decided_by, DecidedBy::Keyword);
        assert_eq!(d.confidence, 1.0);
        assert_eq!(keyword(XR_PROMPT).route, Route::GenerateCpp);
        assert_eq!(keyword("run the cttc-nr-demo example").route, Route::Execute);
        assert_eq!(keyword("run it").route, Route::Execute);
        assert_eq!(keyword("Write a Python script with two WiFi stations").route, Route::GeneratePython);
        assert_eq!(keyword("interpret this").route, Route::Interpret);
        assert_eq!(keyword("please debug the last script").route, Route::Debug);
    }

    #[test]
    fn attachments_route_to_interpret() {
        let d = route("hello", true, &RouteTable::default(), &offline(), "").unwrap();
        assert_eq!(d.route, Route::Interpret);
    }

    #[test]
    fn phrases_match_whole_words_only() {
        // "runtime" and "prune" contain "run" but are not the word.
        assert!(RouteTable::default().classify("prune the runtime").is_none());
    }

    #[test]
    fn unmatched_messages_use_the_model() {
        let msg = "beams please";
        let mut c = Cassette::new();
        c.insert(
            &route_request(msg, ""),
            RecordedResponse::stop(r#"{"route":"GeneralQuery","confidence":0.7,"rationale":"question"}"#),
        );
        let d = route(msg, false, &RouteTable::default(), &LlmGateway::replay(c), "").unwrap();
        assert_eq!(d.decided_by, DecidedBy::Llm);
        assert_eq!(d.confidence, 0.7);
        assert!(matches!(
            route(msg, false, &RouteTable::default(), &offline(), ""),
            Err(GatewayError::CassetteMiss(_))
        ));
    }

    #[test]
    fn table_errors_carry_line_numbers() {
        let e = RouteTable::parse("# c\nDance\trun").unwrap_err();
        assert_eq!(e.line, 2);
        assert!(RouteTable::parse("Execute").is_err());
    }
}
