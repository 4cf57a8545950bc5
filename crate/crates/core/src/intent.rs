//! Prompt → scenario extraction.
//!
//! A schema-constrained model call proposes field values; a pure pattern pass
//! over the same prompt runs alongside as fallback and cross-check. Precedence
//! is model > rule > default, and fields on which the two paths disagree are
//! flagged rather than silently resolved.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::llm::{contract, GatewayError, LlmGateway, LlmRequest};
use crate::retrieval::{augment_prompt, ContextChunk};
use crate::scenario::{
    self, normalize_units, validate, Beamforming, ChannelModel, HelperStack, Magnitude,
    NormalizeError, RawSpecDraft, ScenarioSpec, TrafficProfile, Transport, ValidationReport,
};
use crate::units;

pub const DEFAULT_KEYWORD_TABLE: &str = include_str!("../data/keywords.tsv");

const EXTRACTION_SYSTEM_PROMPT: &str = "\
You extract ns-3 scenario parameters from a user's request.
Reply with one JSON object and nothing else. Include only the fields the user states:
  frequency (string with unit, e.g. \"28 GHz\"), bandwidth (string with unit),
  sim_duration (string with unit, e.g. \"10 s\"), cc_count, numerology, gnb_count,
  ue_count (integers), channel_model (UMi | UMa | RMa | InH-Office),
  traffic_profile (XR | CBR | BULK | ECHO), transport (TCP | UDP),
  beamforming (SCANNING | IDEAL | NONE), helper_stack (NR_5GLENA | WIFI | P2P_CSMA).";

/// Word budget for the extraction prompt including retrieved context.
pub const EXTRACTION_CONTEXT_BUDGET: usize = 1500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Llm,
    Rule,
    Default,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sourced<T> {
    pub value: T,
    pub provenance: Provenance,
}

impl<T> Sourced<T> {
    fn rule(value: T) -> Self {
        Self {
            value,
            provenance: Provenance::Rule,
        }
    }

    fn llm(value: T) -> Self {
        Self {
            value,
            provenance: Provenance::Llm,
        }
    }
}

/// The model and the rule pass disagreed on a field; the model value was kept.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Disagreement {
    pub field: String,
    pub llm: String,
    pub rule: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PartialSpec {
    pub frequency: Option<Sourced<Magnitude>>,
    pub bandwidth: Option<Sourced<Magnitude>>,
    pub sim_duration: Option<Sourced<Magnitude>>,
    pub cc_count: Option<Sourced<i64>>,
    pub numerology: Option<Sourced<i64>>,
    pub gnb_count: Option<Sourced<i64>>,
    pub ue_count: Option<Sourced<i64>>,
    pub channel_model: Option<Sourced<ChannelModel>>,
    pub traffic_profile: Option<Sourced<TrafficProfile>>,
    pub transport: Option<Sourced<Transport>>,
    pub beamforming: Option<Sourced<Beamforming>>,
    pub helper_stack: Option<Sourced<HelperStack>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub disagreements: Vec<Disagreement>,
}

macro_rules! for_each_field {
    ($m:ident) => {
        $m!(frequency, Magnitude, "frequency_hz");
        $m!(bandwidth, Magnitude, "bandwidth_hz");
        $m!(sim_duration, Magnitude, "sim_duration_s");
        $m!(cc_count, Count, "cc_count");
        $m!(numerology, Count, "numerology");
        $m!(gnb_count, Count, "gnb_count");
        $m!(ue_count, Count, "ue_count");
        $m!(channel_model, Enum, "channel_model");
        $m!(traffic_profile, Enum, "traffic_profile");
        $m!(transport, Enum, "transport");
        $m!(beamforming, Enum, "beamforming");
        $m!(helper_stack, Enum, "helper_stack");
    };
}

impl PartialSpec {
    pub fn populated(&self) -> usize {
        let mut n = 0;
        macro_rules! count {
            ($f:ident, $k:ident, $name:literal) => {
                n += usize::from(self.$f.is_some());
            };
        }
        for_each_field!(count);
        n
    }

    pub fn is_empty(&self) -> bool {
        self.populated() == 0
    }

    /// The populated values as a draft (provenance dropped).
    pub fn to_draft(&self) -> RawSpecDraft {
        let mut d = RawSpecDraft::default();
        macro_rules! copy {
            ($f:ident, Magnitude, $name:literal) => {
                d.$f = self.$f.as_ref().map(|s| s.value.clone());
            };
            ($f:ident, Count, $name:literal) => {
                d.$f = self.$f.as_ref().map(|s| s.value);
            };
            ($f:ident, Enum, $name:literal) => {
                d.$f = self.$f.as_ref().map(|s| s.value.as_str().to_string());
            };
        }
        for_each_field!(copy);
        d
    }

    /// Builds a model-sourced partial from a contract-checked draft.
    fn from_llm_draft(d: &RawSpecDraft) -> Result<Self, String> {
        fn en<T: std::str::FromStr<Err = scenario::UnknownVariant>>(
            v: &Option<String>,
        ) -> Result<Option<Sourced<T>>, String> {
            v.as_deref()
                .map(|s| s.parse().map(Sourced::llm).map_err(|e: scenario::UnknownVariant| e.to_string()))
                .transpose()
        }
        Ok(PartialSpec {
            frequency: d.frequency.clone().map(Sourced::llm),
            bandwidth: d.bandwidth.clone().map(Sourced::llm),
            sim_duration: d.sim_duration.clone().map(Sourced::llm),
            cc_count: d.cc_count.map(Sourced::llm),
            numerology: d.numerology.map(Sourced::llm),
            gnb_count: d.gnb_count.map(Sourced::llm),
            ue_count: d.ue_count.map(Sourced::llm),
            channel_model: en(&d.channel_model)?,
            traffic_profile: en(&d.traffic_profile)?,
            transport: en(&d.transport)?,
            beamforming: en(&d.beamforming)?,
            helper_stack: en(&d.helper_stack)?,
            disagreements: Vec::new(),
        })
    }

    /// Field-wise union with `primary` taking precedence; disagreements on
    /// fields both populate are recorded.
    pub fn combine(primary: PartialSpec, secondary: PartialSpec) -> PartialSpec {
        let mut out = PartialSpec::default();
        let mut flags = primary.disagreements.clone();
        flags.extend(secondary.disagreements.iter().cloned());
        macro_rules! pick {
            ($f:ident, $k:ident, $name:literal) => {
                if let (Some(a), Some(b)) = (&primary.$f, &secondary.$f) {
                    if !same_value!($k, $name, &a.value, &b.value) {
                        flags.push(Disagreement {
                            field: $name.to_string(),
                            llm: a.value.to_string(),
                            rule: b.value.to_string(),
                        });
                    }
                }
                out.$f = primary.$f.clone().or_else(|| secondary.$f.clone());
            };
        }
        macro_rules! same_value {
            (Magnitude, "sim_duration_s", $a:expr, $b:expr) => {
                magnitudes_equal($a, $b, true)
            };
            (Magnitude, $name:literal, $a:expr, $b:expr) => {
                magnitudes_equal($a, $b, false)
            };
            ($k:ident, $name:literal, $a:expr, $b:expr) => {
                $a == $b
            };
        }
        for_each_field!(pick);
        out.disagreements = flags;
        out
    }
}

fn magnitudes_equal(a: &Magnitude, b: &Magnitude, time: bool) -> bool {
    let to_base = |m: &Magnitude| -> Option<f64> {
        match m {
            Magnitude::Number(v) => Some(*v),
            Magnitude::Text(t) => {
                let q = units::split_quantity(t)?;
                let exp = if time {
                    units::time_exponent(q.suffix)?
                } else {
                    units::frequency_exponent(q.suffix)?
                };
                q.value_scaled(exp)
            }
        }
    };
    match (to_base(a), to_base(b)) {
        (Some(x), Some(y)) => x == y,
        _ => a == b,
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KeywordTableError {
    #[error("keyword table line {line}: {message}")]
    Line { line: usize, message: String },
}

/// Surface form → canonical enum assignment, loaded from a two-column table.
#[derive(Debug, Clone)]
pub struct KeywordTable {
    // (surface tokens, field, canonical value), longest surface forms first
    entries: Vec<(Vec<String>, String, String)>,
}

impl Default for KeywordTable {
    fn default() -> Self {
        Self::parse(DEFAULT_KEYWORD_TABLE).expect("bundled keyword table parses")
    }
}

const ENUM_FIELDS: &[&str] = &[
    "channel_model",
    "traffic_profile",
    "transport",
    "beamforming",
    "helper_stack",
];

impl KeywordTable {
    pub fn parse(text: &str) -> Result<Self, KeywordTableError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| KeywordTableError::Line {
                line: i + 1,
                message,
            };
            let (surface, target) = line
                .split_once('\t')
                .ok_or_else(|| err("expected two tab-separated columns".into()))?;
            let (field, value) = target
                .split_once(':')
                .ok_or_else(|| err(format!("target {target:?} is not field:value")))?;
            let check = match field {
                "channel_model" => value.parse::<ChannelModel>().map(|_| ()),
                "traffic_profile" => value.parse::<TrafficProfile>().map(|_| ()),
                "transport" => value.parse::<Transport>().map(|_| ()),
                "beamforming" => value.parse::<Beamforming>().map(|_| ()),
                "helper_stack" => value.parse::<HelperStack>().map(|_| ()),
                _ => return Err(err(format!("unknown field {field:?}"))),
            };
            check.map_err(|e| err(e.to_string()))?;
            let tokens = keyword_tokens(surface);
            if tokens.is_empty() {
                return Err(err("empty surface form".into()));
            }
            entries.push((tokens, field.to_string(), value.to_string()));
        }
        entries.sort_by(|a, b| b.0.len().cmp(&a.0.len()));
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// First match per field, scanning the prompt left to right and preferring
    /// the longest surface form at each position.
    pub fn matches(&self, text: &str) -> BTreeMap<String, String> {
        let tokens = keyword_tokens(text);
        let mut found = BTreeMap::new();
        let mut i = 0;
        while i < tokens.len() {
            let hit = self
                .entries
                .iter()
                .find(|(surface, _, _)| tokens[i..].starts_with(surface));
            match hit {
                Some((surface, field, value)) => {
                    found.entry(field.clone()).or_insert_with(|| value.clone());
                    i += surface.len();
                }
                None => i += 1,
            }
        }
        debug_assert!(found.keys().all(|k| ENUM_FIELDS.contains(&k.as_str())));
        found
    }
}

fn keyword_tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !(c.is_alphanumeric() || matches!(c, '-' | '.' | '\'')))
        .map(|t| t.trim_matches(|c| matches!(c, '.' | '\'' | '-')))
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

static HZ_QUANTITY: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(\d+(?:\.\d+)?(?:e[+-]?\d+)?)\s*(thz|ghz|mhz|khz|hz)\b").unwrap()
});

static COUNT: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?ix)\b(\d+|one|two|three|four|five|six|seven|eight|nine|ten)\s+
        (ue'?s|ues'|ue|user\s+equipments?|users?|gnbs?|gnb'?s|base\s+stations?|component\s+carriers?|carriers?|ccs?)\b",
    )
    .unwrap()
});

static NUMEROLOGY: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)(?:numerology|\bmu|μ)\s*(?:of|=|:|is)?\s*(\d+)\b").unwrap()
});

static DURATION: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)\b(?:for|duration(?:\s+of)?|simulation\s+time(?:\s+of)?|simulate\s+for|lasting)\s+(\d+(?:\.\d+)?(?:e[+-]?\d+)?)\s*(s|sec|secs|seconds|ms|milliseconds)\b",
    )
    .unwrap()
});

fn cardinal(word: &str) -> Option<i64> {
    let n = match word.to_lowercase().as_str() {
        "one" => 1,
        "two" => 2,
        "three" => 3,
        "four" => 4,
        "five" => 5,
        "six" => 6,
        "seven" => 7,
        "eight" => 8,
        "nine" => 9,
        "ten" => 10,
        other => return other.parse().ok(),
    };
    Some(n)
}

fn canonical_hz_unit(unit: &str) -> &'static str {
    match unit.to_ascii_lowercase().as_str() {
        "thz" => "THz",
        "ghz" => "GHz",
        "mhz" => "MHz",
        "khz" => "kHz",
        _ => "Hz",
    }
}

#[derive(Clone, Copy, PartialEq)]
enum HzRole {
    Frequency,
    Bandwidth,
}

/// Decides whether a Hz quantity at `[start, end)` names the carrier or the
/// bandwidth: an adjacent "bandwidth" wins, then the nearest cue word before
/// it (not crossing another quantity), then magnitude.
fn classify_hz(text: &str, start: usize, end: usize, value_hz: f64, prev_end: usize) -> HzRole {
    let lower = text.to_lowercase();
    let after: Vec<&str> = lower[end..]
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .take(2)
        .collect();
    let is_bw = |w: &str| matches!(w, "bandwidth" | "bw" | "wide");
    if after.first().is_some_and(|w| is_bw(w))
        || (after.first() == Some(&"of") && after.get(1).is_some_and(|w| is_bw(w)))
    {
        return HzRole::Bandwidth;
    }
    let before: Vec<&str> = lower[prev_end..start]
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .collect();
    for w in before.iter().rev().take(5) {
        if is_bw(w) {
            return HzRole::Bandwidth;
        }
        if matches!(*w, "frequency" | "freq" | "carrier" | "centered" | "center" | "at" | "band") {
            return HzRole::Frequency;
        }
    }
    if value_hz >= 0.5e9 {
        HzRole::Frequency
    } else {
        HzRole::Bandwidth
    }
}

/// Pure pattern pass over `prompt`; every populated field has provenance `rule`.
pub fn rule_fallback_extract(prompt: &str, keywords: &KeywordTable) -> PartialSpec {
    let mut p = PartialSpec::default();

    let mut prev_end = 0;
    for caps in HZ_QUANTITY.captures_iter(prompt) {
        let whole = caps.get(0).unwrap();
        let number = &caps[1];
        let unit = canonical_hz_unit(&caps[2]);
        let value_hz = units::split_quantity(number)
            .and_then(|q| q.value_scaled(units::frequency_exponent(unit).unwrap_or(0)))
            .unwrap_or(0.0);
        let magnitude = Magnitude::Text(format!("{number} {unit}"));
        match classify_hz(prompt, whole.start(), whole.end(), value_hz, prev_end) {
            HzRole::Frequency if p.frequency.is_none() => p.frequency = Some(Sourced::rule(magnitude)),
            HzRole::Bandwidth if p.bandwidth.is_none() => p.bandwidth = Some(Sourced::rule(magnitude)),
            _ => {}
        }
        prev_end = whole.end();
    }

    for caps in COUNT.captures_iter(prompt) {
        let Some(n) = cardinal(&caps[1]) else { continue };
        let noun = caps[2].to_lowercase();
        let slot = if noun.starts_with("ue") || noun.starts_with("user") {
            &mut p.ue_count
        } else if noun.starts_with("gnb") || noun.starts_with("base") {
            &mut p.gnb_count
        } else {
            &mut p.cc_count
        };
        if slot.is_none() {
            *slot = Some(Sourced::rule(n));
        }
    }

    if let Some(caps) = NUMEROLOGY.captures(prompt) {
        if let Ok(n) = caps[1].parse() {
            p.numerology = Some(Sourced::rule(n));
        }
    }

    if let Some(caps) = DURATION.captures(prompt) {
        let unit = match caps[2].to_lowercase().as_str() {
            "ms" | "milliseconds" => "ms",
            _ => "s",
        };
        p.sim_duration = Some(Sourced::rule(Magnitude::Text(format!("{} {unit}", &caps[1]))));
    }

    for (field, value) in keywords.matches(prompt) {
        // Table values were checked at load time.
        match field.as_str() {
            "channel_model" => p.channel_model = value.parse().ok().map(Sourced::rule),
            "traffic_profile" => p.traffic_profile = value.parse().ok().map(Sourced::rule),
            "transport" => p.transport = value.parse().ok().map(Sourced::rule),
            "beamforming" => p.beamforming = value.parse().ok().map(Sourced::rule),
            "helper_stack" => p.helper_stack = value.parse().ok().map(Sourced::rule),
            _ => {}
        }
    }
    p
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IntentError {
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("no scenario parameters found in the prompt")]
    ExtractionEmpty,
    #[error("scenario is invalid: {0}")]
    SpecInvalid(ValidationReport),
    #[error(transparent)]
    Normalize(#[from] NormalizeError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

impl IntentError {
    /// Stable machine-readable name of the variant.
    pub fn code(&self) -> &'static str {
        match self {
            IntentError::EmptyPrompt => "EmptyPrompt",
            IntentError::ExtractionEmpty => "ExtractionEmpty",
            IntentError::SpecInvalid(_) => "SpecInvalid",
            IntentError::Normalize(_) => "NormalizeError",
            IntentError::Gateway(g) => g.code(),
        }
    }
}

/// The extraction request sent to the model for `prompt` and retrieved context.
pub fn extraction_request(prompt: &str, context: &[ContextChunk]) -> LlmRequest {
    let user = augment_prompt(prompt, context, EXTRACTION_CONTEXT_BUDGET);
    LlmRequest::new(EXTRACTION_SYSTEM_PROMPT, user)
        .with_contract(contract::SCENARIO_SPEC_V1)
        .with_max_tokens(400)
}

/// One schema-constrained model call plus the rule pass.
///
/// Output the model cannot produce in the contract's shape falls back to the
/// rule pass; transport and cassette errors propagate.
pub fn extract_intent(
    gateway: &LlmGateway,
    prompt: &str,
    context: &[ContextChunk],
    keywords: &KeywordTable,
) -> Result<PartialSpec, IntentError> {
    if prompt.trim().is_empty() {
        return Err(IntentError::EmptyPrompt);
    }
    let rule = rule_fallback_extract(prompt, keywords);
    let llm = match gateway.complete(&extraction_request(prompt, context)) {
        Ok(resp) => parse_llm_output(&resp.text),
        Err(GatewayError::ContractViolation { .. }) => None,
        Err(e) => return Err(e.into()),
    };
    let combined = match llm {
        Some(llm) => PartialSpec::combine(llm, rule),
        None => {
            tracing::debug!("model extraction unusable; using the rule pass");
            rule
        }
    };
    if combined.is_empty() {
        return Err(IntentError::ExtractionEmpty);
    }
    Ok(combined)
}

fn parse_llm_output(text: &str) -> Option<PartialSpec> {
    let value = contract::validate(contract::SCENARIO_SPEC_V1, text).ok()?;
    let draft: RawSpecDraft = serde_json::from_value(value).ok()?;
    PartialSpec::from_llm_draft(&draft).ok()
}

/// A merged spec together with where each field came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedSpec {
    pub spec: ScenarioSpec,
    pub provenance: BTreeMap<String, Provenance>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub disagreements: Vec<Disagreement>,
}

/// Fills unspecified fields from the defaults table, normalizes units and
/// validates.
pub fn merge_and_default(p: &PartialSpec) -> Result<ExtractedSpec, IntentError> {
    let spec = normalize_units(&p.to_draft())?;
    let report = validate(&spec);
    if !report.ok {
        return Err(IntentError::SpecInvalid(report));
    }
    let mut provenance = BTreeMap::new();
    macro_rules! prov {
        ($f:ident, $k:ident, $name:literal) => {
            provenance.insert(
                $name.to_string(),
                p.$f.as_ref().map_or(Provenance::Default, |s| s.provenance),
            );
        };
    }
    for_each_field!(prov);
    Ok(ExtractedSpec {
        spec,
        provenance,
        disagreements: p.disagreements.clone(),
    })
}

fn magnitude_words(value: f64, base_unit: &str) -> String {
    let lit = units::engineering_literal(value);
    let (mant, exp) = lit.split_once('e').unwrap_or((&lit, "0"));
    let prefix = match exp {
        "12" => "T",
        "9" => "G",
        "6" => "M",
        "3" => "k",
        "0" => "",
        _ => return format!("{lit} {base_unit}"),
    };
    format!("{mant} {prefix}{base_unit}")
}

/// A plain-language restatement of `spec` that the rule pass reads back to
/// the same spec.
pub fn restate(spec: &ScenarioSpec) -> String {
    let helper = match spec.helper_stack {
        HelperStack::Nr5gLena => "the 5G-LENA NR helper",
        HelperStack::Wifi => "the WiFi helper",
        HelperStack::P2pCsma => "point-to-point links",
    };
    let beam = match spec.beamforming {
        Beamforming::Scanning => "scanning beamforming",
        Beamforming::Ideal => "ideal beamforming",
        Beamforming::None => "no beamforming",
    };
    format!(
        "Use {helper} with the {} channel model at {} with {} bandwidth, {} component carriers, \
         numerology {}, {} gNBs and {} UEs, {} traffic over {}, {beam}, for {} s.",
        spec.channel_model,
        magnitude_words(spec.frequency_hz, "Hz"),
        magnitude_words(spec.bandwidth_hz, "Hz"),
        spec.cc_count,
        spec.numerology,
        spec.gnb_count,
        spec.ue_count,
        spec.traffic_profile,
        spec.transport,
        units::plain_decimal(spec.sim_duration_s),
    )
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Llm => "llm",
            Provenance::Rule => "rule",
            Provenance::Default => "default",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{Cassette, RecordedResponse};

    const XR_PROMPT: &str = "I want to use XR traffic with the 5G-Lena NR helper, which uses a 3GPP UMI \
        channel model with a frequency of 28 GHz and a 200 MHz bandwidth and 1 component carrier \
        with 100 UE's. Also, I want to have a TCP application and a scanning beamforming method.";

    fn kw() -> KeywordTable {
        KeywordTable::default()
    }

    #[test]
    fn rule_pass_on_xr_umi_prompt() {
        let p = rule_fallback_extract(XR_PROMPT, &kw());
        assert_eq!(p.frequency.as_ref().unwrap().value, Magnitude::from("28 GHz"));
        assert_eq!(p.bandwidth.as_ref().unwrap().value, Magnitude::from("200 MHz"));
        assert_eq!(p.cc_count.as_ref().unwrap().value, 1);
        assert_eq!(p.ue_count.as_ref().unwrap().value, 100);
        assert_eq!(p.channel_model.as_ref().unwrap().value, ChannelModel::UMi);
        assert_eq!(p.traffic_profile.as_ref().unwrap().value, TrafficProfile::Xr);
        assert_eq!(p.transport.as_ref().unwrap().value, Transport::Tcp);
        assert_eq!(p.beamforming.as_ref().unwrap().value, Beamforming::Scanning);
        assert_eq!(p.helper_stack.as_ref().unwrap().value, HelperStack::Nr5gLena);
        assert!(p.gnb_count.is_none());
        assert_eq!(p.populated(), 9);
        assert_eq!(p.frequency.unwrap().provenance, Provenance::Rule);
    }

    #[test]
    fn rule_pass_fragments() {
        let p = rule_fallback_extract("28 GHz", &kw());
        assert_eq!(p.frequency.unwrap().value, Magnitude::from("28 GHz"));
        assert!(rule_fallback_extract("", &kw()).is_empty());
        let p = rule_fallback_extract("100 UE's and 1 component carrier", &kw());
        assert_eq!(p.populated(), 2);
        assert_eq!(p.ue_count.unwrap().value, 100);
        assert_eq!(p.cc_count.unwrap().value, 1);
    }

    #[test]
    fn rule_pass_counts_transport_and_frequency() {
        // By hand: "2 gNBs" -> gnb 2, "10 UEs" -> ue 10, "UDP", "3.5 GHz" (cue "at")
        let p = rule_fallback_extract("simulate 2 gNBs and 10 UEs over UDP at 3.5 GHz", &kw());
        assert_eq!(p.populated(), 4);
        assert_eq!(p.gnb_count.unwrap().value, 2);
        assert_eq!(p.ue_count.unwrap().value, 10);
        assert_eq!(p.transport.unwrap().value, Transport::Udp);
        assert_eq!(p.frequency.unwrap().value, Magnitude::from("3.5 GHz"));
    }

    #[test]
    fn hello_is_empty() {
        assert!(rule_fallback_extract("hello", &kw()).is_empty());
        let gw = LlmGateway::replay(Cassette::new());
        let mut cassette = Cassette::new();
        cassette.insert(&extraction_request("hello", &[]), RecordedResponse::stop("{}"));
        let gw2 = LlmGateway::replay(cassette);
        assert!(matches!(
            extract_intent(&gw2, "hello", &[], &kw()),
            Err(IntentError::ExtractionEmpty)
        ));
        assert!(matches!(
            extract_intent(&gw, "hello", &[], &kw()),
            Err(IntentError::Gateway(GatewayError::CassetteMiss(_)))
        ));
    }

    #[test]
    fn unparseable_model_output_falls_back_to_rules() {
        let prompt = "simulate 2 gNBs and 10 UEs over UDP at 3.5 GHz";
        let req = extraction_request(prompt, &[]);
        let mut cassette = Cassette::new();
        cassette.insert(&req, RecordedResponse::stop("sure! here you go"));
        let repair = crate::llm::repair_request(&req, "sure! here you go", "output must be a single JSON object");
        cassette.insert(&repair, RecordedResponse::stop("still not json"));
        let gw = LlmGateway::replay(cassette);
        let p = extract_intent(&gw, prompt, &[], &kw()).unwrap();
        assert_eq!(p.gnb_count.unwrap().provenance, Provenance::Rule);
    }

    #[test]
    fn llm_wins_and_disagreement_is_flagged() {
        let llm = PartialSpec {
            ue_count: Some(Sourced::llm(100)),
            ..Default::default()
        };
        let rule = PartialSpec {
            ue_count: Some(Sourced::rule(10)),
            gnb_count: Some(Sourced::rule(3)),
            ..Default::default()
        };
        let merged = merge_and_default(&PartialSpec::combine(llm, rule)).unwrap();
        assert_eq!(merged.spec.ue_count, 100);
        assert_eq!(merged.spec.gnb_count, 3);
        assert_eq!(merged.provenance["ue_count"], Provenance::Llm);
        assert_eq!(merged.provenance["gnb_count"], Provenance::Rule);
        assert_eq!(merged.provenance["numerology"], Provenance::Default);
        assert_eq!(merged.disagreements.len(), 1);
        assert_eq!(merged.disagreements[0].field, "ue_count");
    }

    #[test]
    fn equal_magnitudes_in_different_units_agree() {
        let llm = PartialSpec {
            frequency: Some(Sourced::llm(Magnitude::from("28000 MHz"))),
            ..Default::default()
        };
        let rule = PartialSpec {
            frequency: Some(Sourced::rule(Magnitude::from("28 GHz"))),
            ..Default::default()
        };
        assert!(PartialSpec::combine(llm, rule).disagreements.is_empty());
    }

    #[test]
    fn empty_partial_gives_defaults() {
        let merged = merge_and_default(&PartialSpec::default()).unwrap();
        assert!(validate(&merged.spec).ok);
        assert!(merged.provenance.values().all(|p| *p == Provenance::Default));
        assert_eq!(merged.spec.gnb_count, 1);
        assert_eq!(merged.spec.sim_duration_s, 10.0);
    }

    #[test]
    fn invalid_merge_reports() {
        let p = PartialSpec {
            frequency: Some(Sourced::rule(Magnitude::from("200 GHz"))),
            ..Default::default()
        };
        assert!(matches!(merge_and_default(&p), Err(IntentError::SpecInvalid(r)) if r.violations.len() == 1));
    }

    #[test]
    fn keyword_table_rejects_bad_rows() {
        assert!(KeywordTable::parse("umi\tchannel_model:Moon").is_err());
        assert!(KeywordTable::parse("umi channel_model:UMi").is_err());
        assert!(KeywordTable::parse("umi\tcolor:red").is_err());
        assert!(!KeywordTable::default().is_empty());
    }

    #[test]
    fn xr_umi_under_replay() {
        let req = extraction_request(XR_PROMPT, &[]);
        let mut cassette = Cassette::new();
        cassette.insert(
            &req,
            RecordedResponse::stop(
                r#"{"frequency":"28 GHz","bandwidth":"200 MHz","cc_count":1,"ue_count":100,
                "channel_model":"UMi","traffic_profile":"XR","transport":"TCP",
                "beamforming":"SCANNING","helper_stack":"NR_5GLENA"}"#,
            ),
        );
        let gw = LlmGateway::replay(cassette);
        let p = extract_intent(&gw, XR_PROMPT, &[], &kw()).unwrap();
        assert!(p.disagreements.is_empty(), "{:?}", p.disagreements);
        let m = merge_and_default(&p).unwrap();
        assert_eq!(m.spec.frequency_hz, 2.8e10);
        assert_eq!(m.spec.gnb_count, 1);
        assert_eq!(m.provenance["frequency_hz"], Provenance::Llm);
        assert_eq!(m.provenance["gnb_count"], Provenance::Default);
    }
}
