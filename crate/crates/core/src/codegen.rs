//! ns-3 script generation: deterministic scaffold, bounded per-section model
//! refinement, and a text-only structural linter.
//!
//! Scaffolds are expanded from data templates with `{{name}}` placeholders.
//! Every section sits between line-comment markers
//! (`// @genonet:begin <id>` ... `// @genonet:end <id>`, or `#` for Python),
//! and refinement may only rewrite the body between a pair of markers.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::digest::Digest;
use crate::llm::{GatewayError, LlmGateway, LlmRequest};
use crate::scenario::{
    spec_hash, validate, Beamforming, ChannelModel, HelperStack, ScenarioSpec, TrafficProfile,
    Transport, ValidationReport,
};
use crate::units;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dialect {
    Cpp,
    Python,
}

impl Dialect {
    pub fn as_str(&self) -> &'static str {
        match self {
            Dialect::Cpp => "cpp",
            Dialect::Python => "python",
        }
    }

    pub fn comment(&self) -> &'static str {
        match self {
            Dialect::Cpp => "//",
            Dialect::Python => "#",
        }
    }

    pub fn extension(&self) -> &'static str {
        match self {
            Dialect::Cpp => "cc",
            Dialect::Python => "py",
        }
    }
}

impl fmt::Display for Dialect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Dialect {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cpp" | "c++" | "cc" => Ok(Dialect::Cpp),
            "python" | "py" => Ok(Dialect::Python),
            other => Err(format!("unknown dialect {other:?} (expected cpp or python)")),
        }
    }
}

/// Section ids in the order they appear in every scaffold.
pub const SECTION_ORDER: &[&str] = &[
    "includes",
    "namespace",
    "log",
    "helper",
    "nodes",
    "channel",
    "traffic",
    "attachment",
    "run",
];

/// Sections whose bodies the model may rewrite.
pub const REFINABLE_SECTIONS: &[&str] = &["channel", "traffic", "attachment"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SectionProvenance {
    Scaffold,
    Llm,
}

/// Byte range of a section body (the lines strictly between its markers).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionSpan {
    pub start: usize,
    pub end: usize,
    pub provenance: SectionProvenance,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MarkerError {
    #[error("line {line}: section {id:?} opened inside section {open:?}")]
    Nested { line: usize, id: String, open: String },
    #[error("line {line}: end marker for {id:?} without a matching begin")]
    Unmatched { line: usize, id: String },
    #[error("section {0:?} is never closed")]
    Unterminated(String),
    #[error("section {0:?} appears twice")]
    Duplicate(String),
}

/// Locates section bodies by their markers, in source order.
pub fn parse_sections(source: &str, dialect: Dialect) -> Result<Vec<(String, usize, usize)>, MarkerError> {
    let begin = format!("{} @genonet:begin ", dialect.comment());
    let end = format!("{} @genonet:end ", dialect.comment());
    let mut out: Vec<(String, usize, usize)> = Vec::new();
    let mut open: Option<(String, usize)> = None;
    let mut offset = 0;
    for (i, line) in source.split_inclusive('\n').enumerate() {
        let trimmed = line.trim();
        if let Some(id) = trimmed.strip_prefix(begin.as_str()) {
            let id = id.trim().to_string();
            if let Some((open_id, _)) = &open {
                return Err(MarkerError::Nested {
                    line: i + 1,
                    id,
                    open: open_id.clone(),
                });
            }
            if out.iter().any(|(seen, _, _)| *seen == id) {
                return Err(MarkerError::Duplicate(id));
            }
            open = Some((id, offset + line.len()));
        } else if let Some(id) = trimmed.strip_prefix(end.as_str()) {
            let id = id.trim();
            match open.take() {
                Some((open_id, start)) if open_id == id => out.push((open_id, start, offset)),
                _ => {
                    return Err(MarkerError::Unmatched {
                        line: i + 1,
                        id: id.to_string(),
                    })
                }
            }
        }
        offset += line.len();
    }
    if let Some((id, _)) = open {
        return Err(MarkerError::Unterminated(id));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedArtifact {
    pub dialect: Dialect,
    pub source: String,
    pub sections: BTreeMap<String, SectionSpan>,
    pub spec: ScenarioSpec,
    pub spec_digest: Digest,
    pub generated_at_ms: u64,
}

impl GeneratedArtifact {
    fn assemble(
        dialect: Dialect,
        source: String,
        spec: ScenarioSpec,
        provenance: &BTreeMap<String, SectionProvenance>,
        generated_at_ms: u64,
    ) -> Result<Self, MarkerError> {
        let sections = parse_sections(&source, dialect)?
            .into_iter()
            .map(|(id, start, end)| {
                let p = provenance.get(&id).copied().unwrap_or(SectionProvenance::Scaffold);
                (id, SectionSpan { start, end, provenance: p })
            })
            .collect();
        Ok(Self {
            dialect,
            source,
            sections,
            spec_digest: spec_hash(&spec),
            spec,
            generated_at_ms,
        })
    }

    pub fn section_body(&self, id: &str) -> Option<&str> {
        self.sections.get(id).map(|s| &self.source[s.start..s.end])
    }

    /// Section ids in source order.
    pub fn section_ids(&self) -> Vec<String> {
        let mut ids: Vec<_> = self.sections.iter().collect();
        ids.sort_by_key(|(_, s)| s.start);
        ids.into_iter().map(|(id, _)| id.clone()).collect()
    }

    /// Digest of the source text alone.
    pub fn source_digest(&self) -> Digest {
        Digest::of_bytes(self.source.as_bytes())
    }

    /// Suggested file name for staging, e.g. `genonet_1a2b3c4d.cc`.
    pub fn file_name(&self) -> String {
        format!("genonet_{}.{}", self.spec_digest.short(8), self.dialect.extension())
    }

    /// The artifact with one section body replaced; the section is tagged
    /// with `provenance`.
    pub fn with_section_body(
        &self,
        id: &str,
        body: &str,
        provenance: SectionProvenance,
    ) -> Result<Self, MarkerError> {
        let span = self
            .sections
            .get(id)
            .ok_or_else(|| MarkerError::Unterminated(id.to_string()))?;
        let mut body = body.to_string();
        if !body.is_empty() && !body.ends_with('\n') {
            body.push('\n');
        }
        let mut source = String::with_capacity(self.source.len() + body.len());
        source.push_str(&self.source[..span.start]);
        source.push_str(&body);
        source.push_str(&self.source[span.end..]);
        let mut prov = self.provenance_map();
        prov.insert(id.to_string(), provenance);
        Self::assemble(self.dialect, source, self.spec.clone(), &prov, self.generated_at_ms)
    }

    /// The artifact with its whole source replaced (e.g. by a repair); sections
    /// whose bodies changed are tagged `llm`.
    pub fn with_source(&self, source: String) -> Result<Self, MarkerError> {
        let mut prov = self.provenance_map();
        for (id, start, end) in parse_sections(&source, self.dialect)? {
            if self.section_body(&id) != Some(&source[start..end]) {
                prov.insert(id, SectionProvenance::Llm);
            }
        }
        Self::assemble(self.dialect, source, self.spec.clone(), &prov, self.generated_at_ms)
    }

    fn provenance_map(&self) -> BTreeMap<String, SectionProvenance> {
        self.sections
            .iter()
            .map(|(id, s)| (id.clone(), s.provenance))
            .collect()
    }
}

/// The (helper stack, traffic profile, transport) triple that selects a template.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Combination {
    pub helper_stack: HelperStack,
    pub traffic_profile: TrafficProfile,
    pub transport: Transport,
}

impl Combination {
    pub fn of(spec: &ScenarioSpec) -> Self {
        Self {
            helper_stack: spec.helper_stack,
            traffic_profile: spec.traffic_profile,
            transport: spec.transport,
        }
    }

    fn distance(&self, other: &Combination) -> u32 {
        4 * u32::from(self.helper_stack != other.helper_stack)
            + 2 * u32::from(self.traffic_profile != other.traffic_profile)
            + u32::from(self.transport != other.transport)
    }
}

impl fmt::Display for Combination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {})",
            self.helper_stack, self.traffic_profile, self.transport
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TrafficBlock {
    BulkTcp,
    CbrUdp,
    EchoUdp,
}

impl TrafficBlock {
    fn template(self, dialect: Dialect) -> &'static str {
        match (dialect, self) {
            (Dialect::Cpp, TrafficBlock::BulkTcp) => include_str!("../templates/cpp/traffic/bulk_tcp.tmpl"),
            (Dialect::Cpp, TrafficBlock::CbrUdp) => include_str!("../templates/cpp/traffic/cbr_udp.tmpl"),
            (Dialect::Cpp, TrafficBlock::EchoUdp) => include_str!("../templates/cpp/traffic/echo_udp.tmpl"),
            (Dialect::Python, TrafficBlock::BulkTcp) => include_str!("../templates/python/traffic/bulk_tcp.tmpl"),
            (Dialect::Python, TrafficBlock::CbrUdp) => include_str!("../templates/python/traffic/cbr_udp.tmpl"),
            (Dialect::Python, TrafficBlock::EchoUdp) => include_str!("../templates/python/traffic/echo_udp.tmpl"),
        }
    }

    /// Identifiers the traffic section must contain.
    fn signature(self) -> &'static [&'static str] {
        match self {
            TrafficBlock::BulkTcp => &["PacketSinkHelper", "BulkSendHelper", "ns3::TcpSocketFactory"],
            TrafficBlock::CbrUdp => &["UdpServerHelper", "UdpClientHelper"],
            TrafficBlock::EchoUdp => &["UdpEchoServerHelper", "UdpEchoClientHelper"],
        }
    }

    fn log_component(self) -> &'static str {
        match self {
            TrafficBlock::BulkTcp => "PacketSink",
            TrafficBlock::CbrUdp => "UdpServer",
            TrafficBlock::EchoUdp => "UdpEchoClientApplication",
        }
    }
}

const fn combo(h: HelperStack, t: TrafficProfile, x: Transport) -> Combination {
    Combination {
        helper_stack: h,
        traffic_profile: t,
        transport: x,
    }
}

/// Template coverage, in tie-break order for nearest-combination lookup.
const COVERAGE: &[(Combination, TrafficBlock)] = &[
    (combo(HelperStack::Nr5gLena, TrafficProfile::Xr, Transport::Tcp), TrafficBlock::BulkTcp),
    (combo(HelperStack::Nr5gLena, TrafficProfile::Cbr, Transport::Udp), TrafficBlock::CbrUdp),
    (combo(HelperStack::Nr5gLena, TrafficProfile::Bulk, Transport::Tcp), TrafficBlock::BulkTcp),
    (combo(HelperStack::Nr5gLena, TrafficProfile::Echo, Transport::Udp), TrafficBlock::EchoUdp),
    (combo(HelperStack::P2pCsma, TrafficProfile::Echo, Transport::Udp), TrafficBlock::EchoUdp),
    (combo(HelperStack::Wifi, TrafficProfile::Cbr, Transport::Udp), TrafficBlock::CbrUdp),
];

pub fn supported_combinations() -> Vec<Combination> {
    COVERAGE.iter().map(|(c, _)| *c).collect()
}

fn traffic_block(c: &Combination) -> Option<TrafficBlock> {
    COVERAGE.iter().find(|(k, _)| k == c).map(|(_, b)| *b)
}

/// The supported combination closest to `c` (helper stack weighs most, then
/// traffic profile, then transport).
pub fn nearest_supported(c: &Combination) -> Combination {
    COVERAGE
        .iter()
        .min_by_key(|(k, _)| c.distance(k))
        .map(|(k, _)| *k)
        .expect("coverage table is non-empty")
}

fn stack_template(stack: HelperStack, dialect: Dialect) -> &'static str {
    match (dialect, stack) {
        (Dialect::Cpp, HelperStack::Nr5gLena) => include_str!("../templates/cpp/nr.cc.tmpl"),
        (Dialect::Cpp, HelperStack::Wifi) => include_str!("../templates/cpp/wifi.cc.tmpl"),
        (Dialect::Cpp, HelperStack::P2pCsma) => include_str!("../templates/cpp/p2p.cc.tmpl"),
        (Dialect::Python, HelperStack::Nr5gLena) => include_str!("../templates/python/nr.py.tmpl"),
        (Dialect::Python, HelperStack::Wifi) => include_str!("../templates/python/wifi.py.tmpl"),
        (Dialect::Python, HelperStack::P2pCsma) => include_str!("../templates/python/p2p.py.tmpl"),
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CodegenError {
    #[error("scenario is invalid: {0}")]
    InvalidSpec(ValidationReport),
    #[error("no template for {requested}; nearest supported combination is {nearest}")]
    UnsupportedCombination {
        requested: Combination,
        nearest: Combination,
    },
    #[error("template placeholder {0:?} has no value")]
    Placeholder(String),
    #[error("section markers: {0}")]
    Markers(#[from] MarkerError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

impl CodegenError {
    /// Stable machine-readable name of the variant.
    pub fn code(&self) -> &'static str {
        match self {
            CodegenError::InvalidSpec(_) => "InvalidSpec",
            CodegenError::UnsupportedCombination { .. } => "UnsupportedCombination",
            CodegenError::Placeholder(_) => "Placeholder",
            CodegenError::Markers(_) => "MarkerError",
            CodegenError::Gateway(g) => g.code(),
        }
    }
}

static PLACEHOLDER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\{\{([a-z_]+)\}\}").unwrap());

fn render(template: &str, values: &BTreeMap<&str, String>) -> Result<String, CodegenError> {
    let mut missing = None;
    let out = PLACEHOLDER.replace_all(template, |caps: &regex::Captures<'_>| {
        match values.get(&caps[1]) {
            Some(v) => v.clone(),
            None => {
                missing.get_or_insert_with(|| caps[1].to_string());
                String::new()
            }
        }
    });
    match missing {
        Some(name) => Err(CodegenError::Placeholder(name)),
        None => Ok(out.into_owned()),
    }
}

fn beamforming_type(b: Beamforming) -> &'static str {
    match b {
        Beamforming::Scanning => "CellScanBeamforming",
        Beamforming::Ideal => "DirectPathBeamforming",
        Beamforming::None => "QuasiOmniDirectPathBeamforming",
    }
}

fn nr_channel_scenario(c: ChannelModel) -> &'static str {
    match c {
        ChannelModel::InHOffice => "InH-OfficeMixed",
        other => other.as_str(),
    }
}

fn loss_model(c: ChannelModel) -> &'static str {
    match c {
        ChannelModel::UMi => "UmiStreetCanyon",
        ChannelModel::UMa => "Uma",
        ChannelModel::RMa => "Rma",
        ChannelModel::InHOffice => "IndoorOffice",
    }
}

fn wifi_band(frequency_hz: f64) -> &'static str {
    if frequency_hz < 3e9 {
        "2_4GHZ"
    } else if frequency_hz < 5.925e9 {
        "5GHZ"
    } else {
        "6GHZ"
    }
}

/// Deterministic template expansion; every section has provenance `scaffold`.
pub fn scaffold(
    spec: &ScenarioSpec,
    dialect: Dialect,
    clock: &dyn Clock,
) -> Result<GeneratedArtifact, CodegenError> {
    let report = validate(spec);
    if !report.ok {
        return Err(CodegenError::InvalidSpec(report));
    }
    let requested = Combination::of(spec);
    let block = traffic_block(&requested).ok_or_else(|| CodegenError::UnsupportedCombination {
        requested,
        nearest: nearest_supported(&requested),
    })?;
    let digest = spec_hash(spec);
    let mut values: BTreeMap<&str, String> = BTreeMap::new();
    values.insert("sim_duration", units::plain_decimal(spec.sim_duration_s));
    let traffic = render(block.template(dialect), &values)?;
    values.insert("traffic", traffic.trim_end_matches('\n').to_string());
    values.insert("spec_digest", digest.short(12));
    values.insert("gnb_count", spec.gnb_count.to_string());
    values.insert("ue_count", spec.ue_count.to_string());
    values.insert("cc_count", spec.cc_count.to_string());
    values.insert("numerology", spec.numerology.to_string());
    values.insert("frequency", units::engineering_literal(spec.frequency_hz));
    values.insert("bandwidth", units::engineering_literal(spec.bandwidth_hz));
    values.insert("channel_model", spec.channel_model.as_str().to_string());
    values.insert("nr_channel_scenario", nr_channel_scenario(spec.channel_model).to_string());
    values.insert("loss_model", loss_model(spec.channel_model).to_string());
    values.insert("wifi_band", wifi_band(spec.frequency_hz).to_string());
    values.insert("beamforming_type", beamforming_type(spec.beamforming).to_string());
    values.insert("log_app", block.log_component().to_string());
    let source = render(stack_template(spec.helper_stack, dialect), &values)?;
    Ok(GeneratedArtifact::assemble(
        dialect,
        source,
        spec.clone(),
        &BTreeMap::new(),
        clock.now_ms(),
    )?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationMode {
    #[default]
    ScaffoldOnly,
    LlmRefine,
}

/// A refinement that was discarded; the scaffold body was kept.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinementRejected {
    pub section: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub artifact: GeneratedArtifact,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rejected: Vec<RefinementRejected>,
}

const REFINE_SYSTEM_PROMPT: &str = "\
You elaborate one section of an ns-3 simulation script.
Return only the replacement body for the named section: no markers, no prose,
no code fences. Keep every variable the rest of the script relies on, and keep
the parameter values exactly as given.";

/// The model request used to refine one section body.
pub fn refinement_request(artifact: &GeneratedArtifact, section: &str) -> LlmRequest {
    let body = artifact.section_body(section).unwrap_or_default();
    let user = format!(
        "Scenario: {}\nDialect: {}\nSection: {section}\nCurrent body:\n{body}",
        artifact.spec.canonical_json(),
        artifact.dialect,
    );
    LlmRequest::new(REFINE_SYSTEM_PROMPT, user).with_max_tokens(1500)
}

/// Strips a surrounding Markdown code fence, if any.
pub fn strip_code_fence(text: &str) -> &str {
    let t = text.trim_matches('\n');
    let Some(rest) = t.trim_start().strip_prefix("```") else {
        return text;
    };
    let rest = rest.split_once('\n').map_or("", |(_, r)| r);
    rest.trim_end().strip_suffix("```").unwrap_or(rest)
}

/// Scaffold, then (in `LlmRefine` mode) one model call per refinable section.
///
/// A refined section is kept only if markers stay intact and the whole
/// artifact still passes [`lint_structure`].
pub fn generate_script(
    spec: &ScenarioSpec,
    dialect: Dialect,
    mode: GenerationMode,
    gateway: &LlmGateway,
    clock: &dyn Clock,
) -> Result<Generation, CodegenError> {
    let mut artifact = scaffold(spec, dialect, clock)?;
    let mut rejected = Vec::new();
    if mode == GenerationMode::LlmRefine {
        let skeleton = artifact.section_ids();
        for section in REFINABLE_SECTIONS {
            let resp = gateway.complete(&refinement_request(&artifact, section))?;
            let body = strip_code_fence(&resp.text);
            let reject = |reason: String| RefinementRejected {
                section: section.to_string(),
                reason,
            };
            if body.contains("@genonet:") {
                rejected.push(reject("body contains section markers".into()));
                continue;
            }
            let candidate = match artifact.with_section_body(section, body, SectionProvenance::Llm) {
                Ok(c) => c,
                Err(e) => {
                    rejected.push(reject(e.to_string()));
                    continue;
                }
            };
            if candidate.section_ids() != skeleton {
                rejected.push(reject("section skeleton changed".into()));
                continue;
            }
            let report = lint_structure(&candidate);
            if !report.ok {
                rejected.push(reject(format!("lint failed: {}", report.failed().join(", "))));
                continue;
            }
            artifact = candidate;
        }
    }
    Ok(Generation { artifact, rejected })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckId {
    Includes,
    Namespace,
    LogComponent,
    Helper,
    NodeCounts,
    ChannelAttributes,
    TrafficBlock,
    Attachment,
    RunTeardown,
}

impl CheckId {
    pub const ALL: [CheckId; 9] = [
        CheckId::Includes,
        CheckId::Namespace,
        CheckId::LogComponent,
        CheckId::Helper,
        CheckId::NodeCounts,
        CheckId::ChannelAttributes,
        CheckId::TrafficBlock,
        CheckId::Attachment,
        CheckId::RunTeardown,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            CheckId::Includes => "includes",
            CheckId::Namespace => "namespace",
            CheckId::LogComponent => "log_component",
            CheckId::Helper => "helper",
            CheckId::NodeCounts => "node_counts",
            CheckId::ChannelAttributes => "channel_attributes",
            CheckId::TrafficBlock => "traffic_block",
            CheckId::Attachment => "attachment",
            CheckId::RunTeardown => "run_teardown",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckResult {
    pub check: CheckId,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructureReport {
    pub checks: Vec<CheckResult>,
    pub ok: bool,
}

impl StructureReport {
    pub fn passed(&self, check: CheckId) -> bool {
        self.checks.iter().any(|c| c.check == check && c.passed)
    }

    pub fn failed(&self) -> Vec<&'static str> {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.check.as_str())
            .collect()
    }
}

impl fmt::Display for StructureReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let mark = if c.passed { "ok  " } else { "FAIL" };
            writeln!(f, "{mark} {:<18} {}", c.check.as_str(), c.detail)?;
        }
        Ok(())
    }
}

/// Outcome of locating one check's anchor in the text.
enum Probe {
    /// Found; byte offset used for the ordering check.
    At(usize),
    /// Not applicable to this dialect; passes without an anchor.
    NotApplicable,
    Missing(String),
}

fn find(source: &str, pattern: &str) -> Option<usize> {
    Regex::new(pattern).ok()?.find(source).map(|m| m.start())
}

fn find_literal(source: &str, needle: &str) -> Option<usize> {
    source.find(needle)
}

fn node_vars(stack: HelperStack, dialect: Dialect) -> (&'static str, &'static str) {
    match (stack, dialect) {
        (HelperStack::Nr5gLena, Dialect::Cpp) => ("gnbNodes", "ueNodes"),
        (HelperStack::Nr5gLena, Dialect::Python) => ("gnb_nodes", "ue_nodes"),
        (HelperStack::Wifi, Dialect::Cpp) => ("apNodes", "staNodes"),
        (HelperStack::Wifi, Dialect::Python) => ("ap_nodes", "sta_nodes"),
        (HelperStack::P2pCsma, Dialect::Cpp) => ("serverNodes", "clientNodes"),
        (HelperStack::P2pCsma, Dialect::Python) => ("server_nodes", "client_nodes"),
    }
}

fn probe(check: CheckId, a: &GeneratedArtifact) -> Probe {
    let src = a.source.as_str();
    let spec = &a.spec;
    let cpp = a.dialect == Dialect::Cpp;
    let missing = |what: &str| Probe::Missing(format!("missing {what}"));
    match check {
        CheckId::Includes => {
            if cpp {
                let module = match spec.helper_stack {
                    HelperStack::Nr5gLena => "nr-module.h",
                    HelperStack::Wifi => "wifi-module.h",
                    HelperStack::P2pCsma => "point-to-point-module.h",
                };
                if find_literal(src, "#include \"ns3/core-module.h\"").is_none() {
                    return missing("ns3/core-module.h include");
                }
                if find_literal(src, &format!("#include \"ns3/{module}\"")).is_none() {
                    return missing(&format!("ns3/{module} include"));
                }
                find(src, r"(?m)^\s*#include\b").map_or_else(|| missing("include block"), Probe::At)
            } else {
                find(src, r"(?m)^\s*from ns import ns\b").map_or_else(|| missing("`from ns import ns`"), Probe::At)
            }
        }
        CheckId::Namespace => {
            if !cpp {
                return Probe::NotApplicable;
            }
            find(src, r"(?m)^\s*using namespace ns3\s*;").map_or_else(|| missing("`using namespace ns3;`"), Probe::At)
        }
        CheckId::LogComponent => {
            let pat = if cpp {
                r#"NS_LOG_COMPONENT_DEFINE\s*\(\s*"[^"]+"\s*\)"#
            } else {
                r#"LogComponentEnable\s*\(\s*"[^"]+""#
            };
            find(src, pat).map_or_else(|| missing("log component declaration"), Probe::At)
        }
        CheckId::Helper => {
            let pat = match (spec.helper_stack, cpp) {
                (HelperStack::Nr5gLena, true) => r"CreateObject<NrHelper>\s*\(\s*\)",
                (HelperStack::Nr5gLena, false) => r#"CreateObject\(\s*"NrHelper"\s*\)"#,
                (HelperStack::Wifi, true) => r"\bWifiHelper\s+\w+\s*;",
                (HelperStack::Wifi, false) => r"\bns\.WifiHelper\s*\(\s*\)",
                (HelperStack::P2pCsma, true) => r"\bPointToPointHelper\s+\w+\s*;",
                (HelperStack::P2pCsma, false) => r"\bns\.PointToPointHelper\s*\(\s*\)",
            };
            find(src, pat).map_or_else(
                || missing(&format!("{} helper instantiation", spec.helper_stack)),
                Probe::At,
            )
        }
        CheckId::NodeCounts => {
            let (gv, uv) = node_vars(spec.helper_stack, a.dialect);
            let g = find(src, &format!(r"\b{gv}\.Create\(\s*{}\s*\)", spec.gnb_count));
            let u = find(src, &format!(r"\b{uv}\.Create\(\s*{}\s*\)", spec.ue_count));
            match (g, u) {
                (Some(g), Some(u)) => Probe::At(g.min(u)),
                (None, _) => missing(&format!("{gv}.Create({})", spec.gnb_count)),
                (_, None) => missing(&format!("{uv}.Create({})", spec.ue_count)),
            }
        }
        CheckId::ChannelAttributes => {
            let lit = |name: &str, value: &str| format!(r"\b{name}\s*=\s*{}(?:[^\w.]|$)", regex::escape(value));
            let freq = units::engineering_literal(spec.frequency_hz);
            let bw = units::engineering_literal(spec.bandwidth_hz);
            let Some(at) = find(src, &lit("frequency", &freq)) else {
                return missing(&format!("frequency = {freq}"));
            };
            for (name, value) in [
                ("bandwidth", bw),
                ("numCcs", spec.cc_count.to_string()),
                ("numerology", spec.numerology.to_string()),
            ] {
                if find(src, &lit(name, &value)).is_none() {
                    return missing(&format!("{name} = {value}"));
                }
            }
            let scenario = format!(r#"\bscenario\s*=\s*"{}""#, regex::escape(spec.channel_model.as_str()));
            if find(src, &scenario).is_none() {
                return missing(&format!("scenario = \"{}\"", spec.channel_model));
            }
            Probe::At(at)
        }
        CheckId::TrafficBlock => {
            let Some(block) = traffic_block(&Combination::of(spec)) else {
                return Probe::Missing(format!("no template for {}", Combination::of(spec)));
            };
            let mut first = usize::MAX;
            for token in block.signature() {
                match find(src, &format!(r"\b{}\b", regex::escape(token))) {
                    Some(p) => first = first.min(p),
                    None => return missing(token),
                }
            }
            Probe::At(first)
        }
        CheckId::Attachment => {
            let pat = match spec.helper_stack {
                HelperStack::Nr5gLena => r"\bAttachToClosestGnb\s*\(",
                _ => r"\bPopulateRoutingTables\s*\(",
            };
            find(src, pat).map_or_else(|| missing("attachment call"), Probe::At)
        }
        CheckId::RunTeardown => {
            let stop = find(
                src,
                &format!(
                    r"Simulator(?:::|\.)Stop\s*\(\s*(?:ns\.)?Seconds\s*\(\s*{}\s*\)\s*\)",
                    regex::escape(&units::plain_decimal(spec.sim_duration_s))
                ),
            );
            let run = find(src, r"Simulator(?:::|\.)Run\s*\(\s*\)");
            let destroy = find(src, r"Simulator(?:::|\.)Destroy\s*\(\s*\)");
            match (stop, run, destroy) {
                (Some(s), Some(r), Some(d)) if s < r && r < d => Probe::At(r),
                (Some(_), Some(_), Some(_)) => Probe::Missing("expected Stop, then Run, then Destroy".into()),
                (None, _, _) => missing("Simulator Stop at the scenario duration"),
                (_, None, _) => missing("Simulator Run"),
                (_, _, None) => missing("Simulator Destroy"),
            }
        }
    }
}

/// Presence and relative order of the nine structural elements.
///
/// A present element must come after every earlier element that passed;
/// the namespace check is not applicable to Python and passes there.
pub fn lint_structure(artifact: &GeneratedArtifact) -> StructureReport {
    let mut checks = Vec::with_capacity(CheckId::ALL.len());
    let mut last: Option<(usize, CheckId)> = None;
    for check in CheckId::ALL {
        let (passed, detail) = match probe(check, artifact) {
            Probe::NotApplicable => (true, "not applicable".to_string()),
            Probe::Missing(why) => (false, why),
            Probe::At(pos) => match last {
                Some((prev, prev_check)) if pos <= prev => (
                    false,
                    format!("appears before {} (byte {pos} <= {prev})", prev_check.as_str()),
                ),
                _ => {
                    last = Some((pos, check));
                    (true, format!("at byte {pos}"))
                }
            },
        };
        checks.push(CheckResult {
            check,
            passed,
            detail,
        });
    }
    let ok = checks.iter().all(|c| c.passed);
    StructureReport { checks, ok }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::LogicalClock;
    use crate::llm::{Cassette, RecordedResponse};
    use crate::scenario::normalize_units;
    use crate::scenario::RawSpecDraft;

    fn xr_umi() -> ScenarioSpec {
        let d: RawSpecDraft = serde_json::from_str(
            r#"{"frequency":"28 GHz","bandwidth":"200 MHz","cc_count":1,"ue_count":100,
            "channel_model":"UMi","traffic_profile":"XR","transport":"TCP",
            "beamforming":"SCANNING","helper_stack":"NR_5GLENA"}"#,
        )
        .unwrap();
        normalize_units(&d).unwrap()
    }

    fn defaults() -> ScenarioSpec {
        normalize_units(&RawSpecDraft::default()).unwrap()
    }

    fn clock() -> LogicalClock {
        LogicalClock::new(0, 1)
    }

    #[test]
    fn xr_umi_scaffold_content() {
        let a = scaffold(&xr_umi(), Dialect::Cpp, &clock()).unwrap();
        let channel = a.section_body("channel").unwrap();
        assert!(channel.contains("double frequency = 28e9;"));
        assert!(channel.contains("double bandwidth = 200e6;"));
        assert!(a.section_body("nodes").unwrap().contains("ueNodes.Create(100);"));
        assert!(a.section_body("traffic").unwrap().contains("BulkSendHelper"));
        assert!(a.section_body("attachment").unwrap().contains("AttachToClosestGnb"));
        assert_eq!(a.section_ids(), SECTION_ORDER);
        assert!(a.sections.values().all(|s| s.provenance == SectionProvenance::Scaffold));
        let report = lint_structure(&a);
        assert!(report.ok, "{report}");
    }

    #[test]
    fn python_defaults_scaffold() {
        let a = scaffold(&defaults(), Dialect::Python, &clock()).unwrap();
        assert!(a.source.contains("from ns import ns"));
        assert!(a.source.contains("gnb_nodes.Create(1)"));
        assert!(a.source.contains("ue_nodes.Create(1)"));
        assert!(a.source.contains("ns.Simulator.Run()"));
        assert!(a.source.contains("ns.Simulator.Destroy()"));
        assert!(!a.sections.contains_key("namespace"));
        let r = lint_structure(&a);
        assert!(r.ok, "{r}");
        assert_eq!(r.checks[1].detail, "not applicable");
    }

    #[test]
    fn every_covered_combination_lints_clean() {
        for c in supported_combinations() {
            for dialect in [Dialect::Cpp, Dialect::Python] {
                let mut spec = defaults();
                spec.helper_stack = c.helper_stack;
                spec.traffic_profile = c.traffic_profile;
                spec.transport = c.transport;
                let a = scaffold(&spec, dialect, &clock()).unwrap();
                let r = lint_structure(&a);
                assert!(r.ok, "{c} {dialect}\n{r}");
                assert!(!PLACEHOLDER.is_match(&a.source), "{c} {dialect} left a placeholder");
            }
        }
    }

    #[test]
    fn unsupported_combination_names_nearest() {
        let mut spec = defaults();
        spec.helper_stack = HelperStack::Wifi;
        spec.traffic_profile = TrafficProfile::Xr;
        spec.transport = Transport::Tcp;
        match scaffold(&spec, Dialect::Cpp, &clock()) {
            Err(CodegenError::UnsupportedCombination { nearest, .. }) => assert_eq!(
                nearest,
                combo(HelperStack::Wifi, TrafficProfile::Cbr, Transport::Udp)
            ),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn scaffold_is_deterministic() {
        let a = scaffold(&xr_umi(), Dialect::Cpp, &clock()).unwrap();
        let b = scaffold(&xr_umi(), Dialect::Cpp, &clock()).unwrap();
        assert_eq!(a.source, b.source);
        assert_eq!(a.spec_digest, spec_hash(&xr_umi()));
    }

    fn mutate(a: &GeneratedArtifact, from: &str, to: &str) -> GeneratedArtifact {
        assert!(a.source.contains(from), "fault anchor {from:?} not in source");
        let mut b = a.clone();
        b.source = a.source.replacen(from, to, 1);
        b
    }

    fn swap(a: &GeneratedArtifact, x: &str, y: &str) -> GeneratedArtifact {
        let b = mutate(a, x, "\u{0}");
        let b = mutate(&b, y, x);
        mutate(&b, "\u{0}", y)
    }

    #[test]
    fn single_faults_fail_exactly_one_check() {
        let a = scaffold(&xr_umi(), Dialect::Cpp, &clock()).unwrap();
        let faults: [(CheckId, GeneratedArtifact); 9] = [
            (CheckId::Includes, mutate(&a, "#include \"ns3/nr-module.h\"\n", "")),
            (CheckId::Namespace, mutate(&a, "using namespace ns3;\n", "")),
            (CheckId::LogComponent, mutate(&a, "NS_LOG_COMPONENT_DEFINE(\"GenonetScenario\");\n", "")),
            (CheckId::Helper, mutate(&a, "CreateObject<NrHelper>()", "nullptr")),
            (CheckId::NodeCounts, mutate(&a, "ueNodes.Create(100);", "ueNodes.Create(10);")),
            (CheckId::ChannelAttributes, mutate(&a, "= 28e9;", "= 2.8e10;")),
            (CheckId::TrafficBlock, mutate(&a, "BulkSendHelper bulkSend", "OnOffHelper bulkSend")),
            (CheckId::Attachment, mutate(&a, "nrHelper->AttachToClosestGnb(ueNetDev, gnbNetDev);\n", "")),
            (CheckId::RunTeardown, swap(&a, "Simulator::Run();", "Simulator::Destroy();")),
        ];
        for (expected, faulty) in faults {
            let r = lint_structure(&faulty);
            assert!(!r.ok);
            assert_eq!(r.failed(), vec![expected.as_str()], "{r}");
        }
    }

    #[test]
    fn section_ranges_are_disjoint_and_in_bounds() {
        let a = scaffold(&xr_umi(), Dialect::Cpp, &clock()).unwrap();
        let mut spans: Vec<_> = a.sections.values().collect();
        spans.sort_by_key(|s| s.start);
        for w in spans.windows(2) {
            assert!(w[0].end <= w[1].start);
        }
        for s in spans {
            assert!(s.start <= s.end && s.end <= a.source.len());
            assert!(a.source.is_char_boundary(s.start) && a.source.is_char_boundary(s.end));
        }
    }

    #[test]
    fn marker_errors() {
        let d = Dialect::Python;
        assert!(matches!(
            parse_sections("# @genonet:begin a\n# @genonet:begin b\n", d),
            Err(MarkerError::Nested { .. })
        ));
        assert!(matches!(parse_sections("# @genonet:end a\n", d), Err(MarkerError::Unmatched { .. })));
        assert!(matches!(parse_sections("# @genonet:begin a\n", d), Err(MarkerError::Unterminated(_))));
        let s = "x\n# @genonet:begin a\nbody\n# @genonet:end a\n";
        let parsed = parse_sections(s, d).unwrap();
        assert_eq!(&s[parsed[0].1..parsed[0].2], "body\n");
    }

    #[test]
    fn scaffold_only_ignores_gateway() {
        let gw = LlmGateway::replay(Cassette::new());
        let g = generate_script(&xr_umi(), Dialect::Cpp, GenerationMode::ScaffoldOnly, &gw, &clock()).unwrap();
        assert_eq!(g.artifact.source, scaffold(&xr_umi(), Dialect::Cpp, &clock()).unwrap().source);
    }

    #[test]
    fn refine_with_empty_cassette_surfaces_miss() {
        let gw = LlmGateway::replay(Cassette::new());
        assert!(matches!(
            generate_script(&xr_umi(), Dialect::Cpp, GenerationMode::LlmRefine, &gw, &clock()),
            Err(CodegenError::Gateway(GatewayError::CassetteMiss(_)))
        ));
    }

    #[test]
    fn refinement_keeps_good_bodies_and_rejects_corrupt_ones() {
        let base = scaffold(&xr_umi(), Dialect::Cpp, &clock()).unwrap();
        let mut cassette = Cassette::new();
        // channel: same body plus a comment -> accepted
        let channel = format!("{}    // elaborated\n", base.section_body("channel").unwrap());
        cassette.insert(&refinement_request(&base, "channel"), RecordedResponse::stop(channel.clone()));
        let after_channel = base.with_section_body("channel", &channel, SectionProvenance::Llm).unwrap();
        // traffic: drops the bulk-send application -> lint fails -> rejected
        cassette.insert(
            &refinement_request(&after_channel, "traffic"),
            RecordedResponse::stop("```cpp\n    OnOffHelper onoff(\"ns3::UdpSocketFactory\", Address());\n```"),
        );
        // attachment: tries to smuggle a marker -> rejected
        cassette.insert(
            &refinement_request(&after_channel, "attachment"),
            RecordedResponse::stop("    // @genonet:end attachment\n"),
        );
        let gw = LlmGateway::replay(cassette);
        let g = generate_script(&xr_umi(), Dialect::Cpp, GenerationMode::LlmRefine, &gw, &clock()).unwrap();
        assert_eq!(g.artifact.sections["channel"].provenance, SectionProvenance::Llm);
        assert_eq!(g.artifact.sections["traffic"].provenance, SectionProvenance::Scaffold);
        assert_eq!(g.artifact.sections["attachment"].provenance, SectionProvenance::Scaffold);
        let sections: Vec<_> = g.rejected.iter().map(|r| r.section.as_str()).collect();
        assert_eq!(sections, ["traffic", "attachment"]);
        assert!(lint_structure(&g.artifact).ok);
        assert!(g.artifact.source.contains("// elaborated"));
    }

    #[test]
    fn fence_stripping() {
        assert_eq!(strip_code_fence("```cpp\na\nb\n```"), "a\nb\n");
        assert_eq!(strip_code_fence("plain\n"), "plain\n");
    }
}
