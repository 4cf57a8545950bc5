//! Canonical scenario description shared by extraction, codegen and the stub
//! executor: unit normalization, validation and stable hashing.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::digest::Digest;
use crate::units;

/// Lower edge of FR2 and above, in hertz.
pub const FR2_LOWER_EDGE_HZ: f64 = 24.25e9;

const MIN_FREQUENCY_HZ: f64 = 0.5e9;
const MAX_FREQUENCY_HZ: f64 = 100e9;
const MAX_BANDWIDTH_HZ: f64 = 2e9;

/// Relative tolerance for comparing frequencies and bandwidths.
pub const HZ_RELATIVE_TOLERANCE: f64 = 1e-6;

pub fn hz_approx_eq(a: f64, b: f64) -> bool {
    (a - b).abs() <= HZ_RELATIVE_TOLERANCE * a.abs().max(b.abs())
}

macro_rules! string_enum {
    (
        $(#[$meta:meta])*
        pub enum $name:ident { $($variant:ident => $canon:literal $(| $alias:literal)*),+ $(,)? }
    ) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $canon)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(&self) -> &'static str {
                match self { $($name::$variant => $canon),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = UnknownVariant;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                let key = normalize_enum_key(s);
                $(
                    if key == normalize_enum_key($canon) $(|| key == normalize_enum_key($alias))* {
                        return Ok($name::$variant);
                    }
                )+
                Err(UnknownVariant { kind: stringify!($name), value: s.to_string() })
            }
        }
    };
}

fn normalize_enum_key(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown {kind} value {value:?}")]
pub struct UnknownVariant {
    pub kind: &'static str,
    pub value: String,
}

string_enum! {
    /// TR 38.901 scenario family.
    pub enum ChannelModel {
        UMi => "UMi" | "UMi-StreetCanyon" | "UMi_StreetCanyon" | "urban micro",
        UMa => "UMa" | "urban macro",
        RMa => "RMa" | "rural macro",
        InHOffice => "InH-Office" | "InH" | "InH-OfficeMixed" | "InH-OfficeOpen" | "indoor hotspot",
    }
}

string_enum! {
    pub enum TrafficProfile {
        Xr => "XR" | "extended reality",
        Cbr => "CBR" | "constant bit rate",
        Bulk => "BULK" | "bulk send",
        Echo => "ECHO" | "udp echo",
    }
}

string_enum! {
    pub enum Transport {
        Tcp => "TCP",
        Udp => "UDP",
    }
}

string_enum! {
    pub enum Beamforming {
        Scanning => "SCANNING" | "cell scan",
        Ideal => "IDEAL" | "direct path",
        None => "NONE" | "omni",
    }
}

string_enum! {
    /// ns-3 module family the scenario targets.
    pub enum HelperStack {
        Nr5gLena => "NR_5GLENA" | "5G-LENA" | "NR",
        Wifi => "WIFI" | "Wi-Fi",
        P2pCsma => "P2P_CSMA" | "point-to-point",
    }
}

impl TrafficProfile {
    /// Transport used when a prompt names a traffic profile but no transport.
    pub fn default_transport(self) -> Transport {
        match self {
            TrafficProfile::Xr | TrafficProfile::Bulk => Transport::Tcp,
            TrafficProfile::Cbr | TrafficProfile::Echo => Transport::Udp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrequencyRange {
    #[serde(rename = "FR1")]
    Fr1,
    /// FR2 and everything above it up to the sub-THz envelope.
    #[serde(rename = "FR2+")]
    Fr2Plus,
}

/// Validated, unit-normalized scenario.
///
/// Field names are the canonical serialization keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub frequency_hz: f64,
    pub bandwidth_hz: f64,
    pub cc_count: u32,
    pub numerology: u8,
    pub gnb_count: u32,
    pub ue_count: u32,
    pub channel_model: ChannelModel,
    pub traffic_profile: TrafficProfile,
    pub transport: Transport,
    pub beamforming: Beamforming,
    pub sim_duration_s: f64,
    pub helper_stack: HelperStack,
}

impl ScenarioSpec {
    pub fn frequency_range(&self) -> FrequencyRange {
        if self.frequency_hz >= FR2_LOWER_EDGE_HZ {
            FrequencyRange::Fr2Plus
        } else {
            FrequencyRange::Fr1
        }
    }

    /// Subcarrier spacing for the configured numerology: 15 kHz × 2^μ.
    pub fn subcarrier_spacing_hz(&self) -> f64 {
        15e3 * f64::from(1u32 << self.numerology.min(4))
    }

    pub fn canonical_json(&self) -> String {
        crate::digest::canonical_json(self)
    }
}

/// Default numerology: μ=2 in FR2+, μ=1 otherwise.
pub fn default_numerology(frequency_hz: f64) -> u8 {
    if frequency_hz >= FR2_LOWER_EDGE_HZ {
        2
    } else {
        1
    }
}

pub mod defaults {
    use super::*;

    pub const FREQUENCY_HZ: f64 = 3.5e9;
    pub const BANDWIDTH_HZ: f64 = 20e6;
    pub const CC_COUNT: u32 = 1;
    pub const GNB_COUNT: u32 = 1;
    pub const UE_COUNT: u32 = 1;
    pub const SIM_DURATION_S: f64 = 10.0;
    pub const CHANNEL_MODEL: ChannelModel = ChannelModel::UMi;
    pub const TRAFFIC_PROFILE: TrafficProfile = TrafficProfile::Cbr;
    pub const BEAMFORMING: Beamforming = Beamforming::None;
    pub const HELPER_STACK: HelperStack = HelperStack::Nr5gLena;
}

/// A magnitude as it arrives from a prompt or API: a bare number in the base
/// unit, or text with a unit suffix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Magnitude {
    Number(f64),
    Text(String),
}

impl From<&str> for Magnitude {
    fn from(s: &str) -> Self {
        Magnitude::Text(s.to_string())
    }
}

impl From<f64> for Magnitude {
    fn from(v: f64) -> Self {
        Magnitude::Number(v)
    }
}

impl fmt::Display for Magnitude {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Magnitude::Number(v) => write!(f, "{v}"),
            Magnitude::Text(s) => f.write_str(s),
        }
    }
}

/// Unnormalized scenario draft. Every field is optional; enums are free text.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RawSpecDraft {
    pub frequency: Option<Magnitude>,
    pub bandwidth: Option<Magnitude>,
    pub sim_duration: Option<Magnitude>,
    pub cc_count: Option<i64>,
    pub numerology: Option<i64>,
    pub gnb_count: Option<i64>,
    pub ue_count: Option<i64>,
    pub channel_model: Option<String>,
    pub traffic_profile: Option<String>,
    pub transport: Option<String>,
    pub beamforming: Option<String>,
    pub helper_stack: Option<String>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NormalizeError {
    #[error("unknown unit suffix {suffix:?} for {field}")]
    UnknownUnit { field: &'static str, suffix: String },
    #[error("{field} must not be negative (got {value})")]
    NegativeMagnitude { field: &'static str, value: String },
    #[error("{field}: cannot read {value:?} as a number")]
    NotANumber { field: &'static str, value: String },
    #[error("{field}: {source}")]
    UnknownVariant {
        field: &'static str,
        source: UnknownVariant,
    },
}

enum UnitKind {
    Frequency,
    Time,
}

fn magnitude_to_base(
    field: &'static str,
    m: &Magnitude,
    kind: UnitKind,
) -> Result<f64, NormalizeError> {
    let value = match m {
        Magnitude::Number(v) => *v,
        Magnitude::Text(text) => {
            let q = units::split_quantity(text).ok_or_else(|| NormalizeError::NotANumber {
                field,
                value: text.clone(),
            })?;
            let exp = match kind {
                UnitKind::Frequency => units::frequency_exponent(q.suffix),
                UnitKind::Time => units::time_exponent(q.suffix),
            }
            .ok_or_else(|| NormalizeError::UnknownUnit {
                field,
                suffix: q.suffix.to_string(),
            })?;
            q.value_scaled(exp).ok_or_else(|| NormalizeError::NotANumber {
                field,
                value: text.clone(),
            })?
        }
    };
    if value < 0.0 {
        return Err(NormalizeError::NegativeMagnitude {
            field,
            value: m.to_string(),
        });
    }
    Ok(value)
}

fn count(field: &'static str, v: Option<i64>, default: u32) -> Result<u32, NormalizeError> {
    match v {
        None => Ok(default),
        Some(n) if n < 0 => Err(NormalizeError::NegativeMagnitude {
            field,
            value: n.to_string(),
        }),
        Some(n) => Ok(u32::try_from(n).unwrap_or(u32::MAX)),
    }
}

fn parse_enum<T: FromStr<Err = UnknownVariant>>(
    field: &'static str,
    v: &Option<String>,
) -> Result<Option<T>, NormalizeError> {
    v.as_deref()
        .map(|s| s.parse().map_err(|source| NormalizeError::UnknownVariant { field, source }))
        .transpose()
}

/// Converts a draft to base units and fills unspecified fields from the
/// defaults table. The result is not validated.
pub fn normalize_units(raw: &RawSpecDraft) -> Result<ScenarioSpec, NormalizeError> {
    let frequency_hz = match &raw.frequency {
        Some(m) => magnitude_to_base("frequency", m, UnitKind::Frequency)?,
        None => defaults::FREQUENCY_HZ,
    };
    let bandwidth_hz = match &raw.bandwidth {
        Some(m) => magnitude_to_base("bandwidth", m, UnitKind::Frequency)?,
        None => defaults::BANDWIDTH_HZ,
    };
    let sim_duration_s = match &raw.sim_duration {
        Some(m) => magnitude_to_base("sim_duration", m, UnitKind::Time)?,
        None => defaults::SIM_DURATION_S,
    };
    let numerology = match raw.numerology {
        None => default_numerology(frequency_hz),
        Some(n) if n < 0 => {
            return Err(NormalizeError::NegativeMagnitude {
                field: "numerology",
                value: n.to_string(),
            })
        }
        Some(n) => u8::try_from(n).unwrap_or(u8::MAX),
    };
    let traffic_profile = parse_enum::<TrafficProfile>("traffic_profile", &raw.traffic_profile)?
        .unwrap_or(defaults::TRAFFIC_PROFILE);
    let transport = parse_enum::<Transport>("transport", &raw.transport)?
        .unwrap_or_else(|| traffic_profile.default_transport());

    Ok(ScenarioSpec {
        frequency_hz,
        bandwidth_hz,
        cc_count: count("cc_count", raw.cc_count, defaults::CC_COUNT)?,
        numerology,
        gnb_count: count("gnb_count", raw.gnb_count, defaults::GNB_COUNT)?,
        ue_count: count("ue_count", raw.ue_count, defaults::UE_COUNT)?,
        channel_model: parse_enum("channel_model", &raw.channel_model)?
            .unwrap_or(defaults::CHANNEL_MODEL),
        traffic_profile,
        transport,
        beamforming: parse_enum("beamforming", &raw.beamforming)?
            .unwrap_or(defaults::BEAMFORMING),
        sim_duration_s,
        helper_stack: parse_enum("helper_stack", &raw.helper_stack)?
            .unwrap_or(defaults::HELPER_STACK),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub rule: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    fn from_violations(violations: Vec<Violation>) -> Self {
        Self {
            ok: violations.is_empty(),
            violations,
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.ok {
            return f.write_str("valid");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{} [{}]: {}", v.field, v.rule, v.message)?;
        }
        Ok(())
    }
}

/// Checks every invariant and reports all violations, not only the first.
pub fn validate(spec: &ScenarioSpec) -> ValidationReport {
    let mut out = Vec::new();
    let mut push = |field: &str, rule: &str, message: String| {
        out.push(Violation {
            field: field.to_string(),
            rule: rule.to_string(),
            message,
        })
    };

    // Written so that NaN fails every range check.
    if !(spec.frequency_hz >= MIN_FREQUENCY_HZ && spec.frequency_hz <= MAX_FREQUENCY_HZ) {
        push(
            "frequency_hz",
            "range",
            format!(
                "frequency {} Hz outside [{MIN_FREQUENCY_HZ}, {MAX_FREQUENCY_HZ}] Hz",
                spec.frequency_hz
            ),
        );
    }
    if !(spec.bandwidth_hz > 0.0 && spec.bandwidth_hz <= MAX_BANDWIDTH_HZ) {
        push(
            "bandwidth_hz",
            "range",
            format!(
                "bandwidth {} Hz outside (0, {MAX_BANDWIDTH_HZ}] Hz",
                spec.bandwidth_hz
            ),
        );
    }
    for (field, value) in [
        ("cc_count", spec.cc_count),
        ("gnb_count", spec.gnb_count),
        ("ue_count", spec.ue_count),
    ] {
        if value < 1 {
            push(field, "min-1", format!("{field} must be at least 1"));
        }
    }
    if spec.numerology > 4 {
        push(
            "numerology",
            "range",
            format!("numerology {} not in 0..=4", spec.numerology),
        );
    }
    if !(spec.sim_duration_s > 0.0 && spec.sim_duration_s.is_finite()) {
        push(
            "sim_duration_s",
            "positive",
            format!("simulation time {} s must be positive", spec.sim_duration_s),
        );
    }
    ValidationReport::from_violations(out)
}

/// SHA-256 over the canonical key-sorted JSON form of the spec.
pub fn spec_hash(spec: &ScenarioSpec) -> Digest {
    Digest::of_canonical(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn xr_umi_draft() -> RawSpecDraft {
        RawSpecDraft {
            frequency: Some("28 GHz".into()),
            bandwidth: Some("200 MHz".into()),
            cc_count: Some(1),
            ue_count: Some(100),
            channel_model: Some("UMi".into()),
            traffic_profile: Some("XR".into()),
            transport: Some("TCP".into()),
            beamforming: Some("SCANNING".into()),
            helper_stack: Some("NR_5GLENA".into()),
            ..Default::default()
        }
    }

    #[test]
    fn normalizes_xr_umi_units() {
        let spec = normalize_units(&xr_umi_draft()).unwrap();
        assert_eq!(spec.frequency_hz, 2.8e10);
        assert_eq!(spec.bandwidth_hz, 2.0e8);
        assert_eq!(spec.cc_count, 1);
        assert_eq!(spec.ue_count, 100);
        assert_eq!(spec.gnb_count, 1);
        assert_eq!(spec.numerology, 2);
        assert_eq!(spec.frequency_range(), FrequencyRange::Fr2Plus);
    }

    #[test]
    fn identity_unit() {
        let raw = RawSpecDraft {
            frequency: Some("1 Hz".into()),
            ..Default::default()
        };
        assert_eq!(normalize_units(&raw).unwrap().frequency_hz, 1.0);
    }

    #[test]
    fn fr1_units_and_default_numerology() {
        let raw = RawSpecDraft {
            frequency: Some("3.5 GHz".into()),
            bandwidth: Some("100 MHz".into()),
            ..Default::default()
        };
        let spec = normalize_units(&raw).unwrap();
        // 3.5 × 1e9 and 100 × 1e6 by hand
        assert_eq!(spec.frequency_hz, 3_500_000_000.0);
        assert_eq!(spec.bandwidth_hz, 100_000_000.0);
        assert_eq!(spec.numerology, 1);
    }

    #[test]
    fn unit_errors() {
        let raw = RawSpecDraft {
            frequency: Some("28 furlongs".into()),
            ..Default::default()
        };
        assert!(matches!(
            normalize_units(&raw),
            Err(NormalizeError::UnknownUnit { suffix, .. }) if suffix == "furlongs"
        ));
        let raw = RawSpecDraft {
            bandwidth: Some("-5 MHz".into()),
            ..Default::default()
        };
        assert!(matches!(
            normalize_units(&raw),
            Err(NormalizeError::NegativeMagnitude { field: "bandwidth", .. })
        ));
        let raw = RawSpecDraft {
            ue_count: Some(-1),
            ..Default::default()
        };
        assert!(matches!(
            normalize_units(&raw),
            Err(NormalizeError::NegativeMagnitude { field: "ue_count", .. })
        ));
        let raw = RawSpecDraft {
            sim_duration: Some("500 ms".into()),
            ..Default::default()
        };
        assert_eq!(normalize_units(&raw).unwrap().sim_duration_s, 0.5);
    }

    #[test]
    fn channel_aliases() {
        assert_eq!("UMi-StreetCanyon".parse::<ChannelModel>(), Ok(ChannelModel::UMi));
        assert_eq!("umi".parse::<ChannelModel>(), Ok(ChannelModel::UMi));
        assert_eq!("InH".parse::<ChannelModel>(), Ok(ChannelModel::InHOffice));
        assert!("Moon".parse::<ChannelModel>().is_err());
    }

    #[test]
    fn xr_umi_spec_is_valid() {
        let report = validate(&normalize_units(&xr_umi_draft()).unwrap());
        assert!(report.ok, "{report}");
        assert!(report.violations.is_empty());
    }

    #[test]
    fn zero_ues_violates_min() {
        let mut spec = normalize_units(&xr_umi_draft()).unwrap();
        spec.ue_count = 0;
        let report = validate(&spec);
        assert!(!report.ok);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].field, "ue_count");
        assert_eq!(report.violations[0].rule, "min-1");
    }

    #[test]
    fn reports_every_violation() {
        let mut spec = normalize_units(&xr_umi_draft()).unwrap();
        spec.frequency_hz = 200e9;
        spec.numerology = 7;
        let before = spec.clone();
        let report = validate(&spec);
        assert_eq!(report.violations.len(), 2);
        assert_eq!(spec, before);
    }

    #[test]
    fn nan_is_rejected() {
        let mut spec = normalize_units(&xr_umi_draft()).unwrap();
        spec.frequency_hz = f64::NAN;
        spec.sim_duration_s = f64::NAN;
        assert_eq!(validate(&spec).violations.len(), 2);
    }

    #[test]
    fn hash_is_stable_and_content_sensitive() {
        let a = normalize_units(&xr_umi_draft()).unwrap();
        assert_eq!(spec_hash(&a), spec_hash(&a.clone()));
        let mut b = a.clone();
        b.ue_count = 99;
        assert_ne!(spec_hash(&a), spec_hash(&b));
        assert_ne!(a.canonical_json(), b.canonical_json());
    }

    #[test]
    fn hash_ignores_draft_key_order() {
        let one: RawSpecDraft =
            serde_json::from_str(r#"{"frequency":"28 GHz","ue_count":100,"transport":"TCP"}"#)
                .unwrap();
        let two: RawSpecDraft =
            serde_json::from_str(r#"{"transport":"TCP","ue_count":100,"frequency":"28 GHz"}"#)
                .unwrap();
        assert_eq!(
            spec_hash(&normalize_units(&one).unwrap()),
            spec_hash(&normalize_units(&two).unwrap())
        );
    }

    #[test]
    fn canonical_json_is_key_sorted() {
        let spec = normalize_units(&xr_umi_draft()).unwrap();
        let json = spec.canonical_json();
        assert!(json.starts_with(r#"{"bandwidth_hz":200000000.0,"beamforming":"SCANNING","#));
    }
}
