//! Simulator output interpretation: FlowMonitor XML, echo-application event
//! logs, per-flow metrics and rendered summaries.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::digest::canonical_json_pretty;
use crate::llm::{LlmGateway, LlmRequest};
use crate::units;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InterpretError {
    #[error("malformed FlowMonitor XML at {row}:{col}: {message}")]
    MalformedXml { row: u32, col: u32, message: String },
    #[error("flow {0} has no classifier entry")]
    MissingClassifier(u32),
    #[error("flow {flow_id}: cannot parse attribute {attribute}={value:?}")]
    UnitParseError {
        flow_id: u32,
        attribute: String,
        value: String,
    },
}

impl InterpretError {
    /// Stable machine-readable name of the variant.
    pub fn code(&self) -> &'static str {
        match self {
            InterpretError::MalformedXml { .. } => "MalformedXml",
            InterpretError::MissingClassifier(_) => "MissingClassifier",
            InterpretError::UnitParseError { .. } => "UnitParseError",
        }
    }
}

/// Raw per-flow statistics joined with the flow's 5-tuple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub flow_id: u32,
    pub source_address: String,
    pub source_port: u16,
    pub destination_address: String,
    pub destination_port: u16,
    pub protocol: u8,
    /// Seconds.
    pub time_first_tx: f64,
    /// Seconds.
    pub time_last_rx: f64,
    pub tx_bytes: u64,
    pub rx_bytes: u64,
    pub tx_packets: u64,
    pub rx_packets: u64,
    pub lost_packets: u64,
    /// Seconds.
    pub delay_sum: f64,
    /// Seconds.
    pub jitter_sum: f64,
}

impl FlowRecord {
    pub fn protocol_name(&self) -> String {
        match self.protocol {
            6 => "TCP".into(),
            17 => "UDP".into(),
            other => other.to_string(),
        }
    }
}

fn parse_time(flow_id: u32, attribute: &str, raw: &str) -> Result<f64, InterpretError> {
    let err = || InterpretError::UnitParseError {
        flow_id,
        attribute: attribute.to_string(),
        value: raw.to_string(),
    };
    let q = units::split_quantity(raw).ok_or_else(err)?;
    let exp = units::time_exponent(q.suffix).ok_or_else(err)?;
    let v = q.value_scaled(exp).ok_or_else(err)?;
    if q.is_negative() {
        return Err(err());
    }
    Ok(v)
}

fn attr<'a>(node: roxmltree::Node<'a, 'a>, flow_id: u32, name: &str) -> Result<&'a str, InterpretError> {
    node.attribute(name).ok_or_else(|| InterpretError::UnitParseError {
        flow_id,
        attribute: name.to_string(),
        value: String::new(),
    })
}

fn parse_int<T: FromStr>(node: roxmltree::Node<'_, '_>, flow_id: u32, name: &str) -> Result<T, InterpretError> {
    let raw = attr(node, flow_id, name)?;
    raw.trim().trim_start_matches('+').parse().map_err(|_| InterpretError::UnitParseError {
        flow_id,
        attribute: name.to_string(),
        value: raw.to_string(),
    })
}

/// One record per `FlowStats/Flow` element, joined with its IPv4 or IPv6
/// classifier entry. Time attributes may be encoded in ns or s.
pub fn parse_flowmonitor(xml: &str) -> Result<Vec<FlowRecord>, InterpretError> {
    let doc = roxmltree::Document::parse(xml).map_err(|e| {
        let pos = e.pos();
        InterpretError::MalformedXml {
            row: pos.row,
            col: pos.col,
            message: e.to_string(),
        }
    })?;
    let root = doc.root_element();
    let classifier_flows: Vec<_> = root
        .children()
        .filter(|n| matches!(n.tag_name().name(), "Ipv4FlowClassifier" | "Ipv6FlowClassifier"))
        .flat_map(|c| c.children().filter(|n| n.has_tag_name("Flow")))
        .collect();
    let mut out = Vec::new();
    for stats in root.children().filter(|n| n.has_tag_name("FlowStats")) {
        for flow in stats.children().filter(|n| n.has_tag_name("Flow")) {
            let flow_id: u32 = parse_int(flow, 0, "flowId")?;
            let class = classifier_flows
                .iter()
                .find(|c| c.attribute("flowId").and_then(|v| v.trim().parse::<u32>().ok()) == Some(flow_id))
                .ok_or(InterpretError::MissingClassifier(flow_id))?;
            let time = |name: &str| parse_time(flow_id, name, attr(flow, flow_id, name)?);
            out.push(FlowRecord {
                flow_id,
                source_address: attr(*class, flow_id, "sourceAddress")?.to_string(),
                source_port: parse_int(*class, flow_id, "sourcePort")?,
                destination_address: attr(*class, flow_id, "destinationAddress")?.to_string(),
                destination_port: parse_int(*class, flow_id, "destinationPort")?,
                protocol: parse_int(*class, flow_id, "protocol")?,
                time_first_tx: time("timeFirstTxPacket")?,
                time_last_rx: time("timeLastRxPacket")?,
                tx_bytes: parse_int(flow, flow_id, "txBytes")?,
                rx_bytes: parse_int(flow, flow_id, "rxBytes")?,
                tx_packets: parse_int(flow, flow_id, "txPackets")?,
                rx_packets: parse_int(flow, flow_id, "rxPackets")?,
                lost_packets: parse_int(flow, flow_id, "lostPackets")?,
                delay_sum: time("delaySum")?,
                jitter_sum: time("jitterSum")?,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowMetrics {
    pub flow_id: u32,
    /// Bits per second over the first-Tx to last-Rx window.
    pub throughput_bps: f64,
    /// Seconds; `None` when no packet was received.
    pub mean_delay_s: Option<f64>,
    /// Seconds; `None` with fewer than two received packets.
    pub mean_jitter_s: Option<f64>,
    pub loss_ratio: f64,
}

pub fn compute_metrics(r: &FlowRecord) -> FlowMetrics {
    let duration = r.time_last_rx - r.time_first_tx;
    let throughput_bps = if r.rx_packets > 0 && duration > 0.0 {
        r.rx_bytes as f64 * 8.0 / duration
    } else {
        0.0
    };
    FlowMetrics {
        flow_id: r.flow_id,
        throughput_bps,
        mean_delay_s: (r.rx_packets > 0).then(|| r.delay_sum / r.rx_packets as f64),
        mean_jitter_s: (r.rx_packets >= 2).then(|| r.jitter_sum / (r.rx_packets - 1) as f64),
        loss_ratio: if r.tx_packets > 0 {
            r.lost_packets as f64 / r.tx_packets as f64
        } else {
            0.0
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Actor {
    Client,
    Server,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Sent,
    Received,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineEvent {
    pub time_s: f64,
    /// The timestamp exactly as logged, without sign or unit (e.g. `2.0118`).
    pub time_text: String,
    pub actor: Actor,
    pub action: Action,
    pub bytes: u64,
    pub peer_address: String,
    pub peer_port: u16,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub events: Vec<TimelineEvent>,
    /// Lines that did not match the grammar.
    pub skipped: usize,
}

static EVENT_LINE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"At time \+?(\d+(?:\.\d+)?(?:[eE][-+]?\d+)?)s (client|server) (sent|received) (\d+) bytes (?:to|from) (\S+) port (\d+)",
    )
    .unwrap()
});

/// Line-oriented echo-log parser; never fails, and every input line is
/// either an event or counted as skipped.
pub fn parse_event_log(text: &str) -> EventLog {
    let mut log = EventLog::default();
    for line in text.lines() {
        let event = EVENT_LINE.captures(line).and_then(|c| {
            let bytes: u64 = c[4].parse().ok()?;
            let time_s: f64 = c[1].parse().ok()?;
            let peer_port: u16 = c[6].parse().ok()?;
            (bytes > 0).then(|| TimelineEvent {
                time_s,
                time_text: c[1].to_string(),
                actor: if &c[2] == "client" { Actor::Client } else { Actor::Server },
                action: if &c[3] == "sent" { Action::Sent } else { Action::Received },
                bytes,
                peer_address: c[5].to_string(),
                peer_port,
            })
        });
        match event {
            Some(e) => log.events.push(e),
            None => log.skipped += 1,
        }
    }
    log
}

fn decimal(text: &str) -> Option<Decimal> {
    if text.contains(['e', 'E']) {
        Decimal::from_scientific(text).ok()
    } else {
        Decimal::from_str(text).ok()
    }
}

/// Last client-received time minus first client-sent time, computed in
/// exact decimal arithmetic from the logged timestamps.
pub fn round_trip_time(events: &[TimelineEvent]) -> Option<Decimal> {
    let sent = events
        .iter()
        .find(|e| e.actor == Actor::Client && e.action == Action::Sent)?;
    let received = events
        .iter()
        .rev()
        .find(|e| e.actor == Actor::Client && e.action == Action::Received)?;
    let rtt = decimal(&received.time_text)? - decimal(&sent.time_text)?;
    Some(rtt.normalize())
}

/// Input to [`summarize`].
#[derive(Debug, Clone, PartialEq)]
pub enum InterpretInput {
    Flows(Vec<FlowRecord>),
    Timeline(Vec<TimelineEvent>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SummaryStyle {
    #[default]
    Template,
    LlmPolished,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpretationReport {
    pub text: String,
    pub style: SummaryStyle,
    /// Set when a polished summary was discarded in favour of the template.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback_reason: Option<String>,
    /// Key-sorted JSON with the underlying numbers.
    pub metrics_json: String,
    pub flows: Vec<FlowMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round_trip_time_s: Option<String>,
}

/// Fixed rendering for summary numbers: shortest round-trip decimal.
pub fn render_number(v: f64) -> String {
    units::plain_decimal(v)
}

fn render_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), render_number)
}

/// Standalone numeric tokens in `text`. Dotted quads, `addr:port` pairs and
/// identifiers are not numbers and are ignored.
pub fn numeric_tokens(text: &str) -> BTreeSet<String> {
    static NUMBER: LazyLock<Regex> =
        LazyLock::new(|| Regex::new(r"^[-+]?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?$").unwrap());
    text.split(|c: char| !(c.is_alphanumeric() || matches!(c, '.' | ':' | '+' | '-' | '_')))
        .map(|t| t.trim_end_matches(['.', ':']))
        .filter(|t| NUMBER.is_match(t))
        .map(str::to_string)
        .collect()
}

/// Every number the template may legitimately print for `input`.
pub fn source_numbers(input: &InterpretInput) -> BTreeSet<String> {
    let mut set = BTreeSet::new();
    match input {
        InterpretInput::Flows(records) => {
            set.insert(records.len().to_string());
            for r in records {
                let m = compute_metrics(r);
                set.insert(r.flow_id.to_string());
                set.insert(r.tx_packets.to_string());
                set.insert(r.rx_packets.to_string());
                set.insert(render_number(m.throughput_bps));
                set.insert(render_number(m.loss_ratio));
                set.extend(m.mean_delay_s.map(render_number));
                set.extend(m.mean_jitter_s.map(render_number));
            }
        }
        InterpretInput::Timeline(events) => {
            set.insert(events.len().to_string());
            for e in events {
                set.insert(e.time_text.clone());
                set.insert(e.bytes.to_string());
                set.insert(e.peer_port.to_string());
            }
            if let Some(rtt) = round_trip_time(events) {
                set.insert(rtt.to_string());
            }
        }
    }
    set
}

fn template_summary(input: &InterpretInput) -> (String, String, Vec<FlowMetrics>, Option<String>) {
    let mut text = String::new();
    match input {
        InterpretInput::Flows(records) => {
            let metrics: Vec<FlowMetrics> = records.iter().map(compute_metrics).collect();
            let _ = writeln!(text, "Flow summary ({} flows)", records.len());
            text.push_str("| flow | source | destination | protocol | tx packets | rx packets | throughput (bit/s) | mean delay (s) | mean jitter (s) | loss ratio |\n");
            text.push_str("|---|---|---|---|---|---|---|---|---|---|\n");
            let mut rows = Vec::new();
            for (r, m) in records.iter().zip(&metrics) {
                let _ = writeln!(
                    text,
                    "| {} | {}:{} | {}:{} | {} | {} | {} | {} | {} | {} | {} |",
                    r.flow_id,
                    r.source_address,
                    r.source_port,
                    r.destination_address,
                    r.destination_port,
                    r.protocol_name(),
                    r.tx_packets,
                    r.rx_packets,
                    render_number(m.throughput_bps),
                    render_opt(m.mean_delay_s),
                    render_opt(m.mean_jitter_s),
                    render_number(m.loss_ratio),
                );
                rows.push(json!({
                    "flow_id": r.flow_id,
                    "source": format!("{}:{}", r.source_address, r.source_port),
                    "destination": format!("{}:{}", r.destination_address, r.destination_port),
                    "protocol": r.protocol_name(),
                    "tx_packets": r.tx_packets,
                    "rx_packets": r.rx_packets,
                    "throughput_bps": m.throughput_bps,
                    "mean_delay_s": m.mean_delay_s,
                    "mean_jitter_s": m.mean_jitter_s,
                    "loss_ratio": m.loss_ratio,
                }));
            }
            let metrics_json = canonical_json_pretty(&json!({ "flows": rows }));
            (text, metrics_json, metrics, None)
        }
        InterpretInput::Timeline(events) => {
            let _ = writeln!(text, "Event timeline ({} events)", events.len());
            for e in events {
                let (actor, action, dir) = match (e.actor, e.action) {
                    (Actor::Client, Action::Sent) => ("client", "sent", "to"),
                    (Actor::Client, Action::Received) => ("client", "received", "from"),
                    (Actor::Server, Action::Sent) => ("server", "sent", "to"),
                    (Actor::Server, Action::Received) => ("server", "received", "from"),
                };
                let _ = writeln!(
                    text,
                    "- t={} s: {actor} {action} {} bytes {dir} {} port {}",
                    e.time_text, e.bytes, e.peer_address, e.peer_port
                );
            }
            let rtt = round_trip_time(events).map(|d| d.to_string());
            if let Some(rtt) = &rtt {
                let _ = writeln!(text, "Round-trip time: {rtt} s");
            }
            let metrics_json = canonical_json_pretty(&json!({
                "events": events,
                "round_trip_time_s": rtt,
            }));
            (text, metrics_json, Vec::new(), rtt)
        }
    }
}

const POLISH_SYSTEM_PROMPT: &str = "\
You turn simulation result summaries into clear prose for a network engineer.
Keep every number exactly as written and do not introduce new numbers.";

pub fn polish_request(template_text: &str) -> LlmRequest {
    LlmRequest::new(POLISH_SYSTEM_PROMPT, template_text).with_max_tokens(800)
}

/// Renders `input` as text plus a machine-readable metrics file.
///
/// The polished style makes one gateway call and keeps its output only when
/// it carries exactly the template's set of numbers; otherwise the template
/// text is returned with a fallback reason.
pub fn summarize(input: &InterpretInput, style: SummaryStyle, gateway: Option<&LlmGateway>) -> InterpretationReport {
    let (template, metrics_json, flows, rtt) = template_summary(input);
    let mut report = InterpretationReport {
        text: template.clone(),
        style: SummaryStyle::Template,
        fallback_reason: None,
        metrics_json,
        flows,
        round_trip_time_s: rtt,
    };
    if style == SummaryStyle::LlmPolished {
        let Some(gateway) = gateway else {
            report.fallback_reason = Some("no gateway configured".into());
            return report;
        };
        match gateway.complete(&polish_request(&template)) {
            Ok(resp) => {
                let want = numeric_tokens(&template);
                let got = numeric_tokens(&resp.text);
                if want == got {
                    report.text = resp.text;
                    report.style = SummaryStyle::LlmPolished;
                } else {
                    let missing: Vec<_> = want.difference(&got).cloned().collect();
                    let extra: Vec<_> = got.difference(&want).cloned().collect();
                    report.fallback_reason = Some(format!(
                        "polished text changed the numbers (missing {missing:?}, added {extra:?})"
                    ));
                }
            }
            Err(e) => report.fallback_reason = Some(format!("gateway: {e}")),
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{Cassette, RecordedResponse};

    pub(crate) const ECHO_LOG: &str = "\
At time +2s client sent 1024 bytes to 10.1.2.4 port 9
At time +2.0118s server received 1024 bytes from 10.1.1.1 port 49153
At time +2.0118s server sent 1024 bytes to 10.1.1.1 port 49153
At time +2.02161s client received 1024 bytes from 10.1.2.4 port 9
";

    fn flow_xml(time_unit_ns: bool) -> String {
        let t = |s: &str, ns: &str| if time_unit_ns { format!("+{ns}ns") } else { format!("+{s}s") };
        format!(
            r#"<?xml version="1.0" ?>
<FlowMonitor>
  <FlowStats>
    <Flow flowId="1" timeFirstTxPacket="{}" timeFirstRxPacket="+1.001s" timeLastTxPacket="+1.9s" timeLastRxPacket="{}" delaySum="{}" jitterSum="{}" lastDelay="+0.005s" txBytes="130000" rxBytes="125000" txPackets="104" rxPackets="100" lostPackets="4" timesForwarded="0">
      <delayHistogram nBins="0" />
    </Flow>
  </FlowStats>
  <Ipv4FlowClassifier>
    <Flow flowId="1" sourceAddress="10.1.1.1" destinationAddress="10.1.1.2" protocol="17" sourcePort="49153" destinationPort="9" />
  </Ipv4FlowClassifier>
</FlowMonitor>"#,
            t("1.0", "1000000000.0"),
            t("2.0", "2000000000.0"),
            t("0.5", "500000000.0"),
            t("0.099", "99000000.0"),
        )
    }

    #[test]
    fn parses_and_normalizes_units() {
        let ns = parse_flowmonitor(&flow_xml(true)).unwrap();
        let s = parse_flowmonitor(&flow_xml(false)).unwrap();
        assert_eq!(ns, s);
        assert_eq!(ns.len(), 1);
        assert_eq!(ns[0].time_first_tx, 1.0);
        assert_eq!(ns[0].protocol_name(), "UDP");
    }

    #[test]
    fn metrics_by_hand() {
        let r = &parse_flowmonitor(&flow_xml(true)).unwrap()[0];
        let m = compute_metrics(r);
        // 125000 * 8 / (2.0 - 1.0)
        assert_eq!(m.throughput_bps, 1_000_000.0);
        // 0.5 / 100 and 0.099 / 99
        assert_eq!(m.mean_delay_s, Some(0.005));
        assert_eq!(m.mean_jitter_s, Some(0.001));
        assert_eq!(m.loss_ratio, 4.0 / 104.0);
    }

    #[test]
    fn degenerate_flows() {
        let mut r = parse_flowmonitor(&flow_xml(true)).unwrap().remove(0);
        r.rx_packets = 0;
        let m = compute_metrics(&r);
        assert_eq!(m.throughput_bps, 0.0);
        assert_eq!(m.mean_delay_s, None);
        assert_eq!(m.mean_jitter_s, None);
        r.rx_packets = 1;
        let m = compute_metrics(&r);
        assert!(m.mean_delay_s.is_some());
        assert_eq!(m.mean_jitter_s, None);
        r.time_last_rx = r.time_first_tx;
        assert_eq!(compute_metrics(&r).throughput_bps, 0.0);
        r.tx_packets = 0;
        assert_eq!(compute_metrics(&r).loss_ratio, 0.0);
    }

    #[test]
    fn flowmonitor_errors() {
        assert!(parse_flowmonitor("<FlowMonitor><FlowStats></FlowStats></FlowMonitor>").unwrap().is_empty());
        assert!(matches!(
            parse_flowmonitor("<FlowMonitor><FlowStats>"),
            Err(InterpretError::MalformedXml { .. })
        ));
        let no_class = flow_xml(true).replace(r#"<Flow flowId="1" sourceAddress"#, r#"<Flow flowId="2" sourceAddress"#);
        assert_eq!(parse_flowmonitor(&no_class), Err(InterpretError::MissingClassifier(1)));
        let bad_unit = flow_xml(true).replace("+500000000.0ns", "+500000000.0parsecs");
        assert!(matches!(
            parse_flowmonitor(&bad_unit),
            Err(InterpretError::UnitParseError { attribute, .. }) if attribute == "delaySum"
        ));
    }

    #[test]
    fn echo_log_timeline() {
        let log = parse_event_log(ECHO_LOG);
        assert_eq!(log.skipped, 0);
        assert_eq!(log.events.len(), 4);
        let e = &log.events[0];
        assert_eq!((e.time_s, e.actor, e.action, e.bytes), (2.0, Actor::Client, Action::Sent, 1024));
        assert_eq!((e.peer_address.as_str(), e.peer_port), ("10.1.2.4", 9));
        assert_eq!(log.events[1].time_s, 2.0118);
        assert_eq!(log.events[3].time_s, 2.02161);
        assert_eq!(round_trip_time(&log.events).unwrap().to_string(), "0.02161");
    }

    #[test]
    fn event_log_noise_and_empty() {
        assert_eq!(parse_event_log(""), EventLog::default());
        let noisy = ECHO_LOG.replacen('\n', "\nsome unrelated line\n", 1);
        let log = parse_event_log(&noisy);
        assert_eq!(log.events, parse_event_log(ECHO_LOG).events);
        assert_eq!(log.skipped, 1);
    }

    #[test]
    fn template_summaries() {
        let events = parse_event_log(ECHO_LOG).events;
        let input = InterpretInput::Timeline(events);
        let r = summarize(&input, SummaryStyle::Template, None);
        assert!(r.text.contains("Round-trip time: 0.02161 s"), "{}", r.text);
        assert!(numeric_tokens(&r.text).is_subset(&source_numbers(&input)));
        let v: serde_json::Value = serde_json::from_str(&r.metrics_json).unwrap();
        assert_eq!(v["round_trip_time_s"], "0.02161");

        let flows = InterpretInput::Flows(parse_flowmonitor(&flow_xml(true)).unwrap());
        let r = summarize(&flows, SummaryStyle::Template, None);
        assert!(r.text.contains("| 1 | 10.1.1.1:49153 | 10.1.1.2:9 | UDP | 104 | 100 | 1000000 | 0.005 | 0.001 |"));
        assert!(numeric_tokens(&r.text).is_subset(&source_numbers(&flows)));
    }

    #[test]
    fn numeric_tokens_skip_addresses() {
        let t = numeric_tokens("t=2.0118 s to 10.1.2.4 port 9, rtt 0.02161. host 10.1.1.1:49153");
        let want: BTreeSet<String> = ["2.0118", "9", "0.02161"].iter().map(|s| s.to_string()).collect();
        assert_eq!(t, want);
    }

    #[test]
    fn polished_summary_guard() {
        let input = InterpretInput::Timeline(parse_event_log(ECHO_LOG).events);
        let template = summarize(&input, SummaryStyle::Template, None).text;
        let good = "The client sent 1024 bytes at t=2 s; the echo server (port 9) handled it at 2.0118 s from client port 49153 \
                    and the reply arrived at 2.02161 s, a round trip of 0.02161 s over 4 events.";
        let mut cassette = Cassette::new();
        cassette.insert(&polish_request(&template), RecordedResponse::stop(good));
        let r = summarize(&input, SummaryStyle::LlmPolished, Some(&LlmGateway::replay(cassette)));
        assert_eq!(r.style, SummaryStyle::LlmPolished, "{:?}", r.fallback_reason);
        assert_eq!(r.text, good);

        let dropped = "The client got its echo back after 0.02161 s.";
        let mut cassette = Cassette::new();
        cassette.insert(&polish_request(&template), RecordedResponse::stop(dropped));
        let r = summarize(&input, SummaryStyle::LlmPolished, Some(&LlmGateway::replay(cassette)));
        assert_eq!(r.style, SummaryStyle::Template);
        assert_eq!(r.text, template);
        assert!(r.fallback_reason.unwrap().contains("missing"));
    }
}
