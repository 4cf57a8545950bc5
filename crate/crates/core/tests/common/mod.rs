//! Strategies shared by the property tests.

#![allow(dead_code)]

use std::collections::HashMap;

use proptest::prelude::*;

use genonet_core::codegen::supported_combinations;
use genonet_core::retrieval::KnowledgeIndex;
use genonet_core::scenario::{Beamforming, ChannelModel, HelperStack, ScenarioSpec, TrafficProfile, Transport};

/// Valid specs whose magnitudes have short decimal spellings.
pub fn valid_spec() -> impl Strategy<Value = ScenarioSpec> {
    (
        (500u64..=100_000, 1u64..=2_000_000, 1u32..=16, 0u8..=4),
        (1u32..=64, 1u32..=500, 1u32..=6000),
        (
            prop::sample::select(ChannelModel::ALL),
            prop::sample::select(TrafficProfile::ALL),
            prop::sample::select(Transport::ALL),
            prop::sample::select(Beamforming::ALL),
            prop::sample::select(HelperStack::ALL),
        ),
    )
        .prop_map(|((mhz, khz, cc, mu), (gnb, ue, tenths), (ch, tp, tr, bf, hs))| ScenarioSpec {
            frequency_hz: mhz as f64 * 1e6,
            bandwidth_hz: khz as f64 * 1e3,
            cc_count: cc,
            numerology: mu,
            gnb_count: gnb,
            ue_count: ue,
            channel_model: ch,
            traffic_profile: tp,
            transport: tr,
            beamforming: bf,
            sim_duration_s: f64::from(tenths) / 10.0,
            helper_stack: hs,
        })
}

/// Valid specs restricted to a combination with a scaffold template.
pub fn scaffoldable_spec() -> impl Strategy<Value = ScenarioSpec> {
    let combos = supported_combinations();
    (valid_spec(), 0..combos.len()).prop_map(move |(mut spec, i)| {
        let c = combos[i];
        spec.helper_stack = c.helper_stack;
        spec.traffic_profile = c.traffic_profile;
        spec.transport = c.transport;
        spec
    })
}

pub fn fixtures() -> std::path::PathBuf {
    std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

/// Brute-force BM25 straight from the chunk texts.
pub fn bm25_oracle(index: &KnowledgeIndex, query: &str, k: usize) -> Vec<(String, f64)> {
    let tokens = |t: &str| -> Vec<String> {
        t.split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(|w| w.to_lowercase())
            .collect()
    };
    let docs: Vec<(String, Vec<String>)> = index.chunks().map(|c| (c.chunk_id.clone(), tokens(&c.text))).collect();
    let n = docs.len() as f64;
    let avgdl = docs.iter().map(|(_, t)| t.len()).sum::<usize>() as f64 / n;
    let mut terms: Vec<String> = Vec::new();
    for t in tokens(query) {
        if !terms.contains(&t) {
            terms.push(t);
        }
    }
    let (k1, b) = (1.2, 0.75);
    let mut scored: Vec<(String, f64)> = docs
        .iter()
        .map(|(id, toks)| {
            let mut tf: HashMap<&str, f64> = HashMap::new();
            for t in toks {
                *tf.entry(t).or_default() += 1.0;
            }
            let score = terms
                .iter()
                .filter_map(|t| tf.get(t.as_str()).map(|f| (t, *f)))
                .map(|(t, f)| {
                    let df = docs.iter().filter(|(_, d)| d.contains(t)).count() as f64;
                    let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                    idf * f * (k1 + 1.0) / (f + k1 * (1.0 - b + b * toks.len() as f64 / avgdl))
                })
                .sum::<f64>();
            (id.clone(), score)
        })
        .filter(|(_, s)| *s > 0.0)
        .collect();
    scored.sort_by(|x, y| y.1.total_cmp(&x.1).then_with(|| x.0.cmp(&y.0)));
    scored.truncate(k);
    scored
}
