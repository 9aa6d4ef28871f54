//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use vocab_pareto::{ArchitectureProfile, ComponentFlops, FrequencyTable, TokenId};

/// Deterministic corpus with a few malformed lines, plus an independent tally
/// of what the pipeline should count.
pub struct Fixture {
    pub text: String,
    pub records: u64,
    pub spans: u64,
    pub counts: BTreeMap<TokenId, u64>,
}

pub fn fixture() -> Fixture {
    let mut state = 0x2545_f491_4f6c_dd1du64;
    let mut next = move |m: u64| {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state % m
    };
    let roles = ["system", "user", "assistant", "tool", "critic"];
    let mut text = String::new();
    let mut fx = Fixture {
        text: String::new(),
        records: 0,
        spans: 0,
        counts: BTreeMap::new(),
    };
    for i in 0..1000 {
        if i % 250 == 17 {
            text.push_str("{\"messages\": [ truncated\n");
            continue;
        }
        let mut msgs = Vec::new();
        for _ in 0..1 + next(5) {
            let role = roles[next(5) as usize];
            let toks: Vec<u64> = (0..next(20)).map(|_| next(500)).collect();
            if role == "assistant" {
                fx.spans += 1;
                for &t in &toks {
                    *fx.counts.entry(t as TokenId).or_default() += 1;
                }
            }
            let list: Vec<String> = toks.iter().map(u64::to_string).collect();
            msgs.push(format!(
                r#"{{"role":"{role}","tokens":[{}]}}"#,
                list.join(",")
            ));
        }
        fx.records += 1;
        text.push_str(&format!("{{\"messages\":[{}]}}\n", msgs.join(",")));
    }
    fx.text = text;
    fx
}

/// V = 10, d = 4, fixed FLOPs 8: the hand-worked example where the best
/// vocabulary at alpha = 0.5 keeps the three observed tokens.
pub fn toy_profile() -> ArchitectureProfile {
    ArchitectureProfile::new(
        "toy",
        4,
        10,
        1,
        ComponentFlops {
            feature_fusion: 2,
            attention: 3,
            ffn: 3,
        },
    )
    .unwrap()
}

pub fn toy_table() -> FrequencyTable {
    FrequencyTable::from_counts(10, [(5, 3), (7, 2), (9, 1)]).unwrap()
}

pub const TOY_PROFILE_JSON: &str = r#"{"name":"toy","hidden_dim":4,"vocab_size":10,"fused_layers":1,"flops":{"feature_fusion":2,"attention":3,"ffn":3}}"#;
