//! Property tests for the invariants of the codecs, metrics, environment
//! and layer selection.

mod common;

use proptest::prelude::*;
use statedelta::codecs::{
    deserialize, encode_sde, reconstruct_states, serialize, HiddenStateTrajectory, LayerRows,
    WireDType, WireExpect, WirePacket,
};
use statedelta::environment::{parse_action, shard_docs};
use statedelta::evalkit::{exact_match, normalize, token_f1};
use statedelta::lab::{rank_and_select, rank_layers, LayerScore, LayerScoreTable, RankKey};
use statedelta::model::{HiddenState, InjectionPlan};

fn finite() -> impl Strategy<Value = f32> {
    prop_oneof![
        -1e3f32..1e3,
        Just(0.0f32),
        Just(-0.0f32),
        Just(f32::MIN_POSITIVE),
        Just(1e-30f32)
    ]
}

fn layer_rows() -> impl Strategy<Value = Vec<LayerRows>> {
    (1usize..4, 1usize..6, 1usize..9).prop_flat_map(|(n_layers, n_tokens, d)| {
        (
            proptest::sample::subsequence((0u16..40).collect::<Vec<_>>(), n_layers),
            proptest::collection::vec(proptest::collection::vec(finite(), d), n_layers * n_tokens),
        )
            .prop_map(move |(layers, flat)| {
                layers
                    .iter()
                    .enumerate()
                    .map(|(i, &layer)| LayerRows {
                        layer,
                        rows: flat[i * n_tokens..(i + 1) * n_tokens]
                            .iter()
                            .cloned()
                            .map(HiddenState::new)
                            .collect(),
                    })
                    .collect()
            })
    })
}

fn expect_of(rows: &[LayerRows]) -> WireExpect {
    WireExpect::new(
        rows.iter().map(|r| r.layer).collect(),
        rows[0].rows[0].len() as u32,
    )
}

fn words() -> impl Strategy<Value = String> {
    proptest::collection::vec(
        prop_oneof![
            Just("the".to_string()),
            Just("A".to_string()),
            Just("river,".to_string()),
            Just("Bloomington".to_string()),
            Just("indiana".to_string()),
            "[a-zA-Z0-9.!'-]{1,6}",
        ],
        0..7,
    )
    .prop_map(|w| w.join(" "))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn wire_roundtrip_is_bit_exact(rows in layer_rows()) {
        let packet = serialize(&rows, WireDType::F32).unwrap();
        let bytes = packet.to_bytes();
        let parsed = WirePacket::parse(&bytes, &expect_of(&rows)).unwrap();
        prop_assert_eq!(&parsed, &packet);
        let back = deserialize(&parsed).unwrap();
        prop_assert_eq!(back.len(), rows.len());
        for (a, b) in back.iter().zip(&rows) {
            prop_assert_eq!(a.layer, b.layer);
            for (x, y) in a.rows.iter().zip(&b.rows) {
                let xb: Vec<u32> = x.iter().map(|v| v.to_bits()).collect();
                let yb: Vec<u32> = y.iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(xb, yb);
            }
        }
    }

    #[test]
    fn any_header_byte_change_is_rejected(rows in layer_rows(), pick in any::<prop::sample::Index>(), flip in 1u8..=255) {
        let bytes = serialize(&rows, WireDType::F32).unwrap().to_bytes();
        let header = 17 + 2 * rows.len();
        let at = pick.index(header);
        let mut bad = bytes.clone();
        bad[at] ^= flip;
        prop_assert!(WirePacket::parse(&bad, &expect_of(&rows)).is_err(), "byte {} ^ {:#x} accepted", at, flip);
    }

    #[test]
    fn truncation_is_rejected(rows in layer_rows(), cut in any::<prop::sample::Index>()) {
        let bytes = serialize(&rows, WireDType::F32).unwrap().to_bytes();
        let n = cut.index(bytes.len());
        prop_assert!(WirePacket::parse(&bytes[..n], &expect_of(&rows)).is_err());
    }

    #[test]
    fn telescoping_reconstructs_trajectory(states in proptest::collection::vec(proptest::collection::vec(-50f32..50.0, 6), 1..40)) {
        let traj = HiddenStateTrajectory { layer: 0, states: states.iter().cloned().map(HiddenState::new).collect() };
        let deltas = encode_sde(&traj).unwrap();
        prop_assert_eq!(deltas.len(), states.len() - 1);
        let rebuilt = reconstruct_states(&traj.states[0], &deltas);
        prop_assert_eq!(rebuilt.len(), states.len());
        for (r, h) in rebuilt.iter().zip(&traj.states) {
            let err: f32 = r.iter().zip(h.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
            let scale = h.iter().fold(1.0f32, |m, x| m.max(x.abs()));
            prop_assert!(err <= 1e-5 * scale * states.len() as f32);
        }
    }

    #[test]
    fn plan_and_negation_cancel(values in proptest::collection::vec(-10f32..10.0, 4), pos in 0usize..20) {
        let mut plan = InjectionPlan::new();
        plan.insert(1, pos, HiddenState::new(values.clone()));
        let neg = plan.negated();
        let sum: Vec<f32> = plan.get(1, pos).unwrap().iter().zip(neg.get(1, pos).unwrap().iter()).map(|(a, b)| a + b).collect();
        prop_assert!(sum.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn normalize_is_idempotent(text in words()) {
        let once = normalize(&text);
        prop_assert_eq!(normalize(&once), once.clone());
        prop_assert_eq!(once, common::oracle_normalize(&text));
    }

    #[test]
    fn f1_is_symmetric_and_bounded(a in words(), b in words()) {
        let ab = token_f1(&a, std::slice::from_ref(&b));
        let ba = token_f1(&b, std::slice::from_ref(&a));
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((ab - common::oracle_f1(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn exact_match_implies_full_f1(a in words(), b in words()) {
        if exact_match(&a, std::slice::from_ref(&b)) == 1.0 {
            prop_assert_eq!(token_f1(&a, &[b]), 1.0);
        }
        prop_assert_eq!(exact_match(&a, std::slice::from_ref(&a)), 1.0);
    }

    #[test]
    fn action_parser_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..200)) {
        let text = String::from_utf8_lossy(&bytes);
        let _ = parse_action(&text);
        let _ = parse_action(&format!("Action 1: {text}"));
    }

    #[test]
    fn action_parser_handles_brackets(inner in "[A-Za-z \\[\\]]{0,30}", kind in prop_oneof![Just("Search"), Just("Lookup"), Just("Finish"), Just("Jump")]) {
        let _ = parse_action(&format!("Thought: x\nAction 2: {kind}[{inner}]"));
    }

    #[test]
    fn shards_partition_the_ranking(n in 0usize..40) {
        let ranked: Vec<usize> = (0..n).collect();
        let (a, b) = shard_docs(&ranked);
        prop_assert_eq!(a.len(), n.div_ceil(2));
        prop_assert_eq!(b.len(), n / 2);
        let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
        all.sort();
        prop_assert_eq!(all, ranked);
        prop_assert!(a.iter().all(|i| i % 2 == 0) && b.iter().all(|i| i % 2 == 1));
    }

    #[test]
    fn selection_is_order_independent(scores in proptest::collection::vec((0u32..20, 0u32..20), 1..30), seed in any::<u64>()) {
        let rows: Vec<LayerScore> = scores.iter().enumerate().map(|(l, &(e, f))| LayerScore::new(l, e as f64 / 20.0, f as f64 / 20.0)).collect();
        let mut shuffled = rows.clone();
        let len = shuffled.len();
        // deterministic permutation from the seed
        for i in (1..len).rev() {
            let j = (seed.wrapping_mul(6364136223846793005).wrapping_add(i as u64) >> 33) as usize % (i + 1);
            shuffled.swap(i, j);
        }
        let n_layers = rows.len().max(16);
        for key in [RankKey::F1HalfEm, RankKey::EmPlusF1] {
            let a = rank_and_select(&LayerScoreTable::new(rows.clone()).unwrap(), n_layers, key, None).unwrap();
            let b = rank_and_select(&LayerScoreTable::new(shuffled.clone()).unwrap(), n_layers, key, None).unwrap();
            prop_assert_eq!(&a, &b);
            let best = rows.iter().map(|r| key.value(r)).fold(f64::NEG_INFINITY, f64::max);
            let ranked = rank_layers(&LayerScoreTable::new(shuffled.clone()).unwrap(), key);
            prop_assert_eq!(key.value(&ranked[0]), best);
            prop_assert!(a.layers.contains(&ranked[0].layer));
        }
    }
}
