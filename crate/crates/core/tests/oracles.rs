//! Implementation outputs checked against independent straight-line
//! computations.

mod common;

use std::collections::BTreeMap;

use common::{oracle_bm25, oracle_em, oracle_f1, oracle_terms, reference_forward, rel_err};
use statedelta::codecs::{encode_sde, reconstruct_states, serialize, LayerRows, WireDType};
use statedelta::environment::{build_index, retrieve, Corpus, Document};
use statedelta::evalkit::{exact_match, token_f1};
use statedelta::lab::fixture_corpus;
use statedelta::model::{
    token_inputs, DecodeSession, DecodeSettings, GenerateOptions, HiddenState, HookBus,
    InjectionPlan, ModelConfig, Tokenizer, ToyModel,
};
use statedelta::scalar::Scalar;
use statedelta::DType;

fn prompt_ids(n: usize) -> Vec<u32> {
    let tok = Tokenizer::for_vocab(512).unwrap();
    let mut ids =
        tok.encode("The Vell River flows for about 300 kilometres before it reaches the Grey Sea.");
    ids.truncate(n);
    ids
}

fn plan_for(d: usize) -> (InjectionPlan, BTreeMap<(usize, usize), Vec<f32>>) {
    let mut plan = InjectionPlan::new();
    let mut map = BTreeMap::new();
    for (layer, pos) in [(1usize, 3usize), (1, 4), (2, 4), (0, 9)] {
        let v: Vec<f32> = (0..d)
            .map(|j| ((layer * 31 + pos * 7 + j) % 11) as f32 * 0.25 - 1.25)
            .collect();
        plan.insert(layer, pos, HiddenState::new(v.clone()));
        map.insert((layer, pos), v);
    }
    (plan, map)
}

fn check_against_reference<S: Scalar>(model: &ToyModel<S>, cfg: &ModelConfig, tol: f64) {
    let ids = prompt_ids(14);
    let (plan, map) = plan_for(cfg.d_model);
    for (hooks, inject) in [
        (HookBus::new(), BTreeMap::new()),
        (HookBus::new().with_plan(plan), map),
    ] {
        let trace = model
            .new_session()
            .trace(&token_inputs(&ids), &hooks)
            .unwrap();
        let reference = reference_forward(model.weights(), cfg, &ids, &inject);
        for (p, layers) in trace.layer_states.iter().enumerate() {
            for (l, h) in layers.iter().enumerate() {
                let want: Vec<f32> = reference.states[p][l].iter().map(|&x| x as f32).collect();
                let e = rel_err(h, &want);
                assert!(e < tol, "state pos {p} layer {l}: rel err {e}");
            }
            let want: Vec<f32> = reference.logits[p].iter().map(|&x| x as f32).collect();
            let e = rel_err(&trace.logits[p], &want);
            assert!(e < tol, "logits pos {p}: rel err {e}");
        }
    }
}

#[test]
fn f64_forward_matches_full_recompute() {
    let cfg = ModelConfig::new(4, 16, 4, 512, 64).with_dtype(DType::F64);
    let model = ToyModel::<f64>::seeded(cfg.clone(), 3).unwrap();
    // states are stored as f32, which bounds agreement near 1e-7
    check_against_reference(&model, &cfg, 1e-6);
}

#[test]
fn f32_forward_matches_full_recompute() {
    let cfg = ModelConfig::new(3, 24, 3, 512, 64);
    let model = ToyModel::<f32>::seeded(cfg.clone(), 11).unwrap();
    check_against_reference(&model, &cfg, 1e-4);
}

#[test]
fn cached_generation_matches_recompute_of_full_sequence() {
    let cfg = ModelConfig::new(2, 16, 2, 512, 64).with_dtype(DType::F64);
    let model = ToyModel::<f64>::seeded(cfg.clone(), 5).unwrap();
    let prompt = prompt_ids(6);
    let opts = GenerateOptions {
        record_distributions: true,
        ..Default::default()
    };
    let rec = model
        .new_session()
        .generate(
            &token_inputs(&prompt),
            &DecodeSettings::greedy(8),
            &HookBus::capturing([0, 1]),
            &opts,
        )
        .unwrap();
    let mut all = prompt.clone();
    all.extend(&rec.tokens);
    let reference = reference_forward(model.weights(), &cfg, &all, &BTreeMap::new());
    // the token at step i is the argmax of the logits at the position before it
    for (i, &t) in rec.tokens.iter().enumerate() {
        let row = &reference.logits[prompt.len() - 1 + i];
        let best = (0..row.len())
            .max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a)))
            .unwrap();
        assert_eq!(best as u32, t, "step {i}");
    }
    for (layer, traj) in &rec.trajectories {
        for (i, h) in traj.states.iter().enumerate() {
            let want: Vec<f32> = reference.states[prompt.len() - 1 + i][*layer]
                .iter()
                .map(|&x| x as f32)
                .collect();
            assert!(rel_err(h, &want) < 1e-6);
        }
    }
}

#[test]
fn telescoping_matches_running_sum_oracle() {
    let cfg = ModelConfig::new(4, 16, 2, 512, 256);
    let model = ToyModel::<f32>::seeded(cfg, 9).unwrap();
    let rec = model
        .new_session()
        .generate(
            &token_inputs(&prompt_ids(10)),
            &DecodeSettings::greedy(24),
            &HookBus::capturing(0..4),
            &GenerateOptions::default(),
        )
        .unwrap();
    for traj in rec.trajectories.values() {
        let deltas = encode_sde(traj).unwrap();
        assert_eq!(deltas.len(), traj.states.len() - 1);
        for (i, s) in deltas.deltas().iter().enumerate() {
            for j in 0..s.len() {
                assert_eq!(s[j], traj.states[i + 1][j] - traj.states[i][j]);
            }
        }
        let rebuilt = reconstruct_states(&traj.states[0], &deltas);
        let mut acc: Vec<f64> = traj.states[0].iter().map(|&x| x as f64).collect();
        for (k, h) in traj.states.iter().enumerate() {
            if k > 0 {
                acc.iter_mut()
                    .zip(deltas.deltas()[k - 1].iter())
                    .for_each(|(a, &x)| *a += x as f64);
            }
            let oracle: Vec<f32> = acc.iter().map(|&x| x as f32).collect();
            assert!(rel_err(&rebuilt[k], h) < 1e-5);
            assert!(rel_err(&oracle, h) < 1e-5);
        }
    }
}

#[test]
fn bm25_matches_formula_on_fixture_corpus() {
    let corpus = fixture_corpus();
    let index = build_index(&corpus).unwrap();
    let docs: Vec<Vec<String>> = corpus
        .docs()
        .iter()
        .map(|d| oracle_terms(&format!("{} {}", d.title, d.text)))
        .collect();
    for query in [
        "Vell River Grey Sea",
        "founded town market market",
        "film directed festival score",
        "zzz",
    ] {
        let q = oracle_terms(query);
        let scores = oracle_bm25(&docs, &q);
        let hits = retrieve(&index, query, 20);
        let mut order: Vec<usize> = (0..docs.len()).filter(|&i| scores[i] > 0.0).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        order.truncate(20);
        assert_eq!(hits.len(), order.len(), "{query}");
        for (h, &i) in hits.iter().zip(&order) {
            assert!(
                (h.score - scores[i]).abs() < 1e-9,
                "{query}: {} vs {}",
                h.score,
                scores[i]
            );
            assert!((h.score - scores[h.index]).abs() < 1e-9);
        }
    }
}

#[test]
fn bm25_index_statistics() {
    let corpus = Corpus::new(vec![
        Document::new("a", "Lake", "lake lake shore"),
        Document::new("b", "Shore", "shore town"),
    ])
    .unwrap();
    let index = build_index(&corpus).unwrap();
    assert_eq!(index.doc_len(0), 4);
    assert_eq!(index.doc_len(1), 3);
    assert!((index.avg_len() - 3.5).abs() < 1e-12);
    assert_eq!(index.doc_freq("shore"), 2);
    let want = ((2.0f64 - 1.0 + 0.5) / (1.0 + 0.5) + 1.0).ln();
    assert!((index.idf("lake") - want).abs() < 1e-12);
}

#[test]
fn metrics_match_oracle_on_fixture_answers() {
    let questions = statedelta::lab::fixture_questions();
    for q in &questions {
        for c in &q.choices {
            let gold = &q.answers[0];
            assert_eq!(exact_match(c, &q.answers), oracle_em(c, gold));
            assert!(
                (token_f1(c, &q.answers) - oracle_f1(c, gold)).abs() < 1e-12,
                "{c} vs {gold}"
            );
        }
    }
}

#[test]
fn wire_size_formula() {
    for (layers, n, d, dtype, width) in [
        (1usize, 1usize, 1usize, WireDType::F32, 4usize),
        (2, 4, 8, WireDType::F32, 4),
        (3, 5, 6, WireDType::F16, 2),
    ] {
        let rows: Vec<LayerRows> = (0..layers)
            .map(|l| LayerRows {
                layer: l as u16,
                rows: vec![HiddenState::zeros(d); n],
            })
            .collect();
        let packet = serialize(&rows, dtype).unwrap();
        assert_eq!(packet.payload_len(), layers * n * d * width);
        assert_eq!(
            packet.to_bytes().len(),
            17 + 2 * layers + layers * n * d * width
        );
    }
}
