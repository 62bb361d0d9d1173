//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use statedelta::model::{ModelConfig, Tensor, TokenId, Weights};
use statedelta::scalar::Scalar;

/// Straight-line transformer forward over a whole sequence, recomputing
/// attention from scratch for every position and adding `inject[(layer,
/// pos)]` after each block. Returns `states[pos][layer]` and `logits[pos]`.
pub struct Reference {
    pub states: Vec<Vec<Vec<f64>>>,
    pub logits: Vec<Vec<f64>>,
}

fn vecmat<S: Scalar>(x: &[f64], w: &Tensor<S>) -> Vec<f64> {
    let (rows, cols) = (w.shape()[0], w.shape()[1]);
    assert_eq!(x.len(), rows);
    (0..cols)
        .map(|c| {
            (0..rows)
                .map(|r| x[r] * w.data()[r * cols + c].to_f64().unwrap())
                .sum()
        })
        .collect()
}

fn rms<S: Scalar>(x: &[f64], g: &Tensor<S>, eps: f64) -> Vec<f64> {
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let inv = 1.0 / (ms + eps).sqrt();
    x.iter()
        .zip(g.data())
        .map(|(v, w)| v * inv * w.to_f64().unwrap())
        .collect()
}

pub fn reference_forward<S: Scalar>(
    w: &Weights<S>,
    cfg: &ModelConfig,
    tokens: &[TokenId],
    inject: &BTreeMap<(usize, usize), Vec<f32>>,
) -> Reference {
    let (n, d, nh) = (tokens.len(), cfg.d_model, cfg.n_heads);
    let dh = d / nh;
    let mut x: Vec<Vec<f64>> = tokens
        .iter()
        .enumerate()
        .map(|(p, &t)| {
            (0..d)
                .map(|j| {
                    w.tok_embed.row(t as usize)[j].to_f64().unwrap()
                        + w.pos_embed.row(p)[j].to_f64().unwrap()
                })
                .collect()
        })
        .collect();
    let mut states = vec![Vec::new(); n];
    for (l, lw) in w.layers.iter().enumerate() {
        let h: Vec<Vec<f64>> = x
            .iter()
            .map(|r| rms(r, &lw.attn_norm, cfg.norm_eps))
            .collect();
        let q: Vec<Vec<f64>> = h.iter().map(|r| vecmat(r, &lw.wq)).collect();
        let k: Vec<Vec<f64>> = h.iter().map(|r| vecmat(r, &lw.wk)).collect();
        let v: Vec<Vec<f64>> = h.iter().map(|r| vecmat(r, &lw.wv)).collect();
        for i in 0..n {
            let mut attn = vec![0.0; d];
            for head in 0..nh {
                let cols = head * dh..(head + 1) * dh;
                let logits: Vec<f64> = (0..=i)
                    .map(|j| {
                        cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt()
                    })
                    .collect();
                let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = logits.iter().map(|s| (s - max).exp()).collect();
                let z: f64 = e.iter().sum();
                for c in cols {
                    attn[c] = (0..=i).map(|j| e[j] / z * v[j][c]).sum();
                }
            }
            let o = vecmat(&attn, &lw.wo);
            // x holds the input of this layer for every later position, so
            // the update goes to a copy
            let mut xi: Vec<f64> = x[i].iter().zip(&o).map(|(a, b)| a + b).collect();
            let up: Vec<f64> = vecmat(&rms(&xi, &lw.mlp_norm, cfg.norm_eps), &lw.w_up)
                .into_iter()
                .map(|u| u / (1.0 + (-u).exp()))
                .collect();
            let down = vecmat(&up, &lw.w_down);
            xi.iter_mut().zip(&down).for_each(|(a, b)| *a += b);
            if let Some(delta) = inject.get(&(l, i)) {
                xi.iter_mut().zip(delta).for_each(|(a, &b)| *a += b as f64);
            }
            states[i].push(xi);
        }
        x = states.iter().map(|s| s[l].clone()).collect();
    }
    let logits = x
        .iter()
        .map(|r| vecmat(&rms(r, &w.final_norm, cfg.norm_eps), &w.lm_head))
        .collect();
    Reference { states, logits }
}

/// Answer normalisation written as a character scan.
pub fn oracle_normalize(text: &str) -> String {
    let mut words: Vec<String> = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        for c in ch.to_lowercase() {
            if c.is_whitespace() {
                if !cur.is_empty() {
                    words.push(std::mem::take(&mut cur));
                }
            } else if !(c.is_ascii() && (c.is_ascii_punctuation())) {
                cur.push(c);
            }
        }
    }
    if !cur.is_empty() {
        words.push(cur);
    }
    words.retain(|w| w != "a" && w != "an" && w != "the");
    words.join(" ")
}

/// Token-multiset F1 via sorted-list intersection.
pub fn oracle_f1(pred: &str, gold: &str) -> f64 {
    let mut p: Vec<String> = oracle_normalize(pred)
        .split(' ')
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect();
    let mut g: Vec<String> = oracle_normalize(gold)
        .split(' ')
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect();
    if p.is_empty() && g.is_empty() {
        return 1.0;
    }
    if p.is_empty() || g.is_empty() {
        return 0.0;
    }
    p.sort();
    g.sort();
    let (mut i, mut j, mut common) = (0, 0, 0usize);
    while i < p.len() && j < g.len() {
        match p[i].cmp(&g[j]) {
            std::cmp::Ordering::Equal => {
                common += 1;
                i += 1;
                j += 1;
            }
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
        }
    }
    if common == 0 {
        return 0.0;
    }
    let pr = common as f64 / p.len() as f64;
    let rc = common as f64 / g.len() as f64;
    2.0 * pr * rc / (pr + rc)
}

pub fn oracle_em(pred: &str, gold: &str) -> f64 {
    if oracle_normalize(pred) == oracle_normalize(gold) {
        1.0
    } else {
        0.0
    }
}

/// Okapi BM25 (k1 = 1.2, b = 0.75, idf = ln((N - df + 0.5)/(df + 0.5) + 1))
/// evaluated directly from raw term lists.
pub fn oracle_bm25(docs: &[Vec<String>], query: &[String]) -> Vec<f64> {
    let n = docs.len() as f64;
    let avg = docs.iter().map(Vec::len).sum::<usize>() as f64 / n;
    let mut q = query.to_vec();
    q.sort();
    q.dedup();
    docs.iter()
        .map(|doc| {
            q.iter()
                .map(|t| {
                    let df = docs.iter().filter(|d| d.contains(t)).count() as f64;
                    let tf = doc.iter().filter(|w| *w == t).count() as f64;
                    let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
                    idf * tf * 2.2 / (tf + 1.2 * (0.25 + 0.75 * doc.len() as f64 / avg))
                })
                .sum()
        })
        .collect()
}

/// Euclidean norm of `a - b` over the norm of `b`.
pub fn rel_err(a: &[f32], b: &[f32]) -> f64 {
    let num: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (*x as f64 - *y as f64).powi(2))
        .sum::<f64>()
        .sqrt();
    let den: f64 = b.iter().map(|y| (*y as f64).powi(2)).sum::<f64>().sqrt();
    num / den.max(1e-30)
}

/// Lowercased alphanumeric runs, by character scan.
pub fn oracle_terms(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            cur.extend(c.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}
