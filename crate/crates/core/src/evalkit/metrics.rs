use std::collections::HashMap;

/// Lowercase, strip ASCII punctuation, drop the articles a/an/the and
/// collapse whitespace.
pub fn normalize(text: &str) -> String {
    let lowered = text.to_lowercase();
    let no_punct: String = lowered
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    no_punct
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// 1.0 when the normalized prediction equals any normalized gold.
pub fn exact_match(pred: &str, golds: &[String]) -> f64 {
    let p = normalize(pred);
    if golds.iter().any(|g| normalize(g) == p) {
        1.0
    } else {
        0.0
    }
}

fn f1_pair(pred: &str, gold: &str) -> f64 {
    let p: Vec<&str> = pred.split_whitespace().collect();
    let g: Vec<&str> = gold.split_whitespace().collect();
    if p.is_empty() || g.is_empty() {
        return if p.is_empty() && g.is_empty() {
            1.0
        } else {
            0.0
        };
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for w in &g {
        *counts.entry(w).or_default() += 1;
    }
    let mut common = 0usize;
    for w in &p {
        if let Some(c) = counts.get_mut(w) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / p.len() as f64;
    let recall = common as f64 / g.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Maximum over golds of the token-multiset F1 of normalized strings.
pub fn token_f1(pred: &str, golds: &[String]) -> f64 {
    let p = normalize(pred);
    golds
        .iter()
        .map(|g| f1_pair(&p, &normalize(g)))
        .fold(0.0, f64::max)
}

/// Reads a number written with optional `$`, thousands separators, a
/// trailing period or a trailing unit word.
pub fn parse_number(text: &str) -> Option<f64> {
    let t = text.trim().trim_end_matches('.');
    let first = t.split_whitespace().next()?;
    let cleaned: String = first.chars().filter(|&c| c != ',' && c != '$').collect();
    cleaned.parse::<f64>().ok().filter(|x| x.is_finite())
}
