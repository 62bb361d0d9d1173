use serde::{Deserialize, Serialize};

use super::normalize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerFormat {
    /// `\boxed{...}`
    Boxed,
    /// `(X)` with `X` an uppercase letter.
    Choice,
    /// `Finish[...]`
    Finish,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedAnswer {
    pub raw: String,
    pub normalized: String,
    pub format: AnswerFormat,
}

/// Body of the last `open ... close` group, honoring nesting.
fn last_delimited(text: &str, open: &str, lhs: char, rhs: char) -> Option<String> {
    let mut from = text.len();
    while let Some(start) = text[..from].rfind(open) {
        let body = &text[start + open.len()..];
        let mut depth = 1usize;
        for (i, c) in body.char_indices() {
            if c == lhs {
                depth += 1;
            } else if c == rhs {
                depth -= 1;
                if depth == 0 {
                    return Some(body[..i].to_string());
                }
            }
        }
        from = start;
    }
    None
}

fn last_choice(text: &str) -> Option<String> {
    let b = text.as_bytes();
    (0..b.len().saturating_sub(2))
        .rev()
        .find(|&i| b[i] == b'(' && b[i + 1].is_ascii_uppercase() && b[i + 2] == b')')
        .map(|i| (b[i + 1] as char).to_string())
}

/// Last answer of the given format in `text`; unterminated markers are ignored.
pub fn extract_answer(text: &str, format: AnswerFormat) -> Option<ExtractedAnswer> {
    let raw = match format {
        AnswerFormat::Boxed => last_delimited(text, "\\boxed{", '{', '}'),
        AnswerFormat::Finish => last_delimited(text, "Finish[", '[', ']'),
        AnswerFormat::Choice => last_choice(text),
    }?;
    let raw = raw.trim().to_string();
    Some(ExtractedAnswer {
        normalized: normalize(&raw),
        raw,
        format,
    })
}
