use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EnvError;

const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "st", "mt", "jr", "sr", "no", "vs", "etc", "e.g", "i.e",
    "inc", "ltd", "co", "corp", "approx", "u.s", "u.k", "jan", "feb", "mar", "apr", "jun", "jul",
    "aug", "sep", "sept", "oct", "nov", "dec",
];

/// Sentences of `text`, split after `.`, `!` or `?` followed by whitespace
/// and at line breaks. A period closing a known abbreviation or a single
/// capital initial does not end a sentence.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for line in text.lines() {
        let mut current = String::new();
        let chars: Vec<char> = line.chars().collect();
        for (i, &c) in chars.iter().enumerate() {
            current.push(c);
            let at_break =
                matches!(c, '.' | '!' | '?') && chars.get(i + 1).is_some_and(|n| n.is_whitespace());
            if !at_break {
                continue;
            }
            if c == '.' {
                let word = current[..current.len() - 1]
                    .rsplit(char::is_whitespace)
                    .next()
                    .unwrap_or("");
                let lw = word.trim_start_matches(['(', '"', '\'']).to_lowercase();
                let initial = lw.chars().count() == 1 && word.chars().all(char::is_uppercase);
                if initial || ABBREVIATIONS.contains(&lw.as_str()) {
                    continue;
                }
            }
            let s = current.trim();
            if !s.is_empty() {
                out.push(s.to_string());
            }
            current.clear();
        }
        let s = current.trim();
        if !s.is_empty() {
            out.push(s.to_string());
        }
    }
    out
}

/// Raw corpus line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct DocumentRecord {
    id: String,
    title: String,
    text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub text: String,
    paragraphs: Vec<String>,
    sentences: Vec<String>,
}

impl Document {
    /// Paragraphs are separated by blank lines.
    pub fn new(id: impl Into<String>, title: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        let paragraphs: Vec<String> = text
            .split("\n\n")
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(String::from)
            .collect();
        let sentences = paragraphs.iter().flat_map(|p| split_sentences(p)).collect();
        Self {
            id: id.into(),
            title: title.into(),
            text,
            paragraphs,
            sentences,
        }
    }

    pub fn paragraphs(&self) -> &[String] {
        &self.paragraphs
    }

    pub fn first_paragraph(&self) -> &str {
        self.paragraphs.first().map_or("", String::as_str)
    }

    pub fn sentences(&self) -> &[String] {
        &self.sentences
    }
}

fn title_key(title: &str) -> String {
    title
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    docs: Vec<Document>,
    by_title: HashMap<String, usize>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    /// Ids must be unique and texts non-empty. The first document wins a
    /// title collision.
    pub fn new(docs: Vec<Document>) -> Result<Self, EnvError> {
        let mut by_title = HashMap::new();
        let mut by_id = HashMap::new();
        for (i, d) in docs.iter().enumerate() {
            if d.paragraphs.is_empty() {
                return Err(EnvError::Malformed {
                    line: i + 1,
                    reason: format!("document `{}` has empty text", d.id),
                });
            }
            if by_id.insert(d.id.clone(), i).is_some() {
                return Err(EnvError::DuplicateId(d.id.clone()));
            }
            by_title.entry(title_key(&d.title)).or_insert(i);
        }
        Ok(Self {
            docs,
            by_title,
            by_id,
        })
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&Document> {
        self.docs.get(index)
    }

    pub fn by_id(&self, id: &str) -> Option<&Document> {
        self.by_id.get(id).map(|&i| &self.docs[i])
    }

    /// Index of the document titled `title`, ignoring case and spacing.
    pub fn find_title(&self, title: &str) -> Option<usize> {
        self.by_title.get(&title_key(title)).copied()
    }
}

/// Parses a line-delimited corpus. Blank lines are skipped.
pub fn read_corpus(reader: impl BufRead) -> Result<Corpus, EnvError> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| EnvError::Malformed {
            line: i + 1,
            reason,
        };
        let r: DocumentRecord =
            serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        if r.id.is_empty() {
            return Err(malformed("empty id".into()));
        }
        if r.text.trim().is_empty() {
            return Err(malformed(format!("document `{}` has empty text", r.id)));
        }
        if !seen.insert(r.id.clone()) {
            return Err(malformed(format!("duplicate id `{}`", r.id)));
        }
        docs.push(Document::new(r.id, r.title, r.text));
    }
    Corpus::new(docs)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, EnvError> {
    read_corpus(std::io::BufReader::new(std::fs::File::open(path)?))
}

pub fn write_corpus(corpus: &Corpus, mut out: impl Write) -> Result<(), EnvError> {
    for d in corpus.docs() {
        let r = DocumentRecord {
            id: d.id.clone(),
            title: d.title.clone(),
            text: d.text.clone(),
        };
        serde_json::to_writer(&mut out, &r).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sentence_split_with_guards() {
        let s = split_sentences("Dr. Smith met J. Doe in St. Ives. It rained! Did it? Yes");
        assert_eq!(
            s,
            vec![
                "Dr. Smith met J. Doe in St. Ives.",
                "It rained!",
                "Did it?",
                "Yes"
            ]
        );
        assert_eq!(
            split_sentences("The U.S. flag. Next"),
            vec!["The U.S. flag.", "Next"]
        );
        assert_eq!(
            split_sentences("Version 2.5 shipped."),
            vec!["Version 2.5 shipped."]
        );
        assert!(split_sentences("").is_empty());
    }

    #[test]
    fn paragraphs_and_sentences() {
        let d = Document::new("d1", "T", "One. Two.\n\nThree.");
        assert_eq!(d.paragraphs(), &["One. Two.", "Three."]);
        assert_eq!(d.first_paragraph(), "One. Two.");
        assert_eq!(d.sentences().len(), 3);
    }

    #[test]
    fn parse_and_roundtrip() {
        let text = "{\"id\":\"a\",\"title\":\"Alpha\",\"text\":\"x y.\"}\n\n{\"id\":\"b\",\"title\":\"Beta  One\",\"text\":\"z.\"}\n";
        let c = read_corpus(text.as_bytes()).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.find_title("beta one"), Some(1));
        let mut buf = Vec::new();
        write_corpus(&c, &mut buf).unwrap();
        let again = read_corpus(buf.as_slice()).unwrap();
        assert_eq!(again.docs(), c.docs());
    }

    #[test]
    fn malformed_lines_report_numbers() {
        let bad = "{\"id\":\"a\",\"title\":\"A\",\"text\":\"x\"}\n{\"id\":\"b\"}\n";
        match read_corpus(bad.as_bytes()) {
            Err(EnvError::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let dup = "{\"id\":\"a\",\"title\":\"A\",\"text\":\"x\"}\n{\"id\":\"a\",\"title\":\"B\",\"text\":\"y\"}\n";
        assert!(matches!(
            read_corpus(dup.as_bytes()),
            Err(EnvError::Malformed { line: 2, .. })
        ));
        let empty = "{\"id\":\"a\",\"title\":\"A\",\"text\":\"  \"}\n";
        assert!(matches!(
            read_corpus(empty.as_bytes()),
            Err(EnvError::Malformed { line: 1, .. })
        ));
    }
}
