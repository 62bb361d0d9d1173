//! Prompt templates and chat-turn rendering.
//!
//! A template is plain UTF-8 text. `{name}` (lowercase letters and `_`)
//! marks a slot; a slot that the caller does not fill is kept verbatim, so
//! text such as `\boxed{answer}` passes through. The markers `<system>`,
//! `<user>`, `<assistant>` and their closing forms denote chat turns and
//! are rendered through a [`TurnSyntax`]; one newline directly after a
//! marker is absorbed. One trailing newline at the end of a file is dropped.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{OrchestrationError, PromptSegment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnEdge {
    Open,
    Close,
}

/// Literal text emitted for each turn marker.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnSyntax {
    pub name: String,
    pub system: [String; 2],
    pub user: [String; 2],
    pub assistant: [String; 2],
}

impl TurnSyntax {
    fn build(name: &str, system: [&str; 2], user: [&str; 2], assistant: [&str; 2]) -> Self {
        let own = |p: [&str; 2]| [p[0].to_string(), p[1].to_string()];
        Self {
            name: name.to_string(),
            system: own(system),
            user: own(user),
            assistant: own(assistant),
        }
    }

    /// The markers as written in the templates.
    pub fn tags() -> Self {
        Self::build(
            "tags",
            ["<system>\n", "</system>\n"],
            ["<user>\n", "</user>\n"],
            ["<assistant>\n", "\n</assistant>\n"],
        )
    }

    pub fn chatml() -> Self {
        Self::build(
            "chatml",
            ["<|im_start|>system\n", "<|im_end|>\n"],
            ["<|im_start|>user\n", "<|im_end|>\n"],
            ["<|im_start|>assistant\n", "<|im_end|>\n"],
        )
    }

    pub fn llama3() -> Self {
        Self::build(
            "llama3",
            [
                "<|start_header_id|>system<|end_header_id|>\n\n",
                "<|eot_id|>",
            ],
            ["<|start_header_id|>user<|end_header_id|>\n\n", "<|eot_id|>"],
            [
                "<|start_header_id|>assistant<|end_header_id|>\n\n",
                "<|eot_id|>",
            ],
        )
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "tags" => Some(Self::tags()),
            "chatml" => Some(Self::chatml()),
            "llama3" => Some(Self::llama3()),
            _ => None,
        }
    }

    pub fn marker(&self, role: Role, edge: TurnEdge) -> &str {
        let pair = match role {
            Role::System => &self.system,
            Role::User => &self.user,
            Role::Assistant => &self.assistant,
        };
        match edge {
            TurnEdge::Open => &pair[0],
            TurnEdge::Close => &pair[1],
        }
    }
}

impl Default for TurnSyntax {
    fn default() -> Self {
        Self::tags()
    }
}

const MARKERS: [(&str, Role, TurnEdge); 6] = [
    ("<system>", Role::System, TurnEdge::Open),
    ("</system>", Role::System, TurnEdge::Close),
    ("<user>", Role::User, TurnEdge::Open),
    ("</user>", Role::User, TurnEdge::Close),
    ("<assistant>", Role::Assistant, TurnEdge::Open),
    ("</assistant>", Role::Assistant, TurnEdge::Close),
];

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Literal(String),
    Slot(String),
    Turn(Role, TurnEdge),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    name: String,
    pieces: Vec<Piece>,
}

fn slot_at(rest: &str) -> Option<&str> {
    let body = rest.strip_prefix('{')?;
    let end = body.find('}')?;
    let name = &body[..end];
    (!name.is_empty() && name.chars().all(|c| c.is_ascii_lowercase() || c == '_')).then_some(name)
}

impl Template {
    pub fn parse(name: &str, text: &str) -> Self {
        let text = text.strip_suffix('\n').unwrap_or(text);
        let mut pieces = Vec::new();
        let mut literal = String::new();
        let mut rest = text;
        'outer: while let Some(c) = rest.chars().next() {
            if c == '<' {
                for (tag, role, edge) in MARKERS {
                    if let Some(after) = rest.strip_prefix(tag) {
                        if !literal.is_empty() {
                            pieces.push(Piece::Literal(std::mem::take(&mut literal)));
                        }
                        pieces.push(Piece::Turn(role, edge));
                        rest = after.strip_prefix('\n').unwrap_or(after);
                        continue 'outer;
                    }
                }
            } else if c == '{' {
                if let Some(slot) = slot_at(rest) {
                    if !literal.is_empty() {
                        pieces.push(Piece::Literal(std::mem::take(&mut literal)));
                    }
                    pieces.push(Piece::Slot(slot.to_string()));
                    rest = &rest[slot.len() + 2..];
                    continue;
                }
            }
            literal.push(c);
            rest = &rest[c.len_utf8()..];
        }
        if !literal.is_empty() {
            pieces.push(Piece::Literal(literal));
        }
        Self {
            name: name.to_string(),
            pieces,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Slot names in order of first appearance.
    pub fn slots(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for p in &self.pieces {
            if let Piece::Slot(s) = p {
                if !out.contains(&s.as_str()) {
                    out.push(s);
                }
            }
        }
        out
    }

    /// Expands the template; unfilled slots stay as literal `{name}`.
    pub fn render(&self, slots: &[(&str, Vec<PromptSegment>)]) -> Vec<PromptSegment> {
        let mut out = Vec::new();
        for p in &self.pieces {
            match p {
                Piece::Literal(s) => out.push(PromptSegment::Literal(s.clone())),
                Piece::Turn(r, e) => out.push(PromptSegment::Turn(*r, *e)),
                Piece::Slot(name) => match slots.iter().find(|(n, _)| n == name) {
                    Some((_, segs)) => out.extend(segs.iter().cloned()),
                    None => out.push(PromptSegment::Literal(format!("{{{name}}}"))),
                },
            }
        }
        out
    }

    /// Renders to plain text, all slots filled with text.
    pub fn render_text(&self, slots: &[(&str, &str)], syntax: &TurnSyntax) -> String {
        let filled: Vec<(&str, Vec<PromptSegment>)> = slots
            .iter()
            .map(|(n, v)| (*n, vec![PromptSegment::Literal(v.to_string())]))
            .collect();
        self.render(&filled)
            .into_iter()
            .map(|s| match s {
                PromptSegment::Literal(t) => t,
                PromptSegment::Turn(r, e) => syntax.marker(r, e).to_string(),
                PromptSegment::Slot(n) => format!("{{{n}}}"),
                PromptSegment::Message(_) => String::new(),
            })
            .collect()
    }
}

macro_rules! builtin_templates {
    ($($name:literal),+ $(,)?) => {
        pub const TEMPLATE_NAMES: &[&str] = &[$($name),+];
        fn builtin_text(name: &str) -> Option<&'static str> {
            match name {
                $($name => Some(include_str!(concat!("../../assets/templates/", $name, ".txt"))),)+
                _ => None,
            }
        }
    };
}

builtin_templates!(
    "ia_system",
    "ia_document",
    "ia_user_first",
    "ia_user_followup",
    "ia_peer",
    "ia_single",
    "debate_gsm8k_first",
    "debate_gsm8k_followup",
    "debate_mmlu_first",
    "debate_mmlu_followup",
    "debate_peer",
    "debate_single_gsm8k",
    "debate_single_mmlu",
    "workflow_react",
    "workflow_fever",
    "workflow_single",
    "workflow_single_fever",
    "workflow_step",
);

/// Every template the protocols use, keyed by name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    templates: BTreeMap<String, Template>,
}

impl TemplateSet {
    pub fn builtin() -> Self {
        let templates = TEMPLATE_NAMES
            .iter()
            .map(|&n| {
                (
                    n.to_string(),
                    Template::parse(n, builtin_text(n).expect("listed template")),
                )
            })
            .collect();
        Self { templates }
    }

    /// Built-in templates, replaced by `<dir>/<name>.txt` where present.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self, OrchestrationError> {
        let dir = dir.as_ref();
        if !dir.is_dir() {
            return Err(OrchestrationError::Template(format!(
                "{} is not a directory",
                dir.display()
            )));
        }
        let mut set = Self::builtin();
        for &name in TEMPLATE_NAMES {
            let path = dir.join(format!("{name}.txt"));
            if path.exists() {
                let text = std::fs::read_to_string(&path).map_err(|e| {
                    OrchestrationError::Template(format!("{}: {e}", path.display()))
                })?;
                set.templates
                    .insert(name.to_string(), Template::parse(name, &text));
            }
        }
        Ok(set)
    }

    /// Writes the built-in template files into `dir` for editing.
    pub fn write_builtin(dir: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::create_dir_all(&dir)?;
        for &name in TEMPLATE_NAMES {
            std::fs::write(
                dir.as_ref().join(format!("{name}.txt")),
                builtin_text(name).expect("listed template"),
            )?;
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> &Template {
        self.templates
            .get(name)
            .unwrap_or_else(|| panic!("template `{name}` is not part of the set"))
    }
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_slots_and_markers() {
        let t = Template::parse("t", "<user>\nAsk {question} as \\boxed{answer}.\n</user>\n");
        assert_eq!(t.slots(), vec!["question", "answer"]);
        let text = t.render_text(&[("question", "Q?")], &TurnSyntax::tags());
        assert_eq!(text, "<user>\nAsk Q? as \\boxed{answer}.\n</user>\n");
        let chat = t.render_text(&[("question", "Q?")], &TurnSyntax::chatml());
        assert_eq!(
            chat,
            "<|im_start|>user\nAsk Q? as \\boxed{answer}.\n<|im_end|>\n"
        );
    }

    #[test]
    fn non_slot_braces_are_literal() {
        let t = Template::parse("t", "a {B} {} {x1} {ok}");
        assert_eq!(t.slots(), vec!["ok"]);
        assert_eq!(
            t.render_text(&[("ok", "y")], &TurnSyntax::tags()),
            "a {B} {} {x1} y"
        );
    }

    #[test]
    fn builtin_set_has_expected_slots() {
        let set = TemplateSet::builtin();
        assert_eq!(set.get("ia_system").slots(), vec!["documents", "answer"]);
        assert_eq!(
            set.get("ia_user_followup").slots(),
            vec!["peer_responses", "question", "answer"]
        );
        assert_eq!(
            set.get("workflow_react").slots(),
            vec!["question", "history", "step"]
        );
        assert_eq!(
            set.get("workflow_step").slots(),
            vec!["step", "response", "observation"]
        );
        let text = set.get("workflow_react").render_text(
            &[("question", "Q"), ("history", ""), ("step", "1")],
            &TurnSyntax::tags(),
        );
        assert!(
            text.ends_with("Question: Q\n\n</user>\n<assistant>\nThought 1: "),
            "{text:?}"
        );
        assert!(set
            .get("workflow_single_fever")
            .render_text(&[], &TurnSyntax::tags())
            .contains("NOT ENOUGH INFO"));
    }

    #[test]
    fn directory_overrides() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("ia_peer.txt"), "Peer said: {response}\n").unwrap();
        let set = TemplateSet::from_dir(dir.path()).unwrap();
        assert_eq!(
            set.get("ia_peer")
                .render_text(&[("response", "hi")], &TurnSyntax::tags()),
            "Peer said: hi"
        );
        assert_eq!(
            set.get("ia_system"),
            TemplateSet::builtin().get("ia_system")
        );
        assert!(TemplateSet::from_dir(dir.path().join("missing")).is_err());
    }
}
