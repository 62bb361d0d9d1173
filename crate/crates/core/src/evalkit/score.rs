use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{
    exact_match, extract_answer, normalize, parse_number, token_f1, AnswerFormat, AnswerKind,
    EvalError, ExtractedAnswer, Gold, Metrics, QuestionScore,
};
use crate::setting::{Method, Task};

const FEVER_LABELS: [&str; 3] = ["supports", "refutes", "not enough info"];

/// How a question's responses collapse into one score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringRule {
    /// Mean over final-round formatted answers; unformatted ones are skipped.
    IaFinalRound,
    /// Mean over every agent's final-round answer; unformatted counts as wrong.
    DebateFinalRound,
    /// The single Finish answer; none means 0.
    Workflow,
    /// The workflow single baseline: one boxed answer; none means 0.
    WorkflowSingle,
    /// Two independent single agents; the summary keeps the agent with the
    /// higher total.
    IaSingle,
}

impl ScoringRule {
    pub fn for_run(task: Task, method: Method) -> Self {
        match (task, method) {
            (Task::Ia, Method::Single) => ScoringRule::IaSingle,
            (Task::Ia, _) => ScoringRule::IaFinalRound,
            (Task::Debate, _) => ScoringRule::DebateFinalRound,
            (Task::Workflow, Method::Single) => ScoringRule::WorkflowSingle,
            (Task::Workflow, _) => ScoringRule::Workflow,
        }
    }

    /// Answer format responses are expected in.
    pub fn format(self, kind: AnswerKind) -> AnswerFormat {
        match (self, kind) {
            (ScoringRule::Workflow, _) => AnswerFormat::Finish,
            (ScoringRule::DebateFinalRound, AnswerKind::MultipleChoice) => AnswerFormat::Choice,
            _ => AnswerFormat::Boxed,
        }
    }
}

fn yes_no(normalized: &str) -> &str {
    match normalized.split_whitespace().next() {
        Some("yes" | "true") => "yes",
        Some("no" | "false") => "no",
        _ => normalized,
    }
}

fn letter(raw: &str) -> Option<char> {
    let t = raw
        .trim()
        .trim_start_matches('(')
        .trim_end_matches(['.', ')'])
        .trim();
    let mut chars = t.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) if c.is_ascii_alphabetic() => Some(c.to_ascii_uppercase()),
        _ => None,
    }
}

/// Scores one extracted answer against the gold set.
pub(crate) fn judge(answer: &ExtractedAnswer, gold: &Gold) -> Metrics {
    let golds = &gold.answers;
    match gold.kind {
        AnswerKind::Open => Metrics {
            em: exact_match(&answer.raw, golds),
            f1: token_f1(&answer.raw, golds),
        },
        AnswerKind::YesNo => {
            let p = yes_no(&answer.normalized);
            Metrics::accuracy(golds.iter().any(|g| yes_no(&normalize(g)) == p))
        }
        AnswerKind::MultipleChoice => {
            let p = letter(&answer.raw);
            Metrics::accuracy(p.is_some() && golds.iter().any(|g| letter(g) == p))
        }
        AnswerKind::Numeric => {
            let ok = golds
                .iter()
                .any(|g| match (parse_number(&answer.raw), parse_number(g)) {
                    (Some(a), Some(b)) => (a - b).abs() <= 1e-6 * b.abs().max(1.0),
                    _ => normalize(g) == answer.normalized,
                });
            Metrics::accuracy(ok)
        }
        AnswerKind::Fever => {
            let p = answer.normalized.as_str();
            Metrics::accuracy(FEVER_LABELS.contains(&p) && golds.iter().any(|g| normalize(g) == p))
        }
    }
}

/// Scores the responses that count for one question under `rule`: the
/// final-round texts for IA and debate, the last step for a workflow, one
/// text per agent for the IA single baseline.
pub fn score_question(
    question_id: &str,
    responses: &[String],
    gold: &Gold,
    rule: ScoringRule,
) -> QuestionScore {
    let format = rule.format(gold.kind);
    let per_response: Vec<Option<Metrics>> = responses
        .iter()
        .map(|r| extract_answer(r, format).map(|a| judge(&a, gold)))
        .collect();
    let score = match rule {
        ScoringRule::IaFinalRound => {
            Metrics::mean(&per_response.iter().flatten().copied().collect::<Vec<_>>())
        }
        ScoringRule::DebateFinalRound | ScoringRule::IaSingle => Metrics::mean(
            &per_response
                .iter()
                .map(|m| m.unwrap_or(Metrics::ZERO))
                .collect::<Vec<_>>(),
        ),
        ScoringRule::Workflow | ScoringRule::WorkflowSingle => per_response
            .first()
            .copied()
            .flatten()
            .unwrap_or(Metrics::ZERO),
    };
    QuestionScore {
        question_id: question_id.to_string(),
        per_response,
        score,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n_questions: usize,
    pub n_runs: usize,
    pub em: f64,
    pub f1: f64,
    pub per_run: Vec<Metrics>,
    /// IA single baseline: the agent index kept in each run.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub best_agent: Vec<usize>,
}

fn sorted_sum(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs.into_iter().sum()
}

fn mean_sorted(items: &[Metrics]) -> Metrics {
    if items.is_empty() {
        return Metrics::ZERO;
    }
    let n = items.len() as f64;
    Metrics {
        em: sorted_sum(items.iter().map(|m| m.em).collect()) / n,
        f1: sorted_sum(items.iter().map(|m| m.f1).collect()) / n,
    }
}

/// Per-run means over questions, then the mean over runs. Sums are taken
/// in sorted order so the result does not depend on record order.
pub fn aggregate(runs: &[Vec<QuestionScore>], rule: ScoringRule) -> Result<Summary, EvalError> {
    let first = runs.first().ok_or(EvalError::NoRuns)?;
    let ids = |run: &[QuestionScore]| -> Result<BTreeSet<String>, EvalError> {
        let mut set = BTreeSet::new();
        for q in run {
            if !set.insert(q.question_id.clone()) {
                return Err(EvalError::DuplicateQuestion(q.question_id.clone()));
            }
        }
        Ok(set)
    };
    let reference = ids(first)?;
    for (i, run) in runs.iter().enumerate().skip(1) {
        if ids(run)? != reference {
            return Err(EvalError::MismatchedQuestions { run: i });
        }
    }

    let mut per_run = Vec::with_capacity(runs.len());
    let mut best_agent = Vec::new();
    for run in runs {
        if rule == ScoringRule::IaSingle {
            let n_agents = run.iter().map(|q| q.per_response.len()).max().unwrap_or(0);
            let agent_means: Vec<Metrics> = (0..n_agents)
                .map(|k| {
                    mean_sorted(
                        &run.iter()
                            .map(|q| {
                                q.per_response
                                    .get(k)
                                    .copied()
                                    .flatten()
                                    .unwrap_or(Metrics::ZERO)
                            })
                            .collect::<Vec<_>>(),
                    )
                })
                .collect();
            let best = (0..n_agents)
                .max_by(|&a, &b| {
                    let (x, y) = (agent_means[a], agent_means[b]);
                    x.f1.total_cmp(&y.f1)
                        .then(x.em.total_cmp(&y.em))
                        .then(b.cmp(&a))
                })
                .unwrap_or(0);
            best_agent.push(best);
            per_run.push(agent_means.get(best).copied().unwrap_or(Metrics::ZERO));
        } else {
            per_run.push(mean_sorted(
                &run.iter().map(|q| q.score).collect::<Vec<_>>(),
            ));
        }
    }
    let overall = mean_sorted(&per_run);
    Ok(Summary {
        n_questions: reference.len(),
        n_runs: runs.len(),
        em: overall.em,
        f1: overall.f1,
        per_run,
        best_agent,
    })
}
