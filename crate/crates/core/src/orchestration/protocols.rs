use serde::{Deserialize, Serialize};

use super::{
    agent_respond, assemble_prompt, turn_seed, AgentProfile, AppliedPlan, AssembledPrompt,
    MessageStore, OrchestrationError, Policy, PromptContext, PromptSegment, ProtocolConfig, Role,
    RunContext, StopKind, TurnContext, TurnEdge,
};
use crate::codecs::{overhead_report, MessageId, OverheadReport};
use crate::environment::{
    env_step, invalid_action_observation, parse_action, ActionParseError, Document, EnvState,
    Question, ToolEnv, WorkflowAction,
};
use crate::evalkit::{extract_answer, AnswerFormat, AnswerKind, RoundAnswers, ScoringRule};
use crate::model::{DecodeSession, FinishReason};
use crate::setting::{Method, Task};

#[derive(Debug, Clone, PartialEq)]
pub struct Turn {
    pub agent: usize,
    pub message: MessageId,
    pub prompt: AssembledPrompt,
    pub applied: Vec<AppliedPlan>,
    pub finish: FinishReason,
    /// Candidate index picked by a choosing policy.
    pub chosen: Option<usize>,
    pub action: Option<Result<WorkflowAction, ActionParseError>>,
    pub observation: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Round {
    /// 1-based round or step number.
    pub index: usize,
    pub turns: Vec<Turn>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// An IA round produced a boxed answer.
    FormattedAnswer,
    /// IA ran out of rounds without a boxed answer.
    NoFormattedAnswer,
    /// Debate completed its rounds, or a single baseline its response.
    Completed,
    Finished,
    StepLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transcript {
    pub rounds: Vec<Round>,
    pub termination: Termination,
    pub messages: MessageStore,
}

impl Transcript {
    pub fn text(&self, id: MessageId) -> &str {
        self.messages.get(id).map_or("", |m| m.text.as_str())
    }

    pub fn n_responses(&self) -> usize {
        self.rounds.iter().map(|r| r.turns.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskResult {
    pub transcript: Transcript,
    /// Texts the scoring rule consumes.
    pub final_responses: Vec<String>,
    /// Extracted answers per round and agent.
    pub round_answers: Vec<RoundAnswers>,
    /// Sum over every message of the run.
    pub overhead: OverheadReport,
}

fn lit(s: impl Into<String>) -> Vec<PromptSegment> {
    vec![PromptSegment::Literal(s.into())]
}

fn passage(doc: &Document) -> String {
    format!("({}) {}", doc.title, doc.paragraphs().join(" "))
}

fn document_segments(ctx: &RunContext<'_>, docs: &[Document]) -> Vec<PromptSegment> {
    let t = ctx.templates.get("ia_document");
    docs.iter()
        .enumerate()
        .flat_map(|(i, d)| {
            t.render(&[
                ("index", lit((i + 1).to_string())),
                ("passage", lit(passage(d))),
            ])
        })
        .collect()
}

fn peer_segments(ctx: &RunContext<'_>, template: &str, peers: &[MessageId]) -> Vec<PromptSegment> {
    let t = ctx.templates.get(template);
    peers
        .iter()
        .flat_map(|&m| t.render(&[("response", vec![PromptSegment::Message(m)])]))
        .collect()
}

struct Driver<'c, 'a> {
    ctx: &'c RunContext<'a>,
    question: &'c Question,
    policy: &'c Policy,
    store: MessageStore,
}

impl<'c, 'a> Driver<'c, 'a> {
    fn new(ctx: &'c RunContext<'a>, question: &'c Question, policy: &'c Policy) -> Self {
        Self {
            ctx,
            question,
            policy,
            store: MessageStore::new(),
        }
    }

    fn turn(
        &mut self,
        agent: &AgentProfile,
        session: &mut dyn DecodeSession,
        segments: &[PromptSegment],
        round: usize,
        run_seed: u64,
    ) -> Result<Turn, OrchestrationError> {
        let pctx = PromptContext {
            tokenizer: self.ctx.tokenizer,
            syntax: self.ctx.syntax,
            messages: &self.store,
        };
        let prompt = assemble_prompt(
            segments,
            &pctx,
            session.len(),
            self.ctx.model.config().max_seq,
        )?;
        let mut agent = agent.clone();
        agent.settings.seed = turn_seed(run_seed, agent.id, round);
        let tc = TurnContext {
            agent: agent.id,
            round,
            question: self.question,
        };
        let r = agent_respond(
            self.ctx,
            &agent,
            session,
            &prompt,
            &mut self.store,
            self.policy,
            &tc,
        )?;
        Ok(Turn {
            agent: agent.id,
            message: r.message,
            prompt,
            applied: r.applied,
            finish: r.finish,
            chosen: r.chosen,
            action: None,
            observation: None,
        })
    }

    fn text(&self, id: MessageId) -> &str {
        self.store.get(id).map_or("", |m| m.text.as_str())
    }

    fn finish(
        self,
        rounds: Vec<Round>,
        termination: Termination,
        final_responses: Vec<String>,
        format: AnswerFormat,
    ) -> TaskResult {
        let round_answers = rounds
            .iter()
            .map(|r| RoundAnswers {
                round: r.index,
                answers: r
                    .turns
                    .iter()
                    .map(|t| match format {
                        AnswerFormat::Finish => match &t.action {
                            Some(Ok(WorkflowAction::Finish(a))) => Some(a.clone()),
                            _ => None,
                        },
                        f => extract_answer(self.text(t.message), f).map(|a| a.raw),
                    })
                    .collect(),
            })
            .collect();
        let mut overhead = OverheadReport::default();
        for m in self.store.iter() {
            overhead.accumulate(&overhead_report(m));
        }
        TaskResult {
            transcript: Transcript {
                rounds,
                termination,
                messages: self.store,
            },
            final_responses,
            round_answers,
            overhead,
        }
    }
}

fn has_boxed(text: &str) -> bool {
    extract_answer(text, AnswerFormat::Boxed).is_some()
}

/// Two agents with private shards discuss for up to `cfg.ia_rounds`
/// rounds; the run ends after the first round in which any response holds
/// a boxed answer. Each agent keeps one session, so its own earlier turns
/// stay cached and are never re-encoded.
pub fn run_ia(
    ctx: &RunContext<'_>,
    question: &Question,
    shards: [&[Document]; 2],
    cfg: &ProtocolConfig,
    policy: &Policy,
    seed: u64,
) -> Result<TaskResult, OrchestrationError> {
    cfg.validate(ctx.model.config())?;
    let agents: Vec<AgentProfile> = (0..2)
        .map(|i| cfg.profile(Task::Ia, i, 2, seed, cfg.budgets.ia, StopKind::Boxed))
        .collect();
    let mut sessions: Vec<Box<dyn DecodeSession + '_>> =
        (0..2).map(|_| ctx.model.session()).collect();
    let mut d = Driver::new(ctx, question, policy);
    let t = |name| ctx.templates.get(name);
    let mut rounds = Vec::new();
    let mut prev: Vec<MessageId> = Vec::new();
    let mut termination = Termination::NoFormattedAnswer;
    for r in 1..=cfg.ia_rounds {
        let mut turns = Vec::new();
        for (a, agent) in agents.iter().enumerate() {
            let mut segs = Vec::new();
            if r == 1 {
                segs.extend(
                    t("ia_system").render(&[("documents", document_segments(ctx, shards[a]))]),
                );
                segs.extend(t("ia_user_first").render(&[("question", lit(&question.question))]));
            } else {
                let peers: Vec<MessageId> = prev
                    .iter()
                    .copied()
                    .filter(|&m| d.store.get(m).is_some_and(|x| x.sender != a))
                    .collect();
                segs.push(PromptSegment::Turn(Role::Assistant, TurnEdge::Close));
                segs.extend(t("ia_user_followup").render(&[
                    ("peer_responses", peer_segments(ctx, "ia_peer", &peers)),
                    ("question", lit(&question.question)),
                ]));
            }
            segs.push(PromptSegment::Turn(Role::Assistant, TurnEdge::Open));
            turns.push(d.turn(agent, sessions[a].as_mut(), &segs, r, seed)?);
        }
        prev = turns.iter().map(|t| t.message).collect();
        let done = turns.iter().any(|t| has_boxed(d.text(t.message)));
        rounds.push(Round { index: r, turns });
        if done {
            termination = Termination::FormattedAnswer;
            break;
        }
    }
    let finals = prev.iter().map(|&m| d.text(m).to_string()).collect();
    Ok(d.finish(rounds, termination, finals, AnswerFormat::Boxed))
}

fn debate_flavor(question: &Question) -> (&'static str, StopKind, AnswerFormat) {
    if question.kind() == AnswerKind::MultipleChoice {
        ("mmlu", StopKind::Never, AnswerFormat::Choice)
    } else {
        ("gsm8k", StopKind::Boxed, AnswerFormat::Boxed)
    }
}

/// `cfg.agents` agents answer independently, then revise for
/// `cfg.debate_rounds - 1` rounds after seeing every peer's previous-round
/// response.
pub fn run_debate(
    ctx: &RunContext<'_>,
    question: &Question,
    cfg: &ProtocolConfig,
    policy: &Policy,
    seed: u64,
) -> Result<TaskResult, OrchestrationError> {
    cfg.validate(ctx.model.config())?;
    let n = cfg.agents;
    let (flavor, stop, format) = debate_flavor(question);
    let agents: Vec<AgentProfile> = (0..n)
        .map(|i| cfg.profile(Task::Debate, i, n, seed, cfg.budgets.debate, stop))
        .collect();
    let mut sessions: Vec<Box<dyn DecodeSession + '_>> =
        (0..n).map(|_| ctx.model.session()).collect();
    let mut d = Driver::new(ctx, question, policy);
    let first = ctx.templates.get(if flavor == "mmlu" {
        "debate_mmlu_first"
    } else {
        "debate_gsm8k_first"
    });
    let followup = ctx.templates.get(if flavor == "mmlu" {
        "debate_mmlu_followup"
    } else {
        "debate_gsm8k_followup"
    });
    let mut rounds = Vec::new();
    let mut prev: Vec<MessageId> = Vec::new();
    for r in 1..=cfg.debate_rounds {
        let mut turns = Vec::new();
        for (a, agent) in agents.iter().enumerate() {
            let mut segs = Vec::new();
            if r == 1 {
                segs.extend(first.render(&[("question", lit(&question.question))]));
            } else {
                let peers: Vec<MessageId> = prev
                    .iter()
                    .copied()
                    .filter(|&m| d.store.get(m).is_some_and(|x| x.sender != a))
                    .collect();
                segs.push(PromptSegment::Turn(Role::Assistant, TurnEdge::Close));
                segs.extend(followup.render(&[
                    ("peer_responses", peer_segments(ctx, "debate_peer", &peers)),
                    ("question", lit(&question.question)),
                ]));
            }
            segs.push(PromptSegment::Turn(Role::Assistant, TurnEdge::Open));
            turns.push(d.turn(agent, sessions[a].as_mut(), &segs, r, seed)?);
        }
        prev = turns.iter().map(|t| t.message).collect();
        rounds.push(Round { index: r, turns });
    }
    let finals = prev.iter().map(|&m| d.text(m).to_string()).collect();
    Ok(d.finish(rounds, Termination::Completed, finals, format))
}

/// ReAct-style relay: step `k` is a fresh agent that sees the question and
/// every earlier Thought/Action/Observation, and proposes the next action.
pub fn run_workflow(
    ctx: &RunContext<'_>,
    question: &Question,
    env: ToolEnv<'_>,
    cfg: &ProtocolConfig,
    policy: &Policy,
    seed: u64,
) -> Result<TaskResult, OrchestrationError> {
    cfg.validate(ctx.model.config())?;
    let template = ctx.templates.get(if question.kind() == AnswerKind::Fever {
        "workflow_fever"
    } else {
        "workflow_react"
    });
    let step_t = ctx.templates.get("workflow_step");
    let mut d = Driver::new(ctx, question, policy);
    let mut state = EnvState::default();
    let mut history: Vec<(MessageId, String)> = Vec::new();
    let mut rounds = Vec::new();
    let mut termination = Termination::StepLimit;
    for step in 1..=cfg.max_steps {
        let hist: Vec<PromptSegment> = history
            .iter()
            .enumerate()
            .flat_map(|(j, (m, obs))| {
                step_t.render(&[
                    ("step", lit((j + 1).to_string())),
                    ("response", vec![PromptSegment::Message(*m)]),
                    ("observation", lit(obs.clone())),
                ])
            })
            .collect();
        let segs = template.render(&[
            ("question", lit(&question.question)),
            ("history", hist),
            ("step", lit(step.to_string())),
        ]);
        let agent = cfg.profile(
            Task::Workflow,
            step - 1,
            cfg.max_steps,
            seed,
            cfg.budgets.workflow_step,
            StopKind::Action,
        );
        let mut session = ctx.model.session();
        let mut turn = d.turn(&agent, session.as_mut(), &segs, step, seed)?;
        let action = parse_action(d.text(turn.message));
        let observation = match &action {
            Ok(a) => {
                let (next, obs) = env_step(env, &state, a);
                state = next;
                obs
            }
            Err(e) => invalid_action_observation(e),
        };
        history.push((turn.message, observation.0.clone()));
        turn.action = Some(action);
        turn.observation = Some(observation.0);
        rounds.push(Round {
            index: step,
            turns: vec![turn],
        });
        if state.finished {
            termination = Termination::Finished;
            break;
        }
    }
    let finals = match &state.answer {
        Some(a) if state.finished => vec![format!("Finish[{a}]")],
        _ => Vec::new(),
    };
    Ok(d.finish(rounds, termination, finals, AnswerFormat::Finish))
}

/// Single-agent baselines. IA runs once per shard (agents 0 and 1, each on
/// a fresh session); debate and workflow produce one direct response.
pub fn run_single(
    ctx: &RunContext<'_>,
    task: Task,
    question: &Question,
    shards: Option<[&[Document]; 2]>,
    cfg: &ProtocolConfig,
    policy: &Policy,
    seed: u64,
) -> Result<TaskResult, OrchestrationError> {
    let cfg = ProtocolConfig {
        method: Method::Single,
        layers: Vec::new(),
        ..cfg.clone()
    };
    cfg.validate(ctx.model.config())?;
    let mut d = Driver::new(ctx, question, policy);
    let open = PromptSegment::Turn(Role::Assistant, TurnEdge::Open);
    let q = lit(&question.question);
    let mut turns = Vec::new();
    let format = ScoringRule::for_run(task, Method::Single).format(question.kind());
    match task {
        Task::Ia => {
            let shards = shards.ok_or_else(|| {
                OrchestrationError::InvalidConfig("IA single baseline needs two shards".into())
            })?;
            for (a, shard) in shards.iter().enumerate() {
                let agent = cfg.profile(Task::Ia, a, 2, seed, cfg.budgets.ia, StopKind::Boxed);
                let mut segs = ctx.templates.get("ia_single").render(&[
                    ("documents", document_segments(ctx, shard)),
                    ("question", q.clone()),
                ]);
                segs.push(open.clone());
                let mut session = ctx.model.session();
                turns.push(d.turn(&agent, session.as_mut(), &segs, 1, seed)?);
            }
        }
        Task::Debate => {
            let (flavor, stop, _) = debate_flavor(question);
            let agent = cfg.profile(Task::Debate, 0, 1, seed, cfg.budgets.debate, stop);
            let mut segs = ctx
                .templates
                .get(&format!("debate_single_{flavor}"))
                .render(&[("question", q)]);
            segs.push(open);
            let mut session = ctx.model.session();
            turns.push(d.turn(&agent, session.as_mut(), &segs, 1, seed)?);
        }
        Task::Workflow => {
            let name = if question.kind() == AnswerKind::Fever {
                "workflow_single_fever"
            } else {
                "workflow_single"
            };
            let agent = cfg.profile(
                Task::Workflow,
                0,
                1,
                seed,
                cfg.budgets.workflow_single,
                StopKind::Boxed,
            );
            let mut segs = ctx.templates.get(name).render(&[("question", q)]);
            segs.push(open);
            let mut session = ctx.model.session();
            turns.push(d.turn(&agent, session.as_mut(), &segs, 1, seed)?);
        }
    }
    let finals = turns
        .iter()
        .map(|t| d.text(t.message).to_string())
        .collect();
    Ok(d.finish(
        vec![Round { index: 1, turns }],
        Termination::Completed,
        finals,
        format,
    ))
}
