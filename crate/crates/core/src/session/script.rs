//! Headless sessions driven by a task script, for evaluation.

use serde::{Deserialize, Serialize};

use super::{Engine, ResponseKind, SessionError, SessionStatus, TranscriptTurn, TurnResponse};
use crate::metrics::{EvalRecord, Paradigm, StepOutcome};
use crate::scalar::Scalar;
use crate::text::{content_tokens, jaccard, normalize_heading};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptStep {
    pub expected_header: String,
    /// What the operator reports after carrying out the step.
    pub outcome: String,
    #[serde(default)]
    pub forced_intervention: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskScript {
    #[serde(default)]
    pub id: String,
    pub question: String,
    pub steps: Vec<ScriptStep>,
    /// Reply given to prerequisite questions.
    #[serde(default = "default_clarification")]
    pub clarification: String,
    /// Ground-truth action items; the expected headers when empty.
    #[serde(default)]
    pub truth_items: Vec<String>,
}

fn default_clarification() -> String {
    "yes".to_string()
}

impl TaskScript {
    /// Parses a bare array of tasks or `{"tasks": [...]}`. Tasks without an
    /// id are numbered.
    pub fn load_all(text: &str) -> Result<Vec<TaskScript>, serde_json::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum File {
            Wrapped { tasks: Vec<TaskScript> },
            Bare(Vec<TaskScript>),
        }
        let mut tasks = match serde_json::from_str(text)? {
            File::Wrapped { tasks } | File::Bare(tasks) => tasks,
        };
        for (i, t) in tasks.iter_mut().enumerate() {
            if t.id.is_empty() {
                t.id = format!("task-{}", i + 1);
            }
        }
        Ok(tasks)
    }

    pub fn truth(&self) -> Vec<String> {
        if self.truth_items.is_empty() {
            self.steps.iter().map(|s| s.expected_header.clone()).collect()
        } else {
            self.truth_items.clone()
        }
    }
}

/// Whether a presented step is the expected one: the same heading modulo
/// case, punctuation and numbering, or headings sharing at least 60% of
/// their content tokens.
pub fn step_matches(presented: &str, expected: &str) -> bool {
    normalize_heading(presented) == normalize_heading(expected)
        || jaccard(&content_tokens(presented), &content_tokens(expected)) >= 0.6
}

/// Turns excluding a closing notice that presented no new content.
pub(crate) fn counted_turns(turn_count: u32, last: Option<ResponseKind>) -> u32 {
    let notice = matches!(last, Some(ResponseKind::Mitigated | ResponseKind::Escalate));
    if notice && turn_count > 1 {
        turn_count - 1
    } else {
        turn_count.max(1)
    }
}

impl<S: Scalar> Engine<S> {
    /// Runs `task` to completion. A step succeeds when the system presents
    /// the expected unit on its own; otherwise the scripted operator steps
    /// in and moves the session onto the expected unit.
    pub fn run_scripted(&self, task: &TaskScript) -> Result<EvalRecord, SessionError> {
        self.run_scripted_with_transcript(task).map(|(r, _)| r)
    }

    pub fn run_scripted_with_transcript(
        &self,
        task: &TaskScript,
    ) -> Result<(EvalRecord, Vec<TranscriptTurn>), SessionError> {
        if task.steps.is_empty() {
            return Err(SessionError::EmptyTask);
        }
        let (mut state, mut resp) = self.start(task.id.clone(), &task.question)?;
        let mut steps = Vec::with_capacity(task.steps.len());
        for step in &task.steps {
            let mut guard = 0;
            while state.status == SessionStatus::AwaitingClarification && guard < 4 {
                resp = self.answer_clarification(&mut state, &task.clarification)?;
                guard += 1;
            }
            if state.status.is_terminal() {
                steps.push(StepOutcome::new(false, step.forced_intervention));
                continue;
            }
            let success = state.status == SessionStatus::AwaitingFeedback
                && presented_header(&resp).is_some_and(|h| step_matches(h, &step.expected_header));
            let mut intervention = step.forced_intervention;
            if !success {
                intervention = true;
                let target = self
                    .kb()
                    .units()
                    .iter()
                    .find(|u| normalize_heading(&u.header) == normalize_heading(&step.expected_header))
                    .or_else(|| self.kb().units().iter().find(|u| step_matches(&u.header, &step.expected_header)));
                match target {
                    Some(lu) => {
                        let id = lu.id.clone();
                        self.force_step(&mut state, &id)?;
                    }
                    None => {
                        steps.push(StepOutcome::new(false, intervention));
                        continue;
                    }
                }
            }
            steps.push(StepOutcome::new(success, intervention));
            resp = self.submit_feedback(&mut state, &step.outcome)?;
        }
        let tr = state.transcript();
        let record = EvalRecord {
            task_id: task.id.clone(),
            paradigm: Paradigm::Thread,
            steps,
            turns: counted_turns(state.turn_count, state.last_response_kind()),
            final_status: state.status,
            retrieved_tokens: tr.iter().map(|t| t.retrieved_tokens as u64).sum(),
            retrieval_turns: tr.iter().filter(|t| t.retrieved_tokens > 0).count() as u32,
            generated_items: state.presented.clone(),
            truth_items: task.truth(),
        };
        Ok((record, tr.to_vec()))
    }
}

fn presented_header(resp: &TurnResponse) -> Option<&str> {
    resp.header.as_deref()
}
