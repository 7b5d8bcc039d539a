//! Annotation state and the events that change it. State is a pure fold
//! over events, so replaying the log rebuilds it exactly.

use std::collections::{BTreeMap, HashMap};

use chrono::{DateTime, Utc};
use ctlab_core::augment::CandidateComment;
use ctlab_core::corpus::{Provenance, Sample};
use ctlab_core::LabelVector;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskState {
    Open,
    Agreed,
    Conflict,
    Resolved,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vote {
    pub label: LabelVector,
    pub needs_context: bool,
    pub at: DateTime<Utc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Resolution {
    pub adjudicator: String,
    /// `None` confirms rejection.
    pub label: Option<LabelVector>,
    pub at: DateTime<Utc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: String,
    pub candidate: CandidateComment<f64>,
    pub assigned: [String; 2],
    pub votes: BTreeMap<String, Vote>,
    pub state: TaskState,
    pub resolution: Option<Resolution>,
}

impl Task {
    /// A needs-context vote rejects the item unless an adjudicator overrides.
    pub fn flagged_needs_context(&self) -> bool {
        self.votes.values().any(|v| v.needs_context)
    }

    /// Final label when the task is accepted into the corpus.
    pub fn accepted_label(&self) -> Option<LabelVector> {
        match self.state {
            TaskState::Agreed if !self.flagged_needs_context() => self.votes.values().next().map(|v| v.label),
            TaskState::Resolved => self.resolution.as_ref().and_then(|r| r.label),
            _ => None,
        }
    }

    pub fn is_rejected(&self) -> bool {
        match self.state {
            TaskState::Agreed => self.flagged_needs_context(),
            TaskState::Conflict => false,
            TaskState::Resolved => self.resolution.as_ref().is_some_and(|r| r.label.is_none()),
            TaskState::Open => false,
        }
    }

    /// Conflicts, plus agreed items rejected for missing context.
    pub fn needs_adjudication(&self) -> bool {
        self.state == TaskState::Conflict || (self.state == TaskState::Agreed && self.flagged_needs_context())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub annotator: String,
    /// 1-based count of sessions this annotator has started.
    pub number: usize,
    pub started_at: DateTime<Utc>,
    pub last_active: DateTime<Utc>,
    pub completed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    TaskCreated {
        at: DateTime<Utc>,
        task_id: String,
        candidate: CandidateComment<f64>,
        assigned: [String; 2],
    },
    SessionStarted {
        at: DateTime<Utc>,
        annotator: String,
    },
    VoteSubmitted {
        at: DateTime<Utc>,
        task_id: String,
        annotator: String,
        label: LabelVector,
        needs_context: bool,
    },
    ConflictResolved {
        at: DateTime<Utc>,
        task_id: String,
        adjudicator: String,
        label: Option<LabelVector>,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub tasks: Vec<Task>,
    pub sessions: BTreeMap<String, Session>,
    /// Events folded into this state.
    pub applied: u64,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl State {
    pub fn task(&self, id: &str) -> Option<&Task> {
        self.index.get(id).map(|&i| &self.tasks[i])
    }

    /// Accepted tasks as corpus samples with manual provenance.
    pub fn accepted_samples(&self) -> Vec<Sample> {
        self.tasks
            .iter()
            .filter_map(|t| {
                t.accepted_label().map(|label| {
                    let mut s = Sample::new(&t.task_id, &t.candidate.text, label).with_provenance(Provenance::Manual);
                    s.needs_context = t.flagged_needs_context();
                    s
                })
            })
            .collect()
    }

    pub(crate) fn rebuild_index(&mut self) {
        self.index = self
            .tasks
            .iter()
            .enumerate()
            .map(|(i, t)| (t.task_id.clone(), i))
            .collect();
    }

    /// Folds one already-validated event into the state.
    pub fn apply(&mut self, event: &Event) {
        self.applied += 1;
        match event {
            Event::TaskCreated {
                task_id,
                candidate,
                assigned,
                ..
            } => {
                self.index.insert(task_id.clone(), self.tasks.len());
                self.tasks.push(Task {
                    task_id: task_id.clone(),
                    candidate: candidate.clone(),
                    assigned: assigned.clone(),
                    votes: BTreeMap::new(),
                    state: TaskState::Open,
                    resolution: None,
                });
            }
            Event::SessionStarted { at, annotator } => {
                let number = self.sessions.get(annotator).map_or(0, |s| s.number) + 1;
                self.sessions.insert(
                    annotator.clone(),
                    Session {
                        annotator: annotator.clone(),
                        number,
                        started_at: *at,
                        last_active: *at,
                        completed: 0,
                    },
                );
            }
            Event::VoteSubmitted {
                at,
                task_id,
                annotator,
                label,
                needs_context,
            } => {
                if let Some(s) = self.sessions.get_mut(annotator) {
                    s.completed += 1;
                    s.last_active = *at;
                }
                let Some(&i) = self.index.get(task_id) else { return };
                let task = &mut self.tasks[i];
                task.votes.insert(
                    annotator.clone(),
                    Vote {
                        label: *label,
                        needs_context: *needs_context,
                        at: *at,
                    },
                );
                if task.votes.len() == 2 {
                    let mut labels = task.votes.values().map(|v| v.label);
                    let first = labels.next();
                    task.state = if labels.all(|l| Some(l) == first) {
                        TaskState::Agreed
                    } else {
                        TaskState::Conflict
                    };
                }
            }
            Event::ConflictResolved {
                at,
                task_id,
                adjudicator,
                label,
            } => {
                let Some(&i) = self.index.get(task_id) else { return };
                let task = &mut self.tasks[i];
                task.state = TaskState::Resolved;
                task.resolution = Some(Resolution {
                    adjudicator: adjudicator.clone(),
                    label: *label,
                    at: *at,
                });
            }
        }
    }
}
