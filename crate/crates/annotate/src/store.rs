//! The annotation store: validates commands, appends events to the log and
//! folds them into the in-memory state.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use ctlab_core::augment::CandidateComment;
use ctlab_core::corpus::Sample;
use ctlab_core::LabelVector;
use serde::Serialize;

use crate::error::{AnnotateError, Result};
use crate::state::{Event, Session, State, Task, TaskState};

pub type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

pub const EVENTS_FILE: &str = "events.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot.json";

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub annotators: Vec<String>,
    pub adjudicators: Vec<String>,
    /// Annotations allowed per session.
    pub session_cap: usize,
    /// Inactivity after which the next request starts a fresh session.
    pub session_timeout: Duration,
    /// Write a snapshot every this many events; 0 disables snapshots.
    pub snapshot_every: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            annotators: Vec::new(),
            adjudicators: Vec::new(),
            session_cap: 50,
            session_timeout: Duration::hours(8),
            snapshot_every: 100,
        }
    }
}

impl ServiceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.annotators.len() < 2 {
            return Err(AnnotateError::Validation(format!(
                "two-fold voting needs at least 2 annotators, got {}",
                self.annotators.len()
            )));
        }
        if self.adjudicators.is_empty() {
            return Err(AnnotateError::Validation("at least one adjudicator is required".into()));
        }
        let mut all: Vec<&String> = self.annotators.iter().chain(&self.adjudicators).collect();
        all.sort();
        if let Some(w) = all.windows(2).find(|w| w[0] == w[1]) {
            return Err(AnnotateError::Validation(format!(
                "user id `{}` is listed twice; annotators and adjudicators must be distinct",
                w[0]
            )));
        }
        if self.session_cap == 0 {
            return Err(AnnotateError::Validation("session_cap must be positive".into()));
        }
        if self.session_timeout <= Duration::zero() {
            return Err(AnnotateError::Validation("session_timeout must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SessionInfo {
    pub number: usize,
    pub completed: usize,
    pub cap: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct NextTask {
    pub task_id: String,
    pub text: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Progress {
    pub total: usize,
    pub open: usize,
    pub agreed: usize,
    pub conflict: usize,
    pub resolved: usize,
    pub accepted: usize,
    pub rejected: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct AnnotatorProgress {
    pub assigned: usize,
    pub completed: usize,
    pub remaining: usize,
}

struct EventLog {
    dir: PathBuf,
    writer: BufWriter<File>,
}

pub struct Store {
    config: ServiceConfig,
    clock: Clock,
    state: State,
    log: Option<EventLog>,
}

impl Store {
    /// In-memory store with no persistence.
    pub fn in_memory(config: ServiceConfig, clock: Clock) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            clock,
            state: State::default(),
            log: None,
        })
    }

    /// Opens or creates a store in `dir`, restoring from snapshot plus log.
    pub fn open(dir: &Path, config: ServiceConfig, clock: Clock) -> Result<Self> {
        config.validate()?;
        std::fs::create_dir_all(dir).map_err(|e| AnnotateError::io(dir, e))?;
        let state = load_state(dir)?;
        let path = dir.join(EVENTS_FILE);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| AnnotateError::io(&path, e))?;
        Ok(Self {
            config,
            clock,
            state,
            log: Some(EventLog {
                dir: dir.to_path_buf(),
                writer: BufWriter::new(file),
            }),
        })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    fn commit(&mut self, event: Event) -> Result<()> {
        if let Some(log) = &mut self.log {
            let path = log.dir.join(EVENTS_FILE);
            let line = serde_json::to_string(&event)?;
            writeln!(log.writer, "{line}")
                .and_then(|_| log.writer.flush())
                .map_err(|e| AnnotateError::io(&path, e))?;
        }
        self.state.apply(&event);
        let every = self.config.snapshot_every;
        if every > 0 && self.state.applied.is_multiple_of(every) {
            self.snapshot()?;
        }
        Ok(())
    }

    /// Writes the current state atomically next to the log.
    pub fn snapshot(&self) -> Result<()> {
        let Some(log) = &self.log else { return Ok(()) };
        let path = log.dir.join(SNAPSHOT_FILE);
        let tmp = log.dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        let json = serde_json::to_vec(&self.state)?;
        std::fs::write(&tmp, json).map_err(|e| AnnotateError::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| AnnotateError::io(&path, e))
    }

    fn is_annotator(&self, id: &str) -> bool {
        self.config.annotators.iter().any(|a| a == id)
    }

    fn require_annotator(&self, id: &str) -> Result<()> {
        if self.is_annotator(id) {
            Ok(())
        } else {
            Err(AnnotateError::Unauthorized(format!("`{id}` is not a registered annotator")))
        }
    }

    fn require_adjudicator(&self, id: &str) -> Result<()> {
        if self.config.adjudicators.iter().any(|a| a == id) {
            Ok(())
        } else {
            Err(AnnotateError::Unauthorized(format!("`{id}` is not a registered adjudicator")))
        }
    }

    fn task(&self, id: &str) -> Result<&Task> {
        self.state
            .task(id)
            .ok_or_else(|| AnnotateError::NotFound(format!("no task `{id}`")))
    }

    /// Queues candidates, assigning each to two annotators round-robin.
    pub fn add_candidates(&mut self, candidates: Vec<CandidateComment<f64>>) -> Result<usize> {
        let mut seen = std::collections::HashSet::new();
        for c in &candidates {
            if self.state.task(&c.id).is_some() || !seen.insert(c.id.as_str()) {
                return Err(AnnotateError::Validation(format!("duplicate task id `{}`", c.id)));
            }
        }
        let n = self.config.annotators.len();
        let added = candidates.len();
        for candidate in candidates {
            let i = self.state.tasks.len();
            let assigned = [
                self.config.annotators[i % n].clone(),
                self.config.annotators[(i + 1) % n].clone(),
            ];
            self.commit(Event::TaskCreated {
                at: (self.clock)(),
                task_id: candidate.id.clone(),
                candidate,
                assigned,
            })?;
        }
        Ok(added)
    }

    /// Starts a new session for `annotator`, ending any current one.
    pub fn start_session(&mut self, annotator: &str) -> Result<SessionInfo> {
        self.require_annotator(annotator)?;
        self.commit(Event::SessionStarted {
            at: (self.clock)(),
            annotator: annotator.to_owned(),
        })?;
        Ok(self.session_info(annotator))
    }

    fn session_info(&self, annotator: &str) -> SessionInfo {
        let s = &self.state.sessions[annotator];
        SessionInfo {
            number: s.number,
            completed: s.completed,
            cap: self.config.session_cap,
        }
    }

    fn is_expired(&self, s: &Session) -> bool {
        (self.clock)() - s.last_active >= self.config.session_timeout
    }

    /// Returns a live session, starting one when none exists or the last expired.
    fn active_session(&mut self, annotator: &str) -> Result<SessionInfo> {
        let fresh = match self.state.sessions.get(annotator) {
            None => true,
            Some(s) => self.is_expired(s),
        };
        if fresh {
            self.start_session(annotator)
        } else {
            Ok(self.session_info(annotator))
        }
    }

    fn check_cap(&self, session: &SessionInfo) -> Result<()> {
        if session.completed >= session.cap {
            Err(AnnotateError::SessionCap { cap: session.cap })
        } else {
            Ok(())
        }
    }

    /// Next task awaiting this annotator's vote. Never exposes other votes.
    pub fn next_task(&mut self, annotator: &str) -> Result<(Option<NextTask>, SessionInfo)> {
        self.require_annotator(annotator)?;
        let session = self.active_session(annotator)?;
        self.check_cap(&session)?;
        let next = self
            .state
            .tasks
            .iter()
            .find(|t| {
                t.state == TaskState::Open
                    && t.assigned.iter().any(|a| a == annotator)
                    && !t.votes.contains_key(annotator)
            })
            .map(|t| NextTask {
                task_id: t.task_id.clone(),
                text: t.candidate.text.clone(),
            });
        Ok((next, session))
    }

    pub fn vote(
        &mut self,
        task_id: &str,
        annotator: &str,
        label: LabelVector,
        needs_context: bool,
    ) -> Result<SessionInfo> {
        self.require_annotator(annotator)?;
        let task = self.task(task_id)?;
        if !task.assigned.iter().any(|a| a == annotator) {
            return Err(AnnotateError::Unauthorized(format!(
                "task `{task_id}` is not assigned to `{annotator}`"
            )));
        }
        if task.votes.contains_key(annotator) {
            return Err(AnnotateError::State(format!(
                "`{annotator}` already voted on task `{task_id}`"
            )));
        }
        let session = self.active_session(annotator)?;
        self.check_cap(&session)?;
        self.commit(Event::VoteSubmitted {
            at: (self.clock)(),
            task_id: task_id.to_owned(),
            annotator: annotator.to_owned(),
            label,
            needs_context,
        })?;
        Ok(self.session_info(annotator))
    }

    /// Tasks awaiting adjudication, with both votes visible.
    pub fn conflicts(&self, adjudicator: &str) -> Result<Vec<&Task>> {
        self.require_adjudicator(adjudicator)?;
        Ok(self.state.tasks.iter().filter(|t| t.needs_adjudication()).collect())
    }

    /// Settles a conflict or overrides a needs-context rejection. `None` rejects.
    pub fn resolve(&mut self, task_id: &str, adjudicator: &str, label: Option<LabelVector>) -> Result<()> {
        self.require_adjudicator(adjudicator)?;
        let task = self.task(task_id)?;
        if !task.needs_adjudication() {
            return Err(AnnotateError::State(format!(
                "task `{task_id}` is {:?} and does not need adjudication",
                task.state
            )));
        }
        self.commit(Event::ConflictResolved {
            at: (self.clock)(),
            task_id: task_id.to_owned(),
            adjudicator: adjudicator.to_owned(),
            label,
        })
    }

    pub fn progress(&self) -> Progress {
        let mut p = Progress {
            total: self.state.tasks.len(),
            ..Progress::default()
        };
        for t in &self.state.tasks {
            match t.state {
                TaskState::Open => p.open += 1,
                TaskState::Agreed => p.agreed += 1,
                TaskState::Conflict => p.conflict += 1,
                TaskState::Resolved => p.resolved += 1,
            }
            if t.accepted_label().is_some() {
                p.accepted += 1;
            }
            if t.is_rejected() {
                p.rejected += 1;
            }
        }
        p
    }

    pub fn annotator_progress(&self, annotator: &str) -> Result<AnnotatorProgress> {
        self.require_annotator(annotator)?;
        let mut p = AnnotatorProgress::default();
        for t in self.state.tasks.iter().filter(|t| t.assigned.iter().any(|a| a == annotator)) {
            p.assigned += 1;
            if t.votes.contains_key(annotator) {
                p.completed += 1;
            }
        }
        p.remaining = p.assigned - p.completed;
        Ok(p)
    }

    /// Accepted items as corpus samples.
    pub fn export(&self) -> Vec<Sample> {
        self.state.accepted_samples()
    }
}

/// Reads every event in a log file.
pub fn read_events(path: &Path) -> Result<Vec<Event>> {
    let f = File::open(path).map_err(|e| AnnotateError::io(path, e))?;
    let mut events = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| AnnotateError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let event = serde_json::from_str(&line).map_err(|e| AnnotateError::Log {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        events.push(event);
    }
    Ok(events)
}

/// Rebuilds state from events alone.
pub fn replay<'a>(events: impl IntoIterator<Item = &'a Event>) -> State {
    let mut state = State::default();
    for e in events {
        state.apply(e);
    }
    state
}

/// Restores state from a store directory without opening it for writing.
pub fn load_state(dir: &Path) -> Result<State> {
    let snap = dir.join(SNAPSHOT_FILE);
    let mut state = if snap.exists() {
        let bytes = std::fs::read(&snap).map_err(|e| AnnotateError::io(&snap, e))?;
        let mut s: State = serde_json::from_slice(&bytes)?;
        s.rebuild_index();
        s
    } else {
        State::default()
    };
    let log = dir.join(EVENTS_FILE);
    if log.exists() {
        let events = read_events(&log)?;
        if (events.len() as u64) < state.applied {
            return Err(AnnotateError::Log {
                path: log,
                line: events.len(),
                message: format!("snapshot covers {} events but the log has only {}", state.applied, events.len()),
            });
        }
        for e in &events[state.applied as usize..] {
            state.apply(e);
        }
    }
    Ok(state)
}
