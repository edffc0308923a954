//! Provisioning state machine. The run follows one primary path; DLM
//! computation is a side branch forked when the DLM measurement ends and
//! joined before calibration computation starts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RunState {
    Idle,
    DlmSetup,
    DlmMeasure,
    DlmCompute,
    CalibSetupMeasure,
    CalibCompute,
    Visualize,
    AwaitDecision,
    Commit,
    Revert,
    Done,
    Failed,
}

impl RunState {
    pub const ALL: [RunState; 12] = [
        RunState::Idle,
        RunState::DlmSetup,
        RunState::DlmMeasure,
        RunState::DlmCompute,
        RunState::CalibSetupMeasure,
        RunState::CalibCompute,
        RunState::Visualize,
        RunState::AwaitDecision,
        RunState::Commit,
        RunState::Revert,
        RunState::Done,
        RunState::Failed,
    ];

    pub fn is_terminal(self) -> bool {
        matches!(self, RunState::Done | RunState::Failed)
    }
}

/// Edges of the primary path (DLM computation runs beside it).
pub fn is_legal(from: RunState, to: RunState) -> bool {
    use RunState::*;
    match (from, to) {
        (Idle, DlmSetup)
        | (DlmSetup, DlmMeasure)
        | (DlmMeasure, CalibSetupMeasure)
        | (CalibSetupMeasure, CalibCompute)
        | (CalibCompute, Visualize)
        | (Visualize, AwaitDecision)
        | (AwaitDecision, Commit)
        | (AwaitDecision, Revert)
        | (Commit, Done)
        | (Revert, Done) => true,
        // A failing phase rolls back and stops; a failed commit falls back
        // to revert.
        (Commit, Revert) => true,
        (s, Failed) => !s.is_terminal(),
        _ => false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionKind {
    Adopt,
    Revert,
}

/// Inputs driving the machine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Event {
    Start,
    /// The current primary phase finished.
    PhaseDone,
    /// The DLM side branch finished.
    DlmComputeDone,
    Decide(DecisionKind),
    DecisionTimeout,
    Fail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    NotStarted,
    Running,
    Done,
}

/// Primary state plus the DLM side branch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Machine {
    pub state: RunState,
    pub dlm_branch: Branch,
    pub history: Vec<RunState>,
}

impl Default for Machine {
    fn default() -> Self {
        Self { state: RunState::Idle, dlm_branch: Branch::NotStarted, history: vec![RunState::Idle] }
    }
}

impl Machine {
    fn go(&mut self, to: RunState) -> Result<RunState> {
        if !is_legal(self.state, to) {
            return Err(Error::Transition { from: self.state, to });
        }
        self.state = to;
        self.history.push(to);
        Ok(to)
    }

    fn reject(&self, to: RunState) -> Error {
        Error::Transition { from: self.state, to }
    }

    /// Applies an event; an event that does not fit the current state is
    /// rejected and leaves the machine unchanged.
    pub fn apply(&mut self, ev: Event) -> Result<RunState> {
        use RunState::*;
        match (self.state, ev) {
            (Idle, Event::Start) => self.go(DlmSetup),
            (DlmSetup, Event::PhaseDone) => self.go(DlmMeasure),
            (DlmMeasure, Event::PhaseDone) => {
                self.dlm_branch = Branch::Running;
                self.go(CalibSetupMeasure)
            }
            (s, Event::DlmComputeDone) if self.dlm_branch == Branch::Running && !s.is_terminal() => {
                self.dlm_branch = Branch::Done;
                Ok(s)
            }
            (CalibSetupMeasure, Event::PhaseDone) => {
                if self.dlm_branch != Branch::Done {
                    return Err(self.reject(CalibCompute));
                }
                self.go(CalibCompute)
            }
            (CalibCompute, Event::PhaseDone) => self.go(Visualize),
            (Visualize, Event::PhaseDone) => self.go(AwaitDecision),
            (AwaitDecision, Event::Decide(DecisionKind::Adopt)) => self.go(Commit),
            (AwaitDecision, Event::Decide(DecisionKind::Revert)) | (AwaitDecision, Event::DecisionTimeout) => {
                self.go(Revert)
            }
            (Commit, Event::PhaseDone) | (Revert, Event::PhaseDone) => self.go(Done),
            (Commit, Event::Fail) => self.go(Revert),
            (s, Event::Fail) if !s.is_terminal() && s != AwaitDecision => self.go(Failed),
            (_, Event::Decide(DecisionKind::Adopt)) => Err(self.reject(Commit)),
            (_, Event::Decide(DecisionKind::Revert)) | (_, Event::DecisionTimeout) => Err(self.reject(Revert)),
            (s, _) => Err(self.reject(s)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EVENTS: [Event; 7] = [
        Event::Start,
        Event::PhaseDone,
        Event::DlmComputeDone,
        Event::Decide(DecisionKind::Adopt),
        Event::Decide(DecisionKind::Revert),
        Event::DecisionTimeout,
        Event::Fail,
    ];

    fn check(m: &Machine) {
        for w in m.history.windows(2) {
            assert!(is_legal(w[0], w[1]), "{:?} -> {:?}", w[0], w[1]);
        }
        let commit = m.history.contains(&RunState::Commit);
        let revert = m.history.contains(&RunState::Revert);
        // A revert after a commit only happens when the commit itself failed.
        if commit && revert {
            let c = m.history.iter().position(|&s| s == RunState::Commit).unwrap();
            assert_eq!(m.history[c + 1], RunState::Revert);
        }
        if let Some(i) = m.history.iter().position(|&s| s == RunState::AwaitDecision) {
            if let Some(next) = m.history.get(i + 1) {
                assert!(matches!(next, RunState::Commit | RunState::Revert));
            }
        }
        if m.history.contains(&RunState::CalibCompute) {
            assert_eq!(m.dlm_branch, Branch::Done);
        }
    }

    fn explore(m: &Machine, depth: usize, visited: &mut usize) {
        *visited += 1;
        check(m);
        if depth == 0 {
            return;
        }
        for ev in EVENTS {
            let mut next = m.clone();
            match next.apply(ev) {
                Ok(_) => explore(&next, depth - 1, visited),
                Err(_) => assert_eq!(next, *m, "rejected event mutated the machine"),
            }
        }
    }

    #[test]
    fn exhaustive_sequences_up_to_twelve() {
        let mut visited = 0;
        explore(&Machine::default(), 12, &mut visited);
        assert!(visited > 12);
    }

    #[test]
    fn happy_path() {
        let mut m = Machine::default();
        for ev in [
            Event::Start,
            Event::PhaseDone,
            Event::PhaseDone,
            Event::DlmComputeDone,
            Event::PhaseDone,
            Event::PhaseDone,
            Event::PhaseDone,
            Event::Decide(DecisionKind::Adopt),
            Event::PhaseDone,
        ] {
            m.apply(ev).unwrap();
        }
        assert_eq!(m.state, RunState::Done);
    }

    #[test]
    fn calib_compute_waits_for_dlm_branch() {
        let mut m = Machine::default();
        for ev in [Event::Start, Event::PhaseDone, Event::PhaseDone] {
            m.apply(ev).unwrap();
        }
        assert!(m.apply(Event::PhaseDone).is_err());
        m.apply(Event::DlmComputeDone).unwrap();
        assert_eq!(m.apply(Event::PhaseDone).unwrap(), RunState::CalibCompute);
    }

    #[test]
    fn await_decision_ignores_phase_done_and_fail() {
        let mut m = Machine { state: RunState::AwaitDecision, dlm_branch: Branch::Done, history: vec![] };
        assert!(m.apply(Event::PhaseDone).is_err());
        assert!(m.apply(Event::Fail).is_err());
        assert_eq!(m.apply(Event::DecisionTimeout).unwrap(), RunState::Revert);
    }
}
