//! Interactive editing state: current assignment, filter, and assignment
//! history.

use thiserror::Error;

use crate::model::{Dataset, SetLabel};
use crate::splits::{SplitAssignment, SplitError, Violation};
use crate::stats::{filter_frames, FilterCriteria, FilterError};
use crate::viewmodel::{build_view_model, ViewModel};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SessionError {
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error("invalid assignment")]
    Invalid(Vec<Violation>),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error("nothing to undo")]
    NothingToUndo,
    #[error("nothing to redo")]
    NothingToRedo,
}

#[derive(Debug, Clone)]
pub struct Session {
    fingerprint: String,
    assignment: SplitAssignment,
    filter: FilterCriteria,
    undo: Vec<SplitAssignment>,
    redo: Vec<SplitAssignment>,
}

impl Session {
    pub fn new(dataset: &Dataset, assignment: SplitAssignment) -> Result<Self, SessionError> {
        assignment.validate(dataset).map_err(SessionError::Invalid)?;
        Ok(Session {
            fingerprint: dataset.fingerprint(),
            assignment,
            filter: FilterCriteria::default(),
            undo: Vec::new(),
            redo: Vec::new(),
        })
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn assignment(&self) -> &SplitAssignment {
        &self.assignment
    }

    pub fn filter(&self) -> &FilterCriteria {
        &self.filter
    }

    /// The assignment the last edit replaced, if any.
    pub fn previous(&self) -> Option<&SplitAssignment> {
        self.undo.last()
    }

    pub fn can_undo(&self) -> bool {
        !self.undo.is_empty()
    }

    pub fn can_redo(&self) -> bool {
        !self.redo.is_empty()
    }

    /// Replaces the assignment, recording the previous one for undo.
    /// Setting an identical assignment leaves the history untouched.
    pub fn set_assignment(
        &mut self,
        dataset: &Dataset,
        assignment: SplitAssignment,
    ) -> Result<(), SessionError> {
        assignment.validate(dataset).map_err(SessionError::Invalid)?;
        if assignment != self.assignment {
            let prev = std::mem::replace(&mut self.assignment, assignment);
            self.undo.push(prev);
            self.redo.clear();
        }
        Ok(())
    }

    pub fn reassign(
        &mut self,
        dataset: &Dataset,
        surgery_id: &str,
        set: SetLabel,
    ) -> Result<(), SessionError> {
        let next = self.assignment.reassign(surgery_id, set)?;
        self.set_assignment(dataset, next)
    }

    pub fn undo(&mut self) -> Result<(), SessionError> {
        let prev = self.undo.pop().ok_or(SessionError::NothingToUndo)?;
        self.redo.push(std::mem::replace(&mut self.assignment, prev));
        Ok(())
    }

    pub fn redo(&mut self) -> Result<(), SessionError> {
        let next = self.redo.pop().ok_or(SessionError::NothingToRedo)?;
        self.undo.push(std::mem::replace(&mut self.assignment, next));
        Ok(())
    }

    pub fn set_filter(&mut self, dataset: &Dataset, filter: FilterCriteria) -> Result<(), SessionError> {
        filter_frames(dataset, &filter)?;
        self.filter = filter;
        Ok(())
    }

    pub fn clear_filter(&mut self) {
        self.filter = FilterCriteria::default();
    }

    pub fn view_model(&self, dataset: &Dataset) -> ViewModel {
        build_view_model(dataset, &self.assignment, &self.filter)
            .expect("session filter was validated against this dataset")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FrameRecord, PhaseId, Surgery};

    fn dataset() -> Dataset {
        let s = |id: &str, phases: &[u16]| Surgery {
            id: id.into(),
            frames: phases
                .iter()
                .enumerate()
                .map(|(t, &p)| FrameRecord {
                    time_index: t as u64,
                    phase: PhaseId(p),
                    instruments: Default::default(),
                })
                .collect(),
        };
        Dataset::new(
            vec!["A".into(), "B".into()],
            vec!["X".into()],
            vec![s("1", &[0, 1]), s("2", &[0]), s("3", &[1, 0])],
        )
        .unwrap()
    }

    fn session(ds: &Dataset) -> Session {
        let a = SplitAssignment::from_labels(
            [
                ("1".to_owned(), SetLabel::Train),
                ("2".to_owned(), SetLabel::Train),
                ("3".to_owned(), SetLabel::Test),
            ]
            .into(),
            false,
        )
        .unwrap();
        Session::new(ds, a).unwrap()
    }

    #[test]
    fn reassign_undo_redo() {
        let ds = dataset();
        let mut s = session(&ds);
        let before = s.view_model(&ds);
        s.reassign(&ds, "2", SetLabel::Test).unwrap();
        let after = s.view_model(&ds);
        assert_ne!(before, after);
        s.undo().unwrap();
        assert_eq!(s.view_model(&ds), before);
        s.redo().unwrap();
        assert_eq!(s.view_model(&ds), after);
        assert_eq!(s.redo(), Err(SessionError::NothingToRedo));
    }

    #[test]
    fn new_edit_clears_redo() {
        let ds = dataset();
        let mut s = session(&ds);
        s.reassign(&ds, "2", SetLabel::Test).unwrap();
        s.undo().unwrap();
        s.reassign(&ds, "1", SetLabel::Test).unwrap();
        assert!(!s.can_redo());
        s.undo().unwrap();
        assert_eq!(s.undo(), Err(SessionError::NothingToUndo));
    }

    #[test]
    fn invalid_edits_leave_state_alone() {
        let ds = dataset();
        let mut s = session(&ds);
        let a = s.assignment().clone();
        assert!(matches!(
            s.reassign(&ds, "9", SetLabel::Test),
            Err(SessionError::Split(SplitError::UnknownSurgery(_)))
        ));
        assert!(matches!(
            s.reassign(&ds, "1", SetLabel::Val),
            Err(SessionError::Split(SplitError::NoValidationSet(_)))
        ));
        // moving the only test surgery empties the test set
        assert!(matches!(s.reassign(&ds, "3", SetLabel::Train), Err(SessionError::Invalid(_))));
        assert_eq!(s.assignment(), &a);
        assert!(!s.can_undo());
        let bad = FilterCriteria {
            instruments: vec!["Y".into()],
            ..Default::default()
        };
        assert!(s.set_filter(&ds, bad).is_err());
        assert!(s.filter().is_empty());
    }
}
