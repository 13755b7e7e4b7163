use flowsmith::journal::{RunJournal, LOST_RUN};
use flowsmith_core::agent::{RunState, RunStatus};
use flowsmith_core::model::{ComplexityLevel, Query};
use proptest::prelude::*;

const STATUSES: [RunStatus; 5] = [
    RunStatus::Running,
    RunStatus::AwaitingDecision,
    RunStatus::Accepted,
    RunStatus::Rejected,
    RunStatus::Failed,
];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn replay_keeps_the_last_state_and_fails_open_runs(events in prop::collection::vec((0usize..4, 0usize..5), 1..40)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("runs.jsonl");
        let runs: Vec<RunState> = (0..4)
            .map(|i| RunState::new(Query::user(format!("query {i}"), ComplexityLevel::Simple).unwrap()))
            .collect();
        let mut last: Vec<Option<RunStatus>> = vec![None; 4];
        let mut first_seen = Vec::new();
        {
            let (journal, replayed) = RunJournal::open(&path).unwrap();
            prop_assert!(replayed.is_empty());
            for (run, status) in &events {
                let mut state = runs[*run].clone();
                state.status = STATUSES[*status];
                journal.record(&state);
                last[*run] = Some(state.status);
                if !first_seen.contains(run) {
                    first_seen.push(*run);
                }
            }
        }
        let (_, replayed) = RunJournal::open(&path).unwrap();
        prop_assert_eq!(replayed.len(), first_seen.len());
        for (state, run) in replayed.iter().zip(&first_seen) {
            prop_assert_eq!(&state.run_id, &runs[*run].run_id);
            let recorded = last[*run].unwrap();
            if recorded.is_terminal() {
                prop_assert_eq!(state.status, recorded);
            } else {
                prop_assert_eq!(state.status, RunStatus::Failed);
                prop_assert_eq!(state.failure.as_deref(), Some(LOST_RUN));
            }
        }
    }
}

#[test]
fn corrupt_journal_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("runs.jsonl");
    std::fs::write(&path, "\n{oops\n").unwrap();
    let err = RunJournal::open(&path).err().unwrap().to_string();
    assert!(err.contains("line 2"), "{err}");
}
