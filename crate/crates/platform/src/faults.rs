//! Exhaustive hub-side corruption runs: one session per (history position,
//! target agent), each with that single frame corrupted on its way to that
//! agent.

use std::collections::BTreeMap;

use crate::hub::{Fault, FaultAction};
use crate::messages::{Failure, TaskKind, TaskOutcome};
use crate::stack::InProcessStack;
use crate::wire::RoomId;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    /// Every agent finished with the same public output.
    AllDelivered,
    AllAborted,
    /// Some agents finished and others did not, or outputs differ.
    Split,
}

#[derive(Clone, Debug)]
pub struct Case {
    pub position: usize,
    pub target: String,
    pub verdict: Verdict,
    /// Each agent's failure, for diagnosing splits.
    pub detail: Vec<(String, Option<String>)>,
}

#[derive(Clone, Debug, Default)]
pub struct MatrixReport {
    /// Frames in the clean run.
    pub positions: usize,
    pub cases: Vec<Case>,
}

impl MatrixReport {
    pub fn count(&self, v: Verdict) -> usize {
        self.cases.iter().filter(|c| c.verdict == v).count()
    }

    pub fn splits(&self) -> Vec<&Case> {
        self.cases.iter().filter(|c| c.verdict == Verdict::Split).collect()
    }
}

pub fn classify(outcomes: &BTreeMap<String, Option<Result<TaskOutcome, Failure>>>) -> Verdict {
    let ok: Vec<&TaskOutcome> = outcomes
        .values()
        .filter_map(|o| o.as_ref().and_then(|r| r.as_ref().ok()))
        .collect();
    if ok.is_empty() {
        Verdict::AllAborted
    } else if ok.len() == outcomes.len() && ok.windows(2).all(|w| same_public(w[0], w[1])) {
        Verdict::AllDelivered
    } else {
        Verdict::Split
    }
}

/// Reshare members report either a staged share or a hand-over; both carry
/// the public key, which is what must agree.
fn same_public(a: &TaskOutcome, b: &TaskOutcome) -> bool {
    let pk = |o: &TaskOutcome| match o {
        TaskOutcome::Staged { public_key, .. } | TaskOutcome::Relinquished { public_key } => {
            Some(public_key.clone())
        }
        _ => None,
    };
    match (pk(a), pk(b)) {
        (Some(x), Some(y)) => x == y,
        _ => a == b,
    }
}

/// A session to repeat: `setup(i)` returns the key id, task and committee of
/// run `i`. Runs must not depend on each other's outcome.
pub type Setup<'a> = dyn Fn(usize) -> (String, TaskKind, Vec<(u32, String)>) + 'a;

/// Needs a stack started with faults enabled.
pub fn corruption_matrix(stack: &InProcessStack, label: u8, setup: &Setup<'_>) -> MatrixReport {
    let request = |i: usize| {
        let mut id = [0u8; 16];
        id[0] = 0xfa;
        id[1] = label;
        id[8..].copy_from_slice(&(i as u64).to_be_bytes());
        id
    };
    let tap = stack.hub.tap();
    let (key_id, kind, committee) = setup(0);
    let clean_room = RoomId(request(0));
    let clean = stack.fan_out(&key_id, kind, &committee, clean_room.0);
    assert_eq!(classify(&clean), Verdict::AllDelivered, "clean run failed: {clean:?}");
    let positions = tap.try_iter().filter(|f| f.room == clean_room).count();
    drop(tap);

    let mut targets: Vec<String> = committee.iter().map(|(_, n)| n.clone()).collect();
    targets.sort();
    targets.dedup();
    let mut report = MatrixReport {
        positions,
        cases: Vec::new(),
    };
    let mut run = 1;
    for position in 0..positions {
        for target in &targets {
            let (key_id, kind, committee) = setup(run);
            let room = RoomId(request(run));
            run += 1;
            stack.hub.clear_faults();
            stack
                .hub
                .inject(Fault {
                    room: Some(room),
                    position,
                    target: target.clone(),
                    action: FaultAction::Corrupt,
                })
                .expect("stack started with faults enabled");
            let outcomes = stack.fan_out(&key_id, kind, &committee, room.0);
            let detail = outcomes
                .iter()
                .map(|(n, o)| {
                    let why = match o {
                        None => Some("no reply".to_owned()),
                        Some(Err(f)) => Some(f.to_string()),
                        Some(Ok(_)) => None,
                    };
                    (n.clone(), why)
                })
                .collect();
            report.cases.push(Case {
                position,
                target: target.clone(),
                verdict: classify(&outcomes),
                detail,
            });
        }
    }
    stack.hub.clear_faults();
    report
}
