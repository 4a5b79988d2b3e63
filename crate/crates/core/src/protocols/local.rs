//! In-memory delivery loop for running a whole committee in one process.

use std::collections::{BTreeMap, VecDeque};

use super::engine::Step;
use super::envelope::{Destination, Envelope, Outgoing};
use super::{Driver, ProtocolError, ProtocolOutput};

/// What the network does with an outgoing message.
pub enum Delivery {
    Deliver,
    Drop,
}

/// Result of a local run, per participant id.
pub struct LocalRun {
    pub outputs: BTreeMap<u32, Result<ProtocolOutput, ProtocolError>>,
    /// Every message sent, in send order.
    pub transcript: Vec<Outgoing>,
}

impl LocalRun {
    /// All outputs, or the first error by participant id.
    pub fn into_outputs(self) -> Result<BTreeMap<u32, ProtocolOutput>, ProtocolError> {
        self.outputs
            .into_iter()
            .map(|(id, r)| r.map(|o| (id, o)))
            .collect()
    }
}

/// Runs started sessions to completion, delivering messages in FIFO order.
/// `tamper` sees every message before delivery and may alter or drop it.
/// Parties left waiting once the network is quiet time out.
pub fn run_local(
    started: Vec<(Box<dyn Driver>, Step<ProtocolOutput>)>,
    mut tamper: impl FnMut(&mut Outgoing) -> Delivery,
) -> LocalRun {
    let mut drivers: BTreeMap<u32, Box<dyn Driver>> = BTreeMap::new();
    let mut outputs = BTreeMap::new();
    let mut queue: VecDeque<Outgoing> = VecDeque::new();
    let mut transcript = Vec::new();
    for (driver, step) in started {
        let id = driver.me();
        if let Some(o) = step.output {
            outputs.insert(id, Ok(o));
        }
        queue.extend(step.outgoing);
        drivers.insert(id, driver);
    }
    while let Some(mut msg) = queue.pop_front() {
        transcript.push(msg.clone());
        if matches!(tamper(&mut msg), Delivery::Drop) {
            continue;
        }
        let sender = msg.envelope.sender;
        let targets: Vec<u32> = match msg.to {
            Destination::Party(p) => vec![p],
            Destination::Broadcast => drivers
                .get(&sender)
                .map(|d| d.participants())
                .unwrap_or_default()
                .into_iter()
                .filter(|&p| p != sender)
                .collect(),
        };
        for target in targets {
            if outputs.get(&target).is_some_and(|r| r.is_err()) {
                continue;
            }
            let Some(driver) = drivers.get_mut(&target) else {
                continue;
            };
            let env: Envelope = msg.envelope.clone();
            match driver.step(vec![env]) {
                Ok(step) => {
                    if let Some(o) = step.output {
                        outputs.insert(target, Ok(o));
                    }
                    queue.extend(step.outgoing);
                }
                Err(e) => {
                    outputs.insert(target, Err(e));
                }
            }
        }
    }
    for (id, driver) in drivers.iter_mut() {
        outputs.entry(*id).or_insert_with(|| Err(driver.timeout()));
    }
    LocalRun {
        outputs,
        transcript,
    }
}
