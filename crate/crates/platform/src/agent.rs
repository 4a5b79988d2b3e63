//! Agent runtime: verifies broker tasks, runs protocol sessions in the
//! task's room and keeps its shares in an [`AgentShareStore`].
//!
//! Replies carry public outputs only. New shares are staged and become live
//! when the broker sends `Commit`.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand_chacha::ChaCha20Rng;
use rand_core::{OsRng, RngCore, SeedableRng};
use sha2::{Digest, Sha256};

use tdh_core::group::GroupPoint;
use tdh_core::protocols::{
    start_driver, Destination, Driver, Envelope, Exchange, NaiveKeygen, ProtocolError,
    ProtocolOutput, Reshare, ReshareConfig, ReshareRole, Scheme, SchemeParams, SessionId, Step,
    ThresholdKeygen, NEW_MEMBER_FLAG,
};
use tdh_core::sharing::PartyId;

use crate::auth::TaskSigner;
use crate::echo::EchoError;
use crate::messages::{
    decode, AgentReply, AgentTask, Failure, FailureKind, Operation, SignedTask, TaskKind,
    TaskOutcome, WireParams,
};
use crate::session::{RoomError, RoomEvent, RoomSession};
use crate::store::{AgentShareStore, StoreError};
use crate::transport::Connector;
use crate::wire::RoomId;

/// How often a waiting agent checks whether it has been killed.
const POLL: Duration = Duration::from_millis(50);

enum Halt {
    Killed,
    Fail(Failure),
}

impl From<Failure> for Halt {
    fn from(f: Failure) -> Self {
        Halt::Fail(f)
    }
}

fn fail(kind: FailureKind, msg: impl ToString) -> Halt {
    Halt::Fail(Failure::new(kind, msg.to_string()))
}

fn storage(e: StoreError) -> Halt {
    match e {
        StoreError::Exists(k) => fail(FailureKind::KeyExists, k),
        other => fail(FailureKind::Storage, other),
    }
}

fn params_of(w: WireParams) -> Result<SchemeParams, Halt> {
    SchemeParams::try_from(w).map_err(|e| fail(FailureKind::InvalidRequest, e))
}

pub struct Agent {
    name: String,
    signer: TaskSigner,
    store: AgentShareStore,
    connector: Arc<dyn Connector>,
    killed: AtomicBool,
    crash_in: Mutex<Option<Operation>>,
}

impl Agent {
    pub fn new(
        name: &str,
        signer: TaskSigner,
        store: AgentShareStore,
        connector: Arc<dyn Connector>,
    ) -> Self {
        Agent {
            name: name.to_owned(),
            signer,
            store,
            connector,
            killed: AtomicBool::new(false),
            crash_in: Mutex::new(None),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn store(&self) -> &AgentShareStore {
        &self.store
    }

    /// Stops answering and abandons running sessions without a word.
    pub fn kill(&self) {
        self.killed.store(true, Ordering::SeqCst);
    }

    pub fn revive(&self) {
        self.killed.store(false, Ordering::SeqCst);
    }

    pub fn is_killed(&self) -> bool {
        self.killed.load(Ordering::SeqCst)
    }

    /// Simulates a crash during the next `op` session: the agent sends its
    /// first-round messages and then dies.
    pub fn crash_during_next(&self, op: Operation) {
        *self.crash_in.lock().unwrap() = Some(op);
    }

    /// Runs one task. `None` means the agent died before replying.
    pub fn handle(&self, signed: &SignedTask) -> Option<AgentReply> {
        if self.is_killed() {
            return None;
        }
        if !self.signer.verify(&signed.body, &signed.mac) {
            log::warn!("{}: rejected task with a bad signature", self.name);
            return Some(AgentReply {
                task_id: 0,
                agent: self.name.clone(),
                outcome: Err(Failure::new(FailureKind::AuthFailure, "bad task signature")),
            });
        }
        let task: AgentTask = match decode(&signed.body) {
            Ok(t) => t,
            Err(e) => {
                return Some(AgentReply {
                    task_id: 0,
                    agent: self.name.clone(),
                    outcome: Err(Failure::new(FailureKind::InvalidRequest, e.to_string())),
                })
            }
        };
        let outcome = match self.execute(&task) {
            Ok(o) => Ok(o),
            Err(Halt::Killed) => return None,
            Err(Halt::Fail(f)) => Err(f),
        };
        if self.is_killed() {
            return None;
        }
        Some(AgentReply {
            task_id: task.task_id,
            agent: self.name.clone(),
            outcome,
        })
    }

    fn my_parties(&self, task: &AgentTask) -> Vec<u32> {
        task.committee
            .iter()
            .filter(|(_, n)| *n == self.name)
            .map(|(p, _)| *p)
            .collect()
    }

    fn execute(&self, task: &AgentTask) -> Result<TaskOutcome, Halt> {
        match &task.kind {
            TaskKind::Ping => Ok(TaskOutcome::Pong),
            TaskKind::Commit { version } => {
                self.store.commit(&task.key_id, *version).map_err(storage)?;
                Ok(TaskOutcome::Committed)
            }
            TaskKind::Discard { version } => {
                self.store.discard(&task.key_id, *version).map_err(storage)?;
                Ok(TaskOutcome::Discarded)
            }
            TaskKind::Keygen { params } => self.keygen(task, params_of(*params)?),
            TaskKind::Exchange {
                params,
                subset,
                remote,
            } => self.exchange(task, params_of(*params)?, subset, remote),
            TaskKind::Reshare {
                old_params,
                old_parties,
                new_params,
                public_key,
                version,
            } => self.reshare(
                task,
                params_of(*old_params)?,
                old_parties,
                params_of(*new_params)?,
                public_key,
                *version,
            ),
        }
    }

    fn keygen(&self, task: &AgentTask, params: SchemeParams) -> Result<TaskOutcome, Halt> {
        if self.store.current(&task.key_id).map_err(storage)?.is_some() {
            return Err(fail(FailureKind::KeyExists, &task.key_id));
        }
        let mut rng = self.rng(task, b"drivers");
        let sid = SessionId(task.request_id);
        let mut starts = Vec::new();
        for p in self.my_parties(task) {
            let started = match params.scheme {
                Scheme::Naive => start_driver(sid, NaiveKeygen::new(params, PartyId(p))?, &mut rng),
                Scheme::Threshold => {
                    start_driver(sid, ThresholdKeygen::new(params, PartyId(p))?, &mut rng)
                }
            };
            starts.push(started?);
        }
        let p2p = params.scheme == Scheme::Threshold;
        let outputs = self.run(task, Operation::Keygen, starts, p2p)?;
        let mut staged = None;
        for out in outputs {
            let ProtocolOutput::Key(record) = out else {
                return Err(fail(FailureKind::Internal, "unexpected keygen output"));
            };
            let pk = record.public_key.encode().as_bytes().to_vec();
            if staged.as_ref().is_some_and(|s| *s != pk) {
                return Err(fail(FailureKind::AgentsDisagree, "local parties disagree"));
            }
            self.store.stage(&task.key_id, 1, &record).map_err(storage)?;
            staged = Some(pk);
        }
        let public_key = staged.ok_or_else(|| fail(FailureKind::InvalidRequest, "not in committee"))?;
        Ok(TaskOutcome::Staged {
            public_key,
            version: 1,
        })
    }

    fn exchange(
        &self,
        task: &AgentTask,
        params: SchemeParams,
        subset: &[u32],
        remote: &[u8],
    ) -> Result<TaskOutcome, Halt> {
        let (_, record) = self
            .store
            .current(&task.key_id)
            .map_err(storage)?
            .ok_or_else(|| fail(FailureKind::UnknownKey, &task.key_id))?;
        if record.params != params {
            return Err(fail(FailureKind::InvalidRequest, "parameters do not match the stored key"));
        }
        let mine = self.my_parties(task);
        if mine != [record.party.0] {
            return Err(fail(FailureKind::InvalidRequest, "committee does not match the stored share"));
        }
        let y = GroupPoint::decode_sanitized(remote, params.curve)
            .map_err(|e| fail(FailureKind::InvalidRequest, e))?;
        if y.is_identity() {
            return Err(fail(FailureKind::InvalidRequest, "remote key has no prime-order component"));
        }
        let logic = match params.scheme {
            Scheme::Naive => Exchange::naive(&record, &y)?,
            Scheme::Threshold => {
                let ids: Vec<PartyId> = subset.iter().copied().map(PartyId).collect();
                Exchange::threshold(&record, &ids, &y)?
            }
        };
        drop(record);
        let mut rng = self.rng(task, b"drivers");
        let started = start_driver(SessionId(task.request_id), logic, &mut rng)?;
        let outputs = self.run(task, Operation::Exchange, vec![started], false)?;
        match outputs.into_iter().next() {
            Some(ProtocolOutput::Exchange(o)) => Ok(TaskOutcome::Shared {
                shared_point: o.shared_point.encode().as_bytes().to_vec(),
                psk: o.psk,
            }),
            _ => Err(fail(FailureKind::Internal, "unexpected exchange output")),
        }
    }

    fn reshare(
        &self,
        task: &AgentTask,
        old_params: SchemeParams,
        old_parties: &[u32],
        new_params: SchemeParams,
        public_key: &[u8],
        version: u32,
    ) -> Result<TaskOutcome, Halt> {
        let x = GroupPoint::decode(public_key, old_params.curve)
            .map_err(|e| fail(FailureKind::InvalidRequest, e))?;
        let config = ReshareConfig {
            old_params,
            old_parties: old_parties.iter().copied().map(PartyId).collect(),
            new_params,
            expected_public_key: Some(x),
        };
        let mut rng = self.rng(task, b"drivers");
        let sid = SessionId(task.request_id);
        let mut starts = Vec::new();
        for p in self.my_parties(task) {
            let role = if p & NEW_MEMBER_FLAG != 0 {
                ReshareRole::New(PartyId(p & !NEW_MEMBER_FLAG))
            } else {
                let (v, record) = self
                    .store
                    .current(&task.key_id)
                    .map_err(storage)?
                    .ok_or_else(|| fail(FailureKind::UnknownKey, &task.key_id))?;
                if v + 1 != version || record.party.0 != p || record.params != old_params {
                    return Err(fail(
                        FailureKind::InvalidRequest,
                        format!("stored share v{v} does not match the old committee"),
                    ));
                }
                if record.public_key != x {
                    return Err(fail(FailureKind::InvalidRequest, "public key mismatch"));
                }
                ReshareRole::Old(record)
            };
            starts.push(start_driver(sid, Reshare::new(config.clone(), role)?, &mut rng)?);
        }
        if starts.is_empty() {
            return Err(fail(FailureKind::InvalidRequest, "not in committee"));
        }
        let outputs = self.run(task, Operation::Reshare, starts, true)?;
        let mut outcome = None;
        for out in outputs {
            let ProtocolOutput::Reshare(o) = out else {
                return Err(fail(FailureKind::Internal, "unexpected reshare output"));
            };
            if o.public_key != x {
                return Err(fail(FailureKind::SessionAbort, "reshare changed the public key"));
            }
            let pk = o.public_key.encode().as_bytes().to_vec();
            if let Some(record) = &o.record {
                self.store.stage(&task.key_id, version, record).map_err(storage)?;
                outcome = Some(TaskOutcome::Staged {
                    public_key: pk,
                    version,
                });
            } else if outcome.is_none() {
                outcome = Some(TaskOutcome::Relinquished { public_key: pk });
            }
        }
        Ok(outcome.expect("at least one driver"))
    }

    /// Per-task randomness. With a task seed every choice is reproducible;
    /// otherwise it comes from the OS.
    fn rng(&self, task: &AgentTask, label: &[u8]) -> ChaCha20Rng {
        let base = task.seed.unwrap_or_else(|| {
            let mut b = [0u8; 32];
            OsRng.fill_bytes(&mut b);
            b
        });
        let mut h = Sha256::new();
        h.update(b"TDH-AGENT-RNG-v1");
        h.update(label);
        h.update(base);
        h.update((self.name.len() as u16).to_be_bytes());
        h.update(self.name.as_bytes());
        h.update(task.request_id);
        ChaCha20Rng::from_seed(h.finalize().into())
    }

    /// Drives the started sessions to completion in the task's room.
    /// Outputs come back in party order.
    fn run(
        &self,
        task: &AgentTask,
        op: Operation,
        starts: Vec<(Box<dyn Driver>, Step<ProtocolOutput>)>,
        p2p: bool,
    ) -> Result<Vec<ProtocolOutput>, Halt> {
        let committee: BTreeMap<u32, String> = task.committee.iter().cloned().collect();
        let members: BTreeSet<String> = committee.values().cloned().collect();
        let round_timeout = Duration::from_millis(task.round_timeout_ms);
        let link = self
            .connector
            .connect(&self.name)
            .map_err(|e| fail(FailureKind::Internal, e))?;
        let room = RoomId(task.request_id);
        let mut session = RoomSession::join(
            link,
            room,
            members,
            self.rng(task, b"room"),
            p2p,
            Instant::now() + round_timeout,
        )
        .map_err(|e| fail(FailureKind::SessionAbort, e))?;

        let mut run = Running {
            committee,
            drivers: BTreeMap::new(),
            outputs: BTreeMap::new(),
        };
        let result = (|| {
            for (driver, step) in starts {
                let me = driver.me();
                run.drivers.insert(me, driver);
                run.absorb(&mut session, me, step)?;
            }
            let crash = {
                let mut c = self.crash_in.lock().unwrap();
                if *c == Some(op) {
                    c.take()
                } else {
                    None
                }
            };
            if crash.is_some() {
                self.kill();
                return Err(Halt::Killed);
            }
            let mut deadline = Instant::now() + round_timeout;
            while run.outputs.len() < run.drivers.len() {
                if self.is_killed() {
                    return Err(Halt::Killed);
                }
                let slice = deadline.min(Instant::now() + POLL);
                match session.next_event(slice) {
                    Ok(ev) => {
                        run.on_event(&mut session, ev)?;
                        deadline = Instant::now() + round_timeout;
                    }
                    Err(RoomError::Timeout | RoomError::Echo(EchoError::MissingConfirmation(_)))
                        if Instant::now() < deadline => {}
                    Err(e @ RoomError::Echo(EchoError::MissingConfirmation(_))) => {
                        return Err(fail(FailureKind::SessionAbort, e))
                    }
                    Err(RoomError::Timeout) => {
                        let err = run
                            .drivers
                            .iter_mut()
                            .find(|(me, _)| !run.outputs.contains_key(*me))
                            .map(|(_, d)| d.timeout())
                            .unwrap_or(ProtocolError::Internal("timeout"));
                        return Err(fail(FailureKind::SessionAbort, err));
                    }
                    Err(e) => return Err(fail(FailureKind::SessionAbort, e)),
                }
            }
            let deadline = Instant::now() + round_timeout;
            loop {
                if self.is_killed() {
                    return Err(Halt::Killed);
                }
                match session.settle(deadline.min(Instant::now() + POLL)) {
                    Ok(()) => return Ok(()),
                    Err(RoomError::Echo(EchoError::MissingConfirmation(_))) if Instant::now() < deadline => {}
                    Err(e) => return Err(fail(FailureKind::SessionAbort, e)),
                }
            }
        })();
        match result {
            Ok(()) => {
                session.leave();
                Ok(run.outputs.into_values().collect())
            }
            Err(Halt::Killed) => Err(Halt::Killed),
            Err(Halt::Fail(f)) => {
                session.abort(&f.message);
                session.leave();
                Err(Halt::Fail(f))
            }
        }
    }
}

impl From<ProtocolError> for Halt {
    fn from(e: ProtocolError) -> Self {
        match e {
            ProtocolError::InvalidParams(m) => fail(FailureKind::InvalidRequest, m),
            other => fail(FailureKind::SessionAbort, other),
        }
    }
}

struct Running {
    committee: BTreeMap<u32, String>,
    drivers: BTreeMap<u32, Box<dyn Driver>>,
    outputs: BTreeMap<u32, ProtocolOutput>,
}

impl Running {
    fn absorb(
        &mut self,
        session: &mut RoomSession,
        me: u32,
        step: Step<ProtocolOutput>,
    ) -> Result<(), Halt> {
        for out in step.outgoing {
            let bytes = out.envelope.to_bytes();
            let sent = match out.to {
                Destination::Broadcast => session.broadcast(&bytes),
                Destination::Party(p) => {
                    let to = self
                        .committee
                        .get(&p)
                        .ok_or_else(|| fail(FailureKind::Internal, format!("no agent hosts party {p}")))?;
                    session.send_direct(to, p, &bytes)
                }
            };
            sent.map_err(|e| fail(FailureKind::SessionAbort, e))?;
        }
        if let Some(o) = step.output {
            self.outputs.insert(me, o);
        }
        Ok(())
    }

    fn deliver(&mut self, session: &mut RoomSession, me: u32, env: Envelope) -> Result<(), Halt> {
        if self.outputs.contains_key(&me) {
            return Ok(());
        }
        let Some(driver) = self.drivers.get_mut(&me) else {
            return Ok(());
        };
        let step = driver.step(vec![env])?;
        self.absorb(session, me, step)
    }

    fn on_event(&mut self, session: &mut RoomSession, ev: RoomEvent) -> Result<(), Halt> {
        let (from, data, target) = match ev {
            RoomEvent::Broadcast { from, data } => (from, data, None),
            RoomEvent::Direct { from, to_party, data } => (from, data, Some(to_party)),
        };
        let env = Envelope::from_bytes(&data)?;
        // Party ids must be spoken for by the agent hosting them.
        if self.committee.get(&env.sender) != Some(&from) {
            return Err(fail(
                FailureKind::SessionAbort,
                format!("{from} sent a message as party {}", env.sender),
            ));
        }
        match target {
            Some(p) => self.deliver(session, p, env),
            None => {
                let local: Vec<u32> = self.drivers.keys().copied().filter(|&m| m != env.sender).collect();
                for me in local {
                    self.deliver(session, me, env.clone())?;
                }
                Ok(())
            }
        }
    }
}
