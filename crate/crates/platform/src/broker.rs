//! Broker: authenticates customers, picks committees, fans tasks out to
//! agents and checks that they all report the same public result.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, Receiver, RecvTimeoutError};
use rand_chacha::ChaCha20Rng;
use rand_core::{OsRng, RngCore, SeedableRng};

use tdh_core::group::{CurveId, GroupPoint};
use tdh_core::protocols::{new_member, Scheme, SchemeParams};
use tdh_core::sharing::PartyId;

use crate::agent::Agent;
use crate::auth::{Authenticator, TaskSigner};
use crate::messages::{
    encode, AgentReply, AgentTask, Failure, FailureKind, Operation, OperationRequest,
    OperationResult, SignedTask, TaskKind, TaskOutcome, WireParams,
};
use crate::transport::ClientLink;
use crate::wire::{FrameType, RoomId};

/// A registered agent as seen by the broker.
pub trait AgentEndpoint: Send + Sync {
    fn name(&self) -> &str;
    /// Sends the task; the receiver yields the reply or disconnects if the
    /// agent goes away.
    fn dispatch(&self, task: SignedTask) -> Receiver<AgentReply>;
}

/// An agent living in the same process.
pub struct LocalEndpoint(pub Arc<Agent>);

impl AgentEndpoint for LocalEndpoint {
    fn name(&self) -> &str {
        self.0.name()
    }

    fn dispatch(&self, task: SignedTask) -> Receiver<AgentReply> {
        let (tx, rx) = bounded(1);
        let agent = self.0.clone();
        thread::spawn(move || {
            if let Some(reply) = agent.handle(&task) {
                let _ = tx.send(reply);
            }
        });
        rx
    }
}

#[derive(Clone, Debug)]
pub struct BrokerConfig {
    pub round_timeout: Duration,
    /// Makes request ids and agent randomness reproducible.
    pub seed: Option<[u8; 32]>,
    pub ping_timeout: Duration,
}

impl Default for BrokerConfig {
    fn default() -> Self {
        BrokerConfig {
            round_timeout: Duration::from_secs(30),
            seed: None,
            ping_timeout: Duration::from_secs(2),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyInfo {
    pub params: SchemeParams,
    pub public_key: GroupPoint,
    /// Party id to agent name.
    pub members: BTreeMap<u32, String>,
    pub version: u32,
}

/// Who takes part in one operation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Committee {
    /// Party id (new members flagged) to agent name.
    pub parties: Vec<(u32, String)>,
}

impl Committee {
    pub fn agents(&self) -> Vec<String> {
        let mut names: Vec<String> = self.parties.iter().map(|(_, n)| n.clone()).collect();
        names.sort();
        names.dedup();
        names
    }
}

fn insufficient(need: usize, have: usize) -> Failure {
    Failure::new(
        FailureKind::InsufficientAgents,
        format!("need {need} healthy agents, have {have}"),
    )
}

/// First `n` healthy agents, in registration order, as parties `1..=n`.
pub fn select_keygen(healthy: &[String], n: u16) -> Result<Committee, Failure> {
    let n = n as usize;
    if healthy.len() < n {
        return Err(insufficient(n, healthy.len()));
    }
    Ok(Committee {
        parties: healthy[..n]
            .iter()
            .enumerate()
            .map(|(i, a)| (i as u32 + 1, a.clone()))
            .collect(),
    })
}

/// The first `t + 1` healthy share holders by party id; all of them for
/// the naive scheme.
pub fn select_exchange(key: &KeyInfo, healthy: &[String]) -> Result<Committee, Failure> {
    let need = match key.params.scheme {
        Scheme::Naive => key.params.n as usize,
        Scheme::Threshold => key.params.quorum(),
    };
    let parties: Vec<(u32, String)> = key
        .members
        .iter()
        .filter(|(_, a)| healthy.contains(a))
        .take(need)
        .map(|(p, a)| (*p, a.clone()))
        .collect();
    if parties.len() < need {
        return Err(insufficient(need, parties.len()));
    }
    Ok(Committee { parties })
}

/// Old contributors (as for an exchange) plus the first `n'` healthy agents
/// as the new committee.
pub fn select_reshare(key: &KeyInfo, healthy: &[String], new_n: u16) -> Result<Committee, Failure> {
    let mut c = select_exchange(key, healthy)?;
    let n = new_n as usize;
    if healthy.len() < n {
        return Err(insufficient(n, healthy.len()));
    }
    for (j, a) in healthy[..n].iter().enumerate() {
        c.parties.push((new_member(PartyId(j as u32 + 1)), a.clone()));
    }
    Ok(c)
}

/// Decodes the remote key. `native` accepts the classic formats: a 32-byte
/// X25519 public key or a SEC1 P-256 point.
pub fn parse_remote(curve: CurveId, bytes: &[u8], native: bool) -> Result<GroupPoint, Failure> {
    let bad = |e: String| Failure::new(FailureKind::InvalidRequest, format!("remote key: {e}"));
    let point = match (curve, native, bytes.len()) {
        (CurveId::Curve25519, true, 32) => {
            let u: [u8; 32] = bytes.try_into().unwrap();
            GroupPoint::from_x25519_u(&u, 0).map_err(|e| bad(e.to_string()))?
        }
        (CurveId::P256, true, 65) => {
            let p = p256_from_sec1(bytes).ok_or_else(|| bad("not a P-256 point".into()))?;
            GroupPoint::decode(&p, curve).map_err(|e| bad(e.to_string()))?
        }
        (_, _, 33) => GroupPoint::decode_sanitized(bytes, curve).map_err(|e| bad(e.to_string()))?,
        (_, _, len) => return Err(bad(format!("unexpected length {len}"))),
    };
    let point = point.sanitize();
    if point.is_identity() {
        return Err(bad("no prime-order component".into()));
    }
    Ok(point)
}

/// Validates an uncompressed SEC1 point and compresses it.
fn p256_from_sec1(bytes: &[u8]) -> Option<Vec<u8>> {
    use p256::elliptic_curve::sec1::ToEncodedPoint;
    let pk = p256::PublicKey::from_sec1_bytes(bytes).ok()?;
    Some(pk.to_encoded_point(true).as_bytes().to_vec())
}

pub struct Broker {
    config: BrokerConfig,
    auth: Box<dyn Authenticator>,
    signer: TaskSigner,
    hub: Mutex<ClientLink>,
    agents: Mutex<Vec<Arc<dyn AgentEndpoint>>>,
    keys: Mutex<HashMap<String, KeyInfo>>,
    key_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    rng: Mutex<ChaCha20Rng>,
    next_task: AtomicU64,
}

impl Broker {
    /// `hub` is the broker's own connection, used to open and close rooms.
    pub fn new(
        config: BrokerConfig,
        auth: Box<dyn Authenticator>,
        signer: TaskSigner,
        hub: ClientLink,
    ) -> Self {
        let seed = config.seed.unwrap_or_else(|| {
            let mut s = [0u8; 32];
            OsRng.fill_bytes(&mut s);
            s
        });
        Broker {
            config,
            auth,
            signer,
            hub: Mutex::new(hub),
            agents: Mutex::new(Vec::new()),
            keys: Mutex::new(HashMap::new()),
            key_locks: Mutex::new(HashMap::new()),
            rng: Mutex::new(ChaCha20Rng::from_seed(seed)),
            next_task: AtomicU64::new(1),
        }
    }

    /// Adds an agent, replacing any earlier registration under its name.
    pub fn register(&self, agent: Arc<dyn AgentEndpoint>) {
        let mut agents = self.agents.lock().unwrap();
        match agents.iter_mut().find(|a| a.name() == agent.name()) {
            Some(slot) => *slot = agent,
            None => agents.push(agent),
        }
    }

    pub fn agent_names(&self) -> Vec<String> {
        self.agents.lock().unwrap().iter().map(|a| a.name().to_owned()).collect()
    }

    pub fn key_info(&self, key_id: &str) -> Option<KeyInfo> {
        self.keys.lock().unwrap().get(key_id).cloned()
    }

    fn endpoint(&self, name: &str) -> Option<Arc<dyn AgentEndpoint>> {
        self.agents.lock().unwrap().iter().find(|a| a.name() == name).cloned()
    }

    pub fn handle(&self, req: &OperationRequest) -> OperationResult {
        match self.handle_inner(req) {
            Ok(r) => r,
            Err(f) => OperationResult::Failure(f),
        }
    }

    fn handle_inner(&self, req: &OperationRequest) -> Result<OperationResult, Failure> {
        let who = self
            .auth
            .authenticate(&req.credential)
            .map_err(|e| Failure::new(FailureKind::AuthFailure, e.to_string()))?;
        self.auth
            .authorize(&who, req.op, &req.key_id)
            .map_err(|e| Failure::new(FailureKind::AuthFailure, e.to_string()))?;
        if req.key_id.is_empty() {
            return Err(Failure::new(FailureKind::InvalidRequest, "empty key id"));
        }
        let lock = self
            .key_locks
            .lock()
            .unwrap()
            .entry(req.key_id.clone())
            .or_default()
            .clone();
        let _serial = lock.lock().unwrap();
        match req.op {
            Operation::Keygen => self.keygen(req),
            Operation::Exchange => self.exchange(req, false),
            Operation::PskExchange => self.exchange(req, true),
            Operation::Reshare => self.reshare(req),
        }
    }

    fn known_key(&self, req: &OperationRequest) -> Result<KeyInfo, Failure> {
        let key = self
            .key_info(&req.key_id)
            .ok_or_else(|| Failure::new(FailureKind::UnknownKey, req.key_id.clone()))?;
        if let Some(w) = req.params {
            if WireParams::from(key.params) != w {
                return Err(Failure::new(
                    FailureKind::InvalidRequest,
                    "parameters do not match the key",
                ));
            }
        }
        Ok(key)
    }

    /// Agents answering a ping in time, in registration order.
    pub fn healthy_agents(&self) -> Vec<String> {
        let agents: Vec<_> = self.agents.lock().unwrap().clone();
        let pending: Vec<_> = agents
            .iter()
            .map(|a| {
                let task = self.sign(&AgentTask {
                    task_id: self.next_task.fetch_add(1, Ordering::Relaxed),
                    request_id: [0; 16],
                    key_id: String::new(),
                    kind: TaskKind::Ping,
                    committee: Vec::new(),
                    round_timeout_ms: 0,
                    seed: None,
                });
                (a.name().to_owned(), a.dispatch(task))
            })
            .collect();
        let deadline = Instant::now() + self.config.ping_timeout;
        pending
            .into_iter()
            .filter(|(_, rx)| {
                matches!(rx.recv_deadline(deadline), Ok(AgentReply { outcome: Ok(_), .. }))
            })
            .map(|(n, _)| n)
            .collect()
    }

    fn sign(&self, task: &AgentTask) -> SignedTask {
        let body = encode(task);
        SignedTask {
            mac: self.signer.sign(&body),
            body,
        }
    }

    fn request_id(&self) -> [u8; 16] {
        let mut id = [0u8; 16];
        self.rng.lock().unwrap().fill_bytes(&mut id);
        id
    }

    fn task_seed(&self) -> Option<[u8; 32]> {
        self.config.seed.map(|_| {
            let mut s = [0u8; 32];
            self.rng.lock().unwrap().fill_bytes(&mut s);
            s
        })
    }

    /// Opens a room and waits for the hub to confirm it.
    fn open_room(&self, room: RoomId) -> Result<(), Failure> {
        self.room_request(room, FrameType::Open)
    }

    fn close_room(&self, room: RoomId) {
        if let Err(f) = self.room_request(room, FrameType::Close) {
            log::warn!("closing room {room:?}: {f}");
        }
    }

    fn room_request(&self, room: RoomId, kind: FrameType) -> Result<(), Failure> {
        let hub = self.hub.lock().unwrap();
        match kind {
            FrameType::Open => hub.open(room),
            _ => hub.close(room),
        }
        let deadline = Instant::now() + Duration::from_secs(10);
        loop {
            match hub.recv_deadline(deadline) {
                Ok(f) if f.room == room && f.kind == FrameType::Ack => return Ok(()),
                Ok(f) if f.room == room && f.kind == FrameType::Error => {
                    return Err(Failure::new(
                        FailureKind::Internal,
                        format!("hub: {}", String::from_utf8_lossy(&f.body)),
                    ))
                }
                Ok(f) if f.kind == FrameType::Error && f.room == RoomId::default() => {
                    return Err(Failure::new(FailureKind::Internal, "hub connection lost"))
                }
                Ok(_) => {}
                Err(RecvTimeoutError::Timeout) => {
                    return Err(Failure::new(FailureKind::Internal, "hub did not answer"))
                }
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(Failure::new(FailureKind::Internal, "hub connection lost"))
                }
            }
        }
    }

    /// Runs one session: opens its room, sends `kind` to every agent of the
    /// committee and gathers the replies. Agents that do not answer map to
    /// `None`. The room is closed as soon as any agent fails so the others
    /// stop waiting.
    fn session(
        &self,
        key_id: &str,
        committee: &Committee,
        kind: TaskKind,
    ) -> Result<BTreeMap<String, Option<Result<TaskOutcome, Failure>>>, Failure> {
        let request_id = self.request_id();
        let room = RoomId(request_id);
        let seed = self.task_seed();
        self.open_room(room)?;
        let mut pending = Vec::new();
        for name in committee.agents() {
            let Some(ep) = self.endpoint(&name) else {
                continue;
            };
            let task = AgentTask {
                task_id: self.next_task.fetch_add(1, Ordering::Relaxed),
                request_id,
                key_id: key_id.to_owned(),
                kind: kind.clone(),
                committee: committee.parties.clone(),
                round_timeout_ms: self.config.round_timeout.as_millis() as u64,
                seed,
            };
            pending.push((name, task.task_id, ep.dispatch(self.sign(&task))));
        }
        // Agents time out on their own; this bound only guards against
        // endpoints that neither answer nor disconnect.
        let deadline = Instant::now() + self.config.round_timeout * 12;
        let mut replies = BTreeMap::new();
        let mut closed = false;
        let mut sel = crossbeam_channel::Select::new();
        for (_, _, rx) in &pending {
            sel.recv(rx);
        }
        let mut left = pending.len();
        while left > 0 {
            let op = match sel.select_deadline(deadline) {
                Ok(op) => op,
                Err(_) => break,
            };
            let i = op.index();
            let (name, task_id, rx) = &pending[i];
            let reply = op.recv(rx).ok().filter(|r| r.task_id == *task_id && r.agent == *name);
            let outcome = reply.map(|r| r.outcome);
            if !matches!(outcome, Some(Ok(_))) && !closed {
                self.close_room(room);
                closed = true;
            }
            replies.insert(name.clone(), outcome);
            sel.remove(i);
            left -= 1;
        }
        for (name, _, _) in &pending {
            replies.entry(name.clone()).or_insert(None);
        }
        if !closed {
            self.close_room(room);
        }
        Ok(replies)
    }

    /// The single failure to report for a failed session.
    fn summarize(replies: &BTreeMap<String, Option<Result<TaskOutcome, Failure>>>) -> Failure {
        let mut silent = Vec::new();
        let mut first = None;
        for (name, r) in replies {
            match r {
                None => silent.push(name.clone()),
                Some(Err(f)) if first.is_none() => first = Some(f.clone()),
                _ => {}
            }
        }
        match first {
            Some(f) if silent.is_empty() => f,
            Some(f) => Failure::new(f.kind, format!("{}; no answer from {}", f.message, silent.join(", "))),
            None if !silent.is_empty() => Failure::new(
                FailureKind::SessionAbort,
                format!("no answer from {}", silent.join(", ")),
            ),
            None => Failure::new(FailureKind::Internal, "session failed"),
        }
    }

    /// All outcomes if every agent succeeded.
    fn all_ok(
        replies: &BTreeMap<String, Option<Result<TaskOutcome, Failure>>>,
    ) -> Result<Vec<(String, TaskOutcome)>, Failure> {
        let mut out = Vec::new();
        for (name, r) in replies {
            match r {
                Some(Ok(o)) => out.push((name.clone(), o.clone())),
                _ => return Err(Self::summarize(replies)),
            }
        }
        Ok(out)
    }

    /// Sends `kind` to `agents` and waits for every reply.
    fn notify(&self, key_id: &str, agents: &[String], kind: TaskKind) {
        let pending: Vec<_> = agents
            .iter()
            .filter_map(|n| self.endpoint(n).map(|e| (n.clone(), e)))
            .map(|(n, ep)| {
                let task = AgentTask {
                    task_id: self.next_task.fetch_add(1, Ordering::Relaxed),
                    request_id: [0; 16],
                    key_id: key_id.to_owned(),
                    kind: kind.clone(),
                    committee: Vec::new(),
                    round_timeout_ms: 0,
                    seed: None,
                };
                (n, ep.dispatch(self.sign(&task)))
            })
            .collect();
        let deadline = Instant::now() + self.config.round_timeout;
        for (name, rx) in pending {
            match rx.recv_deadline(deadline) {
                Ok(AgentReply { outcome: Ok(_), .. }) => {}
                Ok(AgentReply { outcome: Err(f), .. }) => log::warn!("{name}: {kind:?} failed: {f}"),
                Err(_) => log::warn!("{name}: no answer to {kind:?}"),
            }
        }
    }

    fn keygen(&self, req: &OperationRequest) -> Result<OperationResult, Failure> {
        let w = req
            .params
            .ok_or_else(|| Failure::new(FailureKind::InvalidRequest, "keygen needs parameters"))?;
        let params = SchemeParams::try_from(w).map_err(|e| Failure::new(FailureKind::InvalidRequest, e))?;
        if self.key_info(&req.key_id).is_some() {
            return Err(Failure::new(FailureKind::KeyExists, req.key_id.clone()));
        }
        let healthy = self.healthy_agents();
        let committee = select_keygen(&healthy, params.n)?;
        let replies = self.session(&req.key_id, &committee, TaskKind::Keygen { params: w })?;
        let agents = committee.agents();
        let result = Self::all_ok(&replies).and_then(|outs| {
            let pk = agree(&outs, |o| match o {
                TaskOutcome::Staged { public_key, version: 1 } => Some(public_key.clone()),
                _ => None,
            })?;
            let public_key = GroupPoint::decode(&pk, params.curve)
                .map_err(|e| Failure::new(FailureKind::Internal, e.to_string()))?;
            Ok((pk, public_key))
        });
        match result {
            Ok((pk, public_key)) => {
                self.notify(&req.key_id, &agents, TaskKind::Commit { version: 1 });
                self.keys.lock().unwrap().insert(
                    req.key_id.clone(),
                    KeyInfo {
                        params,
                        public_key,
                        members: committee.parties.iter().cloned().collect(),
                        version: 1,
                    },
                );
                Ok(OperationResult::Keygen {
                    key_id: req.key_id.clone(),
                    public_key: pk,
                    agents,
                })
            }
            Err(f) => {
                self.notify(&req.key_id, &agents, TaskKind::Discard { version: 1 });
                Err(f)
            }
        }
    }

    fn exchange(&self, req: &OperationRequest, native: bool) -> Result<OperationResult, Failure> {
        let key = self.known_key(req)?;
        let remote = req
            .remote_pubkey
            .as_deref()
            .ok_or_else(|| Failure::new(FailureKind::InvalidRequest, "exchange needs a remote key"))?;
        let y = parse_remote(key.params.curve, remote, native)?;
        let remote = y.encode().as_bytes().to_vec();
        let mut excluded: Vec<String> = Vec::new();
        let mut last = None;
        for attempt in 1..=2u8 {
            let healthy: Vec<String> = self
                .healthy_agents()
                .into_iter()
                .filter(|a| !excluded.contains(a))
                .collect();
            let committee = match select_exchange(&key, &healthy) {
                Ok(c) => c,
                Err(f) => {
                    return Err(match last {
                        Some(prev) => Failure::new(f.kind, format!("{}; after: {prev}", f.message)),
                        None => f,
                    })
                }
            };
            let kind = TaskKind::Exchange {
                params: key.params.into(),
                subset: committee.parties.iter().map(|(p, _)| *p).collect(),
                remote: remote.clone(),
            };
            let replies = self.session(&req.key_id, &committee, kind)?;
            match Self::all_ok(&replies) {
                Ok(outs) => {
                    let (point, psk) = agree(&outs, |o| match o {
                        TaskOutcome::Shared { shared_point, psk } => Some((shared_point.clone(), *psk)),
                        _ => None,
                    })?;
                    return Ok(OperationResult::Exchange {
                        shared_point: point,
                        psk,
                        agents: committee.agents(),
                        attempts: attempt,
                    });
                }
                Err(f) => {
                    if f.kind != FailureKind::SessionAbort {
                        return Err(f);
                    }
                    // Retry without the agents that went quiet or aborted
                    // for reasons of their own.
                    for (name, r) in &replies {
                        if r.is_none() {
                            excluded.push(name.clone());
                        }
                    }
                    last = Some(f);
                }
            }
        }
        Err(last.expect("two attempts made"))
    }

    fn reshare(&self, req: &OperationRequest) -> Result<OperationResult, Failure> {
        let key = self.known_key(req)?;
        let (t, n) = req
            .new_committee
            .ok_or_else(|| Failure::new(FailureKind::InvalidRequest, "reshare needs a new committee"))?;
        let new_params = SchemeParams {
            curve: key.params.curve,
            scheme: key.params.scheme,
            t,
            n,
        };
        new_params
            .validate()
            .map_err(|e| Failure::new(FailureKind::InvalidRequest, e.to_string()))?;
        let healthy = self.healthy_agents();
        let committee = select_reshare(&key, &healthy, n)?;
        let version = key.version + 1;
        let old_parties: Vec<u32> = committee
            .parties
            .iter()
            .map(|(p, _)| *p)
            .filter(|p| key.members.contains_key(p))
            .collect();
        let kind = TaskKind::Reshare {
            old_params: key.params.into(),
            old_parties,
            new_params: new_params.into(),
            public_key: key.public_key.encode().as_bytes().to_vec(),
            version,
        };
        let replies = self.session(&req.key_id, &committee, kind)?;
        let participants = committee.agents();
        // Every holder of an old share takes part in the commit so that
        // those outside the new committee drop their share.
        let mut notified = participants.clone();
        for a in key.members.values() {
            if !notified.contains(a) {
                notified.push(a.clone());
            }
        }
        let expected = key.public_key.encode().as_bytes().to_vec();
        let result = Self::all_ok(&replies).and_then(|outs| {
            let pk = agree(&outs, |o| match o {
                TaskOutcome::Staged { public_key, version: v } if *v == version => Some(public_key.clone()),
                TaskOutcome::Relinquished { public_key } => Some(public_key.clone()),
                _ => None,
            })?;
            if pk != expected {
                return Err(Failure::new(FailureKind::AgentsDisagree, "public key changed"));
            }
            let staged: Vec<&String> = outs
                .iter()
                .filter(|(_, o)| matches!(o, TaskOutcome::Staged { .. }))
                .map(|(n, _)| n)
                .collect();
            let new_agents: Vec<&String> = committee
                .parties
                .iter()
                .filter(|(p, _)| !key.members.contains_key(p))
                .map(|(_, a)| a)
                .collect();
            if new_agents.iter().any(|a| !staged.contains(a)) {
                return Err(Failure::new(FailureKind::Internal, "a new member staged nothing"));
            }
            Ok(pk)
        });
        match result {
            Ok(pk) => {
                self.notify(&req.key_id, &notified, TaskKind::Commit { version });
                let members = committee
                    .parties
                    .iter()
                    .filter(|(p, _)| !key.members.contains_key(p))
                    .map(|(p, a)| (p & !tdh_core::protocols::NEW_MEMBER_FLAG, a.clone()))
                    .collect();
                self.keys.lock().unwrap().insert(
                    req.key_id.clone(),
                    KeyInfo {
                        params: new_params,
                        public_key: key.public_key,
                        members,
                        version,
                    },
                );
                Ok(OperationResult::Reshare {
                    public_key: pk,
                    version,
                    agents: participants,
                })
            }
            Err(f) => {
                self.notify(&req.key_id, &participants, TaskKind::Discard { version });
                Err(f)
            }
        }
    }
}

/// The single value every agent reported, or `AgentsDisagree`.
fn agree<T: PartialEq>(
    outs: &[(String, TaskOutcome)],
    pick: impl Fn(&TaskOutcome) -> Option<T>,
) -> Result<T, Failure> {
    let mut value: Option<T> = None;
    for (name, o) in outs {
        let v = pick(o).ok_or_else(|| {
            Failure::new(FailureKind::AgentsDisagree, format!("{name} returned {o:?}"))
        })?;
        match &value {
            Some(prev) if *prev != v => {
                return Err(Failure::new(
                    FailureKind::AgentsDisagree,
                    format!("{name} reported a different result"),
                ))
            }
            Some(_) => {}
            None => value = Some(v),
        }
    }
    value.ok_or_else(|| Failure::new(FailureKind::Internal, "no agent replied"))
}
