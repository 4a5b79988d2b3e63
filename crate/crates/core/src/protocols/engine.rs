//! Barrier-synchronised round driver shared by every protocol.
//!
//! A protocol describes, per round, which `(sender, kind)` messages it waits
//! for and what it sends once they are all present. The driver buffers early
//! messages, rejects duplicates and strangers, delivers the participant's own
//! messages to itself, and turns every failure into a terminal abort.

use std::collections::{BTreeMap, BTreeSet};

use rand_chacha::ChaCha20Rng;
use rand_core::{CryptoRng, RngCore, SeedableRng};

use super::envelope::{Destination, Envelope, MessageKind, Outgoing, ProtocolId, SessionId};
use super::ProtocolError;

/// A message body a protocol wants sent in the next round.
#[derive(Clone, Debug)]
pub struct Draft {
    pub to: Destination,
    pub kind: MessageKind,
    pub body: Vec<u8>,
}

impl Draft {
    pub fn broadcast(kind: MessageKind, body: Vec<u8>) -> Self {
        Draft {
            to: Destination::Broadcast,
            kind,
            body,
        }
    }

    pub fn to(party: u32, kind: MessageKind, body: Vec<u8>) -> Self {
        Draft {
            to: Destination::Party(party),
            kind,
            body,
        }
    }
}

pub enum Advance<O> {
    Next(Vec<Draft>),
    Finished(O),
}

/// All messages of one completed round, keyed by sender and kind.
pub struct Inbox<'a> {
    round: u8,
    messages: BTreeMap<(u32, MessageKind), &'a Envelope>,
}

impl<'a> Inbox<'a> {
    pub fn round(&self) -> u8 {
        self.round
    }

    pub fn body(&self, sender: u32, kind: MessageKind) -> Result<&'a [u8], ProtocolError> {
        self.messages
            .get(&(sender, kind))
            .map(|e| e.body.as_slice())
            .ok_or(ProtocolError::UnexpectedMessage {
                sender,
                round: self.round,
            })
    }
}

pub trait RoundLogic {
    type Output;

    fn protocol(&self) -> ProtocolId;
    fn me(&self) -> u32;
    fn participants(&self) -> &[u32];
    fn rounds(&self) -> u8;
    /// Messages this participant must hold before `round` can complete.
    fn expected(&self, round: u8) -> Vec<(u32, MessageKind)>;
    /// Round-1 messages.
    fn start(&mut self, rng: &mut ChaCha20Rng) -> Result<Vec<Draft>, ProtocolError>;
    /// Consumes a complete round; returns next-round messages or the output.
    fn advance(
        &mut self,
        round: u8,
        inbox: &Inbox<'_>,
        rng: &mut ChaCha20Rng,
    ) -> Result<Advance<Self::Output>, ProtocolError>;
}

pub struct Step<O> {
    pub outgoing: Vec<Outgoing>,
    pub output: Option<O>,
}

impl<O> Default for Step<O> {
    fn default() -> Self {
        Step {
            outgoing: Vec::new(),
            output: None,
        }
    }
}

impl<O> Step<O> {
    pub fn map<P>(self, f: impl FnOnce(O) -> P) -> Step<P> {
        Step {
            outgoing: self.outgoing,
            output: self.output.map(f),
        }
    }
}

enum Status {
    Running,
    Complete,
    Aborted(ProtocolError),
}

pub struct Session<L: RoundLogic> {
    id: SessionId,
    logic: L,
    rng: ChaCha20Rng,
    round: u8,
    buffer: BTreeMap<(u8, u32, MessageKind), Envelope>,
    emitted: BTreeSet<u8>,
    status: Status,
}

impl<L: RoundLogic> Session<L> {
    /// Creates the session and returns its first-round messages. For
    /// single-participant committees the output may already be present.
    pub fn start<R: RngCore + CryptoRng + ?Sized>(
        id: SessionId,
        logic: L,
        rng: &mut R,
    ) -> Result<(Self, Step<L::Output>), ProtocolError> {
        let mut seed = [0u8; 32];
        rng.try_fill_bytes(&mut seed)
            .map_err(|e| ProtocolError::Rng(e.to_string()))?;
        let mut session = Session {
            id,
            logic,
            rng: ChaCha20Rng::from_seed(seed),
            round: 1,
            buffer: BTreeMap::new(),
            emitted: BTreeSet::new(),
            status: Status::Running,
        };
        let step = session.guard(|s| {
            let drafts = s.logic.start(&mut s.rng)?;
            let mut step = Step {
                outgoing: s.emit(1, drafts)?,
                output: None,
            };
            s.pump(&mut step)?;
            Ok(step)
        })?;
        Ok((session, step))
    }

    pub fn id(&self) -> SessionId {
        self.id
    }

    pub fn me(&self) -> u32 {
        self.logic.me()
    }

    pub fn protocol(&self) -> ProtocolId {
        self.logic.protocol()
    }

    pub fn participants(&self) -> &[u32] {
        self.logic.participants()
    }

    /// Round currently being collected.
    pub fn round(&self) -> u8 {
        self.round
    }

    pub fn is_complete(&self) -> bool {
        matches!(self.status, Status::Complete)
    }

    pub fn abort_reason(&self) -> Option<&ProtocolError> {
        match &self.status {
            Status::Aborted(e) => Some(e),
            _ => None,
        }
    }

    pub fn logic(&self) -> &L {
        &self.logic
    }

    /// Feeds received envelopes; returns what to send and, once, the output.
    pub fn step<I>(&mut self, incoming: I) -> Result<Step<L::Output>, ProtocolError>
    where
        I: IntoIterator<Item = Envelope>,
    {
        match &self.status {
            Status::Aborted(e) => return Err(e.clone()),
            Status::Complete => return Ok(Step::default()),
            Status::Running => {}
        }
        self.guard(|s| {
            for env in incoming {
                s.ingest(env)?;
            }
            let mut step = Step::default();
            s.pump(&mut step)?;
            Ok(step)
        })
    }

    /// Signals that the caller's round deadline expired.
    pub fn timeout(&mut self) -> ProtocolError {
        match &self.status {
            Status::Aborted(e) => e.clone(),
            _ => {
                let e = ProtocolError::RoundTimeout { round: self.round };
                self.status = Status::Aborted(e.clone());
                e
            }
        }
    }

    /// Aborts on behalf of the caller, e.g. when a peer reported failure.
    pub fn abort(&mut self, reason: ProtocolError) {
        if !matches!(self.status, Status::Aborted(_)) {
            self.status = Status::Aborted(reason);
        }
    }

    fn guard<T>(
        &mut self,
        f: impl FnOnce(&mut Self) -> Result<T, ProtocolError>,
    ) -> Result<T, ProtocolError> {
        f(self).inspect_err(|e| self.status = Status::Aborted(e.clone()))
    }

    fn ingest(&mut self, env: Envelope) -> Result<(), ProtocolError> {
        if env.session != self.id {
            return Err(ProtocolError::WrongSession);
        }
        if env.protocol != self.logic.protocol() {
            return Err(ProtocolError::WrongProtocol);
        }
        if !self.logic.participants().contains(&env.sender) {
            return Err(ProtocolError::UnknownSender(env.sender));
        }
        if env.round == 0 || env.round > self.logic.rounds() {
            return Err(ProtocolError::UnexpectedMessage {
                sender: env.sender,
                round: env.round,
            });
        }
        let key = (env.round, env.sender, env.kind);
        if self.buffer.contains_key(&key) {
            return Err(ProtocolError::DuplicateMessage {
                sender: env.sender,
                round: env.round,
            });
        }
        if !self
            .logic
            .expected(env.round)
            .contains(&(env.sender, env.kind))
        {
            return Err(ProtocolError::UnexpectedMessage {
                sender: env.sender,
                round: env.round,
            });
        }
        self.buffer.insert(key, env);
        Ok(())
    }

    fn pump(&mut self, step: &mut Step<L::Output>) -> Result<(), ProtocolError> {
        while self.round <= self.logic.rounds() {
            let round = self.round;
            let expected = self.logic.expected(round);
            if !expected
                .iter()
                .all(|&(s, k)| self.buffer.contains_key(&(round, s, k)))
            {
                return Ok(());
            }
            let inbox = Inbox {
                round,
                messages: self
                    .buffer
                    .range((round, 0, MessageKind::Commit)..(round + 1, 0, MessageKind::Commit))
                    .map(|(&(_, s, k), e)| ((s, k), e))
                    .collect(),
            };
            match self.logic.advance(round, &inbox, &mut self.rng)? {
                Advance::Next(drafts) => {
                    let out = self.emit(round + 1, drafts)?;
                    step.outgoing.extend(out);
                    self.round += 1;
                }
                Advance::Finished(output) => {
                    self.round = self.logic.rounds() + 1;
                    self.status = Status::Complete;
                    step.output = Some(output);
                    return Ok(());
                }
            }
        }
        Ok(())
    }

    fn emit(&mut self, round: u8, drafts: Vec<Draft>) -> Result<Vec<Outgoing>, ProtocolError> {
        if drafts.is_empty() {
            return Ok(Vec::new());
        }
        if !self.emitted.insert(round) {
            return Err(ProtocolError::Internal("round emitted twice"));
        }
        let me = self.logic.me();
        let mut out = Vec::with_capacity(drafts.len());
        for d in drafts {
            let envelope = Envelope {
                session: self.id,
                protocol: self.logic.protocol(),
                round,
                sender: me,
                kind: d.kind,
                body: d.body,
            };
            match d.to {
                Destination::Party(p) if p == me => {
                    self.buffer.insert((round, me, envelope.kind), envelope);
                }
                Destination::Broadcast => {
                    self.buffer
                        .insert((round, me, envelope.kind), envelope.clone());
                    out.push(Outgoing {
                        to: d.to,
                        envelope,
                    });
                }
                Destination::Party(_) => out.push(Outgoing { to: d.to, envelope }),
            }
        }
        Ok(out)
    }
}
