//! Distributed Diffie-Hellman with a remote public key `Y`.

use std::collections::BTreeMap;

use rand_chacha::ChaCha20Rng;

use super::engine::{Advance, Draft, Inbox, RoundLogic};
use super::envelope::{MessageKind, ProtocolId};
use super::keygen::read_commitment;
use super::{derive_psk, KeyShareRecord, ProtocolError, Scheme};
use crate::commitment::{self, Commitment, Decommitment, Domain};
use crate::group::{GroupPoint, ENCODED_POINT_LEN};
use crate::sharing::{lagrange_coeff, PartyId};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExchangeOutput {
    pub shared_point: GroupPoint,
    pub psk: [u8; 32],
}

/// Each participant commits to `S_i = w_i * Y`, then opens it; the shared
/// point is `S = sum S_i`. The weight `w_i` is 1 for the naive scheme and
/// the Lagrange coefficient over the chosen subset for the threshold scheme.
///
/// The committed message is `encode(Y) || encode(S_i)` so that parties
/// disagreeing on `Y` abort instead of producing unrelated points.
pub struct Exchange {
    protocol: ProtocolId,
    me: u32,
    participants: Vec<u32>,
    remote: GroupPoint,
    partial: GroupPoint,
    decommitment: Option<Decommitment>,
    commitments: BTreeMap<u32, Commitment>,
}

impl Exchange {
    /// Naive exchange over the whole committee.
    pub fn naive(record: &KeyShareRecord, remote: &GroupPoint) -> Result<Self, ProtocolError> {
        if record.params.scheme != Scheme::Naive {
            return Err(ProtocolError::InvalidParams("expected naive key share".into()));
        }
        let participants: Vec<u32> = (1..=u32::from(record.params.n)).collect();
        Self::build(record, participants, remote, ProtocolId::NaiveExchange, None)
    }

    /// Threshold exchange over `subset`, which must hold exactly `t + 1`
    /// distinct committee members including this party.
    pub fn threshold(
        record: &KeyShareRecord,
        subset: &[PartyId],
        remote: &GroupPoint,
    ) -> Result<Self, ProtocolError> {
        let params = record.params;
        if params.scheme != Scheme::Threshold {
            return Err(ProtocolError::InvalidParams("expected threshold key share".into()));
        }
        if subset.len() != params.quorum() {
            return Err(ProtocolError::InvalidParams(format!(
                "subset of {} parties, exchange needs exactly {}",
                subset.len(),
                params.quorum()
            )));
        }
        if subset.iter().any(|p| p.0 == 0 || p.0 > u32::from(params.n)) {
            return Err(ProtocolError::InvalidParams("subset member outside committee".into()));
        }
        let lambda = lagrange_coeff(params.curve, subset, record.party)?;
        let mut participants: Vec<u32> = subset.iter().map(|p| p.0).collect();
        participants.sort_unstable();
        Self::build(
            record,
            participants,
            remote,
            ProtocolId::ThresholdExchange,
            Some(lambda),
        )
    }

    fn build(
        record: &KeyShareRecord,
        participants: Vec<u32>,
        remote: &GroupPoint,
        protocol: ProtocolId,
        lambda: Option<crate::group::GroupScalar>,
    ) -> Result<Self, ProtocolError> {
        record.validate()?;
        if remote.curve() != record.params.curve {
            return Err(ProtocolError::Group(crate::group::GroupError::CurveMismatch));
        }
        let remote = remote.sanitize();
        if remote.is_identity() {
            return Err(ProtocolError::IdentityPoint);
        }
        let weight = match lambda {
            Some(l) => l.mul(&record.private_share)?,
            None => record.private_share.clone(),
        };
        let partial = remote.mul(&weight)?;
        Ok(Exchange {
            protocol,
            me: record.party.0,
            participants,
            remote,
            partial,
            decommitment: None,
            commitments: BTreeMap::new(),
        })
    }

    /// The sanitized remote key this exchange uses.
    pub fn remote(&self) -> &GroupPoint {
        &self.remote
    }
}

impl RoundLogic for Exchange {
    type Output = ExchangeOutput;

    fn protocol(&self) -> ProtocolId {
        self.protocol
    }

    fn me(&self) -> u32 {
        self.me
    }

    fn participants(&self) -> &[u32] {
        &self.participants
    }

    fn rounds(&self) -> u8 {
        2
    }

    fn expected(&self, round: u8) -> Vec<(u32, MessageKind)> {
        let kind = match round {
            1 => MessageKind::Commit,
            2 => MessageKind::Decommit,
            _ => return Vec::new(),
        };
        self.participants.iter().map(|&p| (p, kind)).collect()
    }

    fn start(&mut self, rng: &mut ChaCha20Rng) -> Result<Vec<Draft>, ProtocolError> {
        let mut msg = self.remote.encode().as_bytes().to_vec();
        msg.extend_from_slice(self.partial.encode().as_bytes());
        let (c, d) = commitment::commit(Domain::Exchange, &msg, rng)?;
        self.decommitment = Some(d);
        Ok(vec![Draft::broadcast(MessageKind::Commit, c.0.to_vec())])
    }

    fn advance(
        &mut self,
        round: u8,
        inbox: &Inbox<'_>,
        _rng: &mut ChaCha20Rng,
    ) -> Result<Advance<ExchangeOutput>, ProtocolError> {
        match round {
            1 => {
                for &p in &self.participants {
                    self.commitments.insert(p, read_commitment(inbox, p)?);
                }
                let d = self
                    .decommitment
                    .take()
                    .ok_or(ProtocolError::Internal("decommitment already released"))?;
                Ok(Advance::Next(vec![Draft::broadcast(
                    MessageKind::Decommit,
                    d.to_bytes(),
                )]))
            }
            2 => {
                let curve = self.remote.curve();
                let remote = self.remote.encode();
                let mut parts = Vec::with_capacity(self.participants.len());
                for &p in &self.participants {
                    let body = inbox.body(p, MessageKind::Decommit)?;
                    let d = Decommitment::from_bytes(body).map_err(|_| {
                        ProtocolError::Malformed {
                            sender: Some(p),
                            what: "decommitment",
                        }
                    })?;
                    let c = &self.commitments[&p];
                    let msg = commitment::open(Domain::Exchange, c, &d)
                        .map_err(|_| ProtocolError::CommitmentMismatch { sender: p })?;
                    if msg.len() != 2 * ENCODED_POINT_LEN {
                        return Err(ProtocolError::Malformed {
                            sender: Some(p),
                            what: "partial result",
                        });
                    }
                    if msg[..ENCODED_POINT_LEN] != remote.as_bytes()[..] {
                        return Err(ProtocolError::PublicKeyMismatch { sender: p });
                    }
                    parts.push(super::decode_point(
                        curve,
                        &msg[ENCODED_POINT_LEN..],
                        p,
                        "partial result",
                    )?);
                }
                let shared = GroupPoint::sum(curve, &parts)?;
                let psk = derive_psk(&shared)?;
                Ok(Advance::Finished(ExchangeOutput {
                    shared_point: shared,
                    psk,
                }))
            }
            _ => Err(ProtocolError::Internal("round out of range")),
        }
    }
}
