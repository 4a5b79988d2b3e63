//! Dealerless key generation.

use std::collections::BTreeMap;

use rand_chacha::ChaCha20Rng;
use zeroize::Zeroize;

use super::engine::{Advance, Draft, Inbox, RoundLogic};
use super::envelope::{MessageKind, ProtocolId};
use super::{decode_point, decode_points, encode_points, KeyShareRecord, ProtocolError};
use super::{Scheme, SchemeParams};
use crate::commitment::{self, Commitment, Decommitment, Domain, COMMITMENT_LEN};
use crate::group::{GroupPoint, GroupScalar};
use crate::sharing::{feldman_verify, shamir_share, FeldmanCommitments, PartyId, ShamirShare};

fn check_member(params: &SchemeParams, me: PartyId) -> Result<(), ProtocolError> {
    params.validate()?;
    if me.0 == 0 || me.0 > u32::from(params.n) {
        return Err(ProtocolError::InvalidParams(format!(
            "party {} outside committee of {}",
            me.0, params.n
        )));
    }
    Ok(())
}

pub(crate) fn read_commitment(
    inbox: &Inbox<'_>,
    sender: u32,
) -> Result<Commitment, ProtocolError> {
    let body = inbox.body(sender, MessageKind::Commit)?;
    let arr: [u8; COMMITMENT_LEN] = body.try_into().map_err(|_| ProtocolError::Malformed {
        sender: Some(sender),
        what: "commitment",
    })?;
    Ok(Commitment(arr))
}

/// Opens `sender`'s decommitment against its earlier commitment and decodes
/// the committed point.
pub(crate) fn open_point(
    params: &SchemeParams,
    domain: Domain,
    commitments: &BTreeMap<u32, Commitment>,
    inbox: &Inbox<'_>,
    sender: u32,
) -> Result<GroupPoint, ProtocolError> {
    let body = inbox.body(sender, MessageKind::Decommit)?;
    let d = Decommitment::from_bytes(body).map_err(|_| ProtocolError::Malformed {
        sender: Some(sender),
        what: "decommitment",
    })?;
    let c = commitments
        .get(&sender)
        .ok_or(ProtocolError::Internal("missing commitment"))?;
    let msg = commitment::open(domain, c, &d)
        .map_err(|_| ProtocolError::CommitmentMismatch { sender })?;
    decode_point(params.curve, msg, sender, "committed point")
}

/// Naive `n`-of-`n` key generation: commit to `X_i = x_i * G`, then open;
/// the public key is `X = sum X_i`.
pub struct NaiveKeygen {
    params: SchemeParams,
    me: PartyId,
    participants: Vec<u32>,
    secret: Option<GroupScalar>,
    public_share: Option<GroupPoint>,
    decommitment: Option<Decommitment>,
    commitments: BTreeMap<u32, Commitment>,
}

impl NaiveKeygen {
    pub fn new(params: SchemeParams, me: PartyId) -> Result<Self, ProtocolError> {
        if params.scheme != Scheme::Naive {
            return Err(ProtocolError::InvalidParams("expected naive scheme".into()));
        }
        check_member(&params, me)?;
        Ok(NaiveKeygen {
            params,
            me,
            participants: (1..=u32::from(params.n)).collect(),
            secret: None,
            public_share: None,
            decommitment: None,
            commitments: BTreeMap::new(),
        })
    }
}

impl Drop for NaiveKeygen {
    fn drop(&mut self) {
        if let Some(s) = self.secret.as_mut() {
            s.zeroize();
        }
    }
}

impl RoundLogic for NaiveKeygen {
    type Output = KeyShareRecord;

    fn protocol(&self) -> ProtocolId {
        ProtocolId::NaiveKeygen
    }

    fn me(&self) -> u32 {
        self.me.0
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
        let x = GroupScalar::random(self.params.curve, rng)?;
        let big_x = GroupPoint::mul_generator(&x);
        let (c, d) = commitment::commit(Domain::Keygen, big_x.encode().as_bytes(), rng)?;
        self.secret = Some(x);
        self.public_share = Some(big_x);
        self.decommitment = Some(d);
        Ok(vec![Draft::broadcast(MessageKind::Commit, c.0.to_vec())])
    }

    fn advance(
        &mut self,
        round: u8,
        inbox: &Inbox<'_>,
        _rng: &mut ChaCha20Rng,
    ) -> Result<Advance<KeyShareRecord>, ProtocolError> {
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
                let mut shares = Vec::with_capacity(self.participants.len());
                for &p in &self.participants {
                    shares.push(open_point(
                        &self.params,
                        Domain::Keygen,
                        &self.commitments,
                        inbox,
                        p,
                    )?);
                }
                let public_key = GroupPoint::sum(self.params.curve, &shares)?;
                if public_key.is_identity() {
                    return Err(ProtocolError::IdentityPoint);
                }
                let private_share = self
                    .secret
                    .take()
                    .ok_or(ProtocolError::Internal("secret consumed"))?;
                Ok(Advance::Finished(KeyShareRecord {
                    params: self.params,
                    party: self.me,
                    private_share,
                    public_share: self.public_share.expect("set in start"),
                    public_key,
                    commitments: None,
                }))
            }
            _ => Err(ProtocolError::Internal("round out of range")),
        }
    }
}

/// `(t, n)` key generation: every party commits to `y_i = u_i * G`, opens it
/// and deals a Feldman-verified Shamir sharing of `u_i`; each party's key
/// share is the sum of what it received. A final acknowledgement round makes
/// sure nobody outputs a key unless every party accepted its shares.
pub struct ThresholdKeygen {
    params: SchemeParams,
    me: PartyId,
    participants: Vec<u32>,
    secret: Option<GroupScalar>,
    decommitment: Option<Decommitment>,
    commitments: BTreeMap<u32, Commitment>,
    result: Option<KeyShareRecord>,
}

impl ThresholdKeygen {
    pub fn new(params: SchemeParams, me: PartyId) -> Result<Self, ProtocolError> {
        if params.scheme != Scheme::Threshold {
            return Err(ProtocolError::InvalidParams("expected threshold scheme".into()));
        }
        check_member(&params, me)?;
        Ok(ThresholdKeygen {
            params,
            me,
            participants: (1..=u32::from(params.n)).collect(),
            secret: None,
            decommitment: None,
            commitments: BTreeMap::new(),
            result: None,
        })
    }

    fn verify_dealings(&self, inbox: &Inbox<'_>) -> Result<KeyShareRecord, ProtocolError> {
        let curve = self.params.curve;
        let mut public_parts = Vec::new();
        let mut all_comms = Vec::new();
        let mut private_share = GroupScalar::zero(curve);
        for &p in &self.participants {
            let y_p = open_point(&self.params, Domain::Keygen, &self.commitments, inbox, p)?;
            let comms = FeldmanCommitments(decode_points(
                curve,
                inbox.body(p, MessageKind::PubKey)?,
                p,
                "feldman commitments",
            )?);
            if comms.0.len() != self.params.quorum() || comms.0[0] != y_p {
                return Err(ProtocolError::FeldmanReject { sender: p });
            }
            let share = ShamirShare::from_bytes(curve, inbox.body(p, MessageKind::VssShare)?)
                .map_err(|_| ProtocolError::FeldmanReject { sender: p })?;
            if share.owner != self.me
                || share.t != self.params.t
                || share.n != self.params.n
                || !feldman_verify(&share, &comms)
            {
                return Err(ProtocolError::FeldmanReject { sender: p });
            }
            private_share = private_share.add(&share.value)?;
            public_parts.push(y_p);
            all_comms.push(comms);
        }
        let public_key = GroupPoint::sum(curve, &public_parts)?;
        if public_key.is_identity() {
            return Err(ProtocolError::IdentityPoint);
        }
        let commitments = FeldmanCommitments::aggregate(&all_comms)?;
        let record = KeyShareRecord {
            params: self.params,
            party: self.me,
            public_share: GroupPoint::mul_generator(&private_share),
            private_share,
            public_key,
            commitments: Some(commitments),
        };
        record.validate()?;
        Ok(record)
    }
}

impl Drop for ThresholdKeygen {
    fn drop(&mut self) {
        if let Some(s) = self.secret.as_mut() {
            s.zeroize();
        }
    }
}

impl RoundLogic for ThresholdKeygen {
    type Output = KeyShareRecord;

    fn protocol(&self) -> ProtocolId {
        ProtocolId::ThresholdKeygen
    }

    fn me(&self) -> u32 {
        self.me.0
    }

    fn participants(&self) -> &[u32] {
        &self.participants
    }

    fn rounds(&self) -> u8 {
        3
    }

    fn expected(&self, round: u8) -> Vec<(u32, MessageKind)> {
        let kinds: &[MessageKind] = match round {
            1 => &[MessageKind::Commit],
            2 => &[MessageKind::Decommit, MessageKind::PubKey, MessageKind::VssShare],
            3 => &[MessageKind::Ack],
            _ => &[],
        };
        self.participants
            .iter()
            .flat_map(|&p| kinds.iter().map(move |&k| (p, k)))
            .collect()
    }

    fn start(&mut self, rng: &mut ChaCha20Rng) -> Result<Vec<Draft>, ProtocolError> {
        let u = GroupScalar::random(self.params.curve, rng)?;
        let y = GroupPoint::mul_generator(&u);
        let (c, d) = commitment::commit(Domain::Keygen, y.encode().as_bytes(), rng)?;
        self.secret = Some(u);
        self.decommitment = Some(d);
        Ok(vec![Draft::broadcast(MessageKind::Commit, c.0.to_vec())])
    }

    fn advance(
        &mut self,
        round: u8,
        inbox: &Inbox<'_>,
        rng: &mut ChaCha20Rng,
    ) -> Result<Advance<KeyShareRecord>, ProtocolError> {
        match round {
            1 => {
                for &p in &self.participants {
                    self.commitments.insert(p, read_commitment(inbox, p)?);
                }
                let d = self
                    .decommitment
                    .take()
                    .ok_or(ProtocolError::Internal("decommitment already released"))?;
                let mut u = self
                    .secret
                    .take()
                    .ok_or(ProtocolError::Internal("secret consumed"))?;
                let dealt = shamir_share(
                    &u,
                    self.params.t as usize,
                    &self.params.party_ids(),
                    rng,
                );
                u.zeroize();
                let (shares, comms) = dealt?;
                let mut drafts = vec![
                    Draft::broadcast(MessageKind::Decommit, d.to_bytes()),
                    Draft::broadcast(MessageKind::PubKey, encode_points(&comms.0)),
                ];
                for (id, share) in shares {
                    drafts.push(Draft::to(
                        id.0,
                        MessageKind::VssShare,
                        share.to_bytes().to_vec(),
                    ));
                }
                Ok(Advance::Next(drafts))
            }
            2 => {
                let record = self.verify_dealings(inbox)?;
                let ack = record.public_key.encode().as_bytes().to_vec();
                self.result = Some(record);
                Ok(Advance::Next(vec![Draft::broadcast(MessageKind::Ack, ack)]))
            }
            3 => {
                let record = self
                    .result
                    .take()
                    .ok_or(ProtocolError::Internal("missing result"))?;
                let mine = record.public_key.encode();
                for &p in &self.participants {
                    if inbox.body(p, MessageKind::Ack)? != mine.as_bytes() {
                        return Err(ProtocolError::PublicKeyMismatch { sender: p });
                    }
                }
                Ok(Advance::Finished(record))
            }
            _ => Err(ProtocolError::Internal("round out of range")),
        }
    }
}
