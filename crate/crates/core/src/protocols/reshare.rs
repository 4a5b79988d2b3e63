//! Moving a key to a new committee without reconstructing it.
//!
//! Old and new committee members take part under distinct ids: old member
//! `i` keeps id `i`, new member `j` uses [`new_member`]`(j)`. A party sitting
//! in both committees runs one session per role.
//!
//! Rounds:
//! 1. old parties broadcast `encode(X) || points`, where the points are the
//!    images `Z_ij * G` of their additive split (naive) or the Feldman
//!    commitments of their sharing of `lambda_i * x_i` (threshold);
//! 2. new parties check that the points add up to `X` and acknowledge it;
//! 3. old parties send each new party its share point-to-point;
//! 4. new parties verify their shares against the points and confirm.
//!    Nobody outputs before every new party has confirmed.

use std::collections::BTreeMap;

use rand_chacha::ChaCha20Rng;
use zeroize::Zeroize;

use super::engine::{Advance, Draft, Inbox, RoundLogic};
use super::envelope::{MessageKind, ProtocolId};
use super::{decode_point, decode_points, encode_points, KeyShareRecord, ProtocolError};
use super::{Scheme, SchemeParams};
use crate::group::{GroupPoint, GroupScalar, ENCODED_POINT_LEN};
use crate::sharing::{
    additive_split, feldman_verify, lagrange_coeff, shamir_share, FeldmanCommitments, PartyId,
    ShamirShare,
};

/// Marks new-committee ids in reshare sessions.
pub const NEW_MEMBER_FLAG: u32 = 0x8000_0000;

/// Session id of new-committee member `j`.
pub fn new_member(j: PartyId) -> u32 {
    NEW_MEMBER_FLAG | j.0
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReshareConfig {
    pub old_params: SchemeParams,
    /// All old members (naive) or the `t + 1` contributing members
    /// (threshold).
    pub old_parties: Vec<PartyId>,
    pub new_params: SchemeParams,
    /// Public key the new committee must end up with; new members without
    /// prior knowledge pass `None` and accept the key old members agree on.
    pub expected_public_key: Option<GroupPoint>,
}

impl ReshareConfig {
    fn validate(&self) -> Result<(), ProtocolError> {
        self.old_params.validate()?;
        self.new_params.validate()?;
        if self.old_params.scheme != self.new_params.scheme
            || self.old_params.curve != self.new_params.curve
        {
            return Err(ProtocolError::InvalidParams(
                "old and new committee must use the same scheme and curve".into(),
            ));
        }
        let mut ids: Vec<u32> = self.old_parties.iter().map(|p| p.0).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.old_parties.len()
            || ids.iter().any(|&i| i == 0 || i > u32::from(self.old_params.n))
        {
            return Err(ProtocolError::InvalidParams("bad old committee ids".into()));
        }
        let needed = match self.old_params.scheme {
            Scheme::Naive => self.old_params.n as usize,
            Scheme::Threshold => self.old_params.quorum(),
        };
        if ids.len() != needed {
            return Err(ProtocolError::InvalidParams(format!(
                "reshare needs {needed} old parties, got {}",
                ids.len()
            )));
        }
        if let Some(x) = &self.expected_public_key {
            if x.curve() != self.old_params.curve || x.is_identity() {
                return Err(ProtocolError::InvalidParams("bad expected public key".into()));
            }
        }
        Ok(())
    }
}

#[allow(clippy::large_enum_variant)]
pub enum ReshareRole {
    Old(KeyShareRecord),
    New(PartyId),
}

#[derive(Clone, Debug)]
pub struct ReshareOutput {
    pub public_key: GroupPoint,
    /// The new share, for new-committee members.
    pub record: Option<KeyShareRecord>,
}

enum Pending {
    Naive(BTreeMap<PartyId, GroupScalar>),
    Threshold(BTreeMap<PartyId, ShamirShare>),
}

impl Drop for Pending {
    fn drop(&mut self) {
        if let Pending::Naive(m) = self {
            m.values_mut().for_each(Zeroize::zeroize);
        }
    }
}

pub struct Reshare {
    config: ReshareConfig,
    role: ReshareRole,
    me: u32,
    participants: Vec<u32>,
    old_ids: Vec<u32>,
    new_ids: Vec<u32>,
    pending: Option<Pending>,
    public_key: Option<GroupPoint>,
    /// Per old party: the points it published in round 1.
    points: BTreeMap<u32, Vec<GroupPoint>>,
    result: Option<KeyShareRecord>,
}

impl Reshare {
    pub fn new(config: ReshareConfig, role: ReshareRole) -> Result<Self, ProtocolError> {
        config.validate()?;
        let me = match &role {
            ReshareRole::Old(record) => {
                record.validate()?;
                if record.params != config.old_params {
                    return Err(ProtocolError::InvalidParams(
                        "key share does not match old committee".into(),
                    ));
                }
                if !config.old_parties.contains(&record.party) {
                    return Err(ProtocolError::InvalidParams(
                        "this party does not contribute to the reshare".into(),
                    ));
                }
                if let Some(x) = &config.expected_public_key {
                    if *x != record.public_key {
                        return Err(ProtocolError::InvalidParams(
                            "key share belongs to another public key".into(),
                        ));
                    }
                }
                record.party.0
            }
            ReshareRole::New(j) => {
                if j.0 == 0 || j.0 > u32::from(config.new_params.n) {
                    return Err(ProtocolError::InvalidParams(
                        "new member id outside new committee".into(),
                    ));
                }
                new_member(*j)
            }
        };
        let mut old_ids: Vec<u32> = config.old_parties.iter().map(|p| p.0).collect();
        old_ids.sort_unstable();
        let new_ids: Vec<u32> = config
            .new_params
            .party_ids()
            .into_iter()
            .map(new_member)
            .collect();
        let participants = old_ids.iter().chain(&new_ids).copied().collect();
        Ok(Reshare {
            config,
            role,
            me,
            participants,
            old_ids,
            new_ids,
            pending: None,
            public_key: None,
            points: BTreeMap::new(),
            result: None,
        })
    }

    fn is_old(&self) -> bool {
        matches!(self.role, ReshareRole::Old(_))
    }

    fn scheme(&self) -> Scheme {
        self.config.old_params.scheme
    }

    fn public_key(&self) -> Result<&GroupPoint, ProtocolError> {
        self.public_key
            .as_ref()
            .ok_or(ProtocolError::Internal("public key not yet known"))
    }

    fn deal(
        &mut self,
        record: &KeyShareRecord,
        rng: &mut ChaCha20Rng,
    ) -> Result<Vec<GroupPoint>, ProtocolError> {
        let new_parties = self.config.new_params.party_ids();
        match self.scheme() {
            Scheme::Naive => {
                let split = additive_split(&record.private_share, &new_parties, rng)?;
                let points = split.0.values().map(GroupPoint::mul_generator).collect();
                self.pending = Some(Pending::Naive(split.0));
                Ok(points)
            }
            Scheme::Threshold => {
                let curve = self.config.old_params.curve;
                let lambda = lagrange_coeff(curve, &self.config.old_parties, record.party)?;
                let mut weighted = lambda.mul(&record.private_share)?;
                let dealt = shamir_share(
                    &weighted,
                    self.config.new_params.t as usize,
                    &new_parties,
                    rng,
                );
                weighted.zeroize();
                let (shares, comms) = dealt?;
                self.pending = Some(Pending::Threshold(shares));
                Ok(comms.0)
            }
        }
    }

    /// Reads and cross-checks every old party's round-1 announcement.
    fn collect_announcements(&mut self, inbox: &Inbox<'_>) -> Result<(), ProtocolError> {
        let curve = self.config.old_params.curve;
        let expected_len = match self.scheme() {
            Scheme::Naive => self.config.new_params.n as usize,
            Scheme::Threshold => self.config.new_params.quorum(),
        };
        let mut key = self.config.expected_public_key;
        if let ReshareRole::Old(r) = &self.role {
            key = Some(r.public_key);
        }
        let mut total = GroupPoint::identity(curve);
        for &p in &self.old_ids {
            let body = inbox.body(p, MessageKind::PubKey)?;
            if body.len() < ENCODED_POINT_LEN {
                return Err(ProtocolError::Malformed {
                    sender: Some(p),
                    what: "reshare announcement",
                });
            }
            let announced = decode_point(curve, &body[..ENCODED_POINT_LEN], p, "public key")?;
            match key {
                Some(k) if k != announced => {
                    return Err(ProtocolError::PublicKeyMismatch { sender: p })
                }
                _ => key = Some(announced),
            }
            let points = decode_points(curve, &body[ENCODED_POINT_LEN..], p, "share images")?;
            if points.len() != expected_len {
                return Err(ProtocolError::Malformed {
                    sender: Some(p),
                    what: "share images",
                });
            }
            let contribution = match self.scheme() {
                Scheme::Naive => GroupPoint::sum(curve, &points)?,
                Scheme::Threshold => points[0],
            };
            total = total.add(&contribution)?;
            self.points.insert(p, points);
        }
        let key = key.ok_or(ProtocolError::Internal("no old parties"))?;
        if total != key {
            // The sender cannot be pinned down from the sum alone.
            return Err(ProtocolError::PublicKeyMismatch {
                sender: self.old_ids[0],
            });
        }
        if key.is_identity() {
            return Err(ProtocolError::IdentityPoint);
        }
        self.public_key = Some(key);
        Ok(())
    }

    fn check_acks(&self, inbox: &Inbox<'_>) -> Result<(), ProtocolError> {
        let key = self.public_key()?.encode();
        for &j in &self.new_ids {
            if inbox.body(j, MessageKind::Ack)? != key.as_bytes() {
                return Err(ProtocolError::PublicKeyMismatch { sender: j });
            }
        }
        Ok(())
    }

    fn share_drafts(&mut self) -> Result<Vec<Draft>, ProtocolError> {
        let pending = self
            .pending
            .take()
            .ok_or(ProtocolError::Internal("shares already sent"))?;
        let drafts = match &pending {
            Pending::Naive(m) => m
                .iter()
                .map(|(j, z)| Draft::to(new_member(*j), MessageKind::VssShare, z.to_bytes_le().to_vec()))
                .collect(),
            Pending::Threshold(m) => m
                .iter()
                .map(|(j, s)| Draft::to(new_member(*j), MessageKind::VssShare, s.to_bytes().to_vec()))
                .collect(),
        };
        Ok(drafts)
    }

    /// New-member side of round 3: verify each received share against the
    /// announced points and sum them.
    fn accept_shares(&self, j: PartyId, inbox: &Inbox<'_>) -> Result<KeyShareRecord, ProtocolError> {
        let curve = self.config.new_params.curve;
        let mut share = GroupScalar::zero(curve);
        let mut all_comms = Vec::new();
        for &p in &self.old_ids {
            let body = inbox.body(p, MessageKind::VssShare)?;
            let points = &self.points[&p];
            let value = match self.scheme() {
                Scheme::Naive => {
                    let z = GroupScalar::from_bytes_le(curve, body)
                        .map_err(|_| ProtocolError::FeldmanReject { sender: p })?;
                    if GroupPoint::mul_generator(&z) != points[(j.0 - 1) as usize] {
                        return Err(ProtocolError::FeldmanReject { sender: p });
                    }
                    z
                }
                Scheme::Threshold => {
                    let s = ShamirShare::from_bytes(curve, body)
                        .map_err(|_| ProtocolError::FeldmanReject { sender: p })?;
                    let comms = FeldmanCommitments(points.clone());
                    if s.owner != j
                        || s.t != self.config.new_params.t
                        || s.n != self.config.new_params.n
                        || !feldman_verify(&s, &comms)
                    {
                        return Err(ProtocolError::FeldmanReject { sender: p });
                    }
                    all_comms.push(comms);
                    s.value.clone()
                }
            };
            share = share.add(&value)?;
        }
        let commitments = match self.scheme() {
            Scheme::Naive => None,
            Scheme::Threshold => Some(FeldmanCommitments::aggregate(&all_comms)?),
        };
        let record = KeyShareRecord {
            params: self.config.new_params,
            party: j,
            public_share: GroupPoint::mul_generator(&share),
            private_share: share,
            public_key: *self.public_key()?,
            commitments,
        };
        record.validate()?;
        Ok(record)
    }
}

impl RoundLogic for Reshare {
    type Output = ReshareOutput;

    fn protocol(&self) -> ProtocolId {
        match self.scheme() {
            Scheme::Naive => ProtocolId::NaiveReshare,
            Scheme::Threshold => ProtocolId::ThresholdReshare,
        }
    }

    fn me(&self) -> u32 {
        self.me
    }

    fn participants(&self) -> &[u32] {
        &self.participants
    }

    fn rounds(&self) -> u8 {
        4
    }

    fn expected(&self, round: u8) -> Vec<(u32, MessageKind)> {
        match round {
            1 => self.old_ids.iter().map(|&p| (p, MessageKind::PubKey)).collect(),
            2 | 4 => self.new_ids.iter().map(|&j| (j, MessageKind::Ack)).collect(),
            3 if !self.is_old() => self
                .old_ids
                .iter()
                .map(|&p| (p, MessageKind::VssShare))
                .collect(),
            _ => Vec::new(),
        }
    }

    fn start(&mut self, rng: &mut ChaCha20Rng) -> Result<Vec<Draft>, ProtocolError> {
        let record = match &self.role {
            ReshareRole::Old(r) => r.clone(),
            ReshareRole::New(_) => return Ok(Vec::new()),
        };
        let points = self.deal(&record, rng)?;
        let mut body = record.public_key.encode().as_bytes().to_vec();
        body.extend_from_slice(&encode_points(&points));
        Ok(vec![Draft::broadcast(MessageKind::PubKey, body)])
    }

    fn advance(
        &mut self,
        round: u8,
        inbox: &Inbox<'_>,
        _rng: &mut ChaCha20Rng,
    ) -> Result<Advance<ReshareOutput>, ProtocolError> {
        match round {
            1 => {
                self.collect_announcements(inbox)?;
                if self.is_old() {
                    return Ok(Advance::Next(Vec::new()));
                }
                let ack = self.public_key()?.encode().as_bytes().to_vec();
                Ok(Advance::Next(vec![Draft::broadcast(MessageKind::Ack, ack)]))
            }
            2 => {
                self.check_acks(inbox)?;
                if self.is_old() {
                    Ok(Advance::Next(self.share_drafts()?))
                } else {
                    Ok(Advance::Next(Vec::new()))
                }
            }
            3 => match &self.role {
                ReshareRole::Old(_) => Ok(Advance::Next(Vec::new())),
                ReshareRole::New(j) => {
                    let record = self.accept_shares(*j, inbox)?;
                    self.result = Some(record);
                    let ack = self.public_key()?.encode().as_bytes().to_vec();
                    Ok(Advance::Next(vec![Draft::broadcast(MessageKind::Ack, ack)]))
                }
            },
            4 => {
                self.check_acks(inbox)?;
                Ok(Advance::Finished(ReshareOutput {
                    public_key: *self.public_key()?,
                    record: self.result.take(),
                }))
            }
            _ => Err(ProtocolError::Internal("round out of range")),
        }
    }
}
