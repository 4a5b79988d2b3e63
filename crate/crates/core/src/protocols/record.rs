use std::fmt;

use zeroize::Zeroize;

use super::{ProtocolError, Scheme, SchemeParams};
use crate::group::{CurveId, GroupPoint, GroupScalar, ENCODED_POINT_LEN, SCALAR_LEN};
use crate::sharing::{FeldmanCommitments, PartyId};

const MAGIC: &[u8; 4] = b"TDHK";
const VERSION: u8 = 1;

/// One party's share of a jointly generated key.
#[derive(Clone, PartialEq, Eq)]
pub struct KeyShareRecord {
    pub params: SchemeParams,
    pub party: PartyId,
    pub private_share: GroupScalar,
    pub public_share: GroupPoint,
    pub public_key: GroupPoint,
    /// Aggregated Feldman commitments of the sharing polynomial
    /// (threshold scheme only).
    pub commitments: Option<FeldmanCommitments>,
}

impl fmt::Debug for KeyShareRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyShareRecord")
            .field("params", &self.params)
            .field("party", &self.party)
            .field("public_key", &self.public_key)
            .finish_non_exhaustive()
    }
}

impl Drop for KeyShareRecord {
    fn drop(&mut self) {
        self.private_share.zeroize();
    }
}

impl KeyShareRecord {
    /// Checks the internal consistency of the record.
    pub fn validate(&self) -> Result<(), ProtocolError> {
        self.params.validate()?;
        let curve = self.params.curve;
        if self.private_share.curve() != curve
            || self.public_share.curve() != curve
            || self.public_key.curve() != curve
        {
            return Err(ProtocolError::InvalidParams("record mixes curves".into()));
        }
        if self.party.0 == 0 || self.party.0 > u32::from(self.params.n) {
            return Err(ProtocolError::InvalidParams("party id out of range".into()));
        }
        if GroupPoint::mul_generator(&self.private_share) != self.public_share {
            return Err(ProtocolError::InvalidParams(
                "public share does not match private share".into(),
            ));
        }
        if let Some(c) = &self.commitments {
            if c.0.len() != self.params.quorum()
                || c.evaluate(self.party)? != self.public_share
                || c.0[0] != self.public_key
            {
                return Err(ProtocolError::InvalidParams(
                    "share is inconsistent with stored commitments".into(),
                ));
            }
        } else if self.params.scheme == Scheme::Threshold {
            return Err(ProtocolError::InvalidParams(
                "threshold record lacks commitments".into(),
            ));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(self.params.scheme.code());
        out.push(self.params.curve.code());
        out.extend_from_slice(&self.params.t.to_be_bytes());
        out.extend_from_slice(&self.params.n.to_be_bytes());
        out.extend_from_slice(&self.party.0.to_be_bytes());
        out.extend_from_slice(&self.private_share.to_bytes_le());
        out.extend_from_slice(self.public_share.encode().as_bytes());
        out.extend_from_slice(self.public_key.encode().as_bytes());
        let comms = self.commitments.as_ref().map(|c| c.0.as_slice()).unwrap_or(&[]);
        out.extend_from_slice(&(comms.len() as u16).to_be_bytes());
        for c in comms {
            out.extend_from_slice(c.encode().as_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ProtocolError> {
        let bad = |what| ProtocolError::Malformed { sender: None, what };
        let fixed = 4 + 3 + 2 + 2 + 4 + SCALAR_LEN + 2 * ENCODED_POINT_LEN + 2;
        if bytes.len() < fixed || &bytes[..4] != MAGIC || bytes[4] != VERSION {
            return Err(bad("key record header"));
        }
        let scheme = Scheme::from_code(bytes[5]).ok_or(bad("scheme"))?;
        let curve = CurveId::from_code(bytes[6]).ok_or(bad("curve"))?;
        let t = u16::from_be_bytes([bytes[7], bytes[8]]);
        let n = u16::from_be_bytes([bytes[9], bytes[10]]);
        let party = PartyId(u32::from_be_bytes(bytes[11..15].try_into().unwrap()));
        let mut pos = 15;
        let private_share = GroupScalar::from_bytes_le(curve, &bytes[pos..pos + SCALAR_LEN])?;
        pos += SCALAR_LEN;
        let public_share = GroupPoint::decode(&bytes[pos..pos + ENCODED_POINT_LEN], curve)?;
        pos += ENCODED_POINT_LEN;
        let public_key = GroupPoint::decode(&bytes[pos..pos + ENCODED_POINT_LEN], curve)?;
        pos += ENCODED_POINT_LEN;
        let count = u16::from_be_bytes([bytes[pos], bytes[pos + 1]]) as usize;
        pos += 2;
        if bytes.len() != pos + count * ENCODED_POINT_LEN {
            return Err(bad("commitment list"));
        }
        let comms = bytes[pos..]
            .chunks_exact(ENCODED_POINT_LEN)
            .map(|c| GroupPoint::decode(c, curve))
            .collect::<Result<Vec<_>, _>>()?;
        let record = KeyShareRecord {
            params: SchemeParams {
                curve,
                scheme,
                t,
                n,
            },
            party,
            private_share,
            public_share,
            public_key,
            commitments: if comms.is_empty() {
                None
            } else {
                Some(FeldmanCommitments(comms))
            },
        };
        record.validate()?;
        Ok(record)
    }
}
