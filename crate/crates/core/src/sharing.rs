//! Additive and Shamir secret sharing, Feldman verification data, and
//! Lagrange interpolation at zero.
//!
//! Party `i` evaluates the sharing polynomial at the integer `i`, so party
//! ids start at 1.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand_core::{CryptoRng, RngCore};
use thiserror::Error;
use zeroize::Zeroize;

use crate::group::{CurveId, GroupError, GroupPoint, GroupScalar, SCALAR_LEN};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SharingError {
    #[error("no parties given")]
    NoParties,
    #[error("party id 0 is reserved")]
    ZeroId,
    #[error("duplicate party id {0}")]
    DuplicateId(PartyId),
    #[error("threshold {t} must be below committee size {n}")]
    ThresholdTooLarge { t: usize, n: usize },
    #[error("party {0} is not part of the subset")]
    NotInSubset(PartyId),
    #[error("need {needed} shares, got {got}")]
    InsufficientShares { needed: usize, got: usize },
    #[error("shares disagree on sharing parameters")]
    InconsistentShares,
    #[error("malformed share encoding")]
    Malformed,
    #[error(transparent)]
    Group(#[from] GroupError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PartyId(pub u32);

impl PartyId {
    /// Shamir evaluation point of this party.
    pub fn eval_point(self, curve: CurveId) -> GroupScalar {
        GroupScalar::from_u64(curve, self.0 as u64)
    }
}

impl fmt::Display for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "P{}", self.0)
    }
}

fn check_ids(parties: &[PartyId]) -> Result<(), SharingError> {
    if parties.is_empty() {
        return Err(SharingError::NoParties);
    }
    let mut seen = BTreeSet::new();
    for &p in parties {
        if p.0 == 0 {
            return Err(SharingError::ZeroId);
        }
        if !seen.insert(p) {
            return Err(SharingError::DuplicateId(p));
        }
    }
    Ok(())
}

/// Additive shares keyed by party; they sum to the secret mod q.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AdditiveShares(pub BTreeMap<PartyId, GroupScalar>);

impl AdditiveShares {
    pub fn sum(&self, curve: CurveId) -> Result<GroupScalar, SharingError> {
        Ok(GroupScalar::sum(curve, self.0.values())?)
    }
}

pub fn additive_split<R: RngCore + CryptoRng + ?Sized>(
    secret: &GroupScalar,
    parties: &[PartyId],
    rng: &mut R,
) -> Result<AdditiveShares, SharingError> {
    check_ids(parties)?;
    let curve = secret.curve();
    let mut out = BTreeMap::new();
    let mut rest = secret.clone();
    let (last, head) = parties.split_last().expect("non-empty");
    for &p in head {
        let z = GroupScalar::random_uniform(curve, rng)?;
        rest = rest.sub(&z)?;
        out.insert(p, z);
    }
    out.insert(*last, rest);
    Ok(AdditiveShares(out))
}

/// One evaluation of a degree-`t` sharing polynomial.
#[derive(Clone, PartialEq, Eq)]
pub struct ShamirShare {
    pub owner: PartyId,
    pub value: GroupScalar,
    pub t: u16,
    pub n: u16,
}

pub const SHARE_LEN: usize = 4 + SCALAR_LEN + 2 + 2;

impl ShamirShare {
    /// `id (u32 be) || value (32 le) || t (u16 be) || n (u16 be)`.
    pub fn to_bytes(&self) -> [u8; SHARE_LEN] {
        let mut out = [0u8; SHARE_LEN];
        out[..4].copy_from_slice(&self.owner.0.to_be_bytes());
        out[4..36].copy_from_slice(&self.value.to_bytes_le());
        out[36..38].copy_from_slice(&self.t.to_be_bytes());
        out[38..40].copy_from_slice(&self.n.to_be_bytes());
        out
    }

    pub fn from_bytes(curve: CurveId, bytes: &[u8]) -> Result<Self, SharingError> {
        if bytes.len() != SHARE_LEN {
            return Err(SharingError::Malformed);
        }
        let owner = PartyId(u32::from_be_bytes(bytes[..4].try_into().unwrap()));
        let value = GroupScalar::from_bytes_le(curve, &bytes[4..36])?;
        let t = u16::from_be_bytes(bytes[36..38].try_into().unwrap());
        let n = u16::from_be_bytes(bytes[38..40].try_into().unwrap());
        if owner.0 == 0 || t >= n {
            return Err(SharingError::Malformed);
        }
        Ok(ShamirShare { owner, value, t, n })
    }
}

impl fmt::Debug for ShamirShare {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ShamirShare")
            .field("owner", &self.owner)
            .field("t", &self.t)
            .field("n", &self.n)
            .finish_non_exhaustive()
    }
}

impl Drop for ShamirShare {
    fn drop(&mut self) {
        self.value.zeroize();
    }
}

/// Coefficient commitments `[a_0*G, ..., a_t*G]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeldmanCommitments(pub Vec<GroupPoint>);

impl FeldmanCommitments {
    pub fn threshold(&self) -> usize {
        self.0.len().saturating_sub(1)
    }

    pub fn public_secret(&self) -> Option<&GroupPoint> {
        self.0.first()
    }

    /// `sum_j id^j * C_j`, the public image of party `id`'s share.
    pub fn evaluate(&self, id: PartyId) -> Result<GroupPoint, SharingError> {
        let curve = self
            .0
            .first()
            .map(|p| p.curve())
            .ok_or(SharingError::Malformed)?;
        let x = id.eval_point(curve);
        // Horner from the top coefficient down.
        let mut acc = GroupPoint::identity(curve);
        for c in self.0.iter().rev() {
            acc = acc.mul(&x)?.add(c)?;
        }
        Ok(acc)
    }

    /// Coefficient-wise sum of several commitment vectors of equal length.
    pub fn aggregate<'a, I>(items: I) -> Result<FeldmanCommitments, SharingError>
    where
        I: IntoIterator<Item = &'a FeldmanCommitments>,
    {
        let mut iter = items.into_iter();
        let first = iter.next().ok_or(SharingError::NoParties)?.clone();
        iter.try_fold(first, |mut acc, next| {
            if next.0.len() != acc.0.len() {
                return Err(SharingError::InconsistentShares);
            }
            for (a, b) in acc.0.iter_mut().zip(&next.0) {
                *a = a.add(b)?;
            }
            Ok(acc)
        })
    }
}

struct Polynomial(Vec<GroupScalar>);

impl Polynomial {
    fn random<R: RngCore + CryptoRng + ?Sized>(
        constant: &GroupScalar,
        degree: usize,
        rng: &mut R,
    ) -> Result<Self, GroupError> {
        let mut coeffs = Vec::with_capacity(degree + 1);
        coeffs.push(constant.clone());
        for _ in 0..degree {
            coeffs.push(GroupScalar::random_uniform(constant.curve(), rng)?);
        }
        Ok(Polynomial(coeffs))
    }

    fn evaluate(&self, x: &GroupScalar) -> Result<GroupScalar, GroupError> {
        let mut acc = GroupScalar::zero(x.curve());
        for c in self.0.iter().rev() {
            acc = acc.mul(x)?.add(c)?;
        }
        Ok(acc)
    }
}

impl Drop for Polynomial {
    fn drop(&mut self) {
        self.0.iter_mut().for_each(Zeroize::zeroize);
    }
}

/// Deals a degree-`t` Shamir sharing of `secret` to `parties` and returns the
/// Feldman commitments to the polynomial.
pub fn shamir_share<R: RngCore + CryptoRng + ?Sized>(
    secret: &GroupScalar,
    t: usize,
    parties: &[PartyId],
    rng: &mut R,
) -> Result<(BTreeMap<PartyId, ShamirShare>, FeldmanCommitments), SharingError> {
    check_ids(parties)?;
    let n = parties.len();
    if t >= n || n > u16::MAX as usize {
        return Err(SharingError::ThresholdTooLarge { t, n });
    }
    let curve = secret.curve();
    let poly = Polynomial::random(secret, t, rng)?;
    let comms = FeldmanCommitments(poly.0.iter().map(GroupPoint::mul_generator).collect());
    let mut shares = BTreeMap::new();
    for &p in parties {
        let value = poly.evaluate(&p.eval_point(curve))?;
        shares.insert(
            p,
            ShamirShare {
                owner: p,
                value,
                t: t as u16,
                n: n as u16,
            },
        );
    }
    Ok((shares, comms))
}

/// Accepts iff `share.value * G == sum_j owner^j * comms[j]`.
pub fn feldman_verify(share: &ShamirShare, comms: &FeldmanCommitments) -> bool {
    if comms.0.len() != share.t as usize + 1 {
        return false;
    }
    match comms.evaluate(share.owner) {
        Ok(expected) => {
            expected.curve() == share.value.curve()
                && GroupPoint::mul_generator(&share.value) == expected
        }
        Err(_) => false,
    }
}

/// `lambda_i = prod_{j != i} x_j / (x_j - x_i)`, the weight of party `i`
/// when interpolating at zero over `subset`.
pub fn lagrange_coeff(
    curve: CurveId,
    subset: &[PartyId],
    i: PartyId,
) -> Result<GroupScalar, SharingError> {
    check_ids(subset)?;
    if !subset.contains(&i) {
        return Err(SharingError::NotInSubset(i));
    }
    let xi = i.eval_point(curve);
    let mut num = GroupScalar::one(curve);
    let mut den = GroupScalar::one(curve);
    for &j in subset.iter().filter(|&&j| j != i) {
        let xj = j.eval_point(curve);
        num = num.mul(&xj)?;
        den = den.mul(&xj.sub(&xi)?)?;
    }
    Ok(num.mul(&den.invert()?)?)
}

/// Interpolates the shared secret from exactly `t + 1` shares.
///
/// Only test harnesses and oracles call this; no protocol ever
/// reconstructs a key.
pub fn reconstruct(shares: &[ShamirShare]) -> Result<GroupScalar, SharingError> {
    let first = shares.first().ok_or(SharingError::InsufficientShares {
        needed: 1,
        got: 0,
    })?;
    let needed = first.t as usize + 1;
    if shares.len() < needed {
        return Err(SharingError::InsufficientShares {
            needed,
            got: shares.len(),
        });
    }
    let curve = first.value.curve();
    let ids: Vec<PartyId> = shares.iter().map(|s| s.owner).collect();
    let mut acc = GroupScalar::zero(curve);
    for s in shares {
        if s.t != first.t || s.value.curve() != curve {
            return Err(SharingError::InconsistentShares);
        }
        let l = lagrange_coeff(curve, &ids, s.owner)?;
        acc = acc.add(&l.mul(&s.value)?)?;
    }
    Ok(acc)
}
