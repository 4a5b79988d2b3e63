//! Prime-order group arithmetic over two curve backends.
//!
//! Curve25519 lives internally on its birationally equivalent twisted Edwards
//! curve so that points can be added; the Montgomery form only shows up at the
//! encoding boundary, where a point is carried as its u-coordinate plus the
//! parity of v. P-256 uses SEC1 compressed points.

mod field25519;

use std::fmt;
use std::str::FromStr;

use curve25519_dalek::constants::ED25519_BASEPOINT_POINT;
use curve25519_dalek::edwards::{CompressedEdwardsY, EdwardsPoint};
use curve25519_dalek::scalar::Scalar as EdScalar;
use curve25519_dalek::traits::{Identity, IsIdentity};
use num_bigint::BigUint;
use p256::elliptic_curve::group::{Group, GroupEncoding};
use p256::elliptic_curve::ops::Reduce;
use p256::elliptic_curve::sec1::ToEncodedPoint;
use p256::elliptic_curve::{Field, PrimeField};
use p256::{FieldBytes, ProjectivePoint, Scalar as P256Scalar, U256};
use rand_core::{CryptoRng, RngCore};
use subtle::{Choice, ConstantTimeEq};
use thiserror::Error;
use zeroize::Zeroize;

/// Length of every [`EncodedPoint`], whatever the curve.
pub const ENCODED_POINT_LEN: usize = 33;
/// Scalars serialize as 32 little-endian bytes.
pub const SCALAR_LEN: usize = 32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GroupError {
    #[error("operands live on different curves")]
    CurveMismatch,
    #[error("operation is not defined for {0}")]
    UnsupportedCurve(CurveId),
    #[error("expected {expected} bytes, got {actual}")]
    WrongLength { expected: usize, actual: usize },
    #[error("bytes do not describe a point on the curve")]
    NotOnCurve,
    #[error("non-canonical field or scalar encoding")]
    NonCanonical,
    #[error("invalid sign byte {0:#04x}")]
    InvalidSign(u8),
    #[error("point has a low-order component")]
    NotInSubgroup,
    #[error("point has no affine Montgomery u-coordinate")]
    Exceptional,
    #[error("scalar is not invertible")]
    NotInvertible,
    #[error("randomness source failed: {0}")]
    Rng(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CurveId {
    P256,
    Curve25519,
}

impl CurveId {
    pub const ALL: [CurveId; 2] = [CurveId::P256, CurveId::Curve25519];

    pub fn cofactor(self) -> u8 {
        match self {
            CurveId::P256 => 1,
            CurveId::Curve25519 => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CurveId::P256 => "p256",
            CurveId::Curve25519 => "curve25519",
        }
    }

    /// One-byte tag used by the binary record formats.
    pub fn code(self) -> u8 {
        match self {
            CurveId::P256 => 1,
            CurveId::Curve25519 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(CurveId::P256),
            2 => Some(CurveId::Curve25519),
            _ => None,
        }
    }

    /// Order q of the prime-order subgroup.
    pub fn order(self) -> BigUint {
        match self {
            CurveId::P256 => BigUint::parse_bytes(
                b"ffffffff00000000ffffffffffffffffbce6faada7179e84f3b9cac2fc632551",
                16,
            )
            .expect("valid hex"),
            CurveId::Curve25519 => BigUint::parse_bytes(
                b"1000000000000000000000000000000014def9dea2f79cd65812631a5cf5d3ed",
                16,
            )
            .expect("valid hex"),
        }
    }
}

impl fmt::Display for CurveId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CurveId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "p256" | "p-256" | "secp256r1" => Ok(CurveId::P256),
            "curve25519" | "x25519" | "25519" => Ok(CurveId::Curve25519),
            other => Err(format!("unknown curve `{other}`")),
        }
    }
}

/// Little-endian X25519 bit clamping: clear the three low bits, clear bit 255
/// and set bit 254.
pub fn scalar_clamp(raw: &[u8]) -> Result<[u8; 32], GroupError> {
    let mut out: [u8; 32] = raw.try_into().map_err(|_| GroupError::WrongLength {
        expected: 32,
        actual: raw.len(),
    })?;
    out[0] &= 248;
    out[31] &= 127;
    out[31] |= 64;
    Ok(out)
}

#[derive(Clone, Copy)]
enum ScalarRepr {
    P256(P256Scalar),
    Curve25519(EdScalar),
}

/// An integer modulo the subgroup order of its curve.
#[derive(Clone)]
pub struct GroupScalar(ScalarRepr);

fn fill<R: RngCore + ?Sized>(rng: &mut R, buf: &mut [u8]) -> Result<(), GroupError> {
    rng.try_fill_bytes(buf)
        .map_err(|e| GroupError::Rng(e.to_string()))
}

impl GroupScalar {
    pub fn curve(&self) -> CurveId {
        match self.0 {
            ScalarRepr::P256(_) => CurveId::P256,
            ScalarRepr::Curve25519(_) => CurveId::Curve25519,
        }
    }

    pub fn zero(curve: CurveId) -> Self {
        Self::from_u64(curve, 0)
    }

    pub fn one(curve: CurveId) -> Self {
        Self::from_u64(curve, 1)
    }

    pub fn from_u64(curve: CurveId, v: u64) -> Self {
        match curve {
            CurveId::P256 => GroupScalar(ScalarRepr::P256(P256Scalar::from(v))),
            CurveId::Curve25519 => GroupScalar(ScalarRepr::Curve25519(EdScalar::from(v))),
        }
    }

    /// Uniform nonzero scalar for a private key share.
    ///
    /// On Curve25519 the result is additionally a multiple of the cofactor,
    /// i.e. its three low bits are zero. No high-bit clamping is applied.
    pub fn random<R: RngCore + CryptoRng + ?Sized>(
        curve: CurveId,
        rng: &mut R,
    ) -> Result<Self, GroupError> {
        match curve {
            CurveId::P256 => Self::random_uniform(curve, rng),
            CurveId::Curve25519 => loop {
                let mut bytes = [0u8; 32];
                fill(rng, &mut bytes)?;
                bytes[0] &= 0xf8;
                // < 2^252 < q, so always canonical
                bytes[31] &= 0x0f;
                let s = EdScalar::from_canonical_bytes(bytes);
                bytes.zeroize();
                let s = Option::<EdScalar>::from(s).expect("value below group order");
                if s != EdScalar::ZERO {
                    return Ok(GroupScalar(ScalarRepr::Curve25519(s)));
                }
            },
        }
    }

    /// Uniform nonzero scalar over the whole of Z_q, used for polynomial
    /// coefficients and additive masks.
    pub fn random_uniform<R: RngCore + CryptoRng + ?Sized>(
        curve: CurveId,
        rng: &mut R,
    ) -> Result<Self, GroupError> {
        match curve {
            CurveId::P256 => loop {
                let mut bytes = FieldBytes::default();
                fill(rng, &mut bytes)?;
                let s = Option::<P256Scalar>::from(P256Scalar::from_repr(bytes));
                bytes.zeroize();
                if let Some(s) = s {
                    if !bool::from(s.is_zero()) {
                        return Ok(GroupScalar(ScalarRepr::P256(s)));
                    }
                }
            },
            CurveId::Curve25519 => loop {
                let mut wide = [0u8; 64];
                fill(rng, &mut wide)?;
                let s = EdScalar::from_bytes_mod_order_wide(&wide);
                wide.zeroize();
                if s != EdScalar::ZERO {
                    return Ok(GroupScalar(ScalarRepr::Curve25519(s)));
                }
            },
        }
    }

    /// Parses a canonical 32-byte little-endian scalar.
    pub fn from_bytes_le(curve: CurveId, bytes: &[u8]) -> Result<Self, GroupError> {
        let mut arr: [u8; 32] = bytes.try_into().map_err(|_| GroupError::WrongLength {
            expected: SCALAR_LEN,
            actual: bytes.len(),
        })?;
        let out = match curve {
            CurveId::P256 => {
                arr.reverse();
                Option::<P256Scalar>::from(P256Scalar::from_repr(arr.into()))
                    .map(|s| GroupScalar(ScalarRepr::P256(s)))
            }
            CurveId::Curve25519 => Option::<EdScalar>::from(EdScalar::from_canonical_bytes(arr))
                .map(|s| GroupScalar(ScalarRepr::Curve25519(s))),
        };
        arr.zeroize();
        out.ok_or(GroupError::NonCanonical)
    }

    /// Interprets 32 little-endian bytes as an integer and reduces it mod q.
    pub fn from_bytes_le_reduced(curve: CurveId, bytes: &[u8; 32]) -> Self {
        match curve {
            CurveId::P256 => {
                let mut be = *bytes;
                be.reverse();
                let s = <P256Scalar as Reduce<U256>>::reduce_bytes(&be.into());
                be.zeroize();
                GroupScalar(ScalarRepr::P256(s))
            }
            CurveId::Curve25519 => {
                GroupScalar(ScalarRepr::Curve25519(EdScalar::from_bytes_mod_order(*bytes)))
            }
        }
    }

    pub fn to_bytes_le(&self) -> [u8; 32] {
        match &self.0 {
            ScalarRepr::P256(s) => {
                let mut out: [u8; 32] = s.to_repr().into();
                out.reverse();
                out
            }
            ScalarRepr::Curve25519(s) => s.to_bytes(),
        }
    }

    pub fn is_zero(&self) -> bool {
        match &self.0 {
            ScalarRepr::P256(s) => bool::from(s.is_zero()),
            ScalarRepr::Curve25519(s) => bool::from(s.ct_eq(&EdScalar::ZERO)),
        }
    }

    pub fn add(&self, rhs: &GroupScalar) -> Result<GroupScalar, GroupError> {
        match (&self.0, &rhs.0) {
            (ScalarRepr::P256(a), ScalarRepr::P256(b)) => Ok(GroupScalar(ScalarRepr::P256(a + b))),
            (ScalarRepr::Curve25519(a), ScalarRepr::Curve25519(b)) => {
                Ok(GroupScalar(ScalarRepr::Curve25519(a + b)))
            }
            _ => Err(GroupError::CurveMismatch),
        }
    }

    pub fn sub(&self, rhs: &GroupScalar) -> Result<GroupScalar, GroupError> {
        self.add(&rhs.neg())
    }

    pub fn mul(&self, rhs: &GroupScalar) -> Result<GroupScalar, GroupError> {
        match (&self.0, &rhs.0) {
            (ScalarRepr::P256(a), ScalarRepr::P256(b)) => Ok(GroupScalar(ScalarRepr::P256(a * b))),
            (ScalarRepr::Curve25519(a), ScalarRepr::Curve25519(b)) => {
                Ok(GroupScalar(ScalarRepr::Curve25519(a * b)))
            }
            _ => Err(GroupError::CurveMismatch),
        }
    }

    pub fn neg(&self) -> GroupScalar {
        match &self.0 {
            ScalarRepr::P256(a) => GroupScalar(ScalarRepr::P256(-a)),
            ScalarRepr::Curve25519(a) => GroupScalar(ScalarRepr::Curve25519(-a)),
        }
    }

    pub fn invert(&self) -> Result<GroupScalar, GroupError> {
        if self.is_zero() {
            return Err(GroupError::NotInvertible);
        }
        Ok(match &self.0 {
            ScalarRepr::P256(a) => GroupScalar(ScalarRepr::P256(a.invert().unwrap())),
            ScalarRepr::Curve25519(a) => GroupScalar(ScalarRepr::Curve25519(a.invert())),
        })
    }

    /// Sums an iterator of same-curve scalars, starting from zero on `curve`.
    pub fn sum<'a, I>(curve: CurveId, items: I) -> Result<GroupScalar, GroupError>
    where
        I: IntoIterator<Item = &'a GroupScalar>,
    {
        items
            .into_iter()
            .try_fold(GroupScalar::zero(curve), |acc, s| acc.add(s))
    }
}

impl ConstantTimeEq for GroupScalar {
    fn ct_eq(&self, other: &Self) -> Choice {
        match (&self.0, &other.0) {
            (ScalarRepr::P256(a), ScalarRepr::P256(b)) => a.ct_eq(b),
            (ScalarRepr::Curve25519(a), ScalarRepr::Curve25519(b)) => a.ct_eq(b),
            _ => Choice::from(0),
        }
    }
}

impl PartialEq for GroupScalar {
    fn eq(&self, other: &Self) -> bool {
        self.ct_eq(other).into()
    }
}

impl Eq for GroupScalar {}

impl Zeroize for GroupScalar {
    fn zeroize(&mut self) {
        match &mut self.0 {
            ScalarRepr::P256(s) => *s = P256Scalar::ZERO,
            ScalarRepr::Curve25519(s) => s.zeroize(),
        }
    }
}

impl fmt::Debug for GroupScalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GroupScalar({}, <redacted>)", self.curve())
    }
}

/// Fixed-length external form of a group element: for Curve25519 the
/// 32-byte Montgomery u-coordinate followed by one sign byte for v, for
/// P-256 the SEC1 compressed point. The identity encodes as all zeros on
/// both curves.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct EncodedPoint(pub [u8; ENCODED_POINT_LEN]);

impl EncodedPoint {
    pub fn from_slice(bytes: &[u8]) -> Result<Self, GroupError> {
        let arr: [u8; ENCODED_POINT_LEN] =
            bytes.try_into().map_err(|_| GroupError::WrongLength {
                expected: ENCODED_POINT_LEN,
                actual: bytes.len(),
            })?;
        Ok(EncodedPoint(arr))
    }

    pub fn as_bytes(&self) -> &[u8; ENCODED_POINT_LEN] {
        &self.0
    }
}

impl fmt::Debug for EncodedPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EncodedPoint(")?;
        for b in self.0 {
            write!(f, "{b:02x}")?;
        }
        write!(f, ")")
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum PointRepr {
    P256(ProjectivePoint),
    Curve25519(EdwardsPoint),
}

/// A point of a configured curve.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct GroupPoint(PointRepr);

impl GroupPoint {
    pub fn curve(&self) -> CurveId {
        match self.0 {
            PointRepr::P256(_) => CurveId::P256,
            PointRepr::Curve25519(_) => CurveId::Curve25519,
        }
    }

    pub fn generator(curve: CurveId) -> Self {
        match curve {
            CurveId::P256 => GroupPoint(PointRepr::P256(ProjectivePoint::GENERATOR)),
            CurveId::Curve25519 => GroupPoint(PointRepr::Curve25519(ED25519_BASEPOINT_POINT)),
        }
    }

    pub fn identity(curve: CurveId) -> Self {
        match curve {
            CurveId::P256 => GroupPoint(PointRepr::P256(ProjectivePoint::IDENTITY)),
            CurveId::Curve25519 => GroupPoint(PointRepr::Curve25519(EdwardsPoint::identity())),
        }
    }

    pub fn is_identity(&self) -> bool {
        match &self.0 {
            PointRepr::P256(p) => bool::from(p.is_identity()),
            PointRepr::Curve25519(p) => p.is_identity(),
        }
    }

    /// `s * G` for the curve's base point.
    pub fn mul_generator(s: &GroupScalar) -> Self {
        match &s.0 {
            ScalarRepr::P256(s) => GroupPoint(PointRepr::P256(ProjectivePoint::GENERATOR * s)),
            ScalarRepr::Curve25519(s) => {
                GroupPoint(PointRepr::Curve25519(EdwardsPoint::mul_base(s)))
            }
        }
    }

    /// Constant-time scalar multiplication `s * self`.
    pub fn mul(&self, s: &GroupScalar) -> Result<GroupPoint, GroupError> {
        match (&self.0, &s.0) {
            (PointRepr::P256(p), ScalarRepr::P256(s)) => Ok(GroupPoint(PointRepr::P256(p * s))),
            (PointRepr::Curve25519(p), ScalarRepr::Curve25519(s)) => {
                Ok(GroupPoint(PointRepr::Curve25519(p * s)))
            }
            _ => Err(GroupError::CurveMismatch),
        }
    }

    pub fn add(&self, rhs: &GroupPoint) -> Result<GroupPoint, GroupError> {
        match (&self.0, &rhs.0) {
            (PointRepr::P256(a), PointRepr::P256(b)) => Ok(GroupPoint(PointRepr::P256(a + b))),
            (PointRepr::Curve25519(a), PointRepr::Curve25519(b)) => {
                Ok(GroupPoint(PointRepr::Curve25519(a + b)))
            }
            _ => Err(GroupError::CurveMismatch),
        }
    }

    pub fn neg(&self) -> GroupPoint {
        match &self.0 {
            PointRepr::P256(a) => GroupPoint(PointRepr::P256(-a)),
            PointRepr::Curve25519(a) => GroupPoint(PointRepr::Curve25519(-a)),
        }
    }

    pub fn sub(&self, rhs: &GroupPoint) -> Result<GroupPoint, GroupError> {
        self.add(&rhs.neg())
    }

    pub fn sum<'a, I>(curve: CurveId, items: I) -> Result<GroupPoint, GroupError>
    where
        I: IntoIterator<Item = &'a GroupPoint>,
    {
        items
            .into_iter()
            .try_fold(GroupPoint::identity(curve), |acc, p| acc.add(p))
    }

    pub fn mul_by_cofactor(&self) -> GroupPoint {
        match &self.0 {
            PointRepr::P256(_) => *self,
            PointRepr::Curve25519(p) => GroupPoint(PointRepr::Curve25519(p.mul_by_cofactor())),
        }
    }

    /// Whether the point lies in the prime-order subgroup.
    pub fn is_torsion_free(&self) -> bool {
        match &self.0 {
            PointRepr::P256(_) => true,
            PointRepr::Curve25519(p) => p.is_torsion_free(),
        }
    }

    /// Strips any low-order component: `(h^-1 mod q) * (h * P)`.
    pub fn sanitize(&self) -> GroupPoint {
        match &self.0 {
            PointRepr::P256(_) => *self,
            PointRepr::Curve25519(p) => {
                let h_inv = EdScalar::from(8u8).invert();
                GroupPoint(PointRepr::Curve25519(p.mul_by_cofactor() * h_inv))
            }
        }
    }

    pub fn encode(&self) -> EncodedPoint {
        let mut out = [0u8; ENCODED_POINT_LEN];
        match &self.0 {
            PointRepr::P256(p) => {
                out.copy_from_slice(&p.to_affine().to_bytes());
            }
            PointRepr::Curve25519(p) => {
                if let Some((u, v)) = edwards_to_montgomery(p) {
                    out[..32].copy_from_slice(&field25519::to_le(&u));
                    out[32] = field25519::is_odd(&v) as u8;
                }
            }
        }
        EncodedPoint(out)
    }

    /// Decodes a point and insists it lies in the prime-order subgroup.
    pub fn decode(bytes: &[u8], curve: CurveId) -> Result<GroupPoint, GroupError> {
        let p = Self::decode_any(bytes, curve)?;
        if !p.is_torsion_free() {
            return Err(GroupError::NotInSubgroup);
        }
        Ok(p)
    }

    /// Decodes any on-curve point and returns its prime-order component.
    /// This is the entry point for group elements received from peers.
    pub fn decode_sanitized(bytes: &[u8], curve: CurveId) -> Result<GroupPoint, GroupError> {
        Ok(Self::decode_any(bytes, curve)?.sanitize())
    }

    fn decode_any(bytes: &[u8], curve: CurveId) -> Result<GroupPoint, GroupError> {
        let enc = EncodedPoint::from_slice(bytes)?;
        match curve {
            CurveId::P256 => {
                if !matches!(enc.0[0], 0 | 2 | 3) {
                    return Err(GroupError::InvalidSign(enc.0[0]));
                }
                let repr = p256::CompressedPoint::from(enc.0);
                Option::<p256::AffinePoint>::from(p256::AffinePoint::from_bytes(&repr))
                    .map(|a| GroupPoint(PointRepr::P256(a.into())))
                    .ok_or(GroupError::NotOnCurve)
            }
            CurveId::Curve25519 => {
                let sign = enc.0[32];
                if sign > 1 {
                    return Err(GroupError::InvalidSign(sign));
                }
                let mut u_bytes = [0u8; 32];
                u_bytes.copy_from_slice(&enc.0[..32]);
                if !field25519::is_canonical(&u_bytes) {
                    return Err(GroupError::NonCanonical);
                }
                if u_bytes == [0u8; 32] {
                    return if sign == 0 {
                        Ok(GroupPoint::identity(curve))
                    } else {
                        Err(GroupError::NotOnCurve)
                    };
                }
                montgomery_to_edwards(&field25519::from_le(&u_bytes), sign == 1)
                    .map(|p| GroupPoint(PointRepr::Curve25519(p)))
            }
        }
    }

    /// The u-coordinate a classic X25519 implementation would output for
    /// this point.
    pub fn to_x25519_u(&self) -> Result<[u8; 32], GroupError> {
        match &self.0 {
            PointRepr::P256(_) => Err(GroupError::UnsupportedCurve(CurveId::P256)),
            PointRepr::Curve25519(p) => edwards_to_montgomery(p)
                .map(|(u, _)| field25519::to_le(&u))
                .ok_or(GroupError::Exceptional),
        }
    }

    /// Parity bit of the Montgomery v-coordinate (0 = even = positive).
    pub fn x25519_sign(&self) -> Result<u8, GroupError> {
        match &self.0 {
            PointRepr::P256(_) => Err(GroupError::UnsupportedCurve(CurveId::P256)),
            PointRepr::Curve25519(p) => edwards_to_montgomery(p)
                .map(|(_, v)| field25519::is_odd(&v) as u8)
                .ok_or(GroupError::Exceptional),
        }
    }

    /// Rebuilds a Curve25519 point from an X25519 u-coordinate and the sign
    /// of v. The result is not sanitized.
    pub fn from_x25519_u(u: &[u8; 32], sign: u8) -> Result<GroupPoint, GroupError> {
        if sign > 1 {
            return Err(GroupError::InvalidSign(sign));
        }
        if !field25519::is_canonical(u) {
            return Err(GroupError::NonCanonical);
        }
        montgomery_to_edwards(&field25519::from_le(u), sign == 1)
            .map(|p| GroupPoint(PointRepr::Curve25519(p)))
    }

    /// The bytes a classic single-key DH peer derives from this shared point:
    /// the X25519 u-coordinate, or the big-endian affine x for P-256.
    pub fn dh_bytes(&self) -> Result<[u8; 32], GroupError> {
        match &self.0 {
            PointRepr::P256(p) => {
                if bool::from(p.is_identity()) {
                    return Err(GroupError::Exceptional);
                }
                let enc = p.to_affine().to_encoded_point(false);
                let mut out = [0u8; 32];
                out.copy_from_slice(enc.x().expect("non-identity point"));
                Ok(out)
            }
            PointRepr::Curve25519(_) => self.to_x25519_u(),
        }
    }
}

impl fmt::Debug for GroupPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GroupPoint({}, {:?})", self.curve(), self.encode())
    }
}

/// Affine Montgomery (u, v) of an Edwards point; `None` for the identity and
/// the point of order two, which have no finite image with v != 0.
fn edwards_to_montgomery(p: &EdwardsPoint) -> Option<(BigUint, BigUint)> {
    let mut bytes = p.compress().to_bytes();
    let x_odd = bytes[31] >> 7 == 1;
    bytes[31] &= 0x7f;
    let y = field25519::from_le(&bytes);
    let x = field25519::edwards_x(&y, x_odd).expect("compressed form of a valid point");
    if field25519::is_zero(&x) {
        return None;
    }
    let one = BigUint::from(1u8);
    let u = field25519::mul(
        &field25519::add(&one, &y),
        &field25519::inv(&field25519::sub(&one, &y)),
    );
    let v = field25519::mul(
        &field25519::mul(&field25519::K.c, &u),
        &field25519::inv(&x),
    );
    Some((u, v))
}

fn montgomery_to_edwards(u: &BigUint, v_odd: bool) -> Result<EdwardsPoint, GroupError> {
    let v = field25519::sqrt(&field25519::montgomery_rhs(u)).ok_or(GroupError::NotOnCurve)?;
    if field25519::is_zero(&v) {
        return Err(GroupError::Exceptional);
    }
    let v = if field25519::is_odd(&v) == v_odd {
        v
    } else {
        field25519::negate(&v)
    };
    let one = BigUint::from(1u8);
    let u_plus = field25519::add(u, &one);
    if field25519::is_zero(&u_plus) {
        return Err(GroupError::Exceptional);
    }
    let x = field25519::mul(&field25519::mul(&field25519::K.c, u), &field25519::inv(&v));
    let y = field25519::mul(&field25519::sub(u, &one), &field25519::inv(&u_plus));
    let mut bytes = field25519::to_le(&y);
    if field25519::is_odd(&x) {
        bytes[31] |= 0x80;
    }
    CompressedEdwardsY(bytes)
        .decompress()
        .ok_or(GroupError::NotOnCurve)
}
