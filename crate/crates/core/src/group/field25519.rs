//! Arithmetic in GF(2^255 - 19) for coordinate conversion between the
//! Montgomery and twisted Edwards models of Curve25519.
//!
//! Everything here is variable-time and must only ever see public data
//! (encoded points), never scalars.

use num_bigint::BigUint;
use once_cell::sync::Lazy;

pub(crate) struct Constants {
    pub p: BigUint,
    /// Montgomery coefficient A = 486662.
    pub a: BigUint,
    /// Edwards d = -121665 / 121666.
    pub d: BigUint,
    pub sqrt_m1: BigUint,
    /// The even square root of -(A + 2), used by the birational map.
    pub c: BigUint,
}

pub(crate) static K: Lazy<Constants> = Lazy::new(|| {
    let p = (BigUint::from(1u8) << 255u32) - BigUint::from(19u8);
    let a = BigUint::from(486_662u32);
    let d = neg(&BigUint::from(121_665u32), &p) * inv_raw(&BigUint::from(121_666u32), &p) % &p;
    let exp = (&p - BigUint::from(1u8)) >> 2u32;
    let sqrt_m1 = BigUint::from(2u8).modpow(&exp, &p);
    let minus_a2 = neg(&BigUint::from(486_664u32), &p);
    let mut c = sqrt_with(&minus_a2, &p, &sqrt_m1).expect("-486664 is a square mod p");
    if c.bit(0) {
        c = &p - c;
    }
    Constants { p, a, d, sqrt_m1, c }
});

fn neg(x: &BigUint, p: &BigUint) -> BigUint {
    let x = x % p;
    if x == BigUint::default() {
        x
    } else {
        p - x
    }
}

fn inv_raw(x: &BigUint, p: &BigUint) -> BigUint {
    x.modpow(&(p - BigUint::from(2u8)), p)
}

fn sqrt_with(x: &BigUint, p: &BigUint, sqrt_m1: &BigUint) -> Option<BigUint> {
    // p = 5 (mod 8): candidate x^((p+3)/8), fixed up by sqrt(-1) if needed.
    let x = x % p;
    let exp = (p + BigUint::from(3u8)) >> 3u32;
    let cand = x.modpow(&exp, p);
    let sq = &cand * &cand % p;
    if sq == x {
        return Some(cand);
    }
    if sq == neg(&x, p) {
        return Some(cand * sqrt_m1 % p);
    }
    None
}

pub(crate) fn add(x: &BigUint, y: &BigUint) -> BigUint {
    (x + y) % &K.p
}

pub(crate) fn sub(x: &BigUint, y: &BigUint) -> BigUint {
    (x + &K.p - (y % &K.p)) % &K.p
}

pub(crate) fn mul(x: &BigUint, y: &BigUint) -> BigUint {
    x * y % &K.p
}

pub(crate) fn negate(x: &BigUint) -> BigUint {
    neg(x, &K.p)
}

pub(crate) fn is_zero(x: &BigUint) -> bool {
    (x % &K.p) == BigUint::default()
}

/// Multiplicative inverse; callers must rule out zero first.
pub(crate) fn inv(x: &BigUint) -> BigUint {
    inv_raw(x, &K.p)
}

pub(crate) fn sqrt(x: &BigUint) -> Option<BigUint> {
    sqrt_with(x, &K.p, &K.sqrt_m1)
}

/// Parity of the canonical representative in [0, p).
pub(crate) fn is_odd(x: &BigUint) -> bool {
    (x % &K.p).bit(0)
}

pub(crate) fn from_le(bytes: &[u8; 32]) -> BigUint {
    BigUint::from_bytes_le(bytes)
}

pub(crate) fn is_canonical(bytes: &[u8; 32]) -> bool {
    from_le(bytes) < K.p
}

pub(crate) fn to_le(x: &BigUint) -> [u8; 32] {
    let v = (x % &K.p).to_bytes_le();
    let mut out = [0u8; 32];
    out[..v.len()].copy_from_slice(&v);
    out
}

/// Right-hand side of the Montgomery equation v^2 = u^3 + A u^2 + u.
pub(crate) fn montgomery_rhs(u: &BigUint) -> BigUint {
    let u2 = mul(u, u);
    add(&add(&mul(&u2, u), &mul(&K.a, &u2)), u)
}

/// Recovers the Edwards x-coordinate from y and the parity bit of x.
pub(crate) fn edwards_x(y: &BigUint, x_odd: bool) -> Option<BigUint> {
    let one = BigUint::from(1u8);
    let y2 = mul(y, y);
    let num = sub(&y2, &one);
    let den = add(&mul(&K.d, &y2), &one);
    if is_zero(&den) {
        return None;
    }
    let x = sqrt(&mul(&num, &inv(&den)))?;
    if is_zero(&x) {
        return if x_odd { None } else { Some(x) };
    }
    Some(if is_odd(&x) == x_odd { x } else { negate(&x) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants_are_consistent() {
        let k = &*K;
        assert_eq!(mul(&k.sqrt_m1, &k.sqrt_m1), &k.p - BigUint::from(1u8));
        assert_eq!(mul(&k.c, &k.c), negate(&BigUint::from(486_664u32)));
        assert!(!is_odd(&k.c));
        // d * 121666 == -121665
        assert_eq!(
            mul(&k.d, &BigUint::from(121_666u32)),
            negate(&BigUint::from(121_665u32))
        );
    }

    #[test]
    fn base_point_u_is_on_curve() {
        let u = BigUint::from(9u8);
        assert!(sqrt(&montgomery_rhs(&u)).is_some());
    }

    #[test]
    fn canonical_bound() {
        let mut p_bytes = to_le(&BigUint::default());
        p_bytes.copy_from_slice(&{
            let mut v = K.p.to_bytes_le();
            v.resize(32, 0);
            v
        });
        assert!(!is_canonical(&p_bytes));
        p_bytes[0] -= 1;
        assert!(is_canonical(&p_bytes));
    }
}
