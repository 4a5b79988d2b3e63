mod common;

use std::collections::HashSet;

use common::rng;
use num_bigint::BigUint;
use proptest::prelude::*;
use tdh_core::group::{scalar_clamp, CurveId, GroupError, GroupPoint, GroupScalar};

fn curve() -> impl Strategy<Value = CurveId> {
    prop_oneof![Just(CurveId::P256), Just(CurveId::Curve25519)]
}

fn scalar_from_seed(curve: CurveId, seed: u64) -> GroupScalar {
    GroupScalar::random_uniform(curve, &mut rng(seed)).unwrap()
}

fn point_from_seed(curve: CurveId, seed: u64) -> GroupPoint {
    GroupPoint::mul_generator(&scalar_from_seed(curve, seed))
}

fn to_scalar(curve: CurveId, v: &BigUint) -> GroupScalar {
    let mut b = v.to_bytes_le();
    b.resize(32, 0);
    GroupScalar::from_bytes_le(curve, &b).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn distributivity(c in curve(), a in any::<u64>(), b in any::<u64>(), p in any::<u64>(), q in any::<u64>()) {
        let a = scalar_from_seed(c, a);
        let b = scalar_from_seed(c, b);
        let pp = point_from_seed(c, p);
        let qq = point_from_seed(c, q);
        prop_assert_eq!(
            pp.mul(&a.add(&b).unwrap()).unwrap(),
            pp.mul(&a).unwrap().add(&pp.mul(&b).unwrap()).unwrap()
        );
        prop_assert_eq!(
            pp.add(&qq).unwrap().mul(&a).unwrap(),
            pp.mul(&a).unwrap().add(&qq.mul(&a).unwrap()).unwrap()
        );
        prop_assert_eq!(
            GroupPoint::mul_generator(&a.add(&b).unwrap()),
            GroupPoint::mul_generator(&a).add(&GroupPoint::mul_generator(&b)).unwrap()
        );
    }

    #[test]
    fn clamp_bit_pattern(raw in any::<[u8; 32]>()) {
        let c = scalar_clamp(&raw).unwrap();
        prop_assert_eq!(c[0] & 7, 0);
        prop_assert_eq!(c[31] & 0x80, 0);
        prop_assert_eq!(c[31] & 0x40, 0x40);
        prop_assert_eq!(scalar_clamp(&c).unwrap(), c);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn group_laws(c in curve(), s in any::<[u64; 3]>()) {
        let [p, q, r] = s.map(|x| point_from_seed(c, x));
        prop_assert_eq!(p.add(&q).unwrap(), q.add(&p).unwrap());
        prop_assert_eq!(
            p.add(&q).unwrap().add(&r).unwrap(),
            p.add(&q.add(&r).unwrap()).unwrap()
        );
        prop_assert_eq!(p.add(&GroupPoint::identity(c)).unwrap(), p);
        prop_assert!(p.add(&p.neg()).unwrap().is_identity());
        let q_minus_one = to_scalar(c, &(c.order() - BigUint::from(1u8)));
        prop_assert!(p.mul(&q_minus_one).unwrap().add(&p).unwrap().is_identity());
    }

    #[test]
    fn encoding_roundtrip_and_sign(c in curve(), seed in any::<u64>()) {
        let p = point_from_seed(c, seed);
        let e = p.encode();
        prop_assert_eq!(GroupPoint::decode(e.as_bytes(), c).unwrap(), p);
        let n = p.neg().encode();
        match c {
            CurveId::Curve25519 => {
                prop_assert_eq!(&e.as_bytes()[..32], &n.as_bytes()[..32]);
                prop_assert_ne!(e.as_bytes()[32], n.as_bytes()[32]);
                prop_assert!(e.as_bytes()[32] <= 1);
            }
            CurveId::P256 => {
                prop_assert_eq!(&e.as_bytes()[1..], &n.as_bytes()[1..]);
                prop_assert_ne!(e.as_bytes()[0], n.as_bytes()[0]);
            }
        }
    }

    #[test]
    fn off_curve_u_rejected(c in curve(), raw in any::<[u8; 32]>(), sign in 0u8..2) {
        let mut bytes = [0u8; 33];
        match c {
            CurveId::Curve25519 => {
                bytes[..32].copy_from_slice(&raw);
                bytes[31] &= 0x7f;
                bytes[32] = sign;
            }
            CurveId::P256 => {
                bytes[0] = 2 + sign;
                bytes[1..].copy_from_slice(&raw);
            }
        }
        // Roughly half of all x values are on the curve; decoding must
        // either fail or yield a point that re-encodes to the same bytes.
        if let Ok(p) = GroupPoint::decode(&bytes, c) {
            prop_assert_eq!(p.encode().0, bytes);
        }
    }
}

#[test]
fn generator_times_one_and_order() {
    for c in CurveId::ALL {
        let g = GroupPoint::generator(c);
        assert_eq!(g.mul(&GroupScalar::one(c)).unwrap(), g);
        let mut q = c.order().to_bytes_le();
        q.resize(32, 0);
        let q_reduced = GroupScalar::from_bytes_le_reduced(c, &q.try_into().unwrap());
        assert!(q_reduced.is_zero());
        assert!(g.mul(&q_reduced).unwrap().is_identity());
        assert_eq!(
            g.add(&g).unwrap(),
            g.mul(&GroupScalar::from_u64(c, 2)).unwrap()
        );
    }
}

#[test]
fn encoding_is_injective_on_samples() {
    for c in CurveId::ALL {
        let mut seen = HashSet::new();
        let mut p = GroupPoint::identity(c);
        let g = GroupPoint::generator(c);
        for _ in 0..500 {
            p = p.add(&g).unwrap();
            assert!(seen.insert(p.encode().as_bytes().to_vec()));
        }
    }
}

#[test]
fn curve25519_random_scalars_are_cofactor_multiples() {
    let mut r = rng(1);
    for _ in 0..1000 {
        let s = GroupScalar::random(CurveId::Curve25519, &mut r).unwrap();
        assert!(!s.is_zero());
        assert_eq!(s.to_bytes_le()[0] % 8, 0);
    }
}

#[test]
fn p256_random_scalar_is_deterministic_for_fixed_seed() {
    let a = GroupScalar::random(CurveId::P256, &mut rng(5)).unwrap();
    let b = GroupScalar::random(CurveId::P256, &mut rng(5)).unwrap();
    assert_eq!(a, b);
    let v = BigUint::from_bytes_le(&a.to_bytes_le());
    assert!(v > BigUint::from(0u8) && v < CurveId::P256.order());
}

/// 10^4 draws never repeat, and the pooled byte histogram (leaving out the
/// structurally fixed bits of Curve25519 scalars) passes a chi-square test
/// at 3 sigma.
#[test]
fn random_scalars_are_distinct_and_byte_uniform() {
    for c in CurveId::ALL {
        let mut r = rng(99);
        let mut seen = HashSet::new();
        let mut counts = [0u64; 256];
        let draws = 10_000;
        let (lo, hi) = match c {
            // Byte 0 carries the cofactor-multiple pattern, byte 31 the
            // 253-bit range of q.
            CurveId::Curve25519 => (1, 31),
            CurveId::P256 => (0, 32),
        };
        for _ in 0..draws {
            let s = GroupScalar::random(c, &mut r).unwrap().to_bytes_le();
            assert!(seen.insert(s));
            for b in &s[lo..hi] {
                counts[*b as usize] += 1;
            }
        }
        let expected = (draws * (hi - lo)) as f64 / 256.0;
        let chi2: f64 = counts
            .iter()
            .map(|&o| (o as f64 - expected).powi(2) / expected)
            .sum();
        // 255 degrees of freedom: mean 255, standard deviation sqrt(510).
        let bound = 255.0 + 3.0 * 510f64.sqrt();
        assert!(chi2 < bound, "{c}: chi2 = {chi2}");
    }
}

#[test]
fn sanitize_is_identity_on_p256() {
    for seed in 0..20 {
        let p = point_from_seed(CurveId::P256, seed);
        assert_eq!(p.sanitize(), p);
    }
}

#[test]
fn mixed_curves_are_rejected() {
    let a = GroupPoint::generator(CurveId::P256);
    let b = GroupPoint::generator(CurveId::Curve25519);
    assert!(a.add(&b).is_err());
    assert!(a.mul(&GroupScalar::one(CurveId::Curve25519)).is_err());
    assert!(GroupScalar::one(CurveId::P256)
        .add(&GroupScalar::one(CurveId::Curve25519))
        .is_err());
}

#[test]
fn small_u_values_off_curve_are_rejected() {
    let mut off_curve = 0;
    for u in 2u8..40 {
        let mut bytes = [0u8; 33];
        bytes[0] = u;
        match GroupPoint::decode(&bytes, CurveId::Curve25519) {
            Err(GroupError::NotOnCurve) => off_curve += 1,
            Err(GroupError::NotInSubgroup) => {}
            Ok(p) => assert_eq!(p.encode().0, bytes),
            Err(e) => panic!("u = {u}: {e:?}"),
        }
    }
    assert!(off_curve > 0);
}
