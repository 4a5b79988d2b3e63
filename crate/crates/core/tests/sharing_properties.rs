mod common;

use common::{rng, subsets};
use proptest::prelude::*;
use tdh_core::group::{CurveId, GroupScalar};
use tdh_core::sharing::{
    additive_split, feldman_verify, lagrange_coeff, reconstruct, shamir_share, PartyId,
    ShamirShare, SharingError,
};

fn curve() -> impl Strategy<Value = CurveId> {
    prop_oneof![Just(CurveId::P256), Just(CurveId::Curve25519)]
}

fn ids(n: usize) -> Vec<PartyId> {
    (1..=n as u32).map(PartyId).collect()
}

#[test]
fn additive_split_sums_to_secret() {
    let mut r = rng(1);
    for c in CurveId::ALL {
        for i in 0..100 {
            let n = 1 + i % 10;
            let s = GroupScalar::random_uniform(c, &mut r).unwrap();
            let shares = additive_split(&s, &ids(n), &mut r).unwrap();
            assert_eq!(shares.0.len(), n);
            assert_eq!(shares.sum(c).unwrap(), s);
        }
    }
}

/// For all t < n <= 7: every (t+1)-subset reconstructs the same secret, and
/// shares of two secrets add up to shares of their sum.
#[test]
fn every_quorum_reconstructs_and_sharing_is_linear() {
    let mut r = rng(2);
    for c in CurveId::ALL {
        for n in 1..=7usize {
            for t in 0..n {
                for _ in 0..100 / (n * n) + 1 {
                    let s1 = GroupScalar::random_uniform(c, &mut r).unwrap();
                    let s2 = GroupScalar::random_uniform(c, &mut r).unwrap();
                    let (a, _) = shamir_share(&s1, t, &ids(n), &mut r).unwrap();
                    let (b, _) = shamir_share(&s2, t, &ids(n), &mut r).unwrap();
                    let sum: Vec<ShamirShare> = a
                        .values()
                        .zip(b.values())
                        .map(|(x, y)| ShamirShare {
                            owner: x.owner,
                            value: x.value.add(&y.value).unwrap(),
                            t: x.t,
                            n: x.n,
                        })
                        .collect();
                    let all: Vec<ShamirShare> = a.values().cloned().collect();
                    for subset in subsets(&(0..n).collect::<Vec<_>>(), t + 1) {
                        let pick: Vec<ShamirShare> =
                            subset.iter().map(|&i| all[i].clone()).collect();
                        assert_eq!(reconstruct(&pick).unwrap(), s1);
                        let pick_sum: Vec<ShamirShare> =
                            subset.iter().map(|&i| sum[i].clone()).collect();
                        assert_eq!(
                            reconstruct(&pick_sum).unwrap(),
                            s1.add(&s2).unwrap()
                        );
                    }
                }
            }
        }
    }
}

/// Interpolating t shares of a degree-t polynomial as if it had degree t-1
/// misses the secret.
#[test]
fn t_shares_do_not_reveal_the_secret() {
    let mut r = rng(3);
    for c in CurveId::ALL {
        let mut misses = 0;
        for _ in 0..100 {
            let s = GroupScalar::random_uniform(c, &mut r).unwrap();
            let (shares, _) = shamir_share(&s, 2, &ids(5), &mut r).unwrap();
            let mut two: Vec<ShamirShare> = shares.values().take(2).cloned().collect();
            assert_eq!(
                reconstruct(&two),
                Err(SharingError::InsufficientShares { needed: 3, got: 2 })
            );
            for sh in &mut two {
                sh.t = 1;
            }
            if reconstruct(&two).unwrap() != s {
                misses += 1;
            }
        }
        assert!(misses >= 99);
    }
}

#[test]
fn lagrange_known_values() {
    for c in CurveId::ALL {
        let pair = [PartyId(1), PartyId(2)];
        assert_eq!(
            lagrange_coeff(c, &pair, PartyId(1)).unwrap(),
            GroupScalar::from_u64(c, 2)
        );
        assert_eq!(
            lagrange_coeff(c, &pair, PartyId(2)).unwrap(),
            GroupScalar::one(c).neg()
        );
        assert_eq!(
            lagrange_coeff(c, &[PartyId(4)], PartyId(4)).unwrap(),
            GroupScalar::one(c)
        );
        assert_eq!(
            lagrange_coeff(c, &[PartyId(1), PartyId(1)], PartyId(1)),
            Err(SharingError::DuplicateId(PartyId(1)))
        );
        assert_eq!(
            lagrange_coeff(c, &pair, PartyId(3)),
            Err(SharingError::NotInSubset(PartyId(3)))
        );
    }
}

#[test]
fn feldman_rejects_swapped_shares() {
    let mut r = rng(4);
    for c in CurveId::ALL {
        let s = GroupScalar::random_uniform(c, &mut r).unwrap();
        let (shares, comms) = shamir_share(&s, 1, &ids(3), &mut r).unwrap();
        let a = &shares[&PartyId(1)];
        let b = &shares[&PartyId(2)];
        let a_swapped = ShamirShare {
            value: b.value.clone(),
            ..a.clone()
        };
        let b_swapped = ShamirShare {
            value: a.value.clone(),
            ..b.clone()
        };
        assert!(!feldman_verify(&a_swapped, &comms));
        assert!(!feldman_verify(&b_swapped, &comms));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lagrange_weights_interpolate_at_zero(
        c in curve(),
        ids_raw in proptest::collection::btree_set(1u32..1000, 1..6),
        seed in any::<u64>(),
    ) {
        let subset: Vec<PartyId> = ids_raw.into_iter().map(PartyId).collect();
        let mut r = rng(seed);
        let lambdas: Vec<GroupScalar> = subset
            .iter()
            .map(|&i| lagrange_coeff(c, &subset, i).unwrap())
            .collect();
        prop_assert_eq!(GroupScalar::sum(c, &lambdas).unwrap(), GroupScalar::one(c));

        // A random polynomial of degree |subset| - 1 evaluated at the ids.
        let coeffs: Vec<GroupScalar> = (0..subset.len())
            .map(|_| GroupScalar::random_uniform(c, &mut r).unwrap())
            .collect();
        let eval = |x: &GroupScalar| {
            coeffs.iter().rev().fold(GroupScalar::zero(c), |acc, k| {
                acc.mul(x).unwrap().add(k).unwrap()
            })
        };
        let mut acc = GroupScalar::zero(c);
        for (l, &i) in lambdas.iter().zip(&subset) {
            acc = acc.add(&l.mul(&eval(&i.eval_point(c))).unwrap()).unwrap();
        }
        prop_assert_eq!(acc, coeffs[0].clone());

        let mut reversed = subset.clone();
        reversed.reverse();
        for &i in &subset {
            prop_assert_eq!(
                lagrange_coeff(c, &reversed, i).unwrap(),
                lagrange_coeff(c, &subset, i).unwrap()
            );
        }
    }

    #[test]
    fn honest_shares_verify_and_tampered_do_not(c in curve(), t in 0usize..4, extra in 1usize..4, seed in any::<u64>()) {
        let n = t + extra;
        let mut r = rng(seed);
        let s = GroupScalar::random_uniform(c, &mut r).unwrap();
        let (shares, comms) = shamir_share(&s, t, &ids(n), &mut r).unwrap();
        prop_assert_eq!(comms.0.len(), t + 1);
        prop_assert_eq!(comms.public_secret().copied(), Some(tdh_core::group::GroupPoint::mul_generator(&s)));
        for sh in shares.values() {
            prop_assert!(feldman_verify(sh, &comms));
            let bumped = ShamirShare {
                value: sh.value.add(&GroupScalar::one(c)).unwrap(),
                ..sh.clone()
            };
            prop_assert!(!feldman_verify(&bumped, &comms));
            prop_assert_eq!(ShamirShare::from_bytes(c, &sh.to_bytes()).unwrap(), sh.clone());
        }
    }
}
