#![allow(dead_code)]

use std::collections::BTreeMap;

use num_bigint::BigUint;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use tdh_core::group::{CurveId, GroupPoint, GroupScalar};
use tdh_core::protocols::local::{run_local, Delivery, LocalRun};
use tdh_core::protocols::{
    start_driver, Exchange, ExchangeOutput, KeyShareRecord, NaiveKeygen, Outgoing,
    ProtocolOutput, Reshare, ReshareConfig, ReshareOutput, ReshareRole, Scheme, SchemeParams,
    SessionId, ThresholdKeygen,
};
use tdh_core::sharing::{reconstruct, PartyId, ShamirShare};

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn sid(tag: u8) -> SessionId {
    SessionId([tag; 16])
}

pub fn honest(_: &mut Outgoing) -> Delivery {
    Delivery::Deliver
}

pub fn run_keygen_with(
    params: SchemeParams,
    seed: u64,
    tamper: impl FnMut(&mut Outgoing) -> Delivery,
) -> LocalRun {
    let mut r = rng(seed);
    let started = params
        .party_ids()
        .into_iter()
        .map(|p| match params.scheme {
            Scheme::Naive => start_driver(sid(1), NaiveKeygen::new(params, p).unwrap(), &mut r),
            Scheme::Threshold => {
                start_driver(sid(1), ThresholdKeygen::new(params, p).unwrap(), &mut r)
            }
        })
        .collect::<Result<Vec<_>, _>>()
        .unwrap();
    run_local(started, tamper)
}

pub fn keygen(params: SchemeParams, seed: u64) -> Vec<KeyShareRecord> {
    run_keygen_with(params, seed, honest)
        .into_outputs()
        .unwrap()
        .into_values()
        .map(|o| match o {
            ProtocolOutput::Key(k) => k,
            other => panic!("unexpected output {other:?}"),
        })
        .collect()
}

pub fn run_exchange_with(
    records: &[KeyShareRecord],
    subset: &[PartyId],
    remote: &GroupPoint,
    seed: u64,
    tamper: impl FnMut(&mut Outgoing) -> Delivery,
) -> LocalRun {
    let mut r = rng(seed);
    let started = records
        .iter()
        .filter(|k| subset.contains(&k.party))
        .map(|k| {
            let logic = match k.params.scheme {
                Scheme::Naive => Exchange::naive(k, remote).unwrap(),
                Scheme::Threshold => Exchange::threshold(k, subset, remote).unwrap(),
            };
            start_driver(sid(2), logic, &mut r).unwrap()
        })
        .collect();
    run_local(started, tamper)
}

pub fn exchange(
    records: &[KeyShareRecord],
    subset: &[PartyId],
    remote: &GroupPoint,
    seed: u64,
) -> Vec<ExchangeOutput> {
    run_exchange_with(records, subset, remote, seed, honest)
        .into_outputs()
        .unwrap()
        .into_values()
        .map(|o| match o {
            ProtocolOutput::Exchange(e) => e,
            other => panic!("unexpected output {other:?}"),
        })
        .collect()
}

/// The whole committee (naive) or the first `t + 1` members (threshold).
pub fn default_subset(params: &SchemeParams) -> Vec<PartyId> {
    match params.scheme {
        Scheme::Naive => params.party_ids(),
        Scheme::Threshold => params.party_ids()[..params.quorum()].to_vec(),
    }
}

pub fn run_reshare_with(
    config: &ReshareConfig,
    old: &[KeyShareRecord],
    seed: u64,
    tamper: impl FnMut(&mut Outgoing) -> Delivery,
) -> LocalRun {
    let mut r = rng(seed);
    let mut started = Vec::new();
    for k in old.iter().filter(|k| config.old_parties.contains(&k.party)) {
        let logic = Reshare::new(config.clone(), ReshareRole::Old(k.clone())).unwrap();
        started.push(start_driver(sid(3), logic, &mut r).unwrap());
    }
    for j in config.new_params.party_ids() {
        let logic = Reshare::new(config.clone(), ReshareRole::New(j)).unwrap();
        started.push(start_driver(sid(3), logic, &mut r).unwrap());
    }
    run_local(started, tamper)
}

/// Runs a reshare and returns the new committee's records.
pub fn reshare(config: &ReshareConfig, old: &[KeyShareRecord], seed: u64) -> Vec<KeyShareRecord> {
    run_reshare_with(config, old, seed, honest)
        .into_outputs()
        .unwrap()
        .into_values()
        .filter_map(|o| match o {
            ProtocolOutput::Reshare(ReshareOutput { record, public_key }) => {
                if let Some(r) = &record {
                    assert_eq!(r.public_key, public_key);
                }
                record
            }
            other => panic!("unexpected output {other:?}"),
        })
        .collect()
}

/// Rebuilds the joint secret from the records, outside any protocol.
pub fn oracle_secret(records: &[KeyShareRecord]) -> GroupScalar {
    let params = records[0].params;
    match params.scheme {
        Scheme::Naive => {
            GroupScalar::sum(params.curve, records.iter().map(|r| &r.private_share)).unwrap()
        }
        Scheme::Threshold => reconstruct(&shamir_view(&records[..params.quorum()])).unwrap(),
    }
}

pub fn shamir_view(records: &[KeyShareRecord]) -> Vec<ShamirShare> {
    records
        .iter()
        .map(|r| ShamirShare {
            owner: r.party,
            value: r.private_share.clone(),
            t: r.params.t,
            n: r.params.n,
        })
        .collect()
}

pub fn random_point(curve: CurveId, seed: u64) -> GroupPoint {
    GroupPoint::mul_generator(&GroupScalar::random_uniform(curve, &mut rng(seed)).unwrap())
}

pub fn outputs_by_id<T>(run: LocalRun, pick: impl Fn(ProtocolOutput) -> T) -> BTreeMap<u32, T> {
    run.into_outputs()
        .unwrap()
        .into_iter()
        .map(|(k, v)| (k, pick(v)))
        .collect()
}

/// All `k`-element subsets of `items`, in lexicographic order.
pub fn subsets<T: Clone>(items: &[T], k: usize) -> Vec<Vec<T>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    if items.len() < k {
        return Vec::new();
    }
    let mut out = Vec::new();
    for (i, head) in items.iter().enumerate() {
        for mut rest in subsets(&items[i + 1..], k - 1) {
            rest.insert(0, head.clone());
            out.push(rest);
        }
    }
    out
}

// Independent X25519 (RFC 7748 Montgomery ladder) over big integers.

fn p25519() -> BigUint {
    (BigUint::from(1u8) << 255u32) - BigUint::from(19u8)
}

pub fn x25519_clamp(mut k: [u8; 32]) -> [u8; 32] {
    k[0] &= 248;
    k[31] &= 127;
    k[31] |= 64;
    k
}

pub fn x25519_ladder(scalar: &[u8; 32], u: &[u8; 32]) -> [u8; 32] {
    let p = p25519();
    let k = BigUint::from_bytes_le(&x25519_clamp(*scalar));
    let mut u_bytes = *u;
    u_bytes[31] &= 127;
    let x1 = BigUint::from_bytes_le(&u_bytes) % &p;
    let a24 = BigUint::from(121665u32);
    let sub = |a: &BigUint, b: &BigUint| ((a + &p) - b) % &p;
    let (mut x2, mut z2) = (BigUint::from(1u8), BigUint::from(0u8));
    let (mut x3, mut z3) = (x1.clone(), BigUint::from(1u8));
    let mut swap = false;
    for t in (0..255).rev() {
        let bit = k.bit(t);
        if swap != bit {
            std::mem::swap(&mut x2, &mut x3);
            std::mem::swap(&mut z2, &mut z3);
        }
        swap = bit;
        let a = (&x2 + &z2) % &p;
        let aa = (&a * &a) % &p;
        let b = sub(&x2, &z2);
        let bb = (&b * &b) % &p;
        let e = sub(&aa, &bb);
        let c = (&x3 + &z3) % &p;
        let d = sub(&x3, &z3);
        let da = (&d * &a) % &p;
        let cb = (&c * &b) % &p;
        let s = (&da + &cb) % &p;
        x3 = (&s * &s) % &p;
        let dif = sub(&da, &cb);
        z3 = (&x1 * ((&dif * &dif) % &p)) % &p;
        x2 = (&aa * &bb) % &p;
        z2 = (&e * ((&aa + (&a24 * &e) % &p) % &p)) % &p;
    }
    if swap {
        std::mem::swap(&mut x2, &mut x3);
        std::mem::swap(&mut z2, &mut z3);
    }
    let inv = z2.modpow(&(&p - BigUint::from(2u8)), &p);
    let out = (x2 * inv) % &p;
    let mut bytes = out.to_bytes_le();
    bytes.resize(32, 0);
    bytes.try_into().unwrap()
}

pub fn x25519_base() -> [u8; 32] {
    let mut u = [0u8; 32];
    u[0] = 9;
    u
}

pub fn hex32(s: &str) -> [u8; 32] {
    hex::decode(s).unwrap().try_into().unwrap()
}
