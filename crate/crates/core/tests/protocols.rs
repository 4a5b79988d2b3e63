mod common;

use common::*;
use rand::RngCore;
use sha2::{Digest, Sha256};
use tdh_core::group::{CurveId, GroupPoint, GroupScalar};
use tdh_core::protocols::local::Delivery;
use tdh_core::protocols::{
    derive_psk, new_member, psk_from_dh_bytes, Destination, Envelope, Exchange, KeyShareRecord,
    MessageKind, NaiveKeygen, ProtocolError, ProtocolOutput, ReshareConfig, Scheme,
    SchemeParams, Session,
};
use tdh_core::sharing::{reconstruct, PartyId};

fn all_params() -> Vec<SchemeParams> {
    let mut out = Vec::new();
    for curve in CurveId::ALL {
        for n in [2, 3, 4] {
            out.push(SchemeParams::naive(curve, n));
        }
        for (t, n) in [(1, 2), (1, 3), (2, 3), (2, 4)] {
            out.push(SchemeParams::threshold(curve, t, n));
        }
    }
    out
}

#[test]
fn single_party_naive_keygen_needs_no_network() {
    for curve in CurveId::ALL {
        let params = SchemeParams::naive(curve, 1);
        let logic = NaiveKeygen::new(params, PartyId(1)).unwrap();
        let (_, step) = Session::start(sid(1), logic, &mut rng(1)).unwrap();
        let record = step.output.expect("output at start");
        assert_eq!(
            record.public_key,
            GroupPoint::mul_generator(&record.private_share)
        );
        assert_eq!(record.public_key, record.public_share);
    }
}

#[test]
fn naive_keygen_public_key_is_sum_of_shares() {
    for curve in CurveId::ALL {
        let records = keygen(SchemeParams::naive(curve, 3), 11);
        assert_eq!(records.len(), 3);
        let x = oracle_secret(&records);
        for r in &records {
            assert_eq!(r.public_key, GroupPoint::mul_generator(&x));
        }
        assert_eq!(records, keygen(SchemeParams::naive(curve, 3), 11));
    }
}

#[test]
fn curve25519_naive_shares_are_cofactor_multiples() {
    for r in keygen(SchemeParams::naive(CurveId::Curve25519, 4), 5) {
        assert_eq!(r.private_share.to_bytes_le()[0] & 7, 0);
    }
}

#[test]
fn exchange_matches_reconstruction_oracle() {
    for params in all_params() {
        let records = keygen(params, 100 + params.n as u64);
        let y = random_point(params.curve, 7);
        let x = oracle_secret(&records);
        let expected = y.mul(&x).unwrap();
        let outs = exchange(&records, &default_subset(&params), &y, 3);
        assert_eq!(outs.len(), params.quorum(), "{params:?}");
        for o in outs {
            assert_eq!(o.shared_point, expected, "{params:?}");
            assert_eq!(o.psk, derive_psk(&expected).unwrap());
        }
    }
}

#[test]
fn every_threshold_subset_gives_the_same_result() {
    for params in all_params()
        .into_iter()
        .filter(|p| p.scheme == Scheme::Threshold)
    {
        let records = keygen(params, 40);
        let y = random_point(params.curve, 41);
        let mut seen = None;
        for subset in subsets(&params.party_ids(), params.quorum()) {
            let outs = exchange(&records, &subset, &y, 42);
            for o in outs {
                let key = (o.shared_point, o.psk);
                match &seen {
                    None => seen = Some(key),
                    Some(s) => assert_eq!(s, &key, "{params:?} subset {subset:?}"),
                }
            }
        }
    }
}

#[test]
fn threshold_keygen_shares_interpolate_to_the_key() {
    for curve in CurveId::ALL {
        let params = SchemeParams::threshold(curve, 1, 3);
        let records = keygen(params, 77);
        let view = shamir_view(&records);
        let a = reconstruct(&[view[0].clone(), view[1].clone()]).unwrap();
        let b = reconstruct(&[view[1].clone(), view[2].clone()]).unwrap();
        let c = reconstruct(&[view[0].clone(), view[2].clone()]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        for r in &records {
            assert_eq!(GroupPoint::mul_generator(&a), r.public_key);
            let comms = r.commitments.as_ref().unwrap();
            assert_eq!(comms.0[0], r.public_key);
            assert_eq!(comms.evaluate(r.party).unwrap(), r.public_share);
        }
    }
}

#[test]
fn subset_of_size_t_is_rejected() {
    let params = SchemeParams::threshold(CurveId::P256, 2, 4);
    let records = keygen(params, 8);
    let y = random_point(params.curve, 9);
    let short = [PartyId(1), PartyId(2)];
    assert!(matches!(
        Exchange::threshold(&records[0], &short, &y),
        Err(ProtocolError::InvalidParams(_))
    ));
    let outsider = [PartyId(1), PartyId(2), PartyId(9)];
    assert!(Exchange::threshold(&records[0], &outsider, &y).is_err());
}

#[test]
fn low_order_remote_key_is_refused() {
    let records = keygen(SchemeParams::naive(CurveId::Curve25519, 2), 3);
    let u = hex32("e0eb7a7c3b41b8ae1656e3faf19fc46ada098deb9c32b1fd866205165f49b800");
    let low = GroupPoint::from_x25519_u(&u, 0).unwrap();
    assert_eq!(
        Exchange::naive(&records[0], &low).err(),
        Some(ProtocolError::IdentityPoint)
    );
    assert_eq!(
        Exchange::naive(&records[0], &GroupPoint::identity(CurveId::Curve25519)).err(),
        Some(ProtocolError::IdentityPoint)
    );
    // A torsion component on a valid key is stripped, not refused.
    let y = random_point(CurveId::Curve25519, 4);
    let x = oracle_secret(&records);
    let out = exchange(&records, &default_subset(&records[0].params), &y.add(&low).unwrap(), 5);
    assert_eq!(out[0].shared_point, y.mul(&x).unwrap());
}

#[test]
fn classic_x25519_peer_derives_the_same_psk() {
    let mut r = rng(2);
    for params in [
        SchemeParams::naive(CurveId::Curve25519, 3),
        SchemeParams::threshold(CurveId::Curve25519, 1, 3),
    ] {
        let records = keygen(params, 12);
        let committee_u = records[0].public_key.to_x25519_u().unwrap();
        for _ in 0..5 {
            let mut peer_secret = [0u8; 32];
            r.fill_bytes(&mut peer_secret);
            let peer_public = x25519_ladder(&peer_secret, &x25519_base());
            let peer_dh = x25519_ladder(&peer_secret, &committee_u);
            let mut h = Sha256::new();
            h.update(b"TDH-PSK-v1");
            h.update(peer_dh);
            let peer_psk: [u8; 32] = h.finalize().into();
            for sign in [0, 1] {
                let y = GroupPoint::from_x25519_u(&peer_public, sign).unwrap();
                for o in exchange(&records, &default_subset(&params), &y, 13) {
                    assert_eq!(o.psk, peer_psk);
                }
            }
        }
    }
}

#[test]
fn classic_p256_peer_derives_the_same_psk() {
    use p256::elliptic_curve::sec1::{FromEncodedPoint, ToEncodedPoint};
    let params = SchemeParams::threshold(CurveId::P256, 2, 4);
    let records = keygen(params, 21);
    let committee = p256::EncodedPoint::from_bytes(records[0].public_key.encode().as_bytes())
        .unwrap();
    let committee = p256::AffinePoint::from_encoded_point(&committee).unwrap();
    for seed in 0..5 {
        let k = p256::NonZeroScalar::random(&mut rng(300 + seed));
        let peer_public = (p256::ProjectivePoint::GENERATOR * *k).to_affine();
        let y = GroupPoint::decode(peer_public.to_encoded_point(true).as_bytes(), CurveId::P256)
            .unwrap();
        let peer_shared = (p256::ProjectivePoint::from(committee) * *k).to_affine();
        let x: [u8; 32] = (*peer_shared.to_encoded_point(false).x().unwrap()).into();
        for o in exchange(&records, &default_subset(&params), &y, seed) {
            assert_eq!(o.psk, psk_from_dh_bytes(&x));
        }
    }
}

fn flip_decommit_from(sender: u32) -> impl FnMut(&mut tdh_core::protocols::Outgoing) -> Delivery {
    move |m| {
        if m.envelope.sender == sender && m.envelope.kind == MessageKind::Decommit {
            let last = m.envelope.body.len() - 1;
            m.envelope.body[last] ^= 1;
        }
        Delivery::Deliver
    }
}

#[test]
fn equivocating_keygen_decommitment_aborts_everyone_else() {
    for params in [
        SchemeParams::naive(CurveId::P256, 3),
        SchemeParams::threshold(CurveId::Curve25519, 1, 3),
    ] {
        let run = run_keygen_with(params, 1, flip_decommit_from(2));
        for id in [1, 3] {
            assert_eq!(
                run.outputs[&id].as_ref().err(),
                Some(&ProtocolError::CommitmentMismatch { sender: 2 })
            );
        }
    }
}

#[test]
fn equivocating_exchange_decommitment_aborts() {
    let params = SchemeParams::threshold(CurveId::P256, 1, 3);
    let records = keygen(params, 2);
    let y = random_point(params.curve, 3);
    let run = run_exchange_with(&records, &[PartyId(1), PartyId(3)], &y, 4, flip_decommit_from(3));
    assert_eq!(
        run.outputs[&1].as_ref().err(),
        Some(&ProtocolError::CommitmentMismatch { sender: 3 })
    );
}

#[test]
fn exchange_parties_disagreeing_on_remote_key_abort() {
    let params = SchemeParams::naive(CurveId::Curve25519, 2);
    let records = keygen(params, 2);
    let y1 = random_point(params.curve, 3);
    let y2 = random_point(params.curve, 4);
    let mut r = rng(5);
    let started = vec![
        tdh_core::protocols::start_driver(sid(2), Exchange::naive(&records[0], &y1).unwrap(), &mut r)
            .unwrap(),
        tdh_core::protocols::start_driver(sid(2), Exchange::naive(&records[1], &y2).unwrap(), &mut r)
            .unwrap(),
    ];
    let run = tdh_core::protocols::local::run_local(started, honest);
    assert_eq!(
        run.outputs[&1].as_ref().err(),
        Some(&ProtocolError::PublicKeyMismatch { sender: 2 })
    );
}

#[test]
fn inconsistent_vss_share_blocks_every_output() {
    for curve in CurveId::ALL {
        let params = SchemeParams::threshold(curve, 1, 3);
        let run = run_keygen_with(params, 6, |m| {
            if m.envelope.sender == 2
                && m.envelope.kind == MessageKind::VssShare
                && m.to == Destination::Party(3)
            {
                m.envelope.body[35] ^= 1;
            }
            Delivery::Deliver
        });
        assert_eq!(
            run.outputs[&3].as_ref().err(),
            Some(&ProtocolError::FeldmanReject { sender: 2 })
        );
        for id in [1, 2] {
            assert!(matches!(
                run.outputs[&id],
                Err(ProtocolError::RoundTimeout { round: 3 })
            ));
        }
    }
}

#[test]
fn swapped_vss_shares_are_rejected() {
    let params = SchemeParams::threshold(CurveId::P256, 1, 3);
    let mut held: Option<Envelope> = None;
    let run = run_keygen_with(params, 6, |m| {
        if m.envelope.sender == 1 && m.envelope.kind == MessageKind::VssShare {
            if let Destination::Party(to) = m.to {
                if to == 2 {
                    held = Some(m.envelope.clone());
                    return Delivery::Drop;
                }
                if to == 3 {
                    if let Some(h) = held.take() {
                        let mine = std::mem::replace(&mut m.envelope.body, h.body);
                        held = Some(Envelope {
                            body: mine,
                            ..h
                        });
                    }
                }
            }
        }
        Delivery::Deliver
    });
    assert_eq!(
        run.outputs[&3].as_ref().err(),
        Some(&ProtocolError::FeldmanReject { sender: 1 })
    );
    assert!(run.outputs.values().all(|r| r.is_err()));
}

fn naive_reshare_config(old: &[KeyShareRecord], new_n: u16) -> ReshareConfig {
    let p = old[0].params;
    ReshareConfig {
        old_params: p,
        old_parties: p.party_ids(),
        new_params: SchemeParams::naive(p.curve, new_n),
        expected_public_key: Some(old[0].public_key),
    }
}

#[test]
fn naive_reshare_keeps_key_and_exchange_result() {
    for curve in CurveId::ALL {
        let old = keygen(SchemeParams::naive(curve, 3), 50);
        let y = random_point(curve, 51);
        let before = exchange(&old, &default_subset(&old[0].params), &y, 52);
        let new = reshare(&naive_reshare_config(&old, 5), &old, 53);
        assert_eq!(new.len(), 5);
        assert!(new.iter().all(|r| r.public_key == old[0].public_key));
        assert_eq!(oracle_secret(&new), oracle_secret(&old));
        let after = exchange(&new, &default_subset(&new[0].params), &y, 54);
        assert_eq!(after[0].shared_point, before[0].shared_point);
        assert_eq!(after[0].psk, before[0].psk);
    }
}

#[test]
fn naive_reshare_to_same_size_refreshes_shares() {
    let old = keygen(SchemeParams::naive(CurveId::Curve25519, 3), 60);
    let new = reshare(&naive_reshare_config(&old, 3), &old, 61);
    assert_eq!(oracle_secret(&new), oracle_secret(&old));
    for (a, b) in old.iter().zip(&new) {
        assert_ne!(a.private_share, b.private_share);
        assert_eq!(a.public_key, b.public_key);
    }
}

#[test]
fn naive_reshare_to_a_single_member_hands_over_the_whole_key() {
    let old = keygen(SchemeParams::naive(CurveId::P256, 3), 62);
    let new = reshare(&naive_reshare_config(&old, 1), &old, 63);
    assert_eq!(new.len(), 1);
    assert_eq!(GroupPoint::mul_generator(&new[0].private_share), old[0].public_key);
}

fn threshold_reshare_config(
    old: &[KeyShareRecord],
    contributors: &[u32],
    t: u16,
    n: u16,
) -> ReshareConfig {
    let p = old[0].params;
    ReshareConfig {
        old_params: p,
        old_parties: contributors.iter().map(|&i| PartyId(i)).collect(),
        new_params: SchemeParams::threshold(p.curve, t, n),
        expected_public_key: None,
    }
}

#[test]
fn threshold_reshare_to_larger_committee() {
    for curve in CurveId::ALL {
        let old = keygen(SchemeParams::threshold(curve, 1, 3), 70);
        let y = random_point(curve, 71);
        let before = exchange(&old, &[PartyId(2), PartyId(3)], &y, 72);
        let new = reshare(&threshold_reshare_config(&old, &[1, 3], 2, 5), &old, 73);
        assert_eq!(new.len(), 5);
        assert!(new.iter().all(|r| r.public_key == old[0].public_key));
        for subset in subsets(&new[0].params.party_ids(), 3) {
            let after = exchange(&new, &subset, &y, 74);
            assert_eq!(after[0].shared_point, before[0].shared_point);
            assert_eq!(after[0].psk, before[0].psk);
        }
        // t' + 1 = 3 shares are needed now; two give an unrelated value.
        let view = shamir_view(&new);
        let mut two = view[..2].to_vec();
        for s in &mut two {
            s.t = 1;
        }
        assert_ne!(reconstruct(&two).unwrap(), oracle_secret(&old));
    }
}

#[test]
fn threshold_reshare_same_committee_refreshes_shares() {
    let old = keygen(SchemeParams::threshold(CurveId::Curve25519, 1, 3), 80);
    let new = reshare(&threshold_reshare_config(&old, &[1, 2], 1, 3), &old, 81);
    assert_eq!(oracle_secret(&new), oracle_secret(&old));
    for (a, b) in old.iter().zip(&new) {
        assert_ne!(a.private_share, b.private_share);
    }
}

#[test]
fn rejected_reshare_share_leaves_no_new_record() {
    for scheme in [Scheme::Naive, Scheme::Threshold] {
        let (old, config) = match scheme {
            Scheme::Naive => {
                let old = keygen(SchemeParams::naive(CurveId::P256, 2), 90);
                let c = naive_reshare_config(&old, 3);
                (old, c)
            }
            Scheme::Threshold => {
                let old = keygen(SchemeParams::threshold(CurveId::P256, 1, 3), 90);
                let c = threshold_reshare_config(&old, &[1, 2], 1, 3);
                (old, c)
            }
        };
        let target = new_member(PartyId(2));
        let run = run_reshare_with(&config, &old, 91, |m| {
            if m.envelope.sender == 1
                && m.envelope.kind == MessageKind::VssShare
                && m.to == Destination::Party(target)
            {
                let i = match scheme {
                    Scheme::Naive => 0,
                    Scheme::Threshold => 4,
                };
                m.envelope.body[i] ^= 1;
            }
            Delivery::Deliver
        });
        assert_eq!(
            run.outputs[&target].as_ref().err(),
            Some(&ProtocolError::FeldmanReject { sender: 1 })
        );
        for out in run.outputs.values() {
            assert!(!matches!(out, Ok(ProtocolOutput::Reshare(r)) if r.record.is_some()));
        }
    }
}

#[test]
fn reshare_with_wrong_expected_key_is_refused_by_new_members() {
    let old = keygen(SchemeParams::naive(CurveId::P256, 2), 92);
    let mut config = naive_reshare_config(&old, 2);
    let new_only = ReshareConfig {
        expected_public_key: Some(random_point(CurveId::P256, 93)),
        ..config.clone()
    };
    config.expected_public_key = None;
    let mut r = rng(94);
    let mut started = Vec::new();
    for k in &old {
        let l = tdh_core::protocols::Reshare::new(
            config.clone(),
            tdh_core::protocols::ReshareRole::Old(k.clone()),
        )
        .unwrap();
        started.push(tdh_core::protocols::start_driver(sid(3), l, &mut r).unwrap());
    }
    for j in new_only.new_params.party_ids() {
        let l = tdh_core::protocols::Reshare::new(
            new_only.clone(),
            tdh_core::protocols::ReshareRole::New(j),
        )
        .unwrap();
        started.push(tdh_core::protocols::start_driver(sid(3), l, &mut r).unwrap());
    }
    let run = tdh_core::protocols::local::run_local(started, honest);
    assert!(run.outputs.values().all(|o| o.is_err()));
}

#[test]
fn decommitments_follow_all_commitments_in_transcripts() {
    for params in all_params() {
        let run = run_keygen_with(params, 3, honest);
        let last_commit = run
            .transcript
            .iter()
            .rposition(|m| m.envelope.kind == MessageKind::Commit)
            .unwrap();
        let first_decommit = run
            .transcript
            .iter()
            .position(|m| m.envelope.kind == MessageKind::Decommit)
            .unwrap();
        assert!(last_commit < first_decommit, "{params:?}");
    }
}

#[test]
fn decommitment_withheld_until_last_commitment_arrives() {
    let params = SchemeParams::naive(CurveId::P256, 4);
    let mut r = rng(4);
    let mut sessions = Vec::new();
    let mut commits = Vec::new();
    for p in params.party_ids() {
        let (s, step) = Session::start(sid(1), NaiveKeygen::new(params, p).unwrap(), &mut r).unwrap();
        commits.extend(step.outgoing.into_iter().map(|o| o.envelope));
        sessions.push(s);
    }
    let me = &mut sessions[0];
    let others: Vec<Envelope> = commits.into_iter().filter(|e| e.sender != 1).collect();
    for (i, env) in others.iter().enumerate() {
        let step = me.step(vec![env.clone()]).unwrap();
        let released = step
            .outgoing
            .iter()
            .any(|o| o.envelope.kind == MessageKind::Decommit);
        assert_eq!(released, i == others.len() - 1);
    }
}

#[test]
fn aborted_session_stays_aborted() {
    let params = SchemeParams::naive(CurveId::Curve25519, 2);
    let mut r = rng(1);
    let (mut a, _) = Session::start(sid(1), NaiveKeygen::new(params, PartyId(1)).unwrap(), &mut r)
        .unwrap();
    let (_, step_b) = Session::start(sid(1), NaiveKeygen::new(params, PartyId(2)).unwrap(), &mut r)
        .unwrap();
    let good = step_b.outgoing[0].envelope.clone();
    let mut stranger = good.clone();
    stranger.sender = 7;
    assert_eq!(
        a.step(vec![stranger]).err(),
        Some(ProtocolError::UnknownSender(7))
    );
    for _ in 0..3 {
        assert_eq!(
            a.step(vec![good.clone()]).err(),
            Some(ProtocolError::UnknownSender(7))
        );
    }
    assert_eq!(a.timeout(), ProtocolError::UnknownSender(7));
}

#[test]
fn duplicates_and_foreign_sessions_abort() {
    let params = SchemeParams::naive(CurveId::P256, 2);
    let mut r = rng(1);
    let (_, step_b) = Session::start(sid(1), NaiveKeygen::new(params, PartyId(2)).unwrap(), &mut r)
        .unwrap();
    let good = step_b.outgoing[0].envelope.clone();

    let (mut a, _) = Session::start(sid(1), NaiveKeygen::new(params, PartyId(1)).unwrap(), &mut r)
        .unwrap();
    let mut early = good.clone();
    early.round = 2;
    early.kind = MessageKind::Decommit;
    a.step(vec![early.clone()]).unwrap();
    assert_eq!(
        a.step(vec![early]).err(),
        Some(ProtocolError::DuplicateMessage { sender: 2, round: 2 })
    );

    let (mut a, _) = Session::start(sid(1), NaiveKeygen::new(params, PartyId(1)).unwrap(), &mut r)
        .unwrap();
    let mut foreign = good.clone();
    foreign.session = sid(9);
    assert_eq!(a.step(vec![foreign]).err(), Some(ProtocolError::WrongSession));

    let (mut a, _) = Session::start(sid(1), NaiveKeygen::new(params, PartyId(1)).unwrap(), &mut r)
        .unwrap();
    let mut wrong_kind = good;
    wrong_kind.kind = MessageKind::VssShare;
    assert!(matches!(
        a.step(vec![wrong_kind]).err(),
        Some(ProtocolError::UnexpectedMessage { sender: 2, round: 1 })
    ));
}

#[test]
fn timeout_reports_the_stalled_round() {
    let params = SchemeParams::threshold(CurveId::P256, 1, 2);
    let (mut a, _) = Session::start(
        sid(1),
        tdh_core::protocols::ThresholdKeygen::new(params, PartyId(1)).unwrap(),
        &mut rng(1),
    )
    .unwrap();
    assert_eq!(a.timeout(), ProtocolError::RoundTimeout { round: 1 });
    assert!(a.step(Vec::new()).is_err());
}

#[test]
fn psk_is_a_function_of_the_shared_point() {
    let params = SchemeParams::naive(CurveId::Curve25519, 3);
    let records = keygen(params, 5);
    let y = random_point(params.curve, 6);
    let a = exchange(&records, &default_subset(&params), &y, 7);
    let b = exchange(&records, &default_subset(&params), &y, 8);
    assert!(a.iter().chain(&b).all(|o| o.psk == a[0].psk));
    let z = random_point(params.curve, 9);
    let c = exchange(&records, &default_subset(&params), &z, 7);
    assert_ne!(c[0].psk, a[0].psk);
}

#[test]
fn key_share_records_roundtrip() {
    for params in all_params() {
        for r in keygen(params, 15) {
            let bytes = r.to_bytes();
            assert_eq!(KeyShareRecord::from_bytes(&bytes).unwrap(), r);
            let mut bad = bytes.clone();
            bad[20] ^= 1;
            assert!(KeyShareRecord::from_bytes(&bad).is_err());
            assert!(KeyShareRecord::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        }
    }
}

#[test]
fn exchange_equals_single_key_dh_for_one_member() {
    let params = SchemeParams::threshold(CurveId::P256, 0, 1);
    let records = keygen(params, 4);
    let y = random_point(params.curve, 5);
    let out = exchange(&records, &[PartyId(1)], &y, 6);
    let s = GroupScalar::from_u64(CurveId::P256, 1).mul(&records[0].private_share).unwrap();
    assert_eq!(out[0].shared_point, y.mul(&s).unwrap());
}
