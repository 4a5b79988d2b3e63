use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use crossbeam_channel::unbounded;
use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

use tdh_platform::netem::{fragments, NetworkProfile, Profile, ShapedLink};
use tdh_platform::p2p::{P2pError, P2pKeys};
use tdh_platform::wire::RoomId;

fn ms(x: u64) -> Duration {
    Duration::from_millis(x)
}

#[test]
fn profiles_match_configured_table() {
    let expect = [
        (Profile::Lan, 100.0, 2, 1500),
        (Profile::Wan, 20.0, 30, 1500),
        (Profile::Longhaul, 1000.0, 200, 9000),
    ];
    for (p, bw, lat, mtu) in expect {
        assert_eq!(
            p.params(),
            Some(NetworkProfile {
                bandwidth_mbps: bw,
                latency: ms(lat),
                mtu
            })
        );
    }
    assert_eq!(Profile::Local.params(), None);
}

#[test]
fn wan_single_byte_takes_one_latency() {
    let wan = Profile::Wan.params().unwrap();
    let (tx, rx) = unbounded();
    let link = ShapedLink::new(wan, move |sent: Instant| {
        let _ = tx.send(sent.elapsed());
    });
    let mut worst = Duration::ZERO;
    for _ in 0..10 {
        link.send(Instant::now(), 1);
        let d = rx.recv_timeout(Duration::from_secs(2)).unwrap();
        assert!(d >= ms(30), "{d:?}");
        worst = worst.max(d);
    }
    assert!(worst < ms(30) + ms(15), "{worst:?}");
}

#[test]
fn large_frame_fragments_and_paces() {
    let lan = Profile::Lan.params().unwrap();
    assert_eq!(fragments(15000, lan.mtu), 10);
    // 15000 bytes at 12.5 MB/s: one MTU of credit up front, 9 segments paced.
    let (tx, rx) = unbounded();
    let link = ShapedLink::new(lan, move |sent: Instant| {
        let _ = tx.send(sent.elapsed());
    });
    link.send(Instant::now(), 15000);
    let d = rx.recv_timeout(Duration::from_secs(2)).unwrap();
    let floor = ms(2) + Duration::from_secs_f64(13500.0 / lan.bytes_per_sec());
    assert!(d >= floor, "{d:?} < {floor:?}");
}

#[test]
fn wan_throughput_stays_at_rate() {
    let wan = Profile::Wan.params().unwrap();
    let arrivals = Arc::new(Mutex::new(Vec::new()));
    let sink = arrivals.clone();
    let link = ShapedLink::new(wan, move |size: usize| {
        sink.lock().unwrap().push((Instant::now(), size));
    });
    // Six seconds of traffic queued at once.
    let total = (wan.bytes_per_sec() * 6.0) as usize;
    for _ in 0..total / wan.mtu {
        link.send(wan.mtu, wan.mtu);
    }
    std::thread::sleep(Duration::from_millis(5600));
    let arrivals = arrivals.lock().unwrap();
    let start = arrivals[0].0;
    let window = Duration::from_secs(5);
    let bytes: usize = arrivals
        .iter()
        .filter(|(t, _)| t.duration_since(start) < window)
        .map(|(_, s)| s)
        .sum();
    let mbps = bytes as f64 * 8.0 / window.as_secs_f64() / 1e6;
    assert!((mbps - 20.0).abs() <= 1.0, "{mbps} Mb/s");
}

#[test]
fn links_keep_fifo_order() {
    let wan = Profile::Lan.params().unwrap();
    let (tx, rx) = unbounded();
    let link = ShapedLink::new(wan, move |i: u32| {
        let _ = tx.send(i);
    });
    for i in 0..200u32 {
        link.send(i, (i as usize * 37) % 4000);
    }
    let got: Vec<u32> = (0..200).map(|_| rx.recv_timeout(Duration::from_secs(5)).unwrap()).collect();
    assert_eq!(got, (0..200).collect::<Vec<_>>());
}

#[test]
fn tampered_direct_messages_never_open() {
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    let room = RoomId([1; 16]);
    let mut a = P2pKeys::generate("a", room, &mut rng);
    let mut b = P2pKeys::generate("b", room, &mut rng);
    a.add_peer("b", b.announcement()).unwrap();
    b.add_peer("a", a.announcement()).unwrap();
    let mut rejected = 0;
    for trial in 0..100 {
        let mut msg = vec![0u8; 1 + trial % 64];
        rng.fill_bytes(&mut msg);
        let mut sealed = a.seal("b", 2, &msg, &mut rng).unwrap();
        assert_eq!(b.open("a", 2, &sealed).unwrap(), msg);
        let bit = rng.next_u32() as usize % (sealed.len() * 8);
        sealed[bit / 8] ^= 1 << (bit % 8);
        if b.open("a", 2, &sealed) == Err(P2pError::AuthFailure("a".into())) {
            rejected += 1;
        }
    }
    assert_eq!(rejected, 100);
}
