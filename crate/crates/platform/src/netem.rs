//! In-process network emulation: one-way latency, token-bucket bandwidth and
//! MTU fragmentation.
//!
//! A [`ShapedLink`] is a FIFO pipe with its own worker thread. Every item is
//! stamped when it is handed to the link, split into MTU-sized segments that
//! each draw their size from the bucket, and released `latency` after its
//! last segment departs.

use std::fmt;
use std::str::FromStr;
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Sender};

/// Link parameters. Bandwidth is in megabits per second, latency is one-way.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NetworkProfile {
    pub bandwidth_mbps: f64,
    pub latency: Duration,
    pub mtu: usize,
}

impl NetworkProfile {
    pub fn is_valid(&self) -> bool {
        self.bandwidth_mbps > 0.0 && self.mtu > 0
    }

    pub fn bytes_per_sec(&self) -> f64 {
        self.bandwidth_mbps * 1_000_000.0 / 8.0
    }
}

/// The four measurement environments. `Local` applies no shaping at all.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Profile {
    Local,
    Lan,
    Wan,
    Longhaul,
}

impl Profile {
    pub const ALL: [Profile; 4] = [Profile::Local, Profile::Lan, Profile::Wan, Profile::Longhaul];

    pub fn params(self) -> Option<NetworkProfile> {
        let (bandwidth_mbps, latency_ms, mtu) = match self {
            Profile::Local => return None,
            Profile::Lan => (100.0, 2, 1500),
            Profile::Wan => (20.0, 30, 1500),
            Profile::Longhaul => (1000.0, 200, 9000),
        };
        Some(NetworkProfile {
            bandwidth_mbps,
            latency: Duration::from_millis(latency_ms),
            mtu,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Profile::Local => "Local",
            Profile::Lan => "LAN",
            Profile::Wan => "WAN",
            Profile::Longhaul => "Longhaul",
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "local" => Ok(Profile::Local),
            "lan" => Ok(Profile::Lan),
            "wan" => Ok(Profile::Wan),
            "longhaul" => Ok(Profile::Longhaul),
            other => Err(format!("unknown profile `{other}`")),
        }
    }
}

/// Number of MTU-sized segments a frame of `len` bytes occupies.
pub fn fragments(len: usize, mtu: usize) -> usize {
    len.div_ceil(mtu).max(1)
}

/// Token bucket holding at most one MTU of credit.
#[derive(Debug)]
pub struct TokenBucket {
    rate: f64,
    capacity: f64,
    tokens: f64,
    last: Instant,
}

impl TokenBucket {
    pub fn new(bytes_per_sec: f64, capacity: usize, now: Instant) -> Self {
        TokenBucket {
            rate: bytes_per_sec,
            capacity: capacity as f64,
            tokens: capacity as f64,
            last: now,
        }
    }

    /// Reserves `bytes` no earlier than `now`; returns the departure time.
    pub fn reserve(&mut self, now: Instant, bytes: usize) -> Instant {
        let now = now.max(self.last);
        let elapsed = now.duration_since(self.last).as_secs_f64();
        self.tokens = (self.tokens + elapsed * self.rate).min(self.capacity);
        self.last = now;
        let need = bytes as f64;
        if self.tokens >= need {
            self.tokens -= need;
            return now;
        }
        let wait = Duration::from_secs_f64((need - self.tokens) / self.rate);
        self.tokens = 0.0;
        self.last = now + wait;
        self.last
    }
}

/// A shaped one-way pipe. Dropping it lets queued items drain, then stops
/// the worker.
pub struct ShapedLink<T: Send + 'static> {
    tx: Sender<(Instant, usize, T)>,
}

impl<T: Send + 'static> ShapedLink<T> {
    pub fn new(profile: NetworkProfile, mut deliver: impl FnMut(T) + Send + 'static) -> Self {
        assert!(profile.is_valid(), "invalid network profile");
        let (tx, rx) = unbounded::<(Instant, usize, T)>();
        thread::Builder::new()
            .name("shaped-link".into())
            .spawn(move || {
                let mut bucket =
                    TokenBucket::new(profile.bytes_per_sec(), profile.mtu, Instant::now());
                for (stamp, size, item) in rx {
                    let mut left = size.max(1);
                    let mut depart = stamp;
                    while left > 0 {
                        let seg = left.min(profile.mtu);
                        depart = bucket.reserve(stamp, seg);
                        left -= seg;
                    }
                    sleep_until(depart + profile.latency);
                    deliver(item);
                }
            })
            .expect("spawn shaped link");
        ShapedLink { tx }
    }

    /// Enqueues `item` of `size` wire bytes.
    pub fn send(&self, item: T, size: usize) {
        let _ = self.tx.send((Instant::now(), size, item));
    }
}

fn sleep_until(at: Instant) {
    let now = Instant::now();
    if at > now {
        thread::sleep(at - now);
    }
}
