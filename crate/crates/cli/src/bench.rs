//! Measurement matrix: key generation and exchange timings per scheme, curve
//! and network profile, taken from customer request to customer result.

use std::fmt;
use std::io;
use std::str::FromStr;
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use rand_chacha::ChaCha20Rng;
use rand_core::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use tdh_core::group::{CurveId, GroupPoint, GroupScalar};
use tdh_core::protocols::{derive_psk, SchemeParams};
use tdh_platform::messages::OperationResult;
use tdh_platform::netem::Profile;
use tdh_platform::stack::{InProcessStack, StackConfig};

/// Shown in place of a profile or committee for classic rows.
pub const NO_VALUE: &str = "—";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("stack: {0}")]
    Stack(String),
    #[error("{scheme} {protocol} on {curve}/{profile} failed: {reason}")]
    Trial {
        scheme: BenchScheme,
        protocol: BenchProtocol,
        curve: String,
        profile: String,
        reason: String,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchScheme {
    Classic,
    Naive,
    Threshold,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchProtocol {
    Keygen,
    Exchange,
}

impl fmt::Display for BenchScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BenchScheme::Classic => "classic",
            BenchScheme::Naive => "naive",
            BenchScheme::Threshold => "threshold",
        })
    }
}

impl fmt::Display for BenchProtocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BenchProtocol::Keygen => "keygen",
            BenchProtocol::Exchange => "exchange",
        })
    }
}

/// One CSV row. Classic rows carry [`NO_VALUE`] for profile, `t` and `n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub scheme: BenchScheme,
    pub protocol: BenchProtocol,
    pub curve: String,
    pub profile: String,
    pub t: String,
    pub n: String,
    pub trials: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
}

impl BenchRow {
    pub fn curve_id(&self) -> Option<CurveId> {
        self.curve.parse().ok()
    }

    pub fn profile(&self) -> Option<Profile> {
        self.profile.parse().ok()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stats {
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
}

/// Mean, median and nearest-rank 95th percentile.
pub fn stats(samples: &[Duration]) -> Stats {
    assert!(!samples.is_empty(), "no samples");
    let mut ms: Vec<f64> = samples.iter().map(|d| d.as_secs_f64() * 1e3).collect();
    ms.sort_by(f64::total_cmp);
    let n = ms.len();
    let median_ms = if n % 2 == 1 {
        ms[n / 2]
    } else {
        (ms[n / 2 - 1] + ms[n / 2]) / 2.0
    };
    let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
    Stats {
        mean_ms: ms.iter().sum::<f64>() / n as f64,
        median_ms,
        p95_ms: ms[rank - 1],
    }
}

/// Hub relays on the critical path of an exchange: two protocol rounds, each
/// a payload and the echo confirmations that release it. A relay is one trip
/// up to the hub and one down, so it costs two link latencies.
pub const EXCHANGE_RELAYS: u32 = 4;

/// Lower bound on an exchange under `profile`.
pub fn exchange_floor(profile: Profile) -> Duration {
    profile
        .params()
        .map_or(Duration::ZERO, |p| p.latency * 2 * EXCHANGE_RELAYS)
}

#[derive(Clone, Debug)]
pub struct MatrixConfig {
    pub trials: usize,
    /// Shaped cells measured at once. Unshaped cells always run alone.
    pub jobs: usize,
    pub curves: Vec<CurveId>,
    pub profiles: Vec<Profile>,
    pub schemes: Vec<BenchScheme>,
    pub seed: Option<[u8; 32]>,
    pub t: u16,
    pub n: u16,
}

impl Default for MatrixConfig {
    fn default() -> Self {
        MatrixConfig {
            trials: 20,
            jobs: 4,
            curves: CurveId::ALL.to_vec(),
            profiles: Profile::ALL.to_vec(),
            schemes: vec![BenchScheme::Classic, BenchScheme::Naive, BenchScheme::Threshold],
            seed: None,
            t: 2,
            n: 3,
        }
    }
}

/// Everything measured on one stack.
#[derive(Clone, Copy, Debug)]
struct Cell {
    curve: CurveId,
    profile: Profile,
}

pub fn run_matrix(config: &MatrixConfig) -> Result<Vec<BenchRow>, BenchError> {
    let mut rows = Vec::new();
    if config.schemes.contains(&BenchScheme::Classic) {
        for &curve in &config.curves {
            rows.extend(classic_rows(curve, config.trials, config.seed));
        }
    }
    let cells: Vec<Cell> = config
        .curves
        .iter()
        .flat_map(|&curve| config.profiles.iter().map(move |&profile| Cell { curve, profile }))
        .collect();
    let (local, shaped): (Vec<Cell>, Vec<Cell>) =
        cells.into_iter().partition(|c| c.profile.params().is_none());
    for cell in local {
        rows.extend(measure_cell(config, cell)?);
    }
    let queue = Mutex::new(shaped.into_iter());
    let results = Mutex::new(Vec::new());
    thread::scope(|s| {
        for _ in 0..config.jobs.max(1) {
            s.spawn(|| loop {
                let Some(cell) = queue.lock().unwrap().next() else { break };
                let r = measure_cell(config, cell);
                results.lock().unwrap().push(r);
            });
        }
    });
    for r in results.into_inner().unwrap() {
        rows.extend(r?);
    }
    rows.sort_by(|a, b| {
        (a.scheme, a.protocol, &a.curve, profile_rank(&a.profile))
            .cmp(&(b.scheme, b.protocol, &b.curve, profile_rank(&b.profile)))
    });
    Ok(rows)
}

fn profile_rank(name: &str) -> usize {
    name.parse::<Profile>()
        .ok()
        .and_then(|p| Profile::ALL.iter().position(|&q| q == p))
        .unwrap_or(0)
}

/// Single-key baseline with the same group code and no network.
pub fn classic_rows(curve: CurveId, trials: usize, seed: Option<[u8; 32]>) -> Vec<BenchRow> {
    let mut rng = ChaCha20Rng::from_seed(seed.unwrap_or([7; 32]));
    let mut keygen = Vec::with_capacity(trials);
    let mut exchange = Vec::with_capacity(trials);
    for _ in 0..trials.max(1) {
        let start = Instant::now();
        let x = GroupScalar::random(curve, &mut rng).expect("random scalar");
        let public = GroupPoint::mul_generator(&x);
        keygen.push(start.elapsed());
        std::hint::black_box(&public);

        let peer = GroupPoint::mul_generator(&GroupScalar::random(curve, &mut rng).expect("random scalar"));
        let start = Instant::now();
        let shared = peer.mul(&x).expect("scalar multiplication");
        let psk = derive_psk(&shared);
        exchange.push(start.elapsed());
        std::hint::black_box(&psk);
    }
    [(BenchProtocol::Keygen, keygen), (BenchProtocol::Exchange, exchange)]
        .into_iter()
        .map(|(protocol, samples)| row(BenchScheme::Classic, protocol, curve, None, None, &samples))
        .collect()
}

fn row(
    scheme: BenchScheme,
    protocol: BenchProtocol,
    curve: CurveId,
    profile: Option<Profile>,
    tn: Option<(u16, u16)>,
    samples: &[Duration],
) -> BenchRow {
    let s = stats(samples);
    BenchRow {
        scheme,
        protocol,
        curve: curve.name().to_owned(),
        profile: profile.map_or(NO_VALUE.to_owned(), |p| p.name().to_owned()),
        t: tn.map_or(NO_VALUE.to_owned(), |(t, _)| t.to_string()),
        n: tn.map_or(NO_VALUE.to_owned(), |(_, n)| n.to_string()),
        trials: samples.len(),
        mean_ms: s.mean_ms,
        median_ms: s.median_ms,
        p95_ms: s.p95_ms,
    }
}

fn measure_cell(config: &MatrixConfig, cell: Cell) -> Result<Vec<BenchRow>, BenchError> {
    let stack = InProcessStack::start(StackConfig {
        agents: config.n as usize,
        profile: cell.profile.params(),
        round_timeout: Duration::from_secs(30),
        seed: config.seed,
        ..StackConfig::default()
    })
    .map_err(|e| BenchError::Stack(e.to_string()))?;
    let mut rows = Vec::new();
    let mut rng = ChaCha20Rng::from_seed(config.seed.unwrap_or([9; 32]));
    for &scheme in &config.schemes {
        let params = match scheme {
            BenchScheme::Classic => continue,
            BenchScheme::Naive => SchemeParams::naive(cell.curve, config.n),
            BenchScheme::Threshold => SchemeParams::threshold(cell.curve, config.t, config.n),
        };
        let fail = |protocol, reason: String| BenchError::Trial {
            scheme,
            protocol,
            curve: cell.curve.name().into(),
            profile: cell.profile.name().into(),
            reason,
        };
        let mut keygen = Vec::with_capacity(config.trials);
        for i in 0..config.trials {
            let start = Instant::now();
            let r = stack.keygen(&format!("{scheme}-{i}"), params);
            keygen.push(start.elapsed());
            if let OperationResult::Failure(f) = r {
                return Err(fail(BenchProtocol::Keygen, f.to_string()));
            }
        }
        let mut exchange = Vec::with_capacity(config.trials);
        for i in 0..config.trials {
            let y = GroupScalar::random(cell.curve, &mut rng).expect("random scalar");
            let remote = GroupPoint::mul_generator(&y).encode();
            let start = Instant::now();
            let r = stack.exchange(&format!("{scheme}-{i}"), remote.as_bytes());
            exchange.push(start.elapsed());
            if let OperationResult::Failure(f) = r {
                return Err(fail(BenchProtocol::Exchange, f.to_string()));
            }
        }
        let tn = Some((params.t, params.n));
        rows.push(row(scheme, BenchProtocol::Keygen, cell.curve, Some(cell.profile), tn, &keygen));
        rows.push(row(scheme, BenchProtocol::Exchange, cell.curve, Some(cell.profile), tn, &exchange));
    }
    Ok(rows)
}

pub fn write_csv<W: io::Write>(rows: &[BenchRow], out: W) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: io::Read>(input: R) -> Result<Vec<BenchRow>, BenchError> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(BenchError::from))
        .collect()
}

impl FromStr for BenchScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "classic" => Ok(BenchScheme::Classic),
            "naive" => Ok(BenchScheme::Naive),
            "threshold" => Ok(BenchScheme::Threshold),
            other => Err(format!("unknown scheme `{other}`")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_of_known_samples() {
        let s = stats(&(1..=20).map(Duration::from_millis).collect::<Vec<_>>());
        assert!((s.mean_ms - 10.5).abs() < 1e-9);
        assert!((s.median_ms - 10.5).abs() < 1e-9);
        assert!((s.p95_ms - 19.0).abs() < 1e-9);
        let one = stats(&[Duration::from_millis(3)]);
        assert_eq!((one.median_ms, one.p95_ms), (3.0, 3.0));
    }

    #[test]
    fn exchange_floor_counts_relays() {
        assert_eq!(exchange_floor(Profile::Local), Duration::ZERO);
        assert_eq!(exchange_floor(Profile::Wan), Duration::from_millis(240));
        assert_eq!(exchange_floor(Profile::Lan), Duration::from_millis(16));
    }
}
