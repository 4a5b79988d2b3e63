//! Reference timings and the comparison of a measured CSV against them.
//!
//! The reference figures come from a Go implementation on unknown hardware,
//! so ratios are informative only. The one hard check is latency dominance:
//! an exchange under a shaped profile can never beat its relay floor.

use std::fmt::Write as _;

use tdh_platform::netem::Profile;

use crate::bench::{exchange_floor, BenchProtocol, BenchRow, BenchScheme, NO_VALUE};

/// A published timing in milliseconds. `note` explains cells whose printed
/// form needed interpretation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Reference {
    pub scheme: BenchScheme,
    pub protocol: BenchProtocol,
    pub curve: &'static str,
    /// `None` for classic rows.
    pub profile: Option<Profile>,
    pub ms: f64,
    pub note: Option<&'static str>,
}

const fn r(
    scheme: BenchScheme,
    protocol: BenchProtocol,
    curve: &'static str,
    profile: Option<Profile>,
    ms: f64,
) -> Reference {
    Reference {
        scheme,
        protocol,
        curve,
        profile,
        ms,
        note: None,
    }
}

use BenchProtocol::{Exchange as Ex, Keygen as Kg};
use BenchScheme::{Classic as C, Naive as N, Threshold as T};
use Profile::{Lan, Local, Longhaul, Wan};

const P: &str = "p256";
const X: &str = "curve25519";

/// Threshold rows use (t, n) = (2, 3), naive rows n = 3.
pub const REFERENCE: [Reference; 36] = [
    r(C, Kg, P, None, 0.012861),
    r(C, Kg, X, None, 0.0001),
    r(C, Ex, P, None, 0.0525),
    r(C, Ex, X, None, 0.068942),
    r(N, Kg, P, Some(Local), 2.258),
    r(N, Kg, P, Some(Lan), 21.324),
    r(N, Kg, P, Some(Wan), 250.288),
    r(N, Kg, P, Some(Longhaul), 1610.0),
    r(N, Kg, X, Some(Local), 21.997),
    Reference {
        note: Some("printed as \"34. 557 ms\", read as 34.557"),
        ..r(N, Kg, X, Some(Lan), 34.557)
    },
    r(N, Kg, X, Some(Wan), 154.237),
    r(N, Kg, X, Some(Longhaul), 1235.0),
    r(N, Ex, P, Some(Local), 2.31),
    r(N, Ex, P, Some(Lan), 18.151),
    r(N, Ex, P, Some(Wan), 245.41),
    r(N, Ex, P, Some(Longhaul), 1604.0),
    r(N, Ex, X, Some(Local), 32.602),
    r(N, Ex, X, Some(Lan), 44.634),
    r(N, Ex, X, Some(Wan), 165.386),
    Reference {
        note: Some("printed as \"841. 412 ms\", read as 841.412"),
        ..r(N, Ex, X, Some(Longhaul), 841.412)
    },
    r(T, Kg, P, Some(Local), 3.183),
    r(T, Kg, P, Some(Lan), 28.968),
    r(T, Kg, P, Some(Wan), 365.94),
    r(T, Kg, P, Some(Longhaul), 2407.0),
    r(T, Kg, X, Some(Local), 58.15),
    r(T, Kg, X, Some(Lan), 78.546),
    r(T, Kg, X, Some(Wan), 315.555),
    r(T, Kg, X, Some(Longhaul), 2076.0),
    r(T, Ex, P, Some(Local), 3.728),
    r(T, Ex, P, Some(Lan), 19.56),
    r(T, Ex, P, Some(Wan), 245.143),
    r(T, Ex, P, Some(Longhaul), 1604.0),
    r(T, Ex, X, Some(Local), 20.734),
    r(T, Ex, X, Some(Lan), 33.235),
    r(T, Ex, X, Some(Wan), 153.001),
    r(T, Ex, X, Some(Longhaul), 832.781),
];

pub fn reference_for(row: &BenchRow) -> Option<&'static Reference> {
    let profile = if row.profile == NO_VALUE { None } else { Some(row.profile()?) };
    let curve = row.curve_id()?.name();
    REFERENCE.iter().find(|r| {
        r.scheme == row.scheme && r.protocol == row.protocol && r.curve == curve && r.profile == profile
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub row: BenchRow,
    pub reference_ms: Option<f64>,
    /// measured / reference.
    pub ratio: Option<f64>,
    pub note: Option<&'static str>,
    /// Relay floor for exchanges under shaped profiles.
    pub floor_ms: Option<f64>,
}

impl Comparison {
    pub fn below_floor(&self) -> bool {
        self.floor_ms.is_some_and(|f| self.row.mean_ms < f)
    }
}

pub fn compare(rows: &[BenchRow]) -> Vec<Comparison> {
    rows.iter()
        .map(|row| {
            let reference = reference_for(row);
            let floor_ms = match (row.protocol, row.scheme, row.profile()) {
                (BenchProtocol::Exchange, BenchScheme::Naive | BenchScheme::Threshold, Some(p))
                    if p.params().is_some() =>
                {
                    Some(exchange_floor(p).as_secs_f64() * 1e3)
                }
                _ => None,
            };
            Comparison {
                row: row.clone(),
                reference_ms: reference.map(|r| r.ms),
                ratio: reference.map(|r| row.mean_ms / r.ms),
                note: reference.and_then(|r| r.note),
                floor_ms,
            }
        })
        .collect()
}

/// Threshold over classic mean time for unshaped runs, per curve and
/// protocol.
pub fn local_overhead(rows: &[BenchRow]) -> Vec<(String, BenchProtocol, f64)> {
    let mut out = Vec::new();
    for classic in rows.iter().filter(|r| r.scheme == BenchScheme::Classic) {
        let threshold = rows.iter().find(|r| {
            r.scheme == BenchScheme::Threshold
                && r.protocol == classic.protocol
                && r.curve == classic.curve
                && r.profile() == Some(Profile::Local)
        });
        if let Some(t) = threshold {
            out.push((classic.curve.clone(), classic.protocol, t.mean_ms / classic.mean_ms));
        }
    }
    out
}

fn ms(v: f64) -> String {
    if v >= 1000.0 {
        format!("{:.3} s", v / 1000.0)
    } else if v >= 1.0 {
        format!("{v:.3} ms")
    } else {
        format!("{:.3} us", v * 1000.0)
    }
}

pub fn render(comparisons: &[Comparison], rows: &[BenchRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<10} {:<9} {:<11} {:<9} {:>12} {:>12} {:>9}  notes",
        "scheme", "protocol", "curve", "profile", "measured", "reference", "ratio"
    );
    for c in comparisons {
        let mut notes = Vec::new();
        if let Some(n) = c.note {
            notes.push(format!("reference {n}"));
        }
        if let Some(f) = c.floor_ms {
            let verdict = if c.below_floor() { "VIOLATED" } else { "ok" };
            notes.push(format!("floor {} {verdict}", ms(f)));
        }
        let _ = writeln!(
            out,
            "{:<10} {:<9} {:<11} {:<9} {:>12} {:>12} {:>9}  {}",
            c.row.scheme.to_string(),
            c.row.protocol.to_string(),
            c.row.curve,
            c.row.profile,
            ms(c.row.mean_ms),
            c.reference_ms.map_or(NO_VALUE.to_owned(), ms),
            c.ratio.map_or(NO_VALUE.to_owned(), |r| format!("{r:.2}x")),
            notes.join("; ")
        );
    }
    for (curve, protocol, ratio) in local_overhead(rows) {
        let _ = writeln!(out, "local threshold/classic {protocol} on {curve}: {ratio:.1}x");
    }
    out
}
