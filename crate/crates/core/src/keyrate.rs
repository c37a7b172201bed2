//! Asymptotic BB84 secure key rate.

use rayon::prelude::*;

use crate::config::SystemConfig;
use crate::error::{ensure_finite, Error, Result};
use crate::linkbudget::QberBreakdown;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtocolConstants {
    /// Error-correction inefficiency relative to the Shannon limit.
    pub f_ec: f64,
    /// Fraction of detected bits kept after basis reconciliation.
    pub sift_factor: f64,
}

impl Default for ProtocolConstants {
    fn default() -> Self {
        ProtocolConstants {
            f_ec: 1.10,
            sift_factor: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateResult {
    pub length_km: f64,
    pub eta_bob: f64,
    pub raw_rate_hz: f64,
    pub qber: f64,
    pub secure_rate_hz: f64,
    /// False when the QBER is at or above the security threshold.
    pub secure: bool,
}

/// Binary Shannon entropy in bits.
pub fn binary_entropy(e: f64) -> Result<f64> {
    ensure_finite("qber", e)?;
    if !(0.0..=1.0).contains(&e) {
        return Err(Error::invalid(
            "qber",
            format!("must lie in [0, 1], got {e}"),
        ));
    }
    Ok(entropy(e))
}

fn entropy(e: f64) -> f64 {
    if e <= 0.0 || e >= 1.0 {
        return 0.0;
    }
    -e * e.log2() - (1.0 - e) * (1.0 - e).log2()
}

/// Fraction of sifted bits that survive error correction and privacy
/// amplification. May be negative above the threshold.
pub fn key_fraction(qber: f64, consts: &ProtocolConstants) -> f64 {
    1.0 - (1.0 + consts.f_ec) * entropy(qber.clamp(0.0, 0.5))
}

/// Secure key rate in the same units as `raw_rate`, clamped at zero.
pub fn secure_rate(raw_rate: f64, qber: f64, consts: &ProtocolConstants) -> f64 {
    if !(qber < 0.5) || raw_rate <= 0.0 {
        return 0.0;
    }
    (consts.sift_factor * raw_rate * key_fraction(qber, consts)).max(0.0)
}

/// QBER at which the secure rate drops to zero.
pub fn qber_threshold(f_ec: f64) -> Result<f64> {
    if !(f_ec >= 0.0) || f_ec.is_infinite() {
        return Err(Error::invalid(
            "f_ec",
            format!("must be finite and >= 0, got {f_ec}"),
        ));
    }
    let g = |e: f64| (1.0 + f_ec) * entropy(e) - 1.0;
    let (mut lo, mut hi) = (0.0_f64, 0.5_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

pub fn rate_result(
    length_km: f64,
    eta_bob: f64,
    raw_rate_hz: f64,
    qber: f64,
    consts: &ProtocolConstants,
) -> RateResult {
    let secure_rate_hz = secure_rate(raw_rate_hz, qber, consts);
    RateResult {
        length_km,
        eta_bob,
        raw_rate_hz,
        qber,
        secure_rate_hz,
        secure: secure_rate_hz > 0.0,
    }
}

/// Index of the highest secure rate; ties go to the earliest entry.
pub fn argmax_secure(rows: &[RateResult]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in rows.iter().enumerate() {
        match best {
            Some(b) if rows[b].secure_rate_hz >= r.secure_rate_hz => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Evaluate the configured link at every receiver efficiency in `etas`
/// (length and compensation as configured) and pick the one with the
/// highest secure rate. Returns the best point and the full table in grid
/// order.
pub fn optimize_bias(
    cfg: &SystemConfig,
    etas: &[f64],
) -> Result<(RateResult, Vec<(RateResult, QberBreakdown)>)> {
    if etas.is_empty() {
        return Err(Error::Empty("no efficiencies to evaluate"));
    }
    let consts = cfg.protocol_constants();
    let links: Vec<_> = etas
        .iter()
        .map(|&e| cfg.link_at(cfg.channel.length_km, cfg.channel.compensated, e))
        .collect();
    for l in &links {
        l.validate()?;
    }
    let table: Vec<(RateResult, QberBreakdown)> = links
        .par_iter()
        .map(|l| {
            let ev = l.evaluate();
            let r = rate_result(
                l.channel.length_km,
                l.receiver.eta_bob,
                ev.raw_rate_hz,
                ev.qber(),
                &consts,
            );
            (r, ev.breakdown)
        })
        .collect();
    let rates: Vec<RateResult> = table.iter().map(|t| t.0).collect();
    let best = argmax_secure(&rates).expect("non-empty grid");
    Ok((rates[best], table))
}
