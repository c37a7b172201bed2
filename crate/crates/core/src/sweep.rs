//! Distance and bias sweeps, the detector-timing histogram run, and their
//! CSV output.

use std::io::{self, Write};

use rayon::prelude::*;

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::keyrate::{argmax_secure, rate_result, RateResult};
use crate::linkbudget::{gate_capture, Link, QberBreakdown};
use crate::montecarlo::histogram::{histogram, peak_spacing, Histogram};
use crate::montecarlo::{simulate, SimOptions, SimOutput};
use crate::protocol::sift;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Engine {
    Analytic,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub length_km: f64,
    pub compensated: bool,
}

/// Field-trial lengths: the three short spools run without compensation,
/// the two long ones with it.
pub fn default_lengths() -> Vec<SweepPoint> {
    [
        (5.6, false),
        (25.3, false),
        (65.5, false),
        (75.8, true),
        (101.1, true),
    ]
    .into_iter()
    .map(|(length_km, compensated)| SweepPoint {
        length_km,
        compensated,
    })
    .collect()
}

/// Receiver efficiencies from 2% to 12% in 0.5% steps.
pub fn default_eta_grid() -> Vec<f64> {
    (0..=20).map(|i| (20.0 + 5.0 * i as f64) / 1000.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub rate: RateResult,
    pub breakdown: QberBreakdown,
    pub compensated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    Distance,
    Bias,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub kind: SweepKind,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn best(&self) -> Option<&SweepRow> {
        let rates: Vec<RateResult> = self.rows.iter().map(|r| r.rate).collect();
        argmax_secure(&rates).map(|i| &self.rows[i])
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let first = match self.kind {
            SweepKind::Distance => "length_km",
            SweepKind::Bias => "eta_bob",
        };
        writeln!(
            w,
            "{first},raw_hz,qber,e_opt,e_afterpulse,e_dark,e_interclock,secure_hz,compensated"
        )?;
        for r in &self.rows {
            let x = match self.kind {
                SweepKind::Distance => r.rate.length_km,
                SweepKind::Bias => r.rate.eta_bob,
            };
            let b = &r.breakdown;
            writeln!(
                w,
                "{x:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{}",
                r.rate.raw_rate_hz,
                r.rate.qber,
                b.e_opt,
                b.e_afterpulse,
                b.e_dark,
                b.e_interclock,
                r.rate.secure_rate_hz,
                r.compensated
            )?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV is ASCII")
    }
}

fn analytic_row(cfg: &SystemConfig, link: &Link) -> SweepRow {
    let ev = link.evaluate();
    SweepRow {
        rate: rate_result(
            link.channel.length_km,
            link.receiver.eta_bob,
            ev.raw_rate_hz,
            ev.qber(),
            &cfg.protocol_constants(),
        ),
        breakdown: ev.breakdown,
        compensated: link.channel.is_compensated(),
    }
}

/// Row estimated from simulated events. The breakdown attributes each
/// sifted error to the cause of its click. With no sifted bits the QBER is
/// NaN and the secure rate zero.
pub fn mc_row(cfg: &SystemConfig, link: &Link, out: &SimOutput) -> Result<SweepRow> {
    let key = sift(&out.alice, &out.bob_bases, &out.tags)?;
    let qber = key.qber_estimate().unwrap_or(f64::NAN);
    let breakdown = key.error_breakdown().unwrap_or(QberBreakdown {
        e_opt: f64::NAN,
        e_afterpulse: f64::NAN,
        e_dark: f64::NAN,
        e_interclock: f64::NAN,
    });
    Ok(SweepRow {
        rate: rate_result(
            link.channel.length_km,
            link.receiver.eta_bob,
            out.raw_rate_hz(),
            qber,
            &cfg.protocol_constants(),
        ),
        breakdown,
        compensated: link.channel.is_compensated(),
    })
}

fn run_rows(
    cfg: &SystemConfig,
    links: Vec<Link>,
    engine: Engine,
    mc: &SimOptions,
) -> Result<Vec<SweepRow>> {
    for l in &links {
        l.validate()?;
    }
    match engine {
        Engine::Analytic => Ok(links.par_iter().map(|l| analytic_row(cfg, l)).collect()),
        // Each row is already parallel internally; rows run in order with
        // per-row seeds derived from the base seed.
        Engine::MonteCarlo => links
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let opts = SimOptions {
                    seed: mc.seed.wrapping_add(i as u64),
                    ..mc.clone()
                };
                mc_row(cfg, l, &simulate(l, &opts)?)
            })
            .collect(),
    }
}

pub fn run_distance_sweep(
    cfg: &SystemConfig,
    points: &[SweepPoint],
    engine: Engine,
    mc: &SimOptions,
) -> Result<SweepTable> {
    if points.is_empty() {
        return Err(Error::Empty("no sweep lengths"));
    }
    if points
        .windows(2)
        .any(|w| !(w[1].length_km > w[0].length_km))
    {
        return Err(Error::invalid("lengths", "must be strictly increasing"));
    }
    let links = points
        .iter()
        .map(|p| cfg.link_at(p.length_km, p.compensated, cfg.receiver.eta_bob))
        .collect();
    Ok(SweepTable {
        kind: SweepKind::Distance,
        rows: run_rows(cfg, links, engine, mc)?,
    })
}

pub fn run_bias_sweep(
    cfg: &SystemConfig,
    point: SweepPoint,
    etas: &[f64],
    engine: Engine,
    mc: &SimOptions,
) -> Result<SweepTable> {
    if etas.is_empty() {
        return Err(Error::Empty("no efficiencies to sweep"));
    }
    if etas.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("eta grid", "must be strictly increasing"));
    }
    let links = etas
        .iter()
        .map(|&e| cfg.link_at(point.length_km, point.compensated, e))
        .collect();
    Ok(SweepTable {
        kind: SweepKind::Bias,
        rows: run_rows(cfg, links, engine, mc)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramReport {
    pub histogram: Histogram,
    pub n_tags: usize,
    pub fwhm_ps: Option<f64>,
    pub zero_span_ps: Option<f64>,
    pub peak_spacing_ps: Option<f64>,
}

impl HistogramReport {
    pub fn write_summary<W: Write>(&self, mut w: W) -> io::Result<()> {
        let opt = |v: Option<f64>| v.map_or("undefined".to_string(), |x| format!("{x:e}"));
        writeln!(w, "n_tags={}", self.n_tags)?;
        writeln!(w, "fwhm_ps={}", opt(self.fwhm_ps))?;
        writeln!(w, "zero_span_ps={}", opt(self.zero_span_ps))?;
        writeln!(w, "peak_spacing_ps={}", opt(self.peak_spacing_ps))
    }
}

/// Mean detected photons per gate used to characterize detector timing.
pub const HISTOGRAM_DETECTED_MEAN: f64 = 0.008;

/// Detector timing run: back-to-back (no fiber) with the source attenuated
/// to `HISTOGRAM_DETECTED_MEAN` detected photons per gate.
pub fn histogram_link(cfg: &SystemConfig) -> Link {
    let mut link = cfg.link_at(0.0, false, cfg.receiver.eta_bob);
    let g = gate_capture(&link.profile(), &link.detectors[0]).total();
    link.source.mu = HISTOGRAM_DETECTED_MEAN / (link.receiver.eta_bob * g);
    link
}

pub fn run_histogram(link: &Link, opts: &SimOptions, bin_width_ps: f64) -> Result<HistogramReport> {
    let out = simulate(link, opts)?;
    let period = link.detectors[0].gate_period_ps;
    let h = histogram(&out.tags, bin_width_ps, period)?;
    Ok(HistogramReport {
        n_tags: out.tags.len(),
        fwhm_ps: h.fwhm(),
        zero_span_ps: if h.counts.len() > 1 {
            h.longest_zero_span()
        } else {
            None
        },
        peak_spacing_ps: peak_spacing(&out.tags, period, 8),
        histogram: h,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eta_grid() {
        let g = default_eta_grid();
        assert_eq!(g.len(), 21);
        assert_eq!(g[0], 0.02);
        assert_eq!(g[20], 0.12);
        assert!((g[8] - 0.06).abs() < 1e-15);
    }

    #[test]
    fn csv_header_and_row_count() {
        let cfg = SystemConfig::default();
        let t = run_distance_sweep(
            &cfg,
            &default_lengths(),
            Engine::Analytic,
            &SimOptions::default(),
        )
        .unwrap();
        let csv = t.to_csv_string();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(
            lines[0],
            "length_km,raw_hz,qber,e_opt,e_afterpulse,e_dark,e_interclock,secure_hz,compensated"
        );
        assert_eq!(lines.len(), 6);
        assert!(csv.ends_with('\n'));
        assert!(lines[4].ends_with(",true"));
        assert!(lines[1].starts_with("5.6e0,"));
    }

    #[test]
    fn rejects_unsorted_lengths() {
        let cfg = SystemConfig::default();
        let mut pts = default_lengths();
        pts.swap(0, 1);
        assert!(run_distance_sweep(&cfg, &pts, Engine::Analytic, &SimOptions::default()).is_err());
        assert!(run_distance_sweep(&cfg, &[], Engine::Analytic, &SimOptions::default()).is_err());
    }

    #[test]
    fn histogram_link_has_target_mean() {
        let cfg = SystemConfig::default();
        let link = histogram_link(&cfg);
        let g = gate_capture(&link.profile(), &link.detectors[0]).total();
        assert!((link.mu_detected() * g - HISTOGRAM_DETECTED_MEAN).abs() < 1e-15);
        assert_eq!(link.channel.length_km, 0.0);
    }
}
