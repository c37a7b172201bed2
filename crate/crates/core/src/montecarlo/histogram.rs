//! Arrival-time histograms folded onto one clock period.

use std::io::{self, Write};

use super::TimeTag;
use crate::error::{ensure_positive, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub bin_width_ps: f64,
    pub period_ps: f64,
    pub counts: Vec<u64>,
}

pub fn histogram(tags: &[TimeTag], bin_width_ps: f64, period_ps: f64) -> Result<Histogram> {
    ensure_positive("bin_width_ps", bin_width_ps)?;
    ensure_positive("period_ps", period_ps)?;
    let n = (period_ps / bin_width_ps).ceil().max(1.0) as usize;
    let mut counts = vec![0u64; n];
    for t in tags {
        let ts = t.timestamp_ps as f64;
        if ts >= period_ps {
            return Err(Error::MalformedInput(format!(
                "timestamp {ts} ps outside the {period_ps} ps period"
            )));
        }
        counts[((ts / bin_width_ps) as usize).min(n - 1)] += 1;
    }
    Ok(Histogram {
        bin_width_ps,
        period_ps,
        counts,
    })
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Edges of bin `i`; the last bin is cut at the period.
    pub fn bin_edges(&self, i: usize) -> (f64, f64) {
        let lo = i as f64 * self.bin_width_ps;
        (lo, (lo + self.bin_width_ps).min(self.period_ps))
    }

    fn center(&self, i: usize) -> f64 {
        let (a, b) = self.bin_edges(i);
        0.5 * (a + b)
    }

    pub fn peak_bin(&self) -> Option<usize> {
        let (i, &m) = self
            .counts
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))?;
        (m > 0).then_some(i)
    }

    /// Full width at half maximum of the main peak, interpolating linearly
    /// between bin centers. None for an empty histogram.
    pub fn fwhm(&self) -> Option<f64> {
        let p = self.peak_bin()?;
        let n = self.counts.len();
        let half = self.counts[p] as f64 / 2.0;
        let c = |i: usize| self.counts[i] as f64;
        let mut left = p;
        let mut steps = 0;
        while c(left) >= half && steps < n {
            left = (left + n - 1) % n;
            steps += 1;
        }
        let mut right = p;
        steps = 0;
        while c(right) >= half && steps < n {
            right = (right + 1) % n;
            steps += 1;
        }
        let w = self.bin_width_ps;
        let up = (left + 1) % n;
        let x_left = self.center(left) + (half - c(left)) / (c(up) - c(left)) * w;
        let down = (right + n - 1) % n;
        let x_right = self.center(down) + (c(down) - half) / (c(down) - c(right)) * w;
        let mut width = x_right - x_left;
        if width < 0.0 {
            width += self.period_ps;
        }
        Some(width)
    }

    /// Longest run of empty bins, wrapping around the period, in ps.
    /// None if every bin is empty.
    pub fn longest_zero_span(&self) -> Option<f64> {
        let n = self.counts.len();
        let start = self.counts.iter().position(|&c| c > 0)?;
        let mut best = 0.0f64;
        let mut run = 0.0;
        for k in 1..=n {
            let i = (start + k) % n;
            if self.counts[i] == 0 {
                let (a, b) = self.bin_edges(i);
                run += b - a;
                best = best.max(run);
            } else {
                run = 0.0;
            }
        }
        Some(best)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "bin_start_ps,bin_end_ps,counts")?;
        for (i, c) in self.counts.iter().enumerate() {
            let (a, b) = self.bin_edges(i);
            writeln!(w, "{a:e},{b:e},{c}")?;
        }
        Ok(())
    }
}

/// Mean spacing of successive detection peaks on the absolute time axis.
/// Tags are grouped by `clock_index % periods`; the centroid of each group
/// gives one peak and the slope of centroid against group index is the
/// spacing.
pub fn peak_spacing(tags: &[TimeTag], period_ps: f64, periods: usize) -> Option<f64> {
    if periods < 2 {
        return None;
    }
    let mut sum = vec![0.0f64; periods];
    let mut cnt = vec![0u64; periods];
    let span = period_ps * periods as f64;
    for t in tags {
        let j = (t.clock_index % periods as u64) as usize;
        let x = t.absolute_ps(period_ps) % span;
        sum[j] += x;
        cnt[j] += 1;
    }
    if cnt.contains(&0) {
        return None;
    }
    let pts: Vec<(f64, f64)> = (0..periods)
        .map(|j| (j as f64, sum[j] / cnt[j] as f64))
        .collect();
    let n = periods as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::montecarlo::{ClickOrigin, DetectorId};

    fn tag(clock: u64, ts: u32) -> TimeTag {
        TimeTag {
            clock_index: clock,
            detector: DetectorId::A,
            timestamp_ps: ts,
            origin: ClickOrigin::Signal,
        }
    }

    #[test]
    fn triangle_fwhm() {
        // Counts 0..10..0 in 1 ps bins: FWHM of a triangle is half its base.
        let mut tags = Vec::new();
        for (i, c) in (0..=10).chain((0..10).rev()).enumerate() {
            for _ in 0..c {
                tags.push(tag(0, 100 + i as u32));
            }
        }
        let h = histogram(&tags, 1.0, 965.25).unwrap();
        assert_eq!(h.counts.len(), 966);
        assert_eq!(h.peak_bin(), Some(110));
        assert!((h.fwhm().unwrap() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn zero_span_wraps_and_counts_partial_bin() {
        let tags = [tag(0, 350), tag(1, 614)];
        let h = histogram(&tags, 1.0, 965.25).unwrap();
        assert!((h.longest_zero_span().unwrap() - 700.25).abs() < 1e-9);
        let empty = histogram(&[], 1.0, 965.25).unwrap();
        assert_eq!(empty.longest_zero_span(), None);
        assert_eq!(empty.fwhm(), None);
    }

    #[test]
    fn single_bin_when_bin_exceeds_period() {
        let h = histogram(&[tag(0, 10)], 5000.0, 965.25).unwrap();
        assert_eq!(h.counts, vec![1]);
        assert_eq!(h.longest_zero_span(), Some(0.0));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(histogram(&[], 0.0, 965.25).is_err());
        assert!(histogram(&[tag(0, 2000)], 1.0, 965.25).is_err());
    }

    #[test]
    fn spacing_of_regular_train() {
        let tags: Vec<TimeTag> = (0..64).map(|c| tag(c, 480)).collect();
        let s = peak_spacing(&tags, 965.25, 8).unwrap();
        assert!((s - 965.25).abs() < 1e-9);
    }
}
