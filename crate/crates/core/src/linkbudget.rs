//! Fiber channel, pulse timing and gated-detector click model.
//!
//! Units: lengths in km, times in ps unless a field name says otherwise,
//! wavelengths in nm, rates in Hz. Probabilities are per gate.

use std::f64::consts::FRAC_1_SQRT_2;

use crate::error::{ensure_non_negative, ensure_positive, ensure_probability, Error, Result};

/// FWHM of a Gaussian in units of its standard deviation.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949;

#[derive(Debug, Clone, PartialEq)]
pub struct SourceParams {
    pub clock_rate_hz: f64,
    /// Mean photon number per pulse leaving Alice.
    pub mu: f64,
    /// Transform-limited RMS pulse width.
    pub pulse_sigma0_ps: f64,
    pub wavelength_nm: f64,
    /// RMS width of the broad, flat-topped (chirped) part of the spectrum.
    pub chirp_width_nm: f64,
    /// Fraction of pulse energy in the narrow spectral line.
    pub line_fraction: f64,
    /// RMS width of the narrow spectral line.
    pub line_width_nm: f64,
}

impl SourceParams {
    pub fn period_ps(&self) -> f64 {
        1e12 / self.clock_rate_hz
    }

    /// Energy-weighted RMS spectral width of the two-component spectrum.
    pub fn effective_spectral_width(&self) -> f64 {
        let w = self.line_fraction;
        (w * self.line_width_nm.powi(2) + (1.0 - w) * self.chirp_width_nm.powi(2)).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        ensure_positive("source.clock_rate", self.clock_rate_hz)?;
        ensure_positive("source.mu", self.mu)?;
        ensure_positive("source.pulse_sigma0", self.pulse_sigma0_ps)?;
        ensure_positive("source.wavelength", self.wavelength_nm)?;
        ensure_non_negative("calibration.spectral_width", self.chirp_width_nm)?;
        ensure_probability("calibration.line_fraction", self.line_fraction)?;
        ensure_non_negative("calibration.line_width", self.line_width_nm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Compensation {
    None,
    /// Residual dispersion removed exactly, no extra loss.
    Ideal,
    /// Fixed-length compensator: cancels the dispersion of `length_km` of
    /// fiber and adds `insertion_loss_db`.
    Fixed {
        length_km: f64,
        insertion_loss_db: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelParams {
    pub length_km: f64,
    pub attenuation_db_per_km: f64,
    pub dispersion_ps_per_nm_km: f64,
    pub compensation: Compensation,
}

impl ChannelParams {
    /// Length of fiber whose dispersion is still present at the receiver.
    pub fn residual_length_km(&self) -> f64 {
        match self.compensation {
            Compensation::None => self.length_km,
            Compensation::Ideal => 0.0,
            Compensation::Fixed { length_km, .. } => (self.length_km - length_km).abs(),
        }
    }

    pub fn extra_loss_db(&self) -> f64 {
        match self.compensation {
            Compensation::Fixed {
                insertion_loss_db, ..
            } => insertion_loss_db,
            _ => 0.0,
        }
    }

    pub fn is_compensated(&self) -> bool {
        !matches!(self.compensation, Compensation::None)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_non_negative("channel.length", self.length_km)?;
        ensure_non_negative("channel.attenuation", self.attenuation_db_per_km)?;
        ensure_non_negative("channel.dispersion", self.dispersion_ps_per_nm_km)?;
        if let Compensation::Fixed {
            length_km,
            insertion_loss_db,
        } = self.compensation
        {
            ensure_non_negative("calibration.compensator_length", length_km)?;
            ensure_non_negative("calibration.compensator_loss", insertion_loss_db)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorParams {
    /// Single-photon detection efficiency of the APD itself.
    pub efficiency: f64,
    /// Dark count probability per gate.
    pub dark_prob: f64,
    /// Expected afterpulse clicks per avalanche once the dead time is over.
    pub afterpulse_total: f64,
    /// Trap release time constant.
    pub afterpulse_decay_ns: f64,
    pub dead_time_ns: f64,
    pub jitter_fwhm_ps: f64,
    pub gate_window_ps: f64,
    pub gate_period_ps: f64,
}

impl DetectorParams {
    pub fn jitter_sigma_ps(&self) -> f64 {
        self.jitter_fwhm_ps / FWHM_PER_SIGMA
    }

    /// Gates following a click in which the detector cannot fire again.
    ///
    /// Chosen so that two tags are always at least `dead_time_ns` apart in
    /// absolute time, wherever they land inside their windows.
    pub fn dead_gates(&self) -> u64 {
        let span = self.dead_time_ns * 1e3 + self.gate_window_ps;
        ((span / self.gate_period_ps).ceil() as u64).saturating_sub(1)
    }

    /// Start of the gate window measured from the beginning of a clock period.
    pub fn window_start_ps(&self) -> f64 {
        ((self.gate_period_ps - self.gate_window_ps) / 2.0).floor()
    }

    pub fn window_center_ps(&self) -> f64 {
        self.window_start_ps() + self.gate_window_ps / 2.0
    }

    pub fn validate(&self) -> Result<()> {
        ensure_probability("detector.efficiency", self.efficiency)?;
        ensure_probability("detector.dark_prob", self.dark_prob)?;
        ensure_probability("detector.afterpulse_total", self.afterpulse_total)?;
        if self.afterpulse_total >= 1.0 {
            return Err(Error::invalid(
                "detector.afterpulse_total",
                "must be < 1 for a finite click rate",
            ));
        }
        ensure_positive("calibration.afterpulse_decay", self.afterpulse_decay_ns)?;
        ensure_non_negative("detector.dead_time", self.dead_time_ns)?;
        ensure_non_negative("detector.jitter_fwhm", self.jitter_fwhm_ps)?;
        ensure_positive("detector.gate_period", self.gate_period_ps)?;
        ensure_positive("detector.gate_window", self.gate_window_ps)?;
        if self.gate_window_ps > self.gate_period_ps {
            return Err(Error::invalid(
                "detector.gate_window",
                format!(
                    "window {} ps exceeds gate period {} ps",
                    self.gate_window_ps, self.gate_period_ps
                ),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverParams {
    /// Total receiver efficiency: Bob's optics times detector efficiency.
    pub eta_bob: f64,
    pub visibility: f64,
    /// Probability that Alice's modulator lands on the wrong phase.
    pub mismodulation_error: f64,
}

impl ReceiverParams {
    /// Intrinsic error rate of a sifted signal photon.
    pub fn optical_error(&self) -> f64 {
        let v = self.visibility;
        let m = self.mismodulation_error;
        (1.0 - v) / 2.0 + m * v
    }

    pub fn validate(&self) -> Result<()> {
        ensure_probability("receiver.eta_bob", self.eta_bob)?;
        ensure_probability("receiver.visibility", self.visibility)?;
        ensure_probability("receiver.mismodulation_error", self.mismodulation_error)
    }
}

/// Fully resolved link at one operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub source: SourceParams,
    pub channel: ChannelParams,
    pub receiver: ReceiverParams,
    pub detectors: [DetectorParams; 2],
}

impl Link {
    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        self.channel.validate()?;
        self.receiver.validate()?;
        for d in &self.detectors {
            d.validate()?;
        }
        if self.receiver.eta_bob
            > self.detectors[0]
                .efficiency
                .min(self.detectors[1].efficiency)
        {
            return Err(Error::invalid(
                "receiver.eta_bob",
                "cannot exceed the detector efficiency",
            ));
        }
        let period = self.source.period_ps();
        for d in &self.detectors {
            if (d.gate_period_ps - period).abs() > 1.0 {
                return Err(Error::invalid(
                    "detector.gate_period",
                    format!(
                        "{} ps does not match the clock period {period:.3} ps",
                        d.gate_period_ps
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Mean photon number arriving at Bob's detectors (before detection).
    pub fn mean_photons_at_bob(&self) -> f64 {
        let t_optics = self.receiver.eta_bob / self.detectors[0].efficiency;
        self.source.mu * self.total_transmittance() * t_optics
    }

    pub fn total_transmittance(&self) -> f64 {
        transmittance(&self.channel) * 10f64.powf(-self.channel.extra_loss_db() / 10.0)
    }

    pub fn profile(&self) -> PulseProfile {
        pulse_profile(
            &self.source,
            &self.channel,
            self.detectors[0].jitter_sigma_ps(),
        )
    }
}

/// Fiber power transmittance.
pub fn transmittance(channel: &ChannelParams) -> f64 {
    10f64.powf(-channel.attenuation_db_per_km * channel.length_km / 10.0)
}

/// RMS width of the dispersed optical pulse.
pub fn broadened_width(source: &SourceParams, channel: &ChannelParams) -> f64 {
    let spread = channel.dispersion_ps_per_nm_km
        * channel.residual_length_km()
        * source.effective_spectral_width();
    source.pulse_sigma0_ps.hypot(spread)
}

/// Arrival-time distribution of a detected photon relative to the center
/// of its own gate: a mixture of a Gaussian (narrow line) and a flat-top
/// chirp convolved with a Gaussian. Detector jitter is folded into both.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseProfile {
    pub line_fraction: f64,
    pub line_sigma: f64,
    pub chirp_half_width: f64,
    pub chirp_sigma: f64,
}

pub fn pulse_profile(
    source: &SourceParams,
    channel: &ChannelParams,
    jitter_sigma: f64,
) -> PulseProfile {
    let dl = channel.dispersion_ps_per_nm_km * channel.residual_length_km();
    let base = source.pulse_sigma0_ps.hypot(jitter_sigma);
    PulseProfile {
        line_fraction: source.line_fraction,
        line_sigma: base.hypot(dl * source.line_width_nm),
        // A flat spectrum of RMS width s spans +-sqrt(3) s.
        chirp_half_width: 3f64.sqrt() * dl * source.chirp_width_nm,
        chirp_sigma: base,
    }
}

fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

impl PulseProfile {
    pub fn gaussian(sigma: f64) -> Self {
        PulseProfile {
            line_fraction: 1.0,
            line_sigma: sigma,
            chirp_half_width: 0.0,
            chirp_sigma: sigma,
        }
    }

    pub fn rms_width(&self) -> f64 {
        let w = self.line_fraction;
        let chirp_var = self.chirp_sigma.powi(2) + self.chirp_half_width.powi(2) / 3.0;
        (w * self.line_sigma.powi(2) + (1.0 - w) * chirp_var).sqrt()
    }

    fn chirp_cdf(&self, x: f64) -> f64 {
        let s = self.chirp_sigma;
        let h = self.chirp_half_width;
        if h < 1e-3 * s {
            return norm_cdf(x / s);
        }
        let g = |y: f64| y * norm_cdf(y / s) + s * norm_pdf(y / s);
        ((g(x + h) - g(x - h)) / (2.0 * h)).clamp(0.0, 1.0)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let w = self.line_fraction;
        let mut c = 0.0;
        if w > 0.0 {
            c += w * norm_cdf(x / self.line_sigma);
        }
        if w < 1.0 {
            c += (1.0 - w) * self.chirp_cdf(x);
        }
        c
    }

    pub fn mass(&self, a: f64, b: f64) -> f64 {
        (self.cdf(b) - self.cdf(a)).max(0.0)
    }

    pub fn density(&self, x: f64) -> f64 {
        let w = self.line_fraction;
        let line = norm_pdf(x / self.line_sigma) / self.line_sigma;
        let s = self.chirp_sigma;
        let h = self.chirp_half_width;
        let chirp = if h < 1e-3 * s {
            norm_pdf(x / s) / s
        } else {
            (norm_cdf((x + h) / s) - norm_cdf((x - h) / s)) / (2.0 * h)
        };
        w * line + (1.0 - w) * chirp
    }

    /// Distance beyond which the profile carries negligible mass.
    pub fn support(&self) -> f64 {
        self.chirp_half_width + 12.0 * self.line_sigma.max(self.chirp_sigma)
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z = sample_std_normal(rng);
        if rng.random::<f64>() < self.line_fraction {
            z * self.line_sigma
        } else {
            let u: f64 = rng.random();
            (2.0 * u - 1.0) * self.chirp_half_width + z * self.chirp_sigma
        }
    }
}

fn sample_std_normal<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    use rand_distr::{Distribution, StandardNormal};
    StandardNormal.sample(rng)
}

/// Probability mass captured by a photon's own gate and by the other gates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateCapture {
    pub own: f64,
    pub neighbor: f64,
}

impl GateCapture {
    pub fn total(&self) -> f64 {
        self.own + self.neighbor
    }

    /// Fraction of captured photons that land in a foreign gate.
    pub fn overlap(&self) -> f64 {
        let t = self.total();
        if t > 0.0 {
            self.neighbor / t
        } else {
            0.0
        }
    }
}

pub fn gate_capture(profile: &PulseProfile, det: &DetectorParams) -> GateCapture {
    let p = det.gate_period_ps;
    let half = det.gate_window_ps / 2.0;
    let own = profile.mass(-half, half);
    let reach = ((profile.support() + half) / p).ceil() + 1.0;
    if reach > 20_000.0 {
        // Spread over so many periods that the gates sample it uniformly.
        let total = det.gate_window_ps / p;
        return GateCapture {
            own,
            neighbor: (total - own).max(0.0),
        };
    }
    let reach = reach as i64;
    let mut neighbor = 0.0;
    for k in 1..=reach {
        let c = k as f64 * p;
        neighbor += profile.mass(c - half, c + half) + profile.mass(-c - half, -c + half);
    }
    GateCapture { own, neighbor }
}

/// Fraction of photons that fall inside some gate window.
pub fn gate_acceptance(profile: &PulseProfile, det: &DetectorParams) -> f64 {
    gate_capture(profile, det).total()
}

/// Error rate of signal clicks due to photons spilling into adjacent
/// gates. Spilled photons carry no phase information, so half of them
/// produce an error.
pub fn interclock_error(profile: &PulseProfile, det: &DetectorParams) -> f64 {
    0.5 * gate_capture(profile, det).overlap()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClickProbabilities {
    /// At least one detector fires on a signal photon.
    pub p_signal: f64,
    /// At least one dark count, either detector.
    pub p_dark: f64,
    /// Signal or dark.
    pub p_primary: f64,
    /// Any click in a live gate, afterpulses included.
    pub p_total: f64,
    /// Long-run fraction of gates in which the detectors are live.
    pub live_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QberBreakdown {
    pub e_opt: f64,
    pub e_afterpulse: f64,
    pub e_dark: f64,
    pub e_interclock: f64,
}

impl QberBreakdown {
    pub fn total(&self) -> f64 {
        self.e_opt + self.e_afterpulse + self.e_dark + self.e_interclock
    }
}

/// Everything the analytic model derives for one link.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkEvaluation {
    pub transmittance: f64,
    pub profile: PulseProfile,
    pub capture: GateCapture,
    pub clicks: ClickProbabilities,
    pub raw_rate_hz: f64,
    pub breakdown: QberBreakdown,
}

impl LinkEvaluation {
    pub fn qber(&self) -> f64 {
        self.breakdown.total()
    }
}

/// Click probabilities with afterpulsing and a dead time shared by both
/// detectors. Afterpulse opportunities that fall into dead gates caused by
/// other clicks are lost, which couples `p_total` to the live fraction.
pub fn click_probabilities(link: &Link, capture: &GateCapture) -> ClickProbabilities {
    let m = link.mu_detected();
    let p_signal = -(-m * capture.total()).exp_m1();
    let [da, db] = &link.detectors;
    let p_dark = 1.0 - (1.0 - da.dark_prob) * (1.0 - db.dark_prob);
    let p_primary = 1.0 - (1.0 - p_signal) * (1.0 - p_dark);
    let pa = 0.5 * (da.afterpulse_total + db.afterpulse_total);
    let n = da.dead_gates().max(db.dead_gates()) as f64;

    let mut p_total = p_primary / (1.0 - pa);
    for _ in 0..200 {
        let live = 1.0 / (1.0 + n * p_total);
        let next = p_primary / (1.0 - pa * live);
        let done = (next - p_total).abs() <= 1e-15 * next;
        p_total = next;
        if done {
            break;
        }
    }
    ClickProbabilities {
        p_signal,
        p_dark,
        p_primary,
        p_total,
        live_fraction: 1.0 / (1.0 + n * p_total),
    }
}

impl Link {
    /// Mean number of photons Bob would detect with an infinitely wide gate.
    pub fn mu_detected(&self) -> f64 {
        self.source.mu * self.total_transmittance() * self.receiver.eta_bob
    }

    pub fn evaluate(&self) -> LinkEvaluation {
        let profile = self.profile();
        let capture = gate_capture(&profile, &self.detectors[0]);
        let clicks = click_probabilities(self, &capture);
        let breakdown = qber_breakdown_from(self, &capture, &clicks);
        LinkEvaluation {
            transmittance: transmittance(&self.channel),
            profile,
            capture,
            clicks,
            raw_rate_hz: self.source.clock_rate_hz * clicks.p_total * clicks.live_fraction,
            breakdown,
        }
    }
}

fn qber_breakdown_from(
    link: &Link,
    capture: &GateCapture,
    c: &ClickProbabilities,
) -> QberBreakdown {
    if c.p_total <= 0.0 {
        return QberBreakdown {
            e_opt: 0.0,
            e_afterpulse: 0.0,
            e_dark: 0.0,
            e_interclock: 0.0,
        };
    }
    let f_signal = c.p_signal / c.p_total;
    let f_dark = c.p_dark * (1.0 - c.p_signal) / c.p_total;
    let f_after = ((c.p_total - c.p_primary) / c.p_total).max(0.0);
    let overlap = capture.overlap();
    QberBreakdown {
        e_opt: link.receiver.optical_error() * f_signal * (1.0 - overlap),
        e_afterpulse: 0.5 * f_after,
        e_dark: 0.5 * f_dark,
        e_interclock: 0.5 * overlap * f_signal,
    }
}

/// Detected (sifting not yet applied) click rate.
pub fn raw_rate(link: &Link) -> f64 {
    link.evaluate().raw_rate_hz
}

pub fn qber_breakdown(link: &Link) -> QberBreakdown {
    link.evaluate().breakdown
}

/// Least-squares slope of `10 log10(raw)` versus length, in dB/km, with its
/// standard error. The standard error is zero for two points.
pub fn raw_rate_slope(lengths_km: &[f64], raw_rates: &[f64]) -> Result<(f64, f64)> {
    if lengths_km.len() != raw_rates.len() {
        return Err(Error::MalformedInput(
            "length and rate counts differ".into(),
        ));
    }
    if lengths_km.len() < 2 {
        return Err(Error::Empty("slope needs at least two points"));
    }
    if let Some(r) = raw_rates.iter().find(|r| !(**r > 0.0)) {
        return Err(Error::invalid(
            "raw_rate",
            format!("must be > 0 for a log fit, got {r}"),
        ));
    }
    let n = lengths_km.len() as f64;
    let y: Vec<f64> = raw_rates.iter().map(|r| 10.0 * r.log10()).collect();
    let mx = lengths_km.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = lengths_km.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::MalformedInput("lengths are all equal".into()));
    }
    let sxy: f64 = lengths_km
        .iter()
        .zip(&y)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum();
    let slope = sxy / sxx;
    let stderr = if lengths_km.len() > 2 {
        let ss: f64 = lengths_km
            .iter()
            .zip(&y)
            .map(|(x, y)| (y - my - slope * (x - mx)).powi(2))
            .sum();
        (ss / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok((-slope, stderr))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det() -> DetectorParams {
        DetectorParams {
            efficiency: 0.1,
            dark_prob: 3e-6,
            afterpulse_total: 0.05,
            afterpulse_decay_ns: 30.0,
            dead_time_ns: 7.7,
            jitter_fwhm_ps: 60.0,
            gate_window_ps: 265.0,
            gate_period_ps: 965.25,
        }
    }

    fn channel(length: f64) -> ChannelParams {
        ChannelParams {
            length_km: length,
            attenuation_db_per_km: 0.195,
            dispersion_ps_per_nm_km: 17.0,
            compensation: Compensation::None,
        }
    }

    fn source() -> SourceParams {
        SourceParams {
            clock_rate_hz: 1.036e9,
            mu: 0.2,
            pulse_sigma0_ps: 10.0,
            wavelength_nm: 1550.0,
            chirp_width_nm: 0.45,
            line_fraction: 0.375,
            line_width_nm: 0.08,
        }
    }

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn transmittance_matches_decibel_definition() {
        let t = transmittance(&channel(5.6));
        assert!((t - 0.777_678_334_455_705_7).abs() < 1e-12);
        let t = transmittance(&channel(65.5));
        assert!((t - 0.052_814_114_177_367_24).abs() < 1e-12);
        assert_eq!(transmittance(&channel(0.0)), 1.0);
    }

    #[test]
    fn zero_length_keeps_transform_limit() {
        assert_eq!(broadened_width(&source(), &channel(0.0)), 10.0);
        let mut ch = channel(50.0);
        ch.compensation = Compensation::Ideal;
        assert_eq!(broadened_width(&source(), &ch), 10.0);
    }

    #[test]
    fn broadened_width_quadrature_sum() {
        let src = source();
        let ch = channel(25.3);
        let spread = 17.0 * 25.3 * src.effective_spectral_width();
        let w = broadened_width(&src, &ch);
        assert!((w * w - (100.0 + spread * spread)).abs() < 1e-9 * w * w);
    }

    #[test]
    fn profile_rms_matches_broadened_width_without_jitter() {
        let src = source();
        let ch = channel(65.5);
        let p = pulse_profile(&src, &ch, 0.0);
        assert!((p.rms_width() - broadened_width(&src, &ch)).abs() < 1e-9);
    }

    #[test]
    fn profile_cdf_matches_quadrature() {
        let p = pulse_profile(&source(), &channel(65.5), det().jitter_sigma_ps());
        for (a, b) in [(-132.5, 132.5), (832.75, 1097.75), (-2000.0, 50.0)] {
            let q = simpson(|x| p.density(x), a, b, 20_000);
            assert!(
                (p.mass(a, b) - q).abs() < 1e-9,
                "[{a},{b}] {} vs {q}",
                p.mass(a, b)
            );
        }
        let total = simpson(|x| p.density(x), -8000.0, 8000.0, 200_000);
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn narrow_pulse_is_fully_captured_by_own_gate() {
        let c = gate_capture(&PulseProfile::gaussian(25.0), &det());
        assert!((c.own - 1.0).abs() < 1e-6);
        assert!(c.neighbor < 1e-12);
        assert!(interclock_error(&PulseProfile::gaussian(25.0), &det()) < 1e-12);
    }

    #[test]
    fn very_wide_pulse_tends_to_duty_cycle() {
        let c = gate_capture(&PulseProfile::gaussian(1e5), &det());
        assert!((c.total() - 265.0 / 965.25).abs() < 1e-3);
    }

    #[test]
    fn interclock_error_is_half_overlap() {
        let p = pulse_profile(&source(), &channel(80.0), 25.0);
        let c = gate_capture(&p, &det());
        assert!(c.neighbor > 1e-4);
        assert!((interclock_error(&p, &det()) - 0.5 * c.neighbor / c.total()).abs() < 1e-15);
    }

    #[test]
    fn dead_gates_cover_dead_time_in_absolute_time() {
        let d = det();
        let n = d.dead_gates();
        assert_eq!(n, 8);
        let earliest = (n + 1) as f64 * d.gate_period_ps - d.gate_window_ps;
        assert!(earliest >= d.dead_time_ns * 1e3);
        let too_early = n as f64 * d.gate_period_ps - d.gate_window_ps;
        assert!(too_early < d.dead_time_ns * 1e3);
    }

    #[test]
    fn slope_of_exact_exponential() {
        let l = [5.6, 25.3, 65.5];
        let r: Vec<f64> = l.iter().map(|x| 1e7 * 10f64.powf(-0.024 * x)).collect();
        let (s, e) = raw_rate_slope(&l, &r).unwrap();
        assert!((s - 0.24).abs() < 1e-12);
        assert!(e < 1e-12);
        assert!(raw_rate_slope(&l[..1], &r[..1]).is_err());
        assert!(raw_rate_slope(&l, &[1.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn window_geometry() {
        let d = det();
        assert_eq!(d.window_start_ps(), 350.0);
        assert_eq!(d.window_center_ps(), 482.5);
    }
}
