//! System configuration: a flat file of dotted `section.key = value` lines
//! (a TOML subset). Unknown keys, missing keys and wrong types are errors.

use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;

use crate::error::{ensure_non_negative, ensure_positive, ensure_probability, Error, Result};
use crate::keyrate::ProtocolConstants;
use crate::linkbudget::{
    ChannelParams, Compensation, DetectorParams, Link, ReceiverParams, SourceParams,
};

/// Calibrated configuration shipped with the crate.
pub const DEFAULT_CONFIG: &str = include_str!("../config/reference.cfg");

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSection {
    pub clock_rate_hz: f64,
    pub mu: f64,
    pub pulse_sigma0_ps: f64,
    pub wavelength_nm: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    pub length_km: f64,
    pub attenuation_db_per_km: f64,
    pub dispersion_ps_per_nm_km: f64,
    pub compensated: bool,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReceiverSection {
    pub eta_bob: f64,
    pub visibility: f64,
    pub mismodulation_error: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSection {
    pub efficiency: f64,
    pub gate_period_ps: f64,
    pub gate_window_ps: f64,
    pub dead_time_ns: f64,
    pub jitter_fwhm_ps: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSection {
    pub f_ec: f64,
    pub sift_factor: f64,
}

/// Fitted model parameters and the bias couplings that tie detector noise
/// to the receiver efficiency.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Calibration {
    pub spectral_width_nm: f64,
    pub line_fraction: f64,
    pub line_width_nm: f64,
    /// Efficiency at which `afterpulse_ref` and `dark_ref` apply.
    pub reference_eta: f64,
    pub afterpulse_ref: f64,
    pub afterpulse_exponent: f64,
    pub afterpulse_decay_ns: f64,
    pub dark_ref: f64,
    /// d ln(dark) / d eta.
    pub dark_log_slope: f64,
    /// Without a compensator length, compensation is ideal.
    pub compensator_length_km: Option<f64>,
    #[serde(default)]
    pub compensator_loss_db: f64,
}

impl Calibration {
    pub fn afterpulse_at(&self, eta: f64) -> f64 {
        self.afterpulse_ref * (eta / self.reference_eta).powf(self.afterpulse_exponent)
    }

    /// Per-detector dark count probability per gate.
    pub fn dark_at(&self, eta: f64) -> f64 {
        self.dark_ref * (self.dark_log_slope * (eta - self.reference_eta)).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub source: SourceSection,
    pub channel: ChannelSection,
    pub receiver: ReceiverSection,
    pub detector: DetectorSection,
    pub protocol: ProtocolSection,
    pub calibration: Calibration,
}

pub fn parse_config(text: &str) -> Result<SystemConfig> {
    let cfg: SystemConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<SystemConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

impl Default for SystemConfig {
    fn default() -> Self {
        parse_config(DEFAULT_CONFIG).expect("bundled config is valid")
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        let c = &self.calibration;
        ensure_positive("calibration.reference_eta", c.reference_eta)?;
        ensure_positive("calibration.afterpulse_ref", c.afterpulse_ref)?;
        ensure_non_negative("calibration.afterpulse_exponent", c.afterpulse_exponent)?;
        ensure_positive("calibration.dark_ref", c.dark_ref)?;
        crate::error::ensure_finite("calibration.dark_log_slope", c.dark_log_slope)?;
        if let Some(l) = c.compensator_length_km {
            ensure_non_negative("calibration.compensator_length_km", l)?;
        }
        ensure_non_negative("calibration.compensator_loss_db", c.compensator_loss_db)?;
        ensure_non_negative("protocol.f_ec", self.protocol.f_ec)?;
        ensure_probability("protocol.sift_factor", self.protocol.sift_factor)?;
        ensure_positive("receiver.eta_bob", self.receiver.eta_bob)?;
        ensure_positive("detector.efficiency", self.detector.efficiency)?;
        self.link().validate()
    }

    pub fn protocol_constants(&self) -> ProtocolConstants {
        ProtocolConstants {
            f_ec: self.protocol.f_ec,
            sift_factor: self.protocol.sift_factor,
        }
    }

    /// Transmission of Bob's optics, held fixed when the detector bias moves.
    pub fn optics_transmission(&self) -> f64 {
        self.receiver.eta_bob / self.detector.efficiency
    }

    pub fn link(&self) -> Link {
        self.link_at(
            self.channel.length_km,
            self.channel.compensated,
            self.receiver.eta_bob,
        )
    }

    /// The link at another length, compensation state and receiver
    /// efficiency. Efficiency changes go through the detector bias, so
    /// dark counts and afterpulsing follow the calibrated couplings.
    pub fn link_at(&self, length_km: f64, compensated: bool, eta_bob: f64) -> Link {
        let c = &self.calibration;
        let d = &self.detector;
        let source = SourceParams {
            clock_rate_hz: self.source.clock_rate_hz,
            mu: self.source.mu,
            pulse_sigma0_ps: self.source.pulse_sigma0_ps,
            wavelength_nm: self.source.wavelength_nm,
            chirp_width_nm: c.spectral_width_nm,
            line_fraction: c.line_fraction,
            line_width_nm: c.line_width_nm,
        };
        let compensation = match (compensated, c.compensator_length_km) {
            (false, _) => Compensation::None,
            (true, None) => Compensation::Ideal,
            (true, Some(l)) => Compensation::Fixed {
                length_km: l,
                insertion_loss_db: c.compensator_loss_db,
            },
        };
        let channel = ChannelParams {
            length_km,
            attenuation_db_per_km: self.channel.attenuation_db_per_km,
            dispersion_ps_per_nm_km: self.channel.dispersion_ps_per_nm_km,
            compensation,
        };
        let det = DetectorParams {
            efficiency: eta_bob / self.optics_transmission(),
            dark_prob: c.dark_at(eta_bob),
            afterpulse_total: c.afterpulse_at(eta_bob),
            afterpulse_decay_ns: c.afterpulse_decay_ns,
            dead_time_ns: d.dead_time_ns,
            jitter_fwhm_ps: d.jitter_fwhm_ps,
            gate_window_ps: d.gate_window_ps,
            gate_period_ps: d.gate_period_ps,
        };
        Link {
            source,
            channel,
            receiver: ReceiverParams {
                eta_bob,
                visibility: self.receiver.visibility,
                mismodulation_error: self.receiver.mismodulation_error,
            },
            detectors: [det.clone(), det],
        }
    }

    /// Serialize back to the dotted key format. Output is deterministic.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        let f = |x: f64| format!("{x:?}");
        let src = &self.source;
        kv("source.clock_rate_hz", f(src.clock_rate_hz));
        kv("source.mu", f(src.mu));
        kv("source.pulse_sigma0_ps", f(src.pulse_sigma0_ps));
        kv("source.wavelength_nm", f(src.wavelength_nm));
        let ch = &self.channel;
        kv("channel.length_km", f(ch.length_km));
        kv("channel.attenuation_db_per_km", f(ch.attenuation_db_per_km));
        kv(
            "channel.dispersion_ps_per_nm_km",
            f(ch.dispersion_ps_per_nm_km),
        );
        kv("channel.compensated", ch.compensated.to_string());
        let r = &self.receiver;
        kv("receiver.eta_bob", f(r.eta_bob));
        kv("receiver.visibility", f(r.visibility));
        kv("receiver.mismodulation_error", f(r.mismodulation_error));
        let d = &self.detector;
        kv("detector.efficiency", f(d.efficiency));
        kv("detector.gate_period_ps", f(d.gate_period_ps));
        kv("detector.gate_window_ps", f(d.gate_window_ps));
        kv("detector.dead_time_ns", f(d.dead_time_ns));
        kv("detector.jitter_fwhm_ps", f(d.jitter_fwhm_ps));
        kv("protocol.f_ec", f(self.protocol.f_ec));
        kv("protocol.sift_factor", f(self.protocol.sift_factor));
        let c = &self.calibration;
        kv("calibration.spectral_width_nm", f(c.spectral_width_nm));
        kv("calibration.line_fraction", f(c.line_fraction));
        kv("calibration.line_width_nm", f(c.line_width_nm));
        kv("calibration.reference_eta", f(c.reference_eta));
        kv("calibration.afterpulse_ref", f(c.afterpulse_ref));
        kv("calibration.afterpulse_exponent", f(c.afterpulse_exponent));
        kv("calibration.afterpulse_decay_ns", f(c.afterpulse_decay_ns));
        kv("calibration.dark_ref", f(c.dark_ref));
        kv("calibration.dark_log_slope", f(c.dark_log_slope));
        if let Some(l) = c.compensator_length_km {
            kv("calibration.compensator_length_km", f(l));
        }
        kv("calibration.compensator_loss_db", f(c.compensator_loss_db));
        s
    }
}
