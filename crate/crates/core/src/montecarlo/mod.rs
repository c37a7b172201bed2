//! Gate-by-gate Monte Carlo of the link.
//!
//! The pulse train is cut into fixed-length segments that run in parallel,
//! each on its own ChaCha8 stream (`stream = segment index`). A segment
//! starts with a warm-up of discarded gates so the detectors enter it with
//! realistic afterpulse and dead-time state. Output depends only on the
//! seed, the pulse count and the segment length, never on thread count.

pub mod detector;
pub mod dump;
pub mod histogram;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{ensure_positive, Error, Result};
use crate::linkbudget::{gate_capture, Link, PulseProfile};
use crate::protocol::{bob_phase, decode_click, encode, AliceLog, Basis};

pub use detector::{gate_response, DetectorKernel, DetectorState, Incident};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DetectorId {
    A = 0,
    B = 1,
}

impl DetectorId {
    pub fn from_index(i: u8) -> Option<Self> {
        match i {
            0 => Some(DetectorId::A),
            1 => Some(DetectorId::B),
            _ => None,
        }
    }
}

/// What caused an avalanche. Not part of the exported event format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ClickOrigin {
    Signal = 0,
    Neighbor = 1,
    Dark = 2,
    Afterpulse = 3,
    /// Read back from a dump, cause not recorded.
    Unknown = 4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeTag {
    pub clock_index: u64,
    pub detector: DetectorId,
    /// Arrival time within the clock period.
    pub timestamp_ps: u32,
    pub origin: ClickOrigin,
}

impl TimeTag {
    pub fn absolute_ps(&self, period_ps: f64) -> f64 {
        self.clock_index as f64 * period_ps + self.timestamp_ps as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    pub pulses: u64,
    pub seed: u64,
    pub segment_len: u64,
    pub warmup_gates: u64,
    /// Abort when the run would produce more tags than this.
    pub max_events: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            pulses: 10_000_000,
            seed: 1,
            segment_len: 1 << 20,
            warmup_gates: 10_000,
            max_events: 100_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub alice: AliceLog,
    pub bob_bases: Vec<Basis>,
    /// Sorted by clock index, at most one tag per clock.
    pub tags: Vec<TimeTag>,
    pub seed: u64,
    /// Segment `i` used ChaCha8 stream `i`.
    pub segments: u64,
    /// Tags removed because they violated the dead time across a segment
    /// boundary.
    pub boundary_drops: usize,
    pub clock_rate_hz: f64,
}

impl SimOutput {
    pub fn pulses(&self) -> u64 {
        self.alice.len() as u64
    }

    pub fn raw_rate_hz(&self) -> f64 {
        self.tags.len() as f64 / self.pulses() as f64 * self.clock_rate_hz
    }
}

/// Precomputed per-link quantities shared by all segments.
struct Setup {
    profile: PulseProfile,
    kernels: [DetectorKernel; 2],
    /// Mean photons per pulse at the detectors, own gate and spilled.
    own: f64,
    neighbor: f64,
    visibility: f64,
    mismodulation: f64,
    period: f64,
    window: f64,
    window_start: f64,
    window_center: f64,
    dead_gates: u64,
}

impl Setup {
    fn new(link: &Link) -> Self {
        let profile = link.profile();
        let det = &link.detectors[0];
        let capture = gate_capture(&profile, det);
        let m = link.mean_photons_at_bob();
        let kernels = [
            DetectorKernel::new(&link.detectors[0]),
            DetectorKernel::new(&link.detectors[1]),
        ];
        Setup {
            profile,
            own: m * capture.own,
            neighbor: m * capture.neighbor,
            visibility: link.receiver.visibility,
            mismodulation: link.receiver.mismodulation_error,
            period: det.gate_period_ps,
            window: det.gate_window_ps,
            window_start: det.window_start_ps(),
            window_center: det.window_center_ps(),
            dead_gates: kernels[0].dead_gates.max(kernels[1].dead_gates),
            kernels,
        }
    }

    fn timestamp(&self, origin: ClickOrigin, rng: &mut ChaCha8Rng) -> u32 {
        let half = self.window / 2.0;
        let offset = match origin {
            ClickOrigin::Signal => self.sample_in_gate(rng, |x| (x.abs() <= half).then_some(x)),
            ClickOrigin::Neighbor => self.sample_in_gate(rng, |x| {
                let k = (x / self.period).round();
                let dx = x - k * self.period;
                (k != 0.0 && dx.abs() <= half).then_some(dx)
            }),
            _ => None,
        };
        let offset = offset.unwrap_or_else(|| (rng.random::<f64>() - 0.5) * self.window);
        let t = (self.window_center + offset).floor();
        t.clamp(self.window_start, self.window_start + self.window - 1.0) as u32
    }

    fn sample_in_gate(
        &self,
        rng: &mut ChaCha8Rng,
        accept: impl Fn(f64) -> Option<f64>,
    ) -> Option<f64> {
        for _ in 0..100_000 {
            if let Some(x) = accept(self.profile.sample(rng)) {
                return Some(x);
            }
        }
        None
    }
}

struct Segment {
    alice: AliceLog,
    bob: Vec<Basis>,
    tags: Vec<TimeTag>,
}

fn run_segment(
    setup: &Setup,
    opts: &SimOptions,
    index: u64,
    first: u64,
    len: u64,
) -> Result<Segment> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(index);
    let mut states = [DetectorState::new(), DetectorState::new()];
    let mut seg = Segment {
        alice: AliceLog::with_capacity(len as usize),
        bob: Vec::with_capacity(len as usize),
        tags: Vec::new(),
    };
    for g in 0..opts.warmup_gates + len {
        let recording = g >= opts.warmup_gates;
        let choice: u8 = rng.random();
        let bit = choice & 1;
        let a_basis = Basis::from_bit(choice & 2 != 0);
        let b_basis = Basis::from_bit(choice & 4 != 0);
        let flipped = setup.mismodulation > 0.0 && rng.random::<f64>() < setup.mismodulation;
        let phase = encode(bit ^ flipped as u8, a_basis);
        let p_a = decode_click(phase, bob_phase(b_basis), setup.visibility);
        let light = [
            Incident {
                own: setup.own * p_a,
                neighbor: setup.neighbor * 0.5,
            },
            Incident {
                own: setup.own * (1.0 - p_a),
                neighbor: setup.neighbor * 0.5,
            },
        ];
        let gate = states[0].gate();
        let ca = gate_response(&mut states[0], light[0], &setup.kernels[0], &mut rng);
        let cb = gate_response(&mut states[1], light[1], &setup.kernels[1], &mut rng);
        let fired = match (ca, cb) {
            (Some(a), Some(b)) => Some(if rng.random::<bool>() {
                (DetectorId::B, b)
            } else {
                (DetectorId::A, a)
            }),
            (Some(a), None) => Some((DetectorId::A, a)),
            (None, Some(b)) => Some((DetectorId::B, b)),
            (None, None) => None,
        };
        if let Some((detector, origin)) = fired {
            // Dead time is shared: either avalanche holds off both diodes.
            states[0].block_after(gate, &setup.kernels[0]);
            states[1].block_after(gate, &setup.kernels[1]);
            let timestamp_ps = setup.timestamp(origin, &mut rng);
            if recording {
                seg.tags.push(TimeTag {
                    clock_index: first + (g - opts.warmup_gates),
                    detector,
                    timestamp_ps,
                    origin,
                });
                if seg.tags.len() > opts.max_events {
                    return Err(Error::ResourceLimit(format!(
                        "more than {} events",
                        opts.max_events
                    )));
                }
            }
        }
        if recording {
            seg.alice.push(bit, a_basis);
            seg.bob.push(b_basis);
        }
    }
    Ok(seg)
}

pub fn simulate(link: &Link, opts: &SimOptions) -> Result<SimOutput> {
    link.validate()?;
    ensure_positive("pulses", opts.pulses as f64)?;
    ensure_positive("segment_len", opts.segment_len as f64)?;
    if opts.pulses > usize::MAX as u64 / 2 {
        return Err(Error::ResourceLimit(format!("{} pulses", opts.pulses)));
    }
    let setup = Setup::new(link);
    let n_seg = opts.pulses.div_ceil(opts.segment_len);
    let segments: Vec<Segment> = (0..n_seg)
        .into_par_iter()
        .map(|i| {
            let first = i * opts.segment_len;
            let len = opts.segment_len.min(opts.pulses - first);
            run_segment(&setup, opts, i, first, len)
        })
        .collect::<Result<_>>()?;

    let mut out = SimOutput {
        alice: AliceLog::with_capacity(opts.pulses as usize),
        bob_bases: Vec::with_capacity(opts.pulses as usize),
        tags: Vec::new(),
        seed: opts.seed,
        segments: n_seg,
        boundary_drops: 0,
        clock_rate_hz: link.source.clock_rate_hz,
    };
    let total: usize = segments.iter().map(|s| s.tags.len()).sum();
    if total > opts.max_events {
        return Err(Error::ResourceLimit(format!(
            "{total} events exceed the limit of {}",
            opts.max_events
        )));
    }
    out.tags.reserve(total);
    let mut next_live: u64 = 0;
    for seg in segments {
        out.alice.extend(&seg.alice);
        out.bob_bases.extend_from_slice(&seg.bob);
        for t in seg.tags {
            if t.clock_index < next_live {
                out.boundary_drops += 1;
                continue;
            }
            next_live = t.clock_index + 1 + setup.dead_gates;
            out.tags.push(t);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SystemConfig;

    fn small(seed: u64) -> SimOptions {
        SimOptions {
            pulses: 300_000,
            seed,
            segment_len: 65_536,
            warmup_gates: 2_000,
            max_events: 1_000_000,
        }
    }

    #[test]
    fn same_seed_same_output() {
        let link = SystemConfig::default().link();
        let a = simulate(&link, &small(5)).unwrap();
        let b = simulate(&link, &small(5)).unwrap();
        assert_eq!(a, b);
        let c = simulate(&link, &small(6)).unwrap();
        assert_ne!(a.tags, c.tags);
    }

    #[test]
    fn tags_respect_gates_and_dead_time() {
        let link = SystemConfig::default().link();
        let out = simulate(&link, &small(9)).unwrap();
        let det = &link.detectors[0];
        let lo = det.window_start_ps() as u32;
        let hi = lo + det.gate_window_ps as u32;
        assert!(!out.tags.is_empty());
        for w in out.tags.windows(2) {
            assert!(w[1].clock_index > w[0].clock_index + det.dead_gates());
            let dt = w[1].absolute_ps(det.gate_period_ps) - w[0].absolute_ps(det.gate_period_ps);
            assert!(dt >= det.dead_time_ns * 1e3);
        }
        for t in &out.tags {
            assert!(t.timestamp_ps >= lo && t.timestamp_ps < hi);
            assert!(t.clock_index < out.pulses());
        }
    }

    #[test]
    fn event_limit() {
        let link = SystemConfig::default().link();
        let mut o = small(1);
        o.max_events = 10;
        assert!(matches!(simulate(&link, &o), Err(Error::ResourceLimit(_))));
    }

    #[test]
    fn rejects_zero_pulses() {
        let link = SystemConfig::default().link();
        let mut o = small(1);
        o.pulses = 0;
        assert!(simulate(&link, &o).is_err());
    }
}
