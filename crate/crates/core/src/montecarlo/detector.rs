//! Gated InGaAs APD: detection, dark counts, afterpulsing and dead time,
//! evaluated one gate at a time.

use rand::Rng;

use super::ClickOrigin;
use crate::linkbudget::DetectorParams;

/// Per-gate constants derived from [`DetectorParams`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorKernel {
    pub efficiency: f64,
    pub dark_prob: f64,
    pub dead_gates: u64,
    /// Trap population decay from one gate to the next.
    pub decay_per_gate: f64,
    /// Afterpulse hazard added by one avalanche, referred to the click gate.
    pub charge_per_click: f64,
}

impl DetectorKernel {
    pub fn new(det: &DetectorParams) -> Self {
        let dead_gates = det.dead_gates();
        let r = (-det.gate_period_ps / (det.afterpulse_decay_ns * 1e3)).exp();
        // Normalized so that the hazard summed over the gates after the dead
        // time equals the afterpulse probability.
        let charge_per_click = if det.afterpulse_total > 0.0 {
            det.afterpulse_total * (1.0 - r) / r.powi(dead_gates as i32 + 1)
        } else {
            0.0
        };
        DetectorKernel {
            efficiency: det.efficiency,
            dark_prob: det.dark_prob,
            dead_gates,
            decay_per_gate: r,
            charge_per_click,
        }
    }
}

/// Mean photon numbers reaching one detector in one gate, split by whether
/// the photon belongs to this gate's pulse or spilled over from another.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Incident {
    pub own: f64,
    pub neighbor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DetectorState {
    gate: u64,
    blocked_until: u64,
    charge: f64,
}

impl DetectorState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Index of the next gate to be evaluated.
    pub fn gate(&self) -> u64 {
        self.gate
    }

    pub fn is_live(&self) -> bool {
        self.gate >= self.blocked_until
    }

    /// Afterpulse probability in the next gate, if the detector is live.
    pub fn afterpulse_prob(&self) -> f64 {
        self.charge.min(1.0)
    }

    /// Let `gates` gates pass without light and without evaluating clicks.
    pub fn skip(&mut self, gates: u64, k: &DetectorKernel) {
        self.charge *= k.decay_per_gate.powf(gates as f64);
        self.gate += gates;
    }

    /// Hold the detector off for the dead time following a click in `gate`.
    pub fn block_after(&mut self, gate: u64, k: &DetectorKernel) {
        self.blocked_until = self.blocked_until.max(gate + 1 + k.dead_gates);
    }

    fn advance(&mut self, k: &DetectorKernel) {
        self.charge *= k.decay_per_gate;
        self.gate += 1;
    }
}

/// Evaluate one gate. Returns the cause of the avalanche, if any, and moves
/// the state to the next gate.
///
/// Causes are attributed in a fixed order (own pulse, spilled photon, dark
/// count, afterpulse) from a single uniform draw, so the click probability
/// is exactly one minus the product of the survival probabilities.
pub fn gate_response<R: Rng + ?Sized>(
    state: &mut DetectorState,
    incident: Incident,
    k: &DetectorKernel,
    rng: &mut R,
) -> Option<ClickOrigin> {
    let mut origin = None;
    if state.is_live() {
        let p_own = -(-k.efficiency * incident.own).exp_m1();
        let q_own = 1.0 - p_own;
        let q_nb = q_own * (-k.efficiency * incident.neighbor).exp();
        let q_dark = q_nb * (1.0 - k.dark_prob);
        let q_all = q_dark * (1.0 - state.afterpulse_prob());
        let u: f64 = rng.random();
        origin = if u < p_own {
            Some(ClickOrigin::Signal)
        } else if u < 1.0 - q_nb {
            Some(ClickOrigin::Neighbor)
        } else if u < 1.0 - q_dark {
            Some(ClickOrigin::Dark)
        } else if u < 1.0 - q_all {
            Some(ClickOrigin::Afterpulse)
        } else {
            None
        };
        if origin.is_some() {
            state.charge += k.charge_per_click;
            state.block_after(state.gate, k);
        }
    }
    state.advance(k);
    origin
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(pa: f64) -> DetectorParams {
        DetectorParams {
            efficiency: 0.1,
            dark_prob: 0.0,
            afterpulse_total: pa,
            afterpulse_decay_ns: 30.0,
            dead_time_ns: 7.7,
            jitter_fwhm_ps: 60.0,
            gate_window_ps: 265.0,
            gate_period_ps: 965.25,
        }
    }

    #[test]
    fn hazard_after_dead_time_sums_to_afterpulse_total() {
        let k = DetectorKernel::new(&params(0.06));
        let r = k.decay_per_gate;
        let sum: f64 = (k.dead_gates + 1..100_000)
            .map(|j| k.charge_per_click * r.powi(j as i32))
            .sum();
        assert!((sum - 0.06).abs() < 1e-12);
    }

    #[test]
    fn dead_gates_after_click() {
        let k = DetectorKernel::new(&params(0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = DetectorState::new();
        let bright = Incident {
            own: 1e3,
            neighbor: 0.0,
        };
        assert_eq!(
            gate_response(&mut s, bright, &k, &mut rng),
            Some(ClickOrigin::Signal)
        );
        for _ in 0..k.dead_gates {
            assert!(!s.is_live());
            assert_eq!(gate_response(&mut s, bright, &k, &mut rng), None);
        }
        assert!(s.is_live());
        assert_eq!(
            gate_response(&mut s, bright, &k, &mut rng),
            Some(ClickOrigin::Signal)
        );
    }

    #[test]
    fn dark_only_rate() {
        let mut p = params(0.0);
        p.dark_prob = 1e-3;
        let k = DetectorKernel::new(&p);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut s = DetectorState::new();
        let n = 2_000_000u64;
        let mut clicks = 0u64;
        for _ in 0..n {
            if gate_response(&mut s, Incident::default(), &k, &mut rng).is_some() {
                clicks += 1;
            }
        }
        // Expected clicks per gate with a renewal dead time of N gates.
        let d = 1e-3;
        let expect = n as f64 * d / (1.0 + k.dead_gates as f64 * d);
        let sigma = (expect * (1.0 - d)).sqrt();
        assert!(
            ((clicks as f64) - expect).abs() < 4.0 * sigma,
            "{clicks} vs {expect}"
        );
    }

    #[test]
    fn afterpulse_excess_matches_configured_total() {
        // One forced click, then sum the afterpulse hazard at every later
        // gate with no light: the expected total must equal the configured
        // afterpulse probability. Estimate it by sampling the first click.
        let k = DetectorKernel::new(&params(0.05));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let trials = 200_000;
        let mut hits = 0u64;
        for _ in 0..trials {
            let mut s = DetectorState::new();
            let fired = gate_response(
                &mut s,
                Incident {
                    own: 1e3,
                    neighbor: 0.0,
                },
                &k,
                &mut rng,
            );
            assert!(fired.is_some());
            for _ in 0..400 {
                if gate_response(&mut s, Incident::default(), &k, &mut rng).is_some() {
                    hits += 1;
                    break;
                }
            }
        }
        // First-afterpulse probability: 1 - prod(1 - h_j) over post-dead gates.
        let r = k.decay_per_gate;
        let survive: f64 = (k.dead_gates + 1..401)
            .map(|j| 1.0 - k.charge_per_click * r.powi(j as i32))
            .product();
        let p = 1.0 - survive;
        let expect = trials as f64 * p;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        assert!(
            (hits as f64 - expect).abs() < 3.0 * sigma,
            "{hits} vs {expect}"
        );
        // Summed hazard over the decay equals the configured total.
        let mut s = DetectorState::new();
        gate_response(
            &mut s,
            Incident {
                own: 1e3,
                neighbor: 0.0,
            },
            &k,
            &mut rng,
        );
        s.skip(k.dead_gates, &k);
        let mut total = 0.0;
        for _ in 0..100_000 {
            total += s.afterpulse_prob();
            s.skip(1, &k);
        }
        assert!((total - 0.05).abs() < 1e-9);
    }
}
