//! BB84 phase encoding, basis sifting and error estimation.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::{self, Write};

use crate::error::{Error, Result};
use crate::keyrate::{key_fraction, ProtocolConstants};
use crate::linkbudget::QberBreakdown;
use crate::montecarlo::{ClickOrigin, DetectorId, TimeTag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Basis {
    /// Phases 0 and pi.
    Z = 0,
    /// Phases pi/2 and 3pi/2.
    X = 1,
}

impl Basis {
    pub fn from_bit(b: bool) -> Self {
        if b {
            Basis::X
        } else {
            Basis::Z
        }
    }
}

/// Alice's phase for a bit in a basis.
pub fn encode(bit: u8, basis: Basis) -> f64 {
    let base = match basis {
        Basis::Z => 0.0,
        Basis::X => FRAC_PI_2,
    };
    if bit & 1 == 1 {
        base + PI
    } else {
        base
    }
}

/// Phase Bob applies to measure in a basis.
pub fn bob_phase(basis: Basis) -> f64 {
    match basis {
        Basis::Z => 0.0,
        Basis::X => FRAC_PI_2,
    }
}

/// Probability that a photon exits toward detector A.
pub fn decode_click(phase_alice: f64, phase_bob: f64, visibility: f64) -> f64 {
    0.5 * (1.0 + visibility * (phase_alice - phase_bob).cos())
}

/// Detector A reads 0, detector B reads 1.
pub fn detector_bit(d: DetectorId) -> u8 {
    match d {
        DetectorId::A => 0,
        DetectorId::B => 1,
    }
}

/// Per-clock record of Alice's random choices, one byte per pulse.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AliceLog {
    packed: Vec<u8>,
}

impl AliceLog {
    pub fn with_capacity(n: usize) -> Self {
        AliceLog {
            packed: Vec::with_capacity(n),
        }
    }

    pub fn push(&mut self, bit: u8, basis: Basis) {
        self.packed.push((bit & 1) | ((basis as u8) << 1));
    }

    pub fn extend(&mut self, other: &AliceLog) {
        self.packed.extend_from_slice(&other.packed);
    }

    pub fn len(&self) -> usize {
        self.packed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packed.is_empty()
    }

    pub fn bit(&self, clock: usize) -> u8 {
        self.packed[clock] & 1
    }

    pub fn basis(&self, clock: usize) -> Basis {
        Basis::from_bit(self.packed[clock] & 2 != 0)
    }

    /// Same bases with every bit inverted.
    pub fn with_bits_flipped(&self) -> Self {
        AliceLog {
            packed: self.packed.iter().map(|b| b ^ 1).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SiftedBit {
    pub clock_index: u64,
    pub alice_bit: u8,
    pub bob_bit: u8,
    pub origin: ClickOrigin,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SiftedKey {
    pub bits: Vec<SiftedBit>,
    /// Tags seen before sifting.
    pub n_detected: usize,
}

impl SiftedKey {
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn n_errors(&self) -> usize {
        self.bits
            .iter()
            .filter(|b| b.alice_bit != b.bob_bit)
            .count()
    }

    /// None when nothing survived sifting.
    pub fn qber_estimate(&self) -> Option<f64> {
        (!self.is_empty()).then(|| self.n_errors() as f64 / self.len() as f64)
    }

    /// Error rate split by the physical origin of each erroneous click.
    pub fn error_breakdown(&self) -> Option<QberBreakdown> {
        if self.is_empty() {
            return None;
        }
        let mut counts = [0usize; 5];
        for b in self.bits.iter().filter(|b| b.alice_bit != b.bob_bit) {
            counts[b.origin as usize] += 1;
        }
        let n = self.len() as f64;
        Some(QberBreakdown {
            e_opt: counts[ClickOrigin::Signal as usize] as f64 / n,
            e_interclock: counts[ClickOrigin::Neighbor as usize] as f64 / n,
            e_dark: counts[ClickOrigin::Dark as usize] as f64 / n,
            e_afterpulse: counts[ClickOrigin::Afterpulse as usize] as f64 / n,
        })
    }
}

/// Keep the clocks where Alice and Bob used the same basis. Bit values
/// are carried along but never consulted.
pub fn sift(alice: &AliceLog, bob_bases: &[Basis], tags: &[TimeTag]) -> Result<SiftedKey> {
    if bob_bases.len() != alice.len() {
        return Err(Error::MalformedInput(format!(
            "{} Bob bases for {} clocks",
            bob_bases.len(),
            alice.len()
        )));
    }
    let mut bits = Vec::with_capacity(tags.len() / 2 + 1);
    let mut last: Option<u64> = None;
    for t in tags {
        let i = t.clock_index as usize;
        if t.clock_index >= alice.len() as u64 {
            return Err(Error::MalformedInput(format!(
                "tag at clock {} beyond the {} recorded clocks",
                t.clock_index,
                alice.len()
            )));
        }
        if last.is_some_and(|l| l >= t.clock_index) {
            return Err(Error::MalformedInput(format!(
                "tags not strictly increasing in clock index at {}",
                t.clock_index
            )));
        }
        last = Some(t.clock_index);
        if alice.basis(i) == bob_bases[i] {
            bits.push(SiftedBit {
                clock_index: t.clock_index,
                alice_bit: alice.bit(i),
                bob_bit: detector_bit(t.detector),
                origin: t.origin,
            });
        }
    }
    Ok(SiftedKey {
        bits,
        n_detected: tags.len(),
    })
}

pub fn estimate_qber(key: &SiftedKey) -> Result<f64> {
    key.qber_estimate()
        .ok_or(Error::Empty("no sifted bits to estimate QBER from"))
}

/// Asymptotic secure bits extractable from `n_sifted` sifted bits.
pub fn secure_key_length(n_sifted: u64, qber: f64, consts: &ProtocolConstants) -> u64 {
    if !(qber < 0.5) {
        return 0;
    }
    let bits = n_sifted as f64 * key_fraction(qber, consts);
    if bits > 0.0 {
        bits.floor() as u64
    } else {
        0
    }
}

/// Plain-text export: `clock_index,alice_bit,bob_bit` per line, then a
/// `#`-prefixed summary block.
pub fn write_sifted_key<W: Write>(
    key: &SiftedKey,
    consts: &ProtocolConstants,
    mut w: W,
) -> io::Result<()> {
    writeln!(w, "clock_index,alice_bit,bob_bit")?;
    for b in &key.bits {
        writeln!(w, "{},{},{}", b.clock_index, b.alice_bit, b.bob_bit)?;
    }
    writeln!(w, "# n_sifted={}", key.len())?;
    match key.qber_estimate() {
        Some(q) => {
            writeln!(w, "# qber={q:e}")?;
            writeln!(
                w,
                "# secure_bits={}",
                secure_key_length(key.len() as u64, q, consts)
            )?;
        }
        None => {
            writeln!(w, "# qber=undefined")?;
            writeln!(w, "# secure_bits=0")?;
        }
    }
    Ok(())
}
