//! Event dumps.
//!
//! Binary: 13-byte little-endian records `clock_index: u64`,
//! `detector_id: u8`, `timestamp_ps: u32`, no header.
//! CSV: header `clock_index,detector_id,timestamp_ps`, one tag per line.

use std::io::{self, Read, Write};

use super::{ClickOrigin, DetectorId, TimeTag};
use crate::error::{Error, Result};

pub const RECORD_BYTES: usize = 13;

pub fn write_binary<W: Write>(tags: &[TimeTag], mut w: W) -> io::Result<()> {
    let mut rec = [0u8; RECORD_BYTES];
    for t in tags {
        rec[..8].copy_from_slice(&t.clock_index.to_le_bytes());
        rec[8] = t.detector as u8;
        rec[9..].copy_from_slice(&t.timestamp_ps.to_le_bytes());
        w.write_all(&rec)?;
    }
    Ok(())
}

/// Read a binary dump back. Click causes are not stored and come back as
/// [`ClickOrigin::Unknown`].
pub fn read_binary<R: Read>(mut r: R) -> Result<Vec<TimeTag>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)
        .map_err(|e| Error::io("<event dump>", e))?;
    if buf.len() % RECORD_BYTES != 0 {
        return Err(Error::MalformedInput(format!(
            "dump length {} is not a multiple of {RECORD_BYTES}",
            buf.len()
        )));
    }
    buf.chunks_exact(RECORD_BYTES)
        .map(|rec| {
            let detector = DetectorId::from_index(rec[8])
                .ok_or_else(|| Error::MalformedInput(format!("detector id {}", rec[8])))?;
            Ok(TimeTag {
                clock_index: u64::from_le_bytes(rec[..8].try_into().unwrap()),
                detector,
                timestamp_ps: u32::from_le_bytes(rec[9..].try_into().unwrap()),
                origin: ClickOrigin::Unknown,
            })
        })
        .collect()
}

pub fn write_csv<W: Write>(tags: &[TimeTag], mut w: W) -> io::Result<()> {
    writeln!(w, "clock_index,detector_id,timestamp_ps")?;
    for t in tags {
        writeln!(
            w,
            "{},{},{}",
            t.clock_index, t.detector as u8, t.timestamp_ps
        )?;
    }
    Ok(())
}
