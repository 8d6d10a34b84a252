//! Binary state snapshots.
//!
//! Layout (all little-endian):
//!
//! ```text
//! offset 0   magic bytes "HNLS"
//! offset 4   format version, u32 (currently 1)
//! offset 8   N (mode count), u64
//! offset 16  time, f64
//! offset 24  N coefficients of u as (re, im) f64 pairs
//! ...        N coefficients of w as (re, im) f64 pairs
//! ```
//!
//! Reads validate magic, version and total length and report the byte
//! offset of the first inconsistency.

use std::fs;
use std::path::Path;

use hons_core::{PairState, PeriodicGrid, SpectralField};
use num_complex::Complex64;

use crate::CliError;

const MAGIC: &[u8; 4] = b"HNLS";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 24;

pub fn write_snapshot(state: &PairState, path: &Path) -> Result<(), CliError> {
    let n = state.grid().n_modes();
    let mut buf = Vec::with_capacity(HEADER_LEN + 32 * n);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(n as u64).to_le_bytes());
    buf.extend_from_slice(&state.time.to_le_bytes());
    for field in [&state.u, &state.w] {
        for c in field.coeffs() {
            buf.extend_from_slice(&c.re.to_le_bytes());
            buf.extend_from_slice(&c.im.to_le_bytes());
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

fn format_err(offset: usize, msg: impl Into<String>) -> CliError {
    CliError::Format {
        offset,
        msg: msg.into(),
    }
}

pub fn read_snapshot(path: &Path) -> Result<PairState, CliError> {
    let buf = fs::read(path)?;
    if buf.len() < HEADER_LEN {
        return Err(format_err(buf.len(), "truncated header (need 24 bytes)"));
    }
    if &buf[0..4] != MAGIC {
        return Err(format_err(0, format!("bad magic {:?}, expected \"HNLS\"", &buf[0..4])));
    }
    let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(format_err(4, format!("unsupported format version {version}")));
    }
    let n = u64::from_le_bytes(buf[8..16].try_into().unwrap()) as usize;
    let time = f64::from_le_bytes(buf[16..24].try_into().unwrap());
    let expected = HEADER_LEN + 32 * n;
    if buf.len() != expected {
        return Err(format_err(
            buf.len().min(expected),
            format!("expected {expected} bytes for N = {n}, file has {}", buf.len()),
        ));
    }
    let grid = PeriodicGrid::new(n)?;
    let mut fields = Vec::with_capacity(2);
    for which in 0..2 {
        let base = HEADER_LEN + which * 16 * n;
        let coeffs: Vec<Complex64> = (0..n)
            .map(|i| {
                let o = base + 16 * i;
                Complex64::new(
                    f64::from_le_bytes(buf[o..o + 8].try_into().unwrap()),
                    f64::from_le_bytes(buf[o + 8..o + 16].try_into().unwrap()),
                )
            })
            .collect();
        fields.push(SpectralField::from_coeffs(grid, coeffs)?);
    }
    let w = fields.pop().unwrap();
    let u = fields.pop().unwrap();
    Ok(PairState::new(u, w, time)?)
}
