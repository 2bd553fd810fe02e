//! Exponential tables on disk: one JSON header line
//! `{"domain":[lo,hi],"entries":n,"interpolation":"linear"}` followed by `n`
//! little-endian `f64` values.

use std::fs;
use std::path::Path;

use fpstab_core::softmax::{ExpLut, Interpolation};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::report::write_atomic;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LutHeader {
    domain: [f64; 2],
    entries: usize,
    interpolation: Interpolation,
}

pub fn encode(lut: &ExpLut) -> Vec<u8> {
    let (lo, hi) = lut.domain();
    let header = LutHeader { domain: [lo, hi], entries: lut.entries(), interpolation: lut.interpolation() };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    for v in lut.values() {
        out.extend(v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<ExpLut> {
    let err = |offset: usize, message: String| CliError::Parse {
        path: path.to_path_buf(),
        location: format!("byte {offset}"),
        message,
    };
    let nl = bytes.iter().position(|b| *b == b'\n').ok_or_else(|| err(0, "missing table header line".into()))?;
    let header: LutHeader =
        serde_json::from_slice(&bytes[..nl]).map_err(|e| err(0, format!("bad table header: {e}")))?;
    let body = &bytes[nl + 1..];
    if body.len() != header.entries * 8 {
        return Err(err(nl + 1, format!("expected {} table bytes, found {}", header.entries * 8, body.len())));
    }
    let values = body.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
    ExpLut::from_table(header.domain[0], header.domain[1], values, header.interpolation)
        .map_err(|e| err(0, e.to_string()))
}

pub fn load(path: &Path) -> Result<ExpLut> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode(&bytes, path)
}

pub fn save(path: &Path, lut: &ExpLut) -> Result<()> {
    write_atomic(path, &encode(lut))
}
