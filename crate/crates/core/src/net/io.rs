//! Binary weights file: the 8-byte magic `SRAWNET1`, five little-endian
//! `u32` values `(c1, c2, c3, classes, input side)` with `c3 = 0` for
//! two-stage models, then every tensor as little-endian `f64` in declaration
//! order.

use std::fs;
use std::path::Path;

use super::{Arch, NetParams};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SRAWNET1";
const HEADER_LEN: usize = 8 + 5 * 4;

pub fn encode(params: &NetParams) -> Vec<u8> {
    let a = params.arch();
    let mut out = Vec::with_capacity(HEADER_LEN + params.num_parameters() * 8);
    out.extend_from_slice(MAGIC);
    let c3 = a.widths.get(2).copied().unwrap_or(0);
    for v in [a.widths[0], a.widths[1], c3, a.num_classes, a.input_side] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for v in params.tensors().iter().flatten() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<NetParams> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(path, "file shorter than the header"));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::format(path, "bad magic, not a weights file"));
    }
    let field = |i: usize| {
        let o = 8 + 4 * i;
        u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize
    };
    let (c1, c2, c3, classes, side) = (field(0), field(1), field(2), field(3), field(4));
    let widths = if c3 == 0 { vec![c1, c2] } else { vec![c1, c2, c3] };
    let arch = Arch::new(widths, classes, side)
        .map_err(|e| Error::format(path, format!("invalid architecture header: {e}")))?;
    let sizes = arch.tensor_sizes();
    let expected = HEADER_LEN + sizes.iter().sum::<usize>() * 8;
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!("expected {expected} bytes for this architecture, found {}", bytes.len()),
        ));
    }
    let mut values = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let tensors = sizes
        .iter()
        .map(|&n| values.by_ref().take(n).collect())
        .collect();
    NetParams::from_tensors(arch, tensors).map_err(|e| Error::format(path, e.to_string()))
}

pub fn save_params(params: &NetParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(params)).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: impl AsRef<Path>) -> Result<NetParams> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
