//! Binary parameter files.
//!
//! Layout (little-endian): `b"LSNN"`, version `u32 = 1`, `K: u32`, then for the
//! three decomposition blocks and the reconstruction block in order:
//! `out: u32`, `in: u32`, `out*in*9` weights as f64, `out` biases as f64.

use std::io::{Read, Write};

use super::{Activation, ConvBlockParams, NetworkParams, TAPS};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"LSNN";
const VERSION: u32 = 1;

pub fn write_params(params: &NetworkParams, mut out: impl Write) -> std::io::Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(params.channels() as u32).to_le_bytes())?;
    for block in params.blocks() {
        out.write_all(&(block.out_channels as u32).to_le_bytes())?;
        out.write_all(&(block.in_channels as u32).to_le_bytes())?;
        for v in block.weights.iter().chain(&block.biases) {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32(input: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64s(input: &mut impl Read, n: usize) -> std::io::Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    input.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

pub fn read_params(mut input: impl Read) -> Result<NetworkParams> {
    let bad = |msg: String| Error::validation(format!("parameter file: {msg}"));
    let short = |e: std::io::Error| bad(format!("truncated ({e})"));
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic).map_err(short)?;
    if &magic != MAGIC {
        return Err(bad("bad magic".into()));
    }
    let version = read_u32(&mut input).map_err(short)?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let k = read_u32(&mut input).map_err(short)? as usize;
    let activations = [Activation::Relu, Activation::Relu, Activation::Linear, Activation::Linear];
    let mut blocks = Vec::with_capacity(4);
    for activation in activations {
        let out_channels = read_u32(&mut input).map_err(short)? as usize;
        let in_channels = read_u32(&mut input).map_err(short)? as usize;
        if out_channels.saturating_mul(in_channels) > 1 << 20 {
            return Err(bad(format!("implausible block shape {out_channels}x{in_channels}")));
        }
        let weights = read_f64s(&mut input, out_channels * in_channels * TAPS).map_err(short)?;
        let biases = read_f64s(&mut input, out_channels).map_err(short)?;
        blocks.push(ConvBlockParams {
            out_channels,
            in_channels,
            weights,
            biases,
            activation,
        });
    }
    let reconstruction = blocks.pop().expect("four blocks");
    let decomposition: [ConvBlockParams; 3] = blocks.try_into().expect("three blocks");
    let params = NetworkParams {
        decomposition,
        reconstruction,
    };
    params.validate().map_err(|e| bad(e.to_string()))?;
    if params.channels() != k {
        return Err(bad(format!("header says K={k}, blocks say {}", params.channels())));
    }
    Ok(params)
}
