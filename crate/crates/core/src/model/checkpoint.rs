//! `GUWT` checkpoint: magic, mode byte (0 = linear, 1 = mlp), then input,
//! hidden and class dimensions as little-endian `u64`, then every tensor in
//! declaration order as little-endian `f64`.

use std::path::Path;

use ndarray::{Array1, Array2};

use super::{Layer, Mode, ModelParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GUWT";

pub fn encode_checkpoint(params: &ModelParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(29 + 8 * params.num_params());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.push(match params.mode {
        Mode::Linear => 0,
        Mode::Mlp => 1,
    });
    for d in [params.input_dim(), params.hidden_dim(), params.classes()] {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for t in params.slices() {
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelParams> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    let body = bytes.strip_prefix(CHECKPOINT_MAGIC.as_slice()).ok_or_else(|| bad("missing GUWT magic"))?;
    let (&mode, body) = body.split_first().ok_or_else(|| bad("truncated header"))?;
    if body.len() < 24 {
        return Err(bad("truncated header"));
    }
    let dim = |i: usize| u64::from_le_bytes(body[8 * i..8 * i + 8].try_into().unwrap()) as usize;
    let (f, h, c) = (dim(0), dim(1), dim(2));
    let mut values = body[24..]
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()));
    let mut matrix = |r: usize, k: usize| -> Result<Array2<f64>> {
        let v: Vec<f64> = values.by_ref().take(r * k).collect();
        Array2::from_shape_vec((r, k), v).map_err(|_| bad("truncated tensor data"))
    };
    let params = match mode {
        0 => {
            let w = matrix(f, c)?;
            let b = matrix(1, c)?;
            ModelParams {
                mode: Mode::Linear,
                embed: None,
                predict: Layer { weight: w, bias: row(b) },
            }
        }
        1 => {
            let w1 = matrix(f, h)?;
            let b1 = matrix(1, h)?;
            let w2 = matrix(h, c)?;
            let b2 = matrix(1, c)?;
            ModelParams {
                mode: Mode::Mlp,
                embed: Some(Layer { weight: w1, bias: row(b1) }),
                predict: Layer { weight: w2, bias: row(b2) },
            }
        }
        m => return Err(Error::Checkpoint(format!("unknown mode byte {m}"))),
    };
    if 29 + 8 * params.num_params() != bytes.len() {
        return Err(bad("trailing bytes after tensor data"));
    }
    Ok(params)
}

fn row(m: Array2<f64>) -> Array1<f64> {
    let len = m.len();
    m.into_shape_with_order(len).expect("single row")
}

pub fn write_checkpoint(path: &Path, params: &ModelParams) -> Result<()> {
    std::fs::write(path, encode_checkpoint(params)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<ModelParams> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_model;

    #[test]
    fn roundtrip_both_modes() {
        for mode in [Mode::Mlp, Mode::Linear] {
            let p = init_model(5, 4, 3, mode, 2).unwrap();
            assert_eq!(decode_checkpoint(&encode_checkpoint(&p)).unwrap(), p);
        }
    }

    #[test]
    fn header_layout() {
        let p = init_model(5, 4, 3, Mode::Mlp, 2).unwrap();
        let bytes = encode_checkpoint(&p);
        assert_eq!(&bytes[..5], b"GUWT\x01");
        assert_eq!(&bytes[5..13], &5u64.to_le_bytes());
        assert_eq!(&bytes[13..21], &4u64.to_le_bytes());
        assert_eq!(&bytes[21..29], &3u64.to_le_bytes());
        assert_eq!(&bytes[29..37], &p.embed.as_ref().unwrap().weight[[0, 0]].to_le_bytes());
        assert_eq!(bytes.len(), 29 + 8 * (20 + 4 + 12 + 3));
    }

    #[test]
    fn corrupt_inputs() {
        let p = init_model(2, 2, 2, Mode::Mlp, 2).unwrap();
        let mut bytes = encode_checkpoint(&p);
        assert_eq!(decode_checkpoint(&bytes[..bytes.len() - 3]).unwrap_err().class(), "CheckpointError");
        bytes[4] = 9;
        assert!(decode_checkpoint(&bytes).is_err());
        assert!(decode_checkpoint(b"XXXX").is_err());
    }
}
