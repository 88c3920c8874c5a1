//! `FGRD1` model container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        5 bytes   "FGRD1"
//! layer_count  u32
//! per layer:
//!   in_dim     u32
//!   out_dim    u32
//!   activation u8        0 = identity, 1 = relu
//!   weights    f64 x (out_dim * in_dim), row-major (out, in)
//!   bias       f64 x out_dim
//! ```
//!
//! No trailing bytes are allowed. Floats are stored bit-exactly.

use std::fs;
use std::path::Path;

use super::{Activation, Dense, Model};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"FGRD1";

pub fn to_bytes(model: &Model) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(&(model.layers.len() as u32).to_le_bytes());
    for layer in &model.layers {
        out.extend_from_slice(&(layer.in_dim as u32).to_le_bytes());
        out.extend_from_slice(&(layer.out_dim as u32).to_le_bytes());
        out.push(match layer.activation {
            Activation::Identity => 0,
            Activation::Relu => 1,
        });
        for v in layer.weights.iter().chain(&layer.bias) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Parse {
                offset: self.pos,
                reason: format!("truncated {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let len = n.checked_mul(8).ok_or_else(|| Error::Parse {
            offset: self.pos,
            reason: format!("{what} size overflows"),
        })?;
        Ok(self
            .take(len, what)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(Error::Parse {
            offset: 0,
            reason: "missing FGRD1 magic".into(),
        });
    }
    let count = cur.u32("layer count")?;
    if count == 0 {
        return Err(Error::Parse {
            offset: 5,
            reason: "model has no layers".into(),
        });
    }
    let mut layers = Vec::with_capacity(count.min(64));
    for l in 0..count {
        let start = cur.pos;
        let in_dim = cur.u32("layer input size")?;
        let out_dim = cur.u32("layer output size")?;
        let tag_at = cur.pos;
        let activation = match cur.take(1, "activation tag")?[0] {
            0 => Activation::Identity,
            1 => Activation::Relu,
            t => {
                return Err(Error::Parse {
                    offset: tag_at,
                    reason: format!("unknown activation tag {t} in layer {l}"),
                })
            }
        };
        let weights = cur.f64s(in_dim.saturating_mul(out_dim), "weights")?;
        let bias = cur.f64s(out_dim, "bias")?;
        let layer = Dense::new(in_dim, out_dim, weights, bias, activation).map_err(|e| {
            Error::Parse {
                offset: start,
                reason: format!("layer {l}: {e}"),
            }
        })?;
        layers.push(layer);
    }
    if cur.pos != bytes.len() {
        return Err(Error::Parse {
            offset: cur.pos,
            reason: format!("{} trailing bytes", bytes.len() - cur.pos),
        });
    }
    Model::new(layers).map_err(|e| Error::Parse {
        offset: 5,
        reason: e.to_string(),
    })
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_save_is_byte_identical() {
        let model = Model::mlp(12, &[5, 4], 3, 9).unwrap();
        let bytes = to_bytes(&model);
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back, model);
        assert_eq!(to_bytes(&back), bytes);
    }

    #[test]
    fn zero_bias_and_odd_floats_round_trip() {
        let layer = Dense::new(
            2,
            2,
            vec![-0.0, f64::MIN_POSITIVE, 1e-310, -3.5],
            vec![0.0, 0.0],
            Activation::Identity,
        )
        .unwrap();
        let model = Model::new(vec![layer]).unwrap();
        let back = from_bytes(&to_bytes(&model)).unwrap();
        let bits = |m: &Model| -> Vec<u64> {
            m.layers()[0]
                .weights
                .iter()
                .chain(&m.layers()[0].bias)
                .map(|v| v.to_bits())
                .collect()
        };
        assert_eq!(bits(&back), bits(&model));
    }

    #[test]
    fn truncation_is_a_parse_error() {
        let bytes = to_bytes(&Model::mlp(4, &[3], 2, 1).unwrap());
        for cut in [0, 3, 5, 8, 20, bytes.len() - 1] {
            match from_bytes(&bytes[..cut]) {
                Err(Error::Parse { offset, .. }) => assert!(offset <= cut),
                other => panic!("cut {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn bad_magic_and_trailing_bytes() {
        let mut bytes = to_bytes(&Model::mlp(2, &[], 2, 1).unwrap());
        bytes.push(0);
        assert!(matches!(from_bytes(&bytes), Err(Error::Parse { .. })));
        bytes[0] = b'X';
        assert!(matches!(from_bytes(&bytes), Err(Error::Parse { offset: 0, .. })));
    }
}
