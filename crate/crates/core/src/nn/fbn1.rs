//! `FBN1` model encoding.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! b"FBN1"
//! u32 layer_count
//! per layer:
//!     u32 out_dim, u32 in_dim
//!     out_dim * in_dim f64 weights, row-major
//!     out_dim f64 biases
//! ```

use alloc::format;
use alloc::vec::Vec;

use super::{DenseLayer, Network};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const FBN1_MAGIC: &[u8; 4] = b"FBN1";

pub fn encode_fbn1(net: &Network) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + net.num_params() * 8 + net.depth() * 8);
    out.extend_from_slice(FBN1_MAGIC);
    out.extend_from_slice(&(net.depth() as u32).to_le_bytes());
    for l in net.layers() {
        out.extend_from_slice(&(l.out_dim() as u32).to_le_bytes());
        out.extend_from_slice(&(l.in_dim() as u32).to_le_bytes());
        for w in l.weights().as_slice() {
            out.extend_from_slice(&w.to_le_bytes());
        }
        for b in l.biases() {
            out.extend_from_slice(&b.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Format {
                offset: self.pos,
                message: format!(
                    "truncated payload reading {what}: need {n} bytes, {} left",
                    self.bytes.len() - self.pos
                ),
            }),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let len = n.checked_mul(8).ok_or_else(|| Error::Format {
            offset: self.pos,
            message: format!("{what} count overflows"),
        })?;
        let b = self.take(len, what)?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    }
}

pub fn decode_fbn1(bytes: &[u8]) -> Result<Network> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4, "magic")?;
    if magic != FBN1_MAGIC {
        return Err(Error::Format { offset: 0, message: format!("bad magic {magic:02x?}, expected FBN1") });
    }
    let count = cur.u32("layer count")? as usize;
    if count == 0 {
        return Err(Error::Format { offset: 4, message: "layer count is zero".into() });
    }
    let mut layers = Vec::with_capacity(count.min(1024));
    for k in 0..count {
        let at = cur.pos;
        let out_dim = cur.u32("out_dim")? as usize;
        let in_dim = cur.u32("in_dim")? as usize;
        let weights = cur.f64s(out_dim.saturating_mul(in_dim), "weights")?;
        let biases = cur.f64s(out_dim, "biases")?;
        let weights = Matrix::new(out_dim, in_dim, weights).map_err(|e| Error::Format {
            offset: at,
            message: format!("layer {k}: {e}"),
        })?;
        let layer = DenseLayer::new(weights, biases).map_err(|e| Error::Format {
            offset: at,
            message: format!("layer {k}: {e}"),
        })?;
        layers.push(layer);
    }
    if cur.pos != bytes.len() {
        return Err(Error::Format {
            offset: cur.pos,
            message: format!("{} trailing bytes", bytes.len() - cur.pos),
        });
    }
    Network::new(layers).map_err(|e| Error::Format { offset: 8, message: format!("{e}") })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamRng;

    #[test]
    fn header_layout_is_exact() {
        let w = Matrix::new(1, 2, alloc::vec![1.5, -2.0]).unwrap();
        let net = Network::new(alloc::vec![DenseLayer::new(w, alloc::vec![0.25]).unwrap()]).unwrap();
        let bytes = encode_fbn1(&net);
        let mut expect = Vec::new();
        expect.extend_from_slice(b"FBN1");
        expect.extend_from_slice(&[1, 0, 0, 0]);
        expect.extend_from_slice(&[1, 0, 0, 0]);
        expect.extend_from_slice(&[2, 0, 0, 0]);
        expect.extend_from_slice(&1.5f64.to_le_bytes());
        expect.extend_from_slice(&(-2.0f64).to_le_bytes());
        expect.extend_from_slice(&0.25f64.to_le_bytes());
        assert_eq!(bytes, expect);
    }

    #[test]
    fn round_trip() {
        let net = Network::init(&[5, 4, 3], &mut StreamRng::new(3, "init")).unwrap();
        assert_eq!(decode_fbn1(&encode_fbn1(&net)).unwrap(), net);
    }

    #[test]
    fn wrong_magic_rejected() {
        let net = Network::zeros(&[2, 2]).unwrap();
        let mut bytes = encode_fbn1(&net);
        bytes[3] = b'2';
        assert!(matches!(decode_fbn1(&bytes), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn truncation_rejected_at_every_length() {
        let net = Network::init(&[3, 2, 2], &mut StreamRng::new(1, "init")).unwrap();
        let bytes = encode_fbn1(&net);
        for len in 0..bytes.len() {
            assert!(decode_fbn1(&bytes[..len]).is_err(), "accepted prefix of length {len}");
        }
    }

    #[test]
    fn mismatched_chain_rejected() {
        let a = Network::zeros(&[3, 2]).unwrap();
        let b = Network::zeros(&[4, 2]).unwrap();
        let mut bytes = encode_fbn1(&a);
        bytes[4] = 2;
        bytes.extend_from_slice(&encode_fbn1(&b)[8..]);
        assert!(decode_fbn1(&bytes).is_err());
    }
}
