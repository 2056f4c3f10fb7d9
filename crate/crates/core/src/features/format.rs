//! Layer-stack file format (little-endian):
//!
//! ```text
//! magic        4 bytes  "LSTK"
//! version      u32      1
//! num_layers   u32
//! dim          u32
//! id_len       u32
//! id           id_len bytes, UTF-8
//! values       num_layers * dim f32, layer-major
//! ```
//!
//! The file must end exactly after the payload.

use std::fs;
use std::path::Path;

use super::LayerStack;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"LSTK";
pub const VERSION: u32 = 1;

pub fn encode(stack: &LayerStack) -> Vec<u8> {
    let id = stack.utterance_id().as_bytes();
    let mut out = Vec::with_capacity(20 + id.len() + 4 * stack.values().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(stack.num_layers() as u32).to_le_bytes());
    out.extend_from_slice(&(stack.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(id.len() as u32).to_le_bytes());
    out.extend_from_slice(id);
    for v in stack.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.buf.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<LayerStack> {
    let bad = |reason: &str| Error::format(path, reason);
    let mut cur = Cursor { buf: bytes, pos: 0 };
    if cur.take(4) != Some(MAGIC.as_slice()) {
        return Err(bad("bad magic"));
    }
    let version = cur.u32().ok_or_else(|| bad("truncated header"))?;
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let layers = cur.u32().ok_or_else(|| bad("truncated header"))? as usize;
    let dim = cur.u32().ok_or_else(|| bad("truncated header"))? as usize;
    let id_len = cur.u32().ok_or_else(|| bad("truncated header"))? as usize;
    let id = cur.take(id_len).ok_or_else(|| bad("truncated utterance id"))?;
    let id = std::str::from_utf8(id).map_err(|_| bad("utterance id is not UTF-8"))?;
    let count = layers.checked_mul(dim).ok_or_else(|| bad("shape overflows"))?;
    let expected = count.checked_mul(4).ok_or_else(|| bad("shape overflows"))?;
    let remaining = bytes.len() - cur.pos;
    if remaining != expected {
        return Err(bad(&format!(
            "header declares {layers}x{dim} ({expected} payload bytes) but {remaining} bytes follow"
        )));
    }
    let payload = cur.take(expected).expect("length checked");
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    LayerStack::new(id, layers, dim, values).map_err(|e| bad(&e.to_string()))
}

pub fn write_layer_stack(stack: &LayerStack, path: &Path) -> Result<()> {
    fs::write(path, encode(stack)).map_err(|e| Error::io(path, e))
}

pub fn read_layer_stack(path: &Path) -> Result<LayerStack> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> LayerStack {
        let values = (0..6).map(|i| i as f32 * 0.25 - 0.5).collect();
        LayerStack::new("spk1/utt_007", 2, 3, values).unwrap()
    }

    #[test]
    fn header_layout_is_fixed() {
        let bytes = encode(&sample());
        assert_eq!(&bytes[..4], b"LSTK");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &3u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &12u32.to_le_bytes());
        assert_eq!(&bytes[20..32], b"spk1/utt_007");
        assert_eq!(bytes.len(), 32 + 6 * 4);
        assert_eq!(&bytes[32..36], &(-0.5f32).to_le_bytes());
    }

    #[test]
    fn every_truncation_fails_closed() {
        let bytes = encode(&sample());
        let p = Path::new("mem");
        for n in 0..bytes.len() {
            assert!(matches!(decode(&bytes[..n], p), Err(Error::Format { .. })), "len {n}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode(&extra, p).is_err());
    }

    #[test]
    fn short_payload_for_declared_shape_is_rejected() {
        let mut bytes = encode(&sample());
        // claim 25 layers while only 6 values follow
        bytes[8..12].copy_from_slice(&25u32.to_le_bytes());
        let err = decode(&bytes, Path::new("mem")).unwrap_err();
        assert!(err.to_string().contains("declares 25x3"), "{err}");
    }

    #[test]
    fn bad_magic_and_version_are_rejected() {
        let mut bytes = encode(&sample());
        bytes[0] = b'X';
        assert!(decode(&bytes, Path::new("mem")).is_err());
        let mut bytes = encode(&sample());
        bytes[4] = 2;
        assert!(decode(&bytes, Path::new("mem")).is_err());
    }

    #[test]
    fn non_finite_payload_is_rejected() {
        let mut bytes = encode(&sample());
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(decode(&bytes, Path::new("mem")).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(
            layers in 1usize..6,
            dim in 1usize..9,
            id in "[a-zA-Z0-9_/é-]{0,20}",
            seed in any::<u32>(),
        ) {
            let values: Vec<f32> = (0..layers * dim)
                .map(|i| f32::from_bits((seed.wrapping_mul(2654435761).wrapping_add(i as u32 * 40503)) & 0x7f7f_ffff) * if i % 2 == 0 { 1.0 } else { -1.0 })
                .collect();
            let stack = LayerStack::new(&id, layers, dim, values).unwrap();
            let back = decode(&encode(&stack), Path::new("mem")).unwrap();
            prop_assert_eq!(back.utterance_id(), stack.utterance_id());
            let a: Vec<u32> = back.values().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = stack.values().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
