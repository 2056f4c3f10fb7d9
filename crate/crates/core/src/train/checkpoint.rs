//! Checkpoint file layout (all integers little-endian):
//!
//! ```text
//! "VTCK" | u32 version | [32] fingerprint | u64 body_len | body | [32] sha256(body)
//! body   = u32 header_len | header (UTF-8 JSON) | u32 n_tensors | tensor*
//! tensor = u16 name_len | name | u8 ndim | u64 dim* | f64 value*
//! ```
//!
//! Tensor names are `param/<name>`, `buffer/<name>`, `adam.m/<name>` and
//! `adam.v/<name>`. The fingerprint is the sha256 of the training config and
//! attribute registry; it sits outside the checksummed body so a mismatch is
//! reported as such rather than as corruption.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::TrainConfig;
use super::optim::AdamW;
use crate::astp::{AstpConfig, AstpParams};
use crate::config::{hex, render_kv};
use crate::dataset::AttributeRegistry;
use crate::diffnet::{DiffNetConfig, DiffNetParams};
use crate::error::{Error, Result};
use crate::model::VtadModel;
use crate::nn::Module;

const MAGIC: &[u8; 4] = b"VTCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    /// Descriptor names of the registry the model was trained against.
    pub registry: Vec<String>,
    pub fingerprint: [u8; 32],
    /// Set when a fingerprint mismatch was overridden on load.
    pub forced: bool,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps (= scheduler position).
    pub step: usize,
    pub model: VtadModel,
    pub optimizer: AdamW,
}

impl Checkpoint {
    pub fn fingerprint_hex(&self) -> String {
        hex(&self.fingerprint)
    }
}

/// Which checks may be overridden on load.
#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Fingerprint the caller's own config produces.
    pub expected: Option<[u8; 32]>,
    pub force: bool,
}

pub fn config_fingerprint(config: &TrainConfig, registry: &AttributeRegistry) -> [u8; 32] {
    fingerprint_of(config, registry.names())
}

fn fingerprint_of<S: AsRef<str>>(config: &TrainConfig, names: &[S]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"train-config\n");
    h.update(render_kv(&config.to_kv()).as_bytes());
    h.update(b"registry\n");
    for n in names {
        h.update(n.as_ref().as_bytes());
        h.update(b"\n");
    }
    h.finalize().into()
}

#[derive(Serialize, Deserialize)]
struct AstpHeader {
    dim: usize,
    heads: usize,
    hidden: usize,
    dropout: f64,
    eps: f64,
}

#[derive(Serialize, Deserialize)]
struct DiffNetHeader {
    variant: String,
    input_dim: usize,
    widths: Vec<usize>,
    head_widths: Vec<usize>,
    outputs: usize,
    dropout: f64,
    se_reduction: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    registry: Vec<String>,
    epoch: usize,
    step: usize,
    optimizer_t: u64,
    astp: AstpHeader,
    diffnet: DiffNetHeader,
}

pub fn encode_checkpoint(c: &Checkpoint) -> Vec<u8> {
    let a = &c.model.astp.config;
    let d = &c.model.diffnet.config;
    let header = Header {
        config: c.config.clone(),
        registry: c.registry.clone(),
        epoch: c.epoch,
        step: c.step,
        optimizer_t: c.optimizer.t,
        astp: AstpHeader {
            dim: a.dim,
            heads: a.heads,
            hidden: a.hidden,
            dropout: a.dropout,
            eps: a.eps,
        },
        diffnet: DiffNetHeader {
            variant: d.variant.to_string(),
            input_dim: d.input_dim,
            widths: d.widths.clone(),
            head_widths: d.head_widths.clone(),
            outputs: d.outputs,
            dropout: d.dropout,
            se_reduction: d.se_reduction,
        },
    };
    let json = serde_json::to_vec(&header).expect("header serialises");

    let mut tensors: Vec<(String, Vec<usize>, &[f64])> = Vec::new();
    let params = c.model.tensors();
    for t in &params {
        tensors.push((format!("param/{}", t.name), t.shape.clone(), t.data));
    }
    for t in c.model.buffers() {
        tensors.push((format!("buffer/{}", t.name), t.shape, t.data));
    }
    for (prefix, flat) in [("adam.m", &c.optimizer.m), ("adam.v", &c.optimizer.v)] {
        let mut off = 0;
        for t in &params {
            let n = t.data.len();
            tensors.push((format!("{prefix}/{}", t.name), t.shape.clone(), &flat[off..off + n]));
            off += n;
        }
    }

    let mut body = Vec::new();
    body.extend_from_slice(&(json.len() as u32).to_le_bytes());
    body.extend_from_slice(&json);
    body.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, shape, data) in tensors {
        body.extend_from_slice(&(name.len() as u16).to_le_bytes());
        body.extend_from_slice(name.as_bytes());
        body.push(shape.len() as u8);
        for d in shape {
            body.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in data {
            body.extend_from_slice(&v.to_le_bytes());
        }
    }

    let mut out = Vec::with_capacity(body.len() + 80);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&c.fingerprint);
    out.extend_from_slice(&(body.len() as u64).to_le_bytes());
    out.extend_from_slice(&body);
    out.extend_from_slice(&Sha256::digest(&body));
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::format(self.path, "truncated checkpoint"));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path, opts: LoadOptions) -> Result<Checkpoint> {
    let fail = |why: String| Error::format(path, why);
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4)? != MAGIC {
        return Err(fail("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(fail(format!("unsupported checkpoint version {version}")));
    }
    let stored: [u8; 32] = r.take(32)?.try_into().unwrap();
    let body_len = r.u64()? as usize;
    let body = r.take(body_len)?;
    let sum = r.take(32)?;
    if r.pos != bytes.len() {
        return Err(fail("trailing bytes after checkpoint".into()));
    }
    if Sha256::digest(body).as_slice() != sum {
        return Err(fail("checksum mismatch (file corrupted)".into()));
    }

    let mut b = Reader {
        bytes: body,
        pos: 0,
        path,
    };
    let hlen = b.u32()? as usize;
    let header: Header = serde_json::from_slice(b.take(hlen)?).map_err(|e| fail(format!("bad header: {e}")))?;

    let mut forced = false;
    let own = fingerprint_of(&header.config, &header.registry);
    if own != stored {
        if !opts.force {
            return Err(fail("fingerprint does not match the stored configuration".into()));
        }
        forced = true;
    }
    if let Some(expected) = opts.expected {
        if expected != stored {
            if !opts.force {
                return Err(fail(
                    "checkpoint fingerprint differs from the current configuration".into(),
                ));
            }
            forced = true;
        }
    }

    let n = b.u32()? as usize;
    let mut tensors: BTreeMap<String, (Vec<usize>, Vec<f64>)> = BTreeMap::new();
    for _ in 0..n {
        let name_len = b.u16()? as usize;
        let name = std::str::from_utf8(b.take(name_len)?)
            .map_err(|_| fail("tensor name is not UTF-8".into()))?
            .to_owned();
        let ndim = b.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(b.u64()? as usize);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&c| c <= body.len() / 8)
            .ok_or_else(|| fail(format!("tensor {name} has an impossible shape")))?;
        let raw = b.take(count * 8)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if tensors.insert(name.clone(), (shape, data)).is_some() {
            return Err(fail(format!("duplicate tensor {name}")));
        }
    }
    if b.pos != body.len() {
        return Err(fail("trailing bytes in checkpoint body".into()));
    }

    let a = &header.astp;
    let astp_cfg = AstpConfig {
        dim: a.dim,
        heads: a.heads,
        hidden: a.hidden,
        dropout: a.dropout,
        eps: a.eps,
    };
    astp_cfg.validate().map_err(|e| fail(e.to_string()))?;
    let d = &header.diffnet;
    let diff_cfg = DiffNetConfig {
        variant: d.variant.parse().map_err(|e: Error| fail(e.to_string()))?,
        input_dim: d.input_dim,
        widths: d.widths.clone(),
        head_widths: d.head_widths.clone(),
        outputs: d.outputs,
        dropout: d.dropout,
        se_reduction: d.se_reduction,
    };
    diff_cfg.validate().map_err(|e| fail(e.to_string()))?;
    let shell = DiffNetParams::init(diff_cfg, 0)?;
    let mut model =
        VtadModel::from_parts(AstpParams::zeros(astp_cfg), shell.zeros_like()).map_err(|e| fail(e.to_string()))?;

    let mut take = |name: String, shape: &[usize], dst: &mut [f64]| -> Result<()> {
        let (s, v) = tensors
            .remove(&name)
            .ok_or_else(|| fail(format!("missing tensor {name}")))?;
        if s != shape {
            return Err(fail(format!("tensor {name} has shape {s:?}, expected {shape:?}")));
        }
        dst.copy_from_slice(&v);
        Ok(())
    };
    let shapes: Vec<(String, Vec<usize>)> = model.tensors().into_iter().map(|t| (t.name, t.shape)).collect();
    for (t, (_, shape)) in model.tensors_mut().into_iter().zip(&shapes) {
        take(format!("param/{}", t.name), shape, t.data)?;
    }
    let bshapes: Vec<Vec<usize>> = model.buffers().into_iter().map(|t| t.shape).collect();
    for (t, shape) in model.buffers_mut().into_iter().zip(&bshapes) {
        take(format!("buffer/{}", t.name), shape, t.data)?;
    }
    let total: usize = model.num_parameters();
    let mut optimizer = AdamW {
        weight_decay: header.config.weight_decay,
        t: header.optimizer_t,
        m: vec![0.0; total],
        v: vec![0.0; total],
    };
    for (prefix, flat) in [("adam.m", &mut optimizer.m), ("adam.v", &mut optimizer.v)] {
        let mut off = 0;
        for (name, shape) in &shapes {
            let n: usize = shape.iter().product();
            take(format!("{prefix}/{name}"), shape, &mut flat[off..off + n])?;
            off += n;
        }
    }
    if let Some(extra) = tensors.keys().next() {
        return Err(fail(format!("unexpected tensor {extra}")));
    }

    Ok(Checkpoint {
        config: header.config,
        registry: header.registry,
        fingerprint: stored,
        forced,
        epoch: header.epoch,
        step: header.step,
        model,
        optimizer,
    })
}

pub fn save_checkpoint(c: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(c)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path, opts: LoadOptions) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path, opts)
}
