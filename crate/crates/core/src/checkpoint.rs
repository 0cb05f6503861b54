//! Binary checkpoints.
//!
//! Layout (little endian):
//!
//! ```text
//! magic  b"SYMVECCK"
//! u32    format version
//! u32    header length, then that many bytes of JSON header
//! u32    tensor count, then per tensor:
//!        u32 name length, name (UTF-8), u32 ndim, u64 dims[ndim], f64 data[prod(dims)]
//! ```
//!
//! The header holds hyperparameters, counters and RNG positions; every
//! floating-point array (parameters, Adam moments, chain states,
//! standardization) is a named tensor. There are no timestamps, so saving
//! the same state twice gives identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{BatchState, Standardization};
use crate::error::{Error, Result};
use crate::nets::Activation;
use crate::nets::{AmortizedPosterior, Decoder, EbmPrior, Mlp, Model, ModelSpec};
use crate::rng::{domain, stream_at};
use crate::sampler::PersistentChains;
use crate::tensor::Tensor;
use crate::trainer::{Adam, Optimizers, TrainConfig, TrainState};

pub const MAGIC: &[u8; 8] = b"SYMVECCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub state: TrainState,
    pub batches: Option<BatchState>,
    pub standardization: Option<Standardization>,
    /// Caller-defined metadata (e.g. the resolved run configuration).
    pub extra: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    spec: ModelSpec,
    config: TrainConfig,
    seed: u64,
    iteration: u64,
    nonfinite_streak: usize,
    rng_word_pos: String,
    chain_seed: u64,
    chain_dim: usize,
    chain_step_size: f64,
    chain_steps: usize,
    chain_word_pos: Vec<String>,
    adam_steps: BTreeMap<String, u64>,
    batches: Option<BatchState>,
    standardized: bool,
    extra: serde_json::Value,
}

fn put_net(out: &mut Vec<(String, Tensor)>, prefix: &str, net: &Mlp) {
    for (i, t) in net.params().into_iter().enumerate() {
        out.push((format!("{prefix}.{i}"), Tensor::new(t.shape().to_vec(), t.data().to_vec()).expect("valid tensor")));
    }
}

fn put_adam(out: &mut Vec<(String, Tensor)>, name: &str, adam: &Adam) {
    for (kind, moments) in [("m", &adam.m), ("v", &adam.v)] {
        for (i, v) in moments.iter().enumerate() {
            out.push((format!("adam.{name}.{kind}.{i}"), Tensor::vector(v.clone()).expect("finite moments")));
        }
    }
}

fn tensors_of(ck: &Checkpoint) -> Vec<(String, Tensor)> {
    let st = &ck.state;
    let mut out = Vec::new();
    put_net(&mut out, "prior", st.model.prior.net());
    put_net(&mut out, "encoder", st.model.encoder.net());
    put_net(&mut out, "decoder", st.model.decoder.net());
    for (name, adam) in st.optim.named() {
        put_adam(&mut out, name, adam);
    }
    let (n, d) = (st.chains.len(), st.chains.dim());
    out.push(("chains.states".into(), Tensor::new(vec![n, d], st.chains.states().to_vec()).expect("finite chains")));
    if let Some(s) = &ck.standardization {
        out.push(("standardization.mean".into(), Tensor::vector(s.mean.clone()).expect("finite")));
        out.push(("standardization.std".into(), Tensor::vector(s.std.clone()).expect("finite")));
    }
    out
}

pub fn to_bytes(ck: &Checkpoint) -> Result<Vec<u8>> {
    let st = &ck.state;
    let header = Header {
        spec: st.model.spec(),
        config: st.config.clone(),
        seed: st.seed,
        iteration: st.iteration,
        nonfinite_streak: st.nonfinite_streak,
        rng_word_pos: st.rng.get_word_pos().to_string(),
        chain_seed: st.chains.seed(),
        chain_dim: st.chains.dim(),
        chain_step_size: st.chains.step_size,
        chain_steps: st.chains.steps_per_update,
        chain_word_pos: st.chains.word_positions().iter().map(u128::to_string).collect(),
        adam_steps: st.optim.named().iter().map(|(n, a)| (n.to_string(), a.step)).collect(),
        batches: ck.batches,
        standardized: ck.standardization.is_some(),
        extra: ck.extra.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let tensors = tensors_of(ck);
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in &tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &dim in t.shape() {
            buf.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Reads only the format version; fails if the magic is wrong.
pub fn peek_version(bytes: &[u8]) -> Result<u32> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    r.u32()
}

fn take_net(tensors: &mut BTreeMap<String, Tensor>, prefix: &str, layers: usize, act: Activation) -> Result<Mlp> {
    let params = (0..2 * layers)
        .map(|i| {
            tensors
                .remove(&format!("{prefix}.{i}"))
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {prefix}.{i}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Mlp::from_params(act, params)
}

fn take_vec(tensors: &mut BTreeMap<String, Tensor>, name: &str) -> Result<Vec<f64>> {
    tensors.remove(name).map(Tensor::into_data).ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
}

fn parse_u128(s: &str) -> Result<u128> {
    s.parse().map_err(|_| Error::Checkpoint(format!("bad word position {s:?}")))
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let version = peek_version(bytes)?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch { found: version, expected: FORMAT_VERSION });
    }
    let mut r = Reader { buf: bytes, pos: 12 };
    let hlen = r.u32()? as usize;
    let header: Header = serde_json::from_slice(r.take(hlen)?).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let count = r.u32()?;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let nlen = r.u32()? as usize;
        let name = String::from_utf8(r.take(nlen)?.to_vec()).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| Ok(r.u64()? as usize)).collect::<Result<Vec<_>>>()?;
        let len = shape.iter().product::<usize>();
        let raw = r.take(len.checked_mul(8).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
        let data = raw.chunks(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        tensors.insert(name, Tensor::new(shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after tensors".into()));
    }

    let spec = header.spec;
    spec.validate()?;
    let depth = |hidden: &[usize]| hidden.len() + 1;
    let prior = EbmPrior::from_net(take_net(&mut tensors, "prior", depth(&spec.prior_hidden), Activation::Tanh)?);
    let encoder = AmortizedPosterior::from_net(take_net(
        &mut tensors,
        "encoder",
        depth(&spec.encoder_hidden),
        Activation::Relu,
    )?)?;
    let decoder = Decoder::from_net(
        spec.decoder,
        take_net(&mut tensors, "decoder", depth(&spec.decoder_hidden), Activation::Relu)?,
    )?;
    let model = Model { prior, encoder, decoder };
    if model.spec() != spec {
        return Err(Error::Checkpoint("network shapes disagree with the stored architecture".into()));
    }

    let mut optim = Optimizers::new(&model, header.config.adam);
    for (name, adam) in optim.named_mut() {
        adam.step =
            *header.adam_steps.get(name).ok_or_else(|| Error::Checkpoint(format!("missing Adam step for {name}")))?;
        for i in 0..adam.m.len() {
            let m = take_vec(&mut tensors, &format!("adam.{name}.m.{i}"))?;
            let v = take_vec(&mut tensors, &format!("adam.{name}.v.{i}"))?;
            if m.len() != adam.m[i].len() || v.len() != adam.v[i].len() {
                return Err(Error::Checkpoint(format!("Adam moment {name}.{i} has the wrong size")));
            }
            adam.m[i] = m;
            adam.v[i] = v;
        }
    }

    let word_pos = header.chain_word_pos.iter().map(|s| parse_u128(s)).collect::<Result<Vec<_>>>()?;
    let chains = PersistentChains::from_parts(
        header.chain_dim,
        take_vec(&mut tensors, "chains.states")?,
        header.chain_seed,
        word_pos,
        header.chain_step_size,
        header.chain_steps,
    )?;
    let standardization = if header.standardized {
        Some(Standardization {
            mean: take_vec(&mut tensors, "standardization.mean")?,
            std: take_vec(&mut tensors, "standardization.std")?,
        })
    } else {
        None
    };
    if let Some(name) = tensors.keys().next() {
        return Err(Error::Checkpoint(format!("unexpected tensor {name}")));
    }
    let state = TrainState {
        seed: header.seed,
        rng: stream_at(header.seed, domain::TRAINER, 0, parse_u128(&header.rng_word_pos)?),
        config: header.config,
        model,
        chains,
        optim,
        iteration: header.iteration,
        nonfinite_streak: header.nonfinite_streak,
        capture: false,
    };
    Ok(Checkpoint { state, batches: header.batches, standardization, extra: header.extra })
}

/// Writes atomically (temporary file, then rename).
pub fn save(path: &Path, ck: &Checkpoint) -> Result<()> {
    let bytes = to_bytes(ck)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &bytes).map_err(|e| Error::Io(format!("{}: {e}", tmp.display())))?;
    fs::rename(&tmp, path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    from_bytes(&bytes)
}
