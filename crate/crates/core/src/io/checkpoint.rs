use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::write_atomic;
use crate::autodiff::Array;
use crate::builders::BuilderConfig;
use crate::circuit::{Circuit, CircuitMeta, LeafFamily, Unit, VarRole};
use crate::error::{Error, Result};
use crate::model::{build_structure, Apc};
use crate::nn::{Decoder, DecoderConfig, EncoderConfig, OutputShape, Vae};
use crate::scalar::Scalar;

const MAGIC: &str = "APC-CHECKPOINT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub name: String,
    pub shape: Vec<usize>,
    /// Number of `f64` values.
    pub len: usize,
    /// Lower-case hex SHA-256 of the block's little-endian bytes.
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelHeader {
    Apc {
        builder: BuilderConfig,
        structure_seed: u64,
        meta: CircuitMeta,
        roles: Vec<VarRole>,
        /// One line per unit, in topological order.
        units: Vec<String>,
        decoder: DecoderConfig,
        output: OutputShape,
    },
    Vae {
        encoder: EncoderConfig,
        decoder: DecoderConfig,
        embedding_dim: usize,
        output: OutputShape,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub model: ModelHeader,
    pub blocks: Vec<BlockInfo>,
}

/// A model restored from disk.
#[derive(Clone, Debug)]
pub enum Checkpoint<T> {
    Apc(Apc<T>),
    Vae(Vae<T>),
}

impl<T> Checkpoint<T> {
    pub fn kind(&self) -> &'static str {
        match self {
            Checkpoint::Apc(_) => "apc",
            Checkpoint::Vae(_) => "vae",
        }
    }
}

/// Compact text form of a unit used to detect structural drift.
pub fn unit_line(u: &Unit) -> String {
    let list = |c: &[usize]| c.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
    match u {
        Unit::Input { var, family } => match family {
            LeafFamily::Bernoulli => format!("in {var} bernoulli"),
            LeafFamily::Binomial { n } => format!("in {var} binomial {n}"),
            LeafFamily::Gaussian => format!("in {var} gaussian"),
        },
        Unit::Sum { children } => format!("sum {}", list(children)),
        Unit::Product { children } => format!("prod {}", list(children)),
    }
}

fn unit_table<T: Scalar>(c: &Circuit<T>) -> Vec<String> {
    c.units().iter().map(unit_line).collect()
}

fn digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

struct Writer {
    blocks: Vec<BlockInfo>,
    payload: Vec<u8>,
}

impl Writer {
    fn block<T: Scalar>(&mut self, name: String, shape: Vec<usize>, values: &[T]) {
        let start = self.payload.len();
        for v in values {
            self.payload.extend(v.f64().to_le_bytes());
        }
        self.blocks.push(BlockInfo {
            name,
            shape,
            len: values.len(),
            sha256: digest(&self.payload[start..]),
        });
    }

    fn arrays<T: Scalar>(&mut self, prefix: &str, tensors: &[Array<T>]) {
        for (i, a) in tensors.iter().enumerate() {
            self.block(format!("{prefix}.{i}"), a.shape().to_vec(), a.data());
        }
    }
}

fn encode(model: ModelHeader, w: Writer) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        version: CHECKPOINT_VERSION,
        model,
        blocks: w.blocks,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut out = format!("{MAGIC} {CHECKPOINT_VERSION}\n{}\n", json.len()).into_bytes();
    out.extend(json);
    out.extend(w.payload);
    Ok(out)
}

pub fn apc_checkpoint_bytes<T: Scalar>(m: &Apc<T>, builder: &BuilderConfig) -> Result<Vec<u8>> {
    let mut w = Writer {
        blocks: Vec::new(),
        payload: Vec::new(),
    };
    let p = &m.circuit.params;
    w.block("circuit.sum_logits".into(), vec![p.sum_logits.len()], &p.sum_logits);
    w.block("circuit.leaf".into(), vec![p.leaf.len()], &p.leaf);
    w.arrays("decoder", &m.decoder.params().tensors);
    encode(
        ModelHeader::Apc {
            builder: builder.clone(),
            structure_seed: m.structure_seed,
            meta: m.circuit.meta.clone(),
            roles: m.circuit.roles().to_vec(),
            units: unit_table(&m.circuit),
            decoder: m.decoder.config.clone(),
            output: m.decoder.output,
        },
        w,
    )
}

pub fn vae_checkpoint_bytes<T: Scalar>(v: &Vae<T>) -> Result<Vec<u8>> {
    let mut w = Writer {
        blocks: Vec::new(),
        payload: Vec::new(),
    };
    w.arrays("encoder", &v.encoder.params.tensors);
    w.arrays("decoder", &v.decoder.params().tensors);
    encode(
        ModelHeader::Vae {
            encoder: EncoderConfig {
                hidden: v.encoder.dims[1..v.encoder.dims.len() - 1].to_vec(),
                negative_slope: v.encoder.negative_slope,
            },
            decoder: v.decoder.config.clone(),
            embedding_dim: v.embedding_dim(),
            output: v.decoder.output,
        },
        w,
    )
}

/// Writes an APC checkpoint atomically. `builder` must be the configuration
/// the circuit was built from.
pub fn save_apc<T: Scalar>(path: &Path, m: &Apc<T>, builder: &BuilderConfig) -> Result<()> {
    write_atomic(path, &apc_checkpoint_bytes(m, builder)?)
}

pub fn save_vae<T: Scalar>(path: &Path, v: &Vae<T>) -> Result<()> {
    write_atomic(path, &vae_checkpoint_bytes(v)?)
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn next_line<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    let rest = &bytes[*pos..];
    let end = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("truncated checkpoint preamble"))?;
    *pos += end + 1;
    std::str::from_utf8(&rest[..end]).map_err(|_| bad("checkpoint preamble is not text"))
}

/// Splits a checkpoint into its header and verified blocks.
pub fn read_header(bytes: &[u8]) -> Result<(CheckpointHeader, Vec<Vec<f64>>)> {
    let mut pos = 0;
    let first = next_line(bytes, &mut pos)?;
    let version = first
        .strip_prefix(MAGIC)
        .map(str::trim)
        .ok_or_else(|| bad("not an APC checkpoint"))?
        .parse::<u32>()
        .map_err(|_| bad(format!("malformed version line '{first}'")))?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!(
            "unsupported checkpoint version {version}; this build reads version {CHECKPOINT_VERSION}"
        )));
    }
    let len: usize = next_line(bytes, &mut pos)?
        .parse()
        .map_err(|_| bad("malformed header length"))?;
    let json = bytes
        .get(pos..pos + len)
        .ok_or_else(|| bad("truncated checkpoint header"))?;
    pos += len;
    let header: CheckpointHeader = serde_json::from_slice(json).map_err(|e| bad(format!("header: {e}")))?;
    if header.version != version {
        return Err(bad(format!(
            "header version {} disagrees with preamble {version}",
            header.version
        )));
    }
    let mut blocks = Vec::with_capacity(header.blocks.len());
    for b in &header.blocks {
        let n = b.len.checked_mul(8).ok_or_else(|| bad("block size overflows"))?;
        let raw = bytes
            .get(pos..pos + n)
            .ok_or_else(|| bad(format!("block '{}' is truncated", b.name)))?;
        pos += n;
        if digest(raw) != b.sha256 {
            return Err(bad(format!("checksum mismatch in block '{}'", b.name)));
        }
        if b.shape.iter().product::<usize>() != b.len {
            return Err(bad(format!(
                "block '{}' shape {:?} holds {} values",
                b.name, b.shape, b.len
            )));
        }
        blocks.push(
            raw.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
        );
    }
    if pos != bytes.len() {
        return Err(bad(format!(
            "{} trailing bytes after the last block",
            bytes.len() - pos
        )));
    }
    Ok((header, blocks))
}

struct Blocks<'a> {
    info: &'a [BlockInfo],
    data: Vec<Vec<f64>>,
}

impl Blocks<'_> {
    fn take<T: Scalar>(&mut self, name: &str, shape: &[usize]) -> Result<Array<T>> {
        let i = self
            .info
            .iter()
            .position(|b| b.name == name)
            .ok_or_else(|| bad(format!("missing block '{name}'")))?;
        if self.info[i].shape != shape {
            return Err(bad(format!(
                "block '{name}' has shape {:?}, the model expects {shape:?}",
                self.info[i].shape
            )));
        }
        let values = std::mem::take(&mut self.data[i]);
        Array::new(shape.to_vec(), values.into_iter().map(T::c).collect())
    }

    fn fill<T: Scalar>(&mut self, prefix: &str, tensors: &mut [Array<T>]) -> Result<()> {
        for (i, t) in tensors.iter_mut().enumerate() {
            let shape = t.shape().to_vec();
            *t = self.take(&format!("{prefix}.{i}"), &shape)?;
        }
        Ok(())
    }

    fn finish(&self, used: usize) -> Result<()> {
        if used != self.info.len() {
            return Err(bad(format!("{} blocks present, {used} used", self.info.len())));
        }
        Ok(())
    }
}

fn placeholder_rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0)
}

/// Restores a model, rebuilding the circuit from its builder config and
/// refusing the file if the rebuilt structure differs from the stored one.
pub fn checkpoint_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let (header, data) = read_header(bytes)?;
    let mut blocks = Blocks {
        info: &header.blocks,
        data,
    };
    match &header.model {
        ModelHeader::Apc {
            builder,
            structure_seed,
            meta,
            roles,
            units,
            decoder,
            output,
        } => {
            let mut circuit: Circuit<T> = build_structure(builder, *structure_seed)?;
            if unit_table(&circuit) != *units || circuit.roles() != roles.as_slice() {
                return Err(bad(
                    "builder mismatch: the stored builder config no longer produces the stored circuit",
                ));
            }
            circuit.init_params(&mut placeholder_rng());
            circuit.meta = meta.clone();
            let ns = circuit.params.sum_logits.len();
            let nl = circuit.params.leaf.len();
            circuit.params.sum_logits = blocks.take::<T>("circuit.sum_logits", &[ns])?.into_data();
            circuit.params.leaf = blocks.take::<T>("circuit.leaf", &[nl])?.into_data();
            let mut dec = Decoder::new(
                decoder.clone(),
                circuit.num_embedding(),
                *output,
                &mut placeholder_rng(),
            )?;
            let n = dec.params().tensors.len();
            blocks.fill("decoder", &mut dec.params_mut().tensors)?;
            blocks.finish(2 + n)?;
            Ok(Checkpoint::Apc(Apc {
                circuit,
                decoder: dec,
                structure_seed: *structure_seed,
            }))
        }
        ModelHeader::Vae {
            encoder,
            decoder,
            embedding_dim,
            output,
        } => {
            let mut v = Vae::new(
                encoder,
                decoder.clone(),
                *embedding_dim,
                *output,
                &mut placeholder_rng(),
            )?;
            let ne = v.encoder.params.tensors.len();
            let nd = v.decoder.params().tensors.len();
            blocks.fill("encoder", &mut v.encoder.params.tensors)?;
            blocks.fill("decoder", &mut v.decoder.params_mut().tensors)?;
            blocks.finish(ne + nd)?;
            Ok(Checkpoint::Vae(v))
        }
    }
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = std::fs::read(path).map_err(|e| bad(format!("cannot read {}: {e}", path.display())))?;
    checkpoint_from_bytes(&bytes)
}
