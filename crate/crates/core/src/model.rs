use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::builders::BuilderConfig;
use crate::circuit::Circuit;
use crate::data::DataKind;
use crate::error::{Error, Result};
use crate::inference::{encode_values, mpe_encode, Evidence};
use crate::nn::{Decoder, DecoderConfig, OutputShape};
use crate::scalar::Scalar;

/// A circuit encoder paired with a neural decoder.
#[derive(Clone, Debug)]
pub struct Apc<T> {
    pub circuit: Circuit<T>,
    pub decoder: Decoder<T>,
    /// Seed of the builder's structural randomness; the same builder
    /// config and seed reproduce the same circuit.
    pub structure_seed: u64,
}

/// Decoder output layout for a dataset kind.
pub fn output_shape(kind: DataKind, cols: usize) -> OutputShape {
    match kind.image_shape() {
        Some((height, width)) => OutputShape::Image { height, width },
        None => OutputShape::Flat { size: cols },
    }
}

impl<T: Scalar> Apc<T> {
    /// Builds the circuit, draws its parameters, and initializes a decoder
    /// whose output matches the circuit's data variables. All randomness
    /// derives from `seed`.
    pub fn new(builder: &BuilderConfig, decoder: DecoderConfig, output: OutputShape, seed: u64) -> Result<Self> {
        let mut circuit: Circuit<T> = build_structure(builder, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
        let rng = &mut rng;
        if output.size() != circuit.num_data() {
            return Err(Error::Config(format!(
                "decoder produces {} values but the circuit has {} data variables",
                output.size(),
                circuit.num_data()
            )));
        }
        circuit.init_params(rng);
        let decoder = Decoder::new(decoder, circuit.num_embedding(), output, rng)?;
        Ok(Self {
            circuit,
            decoder,
            structure_seed: seed,
        })
    }

    pub fn embedding_dim(&self) -> usize {
        self.circuit.num_embedding()
    }

    /// Sampled embeddings `[rows, embedding_dim]`.
    pub fn encode<R: Rng + ?Sized>(&self, e: &Evidence<T>, rng: &mut R) -> Result<Vec<T>> {
        Ok(encode_values(&self.circuit, e, rng)?.z)
    }

    /// Most probable embeddings `[rows, embedding_dim]`.
    pub fn encode_mpe(&self, e: &Evidence<T>) -> Result<Vec<T>> {
        Ok(mpe_encode(&self.circuit, e)?.into_data())
    }

    /// Decoded reconstructions in `[0, 1]`, `[rows, num_data]`.
    pub fn reconstruct<R: Rng + ?Sized>(&self, e: &Evidence<T>, rng: &mut R) -> Result<Vec<T>> {
        self.decoder.decode_values(&self.encode(e, rng)?)
    }
}

/// The circuit a builder produces for `seed`, with parameters unset.
pub fn build_structure<T: Scalar>(builder: &BuilderConfig, seed: u64) -> Result<Circuit<T>> {
    builder.build(&mut ChaCha8Rng::seed_from_u64(seed))
}
