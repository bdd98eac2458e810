//! Trainable networks: the building-block embedder, the inter-block network
//! and its training loop.

mod egnn;
mod layers;
mod mcnet;
mod params;
mod train;

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::crystal::MolecularCrystal;
use crate::descriptors::{descriptors, DescriptorScaler, DescriptorVector, MolecularGraph};
use crate::elements::RadiiTable;
use crate::error::Result;
use crate::flowmatch::{FlowSample, Prediction};

pub use egnn::{BlockType, Egnn, EgnnConfig};
pub use layers::{fourier_embed, rbf_embed, time_embed, Linear, Mlp};
pub use mcnet::{predictions, so3_rel_features, tape_loss, CrystalInput, McNet, McNetConfig, Outputs};
pub use params::ParamStore;
pub use train::{
    smoothed, AdamState, Checkpoint, TrainConfig, TrainItem, Trainer, CHECKPOINT_VERSION,
};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub egnn: EgnnConfig,
    pub mcnet: McNetConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.egnn.validate()?;
        self.mcnet.validate()
    }
}

/// Embedder, inter-block network, their parameters and the descriptor
/// standardization they were trained with.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub scaler: DescriptorScaler,
    pub egnn: Egnn,
    pub mcnet: McNet,
}

impl Model {
    pub fn new(config: &ModelConfig, scaler: DescriptorScaler, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let egnn = Egnn::new(&config.egnn, &mut params, &mut rng);
        let mcnet = McNet::new(&config.mcnet, config.egnn.output_dim(), &mut params, &mut rng);
        Ok(Self {
            config: config.clone(),
            params,
            scaler,
            egnn,
            mcnet,
        })
    }

    /// Rebuilds the layout for `config` and installs `params`.
    pub fn from_parts(config: &ModelConfig, params: &ParamStore, scaler: DescriptorScaler) -> Result<Self> {
        let mut m = Self::new(config, scaler, 0)?;
        m.params.load_from(params)?;
        Ok(m)
    }

    /// Embeds the molecule types of each crystal and gathers one row per block.
    pub fn embed_blocks(&self, tape: &mut Tape, p: &[Var], batch: &[CrystalInput]) -> Result<Var> {
        let mut types = Vec::new();
        let mut rows = Vec::new();
        for x in batch {
            x.check()?;
            let offset = types.len();
            types.extend(x.types.iter());
            rows.extend(x.block_type.iter().map(|&k| offset + k));
        }
        let emb = self.egnn.forward(tape, p, &types)?;
        Ok(tape.gather(emb, &rows))
    }

    pub fn forward(&self, tape: &mut Tape, p: &[Var], batch: &[CrystalInput]) -> Result<Outputs> {
        let bb = self.embed_blocks(tape, p, batch)?;
        self.mcnet.forward(tape, p, bb, batch)
    }

    /// Inference without gradients.
    pub fn predict(&self, batch: &[CrystalInput]) -> Result<Vec<Prediction>> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let out = self.forward(&mut tape, &p, batch)?;
        predictions(&tape, &out)
    }

    /// Block embeddings `h_BB` for a list of molecule types.
    pub fn embed_types(&self, types: &[BlockType]) -> Result<ndarray::Array2<f64>> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let refs: Vec<&BlockType> = types.iter().collect();
        let v = self.egnn.forward(&mut tape, &p, &refs)?;
        Ok(tape.value(v).clone())
    }
}

/// Molecule types of a crystal, one per distinct species sequence, and the
/// type of every block.
pub fn crystal_types(
    c: &MolecularCrystal,
    scaler: &DescriptorScaler,
    radii: &RadiiTable,
) -> Result<(Vec<BlockType>, Vec<usize>)> {
    let mut index: HashMap<&[String], usize> = HashMap::new();
    let mut types = Vec::new();
    let mut block_type = Vec::with_capacity(c.z());
    for b in &c.blocks {
        let k = match index.get(b.species.as_slice()) {
            Some(&k) => k,
            None => {
                types.push(BlockType::from_block(b, scaler, radii)?);
                index.insert(&b.species, types.len() - 1);
                types.len() - 1
            }
        };
        block_type.push(k);
    }
    Ok((types, block_type))
}

/// Unscaled descriptors of each molecule type, in [`crystal_types`] order.
pub fn type_descriptors(c: &MolecularCrystal, radii: &RadiiTable) -> Result<Vec<DescriptorVector>> {
    let mut seen: Vec<&[String]> = Vec::new();
    let mut out = Vec::new();
    for b in &c.blocks {
        if seen.contains(&b.species.as_slice()) {
            continue;
        }
        seen.push(&b.species);
        out.push(descriptors(&MolecularGraph::from_block(b, radii)?)?);
    }
    Ok(out)
}

/// Convenience: a [`CrystalInput`] borrowing `state` and a prepared item.
pub fn input_for<'a>(state: &'a FlowSample, item: &'a TrainItem) -> CrystalInput<'a> {
    CrystalInput {
        state,
        types: &item.types,
        block_type: &item.block_type,
    }
}
