use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{InitScheme, ModelConfig};
use crate::autodiff::Array;
use crate::error::{Error, Result};
use crate::layers::{glorot_uniform, lstm_bias};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BlockInit {
    Glorot { fan_in: usize, fan_out: usize },
    Zeros,
    LstmBias { units: usize },
    Identity,
}

/// Name and shape of one parameter block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockSpec {
    pub name: String,
    pub shape: Vec<usize>,
    init: BlockInit,
}

impl BlockSpec {
    fn new(name: String, shape: &[usize], init: BlockInit) -> Self {
        Self {
            name,
            shape: shape.to_vec(),
            init,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

fn dense_blocks(out: &mut Vec<BlockSpec>, prefix: &str, fan_in: usize, units: usize, identity: bool) {
    let init = if identity {
        BlockInit::Identity
    } else {
        BlockInit::Glorot { fan_in, fan_out: units }
    };
    out.push(BlockSpec::new(format!("{prefix}.weight"), &[fan_in, units], init));
    out.push(BlockSpec::new(format!("{prefix}.bias"), &[1, units], BlockInit::Zeros));
}

fn head_blocks(out: &mut Vec<BlockSpec>, config: &ModelConfig, prefix: &str, input: usize) {
    let identity = config.init == InitScheme::Identity;
    let mut width = input;
    for (i, d) in config.hidden.iter().enumerate() {
        dense_blocks(out, &format!("{prefix}.dense{i}"), width, d.units, identity);
        width = d.units;
    }
    dense_blocks(out, &format!("{prefix}.out"), width, config.output_dim, identity);
}

/// Every parameter block in forward-pass order.
///
/// Naming: `conv{i}.*`, `blstm{i}.{fwd,bwd}.*`, then per head (`enh`, and
/// `noise` for two-head models) `tap.*`, `dense{i}.*` and `out.*`.
pub fn layout(config: &ModelConfig) -> Result<Vec<BlockSpec>> {
    config.validate()?;
    let geom = config.geometry()?;
    let mut out = Vec::new();
    let mut channels = 1;
    for (i, spec) in config.conv.iter().enumerate() {
        let shape = spec.weight_shape(channels);
        let area = spec.kernel.0 * spec.kernel.1;
        out.push(BlockSpec::new(
            format!("conv{i}.weight"),
            &shape,
            BlockInit::Glorot {
                fan_in: area * channels,
                fan_out: area * spec.filters,
            },
        ));
        out.push(BlockSpec::new(format!("conv{i}.bias"), &[1, spec.filters], BlockInit::Zeros));
        channels = spec.filters;
    }
    let mut width = geom.cnn_dim;
    for (i, spec) in config.recurrent.iter().enumerate() {
        let h = spec.units;
        for dir in ["fwd", "bwd"] {
            let p = format!("blstm{i}.{dir}");
            out.push(BlockSpec::new(
                format!("{p}.w_ih"),
                &[width, 4 * h],
                BlockInit::Glorot { fan_in: width, fan_out: 4 * h },
            ));
            out.push(BlockSpec::new(
                format!("{p}.w_hh"),
                &[h, 4 * h],
                BlockInit::Glorot { fan_in: h, fan_out: 4 * h },
            ));
            out.push(BlockSpec::new(format!("{p}.bias"), &[1, 4 * h], BlockInit::LstmBias { units: h }));
        }
        width = spec.output_width();
    }
    let heads: &[&str] = if config.heads() == 2 { &["enh", "noise"] } else { &["enh"] };
    for head in heads {
        if let Some(dims) = config.tap {
            for (name, shape) in dims.block_shapes(geom.cnn_dim, geom.rnn_dim) {
                let init = if name.starts_with('b') {
                    BlockInit::Zeros
                } else {
                    BlockInit::Glorot {
                        fan_in: shape[0],
                        fan_out: shape[1],
                    }
                };
                out.push(BlockSpec::new(format!("{head}.tap.{name}"), &shape, init));
            }
        }
        head_blocks(&mut out, config, head, geom.head_input);
    }
    Ok(out)
}

/// Named parameter blocks of one model, in [`layout`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    names: Vec<String>,
    blocks: Vec<Array>,
}

impl ModelParams {
    /// Fresh parameters drawn from `config.seed`.
    pub fn build(config: &ModelConfig) -> Result<Self> {
        let specs = layout(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut names = Vec::with_capacity(specs.len());
        let mut blocks = Vec::with_capacity(specs.len());
        for spec in specs {
            let block = match spec.init {
                BlockInit::Glorot { fan_in, fan_out } => glorot_uniform(&mut rng, &spec.shape, fan_in, fan_out),
                BlockInit::Zeros => Array::zeros(&spec.shape),
                BlockInit::LstmBias { units } => lstm_bias(units),
                BlockInit::Identity => {
                    if spec.shape[0] != spec.shape[1] {
                        return Err(Error::Block {
                            name: spec.name,
                            detail: format!("identity init needs a square block, got {:?}", spec.shape),
                        });
                    }
                    Array::identity(spec.shape[0])
                }
            };
            names.push(spec.name);
            blocks.push(block);
        }
        Ok(Self { names, blocks })
    }

    /// Adopt externally supplied blocks, checking names, order and shapes
    /// against the config.
    pub fn from_blocks(config: &ModelConfig, named: Vec<(String, Array)>) -> Result<Self> {
        let specs = layout(config)?;
        if named.len() != specs.len() {
            let missing = specs
                .iter()
                .find(|s| !named.iter().any(|(n, _)| *n == s.name))
                .map(|s| s.name.clone());
            return Err(match missing {
                Some(name) => Error::Block {
                    name,
                    detail: "missing".into(),
                },
                None => Error::Config(format!("{} blocks supplied, config has {}", named.len(), specs.len())),
            });
        }
        let mut names = Vec::with_capacity(specs.len());
        let mut blocks = Vec::with_capacity(specs.len());
        for (spec, (name, block)) in specs.into_iter().zip(named) {
            if name != spec.name {
                return Err(Error::Block {
                    name,
                    detail: format!("found where `{}` was expected", spec.name),
                });
            }
            if block.shape() != spec.shape.as_slice() {
                return Err(Error::Block {
                    name,
                    detail: format!("shape {:?}, config requires {:?}", block.shape(), spec.shape),
                });
            }
            if !block.is_finite() {
                return Err(Error::Block {
                    name,
                    detail: "non-finite values".into(),
                });
            }
            names.push(name);
            blocks.push(block);
        }
        Ok(Self { names, blocks })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn blocks(&self) -> &[Array] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [Array] {
        &mut self.blocks
    }

    pub fn get(&self, name: &str) -> Option<&Array> {
        self.names.iter().position(|n| n == name).map(|i| &self.blocks[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array> {
        self.names.iter().position(|n| n == name).map(|i| &mut self.blocks[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array)> {
        self.names.iter().map(String::as_str).zip(&self.blocks)
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.blocks.iter().map(Array::numel).sum()
    }
}

/// Parameter count implied by a config, without allocating the blocks.
pub fn parameter_count(config: &ModelConfig) -> Result<usize> {
    Ok(layout(config)?.iter().map(BlockSpec::numel).sum())
}
