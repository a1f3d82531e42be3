use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{Activation, Conv2dSpec, DenseSpec, Direction, LstmSpec};
use crate::tap::TapDims;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Dnn,
    Cnn,
    Rnn,
    Crnn,
    TapCrnn,
}

impl Architecture {
    pub const ALL: [Architecture; 5] = [
        Architecture::Dnn,
        Architecture::Cnn,
        Architecture::Rnn,
        Architecture::Crnn,
        Architecture::TapCrnn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Dnn => "dnn",
            Architecture::Cnn => "cnn",
            Architecture::Rnn => "rnn",
            Architecture::Crnn => "crnn",
            Architecture::TapCrnn => "tap_crnn",
        }
    }

    /// Two output heads (enhanced + noise) or one.
    pub fn heads(self) -> usize {
        match self {
            Architecture::Crnn | Architecture::TapCrnn => 2,
            _ => 1,
        }
    }

    pub fn has_conv(self) -> bool {
        matches!(self, Architecture::Cnn | Architecture::Crnn | Architecture::TapCrnn)
    }

    pub fn has_recurrent(self) -> bool {
        matches!(self, Architecture::Rnn | Architecture::Crnn | Architecture::TapCrnn)
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Architecture::ALL.iter().map(|a| a.name()).collect();
                Error::Config(format!("unknown architecture `{s}`; expected one of {}", names.join(", ")))
            })
    }
}

/// How fresh parameters are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Seeded uniform ±sqrt(6/(fan_in+fan_out)), LSTM forget bias 1.
    #[default]
    Glorot,
    /// Square dense weights set to the identity, everything else zero.
    /// Only meaningful for a DNN without hidden layers: a pass-through
    /// model for pipeline checks.
    Identity,
}

/// Architecture description. Block shapes are a pure function of this.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub input_dim: usize,
    pub output_dim: usize,
    pub conv: Vec<Conv2dSpec>,
    /// Stacked BLSTM layers.
    pub recurrent: Vec<LstmSpec>,
    /// Hidden dense layers of each output head; the linear output layer
    /// to `output_dim` is implicit.
    pub hidden: Vec<DenseSpec>,
    pub tap: Option<TapDims>,
    #[serde(default)]
    pub init: InitScheme,
    pub seed: u64,
}

/// Widths flowing between the model stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    /// Per-frame width after the convolution stack (`F'·filters`).
    pub cnn_dim: usize,
    /// Per-frame width after the recurrent stack.
    pub rnn_dim: usize,
    /// Width entering each head's first dense layer.
    pub head_input: usize,
}

const LPS_DIM: usize = 257;

fn conv_pair(filters: usize, activation: Activation, freq_stride: usize) -> Vec<Conv2dSpec> {
    let mut first = Conv2dSpec::frequency(filters, 3, activation);
    first.stride.1 = freq_stride;
    vec![first, Conv2dSpec::frequency(filters, 2, activation)]
}

fn dense(n: usize, units: usize, activation: Activation) -> Vec<DenseSpec> {
    vec![DenseSpec::new(units, activation); n]
}

impl ModelConfig {
    fn base(architecture: Architecture, dim: usize, seed: u64) -> Self {
        Self {
            architecture,
            input_dim: dim,
            output_dim: dim,
            conv: Vec::new(),
            recurrent: Vec::new(),
            hidden: Vec::new(),
            tap: None,
            init: InitScheme::Glorot,
            seed,
        }
    }

    /// Full-size networks: 6×512 DNN; 2×32-filter CNN with 3×512 dense;
    /// 2×256 BLSTM RNN with 2×256 dense; CRNN with 2×128 BLSTM and two
    /// 2×128 heads; TAP-CRNN adding attention blocks with 2×256 heads.
    pub fn paper(architecture: Architecture, seed: u64) -> Self {
        let mut c = Self::base(architecture, LPS_DIM, seed);
        match architecture {
            Architecture::Dnn => c.hidden = dense(6, 512, Activation::Elu),
            Architecture::Cnn => {
                c.conv = conv_pair(32, Activation::Elu, 1);
                c.hidden = dense(3, 512, Activation::Elu);
            }
            Architecture::Rnn => {
                c.recurrent = vec![LstmSpec::bidirectional(256); 2];
                c.hidden = dense(2, 256, Activation::Elu);
            }
            Architecture::Crnn => {
                c.conv = conv_pair(32, Activation::Tanh, 1);
                c.recurrent = vec![LstmSpec::bidirectional(128); 2];
                c.hidden = dense(2, 128, Activation::Tanh);
            }
            Architecture::TapCrnn => {
                c.conv = conv_pair(32, Activation::Tanh, 1);
                c.recurrent = vec![LstmSpec::bidirectional(128); 2];
                c.hidden = dense(2, 256, Activation::Tanh);
                c.tap = Some(TapDims::uniform(128));
            }
        }
        c
    }

    /// Reduced networks that train in minutes on one core. Same topology as
    /// [`ModelConfig::paper`] with 4 filters, a frequency stride of 4 in the
    /// first convolution, 2×16 BLSTM units, 2×64 heads and attention width 16.
    pub fn desk(architecture: Architecture, seed: u64) -> Self {
        let mut c = Self::base(architecture, LPS_DIM, seed);
        match architecture {
            Architecture::Dnn => c.hidden = dense(3, 128, Activation::Elu),
            Architecture::Cnn => {
                c.conv = conv_pair(4, Activation::Elu, 4);
                c.hidden = dense(2, 64, Activation::Elu);
            }
            Architecture::Rnn => {
                c.recurrent = vec![LstmSpec::bidirectional(16); 2];
                c.hidden = dense(2, 64, Activation::Elu);
            }
            Architecture::Crnn => {
                c.conv = conv_pair(4, Activation::Tanh, 4);
                c.recurrent = vec![LstmSpec::bidirectional(16); 2];
                c.hidden = dense(2, 64, Activation::Tanh);
            }
            Architecture::TapCrnn => {
                c.conv = conv_pair(4, Activation::Tanh, 4);
                c.recurrent = vec![LstmSpec::bidirectional(16); 2];
                c.hidden = dense(2, 64, Activation::Tanh);
                c.tap = Some(TapDims::uniform(16));
            }
        }
        c
    }

    /// Gradient-check scale: 17 bins, 2 filters, 4 BLSTM units, attention
    /// width 4, 6-unit heads.
    pub fn tiny(architecture: Architecture, seed: u64) -> Self {
        let mut c = Self::base(architecture, 17, seed);
        if architecture.has_conv() {
            c.conv = conv_pair(2, Activation::Tanh, 1);
        }
        if architecture.has_recurrent() {
            c.recurrent = vec![LstmSpec::bidirectional(4)];
        }
        c.hidden = dense(2, 6, Activation::Tanh);
        if architecture == Architecture::TapCrnn {
            c.tap = Some(TapDims::uniform(4));
        }
        c
    }

    /// Pass-through model: a single 257×257 identity layer.
    pub fn identity() -> Self {
        let mut c = Self::base(Architecture::Dnn, LPS_DIM, 0);
        c.init = InitScheme::Identity;
        c
    }

    pub fn validate(&self) -> Result<()> {
        let arch = self.architecture;
        let fail = |msg: String| Err(Error::Config(format!("{arch}: {msg}")));
        if self.input_dim == 0 || self.output_dim == 0 {
            return fail("zero feature dimension".into());
        }
        if arch.has_conv() == self.conv.is_empty() {
            return fail(format!("expects {} convolution layers", if arch.has_conv() { "some" } else { "no" }));
        }
        if arch.has_recurrent() == self.recurrent.is_empty() {
            return fail(format!("expects {} recurrent layers", if arch.has_recurrent() { "some" } else { "no" }));
        }
        if (arch == Architecture::TapCrnn) != self.tap.is_some() {
            return fail("attention dimensions must be given exactly for tap_crnn".into());
        }
        for spec in &self.conv {
            spec.validate()?;
            if !spec.preserves_time() {
                return fail(format!("convolution {spec:?} does not keep one output per frame"));
            }
        }
        for spec in &self.recurrent {
            if spec.units == 0 || spec.direction != Direction::Bidirectional {
                return fail(format!("recurrent layers must be bidirectional with units > 0, got {spec:?}"));
            }
        }
        if self.hidden.iter().any(|d| d.units == 0) {
            return fail("zero-width dense layer".into());
        }
        if let Some(t) = self.tap {
            if t.n_c == 0 || t.n_r == 0 || t.n_l == 0 || t.n_g == 0 {
                return fail("zero attention width".into());
            }
        }
        if self.init == InitScheme::Identity
            && (arch != Architecture::Dnn || !self.hidden.is_empty() || self.input_dim != self.output_dim)
        {
            return fail("identity init needs a square DNN without hidden layers".into());
        }
        self.geometry().map(|_| ())
    }

    pub fn geometry(&self) -> Result<Geometry> {
        let mut f = self.input_dim;
        let mut channels = 1;
        for spec in &self.conv {
            let (_, out_f, _) = spec.output_geometry(1, f)?;
            f = out_f;
            channels = spec.filters;
        }
        let cnn_dim = f * channels;
        let rnn_dim = self.recurrent.last().map_or(cnn_dim, |s| s.output_width());
        let head_input = match (self.architecture, self.tap) {
            (Architecture::TapCrnn, Some(t)) => cnn_dim + t.n_g,
            _ => rnn_dim,
        };
        Ok(Geometry {
            cnn_dim,
            rnn_dim,
            head_input,
        })
    }

    pub fn heads(&self) -> usize {
        self.architecture.heads()
    }
}
