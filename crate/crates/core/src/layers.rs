//! Network building blocks recorded on a [`Tape`]: 2-D convolution over
//! `(time, frequency)` feature images, LSTM/BLSTM sequence layers and dense
//! layers.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Array, NodeId, Tape};
use crate::error::{shape_err, Error, Result};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Tanh,
    Elu,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape<'_>, x: NodeId) -> Result<NodeId> {
        match self {
            Activation::Linear => Ok(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Elu => tape.elu(x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Same,
    Valid,
}

/// Convolution over a `T×F×C` image. Frequency is never padded; time is
/// padded according to `time_padding`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv2dSpec {
    pub filters: usize,
    /// `(k_t, k_f)`.
    pub kernel: (usize, usize),
    /// `(s_t, s_f)`.
    pub stride: (usize, usize),
    pub time_padding: Padding,
    pub activation: Activation,
}

impl Conv2dSpec {
    /// A `k_f`-tall frequency kernel spanning one frame, stride 1.
    pub fn frequency(filters: usize, k_f: usize, activation: Activation) -> Self {
        Self {
            filters,
            kernel: (1, k_f),
            stride: (1, 1),
            time_padding: Padding::Same,
            activation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (kt, kf) = self.kernel;
        let (st, sf) = self.stride;
        if self.filters == 0 || kt == 0 || kf == 0 || st == 0 || sf == 0 {
            return Err(Error::Config(format!("degenerate convolution {self:?}")));
        }
        Ok(())
    }

    /// Whether the output keeps one frame per input frame.
    pub fn preserves_time(&self) -> bool {
        self.stride.0 == 1 && self.time_padding == Padding::Same
    }

    /// `(out_t, out_f, pad_before_t)` for an input of `t × f`.
    pub fn output_geometry(&self, t: usize, f: usize) -> Result<(usize, usize, usize)> {
        let (kt, kf) = self.kernel;
        let (st, sf) = self.stride;
        if kf > f {
            return Err(shape_err("conv2d", format!("kernel {kf} taller than {f} bins")));
        }
        let out_f = (f - kf) / sf + 1;
        let (out_t, pad) = match self.time_padding {
            Padding::Same => {
                let out_t = t.div_ceil(st);
                let total = ((out_t - 1) * st + kt).saturating_sub(t);
                (out_t, total / 2)
            }
            Padding::Valid => {
                if kt > t {
                    return Err(shape_err("conv2d", format!("kernel {kt} longer than {t} frames")));
                }
                ((t - kt) / st + 1, 0)
            }
        };
        Ok((out_t, out_f, pad))
    }

    pub fn weight_shape(&self, channels: usize) -> [usize; 4] {
        [self.kernel.0, self.kernel.1, channels, self.filters]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
    Bidirectional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LstmSpec {
    pub units: usize,
    pub direction: Direction,
}

impl LstmSpec {
    pub fn bidirectional(units: usize) -> Self {
        Self {
            units,
            direction: Direction::Bidirectional,
        }
    }

    pub fn output_width(&self) -> usize {
        match self.direction {
            Direction::Bidirectional => 2 * self.units,
            _ => self.units,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseSpec {
    pub units: usize,
    pub activation: Activation,
}

impl DenseSpec {
    pub fn new(units: usize, activation: Activation) -> Self {
        Self { units, activation }
    }
}

/// Affine map `x·W + b` followed by the activation. `x: T×D`, `W: D×U`,
/// `b: 1×U`.
pub fn dense_forward(
    tape: &mut Tape<'_>,
    x: NodeId,
    weight: NodeId,
    bias: NodeId,
    activation: Activation,
) -> Result<NodeId> {
    let h = tape.matmul(x, weight)?;
    let h = tape.add(h, bias)?;
    activation.apply(tape, h)
}

/// Convolution plus activation on a `T×F×C` input.
pub fn conv2d_forward(
    tape: &mut Tape<'_>,
    x: NodeId,
    spec: &Conv2dSpec,
    weight: NodeId,
    bias: NodeId,
) -> Result<NodeId> {
    let shape = tape.value(x).shape().to_vec();
    if shape.len() != 3 {
        return Err(shape_err("conv2d", format!("expected T×F×C input, got {shape:?}")));
    }
    let want = spec.weight_shape(shape[2]);
    if tape.value(weight).shape() != want {
        return Err(shape_err(
            "conv2d",
            format!("weight {:?}, expected {want:?}", tape.value(weight).shape()),
        ));
    }
    let (out_t, _, pad) = spec.output_geometry(shape[0], shape[1])?;
    let y = tape.conv2d(x, weight, bias, spec.stride, pad, out_t)?;
    spec.activation.apply(tape, y)
}

/// LSTM weights for one direction. Gate columns are ordered
/// input, forget, candidate, output.
#[derive(Debug, Clone, Copy)]
pub struct LstmParams {
    /// `D × 4H`.
    pub w_ih: NodeId,
    /// `H × 4H`.
    pub w_hh: NodeId,
    /// `1 × 4H`.
    pub bias: NodeId,
}

/// Hidden and cell state, each `1 × H`.
#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub h: NodeId,
    pub c: NodeId,
}

/// Run one LSTM direction over `x: T×D`. With `reverse`, frames are
/// consumed from `T` down to 1 but outputs are still returned in time
/// order. Returns `(outputs: T×H, final state)`.
pub fn lstm_forward(
    tape: &mut Tape<'_>,
    x: NodeId,
    params: LstmParams,
    reverse: bool,
    initial: Option<LstmState>,
) -> Result<(NodeId, LstmState)> {
    let (t_len, d) = {
        let s = tape.value(x).shape();
        if s.len() != 2 {
            return Err(shape_err("lstm", format!("expected T×D input, got {s:?}")));
        }
        (s[0], s[1])
    };
    let w_shape = tape.value(params.w_ih).shape().to_vec();
    if w_shape.len() != 2 || w_shape[0] != d || w_shape[1] % 4 != 0 {
        return Err(shape_err("lstm", format!("input width {d} vs w_ih {w_shape:?}")));
    }
    let units = w_shape[1] / 4;
    if tape.value(params.w_hh).shape() != [units, 4 * units] {
        return Err(shape_err("lstm", format!("w_hh {:?}", tape.value(params.w_hh).shape())));
    }

    let projected = tape.matmul(x, params.w_ih)?;
    let projected = tape.add(projected, params.bias)?;

    let mut state = initial;
    let mut outputs = Vec::with_capacity(t_len);
    let order: Vec<usize> = if reverse {
        (0..t_len).rev().collect()
    } else {
        (0..t_len).collect()
    };
    for t in order {
        let mut gates = tape.slice(projected, 0, t, t + 1)?;
        if let Some(prev) = state {
            let rec = tape.matmul(prev.h, params.w_hh)?;
            gates = tape.add(gates, rec)?;
        }
        let i_f = tape.slice(gates, 1, 0, 2 * units)?;
        let i_f = tape.sigmoid(i_f)?;
        let i = tape.slice(i_f, 1, 0, units)?;
        let f = tape.slice(i_f, 1, units, 2 * units)?;
        let g = tape.slice(gates, 1, 2 * units, 3 * units)?;
        let g = tape.tanh(g)?;
        let o = tape.slice(gates, 1, 3 * units, 4 * units)?;
        let o = tape.sigmoid(o)?;
        let mut c = tape.mul(i, g)?;
        if let Some(prev) = state {
            let keep = tape.mul(f, prev.c)?;
            c = tape.add(c, keep)?;
        }
        let tc = tape.tanh(c)?;
        let h = tape.mul(o, tc)?;
        outputs.push(h);
        state = Some(LstmState { h, c });
    }
    if reverse {
        outputs.reverse();
    }
    let out = tape.concat(&outputs, 0)?;
    Ok((out, state.expect("at least one frame")))
}

/// Forward and backward LSTMs over `x`. Outputs are `concat(fwd h_t,
/// bwd h_t)` per frame; the summary is `concat(fwd h_T, bwd h_1)`, each
/// direction's last computed state.
pub fn blstm_forward(
    tape: &mut Tape<'_>,
    x: NodeId,
    forward: LstmParams,
    backward: LstmParams,
) -> Result<(NodeId, NodeId)> {
    let (fwd_out, fwd_state) = lstm_forward(tape, x, forward, false, None)?;
    let (bwd_out, bwd_state) = lstm_forward(tape, x, backward, true, None)?;
    let outputs = tape.concat(&[fwd_out, bwd_out], 1)?;
    let last = tape.concat(&[fwd_state.h, bwd_state.h], 1)?;
    Ok((outputs, last))
}

/// Uniform initialization in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize, fan_out: usize) -> Array {
    let limit = math::sqrt(6.0 / (fan_in + fan_out) as f64);
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-limit..limit)).collect();
    Array::new(shape.to_vec(), data).expect("nonzero shape")
}

/// LSTM bias with the forget-gate block at 1 and the rest at 0.
pub fn lstm_bias(units: usize) -> Array {
    let mut b = Array::zeros(&[1, 4 * units]);
    b.data_mut()[units..2 * units].iter_mut().for_each(|v| *v = 1.0);
    b
}
