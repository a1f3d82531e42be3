use alloc::format;
use alloc::vec::Vec;

use super::config::{Architecture, ModelConfig};
use super::params::ModelParams;
use crate::autodiff::{Array, NodeId, Tape};
use crate::error::{shape_err, Result};
use crate::layers::{blstm_forward, conv2d_forward, Activation, LstmParams};
use crate::tap::{output_head, tap_head, AttentionTrace, DenseParams, HeadParams, TapNodes, TapParams};

struct Cursor<'i> {
    ids: &'i [NodeId],
    pos: usize,
}

impl Cursor<'_> {
    fn next(&mut self) -> NodeId {
        let id = self.ids[self.pos];
        self.pos += 1;
        id
    }

    fn take(&mut self, n: usize) -> &[NodeId] {
        let s = &self.ids[self.pos..self.pos + n];
        self.pos += n;
        s
    }

    fn lstm(&mut self) -> LstmParams {
        LstmParams {
            w_ih: self.next(),
            w_hh: self.next(),
            bias: self.next(),
        }
    }

    fn head(&mut self, config: &ModelConfig) -> HeadParams {
        let hidden = config
            .hidden
            .iter()
            .map(|d| DenseParams {
                weight: self.next(),
                bias: self.next(),
                activation: d.activation,
            })
            .collect();
        HeadParams {
            hidden,
            output: DenseParams {
                weight: self.next(),
                bias: self.next(),
                activation: Activation::Linear,
            },
        }
    }
}

/// Output nodes of one forward pass. Values are in normalized feature
/// space.
#[derive(Debug, Clone, Copy)]
pub struct ForwardNodes {
    pub enhanced: NodeId,
    pub noise: Option<NodeId>,
    pub attention: Option<(TapNodes, TapNodes)>,
}

/// Record the forward pass of `config` on `input: T×input_dim`. `ids` are
/// the parameter leaves in [`super::layout`] order.
pub fn forward_nodes(tape: &mut Tape<'_>, config: &ModelConfig, ids: &[NodeId], input: NodeId) -> Result<ForwardNodes> {
    let shape = tape.value(input).shape().to_vec();
    if shape.len() != 2 || shape[1] != config.input_dim || shape[0] == 0 {
        return Err(shape_err(
            "forward",
            format!("input {shape:?}, model expects T×{}", config.input_dim),
        ));
    }
    let frames = shape[0];
    let mut cur = Cursor { ids, pos: 0 };

    let mut y = input;
    if !config.conv.is_empty() {
        let mut img = tape.reshape(input, &[frames, config.input_dim, 1])?;
        for spec in &config.conv {
            let (w, b) = (cur.next(), cur.next());
            img = conv2d_forward(tape, img, spec, w, b)?;
        }
        let s = tape.value(img).shape().to_vec();
        y = tape.reshape(img, &[frames, s[1] * s[2]])?;
    }

    let mut h = y;
    let mut h_last = None;
    for _ in &config.recurrent {
        let (fwd, bwd) = (cur.lstm(), cur.lstm());
        let (out, last) = blstm_forward(tape, h, fwd, bwd)?;
        h = out;
        h_last = Some(last);
    }

    let mut outputs = Vec::with_capacity(2);
    let mut traces = Vec::with_capacity(2);
    for _ in 0..config.heads() {
        if config.architecture == Architecture::TapCrnn {
            let tap = TapParams::from_slice(cur.take(8));
            let head = cur.head(config);
            let last = h_last.expect("tap_crnn has a recurrent stack");
            let nodes = tap_head(tape, y, h, last, &tap, &head)?;
            outputs.push(nodes.output);
            traces.push(nodes);
        } else {
            let head = cur.head(config);
            outputs.push(output_head(tape, h, &head)?);
        }
    }
    debug_assert_eq!(cur.pos, ids.len());
    Ok(ForwardNodes {
        enhanced: outputs[0],
        noise: outputs.get(1).copied(),
        attention: (traces.len() == 2).then(|| (traces[0], traces[1])),
    })
}

/// Values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub enhanced: Array,
    pub noise: Option<Array>,
    /// `(TAP_E, TAP_N)` traces for attention models.
    pub traces: Option<(AttentionTrace, AttentionTrace)>,
}

/// Inference on normalized features `input: T×input_dim`.
pub fn forward(params: &ModelParams, config: &ModelConfig, input: &Array) -> Result<ForwardOutput> {
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = params.blocks().iter().map(|b| tape.constant_ref(b)).collect();
    let x = tape.constant_ref(input);
    let nodes = forward_nodes(&mut tape, config, &ids, x)?;
    Ok(ForwardOutput {
        enhanced: tape.value(nodes.enhanced).clone(),
        noise: nodes.noise.map(|n| tape.value(n).clone()),
        traces: nodes.attention.map(|(e, n)| (e.trace(&tape), n.trace(&tape))),
    })
}
