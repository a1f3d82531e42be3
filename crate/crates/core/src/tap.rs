//! Temporal attentive pooling.
//!
//! Given per-frame CNN features `y(t)`, BLSTM outputs `h(t)` and the BLSTM
//! summary `h_last`, each head computes
//!
//! ```text
//! c(t)  = [W_c y(t) ; W_r h_last]
//! α     = softmax_t( uᵀ tanh(c(t) + b_g) )
//! z(t)  = α(t) y(t)
//! β     = softmax_t( vᵀ tanh(W_l z(t) + b_l) )
//! f̂     = (1/T) Σ_t α(t) β(t) y(t)
//! r(t)  = [f̂ ; W_g h(t)]
//! o(t)  = G(a_Q(t)),  a_q(t) = σ(W_q a_{q-1}(t) + b_q),  a_0 = r
//! ```
//!
//! Both softmaxes normalize over time, so `α` and `β` are distributions
//! over frames. Weight matrices are stored input-major (`x·W`).

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::layers::{dense_forward, Activation};

/// Attention widths `N_c`, `N_r`, `N_l`, `N_g`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TapDims {
    pub n_c: usize,
    pub n_r: usize,
    pub n_l: usize,
    pub n_g: usize,
}

impl TapDims {
    pub fn uniform(n: usize) -> Self {
        Self {
            n_c: n,
            n_r: n,
            n_l: n,
            n_g: n,
        }
    }

    /// `(name, shape)` of every attention block for the given feature widths.
    pub fn block_shapes(&self, cnn_dim: usize, rnn_dim: usize) -> [(&'static str, [usize; 2]); 8] {
        let g = self.n_c + self.n_r;
        [
            ("w_c", [cnn_dim, self.n_c]),
            ("w_r", [rnn_dim, self.n_r]),
            ("u", [g, 1]),
            ("b_g", [1, g]),
            ("w_l", [cnn_dim, self.n_l]),
            ("b_l", [1, self.n_l]),
            ("v", [self.n_l, 1]),
            ("w_g", [rnn_dim, self.n_g]),
        ]
    }
}

/// Attention parameters of one head, in [`TapDims::block_shapes`] order.
#[derive(Debug, Clone, Copy)]
pub struct TapParams {
    pub w_c: NodeId,
    pub w_r: NodeId,
    pub u: NodeId,
    pub b_g: NodeId,
    pub w_l: NodeId,
    pub b_l: NodeId,
    pub v: NodeId,
    pub w_g: NodeId,
}

impl TapParams {
    pub fn from_slice(ids: &[NodeId]) -> Self {
        Self {
            w_c: ids[0],
            w_r: ids[1],
            u: ids[2],
            b_g: ids[3],
            w_l: ids[4],
            b_l: ids[5],
            v: ids[6],
            w_g: ids[7],
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DenseParams {
    pub weight: NodeId,
    pub bias: NodeId,
    pub activation: Activation,
}

/// Fully-connected stack: hidden layers then a linear regression layer.
#[derive(Debug, Clone)]
pub struct HeadParams {
    pub hidden: Vec<DenseParams>,
    pub output: DenseParams,
}

/// Attention weights and pooled context of one head.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub context: Vec<f64>,
}

/// `c(t) = [W_c y(t) ; W_r h_last]`, `T × (N_c + N_r)`.
pub fn global_context(tape: &mut Tape<'_>, y: NodeId, h_last: NodeId, p: &TapParams) -> Result<NodeId> {
    let frames = tape.value(y).rows();
    let local = tape.matmul(y, p.w_c)?;
    let summary = tape.matmul(h_last, p.w_r)?;
    let summary = tape.repeat_rows(summary, frames)?;
    tape.concat(&[local, summary], 1)
}

/// `α = softmax_t(uᵀ tanh(c(t) + b_g))`, `T × 1`.
pub fn global_weights(tape: &mut Tape<'_>, c: NodeId, p: &TapParams) -> Result<NodeId> {
    let a = tape.add(c, p.b_g)?;
    let a = tape.tanh(a)?;
    let scores = tape.matmul(a, p.u)?;
    tape.softmax(scores, 0)
}

/// `z(t) = α(t) y(t)`.
pub fn apply_global(tape: &mut Tape<'_>, alpha: NodeId, y: NodeId) -> Result<NodeId> {
    tape.mul(y, alpha)
}

/// `β = softmax_t(vᵀ tanh(W_l z(t) + b_l))`, `T × 1`.
pub fn local_weights(tape: &mut Tape<'_>, z: NodeId, p: &TapParams) -> Result<NodeId> {
    let a = tape.matmul(z, p.w_l)?;
    let a = tape.add(a, p.b_l)?;
    let a = tape.tanh(a)?;
    let scores = tape.matmul(a, p.v)?;
    tape.softmax(scores, 0)
}

/// `f̂ = (1/T) Σ_t α(t) β(t) y(t)`, `1 × cnn_dim`.
pub fn attentive_context(tape: &mut Tape<'_>, alpha: NodeId, beta: NodeId, y: NodeId) -> Result<NodeId> {
    let z = apply_global(tape, alpha, y)?;
    pool(tape, z, beta)
}

fn pool(tape: &mut Tape<'_>, z: NodeId, beta: NodeId) -> Result<NodeId> {
    let f = tape.mul(z, beta)?;
    tape.mean_over_axis(f, 0)
}

/// `r(t) = [f̂ ; W_g h(t)]`, `T × (cnn_dim + N_g)`.
pub fn head_input(tape: &mut Tape<'_>, f_hat: NodeId, h: NodeId, p: &TapParams) -> Result<NodeId> {
    let frames = tape.value(h).rows();
    let g = tape.matmul(h, p.w_g)?;
    let f = tape.repeat_rows(f_hat, frames)?;
    tape.concat(&[f, g], 1)
}

/// Hidden dense layers followed by the output layer.
pub fn output_head(tape: &mut Tape<'_>, r: NodeId, head: &HeadParams) -> Result<NodeId> {
    let mut a = r;
    for layer in &head.hidden {
        a = dense_forward(tape, a, layer.weight, layer.bias, layer.activation)?;
    }
    dense_forward(tape, a, head.output.weight, head.output.bias, head.output.activation)
}

/// Nodes of one head's attention pass.
#[derive(Debug, Clone, Copy)]
pub struct TapNodes {
    pub output: NodeId,
    pub alpha: NodeId,
    pub beta: NodeId,
    pub context: NodeId,
}

impl TapNodes {
    pub fn trace(&self, tape: &Tape<'_>) -> AttentionTrace {
        AttentionTrace {
            alpha: tape.value(self.alpha).data().to_vec(),
            beta: tape.value(self.beta).data().to_vec(),
            context: tape.value(self.context).data().to_vec(),
        }
    }
}

/// One complete attention head from features to `o(t)`.
pub fn tap_head(
    tape: &mut Tape<'_>,
    y: NodeId,
    h: NodeId,
    h_last: NodeId,
    tap: &TapParams,
    head: &HeadParams,
) -> Result<TapNodes> {
    if tape.value(y).rows() == 0 {
        return Err(Error::Empty("attention frames"));
    }
    let c = global_context(tape, y, h_last, tap)?;
    let alpha = global_weights(tape, c, tap)?;
    let z = apply_global(tape, alpha, y)?;
    let beta = local_weights(tape, z, tap)?;
    let context = pool(tape, z, beta)?;
    let r = head_input(tape, context, h, tap)?;
    let output = output_head(tape, r, head)?;
    Ok(TapNodes {
        output,
        alpha,
        beta,
        context,
    })
}

/// Both heads (enhanced signal, noise), evaluated independently.
pub fn tap_forward(
    tape: &mut Tape<'_>,
    y: NodeId,
    h: NodeId,
    h_last: NodeId,
    enhanced: (&TapParams, &HeadParams),
    noise: (&TapParams, &HeadParams),
) -> Result<(TapNodes, TapNodes)> {
    let e = tap_head(tape, y, h, h_last, enhanced.0, enhanced.1)?;
    let n = tap_head(tape, y, h, h_last, noise.0, noise.1)?;
    Ok((e, n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{gradcheck, Array, GradcheckConfig};
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_array(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Array {
        let n = shape.iter().product();
        Array::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
    }

    fn tap_leaves(tape: &mut Tape<'_>, rng: &mut ChaCha8Rng, dims: TapDims, cnn: usize, rnn: usize) -> TapParams {
        let ids: Vec<NodeId> = dims
            .block_shapes(cnn, rnn)
            .iter()
            .map(|(_, s)| tape.var(rand_array(rng, s, 0.8)))
            .collect();
        TapParams::from_slice(&ids)
    }

    fn zero_tap(tape: &mut Tape<'_>, dims: TapDims, cnn: usize, rnn: usize) -> TapParams {
        let ids: Vec<NodeId> = dims
            .block_shapes(cnn, rnn)
            .iter()
            .map(|(_, s)| tape.var(Array::zeros(s)))
            .collect();
        TapParams::from_slice(&ids)
    }

    #[test]
    fn zero_maps_give_zero_context() {
        let mut tape = Tape::new();
        let p = zero_tap(&mut tape, TapDims::uniform(2), 3, 4);
        let y = tape.constant(Array::full(&[5, 3], 1.0));
        let hl = tape.constant(Array::full(&[1, 4], 1.0));
        let c = global_context(&mut tape, y, hl, &p).unwrap();
        assert_eq!(tape.value(c).shape(), &[5, 4]);
        assert!(tape.value(c).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_substituted_context() {
        let mut tape = Tape::new();
        let dims = TapDims { n_c: 1, n_r: 1, n_l: 1, n_g: 1 };
        let mut p = zero_tap(&mut tape, dims, 2, 2);
        p.w_c = tape.constant(Array::matrix(2, 1, vec![1.0, 0.0]).unwrap());
        p.w_r = tape.constant(Array::matrix(2, 1, vec![1.0, 0.0]).unwrap());
        let y = tape.constant(Array::matrix(3, 2, vec![1.0, 0.0, 2.0, 0.0, 3.0, 0.0]).unwrap());
        let hl = tape.constant(Array::row(vec![5.0, 0.0]).unwrap());
        let c = global_context(&mut tape, y, hl, &p).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 5.0, 2.0, 5.0, 3.0, 5.0]);
    }

    #[test]
    fn global_weight_examples() {
        let mut tape = Tape::new();
        let dims = TapDims { n_c: 1, n_r: 1, n_l: 1, n_g: 1 };
        let mut p = zero_tap(&mut tape, dims, 1, 1);
        p.u = tape.constant(Array::matrix(2, 1, vec![1.0, 1.0]).unwrap());

        let same = tape.constant(Array::full(&[4, 2], 0.3));
        let a = global_weights(&mut tape, same, &p).unwrap();
        assert!(tape.value(a).data().iter().all(|&v| (v - 0.25).abs() < 1e-15));

        let single = tape.constant(Array::row(vec![0.9, -0.2]).unwrap());
        let a = global_weights(&mut tape, single, &p).unwrap();
        assert_eq!(tape.value(a).data(), &[1.0]);

        // Scores (0, ln 3) → (1/4, 3/4).
        let target = 0.5;
        let k = libm::log(3.0) / libm::tanh(target);
        p.u = tape.constant(Array::matrix(2, 1, vec![k, 0.0]).unwrap());
        let c = tape.constant(Array::matrix(2, 2, vec![0.0, 0.0, target, 0.0]).unwrap());
        let a = global_weights(&mut tape, c, &p).unwrap();
        let v = tape.value(a).data();
        assert!((v[0] - 0.25).abs() < 1e-12 && (v[1] - 0.75).abs() < 1e-12, "{v:?}");
    }

    #[test]
    fn apply_global_examples() {
        let mut tape = Tape::new();
        let ya = Array::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = tape.constant(ya.clone());
        let uni = tape.constant(Array::full(&[2, 1], 0.5));
        let z = apply_global(&mut tape, uni, y).unwrap();
        assert_eq!(tape.value(z).data(), &[0.5, 1.0, 1.5, 2.0]);
        let onehot = tape.constant(Array::matrix(2, 1, vec![0.0, 1.0]).unwrap());
        let z = apply_global(&mut tape, onehot, y).unwrap();
        assert_eq!(tape.value(z).data(), &[0.0, 0.0, 3.0, 4.0]);
    }

    #[test]
    fn local_weight_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut tape = Tape::new();
        let dims = TapDims::uniform(3);
        let mut p = tap_leaves(&mut tape, &mut rng, dims, 2, 2);
        let same = tape.constant(Array::full(&[3, 2], 0.4));
        let b = local_weights(&mut tape, same, &p).unwrap();
        assert!(tape.value(b).data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));

        p.v = tape.constant(Array::zeros(&[3, 1]));
        let z = tape.constant(rand_array(&mut rng, &[3, 2], 1.0));
        let b = local_weights(&mut tape, z, &p).unwrap();
        assert!(tape.value(b).data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));

        // W_l picks the first feature, b_l = 0, v scales tanh to ln 3.
        let d = TapDims { n_c: 1, n_r: 1, n_l: 1, n_g: 1 };
        let mut q = zero_tap(&mut tape, d, 1, 1);
        q.w_l = tape.constant(Array::matrix(1, 1, vec![1.0]).unwrap());
        q.v = tape.constant(Array::matrix(1, 1, vec![libm::log(3.0) / libm::tanh(0.5)]).unwrap());
        let z = tape.constant(Array::matrix(2, 1, vec![0.0, 0.5]).unwrap());
        let b = local_weights(&mut tape, z, &q).unwrap();
        let v = tape.value(b).data();
        assert!((v[0] - 0.25).abs() < 1e-12 && (v[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn attentive_context_examples() {
        let mut tape = Tape::new();
        let alpha = tape.constant(Array::matrix(2, 1, vec![0.25, 0.75]).unwrap());
        let beta = tape.constant(Array::matrix(2, 1, vec![0.5, 0.5]).unwrap());
        let y = tape.constant(Array::matrix(2, 2, vec![2.0, 0.0, 0.0, 4.0]).unwrap());
        let f = attentive_context(&mut tape, alpha, beta, y).unwrap();
        assert_eq!(tape.value(f).data(), &[0.125, 0.75]);

        let one = tape.constant(Array::matrix(1, 1, vec![1.0]).unwrap());
        let y1 = tape.constant(Array::row(vec![1.5, -2.0]).unwrap());
        let f = attentive_context(&mut tape, one, one, y1).unwrap();
        assert_eq!(tape.value(f).data(), &[1.5, -2.0]);

        let yc = tape.constant(Array::matrix(2, 2, vec![1.0, 2.0, 1.0, 2.0]).unwrap());
        let f = attentive_context(&mut tape, alpha, beta, yc).unwrap();
        let k = (0.25 * 0.5 + 0.75 * 0.5) / 2.0;
        assert_eq!(tape.value(f).data(), &[k, 2.0 * k]);
    }

    #[test]
    fn head_input_examples() {
        let mut tape = Tape::new();
        let d = TapDims { n_c: 1, n_r: 1, n_l: 1, n_g: 1 };
        let mut p = zero_tap(&mut tape, d, 2, 2);
        let f = tape.constant(Array::row(vec![0.5, -0.5]).unwrap());
        let h = tape.constant(Array::matrix(3, 2, vec![1.0, 9.0, 2.0, 9.0, 3.0, 9.0]).unwrap());
        let r = head_input(&mut tape, f, h, &p).unwrap();
        assert_eq!(tape.value(r).data(), &[0.5, -0.5, 0.0, 0.5, -0.5, 0.0, 0.5, -0.5, 0.0]);
        p.w_g = tape.constant(Array::matrix(2, 1, vec![1.0, 0.0]).unwrap());
        let r = head_input(&mut tape, f, h, &p).unwrap();
        let r = tape.value(r);
        for t in 0..3 {
            assert_eq!(&r.row_slice(t)[..2], &[0.5, -0.5]);
            assert_eq!(r.at(t, 2), (t + 1) as f64);
        }
    }

    fn head_leaves(tape: &mut Tape<'_>, rng: &mut ChaCha8Rng, input: usize, hidden: &[usize], out: usize) -> HeadParams {
        let mut prev = input;
        let mut layers = Vec::new();
        for &u in hidden {
            layers.push(DenseParams {
                weight: tape.var(rand_array(rng, &[prev, u], 0.6)),
                bias: tape.var(rand_array(rng, &[1, u], 0.6)),
                activation: Activation::Tanh,
            });
            prev = u;
        }
        HeadParams {
            hidden: layers,
            output: DenseParams {
                weight: tape.var(rand_array(rng, &[prev, out], 0.6)),
                bias: tape.var(rand_array(rng, &[1, out], 0.6)),
                activation: Activation::Linear,
            },
        }
    }

    #[test]
    fn zero_head_outputs_zero() {
        let mut tape = Tape::new();
        let zero = |tape: &mut Tape<'_>, s: &[usize]| tape.var(Array::zeros(s));
        let head = HeadParams {
            hidden: vec![DenseParams { weight: zero(&mut tape, &[3, 2]), bias: zero(&mut tape, &[1, 2]), activation: Activation::Tanh }],
            output: DenseParams { weight: zero(&mut tape, &[2, 4]), bias: zero(&mut tape, &[1, 4]), activation: Activation::Linear },
        };
        let r = tape.constant(Array::full(&[2, 3], 0.9));
        let o = output_head(&mut tape, r, &head).unwrap();
        assert_eq!(tape.value(o).shape(), &[2, 4]);
        assert!(tape.value(o).data().iter().all(|&v| v == 0.0));

        // No hidden layers: a single linear map of r.
        let lin = HeadParams { hidden: vec![], output: head.output };
        let w = tape.constant(Array::matrix(3, 1, vec![1.0, 2.0, 3.0]).unwrap());
        let b = tape.constant(Array::matrix(1, 1, vec![0.5]).unwrap());
        let lin = HeadParams { output: DenseParams { weight: w, bias: b, ..lin.output }, ..lin };
        let o = output_head(&mut tape, r, &lin).unwrap();
        assert!(tape.value(o).data().iter().all(|&v| (v - (0.9 * 6.0 + 0.5)).abs() < 1e-15));
    }

    #[test]
    fn identical_heads_identical_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut tape = Tape::new();
        let tp = tap_leaves(&mut tape, &mut rng, TapDims::uniform(3), 4, 2);
        let hp = head_leaves(&mut tape, &mut rng, 4 + 3, &[5], 6);
        let y = tape.constant(rand_array(&mut rng, &[5, 4], 1.0));
        let h = tape.constant(rand_array(&mut rng, &[5, 2], 1.0));
        let hl = tape.constant(rand_array(&mut rng, &[1, 2], 1.0));
        let (e, n) = tap_forward(&mut tape, y, h, hl, (&tp, &hp), (&tp, &hp)).unwrap();
        assert_eq!(tape.value(e.output), tape.value(n.output));
        let trace = e.trace(&tape);
        assert!((trace.alpha.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!((trace.beta.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(trace.context.len(), 4);
    }

    #[test]
    fn single_frame_collapses() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let mut tape = Tape::new();
        let tp = tap_leaves(&mut tape, &mut rng, TapDims::uniform(3), 4, 2);
        let hp = head_leaves(&mut tape, &mut rng, 7, &[5], 6);
        let ya = rand_array(&mut rng, &[1, 4], 1.0);
        let y = tape.constant(ya.clone());
        let h = tape.constant(rand_array(&mut rng, &[1, 2], 1.0));
        let nodes = tap_head(&mut tape, y, h, h, &tp, &hp).unwrap();
        let trace = nodes.trace(&tape);
        assert_eq!(trace.alpha, vec![1.0]);
        assert_eq!(trace.beta, vec![1.0]);
        assert_eq!(trace.context, ya.data());
    }

    #[test]
    fn head_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let dims = TapDims::uniform(3);
        let (cnn, rnn, t) = (4, 2, 5);
        let mut params: Vec<Array> = dims.block_shapes(cnn, rnn).iter().map(|(_, s)| rand_array(&mut rng, s, 0.8)).collect();
        for s in [[cnn + 3, 5], [1, 5], [5, 6], [1, 6]] {
            params.push(rand_array(&mut rng, &s, 0.6));
        }
        let y = rand_array(&mut rng, &[t, cnn], 3.0);
        let h = rand_array(&mut rng, &[t, rnn], 1.0);
        let hl = rand_array(&mut rng, &[1, rnn], 1.0);
        let forward = |tape: &mut Tape<'_>, ids: &[NodeId]| {
            let tp = TapParams::from_slice(&ids[..8]);
            let hp = HeadParams {
                hidden: vec![DenseParams { weight: ids[8], bias: ids[9], activation: Activation::Tanh }],
                output: DenseParams { weight: ids[10], bias: ids[11], activation: Activation::Linear },
            };
            let (yi, hi, hli) = (tape.constant(y.clone()), tape.constant(h.clone()), tape.constant(hl.clone()));
            tap_head(tape, yi, hi, hli, &tp, &hp).map(|n| n.output)
        };
        // A target close to the output keeps the loss small next to its
        // gradients, so finite-difference rounding stays below the tolerance.
        let target = {
            let mut tape = Tape::new();
            let ids: Vec<NodeId> = params.iter().map(|p| tape.param(p)).collect();
            let o = forward(&mut tape, &ids).unwrap();
            let mut v = tape.value(o).clone();
            for x in v.data_mut() {
                *x += rng.gen_range(-0.05..0.05);
            }
            v
        };
        let report = gradcheck(
            |tape, ids| {
                let o = forward(tape, ids)?;
                let tt = tape.constant(target.clone());
                tape.mse(o, tt)
            },
            &params,
            &GradcheckConfig::default(),
        )
        .unwrap();
        assert!(report.max_error() < 1e-6, "{report:?}");
    }
}
