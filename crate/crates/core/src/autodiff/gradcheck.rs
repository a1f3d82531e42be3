use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Array, NodeId, Tape};
use crate::error::Result;

/// Settings for central finite-difference gradient checks.
#[derive(Debug, Clone, Copy)]
pub struct GradcheckConfig {
    /// Finite-difference step `h`.
    pub step: f64,
    /// Blocks with more elements are checked on a random subset.
    pub full_check_limit: usize,
    /// Size of that random subset.
    pub subset: usize,
    /// Below this magnitude (both sides) the error is reported as absolute.
    pub abs_floor: f64,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            full_check_limit: 400,
            subset: 256,
            abs_floor: 1e-12,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockReport {
    pub block: usize,
    pub checked: usize,
    /// Largest `|a − n|` over the block divided by the largest gradient
    /// magnitude in the block, see [`gradient_error`].
    pub max_error: f64,
    /// Flat index of the element with the largest `|a − n|`.
    pub worst: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub blocks: Vec<BlockReport>,
}

impl GradcheckReport {
    pub fn max_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_error).fold(0.0, f64::max)
    }
}

/// Relative error `|a − n| / max(|a|, |n|)`, absolute when both sides are
/// below `floor`. Blocks apply it to their worst difference against the
/// block's largest magnitude: single entries far below the rest of the block
/// sit under the rounding noise of the difference quotient and would
/// otherwise dominate.
pub fn gradient_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    let diff = (analytic - numeric).abs();
    if scale < floor {
        diff
    } else {
        diff / scale
    }
}

/// Compare reverse-mode gradients of `f` against central finite
/// differences, block by block. `f` receives the parameters registered as
/// trainable leaves and returns a scalar loss node.
pub fn gradcheck<F>(f: F, params: &[Array], cfg: &GradcheckConfig) -> Result<GradcheckReport>
where
    F: for<'t> Fn(&mut Tape<'t>, &[NodeId]) -> Result<NodeId>,
{
    let eval = |ps: &[Array]| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = ps.iter().map(|p| tape.param(p)).collect();
        let loss = f(&mut tape, &ids)?;
        Ok(tape.value(loss).data()[0])
    };

    let analytic: Vec<Array> = {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = params.iter().map(|p| tape.param(p)).collect();
        let loss = f(&mut tape, &ids)?;
        let mut grads = tape.backward(loss)?;
        ids.iter()
            .map(|&id| grads.take(id).expect("parameter leaves always get a gradient"))
            .collect()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut work: Vec<Array> = params.to_vec();
    let mut blocks = Vec::with_capacity(params.len());
    for (b, grad) in analytic.iter().enumerate() {
        let n = grad.numel();
        let indices: Vec<usize> = if n <= cfg.full_check_limit {
            (0..n).collect()
        } else {
            let mut idx = sample(&mut rng, n, cfg.subset).into_vec();
            idx.sort_unstable();
            idx
        };
        let mut report = BlockReport {
            block: b,
            checked: indices.len(),
            max_error: 0.0,
            worst: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        let mut worst_diff = -1.0;
        let mut scale: f64 = 0.0;
        for &i in &indices {
            let orig = work[b].data()[i];
            work[b].data_mut()[i] = orig + cfg.step;
            let up = eval(&work)?;
            work[b].data_mut()[i] = orig - cfg.step;
            let down = eval(&work)?;
            work[b].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * cfg.step);
            let a = grad.data()[i];
            scale = scale.max(a.abs()).max(numeric.abs());
            let diff = (a - numeric).abs();
            if diff > worst_diff {
                worst_diff = diff;
                report.worst = i;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
        report.max_error = if scale < cfg.abs_floor { worst_diff.max(0.0) } else { worst_diff / scale };
        blocks.push(report);
    }
    Ok(GradcheckReport { blocks })
}
