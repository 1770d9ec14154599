use std::sync::Arc;

use ndarray::{Array2, Axis};
use rand::RngExt;
use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use super::tape::{FusedOp, NodeId, Tape, Tensor};
use crate::error::{Error, Result};

/// Default negative slope of the hidden activation.
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MlpInit {
    /// Every weight and bias zero.
    Zeros,
    /// Hidden layers uniform on `±1/sqrt(fan_in)`, output layer zero: the
    /// network outputs zero but hidden units still receive gradient.
    ZeroOutput,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

/// Fully connected network with leaky-ReLU hidden activations and a linear
/// output layer. Weights are `in x out` so a batch `b x in` maps to `b x out`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub slope: f64,
}

impl Mlp {
    /// Register the weights of a `input -> hidden.. -> output` network in `store`.
    pub fn new<R: rand::Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: &[usize],
        output: usize,
        init: MlpInit,
        rng: &mut R,
    ) -> Self {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let (fi, fo) = (sizes[i], sizes[i + 1]);
                let weight = if init == MlpInit::ZeroOutput && i + 1 < n {
                    let r = 1.0 / (fi.max(1) as f64).sqrt();
                    Array2::from_shape_fn((fi, fo), |_| rng.random_range(-r..r))
                } else {
                    Array2::zeros((fi, fo))
                };
                Dense {
                    weight: store.add(format!("{prefix}.{i}.weight"), weight),
                    bias: store.add(format!("{prefix}.{i}.bias"), Array2::zeros((1, fo))),
                    fan_in: fi,
                    fan_out: fo,
                }
            })
            .collect();
        Mlp {
            layers,
            slope: LEAKY_SLOPE,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.fan_in)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.fan_out)
    }

    /// Apply to a `b x input_dim` node.
    pub fn apply(&self, store: &ParamStore, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        let (_, cols) = tape.shape(x);
        if cols != self.input_dim() {
            return Err(Error::dim("mlp input", self.input_dim(), cols));
        }
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            let w = tape.param(store, layer.weight);
            let b = tape.param(store, layer.bias);
            let slope = if i + 1 < self.layers.len() { self.slope } else { 1.0 };
            let mut v = tape.value(h).dot(tape.value(w));
            let bias = tape.value(b).as_slice().expect("bias is a contiguous row");
            let data = v.as_slice_mut().expect("matmul output is contiguous");
            for row in data.chunks_exact_mut(layer.fan_out) {
                for (a, c) in row.iter_mut().zip(bias) {
                    let t = *a + c;
                    // max(t, slope t) is leaky(t) for slope in (0, 1]
                    *a = t.max(slope * t);
                }
            }
            h = tape.fused(Arc::new(DenseOp { slope }), &[h, w, b], v);
        }
        Ok(h)
    }
}

/// `leaky(x W + b)` as one node; `slope = 1` is the linear layer.
#[derive(Debug)]
struct DenseOp {
    slope: f64,
}

impl FusedOp for DenseOp {
    fn name(&self) -> &'static str {
        "dense"
    }

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Tensor> {
        let (x, w) = (inputs[0], inputs[1]);
        let mut ga = grad.clone();
        if self.slope != 1.0 {
            // a > 0 iff the output is positive since slope > 0
            ga.zip_mut_with(output, |g, &y| {
                if y <= 0.0 {
                    *g *= self.slope;
                }
            });
        }
        let gx = ga.dot(&w.t());
        let gw = x.t().dot(&ga);
        let gb = ga.sum_axis(Axis(0)).insert_axis(Axis(0));
        vec![gx, gw, gb]
    }
}
