//! Forward pass and back-propagation for the dense per-pixel classifier.
//!
//! All arithmetic is plain sequential loops so the result for one pixel never
//! depends on which other pixels share its batch.

use ndarray::{Array2, ArrayView2};

use super::spec::{LayerLayout, ModelSpec, ModelWeights};
use super::ModelError;

/// A set of labelled pixels: one feature row per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pixels: Array2<f64>,
    labels: Vec<usize>,
}

impl Batch {
    pub fn new(pixels: Array2<f64>, labels: Vec<usize>) -> Result<Self, ModelError> {
        if pixels.nrows() != labels.len() {
            return Err(ModelError::Shape {
                what: "batch labels",
                expected: pixels.nrows(),
                actual: labels.len(),
            });
        }
        Ok(Self { pixels, labels })
    }

    pub fn pixels(&self) -> ArrayView2<'_, f64> {
        self.pixels.view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Activation and delta buffers reused across pixels. The parameter slice is
/// passed per call and must belong to the spec the network was built from.
pub(crate) struct Network {
    layers: Vec<LayerLayout>,
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl Network {
    pub(crate) fn new(spec: &ModelSpec) -> Self {
        let dims = spec.dims();
        Self {
            layers: spec.layers(),
            acts: dims.iter().map(|&d| vec![0.0; d]).collect(),
            deltas: dims.iter().map(|&d| vec![0.0; d]).collect(),
        }
    }

    fn run(&mut self, params: &[f64], input: &[f64]) {
        self.acts[0].copy_from_slice(input);
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let (head, tail) = self.acts.split_at_mut(l + 1);
            let x = &head[l];
            let y = &mut tail[0];
            for (o, out) in y.iter_mut().enumerate() {
                let row = &params[layer.weight_offset + o * layer.in_dim..][..layer.in_dim];
                let mut z = params[layer.bias_offset + o];
                for (w, xi) in row.iter().zip(x) {
                    z += w * xi;
                }
                *out = if l < last { z.max(0.0) } else { z };
            }
        }
    }

    pub(crate) fn logits(&mut self, params: &[f64], input: &[f64]) -> &[f64] {
        self.run(params, input);
        self.acts.last().expect("at least one layer")
    }

    /// Index of the largest logit; ties resolve to the lowest class.
    pub(crate) fn predict(&mut self, params: &[f64], input: &[f64]) -> usize {
        let logits = self.logits(params, input);
        let mut best = 0;
        for (c, &z) in logits.iter().enumerate() {
            if z > logits[best] {
                best = c;
            }
        }
        best
    }

    /// Adds `scale * d(loss_i)/d(params)` into `grad` and returns the
    /// unscaled cross-entropy of this pixel.
    pub(crate) fn accumulate(
        &mut self,
        params: &[f64],
        input: &[f64],
        label: usize,
        scale: f64,
        grad: &mut [f64],
    ) -> f64 {
        self.run(params, input);
        let n_layers = self.layers.len();
        let logits = &self.acts[n_layers];
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|z| (z - max).exp()).sum();
        let log_norm = max + sum.ln();
        let loss = log_norm - logits[label];

        let out_delta = &mut self.deltas[n_layers];
        for (c, d) in out_delta.iter_mut().enumerate() {
            let p = (logits[c] - log_norm).exp();
            *d = scale * (p - if c == label { 1.0 } else { 0.0 });
        }

        for l in (0..n_layers).rev() {
            let layer = self.layers[l];
            let (lower, upper) = self.deltas.split_at_mut(l + 1);
            let delta = &upper[0];
            let x = &self.acts[l];
            for (o, &d) in delta.iter().enumerate() {
                let row = &mut grad[layer.weight_offset + o * layer.in_dim..][..layer.in_dim];
                for (g, xi) in row.iter_mut().zip(x) {
                    *g += d * xi;
                }
                grad[layer.bias_offset + o] += d;
            }
            if l > 0 {
                let prev = &mut lower[l];
                for (i, p) in prev.iter_mut().enumerate() {
                    if x[i] > 0.0 {
                        let mut s = 0.0;
                        for (o, &d) in delta.iter().enumerate() {
                            s += params[layer.weight_offset + o * layer.in_dim + i] * d;
                        }
                        *p = s;
                    } else {
                        *p = 0.0;
                    }
                }
            }
        }
        loss
    }
}

impl ModelSpec {
    /// Logits for every row of `pixels`.
    pub fn forward(&self, weights: &ModelWeights, pixels: ArrayView2<'_, f64>) -> Result<Array2<f64>, ModelError> {
        if pixels.ncols() != self.input_dim {
            return Err(ModelError::Shape {
                what: "input features",
                expected: self.input_dim,
                actual: pixels.ncols(),
            });
        }
        self.check(weights)?;
        let mut net = Network::new(self);
        let mut out = Array2::zeros((pixels.nrows(), self.num_classes));
        let mut row_buf = vec![0.0; self.input_dim];
        for (r, row) in pixels.outer_iter().enumerate() {
            row_buf.iter_mut().zip(row.iter()).for_each(|(d, s)| *d = *s);
            for (c, &z) in net.logits(&weights.params, &row_buf).iter().enumerate() {
                out[[r, c]] = z;
            }
        }
        Ok(out)
    }

    /// Mean softmax cross-entropy over the batch and its gradient.
    pub fn loss_and_grad(&self, weights: &ModelWeights, batch: &Batch) -> Result<(f64, Vec<f64>), ModelError> {
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        if batch.pixels.ncols() != self.input_dim {
            return Err(ModelError::Shape {
                what: "input features",
                expected: self.input_dim,
                actual: batch.pixels.ncols(),
            });
        }
        if let Some(&bad) = batch.labels.iter().find(|&&l| l >= self.num_classes) {
            return Err(ModelError::LabelOutOfRange {
                label: bad,
                num_classes: self.num_classes,
            });
        }
        self.check(weights)?;
        let mut net = Network::new(self);
        let mut grad = vec![0.0; self.param_count()];
        let scale = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        let mut row_buf = vec![0.0; self.input_dim];
        for (row, &label) in batch.pixels.outer_iter().zip(&batch.labels) {
            row_buf.iter_mut().zip(row.iter()).for_each(|(d, s)| *d = *s);
            total += net.accumulate(&weights.params, &row_buf, label, scale, &mut grad);
        }
        let loss = total * scale;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(ModelError::NonFinite("loss or gradient"));
        }
        Ok((loss, grad))
    }
}
