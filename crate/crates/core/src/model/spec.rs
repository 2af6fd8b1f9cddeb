use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
}

/// Architecture of the per-pixel classifier: fully connected layers with
/// bias, ReLU between hidden layers and raw logits at the output.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
    #[serde(default)]
    pub activation: Activation,
}

/// Offsets of one dense layer inside the flat parameter vector. Weights are
/// stored row-major as `out_dim x in_dim`, followed by `out_dim` biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct LayerLayout {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl ModelSpec {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, num_classes: usize) -> Self {
        Self {
            input_dim,
            hidden_dims,
            num_classes,
            activation: Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_dim == 0 {
            return Err(ModelError::InvalidSpec("input_dim must be at least 1".into()));
        }
        if self.num_classes < 2 {
            return Err(ModelError::InvalidSpec("num_classes must be at least 2".into()));
        }
        if self.hidden_dims.contains(&0) {
            return Err(ModelError::InvalidSpec("hidden layer widths must be at least 1".into()));
        }
        Ok(())
    }

    /// Layer widths from input to output.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.num_classes);
        dims
    }

    pub(crate) fn layers(&self) -> Vec<LayerLayout> {
        let dims = self.dims();
        let mut offset = 0;
        dims.windows(2)
            .map(|pair| {
                let (in_dim, out_dim) = (pair[0], pair[1]);
                let layer = LayerLayout {
                    in_dim,
                    out_dim,
                    weight_offset: offset,
                    bias_offset: offset + in_dim * out_dim,
                };
                offset += (in_dim + 1) * out_dim;
                layer
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.dims().windows(2).map(|p| (p[0] + 1) * p[1]).sum()
    }

    /// Stable 64-bit FNV-1a hash over the architecture. Stable across
    /// builds and platforms, unlike `std::hash::DefaultHasher`.
    pub fn fingerprint(&self) -> u64 {
        const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut hash = OFFSET;
        let mut feed = |value: u64| {
            for byte in value.to_le_bytes() {
                hash ^= u64::from(byte);
                hash = hash.wrapping_mul(PRIME);
            }
        };
        feed(self.input_dim as u64);
        feed(self.hidden_dims.len() as u64);
        for &d in &self.hidden_dims {
            feed(d as u64);
        }
        feed(self.num_classes as u64);
        feed(match self.activation {
            Activation::Relu => 1,
        });
        hash
    }

    /// Glorot-uniform weights, zero biases. Deterministic in `(self, seed)`.
    pub fn init(&self, seed: u64) -> Result<ModelWeights, ModelError> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; self.param_count()];
        for layer in self.layers() {
            let bound = (6.0 / (layer.in_dim + layer.out_dim) as f64).sqrt();
            for p in &mut params[layer.weight_offset..layer.bias_offset] {
                *p = rng.random_range(-bound..bound);
            }
        }
        Ok(ModelWeights {
            spec_fingerprint: self.fingerprint(),
            params,
        })
    }

    pub fn zeros(&self) -> ModelWeights {
        ModelWeights {
            spec_fingerprint: self.fingerprint(),
            params: vec![0.0; self.param_count()],
        }
    }

    /// Wraps a raw parameter vector (for example one received over the wire).
    pub fn weights_from_params(&self, params: Vec<f64>) -> Result<ModelWeights, ModelError> {
        if params.len() != self.param_count() {
            return Err(ModelError::ParamCount {
                expected: self.param_count(),
                actual: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(ModelError::NonFinite("parameters"));
        }
        Ok(ModelWeights {
            spec_fingerprint: self.fingerprint(),
            params,
        })
    }

    pub(crate) fn check(&self, weights: &ModelWeights) -> Result<(), ModelError> {
        if weights.spec_fingerprint != self.fingerprint() {
            return Err(ModelError::SpecMismatch);
        }
        if weights.params.len() != self.param_count() {
            return Err(ModelError::ParamCount {
                expected: self.param_count(),
                actual: weights.params.len(),
            });
        }
        Ok(())
    }
}

/// Flat parameter vector tagged with the fingerprint of the spec it belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelWeights {
    pub spec_fingerprint: u64,
    pub params: Vec<f64>,
}

impl ModelWeights {
    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Bitwise equality, distinguishing `0.0` from `-0.0`.
    pub fn bitwise_eq(&self, other: &ModelWeights) -> bool {
        self.spec_fingerprint == other.spec_fingerprint
            && self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic() {
        let spec = ModelSpec::new(4, vec![8, 5], 3);
        let a = spec.init(7).unwrap();
        let b = spec.init(7).unwrap();
        assert!(a.bitwise_eq(&b));
    }

    #[test]
    fn different_seeds_differ() {
        let spec = ModelSpec::new(4, vec![8], 3);
        assert_ne!(spec.init(1).unwrap().params, spec.init(2).unwrap().params);
    }

    #[test]
    fn softmax_regression_param_count() {
        let spec = ModelSpec::new(6, vec![], 4);
        assert_eq!(spec.param_count(), (6 + 1) * 4);
        assert_eq!(spec.init(0).unwrap().len(), 28);
    }

    #[test]
    fn init_respects_glorot_bound_and_zero_bias() {
        let spec = ModelSpec::new(4, vec![16], 4);
        let w = spec.init(3).unwrap();
        for layer in spec.layers() {
            let bound = (6.0 / (layer.in_dim + layer.out_dim) as f64).sqrt();
            let weights = &w.params[layer.weight_offset..layer.bias_offset];
            assert!(weights.iter().all(|p| p.abs() <= bound));
            let biases = &w.params[layer.bias_offset..layer.bias_offset + layer.out_dim];
            assert!(biases.iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(ModelSpec::new(0, vec![], 2).validate().is_err());
        assert!(ModelSpec::new(3, vec![], 1).validate().is_err());
        assert!(ModelSpec::new(3, vec![0], 2).validate().is_err());
    }

    #[test]
    fn fingerprint_tracks_architecture() {
        let a = ModelSpec::new(4, vec![8], 3);
        let b = ModelSpec::new(4, vec![8], 4);
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint(), a.clone().fingerprint());
    }
}
