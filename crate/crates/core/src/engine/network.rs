use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::engine::architecture::{ArchitectureSpec, LayerSpec};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Parameters of one layer. See [`LayerSpec::weight_shape`] for the layout
/// of `weights`; `recurrent` holds `U` for recurrent layers only.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T> {
    pub weights: Array2<T>,
    pub recurrent: Option<Array2<T>>,
    pub bias: Array1<T>,
}

impl<T: Scalar> LayerParams<T> {
    pub fn zeros(spec: &LayerSpec) -> Self {
        LayerParams {
            weights: Array2::zeros(spec.weight_shape()),
            recurrent: spec.recurrent_shape().map(Array2::zeros),
            bias: Array1::zeros(spec.bias_len()),
        }
    }

    pub fn check_shape(&self, spec: &LayerSpec, layer: usize) -> Result<()> {
        let ctx = || format!("layer {layer} ({})", spec.kind_name());
        if self.weights.dim() != spec.weight_shape() {
            return Err(Error::shape(
                format!("{} weights", ctx()),
                format!("{:?}", spec.weight_shape()),
                format!("{:?}", self.weights.dim()),
            ));
        }
        match (spec.recurrent_shape(), &self.recurrent) {
            (None, None) => {}
            (Some(shape), Some(u)) if u.dim() == shape => {}
            (expected, found) => {
                return Err(Error::shape(
                    format!("{} recurrent weights", ctx()),
                    format!("{expected:?}"),
                    format!("{:?}", found.as_ref().map(|u| u.dim())),
                ))
            }
        }
        if self.bias.len() != spec.bias_len() {
            return Err(Error::shape(
                format!("{} bias", ctx()),
                spec.bias_len(),
                self.bias.len(),
            ));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|v| v.is_finite())
            && self.bias.iter().all(|v| v.is_finite())
            && self
                .recurrent
                .as_ref()
                .is_none_or(|u| u.iter().all(|v| v.is_finite()))
    }

    pub fn len(&self) -> usize {
        self.weights.len() + self.bias.len() + self.recurrent.as_ref().map_or(0, |u| u.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Visits every parameter mutably in a fixed order: weights, recurrent
    /// map, bias.
    pub fn for_each_mut(&mut self, mut f: impl FnMut(&mut T)) {
        self.weights.iter_mut().for_each(&mut f);
        if let Some(u) = self.recurrent.as_mut() {
            u.iter_mut().for_each(&mut f);
        }
        self.bias.iter_mut().for_each(f);
    }

    /// Flattened parameters in [`LayerParams::for_each_mut`] order.
    pub fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.len());
        out.extend(self.weights.iter().copied());
        if let Some(u) = &self.recurrent {
            out.extend(u.iter().copied());
        }
        out.extend(self.bias.iter().copied());
        out
    }

    /// `self += scale * other`, shapes assumed equal.
    pub fn scaled_add(&mut self, scale: T, other: &LayerParams<T>) {
        self.weights.scaled_add(scale, &other.weights);
        if let (Some(u), Some(du)) = (self.recurrent.as_mut(), other.recurrent.as_ref()) {
            u.scaled_add(scale, du);
        }
        self.bias.scaled_add(scale, &other.bias);
    }

    pub fn scale(&mut self, factor: T) {
        self.for_each_mut(|v| *v *= factor);
    }
}

/// A parameterized network together with the spec that shapes it.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    pub spec: ArchitectureSpec,
    pub layers: Vec<LayerParams<T>>,
    pub trained: bool,
    pub seed: u64,
    pub init_std: f64,
}

impl<T: Scalar> Network<T> {
    /// Draws every weight i.i.d. from `Normal(0, init_std^2)` with a ChaCha8
    /// stream seeded by `seed`; biases start at zero.
    pub fn build(spec: &ArchitectureSpec, init_std: f64, seed: u64) -> Result<Self> {
        spec.validate()?;
        if !(init_std.is_finite() && init_std > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "init_std must be positive and finite, got {init_std}"
            )));
        }
        let normal = Normal::new(0.0, init_std)
            .map_err(|e| Error::InvalidArgument(format!("init_std: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = spec
            .layers
            .iter()
            .map(|layer| {
                let mut params = LayerParams::<T>::zeros(layer);
                params
                    .weights
                    .iter_mut()
                    .for_each(|w| *w = T::of(normal.sample(&mut rng)));
                if let Some(u) = params.recurrent.as_mut() {
                    u.iter_mut()
                        .for_each(|w| *w = T::of(normal.sample(&mut rng)));
                }
                params
            })
            .collect();
        Ok(Network {
            spec: spec.clone(),
            layers,
            trained: false,
            seed,
            init_std,
        })
    }

    /// Network with every parameter set to zero.
    pub fn zeros(spec: &ArchitectureSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Network {
            spec: spec.clone(),
            layers: spec.layers.iter().map(LayerParams::zeros).collect(),
            trained: false,
            seed: 0,
            init_std: 0.0,
        })
    }

    /// Assembles a network from explicit parameters, checking every shape.
    pub fn from_parts(spec: ArchitectureSpec, layers: Vec<LayerParams<T>>) -> Result<Self> {
        spec.validate()?;
        if layers.len() != spec.layers.len() {
            return Err(Error::shape(
                "network layer count",
                spec.layers.len(),
                layers.len(),
            ));
        }
        for (i, (p, s)) in layers.iter().zip(&spec.layers).enumerate() {
            p.check_shape(s, i + 1)?;
        }
        Ok(Network {
            spec,
            layers,
            trained: false,
            seed: 0,
            init_std: 0.0,
        })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(LayerParams::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(LayerParams::is_finite)
    }

    /// Bitwise parameter equality (distinguishes `0.0` from `-0.0`).
    pub fn bit_identical(&self, other: &Network<T>) -> bool {
        self.spec == other.spec
            && self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                let (fa, fb) = (a.to_flat(), b.to_flat());
                fa.len() == fb.len()
                    && fa.iter().zip(&fb).all(|(x, y)| {
                        x.to_f64_lossless().to_bits() == y.to_f64_lossless().to_bits()
                    })
            })
    }

    /// 1-based layer lookup, matching the metric APIs.
    pub fn layer(&self, layer: usize) -> Result<(&LayerSpec, &LayerParams<T>)> {
        if layer == 0 || layer > self.layers.len() {
            return Err(Error::LayerIndex {
                layer,
                valid: format!("1..={}", self.layers.len()),
            });
        }
        Ok((&self.spec.layers[layer - 1], &self.layers[layer - 1]))
    }
}
