//! Bias-free MLP encoders and the flat parameter layout shared by all
//! architectures.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, Matrix, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// ReLU on hidden layers, identity on the output layer.
    #[default]
    ReluHiddenLinearOut,
    AllLinear,
}

/// Layer widths `[in, h1, ..., out]` of a bias-free MLP.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TowerSpec {
    layer_dims: Vec<usize>,
    activation: Activation,
}

impl TowerSpec {
    pub fn new(layer_dims: Vec<usize>, activation: Activation) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::invalid(
                "tower spec",
                "needs at least an input and an output width",
            ));
        }
        if layer_dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid(
                "tower spec",
                format!("zero-width layer in {layer_dims:?}"),
            ));
        }
        Ok(Self {
            layer_dims,
            activation,
        })
    }

    /// `layers` weight matrices: `input -> hidden -> ... -> output`, every hidden
    /// layer `hidden` wide.
    pub fn uniform(
        input: usize,
        hidden: usize,
        output: usize,
        layers: usize,
        activation: Activation,
    ) -> Result<Self> {
        if layers == 0 {
            return Err(Error::invalid("tower spec", "layer count must be at least 1"));
        }
        let mut dims = Vec::with_capacity(layers + 1);
        dims.push(input);
        dims.extend(std::iter::repeat_n(hidden, layers - 1));
        dims.push(output);
        Self::new(dims, activation)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().expect("validated non-empty")
    }

    pub fn num_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims.windows(2).map(|w| w[0] * w[1]).sum()
    }

    fn check_params<T>(&self, params: &[T]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::shape(format!(
                "tower {:?} takes {} parameters, got {}",
                self.layer_dims,
                self.param_count(),
                params.len()
            )));
        }
        Ok(())
    }

    /// Evaluates the network. Layer `k` reads its `out x in` weight matrix
    /// row-major from the next `out * in` entries of `params`.
    pub fn forward<T: Real>(&self, params: &[T], input: &[T]) -> Result<Vec<T>> {
        self.check_params(params)?;
        if input.len() != self.input_dim() {
            return Err(Error::shape(format!(
                "tower expects input of length {}, got {}",
                self.input_dim(),
                input.len()
            )));
        }
        let mut current = input.to_vec();
        let mut next = Vec::new();
        let mut offset = 0;
        let last = self.num_layers() - 1;
        for (layer, w) in self.layer_dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weights = &params[offset..offset + fan_in * fan_out];
            offset += fan_in * fan_out;
            next.clear();
            next.extend(weights.chunks_exact(fan_in).map(|row| dot(row, &current)));
            if layer != last && self.activation == Activation::ReluHiddenLinearOut {
                next.iter_mut().for_each(|v| *v = v.max(T::zero()));
            }
            std::mem::swap(&mut current, &mut next);
        }
        Ok(current)
    }

    /// Per-layer weight matrices viewed from a flat parameter slice.
    pub fn unflatten<T: Real>(&self, params: &[T]) -> Result<Vec<Matrix<T>>> {
        self.check_params(params)?;
        let mut offset = 0;
        self.layer_dims
            .windows(2)
            .map(|w| {
                let n = w[0] * w[1];
                let m = Matrix::new(w[1], w[0], params[offset..offset + n].to_vec());
                offset += n;
                m
            })
            .collect()
    }

    pub fn flatten<T: Real>(&self, layers: &[Matrix<T>]) -> Result<Vec<T>> {
        if layers.len() != self.num_layers() {
            return Err(Error::shape(format!(
                "expected {} layers, got {}",
                self.num_layers(),
                layers.len()
            )));
        }
        let mut out = Vec::with_capacity(self.param_count());
        for (m, w) in layers.iter().zip(self.layer_dims.windows(2)) {
            if (m.rows(), m.cols()) != (w[1], w[0]) {
                return Err(Error::shape(format!(
                    "layer is {}x{}, expected {}x{}",
                    m.rows(),
                    m.cols(),
                    w[1],
                    w[0]
                )));
            }
            out.extend_from_slice(m.data());
        }
        Ok(out)
    }
}

pub fn param_count(spec: &TowerSpec) -> usize {
    spec.param_count()
}

/// Flat parameter vector `θ`; for two-tower models `θ = (θ₁, θ₂)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct ParamVector<T: Real = f64>(Vec<T>);

impl<T: Real> ParamVector<T> {
    /// All-zeros initialization.
    pub fn zeros(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::invalid("parameter vector", "length must be at least 1"));
        }
        Ok(Self(vec![T::zero(); len]))
    }

    pub fn from_vec(data: Vec<T>) -> Self {
        Self(data)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<T> {
        self.0
    }
}

impl<T: Real> AsRef<[T]> for ParamVector<T> {
    fn as_ref(&self) -> &[T] {
        &self.0
    }
}

pub fn init_params<T: Real>(len: usize) -> Result<ParamVector<T>> {
    ParamVector::zeros(len)
}

/// Splits `θ` into the state-tower block `θ₁` and the action-tower block `θ₂`.
pub fn split_params<'a, T>(
    theta: &'a [T],
    state_spec: &TowerSpec,
    action_spec: &TowerSpec,
) -> Result<(&'a [T], &'a [T])> {
    let d1 = state_spec.param_count();
    let d2 = action_spec.param_count();
    if theta.len() != d1 + d2 {
        return Err(Error::shape(format!(
            "two-tower parameters need {} + {} entries, got {}",
            d1,
            d2,
            theta.len()
        )));
    }
    Ok(theta.split_at(d1))
}

/// Kernel on latent pairs; the energy is its negation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    #[default]
    DotProduct,
}

impl KernelKind {
    pub fn score<T: Real>(&self, state_latent: &[T], action_latent: &[T]) -> T {
        match self {
            KernelKind::DotProduct => dot(state_latent, action_latent),
        }
    }

    pub fn energy<T: Real>(&self, state_latent: &[T], action_latent: &[T]) -> T {
        -self.score(state_latent, action_latent)
    }
}
