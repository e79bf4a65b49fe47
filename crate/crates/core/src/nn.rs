//! Named parameter storage, the two layer kinds the networks use, and the
//! RMSProp optimizer.

use funit_autodiff::{Gradients, Tape, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Ordered collection of named parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Panics on a duplicate name; parameter names are fixed by the
    /// network constructors.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id_of(name).map(|id| self.get(id))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.id_of(name).map(|id| self.get_mut(id))
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Records every parameter on `tape`, as leaves when `trainable`.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> Bound<'t> {
        let vars = self
            .values
            .iter()
            .map(|v| {
                if trainable {
                    tape.leaf(v.clone())
                } else {
                    tape.constant(v.clone())
                }
            })
            .collect();
        Bound { vars }
    }
}

/// Parameters of a [`ParamStore`] recorded on one tape.
pub struct Bound<'t> {
    vars: Vec<Var<'t>>,
}

impl<'t> Bound<'t> {
    pub fn var(&self, id: ParamId) -> Var<'t> {
        self.vars[id.0]
    }

    /// Gradient per parameter in store order; unreached parameters get zeros.
    pub fn gradients(&self, grads: &Gradients) -> Vec<Tensor> {
        self.vars.iter().map(|&v| grads.get_or_zeros(v)).collect()
    }
}

/// Zero-mean Gaussian with standard deviation `sqrt(2 / fan_in)`.
pub fn fan_in_normal<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    Tensor::randn(shape, (2.0 / fan_in as f64).sqrt(), rng)
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let weight = store.insert(
            format!("{name}.weight"),
            fan_in_normal(&[out_channels, in_channels, kernel, kernel], fan_in, rng),
        );
        let bias = store.insert(format!("{name}.bias"), Tensor::zeros(&[out_channels]));
        Self {
            weight,
            bias,
            stride,
            padding,
        }
    }

    pub fn forward<'t>(&self, params: &Bound<'t>, x: Var<'t>) -> Var<'t> {
        x.conv2d(
            params.var(self.weight),
            Some(params.var(self.bias)),
            self.stride,
            self.padding,
        )
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_features: usize,
        out_features: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.insert(
            format!("{name}.weight"),
            fan_in_normal(&[out_features, in_features], in_features, rng),
        );
        let bias = store.insert(format!("{name}.bias"), Tensor::zeros(&[out_features]));
        Self { weight, bias }
    }

    pub fn forward<'t>(&self, params: &Bound<'t>, x: Var<'t>) -> Var<'t> {
        x.linear(params.var(self.weight), Some(params.var(self.bias)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmsPropConfig {
    pub learning_rate: f64,
    pub decay: f64,
    pub eps: f64,
}

/// RMSProp with a running average of squared gradients per parameter:
/// `v = decay * v + (1 - decay) * g^2`, `p -= lr * g / (sqrt(v) + eps)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RmsProp {
    square_avg: Vec<Tensor>,
}

impl RmsProp {
    pub fn new(params: &ParamStore) -> Self {
        Self {
            square_avg: params.values().iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn from_state(square_avg: Vec<Tensor>) -> Self {
        Self { square_avg }
    }

    pub fn state(&self) -> &[Tensor] {
        &self.square_avg
    }

    /// Resets the running average of one parameter, e.g. after reinitializing it.
    pub fn reset(&mut self, id: ParamId, shape: &[usize]) {
        self.square_avg[id.0] = Tensor::zeros(shape);
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor], cfg: &RmsPropConfig) {
        assert_eq!(grads.len(), params.len(), "one gradient per parameter");
        for ((p, g), v) in params.values_mut().iter_mut().zip(grads).zip(&mut self.square_avg) {
            for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *vv = cfg.decay * *vv + (1.0 - cfg.decay) * gv * gv;
                *pv -= cfg.learning_rate * gv / (vv.sqrt() + cfg.eps);
            }
        }
    }
}
