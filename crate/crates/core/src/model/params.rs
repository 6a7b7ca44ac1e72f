use std::collections::HashMap;

use ndarray::IxDyn;
use oaf_autograd::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Named tensors in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        let name = name.into();
        if let Some(&i) = self.index.get(&name) {
            self.values[i] = value;
            return i;
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.values.push(value);
        self.names.len() - 1
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.position(name).map(|i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.position(name).map(|i| &mut self.values[i])
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Total number of scalars.
    pub fn numel(&self) -> usize {
        self.values.iter().map(|t| t.len()).sum()
    }

    /// Scalars in tensors whose name starts with `prefix`.
    pub fn numel_with_prefix(&self, prefix: &str) -> usize {
        self.iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, t)| t.len())
            .sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Same names and shapes.
    pub fn same_layout(&self, other: &ParamSet) -> bool {
        self.names == other.names
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.shape() == b.shape())
    }
}

/// Draws initial weights in a fixed order from one seeded stream.
pub(crate) struct Initializer<'a> {
    pub rng: &'a mut ChaCha8Rng,
    pub params: &'a mut ParamSet,
}

impl Initializer<'_> {
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn uniform(&mut self, name: &str, shape: &[usize], fan_in: usize) {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let t = Tensor::from_shape_fn(IxDyn(shape), |_| self.rng.gen_range(-bound..bound));
        self.params.insert(name, t);
    }

    pub fn fill(&mut self, name: &str, shape: &[usize], value: f64) {
        self.params.insert(name, Tensor::from_elem(IxDyn(shape), value));
    }

    /// Linear layer `x · w + b` with `w: [inp, out]`.
    pub fn linear(&mut self, prefix: &str, inp: usize, out: usize) {
        self.uniform(&format!("{prefix}.w"), &[inp, out], inp);
        self.uniform(&format!("{prefix}.b"), &[out], inp);
    }

    /// One LSTM direction; the forget-gate bias starts at 1.
    pub fn lstm(&mut self, prefix: &str, inp: usize, hidden: usize) {
        self.uniform(&format!("{prefix}.w_ih"), &[inp, 4 * hidden], hidden);
        self.uniform(&format!("{prefix}.w_hh"), &[hidden, 4 * hidden], hidden);
        let mut bias = Tensor::zeros(IxDyn(&[4 * hidden]));
        for v in bias.iter_mut() {
            *v = self.rng.gen_range(-1.0..1.0) / (hidden as f64).sqrt();
        }
        for k in hidden..2 * hidden {
            bias[[k]] = 1.0;
        }
        self.params.insert(format!("{prefix}.bias"), bias);
    }
}
