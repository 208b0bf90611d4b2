use std::collections::{BTreeMap, BTreeSet};
use std::sync::Mutex;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Named parameter tensors, ordered by name.
///
/// Reads can optionally be traced so callers can assert which networks a code
/// path touched.
#[derive(Default)]
pub struct ParamStore<T> {
    tensors: BTreeMap<String, Tensor<T>>,
    trace: Mutex<Option<BTreeSet<String>>>,
}

impl<T: Real> Clone for ParamStore<T> {
    fn clone(&self) -> Self {
        ParamStore {
            tensors: self.tensors.clone(),
            trace: Mutex::new(None),
        }
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            tensors: BTreeMap::new(),
            trace: Mutex::new(None),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        if let Some(set) = self.trace.lock().expect("trace lock").as_mut() {
            set.insert(name.to_string());
        }
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Parameter(format!("unknown parameter `{name}`")))
    }

    /// Lookup that is never recorded by the read trace (for shape and
    /// bookkeeping checks that do not compute with the values).
    pub fn peek(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::Parameter(format!("unknown parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(|t| t.is_finite())
    }

    /// Starts recording the names of parameters read via [`get`](Self::get).
    pub fn start_trace(&self) {
        *self.trace.lock().expect("trace lock") = Some(BTreeSet::new());
    }

    pub fn take_trace(&self) -> BTreeSet<String> {
        self.trace
            .lock()
            .expect("trace lock")
            .take()
            .unwrap_or_default()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
            trace: Mutex::new(None),
        }
    }

    /// Kaiming-uniform weight (`bound = sqrt(6 / fan_in)`) and zero bias.
    pub fn init_conv(
        &mut self,
        prefix: &str,
        cin: usize,
        cout: usize,
        k: usize,
        rng: &mut impl Rng,
    ) {
        let fan_in = cin * k * k * k;
        let w = kaiming_uniform(vec![cout, cin, k, k, k], fan_in, rng);
        self.insert(format!("{prefix}.weight"), w);
        self.insert(format!("{prefix}.bias"), Tensor::zeros(vec![cout]));
    }

    pub fn init_conv_zero(&mut self, prefix: &str, cin: usize, cout: usize, k: usize) {
        self.insert(
            format!("{prefix}.weight"),
            Tensor::zeros(vec![cout, cin, k, k, k]),
        );
        self.insert(format!("{prefix}.bias"), Tensor::zeros(vec![cout]));
    }

    pub fn init_linear(&mut self, prefix: &str, fin: usize, fout: usize, rng: &mut impl Rng) {
        let w = kaiming_uniform(vec![fout, fin], fin, rng);
        self.insert(format!("{prefix}.weight"), w);
        self.insert(format!("{prefix}.bias"), Tensor::zeros(vec![fout]));
    }

    /// Instance-norm affine: scale 1, shift 0.
    pub fn init_norm(&mut self, prefix: &str, channels: usize) {
        self.insert(format!("{prefix}.gamma"), Tensor::full(vec![channels], T::one()));
        self.insert(format!("{prefix}.beta"), Tensor::zeros(vec![channels]));
    }

    pub fn init_gaussian(&mut self, name: &str, len: usize, rng: &mut impl Rng) {
        let data = (0..len)
            .map(|_| {
                let v: f64 = StandardNormal.sample(rng);
                T::lit(v)
            })
            .collect();
        self.insert(name, Tensor::new(vec![len], data));
    }
}

fn kaiming_uniform<T: Real>(shape: Vec<usize>, fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| T::lit(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::new(shape, data)
}
