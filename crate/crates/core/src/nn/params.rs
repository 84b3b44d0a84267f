use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Real;

/// One named parameter grid. Non-trainable entries hold running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
    pub trainable: bool,
}

/// How the trainable grids were initialized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitRecord {
    /// Standard deviation of the zero-mean Gaussian used for conv kernels.
    pub kernel_std: f64,
    pub seed: u64,
}

impl InitRecord {
    pub const DEFAULT_STD: f64 = 0.02;

    pub fn gaussian(seed: u64) -> Self {
        Self {
            kernel_std: Self::DEFAULT_STD,
            seed,
        }
    }
}

/// Named parameter grids of one network, in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet<T> {
    pub params: Vec<Param<T>>,
    pub init: InitRecord,
    rng: Option<ChaCha8Rng>,
}

impl<T: Real> WeightSet<T> {
    pub fn new(init: InitRecord) -> Self {
        Self {
            params: Vec::new(),
            init,
            rng: Some(ChaCha8Rng::seed_from_u64(init.seed)),
        }
    }

    /// Assembles a set from already-materialized grids (deserialization).
    pub fn from_params(params: Vec<Param<T>>, init: InitRecord) -> Self {
        Self {
            params,
            init,
            rng: None,
        }
    }

    fn push(&mut self, name: &str, shape: Vec<usize>, data: Vec<T>, trainable: bool) -> usize {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        self.params.push(Param {
            name: name.to_string(),
            shape,
            data,
            trainable,
        });
        self.params.len() - 1
    }

    /// Kernel grid drawn from N(0, kernel_std²).
    pub fn add_gaussian(&mut self, name: &str, shape: Vec<usize>) -> usize {
        let n: usize = shape.iter().product();
        let std = self.init.kernel_std;
        let rng = self.rng.as_mut().expect("weight set is still being built");
        let data = if std > 0.0 {
            let dist = Normal::new(0.0, std).expect("positive std");
            (0..n).map(|_| T::of(dist.sample(rng))).collect()
        } else {
            vec![T::zero(); n]
        };
        self.push(name, shape, data, true)
    }

    pub fn add_constant(&mut self, name: &str, shape: Vec<usize>, value: f64, trainable: bool) -> usize {
        let n: usize = shape.iter().product();
        self.push(name, shape, vec![T::of(value); n], trainable)
    }

    pub fn get(&self, idx: usize) -> &[T] {
        &self.params[idx].data
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut [T] {
        &mut self.params[idx].data
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn n_trainable(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.data.len()).sum()
    }

    /// Checks that names and shapes line up with `other`.
    pub fn same_layout<U>(&self, other: &WeightSet<U>) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape && a.trainable == b.trainable)
    }

    pub fn cast<U: Real>(&self) -> WeightSet<U> {
        WeightSet {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    data: p.data.iter().map(|v| U::of(v.f64())).collect(),
                    trainable: p.trainable,
                })
                .collect(),
            init: self.init,
            rng: None,
        }
    }

    /// Drops the construction RNG; called once the layout is complete.
    pub(crate) fn seal(&mut self) {
        self.rng = None;
    }
}

/// Gradient accumulators laid out like a [`WeightSet`]. Entries for
/// non-trainable grids stay empty.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub grads: Vec<Vec<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(ws: &WeightSet<T>) -> Self {
        Self {
            grads: ws
                .params
                .iter()
                .map(|p| if p.trainable { vec![T::zero(); p.data.len()] } else { Vec::new() })
                .collect(),
        }
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut [T] {
        &mut self.grads[idx]
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().flatten().all(|v| v.is_finite())
    }

    pub fn zero(&mut self) {
        for g in &mut self.grads {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }
}
