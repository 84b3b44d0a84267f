//! Fully convolutional patch discriminator.
//!
//! Layer `i` is a 4×4 convolution with stride `strides[i]` and padding 1.
//! The first layer is followed by a leaky ReLU only, middle layers by
//! instance normalization and a leaky ReLU, and the last layer emits the
//! raw one-channel patch-score map.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    leaky_relu, leaky_relu_backward, Conv2d, Gradients, InCache, InitRecord, InstanceNorm2d, Real, Tensor, WeightSet,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorSpec {
    pub channels: Vec<usize>,
    pub strides: Vec<usize>,
    pub kernel: usize,
    pub pad: usize,
    pub leaky_slope: f64,
    /// Smallest accepted input side.
    pub min_input: usize,
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        Self {
            channels: vec![64, 128, 256, 512, 1],
            strides: vec![2, 2, 2, 1, 1],
            kernel: 4,
            pad: 1,
            leaky_slope: 0.2,
            min_input: 64,
        }
    }
}

impl DiscriminatorSpec {
    /// Default topology with the channel progression scaled to start at
    /// `base`.
    pub fn reduced(base: usize) -> Self {
        Self {
            channels: vec![base, base * 2, base * 4, base * 8, 1],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.len() != self.strides.len() {
            return Err(Error::InvalidInput("channel and stride lists must be non-empty and equal length".into()));
        }
        if *self.channels.last().unwrap() != 1 {
            return Err(Error::InvalidInput("last discriminator layer must emit one channel".into()));
        }
        if self.channels.contains(&0) || self.strides.contains(&0) || self.kernel == 0 {
            return Err(Error::InvalidInput("zero channel, stride or kernel".into()));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::InvalidInput(format!("leaky slope {} not in (0, 1)", self.leaky_slope)));
        }
        match self.output_size(self.min_input) {
            Some(o) if o >= 1 => Ok(()),
            _ => Err(Error::InvalidInput(format!(
                "minimum input {} produces an empty score map",
                self.min_input
            ))),
        }
    }

    /// Side length of the score map for a square input side, by the usual
    /// `⌊(i + 2p − k)/s⌋ + 1` rule applied per layer.
    pub fn output_size(&self, input: usize) -> Option<usize> {
        self.strides.iter().try_fold(input, |i, &s| {
            let padded = i + 2 * self.pad;
            (padded >= self.kernel).then(|| (padded - self.kernel) / s + 1)
        })
    }

    /// Per-layer map sizes starting from `input`.
    pub fn size_chain(&self, input: usize) -> Vec<usize> {
        let mut out = vec![input];
        let mut i = input;
        for &s in &self.strides {
            match (i + 2 * self.pad).checked_sub(self.kernel) {
                Some(v) => i = v / s + 1,
                None => break,
            }
            out.push(i);
        }
        out
    }
}

/// Receptive field of one output score, composing layers back to front from
/// a single output sample: `r ← r·s + (k − s)`.
pub fn receptive_field(kernels: &[usize], strides: &[usize]) -> usize {
    kernels
        .iter()
        .zip(strides)
        .rev()
        .fold(1, |r, (&k, &s)| r * s + (k - s))
}

pub fn spec_receptive_field(spec: &DiscriminatorSpec) -> usize {
    receptive_field(&vec![spec.kernel; spec.strides.len()], &spec.strides)
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    conv: Conv2d,
    norm: Option<InstanceNorm2d>,
    activate: bool,
}

struct LayerTrace<T> {
    input: Tensor<T>,
    norm: Option<InCache<T>>,
    act: Option<Tensor<T>>,
}

pub struct DiscriminatorTrace<T> {
    layers: Vec<LayerTrace<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator<T> {
    spec: DiscriminatorSpec,
    layers: Vec<Layer>,
    pub weights: WeightSet<T>,
}

fn build_layers<T: Real>(spec: &DiscriminatorSpec, ws: &mut WeightSet<T>) -> Vec<Layer> {
    let n = spec.channels.len();
    let mut in_c = 1;
    (0..n)
        .map(|i| {
            let first = i == 0;
            let last = i == n - 1;
            let normed = !first && !last;
            let conv = Conv2d::register(
                ws,
                &format!("layer{}.conv", i + 1),
                in_c,
                spec.channels[i],
                spec.kernel,
                spec.strides[i],
                spec.pad,
                !normed,
            );
            let norm = normed.then(|| InstanceNorm2d::register(ws, &format!("layer{}.in", i + 1), spec.channels[i]));
            in_c = spec.channels[i];
            Layer {
                conv,
                norm,
                activate: !last,
            }
        })
        .collect()
}

impl<T: Real> Discriminator<T> {
    pub fn new(spec: DiscriminatorSpec, init: InitRecord) -> Result<Self> {
        spec.validate()?;
        let mut weights = WeightSet::new(init);
        let layers = build_layers(&spec, &mut weights);
        weights.seal();
        Ok(Self { spec, layers, weights })
    }

    pub fn from_weights(spec: DiscriminatorSpec, weights: WeightSet<T>) -> Result<Self> {
        spec.validate()?;
        let mut probe = WeightSet::<T>::new(InitRecord { kernel_std: 0.0, seed: 0 });
        let layers = build_layers(&spec, &mut probe);
        if !probe.same_layout(&weights) {
            return Err(Error::InvalidInput("discriminator weights do not match spec".into()));
        }
        Ok(Self { spec, layers, weights })
    }

    pub fn spec(&self) -> &DiscriminatorSpec {
        &self.spec
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.c() != 1 {
            return Err(Error::shape("1 input channel", x.c()));
        }
        if x.h() < self.spec.min_input || x.w() < self.spec.min_input {
            return Err(Error::InvalidInput(format!(
                "discriminator input {}x{} below the {m}x{m} minimum patch",
                x.h(),
                x.w(),
                m = self.spec.min_input
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_train(x)?.0)
    }

    pub fn forward_train(&self, x: &Tensor<T>) -> Result<(Tensor<T>, DiscriminatorTrace<T>)> {
        self.check_input(x)?;
        let ws = &self.weights;
        let mut t = x.clone();
        let mut traces = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let z = layer.conv.forward(ws, &t);
            let (z, norm) = match &layer.norm {
                Some(n) => {
                    let (y, c) = n.forward(ws, &z);
                    (y, Some(c))
                }
                None => (z, None),
            };
            let (next, act) = if layer.activate {
                let a = leaky_relu(&z, self.spec.leaky_slope);
                (a.clone(), Some(a))
            } else {
                (z, None)
            };
            traces.push(LayerTrace { input: t, norm, act });
            t = next;
        }
        Ok((t, DiscriminatorTrace { layers: traces }))
    }

    /// Backpropagates a score-map gradient. Returns the input gradient.
    pub fn backward(&self, trace: &DiscriminatorTrace<T>, dy: &Tensor<T>, grads: &mut Gradients<T>, need_dx: bool) -> Option<Tensor<T>> {
        let ws = &self.weights;
        let mut d = dy.clone();
        for (i, (layer, lt)) in self.layers.iter().zip(&trace.layers).enumerate().rev() {
            if let Some(a) = &lt.act {
                d = leaky_relu_backward(a, &d, self.spec.leaky_slope);
            }
            if let (Some(n), Some(c)) = (&layer.norm, &lt.norm) {
                d = n.backward(ws, c, &d, grads);
            }
            let want = i > 0 || need_dx;
            match layer.conv.backward(ws, &lt.input, &d, grads, want) {
                Some(dx) => d = dx,
                None => return None,
            }
        }
        Some(d)
    }

    pub fn cast<U: Real>(&self) -> Discriminator<U> {
        Discriminator {
            spec: self.spec.clone(),
            layers: self.layers.clone(),
            weights: self.weights.cast(),
        }
    }
}

pub fn build_discriminator<T: Real>(spec: DiscriminatorSpec, seed: u64) -> Result<Discriminator<T>> {
    Discriminator::new(spec, InitRecord::gaussian(seed))
}
