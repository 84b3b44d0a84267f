//! Residual generator with a channel-concatenation "boosted decoder".
//!
//! ```text
//! x ─ conv(1→C) ─ relu ─ h0 ─ M1 ─ h1 ─ … ─ M5 ─ h5
//!                         │          │          │
//!                         └──────── concat(h0..h5) ── conv(6C→C) ─ relu ─ conv(C→1) ─ r
//! y = x + r
//! ```
//!
//! Each module `M` applies three conv→BN→ReLU stages and adds its input
//! back, followed by a ReLU. The weighted sum of intermediate decodings is
//! learned entirely by the 6C→C convolution; there are no separate mixing
//! weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    relu, relu_backward_from_output, BatchNorm2d, BnCache, Conv2d, Gradients, InitRecord, NormMode, Real, Tensor,
    WeightSet,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorSpec {
    pub base_channels: usize,
    pub n_modules: usize,
    pub convs_per_module: usize,
    pub kernel: usize,
}

impl Default for GeneratorSpec {
    /// The full-size network: 256 channels, five modules.
    fn default() -> Self {
        Self {
            base_channels: 256,
            n_modules: 5,
            convs_per_module: 3,
            kernel: 3,
        }
    }
}

impl GeneratorSpec {
    /// Same topology with fewer channels.
    pub fn reduced(base_channels: usize) -> Self {
        Self {
            base_channels,
            ..Self::default()
        }
    }

    /// Channels entering the post-concatenation convolution.
    pub fn concat_width(&self) -> usize {
        self.base_channels * (self.n_modules + 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.n_modules == 0 || self.convs_per_module == 0 {
            return Err(Error::InvalidInput(format!("degenerate generator spec {self:?}")));
        }
        if self.kernel != 3 {
            return Err(Error::InvalidInput(format!(
                "generator kernels are 3x3, got {}x{}",
                self.kernel, self.kernel
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Module {
    convs: Vec<Conv2d>,
    norms: Vec<BatchNorm2d>,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    entry: Conv2d,
    modules: Vec<Module>,
    fuse: Conv2d,
    out: Conv2d,
}

impl Layout {
    fn build<T: Real>(spec: &GeneratorSpec, ws: &mut WeightSet<T>) -> Self {
        let c = spec.base_channels;
        let k = spec.kernel;
        let pad = k / 2;
        let entry = Conv2d::register(ws, "entry", 1, c, k, 1, pad, true);
        let modules = (0..spec.n_modules)
            .map(|m| {
                let mut convs = Vec::new();
                let mut norms = Vec::new();
                for j in 0..spec.convs_per_module {
                    let name = format!("module{}.conv{}", m + 1, j + 1);
                    // bias would be cancelled by the following normalization
                    convs.push(Conv2d::register(ws, &name, c, c, k, 1, pad, false));
                    norms.push(BatchNorm2d::register(ws, &format!("module{}.bn{}", m + 1, j + 1), c));
                }
                Module { convs, norms }
            })
            .collect();
        let fuse = Conv2d::register(ws, "fuse", spec.concat_width(), c, k, 1, pad, true);
        let out = Conv2d::register(ws, "out", c, 1, k, 1, pad, true);
        Self {
            entry,
            modules,
            fuse,
            out,
        }
    }
}

struct StageTrace<T> {
    input: Tensor<T>,
    bn: Option<BnCache<T>>,
    act: Tensor<T>,
}

struct ModuleTrace<T> {
    stages: Vec<StageTrace<T>>,
    output: Tensor<T>,
}

/// Intermediate state of one training-mode forward pass.
pub struct GeneratorTrace<T> {
    input: Tensor<T>,
    entry_act: Tensor<T>,
    modules: Vec<ModuleTrace<T>>,
    concat: Tensor<T>,
    fuse_act: Tensor<T>,
}

impl<T> GeneratorTrace<T> {
    /// Channel count of the concatenation tensor.
    pub fn concat_channels(&self) -> usize
    where
        T: Real,
    {
        self.concat.c()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator<T> {
    spec: GeneratorSpec,
    layout: Layout,
    pub weights: WeightSet<T>,
}

impl<T: Real> Generator<T> {
    pub fn new(spec: GeneratorSpec, init: InitRecord) -> Result<Self> {
        spec.validate()?;
        let mut weights = WeightSet::new(init);
        let layout = Layout::build(&spec, &mut weights);
        weights.seal();
        Ok(Self { spec, layout, weights })
    }

    /// Wraps existing weights, rejecting any name/shape disagreement with
    /// the layout `spec` implies.
    pub fn from_weights(spec: GeneratorSpec, weights: WeightSet<T>) -> Result<Self> {
        spec.validate()?;
        let mut probe = WeightSet::<T>::new(InitRecord { kernel_std: 0.0, seed: 0 });
        let layout = Layout::build(&spec, &mut probe);
        if !probe.same_layout(&weights) {
            return Err(Error::InvalidInput(format!(
                "generator weights do not match spec {spec:?}"
            )));
        }
        Ok(Self { spec, layout, weights })
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.c() != 1 {
            return Err(Error::shape("1 input channel", x.c()));
        }
        if x.h() == 0 || x.w() == 0 || x.n() == 0 {
            return Err(Error::InvalidInput("empty generator input".into()));
        }
        Ok(())
    }

    /// Inference forward pass using running normalization statistics.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let l = &self.layout;
        let ws = &self.weights;
        let h0 = relu(&l.entry.forward(ws, x));
        let mut feats = vec![h0];
        for m in &l.modules {
            let h = feats.last().unwrap();
            let mut t = h.clone();
            for (conv, bn) in m.convs.iter().zip(&m.norms) {
                let (z, _) = bn.forward(ws, &conv.forward(ws, &t), NormMode::Eval);
                t = relu(&z);
            }
            feats.push(relu(&t.add(h)));
        }
        let refs: Vec<&Tensor<T>> = feats.iter().collect();
        let cat = Tensor::concat_channels(&refs);
        let u = relu(&l.fuse.forward(ws, &cat));
        let r = l.out.forward(ws, &u);
        Ok(x.add(&r))
    }

    /// Training forward pass: batch statistics, with every intermediate kept
    /// for [`Generator::backward`].
    pub fn forward_train(&self, x: &Tensor<T>) -> Result<(Tensor<T>, GeneratorTrace<T>)> {
        self.check_input(x)?;
        let l = &self.layout;
        let ws = &self.weights;
        let entry_act = relu(&l.entry.forward(ws, x));
        let mut modules: Vec<ModuleTrace<T>> = Vec::with_capacity(l.modules.len());
        for m in &l.modules {
            let h = modules.last().map(|t| &t.output).unwrap_or(&entry_act);
            let mut stages = Vec::with_capacity(m.convs.len());
            let mut t = h.clone();
            for (conv, bn) in m.convs.iter().zip(&m.norms) {
                let (z, cache) = bn.forward(ws, &conv.forward(ws, &t), NormMode::Train);
                let act = relu(&z);
                stages.push(StageTrace {
                    input: std::mem::replace(&mut t, act.clone()),
                    bn: cache,
                    act,
                });
            }
            let output = relu(&t.add(h));
            modules.push(ModuleTrace { stages, output });
        }
        let mut refs: Vec<&Tensor<T>> = vec![&entry_act];
        refs.extend(modules.iter().map(|m| &m.output));
        let concat = Tensor::concat_channels(&refs);
        let fuse_act = relu(&l.fuse.forward(ws, &concat));
        let r = l.out.forward(ws, &fuse_act);
        let y = x.add(&r);
        Ok((
            y,
            GeneratorTrace {
                input: x.clone(),
                entry_act,
                modules,
                concat,
                fuse_act,
            },
        ))
    }

    /// Backpropagates `dy` through a recorded pass, accumulating into
    /// `grads`. Returns the input gradient (including the end-to-end skip)
    /// when `need_dx` is set.
    pub fn backward(&self, trace: &GeneratorTrace<T>, dy: &Tensor<T>, grads: &mut Gradients<T>, need_dx: bool) -> Option<Tensor<T>> {
        let l = &self.layout;
        let ws = &self.weights;
        let d_fuse_act = l.out.backward(ws, &trace.fuse_act, dy, grads, true).unwrap();
        let d_fuse = relu_backward_from_output(&trace.fuse_act, &d_fuse_act);
        let d_cat = l.fuse.backward(ws, &trace.concat, &d_fuse, grads, true).unwrap();
        let counts = vec![self.spec.base_channels; self.spec.n_modules + 1];
        let mut d_feats = d_cat.split_channels(&counts);
        // d_feats[0] belongs to the entry activation, d_feats[m] to module m's output
        let mut dh = d_feats.pop().unwrap();
        for (mi, (m, mt)) in l.modules.iter().zip(&trace.modules).enumerate().rev() {
            let ds = relu_backward_from_output(&mt.output, &dh);
            let mut d_in = ds.clone();
            let mut dt = ds;
            for (j, (conv, bn)) in m.convs.iter().zip(&m.norms).enumerate().rev() {
                let st = &mt.stages[j];
                let dz = relu_backward_from_output(&st.act, &dt);
                let da = bn.backward(ws, st.bn.as_ref().expect("training trace"), &dz, grads);
                dt = conv.backward(ws, &st.input, &da, grads, true).unwrap();
            }
            d_in.add_assign(&dt);
            let carried = d_feats.pop().unwrap();
            debug_assert_eq!(d_feats.len(), mi);
            dh = d_in;
            dh.add_assign(&carried);
        }
        let d_entry = relu_backward_from_output(&trace.entry_act, &dh);
        let dx = l.entry.backward(ws, &trace.input, &d_entry, grads, need_dx);
        dx.map(|mut d| {
            d.add_assign(dy);
            d
        })
    }

    /// Folds the batch statistics of a training pass into the running
    /// averages used at inference.
    pub fn update_running_stats(&mut self, trace: &GeneratorTrace<T>) {
        for (m, mt) in self.layout.modules.iter().zip(&trace.modules) {
            for (bn, st) in m.norms.iter().zip(&mt.stages) {
                if let Some(cache) = &st.bn {
                    bn.update_running(&mut self.weights, cache);
                }
            }
        }
    }

    /// Zeroes every residual-branch grid: all module BN scales and shifts
    /// plus the output convolution. The network then computes `y = x`.
    pub fn zero_residual(&mut self) {
        let out = self.layout.out.clone();
        self.weights.get_mut(out.weight).iter_mut().for_each(|v| *v = T::zero());
        if let Some(b) = out.bias {
            self.weights.get_mut(b).iter_mut().for_each(|v| *v = T::zero());
        }
        for m in self.layout.modules.clone() {
            for bn in &m.norms {
                self.weights.get_mut(bn.gamma).iter_mut().for_each(|v| *v = T::zero());
                self.weights.get_mut(bn.beta).iter_mut().for_each(|v| *v = T::zero());
            }
        }
    }

    /// Names of the trainable grids, in declaration order.
    pub fn trainable_names(&self) -> Vec<&str> {
        self.weights
            .params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.name.as_str())
            .collect()
    }

    pub fn cast<U: Real>(&self) -> Generator<U> {
        Generator {
            spec: self.spec,
            layout: self.layout.clone(),
            weights: self.weights.cast(),
        }
    }
}

/// Builds a generator with Gaussian-initialized kernels.
pub fn build_generator<T: Real>(spec: GeneratorSpec, seed: u64) -> Result<Generator<T>> {
    Generator::new(spec, InitRecord::gaussian(seed))
}
