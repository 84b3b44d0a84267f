use crate::par::*;

use super::{Gradients, Real, Tensor, WeightSet};

/// 2-D convolution with square kernels, computed as im2col + GEMM per
/// sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub weight: usize,
    pub bias: Option<usize>,
}

impl Conv2d {
    /// Registers the kernel (and optionally bias) grids in `ws`.
    #[allow(clippy::too_many_arguments)]
    pub fn register<T: Real>(
        ws: &mut WeightSet<T>,
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
    ) -> Self {
        let weight = ws.add_gaussian(&format!("{name}.weight"), vec![out_c, in_c, kernel, kernel]);
        let bias = bias.then(|| ws.add_constant(&format!("{name}.bias"), vec![out_c], 0.0, true));
        Self {
            in_c,
            out_c,
            kernel,
            stride,
            pad,
            weight,
            bias,
        }
    }

    pub fn output_size(&self, input: usize) -> Option<usize> {
        let padded = input + 2 * self.pad;
        (padded >= self.kernel).then(|| (padded - self.kernel) / self.stride + 1)
    }

    fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            self.output_size(h).expect("input smaller than kernel"),
            self.output_size(w).expect("input smaller than kernel"),
        )
    }

    pub fn forward<T: Real>(&self, ws: &WeightSet<T>, x: &Tensor<T>) -> Tensor<T> {
        let [n, c, h, w] = x.shape();
        assert_eq!(c, self.in_c, "conv input channel mismatch");
        let (oh, ow) = self.out_hw(h, w);
        let p = oh * ow;
        let kk = self.in_c * self.kernel * self.kernel;
        let weight = ws.get(self.weight);
        let bias = self.bias.map(|b| ws.get(b));
        let direct = self.is_same_stride1();
        let mut out = Tensor::zeros([n, self.out_c, oh, ow]);
        out.data_mut()
            .par_chunks_mut(self.out_c * p)
            .zip(x.data().par_chunks(c * h * w))
            .for_each(|(y, xs)| {
                if direct {
                    self.direct_forward(weight, xs, h, w, y);
                } else {
                    let mut cols = vec![T::zero(); kk * p];
                    self.im2col(xs, h, w, oh, ow, &mut cols);
                    T::gemm(self.out_c, kk, p, weight, false, &cols, false, T::zero(), y);
                }
                if let Some(b) = bias {
                    for (o, row) in y.chunks_mut(p).enumerate() {
                        row.iter_mut().for_each(|v| *v += b[o]);
                    }
                }
            });
        out
    }

    /// Accumulates parameter gradients and returns the input gradient when
    /// `need_dx` is set.
    pub fn backward<T: Real>(
        &self,
        ws: &WeightSet<T>,
        x: &Tensor<T>,
        dy: &Tensor<T>,
        grads: &mut Gradients<T>,
        need_dx: bool,
    ) -> Option<Tensor<T>> {
        let [n, c, h, w] = x.shape();
        let (oh, ow) = self.out_hw(h, w);
        assert_eq!(dy.shape(), [n, self.out_c, oh, ow], "conv dy shape mismatch");
        let p = oh * ow;
        let kk = self.in_c * self.kernel * self.kernel;
        let weight = ws.get(self.weight);
        let direct = self.is_same_stride1();
        let partials: Vec<(Vec<T>, Option<Vec<T>>)> = (0..n)
            .into_par_iter()
            .map(|i| {
                if direct {
                    let mut dw = vec![T::zero(); self.out_c * kk];
                    self.direct_weight_grad(x.sample(i), dy.sample(i), h, w, &mut dw);
                    let dx = need_dx.then(|| {
                        let mut dx = vec![T::zero(); c * h * w];
                        self.direct_input_grad(weight, dy.sample(i), h, w, &mut dx);
                        dx
                    });
                    return (dw, dx);
                }
                let mut cols = vec![T::zero(); kk * p];
                self.im2col(x.sample(i), h, w, oh, ow, &mut cols);
                let dys = dy.sample(i);
                let mut dw = vec![T::zero(); self.out_c * kk];
                // dW = dY · colsᵀ
                T::gemm(self.out_c, p, kk, dys, false, &cols, true, T::zero(), &mut dw);
                let dx = need_dx.then(|| {
                    // dcols = Wᵀ · dY, reusing the cols buffer
                    T::gemm(kk, self.out_c, p, weight, true, dys, false, T::zero(), &mut cols);
                    let mut dx = vec![T::zero(); c * h * w];
                    self.col2im(&cols, h, w, oh, ow, &mut dx);
                    dx
                });
                (dw, dx)
            })
            .collect();
        if let Some(b) = self.bias {
            let gb = grads.get_mut(b);
            for i in 0..n {
                for (o, row) in dy.sample(i).chunks(p).enumerate() {
                    gb[o] += row.iter().copied().sum::<T>();
                }
            }
        }
        let gw = grads.get_mut(self.weight);
        let mut dx_all = need_dx.then(|| Vec::with_capacity(n * c * h * w));
        for (dw, dx) in partials {
            for (g, v) in gw.iter_mut().zip(dw) {
                *g += v;
            }
            if let (Some(all), Some(dx)) = (dx_all.as_mut(), dx) {
                all.extend_from_slice(&dx);
            }
        }
        dx_all.map(|d| Tensor::from_vec([n, c, h, w], d).expect("dx shape"))
    }

    /// Odd kernel, unit stride, padding that preserves the spatial size.
    fn is_same_stride1(&self) -> bool {
        self.stride == 1 && self.kernel % 2 == 1 && self.pad == self.kernel / 2
    }

    /// Row-segment bounds for a tap offset `d` on a line of length `len`:
    /// output positions `[lo, hi)` read input positions `[lo + d, hi + d)`.
    #[inline]
    fn tap_span(d: isize, len: usize) -> (usize, usize) {
        let lo = (-d).max(0) as usize;
        let hi = (len as isize - d.max(0)) as usize;
        (lo, hi.max(lo))
    }

    fn direct_forward<T: Real>(&self, weight: &[T], x: &[T], h: usize, w: usize, y: &mut [T]) {
        let k = self.kernel;
        let hw = h * w;
        let pad = self.pad as isize;
        for o in 0..self.out_c {
            let yo = &mut y[o * hw..(o + 1) * hw];
            for ci in 0..self.in_c {
                let xc = &x[ci * hw..(ci + 1) * hw];
                for ki in 0..k {
                    let dr = ki as isize - pad;
                    let (r_lo, r_hi) = Self::tap_span(dr, h);
                    for kj in 0..k {
                        let wv = weight[((o * self.in_c + ci) * k + ki) * k + kj];
                        let dc = kj as isize - pad;
                        let (c_lo, c_hi) = Self::tap_span(dc, w);
                        for r in r_lo..r_hi {
                            let src_r = (r as isize + dr) as usize;
                            let dst = &mut yo[r * w + c_lo..r * w + c_hi];
                            let src = &xc[src_r * w + (c_lo as isize + dc) as usize..][..c_hi - c_lo];
                            for (d, &s) in dst.iter_mut().zip(src) {
                                *d += wv * s;
                            }
                        }
                    }
                }
            }
        }
    }

    fn direct_input_grad<T: Real>(&self, weight: &[T], dy: &[T], h: usize, w: usize, dx: &mut [T]) {
        let k = self.kernel;
        let hw = h * w;
        let pad = self.pad as isize;
        for ci in 0..self.in_c {
            let dxc = &mut dx[ci * hw..(ci + 1) * hw];
            for o in 0..self.out_c {
                let dyo = &dy[o * hw..(o + 1) * hw];
                for ki in 0..k {
                    let dr = ki as isize - pad;
                    let (r_lo, r_hi) = Self::tap_span(dr, h);
                    for kj in 0..k {
                        let wv = weight[((o * self.in_c + ci) * k + ki) * k + kj];
                        let dc = kj as isize - pad;
                        let (c_lo, c_hi) = Self::tap_span(dc, w);
                        // output (r, c) read input (r + dr, c + dc)
                        for r in r_lo..r_hi {
                            let in_r = (r as isize + dr) as usize;
                            let src = &dyo[r * w + c_lo..r * w + c_hi];
                            let dst = &mut dxc[in_r * w + (c_lo as isize + dc) as usize..][..c_hi - c_lo];
                            for (d, &s) in dst.iter_mut().zip(src) {
                                *d += wv * s;
                            }
                        }
                    }
                }
            }
        }
    }

    fn direct_weight_grad<T: Real>(&self, x: &[T], dy: &[T], h: usize, w: usize, dw: &mut [T]) {
        let k = self.kernel;
        let hw = h * w;
        let pad = self.pad as isize;
        for o in 0..self.out_c {
            let dyo = &dy[o * hw..(o + 1) * hw];
            for ci in 0..self.in_c {
                let xc = &x[ci * hw..(ci + 1) * hw];
                for ki in 0..k {
                    let dr = ki as isize - pad;
                    let (r_lo, r_hi) = Self::tap_span(dr, h);
                    for kj in 0..k {
                        let dc = kj as isize - pad;
                        let (c_lo, c_hi) = Self::tap_span(dc, w);
                        let mut acc = T::zero();
                        for r in r_lo..r_hi {
                            let src_r = (r as isize + dr) as usize;
                            let a = &dyo[r * w + c_lo..r * w + c_hi];
                            let b = &xc[src_r * w + (c_lo as isize + dc) as usize..][..c_hi - c_lo];
                            acc += dot(a, b);
                        }
                        dw[((o * self.in_c + ci) * k + ki) * k + kj] = acc;
                    }
                }
            }
        }
    }

    fn im2col<T: Real>(&self, x: &[T], h: usize, w: usize, oh: usize, ow: usize, cols: &mut [T]) {
        let k = self.kernel;
        let p = oh * ow;
        let (s, pad) = (self.stride, self.pad as isize);
        for ci in 0..self.in_c {
            let plane = &x[ci * h * w..(ci + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = &mut cols[((ci * k + ki) * k + kj) * p..][..p];
                    for oy in 0..oh {
                        let iy = (oy * s) as isize + ki as isize - pad;
                        let dst = &mut row[oy * ow..(oy + 1) * ow];
                        if iy < 0 || iy >= h as isize {
                            dst.iter_mut().for_each(|v| *v = T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        if s == 1 {
                            let off = kj as isize - pad;
                            let lo = (-off).max(0) as usize;
                            let hi = ((w as isize - off).min(ow as isize)).max(lo as isize) as usize;
                            dst[..lo].iter_mut().for_each(|v| *v = T::zero());
                            dst[hi..].iter_mut().for_each(|v| *v = T::zero());
                            let a = (lo as isize + off) as usize;
                            dst[lo..hi].copy_from_slice(&src[a..a + (hi - lo)]);
                        } else {
                            for (ox, d) in dst.iter_mut().enumerate() {
                                let ix = (ox * s) as isize + kj as isize - pad;
                                *d = if ix < 0 || ix >= w as isize { T::zero() } else { src[ix as usize] };
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Real>(&self, cols: &[T], h: usize, w: usize, oh: usize, ow: usize, dx: &mut [T]) {
        let k = self.kernel;
        let p = oh * ow;
        let (s, pad) = (self.stride, self.pad as isize);
        for ci in 0..self.in_c {
            let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = &cols[((ci * k + ki) * k + kj) * p..][..p];
                    for oy in 0..oh {
                        let iy = (oy * s) as isize + ki as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        let src = &row[oy * ow..(oy + 1) * ow];
                        for (ox, &v) in src.iter().enumerate() {
                            let ix = (ox * s) as isize + kj as isize - pad;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Dot product with eight independent accumulators so the compiler can
/// vectorize it.
#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Whether normalization uses batch statistics or stored running averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    Train,
    Eval,
}

/// Saved state of a batch-normalization forward pass in training mode.
#[derive(Debug, Clone, PartialEq)]
pub struct BnCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    pub batch_mean: Vec<T>,
    pub batch_var: Vec<T>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm2d {
    pub channels: usize,
    pub gamma: usize,
    pub beta: usize,
    pub running_mean: usize,
    pub running_var: usize,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm2d {
    pub fn register<T: Real>(ws: &mut WeightSet<T>, name: &str, channels: usize) -> Self {
        Self {
            channels,
            gamma: ws.add_constant(&format!("{name}.gamma"), vec![channels], 1.0, true),
            beta: ws.add_constant(&format!("{name}.beta"), vec![channels], 0.0, true),
            running_mean: ws.add_constant(&format!("{name}.running_mean"), vec![channels], 0.0, false),
            running_var: ws.add_constant(&format!("{name}.running_var"), vec![channels], 1.0, false),
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn forward<T: Real>(&self, ws: &WeightSet<T>, x: &Tensor<T>, mode: NormMode) -> (Tensor<T>, Option<BnCache<T>>) {
        let [n, c, h, w] = x.shape();
        assert_eq!(c, self.channels, "batch-norm channel mismatch");
        let hw = h * w;
        let gamma = ws.get(self.gamma);
        let beta = ws.get(self.beta);
        let eps = T::of(self.eps);
        let (mean, var) = match mode {
            NormMode::Eval => (ws.get(self.running_mean).to_vec(), ws.get(self.running_var).to_vec()),
            NormMode::Train => {
                let count = T::of((n * hw) as f64);
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for ch in 0..c {
                    let mut s = T::zero();
                    for i in 0..n {
                        s += x.sample(i)[ch * hw..(ch + 1) * hw].iter().copied().sum::<T>();
                    }
                    let m = s / count;
                    let mut q = T::zero();
                    for i in 0..n {
                        q += x.sample(i)[ch * hw..(ch + 1) * hw]
                            .iter()
                            .map(|&v| (v - m) * (v - m))
                            .sum::<T>();
                    }
                    mean[ch] = m;
                    var[ch] = q / count;
                }
                (mean, var)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); x.data().len()];
        let mut y = Tensor::zeros(x.shape());
        for i in 0..n {
            for ch in 0..c {
                let off = (i * c + ch) * hw;
                for j in off..off + hw {
                    let xh = (x.data()[j] - mean[ch]) * inv_std[ch];
                    xhat[j] = xh;
                    y.data_mut()[j] = gamma[ch] * xh + beta[ch];
                }
            }
        }
        let cache = (mode == NormMode::Train).then(|| BnCache {
            xhat,
            inv_std,
            batch_mean: mean,
            batch_var: var,
            count: n * hw,
        });
        (y, cache)
    }

    pub fn backward<T: Real>(&self, ws: &WeightSet<T>, cache: &BnCache<T>, dy: &Tensor<T>, grads: &mut Gradients<T>) -> Tensor<T> {
        let [n, c, h, w] = dy.shape();
        let hw = h * w;
        let gamma = ws.get(self.gamma);
        let m = T::of(cache.count as f64);
        let mut sum_dy = vec![T::zero(); c];
        let mut sum_dy_xhat = vec![T::zero(); c];
        for i in 0..n {
            for ch in 0..c {
                let off = (i * c + ch) * hw;
                for j in off..off + hw {
                    sum_dy[ch] += dy.data()[j];
                    sum_dy_xhat[ch] += dy.data()[j] * cache.xhat[j];
                }
            }
        }
        {
            let gg = grads.get_mut(self.gamma);
            for ch in 0..c {
                gg[ch] += sum_dy_xhat[ch];
            }
        }
        {
            let gb = grads.get_mut(self.beta);
            for ch in 0..c {
                gb[ch] += sum_dy[ch];
            }
        }
        let mut dx = Tensor::zeros(dy.shape());
        for i in 0..n {
            for ch in 0..c {
                let k = gamma[ch] * cache.inv_std[ch] / m;
                let off = (i * c + ch) * hw;
                for j in off..off + hw {
                    dx.data_mut()[j] = k * (m * dy.data()[j] - sum_dy[ch] - cache.xhat[j] * sum_dy_xhat[ch]);
                }
            }
        }
        dx
    }

    /// Folds one batch's statistics into the running averages. Variance is
    /// stored unbiased.
    pub fn update_running<T: Real>(&self, ws: &mut WeightSet<T>, cache: &BnCache<T>) {
        let mom = T::of(self.momentum);
        let keep = T::one() - mom;
        let unbias = if cache.count > 1 {
            T::of(cache.count as f64 / (cache.count - 1) as f64)
        } else {
            T::one()
        };
        for ch in 0..self.channels {
            let rm = ws.get_mut(self.running_mean);
            rm[ch] = keep * rm[ch] + mom * cache.batch_mean[ch];
            let rv = ws.get_mut(self.running_var);
            rv[ch] = keep * rv[ch] + mom * cache.batch_var[ch] * unbias;
        }
    }
}

/// Saved state of an instance-normalization forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct InCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
}

/// Per-sample, per-channel normalization over the spatial plane with a
/// learned per-channel affine.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceNorm2d {
    pub channels: usize,
    pub gamma: usize,
    pub beta: usize,
    pub eps: f64,
}

impl InstanceNorm2d {
    pub fn register<T: Real>(ws: &mut WeightSet<T>, name: &str, channels: usize) -> Self {
        Self {
            channels,
            gamma: ws.add_constant(&format!("{name}.gamma"), vec![channels], 1.0, true),
            beta: ws.add_constant(&format!("{name}.beta"), vec![channels], 0.0, true),
            eps: 1e-5,
        }
    }

    pub fn forward<T: Real>(&self, ws: &WeightSet<T>, x: &Tensor<T>) -> (Tensor<T>, InCache<T>) {
        let [n, c, h, w] = x.shape();
        assert_eq!(c, self.channels, "instance-norm channel mismatch");
        let hw = h * w;
        let cnt = T::of(hw as f64);
        let eps = T::of(self.eps);
        let gamma = ws.get(self.gamma);
        let beta = ws.get(self.beta);
        let mut xhat = vec![T::zero(); x.data().len()];
        let mut inv_std = vec![T::zero(); n * c];
        let mut y = Tensor::zeros(x.shape());
        for i in 0..n {
            for ch in 0..c {
                let off = (i * c + ch) * hw;
                let plane = &x.data()[off..off + hw];
                let mean = plane.iter().copied().sum::<T>() / cnt;
                let var = plane.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / cnt;
                let is = T::one() / (var + eps).sqrt();
                inv_std[i * c + ch] = is;
                for j in 0..hw {
                    let xh = (plane[j] - mean) * is;
                    xhat[off + j] = xh;
                    y.data_mut()[off + j] = gamma[ch] * xh + beta[ch];
                }
            }
        }
        (y, InCache { xhat, inv_std })
    }

    pub fn backward<T: Real>(&self, ws: &WeightSet<T>, cache: &InCache<T>, dy: &Tensor<T>, grads: &mut Gradients<T>) -> Tensor<T> {
        let [n, c, h, w] = dy.shape();
        let hw = h * w;
        let m = T::of(hw as f64);
        let gamma = ws.get(self.gamma);
        let mut dx = Tensor::zeros(dy.shape());
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        for i in 0..n {
            for ch in 0..c {
                let off = (i * c + ch) * hw;
                let d = &dy.data()[off..off + hw];
                let xh = &cache.xhat[off..off + hw];
                let s_dy: T = d.iter().copied().sum();
                let s_dyx: T = d.iter().zip(xh).map(|(&a, &b)| a * b).sum();
                dgamma[ch] += s_dyx;
                dbeta[ch] += s_dy;
                let k = gamma[ch] * cache.inv_std[i * c + ch] / m;
                let out = &mut dx.data_mut()[off..off + hw];
                for j in 0..hw {
                    out[j] = k * (m * d[j] - s_dy - xh[j] * s_dyx);
                }
            }
        }
        grads.get_mut(self.gamma).iter_mut().zip(&dgamma).for_each(|(g, &v)| *g += v);
        grads.get_mut(self.beta).iter_mut().zip(&dbeta).for_each(|(g, &v)| *g += v);
        dx
    }
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// ReLU backward keyed on the forward output (`y > 0` iff `x > 0`).
pub fn relu_backward_from_output<T: Real>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = dy.clone();
    for (d, &v) in dx.data_mut().iter_mut().zip(y.data()) {
        if v <= T::zero() {
            *d = T::zero();
        }
    }
    dx
}

pub fn leaky_relu<T: Real>(x: &Tensor<T>, slope: f64) -> Tensor<T> {
    let s = T::of(slope);
    x.map(|v| if v > T::zero() { v } else { s * v })
}

/// Leaky-ReLU backward keyed on the forward output; valid for `slope > 0`.
pub fn leaky_relu_backward<T: Real>(y: &Tensor<T>, dy: &Tensor<T>, slope: f64) -> Tensor<T> {
    let s = T::of(slope);
    let mut dx = dy.clone();
    for (d, &v) in dx.data_mut().iter_mut().zip(y.data()) {
        if v <= T::zero() {
            *d *= s;
        }
    }
    dx
}
