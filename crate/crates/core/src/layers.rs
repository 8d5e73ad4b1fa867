//! The master-only layers: max pooling, cross-channel response normalization,
//! the fully-connected classifier, softmax cross-entropy, and plain SGD.
//! These never leave the master, so they only need a fixed, deterministic
//! evaluation order — not a partitionable one.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::{Tensor4, TensorError};

/// Argmax bookkeeping from a pooling forward pass, needed to route gradients.
#[derive(Debug, Clone)]
pub struct PoolIndices {
    input_dims: (usize, usize, usize, usize),
    window: usize,
    stride: usize,
    /// Flat `y·w + x` index into each sample/channel plane, one per output.
    argmax: Vec<u32>,
}

impl PoolIndices {
    pub fn output_dims(&self) -> (usize, usize, usize, usize) {
        let (n, c, h, w) = self.input_dims;
        (n, c, h / self.stride, w / self.stride)
    }
}

fn check_pool_config(
    dims: (usize, usize, usize, usize),
    window: usize,
    stride: usize,
) -> Result<(), TensorError> {
    let (_, _, h, w) = dims;
    if window == 0 || window != stride {
        return Err(TensorError::Config(format!(
            "pooling must use non-overlapping blocks (window {window} == stride {stride} > 0)"
        )));
    }
    if h % stride != 0 || w % stride != 0 {
        return Err(TensorError::Dimension(format!(
            "input {h}x{w} not divisible by pooling stride {stride}"
        )));
    }
    Ok(())
}

/// Max pooling over non-overlapping `window`×`window` blocks. Ties keep the
/// first element in row-major block order.
pub fn max_pool_forward(
    input: &Tensor4,
    window: usize,
    stride: usize,
) -> Result<(Tensor4, PoolIndices), TensorError> {
    let (out, argmax) = pool_impl(input, window, stride, true)?;
    Ok((
        out,
        PoolIndices { input_dims: input.dims(), window, stride, argmax },
    ))
}

/// Max pooling without argmax bookkeeping, for inference-only passes.
pub fn max_pool_forward_only(
    input: &Tensor4,
    window: usize,
    stride: usize,
) -> Result<Tensor4, TensorError> {
    Ok(pool_impl(input, window, stride, false)?.0)
}

fn pool_impl(
    input: &Tensor4,
    window: usize,
    stride: usize,
    keep_indices: bool,
) -> Result<(Tensor4, Vec<u32>), TensorError> {
    check_pool_config(input.dims(), window, stride)?;
    let (n, c, h, w) = input.dims();
    let (oh, ow) = (h / stride, w / stride);
    let mut out = Tensor4::zeros(n, c, oh, ow)?;
    let mut argmax = Vec::with_capacity(if keep_indices { n * c * oh * ow } else { 0 });
    for ni in 0..n {
        for ci in 0..c {
            let plane = input.plane(ni, ci);
            let out_plane = out.plane_mut(ni, ci);
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0u32;
                    for dy in 0..window {
                        let y = oy * stride + dy;
                        for dx in 0..window {
                            let x = ox * stride + dx;
                            let v = plane[y * w + x];
                            if v > best {
                                best = v;
                                best_idx = (y * w + x) as u32;
                            }
                        }
                    }
                    out_plane[oy * ow + ox] = best;
                    if keep_indices {
                        argmax.push(best_idx);
                    }
                }
            }
        }
    }
    Ok((out, argmax))
}

/// Routes each output gradient back to the input element that won its block.
pub fn max_pool_backward(
    grad_out: &Tensor4,
    indices: &PoolIndices,
) -> Result<Tensor4, TensorError> {
    if grad_out.dims() != indices.output_dims() {
        return Err(TensorError::Consistency(format!(
            "pool gradient dims {:?} do not match recorded output dims {:?}",
            grad_out.dims(),
            indices.output_dims()
        )));
    }
    if grad_out.len() != indices.argmax.len() {
        return Err(TensorError::Consistency(format!(
            "pool gradient has {} values but {} recorded indices",
            grad_out.len(),
            indices.argmax.len()
        )));
    }
    let (n, c, h, w) = indices.input_dims;
    let (_, _, oh, ow) = grad_out.dims();
    let mut out = Tensor4::zeros(n, c, h, w)?;
    let plane_len = h * w;
    let mut cursor = 0usize;
    for ni in 0..n {
        for ci in 0..c {
            let g_plane = grad_out.plane(ni, ci);
            let out_plane = out.plane_mut(ni, ci);
            for i in 0..oh * ow {
                let idx = indices.argmax[cursor + i] as usize;
                if idx >= plane_len {
                    return Err(TensorError::Consistency(format!(
                        "recorded pool index {idx} out of range for {h}x{w} plane"
                    )));
                }
                out_plane[idx] += g_plane[i];
            }
            cursor += oh * ow;
        }
    }
    Ok(out)
}

/// Cross-channel response normalization hyperparameters.
///
/// `out = in / (bias + alpha · Σ_window in²)^beta`, where the window covers
/// `depth` channels centered on the current one, clipped at the boundaries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormParams {
    pub depth: usize,
    pub alpha: f64,
    pub beta: f64,
    pub bias: f64,
}

impl Default for NormParams {
    fn default() -> Self {
        Self { depth: 5, alpha: 1e-4, beta: 0.75, bias: 2.0 }
    }
}

impl NormParams {
    fn validate(&self) -> Result<(), TensorError> {
        if self.depth == 0 || self.depth % 2 == 0 {
            return Err(TensorError::Config(format!(
                "normalization depth must be odd and positive, got {}",
                self.depth
            )));
        }
        if !(self.alpha >= 0.0) || !(self.beta > 0.0) || !(self.bias > 0.0) {
            return Err(TensorError::Config(format!(
                "normalization needs alpha >= 0, beta > 0, bias > 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

pub fn lrn_forward(input: &Tensor4, p: &NormParams) -> Result<Tensor4, TensorError> {
    let mut out = input.clone();
    lrn_forward_inplace(&mut out, p)?;
    Ok(out)
}

/// In-place variant for inference passes where the input is not needed again;
/// bit-identical to [`lrn_forward`].
pub fn lrn_forward_inplace(t: &mut Tensor4, p: &NormParams) -> Result<(), TensorError> {
    p.validate()?;
    let (n, c, h, w) = t.dims();
    let r = p.depth / 2;
    let plane = h * w;
    let mut strip = vec![0.0f64; c];
    for ni in 0..n {
        for pix in 0..plane {
            for ci in 0..c {
                strip[ci] = t.plane(ni, ci)[pix];
            }
            for ci in 0..c {
                let lo = ci.saturating_sub(r);
                let hi = (ci + r).min(c - 1);
                let mut sum = 0.0;
                for &v in &strip[lo..=hi] {
                    sum += v * v;
                }
                let denom = (p.bias + p.alpha * sum).powf(p.beta);
                t.plane_mut(ni, ci)[pix] = strip[ci] / denom;
            }
        }
    }
    Ok(())
}

/// Analytic gradient of the normalization:
/// g_in[k] = g[k]·s_k^{−β} − 2αβ·x_k·Σ_{c∈W(k)} g[c]·x_c·s_c^{−β−1},
/// with s_c the window sum term from the forward pass.
pub fn lrn_backward(
    input: &Tensor4,
    grad_out: &Tensor4,
    p: &NormParams,
) -> Result<Tensor4, TensorError> {
    p.validate()?;
    if input.dims() != grad_out.dims() {
        return Err(TensorError::Dimension(format!(
            "normalization gradient dims {:?} do not match input dims {:?}",
            grad_out.dims(),
            input.dims()
        )));
    }
    let (n, c, h, w) = input.dims();
    let r = p.depth / 2;
    let plane = h * w;
    let mut out = Tensor4::zeros(n, c, h, w)?;
    let mut x = vec![0.0f64; c];
    let mut g = vec![0.0f64; c];
    let mut s = vec![0.0f64; c];
    let mut t = vec![0.0f64; c];
    for ni in 0..n {
        for pix in 0..plane {
            for ci in 0..c {
                x[ci] = input.plane(ni, ci)[pix];
                g[ci] = grad_out.plane(ni, ci)[pix];
            }
            for ci in 0..c {
                let lo = ci.saturating_sub(r);
                let hi = (ci + r).min(c - 1);
                let mut sum = 0.0;
                for &v in &x[lo..=hi] {
                    sum += v * v;
                }
                s[ci] = p.bias + p.alpha * sum;
                t[ci] = g[ci] * x[ci] * s[ci].powf(-p.beta - 1.0);
            }
            for ci in 0..c {
                let lo = ci.saturating_sub(r);
                let hi = (ci + r).min(c - 1);
                let mut window_t = 0.0;
                for &v in &t[lo..=hi] {
                    window_t += v;
                }
                let gi = g[ci] * s[ci].powf(-p.beta) - 2.0 * p.alpha * p.beta * x[ci] * window_t;
                out.plane_mut(ni, ci)[pix] = gi;
            }
        }
    }
    Ok(out)
}

/// Fully-connected layer parameters: `weights` is `out_units`×`in_units`
/// row-major, one bias per output unit.
#[derive(Debug, Clone, PartialEq)]
pub struct FcParams {
    pub in_units: usize,
    pub out_units: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl FcParams {
    pub fn zeros(in_units: usize, out_units: usize) -> Result<Self, TensorError> {
        if in_units == 0 || out_units == 0 {
            return Err(TensorError::Config(format!(
                "fully-connected layer needs positive unit counts, got {in_units}x{out_units}"
            )));
        }
        Ok(Self {
            in_units,
            out_units,
            weights: vec![0.0; out_units * in_units],
            biases: vec![0.0; out_units],
        })
    }

    /// Gaussian weights, zero biases; deterministic for a given RNG state.
    pub fn randn<R: Rng>(
        in_units: usize,
        out_units: usize,
        sigma: f64,
        rng: &mut R,
    ) -> Result<Self, TensorError> {
        let mut p = Self::zeros(in_units, out_units)?;
        let dist = Normal::new(0.0, sigma)
            .map_err(|e| TensorError::Config(format!("bad normal distribution: {e}")))?;
        for w in &mut p.weights {
            *w = dist.sample(rng);
        }
        Ok(p)
    }
}

/// `y = W·flatten(x) + b` per sample; output shape (n, out_units, 1, 1).
pub fn fc_forward(input: &Tensor4, p: &FcParams) -> Result<Tensor4, TensorError> {
    let (n, c, h, w) = input.dims();
    if c * h * w != p.in_units {
        return Err(TensorError::Dimension(format!(
            "fully-connected layer expects {} inputs, got {c}x{h}x{w} = {}",
            p.in_units,
            c * h * w
        )));
    }
    let mut out = Tensor4::zeros(n, p.out_units, 1, 1)?;
    for ni in 0..n {
        let x = input.sample(ni);
        let y = &mut out.data_mut()[ni * p.out_units..(ni + 1) * p.out_units];
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &p.weights[o * p.in_units..(o + 1) * p.in_units];
            let mut acc = p.biases[o];
            for (a, b) in row.iter().zip(x) {
                acc += a * b;
            }
            *yo = acc;
        }
    }
    Ok(out)
}

/// Gradients of the fully-connected layer: input, weights, biases.
pub fn fc_backward(
    input: &Tensor4,
    p: &FcParams,
    grad_out: &Tensor4,
) -> Result<(Tensor4, Vec<f64>, Vec<f64>), TensorError> {
    let (n, c, h, w) = input.dims();
    let (gn, go, gh, gw) = grad_out.dims();
    if c * h * w != p.in_units || gn != n || go != p.out_units || gh != 1 || gw != 1 {
        return Err(TensorError::Dimension(format!(
            "fully-connected backward shapes inconsistent: input {:?}, grad {:?}, layer {}x{}",
            input.dims(),
            grad_out.dims(),
            p.out_units,
            p.in_units
        )));
    }
    let mut grad_input = Tensor4::zeros(n, c, h, w)?;
    let mut grad_w = vec![0.0f64; p.weights.len()];
    let mut grad_b = vec![0.0f64; p.out_units];
    for ni in 0..n {
        let x = input.sample(ni);
        let g = &grad_out.data()[ni * p.out_units..(ni + 1) * p.out_units];
        let gi_len = c * h * w;
        let gi = &mut grad_input.data_mut()[ni * gi_len..(ni + 1) * gi_len];
        for (o, &go_v) in g.iter().enumerate() {
            grad_b[o] += go_v;
            let row = &p.weights[o * p.in_units..(o + 1) * p.in_units];
            let grow = &mut grad_w[o * p.in_units..(o + 1) * p.in_units];
            for i in 0..p.in_units {
                grow[i] += go_v * x[i];
                gi[i] += go_v * row[i];
            }
        }
    }
    Ok((grad_input, grad_w, grad_b))
}

/// Mean softmax cross-entropy over the batch, with the gradient w.r.t. the
/// logits. Numerically stabilized by per-sample max subtraction.
pub fn softmax_loss(logits: &Tensor4, labels: &[usize]) -> Result<(f64, Tensor4), TensorError> {
    let (n, classes, h, w) = logits.dims();
    if h != 1 || w != 1 {
        return Err(TensorError::Dimension(format!(
            "softmax expects (n, classes, 1, 1) logits, got {:?}",
            logits.dims()
        )));
    }
    if labels.len() != n {
        return Err(TensorError::Data(format!("{} labels for {} samples", labels.len(), n)));
    }
    let mut grad = Tensor4::zeros(n, classes, 1, 1)?;
    let mut loss = 0.0;
    for ni in 0..n {
        let label = labels[ni];
        if label >= classes {
            return Err(TensorError::Data(format!(
                "label {label} out of range for {classes} classes"
            )));
        }
        let z = &logits.data()[ni * classes..(ni + 1) * classes];
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for &v in z {
            sum += (v - max).exp();
        }
        loss += sum.ln() - (z[label] - max);
        let g = &mut grad.data_mut()[ni * classes..(ni + 1) * classes];
        for (i, &v) in z.iter().enumerate() {
            let p = (v - max).exp() / sum;
            g[i] = (p - if i == label { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    Ok((loss / n as f64, grad))
}

/// Plain SGD: `p ← p − lr·g`, elementwise.
pub fn sgd_step(params: &mut [f64], grads: &[f64], lr: f64) -> Result<(), TensorError> {
    if params.len() != grads.len() {
        return Err(TensorError::Dimension(format!(
            "sgd: {} parameters vs {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
    Ok(())
}
