//! A small CPU encoder-decoder segmentation network with hand-written backprop.
//!
//! Convolutions go through im2col and single-threaded `sgemm`, so a fixed seed
//! gives bit-identical training runs on the same machine.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Channel-major activation tensor for a single sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    fn plane(&self) -> usize {
        self.height * self.width
    }
}

/// A trainable parameter with its gradient and Adam moments.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
    m: Vec<f32>,
    v: Vec<f32>,
}

impl Param {
    fn new(value: Vec<f32>) -> Self {
        let n = value.len();
        Self {
            value,
            grad: vec![0.0; n],
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Adam {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    step: i32,
}

impl Adam {
    pub fn new(learning_rate: f32) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [&mut Param]) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for p in params.iter_mut() {
            for i in 0..p.value.len() {
                let g = p.grad[i];
                p.m[i] = self.beta1 * p.m[i] + (1.0 - self.beta1) * g;
                p.v[i] = self.beta2 * p.v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = p.m[i] / bc1;
                let v_hat = p.v[i] / bc2;
                p.value[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
            }
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }
}

/// `c[m×n] = alpha * a[m×k] · b[k×n] + beta * c` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    rsa: usize,
    csa: usize,
    b: &[f32],
    rsb: usize,
    csb: usize,
    beta: f32,
    c: &mut [f32],
) {
    assert!(c.len() >= m * n);
    assert!(m == 0 || k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(k == 0 || n == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Square-kernel convolution with stride 1 and "same" zero padding.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub weight: Param,
    pub bias: Param,
}

struct ConvCache {
    cols: Vec<f32>,
    height: usize,
    width: usize,
}

impl Conv2d {
    fn new(in_channels: usize, out_channels: usize, kernel: usize, gain: f32, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let std = (gain / fan_in as f32).sqrt();
        let normal = Normal::new(0.0f32, std).expect("finite std");
        let weight = (0..out_channels * fan_in).map(|_| normal.sample(rng)).collect();
        Self {
            in_channels,
            out_channels,
            kernel,
            weight: Param::new(weight),
            bias: Param::new(vec![0.0; out_channels]),
        }
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn im2col(&self, input: &Tensor) -> Vec<f32> {
        let (h, w, k) = (input.height, input.width, self.kernel);
        if k == 1 {
            return input.data.clone();
        }
        let pad = (k / 2) as isize;
        let hw = h * w;
        let mut cols = vec![0.0f32; self.patch_len() * hw];
        for c in 0..self.in_channels {
            let plane = &input.data[c * hw..(c + 1) * hw];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut cols[((c * k + ky) * k + kx) * hw..][..hw];
                    let dy = ky as isize - pad;
                    let dx = kx as isize - pad;
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let src = &plane[sy as usize * w..][..w];
                        let dst = &mut row[y * w..][..w];
                        let x0 = (-dx).max(0) as usize;
                        let x1 = (w as isize - dx.max(0)) as usize;
                        for x in x0..x1 {
                            dst[x] = src[(x as isize + dx) as usize];
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f32], height: usize, width: usize) -> Tensor {
        let k = self.kernel;
        let mut out = Tensor::zeros(self.in_channels, height, width);
        if k == 1 {
            out.data.copy_from_slice(cols);
            return out;
        }
        let pad = (k / 2) as isize;
        let hw = height * width;
        for c in 0..self.in_channels {
            let plane = &mut out.data[c * hw..(c + 1) * hw];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &cols[((c * k + ky) * k + kx) * hw..][..hw];
                    let dy = ky as isize - pad;
                    let dx = kx as isize - pad;
                    for y in 0..height {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= height as isize {
                            continue;
                        }
                        let dst = &mut plane[sy as usize * width..][..width];
                        let src = &row[y * width..][..width];
                        let x0 = (-dx).max(0) as usize;
                        let x1 = (width as isize - dx.max(0)) as usize;
                        for x in x0..x1 {
                            dst[(x as isize + dx) as usize] += src[x];
                        }
                    }
                }
            }
        }
        out
    }

    fn forward(&self, input: &Tensor) -> (Tensor, ConvCache) {
        debug_assert_eq!(input.channels, self.in_channels);
        let hw = input.plane();
        let cols = self.im2col(input);
        let mut out = Tensor::zeros(self.out_channels, input.height, input.width);
        for (o, b) in self.bias.value.iter().enumerate() {
            out.data[o * hw..(o + 1) * hw].fill(*b);
        }
        let pl = self.patch_len();
        gemm(self.out_channels, pl, hw, &self.weight.value, pl, 1, &cols, hw, 1, 1.0, &mut out.data);
        (
            out,
            ConvCache {
                cols,
                height: input.height,
                width: input.width,
            },
        )
    }

    /// Accumulates parameter gradients; returns the input gradient when asked for.
    fn backward(&mut self, grad_out: &[f32], cache: &ConvCache, need_input_grad: bool) -> Option<Tensor> {
        let hw = cache.height * cache.width;
        let pl = self.patch_len();
        // dW += dOut · colsᵀ
        gemm(self.out_channels, hw, pl, grad_out, hw, 1, &cache.cols, 1, hw, 1.0, &mut self.weight.grad);
        for (o, g) in self.bias.grad.iter_mut().enumerate() {
            *g += grad_out[o * hw..(o + 1) * hw].iter().sum::<f32>();
        }
        if !need_input_grad {
            return None;
        }
        // dCols = Wᵀ · dOut
        let mut dcols = vec![0.0f32; pl * hw];
        gemm(pl, self.out_channels, hw, &self.weight.value, 1, pl, grad_out, hw, 1, 0.0, &mut dcols);
        Some(self.col2im(&dcols, cache.height, cache.width))
    }
}

fn relu_in_place(t: &mut Tensor) {
    t.data.iter_mut().for_each(|v| *v = v.max(0.0));
}

fn relu_backward(grad: &mut [f32], activated: &[f32]) {
    for (g, a) in grad.iter_mut().zip(activated) {
        if *a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// 2×2 max pooling; also returns the flat argmax index per output cell.
fn max_pool(input: &Tensor) -> (Tensor, Vec<u32>) {
    let (h, w) = (input.height / 2, input.width / 2);
    let mut out = Tensor::zeros(input.channels, h, w);
    let mut arg = vec![0u32; out.data.len()];
    for c in 0..input.channels {
        for y in 0..h {
            for x in 0..w {
                let mut best = f32::NEG_INFINITY;
                let mut best_idx = 0;
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let idx = (c * input.height + 2 * y + dy) * input.width + 2 * x + dx;
                    if input.data[idx] > best {
                        best = input.data[idx];
                        best_idx = idx;
                    }
                }
                let o = (c * h + y) * w + x;
                out.data[o] = best;
                arg[o] = best_idx as u32;
            }
        }
    }
    (out, arg)
}

fn max_pool_backward(grad_out: &[f32], arg: &[u32], input_len: usize) -> Vec<f32> {
    let mut grad = vec![0.0; input_len];
    for (g, &i) in grad_out.iter().zip(arg) {
        grad[i as usize] += g;
    }
    grad
}

fn upsample_nearest(input: &Tensor) -> Tensor {
    let (h, w) = (input.height * 2, input.width * 2);
    let mut out = Tensor::zeros(input.channels, h, w);
    for c in 0..input.channels {
        for y in 0..h {
            let src = &input.data[(c * input.height + y / 2) * input.width..][..input.width];
            let dst = &mut out.data[(c * h + y) * w..][..w];
            for x in 0..w {
                dst[x] = src[x / 2];
            }
        }
    }
    out
}

fn upsample_backward(grad_out: &[f32], channels: usize, height: usize, width: usize) -> Vec<f32> {
    let (h2, w2) = (height * 2, width * 2);
    let mut grad = vec![0.0; channels * height * width];
    for c in 0..channels {
        for y in 0..h2 {
            for x in 0..w2 {
                grad[(c * height + y / 2) * width + x / 2] += grad_out[(c * h2 + y) * w2 + x];
            }
        }
    }
    grad
}

fn concat(a: &Tensor, b: &Tensor) -> Tensor {
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Tensor {
        channels: a.channels + b.channels,
        height: a.height,
        width: a.width,
        data,
    }
}

/// Two 3×3 conv + ReLU layers.
#[derive(Debug, Clone)]
struct DoubleConv {
    first: Conv2d,
    second: Conv2d,
}

struct DoubleConvCache {
    first: ConvCache,
    first_out: Tensor,
    second: ConvCache,
    second_out: Tensor,
}

impl DoubleConv {
    fn new(in_c: usize, out_c: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            first: Conv2d::new(in_c, out_c, 3, 2.0, rng),
            second: Conv2d::new(out_c, out_c, 3, 2.0, rng),
        }
    }

    fn forward(&self, input: &Tensor) -> (Tensor, DoubleConvCache) {
        let (mut a, first) = self.first.forward(input);
        relu_in_place(&mut a);
        let (mut b, second) = self.second.forward(&a);
        relu_in_place(&mut b);
        (
            b.clone(),
            DoubleConvCache {
                first,
                first_out: a,
                second,
                second_out: b,
            },
        )
    }

    fn backward(&mut self, mut grad: Vec<f32>, cache: &DoubleConvCache, need_input_grad: bool) -> Option<Tensor> {
        relu_backward(&mut grad, &cache.second_out.data);
        let mut mid = self
            .second
            .backward(&grad, &cache.second, true)
            .expect("input grad requested");
        relu_backward(&mut mid.data, &cache.first_out.data);
        self.first.backward(&mid.data, &cache.first, need_input_grad)
    }

    fn params_mut(&mut self) -> [&mut Param; 4] {
        [
            &mut self.first.weight,
            &mut self.first.bias,
            &mut self.second.weight,
            &mut self.second.bias,
        ]
    }
}

/// Number of 2× downsampling stages; inputs must be divisible by `2^DEPTH`.
pub const DEPTH: usize = 3;
pub const DOWNSAMPLE_FACTOR: usize = 1 << DEPTH;

/// U-shaped encoder-decoder: three pooling stages, skip connections by
/// channel concatenation, nearest-neighbour upsampling and a 1×1 class head.
#[derive(Debug, Clone)]
pub struct UNetLite {
    in_channels: usize,
    num_classes: usize,
    base_channels: usize,
    encoder: Vec<DoubleConv>,
    decoder: Vec<DoubleConv>,
    head: Conv2d,
}

struct ForwardCache {
    encoder: Vec<DoubleConvCache>,
    pool_args: Vec<Vec<u32>>,
    decoder: Vec<DoubleConvCache>,
    head: ConvCache,
}

impl UNetLite {
    pub fn new(in_channels: usize, num_classes: usize, base_channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let widths: Vec<usize> = (0..=DEPTH).map(|l| base_channels << l).collect();
        let mut encoder = Vec::with_capacity(DEPTH + 1);
        let mut prev = in_channels;
        for &w in &widths {
            encoder.push(DoubleConv::new(prev, w, &mut rng));
            prev = w;
        }
        let mut decoder = Vec::with_capacity(DEPTH);
        for level in (0..DEPTH).rev() {
            decoder.push(DoubleConv::new(widths[level + 1] + widths[level], widths[level], &mut rng));
        }
        let head = Conv2d::new(base_channels, num_classes, 1, 1.0, &mut rng);
        Self {
            in_channels,
            num_classes,
            base_channels,
            encoder,
            decoder,
            head,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn base_channels(&self) -> usize {
        self.base_channels
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for block in self.encoder.iter_mut().chain(self.decoder.iter_mut()) {
            out.extend(block.params_mut());
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    pub fn parameter_count(&mut self) -> usize {
        self.params_mut().iter().map(|p| p.value.len()).sum()
    }

    fn forward_cached(&self, input: &Tensor) -> (Tensor, ForwardCache) {
        let mut skips = Vec::with_capacity(DEPTH);
        let mut enc_caches = Vec::with_capacity(DEPTH + 1);
        let mut pool_args = Vec::with_capacity(DEPTH);
        let mut x = input.clone();
        for (level, block) in self.encoder.iter().enumerate() {
            let (out, cache) = block.forward(&x);
            enc_caches.push(cache);
            if level < DEPTH {
                let (pooled, arg) = max_pool(&out);
                pool_args.push(arg);
                skips.push(out);
                x = pooled;
            } else {
                x = out;
            }
        }
        let mut dec_caches = Vec::with_capacity(DEPTH);
        for block in &self.decoder {
            let skip = skips.pop().expect("one skip per level");
            let merged = concat(&upsample_nearest(&x), &skip);
            let (out, cache) = block.forward(&merged);
            dec_caches.push(cache);
            x = out;
        }
        let (logits, head) = self.head.forward(&x);
        (
            logits,
            ForwardCache {
                encoder: enc_caches,
                pool_args,
                decoder: dec_caches,
                head,
            },
        )
    }

    /// Class logits, `num_classes × H × W`.
    pub fn forward(&self, input: &Tensor) -> Tensor {
        self.forward_cached(input).0
    }

    fn backward(&mut self, grad_logits: &[f32], cache: &ForwardCache) {
        let mut grad = self
            .head
            .backward(grad_logits, &cache.head, true)
            .expect("input grad requested");
        // gradients flowing into each encoder output through its skip connection,
        // indexed by level (decoder blocks run deepest first, so walk them in reverse)
        let mut skip_grads: Vec<Vec<f32>> = Vec::with_capacity(DEPTH);
        for i in (0..DEPTH).rev() {
            let merged = self.decoder[i]
                .backward(grad.data, &cache.decoder[i], true)
                .expect("input grad requested");
            let level = DEPTH - 1 - i;
            let up_channels = self.base_channels << (level + 1);
            let plane = merged.height * merged.width;
            let (up_grad, skip_grad) = merged.data.split_at(up_channels * plane);
            skip_grads.push(skip_grad.to_vec());
            let data = upsample_backward(up_grad, up_channels, merged.height / 2, merged.width / 2);
            grad = Tensor {
                channels: up_channels,
                height: merged.height / 2,
                width: merged.width / 2,
                data,
            };
        }
        for level in (0..=DEPTH).rev() {
            let mut g = grad.data;
            if level < DEPTH {
                let skip = &skip_grads[level];
                let block_out = &cache.encoder[level].second_out;
                let mut pooled = max_pool_backward(&g, &cache.pool_args[level], block_out.data.len());
                for (p, s) in pooled.iter_mut().zip(skip) {
                    *p += s;
                }
                g = pooled;
            }
            let need = level > 0;
            match self.encoder[level].backward(g, &cache.encoder[level], need) {
                Some(t) => grad = t,
                None => break,
            }
        }
    }

    /// One forward/backward pass for a single sample. Gradients are scaled by
    /// `1 / normalizer` so that a batch sums to the mean pixel loss.
    ///
    /// Returns the summed (unnormalized) cross-entropy over the sample's pixels.
    pub fn accumulate_gradients(&mut self, input: &Tensor, labels: &[u8], normalizer: f32) -> f64 {
        let (logits, cache) = self.forward_cached(input);
        let (loss, grad) = softmax_cross_entropy(&logits, labels, normalizer);
        self.backward(&grad, &cache);
        loss
    }

    pub fn step(&mut self, optimizer: &mut Adam) {
        let mut params = self.params_mut();
        optimizer.update(&mut params);
    }

    /// Flattened parameter values in a fixed order.
    pub fn export_weights(&mut self) -> Vec<Vec<f32>> {
        self.params_mut().iter().map(|p| p.value.clone()).collect()
    }

    pub fn import_weights(&mut self, weights: &[Vec<f32>]) -> Result<(), String> {
        let mut params = self.params_mut();
        if params.len() != weights.len() {
            return Err(format!("expected {} tensors, found {}", params.len(), weights.len()));
        }
        for (i, (p, w)) in params.iter_mut().zip(weights).enumerate() {
            if p.value.len() != w.len() {
                return Err(format!("tensor {i}: expected {} values, found {}", p.value.len(), w.len()));
            }
            p.value.copy_from_slice(w);
        }
        Ok(())
    }
}

/// Summed pixel cross-entropy and its gradient w.r.t. the logits divided by `normalizer`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[u8], normalizer: f32) -> (f64, Vec<f32>) {
    let k = logits.channels;
    let hw = logits.plane();
    let mut grad = vec![0.0f32; logits.data.len()];
    let mut loss = 0.0f64;
    let mut probs = vec![0.0f32; k];
    for px in 0..hw {
        let mut max = f32::NEG_INFINITY;
        for c in 0..k {
            max = max.max(logits.data[c * hw + px]);
        }
        let mut sum = 0.0f32;
        for c in 0..k {
            probs[c] = (logits.data[c * hw + px] - max).exp();
            sum += probs[c];
        }
        let label = usize::from(labels[px]);
        for c in 0..k {
            let p = probs[c] / sum;
            let target = if c == label { 1.0 } else { 0.0 };
            grad[c * hw + px] = (p - target) / normalizer;
        }
        loss += f64::from(sum.ln() + max - logits.data[label * hw + px]);
    }
    (loss, grad)
}

/// Per-pixel argmax over the channel axis.
pub fn argmax_channels(logits: &Tensor) -> Vec<u8> {
    let hw = logits.plane();
    (0..hw)
        .map(|px| {
            let mut best = 0;
            for c in 1..logits.channels {
                if logits.data[c * hw + px] > logits.data[best * hw + px] {
                    best = c;
                }
            }
            best as u8
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_tensor(c: usize, h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor {
            channels: c,
            height: h,
            width: w,
            data: (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    /// Direct nested-loop convolution.
    fn naive_conv(conv: &Conv2d, input: &Tensor) -> Tensor {
        let k = conv.kernel as isize;
        let pad = k / 2;
        let mut out = Tensor::zeros(conv.out_channels, input.height, input.width);
        for o in 0..conv.out_channels {
            for y in 0..input.height as isize {
                for x in 0..input.width as isize {
                    let mut acc = conv.bias.value[o];
                    for c in 0..conv.in_channels {
                        for ky in 0..k {
                            for kx in 0..k {
                                let (sy, sx) = (y + ky - pad, x + kx - pad);
                                if sy < 0 || sx < 0 || sy >= input.height as isize || sx >= input.width as isize {
                                    continue;
                                }
                                let wi = ((o * conv.in_channels + c) * conv.kernel + ky as usize) * conv.kernel + kx as usize;
                                acc += conv.weight.value[wi]
                                    * input.data[(c * input.height + sy as usize) * input.width + sx as usize];
                            }
                        }
                    }
                    out.data[(o * input.height + y as usize) * input.width + x as usize] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut conv = Conv2d::new(3, 5, 3, 2.0, &mut rng);
        conv.bias.value = vec![0.1, -0.2, 0.3, 0.0, 0.5];
        let input = random_tensor(3, 6, 7, 2);
        let (fast, _) = conv.forward(&input);
        let slow = naive_conv(&conv, &input);
        for (a, b) in fast.data.iter().zip(&slow.data) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    /// Finite-difference check of the full network gradient on a few weights.
    #[test]
    fn network_gradient_matches_finite_differences() {
        let mut net = UNetLite::new(3, 3, 2, 5);
        let input = random_tensor(3, 8, 8, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let labels: Vec<u8> = (0..64).map(|_| rng.random_range(0..3)).collect();
        net.accumulate_gradients(&input, &labels, 1.0);
        let analytic: Vec<Vec<f32>> = net.params_mut().iter().map(|p| p.grad.clone()).collect();

        let loss_at = |net: &UNetLite| -> f64 {
            let (logits, _) = net.forward_cached(&input);
            softmax_cross_entropy(&logits, &labels, 1.0).0
        };
        let probes = [(0usize, 3usize), (4, 10), (12, 1), (20, 7), (28, 2), (29, 1)];
        for &(tensor, idx) in &probes {
            // small enough to stay clear of ReLU / max-pool switch points
            let eps = 3e-3f32;
            let mut plus = net.clone();
            plus.params_mut()[tensor].value[idx] += eps;
            let mut minus = net.clone();
            minus.params_mut()[tensor].value[idx] -= eps;
            let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * f64::from(eps));
            let a = f64::from(analytic[tensor][idx]);
            assert!(
                (numeric - a).abs() <= 2e-2 * numeric.abs().max(a.abs()).max(1e-2),
                "tensor {tensor}[{idx}]: numeric {numeric} vs analytic {a}"
            );
        }
    }

    #[test]
    fn output_shape_and_determinism() {
        let a = UNetLite::new(3, 4, 4, 9);
        let b = UNetLite::new(3, 4, 4, 9);
        let input = random_tensor(3, 16, 24, 1);
        let la = a.forward(&input);
        assert_eq!((la.channels, la.height, la.width), (4, 16, 24));
        assert_eq!(la, b.forward(&input));
        assert_eq!(argmax_channels(&la).len(), 16 * 24);
    }

    #[test]
    fn default_width_is_about_half_a_million_parameters() {
        let mut net = UNetLite::new(3, 4, 16, 0);
        let n = net.parameter_count();
        assert!((400_000..600_000).contains(&n), "{n}");
    }
}
