//! A small convolutional ε-predictor trained by plain SGD with
//! hand-derived gradients, plus its versioned binary weights format.
//!
//! The network sees four input channels — the latent x_t, the condition
//! raster rescaled to [−1, 1], and two constant planes carrying √ᾱ_t and
//! √(1−ᾱ_t) — and produces a single ε-prediction channel. All arithmetic
//! is f64 and single-threaded, so training and inference are bit-for-bit
//! deterministic for a given seed.

use std::io::{Read, Write};
use std::path::Path;

use super::{DiffusionError, Denoiser, LatentGrid, VarianceSchedule};
use crate::raster::GrayRaster;
use crate::rng::CounterRng;

const TAG_TOY_INIT: u64 = 4;
const TAG_TOY_TRAIN: u64 = 5;

/// Weights file magic.
const MAGIC: [u8; 4] = *b"TOYD";
const FORMAT_VERSION: u32 = 1;

/// Sanity bounds for decoding untrusted weight files.
const MAX_LAYERS: u32 = 8;
const MAX_CHANNELS: u32 = 64;
const MAX_KERNEL: u32 = 9;

/// Default architecture: 3 layers of 5×5 kernels, 16 hidden channels
/// (8433 parameters, receptive field 13 px).
const DEFAULT_KERNEL: usize = 5;
const DEFAULT_HIDDEN: usize = 16;
const DEFAULT_LAYERS: usize = 3;
const INPUT_CHANNELS: usize = 4;

/// Training-loop constants (frozen alongside the recipe).
const CROP: usize = 48;
const MOMENTUM: f64 = 0.9;
const GRAD_CLIP: f64 = 5.0;
/// Learning rate multiplier applied at 70% of the step budget.
const LR_DECAY: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
struct ConvLayer {
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    /// Weights indexed [out][in][ky][kx], contiguous in kx.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl ConvLayer {
    fn init(in_ch: usize, out_ch: usize, kernel: usize, rng: &mut CounterRng) -> Self {
        // Uniform fan-in initialization: U(−1/√fan_in, 1/√fan_in).
        let bound = 1.0 / ((in_ch * kernel * kernel) as f64).sqrt();
        let weights = (0..out_ch * in_ch * kernel * kernel)
            .map(|_| rng.uniform_in(-bound, bound))
            .collect();
        let bias = (0..out_ch).map(|_| rng.uniform_in(-bound, bound)).collect();
        ConvLayer {
            in_ch,
            out_ch,
            kernel,
            weights,
            bias,
        }
    }

    fn n_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// SAME-padded cross-correlation: out[oc][y][x] =
    /// bias[oc] + Σ_{ic,ky,kx} w[oc][ic][ky][kx]·in[ic][y+ky−r][x+kx−r],
    /// with zero outside the grid. Each kernel tap is applied as an
    /// axpy over contiguous row slices so the loop vectorizes.
    fn forward(&self, input: &[f64], w: usize, h: usize) -> Vec<f64> {
        let k = self.kernel;
        let r = k / 2;
        let mut out = vec![0.0; self.out_ch * w * h];
        for oc in 0..self.out_ch {
            let out_plane = &mut out[oc * w * h..(oc + 1) * w * h];
            out_plane.fill(self.bias[oc]);
            for ic in 0..self.in_ch {
                let in_plane = &input[ic * w * h..(ic + 1) * w * h];
                let w_base = (oc * self.in_ch + ic) * k * k;
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = self.weights[w_base + ky * k + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let dy = ky as isize - r as isize;
                        let dx = kx as isize - r as isize;
                        let y_lo = (-dy).max(0) as usize;
                        let y_hi = ((h as isize - dy).min(h as isize)) as usize;
                        let x_lo = (-dx).max(0) as usize;
                        let x_hi = ((w as isize - dx).min(w as isize)) as usize;
                        if x_lo >= x_hi {
                            continue;
                        }
                        let len = x_hi - x_lo;
                        for y in y_lo..y_hi {
                            let src = (y as isize + dy) as usize * w
                                + (x_lo as isize + dx) as usize;
                            let dst = y * w + x_lo;
                            for (o, i) in out_plane[dst..dst + len]
                                .iter_mut()
                                .zip(&in_plane[src..src + len])
                            {
                                *o += wv * i;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Backward pass: accumulates ∂L/∂w and ∂L/∂b from the upstream
    /// gradient `dz` (w.r.t. this layer's pre-activation) and returns
    /// ∂L/∂input unless this is the first layer.
    fn backward(
        &self,
        input: &[f64],
        dz: &[f64],
        w: usize,
        h: usize,
        d_weights: &mut [f64],
        d_bias: &mut [f64],
        want_d_input: bool,
    ) -> Option<Vec<f64>> {
        let k = self.kernel;
        let r = k / 2;
        for oc in 0..self.out_ch {
            let dz_plane = &dz[oc * w * h..(oc + 1) * w * h];
            d_bias[oc] += dz_plane.iter().sum::<f64>();
            for ic in 0..self.in_ch {
                let in_plane = &input[ic * w * h..(ic + 1) * w * h];
                let w_base = (oc * self.in_ch + ic) * k * k;
                for ky in 0..k {
                    for kx in 0..k {
                        let dy = ky as isize - r as isize;
                        let dx = kx as isize - r as isize;
                        let y_lo = (-dy).max(0) as usize;
                        let y_hi = ((h as isize - dy).min(h as isize)) as usize;
                        let x_lo = (-dx).max(0) as usize;
                        let x_hi = ((w as isize - dx).min(w as isize)) as usize;
                        if x_lo >= x_hi {
                            continue;
                        }
                        let len = x_hi - x_lo;
                        let mut acc = 0.0;
                        for y in y_lo..y_hi {
                            let src = (y as isize + dy) as usize * w
                                + (x_lo as isize + dx) as usize;
                            let dst = y * w + x_lo;
                            acc += dz_plane[dst..dst + len]
                                .iter()
                                .zip(&in_plane[src..src + len])
                                .map(|(a, b)| a * b)
                                .sum::<f64>();
                        }
                        d_weights[w_base + ky * k + kx] += acc;
                    }
                }
            }
        }
        if !want_d_input {
            return None;
        }
        // ∂L/∂in[ic][sy][sx] = Σ_{oc,ky,kx} dz[oc][sy−ky+r][sx−kx+r]·w[..];
        // realized as scatter from each dz position through the kernel.
        let mut d_input = vec![0.0; self.in_ch * w * h];
        for oc in 0..self.out_ch {
            let dz_plane = &dz[oc * w * h..(oc + 1) * w * h];
            for ic in 0..self.in_ch {
                let d_in_plane = &mut d_input[ic * w * h..(ic + 1) * w * h];
                let w_base = (oc * self.in_ch + ic) * k * k;
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = self.weights[w_base + ky * k + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let dy = ky as isize - r as isize;
                        let dx = kx as isize - r as isize;
                        let y_lo = (-dy).max(0) as usize;
                        let y_hi = ((h as isize - dy).min(h as isize)) as usize;
                        let x_lo = (-dx).max(0) as usize;
                        let x_hi = ((w as isize - dx).min(w as isize)) as usize;
                        if x_lo >= x_hi {
                            continue;
                        }
                        let len = x_hi - x_lo;
                        for y in y_lo..y_hi {
                            let src = (y as isize + dy) as usize * w
                                + (x_lo as isize + dx) as usize;
                            let dst = y * w + x_lo;
                            for (d, z) in d_in_plane[src..src + len]
                                .iter_mut()
                                .zip(&dz_plane[dst..dst + len])
                            {
                                *d += wv * z;
                            }
                        }
                    }
                }
            }
        }
        Some(d_input)
    }
}

/// The toy convolutional ε-predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyDenoiser {
    layers: Vec<ConvLayer>,
    sched: VarianceSchedule,
}

impl ToyDenoiser {
    /// Builds the default architecture with fan-in uniform initialization
    /// drawn from the seeded stream.
    pub fn init(sched: VarianceSchedule, seed: u64) -> Self {
        let mut rng = CounterRng::new(seed, TAG_TOY_INIT);
        let mut ch = vec![INPUT_CHANNELS];
        ch.extend(std::iter::repeat(DEFAULT_HIDDEN).take(DEFAULT_LAYERS - 1));
        ch.push(1);
        let layers = (0..DEFAULT_LAYERS)
            .map(|i| ConvLayer::init(ch[i], ch[i + 1], DEFAULT_KERNEL, &mut rng))
            .collect();
        ToyDenoiser { layers, sched }
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(ConvLayer::n_params).sum()
    }

    pub fn schedule(&self) -> &VarianceSchedule {
        &self.sched
    }

    /// Stacks the four input channels for one (x_t, condition, t) triple.
    /// The condition arrives in [0, 1] and is rescaled to model range.
    fn assemble_input(&self, x_t: &[f64], cond: &[f64], t: usize, n: usize) -> Vec<f64> {
        let sa = self.sched.alpha_bar(t).sqrt();
        let sb = (1.0 - self.sched.alpha_bar(t)).sqrt();
        let mut input = Vec::with_capacity(INPUT_CHANNELS * n);
        input.extend_from_slice(x_t);
        input.extend(cond.iter().map(|&v| 2.0 * v - 1.0));
        input.extend(std::iter::repeat(sa).take(n));
        input.extend(std::iter::repeat(sb).take(n));
        input
    }

    /// Forward pass keeping every layer's post-activation (index 0 is the
    /// input); used by training. tanh after every layer except the last.
    fn forward_full(&self, input: Vec<f64>, w: usize, h: usize) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input);
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = layer.forward(acts.last().unwrap(), w, h);
            if i + 1 < self.layers.len() {
                for v in &mut z {
                    *v = v.tanh();
                }
            }
            acts.push(z);
        }
        acts
    }

    fn predict_raw(&self, x_t: &[f64], cond: &[f64], t: usize, w: usize, h: usize) -> Vec<f64> {
        let input = self.assemble_input(x_t, cond, t, w * h);
        self.forward_full(input, w, h).pop().unwrap()
    }
}

impl Denoiser for ToyDenoiser {
    fn predict_eps(
        &self,
        x_t: &LatentGrid,
        condition: &GrayRaster,
        t: usize,
    ) -> Result<LatentGrid, DiffusionError> {
        if (condition.width, condition.height) != (x_t.width, x_t.height) {
            return Err(DiffusionError::ShapeMismatch {
                expected: (x_t.width, x_t.height),
                got: (condition.width, condition.height),
            });
        }
        if t > self.sched.t_max() {
            return Err(DiffusionError::InvalidParameter(format!(
                "timestep {t} exceeds T={}",
                self.sched.t_max()
            )));
        }
        let out = self.predict_raw(x_t.data(), condition.data(), t, x_t.width, x_t.height);
        LatentGrid::from_vec(x_t.width, x_t.height, out)
    }
}

/// Flat views over all parameters / gradient buffers, in file order.
struct GradBuffers {
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl GradBuffers {
    fn zeros_like(net: &ToyDenoiser) -> Self {
        GradBuffers {
            weights: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    fn reset(&mut self) {
        for g in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            g.fill(0.0);
        }
    }

    fn l2_norm(&self) -> f64 {
        self.weights
            .iter()
            .chain(self.biases.iter())
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    fn scale(&mut self, s: f64) {
        for g in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            for v in g {
                *v *= s;
            }
        }
    }
}

/// Computes the ε-MSE loss and parameter gradients for one sample.
/// Returns the loss; gradients are accumulated into `grads`.
fn loss_and_grads(
    net: &ToyDenoiser,
    input: Vec<f64>,
    target_eps: &[f64],
    w: usize,
    h: usize,
    grads: &mut GradBuffers,
) -> f64 {
    let n = w * h;
    let acts = net.forward_full(input, w, h);
    let pred = acts.last().unwrap();
    let loss = pred
        .iter()
        .zip(target_eps)
        .map(|(p, e)| (p - e) * (p - e))
        .sum::<f64>()
        / n as f64;
    // d(loss)/d(pred): the last layer has no activation, so this is also
    // dz for the final layer.
    let mut dz: Vec<f64> = pred
        .iter()
        .zip(target_eps)
        .map(|(p, e)| 2.0 * (p - e) / n as f64)
        .collect();
    for (i, layer) in net.layers.iter().enumerate().rev() {
        let d_input = layer.backward(
            &acts[i],
            &dz,
            w,
            h,
            &mut grads.weights[i],
            &mut grads.biases[i],
            i > 0,
        );
        if let Some(mut da) = d_input {
            // Propagate through the tanh separating layer i−1 from i:
            // acts[i] holds tanh(z_{i−1}), and d/dz tanh = 1 − tanh².
            for (g, a) in da.iter_mut().zip(&acts[i]) {
                *g *= 1.0 - a * a;
            }
            dz = da;
        }
    }
    loss
}

/// Trains the toy denoiser on (clean target, corrupted condition) pairs
/// by SGD with momentum on the ε-prediction MSE: random pair, random
/// crop, random timestep, fresh noise per step; gradients are clipped to
/// a global L2 norm and the learning rate decays once at 70% of the
/// budget. Deterministic per seed; `steps = 0` returns the freshly
/// initialized network. Returns the network and the per-step losses.
pub fn train_toy_denoiser(
    dataset: &[(GrayRaster, GrayRaster)],
    sched: &VarianceSchedule,
    steps: usize,
    lr: f64,
    seed: u64,
) -> Result<(ToyDenoiser, Vec<f64>), DiffusionError> {
    if dataset.is_empty() {
        return Err(DiffusionError::InvalidParameter(
            "training dataset must be nonempty".into(),
        ));
    }
    if !(lr.is_finite() && lr > 0.0) {
        return Err(DiffusionError::InvalidParameter(format!(
            "learning rate must be positive and finite, got {lr}"
        )));
    }
    for (i, (clean, cond)) in dataset.iter().enumerate() {
        if (clean.width, clean.height) != (cond.width, cond.height) {
            return Err(DiffusionError::ShapeMismatch {
                expected: (clean.width, clean.height),
                got: (cond.width, cond.height),
            });
        }
        if clean.width == 0 || clean.height == 0 {
            return Err(DiffusionError::InvalidParameter(format!(
                "dataset pair {i} is empty"
            )));
        }
    }
    let mut net = ToyDenoiser::init(sched.clone(), seed);
    let mut rng = CounterRng::new(seed, TAG_TOY_TRAIN);
    let mut grads = GradBuffers::zeros_like(&net);
    let mut velocity = GradBuffers::zeros_like(&net);
    let mut losses = Vec::with_capacity(steps);
    let decay_at = (steps as f64 * 0.7) as usize;
    let mut lr_now = lr;
    for step in 0..steps {
        if steps > 1 && step == decay_at {
            lr_now = lr * LR_DECAY;
        }
        let (clean, cond) = &dataset[rng.uniform_usize(0, dataset.len() - 1)];
        let cw = clean.width.min(CROP);
        let ch = clean.height.min(CROP);
        let x0 = rng.uniform_usize(0, clean.width - cw);
        let y0 = rng.uniform_usize(0, clean.height - ch);
        let t = rng.uniform_usize(1, sched.t_max());
        let n = cw * ch;
        let mut clean_crop = Vec::with_capacity(n);
        let mut cond_crop = Vec::with_capacity(n);
        for y in 0..ch {
            for x in 0..cw {
                clean_crop.push(2.0 * clean.get(x0 + x, y0 + y) - 1.0);
                cond_crop.push(cond.get(x0 + x, y0 + y));
            }
        }
        let eps: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let sa = sched.alpha_bar(t).sqrt();
        let sb = (1.0 - sched.alpha_bar(t)).sqrt();
        let x_t: Vec<f64> = clean_crop
            .iter()
            .zip(&eps)
            .map(|(&c, &e)| sa * c + sb * e)
            .collect();
        let input = net.assemble_input(&x_t, &cond_crop, t, n);

        grads.reset();
        let loss = loss_and_grads(&net, input, &eps, cw, ch, &mut grads);
        losses.push(loss);

        let norm = grads.l2_norm();
        let clip = GRAD_CLIP / (norm + 1e-6);
        if clip < 1.0 {
            grads.scale(clip);
        }
        for (i, layer) in net.layers.iter_mut().enumerate() {
            for ((wv, g), v) in layer
                .weights
                .iter_mut()
                .zip(&grads.weights[i])
                .zip(&mut velocity.weights[i])
            {
                *v = MOMENTUM * *v + g;
                *wv -= lr_now * *v;
            }
            for ((bv, g), v) in layer
                .bias
                .iter_mut()
                .zip(&grads.biases[i])
                .zip(&mut velocity.biases[i])
            {
                *v = MOMENTUM * *v + g;
                *bv -= lr_now * *v;
            }
        }
    }
    Ok((net, losses))
}

/// Serializes the network to the versioned little-endian weights format:
/// magic "TOYD", format version, layer count, kernel size, per-layer
/// channel pairs, total parameter count, then all parameters as f64
/// (per layer: weights in [out][in][ky][kx] order, then biases).
pub fn save_toy_denoiser(net: &ToyDenoiser, path: &Path) -> Result<(), DiffusionError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(net.layers.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(net.layers[0].kernel as u32).to_le_bytes());
    for layer in &net.layers {
        buf.extend_from_slice(&(layer.in_ch as u32).to_le_bytes());
        buf.extend_from_slice(&(layer.out_ch as u32).to_le_bytes());
    }
    buf.extend_from_slice(&(net.n_params() as u64).to_le_bytes());
    for layer in &net.layers {
        for v in layer.weights.iter().chain(layer.bias.iter()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

/// Loads a weights file saved by [`save_toy_denoiser`]. The schedule is
/// supplied by the caller (it is not part of the weights format).
pub fn load_toy_denoiser(path: &Path, sched: VarianceSchedule) -> Result<ToyDenoiser, DiffusionError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    parse_toy_weights(&bytes, sched)
}

/// Decodes the weights format from bytes, validating every header field
/// and the exact payload length before touching the parameters.
pub fn parse_toy_weights(
    bytes: &[u8],
    sched: VarianceSchedule,
) -> Result<ToyDenoiser, DiffusionError> {
    struct Cursor<'a> {
        bytes: &'a [u8],
        pos: usize,
    }
    impl<'a> Cursor<'a> {
        fn take(&mut self, n: usize) -> Result<&'a [u8], DiffusionError> {
            if self.pos + n > self.bytes.len() {
                return Err(DiffusionError::Format(format!(
                    "truncated at byte {} (wanted {n} more)",
                    self.pos
                )));
            }
            let s = &self.bytes[self.pos..self.pos + n];
            self.pos += n;
            Ok(s)
        }
        fn u32(&mut self) -> Result<u32, DiffusionError> {
            Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
        }
        fn u64(&mut self) -> Result<u64, DiffusionError> {
            Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
        }
        fn f64(&mut self) -> Result<f64, DiffusionError> {
            Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
        }
    }
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(DiffusionError::Format("bad magic (expected TOYD)".into()));
    }
    let version = cur.u32()?;
    if version != FORMAT_VERSION {
        return Err(DiffusionError::Format(format!(
            "unsupported format version {version}"
        )));
    }
    let n_layers = cur.u32()?;
    if n_layers == 0 || n_layers > MAX_LAYERS {
        return Err(DiffusionError::Format(format!(
            "layer count {n_layers} outside [1, {MAX_LAYERS}]"
        )));
    }
    let kernel = cur.u32()?;
    if kernel == 0 || kernel > MAX_KERNEL || kernel % 2 == 0 {
        return Err(DiffusionError::Format(format!(
            "kernel size {kernel} must be odd and within [1, {MAX_KERNEL}]"
        )));
    }
    let mut dims = Vec::with_capacity(n_layers as usize);
    for i in 0..n_layers {
        let in_ch = cur.u32()?;
        let out_ch = cur.u32()?;
        for (name, c) in [("input", in_ch), ("output", out_ch)] {
            if c == 0 || c > MAX_CHANNELS {
                return Err(DiffusionError::Format(format!(
                    "layer {i} {name} channels {c} outside [1, {MAX_CHANNELS}]"
                )));
            }
        }
        if let Some(&(_, prev_out)) = dims.last() {
            if in_ch != prev_out {
                return Err(DiffusionError::Format(format!(
                    "layer {i} input channels {in_ch} do not chain from previous output {prev_out}"
                )));
            }
        }
        dims.push((in_ch, out_ch));
    }
    let declared: u64 = cur.u64()?;
    let expected: u64 = dims
        .iter()
        .map(|&(i, o)| (o as u64) * (i as u64) * (kernel as u64) * (kernel as u64) + o as u64)
        .sum();
    if declared != expected {
        return Err(DiffusionError::Format(format!(
            "declared parameter count {declared} does not match architecture ({expected})"
        )));
    }
    if bytes.len() - cur.pos != expected as usize * 8 {
        return Err(DiffusionError::Format(format!(
            "payload is {} bytes, architecture needs {}",
            bytes.len() - cur.pos,
            expected * 8
        )));
    }
    let mut layers = Vec::with_capacity(dims.len());
    for &(in_ch, out_ch) in &dims {
        let nw = out_ch as usize * in_ch as usize * (kernel * kernel) as usize;
        let mut weights = Vec::with_capacity(nw);
        for _ in 0..nw {
            let v = cur.f64()?;
            if !v.is_finite() {
                return Err(DiffusionError::Format("non-finite weight".into()));
            }
            weights.push(v);
        }
        let mut bias = Vec::with_capacity(out_ch as usize);
        for _ in 0..out_ch {
            let v = cur.f64()?;
            if !v.is_finite() {
                return Err(DiffusionError::Format("non-finite bias".into()));
            }
            bias.push(v);
        }
        layers.push(ConvLayer {
            in_ch: in_ch as usize,
            out_ch: out_ch as usize,
            kernel: kernel as usize,
            weights,
            bias,
        });
    }
    Ok(ToyDenoiser {
        layers,
        sched,
    })
}
