use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gemm::mm;
use super::{ArchSpec, Dataset, LayerSpec, LearnError, Shape};
use crate::rng;

/// Weights of one linear or convolution layer as an `n_red x n_out`
/// row-major matrix. A convolution's reduction index runs over
/// `(dy, dx, in_channel)`. Masked entries are pruned and stay zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub n_red: usize,
    pub n_out: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<Vec<bool>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FloatModel {
    pub arch: ArchSpec,
    pub params: Vec<Param>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

/// Per-layer pre-activation offsets as a function of the current weights.
pub type OffsetHook<'a> = &'a dyn Fn(&FloatModel) -> Vec<Vec<f64>>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Learning rate multiplier applied after every epoch.
    pub lr_decay: f64,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 6,
            batch: 64,
            lr: 0.05,
            momentum: 0.9,
            lr_decay: 0.7,
            seed: 1,
        }
    }
}

/// Per-sample patches of a channels-last batch: one row per output pixel,
/// columns ordered `(dy, dx, channel)`; padding reads as zero.
pub(crate) fn im2col<T: Copy + Default>(x: &[T], batch: usize, s: Shape, k: usize, pad: usize) -> Vec<T> {
    let (ho, wo) = (s.h + 2 * pad - k + 1, s.w + 2 * pad - k + 1);
    let cols = k * k * s.c;
    let mut out = vec![T::default(); batch * ho * wo * cols];
    for n in 0..batch {
        let img = &x[n * s.len()..(n + 1) * s.len()];
        for oy in 0..ho {
            for ox in 0..wo {
                let row = &mut out[((n * ho + oy) * wo + ox) * cols..][..cols];
                for dy in 0..k {
                    let iy = oy + dy;
                    if iy < pad || iy - pad >= s.h {
                        continue;
                    }
                    for dx in 0..k {
                        let ix = ox + dx;
                        if ix < pad || ix - pad >= s.w {
                            continue;
                        }
                        let src = ((iy - pad) * s.w + (ix - pad)) * s.c;
                        let dst = (dy * k + dx) * s.c;
                        row[dst..dst + s.c].copy_from_slice(&img[src..src + s.c]);
                    }
                }
            }
        }
    }
    out
}

fn col2im(d: &[f64], batch: usize, s: Shape, k: usize, pad: usize) -> Vec<f64> {
    let (ho, wo) = (s.h + 2 * pad - k + 1, s.w + 2 * pad - k + 1);
    let cols = k * k * s.c;
    let mut out = vec![0.0; batch * s.len()];
    for n in 0..batch {
        let img = &mut out[n * s.len()..(n + 1) * s.len()];
        for oy in 0..ho {
            for ox in 0..wo {
                let row = &d[((n * ho + oy) * wo + ox) * cols..][..cols];
                for dy in 0..k {
                    let iy = oy + dy;
                    if iy < pad || iy - pad >= s.h {
                        continue;
                    }
                    for dx in 0..k {
                        let ix = ox + dx;
                        if ix < pad || ix - pad >= s.w {
                            continue;
                        }
                        let dst = ((iy - pad) * s.w + (ix - pad)) * s.c;
                        let src = (dy * k + dx) * s.c;
                        for ch in 0..s.c {
                            img[dst + ch] += row[src + ch];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Non-overlapping max pooling over channels-last values. Returns the
/// pooled values and, for each, the flat input index it came from.
pub(crate) fn max_pool<T: Copy + PartialOrd>(x: &[T], batch: usize, s: Shape, size: usize) -> (Vec<T>, Vec<usize>) {
    let (ho, wo) = (s.h / size, s.w / size);
    let mut vals = Vec::with_capacity(batch * ho * wo * s.c);
    let mut arg = Vec::with_capacity(vals.capacity());
    for n in 0..batch {
        let base = n * s.len();
        for oy in 0..ho {
            for ox in 0..wo {
                for ch in 0..s.c {
                    let mut best = base + ((oy * size) * s.w + ox * size) * s.c + ch;
                    for dy in 0..size {
                        for dx in 0..size {
                            let i = base + ((oy * size + dy) * s.w + ox * size + dx) * s.c + ch;
                            if x[i] > x[best] {
                                best = i;
                            }
                        }
                    }
                    vals.push(x[best]);
                    arg.push(best);
                }
            }
        }
    }
    (vals, arg)
}

enum Cache {
    Linear(Vec<f64>),
    Conv(Vec<f64>),
    Relu(Vec<bool>),
    Pool(Vec<usize>, usize),
    Flatten,
}

/// Softmax cross-entropy averaged over the batch, and its logit gradient.
pub(crate) fn softmax_xent(logits: &[f64], labels: &[u8], classes: usize) -> (f64, Vec<f64>) {
    let b = labels.len();
    let mut grad = vec![0.0; logits.len()];
    let mut loss = 0.0;
    for n in 0..b {
        let z = &logits[n * classes..(n + 1) * classes];
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|&v| libm::exp(v - m)).collect();
        let s: f64 = e.iter().sum();
        let y = labels[n] as usize;
        loss += libm::log(s) - (z[y] - m);
        for c in 0..classes {
            grad[n * classes + c] = (e[c] / s - if c == y { 1.0 } else { 0.0 }) / b as f64;
        }
    }
    (loss / b as f64, grad)
}

pub(crate) fn argmax<T: PartialOrd + Copy>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl FloatModel {
    /// He-uniform weights, zero biases.
    pub fn init(arch: ArchSpec, seed: u64) -> Result<FloatModel, LearnError> {
        let dims = arch.matmuls()?;
        let params = dims
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let mut r = rng::stream(seed, &[0x1417, i as u64]);
                let lim = libm::sqrt(6.0 / d.n_red as f64);
                Param {
                    n_red: d.n_red,
                    n_out: d.n_out,
                    w: (0..d.n_red * d.n_out).map(|_| r.gen_range(-lim..lim)).collect(),
                    b: vec![0.0; d.n_out],
                    mask: None,
                }
            })
            .collect();
        Ok(FloatModel { arch, params })
    }

    pub fn n_classes(&self) -> usize {
        self.arch.output_len().unwrap_or(0)
    }

    fn run(
        &self,
        x: &[f64],
        batch: usize,
        offsets: Option<&[Vec<f64>]>,
        keep: bool,
        mut trace: Option<&mut Vec<Vec<f64>>>,
    ) -> Result<(Vec<f64>, Vec<Cache>), LearnError> {
        let shapes = self.arch.shapes()?;
        if x.len() != batch * shapes[0].len() {
            return Err(LearnError::Shape(format!(
                "{} inputs for a batch of {batch} x {}",
                x.len(),
                shapes[0].len()
            )));
        }
        let mut cur = x.to_vec();
        let mut caches = Vec::new();
        let mut pi = 0;
        for (li, layer) in self.arch.layers.iter().enumerate() {
            let s = shapes[li];
            cur = match *layer {
                LayerSpec::Linear { .. } | LayerSpec::Conv { .. } => {
                    let p = &self.params[pi];
                    let (a, rows) = match *layer {
                        LayerSpec::Conv { k, pad, .. } => {
                            let o = shapes[li + 1];
                            (im2col(&cur, batch, s, k, pad), batch * o.h * o.w)
                        }
                        _ => (core::mem::take(&mut cur), batch),
                    };
                    let mut y = vec![0.0; rows * p.n_out];
                    for r in 0..rows {
                        y[r * p.n_out..(r + 1) * p.n_out].copy_from_slice(&p.b);
                    }
                    if let Some(off) = offsets.and_then(|o| o.get(pi)) {
                        for r in 0..rows {
                            for (v, o) in y[r * p.n_out..(r + 1) * p.n_out].iter_mut().zip(off) {
                                *v += o;
                            }
                        }
                    }
                    mm(rows, p.n_red, p.n_out, &a, false, &p.w, false, &mut y, 1.0);
                    if keep {
                        caches.push(match *layer {
                            LayerSpec::Conv { .. } => Cache::Conv(a),
                            _ => Cache::Linear(a),
                        });
                    }
                    pi += 1;
                    y
                }
                LayerSpec::Relu => {
                    if keep {
                        caches.push(Cache::Relu(cur.iter().map(|&v| v > 0.0).collect()));
                    }
                    cur.iter().map(|&v| v.max(0.0)).collect()
                }
                LayerSpec::MaxPool { size } => {
                    let (v, arg) = max_pool(&cur, batch, s, size);
                    if keep {
                        caches.push(Cache::Pool(arg, cur.len()));
                    }
                    v
                }
                LayerSpec::Flatten => {
                    if keep {
                        caches.push(Cache::Flatten);
                    }
                    cur
                }
            };
            if let Some(t) = trace.as_deref_mut() {
                t.push(cur.clone());
            }
        }
        Ok((cur, caches))
    }

    /// Logits for a batch of flattened inputs. `offsets[i]` is added to the
    /// pre-activation of matmul layer `i`, per output column.
    pub fn forward(&self, x: &[f64], batch: usize, offsets: Option<&[Vec<f64>]>) -> Result<Vec<f64>, LearnError> {
        Ok(self.run(x, batch, offsets, false, None)?.0)
    }

    /// Mean cross-entropy and its gradient. Offsets are constants, so they
    /// pass gradients straight through.
    pub fn loss_and_grad(
        &self,
        x: &[f64],
        labels: &[u8],
        offsets: Option<&[Vec<f64>]>,
    ) -> Result<(f64, Grads), LearnError> {
        let batch = labels.len();
        let shapes = self.arch.shapes()?;
        let (logits, caches) = self.run(x, batch, offsets, true, None)?;
        let (loss, mut d) = softmax_xent(&logits, labels, self.n_classes());
        let mut gw: Vec<Vec<f64>> = self.params.iter().map(|p| vec![0.0; p.w.len()]).collect();
        let mut gb: Vec<Vec<f64>> = self.params.iter().map(|p| vec![0.0; p.b.len()]).collect();
        let mut pi = self.params.len();
        for (li, (layer, cache)) in self.arch.layers.iter().zip(caches).enumerate().rev() {
            let s = shapes[li];
            d = match (cache, *layer) {
                (Cache::Linear(a), _) | (Cache::Conv(a), _) => {
                    pi -= 1;
                    let p = &self.params[pi];
                    let rows = d.len() / p.n_out;
                    mm(p.n_red, rows, p.n_out, &a, true, &d, false, &mut gw[pi], 0.0);
                    for r in 0..rows {
                        for (g, v) in gb[pi].iter_mut().zip(&d[r * p.n_out..(r + 1) * p.n_out]) {
                            *g += v;
                        }
                    }
                    let mut da = vec![0.0; rows * p.n_red];
                    mm(rows, p.n_out, p.n_red, &d, false, &p.w, true, &mut da, 0.0);
                    match *layer {
                        LayerSpec::Conv { k, pad, .. } => col2im(&da, batch, s, k, pad),
                        _ => da,
                    }
                }
                (Cache::Relu(mask), _) => d.iter().zip(mask).map(|(&g, m)| if m { g } else { 0.0 }).collect(),
                (Cache::Pool(arg, n), _) => {
                    let mut dx = vec![0.0; n];
                    for (&i, g) in arg.iter().zip(&d) {
                        dx[i] += g;
                    }
                    dx
                }
                (Cache::Flatten, _) => d,
            };
        }
        for (g, p) in gw.iter_mut().zip(&self.params) {
            if let Some(m) = &p.mask {
                for (v, &pruned) in g.iter_mut().zip(m) {
                    if pruned {
                        *v = 0.0;
                    }
                }
            }
        }
        Ok((loss, Grads { w: gw, b: gb }))
    }

    /// Minibatch SGD with momentum. `offsets` is queried before every step
    /// with the current weights and its result fed to the forward pass.
    pub fn train_with(
        &mut self,
        data: &Dataset,
        opts: &TrainOptions,
        offsets: Option<OffsetHook>,
    ) -> Result<(), LearnError> {
        if data.shape != self.arch.input || data.n_classes != self.n_classes() {
            return Err(LearnError::Shape("dataset does not match the architecture".into()));
        }
        if opts.batch == 0 {
            return Err(LearnError::Config("batch size must be positive".into()));
        }
        let mut vw: Vec<Vec<f64>> = self.params.iter().map(|p| vec![0.0; p.w.len()]).collect();
        let mut vb: Vec<Vec<f64>> = self.params.iter().map(|p| vec![0.0; p.b.len()]).collect();
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut lr = opts.lr;
        for epoch in 0..opts.epochs {
            order.shuffle(&mut rng::stream(opts.seed, &[0x5EED, epoch as u64]));
            for chunk in order.chunks(opts.batch) {
                let x = data.batch(chunk);
                let labels: Vec<u8> = chunk.iter().map(|&i| data.labels[i]).collect();
                let off = offsets.map(|f| f(self));
                let (_, g) = self.loss_and_grad(&x, &labels, off.as_deref())?;
                for (pi, p) in self.params.iter_mut().enumerate() {
                    for ((w, v), gr) in p.w.iter_mut().zip(&mut vw[pi]).zip(&g.w[pi]) {
                        *v = opts.momentum * *v - lr * gr;
                        *w += *v;
                    }
                    for ((b, v), gr) in p.b.iter_mut().zip(&mut vb[pi]).zip(&g.b[pi]) {
                        *v = opts.momentum * *v - lr * gr;
                        *b += *v;
                    }
                    if let Some(m) = &p.mask {
                        for (w, &pruned) in p.w.iter_mut().zip(m) {
                            if pruned {
                                *w = 0.0;
                            }
                        }
                    }
                }
            }
            lr *= opts.lr_decay;
        }
        Ok(())
    }

    /// Output of every layer for a batch.
    pub(crate) fn layer_outputs(&self, x: &[f64], batch: usize) -> Result<Vec<Vec<f64>>, LearnError> {
        let mut t = Vec::new();
        self.run(x, batch, None, false, Some(&mut t))?;
        Ok(t)
    }

    pub fn train(&mut self, data: &Dataset, opts: &TrainOptions) -> Result<(), LearnError> {
        self.train_with(data, opts, None)
    }

    pub fn predict(&self, data: &Dataset, offsets: Option<&[Vec<f64>]>) -> Result<Vec<usize>, LearnError> {
        let c = self.n_classes();
        let mut out = Vec::with_capacity(data.len());
        let idx: Vec<usize> = (0..data.len()).collect();
        for chunk in idx.chunks(256) {
            let z = self.forward(&data.batch(chunk), chunk.len(), offsets)?;
            out.extend(z.chunks(c).map(argmax));
        }
        Ok(out)
    }

    pub fn accuracy(&self, data: &Dataset) -> Result<f64, LearnError> {
        let p = self.predict(data, None)?;
        Ok(accuracy_of(&p, &data.labels))
    }
}

pub(crate) fn accuracy_of(pred: &[usize], labels: &[u8]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    pred.iter().zip(labels).filter(|(&p, &l)| p == l as usize).count() as f64 / labels.len() as f64
}
