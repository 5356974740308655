//! Siamese verification systems: small feed-forward encoders with manual
//! forward/backward passes, threshold calibration, and zoo construction.
//!
//! A system embeds each image with an encoder g (optional stride-1 box
//! smoothing, affine layers with activation on all but the last, final L2
//! normalization) and verifies a pair by thresholding the embedding inner
//! product: accept iff margin(x_alpha, x_beta) > kappa, strictly.
//!
//! Cost accounting: one "forward" is one pair comparison (a margin
//! evaluation), one "backward" is one input-gradient evaluation. Callers that
//! cache the second embedding still tick the meter once per comparison, so
//! reported counts match the closed-form accounting formulas regardless of
//! internal reuse.
//!
//! Threshold calibration convention (ours): kappa candidates are midpoints of
//! adjacent distinct validation margins plus one sentinel on each side; best
//! clean accuracy wins, ties break toward smaller kappa.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::artifact;
use crate::dataset::{Identity, PairSet, Triplet};
use crate::error::{Error, Result};
use crate::numerics::{blob, clip01, RealArray, RngStream};

pub const SYSTEM_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
        }
    }

    /// Subgradient 0 at the ReLU kink.
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ArchDescriptor {
    pub name: String,
    /// Box-smoothing kernel size; 1 disables smoothing, otherwise odd.
    pub smoothing_kernel: usize,
    /// Affine layer output widths; the last entry is the embedding dimension.
    pub widths: Vec<usize>,
    pub activation: Activation,
    /// Scales the (1/sqrt(fan_in)) normal weight initialization.
    pub weight_scale: f64,
    /// Gaussian noise added to training images each presentation.
    pub noise_aug_sigma: f64,
}

impl ArchDescriptor {
    fn validate(&self) -> Result<()> {
        if self.widths.is_empty() {
            return Err(Error::Domain(format!("arch {}: no layers", self.name)));
        }
        if self.smoothing_kernel == 0 || self.smoothing_kernel % 2 == 0 {
            return Err(Error::Domain(format!(
                "arch {}: smoothing kernel {} must be odd (1 disables)",
                self.name, self.smoothing_kernel
            )));
        }
        if !(self.weight_scale > 0.0) || self.noise_aug_sigma < 0.0 {
            return Err(Error::Domain(format!("arch {}: bad scale params", self.name)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    /// rows x cols, row-major.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Layer {
    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        debug_assert_eq!(x.len(), self.cols);
        out.clear();
        for r in 0..self.rows {
            let row = &self.w[r * self.cols..(r + 1) * self.cols];
            let mut acc = self.b[r];
            for (wv, xv) in row.iter().zip(x) {
                acc += wv * xv;
            }
            out.push(acc);
        }
    }
}

/// Thread-safe forward/backward counters.
#[derive(Debug, Default)]
pub struct Meter {
    forward: AtomicU64,
    backward: AtomicU64,
}

impl Meter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_forward(&self, n: u64) {
        self.forward.fetch_add(n, Ordering::Relaxed);
    }

    pub fn add_backward(&self, n: u64) {
        self.backward.fetch_add(n, Ordering::Relaxed);
    }

    pub fn forward_count(&self) -> u64 {
        self.forward.load(Ordering::Relaxed)
    }

    pub fn backward_count(&self) -> u64 {
        self.backward.load(Ordering::Relaxed)
    }
}

/// Encoder activations cached for the backward pass.
struct Trace {
    smoothed: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    embed: Vec<f64>,
    prenorm: f64,
}

/// Accumulated parameter gradients, same layout as the layers.
pub struct ParamGrads {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

impl ParamGrads {
    fn zeros_like(layers: &[Layer]) -> Self {
        Self {
            w: layers.iter().map(|l| vec![0.0; l.w.len()]).collect(),
            b: layers.iter().map(|l| vec![0.0; l.b.len()]).collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SiameseSystem {
    pub id: String,
    pub arch: ArchDescriptor,
    /// Expected image shape, [rows, cols].
    pub input_shape: Vec<usize>,
    pub layers: Vec<Layer>,
    /// Acceptance threshold, in (-1, 1).
    pub kappa: f64,
}

impl SiameseSystem {
    pub fn embedding_dim(&self) -> usize {
        *self.arch.widths.last().unwrap()
    }

    pub fn set_kappa(&mut self, kappa: f64) -> Result<()> {
        if !(-1.0 < kappa && kappa < 1.0) {
            return Err(Error::Domain(format!("kappa {kappa} outside (-1, 1)")));
        }
        self.kappa = kappa;
        Ok(())
    }

    fn check_input(&self, img: &RealArray) -> Result<()> {
        if img.shape() != self.input_shape.as_slice() {
            return Err(Error::ShapeMismatch {
                expected: format!("{:?}", self.input_shape),
                actual: format!("{:?}", img.shape()),
            });
        }
        Ok(())
    }

    /// Stride-1 box filter with border-clamped windows; linear in the input.
    fn smooth(&self, img: &RealArray) -> Vec<f64> {
        let k = self.arch.smoothing_kernel;
        if k == 1 {
            return img.data().to_vec();
        }
        let h = img.rows();
        let w = img.cols();
        let half = (k - 1) / 2;
        let mut out = Vec::with_capacity(h * w);
        for r in 0..h {
            for c in 0..w {
                let r0 = r.saturating_sub(half);
                let r1 = (r + half).min(h - 1);
                let c0 = c.saturating_sub(half);
                let c1 = (c + half).min(w - 1);
                let mut acc = 0.0;
                for rr in r0..=r1 {
                    for cc in c0..=c1 {
                        acc += img.at2(rr, cc);
                    }
                }
                out.push(acc / ((r1 - r0 + 1) * (c1 - c0 + 1)) as f64);
            }
        }
        out
    }

    /// Adjoint of `smooth`: scatters each output gradient back over its
    /// window with the same weights.
    fn smooth_adjoint(&self, grad_out: &[f64]) -> Vec<f64> {
        let k = self.arch.smoothing_kernel;
        if k == 1 {
            return grad_out.to_vec();
        }
        let h = self.input_shape[0];
        let w = self.input_shape[1];
        let half = (k - 1) / 2;
        let mut gin = vec![0.0; h * w];
        for r in 0..h {
            for c in 0..w {
                let r0 = r.saturating_sub(half);
                let r1 = (r + half).min(h - 1);
                let c0 = c.saturating_sub(half);
                let c1 = (c + half).min(w - 1);
                let wgt = 1.0 / ((r1 - r0 + 1) * (c1 - c0 + 1)) as f64;
                let g = grad_out[r * w + c] * wgt;
                for rr in r0..=r1 {
                    for cc in c0..=c1 {
                        gin[rr * w + cc] += g;
                    }
                }
            }
        }
        gin
    }

    fn forward_trace(&self, img: &RealArray) -> Result<Trace> {
        self.check_input(img)?;
        let smoothed = self.smooth(img);
        let n_layers = self.layers.len();
        let mut pre = Vec::with_capacity(n_layers);
        let mut post = Vec::with_capacity(n_layers);
        let mut x = smoothed.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut p = Vec::new();
            layer.forward(&x, &mut p);
            let q = if i + 1 < n_layers {
                p.iter().map(|&v| self.arch.activation.apply(v)).collect()
            } else {
                p.clone()
            };
            pre.push(p);
            x = q.clone();
            post.push(q);
        }
        let prenorm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if prenorm < 1e-12 {
            return Err(Error::Degenerate(
                "zero-norm embedding before normalization".into(),
            ));
        }
        let embed = x.iter().map(|v| v / prenorm).collect();
        Ok(Trace {
            smoothed,
            pre,
            post,
            embed,
            prenorm,
        })
    }

    /// Unit-norm embedding of one image.
    pub fn encode(&self, img: &RealArray) -> Result<Vec<f64>> {
        Ok(self.forward_trace(img)?.embed)
    }

    /// Backpropagates an upstream gradient at the normalized embedding down
    /// to the input image; optionally accumulates parameter gradients.
    fn backward(
        &self,
        trace: &Trace,
        upstream_embed: &[f64],
        mut params: Option<&mut ParamGrads>,
    ) -> Vec<f64> {
        // Through z = y / ||y||: dz/dy = (I - z z^T) / ||y||.
        let z = &trace.embed;
        let zu: f64 = z.iter().zip(upstream_embed).map(|(a, b)| a * b).sum();
        let mut g: Vec<f64> = z
            .iter()
            .zip(upstream_embed)
            .map(|(zi, ui)| (ui - zi * zu) / trace.prenorm)
            .collect();
        for l in (0..self.layers.len()).rev() {
            if l + 1 < self.layers.len() {
                for (gi, pi) in g.iter_mut().zip(&trace.pre[l]) {
                    *gi *= self.arch.activation.derivative(*pi);
                }
            }
            let input: &[f64] = if l == 0 {
                &trace.smoothed
            } else {
                &trace.post[l - 1]
            };
            if let Some(p) = params.as_deref_mut() {
                let layer = &self.layers[l];
                for r in 0..layer.rows {
                    let gr = g[r];
                    let wrow = &mut p.w[l][r * layer.cols..(r + 1) * layer.cols];
                    for (wg, xv) in wrow.iter_mut().zip(input) {
                        *wg += gr * xv;
                    }
                    p.b[l][r] += gr;
                }
            }
            let layer = &self.layers[l];
            let mut gx = vec![0.0; layer.cols];
            for r in 0..layer.rows {
                let gr = g[r];
                let row = &layer.w[r * layer.cols..(r + 1) * layer.cols];
                for (gxi, wv) in gx.iter_mut().zip(row) {
                    *gxi += gr * wv;
                }
            }
            g = gx;
        }
        self.smooth_adjoint(&g)
    }

    /// Embedding inner product of a pair. One forward tick.
    pub fn margin(&self, alpha: &RealArray, beta: &RealArray, meter: &Meter) -> Result<f64> {
        let zb = self.encode(beta)?;
        self.margin_vs_embedding(alpha, &zb, meter)
    }

    /// Margin of `alpha` against a cached unit embedding. One forward tick.
    pub fn margin_vs_embedding(
        &self,
        alpha: &RealArray,
        z_beta: &[f64],
        meter: &Meter,
    ) -> Result<f64> {
        let za = self.encode(alpha)?;
        meter.add_forward(1);
        crate::numerics::dot(&za, z_beta)
    }

    /// Margin and its gradient with respect to `alpha`. One forward and one
    /// backward tick.
    pub fn backward_margin(
        &self,
        alpha: &RealArray,
        beta: &RealArray,
        meter: &Meter,
    ) -> Result<(f64, RealArray)> {
        let zb = self.encode(beta)?;
        self.backward_margin_vs_embedding(alpha, &zb, meter)
    }

    pub fn backward_margin_vs_embedding(
        &self,
        alpha: &RealArray,
        z_beta: &[f64],
        meter: &Meter,
    ) -> Result<(f64, RealArray)> {
        let trace = self.forward_trace(alpha)?;
        let m = crate::numerics::dot(&trace.embed, z_beta)?;
        let grad = self.backward(&trace, z_beta, None);
        meter.add_forward(1);
        meter.add_backward(1);
        Ok((m, RealArray::new(grad, self.input_shape.clone())?))
    }

    /// Verification decision: accept iff margin > kappa, strictly.
    pub fn predict(&self, alpha: &RealArray, beta: &RealArray, meter: &Meter) -> Result<bool> {
        Ok(self.margin(alpha, beta, meter)? > self.kappa)
    }

    pub fn predict_vs_embedding(
        &self,
        alpha: &RealArray,
        z_beta: &[f64],
        meter: &Meter,
    ) -> Result<bool> {
        Ok(self.margin_vs_embedding(alpha, z_beta, meter)? > self.kappa)
    }
}

/// Fresh system with seeded normal initialization (scale/sqrt(fan_in)) and
/// kappa = 0.
pub fn init_system(
    arch: &ArchDescriptor,
    input_shape: &[usize],
    seed: u64,
) -> Result<SiameseSystem> {
    arch.validate()?;
    if input_shape.len() != 2 || input_shape.iter().any(|&d| d == 0) {
        return Err(Error::Domain(format!("bad input shape {input_shape:?}")));
    }
    let mut rng = RngStream::root(seed);
    let mut layers = Vec::with_capacity(arch.widths.len());
    let mut fan_in = input_shape[0] * input_shape[1];
    for &width in &arch.widths {
        let sd = arch.weight_scale / (fan_in as f64).sqrt();
        let w: Vec<f64> = (0..width * fan_in).map(|_| rng.normal(0.0, sd)).collect();
        layers.push(Layer {
            rows: width,
            cols: fan_in,
            w,
            b: vec![0.0; width],
        });
        fan_in = width;
    }
    Ok(SiameseSystem {
        id: arch.name.clone(),
        arch: arch.clone(),
        input_shape: input_shape.to_vec(),
        layers,
        kappa: 0.0,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub triplet_margin: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 12,
            lr: 0.05,
            triplet_margin: 0.2,
            seed: 0,
        }
    }
}

/// Plain per-triplet SGD on the hinge triplet loss
/// max(0, ||za-zp||^2 - ||za-zn||^2 + margin) over unit embeddings.
/// Returns the trained system plus the mean loss per epoch.
pub fn train(
    arch: &ArchDescriptor,
    input_shape: &[usize],
    triplets: &[Triplet],
    cfg: &TrainConfig,
) -> Result<(SiameseSystem, Vec<f64>)> {
    if triplets.is_empty() && cfg.epochs > 0 {
        return Err(Error::Domain("no training triplets".into()));
    }
    let mut sys = init_system(arch, input_shape, cfg.seed)?;
    let mut rng = RngStream::substream(cfg.seed, 1);
    let mut order: Vec<usize> = (0..triplets.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let noisy = |img: &RealArray, rng: &mut RngStream, sigma: f64| -> Result<RealArray> {
        if sigma == 0.0 {
            return Ok(img.clone());
        }
        let data = img
            .data()
            .iter()
            .map(|&p| clip01(p + sigma * rng.normal(0.0, 1.0)))
            .collect();
        RealArray::new(data, img.shape().to_vec())
    };
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for &ti in &order {
            let t = &triplets[ti];
            let sigma = arch.noise_aug_sigma;
            let a = noisy(&t.anchor, &mut rng, sigma)?;
            let p = noisy(&t.positive, &mut rng, sigma)?;
            let n = noisy(&t.negative, &mut rng, sigma)?;
            let ta = sys.forward_trace(&a)?;
            let tp = sys.forward_trace(&p)?;
            let tn = sys.forward_trace(&n)?;
            // Unit embeddings: ||za-zp||^2 - ||za-zn||^2 = 2<za,zn> - 2<za,zp>.
            let sap: f64 = ta.embed.iter().zip(&tp.embed).map(|(x, y)| x * y).sum();
            let san: f64 = ta.embed.iter().zip(&tn.embed).map(|(x, y)| x * y).sum();
            let loss = (2.0 * san - 2.0 * sap + cfg.triplet_margin).max(0.0);
            epoch_loss += loss;
            if loss > 0.0 {
                let mut grads = ParamGrads::zeros_like(&sys.layers);
                let ua: Vec<f64> = tn
                    .embed
                    .iter()
                    .zip(&tp.embed)
                    .map(|(zn, zp)| 2.0 * (zn - zp))
                    .collect();
                let up: Vec<f64> = ta.embed.iter().map(|v| -2.0 * v).collect();
                let un: Vec<f64> = ta.embed.iter().map(|v| 2.0 * v).collect();
                sys.backward(&ta, &ua, Some(&mut grads));
                sys.backward(&tp, &up, Some(&mut grads));
                sys.backward(&tn, &un, Some(&mut grads));
                for (layer, (gw, gb)) in sys
                    .layers
                    .iter_mut()
                    .zip(grads.w.iter().zip(&grads.b))
                {
                    for (wv, g) in layer.w.iter_mut().zip(gw) {
                        *wv -= cfg.lr * g;
                    }
                    for (bv, g) in layer.b.iter_mut().zip(gb) {
                        *bv -= cfg.lr * g;
                    }
                }
            }
        }
        trace.push(epoch_loss / triplets.len() as f64);
    }
    Ok((sys, trace))
}

/// One labeled pair for margin fine-tuning; borrows the images.
#[derive(Clone, Copy)]
pub struct HingePair<'a> {
    pub alpha: &'a RealArray,
    pub beta: &'a RealArray,
    pub label: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct FineTuneConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Target separation: pushes (2y-1)(margin - kappa) above this gap.
    pub gap: f64,
    pub seed: u64,
}

/// Per-pair SGD on the signed margin hinge max(0, gap - (2y-1)(m - kappa))
/// with kappa held fixed. Both branches contribute parameter gradients.
/// Returns the mean hinge loss per epoch.
pub fn fine_tune_margins(
    sys: &mut SiameseSystem,
    pairs: &[HingePair],
    cfg: &FineTuneConfig,
    meter: &Meter,
) -> Result<Vec<f64>> {
    if pairs.is_empty() && cfg.epochs > 0 {
        return Err(Error::Domain("no fine-tuning pairs".into()));
    }
    if !(cfg.lr > 0.0 && cfg.gap >= 0.0) {
        return Err(Error::Config("fine-tune needs lr > 0 and gap >= 0".into()));
    }
    let mut rng = RngStream::substream(cfg.seed, 1);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for &pi in &order {
            let pair = &pairs[pi];
            let ta = sys.forward_trace(pair.alpha)?;
            let tb = sys.forward_trace(pair.beta)?;
            let m: f64 = ta.embed.iter().zip(&tb.embed).map(|(x, y)| x * y).sum();
            meter.add_forward(1);
            let sign = if pair.label { 1.0 } else { -1.0 };
            let loss = (cfg.gap - sign * (m - sys.kappa)).max(0.0);
            epoch_loss += loss;
            if loss > 0.0 {
                let mut grads = ParamGrads::zeros_like(&sys.layers);
                // dL/dm = -sign; backward is linear in the upstream vector.
                let ua: Vec<f64> = tb.embed.iter().map(|v| -sign * v).collect();
                let ub: Vec<f64> = ta.embed.iter().map(|v| -sign * v).collect();
                sys.backward(&ta, &ua, Some(&mut grads));
                sys.backward(&tb, &ub, Some(&mut grads));
                meter.add_backward(2);
                for (layer, (gw, gb)) in sys
                    .layers
                    .iter_mut()
                    .zip(grads.w.iter().zip(&grads.b))
                {
                    for (wv, g) in layer.w.iter_mut().zip(gw) {
                        *wv -= cfg.lr * g;
                    }
                    for (bv, g) in layer.b.iter_mut().zip(gb) {
                        *bv -= cfg.lr * g;
                    }
                }
            }
        }
        trace.push(epoch_loss / pairs.len() as f64);
    }
    Ok(trace)
}

/// Best threshold over candidate kappas (midpoints of adjacent distinct
/// margins plus sentinels), maximizing accuracy of `margin > kappa` against
/// labels. Ties break toward smaller kappa. Returns (kappa, accuracy).
pub fn best_threshold(margins: &[f64], labels: &[bool]) -> Result<(f64, f64)> {
    if margins.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{}", margins.len()),
            actual: format!("{}", labels.len()),
        });
    }
    if margins.len() < 2 {
        return Err(Error::Calibration("need at least 2 validation pairs".into()));
    }
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(Error::Calibration(
            "validation labels are all identical".into(),
        ));
    }
    let mut sorted: Vec<f64> = margins.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    sorted.dedup();
    let clamp = |v: f64| v.clamp(-1.0 + 1e-9, 1.0 - 1e-9);
    let mut candidates = vec![clamp(sorted[0] - 0.05)];
    for w in sorted.windows(2) {
        candidates.push(clamp(0.5 * (w[0] + w[1])));
    }
    candidates.push(clamp(sorted[sorted.len() - 1] + 0.05));
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut best = (candidates[0], -1.0);
    for &kappa in &candidates {
        let correct = margins
            .iter()
            .zip(labels)
            .filter(|(m, l)| (**m > kappa) == **l)
            .count();
        let acc = correct as f64 / margins.len() as f64;
        if acc > best.1 {
            best = (kappa, acc);
        }
    }
    Ok(best)
}

/// Calibrates kappa on validation pairs, stores it on the system, and
/// returns (kappa, clean accuracy).
pub fn calibrate_threshold(
    sys: &mut SiameseSystem,
    validation: &PairSet,
    meter: &Meter,
) -> Result<(f64, f64)> {
    let mut margins = Vec::with_capacity(validation.len());
    let mut labels = Vec::with_capacity(validation.len());
    for i in 0..validation.len() {
        margins.push(sys.margin(validation.alpha(i), validation.beta(i), meter)?);
        labels.push(validation.label(i));
    }
    let (kappa, acc) = best_threshold(&margins, &labels)?;
    sys.set_kappa(kappa)?;
    Ok((kappa, acc))
}

/// Fraction of pairs predicted correctly.
pub fn clean_accuracy(sys: &SiameseSystem, pairs: &PairSet, meter: &Meter) -> Result<f64> {
    let mut correct = 0usize;
    for i in 0..pairs.len() {
        if sys.predict(pairs.alpha(i), pairs.beta(i), meter)? == pairs.label(i) {
            correct += 1;
        }
    }
    Ok(correct as f64 / pairs.len() as f64)
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ZooConfig {
    pub archs: Vec<ArchDescriptor>,
    pub epochs: usize,
    pub lr: f64,
    pub triplet_margin: f64,
    pub triplets: usize,
    pub triplet_sigma: f64,
    pub accuracy_floor: f64,
    pub root_seed: u64,
}

#[derive(Clone, Debug)]
pub struct ZooMember {
    pub system: SiameseSystem,
    pub clean_accuracy: f64,
    pub train_seed: u64,
    pub epoch_loss: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Zoo {
    pub members: Vec<ZooMember>,
}

/// Trains and calibrates the full zoo. Per-member train seeds derive from the
/// root seed by member index; all members share one triplet pool. Members
/// below the accuracy floor fail the build, listing every offender.
pub fn build_zoo(cfg: &ZooConfig, identities: &[Identity], calibration: &PairSet) -> Result<Zoo> {
    if cfg.archs.len() < 8 {
        return Err(Error::Config(format!(
            "zoo needs at least 8 architectures, got {}",
            cfg.archs.len()
        )));
    }
    let mut names: Vec<&str> = cfg.archs.iter().map(|a| a.name.as_str()).collect();
    names.sort_unstable();
    names.dedup();
    if names.len() != cfg.archs.len() {
        return Err(Error::Config("duplicate architecture names in zoo".into()));
    }
    let side = calibration.side;
    let triplets = crate::dataset::make_triplets(
        identities,
        cfg.triplets,
        cfg.triplet_sigma,
        cfg.root_seed ^ 0xa5a5_5a5a_1234_feed,
    )?;
    let members: Result<Vec<ZooMember>> = cfg
        .archs
        .par_iter()
        .enumerate()
        .map(|(i, arch)| {
            let train_seed = cfg.root_seed.wrapping_add(i as u64);
            let tc = TrainConfig {
                epochs: cfg.epochs,
                lr: cfg.lr,
                triplet_margin: cfg.triplet_margin,
                seed: train_seed,
            };
            let (mut system, epoch_loss) = train(arch, &[side, side], &triplets, &tc)?;
            let meter = Meter::new();
            let (_, clean_accuracy) = calibrate_threshold(&mut system, calibration, &meter)?;
            Ok(ZooMember {
                system,
                clean_accuracy,
                train_seed,
                epoch_loss,
            })
        })
        .collect();
    let members = members?;
    let offenders: Vec<String> = members
        .iter()
        .filter(|m| m.clean_accuracy < cfg.accuracy_floor)
        .map(|m| format!("{}: {:.3}", m.system.id, m.clean_accuracy))
        .collect();
    if !offenders.is_empty() {
        return Err(Error::ZooQuality(format!(
            "below accuracy floor {}: [{}]",
            cfg.accuracy_floor,
            offenders.join(", ")
        )));
    }
    Ok(Zoo { members })
}

#[derive(Serialize, Deserialize)]
struct SystemManifest {
    format_version: u32,
    id: String,
    arch: ArchDescriptor,
    input_shape: Vec<usize>,
    kappa: f64,
    clean_accuracy: f64,
    train_seed: u64,
    epoch_loss: Vec<f64>,
    layer_dims: Vec<(usize, usize)>,
    weights_sha256: String,
}

/// Writes system.json + weights.rbt under `dir`.
pub fn save_system(dir: &Path, member: &ZooMember) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| crate::error::io_err(dir, e))?;
    let sys = &member.system;
    let mut flat = Vec::new();
    for layer in &sys.layers {
        flat.extend_from_slice(&layer.w);
        flat.extend_from_slice(&layer.b);
    }
    let bytes = blob::encode(&[flat.len()], &[&flat])?;
    std::fs::write(dir.join("weights.rbt"), &bytes).map_err(|e| crate::error::io_err(dir, e))?;
    let manifest = SystemManifest {
        format_version: SYSTEM_FORMAT_VERSION,
        id: sys.id.clone(),
        arch: sys.arch.clone(),
        input_shape: sys.input_shape.clone(),
        kappa: sys.kappa,
        clean_accuracy: member.clean_accuracy,
        train_seed: member.train_seed,
        epoch_loss: member.epoch_loss.clone(),
        layer_dims: sys.layers.iter().map(|l| (l.rows, l.cols)).collect(),
        weights_sha256: artifact::sha256_hex(&bytes),
    };
    artifact::write_json(&dir.join("system.json"), &manifest)
}

pub fn load_system(dir: &Path) -> Result<ZooMember> {
    let manifest: SystemManifest = artifact::read_json(&dir.join("system.json"))?;
    if manifest.format_version != SYSTEM_FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            what: "system.json".into(),
            found: manifest.format_version,
            supported: SYSTEM_FORMAT_VERSION,
        });
    }
    let wpath = dir.join("weights.rbt");
    let bytes = std::fs::read(&wpath).map_err(|e| crate::error::io_err(&wpath, e))?;
    if artifact::sha256_hex(&bytes) != manifest.weights_sha256 {
        return Err(Error::ChecksumMismatch(wpath.display().to_string()));
    }
    let decoded = blob::decode(&bytes, "weights.rbt")?;
    let flat = decoded
        .rows
        .into_iter()
        .next()
        .ok_or_else(|| Error::Format {
            what: "weights.rbt".into(),
            detail: "empty blob".into(),
        })?;
    let total: usize = manifest
        .layer_dims
        .iter()
        .map(|(r, c)| r * c + r)
        .sum();
    if flat.len() != total {
        return Err(Error::ShapeMismatch {
            expected: format!("{total} weights"),
            actual: format!("{}", flat.len()),
        });
    }
    let mut layers = Vec::with_capacity(manifest.layer_dims.len());
    let mut off = 0;
    for &(rows, cols) in &manifest.layer_dims {
        let w = flat[off..off + rows * cols].to_vec();
        off += rows * cols;
        let b = flat[off..off + rows].to_vec();
        off += rows;
        layers.push(Layer { rows, cols, w, b });
    }
    Ok(ZooMember {
        system: SiameseSystem {
            id: manifest.id,
            arch: manifest.arch,
            input_shape: manifest.input_shape,
            layers,
            kappa: manifest.kappa,
        },
        clean_accuracy: manifest.clean_accuracy,
        train_seed: manifest.train_seed,
        epoch_loss: manifest.epoch_loss,
    })
}
