//! Per-image unsupervised decomposition network.
//!
//! The decomposition path is three 3x3 convolution blocks
//! (`1 -> 32` relu, `32 -> 32` relu, `32 -> K` linear); its `K` outputs are the
//! feature maps. Their pointwise sum goes through one more linear `1 -> 1`
//! block that reconstructs the input. Training minimizes
//!
//! ```text
//! a1 * sum_k (|psi_k| - |f| / K)^2
//!   - a2 * sum_{k != j} log(1 - <psi_k, psi_j> / (|psi_k| |psi_j|))
//!   + (1 - a1 - a2) * |recon(sum_k psi_k) - f|^2
//! ```
//!
//! with epsilon floors on the norms and on the log argument, using full-image
//! Adam steps. Everything is f64 and single-threaded so results are
//! bit-reproducible for a given seed.

mod conv;
mod io;

pub use io::{read_params, write_params};

use ndarray::{Array2, Array3, ArrayView2, ArrayView3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{normalize_features, FeatureStack, ImageGrid};

use conv::TAPS;

/// Hidden width of the decomposition path.
pub const HIDDEN_CHANNELS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlockParams {
    pub out_channels: usize,
    pub in_channels: usize,
    /// `out x in x 3 x 3`, row-major.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub activation: Activation,
}

impl ConvBlockParams {
    pub fn zeros(out_channels: usize, in_channels: usize, activation: Activation) -> Self {
        Self {
            out_channels,
            in_channels,
            weights: vec![0.0; out_channels * in_channels * TAPS],
            biases: vec![0.0; out_channels],
            activation,
        }
    }

    fn kdim(&self) -> usize {
        self.in_channels * TAPS
    }

    pub fn weight_mut(&mut self, out: usize, inp: usize, row: usize, col: usize) -> &mut f64 {
        let idx = ((out * self.in_channels + inp) * 3 + row) * 3 + col;
        &mut self.weights[idx]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub decomposition: [ConvBlockParams; 3],
    pub reconstruction: ConvBlockParams,
}

impl NetworkParams {
    pub fn zeros(k: usize) -> Self {
        Self {
            decomposition: [
                ConvBlockParams::zeros(HIDDEN_CHANNELS, 1, Activation::Relu),
                ConvBlockParams::zeros(HIDDEN_CHANNELS, HIDDEN_CHANNELS, Activation::Relu),
                ConvBlockParams::zeros(k, HIDDEN_CHANNELS, Activation::Linear),
            ],
            reconstruction: ConvBlockParams::zeros(1, 1, Activation::Linear),
        }
    }

    pub fn channels(&self) -> usize {
        self.decomposition[2].out_channels
    }

    pub fn blocks(&self) -> impl Iterator<Item = &ConvBlockParams> {
        self.decomposition.iter().chain(std::iter::once(&self.reconstruction))
    }

    pub fn blocks_mut(&mut self) -> impl Iterator<Item = &mut ConvBlockParams> {
        self.decomposition
            .iter_mut()
            .chain(std::iter::once(&mut self.reconstruction))
    }

    /// Every parameter in file order (per block: weights, then biases).
    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.blocks().flat_map(|b| b.weights.iter().chain(b.biases.iter()))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.blocks_mut()
            .flat_map(|b| b.weights.iter_mut().chain(b.biases.iter_mut()))
    }

    pub fn len(&self) -> usize {
        self.values().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let k = self.channels();
        let expect = [
            (HIDDEN_CHANNELS, 1),
            (HIDDEN_CHANNELS, HIDDEN_CHANNELS),
            (k, HIDDEN_CHANNELS),
            (1, 1),
        ];
        for (i, (b, (o, n))) in self.blocks().zip(expect).enumerate() {
            if b.out_channels != o
                || b.in_channels != n
                || b.weights.len() != o * n * TAPS
                || b.biases.len() != o
            {
                return Err(Error::validation(format!(
                    "block {i} has shape {}x{} (weights {}, biases {}), expected {o}x{n}",
                    b.out_channels,
                    b.in_channels,
                    b.weights.len(),
                    b.biases.len()
                )));
            }
        }
        Ok(())
    }
}

fn default_k() -> usize {
    3
}
fn default_alpha() -> f64 {
    0.25
}
fn default_iterations() -> usize {
    2000
}
fn default_learning_rate() -> f64 {
    1e-3
}
fn default_epsilon() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnConfig {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_alpha")]
    pub alpha1: f64,
    #[serde(default = "default_alpha")]
    pub alpha2: f64,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            k: default_k(),
            alpha1: default_alpha(),
            alpha2: default_alpha(),
            iterations: default_iterations(),
            learning_rate: default_learning_rate(),
            seed: 0,
            epsilon: default_epsilon(),
        }
    }
}

impl CnnConfig {
    pub fn reconstruction_weight(&self) -> f64 {
        1.0 - self.alpha1 - self.alpha2
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::validation("k must be >= 1"));
        }
        for (name, a) in [("alpha1", self.alpha1), ("alpha2", self.alpha2)] {
            if !(0.0..1.0).contains(&a) {
                return Err(Error::validation(format!("{name} must lie in [0, 1), got {a}")));
            }
        }
        if !(self.reconstruction_weight() > 0.0) {
            return Err(Error::validation(format!(
                "alpha1+alpha2 must be < 1 (got {} + {})",
                self.alpha1, self.alpha2
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::validation("learning rate must be positive"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::validation("epsilon must be positive"));
        }
        Ok(())
    }
}

/// Uniform `[-s, s]` weights with `s = sqrt(1 / (9 in))`, zero biases.
pub fn init_params(config: &CnnConfig) -> NetworkParams {
    let mut params = NetworkParams::zeros(config.k);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for block in params.blocks_mut() {
        let s = (1.0 / block.kdim() as f64).sqrt();
        for w in &mut block.weights {
            *w = rng.random_range(-s..=s);
        }
    }
    params
}

/// Activations kept for the backward pass.
struct Forward {
    h: usize,
    w: usize,
    /// image columns, per decomposition block input, then the reconstruction input
    cols: [Vec<f64>; 4],
    /// pre-activations of the two relu blocks
    pre: [Vec<f64>; 2],
    /// `K x hw` feature maps
    maps: Vec<f64>,
    /// `hw` reconstruction
    recon: Vec<f64>,
}

fn block_forward(block: &ConvBlockParams, input: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let hw = h * w;
    let mut cols = vec![0.0; block.kdim() * hw];
    conv::im2col(input, block.in_channels, h, w, &mut cols);
    let mut out = vec![0.0; block.out_channels * hw];
    conv::forward(&block.weights, &block.biases, &cols, block.out_channels, block.kdim(), hw, &mut out);
    (cols, out)
}

fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| x.max(0.0)).collect()
}

fn run_forward(params: &NetworkParams, f: &[f64], h: usize, w: usize) -> Forward {
    let hw = h * w;
    let [b1, b2, b3] = &params.decomposition;
    let (c1, z1) = block_forward(b1, f, h, w);
    let (c2, z2) = block_forward(b2, &relu(&z1), h, w);
    let (c3, maps) = block_forward(b3, &relu(&z2), h, w);
    let k = b3.out_channels;
    let mut sum = vec![0.0; hw];
    for c in 0..k {
        for (s, v) in sum.iter_mut().zip(&maps[c * hw..(c + 1) * hw]) {
            *s += v;
        }
    }
    let (c4, recon) = block_forward(&params.reconstruction, &sum, h, w);
    Forward {
        h,
        w,
        cols: [c1, c2, c3, c4],
        pre: [z1, z2],
        maps,
        recon,
    }
}

fn check_params(params: &NetworkParams) -> Result<()> {
    params.validate()
}

/// The `K` raw (unnormalized) feature maps.
pub fn forward_decompose(params: &NetworkParams, f: &ImageGrid) -> Result<FeatureStack> {
    check_params(params)?;
    let (h, w) = f.dim();
    let input = f.data().as_standard_layout().to_owned();
    let fw = run_forward(params, input.as_slice().expect("standard layout"), h, w);
    let maps = Array3::from_shape_vec((params.channels(), h, w), fw.maps).expect("shape");
    FeatureStack::new(maps)
}

/// Applies the reconstruction block to the pointwise channel sum of `stack`.
pub fn forward_reconstruct(params: &NetworkParams, stack: &FeatureStack) -> Result<ImageGrid> {
    check_params(params)?;
    if stack.channels() != params.channels() {
        return Err(Error::shape(format!(
            "stack has {} channels, network expects {}",
            stack.channels(),
            params.channels()
        )));
    }
    let (_, h, w) = stack.dim();
    let sum = stack.maps().sum_axis(ndarray::Axis(0));
    let sum = sum.as_standard_layout();
    let (_, out) = block_forward(&params.reconstruction, sum.as_slice().expect("standard layout"), h, w);
    ImageGrid::new(Array2::from_shape_vec((h, w), out).expect("shape"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub balance: f64,
    pub incoherence: f64,
    pub reconstruction: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Loss value and, when `grads` is given, its gradients with respect to the
/// maps (`K x hw`) and the reconstruction (`hw`).
fn loss_core(
    maps: &[f64],
    recon: &[f64],
    f: &[f64],
    k: usize,
    config: &CnnConfig,
    grads: Option<(&mut [f64], &mut [f64])>,
) -> LossBreakdown {
    let hw = f.len();
    let eps = config.epsilon;
    let map = |c: usize| &maps[c * hw..(c + 1) * hw];
    let norms: Vec<f64> = (0..k).map(|c| dot(map(c), map(c)).sqrt()).collect();
    let target = dot(f, f).sqrt() / k as f64;

    let balance = config.alpha1 * norms.iter().map(|n| (n - target).powi(2)).sum::<f64>();

    let floored: Vec<f64> = norms.iter().map(|&n| n.max(eps)).collect();
    let mut pair_terms = Vec::new();
    let mut incoherence = 0.0;
    for a in 0..k {
        for b in (a + 1)..k {
            let cos = dot(map(a), map(b)) / (floored[a] * floored[b]);
            let arg = 1.0 - cos;
            // ordered pairs (a, b) and (b, a) contribute equally
            incoherence -= 2.0 * config.alpha2 * arg.max(eps).ln();
            pair_terms.push((a, b, cos, arg > eps));
        }
    }

    let beta = config.reconstruction_weight();
    let resid_sq: f64 = recon.iter().zip(f).map(|(r, t)| (r - t).powi(2)).sum();
    let reconstruction = beta * resid_sq;

    if let Some((dmaps, drecon)) = grads {
        dmaps.fill(0.0);
        for (d, (r, t)) in drecon.iter_mut().zip(recon.iter().zip(f)) {
            *d = 2.0 * beta * (r - t);
        }
        for c in 0..k {
            if norms[c] > 0.0 {
                let s = 2.0 * config.alpha1 * (norms[c] - target) / norms[c];
                for (d, v) in dmaps[c * hw..(c + 1) * hw].iter_mut().zip(map(c)) {
                    *d += s * v;
                }
            }
        }
        for &(a, b, cos, active) in &pair_terms {
            if !active {
                continue;
            }
            let g = 2.0 * config.alpha2 / (1.0 - cos);
            for (x, y) in [(a, b), (b, a)] {
                let inv = 1.0 / (floored[x] * floored[y]);
                let self_coef = if norms[x] > eps {
                    cos / (norms[x] * floored[x])
                } else {
                    0.0
                };
                let (mx, my) = (x * hw, y * hw);
                for i in 0..hw {
                    dmaps[mx + i] += g * (maps[my + i] * inv - self_coef * maps[mx + i]);
                }
            }
        }
    }

    LossBreakdown {
        total: balance + incoherence + reconstruction,
        balance,
        incoherence,
        reconstruction,
    }
}

/// Loss terms for given maps `(K, H, W)`, reconstruction and target image.
pub fn loss_terms(
    maps: ArrayView3<'_, f64>,
    reconstruction: ArrayView2<'_, f64>,
    f: ArrayView2<'_, f64>,
    config: &CnnConfig,
) -> Result<LossBreakdown> {
    let (k, h, w) = maps.dim();
    if reconstruction.dim() != (h, w) || f.dim() != (h, w) {
        return Err(Error::shape("maps, reconstruction and image must share H x W"));
    }
    let maps = maps.as_standard_layout();
    let recon = reconstruction.as_standard_layout();
    let f = f.as_standard_layout();
    Ok(loss_core(
        maps.as_slice().expect("standard layout"),
        recon.as_slice().expect("standard layout"),
        f.as_slice().expect("standard layout"),
        k,
        config,
        None,
    ))
}

fn image_slice(f: &ImageGrid) -> Vec<f64> {
    f.data().iter().copied().collect()
}

pub fn decomposition_loss(params: &NetworkParams, f: &ImageGrid, config: &CnnConfig) -> Result<LossBreakdown> {
    check_params(params)?;
    let (h, w) = f.dim();
    let input = image_slice(f);
    let fw = run_forward(params, &input, h, w);
    Ok(loss_core(&fw.maps, &fw.recon, &input, params.channels(), config, None))
}

fn backward(params: &NetworkParams, fw: &Forward, dmaps: &[f64], drecon: &[f64]) -> NetworkParams {
    let hw = fw.h * fw.w;
    let mut grad = NetworkParams::zeros(params.channels());

    // reconstruction block, its input gradient broadcasts to every map
    let rb = &params.reconstruction;
    {
        let g = &mut grad.reconstruction;
        conv::backward_params(drecon, &fw.cols[3], 1, rb.kdim(), hw, &mut g.weights, &mut g.biases);
    }
    let mut dcols = vec![0.0; rb.kdim() * hw];
    conv::backward_cols(&rb.weights, drecon, 1, rb.kdim(), hw, &mut dcols);
    let mut dsum = vec![0.0; hw];
    conv::col2im(&dcols, 1, fw.h, fw.w, &mut dsum);

    let k = params.channels();
    let mut dout: Vec<f64> = dmaps.to_vec();
    for c in 0..k {
        for (d, s) in dout[c * hw..(c + 1) * hw].iter_mut().zip(&dsum) {
            *d += s;
        }
    }

    for layer in (0..3).rev() {
        let block = &params.decomposition[layer];
        let g = &mut grad.decomposition[layer];
        conv::backward_params(&dout, &fw.cols[layer], block.out_channels, block.kdim(), hw, &mut g.weights, &mut g.biases);
        if layer == 0 {
            break;
        }
        let mut dcols = vec![0.0; block.kdim() * hw];
        conv::backward_cols(&block.weights, &dout, block.out_channels, block.kdim(), hw, &mut dcols);
        let mut dinput = vec![0.0; block.in_channels * hw];
        conv::col2im(&dcols, block.in_channels, fw.h, fw.w, &mut dinput);
        // the input of this layer is relu(pre[layer - 1])
        for (d, z) in dinput.iter_mut().zip(&fw.pre[layer - 1]) {
            if *z <= 0.0 {
                *d = 0.0;
            }
        }
        dout = dinput;
    }
    grad
}

fn loss_and_gradient(
    params: &NetworkParams,
    input: &[f64],
    h: usize,
    w: usize,
    config: &CnnConfig,
) -> (LossBreakdown, NetworkParams) {
    let hw = h * w;
    let k = params.channels();
    let fw = run_forward(params, input, h, w);
    let mut dmaps = vec![0.0; k * hw];
    let mut drecon = vec![0.0; hw];
    let loss = loss_core(&fw.maps, &fw.recon, input, k, config, Some((&mut dmaps, &mut drecon)));
    (loss, backward(params, &fw, &dmaps, &drecon))
}

/// Analytic gradient of the total loss (relu subgradient 0 at the kink).
pub fn loss_gradient(params: &NetworkParams, f: &ImageGrid, config: &CnnConfig) -> Result<NetworkParams> {
    check_params(params)?;
    let (h, w) = f.dim();
    Ok(loss_and_gradient(params, &image_slice(f), h, w, config).1)
}

/// Cosine similarities `<psi_a, psi_b> / (|psi_a| |psi_b|)` for all `a < b`,
/// with norms floored at `eps`.
pub fn pairwise_cosines(stack: &FeatureStack, eps: f64) -> Vec<f64> {
    let k = stack.channels();
    let norms: Vec<f64> = (0..k)
        .map(|c| stack.channel(c).iter().map(|v| v * v).sum::<f64>().sqrt().max(eps))
        .collect();
    let mut out = Vec::new();
    for a in 0..k {
        for b in (a + 1)..k {
            let d: f64 = stack.channel(a).iter().zip(stack.channel(b).iter()).map(|(x, y)| x * y).sum();
            out.push(d / (norms[a] * norms[b]));
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainedDecomposition {
    pub params: NetworkParams,
    /// Feature maps of the final parameters, normalized to `[0, 1]`.
    pub features: FeatureStack,
    /// Total loss before each update.
    pub loss_trace: Vec<f64>,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

pub fn train_decomposition(f: &ImageGrid, config: &CnnConfig) -> Result<TrainedDecomposition> {
    train_decomposition_from(f, config, init_params(config), |_, _| {})
}

/// Trains from explicit starting parameters, reporting `(iteration, loss)` after each step.
pub fn train_decomposition_from(
    f: &ImageGrid,
    config: &CnnConfig,
    mut params: NetworkParams,
    mut progress: impl FnMut(usize, &LossBreakdown),
) -> Result<TrainedDecomposition> {
    config.validate()?;
    check_params(&params)?;
    if params.channels() != config.k {
        return Err(Error::shape(format!(
            "parameters have {} output channels, config asks for {}",
            params.channels(),
            config.k
        )));
    }
    let (h, w) = f.dim();
    let input = image_slice(f);
    let n = params.len();
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut trace = Vec::with_capacity(config.iterations);

    for it in 0..config.iterations {
        let (loss, grad) = loss_and_gradient(&params, &input, h, w, config);
        if !loss.total.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite loss at iteration {it} (balance {}, incoherence {}, reconstruction {})",
                loss.balance, loss.incoherence, loss.reconstruction
            )));
        }
        trace.push(loss.total);
        progress(it, &loss);

        let t = (it + 1) as i32;
        let c1 = 1.0 - ADAM_BETA1.powi(t);
        let c2 = 1.0 - ADAM_BETA2.powi(t);
        for (((p, g), mi), vi) in params.values_mut().zip(grad.values()).zip(&mut m).zip(&mut v) {
            *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * g;
            *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * g * g;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *p -= config.learning_rate * mhat / (vhat.sqrt() + ADAM_EPS);
        }
        if params.values().any(|p| !p.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite parameters after iteration {it}"
            )));
        }
    }

    let raw = forward_decompose(&params, f)?;
    let features = normalize_features(&raw)?;
    Ok(TrainedDecomposition {
        params,
        features,
        loss_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr2, Array3};

    fn small_image(h: usize, w: usize, seed: u64) -> ImageGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = Array2::from_shape_fn((h, w), |_| rng.random_range(0.0..1.0));
        ImageGrid::new(data).unwrap()
    }

    #[test]
    fn init_is_deterministic_with_zero_bias() {
        let cfg = CnnConfig::default();
        let a = init_params(&cfg);
        assert_eq!(a, init_params(&cfg));
        let b = init_params(&CnnConfig { seed: 1, ..cfg });
        assert_ne!(a, b);
        assert!(a.blocks().all(|blk| blk.biases.iter().all(|&x| x == 0.0)));
        let s = (1.0f64 / 288.0).sqrt();
        assert!(a.decomposition[1].weights.iter().all(|w| w.abs() <= s));
    }

    #[test]
    fn zero_network_outputs_zero() {
        let f = small_image(6, 7, 0);
        let p = NetworkParams::zeros(3);
        let maps = forward_decompose(&p, &f).unwrap();
        assert_eq!(maps.dim(), (3, 6, 7));
        assert!(maps.maps().iter().all(|&v| v == 0.0));
        let r = forward_reconstruct(&p, &maps).unwrap();
        assert!(r.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_shape_for_64px() {
        let f = small_image(64, 64, 1);
        let p = init_params(&CnnConfig::default());
        assert_eq!(forward_decompose(&p, &f).unwrap().dim(), (3, 64, 64));
    }

    fn pass_through(k: usize, route: usize) -> NetworkParams {
        let mut p = NetworkParams::zeros(k);
        *p.decomposition[0].weight_mut(0, 0, 1, 1) = 1.0;
        *p.decomposition[1].weight_mut(0, 0, 1, 1) = 1.0;
        *p.decomposition[2].weight_mut(route, 0, 1, 1) = 1.0;
        *p.reconstruction.weight_mut(0, 0, 1, 1) = 1.0;
        p
    }

    #[test]
    fn centre_tap_weights_pass_input_through() {
        let f = small_image(9, 8, 2);
        let p = pass_through(3, 1);
        let maps = forward_decompose(&p, &f).unwrap();
        for ((i, j), &v) in f.data().indexed_iter() {
            assert!((maps.maps()[[1, i, j]] - v).abs() < 1e-12);
            assert_eq!(maps.maps()[[0, i, j]], 0.0);
        }
        let stack = FeatureStack::new(Array3::from_shape_fn((3, 9, 8), |(c, i, j)| (c + i * j) as f64 * 0.1)).unwrap();
        let r = forward_reconstruct(&p, &stack).unwrap();
        let sum = stack.maps().sum_axis(ndarray::Axis(0));
        assert!((r.data() - &sum).iter().all(|d| d.abs() < 1e-12));
        let scaled = FeatureStack::new(stack.maps() * 2.5).unwrap();
        let r2 = forward_reconstruct(&p, &scaled).unwrap();
        assert!((r2.data() - &(r.data() * 2.5)).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn translation_covariance_in_interior() {
        let (h, w) = (16, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let big = Array2::from_shape_fn((h + 1, w), |_| rng.random_range(0.0..1.0));
        let f = ImageGrid::new(big.slice(ndarray::s![0..h, ..]).to_owned()).unwrap();
        let g = ImageGrid::new(big.slice(ndarray::s![1..h + 1, ..]).to_owned()).unwrap();
        let p = init_params(&CnnConfig { seed: 9, ..CnnConfig::default() });
        let mf = forward_decompose(&p, &f).unwrap();
        let mg = forward_decompose(&p, &g).unwrap();
        let rf = forward_reconstruct(&p, &mf).unwrap();
        let rg = forward_reconstruct(&p, &mg).unwrap();
        // decomposition sees 3 pixels, reconstruction 4
        for i in 4..h - 5 {
            for j in 4..w - 4 {
                for c in 0..3 {
                    assert!((mg.maps()[[c, i, j]] - mf.maps()[[c, i + 1, j]]).abs() < 1e-12);
                }
                assert!((rg.data()[[i, j]] - rf.data()[[i + 1, j]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn loss_vanishes_for_ideal_decomposition() {
        // f = [[3, 4], ...] split into disjoint maps of norm |f| / 2, exact reconstruction
        let f = arr2(&[[0.6, 0.0], [0.0, 0.8]]);
        let maps = Array3::from_shape_vec((2, 2, 2), vec![0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.5]).unwrap();
        let l = loss_terms(maps.view(), f.view(), f.view(), &CnnConfig::default()).unwrap();
        assert!(l.total.abs() < 1e-15, "{l:?}");
    }

    #[test]
    fn identical_maps_hit_the_log_floor() {
        let f = arr2(&[[1.0, 0.5], [0.2, 0.1]]);
        let m = arr2(&[[0.3, 0.1], [0.4, 0.2]]);
        let maps = ndarray::stack![ndarray::Axis(0), m, m];
        let cfg = CnnConfig::default();
        let l = loss_terms(maps.view(), f.view(), f.view(), &cfg).unwrap();
        let expect = -cfg.alpha2 * 2.0 * cfg.epsilon.ln();
        assert!((l.incoherence - expect).abs() < 1e-9);
    }

    #[test]
    fn two_by_two_hand_evaluation() {
        let f = arr2(&[[1.0, 0.0], [0.0, 0.0]]);
        let maps = Array3::from_shape_vec((2, 2, 2), vec![0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.5]).unwrap();
        let recon = Array2::zeros((2, 2));
        let cfg = CnnConfig::default();
        let l = loss_terms(maps.view(), recon.view(), f.view(), &cfg).unwrap();
        // |psi_k| = 0.5 = |f| / 2, maps orthogonal, residual |f|^2 = 1
        assert_eq!(l.balance, 0.0);
        assert_eq!(l.incoherence, 0.0);
        assert!((l.reconstruction - 0.5).abs() < 1e-15);
        assert!((l.total - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_image_has_zero_gradient() {
        let f = ImageGrid::new(Array2::zeros((6, 6))).unwrap();
        let p = init_params(&CnnConfig::default());
        for (a1, a2) in [(0.0, 0.0), (0.5, 0.0), (0.25, 0.25)] {
            let cfg = CnnConfig { alpha1: a1, alpha2: a2, ..CnnConfig::default() };
            let g = loss_gradient(&p, &f, &cfg).unwrap();
            assert!(g.values().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn gradient_is_deterministic() {
        let f = small_image(8, 8, 3);
        let p = init_params(&CnnConfig::default());
        let cfg = CnnConfig::default();
        assert_eq!(loss_gradient(&p, &f, &cfg).unwrap(), loss_gradient(&p, &f, &cfg).unwrap());
    }

    #[test]
    fn gradient_matches_finite_differences_per_tensor() {
        let f = small_image(6, 6, 4);
        let cfg = CnnConfig { seed: 2, ..CnnConfig::default() };
        let mut p = init_params(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for b in p.blocks_mut() {
            for x in &mut b.biases {
                *x = rng.random_range(-0.1..0.1);
            }
        }
        let g = loss_gradient(&p, &f, &cfg).unwrap();
        let h = 1e-5;
        let flat_grad: Vec<f64> = g.values().copied().collect();
        // a spread of entries from every weight tensor plus every bias vector
        let mut offset = 0;
        let mut picks = Vec::new();
        for b in p.blocks() {
            let nw = b.weights.len();
            picks.extend((0..nw).step_by(nw / 7 + 1).map(|i| offset + i));
            picks.extend((0..b.biases.len()).map(|i| offset + nw + i));
            offset += nw + b.biases.len();
        }
        for idx in picks {
            let perturbed = |delta: f64| {
                let mut q = p.clone();
                *q.values_mut().nth(idx).unwrap() += delta;
                decomposition_loss(&q, &f, &cfg).unwrap().total
            };
            let num = (perturbed(h) - perturbed(-h)) / (2.0 * h);
            let ga = flat_grad[idx];
            let err = (ga - num).abs();
            assert!(err <= 1e-8 || err / ga.abs().max(num.abs()) <= 1e-4, "param {idx}: {ga} vs {num}");
        }
    }

    #[test]
    fn invalid_alpha_rejected() {
        let cfg = CnnConfig { alpha1: 0.6, alpha2: 0.5, ..CnnConfig::default() };
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("alpha1+alpha2 must be < 1"));
    }

    #[test]
    fn short_training_is_reproducible_and_normalized() {
        let f = small_image(12, 12, 6);
        let cfg = CnnConfig { iterations: 15, ..CnnConfig::default() };
        let a = train_decomposition(&f, &cfg).unwrap();
        let b = train_decomposition(&f, &cfg).unwrap();
        assert_eq!(a.loss_trace, b.loss_trace);
        assert_eq!(a.params, b.params);
        assert_eq!(a.loss_trace.len(), 15);
        assert!(a.features.maps().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn non_finite_loss_aborts_with_iteration() {
        let f = small_image(5, 5, 7);
        let cfg = CnnConfig { iterations: 3, ..CnnConfig::default() };
        let mut p = init_params(&cfg);
        p.reconstruction.biases[0] = f64::INFINITY;
        let err = train_decomposition_from(&f, &cfg, p, |_, _| {}).unwrap_err();
        assert!(matches!(err, Error::Numerical(ref m) if m.contains("iteration 0")));
        assert_eq!(err.exit_code(), 3);
    }
}
