use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{invalid, Error, Result};

/// Whether batch norm uses batch statistics (and updates its running
/// statistics) or the stored running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
}

/// Non-affine batch normalization applied to the scalar score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNormState {
    pub running_mean: f64,
    pub running_var: f64,
    pub momentum: f64,
    pub epsilon: f64,
}

impl Default for BatchNormState {
    fn default() -> Self {
        Self {
            running_mean: 0.0,
            running_var: 1.0,
            momentum: 0.1,
            epsilon: 1e-5,
        }
    }
}

/// Trainable arrays of the scorer. Also used for gradients and optimizer
/// velocity, which share the exact same layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    /// Representation layer, `hidden x input` row-major.
    pub rep_weights: Vec<f64>,
    pub rep_bias: Vec<f64>,
    /// Scoring layer, one weight per hidden unit.
    pub score_weights: Vec<f64>,
    /// Scoring layer bias, a single entry.
    pub score_bias: Vec<f64>,
}

/// Gradient of a scalar loss with respect to every [`Parameters`] entry.
pub type GradientSet = Parameters;

impl Parameters {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            rep_weights: vec![0.0; input_dim * hidden_dim],
            rep_bias: vec![0.0; hidden_dim],
            score_weights: vec![0.0; hidden_dim],
            score_bias: vec![0.0; 1],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            rep_weights: vec![0.0; self.rep_weights.len()],
            rep_bias: vec![0.0; self.rep_bias.len()],
            score_weights: vec![0.0; self.score_weights.len()],
            score_bias: vec![0.0; self.score_bias.len()],
        }
    }

    pub fn arrays(&self) -> [&[f64]; 4] {
        [
            &self.rep_weights,
            &self.rep_bias,
            &self.score_weights,
            &self.score_bias,
        ]
    }

    pub fn arrays_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [
            &mut self.rep_weights,
            &mut self.rep_bias,
            &mut self.score_weights,
            &mut self.score_bias,
        ]
    }

    /// Total number of scalar entries.
    pub fn len(&self) -> usize {
        self.arrays().iter().map(|a| a.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat view in `arrays()` order.
    pub fn flat(&self) -> Vec<f64> {
        self.arrays().concat()
    }

    pub fn get_flat(&self, mut index: usize) -> f64 {
        for a in self.arrays() {
            if index < a.len() {
                return a[index];
            }
            index -= a.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_flat(&mut self, mut index: usize, value: f64) {
        for a in self.arrays_mut() {
            if index < a.len() {
                a[index] = value;
                return;
            }
            index -= a.len();
        }
        panic!("parameter index out of range");
    }

    pub fn congruent(&self, other: &Parameters) -> bool {
        self.arrays()
            .iter()
            .zip(other.arrays())
            .all(|(a, b)| a.len() == b.len())
    }

    pub(crate) fn ensure_congruent(&self, other: &Parameters) -> Result<()> {
        if self.congruent(other) {
            Ok(())
        } else {
            Err(invalid("parameter shapes are not congruent"))
        }
    }

    pub fn all_finite(&self) -> bool {
        self.arrays().iter().all(|a| a.iter().all(|v| v.is_finite()))
    }

    pub fn scale(&mut self, factor: f64) {
        for a in self.arrays_mut() {
            a.iter_mut().for_each(|v| *v *= factor);
        }
    }
}

/// Everything [`ScorerNetwork::backward`] needs from a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    mode: Mode,
    generation: u64,
    input: Matrix,
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
    normalized: Vec<f64>,
    inv_std: f64,
}

impl ForwardCache {
    pub fn rows(&self) -> usize {
        self.input.rows()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }
}

/// One-hidden-layer scorer: `BN(w . relu(W x + b) + c)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScorerNetwork {
    input_dim: usize,
    hidden_dim: usize,
    params: Parameters,
    bn: BatchNormState,
    activation: Activation,
    /// Bumped whenever the parameters may have changed; caches record it.
    #[serde(skip)]
    generation: u64,
}

impl ScorerNetwork {
    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` weights, zero biases,
    /// fresh batch-norm statistics.
    pub fn new(input_dim: usize, hidden_dim: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 {
            return Err(invalid("network dimensions must be at least 1"));
        }
        let mut rng = crate::rng_from_seed(seed);
        let mut params = Parameters::zeros(input_dim, hidden_dim);
        let rep_bound = 1.0 / (input_dim as f64).sqrt();
        for w in &mut params.rep_weights {
            *w = rng.random_range(-rep_bound..=rep_bound);
        }
        let score_bound = 1.0 / (hidden_dim as f64).sqrt();
        for w in &mut params.score_weights {
            *w = rng.random_range(-score_bound..=score_bound);
        }
        Ok(Self {
            input_dim,
            hidden_dim,
            params,
            bn: BatchNormState::default(),
            activation: Activation::Relu,
            generation: 0,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn params(&self) -> &Parameters {
        &self.params
    }

    /// Mutable access to the parameters. Invalidates outstanding caches.
    pub fn params_mut(&mut self) -> &mut Parameters {
        self.generation += 1;
        &mut self.params
    }

    pub fn batch_norm(&self) -> &BatchNormState {
        &self.bn
    }

    pub fn batch_norm_mut(&mut self) -> &mut BatchNormState {
        &mut self.bn
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Representation-layer outputs (post-ReLU), one row per input row.
    pub fn embed(&self, batch: &Matrix) -> Result<Matrix> {
        batch.check_cols(self.input_dim)?;
        let (_, hidden) = self.hidden_layer(batch);
        Matrix::new(batch.rows(), self.hidden_dim, hidden)
    }

    /// Eval-mode scores; never touches the running statistics.
    pub fn score(&self, batch: &Matrix) -> Result<Vec<f64>> {
        batch.check_cols(self.input_dim)?;
        let (_, hidden) = self.hidden_layer(batch);
        let raw = self.raw_scores(&hidden, batch.rows());
        let inv_std = 1.0 / (self.bn.running_var + self.bn.epsilon).sqrt();
        Ok(raw
            .iter()
            .map(|r| (r - self.bn.running_mean) * inv_std)
            .collect())
    }

    pub fn forward(&mut self, batch: &Matrix, mode: Mode) -> Result<(Vec<f64>, ForwardCache)> {
        batch.check_cols(self.input_dim)?;
        let n = batch.rows();
        if n == 0 {
            return Err(invalid("empty batch"));
        }
        if mode == Mode::Train && n < 2 {
            return Err(invalid("train-mode batch norm needs at least 2 rows"));
        }
        let (hidden_pre, hidden) = self.hidden_layer(batch);
        let raw = self.raw_scores(&hidden, n);

        let (mean, inv_std) = match mode {
            Mode::Train => {
                let nf = n as f64;
                let mean = raw.iter().sum::<f64>() / nf;
                let ss: f64 = raw.iter().map(|r| (r - mean) * (r - mean)).sum();
                let var = ss / nf;
                let m = self.bn.momentum;
                self.bn.running_mean = (1.0 - m) * self.bn.running_mean + m * mean;
                self.bn.running_var = (1.0 - m) * self.bn.running_var + m * ss / (nf - 1.0);
                (mean, 1.0 / (var + self.bn.epsilon).sqrt())
            }
            Mode::Eval => (
                self.bn.running_mean,
                1.0 / (self.bn.running_var + self.bn.epsilon).sqrt(),
            ),
        };
        let normalized: Vec<f64> = raw.iter().map(|r| (r - mean) * inv_std).collect();

        let cache = ForwardCache {
            mode,
            generation: self.generation,
            input: batch.clone(),
            hidden_pre,
            hidden,
            normalized: normalized.clone(),
            inv_std,
        };
        Ok((normalized, cache))
    }

    /// Gradient of a loss with respect to the parameters, given the gradient
    /// of the loss with respect to each output score of the cached batch.
    pub fn backward(&self, cache: &ForwardCache, score_grads: &[f64]) -> Result<GradientSet> {
        if cache.generation != self.generation
            || cache.input.cols() != self.input_dim
            || cache.hidden_pre.len() != cache.rows() * self.hidden_dim
        {
            return Err(Error::StaleCache);
        }
        let n = cache.rows();
        if score_grads.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: score_grads.len(),
            });
        }
        let h = self.hidden_dim;
        let d = self.input_dim;

        let raw_grads: Vec<f64> = match cache.mode {
            Mode::Train => {
                let nf = n as f64;
                let mean_g = score_grads.iter().sum::<f64>() / nf;
                let mean_gy = score_grads
                    .iter()
                    .zip(&cache.normalized)
                    .map(|(g, y)| g * y)
                    .sum::<f64>()
                    / nf;
                score_grads
                    .iter()
                    .zip(&cache.normalized)
                    .map(|(g, y)| cache.inv_std * (g - mean_g - y * mean_gy))
                    .collect()
            }
            Mode::Eval => score_grads.iter().map(|g| g * cache.inv_std).collect(),
        };

        let mut grads = self.params.zeros_like();
        grads.score_bias[0] = raw_grads.iter().sum();
        for (i, &dr) in raw_grads.iter().enumerate() {
            if dr == 0.0 {
                continue;
            }
            let x = cache.input.row(i);
            for j in 0..h {
                let idx = i * h + j;
                grads.score_weights[j] += dr * cache.hidden[idx];
                if cache.hidden_pre[idx] > 0.0 {
                    let dz = dr * self.params.score_weights[j];
                    grads.rep_bias[j] += dz;
                    let row = &mut grads.rep_weights[j * d..(j + 1) * d];
                    for (g, xv) in row.iter_mut().zip(x) {
                        *g += dz * xv;
                    }
                }
            }
        }
        Ok(grads)
    }

    fn hidden_layer(&self, batch: &Matrix) -> (Vec<f64>, Vec<f64>) {
        let h = self.hidden_dim;
        let d = self.input_dim;
        let mut pre = Vec::with_capacity(batch.rows() * h);
        for x in batch.row_iter() {
            for j in 0..h {
                let w = &self.params.rep_weights[j * d..(j + 1) * d];
                let z: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.params.rep_bias[j];
                pre.push(z);
            }
        }
        let act = match self.activation {
            Activation::Relu => pre.iter().map(|z| z.max(0.0)).collect(),
        };
        (pre, act)
    }

    fn raw_scores(&self, hidden: &[f64], n: usize) -> Vec<f64> {
        let h = self.hidden_dim;
        (0..n)
            .map(|i| {
                hidden[i * h..(i + 1) * h]
                    .iter()
                    .zip(&self.params.score_weights)
                    .map(|(a, w)| a * w)
                    .sum::<f64>()
                    + self.params.score_bias[0]
            })
            .collect()
    }
}

/// Sum over parameter arrays of the squared Euclidean distance between two
/// networks.
pub fn param_change_norm(net: &ScorerNetwork, net0: &ScorerNetwork) -> Result<f64> {
    net.params.ensure_congruent(&net0.params)?;
    Ok(net
        .params
        .arrays()
        .iter()
        .zip(net0.params.arrays())
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Rng;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_batch(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = Rng::seed_from_u64(seed);
        let v = (0..rows * cols)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Matrix::new(rows, cols, v).unwrap()
    }

    #[test]
    fn init_shape_and_determinism() {
        let a = ScorerNetwork::new(3, 20, 0).unwrap();
        assert_eq!(a.params().rep_weights.len(), 60);
        assert!(a.params().all_finite());
        assert!(a.params().rep_bias.iter().all(|b| *b == 0.0));
        let b = ScorerNetwork::new(3, 20, 0).unwrap();
        assert_eq!(a, b);
        assert!(ScorerNetwork::new(0, 20, 0).is_err());
        assert!(ScorerNetwork::new(3, 0, 0).is_err());
        let bound = 1.0 / 3f64.sqrt();
        assert!(a.params().rep_weights.iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn zero_network_eval_scores() {
        let mut net = ScorerNetwork::new(2, 4, 1).unwrap();
        let p = net.params_mut();
        *p = p.zeros_like();
        net.batch_norm_mut().running_mean = 0.3;
        net.batch_norm_mut().running_var = 2.0;
        let x = random_batch(5, 2, 3);
        let (scores, _) = net.forward(&x, Mode::Eval).unwrap();
        let expect = (0.0 - 0.3) / (2.0f64 + 1e-5).sqrt();
        assert!(scores.iter().all(|s| (s - expect).abs() < 1e-15));
        assert_eq!(net.score(&x).unwrap(), scores);
    }

    #[test]
    fn train_mode_normalizes_batch() {
        let mut net = ScorerNetwork::new(4, 8, 2).unwrap();
        let x = random_batch(64, 4, 9);
        let (s, _) = net.forward(&x, Mode::Train).unwrap();
        let n = s.len() as f64;
        let mean = s.iter().sum::<f64>() / n;
        let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-3);
        assert_ne!(net.batch_norm().running_var, 1.0);
    }

    #[test]
    fn train_mode_rejects_single_row_and_bad_width() {
        let mut net = ScorerNetwork::new(3, 4, 0).unwrap();
        assert!(net.forward(&Matrix::zeros(1, 3), Mode::Train).is_err());
        assert!(net.forward(&Matrix::zeros(4, 2), Mode::Eval).is_err());
    }

    #[test]
    fn backward_zero_and_linearity() {
        let mut net = ScorerNetwork::new(3, 5, 4).unwrap();
        let x = random_batch(8, 3, 5);
        let (_, cache) = net.forward(&x, Mode::Train).unwrap();
        let zero = net.backward(&cache, &[0.0; 8]).unwrap();
        assert!(zero.flat().iter().all(|g| *g == 0.0));

        let g: Vec<f64> = (0..8).map(|i| (i as f64 - 3.5) * 0.3).collect();
        let g2: Vec<f64> = g.iter().map(|v| 2.0 * v).collect();
        let a = net.backward(&cache, &g).unwrap().flat();
        let b = net.backward(&cache, &g2).unwrap().flat();
        for (x, y) in a.iter().zip(&b) {
            assert!((2.0 * x - y).abs() <= 1e-12 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn backward_detects_stale_cache() {
        let mut net = ScorerNetwork::new(3, 5, 4).unwrap();
        let x = random_batch(8, 3, 5);
        let (_, cache) = net.forward(&x, Mode::Train).unwrap();
        net.params_mut().score_bias[0] += 1.0;
        assert!(matches!(net.backward(&cache, &[0.0; 8]), Err(Error::StaleCache)));
        let (_, cache) = net.forward(&x, Mode::Train).unwrap();
        assert!(net.backward(&cache, &[0.0; 7]).is_err());
    }

    /// Loss sum_i c_i * s_i^2 + sum_i e_i s_i checked against central
    /// differences of a fresh forward pass.
    fn finite_difference_check(mode: Mode, seed: u64) {
        let mut net = ScorerNetwork::new(3, 6, seed).unwrap();
        // Move the biases off zero so ReLU kinks are not sitting at inputs.
        for (j, b) in net.params_mut().rep_bias.iter_mut().enumerate() {
            *b = 0.05 * (j as f64 + 1.0);
        }
        net.batch_norm_mut().running_mean = 0.2;
        net.batch_norm_mut().running_var = 1.7;
        let x = random_batch(10, 3, seed + 100);
        let coef: Vec<f64> = (0..10).map(|i| 0.1 + 0.05 * i as f64).collect();
        let lin: Vec<f64> = (0..10).map(|i| (i as f64) * 0.2 - 1.0).collect();
        let loss = |s: &[f64]| -> f64 {
            s.iter()
                .enumerate()
                .map(|(i, v)| coef[i] * v * v + lin[i] * v)
                .sum()
        };
        let (s, cache) = net.clone().forward(&x, mode).unwrap();
        let dl: Vec<f64> = s
            .iter()
            .enumerate()
            .map(|(i, v)| 2.0 * coef[i] * v + lin[i])
            .collect();
        let analytic = net.backward(&cache, &dl).unwrap();

        let step = 1e-5;
        for k in 0..analytic.len() {
            let mut plus = net.clone();
            let v = plus.params().get_flat(k);
            plus.params_mut().set_flat(k, v + step);
            let mut minus = net.clone();
            minus.params_mut().set_flat(k, v - step);
            let fp = loss(&plus.forward(&x, mode).unwrap().0);
            let fm = loss(&minus.forward(&x, mode).unwrap().0);
            let numeric = (fp - fm) / (2.0 * step);
            let a = analytic.get_flat(k);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            assert!(err < 1e-4, "param {k}: analytic {a} numeric {numeric}");
        }
    }

    #[test]
    fn backward_matches_finite_differences_train() {
        for seed in 0..3 {
            finite_difference_check(Mode::Train, seed);
        }
    }

    #[test]
    fn backward_matches_finite_differences_eval() {
        finite_difference_check(Mode::Eval, 7);
    }

    #[test]
    fn param_change_norm_cases() {
        let a = ScorerNetwork::new(2, 3, 0).unwrap();
        assert_eq!(param_change_norm(&a, &a).unwrap(), 0.0);
        let mut b = a.clone();
        b.params_mut().rep_weights[2] += 2.0;
        assert_eq!(param_change_norm(&b, &a).unwrap(), 4.0);

        let c = ScorerNetwork::new(2, 3, 9).unwrap();
        let brute: f64 = a
            .params()
            .flat()
            .iter()
            .zip(c.params().flat())
            .map(|(x, y)| (x - y).powi(2))
            .sum();
        assert!((param_change_norm(&a, &c).unwrap() - brute).abs() < 1e-12);

        let d = ScorerNetwork::new(3, 3, 0).unwrap();
        assert!(param_change_norm(&a, &d).is_err());
    }
}
