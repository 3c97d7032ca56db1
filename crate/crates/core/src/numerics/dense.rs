use rand::Rng;

use super::matrix::{all_finite, Matrix};
use super::{ParamView, Parameterized};
use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `y`.
    fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
struct DenseCache {
    input: Vec<f64>,
    pre: Vec<f64>,
    output: Vec<f64>,
}

/// Fully connected layer `y = act(W x + b)`.
///
/// `forward` caches what `backward` needs; `backward` consumes the cache, so a
/// second `backward` without an intervening `forward` is an error.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    weights: Matrix,
    bias: Vec<f64>,
    activation: Activation,
    cache: Option<DenseCache>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub input: Vec<f64>,
}

impl DenseLayer {
    pub fn new(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        check_dim("DenseLayer bias", weights.rows(), bias.len())?;
        Ok(Self {
            weights,
            bias,
            activation,
            cache: None,
        })
    }

    /// Uniform `±1/sqrt(fan_in)` initialization for weights and biases.
    pub fn init<R: Rng + ?Sized>(input: usize, output: usize, activation: Activation, rng: &mut R) -> Self {
        let bound = 1.0 / (input.max(1) as f64).sqrt();
        let weights = Matrix::uniform(output, input, bound, rng);
        let bias = (0..output).map(|_| rng.gen_range(-bound..=bound)).collect();
        Self {
            weights,
            bias,
            activation,
            cache: None,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    fn pre_activation(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut z = self.weights.matvec(x)?;
        for (zi, bi) in z.iter_mut().zip(&self.bias) {
            *zi += bi;
        }
        Ok(z)
    }

    /// Forward pass without touching the cache.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let z = self.pre_activation(x)?;
        Ok(z.into_iter().map(|v| self.activation.apply(v)).collect())
    }

    pub fn forward(&mut self, x: &[f64]) -> Result<Vec<f64>> {
        let pre = self.pre_activation(x)?;
        let output: Vec<f64> = pre.iter().map(|&v| self.activation.apply(v)).collect();
        self.cache = Some(DenseCache {
            input: x.to_vec(),
            pre,
            output: output.clone(),
        });
        Ok(output)
    }

    pub fn backward(&mut self, dl_dy: &[f64]) -> Result<DenseGrads> {
        let mut weights = Matrix::zeros(self.weights.rows(), self.weights.cols());
        let mut bias = vec![0.0; self.bias.len()];
        let input = self.backward_accumulate(dl_dy, weights.as_mut_slice(), &mut bias)?;
        Ok(DenseGrads { weights, bias, input })
    }

    /// Adds parameter gradients into `grad_w` (row-major) and `grad_b`, returns `dL/dx`.
    pub fn backward_accumulate(
        &mut self,
        dl_dy: &[f64],
        grad_w: &mut [f64],
        grad_b: &mut [f64],
    ) -> Result<Vec<f64>> {
        check_dim("DenseLayer::backward upstream", self.output_dim(), dl_dy.len())?;
        check_dim(
            "DenseLayer::backward grad_w",
            self.weights.as_slice().len(),
            grad_w.len(),
        )?;
        check_dim("DenseLayer::backward grad_b", self.bias.len(), grad_b.len())?;
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::State("DenseLayer::backward called without a cached forward".into()))?;
        let dz: Vec<f64> = dl_dy
            .iter()
            .zip(cache.pre.iter().zip(&cache.output))
            .map(|(&g, (&z, &y))| g * self.activation.derivative(z, y))
            .collect();
        let cols = self.weights.cols();
        for (r, &d) in dz.iter().enumerate() {
            grad_b[r] += d;
            if d == 0.0 {
                continue;
            }
            for (gw, &x) in grad_w[r * cols..(r + 1) * cols].iter_mut().zip(&cache.input) {
                *gw += d * x;
            }
        }
        let dx = self.weights.matvec_t(&dz)?;
        if !all_finite(&dx) {
            return Err(Error::Numeric(
                "non-finite gradient in DenseLayer::backward".into(),
            ));
        }
        Ok(dx)
    }

    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }
}

impl Parameterized for DenseLayer {
    fn tensors(&self) -> Vec<ParamView<'_>> {
        vec![
            ParamView::new(
                "weight",
                vec![self.weights.rows(), self.weights.cols()],
                self.weights.as_slice(),
            ),
            ParamView::new("bias", vec![self.bias.len()], &self.bias),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.cache = None;
        vec![self.weights.as_mut_slice(), &mut self.bias]
    }
}

/// A stack of dense layers: hidden layers followed by an output layer.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
}

impl Mlp {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Argument("an Mlp needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            check_dim("Mlp layer chaining", pair[0].output_dim(), pair[1].input_dim())?;
        }
        Ok(Self { layers })
    }

    /// `input -> [hidden (relu)]* -> output (output_act)`.
    pub fn init<R: Rng + ?Sized>(
        input: usize,
        hidden: &[usize],
        output: usize,
        output_act: Activation,
        rng: &mut R,
    ) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = input;
        for &h in hidden {
            layers.push(DenseLayer::init(prev, h, Activation::Relu, rng));
            prev = h;
        }
        layers.push(DenseLayer::init(prev, output, output_act, rng));
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut a = self.layers[0].apply(x)?;
        for layer in &self.layers[1..] {
            a = layer.apply(&a)?;
        }
        Ok(a)
    }

    pub fn forward(&mut self, x: &[f64]) -> Result<Vec<f64>> {
        let mut a = self.layers[0].forward(x)?;
        for layer in &mut self.layers[1..] {
            a = layer.forward(&a)?;
        }
        Ok(a)
    }

    /// Backward through the cached forward. Parameter gradients are added into
    /// `grad` (flat, in `Parameterized` order) when given; returns `dL/dx`.
    pub fn backward_accumulate(&mut self, dl_dy: &[f64], grad: Option<&mut [f64]>) -> Result<Vec<f64>> {
        let sizes: Vec<(usize, usize)> = self
            .layers
            .iter()
            .map(|l| (l.weights.as_slice().len(), l.bias.len()))
            .collect();
        let total: usize = sizes.iter().map(|(w, b)| w + b).sum();
        let mut scratch;
        let grad = match grad {
            Some(g) => {
                check_dim("Mlp::backward grad buffer", total, g.len())?;
                g
            }
            None => {
                scratch = vec![0.0; total];
                &mut scratch[..]
            }
        };
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut off = 0;
        for &(w, b) in &sizes {
            offsets.push(off);
            off += w + b;
        }
        let mut upstream = dl_dy.to_vec();
        for (idx, layer) in self.layers.iter_mut().enumerate().rev() {
            let (w, b) = sizes[idx];
            let start = offsets[idx];
            let (gw, rest) = grad[start..start + w + b].split_at_mut(w);
            upstream = layer.backward_accumulate(&upstream, gw, rest)?;
        }
        Ok(upstream)
    }
}

impl Parameterized for Mlp {
    fn tensors(&self) -> Vec<ParamView<'_>> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                l.tensors()
                    .into_iter()
                    .map(move |v| v.prefixed(&format!("layer{i}")))
            })
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(|l| l.tensors_mut()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff_grad;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_layer_passes_input_through() {
        let layer = DenseLayer::new(Matrix::identity(2), vec![0.0, 0.0], Activation::Identity).unwrap();
        assert_eq!(layer.apply(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn zero_weights_return_bias() {
        let layer = DenseLayer::new(Matrix::zeros(2, 3), vec![0.5, -0.5], Activation::Identity).unwrap();
        assert_eq!(layer.apply(&[3.0, -7.0, 1.0]).unwrap(), vec![0.5, -0.5]);
    }

    #[test]
    fn tanh_layer_hand_arithmetic() {
        let w = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, -1.0]]).unwrap();
        let layer = DenseLayer::new(w, vec![0.0, 0.0], Activation::Tanh).unwrap();
        let y = layer.apply(&[0.5, 0.5]).unwrap();
        assert!((y[0] - 0.761_594_155_955_764_9).abs() < 1e-15);
        assert_eq!(y[1], 0.0);
    }

    #[test]
    fn forward_rejects_wrong_input_dim() {
        let mut layer = DenseLayer::init(3, 2, Activation::Relu, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(layer.forward(&[1.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut layer = DenseLayer::init(3, 2, Activation::Identity, &mut ChaCha8Rng::seed_from_u64(1));
        layer.forward(&[1.0, 2.0, 3.0]).unwrap();
        let g = layer.backward(&[0.0, 0.0]).unwrap();
        assert!(g.weights.as_slice().iter().all(|&v| v == 0.0));
        assert!(g.bias.iter().all(|&v| v == 0.0));
        assert!(g.input.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn chain_rule_by_hand() {
        let mut layer = DenseLayer::new(Matrix::identity(2), vec![0.0, 0.0], Activation::Identity).unwrap();
        layer.forward(&[1.0, 2.0]).unwrap();
        let g = layer.backward(&[1.0, 0.0]).unwrap();
        assert_eq!(g.input, vec![1.0, 0.0]);
        assert_eq!(g.weights.as_slice(), &[1.0, 2.0, 0.0, 0.0]);
        assert_eq!(g.bias, vec![1.0, 0.0]);
    }

    #[test]
    fn backward_without_forward_is_state_error() {
        let mut layer = DenseLayer::init(2, 2, Activation::Tanh, &mut ChaCha8Rng::seed_from_u64(2));
        assert!(matches!(layer.backward(&[1.0, 1.0]), Err(Error::State(_))));
        layer.forward(&[0.1, 0.2]).unwrap();
        layer.backward(&[1.0, 1.0]).unwrap();
        // cache is consumed by the first backward
        assert!(matches!(layer.backward(&[1.0, 1.0]), Err(Error::State(_))));
    }

    #[test]
    fn random_layers_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for act in [Activation::Identity, Activation::Tanh, Activation::Relu] {
            for _ in 0..10 {
                let n_in = rng.gen_range(1..=6);
                let n_out = rng.gen_range(1..=6);
                let layer = DenseLayer::init(n_in, n_out, act, &mut rng);
                let x: Vec<f64> = (0..n_in).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let up: Vec<f64> = (0..n_out).map(|_| rng.gen_range(-1.0..1.0)).collect();

                let mut work = layer.clone();
                work.forward(&x).unwrap();
                let g = work.backward(&up).unwrap();

                let loss = |l: &DenseLayer, x: &[f64]| -> f64 {
                    l.apply(x).unwrap().iter().zip(&up).map(|(a, b)| a * b).sum()
                };
                let params = layer.flat_params();
                let fd = finite_diff_grad(
                    |p| {
                        let mut l = layer.clone();
                        l.set_flat_params(p).unwrap();
                        loss(&l, &x)
                    },
                    &params,
                    1e-6,
                )
                .unwrap();
                let mut analytic = g.weights.as_slice().to_vec();
                analytic.extend_from_slice(&g.bias);
                assert_close(&analytic, &fd, 1e-6);

                let fd_x = finite_diff_grad(|xp| loss(&layer, xp), &x, 1e-6).unwrap();
                assert_close(&g.input, &fd_x, 1e-6);
            }
        }
    }

    fn assert_close(a: &[f64], b: &[f64], rel: f64) {
        for (x, y) in a.iter().zip(b) {
            let scale = x.abs().max(y.abs());
            if scale < 1e-6 {
                assert!((x - y).abs() < 1e-8, "{x} vs {y}");
            } else {
                assert!((x - y).abs() / scale <= rel, "{x} vs {y}");
            }
        }
    }
}
