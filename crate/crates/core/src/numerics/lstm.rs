use rand::Rng;

use super::matrix::{all_finite, concat, sigmoid, Matrix};
use super::{ParamView, Parameterized};
use crate::error::{check_dim, Error, Result};

const GATE_NAMES: [&str; 4] = ["input", "forget", "output", "cell"];

/// Parameters of one LSTM cell. Every gate reads `z = [h_prev; x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    hidden: usize,
    input: usize,
    /// input, forget, output, candidate; each `hidden × (hidden + input)`
    weights: [Matrix; 4],
    biases: [Vec<f64>; 4],
}

/// Activations of one `step`, kept for backpropagation through time.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmStepCache {
    z: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    o: Vec<f64>,
    g: Vec<f64>,
    tanh_c: Vec<f64>,
}

impl LstmCell {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        Self {
            hidden,
            input,
            weights: std::array::from_fn(|_| Matrix::zeros(hidden, hidden + input)),
            biases: std::array::from_fn(|_| vec![0.0; hidden]),
        }
    }

    /// Uniform `±1/sqrt(hidden + input)` with the forget-gate bias set to 1.
    pub fn init<R: Rng + ?Sized>(hidden: usize, input: usize, rng: &mut R) -> Self {
        let fan_in = (hidden + input).max(1);
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weights = std::array::from_fn(|_| Matrix::uniform(hidden, hidden + input, bound, rng));
        let mut biases: [Vec<f64>; 4] =
            std::array::from_fn(|_| (0..hidden).map(|_| rng.gen_range(-bound..=bound)).collect());
        biases[1] = vec![1.0; hidden];
        Self {
            hidden,
            input,
            weights,
            biases,
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden
    }

    pub fn input_dim(&self) -> usize {
        self.input
    }

    pub fn gate_weights(&self, gate: usize) -> &Matrix {
        &self.weights[gate]
    }

    pub fn gate_bias(&self, gate: usize) -> &[f64] {
        &self.biases[gate]
    }

    pub fn expected_param_count(hidden: usize, input: usize) -> usize {
        4 * hidden * (hidden + input + 1)
    }

    fn gates(&self, z: &[f64]) -> Result<[Vec<f64>; 4]> {
        let mut out: [Vec<f64>; 4] = Default::default();
        for (k, slot) in out.iter_mut().enumerate() {
            let mut a = self.weights[k].matvec(z)?;
            for (v, b) in a.iter_mut().zip(&self.biases[k]) {
                *v += b;
            }
            *slot = a;
        }
        Ok(out)
    }

    /// One cell update; returns `(h, c, cache)`.
    pub fn step(
        &self,
        h_prev: &[f64],
        c_prev: &[f64],
        x: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>, LstmStepCache)> {
        check_dim("LstmCell::step h_prev", self.hidden, h_prev.len())?;
        check_dim("LstmCell::step c_prev", self.hidden, c_prev.len())?;
        check_dim("LstmCell::step x", self.input, x.len())?;
        let z = concat(&[h_prev, x]);
        let [ai, af, ao, ag] = self.gates(&z)?;
        let i: Vec<f64> = ai.into_iter().map(sigmoid).collect();
        let f: Vec<f64> = af.into_iter().map(sigmoid).collect();
        let o: Vec<f64> = ao.into_iter().map(sigmoid).collect();
        let g: Vec<f64> = ag.into_iter().map(f64::tanh).collect();
        let c: Vec<f64> = (0..self.hidden).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
        let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        let h: Vec<f64> = o.iter().zip(&tanh_c).map(|(a, b)| a * b).collect();
        if !all_finite(&h) || !all_finite(&c) {
            return Err(Error::Numeric("non-finite LSTM state".into()));
        }
        let cache = LstmStepCache {
            z,
            c_prev: c_prev.to_vec(),
            i,
            f,
            o,
            g,
            tanh_c,
        };
        Ok((h, c, cache))
    }

    /// Gradient of `Σ_t L_t` w.r.t. the cell parameters, where `dl_dh[t]` is
    /// the direct gradient of the losses with respect to the `t`-th emitted
    /// hidden state. The recurrent paths through `h` and `c` are included.
    /// The result is flat, in `Parameterized` order.
    pub fn backward_through_time(&self, caches: &[LstmStepCache], dl_dh: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.num_params()];
        self.backward_through_time_into(caches, dl_dh, &mut grad)?;
        Ok(grad)
    }

    pub fn backward_through_time_into(
        &self,
        caches: &[LstmStepCache],
        dl_dh: &[Vec<f64>],
        grad: &mut [f64],
    ) -> Result<()> {
        if caches.len() != dl_dh.len() {
            return Err(Error::State(format!(
                "BPTT over {} cached steps but {} upstream gradients",
                caches.len(),
                dl_dh.len()
            )));
        }
        check_dim("LstmCell::backward grad buffer", self.num_params(), grad.len())?;
        let n = self.hidden;
        let zdim = self.hidden + self.input;
        let wsize = n * zdim;
        let mut dh_next = vec![0.0; n];
        let mut dc_next = vec![0.0; n];
        for (cache, ext) in caches.iter().zip(dl_dh).rev() {
            check_dim("LstmCell::backward upstream", n, ext.len())?;
            check_dim("LstmCell::backward cache", zdim, cache.z.len())?;
            let mut d_pre: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; n]);
            for k in 0..n {
                let dh = ext[k] + dh_next[k];
                let d_o = dh * cache.tanh_c[k];
                let dc = dh * cache.o[k] * (1.0 - cache.tanh_c[k] * cache.tanh_c[k]) + dc_next[k];
                let d_i = dc * cache.g[k];
                let d_g = dc * cache.i[k];
                let d_f = dc * cache.c_prev[k];
                dc_next[k] = dc * cache.f[k];
                d_pre[0][k] = d_i * cache.i[k] * (1.0 - cache.i[k]);
                d_pre[1][k] = d_f * cache.f[k] * (1.0 - cache.f[k]);
                d_pre[2][k] = d_o * cache.o[k] * (1.0 - cache.o[k]);
                d_pre[3][k] = d_g * (1.0 - cache.g[k] * cache.g[k]);
            }
            let mut dz = vec![0.0; zdim];
            for (gate, dp) in d_pre.iter().enumerate() {
                let base = gate * (wsize + n);
                let w_grad = &mut grad[base..base + wsize];
                for (r, &d) in dp.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    for (gw, &zv) in w_grad[r * zdim..(r + 1) * zdim].iter_mut().zip(&cache.z) {
                        *gw += d * zv;
                    }
                }
                for (gb, &d) in grad[base + wsize..base + wsize + n].iter_mut().zip(dp) {
                    *gb += d;
                }
                for (acc, v) in dz.iter_mut().zip(self.weights[gate].matvec_t(dp)?) {
                    *acc += v;
                }
            }
            dh_next.copy_from_slice(&dz[..n]);
        }
        if !all_finite(grad) {
            return Err(Error::Numeric("non-finite gradient in LSTM BPTT".into()));
        }
        Ok(())
    }
}

impl Parameterized for LstmCell {
    /// Per gate: weight then bias.
    fn tensors(&self) -> Vec<ParamView<'_>> {
        let mut out = Vec::with_capacity(8);
        for (k, name) in GATE_NAMES.iter().enumerate() {
            out.push(ParamView::new(
                format!("{name}.weight"),
                vec![self.hidden, self.hidden + self.input],
                self.weights[k].as_slice(),
            ));
            out.push(ParamView::new(
                format!("{name}.bias"),
                vec![self.hidden],
                &self.biases[k],
            ));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(8);
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w.as_mut_slice());
            out.push(b.as_mut_slice());
        }
        out
    }
}
