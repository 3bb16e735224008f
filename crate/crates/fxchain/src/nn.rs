//! Small neural-network building blocks on the gradient tape.
//!
//! All learnable parameters of a network live in one flat vector; the tape
//! sees a single leaf and slices per tensor, so the optimizer works on a flat
//! gradient. Hidden layers follow dense → batch norm → PReLU; training mode
//! normalizes with batch statistics while inference uses running statistics.

use crate::rng::stream_rng;
use crate::tape::{Tape, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerLayout {
    pub rows: usize,
    pub cols: usize,
    pub w: Slot,
    pub b: Slot,
    /// gamma, beta, prelu slope — present on hidden layers only.
    pub bn_gamma: Option<Slot>,
    pub bn_beta: Option<Slot>,
    pub prelu: Option<Slot>,
}

/// Multilayer perceptron ending in a sigmoid over the output dimension.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub layers: Vec<LayerLayout>,
    pub params: Vec<f64>,
    pub running_mean: Vec<Vec<f64>>,
    pub running_var: Vec<Vec<f64>>,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

/// Per-layer batch statistics captured during a training forward pass.
pub struct BatchStats {
    pub mean: Vec<Vec<f64>>,
    pub var: Vec<Vec<f64>>,
}

impl Mlp {
    /// Builds an MLP with uniform fan-in initialization from the run seed.
    /// `sizes` lists [input, hidden.., output].
    pub fn new(sizes: &[usize], seed: u64) -> Self {
        assert!(sizes.len() >= 2);
        let mut rng = stream_rng(seed, 0x4E4E);
        let mut params = Vec::new();
        let mut layers = Vec::new();
        let mut running_mean = Vec::new();
        let mut running_var = Vec::new();
        for l in 0..sizes.len() - 1 {
            let (cols, rows) = (sizes[l], sizes[l + 1]);
            let bound = 1.0 / (cols as f64).sqrt();
            let w = Slot {
                offset: params.len(),
                len: rows * cols,
            };
            params.extend((0..rows * cols).map(|_| rng.gen_range(-bound..bound)));
            let b = Slot {
                offset: params.len(),
                len: rows,
            };
            params.extend((0..rows).map(|_| rng.gen_range(-bound..bound)));
            let hidden = l + 2 < sizes.len();
            let (bn_gamma, bn_beta, prelu) = if hidden {
                let g = Slot {
                    offset: params.len(),
                    len: rows,
                };
                params.extend(std::iter::repeat(1.0).take(rows));
                let be = Slot {
                    offset: params.len(),
                    len: rows,
                };
                params.extend(std::iter::repeat(0.0).take(rows));
                let p = Slot {
                    offset: params.len(),
                    len: 1,
                };
                params.push(0.25);
                running_mean.push(vec![0.0; rows]);
                running_var.push(vec![1.0; rows]);
                (Some(g), Some(be), Some(p))
            } else {
                (None, None, None)
            };
            layers.push(LayerLayout {
                rows,
                cols,
                w,
                b,
                bn_gamma,
                bn_beta,
                prelu,
            });
        }
        Self {
            sizes: sizes.to_vec(),
            layers,
            params,
            running_mean,
            running_var,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Training-mode forward of a whole batch on the tape. Batch norm uses the
    /// batch statistics, which couples the elements; the captured statistics
    /// are returned for a later [`Mlp::update_running`] call.
    pub fn forward_batch<'t>(
        &self,
        tape: &'t Tape,
        theta: Var<'t>,
        inputs: &[Vec<f64>],
    ) -> (Vec<Var<'t>>, BatchStats) {
        assert!(!inputs.is_empty());
        let batch = inputs.len() as f64;
        let mut acts: Vec<Var<'t>> = inputs
            .iter()
            .map(|x| {
                assert_eq!(x.len(), self.input_dim());
                tape.constant(x.clone())
            })
            .collect();
        let mut stats = BatchStats {
            mean: Vec::new(),
            var: Vec::new(),
        };
        for (l, layer) in self.layers.iter().enumerate() {
            let w = theta.slice(layer.w.offset, layer.w.len);
            let b = theta.slice(layer.b.offset, layer.b.len);
            acts = acts
                .into_iter()
                .map(|x| x.dense(w, b, layer.rows, layer.cols))
                .collect();
            let hidden = l + 1 < self.layers.len();
            if hidden {
                // batch statistics
                let mut mean = acts[0];
                for a in &acts[1..] {
                    mean = mean + *a;
                }
                let mean = mean.scale(1.0 / batch);
                let mut var = (acts[0] - mean).square();
                for a in &acts[1..] {
                    var = var + (*a - mean).square();
                }
                let var = var.scale(1.0 / batch);
                stats.mean.push(mean.value().as_ref().clone());
                stats.var.push(var.value().as_ref().clone());

                let denom = (var + self.bn_eps).sqrt();
                let gamma = theta.slice(layer.bn_gamma.unwrap().offset, layer.rows);
                let beta = theta.slice(layer.bn_beta.unwrap().offset, layer.rows);
                let slope = theta.slice(layer.prelu.unwrap().offset, 1);
                acts = acts
                    .into_iter()
                    .map(|a| {
                        let normed = (a - mean) / denom;
                        let scaled = normed * gamma + beta;
                        prelu(scaled, slope)
                    })
                    .collect();
            } else {
                acts = acts.into_iter().map(|a| a.sigmoid()).collect();
            }
        }
        (acts, stats)
    }

    /// Folds batch statistics into the running estimates.
    pub fn update_running(&mut self, stats: &BatchStats) {
        for (l, (mean, var)) in stats.mean.iter().zip(&stats.var).enumerate() {
            for (r, (&m, &v)) in mean.iter().zip(var).enumerate() {
                self.running_mean[l][r] =
                    (1.0 - self.bn_momentum) * self.running_mean[l][r] + self.bn_momentum * m;
                self.running_var[l][r] =
                    (1.0 - self.bn_momentum) * self.running_var[l][r] + self.bn_momentum * v;
            }
        }
    }

    /// Inference-mode forward: running statistics, plain f64, deterministic.
    pub fn forward_eval(&self, input: &[f64]) -> Vec<f64> {
        assert_eq!(input.len(), self.input_dim());
        let mut x = input.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = vec![0.0; layer.rows];
            for r in 0..layer.rows {
                let row = &self.params[layer.w.offset + r * layer.cols
                    ..layer.w.offset + (r + 1) * layer.cols];
                z[r] = row.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>()
                    + self.params[layer.b.offset + r];
            }
            let hidden = l + 1 < self.layers.len();
            if hidden {
                let gamma = layer.bn_gamma.unwrap().offset;
                let beta = layer.bn_beta.unwrap().offset;
                let slope = self.params[layer.prelu.unwrap().offset];
                for r in 0..layer.rows {
                    let normed = (z[r] - self.running_mean[l][r])
                        / (self.running_var[l][r] + self.bn_eps).sqrt();
                    let scaled = self.params[gamma + r] * normed + self.params[beta + r];
                    z[r] = if scaled >= 0.0 { scaled } else { slope * scaled };
                }
            } else {
                for v in z.iter_mut() {
                    *v = 1.0 / (1.0 + (-*v).exp());
                }
            }
            x = z;
        }
        x
    }
}

/// PReLU with a learnable scalar slope: x for x ≥ 0, slope·x otherwise.
pub fn prelu<'t>(x: Var<'t>, slope: Var<'t>) -> Var<'t> {
    let positive = x.clamp(0.0, f64::INFINITY);
    positive + slope * (x - positive)
}

/// Adam optimizer over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn eval_forward_is_deterministic_and_in_sigmoid_range() {
        let mlp = Mlp::new(&[6, 8, 3], 42);
        let input: Vec<f64> = (0..6).map(|i| i as f64 * 0.1 - 0.2).collect();
        let a = mlp.forward_eval(&input);
        let b = mlp.forward_eval(&input);
        assert_eq!(a, b);
        assert!(a.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn batch_forward_gradients_match_finite_differences() {
        let mlp = Mlp::new(&[4, 5, 2], 7);
        let mut rng = stream_rng(3, 0);
        let inputs: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let targets: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..2).map(|_| rng.gen_range(0.1..0.9)).collect())
            .collect();

        let loss_at = |theta: &[f64]| -> f64 {
            let tape = Tape::new();
            let leaf = tape.leaf(theta.to_vec());
            let (outs, _) = mlp.forward_batch(&tape, leaf, &inputs);
            let mut total: Option<crate::tape::Var> = None;
            for (o, t) in outs.iter().zip(&targets) {
                let tv = tape.constant(t.clone());
                let term = (*o - tv).square().sum();
                total = Some(match total {
                    None => term,
                    Some(acc) => acc + term,
                });
            }
            total.unwrap().scalar()
        };

        let tape = Tape::new();
        let leaf = tape.leaf(mlp.params.clone());
        let (outs, _) = mlp.forward_batch(&tape, leaf, &inputs);
        let mut total: Option<crate::tape::Var> = None;
        for (o, t) in outs.iter().zip(&targets) {
            let tv = tape.constant(t.clone());
            let term = (*o - tv).square().sum();
            total = Some(match total {
                None => term,
                Some(acc) => acc + term,
            });
        }
        let loss = total.unwrap();
        let grads = tape.backward(loss).unwrap();
        let grad = grads.wrt(leaf);

        let mut rng = stream_rng(4, 0);
        for _ in 0..25 {
            let c = rng.gen_range(0..mlp.params.len());
            let eps = 1e-5;
            let mut hi = mlp.params.clone();
            let mut lo = mlp.params.clone();
            hi[c] += eps;
            lo[c] -= eps;
            let fd = (loss_at(&hi) - loss_at(&lo)) / (2.0 * eps);
            let denom = grad[c].abs().max(fd.abs()).max(1e-8);
            assert!(
                (grad[c] - fd).abs() / denom < 1e-3,
                "param {c}: analytic {} vs fd {fd}",
                grad[c]
            );
        }
    }

    #[test]
    fn running_stats_move_toward_batch_stats() {
        let mut mlp = Mlp::new(&[2, 3, 1], 11);
        let inputs: Vec<Vec<f64>> = vec![vec![5.0, -2.0], vec![4.0, -1.0], vec![6.0, -3.0]];
        let tape = Tape::new();
        let leaf = tape.leaf(mlp.params.clone());
        let (_, stats) = mlp.forward_batch(&tape, leaf, &inputs);
        let before = mlp.running_mean[0].clone();
        mlp.update_running(&stats);
        for r in 0..3 {
            let moved = (mlp.running_mean[0][r] - before[r]).abs();
            let gap = (stats.mean[0][r] - before[r]).abs();
            if gap > 1e-12 {
                assert!(moved > 0.0, "running mean did not move");
                assert!(moved <= gap + 1e-12);
            }
        }
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let target = [3.0, -1.5, 0.25];
        let mut params = vec![0.0; 3];
        let mut opt = Adam::new(3, 0.05);
        for _ in 0..2000 {
            let grads: Vec<f64> = params.iter().zip(&target).map(|(p, t)| 2.0 * (p - t)).collect();
            opt.step(&mut params, &grads);
        }
        for (p, t) in params.iter().zip(&target) {
            assert!((p - t).abs() < 1e-3, "{p} vs {t}");
        }
    }
}
