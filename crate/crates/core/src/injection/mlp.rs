//! Feedforward regression network: rectifier hidden layers, linear output,
//! mean-squared-error risk, mini-batch gradient descent with momentum.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    /// Input, hidden and output widths.
    pub sizes: Vec<usize>,
    /// `weights[l]` maps layer `l` to layer `l + 1` (`sizes[l+1] × sizes[l]`).
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub y_mean: Vec<f64>,
    pub y_std: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpHyper {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Fraction of rows held out for validation.
    pub holdout: f64,
}

impl Default for MlpHyper {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            batch: 32,
            epochs: 200,
            holdout: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Mean squared error on the standardized training rows after each epoch.
    pub train_loss: Vec<f64>,
    pub holdout_loss: f64,
    /// Holdout rows (indices into the training data).
    pub holdout_rows: Vec<usize>,
    /// `y − ŷ` per holdout row, in original units.
    pub holdout_residuals: Vec<Vec<f64>>,
}

impl TrainReport {
    pub fn final_train_loss(&self) -> f64 {
        self.train_loss.last().copied().unwrap_or(f64::NAN)
    }
}

/// Gradients with the same shapes as the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

fn column_stats(rows: &[Vec<f64>], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..dim).map(|d| rows.iter().map(|r| r[d]).sum::<f64>() / n).collect();
    let std = (0..dim)
        .map(|d| {
            let v = rows.iter().map(|r| (r[d] - mean[d]).powi(2)).sum::<f64>() / n;
            // constant columns pass through unscaled
            if v.sqrt() > 1e-12 {
                v.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    (mean, std)
}

impl MlpModel {
    /// He-initialized hidden layers and a zero output layer, so an
    /// untrained model predicts the training mean.
    pub fn new(sizes: &[usize], seed: u64) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Validation(format!("invalid layer sizes {sizes:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = sizes.len() - 2;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..sizes.len() - 1 {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let w = if l == last {
                DMatrix::zeros(fan_out, fan_in)
            } else {
                let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                DMatrix::from_fn(fan_out, fan_in, |_, _| dist.sample(&mut rng))
            };
            weights.push(w);
            biases.push(DVector::zeros(fan_out));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            weights,
            biases,
            x_mean: vec![0.0; sizes[0]],
            x_std: vec![1.0; sizes[0]],
            y_mean: vec![0.0; sizes[sizes.len() - 1]],
            y_std: vec![1.0; sizes[sizes.len() - 1]],
        })
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        self.sizes[self.sizes.len() - 1]
    }

    /// Forward pass on standardized inputs (one column per sample). Returns
    /// the activations of every layer, input first.
    fn forward_std(&self, x: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let mut acts = vec![x.clone()];
        for l in 0..self.weights.len() {
            let mut a = &self.weights[l] * &acts[l];
            for mut col in a.column_iter_mut() {
                col += &self.biases[l];
            }
            if l + 1 < self.weights.len() {
                a.apply(|v| *v = v.max(0.0));
            }
            acts.push(a);
        }
        acts
    }

    /// Mean squared error over all entries of a standardized batch and its
    /// gradient by backpropagation.
    pub fn loss_and_gradient(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> (f64, Gradients) {
        let acts = self.forward_std(x);
        let out = &acts[acts.len() - 1];
        let count = (y.nrows() * y.ncols()) as f64;
        let diff = out - y;
        let loss = diff.norm_squared() / count;
        let mut delta = diff * (2.0 / count);
        let nl = self.weights.len();
        let mut gw = vec![DMatrix::zeros(0, 0); nl];
        let mut gb = vec![DVector::zeros(0); nl];
        for l in (0..nl).rev() {
            gw[l] = &delta * acts[l].transpose();
            gb[l] = delta.column_sum();
            if l > 0 {
                let mut back = self.weights[l].transpose() * &delta;
                back.zip_apply(&acts[l], |b, a| {
                    if a <= 0.0 {
                        *b = 0.0
                    }
                });
                delta = back;
            }
        }
        (loss, Gradients { weights: gw, biases: gb })
    }

    /// Prediction in original units.
    pub fn predict(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "model expects {} inputs, got {}",
                self.input_dim(),
                z.len()
            )));
        }
        let x = DMatrix::from_fn(z.len(), 1, |d, _| (z[d] - self.x_mean[d]) / self.x_std[d]);
        let acts = self.forward_std(&x);
        let out = &acts[acts.len() - 1];
        Ok((0..self.output_dim())
            .map(|k| out[(k, 0)] * self.y_std[k] + self.y_mean[k])
            .collect())
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

impl Gradients {
    /// Every entry, layer by layer, weights (column-major) before biases.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b.as_slice());
        }
        out
    }
}

impl MlpModel {
    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Adds `h` to parameter `k` in [`Gradients::flatten`] order.
    pub fn nudge_param(&mut self, k: usize, h: f64) {
        let mut k = k;
        for l in 0..self.weights.len() {
            let nw = self.weights[l].len();
            if k < nw {
                self.weights[l].as_mut_slice()[k] += h;
                return;
            }
            k -= nw;
            let nb = self.biases[l].len();
            if k < nb {
                self.biases[l][k] += h;
                return;
            }
            k -= nb;
        }
        panic!("parameter index out of range");
    }
}

/// Largest relative gap between backpropagated and central-difference
/// gradients of the batch loss (gaps are scaled by `max(|g|, |fd|, 1e-3)`).
pub fn gradient_check(model: &MlpModel, x: &DMatrix<f64>, y: &DMatrix<f64>, h: f64) -> f64 {
    let g = model.loss_and_gradient(x, y).1.flatten();
    let mut worst: f64 = 0.0;
    for (k, gk) in g.iter().enumerate() {
        let mut a = model.clone();
        a.nudge_param(k, h);
        let mut b = model.clone();
        b.nudge_param(k, -h);
        let fd = (a.loss_and_gradient(x, y).0 - b.loss_and_gradient(x, y).0) / (2.0 * h);
        worst = worst.max((gk - fd).abs() / gk.abs().max(fd.abs()).max(1e-3));
    }
    worst
}

fn batch_matrices(model: &MlpModel, zs: &[Vec<f64>], ys: &[Vec<f64>], rows: &[usize]) -> (DMatrix<f64>, DMatrix<f64>) {
    let x = DMatrix::from_fn(model.input_dim(), rows.len(), |d, c| {
        (zs[rows[c]][d] - model.x_mean[d]) / model.x_std[d]
    });
    let y = DMatrix::from_fn(model.output_dim(), rows.len(), |d, c| {
        (ys[rows[c]][d] - model.y_mean[d]) / model.y_std[d]
    });
    (x, y)
}

/// Trains a network mapping `zs` to `ys`.
///
/// Rows are shuffled from `seed`; the last `hyper.holdout` fraction is held
/// out. Standardization constants come from the training rows. Zero epochs
/// leave the untrained model, which predicts the training mean of `y`.
pub fn train_mlp(
    zs: &[Vec<f64>],
    ys: &[Vec<f64>],
    hidden: &[usize],
    hyper: &MlpHyper,
    seed: u64,
) -> Result<(MlpModel, TrainReport)> {
    if zs.is_empty() || zs.len() != ys.len() {
        return Err(Error::Validation(format!(
            "training data has {} inputs and {} targets",
            zs.len(),
            ys.len()
        )));
    }
    let (din, dout) = (zs[0].len(), ys[0].len());
    if zs.iter().any(|z| z.len() != din) || ys.iter().any(|y| y.len() != dout) {
        return Err(Error::Dimension("ragged training rows".into()));
    }
    if !(0.0..1.0).contains(&hyper.holdout) || hyper.batch == 0 || !(hyper.learning_rate > 0.0) {
        return Err(Error::Validation(format!("invalid hyperparameters {hyper:?}")));
    }
    let mut sizes = vec![din];
    sizes.extend_from_slice(hidden);
    sizes.push(dout);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = MlpModel::new(&sizes, rand::Rng::random(&mut rng))?;

    let mut order: Vec<usize> = (0..zs.len()).collect();
    order.shuffle(&mut rng);
    let n_hold = if zs.len() > 1 {
        ((zs.len() as f64 * hyper.holdout).round() as usize).min(zs.len() - 1)
    } else {
        0
    };
    let (train, hold) = order.split_at(zs.len() - n_hold);
    let mut train = train.to_vec();
    let hold = hold.to_vec();
    let tz: Vec<Vec<f64>> = train.iter().map(|&i| zs[i].clone()).collect();
    let ty: Vec<Vec<f64>> = train.iter().map(|&i| ys[i].clone()).collect();
    (model.x_mean, model.x_std) = column_stats(&tz, din);
    (model.y_mean, model.y_std) = column_stats(&ty, dout);

    let mut vel_w: Vec<DMatrix<f64>> = model.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect();
    let mut vel_b: Vec<DVector<f64>> = model.biases.iter().map(|b| DVector::zeros(b.len())).collect();
    let mut train_loss = Vec::with_capacity(hyper.epochs);
    for epoch in 0..hyper.epochs {
        train.shuffle(&mut rng);
        for chunk in train.chunks(hyper.batch) {
            let (x, y) = batch_matrices(&model, zs, ys, chunk);
            let (loss, g) = model.loss_and_gradient(&x, &y);
            if !loss.is_finite() {
                return Err(Error::Numerical(format!("non-finite training loss at epoch {epoch}")));
            }
            for l in 0..model.weights.len() {
                vel_w[l] = &vel_w[l] * hyper.momentum - &g.weights[l] * hyper.learning_rate;
                vel_b[l] = &vel_b[l] * hyper.momentum - &g.biases[l] * hyper.learning_rate;
                model.weights[l] += &vel_w[l];
                model.biases[l] += &vel_b[l];
            }
        }
        let (x, y) = batch_matrices(&model, zs, ys, &train);
        let loss = model.loss_and_gradient(&x, &y).0;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("non-finite training loss at epoch {epoch}")));
        }
        train_loss.push(loss);
    }

    let (holdout_loss, holdout_residuals) = if hold.is_empty() {
        (f64::NAN, Vec::new())
    } else {
        let (x, y) = batch_matrices(&model, zs, ys, &hold);
        let loss = model.loss_and_gradient(&x, &y).0;
        let res = hold
            .iter()
            .map(|&i| {
                let p = model.predict(&zs[i])?;
                Ok(ys[i].iter().zip(&p).map(|(a, b)| a - b).collect())
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        (loss, res)
    };
    Ok((
        model,
        TrainReport {
            train_loss,
            holdout_loss,
            holdout_rows: hold,
            holdout_residuals,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn learns_affine_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let zs: Vec<Vec<f64>> = (0..500).map(|_| vec![rng.random_range(-1.0..1.0)]).collect();
        let ys: Vec<Vec<f64>> = zs.iter().map(|z| vec![2.0 * z[0] + 1.0]).collect();
        let hyper = MlpHyper {
            epochs: 100,
            ..Default::default()
        };
        let (_, rep) = train_mlp(&zs, &ys, &[8], &hyper, 1).unwrap();
        let rmse = (rep.holdout_residuals.iter().map(|r| r[0] * r[0]).sum::<f64>()
            / rep.holdout_residuals.len() as f64)
            .sqrt();
        assert!(rmse < 1e-2, "holdout rmse {rmse}");
        assert_eq!(rep.holdout_rows.len(), 50);
    }

    #[test]
    fn zero_epochs_predict_mean() {
        let zs: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, 1.0]).collect();
        let ys: Vec<Vec<f64>> = (0..20).map(|i| vec![3.0 * i as f64]).collect();
        let hyper = MlpHyper {
            epochs: 0,
            holdout: 0.0,
            ..Default::default()
        };
        let (m, _) = train_mlp(&zs, &ys, &[4], &hyper, 0).unwrap();
        let p = m.predict(&[5.0, 1.0]).unwrap();
        assert!((p[0] - 28.5).abs() < 1e-12);
        assert!(m.predict(&[1.0]).is_err());
    }

    #[test]
    fn deterministic() {
        let zs: Vec<Vec<f64>> = (0..40).map(|i| vec![(i as f64).sin(), (i as f64).cos()]).collect();
        let ys: Vec<Vec<f64>> = zs.iter().map(|z| vec![z[0] * z[1]]).collect();
        let hyper = MlpHyper {
            epochs: 5,
            ..Default::default()
        };
        let a = train_mlp(&zs, &ys, &[6, 6], &hyper, 9).unwrap().0;
        let b = train_mlp(&zs, &ys, &[6, 6], &hyper, 9).unwrap().0;
        assert_eq!(a, b);
        let z = [0.3, -0.2];
        assert_eq!(a.predict(&z).unwrap(), a.predict(&z).unwrap());
    }

    /// Backprop against central differences on a 2-2-1 net at a random
    /// point with random parameters.
    fn random_check(seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = MlpModel::new(&[2, 2, 1], seed).unwrap();
        for l in 0..m.weights.len() {
            m.weights[l].apply(|v| *v = rng.random_range(-1.0..1.0));
            m.biases[l].apply(|v| *v = rng.random_range(-0.5..0.5));
        }
        let x = DMatrix::from_fn(2, 1, |_, _| rng.random_range(-1.0..1.0));
        let y = DMatrix::from_fn(1, 1, |_, _| rng.random_range(-1.0..1.0));
        gradient_check(&m, &x, &y, 1e-6)
    }

    #[test]
    fn backprop_matches_finite_differences() {
        for seed in 0..5 {
            let err = random_check(seed);
            assert!(err < 1e-5, "seed {seed}: relative error {err}");
        }
    }
}
