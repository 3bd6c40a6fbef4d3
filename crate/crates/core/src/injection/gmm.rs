//! Gaussian mixtures with diagonal covariances, fit by expectation
//! maximization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// Diagonal variances per component.
    pub variances: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub var_floor: f64,
}

impl Default for GmmOptions {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_iter: 500,
            var_floor: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GmmFit {
    pub model: GmmModel,
    /// Mean log-likelihood per sample after initialization and after every
    /// EM iteration.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl GmmModel {
    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    fn log_component(&self, k: usize, x: &[f64]) -> f64 {
        let mut s = self.weights[k].ln();
        for (d, &xd) in x.iter().enumerate() {
            let v = self.variances[k][d];
            s -= 0.5 * (LN_2PI + v.ln() + (xd - self.means[k][d]).powi(2) / v);
        }
        s
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        let terms: Vec<f64> = (0..self.components()).map(|k| self.log_component(k, x)).collect();
        log_sum_exp(&terms)
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim()];
        for (w, mu) in self.weights.iter().zip(&self.means) {
            for (a, b) in m.iter_mut().zip(mu) {
                *a += w * b;
            }
        }
        m
    }

    /// Per-dimension mixture variance about the mixture mean.
    pub fn variance(&self) -> Vec<f64> {
        let m = self.mean();
        (0..self.dim())
            .map(|d| {
                self.weights
                    .iter()
                    .enumerate()
                    .map(|(k, w)| w * (self.variances[k][d] + self.means[k][d].powi(2)))
                    .sum::<f64>()
                    - m[d] * m[d]
            })
            .collect()
    }

    /// Marginal CDF of dimension `d`.
    pub fn cdf(&self, d: usize, x: f64) -> f64 {
        self.weights
            .iter()
            .enumerate()
            .map(|(k, w)| {
                let s = (2.0 * self.variances[k][d]).sqrt();
                w * 0.5 * (1.0 + erf((x - self.means[k][d]) / s))
            })
            .sum()
    }

    /// Inverse of [`cdf`](Self::cdf) by bisection; `u` is clamped to (0, 1).
    pub fn quantile(&self, d: usize, u: f64) -> f64 {
        let u = u.clamp(1e-12, 1.0 - 1e-12);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for k in 0..self.components() {
            let s = self.variances[k][d].sqrt();
            lo = lo.min(self.means[k][d] - 10.0 * s);
            hi = hi.max(self.means[k][d] + 10.0 * s);
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.cdf(d, mid) < u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// One draw.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = self.components() - 1;
        for (j, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = j;
                break;
            }
        }
        (0..self.dim())
            .map(|d| {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                self.means[k][d] + self.variances[k][d].sqrt() * z
            })
            .collect()
    }
}

fn mean_log_likelihood(model: &GmmModel, samples: &[Vec<f64>]) -> f64 {
    samples.iter().map(|x| model.log_pdf(x)).sum::<f64>() / samples.len() as f64
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// k-means++ seeding of the component means.
fn seed_means(samples: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = samples.len();
    let mut centers = vec![samples[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = samples.iter().map(|x| sq_dist(x, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut j = n - 1;
            for (i, w) in d2.iter().enumerate() {
                if u < *w {
                    j = i;
                    break;
                }
                u -= w;
            }
            j
        } else {
            rng.random_range(0..n)
        };
        centers.push(samples[pick].clone());
        for (i, x) in samples.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(x, &centers[centers.len() - 1]));
        }
    }
    centers
}

/// EM fit of a `k`-component mixture.
///
/// Means start from k-means++ seeding, variances from the pooled sample
/// variance and weights from `1/k`. Iterates until the mean log-likelihood
/// per sample gains less than `opts.tol`, or `opts.max_iter` iterations.
/// Variances never drop below `opts.var_floor`; identical samples give
/// components sitting on the common value at the floor.
pub fn fit_gmm(samples: &[Vec<f64>], k: usize, seed: u64, opts: &GmmOptions) -> Result<GmmFit> {
    if k == 0 {
        return Err(Error::Validation("mixture needs at least one component".into()));
    }
    if samples.len() < 10 * k {
        return Err(Error::Validation(format!(
            "{} samples for {k} components, need at least {}",
            samples.len(),
            10 * k
        )));
    }
    let dim = samples[0].len();
    if dim == 0 || samples.iter().any(|x| x.len() != dim) {
        return Err(Error::Dimension("samples must share a positive dimension".into()));
    }
    if samples.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::Validation("non-finite sample".into()));
    }
    let n = samples.len();
    let nf = n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pooled: Vec<f64> = (0..dim)
        .map(|d| {
            let m = samples.iter().map(|x| x[d]).sum::<f64>() / nf;
            (samples.iter().map(|x| (x[d] - m).powi(2)).sum::<f64>() / nf).max(opts.var_floor)
        })
        .collect();
    let mut model = GmmModel {
        weights: vec![1.0 / k as f64; k],
        means: seed_means(samples, k, &mut rng),
        variances: vec![pooled; k],
    };
    let mut trace = vec![mean_log_likelihood(&model, samples)];
    let mut resp = vec![vec![0.0; k]; n];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        // E-step
        for (i, x) in samples.iter().enumerate() {
            let logs: Vec<f64> = (0..k).map(|j| model.log_component(j, x)).collect();
            let lse = log_sum_exp(&logs);
            for j in 0..k {
                resp[i][j] = (logs[j] - lse).exp();
            }
        }
        // M-step; a component that lost all mass keeps its parameters
        for j in 0..k {
            let nk: f64 = resp.iter().map(|r| r[j]).sum();
            if nk <= 1e-300 {
                model.weights[j] = 0.0;
                continue;
            }
            model.weights[j] = nk / nf;
            for d in 0..dim {
                let mu = resp.iter().zip(samples).map(|(r, x)| r[j] * x[d]).sum::<f64>() / nk;
                let var = resp.iter().zip(samples).map(|(r, x)| r[j] * (x[d] - mu).powi(2)).sum::<f64>() / nk;
                model.means[j][d] = mu;
                model.variances[j][d] = var.max(opts.var_floor);
            }
        }
        let ll = mean_log_likelihood(&model, samples);
        let gain = ll - trace[trace.len() - 1];
        trace.push(ll);
        if !ll.is_finite() {
            return Err(Error::Numerical(format!("mixture log-likelihood became {ll}")));
        }
        if gain < opts.tol {
            converged = true;
            break;
        }
    }
    Ok(GmmFit {
        model,
        log_likelihood: trace,
        iterations,
        converged,
    })
}

/// Convenience wrapper for scalar data.
pub fn fit_gmm_scalar(xs: &[f64], k: usize, seed: u64, opts: &GmmOptions) -> Result<GmmFit> {
    let samples: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
    fit_gmm(&samples, k, seed, opts)
}
