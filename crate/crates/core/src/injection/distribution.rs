//! Joint injection distribution: mixture marginals tied by a Gaussian
//! copula.
//!
//! Injections at different nodes move together (they share the daily
//! shape), so sampling each marginal independently would produce scenarios
//! the grid never sees. The copula keeps the fitted marginals and adds the
//! rank correlation of the history.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::gmm::{fit_gmm_scalar, GmmModel, GmmOptions};
use super::profiles::LoadProfiles;
use super::{injection_channels, Channel};
use crate::error::{Error, Result};
use crate::grid::GridModel;
use crate::powerflow::InjectionProfile;
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InjectionDistribution {
    pub channels: Vec<Channel>,
    /// Scalar mixture per channel.
    pub marginals: Vec<GmmModel>,
    /// Correlation of the normal scores, row-major.
    pub correlation: Vec<Vec<f64>>,
}

fn std_normal() -> Normal {
    Normal::standard()
}

/// Fits one scalar `k`-component mixture per channel to the profile history
/// and the copula correlation of their normal scores.
pub fn fit_distribution(
    grid: &GridModel,
    profiles: &LoadProfiles,
    k: usize,
    seed: u64,
    opts: &GmmOptions,
) -> Result<InjectionDistribution> {
    let channels = injection_channels(grid);
    let series: Vec<&Vec<f64>> = channels
        .iter()
        .map(|c| {
            let k = profiles
                .nodes
                .iter()
                .position(|&n| n == c.node)
                .ok_or_else(|| Error::Validation(format!("profiles have no series for node {}", c.node)))?;
            Ok(if c.reactive { &profiles.q[k] } else { &profiles.p[k] })
        })
        .collect::<Result<_>>()?;
    let marginals = series
        .iter()
        .enumerate()
        .map(|(i, xs)| Ok(fit_gmm_scalar(xs, k, seed::derive(seed, i as u64), opts)?.model))
        .collect::<Result<Vec<_>>>()?;

    let normal = std_normal();
    let n = profiles.hours as f64;
    let scores: Vec<Vec<f64>> = series
        .iter()
        .zip(&marginals)
        .map(|(xs, g)| {
            xs.iter()
                .map(|&x| normal.inverse_cdf(g.cdf(0, x).clamp(1e-9, 1.0 - 1e-9)))
                .collect()
        })
        .collect();
    let centered: Vec<(Vec<f64>, f64)> = scores
        .iter()
        .map(|s| {
            let m = s.iter().sum::<f64>() / n;
            let c: Vec<f64> = s.iter().map(|v| v - m).collect();
            let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            (c, norm)
        })
        .collect();
    let d = channels.len();
    let mut correlation = vec![vec![0.0; d]; d];
    for a in 0..d {
        correlation[a][a] = 1.0;
        for b in 0..a {
            let (ca, na) = &centered[a];
            let (cb, nb) = &centered[b];
            // constant channels are uncorrelated with everything
            let r = if *na > 1e-12 && *nb > 1e-12 {
                ca.iter().zip(cb).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
            } else {
                0.0
            };
            correlation[a][b] = r;
            correlation[b][a] = r;
        }
    }
    Ok(InjectionDistribution {
        channels,
        marginals,
        correlation,
    })
}

impl InjectionDistribution {
    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    /// Lower Cholesky factor of the correlation, shrunk towards the identity
    /// just enough to be positive definite.
    pub fn cholesky(&self) -> Result<DMatrix<f64>> {
        let d = self.len();
        let c = DMatrix::from_fn(d, d, |i, j| self.correlation[i][j]);
        let mut eps = 0.0;
        for _ in 0..40 {
            let m = &c * (1.0 - eps) + DMatrix::identity(d, d) * eps;
            if let Some(ch) = m.cholesky() {
                return Ok(ch.l());
            }
            eps = if eps == 0.0 { 1e-10 } else { eps * 4.0 };
        }
        Err(Error::Numerical("copula correlation is not positive definite".into()))
    }

    /// One joint draw; `chol` is [`cholesky`](Self::cholesky).
    pub fn sample<R: Rng>(&self, chol: &DMatrix<f64>, rng: &mut R) -> Vec<f64> {
        let normal = std_normal();
        let e: Vec<f64> = (0..self.len()).map(|_| rng.sample(StandardNormal)).collect();
        (0..self.len())
            .map(|i| {
                let w: f64 = (0..=i).map(|j| chol[(i, j)] * e[j]).sum();
                self.marginals[i].quantile(0, normal.cdf(w))
            })
            .collect()
    }

    /// Mixture mean per channel.
    pub fn mean(&self) -> Vec<f64> {
        self.marginals.iter().map(|g| g.mean()[0]).collect()
    }

    /// Injection profile from one channel vector.
    pub fn profile(&self, y: &[f64]) -> InjectionProfile {
        let mut out = InjectionProfile::new();
        for (c, &v) in self.channels.iter().zip(y) {
            let (p, q) = out.get(c.node);
            if c.reactive {
                out.set(c.node, p, v);
            } else {
                out.set(c.node, v, q);
            }
        }
        out
    }
}
