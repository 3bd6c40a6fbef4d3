//! Injection weights, drift detection and the trained model artifact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::distribution::{fit_distribution, InjectionDistribution};
use super::gmm::{fit_gmm_scalar, GmmOptions};
use super::mlp::{train_mlp, MlpHyper, MlpModel, TrainReport};
use super::profiles::LoadProfiles;
use super::training::{build_training_set, TrainingSet};
use super::Channel;
use crate::error::{Error, Result};
use crate::grid::GridModel;
use crate::powerflow::{nodal_injections, SystemState};
use crate::seed;
use crate::telemetry::{Measurement, MeasurementKind, MeasurementSet, Placement, ScheduleConfig, Source};

pub const MODEL_FORMAT: &str = "acdc-se-injection-model";
pub const MODEL_VERSION: u32 = 1;

/// Smallest weight sigma handed to the estimators (p.u.).
pub const SIGMA_FLOOR: f64 = 1e-4;

/// Measurement sigma per generated injection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InjectionWeights {
    pub sigma: Vec<f64>,
}

impl InjectionWeights {
    /// Default drift threshold: five times the mean sigma.
    pub fn drift_threshold(&self) -> f64 {
        5.0 * self.sigma.iter().sum::<f64>() / self.sigma.len().max(1) as f64
    }
}

/// Two-component mixture per output over the holdout errors; the weight
/// sigma is the root of the mixture's second moment about zero (the
/// standard deviation for unbiased errors), floored at [`SIGMA_FLOOR`].
pub fn fit_error_gmm(residuals: &[Vec<f64>], seed: u64) -> Result<InjectionWeights> {
    let dim = residuals.first().map_or(0, Vec::len);
    if dim == 0 {
        return Err(Error::Validation("no residuals to weight".into()));
    }
    let sigma = (0..dim)
        .map(|d| {
            let xs: Vec<f64> = residuals.iter().map(|r| r[d]).collect();
            let m2 = if xs.len() >= 20 {
                let g = fit_gmm_scalar(&xs, 2, seed::derive(seed, d as u64), &GmmOptions::default())?.model;
                g.weights
                    .iter()
                    .enumerate()
                    .map(|(k, w)| w * (g.variances[k][0] + g.means[k][0].powi(2)))
                    .sum::<f64>()
            } else {
                xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64
            };
            Ok(m2.sqrt().max(SIGMA_FLOOR))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(InjectionWeights { sigma })
}

/// True when the mean absolute gap between the injections implied by the
/// estimated state and the model outputs exceeds `threshold` (strictly).
pub fn drift_check(estimated: &[f64], predicted: &[f64], threshold: f64) -> Result<bool> {
    if estimated.len() != predicted.len() {
        return Err(Error::Dimension(format!(
            "{} estimated injections against {} model outputs",
            estimated.len(),
            predicted.len()
        )));
    }
    if estimated.is_empty() {
        return Ok(false);
    }
    let aae = estimated.iter().zip(predicted).map(|(a, b)| (a - b).abs()).sum::<f64>() / estimated.len() as f64;
    Ok(aae > threshold)
}

/// Deterministic forward pass in p.u.
pub fn infer_injections(model: &MlpModel, z: &[f64]) -> Result<Vec<f64>> {
    model.predict(z)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub components: usize,
    pub trials: usize,
    pub hidden: Vec<usize>,
    pub hyper: MlpHyper,
    pub schedule: ScheduleConfig,
    pub gmm: GmmOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            components: 2,
            trials: 5000,
            hidden: vec![64, 64],
            hyper: MlpHyper::default(),
            schedule: ScheduleConfig::default(),
            gmm: GmmOptions::default(),
        }
    }
}

/// The trained artifact: inputs, outputs, the learned distribution (also the
/// source of pseudo-measurement baselines), the network and its weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InjectionModel {
    pub format: String,
    pub version: u32,
    pub inputs: Vec<MeasurementKind>,
    pub channels: Vec<Channel>,
    pub distribution: InjectionDistribution,
    pub mlp: MlpModel,
    pub weights: InjectionWeights,
}

/// Runs the offline chain on `profiles` with the default SCADA placement.
/// Sub-seeds: distribution 0, training set 1, network 2, error mixture 3.
pub fn train_injection_model(
    grid: &GridModel,
    profiles: &LoadProfiles,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(InjectionModel, TrainingSet, TrainReport)> {
    let dist = fit_distribution(grid, profiles, cfg.components, seed::derive(seed, 0), &cfg.gmm)?;
    let placement = Placement::default_for(grid);
    let ts = build_training_set(grid, &dist, cfg.trials, &placement, &cfg.schedule, seed::derive(seed, 1))?;
    let (mlp, report) = train_mlp(&ts.z, &ts.y, &cfg.hidden, &cfg.hyper, seed::derive(seed, 2))?;
    let weights = if report.holdout_residuals.is_empty() {
        InjectionWeights {
            sigma: vec![SIGMA_FLOOR; dist.len()],
        }
    } else {
        fit_error_gmm(&report.holdout_residuals, seed::derive(seed, 3))?
    };
    let model = InjectionModel {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        inputs: ts.inputs.clone(),
        channels: dist.channels.clone(),
        distribution: dist,
        mlp,
        weights,
    };
    Ok((model, ts, report))
}

impl InjectionModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        if m.format != MODEL_FORMAT {
            return Err(Error::Parse(format!("not an injection model (format '{}')", m.format)));
        }
        if m.version != MODEL_VERSION {
            return Err(Error::Parse(format!(
                "injection model version {} is not supported (expected {MODEL_VERSION})",
                m.version
            )));
        }
        if m.mlp.input_dim() != m.inputs.len()
            || m.mlp.output_dim() != m.channels.len()
            || m.weights.sigma.len() != m.channels.len()
            || m.distribution.len() != m.channels.len()
        {
            return Err(Error::Validation("injection model dimensions disagree".into()));
        }
        if !m.mlp.is_finite() {
            return Err(Error::Validation("injection model has non-finite parameters".into()));
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// The model input read from SCADA rows of `set`.
    pub fn input_vector(&self, set: &MeasurementSet) -> Result<Vec<f64>> {
        self.inputs
            .iter()
            .map(|k| {
                set.iter()
                    .find(|m| m.kind == *k && m.source == Source::Scada)
                    .map(|m| m.value)
                    .ok_or_else(|| Error::Validation(format!("SCADA input {k} missing")))
            })
            .collect()
    }

    pub fn infer(&self, z: &[f64]) -> Result<Vec<f64>> {
        infer_injections(&self.mlp, z)
    }

    /// Generated injections as weighted measurements.
    pub fn measurements(&self, grid: &GridModel, y: &[f64], t: f64) -> Result<Vec<Measurement>> {
        if y.len() != self.channels.len() {
            return Err(Error::Dimension(format!(
                "{} injections for {} channels",
                y.len(),
                self.channels.len()
            )));
        }
        Ok(self
            .channels
            .iter()
            .zip(y)
            .zip(&self.weights.sigma)
            .map(|((c, &v), &s)| Measurement::new(c.kind(grid), v, s, Source::Dnn, t))
            .collect())
    }

    /// Mixture means as pseudo-measurements with `σ = max(pct/100 · |mean|,
    /// floor)`: the percentage is a one-sigma uncertainty.
    pub fn pseudo_measurements(&self, grid: &GridModel, pct: f64, floor: f64, t: f64) -> Vec<Measurement> {
        self.channels
            .iter()
            .zip(self.distribution.mean())
            .map(|(c, v)| {
                let s = (pct / 100.0 * v.abs()).max(floor);
                Measurement::new(c.kind(grid), v, s, Source::Pseudo, t)
            })
            .collect()
    }

    /// Channel values implied by a state, for drift checks.
    pub fn injections_of(&self, grid: &GridModel, state: &SystemState) -> Vec<f64> {
        let (p, q) = nodal_injections(grid, state);
        self.channels
            .iter()
            .map(|c| {
                let i = grid.node_index(c.node).expect("model channels belong to the grid");
                if c.reactive {
                    q[i]
                } else {
                    p[i]
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn weights_floor_and_known_sigma() {
        let w = fit_error_gmm(&vec![vec![0.0]; 100], 0).unwrap();
        assert_eq!(w.sigma, vec![SIGMA_FLOOR]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = Normal::new(0.0, 0.005).unwrap();
        let res: Vec<Vec<f64>> = (0..2000).map(|_| vec![n.sample(&mut rng)]).collect();
        let s = fit_error_gmm(&res, 1).unwrap().sigma[0];
        assert!((s - 0.005).abs() < 0.1 * 0.005, "{s}");
        let bi: Vec<Vec<f64>> = (0..2000).map(|i| vec![if i % 2 == 0 { 0.01 } else { -0.01 }]).collect();
        let s = fit_error_gmm(&bi, 1).unwrap().sigma[0];
        assert!((s - 0.01).abs() < 1e-6, "{s}");
    }

    #[test]
    fn drift_boundary() {
        let a = [0.1, 0.2, 0.3];
        assert!(!drift_check(&a, &a, 0.01).unwrap());
        let b = [0.2, 0.3, 0.4];
        assert!(drift_check(&a, &b, 0.01).unwrap());
        // exactly at the threshold: no retrain
        let c = [0.5, 0.5];
        let d = [0.25, 0.75];
        assert!(!drift_check(&c, &d, 0.25).unwrap());
        assert!(drift_check(&a, &c, 0.1).is_err());
    }

    #[test]
    fn threshold_from_weights() {
        let w = InjectionWeights {
            sigma: vec![0.001, 0.003],
        };
        assert!((w.drift_threshold() - 0.01).abs() < 1e-15);
    }
}
