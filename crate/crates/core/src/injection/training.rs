//! Monte-Carlo `(z, y)` training pairs.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::distribution::InjectionDistribution;
use super::Channel;
use crate::error::{Error, Result};
use crate::grid::{GridModel, NodeId};
use crate::powerflow::{solve_powerflow, PowerFlowOptions};
use crate::seed;
use crate::telemetry::{simulate_measurements, MeasurementKind, Placement, ScheduleConfig, Source};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSet {
    /// SCADA quantities making up `z`, in order.
    pub inputs: Vec<MeasurementKind>,
    pub channels: Vec<Channel>,
    /// Master seed.
    pub seed: u64,
    /// Trial index and per-trial seed of every kept row.
    pub trials: Vec<(usize, u64)>,
    pub z: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    /// Trials dropped because the power flow failed.
    pub dropped: Vec<usize>,
}

/// SCADA values of one scenario. The injection draw uses `trial_seed`
/// directly; the measurement noise uses stream 1 under it.
pub(crate) fn trial(
    grid: &GridModel,
    dist: &InjectionDistribution,
    chol: &nalgebra::DMatrix<f64>,
    placement: &Placement,
    schedule: &ScheduleConfig,
    trial_seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
    let y = dist.sample(chol, &mut rng);
    let z = scada_vector(grid, &y, dist, placement, schedule, seed::derive(trial_seed, 1))?;
    Ok((z, y))
}

/// SCADA vector for the injections `y`, with noise drawn from `noise_seed`.
pub(crate) fn scada_vector(
    grid: &GridModel,
    y: &[f64],
    dist: &InjectionDistribution,
    placement: &Placement,
    schedule: &ScheduleConfig,
    noise_seed: u64,
) -> Result<Vec<f64>> {
    let pf = solve_powerflow(grid, &dist.profile(y), &PowerFlowOptions::default())?;
    let scada_only = Placement {
        scada: placement.scada.clone(),
        smart_meter: Vec::new(),
        zero: Vec::new(),
    };
    let set = simulate_measurements(grid, &pf.state, &scada_only, schedule, schedule.scada_period, noise_seed)?;
    Ok(set
        .iter()
        .filter(|m| m.source == Source::Scada)
        .map(|m| m.value)
        .collect())
}

/// Draws `n_trials` injection vectors, solves each with the power flow and
/// reads the SCADA channels of `placement` with noise from `schedule`.
///
/// Trial `i` uses seed `derive(seed, i)`, so rows do not depend on thread
/// scheduling. Failed power flows are dropped; more than 20 % failures is
/// an error.
pub fn build_training_set(
    grid: &GridModel,
    dist: &InjectionDistribution,
    n_trials: usize,
    placement: &Placement,
    schedule: &ScheduleConfig,
    seed: u64,
) -> Result<TrainingSet> {
    if n_trials == 0 {
        return Err(Error::Validation("training set needs at least one trial".into()));
    }
    schedule.validate()?;
    let chol = dist.cholesky()?;
    let rows: Vec<(usize, u64, Result<(Vec<f64>, Vec<f64>)>)> = (0..n_trials)
        .into_par_iter()
        .map(|i| {
            let ts = seed::derive(seed, i as u64);
            (i, ts, trial(grid, dist, &chol, placement, schedule, ts))
        })
        .collect();
    let mut out = TrainingSet {
        inputs: placement.scada.clone(),
        channels: dist.channels.clone(),
        seed,
        trials: Vec::new(),
        z: Vec::new(),
        y: Vec::new(),
        dropped: Vec::new(),
    };
    let mut first_err = None;
    for (i, ts, r) in rows {
        match r {
            Ok((z, y)) => {
                out.trials.push((i, ts));
                out.z.push(z);
                out.y.push(y);
            }
            Err(e) if e.is_validation() => return Err(e),
            Err(e) => {
                first_err.get_or_insert(e);
                out.dropped.push(i);
            }
        }
    }
    if out.dropped.len() * 5 > n_trials {
        return Err(Error::Numerical(format!(
            "{} of {n_trials} training scenarios failed to solve (first: {}); \
             the injection distribution exceeds what the grid can carry",
            out.dropped.len(),
            first_err.map(|e| e.to_string()).unwrap_or_default()
        )));
    }
    Ok(out)
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    /// `trial,seed,z:<kind>...,y:<node>:<p|q>...`
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["trial".to_string(), "seed".to_string()];
        header.extend(self.inputs.iter().map(|k| format!("z:{k}")));
        header.extend(self.channels.iter().map(|c| format!("y:{}", c.label())));
        w.write_record(&header)?;
        for (r, (i, s)) in self.trials.iter().enumerate() {
            let mut rec = vec![i.to_string(), s.to_string()];
            rec.extend(self.z[r].iter().map(f64::to_string));
            rec.extend(self.y[r].iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads [`write_csv`](Self::write_csv) output. The master seed and the
    /// dropped trials are not stored in the file and come back empty.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.get(0) != Some("trial") || header.get(1) != Some("seed") {
            return Err(Error::Parse("training set must start with trial,seed columns".into()));
        }
        let mut inputs = Vec::new();
        let mut channels = Vec::new();
        for h in header.iter().skip(2) {
            if let Some(k) = h.strip_prefix("z:") {
                if !channels.is_empty() {
                    return Err(Error::Parse("z columns must precede y columns".into()));
                }
                inputs.push(k.parse()?);
            } else if let Some(c) = h.strip_prefix("y:") {
                let (node, pq) = c.split_once(':').ok_or_else(|| Error::Parse(format!("bad column '{h}'")))?;
                let node = node.parse().map_err(|_| Error::Parse(format!("bad column '{h}'")))?;
                let reactive = match pq {
                    "p" => false,
                    "q" => true,
                    _ => return Err(Error::Parse(format!("bad column '{h}'"))),
                };
                channels.push(Channel {
                    node: NodeId(node),
                    reactive,
                });
            } else {
                return Err(Error::Parse(format!("unexpected column '{h}'")));
            }
        }
        let mut out = TrainingSet {
            inputs,
            channels,
            seed: 0,
            trials: Vec::new(),
            z: Vec::new(),
            y: Vec::new(),
            dropped: Vec::new(),
        };
        let nz = out.inputs.len();
        for rec in rdr.records() {
            let rec = rec?;
            let num = |s: &str| s.parse::<f64>().map_err(|_| Error::Parse(format!("bad number '{s}'")));
            let i = rec[0].parse().map_err(|_| Error::Parse(format!("bad trial '{}'", &rec[0])))?;
            let s = rec[1].parse().map_err(|_| Error::Parse(format!("bad seed '{}'", &rec[1])))?;
            let vals = rec.iter().skip(2).map(num).collect::<Result<Vec<f64>>>()?;
            out.trials.push((i, s));
            out.z.push(vals[..nz].to_vec());
            out.y.push(vals[nz..].to_vec());
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}
