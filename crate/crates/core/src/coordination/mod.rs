//! Distributed estimation across converter-coupled regions.
//!
//! Each region estimates its own state from its own measurements. The only
//! data that crosses a region boundary is a [`BoundaryPacket`] per
//! converter. The coordinator runs the outer loop: it hands every region the
//! latest packets from its neighbours and the current multipliers, collects
//! the new packets, measures the converter mismatch and raises each
//! converter's multiplier by `ξ·|mismatch|`.

mod cwls;
mod drse;
mod dwls;

use std::io::Write;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::EstimationResult;
use crate::grid::{ConverterId, GridModel, NodeKind, RegionId};
use crate::powerflow::SystemState;
use crate::telemetry::{ConverterSide, Measurement, MeasurementKind, MeasurementSet};

pub use cwls::{run_cwls, CwlsOptions};
pub use drse::{run_drse, WlavRegion};
pub use dwls::{run_dwls, WlsRegion};

/// Order of regional solves within one iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// AC regions solve (concurrently) against the DC packets of the previous
    /// iteration, then DC regions solve (concurrently) against the fresh AC
    /// packets. Iteration time is `max AC + max DC + algebra`.
    #[default]
    AcThenDc,
    /// Every region solves against the previous iteration's packets.
    Jacobi,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoordinationParams {
    /// Initial multiplier of every converter.
    pub lambda0: f64,
    /// Multiplier step constant.
    pub xi: f64,
    /// Boundary tolerance (p.u.).
    pub tau: f64,
    pub max_iter: usize,
    pub schedule: Schedule,
    /// Solve the regions of a phase on the rayon pool.
    pub parallel: bool,
}

impl Default for CoordinationParams {
    fn default() -> Self {
        Self {
            lambda0: 0.0,
            xi: 1.0,
            tau: 1e-4,
            max_iter: 20,
            schedule: Schedule::AcThenDc,
            parallel: true,
        }
    }
}

impl CoordinationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.xi > 0.0 && self.xi.is_finite()) {
            return Err(Error::Validation(format!("xi must be positive, got {}", self.xi)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Validation(format!("tau must be positive, got {}", self.tau)));
        }
        if self.max_iter == 0 {
            return Err(Error::Validation("max_iter must be at least 1".into()));
        }
        if !(self.lambda0 >= 0.0 && self.lambda0.is_finite()) {
            return Err(Error::Validation(format!("lambda0 must be non-negative, got {}", self.lambda0)));
        }
        Ok(())
    }
}

/// Converter quantities one region reports to its neighbour.
///
/// From the AC side: the estimated AC-side output `P_VSC`, `Q_VSC`, the loss
/// computed from them and the aux-node voltage. From the DC side: the
/// DC side's view of `P_VSC`, i.e. the drawn DC power minus the loss last
/// received from the AC side (echoed in `p_loss`), and the terminal voltage.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPacket {
    pub iteration: usize,
    pub converter: ConverterId,
    pub sender: RegionId,
    pub side: ConverterSide,
    pub p_vsc: f64,
    pub q_vsc: f64,
    pub p_loss: f64,
    pub v_pcc: f64,
}

impl BoundaryPacket {
    /// Power drawn from the DC terminal implied by this packet.
    pub fn p_dc(&self) -> f64 {
        self.p_vsc + self.p_loss
    }
}

/// What a regional solver returns for one iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionOutcome {
    pub result: EstimationResult,
    /// One packet per boundary converter, in the region's boundary order.
    pub packets: Vec<BoundaryPacket>,
    /// `|r_i|/σ_i` per own measurement (zero on exact rows).
    pub weighted_residuals: Vec<f64>,
}

/// A regional estimator. It sees only its own measurements (given at
/// construction) and, per call, the neighbour packets and multipliers of its
/// boundary converters.
pub trait RegionSolver: Send + Sync {
    fn region(&self) -> usize;

    /// `inbox[k]` and `lambda[k]` belong to the k-th boundary converter;
    /// `inbox[k]` is `None` until the neighbour has reported. `warm` is this
    /// region's own previous estimate.
    fn solve(
        &self,
        inbox: &[Option<BoundaryPacket>],
        lambda: &[f64],
        iteration: usize,
        warm: Option<&DVector<f64>>,
    ) -> Result<RegionOutcome>;
}

/// Target for the converter power row of a region given the neighbour's
/// packet, or the region's own measured converter power before one arrives.
pub(crate) fn boundary_target(
    side: ConverterSide,
    packet: Option<&BoundaryPacket>,
    converter: ConverterId,
    own: &[Measurement],
) -> f64 {
    match (packet, side) {
        // the AC side tracks the DC side's view of P_VSC
        (Some(p), ConverterSide::Ac) => p.p_vsc,
        // the DC side tracks P_VSC + loss from the AC side
        (Some(p), ConverterSide::Dc) => p.p_dc(),
        (None, side) => own
            .iter()
            .find(|m| m.kind == MeasurementKind::ConvP { converter, side })
            .map(|m| m.value)
            .unwrap_or(0.0),
    }
}

/// Per-converter record of one iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConverterTrace {
    pub iteration: usize,
    pub converter: ConverterId,
    /// AC-side `P_VSC`.
    pub p_vsc_ac: f64,
    /// DC-side view of `P_VSC`.
    pub p_vsc_dc: f64,
    pub p_loss: f64,
    /// `P_VSC,AC + P_loss − P_DC`.
    pub mismatch: f64,
    /// Multiplier used in this iteration.
    pub lambda: f64,
}

/// Wall-clock split of one iteration (seconds).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationTiming {
    pub iteration: usize,
    /// Time of each regional solve, by region index.
    pub regions: Vec<f64>,
    /// Wall time of the AC phase (the whole solve phase under Jacobi).
    pub ac_phase: f64,
    pub dc_phase: f64,
    /// Loss, mismatch and multiplier bookkeeping.
    pub algebra: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Drse,
    Dwls,
    Cwls,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Drse => "drse",
            Method::Dwls => "dwls",
            Method::Cwls => "cwls",
        }
    }
}

/// Result of a system-wide estimation.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemEstimate {
    pub method: Method,
    pub state: SystemState,
    /// Final result per region (a single entry for the centralized method).
    pub regions: Vec<EstimationResult>,
    /// `|r|/σ` per input measurement, in set order. Removed rows keep the
    /// residual they had when they were removed.
    pub weighted_residuals: Vec<f64>,
    /// Set indices of measurements rejected by the residual test.
    pub removed: Vec<usize>,
    pub trace: Vec<ConverterTrace>,
    /// Every packet delivered, in delivery order.
    pub packets: Vec<BoundaryPacket>,
    /// Final multiplier per converter.
    pub lambda: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub timings: Vec<IterationTiming>,
    pub wall_time: Duration,
}

impl SystemEstimate {
    /// `|mismatch|` per converter, per iteration.
    pub fn mismatch_history(&self) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = vec![Vec::new(); self.iterations];
        for t in &self.trace {
            out[t.iteration - 1].push(t.mismatch.abs());
        }
        out
    }

    /// Largest converter mismatch of the last iteration.
    pub fn final_mismatch(&self) -> f64 {
        self.trace
            .iter()
            .filter(|t| t.iteration == self.iterations)
            .map(|t| t.mismatch.abs())
            .fold(0.0, f64::max)
    }

    /// Boundary trace as CSV:
    /// `iteration,converter,p_vsc_ac,p_vsc_dc,p_loss,mismatch,lambda`.
    pub fn write_trace_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for t in &self.trace {
            out.serialize(t)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Delivered packets as CSV:
    /// `iteration,converter,sender,side,p_vsc,q_vsc,p_loss,v_pcc`.
    pub fn write_packets_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for p in &self.packets {
            out.serialize(p)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Measurements of each region together with their set indices.
pub(crate) fn split_by_region(grid: &GridModel, set: &MeasurementSet) -> Result<Vec<(Vec<usize>, Vec<Measurement>)>> {
    set.validate(grid)?;
    Ok(set
        .by_region(grid)?
        .into_iter()
        .map(|idx| {
            let ms = idx.iter().map(|&k| set.measurements[k]).collect();
            (idx, ms)
        })
        .collect())
}

/// Mutable loop state after the last iteration.
pub(crate) struct LoopOutcome {
    pub outcomes: Vec<RegionOutcome>,
    pub trace: Vec<ConverterTrace>,
    pub packets: Vec<BoundaryPacket>,
    pub lambda: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub timings: Vec<IterationTiming>,
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

/// The outer loop shared by the distributed estimators.
pub(crate) fn coordinate<S: RegionSolver>(
    grid: &GridModel,
    solvers: &[S],
    params: &CoordinationParams,
) -> Result<LoopOutcome> {
    params.validate()?;
    let nr = grid.regions().len();
    let nc = grid.converters().len();
    debug_assert!(solvers.iter().enumerate().all(|(k, s)| s.region() == k));
    let boundary: Vec<Vec<usize>> = (0..nr).map(|r| grid.region_converters(r)).collect();
    // latest packet from each side of each converter
    let mut from_ac: Vec<Option<BoundaryPacket>> = vec![None; nc];
    let mut from_dc: Vec<Option<BoundaryPacket>> = vec![None; nc];
    let mut lambda = vec![params.lambda0; nc];
    let mut warm: Vec<Option<DVector<f64>>> = vec![None; nr];
    let mut outcomes: Vec<Option<RegionOutcome>> = vec![None; nr];
    let mut trace = Vec::new();
    let mut packets = Vec::new();
    let mut timings = Vec::new();
    let ac_regions: Vec<usize> = (0..nr).filter(|&r| grid.region_kind(r) == NodeKind::Ac).collect();
    let dc_regions: Vec<usize> = (0..nr).filter(|&r| grid.region_kind(r) == NodeKind::Dc).collect();
    let all: Vec<usize> = (0..nr).collect();
    let phases: Vec<&[usize]> = match params.schedule {
        Schedule::AcThenDc => vec![&ac_regions, &dc_regions],
        Schedule::Jacobi => vec![&all],
    };

    let mut iteration = 0;
    let mut converged = false;
    while iteration < params.max_iter {
        iteration += 1;
        let t_iter = Instant::now();
        let mut region_time = vec![0.0; nr];
        let mut phase_time = [0.0; 2];
        let mut fresh: Vec<(usize, RegionOutcome)> = Vec::new();
        for (pi, phase) in phases.iter().enumerate() {
            let t_phase = Instant::now();
            // inboxes are read before any region of this phase reports
            let inputs: Vec<(usize, Vec<Option<BoundaryPacket>>, Vec<f64>)> = phase
                .iter()
                .map(|&r| {
                    let inbox = boundary[r]
                        .iter()
                        .map(|&ci| if grid.region_kind(r) == NodeKind::Ac { from_dc[ci] } else { from_ac[ci] })
                        .collect();
                    let lam = boundary[r].iter().map(|&ci| lambda[ci]).collect();
                    (r, inbox, lam)
                })
                .collect();
            let run = |(r, inbox, lam): &(usize, Vec<Option<BoundaryPacket>>, Vec<f64>)| {
                let t = Instant::now();
                let out = solvers[*r].solve(inbox, lam, iteration, warm[*r].as_ref());
                (out, t.elapsed())
            };
            let results: Vec<_> = if params.parallel {
                inputs.par_iter().map(run).collect()
            } else {
                inputs.iter().map(run).collect()
            };
            for ((r, inbox, _), (out, dt)) in inputs.into_iter().zip(results) {
                let out = out.map_err(|e| match e {
                    Error::Unobservable(msg) => {
                        Error::Unobservable(format!("region {}: {msg}", grid.regions()[r].id))
                    }
                    e => e,
                })?;
                region_time[r] = secs(dt);
                for p in inbox.iter().flatten() {
                    packets.push(*p);
                }
                fresh.push((r, out));
            }
            // publish this phase's packets before the next phase reads them
            for (r, out) in fresh.iter().filter(|(r, _)| phase.contains(r)) {
                for (k, p) in out.packets.iter().enumerate() {
                    let ci = boundary[*r][k];
                    match p.side {
                        ConverterSide::Ac => from_ac[ci] = Some(*p),
                        ConverterSide::Dc => from_dc[ci] = Some(*p),
                    }
                }
            }
            phase_time[pi] = secs(t_phase.elapsed());
        }
        let t_alg = Instant::now();
        for (r, out) in fresh {
            warm[r] = Some(out.result.x.clone());
            outcomes[r] = Some(out);
        }
        let mut worst: f64 = 0.0;
        for ci in 0..nc {
            let (Some(a), Some(d)) = (from_ac[ci], from_dc[ci]) else {
                return Err(Error::Numerical(format!(
                    "converter {} has no packet from both sides",
                    grid.converters()[ci].id
                )));
            };
            let mismatch = a.p_dc() - d.p_dc();
            trace.push(ConverterTrace {
                iteration,
                converter: grid.converters()[ci].id,
                p_vsc_ac: a.p_vsc,
                p_vsc_dc: d.p_vsc,
                p_loss: a.p_loss,
                mismatch,
                lambda: lambda[ci],
            });
            worst = worst.max(mismatch.abs());
            lambda[ci] += params.xi * mismatch.abs();
        }
        converged = worst <= params.tau;
        let algebra = secs(t_alg.elapsed());
        timings.push(IterationTiming {
            iteration,
            regions: region_time,
            ac_phase: phase_time[0],
            dc_phase: phase_time[1],
            algebra,
            total: secs(t_iter.elapsed()),
        });
        if converged {
            break;
        }
    }
    Ok(LoopOutcome {
        outcomes: outcomes.into_iter().map(|o| o.expect("every region solved")).collect(),
        trace,
        packets,
        lambda,
        iterations: iteration,
        converged,
        timings,
    })
}

/// Merges regional states (each authoritative on its own nodes).
pub(crate) fn merge_states(grid: &GridModel, results: &[EstimationResult]) -> SystemState {
    let mut st = SystemState::flat(grid);
    for (r, res) in results.iter().enumerate() {
        for &n in grid.region_nodes(r) {
            st.v[n] = res.state.v[n];
            st.theta[n] = res.state.theta[n];
        }
    }
    st
}

pub(crate) fn assemble(
    method: Method,
    grid: &GridModel,
    set_len: usize,
    split: &[(Vec<usize>, Vec<Measurement>)],
    lo: LoopOutcome,
    removed: Vec<usize>,
    start: Instant,
) -> SystemEstimate {
    let mut weighted = vec![0.0; set_len];
    for ((idx, _), out) in split.iter().zip(&lo.outcomes) {
        for (k, &i) in idx.iter().enumerate() {
            weighted[i] = out.weighted_residuals[k];
        }
    }
    let regions: Vec<EstimationResult> = lo.outcomes.into_iter().map(|o| o.result).collect();
    SystemEstimate {
        method,
        state: merge_states(grid, &regions),
        regions,
        weighted_residuals: weighted,
        removed,
        trace: lo.trace,
        packets: lo.packets,
        lambda: lo.lambda,
        iterations: lo.iterations,
        converged: lo.converged,
        timings: lo.timings,
        wall_time: start.elapsed(),
    }
}

#[cfg(test)]
mod tests;
