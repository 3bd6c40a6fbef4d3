//! Monte-Carlo runs and their CSV outputs.
//!
//! Run `r` uses the seed `derive(master, r)`. Under it, stream 0 picks the
//! profile hour, stream 1 draws the measurement noise and stream 2 picks
//! the bad-data target. Every method of the scenario sees the same truth
//! and the same telemetry. Runs go to a rayon pool and are collected by run
//! index, so the worker count never changes `runs.csv`, `aggregate.csv`,
//! `trace_boundary.csv` or `fig8_node_errors.csv`. `timing.csv` holds wall
//! clock readings and is the one output that differs between repeats.

use std::io::{Read, Write};
use std::path::Path;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics, node_errors, ErrorStats, Metrics};
use super::scenario::{MethodSpec, PlacementKind, Scenario};
use super::{estimate_with, EstimateOptions};
use crate::coordination::{ConverterTrace, IterationTiming, SystemEstimate};
use crate::error::{Error, Result};
use crate::grid::{GridModel, NodeKind};
use crate::injection::{gen_load_profiles, train_injection_model, InjectionModel, LoadProfiles};
use crate::powerflow::{solve_powerflow, PowerFlowOptions, SystemState};
use crate::seed;
use crate::telemetry::{inject_bad_data, simulate_measurements, MeasurementSet, Placement};

/// Everything a scenario needs before the first run.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub scenario: Scenario,
    pub grid: GridModel,
    pub placement: Placement,
    /// Operating points.
    pub profiles: LoadProfiles,
    pub model: Option<InjectionModel>,
    pub options: EstimateOptions,
}

/// Loads the grid, generates the operating-point profiles and obtains the
/// injection model (given, loaded from `scenario.model`, or trained on the
/// history profiles) when a method needs one. Relative paths resolve
/// against `base`.
pub fn prepare(scenario: &Scenario, base: Option<&Path>, model: Option<InjectionModel>) -> Result<Prepared> {
    scenario.validate()?;
    let grid = scenario.load_grid(base)?;
    let placement = match scenario.placement {
        PlacementKind::Default => Placement::default_for(&grid),
        PlacementKind::Full => Placement::full(&grid),
    };
    let profiles = gen_load_profiles(&grid, scenario.profiles.days, &scenario.profiles.params, scenario.profiles.seed)?;
    let model = match (model, scenario.model_path(base)) {
        (Some(m), _) => Some(m),
        _ if !scenario.needs_model() => None,
        (None, Some(path)) => Some(InjectionModel::load(path)?),
        (None, None) => {
            let h = &scenario.history;
            let history = gen_load_profiles(&grid, h.days, &h.params, h.seed)?;
            Some(train_injection_model(&grid, &history, &scenario.training, seed::derive(h.seed, 1))?.0)
        }
    };
    if let Some(m) = &model {
        if m.inputs != placement.scada {
            return Err(Error::Validation(
                "injection model inputs do not match the scenario's SCADA placement".into(),
            ));
        }
    }
    let options = EstimateOptions {
        coordination: scenario.coordination,
        wls: Default::default(),
        lnr: scenario.reject_bad_data.then_some(scenario.lnr),
        pseudo_pct: scenario.pseudo_pct,
        sigma_floor: scenario.schedule.sigma_floor,
        screen_threshold: scenario.screen_threshold,
        time: scenario.time,
    };
    Ok(Prepared {
        scenario: scenario.clone(),
        grid,
        placement,
        profiles,
        model,
        options,
    })
}

/// One method in one run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub run: usize,
    pub method: MethodSpec,
    pub seed: u64,
    pub hour: usize,
    /// Failure message; `None` when the estimate exists.
    pub error: Option<String>,
    pub converged: bool,
    pub iterations: usize,
    /// Rows removed by the residual test.
    pub removed: usize,
    /// Largest `|P_VSC,AC − P_VSC,DC|` of the last iteration.
    pub boundary_gap: f64,
    /// Largest `|P_VSC + P_loss − P_DC|` of the last iteration.
    pub final_mismatch: f64,
    /// Whether a corrupted row holds the largest weighted residual; `None`
    /// without bad data.
    pub corrupted_top: Option<bool>,
    pub metrics: Metrics,
    /// `(|ΔV|, |Δθ|°)` per node index.
    pub node_errors: Vec<(f64, f64)>,
    pub trace: Vec<ConverterTrace>,
    pub timings: Vec<IterationTiming>,
    pub wall_time: Duration,
}

impl RunRecord {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }

    fn failed(run: usize, method: MethodSpec, seed: u64, hour: usize, e: &Error) -> Self {
        Self {
            run,
            method,
            seed,
            hour,
            error: Some(e.to_string()),
            converged: false,
            iterations: 0,
            removed: 0,
            boundary_gap: f64::NAN,
            final_mismatch: f64::NAN,
            corrupted_top: None,
            metrics: Metrics::default(),
            node_errors: Vec::new(),
            trace: Vec::new(),
            timings: Vec::new(),
            wall_time: Duration::ZERO,
        }
    }
}

/// Aggregate of one method: mean of per-run AAE, max of per-run MAE, over
/// the runs that produced an estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: String,
    /// Bad-data case, 0 for none.
    pub case: u8,
    pub runs: usize,
    pub failed: usize,
    pub converged_rate: f64,
    pub v_ac_aae: f64,
    pub v_ac_mae: f64,
    pub theta_ac_aae_deg: f64,
    pub theta_ac_mae_deg: f64,
    pub v_dc_aae: f64,
    pub v_dc_mae: f64,
    /// Share of runs whose largest weighted residual sits on a corrupted
    /// row; empty without bad data.
    pub corrupted_top_rate: Option<f64>,
}

impl AggregateRow {
    pub fn v_ac(&self) -> ErrorStats {
        ErrorStats {
            aae: self.v_ac_aae,
            mae: self.v_ac_mae,
        }
    }

    pub fn theta_ac_deg(&self) -> ErrorStats {
        ErrorStats {
            aae: self.theta_ac_aae_deg,
            mae: self.theta_ac_mae_deg,
        }
    }

    pub fn v_dc(&self) -> ErrorStats {
        ErrorStats {
            aae: self.v_dc_aae,
            mae: self.v_dc_mae,
        }
    }
}

/// Result of a Monte-Carlo scenario.
#[derive(Clone, Debug)]
pub struct MetricsTable {
    /// Sorted by run, then by the scenario's method order.
    pub records: Vec<RunRecord>,
    pub aggregate: Vec<AggregateRow>,
}

impl MetricsTable {
    pub fn records_of(&self, method: MethodSpec) -> impl Iterator<Item = &RunRecord> {
        self.records.iter().filter(move |r| r.method == method)
    }

    pub fn aggregate_of(&self, method: MethodSpec) -> Option<&AggregateRow> {
        let name = method.to_string();
        self.aggregate.iter().find(|a| a.method == name)
    }

    /// Median wall time of the successful runs of `method`.
    pub fn median_wall_time(&self, method: MethodSpec) -> Option<Duration> {
        let mut t: Vec<Duration> = self.records_of(method).filter(|r| r.ok()).map(|r| r.wall_time).collect();
        if t.is_empty() {
            return None;
        }
        t.sort();
        let n = t.len();
        Some(if n % 2 == 1 { t[n / 2] } else { (t[n / 2 - 1] + t[n / 2]) / 2 })
    }

    /// Writes `aggregate.csv`, `runs.csv`, `timing.csv`,
    /// `trace_boundary.csv` and `fig8_node_errors.csv` into `dir`.
    pub fn write_all(&self, grid: &GridModel, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let f = |name: &str| std::fs::File::create(dir.join(name));
        write_aggregate_csv(&self.aggregate, f("aggregate.csv")?)?;
        write_runs_csv(&self.records, f("runs.csv")?)?;
        write_timing_csv(&self.records, f("timing.csv")?)?;
        write_trace_csv(&self.records, f("trace_boundary.csv")?)?;
        write_node_errors_csv(grid, &self.records, f("fig8_node_errors.csv")?)?;
        Ok(())
    }
}

fn worker_count(scenario: &Scenario) -> Option<usize> {
    scenario.workers.or_else(|| {
        std::env::var("ACDC_SE_WORKERS")
            .ok()
            .and_then(|v| v.trim().parse().ok())
            .filter(|&n| n > 0)
    })
}

/// [`prepare`] followed by [`run_prepared`].
pub fn run_montecarlo(scenario: &Scenario, base: Option<&Path>) -> Result<MetricsTable> {
    run_prepared(&prepare(scenario, base, None)?)
}

/// Runs every method on every run. Failures are recorded per run; more than
/// 10 % failures for any method is an error.
pub fn run_prepared(p: &Prepared) -> Result<MetricsTable> {
    let sc = &p.scenario;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = worker_count(sc) {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Validation(format!("cannot start worker pool: {e}")))?;
    let per_run: Vec<Vec<RunRecord>> = pool.install(|| (0..sc.runs).into_par_iter().map(|r| one_run(p, r)).collect());
    let records: Vec<RunRecord> = per_run.into_iter().flatten().collect();
    for &m in &sc.methods {
        let failed: Vec<&RunRecord> = records.iter().filter(|r| r.method == m && !r.ok()).collect();
        if failed.len() * 10 > sc.runs {
            return Err(Error::Numerical(format!(
                "{m}: {} of {} runs failed (first, run {}: {})",
                failed.len(),
                sc.runs,
                failed[0].run,
                failed[0].error.as_deref().unwrap_or_default()
            )));
        }
    }
    let case = sc.bad_data.map_or(0, |b| b.case);
    let aggregate = recompute_aggregate(&records, &sc.methods, case);
    Ok(MetricsTable { records, aggregate })
}

fn one_run(p: &Prepared, run: usize) -> Vec<RunRecord> {
    let sc = &p.scenario;
    let rs = seed::derive(sc.seed, run as u64);
    let hour = ChaCha8Rng::seed_from_u64(seed::derive(rs, 0)).random_range(0..p.profiles.hours);
    let setup = || -> Result<(SystemState, MeasurementSet)> {
        let truth = solve_powerflow(&p.grid, &p.profiles.at(hour), &PowerFlowOptions::default())?.state;
        let mut set = simulate_measurements(&p.grid, &truth, &p.placement, &sc.schedule, sc.time, seed::derive(rs, 1))?;
        if let Some(b) = &sc.bad_data {
            set = inject_bad_data(&set, &p.grid, b.case()?, b.selector, seed::derive(rs, 2))?;
        }
        Ok((truth, set))
    };
    let (truth, set) = match setup() {
        Ok(x) => x,
        Err(e) => {
            return sc
                .methods
                .iter()
                .map(|&m| RunRecord::failed(run, m, rs, hour, &e))
                .collect()
        }
    };
    sc.methods
        .iter()
        .map(|&m| {
            let scored = estimate_with(&p.grid, &set, m, p.model.as_ref(), &p.options)
                .and_then(|est| score(p, run, m, rs, hour, &set, &truth, est));
            scored.unwrap_or_else(|e| RunRecord::failed(run, m, rs, hour, &e))
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn score(
    p: &Prepared,
    run: usize,
    method: MethodSpec,
    seed: u64,
    hour: usize,
    set: &MeasurementSet,
    truth: &SystemState,
    est: SystemEstimate,
) -> Result<RunRecord> {
    let metrics = compute_metrics(&p.grid, &est.state, truth)?;
    let errs = node_errors(&p.grid, &est.state, truth)?;
    let last = est.iterations;
    let boundary_gap = est
        .trace
        .iter()
        .filter(|t| t.iteration == last)
        .map(|t| (t.p_vsc_ac - t.p_vsc_dc).abs())
        .fold(0.0, f64::max);
    // the estimate's rows start with the telemetry rows, in order
    let corrupted_top = set.iter().any(|m| m.corrupted).then(|| {
        let top = est
            .weighted_residuals
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |b, (k, &w)| if w > b.1 { (k, w) } else { b })
            .0;
        set.measurements.get(top).is_some_and(|m| m.corrupted)
    });
    Ok(RunRecord {
        run,
        method,
        seed,
        hour,
        error: None,
        converged: est.converged,
        iterations: est.iterations,
        removed: est.removed.len(),
        boundary_gap,
        final_mismatch: est.final_mismatch(),
        corrupted_top,
        metrics,
        node_errors: errs,
        trace: est.trace,
        timings: est.timings,
        wall_time: est.wall_time,
    })
}

/// Aggregate rows from per-run records, in `methods` order.
pub fn recompute_aggregate(records: &[RunRecord], methods: &[MethodSpec], case: u8) -> Vec<AggregateRow> {
    methods
        .iter()
        .map(|&m| {
            let all: Vec<&RunRecord> = records.iter().filter(|r| r.method == m).collect();
            let ok: Vec<&RunRecord> = all.iter().copied().filter(|r| r.ok()).collect();
            let n = ok.len().max(1) as f64;
            let mean = |f: fn(&Metrics) -> ErrorStats| ok.iter().map(|r| f(&r.metrics).aae).sum::<f64>() / n;
            let max = |f: fn(&Metrics) -> ErrorStats| ok.iter().map(|r| f(&r.metrics).mae).fold(0.0, f64::max);
            let tops: Vec<bool> = ok.iter().filter_map(|r| r.corrupted_top).collect();
            AggregateRow {
                method: m.to_string(),
                case,
                runs: all.len(),
                failed: all.len() - ok.len(),
                converged_rate: ok.iter().filter(|r| r.converged).count() as f64 / all.len().max(1) as f64,
                v_ac_aae: mean(|m| m.v_ac),
                v_ac_mae: max(|m| m.v_ac),
                theta_ac_aae_deg: mean(|m| m.theta_ac_deg),
                theta_ac_mae_deg: max(|m| m.theta_ac_deg),
                v_dc_aae: mean(|m| m.v_dc),
                v_dc_mae: max(|m| m.v_dc),
                corrupted_top_rate: (!tops.is_empty())
                    .then(|| tops.iter().filter(|&&t| t).count() as f64 / tops.len() as f64),
            }
        })
        .collect()
}

pub fn write_aggregate_csv<W: Write>(rows: &[AggregateRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

const RUNS_HEADER: [&str; 18] = [
    "run",
    "method",
    "seed",
    "hour",
    "status",
    "error",
    "converged",
    "iterations",
    "removed",
    "boundary_gap",
    "final_mismatch",
    "corrupted_top",
    "v_ac_aae",
    "v_ac_mae",
    "theta_ac_aae_deg",
    "theta_ac_mae_deg",
    "v_dc_aae",
    "v_dc_mae",
];

/// One row per run and method. Floats are written in shortest round-trip
/// form, so [`read_runs_csv`] gets the exact values back.
pub fn write_runs_csv<W: Write>(records: &[RunRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(RUNS_HEADER)?;
    for r in records {
        let m = &r.metrics;
        out.write_record([
            r.run.to_string(),
            r.method.to_string(),
            r.seed.to_string(),
            r.hour.to_string(),
            if r.ok() { "ok" } else { "failed" }.to_string(),
            r.error.clone().unwrap_or_default(),
            r.converged.to_string(),
            r.iterations.to_string(),
            r.removed.to_string(),
            r.boundary_gap.to_string(),
            r.final_mismatch.to_string(),
            r.corrupted_top.map(|b| b.to_string()).unwrap_or_default(),
            m.v_ac.aae.to_string(),
            m.v_ac.mae.to_string(),
            m.theta_ac_deg.aae.to_string(),
            m.theta_ac_deg.mae.to_string(),
            m.v_dc.aae.to_string(),
            m.v_dc.mae.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Reads `runs.csv` back. Node errors, traces and timings are not part of
/// the file and come back empty.
pub fn read_runs_csv<R: Read>(r: R) -> Result<Vec<RunRecord>> {
    let mut rdr = csv::Reader::from_reader(r);
    if rdr.headers()?.iter().ne(RUNS_HEADER) {
        return Err(Error::Parse("unexpected runs.csv header".into()));
    }
    let bad = |what: &str, v: &str| Error::Parse(format!("bad {what} '{v}' in runs.csv"));
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let int = |i: usize| rec[i].parse::<u64>().map_err(|_| bad(RUNS_HEADER[i], &rec[i]));
        let num = |i: usize| rec[i].parse::<f64>().map_err(|_| bad(RUNS_HEADER[i], &rec[i]));
        let flag = |i: usize| rec[i].parse::<bool>().map_err(|_| bad(RUNS_HEADER[i], &rec[i]));
        let stats = |i: usize| -> Result<ErrorStats> {
            Ok(ErrorStats {
                aae: num(i)?,
                mae: num(i + 1)?,
            })
        };
        out.push(RunRecord {
            run: int(0)? as usize,
            method: rec[1].parse()?,
            seed: int(2)?,
            hour: int(3)? as usize,
            error: (&rec[4] != "ok").then(|| rec[5].to_string()),
            converged: flag(6)?,
            iterations: int(7)? as usize,
            removed: int(8)? as usize,
            boundary_gap: num(9)?,
            final_mismatch: num(10)?,
            corrupted_top: if rec[11].is_empty() { None } else { Some(flag(11)?) },
            metrics: Metrics {
                v_ac: stats(12)?,
                theta_ac_deg: stats(14)?,
                v_dc: stats(16)?,
            },
            node_errors: Vec::new(),
            trace: Vec::new(),
            timings: Vec::new(),
            wall_time: Duration::ZERO,
        });
    }
    Ok(out)
}

/// `run,method,iteration,total,ac_phase,dc_phase,algebra,region_0,...` in
/// seconds. Iteration 0 is the whole estimate (wall time in `total`).
pub fn write_timing_csv<W: Write>(records: &[RunRecord], w: W) -> Result<()> {
    let regions = records.iter().flat_map(|r| r.timings.iter().map(|t| t.regions.len())).max().unwrap_or(0);
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<String> = ["run", "method", "iteration", "total", "ac_phase", "dc_phase", "algebra"]
        .map(String::from)
        .to_vec();
    header.extend((0..regions).map(|k| format!("region_{k}")));
    out.write_record(&header)?;
    for r in records.iter().filter(|r| r.ok()) {
        let mut row = vec![r.run.to_string(), r.method.to_string(), "0".into(), r.wall_time.as_secs_f64().to_string()];
        row.resize(header.len(), String::new());
        out.write_record(&row)?;
        for t in &r.timings {
            let mut row = vec![
                r.run.to_string(),
                r.method.to_string(),
                t.iteration.to_string(),
                t.total.to_string(),
                t.ac_phase.to_string(),
                t.dc_phase.to_string(),
                t.algebra.to_string(),
            ];
            row.extend(t.regions.iter().map(f64::to_string));
            row.resize(header.len(), String::new());
            out.write_record(&row)?;
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct TraceRow<'a> {
    run: usize,
    method: &'a str,
    iteration: usize,
    converter: u32,
    p_vsc_ac: f64,
    p_vsc_dc: f64,
    p_loss: f64,
    mismatch: f64,
    lambda: f64,
}

/// Converter boundary trace of the distributed methods.
pub fn write_trace_csv<W: Write>(records: &[RunRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut any = false;
    for r in records {
        let method = r.method.to_string();
        for t in &r.trace {
            any = true;
            out.serialize(TraceRow {
                run: r.run,
                method: &method,
                iteration: t.iteration,
                converter: t.converter.0,
                p_vsc_ac: t.p_vsc_ac,
                p_vsc_dc: t.p_vsc_dc,
                p_loss: t.p_loss,
                mismatch: t.mismatch,
                lambda: t.lambda,
            })?;
        }
    }
    if !any {
        out.write_record([
            "run", "method", "iteration", "converter", "p_vsc_ac", "p_vsc_dc", "p_loss", "mismatch", "lambda",
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Per-node absolute errors averaged over successful runs:
/// `method,node_id,kind,v_abs_err,theta_abs_err_deg`.
pub fn write_node_errors_csv<W: Write>(grid: &GridModel, records: &[RunRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["method", "node_id", "kind", "v_abs_err", "theta_abs_err_deg"])?;
    let mut methods: Vec<MethodSpec> = Vec::new();
    for r in records {
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
    }
    for m in methods {
        let ok: Vec<&RunRecord> = records.iter().filter(|r| r.method == m && r.ok()).collect();
        if ok.is_empty() {
            continue;
        }
        for (i, node) in grid.nodes().iter().enumerate() {
            let n = ok.len() as f64;
            let v = ok.iter().map(|r| r.node_errors[i].0).sum::<f64>() / n;
            let th = ok.iter().map(|r| r.node_errors[i].1).sum::<f64>() / n;
            let kind = match node.kind {
                NodeKind::Ac => "ac",
                NodeKind::Dc => "dc",
            };
            out.write_record([m.to_string(), node.id.0.to_string(), kind.into(), v.to_string(), th.to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}
