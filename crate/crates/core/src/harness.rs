//! Closed-loop simulation, fatigue metrics, Monte Carlo aggregation and
//! controller comparison.
//!
//! Two plants are available. `Linear` is the augmented farm model itself
//! driven by synthesized wind. `NonlinearStatic` integrates the static
//! aerodynamics, the lumped drivetrain, the speed filter and the PI pitch
//! loop with fixed-step RK4. Neither reproduces a dynamic wake simulator.

use crate::dispatch::{available_power_coeff, ControllerSpec, Diagnostics, DispatchError, Dispatcher};
use crate::farm::{build_farm, FarmModel};
use crate::linalg::mean_std;
use crate::linearize::{TurbineModel, WtState};
use crate::windsim::{generate_wind, PredictorSS, WindProfile};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::Instant;

/// Stated in every report produced from a simulation.
pub const PLANT_NOTE: &str = "plant is the linear augmented model or the static nonlinear turbine model; \
no dynamic wake simulator is involved, so absolute index values are not comparable to wake-aware benchmarks";

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("dispatch failed at step {step}: {source}")]
    Dispatch { step: usize, source: DispatchError },
    #[error("plant failed at step {step}: {msg}")]
    Plant { step: usize, msg: String },
    #[error("metrics: {0}")]
    Metrics(String),
    #[error("I/O: {0}")]
    Io(String),
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

impl From<csv::Error> for HarnessError {
    fn from(e: csv::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PlantKind {
    Linear,
    #[default]
    NonlinearStatic,
}

/// Normalization of the power-tracking index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum JpNorm {
    /// `(P − P_ref)² / (N P_rated)`
    #[default]
    AsPrinted,
    /// `(P − P_ref)² / (N P_rated)²`
    Squared,
}

/// One turbine of a scenario.
#[derive(Debug, Clone)]
pub struct TurbineSetup {
    pub model: TurbineModel,
    pub predictor: PredictorSS,
    pub wind: WindProfile,
    /// Added to the run seed to give this turbine's wind seed.
    pub seed_offset: u64,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub turbines: Vec<TurbineSetup>,
    /// Farm demand (W).
    pub p_dem_wf: f64,
    pub controller: ControllerSpec,
    pub plant: PlantKind,
    /// Simulated time (s), warm-up included.
    pub duration: f64,
    pub ts: f64,
    /// Initial interval excluded from the metrics (s).
    pub warmup: f64,
    /// RK4 steps per sampling period for the nonlinear plant.
    pub substeps: usize,
    pub seeds: Vec<u64>,
    pub jp_norm: JpNorm,
    /// Solver tolerance override.
    pub solver_tol: Option<f64>,
}

impl Scenario {
    pub fn n(&self) -> usize {
        self.turbines.len()
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.ts).round() as usize
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let cfg = |m: String| Err(HarnessError::Config(m));
        if self.turbines.is_empty() {
            return cfg("no turbines".into());
        }
        if !(self.ts > 0.0) || (self.ts - 1.0).abs() > 1e-12 {
            return cfg(format!("sampling time must be 1 s to match the models, got {}", self.ts));
        }
        if !(self.duration >= 60.0) || (self.duration / self.ts - (self.duration / self.ts).round()).abs() > 1e-9 {
            return cfg(format!("duration {} must be at least 60 s and a multiple of Ts", self.duration));
        }
        if !(self.warmup >= 0.0) || self.warmup + 2.0 * self.ts > self.duration {
            return cfg(format!("warm-up {} leaves fewer than two samples", self.warmup));
        }
        if self.substeps == 0 {
            return cfg("substeps must be positive".into());
        }
        if self.seeds.is_empty() {
            return cfg("no seeds".into());
        }
        let sum: f64 = self.turbines.iter().map(|t| t.model.op.p_dem0).sum();
        if (sum - self.p_dem_wf).abs() > 1e-9 * self.p_dem_wf.abs().max(1.0) {
            return cfg(format!("operating-point demands sum to {sum} W, farm demand is {} W", self.p_dem_wf));
        }
        Ok(())
    }

    pub fn farm(&self) -> Result<FarmModel, HarnessError> {
        let models: Vec<TurbineModel> = self.turbines.iter().map(|t| t.model.clone()).collect();
        let preds: Vec<PredictorSS> = self.turbines.iter().map(|t| t.predictor.clone()).collect();
        build_farm(&models, &preds).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn with_controller(&self, c: ControllerSpec) -> Self {
        Self { controller: c, ..self.clone() }
    }

    pub fn wind_seed(&self, run_seed: u64, i: usize) -> u64 {
        run_seed.wrapping_mul(1_000_003).wrapping_add(self.turbines[i].seed_offset)
    }
}

/// Per-turbine series are indexed `[turbine][step]`; all values SI.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimResult {
    pub seed: u64,
    pub ts: f64,
    pub warmup: f64,
    pub t: Vec<f64>,
    pub p_out: Vec<Vec<f64>>,
    pub p_ref: Vec<Vec<f64>>,
    pub m_s: Vec<Vec<f64>>,
    pub m_t: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub p_dem: Vec<Vec<f64>>,
    pub farm_p: Vec<f64>,
    pub diagnostics: Vec<Diagnostics>,
    /// Wall-clock time of each dispatch call (s); not part of the outputs.
    pub dispatch_time: Vec<f64>,
}

impl SimResult {
    pub fn n(&self) -> usize {
        self.p_out.len()
    }

    /// Largest relative deviation of `Σ P_dem,i` from `p_dem_wf`.
    pub fn power_balance_error(&self, p_dem_wf: f64) -> f64 {
        (0..self.t.len())
            .map(|k| {
                let s: f64 = self.p_dem.iter().map(|p| p[k]).sum();
                (s - p_dem_wf).abs() / p_dem_wf.abs().max(1.0)
            })
            .fold(0.0, f64::max)
    }
}

enum Plant<'a> {
    Linear,
    Nonlinear(Vec<(crate::linearize::NonlinearWt<'a>, WtState)>),
}

/// Run one closed loop for `seed`.
pub fn simulate(s: &Scenario, seed: u64) -> Result<SimResult, HarnessError> {
    s.validate()?;
    let model = s.farm()?;
    let n = s.n();
    let steps = s.steps();
    let avail: Vec<f64> = s.turbines.iter().map(|t| available_power_coeff(&t.model.params, &t.model.surface)).collect();
    let mut disp = Dispatcher::new(&s.controller, &model, s.p_dem_wf, &avail).map_err(|e| HarnessError::Dispatch { step: 0, source: e })?;
    if let Some(tol) = s.solver_tol {
        disp.set_tolerance(tol);
    }
    let wind: Vec<Vec<f64>> = (0..n).map(|i| generate_wind(&s.turbines[i].wind, s.duration, s.ts, s.wind_seed(seed, i)).samples).collect();

    let mut plant = match s.plant {
        PlantKind::Linear => Plant::Linear,
        PlantKind::NonlinearStatic => Plant::Nonlinear(
            s.turbines
                .iter()
                .map(|t| {
                    let p = t.model.nonlinear();
                    let x0 = p.equilibrium();
                    (p, x0)
                })
                .collect(),
        ),
    };

    let mut r = SimResult {
        seed,
        ts: s.ts,
        warmup: s.warmup,
        t: Vec::with_capacity(steps),
        p_out: vec![Vec::with_capacity(steps); n],
        p_ref: vec![Vec::with_capacity(steps); n],
        m_s: vec![Vec::with_capacity(steps); n],
        m_t: vec![Vec::with_capacity(steps); n],
        v: vec![Vec::with_capacity(steps); n],
        p_dem: vec![Vec::with_capacity(steps); n],
        farm_p: Vec::with_capacity(steps),
        diagnostics: Vec::with_capacity(steps),
        dispatch_time: Vec::with_capacity(steps),
    };
    let mut x = DVector::zeros(model.nx());
    for k in 0..steps {
        let v: Vec<f64> = (0..n).map(|i| wind[i][k]).collect();
        let d = DVector::from_iterator(n, (0..n).map(|i| v[i] - s.turbines[i].model.op.v0));
        if let Plant::Nonlinear(wts) = &plant {
            for (i, (wt, st)) in wts.iter().enumerate() {
                let o = model.offsets[i];
                x[o] = st.beta - wt.op.beta0;
                x[o + 1] = st.omega_r - wt.op.omega_r0;
                x[o + 2] = st.omega_f - wt.op.omega_g0;
            }
        }
        let t0 = Instant::now();
        let cmd = disp.dispatch(&x, &d, &v).map_err(|e| HarnessError::Dispatch { step: k, source: e })?;
        r.dispatch_time.push(t0.elapsed().as_secs_f64());
        let u = &cmd.p_dem - DVector::from_iterator(n, model.ops.iter().map(|o| o.p_dem0));
        let (x_next, y) = crate::farm::step_farm(&model, &x, &u, &d, true).map_err(|e| HarnessError::Plant { step: k, msg: e.to_string() })?;
        r.t.push(k as f64 * s.ts);
        let mut total = 0.0;
        match &mut plant {
            Plant::Linear => {
                for i in 0..n {
                    let op = &model.ops[i];
                    r.p_out[i].push(cmd.p_dem[i]);
                    r.m_t[i].push(op.m_t0 + y[2 * i]);
                    r.m_s[i].push(op.m_s0 + y[2 * i + 1]);
                    total += cmd.p_dem[i];
                }
            }
            Plant::Nonlinear(wts) => {
                for (i, (wt, st)) in wts.iter_mut().enumerate() {
                    let plant_err = |e: crate::linearize::LinearizeError| HarnessError::Plant { step: k, msg: format!("turbine {}: {e}", i + 1) };
                    let out = wt.outputs(st, cmd.p_dem[i], v[i]).map_err(plant_err)?;
                    r.p_out[i].push(out.p_out);
                    r.m_t[i].push(out.m_t);
                    r.m_s[i].push(out.m_s);
                    total += out.p_out;
                    *st = wt.advance(st, cmd.p_dem[i], v[i], s.ts, s.substeps).map_err(plant_err)?;
                    if !(st.omega_r > 0.0) || !st.omega_r.is_finite() {
                        return Err(HarnessError::Plant { step: k, msg: format!("turbine {} stalled", i + 1) });
                    }
                }
            }
        }
        for i in 0..n {
            r.p_ref[i].push(cmd.p_dem[i]);
            r.p_dem[i].push(cmd.p_dem[i]);
            r.v[i].push(v[i]);
        }
        r.farm_p.push(total);
        r.diagnostics.push(cmd.diagnostics);
        x = x_next;
    }
    Ok(r)
}

/// Dimensionless indices; `j_tilde` is their sum.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub j_p: f64,
    pub j_ms: f64,
    pub j_mt: f64,
    pub j_tilde: f64,
}

impl Metrics {
    pub fn new(j_p: f64, j_ms: f64, j_mt: f64) -> Self {
        Self { j_p, j_ms, j_mt, j_tilde: j_p + j_ms + j_mt }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.j_p, self.j_ms, self.j_mt, self.j_tilde]
    }

    pub const NAMES: [&'static str; 4] = ["J_P", "J_Ms", "J_Mt", "J_tilde"];
}

/// Indices over the samples after the warm-up. Powers enter `J_P` in MW.
pub fn compute_metrics(r: &SimResult, p_rated: f64, norm: JpNorm) -> Result<Metrics, HarnessError> {
    let start = r.t.iter().position(|t| *t >= r.warmup - 1e-9).unwrap_or(r.t.len());
    let len = r.t.len() - start;
    if len < 2 {
        return Err(HarnessError::Metrics(format!("{len} samples after warm-up, need at least 2")));
    }
    if r.n() == 0 || !(p_rated > 0.0) {
        return Err(HarnessError::Metrics("need turbines and a positive rated power".into()));
    }
    let n = r.n() as f64;
    let denom = match norm {
        JpNorm::AsPrinted => n * p_rated / 1e6,
        JpNorm::Squared => (n * p_rated / 1e6).powi(2),
    };
    let mut integral = 0.0;
    for k in start..r.t.len() {
        let e2: f64 = (0..r.n()).map(|i| ((r.p_out[i][k] - r.p_ref[i][k]) / 1e6).powi(2)).sum();
        integral += r.ts * e2 / denom;
    }
    let j_p = (integral / (len as f64 * r.ts)).sqrt();
    let std_sum = |series: &[Vec<f64>], scale: f64| -> f64 {
        series
            .iter()
            .map(|s| {
                let z: Vec<f64> = s[start..].iter().map(|v| v / scale).collect();
                mean_std(&z).1
            })
            .sum()
    };
    let j_ms = 0.2 * std_sum(&r.m_s, 2e6);
    let j_mt = 0.05 * std_sum(&r.m_t, 23e6);
    Ok(Metrics::new(j_p, j_ms, j_mt))
}

fn p_rated(s: &Scenario) -> f64 {
    s.turbines[0].model.params.p_rated
}

/// Seed-wise metrics and their mean and sample standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarlo {
    pub label: String,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<Metrics>,
    pub mean: Metrics,
    pub std: Metrics,
    /// Worst power-balance error over all runs.
    pub balance_error: f64,
    /// Slowest single dispatch call (s).
    pub max_dispatch_time: f64,
}

pub fn aggregate(label: &str, seeds: &[u64], per_seed: Vec<Metrics>) -> MonteCarlo {
    let col = |f: fn(&Metrics) -> f64| mean_std(&per_seed.iter().map(f).collect::<Vec<_>>());
    let (mp, sp) = col(|m| m.j_p);
    let (ms, ss) = col(|m| m.j_ms);
    let (mt, st) = col(|m| m.j_mt);
    let (mj, sj) = col(|m| m.j_tilde);
    MonteCarlo {
        label: label.to_string(),
        seeds: seeds.to_vec(),
        per_seed,
        mean: Metrics { j_p: mp, j_ms: ms, j_mt: mt, j_tilde: mj },
        std: Metrics { j_p: sp, j_ms: ss, j_mt: st, j_tilde: sj },
        balance_error: 0.0,
        max_dispatch_time: 0.0,
    }
}

/// Run every seed of the scenario in parallel.
pub fn monte_carlo(s: &Scenario) -> Result<MonteCarlo, HarnessError> {
    let runs: Vec<Result<SimResult, HarnessError>> = s.seeds.par_iter().map(|seed| simulate(s, *seed)).collect();
    summarize(s, &s.controller.label(), runs)
}

fn summarize(s: &Scenario, label: &str, runs: Vec<Result<SimResult, HarnessError>>) -> Result<MonteCarlo, HarnessError> {
    let mut per_seed = Vec::with_capacity(runs.len());
    let mut bal: f64 = 0.0;
    let mut dt: f64 = 0.0;
    for r in runs {
        let r = r?;
        per_seed.push(compute_metrics(&r, p_rated(s), s.jp_norm)?);
        bal = bal.max(r.power_balance_error(s.p_dem_wf));
        dt = r.dispatch_time.iter().cloned().fold(dt, f64::max);
    }
    let mut mc = aggregate(label, &s.seeds, per_seed);
    mc.balance_error = bal;
    mc.max_dispatch_time = dt;
    Ok(mc)
}

/// Percentage improvement of `value` over `base`; `None` when the base is 0.
pub fn improvement(base: f64, value: f64) -> Option<f64> {
    if base == 0.0 {
        None
    } else {
        Some((base - value) / base * 100.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<MonteCarlo>,
}

impl Comparison {
    /// Improvements of row `k`'s means versus the first row, per index.
    pub fn improvements(&self, k: usize) -> [Option<f64>; 4] {
        let b = self.rows[0].mean.as_array();
        let v = self.rows[k].mean.as_array();
        [0, 1, 2, 3].map(|j| improvement(b[j], v[j]))
    }

    /// Same, seed by seed.
    pub fn seed_improvements(&self, k: usize) -> Vec<[Option<f64>; 4]> {
        self.rows[0]
            .per_seed
            .iter()
            .zip(&self.rows[k].per_seed)
            .map(|(b, v)| {
                let (b, v) = (b.as_array(), v.as_array());
                [0, 1, 2, 3].map(|j| improvement(b[j], v[j]))
            })
            .collect()
    }

    /// Plain-text table: the first row in absolute values, the others in
    /// percent improvement.
    pub fn table(&self) -> String {
        let mut out = format!("{:<20}", "controller");
        for n in Metrics::NAMES {
            out += &format!("{n:>12}");
        }
        out.push('\n');
        for (k, row) in self.rows.iter().enumerate() {
            out += &format!("{:<20}", row.label);
            if k == 0 {
                for v in row.mean.as_array() {
                    out += &format!("{v:>12.5}");
                }
            } else {
                for v in self.improvements(k) {
                    out += &match v {
                        Some(p) => format!("{:>11.2}%", p),
                        None => format!("{:>12}", "n/a"),
                    };
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Paired comparison: every controller sees the same wind seeds.
pub fn compare(controllers: &[ControllerSpec], s: &Scenario) -> Result<Comparison, HarnessError> {
    if controllers.is_empty() {
        return Err(HarnessError::Config("no controllers to compare".into()));
    }
    let jobs: Vec<(usize, u64)> = (0..controllers.len()).flat_map(|c| s.seeds.iter().map(move |seed| (c, *seed))).collect();
    let scen: Vec<Scenario> = controllers.iter().map(|c| s.with_controller(c.clone())).collect();
    let mut results: Vec<Option<Result<SimResult, HarnessError>>> = jobs.par_iter().map(|(c, seed)| Some(simulate(&scen[*c], *seed))).collect();
    let mut rows = Vec::with_capacity(controllers.len());
    for (c, sc) in scen.iter().enumerate() {
        let runs: Vec<_> = (0..s.seeds.len()).map(|j| results[c * s.seeds.len() + j].take().expect("each run taken once")).collect();
        rows.push(summarize(sc, &controllers[c].label(), runs)?);
    }
    Ok(Comparison { rows })
}

// ---------------------------------------------------------------------------
// CSV output

/// Signal groups written by [`write_result`]: file stem, signal, unit.
pub const SIGNAL_GROUPS: [(&str, &str, &str); 6] = [
    ("p_out", "p_out", "w"),
    ("p_ref", "p_ref", "w"),
    ("p_dem", "p_dem", "w"),
    ("m_s", "m_s", "nm"),
    ("m_t", "m_t", "nm"),
    ("wind", "v", "ms"),
];

fn group<'a>(r: &'a SimResult, stem: &str) -> &'a Vec<Vec<f64>> {
    match stem {
        "p_out" => &r.p_out,
        "p_ref" => &r.p_ref,
        "p_dem" => &r.p_dem,
        "m_s" => &r.m_s,
        "m_t" => &r.m_t,
        _ => &r.v,
    }
}

fn group_mut<'a>(r: &'a mut SimResult, stem: &str) -> &'a mut Vec<Vec<f64>> {
    match stem {
        "p_out" => &mut r.p_out,
        "p_ref" => &mut r.p_ref,
        "p_dem" => &mut r.p_dem,
        "m_s" => &mut r.m_s,
        "m_t" => &mut r.m_t,
        _ => &mut r.v,
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.17e}")
}

/// One CSV per signal group plus `farm.csv` and `diagnostics.csv`.
pub fn write_result(r: &SimResult, dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    for (stem, sig, unit) in SIGNAL_GROUPS {
        let mut w = csv::Writer::from_path(dir.join(format!("{stem}.csv")))?;
        let mut head = vec!["t_s".to_string()];
        head.extend((1..=r.n()).map(|i| format!("{sig}_wt{i}_{unit}")));
        w.write_record(&head)?;
        let g = group(r, stem);
        for k in 0..r.t.len() {
            let mut row = vec![fmt(r.t[k])];
            row.extend(g.iter().map(|s| fmt(s[k])));
            w.write_record(&row)?;
        }
        w.flush()?;
    }
    let mut w = csv::Writer::from_path(dir.join("farm.csv"))?;
    w.write_record(["t_s", "p_farm_w"])?;
    for k in 0..r.t.len() {
        w.write_record([fmt(r.t[k]), fmt(r.farm_p[k])])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("diagnostics.csv"))?;
    w.write_record(["t_s", "cost", "slack_max_mw", "iterations"])?;
    for k in 0..r.t.len() {
        let d = &r.diagnostics[k];
        w.write_record([fmt(r.t[k]), fmt(d.cost), fmt(d.slack_max), d.iterations.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), HarnessError> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    let head: Vec<String> = rd.headers()?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|f| f.trim().parse::<f64>().map_err(|e| HarnessError::Io(format!("{}: {e}", path.display()))))
            .collect::<Result<Vec<_>, _>>()?;
        if row.len() != head.len() {
            return Err(HarnessError::Io(format!("{}: ragged row", path.display())));
        }
        rows.push(row);
    }
    Ok((head, rows))
}

/// Read back what [`write_result`] wrote.
pub fn read_result(dir: &Path) -> Result<SimResult, HarnessError> {
    let mut r = SimResult::default();
    for (stem, _, _) in SIGNAL_GROUPS {
        let (head, rows) = read_table(&dir.join(format!("{stem}.csv")))?;
        if head.len() < 2 {
            return Err(HarnessError::Io(format!("{stem}.csv has no turbine columns")));
        }
        if r.t.is_empty() {
            r.t = rows.iter().map(|row| row[0]).collect();
        } else if r.t.len() != rows.len() {
            return Err(HarnessError::Io(format!("{stem}.csv has {} rows, expected {}", rows.len(), r.t.len())));
        }
        *group_mut(&mut r, stem) = (1..head.len()).map(|c| rows.iter().map(|row| row[c]).collect()).collect();
    }
    if r.t.len() < 2 {
        return Err(HarnessError::Io("fewer than two samples".into()));
    }
    r.ts = r.t[1] - r.t[0];
    let (_, farm) = read_table(&dir.join("farm.csv"))?;
    r.farm_p = farm.iter().map(|row| row[1]).collect();
    Ok(r)
}
