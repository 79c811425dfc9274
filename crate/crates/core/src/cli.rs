//! Command-line front end.
//!
//! Exit codes: 0 success, 2 configuration error, 3 solver or plant failure,
//! 4 infeasible problem.

use crate::dispatch::{ControllerSpec, DispatchError, MpcMode};
use crate::harness::{compare, compute_metrics, read_result, simulate, write_result, Comparison, HarnessError, MonteCarlo, Scenario, PLANT_NOTE};
use crate::optim::{QpError, SdpError};
use crate::scenario::{identify, load, ScenarioError, ScenarioFile, ScenarioSource};
use crate::windsim::PredictorFile;
use clap::{Parser, Subcommand};
use serde::Serialize;
use std::path::{Path, PathBuf};

#[derive(Debug, Parser)]
#[command(name = "wfmpc", version, about = "Wind-farm power dispatch with MPC")]
pub struct Cli {
    /// Scenario file, or `builtin:<name>` for wt10, wt3, wt3-nopred, thanet100.
    #[arg(long, global = true)]
    pub scenario: Option<String>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Seeds overriding the scenario's, e.g. `1,2,7` or `1-5`.
    #[arg(long, global = true)]
    pub seeds: Option<String>,
    /// Solver tolerance (QP optimality, SDP duality gap).
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Identify an ARMA wind predictor from the scenario's wind section.
    Identify,
    /// Simulate the scenario's controller and write signals and metrics.
    Run,
    /// Paired comparison of several controllers on the same wind seeds.
    Compare {
        /// Comma-separated: scheduler, proportional, edmpc, dmpc, smpc;
        /// an MPC entry may carry a horizon as `dmpc:3`.
        #[arg(long, default_value = "scheduler,dmpc,edmpc")]
        controllers: String,
    },
    /// Improvement over the scheduler for a range of prediction horizons.
    SweepHorizon {
        /// MPC variant; defaults to the scenario's controller if it is MPC.
        #[arg(long)]
        mode: Option<String>,
        /// Inclusive range `a-b` or a list.
        #[arg(long, default_value = "0-6")]
        horizons: String,
    },
    /// Turn a `run` output directory into plot-ready CSV files.
    Report {
        /// Directory written by `run` (one seed).
        results: PathBuf,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Solver(String),
    #[error("{0}")]
    Infeasible(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Infeasible(_) => 4,
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

fn from_dispatch(msg: String, e: &DispatchError) -> CliError {
    match e {
        DispatchError::Config(_) | DispatchError::SizeCap(_) => CliError::Config(msg),
        DispatchError::ChanceInfeasible(_) | DispatchError::Qp(QpError::Infeasible(_)) | DispatchError::Sdp(SdpError::Infeasible(_)) => {
            CliError::Infeasible(msg)
        }
        _ => CliError::Solver(msg),
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        let msg = e.to_string();
        match &e {
            HarnessError::Config(_) => CliError::Config(msg),
            HarnessError::Dispatch { source, .. } => from_dispatch(msg, source),
            HarnessError::Plant { .. } | HarnessError::Metrics(_) => CliError::Solver(msg),
            HarnessError::Io(_) => CliError::Io(msg),
        }
    }
}

/// `1,2,7`, `1-5` or a mix.
pub fn parse_list(s: &str) -> Result<Vec<u64>, CliError> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let bad = || CliError::Config(format!("cannot parse '{part}' in list '{s}'"));
        if let Some((a, b)) = part.split_once('-') {
            let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
            if a > b {
                return Err(bad());
            }
            out.extend(a..=b);
        } else {
            out.push(part.parse().map_err(|_| bad())?);
        }
    }
    if out.is_empty() {
        return Err(CliError::Config(format!("empty list '{s}'")));
    }
    Ok(out)
}

struct Loaded {
    src: ScenarioSource,
    file: ScenarioFile,
    scen: Scenario,
}

fn load_scenario(cli: &Cli) -> Result<Loaded, CliError> {
    let arg = cli.scenario.as_deref().ok_or_else(|| CliError::Config("--scenario is required".into()))?;
    let src = ScenarioSource::resolve(arg)?;
    let (file, mut scen) = load(&src)?;
    if let Some(s) = &cli.seeds {
        scen.seeds = parse_list(s)?;
    }
    if let Some(t) = cli.tol {
        if !(t > 0.0) {
            return Err(CliError::Config("--tol must be positive".into()));
        }
        scen.solver_tol = Some(t);
    }
    Ok(Loaded { src, file, scen })
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(d) = path.parent() {
        std::fs::create_dir_all(d)?;
    }
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct Meta<'a> {
    scenario: &'a str,
    source: &'a str,
    content_sha256: String,
    seeds: &'a [u64],
    plant: String,
    plant_note: &'a str,
    warmup_s: f64,
    duration_s: f64,
}

fn meta<'a>(l: &'a Loaded) -> Meta<'a> {
    Meta {
        scenario: &l.scen.name,
        source: &l.src.origin,
        content_sha256: l.src.content_hash(),
        seeds: &l.scen.seeds,
        plant: format!("{:?}", l.scen.plant),
        plant_note: PLANT_NOTE,
        warmup_s: l.scen.warmup,
        duration_s: l.scen.duration,
    }
}

fn toml_string<T: Serialize>(v: &T) -> Result<String, CliError> {
    toml::to_string(v).map_err(|e| CliError::Io(e.to_string()))
}

fn cmd_identify(cli: &Cli) -> Result<String, CliError> {
    let l = load_scenario(cli)?;
    let w = &l.file.wind;
    let profile = l.file.wind_profile(w.v_bar_ms)?;
    let (pred, red, var) = identify(&profile, w)?;
    let file = PredictorFile::from_predictor(&pred, Some(format!("identified from {} (seed {})", l.src.origin, w.identify_seed)));
    write_text(&cli.out.join("predictor.toml"), &file.to_toml())?;
    #[derive(Serialize)]
    struct Report<'a> {
        meta: Meta<'a>,
        v_bar_ms: f64,
        t_i: f64,
        order: usize,
        variance_reduction: f64,
        error_variance: f64,
        turbulence_variance: f64,
    }
    let rep = Report {
        meta: meta(&l),
        v_bar_ms: w.v_bar_ms,
        t_i: w.t_i,
        order: pred.order(),
        variance_reduction: red,
        error_variance: var,
        turbulence_variance: profile.sigma2(),
    };
    write_text(&cli.out.join("identify_report.toml"), &toml_string(&rep)?)?;
    Ok(format!("order {} predictor, variance reduction {:.1}% (error variance {:.4})\n", pred.order(), 100.0 * red, var))
}

fn cmd_run(cli: &Cli) -> Result<String, CliError> {
    let l = load_scenario(cli)?;
    let s = &l.scen;
    let runs: Vec<Result<_, HarnessError>> = {
        use rayon::prelude::*;
        s.seeds.par_iter().map(|seed| simulate(s, *seed)).collect()
    };
    let mut per_seed = Vec::new();
    let mut bal: f64 = 0.0;
    let mut tmax: f64 = 0.0;
    for r in runs {
        let r = r?;
        write_result(&r, &cli.out.join(format!("seed-{}", r.seed)))?;
        per_seed.push(compute_metrics(&r, s.turbines[0].model.params.p_rated, s.jp_norm)?);
        bal = bal.max(r.power_balance_error(s.p_dem_wf));
        tmax = r.dispatch_time.iter().cloned().fold(tmax, f64::max);
    }
    let mut mc = crate::harness::aggregate(&s.controller.label(), &s.seeds, per_seed);
    mc.balance_error = bal;
    mc.max_dispatch_time = tmax;
    #[derive(Serialize)]
    struct Report<'a> {
        meta: Meta<'a>,
        result: &'a MonteCarlo,
    }
    write_text(&cli.out.join("report.toml"), &toml_string(&Report { meta: meta(&l), result: &mc })?)?;
    Ok(format!(
        "{}: J_P {:.5}  J_Ms {:.5}  J_Mt {:.5}  J_tilde {:.5} (mean over {} seeds)\n",
        mc.label,
        mc.mean.j_p,
        mc.mean.j_ms,
        mc.mean.j_mt,
        mc.mean.j_tilde,
        s.seeds.len()
    ))
}

fn parse_controllers(file: &ScenarioFile, list: &str) -> Result<Vec<ControllerSpec>, CliError> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|c| {
            let (kind, n_h) = match c.split_once(':') {
                Some((k, h)) => (k, Some(h.parse::<usize>().map_err(|_| CliError::Config(format!("bad horizon in '{c}'")))?)),
                None => (c, None),
            };
            Ok(file.controller_spec(kind, n_h)?)
        })
        .collect()
}

fn write_comparison(l: &Loaded, out: &Path, stem: &str, c: &Comparison) -> Result<String, CliError> {
    let table = c.table();
    write_text(&out.join(format!("{stem}.txt")), &format!("# {PLANT_NOTE}\n{table}"))?;
    #[derive(Serialize)]
    struct Report<'a> {
        meta: Meta<'a>,
        comparison: &'a Comparison,
    }
    write_text(&out.join(format!("{stem}.toml")), &toml_string(&Report { meta: meta(l), comparison: c })?)?;
    Ok(table)
}

fn cmd_compare(cli: &Cli, controllers: &str) -> Result<String, CliError> {
    let l = load_scenario(cli)?;
    let specs = parse_controllers(&l.file, controllers)?;
    let c = compare(&specs, &l.scen)?;
    write_comparison(&l, &cli.out, "compare", &c)
}

/// One comparison against the scheduler per horizon.
pub fn sweep_horizon(s: &Scenario, file: &ScenarioFile, mode: &str, horizons: &[usize]) -> Result<Vec<(usize, Comparison)>, CliError> {
    let mut out = Vec::with_capacity(horizons.len());
    for &h in horizons {
        let specs = vec![ControllerSpec::Scheduler, file.controller_spec(mode, Some(h))?];
        out.push((h, compare(&specs, s)?));
    }
    Ok(out)
}

fn cmd_sweep(cli: &Cli, mode: Option<&str>, horizons: &str) -> Result<String, CliError> {
    let l = load_scenario(cli)?;
    let mode = match mode {
        Some(m) => m.to_string(),
        None => match &l.scen.controller {
            ControllerSpec::Mpc(c) => match c.mode {
                MpcMode::Edmpc => "edmpc".into(),
                MpcMode::Dmpc => "dmpc".into(),
                MpcMode::Smpc => "smpc".into(),
            },
            _ => "dmpc".into(),
        },
    };
    let hs: Vec<usize> = parse_list(horizons)?.into_iter().map(|h| h as usize).collect();
    let sweep = sweep_horizon(&l.scen, &l.file, &mode, &hs)?;
    std::fs::create_dir_all(&cli.out)?;
    let mut w = csv::Writer::from_path(cli.out.join("sweep.csv")).map_err(|e| CliError::Io(e.to_string()))?;
    let io = |e: csv::Error| CliError::Io(e.to_string());
    w.write_record(["n_h", "seed", "j_p_pct", "j_ms_pct", "j_mt_pct", "j_tilde_pct"]).map_err(io)?;
    let cell = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "n/a".into());
    let mut text = format!("{mode} improvement over scheduler (mean of {} seeds)\n{:>4}{:>12}{:>12}{:>12}{:>12}\n", l.scen.seeds.len(), "N_h", "J_P", "J_Ms", "J_Mt", "J_tilde");
    for (h, c) in &sweep {
        for (seed, imp) in l.scen.seeds.iter().zip(c.seed_improvements(1)) {
            let mut row = vec![h.to_string(), seed.to_string()];
            row.extend(imp.iter().map(|v| cell(*v)));
            w.write_record(&row).map_err(io)?;
        }
        let mean = c.improvements(1);
        let mut row = vec![h.to_string(), "mean".to_string()];
        row.extend(mean.iter().map(|v| cell(*v)));
        w.write_record(&row).map_err(io)?;
        text += &format!("{h:>4}");
        for v in mean {
            text += &match v {
                Some(p) => format!("{p:>11.2}%"),
                None => format!("{:>12}", "n/a"),
            };
        }
        text.push('\n');
    }
    w.flush()?;
    Ok(text)
}

/// Plot-ready series derived from one `run` output directory.
pub fn cmd_report_dir(results: &Path, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    if !results.is_dir() {
        return Err(CliError::Config(format!("{} is not a directory", results.display())));
    }
    let r = read_result(results)?;
    std::fs::create_dir_all(out)?;
    let n = r.n();
    let mut written = Vec::new();
    let mut emit = |name: &str, cols: Vec<String>, t: &[f64], data: Vec<Vec<f64>>| -> Result<(), CliError> {
        let path = out.join(name);
        let io = |e: csv::Error| CliError::Io(format!("{}: {e}", path.display()));
        let mut w = csv::Writer::from_path(&path).map_err(io)?;
        let mut head = vec!["t_s".to_string()];
        head.extend(cols);
        w.write_record(&head).map_err(io)?;
        for (k, tk) in t.iter().enumerate() {
            let mut row = vec![format!("{tk:.17e}")];
            row.extend(data.iter().map(|s| format!("{:.17e}", s[k])));
            w.write_record(&row).map_err(io)?;
        }
        w.flush()?;
        written.push(path);
        Ok(())
    };
    let cols = |sig: &str, unit: &str| (1..=n).map(|i| format!("{sig}_wt{i}_{unit}")).collect::<Vec<_>>();
    emit("power_demand.csv", cols("p_dem", "w"), &r.t, r.p_dem.clone())?;
    let grad: Vec<Vec<f64>> = r.p_dem.iter().map(|s| s.windows(2).map(|w| (w[1] - w[0]) / r.ts).collect()).collect();
    emit("power_demand_gradient.csv", cols("dp_dem", "w_per_s"), &r.t[1..], grad)?;
    emit("m_s.csv", cols("m_s", "nm"), &r.t, r.m_s.clone())?;
    emit("m_t.csv", cols("m_t", "nm"), &r.t, r.m_t.clone())?;
    emit("wind.csv", cols("v", "ms"), &r.t, r.v.clone())?;
    emit("farm_output.csv", vec!["p_farm_w".into()], &r.t, vec![r.farm_p.clone()])?;
    Ok(written)
}

pub fn run(cli: &Cli) -> Result<String, CliError> {
    match &cli.command {
        Command::Identify => cmd_identify(cli),
        Command::Run => cmd_run(cli),
        Command::Compare { controllers } => cmd_compare(cli, controllers),
        Command::SweepHorizon { mode, horizons } => cmd_sweep(cli, mode.as_deref(), horizons),
        Command::Report { results } => {
            let files = cmd_report_dir(results, &cli.out)?;
            Ok(files.iter().map(|p| format!("{}\n", p.display())).collect())
        }
    }
}

/// Entry point of the binary; returns the process exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lists() {
        assert_eq!(parse_list("1,2,7").unwrap(), vec![1, 2, 7]);
        assert_eq!(parse_list("1-3,9").unwrap(), vec![1, 2, 3, 9]);
        assert!(parse_list("3-1").is_err());
        assert!(parse_list("x").is_err());
    }

    #[test]
    fn cli_parses() {
        let c = Cli::try_parse_from(["wfmpc", "--scenario", "builtin:wt3", "compare", "--controllers", "scheduler,dmpc:3"]).unwrap();
        assert!(matches!(c.command, Command::Compare { .. }));
    }

    #[test]
    fn missing_scenario_is_config_error() {
        let c = Cli::try_parse_from(["wfmpc", "--scenario", "/nonexistent/x.toml", "run"]).unwrap();
        assert_eq!(run(&c).unwrap_err().exit_code(), 2);
    }
}
