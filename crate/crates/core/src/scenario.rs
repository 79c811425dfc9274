//! Scenario files: TOML with `farm`, `wind`, `controller`, `plant` and `run`
//! sections. Physical quantities carry their unit in the key name and
//! unknown keys are rejected.
//!
//! ```toml
//! name = "example"
//!
//! [farm]
//! n_turbines = 3
//! p_dem_wf_mw = 9.0
//!
//! [wind]
//! v_bar_ms = 12.0
//! t_i = 0.1
//! predictor = "eq45"
//!
//! [controller]
//! kind = "dmpc"
//! n_h = 2
//!
//! [run]
//! duration_s = 900.0
//! seeds = [1, 2, 3, 4, 5]
//! ```

use crate::dispatch::{ControllerSpec, MpcConfig, MpcMode};
use crate::harness::{JpNorm, PlantKind, Scenario, TurbineSetup};
use crate::linearize::{CoefficientSurface, PitchGains, TabulatedSurface, TurbineModel, TurbineParams};
use crate::windsim::{build_predictor, fixture, generate_wind, identify_arma, PredictorFile, PredictorSS, WindProfile, DEFAULT_L_V};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
    #[error("scenario schema: {0}")]
    Schema(String),
    #[error("scenario value: {0}")]
    Value(String),
    #[error("unknown canned scenario '{0}' (available: wt10, wt3, wt3-nopred, thanet100)")]
    UnknownCanned(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    #[serde(default)]
    pub description: Option<String>,
    pub farm: FarmSection,
    pub wind: WindSection,
    pub controller: ControllerSection,
    #[serde(default)]
    pub plant: PlantSection,
    #[serde(default)]
    pub run: RunSection,
}

/// Either inline or a reference to a separate TOML file with the same keys.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FarmSection {
    /// Path, relative to the scenario file, of a file holding this section.
    pub file: Option<String>,
    pub n_turbines: Option<usize>,
    pub p_dem_wf_mw: Option<f64>,
    /// Per-turbine operating wind speeds; defaults to `wind.v_bar_ms`.
    pub v0_ms: Option<Vec<f64>>,
    /// Turbine coordinates, documentation only.
    pub layout_m: Option<Vec<[f64; 2]>>,
    /// Tabulated C_P/C_T grid; the analytic surface is used otherwise.
    pub surface_file: Option<String>,
    pub pitch_zeta: Option<f64>,
    pub pitch_omega_n_rad_s: Option<f64>,
    /// Use the default PI gains instead of designing them.
    pub fixed_pitch_gains: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindSection {
    pub v_bar_ms: f64,
    pub t_i: f64,
    #[serde(default = "default_lv")]
    pub l_v_m: f64,
    /// `eq16`, `eq17`, `eq45`, `identify`, `none` or `file:<path>`.
    #[serde(default = "default_predictor")]
    pub predictor: String,
    #[serde(default = "default_identify_seed")]
    pub identify_seed: u64,
    #[serde(default = "default_train")]
    pub train_duration_s: f64,
    #[serde(default = "default_train")]
    pub validation_duration_s: f64,
    #[serde(default = "default_order")]
    pub max_na: usize,
    #[serde(default = "default_order")]
    pub max_nc: usize,
}

fn default_lv() -> f64 {
    DEFAULT_L_V
}
fn default_predictor() -> String {
    "identify".into()
}
fn default_identify_seed() -> u64 {
    7
}
fn default_train() -> f64 {
    3600.0
}
fn default_order() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    /// `scheduler`, `proportional`, `edmpc`, `dmpc` or `smpc`.
    pub kind: String,
    #[serde(default = "default_nh")]
    pub n_h: usize,
    #[serde(default = "default_r")]
    pub r_per_mw2: f64,
    /// Input weight used when the kind is `edmpc`; defaults to `r_per_mw2`.
    pub r_edmpc_per_mw2: Option<f64>,
    #[serde(default = "default_umax")]
    pub u_max_mw: f64,
    #[serde(default = "default_ptilde")]
    pub p_tilde: f64,
    pub rho_slack: Option<f64>,
}

fn default_nh() -> usize {
    2
}
fn default_r() -> f64 {
    0.06
}
fn default_umax() -> f64 {
    0.1
}
fn default_ptilde() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    #[serde(default)]
    pub kind: PlantKind,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    #[serde(default)]
    pub jp_norm: JpNorm,
}

fn default_substeps() -> usize {
    20
}

impl Default for PlantSection {
    fn default() -> Self {
        Self { kind: PlantKind::default(), substeps: default_substeps(), jp_norm: JpNorm::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    #[serde(default = "default_ts")]
    pub ts_s: f64,
    #[serde(default = "default_warmup")]
    pub warmup_s: f64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

fn default_duration() -> f64 {
    900.0
}
fn default_ts() -> f64 {
    1.0
}
fn default_warmup() -> f64 {
    30.0
}
fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3, 4, 5]
}

impl Default for RunSection {
    fn default() -> Self {
        Self { duration_s: default_duration(), ts_s: default_ts(), warmup_s: default_warmup(), seeds: default_seeds() }
    }
}

pub const CANNED: [(&str, &str); 4] = [
    ("wt10", include_str!("../scenarios/wt10.toml")),
    ("wt3", include_str!("../scenarios/wt3.toml")),
    ("wt3-nopred", include_str!("../scenarios/wt3-nopred.toml")),
    ("thanet100", include_str!("../scenarios/thanet100.toml")),
];

pub fn canned(name: &str) -> Result<&'static str, ScenarioError> {
    CANNED.iter().find(|(n, _)| *n == name).map(|(_, t)| *t).ok_or_else(|| ScenarioError::UnknownCanned(name.to_string()))
}

/// Scenario text plus where relative paths resolve from.
#[derive(Debug, Clone)]
pub struct ScenarioSource {
    pub text: String,
    pub base_dir: PathBuf,
    pub origin: String,
}

impl ScenarioSource {
    /// `builtin:<name>` selects a canned scenario, anything else is a path.
    pub fn resolve(arg: &str) -> Result<Self, ScenarioError> {
        if let Some(name) = arg.strip_prefix("builtin:") {
            return Ok(Self { text: canned(name)?.to_string(), base_dir: PathBuf::from("."), origin: arg.to_string() });
        }
        let path = Path::new(arg);
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io { path: arg.to_string(), msg: e.to_string() })?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
        Ok(Self { text, base_dir, origin: arg.to_string() })
    }

    /// SHA-256 over `blob <len>\0<text>`, the way git frames object content.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("blob {}\0", self.text.len()).as_bytes());
        h.update(self.text.as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn parse(text: &str) -> Result<ScenarioFile, ScenarioError> {
    toml::from_str(text).map_err(|e| ScenarioError::Schema(e.to_string()))
}

fn read_rel(base: &Path, rel: &str) -> Result<String, ScenarioError> {
    let p = base.join(rel);
    std::fs::read_to_string(&p).map_err(|e| ScenarioError::Io { path: p.display().to_string(), msg: e.to_string() })
}

impl ScenarioFile {
    /// Replace a `farm.file` reference by the referenced section.
    pub fn resolve_farm(&mut self, base: &Path) -> Result<(), ScenarioError> {
        if let Some(f) = self.farm.file.clone() {
            let text = read_rel(base, &f)?;
            let farm: FarmSection = toml::from_str(&text).map_err(|e| ScenarioError::Schema(format!("{f}: {e}")))?;
            if farm.file.is_some() {
                return Err(ScenarioError::Schema(format!("{f}: nested farm file references are not allowed")));
            }
            self.farm = farm;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Value(m));
        let n = self.farm.n_turbines.ok_or_else(|| ScenarioError::Schema("farm.n_turbines is required".into()))?;
        let p = self.farm.p_dem_wf_mw.ok_or_else(|| ScenarioError::Schema("farm.p_dem_wf_mw is required".into()))?;
        if n == 0 {
            return bad("farm.n_turbines must be positive".into());
        }
        if !(p > 0.0) {
            return bad("farm.p_dem_wf_mw must be positive".into());
        }
        if let Some(v) = &self.farm.v0_ms {
            if v.len() != n {
                return bad(format!("farm.v0_ms has {} entries for {n} turbines", v.len()));
            }
        }
        if let Some(l) = &self.farm.layout_m {
            if l.len() != n {
                return bad(format!("farm.layout_m has {} entries for {n} turbines", l.len()));
            }
        }
        if !(self.wind.v_bar_ms > 0.0) || !(0.0..1.0).contains(&self.wind.t_i) || !(self.wind.l_v_m > 0.0) {
            return bad("wind: need v_bar_ms > 0, 0 <= t_i < 1 and l_v_m > 0".into());
        }
        let c = &self.controller;
        if !["scheduler", "proportional", "edmpc", "dmpc", "smpc"].contains(&c.kind.as_str()) {
            return bad(format!("controller.kind '{}' is not one of scheduler, proportional, edmpc, dmpc, smpc", c.kind));
        }
        if !(c.r_per_mw2 > 0.0) || c.r_edmpc_per_mw2.is_some_and(|r| !(r > 0.0)) || !(c.u_max_mw > 0.0) {
            return bad("controller: weights and u_max_mw must be positive".into());
        }
        if !(c.p_tilde > 0.0 && c.p_tilde < 0.5) {
            return bad(format!("controller.p_tilde {} outside (0, 0.5)", c.p_tilde));
        }
        let r = &self.run;
        if (r.ts_s - 1.0).abs() > 1e-12 {
            return bad(format!("run.ts_s must be 1 (models are sampled at 1 s), got {}", r.ts_s));
        }
        if !(r.duration_s >= 60.0) || r.duration_s.fract() != 0.0 {
            return bad(format!("run.duration_s {} must be a whole number of seconds, at least 60", r.duration_s));
        }
        if !(r.warmup_s >= 0.0) || r.warmup_s + 2.0 > r.duration_s {
            return bad("run.warmup_s must leave at least two samples".into());
        }
        if r.seeds.is_empty() {
            return bad("run.seeds is empty".into());
        }
        if self.plant.substeps == 0 {
            return bad("plant.substeps must be positive".into());
        }
        Ok(())
    }

    pub fn wind_profile(&self, v_bar: f64) -> Result<WindProfile, ScenarioError> {
        WindProfile::new(v_bar, self.wind.t_i, self.wind.l_v_m).map_err(|e| ScenarioError::Value(e.to_string()))
    }

    /// The predictor named in `wind.predictor`, for mean speed `v_bar`.
    pub fn predictor(&self, base: &Path, v_bar: f64) -> Result<PredictorSS, ScenarioError> {
        let w = &self.wind;
        let val = |e: crate::windsim::WindError| ScenarioError::Value(e.to_string());
        match w.predictor.as_str() {
            "none" => {
                let prof = self.wind_profile(v_bar)?;
                Ok(PredictorSS::none(prof.sigma2().max(1e-12), v_bar))
            }
            "identify" => Ok(identify(&self.wind_profile(v_bar)?, w)?.0),
            s if s.starts_with("file:") => {
                let text = read_rel(base, &s[5..])?;
                PredictorFile::from_toml(&text).and_then(|f| f.to_predictor()).map_err(val)
            }
            name => fixture(name).map_err(val),
        }
    }

    /// Controller spec for `kind` using this section's weights.
    pub fn controller_spec(&self, kind: &str, n_h: Option<usize>) -> Result<ControllerSpec, ScenarioError> {
        let c = &self.controller;
        let n = self.farm.n_turbines.unwrap_or(0);
        let mode = match kind {
            "scheduler" => return Ok(ControllerSpec::Scheduler),
            "proportional" => return Ok(ControllerSpec::Proportional),
            "edmpc" => MpcMode::Edmpc,
            "dmpc" => MpcMode::Dmpc,
            "smpc" => MpcMode::Smpc,
            other => return Err(ScenarioError::Value(format!("unknown controller '{other}'"))),
        };
        let r = if mode == MpcMode::Edmpc { c.r_edmpc_per_mw2.unwrap_or(c.r_per_mw2) } else { c.r_per_mw2 };
        let mut cfg = MpcConfig::new(mode, n_h.unwrap_or(c.n_h), vec![r; n], c.u_max_mw * 1e6);
        cfg.p_tilde = c.p_tilde;
        cfg.rho_slack = c.rho_slack;
        Ok(ControllerSpec::Mpc(cfg))
    }

    /// Build the runnable scenario. Expects `resolve_farm` to have run.
    pub fn build(&self, base: &Path) -> Result<Scenario, ScenarioError> {
        self.validate()?;
        let n = self.farm.n_turbines.expect("validated");
        let p_wf = self.farm.p_dem_wf_mw.expect("validated") * 1e6;
        let surface = match &self.farm.surface_file {
            Some(f) => CoefficientSurface::Tabulated(TabulatedSurface::parse(&read_rel(base, f)?).map_err(|e| ScenarioError::Value(format!("{f}: {e}")))?),
            None => CoefficientSurface::default(),
        };
        let pitch = if self.farm.fixed_pitch_gains.unwrap_or(false) {
            PitchGains::Fixed
        } else {
            PitchGains::Designed { zeta: self.farm.pitch_zeta.unwrap_or(0.7), omega_n: self.farm.pitch_omega_n_rad_s.unwrap_or(0.6) }
        };
        let v0: Vec<f64> = self.farm.v0_ms.clone().unwrap_or_else(|| vec![self.wind.v_bar_ms; n]);
        // one predictor per distinct operating speed
        let mut preds: Vec<(f64, PredictorSS)> = Vec::new();
        let mut turbines = Vec::with_capacity(n);
        for (i, &v) in v0.iter().enumerate() {
            let model = TurbineModel::build(TurbineParams::default(), surface.clone(), v, p_wf / n as f64, pitch, self.run.ts_s)
                .map_err(|e| ScenarioError::Value(format!("turbine {}: {e}", i + 1)))?;
            let pred = match preds.iter().find(|(vv, _)| *vv == v) {
                Some((_, p)) => p.clone(),
                None => {
                    let p = self.predictor(base, v)?;
                    preds.push((v, p.clone()));
                    p
                }
            };
            turbines.push(TurbineSetup { model, predictor: pred, wind: self.wind_profile(v)?, seed_offset: i as u64 });
        }
        let controller = self.controller_spec(&self.controller.kind, None)?;
        Ok(Scenario {
            name: self.name.clone(),
            turbines,
            p_dem_wf: p_wf,
            controller,
            plant: self.plant.kind,
            duration: self.run.duration_s,
            ts: self.run.ts_s,
            warmup: self.run.warmup_s,
            substeps: self.plant.substeps,
            seeds: self.run.seeds.clone(),
            jp_norm: self.plant.jp_norm,
            solver_tol: None,
        })
    }
}

/// Identification outcome: predictor, validation variance reduction and
/// error variance.
pub fn identify(profile: &WindProfile, w: &WindSection) -> Result<(PredictorSS, f64, f64), ScenarioError> {
    let val = |e: crate::windsim::WindError| ScenarioError::Value(e.to_string());
    let train = generate_wind(profile, w.train_duration_s.max(60.0), 1.0, w.identify_seed);
    let valid = generate_wind(profile, w.validation_duration_s.max(60.0), 1.0, w.identify_seed.wrapping_add(1_000_000));
    let model = identify_arma(&train, w.max_na, w.max_nc).map_err(val)?;
    let pred = build_predictor(&model);
    let (red, var) = crate::windsim::variance_reduction(&pred, &valid).map_err(val)?;
    Ok((pred, red, var))
}

/// Parse, resolve the farm reference and build in one go.
pub fn load(src: &ScenarioSource) -> Result<(ScenarioFile, Scenario), ScenarioError> {
    let mut f = parse(&src.text)?;
    f.resolve_farm(&src.base_dir)?;
    let s = f.build(&src.base_dir)?;
    Ok((f, s))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canned_parse_and_validate() {
        for (name, text) in CANNED {
            let mut f = parse(text).unwrap_or_else(|e| panic!("{name}: {e}"));
            f.resolve_farm(Path::new(".")).unwrap();
            f.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn unknown_key_rejected() {
        let text = canned("wt3").unwrap().replace("[run]", "[run]\nbogus = 1");
        assert!(matches!(parse(&text), Err(ScenarioError::Schema(_))));
    }

    #[test]
    fn missing_farm_file() {
        let text = "name = \"x\"\n[farm]\nfile = \"does-not-exist.toml\"\n[wind]\nv_bar_ms = 12.0\nt_i = 0.1\n[controller]\nkind = \"dmpc\"\n";
        let mut f = parse(text).unwrap();
        assert!(matches!(f.resolve_farm(Path::new("/nonexistent")), Err(ScenarioError::Io { .. })));
    }

    #[test]
    fn wt3_builds() {
        let (_, s) = load(&ScenarioSource::resolve("builtin:wt3").unwrap()).unwrap();
        assert_eq!(s.n(), 3);
        assert_eq!(s.p_dem_wf, 9e6);
        s.validate().unwrap();
    }

    #[test]
    fn hash_is_stable() {
        let s = ScenarioSource::resolve("builtin:wt3").unwrap();
        assert_eq!(s.content_hash(), s.clone().content_hash());
        assert_eq!(s.content_hash().len(), 64);
    }
}
