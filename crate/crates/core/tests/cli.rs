use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn wfmpc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wfmpc")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A copy of a canned scenario shortened to `duration` seconds.
fn short_scenario(dir: &Path, name: &str, duration: u32, edit: impl Fn(String) -> String) -> PathBuf {
    let text = wfmpc::scenario::canned(name).unwrap().replace("duration_s = 900.0", &format!("duration_s = {duration}.0"));
    let path = dir.join(format!("{name}-short.toml"));
    std::fs::write(&path, edit(text)).unwrap();
    path
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let head = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(|v| v.parse().unwrap()).collect()).collect();
    (head, rows)
}

#[test]
fn run_then_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let scen = short_scenario(dir.path(), "wt3", 120, |t| t);
    let out = dir.path().join("run");
    let o = wfmpc(&["--scenario", scen.to_str().unwrap(), "--seeds", "4", "--out", out.to_str().unwrap(), "run"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = std::fs::read_to_string(out.join("report.toml")).unwrap();
    assert!(report.contains("content_sha256") && report.contains("seeds = [4]"));

    let rep = dir.path().join("rep");
    let o = wfmpc(&["--out", rep.to_str().unwrap(), "report", out.join("seed-4").to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["power_demand", "power_demand_gradient", "m_s", "m_t", "wind", "farm_output"] {
        assert!(rep.join(format!("{f}.csv")).exists(), "{f}");
    }
    // derived series reproduce the run output
    let (h_run, run_ms) = read_csv(&out.join("seed-4/m_s.csv"));
    let (h_rep, rep_ms) = read_csv(&rep.join("m_s.csv"));
    assert_eq!(h_run, h_rep);
    assert_eq!(run_ms, rep_ms);
    assert_eq!(h_rep.len(), 1 + 3);
    // gradient is the finite difference of the demand at Ts = 1 s
    let (_, p) = read_csv(&rep.join("power_demand.csv"));
    let (gh, g) = read_csv(&rep.join("power_demand_gradient.csv"));
    assert_eq!(gh.len(), 4);
    assert_eq!(g.len(), p.len() - 1);
    for k in 0..g.len() {
        for i in 1..4 {
            assert_eq!(g[k][i], p[k + 1][i] - p[k][i]);
        }
    }
}

#[test]
fn identify_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let o = wfmpc(&["--scenario", "builtin:wt3", "--out", d.to_str().unwrap(), "identify"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let fa = std::fs::read_to_string(a.join("predictor.toml")).unwrap();
    assert_eq!(fa, std::fs::read_to_string(b.join("predictor.toml")).unwrap());
    let rep: toml::Table = std::fs::read_to_string(a.join("identify_report.toml")).unwrap().parse().unwrap();
    assert!(rep["variance_reduction"].as_float().unwrap() >= 0.60);
    // the identified file is usable as a scenario predictor
    let scen = short_scenario(dir.path(), "wt3", 60, |t| t.replace("predictor = \"eq45\"", &format!("predictor = \"file:{}\"", a.join("predictor.toml").display())));
    let o = wfmpc(&["--scenario", scen.to_str().unwrap(), "--seeds", "1", "--out", dir.path().join("r").to_str().unwrap(), "run"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn compare_table_layout() {
    let dir = tempfile::tempdir().unwrap();
    let scen = short_scenario(dir.path(), "wt3", 120, |t| t);
    let o = wfmpc(&["--scenario", scen.to_str().unwrap(), "--seeds", "1-2", "--out", dir.path().to_str().unwrap(), "compare", "--controllers", "scheduler,scheduler,dmpc:1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = String::from_utf8_lossy(&o.stdout);
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 4, "{table}");
    assert!(lines[1].starts_with("scheduler") && !lines[1].contains('%'));
    // identical controller gives 0% everywhere
    assert_eq!(lines[2].matches("0.00%").count(), 4, "{}", lines[2]);
    assert!(lines[3].starts_with("dmpc(N_h=1)"));
    assert!(dir.path().join("compare.toml").exists());
}

#[test]
fn sweep_writes_per_horizon_rows() {
    let dir = tempfile::tempdir().unwrap();
    let scen = short_scenario(dir.path(), "wt3", 90, |t| t);
    let o = wfmpc(&["--scenario", scen.to_str().unwrap(), "--seeds", "1,2", "--out", dir.path().to_str().unwrap(), "sweep-horizon", "--horizons", "0-2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    // header + 3 horizons x (2 seeds + mean)
    assert_eq!(text.lines().count(), 1 + 3 * 3);
}

#[test]
fn zero_turbulence_has_no_load_variation() {
    let dir = tempfile::tempdir().unwrap();
    let scen = short_scenario(dir.path(), "wt3", 120, |t| t.replace("t_i = 0.1", "t_i = 0.0"));
    let out = dir.path().join("z");
    let o = wfmpc(&["--scenario", scen.to_str().unwrap(), "--seeds", "1", "--out", out.to_str().unwrap(), "run"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rep: toml::Table = std::fs::read_to_string(out.join("report.toml")).unwrap().parse().unwrap();
    let mean = rep["result"]["mean"].as_table().unwrap();
    for k in ["j_ms", "j_mt"] {
        assert!(mean[k].as_float().unwrap().abs() < 1e-9, "{k} = {}", mean[k]);
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    // missing scenario file
    let o = wfmpc(&["--scenario", "/nonexistent/s.toml", "--out", out, "run"]);
    assert_eq!(o.status.code(), Some(2));
    // schema error names the bad key
    let bad = short_scenario(dir.path(), "wt3", 60, |t| t.replace("[plant]", "[plant]\nwarp_factor = 9"));
    let o = wfmpc(&["--scenario", bad.to_str().unwrap(), "--out", out, "run"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("warp_factor"), "{}", stderr(&o));
    // missing farm file
    let nofarm = short_scenario(dir.path(), "wt3", 60, |t| t.replace("[farm]", "[farm]\nfile = \"missing-farm.toml\""));
    let o = wfmpc(&["--scenario", nofarm.to_str().unwrap(), "--out", out, "run"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    // SMPC on 100 turbines is refused by the size cap
    let o = wfmpc(&["--scenario", "builtin:thanet100", "--seeds", "1", "--out", out, "compare", "--controllers", "smpc"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    // report on an empty directory
    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let o = wfmpc(&["--out", out, "report", empty.to_str().unwrap()]);
    assert_ne!(o.status.code(), Some(0));
    // bad seeds list
    let o = wfmpc(&["--scenario", "builtin:wt3", "--seeds", "5-1", "--out", out, "run"]);
    assert_eq!(o.status.code(), Some(2));
}
