use std::ffi::CString;
use std::ptr;
use wfmpc_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 512];
    let n = unsafe { wfmpc_last_error(buf.as_mut_ptr(), buf.len()) };
    let s = unsafe { std::ffi::CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned();
    assert_eq!(s.len(), n.min(511));
    s
}

fn new(scenario: &str, controller: Option<&str>, n_h: i32) -> (WfmpcStatus, *mut WfmpcDispatcher) {
    let s = CString::new(scenario).unwrap();
    let c = controller.map(|c| CString::new(c).unwrap());
    let mut h = ptr::null_mut();
    let st = unsafe { wfmpc_dispatcher_new(s.as_ptr(), c.as_ref().map_or(ptr::null(), |c| c.as_ptr()), n_h, &mut h) };
    (st, h)
}

fn dims(h: *const WfmpcDispatcher) -> (usize, usize) {
    let (mut n, mut nx) = (0, 0);
    assert_eq!(unsafe { wfmpc_dispatcher_dims(h, &mut n, &mut nx) }, WfmpcStatus::Ok);
    (n, nx)
}

#[test]
fn dispatch_round_trip() {
    for ctl in ["scheduler", "edmpc", "dmpc"] {
        let (st, h) = new("builtin:wt3", Some(ctl), 2);
        assert_eq!(st, WfmpcStatus::Ok, "{ctl}: {}", last_error());
        let (n, nx) = dims(h);
        assert_eq!(n, 3);
        let x = vec![0.0; nx];
        let d = [0.3, -0.2, 0.1];
        let v = [12.3, 11.8, 12.1];
        let mut p = vec![f64::NAN; n];
        let st = unsafe { wfmpc_dispatch(h, x.as_ptr(), nx, d.as_ptr(), n, v.as_ptr(), n, p.as_mut_ptr(), n) };
        assert_eq!(st, WfmpcStatus::Ok, "{}", last_error());
        let sum: f64 = p.iter().sum();
        assert!((sum - 9e6).abs() < 1e-6 * 9e6, "{ctl}: sum {sum}");
        unsafe { wfmpc_dispatcher_free(h) };
    }
}

#[test]
fn smpc_through_abi() {
    let (st, h) = new("builtin:wt3", Some("smpc"), 1);
    assert_eq!(st, WfmpcStatus::Ok, "{}", last_error());
    let (n, nx) = dims(h);
    let (x, d, v) = (vec![0.0; nx], vec![0.1; n], vec![12.0; n]);
    let mut p = vec![0.0; n];
    let st = unsafe { wfmpc_dispatch(h, x.as_ptr(), nx, d.as_ptr(), n, v.as_ptr(), n, p.as_mut_ptr(), n) };
    assert_eq!(st, WfmpcStatus::Ok, "{}", last_error());
    assert!((p.iter().sum::<f64>() - 9e6).abs() < 1e-3 * 9e6);
    unsafe { wfmpc_dispatcher_free(h) };
}

#[test]
fn argument_errors() {
    let (st, h) = new("builtin:wt3", None, -1);
    assert_eq!(st, WfmpcStatus::Ok);
    let (n, nx) = dims(h);
    let x = vec![0.0; nx];
    let mut p = vec![7.0; n];
    let st = unsafe { wfmpc_dispatch(h, x.as_ptr(), nx - 1, x.as_ptr(), n, x.as_ptr(), n, p.as_mut_ptr(), n) };
    assert_eq!(st, WfmpcStatus::InvalidArgument);
    assert!(last_error().contains("x has length"));
    assert_eq!(p, vec![7.0; n]);
    let st = unsafe { wfmpc_dispatch(h, ptr::null(), nx, x.as_ptr(), n, x.as_ptr(), n, p.as_mut_ptr(), n) };
    assert_eq!(st, WfmpcStatus::InvalidArgument);
    assert_eq!(unsafe { wfmpc_dispatcher_set_tolerance(h, -1.0) }, WfmpcStatus::InvalidArgument);
    assert_eq!(unsafe { wfmpc_dispatcher_set_tolerance(h, 1e-8) }, WfmpcStatus::Ok);
    assert_eq!(unsafe { wfmpc_dispatcher_dims(ptr::null(), ptr::null_mut(), ptr::null_mut()) }, WfmpcStatus::InvalidArgument);
    unsafe { wfmpc_dispatcher_free(h) };
    unsafe { wfmpc_dispatcher_free(ptr::null_mut()) };
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { wfmpc_dispatcher_new(ptr::null(), ptr::null(), 0, &mut out) }, WfmpcStatus::InvalidArgument);
}

#[test]
fn config_errors() {
    let (st, h) = new("builtin:nope", None, -1);
    assert_eq!(st, WfmpcStatus::Config);
    assert!(h.is_null());
    assert!(!last_error().is_empty());
    let (st, _) = new("builtin:wt3", Some("bogus"), 1);
    assert_eq!(st, WfmpcStatus::Config);
    // 100 turbines with the SDP formulation exceeds the size cap
    let (st, h) = new("builtin:thanet100", Some("smpc"), 3);
    assert_eq!(st, WfmpcStatus::Config, "{}", last_error());
    assert!(h.is_null());
}

#[test]
fn scenario_file_and_simulate() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("short.toml");
    let text = wfmpc::scenario::canned("wt3").unwrap().replace("duration_s = 900.0", "duration_s = 120.0");
    assert!(text.contains("duration_s = 120"));
    std::fs::write(&path, text).unwrap();
    let s = CString::new(path.to_str().unwrap()).unwrap();
    let mut m = [f64::NAN; 4];
    let st = unsafe { wfmpc_simulate(s.as_ptr(), 3, m.as_mut_ptr()) };
    assert_eq!(st, WfmpcStatus::Ok, "{}", last_error());
    assert!(m.iter().all(|v| v.is_finite() && *v >= 0.0));
    assert!((m[3] - m[0] - m[1] - m[2]).abs() < 1e-12);
}

#[test]
fn header_is_generated() {
    let h = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/wfmpc.h")).unwrap();
    for f in ["wfmpc_dispatcher_new", "wfmpc_dispatcher_free", "wfmpc_dispatch(", "wfmpc_simulate", "wfmpc_last_error", "WFMPC_STATUS_INFEASIBLE = 4"] {
        assert!(h.contains(f), "{f} missing from header");
    }
}

#[test]
fn header_compiles_as_c() {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"wfmpc.h\"\nint main(void) {\n  WfmpcDispatcher *h = 0;\n  WfmpcStatus s = wfmpc_dispatcher_new(\"builtin:wt3\", 0, -1, &h);\n  wfmpc_dispatcher_free(h);\n  return (int)s;\n}\n",
    )
    .unwrap();
    let out = match std::process::Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I", concat!(env!("CARGO_MANIFEST_DIR"), "/include")])
        .arg(&src)
        .output()
    {
        Ok(o) => o,
        Err(_) => {
            eprintln!("no C compiler ({cc}); skipping");
            return;
        }
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
