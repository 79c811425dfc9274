mod common;

use common::*;
use wfmpc::optim::{check_lmi, kkt_residuals, solve_qp, solve_sdp, QpSettings, SdpSettings};

#[test]
fn qp_matches_projected_gradient_on_boxes() {
    for seed in 0..20 {
        let p = random_qp(seed, true);
        let s = solve_qp(&p, &QpSettings::default()).unwrap();
        let z = box_qp_oracle(&p);
        let (a, b) = (qp_objective(&p, &s.z), qp_objective(&p, &z));
        assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()), "seed {seed}: {a} vs {b}");
        assert!((&s.z - &z).amax() < 1e-6, "seed {seed}");
    }
}

#[test]
fn qp_matches_dual_oracle() {
    for seed in 100..120 {
        let p = random_qp(seed, false);
        let s = solve_qp(&p, &QpSettings::default()).unwrap();
        assert!(kkt_residuals(&p, &s.z, &s.lambda).max() < 1e-8);
        let lb = dual_qp_oracle(&p);
        let obj = qp_objective(&p, &s.z);
        assert!((obj - lb).abs() < 1e-6 * (1.0 + obj.abs()), "seed {seed}: solver {obj}, oracle {lb}");
    }
}

#[test]
fn sdp_matches_certificates() {
    for seed in 0..10 {
        let (p, opt) = certified_sdp(seed);
        let s = solve_sdp(&p, &SdpSettings::default()).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
        assert!((s.objective - opt).abs() < 1e-5 * (1.0 + opt.abs()), "seed {seed}: {} vs {opt}", s.objective);
        assert!(check_lmi(&s.y, &p).passes(1e-7));
    }
}
