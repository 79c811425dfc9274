//! Dense convex solvers: an active-set QP and a primal-dual interior-point SDP.

pub mod dump;
mod qp;
mod sdp;

pub use qp::{kkt_residuals, solve_qp, KktResiduals, QpError, QpProblem, QpSettings, QpSolution, QpStatus, QpWorkspace, WarmStart};
pub use sdp::{check_lmi, solve_sdp, AffMat, LmiBlock, LmiReport, LpRow, SdpBuilder, SdpError, SdpProblem, SdpSettings, SdpSolution, SdpStatus, SparseSym, SymVar};
