//! Wind-farm active power dispatch.
//!
//! The crate is organised bottom-up:
//!
//! - [`linearize`] builds the static aerodynamic maps of a single turbine and its
//!   three-state linear model, then discretizes it with a zero-order hold.
//! - [`windsim`] synthesizes Kaimal turbulence, identifies ARMA models and turns
//!   them into one-step-ahead predictors.
//! - [`farm`] augments each turbine with its predictor and stacks the farm.
//! - [`optim`] holds the dense QP and SDP solvers.
//! - [`dispatch`] builds the EDMPC, DMPC and SMPC dispatchers and the baselines.
//! - [`harness`] runs closed-loop simulations and computes fatigue metrics.
//! - [`scenario`] and [`cli`] parse scenario files and drive the subcommands.

pub mod cli;
pub mod dispatch;
pub mod farm;
pub mod harness;
pub mod linalg;
pub mod linearize;
pub mod optim;
pub mod scenario;
pub mod windsim;

pub use dispatch::{ControllerSpec, DispatchCommand, DispatchError, Dispatcher, MpcConfig, MpcMode};
pub use farm::{build_farm, FarmModel};
pub use harness::{compare, monte_carlo, simulate, Metrics, MonteCarlo, PlantKind, Scenario, SimResult};
pub use linearize::{TurbineModel, TurbineParams};
pub use scenario::ScenarioSource;
