//! Kaimal turbulence synthesis, ARMA identification and one-step predictors.

mod arma;
mod fixtures;
mod kaimal;
mod predictor;

pub use arma::{identify_arma, identify_arma_series, simulate_arma, ArmaModel};
pub use fixtures::{fixture, PredictorFile, FIXTURE_NAMES};
pub use kaimal::{generate_wind, kaimal_psd, WindProfile, WindSeries, DEFAULT_L_V};
pub use predictor::{build_predictor, prediction_errors, variance_reduction, PredictorSS};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum WindError {
    #[error("invalid wind profile: {0}")]
    Profile(String),
    #[error("identification failed: {0}")]
    Identification(String),
    #[error("validation series has zero variance")]
    ZeroVariance,
    #[error("predictor file: {0}")]
    Format(String),
    #[error("unknown predictor fixture '{0}'")]
    UnknownFixture(String),
}
