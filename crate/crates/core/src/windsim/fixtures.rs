//! Published predictors kept as named regression fixtures, and the text
//! format used to store predictors on disk.

use super::{PredictorSS, WindError};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub const FIXTURE_NAMES: [&str; 3] = ["eq16", "eq17", "eq45"];

/// Look up a fixture predictor by name.
///
/// - `eq16`: v̄ = 20 m/s, T_I = 0.1
/// - `eq17`: v̄ = 12 m/s, T_I = 0.01
/// - `eq45`: v̄ = 12 m/s, T_I = 0.1
pub fn fixture(name: &str) -> Result<PredictorSS, WindError> {
    let m = |r: usize, c: usize, v: &[f64]| DMatrix::from_row_slice(r, c, v);
    Ok(match name {
        "eq16" => PredictorSS {
            a_v: m(3, 3, &[0.0, 0.0, 0.0, 0.25, 0.0, 0.0, 0.0, 0.5, 0.0]),
            b_v: m(3, 1, &[1.0, 0.0, 0.0]),
            c_v: m(1, 3, &[0.9021, -0.4406, 0.5389]),
            err_var: 0.9010,
            mean: 20.0,
        },
        "eq17" => PredictorSS {
            a_v: m(2, 2, &[0.3613, 0.2621, 0.5, 0.0]),
            b_v: m(2, 1, &[1.0, 0.0]),
            c_v: m(1, 2, &[0.8885, -0.8208]),
            err_var: 0.0036,
            mean: 12.0,
        },
        "eq45" => PredictorSS {
            a_v: m(2, 2, &[0.7039, 0.1116, 0.5, 0.0]),
            b_v: m(2, 1, &[2.0, 0.0]),
            c_v: m(1, 2, &[0.4189, -0.6178]),
            err_var: 0.3512,
            mean: 12.0,
        },
        other => return Err(WindError::UnknownFixture(other.to_string())),
    })
}

/// On-disk predictor: matrices as lists of comma-separated rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictorFile {
    pub mean_ms: f64,
    pub err_var: f64,
    pub a_v: Vec<String>,
    pub b_v: Vec<String>,
    pub c_v: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

fn rows_to_matrix(rows: &[String], ncols: Option<usize>) -> Result<DMatrix<f64>, WindError> {
    let parsed = rows
        .iter()
        .map(|r| {
            r.split(',')
                .map(|s| s.trim())
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<f64>().map_err(|e| WindError::Format(format!("'{s}': {e}"))))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    let nr = parsed.len();
    let nc = ncols.unwrap_or_else(|| parsed.first().map_or(0, |r| r.len()));
    if parsed.iter().any(|r| r.len() != nc) {
        return Err(WindError::Format("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_row_iterator(nr, nc, parsed.into_iter().flatten()))
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<String> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(", "))
        .collect()
}

impl PredictorFile {
    pub fn from_predictor(p: &PredictorSS, note: Option<String>) -> Self {
        Self {
            mean_ms: p.mean,
            err_var: p.err_var,
            a_v: matrix_to_rows(&p.a_v),
            b_v: matrix_to_rows(&p.b_v),
            c_v: matrix_to_rows(&p.c_v),
            note,
        }
    }

    pub fn to_predictor(&self) -> Result<PredictorSS, WindError> {
        let n = self.a_v.len();
        let p = PredictorSS {
            a_v: rows_to_matrix(&self.a_v, Some(n))?,
            b_v: rows_to_matrix(&self.b_v, Some(1))?,
            c_v: if n == 0 { DMatrix::zeros(1, 0) } else { rows_to_matrix(&self.c_v, Some(n))? },
            err_var: self.err_var,
            mean: self.mean_ms,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("predictor file serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, WindError> {
        toml::from_str(text).map_err(|e| WindError::Format(e.to_string()))
    }
}
