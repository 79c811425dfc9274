//! Plain-text dumps of QP and SDP instances for cross-checking elsewhere.
//!
//! Both formats are TOML. Dense matrices are lists of rows; SDP coefficient
//! matrices list their upper-triangle triplets.

use super::{LmiBlock, LpRow, QpProblem, SdpProblem, SparseSym};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Serialize, Deserialize)]
struct QpDump {
    h: Vec<Vec<f64>>,
    f: Vec<f64>,
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BlockDump {
    name: String,
    dim: usize,
    f0: Vec<Vec<f64>>,
    /// `[var, i, j, value]`
    terms: Vec<(usize, usize, usize, f64)>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RowDump {
    name: String,
    f0: f64,
    coeffs: Vec<(usize, f64)>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SdpDump {
    n_vars: usize,
    c: Vec<f64>,
    blocks: Vec<BlockDump>,
    rows: Vec<RowDump>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect()
}

fn from_rows(r: &[Vec<f64>], ncols: usize) -> Result<DMatrix<f64>, String> {
    if r.iter().any(|x| x.len() != ncols) {
        return Err("ragged matrix".into());
    }
    Ok(DMatrix::from_row_iterator(r.len(), ncols, r.iter().flatten().cloned()))
}

pub fn qp_to_string(p: &QpProblem) -> String {
    let d = QpDump { h: rows(&p.h), f: p.f.iter().cloned().collect(), a: rows(&p.a), b: p.b.iter().cloned().collect() };
    toml::to_string(&d).expect("qp dump serializes")
}

pub fn qp_from_str(s: &str) -> Result<QpProblem, String> {
    let d: QpDump = toml::from_str(s).map_err(|e| e.to_string())?;
    let n = d.f.len();
    Ok(QpProblem { h: from_rows(&d.h, n)?, f: DVector::from_vec(d.f), a: from_rows(&d.a, n)?, b: DVector::from_vec(d.b) })
}

pub fn sdp_to_string(p: &SdpProblem) -> String {
    let d = SdpDump {
        n_vars: p.n_vars,
        c: p.c.iter().cloned().collect(),
        blocks: p
            .blocks
            .iter()
            .map(|b| BlockDump {
                name: b.name.clone(),
                dim: b.dim,
                f0: rows(&b.f0),
                terms: b.terms.iter().flat_map(|(v, s)| s.entries.iter().map(move |&(i, j, x)| (*v, i, j, x))).collect(),
            })
            .collect(),
        rows: p.lp.iter().map(|r| RowDump { name: r.name.clone(), f0: r.f0, coeffs: r.coeffs.clone() }).collect(),
    };
    toml::to_string(&d).expect("sdp dump serializes")
}

pub fn sdp_from_str(s: &str) -> Result<SdpProblem, String> {
    let d: SdpDump = toml::from_str(s).map_err(|e| e.to_string())?;
    let mut blocks = Vec::new();
    for b in d.blocks {
        let mut terms: Vec<(usize, SparseSym)> = Vec::new();
        for (v, i, j, x) in b.terms {
            match terms.last_mut() {
                Some((lv, s)) if *lv == v => s.entries.push((i, j, x)),
                _ => terms.push((v, SparseSym { entries: vec![(i, j, x)] })),
            }
        }
        blocks.push(LmiBlock { name: b.name, dim: b.dim, f0: from_rows(&b.f0, b.dim)?, terms });
    }
    Ok(SdpProblem {
        n_vars: d.n_vars,
        c: DVector::from_vec(d.c),
        blocks,
        lp: d.rows.into_iter().map(|r| LpRow { name: r.name, f0: r.f0, coeffs: r.coeffs }).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qp_round_trip() {
        let p = QpProblem {
            h: DMatrix::from_row_slice(2, 2, &[2.0, 0.1, 0.1, 1.0]),
            f: DVector::from_vec(vec![1.0, -1.0]),
            a: DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            b: DVector::from_vec(vec![0.5]),
        };
        assert_eq!(qp_from_str(&qp_to_string(&p)).unwrap(), p);
    }
}
