use super::WindError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use std::f64::consts::PI;
use std::io::{Read, Write};

/// Mean speed, turbulence intensity and Kaimal length scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindProfile {
    pub v_bar: f64,
    pub t_i: f64,
    pub l_v: f64,
}

/// Default integral length scale (m).
pub const DEFAULT_L_V: f64 = 200.0;

impl WindProfile {
    pub fn new(v_bar: f64, t_i: f64, l_v: f64) -> Result<Self, WindError> {
        if !(v_bar > 0.0) {
            return Err(WindError::Profile(format!("v_bar must be positive, got {v_bar}")));
        }
        if !(0.0..1.0).contains(&t_i) {
            return Err(WindError::Profile(format!("turbulence intensity must lie in [0, 1), got {t_i}")));
        }
        if !(l_v > 0.0) {
            return Err(WindError::Profile(format!("length scale must be positive, got {l_v}")));
        }
        Ok(Self { v_bar, t_i, l_v })
    }

    /// Turbulence variance `(T_I v̄)²`.
    pub fn sigma2(&self) -> f64 {
        (self.t_i * self.v_bar).powi(2)
    }
}

/// One-sided Kaimal spectrum per Hz, written in angular frequency:
/// `σ² 4(L/v̄) / (1 + ω 3L/(π v̄))^{5/3}`.
pub fn kaimal_psd(profile: &WindProfile, omega: f64) -> f64 {
    let lv = profile.l_v / profile.v_bar;
    profile.sigma2() * 4.0 * lv / (1.0 + omega * 3.0 * lv / PI).powf(5.0 / 3.0)
}

/// Wind speed samples at a fixed period.
#[derive(Debug, Clone, PartialEq)]
pub struct WindSeries {
    pub samples: Vec<f64>,
    pub ts: f64,
    pub seed: u64,
    pub profile: WindProfile,
}

/// Spectral synthesis: random-phase harmonics with Kaimal amplitudes, then
/// exact rescaling to the target mean and sample standard deviation.
pub fn generate_wind(profile: &WindProfile, duration: f64, ts: f64, seed: u64) -> WindSeries {
    assert!(ts > 0.0 && duration >= 60.0, "need duration >= 60 s and ts > 0");
    let n = (duration / ts).round() as usize;
    let mut samples = vec![profile.v_bar; n];
    if profile.t_i > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let df = 1.0 / (n as f64 * ts);
        let mut spec = vec![Complex::new(0.0, 0.0); n];
        for k in 1..n.div_ceil(2) {
            let f = k as f64 * df;
            let amp = (2.0 * kaimal_psd(profile, 2.0 * PI * f) * df).sqrt();
            let phase = rng.random::<f64>() * 2.0 * PI;
            let c = Complex::from_polar(amp * n as f64 / 2.0, phase);
            spec[k] = c;
            spec[n - k] = c.conj();
        }
        FftPlanner::new().plan_fft_inverse(n).process(&mut spec);
        let x: Vec<f64> = spec.iter().map(|c| c.re / n as f64).collect();
        let (mean, std) = crate::linalg::mean_std(&x);
        let target = profile.t_i * profile.v_bar;
        for (s, xi) in samples.iter_mut().zip(&x) {
            *s = profile.v_bar + (xi - mean) * target / std;
        }
    }
    WindSeries { samples, ts, seed, profile: *profile }
}

impl WindSeries {
    /// Write as CSV with header `t_s,v_ms`.
    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t_s", "v_ms"])?;
        for (k, v) in self.samples.iter().enumerate() {
            wr.write_record([format!("{}", k as f64 * self.ts), format!("{v:.12e}")])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Read samples from a `t_s,v_ms` CSV. The profile is re-estimated from
    /// the data with the default length scale.
    pub fn read_csv<R: Read>(r: R) -> Result<Self, WindError> {
        let mut rd = csv::Reader::from_reader(r);
        let headers = rd.headers().map_err(|e| WindError::Format(e.to_string()))?.clone();
        if headers.iter().collect::<Vec<_>>() != ["t_s", "v_ms"] {
            return Err(WindError::Format(format!("unexpected header {headers:?}")));
        }
        let mut t = Vec::new();
        let mut v = Vec::new();
        for rec in rd.records() {
            let rec = rec.map_err(|e| WindError::Format(e.to_string()))?;
            let parse = |i: usize| rec[i].trim().parse::<f64>().map_err(|e| WindError::Format(e.to_string()));
            t.push(parse(0)?);
            v.push(parse(1)?);
        }
        if v.len() < 2 {
            return Err(WindError::Format("need at least two samples".into()));
        }
        let (mean, std) = crate::linalg::mean_std(&v);
        let profile = WindProfile::new(mean, std / mean, DEFAULT_L_V)?;
        Ok(Self { samples: v, ts: t[1] - t[0], seed: 0, profile })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psd_at_zero() {
        let p = WindProfile::new(12.0, 0.01, 200.0).unwrap();
        assert!((p.sigma2() - 0.0144).abs() < 1e-15);
        assert!((kaimal_psd(&p, 0.0) - 4.0 * 0.0144 * 200.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn exact_moments_and_reproducible() {
        let p = WindProfile::new(12.0, 0.1, 200.0).unwrap();
        let w = generate_wind(&p, 900.0, 1.0, 7);
        let (m, s) = crate::linalg::mean_std(&w.samples);
        assert!((m - 12.0).abs() < 1e-9);
        assert!((s - 1.2).abs() < 1e-9);
        assert_eq!(w, generate_wind(&p, 900.0, 1.0, 7));
        assert_ne!(w.samples, generate_wind(&p, 900.0, 1.0, 8).samples);
    }

    #[test]
    fn csv_round_trip() {
        let p = WindProfile::new(12.0, 0.1, 200.0).unwrap();
        let w = generate_wind(&p, 60.0, 1.0, 1);
        let mut buf = Vec::new();
        w.write_csv(&mut buf).unwrap();
        let back = WindSeries::read_csv(buf.as_slice()).unwrap();
        for (a, b) in w.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn bad_profile() {
        assert!(WindProfile::new(0.0, 0.1, 200.0).is_err());
        assert!(WindProfile::new(12.0, 1.0, 200.0).is_err());
    }
}
