//! Characterization fits: linewidth from the Michelson visibility envelope
//! V(x) = A·e^{−δω|2(x − x₀)/c|}, and birefringence from the shift of the
//! zero-delay point behind the crystal.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::constants::{delay_from_mirror_mm, C_MM_PER_PS};
use crate::error::{invalid, Error, Result};
use crate::lsq::{levenberg_marquardt, LmOptions};
use crate::spectrum::parse_f64;

/// Fewest samples accepted by [`fit_linewidth`].
pub const MIN_FIT_SAMPLES: usize = 8;
/// Minimum delay span of a trace, in fitted decay constants 1/δω.
pub const MIN_SPAN_DECAYS: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisibilitySample {
    pub x_mm: f64,
    pub visibility: f64,
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct VisibilityTrace {
    pub samples: Vec<VisibilitySample>,
}

impl VisibilityTrace {
    pub fn new(samples: Vec<VisibilitySample>) -> Result<Self> {
        for s in &samples {
            let sigma = s.sigma.unwrap_or(0.0);
            if !s.x_mm.is_finite() || !(sigma >= 0.0) || !sigma.is_finite() {
                return Err(invalid(
                    "samples",
                    "positions and sigmas must be finite, sigmas non-negative",
                ));
            }
            if !(s.visibility >= 0.0 && s.visibility <= 1.0 + 3.0 * sigma) {
                return Err(invalid(
                    "visibility",
                    format!("{} at x = {} mm outside [0, 1 + 3σ]", s.visibility, s.x_mm),
                ));
            }
        }
        Ok(VisibilityTrace { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Columns `x_mm,visibility` plus `sigma` when every sample carries one.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let with_sigma = !self.samples.is_empty() && self.samples.iter().all(|s| s.sigma.is_some());
        let mut w = csv::Writer::from_writer(out);
        if with_sigma {
            w.write_record(["x_mm", "visibility", "sigma"])?;
        } else {
            w.write_record(["x_mm", "visibility"])?;
        }
        for s in &self.samples {
            let mut rec = vec![s.x_mm.to_string(), s.visibility.to_string()];
            if with_sigma {
                rec.push(s.sigma.unwrap_or(0.0).to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let headers = r.headers()?.clone();
        let names: Vec<&str> = headers.iter().map(str::trim).collect();
        let with_sigma = match names.as_slice() {
            ["x_mm", "visibility"] => false,
            ["x_mm", "visibility", "sigma"] => true,
            _ => return Err(Error::InvalidState(format!("unexpected visibility header {names:?}"))),
        };
        let mut samples = Vec::new();
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            let field = |k: usize| parse_f64(&rec, row, k);
            samples.push(VisibilitySample {
                x_mm: field(0)?,
                visibility: field(1)?,
                sigma: if with_sigma { Some(field(2)?) } else { None },
            });
        }
        Self::new(samples)
    }
}

/// Envelope A·e^{−δω|2(x − x₀)/c|}.
pub fn visibility_model(x_mm: f64, delta_omega: f64, x0_mm: f64, amplitude: f64) -> f64 {
    amplitude * (-delta_omega * delay_from_mirror_mm(x_mm - x0_mm).abs()).exp()
}

/// Samples the unit-amplitude envelope at `x_mm` with additive Gaussian
/// noise of standard deviation `sigma`, clipped at zero.
pub fn synthesize_visibility(
    delta_omega: f64,
    x_mm: &[f64],
    sigma: f64,
    seed: u64,
    x0_mm: f64,
) -> Result<VisibilityTrace> {
    if !(delta_omega > 0.0 && delta_omega.is_finite()) {
        return Err(invalid(
            "delta_omega",
            format!("{delta_omega} must be positive and finite"),
        ));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(invalid("sigma", format!("{sigma} must be non-negative")));
    }
    let noise = Normal::new(0.0, sigma).map_err(|e| invalid("sigma", e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = x_mm
        .iter()
        .map(|&x| {
            let clean = visibility_model(x, delta_omega, x0_mm, 1.0);
            let v = if sigma > 0.0 {
                clean + noise.sample(&mut rng)
            } else {
                clean
            };
            VisibilitySample {
                x_mm: x,
                visibility: v.max(0.0),
                sigma: (sigma > 0.0).then_some(sigma),
            }
        })
        .collect();
    VisibilityTrace::new(samples)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinewidthFit {
    /// 1/δω, ps.
    pub inv_linewidth_ps: f64,
    pub std_error_ps: f64,
    pub delta_omega: f64,
    pub x0_mm: f64,
    pub amplitude: f64,
    pub iterations: usize,
}

/// Fits (δω, x₀, A ≤ 1) to a visibility trace.
pub fn fit_linewidth(trace: &VisibilityTrace) -> Result<LinewidthFit> {
    let n = trace.len();
    if n < MIN_FIT_SAMPLES {
        return Err(Error::FitFailure(format!(
            "{n} samples, need at least {MIN_FIT_SAMPLES}"
        )));
    }
    let xs: Vec<f64> = trace.samples.iter().map(|s| s.x_mm).collect();
    let ys: Vec<f64> = trace.samples.iter().map(|s| s.visibility).collect();
    let inv_sigma: Vec<f64> = trace
        .samples
        .iter()
        .map(|s| s.sigma.filter(|&v| v > 0.0).map_or(1.0, |v| 1.0 / v))
        .collect();
    let (xmin, xmax) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let span_ps = delay_from_mirror_mm(xmax - xmin);
    if !(span_ps > 0.0) {
        return Err(Error::FitFailure("trace has zero delay span".into()));
    }

    let (imax, &peak) = ys
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty trace");
    if !(peak > 0.0) {
        return Err(Error::FitFailure("trace has no signal".into()));
    }
    let x0 = xs[imax];
    let a0 = peak.min(1.0);
    // Log-slope estimate from points well inside the envelope.
    let rates: Vec<f64> = xs
        .iter()
        .zip(&ys)
        .filter_map(|(&x, &y)| {
            let dt = delay_from_mirror_mm(x - x0).abs();
            let r = y / a0;
            (dt > 0.0 && r > 0.05 && r < 0.95).then(|| -r.ln() / dt)
        })
        .collect();
    let dw0 = if rates.is_empty() {
        4.0 / span_ps
    } else {
        rates.iter().sum::<f64>() / rates.len() as f64
    };

    let residuals = |p: &[f64]| {
        xs.iter()
            .zip(&ys)
            .zip(&inv_sigma)
            .map(|((&x, &y), &w)| (visibility_model(x, p[0], p[1], p[2]) - y) * w)
            .collect()
    };
    let jacobian = |p: &[f64]| {
        DMatrix::from_fn(n, 3, |i, j| {
            let dt = delay_from_mirror_mm(xs[i] - p[1]);
            let e = (-p[0] * dt.abs()).exp();
            inv_sigma[i]
                * match j {
                    0 => -p[2] * dt.abs() * e,
                    1 => p[2] * p[0] * dt.signum() * (2.0 / C_MM_PER_PS) * e,
                    _ => e,
                }
        })
    };
    let lower_dw = 1e-6 / span_ps;
    let rep = levenberg_marquardt(
        residuals,
        jacobian,
        &[dw0, x0, a0],
        &[lower_dw, xmin, 0.0],
        &[1e6 / span_ps, xmax, 1.0],
        LmOptions::default(),
    );
    let [dw, x0_hat, amp] = [rep.params[0], rep.params[1], rep.params[2]];
    if !rep.converged || !dw.is_finite() {
        return Err(Error::FitFailure(format!(
            "no convergence after {} iterations",
            rep.iterations
        )));
    }
    if dw * span_ps < MIN_SPAN_DECAYS {
        return Err(Error::FitFailure(format!(
            "trace spans {:.3} decay constants, need at least {MIN_SPAN_DECAYS}",
            dw * span_ps
        )));
    }
    let var = rep
        .covariance
        .as_ref()
        .map(|c| c[(0, 0)])
        .filter(|v| v.is_finite() && *v >= 0.0)
        .ok_or_else(|| Error::FitFailure("singular fit covariance".into()))?;
    Ok(LinewidthFit {
        inv_linewidth_ps: 1.0 / dw,
        std_error_ps: var.sqrt() / (dw * dw),
        delta_omega: dw,
        x0_mm: x0_hat,
        amplitude: amp,
        iterations: rep.iterations,
    })
}

/// Δn = 2·x_shift/L: the envelope-center delay 2x_shift/c equals the crystal
/// delay L·Δn/c.
pub fn estimate_birefringence(x_shift_mm: f64, length_mm: f64) -> Result<f64> {
    if !(length_mm > 0.0 && length_mm.is_finite()) {
        return Err(invalid("length_mm", format!("{length_mm} must be positive")));
    }
    if !x_shift_mm.is_finite() {
        return Err(invalid("x_shift_mm", "must be finite"));
    }
    Ok(2.0 * x_shift_mm / length_mm)
}

/// Mirror shift L·Δn/2 produced by a crystal of length L and birefringence Δn.
pub fn birefringence_shift_mm(length_mm: f64, delta_n: f64) -> f64 {
    0.5 * length_mm * delta_n
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::{mirror_mm_from_delay, CALCITE_DELTA_N, CRYSTAL_LENGTH_MM, INV_LINEWIDTH_PS};

    fn xgrid(n: usize, half_span_decays: f64) -> Vec<f64> {
        let half = mirror_mm_from_delay(half_span_decays * INV_LINEWIDTH_PS);
        (0..n).map(|i| -half + 2.0 * half * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn model_values() {
        let dw = 1.0 / INV_LINEWIDTH_PS;
        assert_eq!(visibility_model(0.3, dw, 0.3, 1.0), 1.0);
        let x = mirror_mm_from_delay(INV_LINEWIDTH_PS);
        assert!((visibility_model(x, dw, 0.0, 1.0) - (-1.0f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn synthesis_is_seeded() {
        let xs = xgrid(20, 3.0);
        let a = synthesize_visibility(0.1, &xs, 0.01, 4, 0.0).unwrap();
        assert_eq!(a, synthesize_visibility(0.1, &xs, 0.01, 4, 0.0).unwrap());
        assert_ne!(a, synthesize_visibility(0.1, &xs, 0.01, 5, 0.0).unwrap());
        assert!(synthesize_visibility(-0.1, &xs, 0.01, 4, 0.0).is_err());
    }

    #[test]
    fn noiseless_fit_recovers_parameters() {
        let dw = 1.0 / INV_LINEWIDTH_PS;
        let xs: Vec<f64> = xgrid(41, 3.0).iter().map(|x| x + 0.2).collect();
        let fit = fit_linewidth(&synthesize_visibility(dw, &xs, 0.0, 0, 0.25).unwrap()).unwrap();
        assert!((fit.inv_linewidth_ps / INV_LINEWIDTH_PS - 1.0).abs() < 1e-3, "{fit:?}");
        assert!((fit.x0_mm - 0.25).abs() < 1e-3 * 0.25);
        assert!((fit.amplitude - 1.0).abs() < 1e-3);
    }

    #[test]
    fn constant_trace_is_rejected() {
        let samples = xgrid(30, 3.0)
            .into_iter()
            .map(|x| VisibilitySample {
                x_mm: x,
                visibility: 1.0,
                sigma: None,
            })
            .collect();
        let trace = VisibilityTrace::new(samples).unwrap();
        assert!(matches!(fit_linewidth(&trace), Err(Error::FitFailure(_))));
    }

    #[test]
    fn too_few_samples() {
        let t = synthesize_visibility(0.1, &xgrid(5, 3.0), 0.0, 0, 0.0).unwrap();
        assert!(matches!(fit_linewidth(&t), Err(Error::FitFailure(_))));
    }

    #[test]
    fn birefringence_round_trip() {
        assert_eq!(estimate_birefringence(0.0, 10.0).unwrap(), 0.0);
        let shift = birefringence_shift_mm(CRYSTAL_LENGTH_MM, CALCITE_DELTA_N);
        assert!((shift - 3.21484).abs() < 1e-5);
        assert!((estimate_birefringence(shift, CRYSTAL_LENGTH_MM).unwrap() - CALCITE_DELTA_N).abs() < 1e-12);
        assert_eq!(
            birefringence_shift_mm(2.0 * CRYSTAL_LENGTH_MM, CALCITE_DELTA_N),
            2.0 * shift
        );
        assert!(estimate_birefringence(1.0, 0.0).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let t = synthesize_visibility(0.1, &xgrid(12, 3.0), 0.02, 1, 0.0).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(VisibilityTrace::read_csv(buf.as_slice()).unwrap(), t);
        let clean = synthesize_visibility(0.1, &xgrid(12, 3.0), 0.0, 1, 0.0).unwrap();
        let mut buf = Vec::new();
        clean.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"x_mm,visibility\n"));
        assert_eq!(VisibilityTrace::read_csv(buf.as_slice()).unwrap(), clean);
    }

    #[test]
    fn rejects_out_of_range_visibility() {
        let s = VisibilitySample {
            x_mm: 0.0,
            visibility: 1.2,
            sigma: Some(0.01),
        };
        assert!(VisibilityTrace::new(vec![s]).is_err());
    }
}
