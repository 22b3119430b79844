//! Environment spectra: analytic line shapes, discrete frequency grids and
//! the coherence function C(t) = ∫G(ω)e^{i(ω−ω₀)t}dω.
//!
//! Grids store detunings x = ω − ω₀ next to the carrier ω₀ so that
//! rotating-frame phases never subtract two ~2e3 rad/ps numbers.

use std::f64::consts::PI;
use std::io::{Read, Write};

use log::warn;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::oracle::quad::{adaptive_quad, Integrand};

/// Absolute accuracy guaranteed by the quadrature-backed operations.
pub const QUAD_ABS_TOL: f64 = 1e-8;

/// Spectral density G(ω) of the frequency environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape")]
pub enum SpectralDensity {
    /// (δω/π) / (δω² + (ω − ω₀)²)
    Lorentzian { omega0: f64, delta_omega: f64 },
    /// Discrete probability masses at detunings from `omega0`.
    Tabulated { omega0: f64, points: Vec<(f64, f64)> },
}

impl SpectralDensity {
    pub fn lorentzian(omega0: f64, delta_omega: f64) -> Result<Self> {
        if !(omega0.is_finite() && omega0 > 0.0) {
            return Err(invalid("omega0", format!("{omega0} must be positive and finite")));
        }
        if !(delta_omega.is_finite() && delta_omega > 0.0) {
            return Err(invalid(
                "delta_omega",
                format!("{delta_omega} must be positive and finite"),
            ));
        }
        if omega0 < 100.0 * delta_omega {
            warn!("omega0 = {omega0} is not much larger than delta_omega = {delta_omega}");
        }
        Ok(SpectralDensity::Lorentzian { omega0, delta_omega })
    }

    /// Spectrum given as (detuning, weight) pairs. Weights are normalized
    /// and points sorted by detuning.
    pub fn tabulated(omega0: f64, mut points: Vec<(f64, f64)>) -> Result<Self> {
        if !omega0.is_finite() {
            return Err(invalid("omega0", "must be finite"));
        }
        if points.is_empty() {
            return Err(invalid("points", "empty table"));
        }
        if points
            .iter()
            .any(|&(x, w)| !x.is_finite() || !(w >= 0.0) || !w.is_finite())
        {
            return Err(invalid("points", "detunings must be finite and weights non-negative"));
        }
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        if points.windows(2).any(|p| p[1].0 <= p[0].0) {
            return Err(invalid("points", "detunings must be distinct"));
        }
        let total: f64 = points.iter().map(|p| p.1).sum();
        if !(total > 0.0) {
            return Err(invalid("points", "total weight is zero"));
        }
        // Already-normalized tables are kept bit-for-bit.
        if (total - 1.0).abs() > 1e-12 {
            for p in &mut points {
                p.1 /= total;
            }
        }
        Ok(SpectralDensity::Tabulated { omega0, points })
    }

    pub fn omega0(&self) -> f64 {
        match self {
            SpectralDensity::Lorentzian { omega0, .. } | SpectralDensity::Tabulated { omega0, .. } => *omega0,
        }
    }

    /// Half-width δω; `None` for tabulated spectra.
    pub fn delta_omega(&self) -> Option<f64> {
        match self {
            SpectralDensity::Lorentzian { delta_omega, .. } => Some(*delta_omega),
            SpectralDensity::Tabulated { .. } => None,
        }
    }

    /// G(ω) for a Lorentzian; `None` for tabulated spectra.
    pub fn density(&self, omega: f64) -> Option<f64> {
        match self {
            SpectralDensity::Lorentzian { omega0, delta_omega } => {
                let x = omega - omega0;
                Some(delta_omega / PI / (delta_omega * delta_omega + x * x))
            }
            SpectralDensity::Tabulated { .. } => None,
        }
    }

    /// C(t). Exact e^{−δω|t|} for a Lorentzian.
    pub fn coherence(&self, t: f64) -> Result<Complex64> {
        check_finite("t", t)?;
        Ok(match self {
            SpectralDensity::Lorentzian { delta_omega, .. } => Complex64::from((-delta_omega * t.abs()).exp()),
            SpectralDensity::Tabulated { points, .. } => {
                points.iter().map(|&(x, w)| Complex64::from_polar(w, x * t)).sum()
            }
        })
    }

    /// ∫G(ω)e^{i(ω−ω₀)k}dω by quadrature, independent of the closed form.
    pub fn expect_phase(&self, k: f64) -> Result<Complex64> {
        check_finite("k", k)?;
        let tol = 0.25 * QUAD_ABS_TOL;
        let re = adaptive_quad(&Integrand::cos(k), self, tol)?;
        let im = adaptive_quad(&Integrand::sin(k), self, tol)?;
        Ok(Complex64::new(re.value, im.value))
    }
}

/// 2d·∫G(ω)|sin((ω−ω₀)t)|dω, the total correlation of the crystal-prepared
/// state with respect to its dephased reference (trace-norm convention).
pub fn quad_correlation_integral(spec: &SpectralDensity, t: f64, d: f64) -> Result<f64> {
    check_finite("t", t)?;
    check_coherence(d)?;
    if t == 0.0 || d == 0.0 {
        return Ok(0.0);
    }
    let q = adaptive_quad(&Integrand::abs_sin(t), spec, 0.1 * QUAD_ABS_TOL)?;
    if q.error > QUAD_ABS_TOL {
        return Err(Error::NumericFailure {
            what: "correlation integral did not converge".into(),
            estimate: 2.0 * d * q.value,
            error: 2.0 * d * q.error,
        });
    }
    Ok(2.0 * d * q.value)
}

/// Parses column `col` of data row `row` exactly (shortest round-trip
/// representation in, identical bits out).
pub(crate) fn parse_f64(rec: &csv::StringRecord, row: usize, col: usize) -> Result<f64> {
    rec.get(col)
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| Error::InvalidState(format!("data row {}: bad number in column {}", row + 1, col + 1)))
}

pub(crate) fn check_finite(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(invalid(name, format!("{v} is not finite")))
    }
}

pub(crate) fn check_coherence(d: f64) -> Result<()> {
    if (0.0..=0.5).contains(&d) {
        Ok(())
    } else {
        Err(invalid("d", format!("{d} outside [0, 1/2]")))
    }
}

/// How a spectrum is turned into discrete frequency bins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme")]
pub enum GridScheme {
    /// Equal spacing over [ω₀ − κδω, ω₀ + κδω], midpoint weights.
    UniformTruncated { span_kappa: f64, n_bins: usize },
    /// Equal probability mass 1/N per bin.
    Quantile { n_bins: usize },
}

impl GridScheme {
    pub fn n_bins(&self) -> usize {
        match self {
            GridScheme::UniformTruncated { n_bins, .. } | GridScheme::Quantile { n_bins } => *n_bins,
        }
    }
}

/// Discrete frequency bins {ωᵢ, wᵢ} standing in for the environment state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    omega0: f64,
    detunings: Vec<f64>,
    weights: Vec<f64>,
    scheme: Option<GridScheme>,
}

impl FrequencyGrid {
    /// Grid from raw (detuning, weight) pairs; weights are renormalized.
    pub fn from_points(omega0: f64, points: Vec<(f64, f64)>) -> Result<Self> {
        match SpectralDensity::tabulated(omega0, points)? {
            SpectralDensity::Tabulated { omega0, points } => Ok(Self::from_sorted(omega0, points, None)),
            SpectralDensity::Lorentzian { .. } => unreachable!(),
        }
    }

    pub(crate) fn from_sorted(omega0: f64, points: Vec<(f64, f64)>, scheme: Option<GridScheme>) -> Self {
        let (detunings, weights) = points.into_iter().unzip();
        FrequencyGrid {
            omega0,
            detunings,
            weights,
            scheme,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn omega0(&self) -> f64 {
        self.omega0
    }

    pub fn scheme(&self) -> Option<GridScheme> {
        self.scheme
    }

    pub fn detunings(&self) -> &[f64] {
        &self.detunings
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn omega(&self, i: usize) -> f64 {
        self.omega0 + self.detunings[i]
    }

    /// (ωᵢ, wᵢ) in increasing frequency.
    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.detunings
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (self.omega0 + x, w))
    }

    /// Largest spacing between neighbouring bins (0 for a single bin).
    pub fn max_bin_width(&self) -> f64 {
        self.detunings.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    /// Σᵢ wᵢ e^{i(ωᵢ−ω₀)t}
    pub fn coherence(&self, t: f64) -> Result<Complex64> {
        check_finite("t", t)?;
        Ok(self
            .detunings
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| Complex64::from_polar(w, x * t))
            .sum())
    }

    /// Writes `omega_rad_per_ps,detuning_rad_per_ps,weight` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["omega_rad_per_ps", "detuning_rad_per_ps", "weight"])?;
        for ((omega, weight), x) in self.points().zip(&self.detunings) {
            w.write_record([omega.to_string(), x.to_string(), weight.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a grid written by [`FrequencyGrid::write_csv`]. A two-column
    /// `omega_rad_per_ps,weight` table is also accepted, with detunings
    /// measured from `omega0`.
    pub fn read_csv<R: Read>(input: R, omega0: f64) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let has_detuning = r.headers()?.len() >= 3;
        let mut points = Vec::new();
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            points.push(if has_detuning {
                (parse_f64(&rec, row, 1)?, parse_f64(&rec, row, 2)?)
            } else {
                (parse_f64(&rec, row, 0)? - omega0, parse_f64(&rec, row, 1)?)
            });
        }
        Self::from_points(omega0, points)
    }
}

/// Discretizes a spectrum. Tabulated spectra map onto their own points and
/// ignore the scheme.
pub fn discretize(spec: &SpectralDensity, scheme: GridScheme) -> Result<FrequencyGrid> {
    let (omega0, width) = match spec {
        SpectralDensity::Tabulated { omega0, points } => {
            return Ok(FrequencyGrid::from_sorted(*omega0, points.clone(), None));
        }
        SpectralDensity::Lorentzian { omega0, delta_omega } => (*omega0, *delta_omega),
    };
    let points = match scheme {
        GridScheme::UniformTruncated { span_kappa, n_bins } => {
            if !(span_kappa >= 10.0) || !span_kappa.is_finite() {
                return Err(invalid("span_kappa", format!("{span_kappa} < 10")));
            }
            if n_bins < 64 {
                return Err(invalid("n_bins", format!("{n_bins} < 64")));
            }
            let half_span = span_kappa * width;
            let h = 2.0 * half_span / n_bins as f64;
            let mut pts: Vec<(f64, f64)> = (0..n_bins)
                .map(|i| {
                    let x = -half_span + (i as f64 + 0.5) * h;
                    (x, width / PI / (width * width + x * x) * h)
                })
                .collect();
            let total: f64 = pts.iter().map(|p| p.1).sum();
            for p in &mut pts {
                p.1 /= total;
            }
            pts
        }
        GridScheme::Quantile { n_bins } => {
            if n_bins < 64 {
                return Err(invalid("n_bins", format!("{n_bins} < 64")));
            }
            lorentzian_quantile_points(width, n_bins)
        }
    };
    Ok(FrequencyGrid::from_sorted(omega0, points, Some(scheme)))
}

/// Equal-mass Lorentzian bins, mirrored so the grid is exactly symmetric.
pub(crate) fn lorentzian_quantile_points(width: f64, n_bins: usize) -> Vec<(f64, f64)> {
    let w = 1.0 / n_bins as f64;
    let mut xs = vec![0.0; n_bins];
    for i in 0..n_bins.div_ceil(2) {
        // Mass midpoint of bin i, measured from the lower edge: the
        // quantile u = (i + ½)/N maps to x = −δω·cot(πu).
        let u = (i as f64 + 0.5) * w;
        let x = -width / (PI * u).tan();
        xs[i] = x;
        xs[n_bins - 1 - i] = -x;
    }
    if n_bins % 2 == 1 {
        xs[n_bins / 2] = 0.0;
    }
    xs.into_iter().map(|x| (x, w)).collect()
}
