//! Adaptive Gauss–Kronrod quadrature of expectation values ∫G(ω)f(ω−ω₀)dω.
//!
//! For a Lorentzian the substitution x = δω·tan(πu) turns G(ω)dω into du on
//! u ∈ (−½, ½), so every expectation becomes a bounded integral over a finite
//! interval. Oscillatory integrands do not decay in u near ±½; for those the
//! integral is split at a cutoff |x| = X lying on a period boundary, the
//! central part is integrated panel-by-panel between consecutive period
//! boundaries (which is where |sin| has its kinks), and each tail is replaced
//! by the period mean times the analytic tail mass.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::PI;

use crate::error::{invalid, Error, Result};
use crate::spectrum::SpectralDensity;

const XGK: [f64; 11] = [
    0.995_657_163_025_808_1,
    0.973_906_528_517_171_7,
    0.930_157_491_355_708_2,
    0.865_063_366_688_984_5,
    0.780_817_726_586_416_9,
    0.679_409_568_299_024_4,
    0.562_757_134_668_604_7,
    0.433_395_394_129_247_2,
    0.294_392_862_701_460_2,
    0.148_874_338_981_631_2,
    0.0,
];

const WGK: [f64; 11] = [
    0.011_694_638_867_371_874,
    0.032_558_162_307_964_73,
    0.054_755_896_574_352,
    0.075_039_674_810_919_95,
    0.093_125_454_583_697_6,
    0.109_387_158_802_297_64,
    0.123_491_976_262_065_85,
    0.134_709_217_311_473_33,
    0.142_775_938_577_060_08,
    0.147_739_104_901_338_5,
    0.149_445_554_002_916_9,
];

const WG: [f64; 5] = [
    0.066_671_344_308_688_14,
    0.149_451_349_150_580_6,
    0.219_086_362_515_982_04,
    0.269_266_719_309_996_36,
    0.295_524_224_714_752_87,
];

/// Panels allowed before the subdivision budget is exhausted.
const MAX_PANELS: usize = 1_000_000;

/// Smallest cutoff, in units of δω, used for oscillatory tails.
const MIN_CUTOFF_WIDTHS: f64 = 50.0;

/// A real integrand over the detuning x = ω − ω₀.
pub struct Integrand<'a> {
    f: Box<dyn Fn(f64) -> f64 + Sync + 'a>,
    shape: Shape,
}

#[derive(Clone, Copy, Debug)]
enum Shape {
    /// Bounded and non-oscillatory in the far tails.
    Smooth,
    /// Periodic with the given period, each period symmetric about its
    /// midpoint (or the whole function odd); `mean` is the period average.
    Periodic { period: f64, mean: f64 },
}

impl<'a> Integrand<'a> {
    /// Bounded integrand that settles to a limit in both tails.
    pub fn smooth(f: impl Fn(f64) -> f64 + Sync + 'a) -> Self {
        Integrand {
            f: Box::new(f),
            shape: Shape::Smooth,
        }
    }

    /// Periodic integrand. Each period [jP, (j+1)P] must be mirror-symmetric
    /// about its midpoint, or the function must be odd in x.
    pub fn periodic(f: impl Fn(f64) -> f64 + Sync + 'a, period: f64, mean: f64) -> Self {
        Integrand {
            f: Box::new(f),
            shape: Shape::Periodic { period, mean },
        }
    }

    pub fn constant(c: f64) -> Self {
        Integrand::smooth(move |_| c)
    }

    /// cos(k·x)
    pub fn cos(k: f64) -> Self {
        if k == 0.0 {
            return Integrand::constant(1.0);
        }
        Integrand::periodic(move |x| (k * x).cos(), 2.0 * PI / k.abs(), 0.0)
    }

    /// sin(k·x)
    pub fn sin(k: f64) -> Self {
        if k == 0.0 {
            return Integrand::constant(0.0);
        }
        Integrand::periodic(move |x| (k * x).sin(), 2.0 * PI / k.abs(), 0.0)
    }

    /// |sin(k·x)|
    pub fn abs_sin(k: f64) -> Self {
        if k == 0.0 {
            return Integrand::constant(0.0);
        }
        Integrand::periodic(move |x| (k * x).sin().abs(), PI / k.abs(), 2.0 / PI)
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.f)(x)
    }
}

/// Result of a quadrature: value and an upper error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadEstimate {
    pub value: f64,
    pub error: f64,
    pub panels: usize,
}

/// Computes ∫G(ω) f(ω − ω₀) dω to absolute accuracy `abs_tol`.
pub fn adaptive_quad(f: &Integrand<'_>, spec: &SpectralDensity, abs_tol: f64) -> Result<QuadEstimate> {
    if !(abs_tol >= 1e-12) {
        return Err(invalid("abs_tol", format!("{abs_tol:e} is below 1e-12")));
    }
    match spec {
        SpectralDensity::Tabulated { points, .. } => {
            let value = points.iter().map(|&(x, w)| w * f.eval(x)).sum();
            Ok(QuadEstimate {
                value,
                error: 0.0,
                panels: points.len(),
            })
        }
        SpectralDensity::Lorentzian { delta_omega, .. } => lorentzian_quad(f, *delta_omega, abs_tol),
    }
}

fn lorentzian_quad(f: &Integrand<'_>, width: f64, abs_tol: f64) -> Result<QuadEstimate> {
    let map = |u: f64| {
        if u >= 0.0 {
            width / (PI * (0.5 - u)).tan()
        } else {
            -width / (PI * (0.5 + u)).tan()
        }
    };
    let g = |u: f64| f.eval(map(u));
    match f.shape {
        Shape::Smooth => {
            let breaks: Vec<f64> = (0..=16).map(|j| -0.5 + j as f64 / 16.0).collect();
            let (value, error, panels) = integrate_panels(&g, &breaks, abs_tol)?;
            Ok(QuadEstimate { value, error, panels })
        }
        Shape::Periodic { period, mean } => {
            let tail_budget = 0.5 * abs_tol;
            let min_cut = (8.0 * width * period * period / (PI * tail_budget)).cbrt();
            let cut_periods = (min_cut.max(MIN_CUTOFF_WIDTHS * width) / period).ceil();
            if 2.0 * cut_periods > MAX_PANELS as f64 {
                return Err(Error::NumericFailure {
                    what: format!("oscillation period {period:e} needs {cut_periods} panels"),
                    estimate: mean,
                    error: 1.0,
                });
            }
            let m = cut_periods as i64;
            let cutoff = m as f64 * period;
            let breaks: Vec<f64> = (-m..=m).map(|j| ((j as f64 * period) / width).atan() / PI).collect();
            let (central, err, panels) = integrate_panels(&g, &breaks, abs_tol - tail_budget)?;
            let tail_mass = (width / cutoff).atan() / PI;
            let slope = 2.0 * cutoff * width / (PI * (width * width + cutoff * cutoff).powi(2));
            let tail_err = 2.0 * period * period * slope;
            Ok(QuadEstimate {
                value: central + 2.0 * mean * tail_mass,
                error: err + tail_err,
                panels,
            })
        }
    }
}

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, o: &Self) -> bool {
        self.error == o.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Panel {
    fn cmp(&self, o: &Self) -> Ordering {
        self.error.total_cmp(&o.error).then_with(|| o.a.total_cmp(&self.a))
    }
}

fn gauss_kronrod(g: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = g(center);
    let mut kronrod = WGK[10] * fc;
    let mut gauss = 0.0;
    for j in 0..10 {
        let dx = half * XGK[j];
        let pair = g(center - dx) + g(center + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

/// Globally adaptive GK21 over the panels delimited by `breaks`.
fn integrate_panels(g: &impl Fn(f64) -> f64, breaks: &[f64], tol: f64) -> Result<(f64, f64, usize)> {
    let mut heap: BinaryHeap<Panel> = breaks
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| {
            let (value, error) = gauss_kronrod(g, w[0], w[1]);
            Panel {
                a: w[0],
                b: w[1],
                value,
                error,
            }
        })
        .collect();
    let mut total_err: f64 = heap.iter().map(|p| p.error).sum();
    while total_err > tol {
        if heap.len() >= MAX_PANELS {
            let mut panels = heap.into_vec();
            let (value, error) = sum_panels(&mut panels);
            return Err(Error::NumericFailure {
                what: "subdivision budget exhausted".into(),
                estimate: value,
                error,
            });
        }
        let worst = heap.pop().expect("non-empty panel set");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Panel is at floating-point resolution; keep it as is.
            heap.push(worst);
            let mut panels = heap.into_vec();
            let (value, error) = sum_panels(&mut panels);
            return Err(Error::NumericFailure {
                what: "panel width reached machine precision".into(),
                estimate: value,
                error,
            });
        }
        let (lv, le) = gauss_kronrod(g, worst.a, mid);
        let (rv, re) = gauss_kronrod(g, mid, worst.b);
        total_err += le + re - worst.error;
        heap.push(Panel {
            a: worst.a,
            b: mid,
            value: lv,
            error: le,
        });
        heap.push(Panel {
            a: mid,
            b: worst.b,
            value: rv,
            error: re,
        });
    }
    let mut panels = heap.into_vec();
    let n = panels.len();
    let (value, error) = sum_panels(&mut panels);
    Ok((value, error, n))
}

fn sum_panels(panels: &mut [Panel]) -> (f64, f64) {
    panels.sort_by(|p, q| p.a.total_cmp(&q.a));
    let value = panels.iter().map(|p| p.value).sum();
    let error = panels.iter().map(|p| p.error).sum();
    (value, error)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lorentz() -> SpectralDensity {
        SpectralDensity::lorentzian(2060.0, 1.0 / 9.703).unwrap()
    }

    #[test]
    fn normalization() {
        let q = adaptive_quad(&Integrand::constant(1.0), &lorentz(), 1e-12).unwrap();
        assert!((q.value - 1.0).abs() < 1e-12, "{q:?}");
    }

    #[test]
    fn coherence_at_one_linewidth() {
        let dw = 1.0 / 9.703;
        let q = adaptive_quad(&Integrand::cos(1.0 / dw), &lorentz(), 1e-10).unwrap();
        assert!((q.value - (-1.0f64).exp()).abs() < 1e-10, "{q:?}");
        assert!(q.error <= 1e-10);
    }

    #[test]
    fn odd_integrand_vanishes() {
        let q = adaptive_quad(&Integrand::sin(3.7), &lorentz(), 1e-10).unwrap();
        assert!(q.value.abs() < 1e-10, "{q:?}");
    }

    #[test]
    fn rejects_tiny_tolerance() {
        assert!(adaptive_quad(&Integrand::constant(1.0), &lorentz(), 1e-14).is_err());
    }

    #[test]
    fn smooth_nontrivial_integrand() {
        // E[1/(1 + (x/δω)²)] for a Lorentzian of half-width δω equals ½.
        let dw = 1.0 / 9.703;
        let f = Integrand::smooth(move |x: f64| 1.0 / (1.0 + (x / dw).powi(2)));
        let q = adaptive_quad(&f, &lorentz(), 1e-12).unwrap();
        assert!((q.value - 0.5).abs() < 1e-12, "{q:?}");
    }

    #[test]
    fn tabulated_is_exact_sum() {
        let spec = SpectralDensity::tabulated(1.0, vec![(-1.0, 0.25), (0.5, 0.75)]).unwrap();
        let q = adaptive_quad(&Integrand::smooth(|x| x * x), &spec, 1e-12).unwrap();
        assert!((q.value - (0.25 + 0.75 * 0.25)).abs() < 1e-15);
    }
}
