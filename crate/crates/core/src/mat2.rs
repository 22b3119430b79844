//! Fixed-size 2×2 complex matrices for polarization operators.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Row-major 2×2 complex matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mat2(pub [[Complex64; 2]; 2]);

/// Spectrum of a Hermitian 2×2 matrix: eigenvalues in descending order and
/// the matching orthonormal eigenvectors.
#[derive(Debug, Clone, Copy)]
pub struct HermitianEigen {
    pub values: [f64; 2],
    pub vectors: [[Complex64; 2]; 2],
}

impl Mat2 {
    pub const ZERO: Mat2 = Mat2([[ZERO, ZERO], [ZERO, ZERO]]);
    pub const IDENTITY: Mat2 = Mat2([[ONE, ZERO], [ZERO, ONE]]);

    pub fn new(a: Complex64, b: Complex64, c: Complex64, d: Complex64) -> Self {
        Mat2([[a, b], [c, d]])
    }

    pub fn real(a: f64, b: f64, c: f64, d: f64) -> Self {
        Mat2::new(a.into(), b.into(), c.into(), d.into())
    }

    pub fn diag(a: Complex64, d: Complex64) -> Self {
        Mat2([[a, ZERO], [ZERO, d]])
    }

    /// |u⟩⟨v|
    pub fn outer(u: [Complex64; 2], v: [Complex64; 2]) -> Self {
        Mat2([
            [u[0] * v[0].conj(), u[0] * v[1].conj()],
            [u[1] * v[0].conj(), u[1] * v[1].conj()],
        ])
    }

    /// Matrix whose columns are `c0` and `c1`.
    pub fn from_columns(c0: [Complex64; 2], c1: [Complex64; 2]) -> Self {
        Mat2([[c0[0], c1[0]], [c0[1], c1[1]]])
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.0[r][c]
    }

    pub fn adjoint(&self) -> Self {
        let m = &self.0;
        Mat2([[m[0][0].conj(), m[1][0].conj()], [m[0][1].conj(), m[1][1].conj()]])
    }

    pub fn trace(&self) -> Complex64 {
        self.0[0][0] + self.0[1][1]
    }

    pub fn determinant(&self) -> Complex64 {
        self.0[0][0] * self.0[1][1] - self.0[0][1] * self.0[1][0]
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|z| z * s)
    }

    pub fn scale_c(&self, s: Complex64) -> Self {
        self.map(|z| z * s)
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        let m = &self.0;
        Mat2([[f(m[0][0]), f(m[0][1])], [f(m[1][0]), f(m[1][1])]])
    }

    /// U·self·U†
    #[inline]
    pub fn conjugate_by(&self, u: &Mat2) -> Self {
        *u * *self * u.adjoint()
    }

    pub fn apply(&self, v: [Complex64; 2]) -> [Complex64; 2] {
        let m = &self.0;
        [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
    }

    pub fn commutator(&self, other: &Mat2) -> Self {
        *self * *other - *other * *self
    }

    /// Largest entry-wise modulus.
    pub fn max_abs(&self) -> f64 {
        self.0.iter().flatten().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Mat2) -> f64 {
        (*self - *other).max_abs()
    }

    /// Deviation from Hermiticity, max |m − m†|.
    pub fn hermiticity_error(&self) -> f64 {
        self.max_abs_diff(&self.adjoint())
    }

    /// Deviation from unitarity, max |U†U − I|.
    pub fn unitarity_error(&self) -> f64 {
        (self.adjoint() * *self).max_abs_diff(&Mat2::IDENTITY)
    }

    /// Eigenvalues of the Hermitian part, descending.
    pub fn hermitian_eigenvalues(&self) -> [f64; 2] {
        let (mean, radius) = self.hermitian_center_radius();
        [mean + radius, mean - radius]
    }

    fn hermitian_center_radius(&self) -> (f64, f64) {
        let a = self.0[0][0].re;
        let c = self.0[1][1].re;
        let b = 0.5 * (self.0[0][1] + self.0[1][0].conj());
        let half_gap = 0.5 * (a - c);
        (0.5 * (a + c), half_gap.hypot(b.norm()))
    }

    /// Trace norm Σ|λ| of a Hermitian matrix.
    pub fn trace_norm_hermitian(&self) -> f64 {
        let (mean, radius) = self.hermitian_center_radius();
        if radius >= mean.abs() {
            2.0 * radius
        } else {
            2.0 * mean.abs()
        }
    }

    /// Eigen-decomposition of a Hermitian matrix. Eigenvectors carry the
    /// phase convention that their first non-negligible component is real
    /// and positive. When the gap is below `degeneracy_tol` the canonical
    /// basis is returned.
    pub fn hermitian_eigen(&self, degeneracy_tol: f64) -> HermitianEigen {
        let (mean, radius) = self.hermitian_center_radius();
        let values = [mean + radius, mean - radius];
        if 2.0 * radius < degeneracy_tol {
            return HermitianEigen {
                values,
                vectors: [[ONE, ZERO], [ZERO, ONE]],
            };
        }
        let a = self.0[0][0].re;
        let c = self.0[1][1].re;
        let b = 0.5 * (self.0[0][1] + self.0[1][0].conj());
        // (A − λ₁)·e is parallel to the λ₀ eigenvector; pick the better
        // conditioned column.
        let col0 = [Complex64::from(a - values[1]), b.conj()];
        let col1 = [b, Complex64::from(c - values[1])];
        let n0 = col0[0].norm_sqr() + col0[1].norm_sqr();
        let n1 = col1[0].norm_sqr() + col1[1].norm_sqr();
        let top = normalize_phase(if n0 >= n1 { col0 } else { col1 });
        let bottom = normalize_phase([-top[1].conj(), top[0].conj()]);
        HermitianEigen {
            values,
            vectors: [top, bottom],
        }
    }
}

/// Normalizes a 2-vector and rotates its global phase so that the first
/// component with modulus above 1e-14 is real and positive.
pub fn normalize_phase(v: [Complex64; 2]) -> [Complex64; 2] {
    let norm = (v[0].norm_sqr() + v[1].norm_sqr()).sqrt();
    let k = if v[0].norm() > 1e-14 * norm { 0 } else { 1 };
    let lead = v[k];
    let s = lead.conj() / lead.norm() / norm;
    let mut out = [v[0] * s, v[1] * s];
    out[k] = Complex64::new(lead.norm() / norm, 0.0);
    out
}

impl Add for Mat2 {
    type Output = Mat2;
    fn add(self, o: Mat2) -> Mat2 {
        let (a, b) = (self.0, o.0);
        Mat2([
            [a[0][0] + b[0][0], a[0][1] + b[0][1]],
            [a[1][0] + b[1][0], a[1][1] + b[1][1]],
        ])
    }
}

impl AddAssign for Mat2 {
    fn add_assign(&mut self, o: Mat2) {
        *self = *self + o;
    }
}

impl Sub for Mat2 {
    type Output = Mat2;
    fn sub(self, o: Mat2) -> Mat2 {
        self + (-o)
    }
}

impl Neg for Mat2 {
    type Output = Mat2;
    fn neg(self) -> Mat2 {
        self.map(|z| -z)
    }
}

impl Mul for Mat2 {
    type Output = Mat2;
    #[inline]
    fn mul(self, o: Mat2) -> Mat2 {
        let (a, b) = (self.0, o.0);
        Mat2([
            [
                a[0][0] * b[0][0] + a[0][1] * b[1][0],
                a[0][0] * b[0][1] + a[0][1] * b[1][1],
            ],
            [
                a[1][0] * b[0][0] + a[1][1] * b[1][0],
                a[1][0] * b[0][1] + a[1][1] * b[1][1],
            ],
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn eigen_reconstructs_hermitian() {
        let m = Mat2::new(c(0.3, 0.0), c(0.1, -0.25), c(0.1, 0.25), c(0.7, 0.0));
        let e = m.hermitian_eigen(1e-10);
        let rebuilt = Mat2::outer(e.vectors[0], e.vectors[0]).scale(e.values[0])
            + Mat2::outer(e.vectors[1], e.vectors[1]).scale(e.values[1]);
        assert!(rebuilt.max_abs_diff(&m) < 1e-14);
        assert!(e.values[0] >= e.values[1]);
        assert_eq!(e.vectors[0][0].im, 0.0);
        assert!(e.vectors[0][0].re > 0.0);
    }

    #[test]
    fn eigen_of_diagonal_keeps_order() {
        let m = Mat2::real(0.3, 0.0, 0.0, 0.7);
        let e = m.hermitian_eigen(1e-10);
        assert!((e.values[0] - 0.7).abs() < 1e-15);
        assert!((e.vectors[0][1].re - 1.0).abs() < 1e-15);
        assert!(e.vectors[0][0].norm() < 1e-15);
    }

    #[test]
    fn trace_norm_of_indefinite_and_definite() {
        assert!((Mat2::real(1.0, 0.0, 0.0, -1.0).trace_norm_hermitian() - 2.0).abs() < 1e-15);
        assert!((Mat2::real(0.5, 0.0, 0.0, 0.25).trace_norm_hermitian() - 0.75).abs() < 1e-15);
        assert!((Mat2::real(-0.5, 0.0, 0.0, -0.25).trace_norm_hermitian() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn conjugation_by_unitary_preserves_spectrum() {
        let m = Mat2::real(0.8, 0.1, 0.1, 0.2);
        let th: f64 = 0.37;
        let u = Mat2::new(c(th.cos(), 0.0), c(0.0, th.sin()), c(0.0, th.sin()), c(th.cos(), 0.0));
        assert!(u.unitarity_error() < 1e-15);
        let r = m.conjugate_by(&u);
        let (a, b) = (m.hermitian_eigenvalues(), r.hermitian_eigenvalues());
        assert!((a[0] - b[0]).abs() < 1e-14 && (a[1] - b[1]).abs() < 1e-14);
    }
}
