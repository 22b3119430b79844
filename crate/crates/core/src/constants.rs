//! Physical constants and the reference experiment's parameters.

use std::f64::consts::PI;

/// Speed of light in mm/ps.
pub const C_MM_PER_PS: f64 = 0.299_792_458;

/// Inverse Lorentzian half-width of the filtered photons, ps.
pub const INV_LINEWIDTH_PS: f64 = 9.703;

/// Center wavelength of the photons, nm.
pub const WAVELENGTH_NM: f64 = 914.0;

/// Calcite birefringence.
pub const CALCITE_DELTA_N: f64 = 0.179;

/// Unit crystal length of the length sweep, mm (L = k × 8.98 mm).
pub const CRYSTAL_STEP_MM: f64 = 8.98;

/// Crystal length of the main delay sweep, mm.
pub const CRYSTAL_LENGTH_MM: f64 = 35.92;

/// Polarization-maintaining fiber length, m.
pub const FIBER_LENGTH_M: f64 = 120.0;

/// Polarization-maintaining fiber birefringence.
pub const FIBER_DELTA_N: f64 = 3e-4;

/// Angular frequency (rad/ps) of light with the given vacuum wavelength (nm).
pub fn omega_from_wavelength_nm(nm: f64) -> f64 {
    2.0 * PI * C_MM_PER_PS / (nm * 1e-6)
}

/// Delay (ps) accumulated between the fast and slow axes of a birefringent
/// element of length `length_mm`.
pub fn birefringent_delay_ps(length_mm: f64, delta_n: f64) -> f64 {
    length_mm * delta_n / C_MM_PER_PS
}

/// Michelson mirror coordinate (mm) for a round-trip delay `tau_ps`.
pub fn mirror_mm_from_delay(tau_ps: f64) -> f64 {
    C_MM_PER_PS * tau_ps / 2.0
}

/// Round-trip delay (ps) for a Michelson mirror displacement `x_mm`.
pub fn delay_from_mirror_mm(x_mm: f64) -> f64 {
    2.0 * x_mm / C_MM_PER_PS
}

/// Lorentzian half-width δω (rad/ps) of the reference photons.
pub fn lab_delta_omega() -> f64 {
    1.0 / INV_LINEWIDTH_PS
}

/// Carrier ω₀ (rad/ps) of the reference photons.
pub fn lab_omega0() -> f64 {
    omega_from_wavelength_nm(WAVELENGTH_NM)
}

/// Fiber delay s (ps) of the reference dephasing fiber.
pub fn lab_fiber_delay_ps() -> f64 {
    birefringent_delay_ps(FIBER_LENGTH_M * 1e3, FIBER_DELTA_N)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_delays() {
        let t = birefringent_delay_ps(CRYSTAL_LENGTH_MM, CALCITE_DELTA_N);
        assert!((t - 21.447).abs() < 1e-3, "t = {t}");
        assert!((t * lab_delta_omega() - 2.210).abs() < 1e-3);
        let s = lab_fiber_delay_ps();
        assert!((s - 120.08).abs() < 5e-3, "s = {s}");
        assert!((s * lab_delta_omega() - 12.38).abs() < 5e-3);
        assert!((lab_omega0() - 2.0608e3).abs() < 0.1);
    }

    #[test]
    fn mirror_round_trip() {
        let tau = 13.7;
        assert!((delay_from_mirror_mm(mirror_mm_from_delay(tau)) - tau).abs() < 1e-12);
    }
}
