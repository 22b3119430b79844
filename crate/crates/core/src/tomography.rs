//! Finite-count polarization tomography in the H/V, D/A and R/L bases.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::states::QubitDensity;

/// Measurement settings in record order.
pub const SETTINGS: [&str; 3] = ["HV", "DA", "RL"];

/// Click counts (n₊, n₋) per setting; index 0 = H/V, 1 = D/A, 2 = R/L.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRecord {
    pub counts: [(u64, u64); 3],
    pub photons_per_setting: u64,
}

impl CountRecord {
    pub fn new(counts: [(u64, u64); 3]) -> Result<Self> {
        let n = counts[0].0 + counts[0].1;
        if n == 0 || counts.iter().any(|&(a, b)| a + b != n) {
            return Err(invalid("counts", "every setting needs the same non-zero total"));
        }
        Ok(CountRecord {
            counts,
            photons_per_setting: n,
        })
    }

    /// Writes `setting,plus,minus` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["setting", "plus", "minus"])?;
        for (name, (p, m)) in SETTINGS.iter().zip(self.counts) {
            w.write_record([name.to_string(), p.to_string(), m.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let mut counts = [(0, 0); 3];
        let mut seen = [false; 3];
        for rec in r.deserialize() {
            let (name, p, m): (String, u64, u64) = rec?;
            let k = SETTINGS
                .iter()
                .position(|s| *s == name)
                .ok_or_else(|| Error::InvalidState(format!("unknown setting {name}")))?;
            counts[k] = (p, m);
            seen[k] = true;
        }
        if seen.contains(&false) {
            return Err(Error::InvalidState("missing tomography setting".into()));
        }
        Self::new(counts)
    }
}

/// Samples n detections per setting; the "+" outcome of axis k occurs with
/// probability (1 + ⟨σₖ⟩)/2.
pub fn simulate_counts(rho: &QubitDensity, n: u64, seed: u64) -> Result<CountRecord> {
    if n == 0 {
        return Err(invalid("n", "at least one photon per setting"));
    }
    let [x, y, z] = rho.bloch();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = [(0, 0); 3];
    for (slot, r) in counts.iter_mut().zip([z, x, y]) {
        let p = (0.5 * (1.0 + r)).clamp(0.0, 1.0);
        let plus = Binomial::new(n, p)
            .map_err(|e| invalid("probability", e.to_string()))?
            .sample(&mut rng);
        *slot = (plus, n - plus);
    }
    CountRecord::new(counts)
}

/// Linear inversion; Bloch vectors longer than one are rescaled onto the
/// sphere so the result is always a valid state.
pub fn reconstruct(counts: &CountRecord) -> QubitDensity {
    let n = counts.photons_per_setting as f64;
    let comp = |k: usize| (counts.counts[k].0 as f64 - counts.counts[k].1 as f64) / n;
    let mut r = [comp(1), comp(2), comp(0)];
    let len = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    if len > 1.0 {
        for v in &mut r {
            *v /= len;
        }
    }
    QubitDensity::from_bloch(r).expect("|r| <= 1 gives a valid state")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mat2::Mat2;
    use crate::states::trace_distance_qubit;

    #[test]
    fn eigenstate_counts_are_certain() {
        let c = simulate_counts(&QubitDensity::horizontal(), 1000, 3).unwrap();
        assert_eq!(c.counts[0], (1000, 0));
    }

    #[test]
    fn mixed_state_counts_are_balanced() {
        let n = 1_000_000;
        let c = simulate_counts(&QubitDensity::maximally_mixed(), n, 11).unwrap();
        for (p, m) in c.counts {
            assert_eq!(p + m, n);
            assert!((p as f64 - n as f64 / 2.0).abs() <= 2500.0, "{p}");
        }
    }

    #[test]
    fn counts_are_seeded() {
        let rho = QubitDensity::from_bloch([0.3, -0.2, 0.5]).unwrap();
        assert_eq!(
            simulate_counts(&rho, 5000, 9).unwrap(),
            simulate_counts(&rho, 5000, 9).unwrap()
        );
        assert_ne!(
            simulate_counts(&rho, 5000, 9).unwrap(),
            simulate_counts(&rho, 5000, 10).unwrap()
        );
        assert!(simulate_counts(&rho, 0, 9).is_err());
    }

    #[test]
    fn exact_inversion_of_horizontal() {
        let c = CountRecord::new([(1000, 0), (500, 500), (500, 500)]).unwrap();
        let rho = reconstruct(&c);
        assert!(rho.matrix().max_abs_diff(QubitDensity::horizontal().matrix()) < 1e-15);
    }

    #[test]
    fn unphysical_counts_are_rescaled() {
        let c = CountRecord::new([(100, 0), (100, 0), (50, 50)]).unwrap();
        let rho = reconstruct(&c);
        let r = rho.bloch();
        assert!((r.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(QubitDensity::new(*rho.matrix()).is_ok());
    }

    #[test]
    fn large_n_recovers_pure_state() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let psi = QubitDensity::pure([s.into(), num_complex::Complex64::new(0.0, s)]).unwrap();
        let rho = reconstruct(&simulate_counts(&psi, 10_000_000, 5).unwrap());
        assert!(trace_distance_qubit(&rho, &psi) < 2e-3);
    }

    #[test]
    fn reconstruction_error_is_small_at_1e5() {
        let off = 0.5 * (-1.0f64).exp();
        let truth = QubitDensity::new(Mat2::real(0.5, off, off, 0.5)).unwrap();
        let mean: f64 = (0..100)
            .map(|seed| trace_distance_qubit(&reconstruct(&simulate_counts(&truth, 100_000, seed).unwrap()), &truth))
            .sum::<f64>()
            / 100.0;
        assert!(mean <= 0.01, "mean error {mean}");
    }

    #[test]
    fn csv_round_trip() {
        let c = CountRecord::new([(7, 3), (4, 6), (10, 0)]).unwrap();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        assert_eq!(CountRecord::read_csv(buf.as_slice()).unwrap(), c);
    }

    #[test]
    fn rejects_inconsistent_totals() {
        assert!(CountRecord::new([(7, 3), (4, 5), (10, 0)]).is_err());
    }
}
