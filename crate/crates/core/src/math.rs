//! Shared numerics: binary entropy, Poisson photon statistics, channel
//! transmittance, and the seed-splitting rule every stochastic component uses.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A real number known to lie in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Probability(f64);

impl Probability {
    pub const ZERO: Probability = Probability(0.0);
    pub const ONE: Probability = Probability(1.0);

    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(Probability(value))
        } else {
            Err(Error::ProbabilityDomain(value))
        }
    }

    /// Clamps into `[0, 1]`. NaN maps to zero.
    pub fn clamped(value: f64) -> Self {
        if value.is_nan() {
            Probability(0.0)
        } else {
            Probability(value.clamp(0.0, 1.0))
        }
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }

    pub fn complement(self) -> Self {
        Probability(1.0 - self.0)
    }
}

impl From<Probability> for f64 {
    fn from(p: Probability) -> f64 {
        p.0
    }
}

/// Binary Shannon entropy in bits, with `0·log2(0) = 0`.
pub fn binary_entropy(e: Probability) -> f64 {
    h2(e.get())
}

/// Unchecked binary entropy for internal hot paths. Callers guarantee `e` in `[0, 1]`.
#[inline]
pub(crate) fn h2(e: f64) -> f64 {
    if e <= 0.0 || e >= 1.0 {
        return 0.0;
    }
    -e * e.log2() - (1.0 - e) * (1.0 - e).log2()
}

/// Binary entropy of a raw value, rejecting anything outside `[0, 1]`.
pub fn binary_entropy_checked(e: f64) -> Result<f64> {
    Probability::new(e).map(binary_entropy)
}

/// Phase-randomized coherent source with Poissonian photon-number statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoissonSource {
    mu: f64,
}

impl PoissonSource {
    pub fn new(mu: f64) -> Result<Self> {
        if mu > 0.0 && mu.is_finite() {
            Ok(PoissonSource { mu })
        } else {
            Err(crate::error::invalid("mu", format!("mean photon number must be > 0, got {mu}")))
        }
    }

    pub fn mean(&self) -> f64 {
        self.mu
    }

    pub fn pmf(&self, n: u32) -> Probability {
        poisson_pmf(self, n)
    }
}

/// `μ^n e^{-μ} / n!`, evaluated in log space so large `n` does not overflow.
pub fn poisson_pmf(source: &PoissonSource, n: u32) -> Probability {
    let mu = source.mu;
    if n == 0 {
        return Probability::clamped((-mu).exp());
    }
    let log_fact: f64 = (1..=n).map(|k| (k as f64).ln()).sum();
    Probability::clamped((n as f64 * mu.ln() - mu - log_fact).exp())
}

/// Probability that a pulse carries two or more photons.
pub fn multi_photon_fraction(source: &PoissonSource) -> Probability {
    let mu = source.mu;
    // 1 - e^{-μ}(1 + μ) loses precision for small μ; expm1 keeps it.
    let value = -(-mu).exp_m1() - mu * (-mu).exp();
    Probability::clamped(value)
}

/// End-to-end transmittance `η_d · 10^{-α L / 10}`.
pub fn channel_transmittance(
    alpha_db_per_km: f64,
    distance_km: f64,
    detector_eff: Probability,
) -> Probability {
    Probability::clamped(detector_eff.get() * 10f64.powf(-alpha_db_per_km * distance_km / 10.0))
}

const SPLITMIX_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(SPLITMIX_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(0xCBF2_9CE4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Splits a root seed into an independent per-task seed.
///
/// The rule is `splitmix64(splitmix64(root ^ fnv1a(stream)) ^ index)`, where
/// `stream` names the consumer (e.g. `"cascade"`, `"errors"`, `"tags"`) and
/// `index` enumerates tasks within it. Changing either yields an unrelated
/// seed; the same triple always yields the same seed.
pub fn derive_seed(root: u64, stream: &str, index: u64) -> u64 {
    splitmix64(splitmix64(root ^ fnv1a(stream)) ^ index)
}

/// The RNG used throughout the crate, seeded through [`derive_seed`].
pub type SimRng = ChaCha8Rng;

pub fn rng_for(root: u64, stream: &str, index: u64) -> SimRng {
    SimRng::seed_from_u64(derive_seed(root, stream, index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn p(x: f64) -> Probability {
        Probability::new(x).unwrap()
    }

    #[test]
    #[allow(clippy::excessive_precision)]
    fn entropy_reference_values() {
        assert_eq!(binary_entropy(p(0.5)), 1.0);
        assert_eq!(binary_entropy(p(0.0)), 0.0);
        assert_eq!(binary_entropy(p(1.0)), 0.0);
        // mpmath, 40 digits
        assert_abs_diff_eq!(binary_entropy(p(0.11)), 0.499_915_958_164_527_995_6, epsilon = 1e-12);
        assert_abs_diff_eq!(binary_entropy(p(0.02)), 0.141_440_542_541_820_645_2, epsilon = 1e-12);
    }

    #[test]
    fn entropy_rejects_out_of_range() {
        assert_eq!(binary_entropy_checked(1.2), Err(Error::ProbabilityDomain(1.2)));
        assert!(binary_entropy_checked(-0.01).is_err());
        assert!(Probability::new(f64::NAN).is_err());
    }

    #[test]
    fn poisson_reference_values() {
        let s = PoissonSource::new(0.4).unwrap();
        assert_abs_diff_eq!(poisson_pmf(&s, 0).get(), 0.670_320_046_035_639_3, epsilon = 1e-14);
        assert_abs_diff_eq!(poisson_pmf(&s, 1).get(), 0.268_128_018_414_255_7, epsilon = 1e-14);
        assert_abs_diff_eq!(multi_photon_fraction(&s).get(), 0.061_551_935_550_104_98, epsilon = 1e-14);
        let s = PoissonSource::new(0.1).unwrap();
        assert_abs_diff_eq!(multi_photon_fraction(&s).get(), 0.004_678_840_160_444_47, epsilon = 1e-14);
        let tiny = PoissonSource::new(1e-9).unwrap();
        assert!(poisson_pmf(&tiny, 0).get() > 1.0 - 1e-8);
        assert!(multi_photon_fraction(&tiny).get() < 1e-17);
    }

    #[test]
    fn poisson_rejects_nonpositive_mean() {
        assert!(PoissonSource::new(0.0).is_err());
        assert!(PoissonSource::new(-1.0).is_err());
    }

    #[test]
    fn poisson_tail_sums_to_one() {
        for mu in [0.01, 0.4, 2.5, 17.0] {
            let s = PoissonSource::new(mu).unwrap();
            let total: f64 = (0..200).map(|n| poisson_pmf(&s, n).get()).sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn transmittance_reference_values() {
        assert_abs_diff_eq!(channel_transmittance(0.2, 0.0, p(0.2)).get(), 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(channel_transmittance(0.2, 50.0, p(0.2)).get(), 0.02, epsilon = 1e-15);
        assert_abs_diff_eq!(channel_transmittance(0.2, 100.0, p(0.5)).get(), 0.005, epsilon = 1e-15);
    }

    #[test]
    fn seeds_are_stable_and_split() {
        assert_eq!(derive_seed(7, "cascade", 0), derive_seed(7, "cascade", 0));
        assert_ne!(derive_seed(7, "cascade", 0), derive_seed(7, "cascade", 1));
        assert_ne!(derive_seed(7, "cascade", 0), derive_seed(7, "tags", 0));
        assert_ne!(derive_seed(7, "cascade", 0), derive_seed(8, "cascade", 0));
    }

    proptest! {
        #[test]
        fn entropy_symmetric(e in 0.0f64..=1.0) {
            prop_assert!((h2(e) - h2(1.0 - e)).abs() <= 1e-12);
        }

        #[test]
        fn entropy_concave(e1 in 0.0f64..=1.0, e2 in 0.0f64..=1.0, lambda in 0.0f64..=1.0) {
            let mix = h2(lambda * e1 + (1.0 - lambda) * e2);
            prop_assert!(mix >= lambda * h2(e1) + (1.0 - lambda) * h2(e2) - 1e-12);
        }

        #[test]
        fn photon_classes_partition_unity(mu in 1e-6f64..20.0) {
            let s = PoissonSource::new(mu).unwrap();
            let total = poisson_pmf(&s, 0).get() + poisson_pmf(&s, 1).get() + multi_photon_fraction(&s).get();
            prop_assert!((total - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn transmittance_monotone(alpha in 0.0f64..1.0, d in 0.0f64..300.0, step in 0.0f64..50.0) {
            let eff = p(0.3);
            prop_assert!(channel_transmittance(alpha, d + step, eff) <= channel_transmittance(alpha, d, eff));
            prop_assert!(channel_transmittance(alpha + step / 100.0, d, eff) <= channel_transmittance(alpha, d, eff));
        }
    }
}
