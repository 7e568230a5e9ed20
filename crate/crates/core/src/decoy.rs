//! Decoy-state BB84 with one signal and two decoy intensities.
//!
//! The channel model is the usual asymptotic one: a lossy channel of
//! transmittance `η`, a background yield `Y_0 = d`, a systematic error
//! `e_det` on every signal detection and random bits on background clicks.
//! The gains it produces feed the standard lower bounds on the single-photon
//! yield and error rate, the upper bounds on the vacuum and single-photon
//! fractions, and from those the minimum multi-photon fraction of the sifted
//! key that scales the leakage credit.

use log::debug;

use crate::cascade::BlockHistogram;
use crate::error::{invalid, Result};
use crate::leakage::{leaked_useful_bound, LeakageBreakdown};
use crate::math::{channel_transmittance, h2, Probability};
use crate::skr::SkrBreakdown;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoyParams {
    /// Signal mean photon number.
    pub mu: f64,
    pub nu1: f64,
    /// Weak (near-vacuum) decoy.
    pub nu2: f64,
    /// Sifting efficiency.
    pub q: f64,
    pub alpha_db_per_km: f64,
    /// Dark count probability per gate.
    pub d: f64,
    pub eta_d: f64,
    pub e_det: f64,
}

impl DecoyParams {
    /// Reference operating point: μ=0.4, ν1=0.1, ν2=0.0007,
    /// q=0.9, 0.2 dB/km, d=1e-5, η_d=20%, e_det=3.3%.
    pub fn reference() -> Self {
        DecoyParams {
            mu: 0.4,
            nu1: 0.1,
            nu2: 0.0007,
            q: 0.9,
            alpha_db_per_km: 0.20,
            d: 1e-5,
            eta_d: 0.2,
            e_det: 0.033,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > self.nu1 && self.nu1 > self.nu2 && self.nu2 >= 0.0) {
            return Err(invalid("mu/nu1/nu2", "require mu > nu1 > nu2 >= 0"));
        }
        if self.nu1 + self.nu2 >= self.mu {
            return Err(invalid("mu/nu1/nu2", "require nu1 + nu2 < mu"));
        }
        for (name, value) in [("q", self.q), ("d", self.d), ("eta_d", self.eta_d), ("e_det", self.e_det)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(invalid(name, format!("{value} outside [0, 1]")));
            }
        }
        if !(self.alpha_db_per_km >= 0.0 && self.alpha_db_per_km.is_finite()) {
            return Err(invalid("alpha", "channel loss must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Gains and error rates seen at one distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoyObservables {
    pub eta: f64,
    pub y0: f64,
    pub q_mu: f64,
    pub q_nu1: f64,
    pub q_nu2: f64,
    pub e_mu: f64,
    pub e_nu1: f64,
    pub e_nu2: f64,
}

fn clamp_logged(name: &str, value: f64) -> f64 {
    let c = Probability::clamped(value).get();
    if c != value {
        debug!("clamped {name} from {value:e} to {c:e}");
    }
    c
}

fn gain_and_qber(x: f64, eta: f64, y0: f64, e_det: f64) -> (f64, f64) {
    // 1 - e^{-ηx} via expm1 to stay accurate when ηx is tiny.
    let signal = -(-eta * x).exp_m1();
    let gain = clamp_logged("gain", y0 + signal);
    let errors = 0.5 * y0 + e_det * signal;
    let qber = if gain > 0.0 { clamp_logged("qber", errors / gain) } else { 0.5 };
    (gain, qber)
}

/// Asymptotic observables: `Q_x = Y_0 + 1 − e^{−ηx}`, `E_x Q_x = Y_0/2 + e_det(1 − e^{−ηx})`.
pub fn simulate_observables(params: &DecoyParams, distance_km: f64) -> DecoyObservables {
    let eta = channel_transmittance(
        params.alpha_db_per_km,
        distance_km.max(0.0),
        Probability::clamped(params.eta_d),
    )
    .get();
    let y0 = params.d;
    let (q_mu, e_mu) = gain_and_qber(params.mu, eta, y0, params.e_det);
    let (q_nu1, e_nu1) = gain_and_qber(params.nu1, eta, y0, params.e_det);
    let (q_nu2, e_nu2) = gain_and_qber(params.nu2, eta, y0, params.e_det);
    DecoyObservables { eta, y0, q_mu, q_nu1, q_nu2, e_mu, e_nu1, e_nu2 }
}

/// Yields and photon-number fractions the channel model actually produces.
///
/// Only used to check estimators; the rate formulas never see these.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelTruth {
    pub y0: f64,
    pub y1: f64,
    pub e1: f64,
    pub delta0: f64,
    pub delta1: f64,
    pub delta_multi: f64,
}

pub fn model_truth(params: &DecoyParams, obs: &DecoyObservables) -> ModelTruth {
    let y0 = obs.y0;
    let y1 = y0 + obs.eta;
    let e1 = (0.5 * y0 + params.e_det * obs.eta) / y1;
    let delta0 = y0 * (-params.mu).exp() / obs.q_mu;
    let delta1 = y1 * params.mu * (-params.mu).exp() / obs.q_mu;
    ModelTruth {
        y0,
        y1,
        e1,
        delta0,
        delta1,
        delta_multi: (1.0 - delta0 - delta1).max(0.0),
    }
}

/// Upper bounds `(Y_1^max, Δ_1^max)` from the two decoy gains.
pub fn upper_bound_y1_delta1(obs: &DecoyObservables, params: &DecoyParams) -> Result<(f64, f64)> {
    let spread = params.nu1 - params.nu2;
    if spread <= 0.0 {
        return Err(invalid("nu1/nu2", "upper bound on Y1 needs nu1 > nu2"));
    }
    let y1_max = clamp_logged(
        "y1_max",
        (obs.q_nu1 * params.nu1.exp() - obs.q_nu2 * params.nu2.exp()) / spread,
    );
    let delta1_max = clamp_logged("delta1_max", y1_max * params.mu * (-params.mu).exp() / obs.q_mu);
    Ok((y1_max, delta1_max))
}

/// Upper bounds `(Y_0^max, Δ_0^max)` given the single-photon yield lower bound.
pub fn upper_bound_y0_delta0(obs: &DecoyObservables, params: &DecoyParams, y1_min: f64) -> (f64, f64) {
    let y0_max = clamp_logged("y0_max", obs.q_nu2 * params.nu2.exp() - y1_min * params.nu2);
    let delta0_max = clamp_logged("delta0_max", y0_max * (-params.mu).exp() / obs.q_mu);
    (y0_max, delta0_max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LowerBounds {
    pub y0_min: f64,
    pub y1_min: f64,
    pub e1_max: f64,
    pub delta0_min: f64,
    pub delta1_min: f64,
    /// `y1_min <= 0`: no single-photon contribution can be certified.
    pub vacuum_dominated: bool,
}

/// Vacuum-plus-weak-decoy lower bounds on `Y_0`, `Y_1` and upper bound on `e_1`.
pub fn lower_bounds(obs: &DecoyObservables, params: &DecoyParams) -> Result<LowerBounds> {
    params.validate()?;
    let (mu, nu1, nu2) = (params.mu, params.nu1, params.nu2);
    let w1 = obs.q_nu1 * nu1.exp();
    let w2 = obs.q_nu2 * nu2.exp();
    let y0_min = ((nu1 * w2 - nu2 * w1) / (nu1 - nu2)).max(0.0);
    let denom = mu * nu1 - mu * nu2 - nu1 * nu1 + nu2 * nu2;
    let y1_raw = mu / denom
        * (w1 - w2 - (nu1 * nu1 - nu2 * nu2) / (mu * mu) * (obs.q_mu * mu.exp() - y0_min));
    let vacuum_dominated = y1_raw <= 0.0;
    if vacuum_dominated {
        debug!("vacuum-dominated regime: y1_min = {y1_raw:e}");
    }
    let y1_min = clamp_logged("y1_min", y1_raw);
    let e1_max = if y1_min > 0.0 {
        // Past one half the bound is vacuous; H2 would start decreasing.
        clamp_logged(
            "e1_max",
            (obs.e_nu1 * w1 - obs.e_nu2 * w2) / ((nu1 - nu2) * y1_min),
        )
        .min(0.5)
    } else {
        0.5
    };
    Ok(LowerBounds {
        y0_min,
        y1_min,
        e1_max,
        delta0_min: clamp_logged("delta0_min", y0_min * (-mu).exp() / obs.q_mu),
        delta1_min: clamp_logged("delta1_min", y1_min * mu * (-mu).exp() / obs.q_mu),
        vacuum_dominated,
    })
}

/// Every bound the improved rate needs at one operating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoyBounds {
    pub y1_min: f64,
    pub e1_max: f64,
    pub delta0_min: f64,
    pub delta1_min: f64,
    pub y1_max: f64,
    pub delta1_max: f64,
    pub y0_max: f64,
    pub delta0_max: f64,
    /// `max(0, 1 − Δ_0^max − Δ_1^max)`.
    pub delta_multi_min: f64,
    pub vacuum_dominated: bool,
}

pub fn estimate_bounds(obs: &DecoyObservables, params: &DecoyParams) -> Result<DecoyBounds> {
    let lower = lower_bounds(obs, params)?;
    let (y1_max, delta1_max) = upper_bound_y1_delta1(obs, params)?;
    let (y0_max, delta0_max) = upper_bound_y0_delta0(obs, params, lower.y1_min);
    Ok(DecoyBounds {
        y1_min: lower.y1_min,
        e1_max: lower.e1_max,
        delta0_min: lower.delta0_min,
        delta1_min: lower.delta1_min,
        y1_max,
        delta1_max,
        y0_max,
        delta0_max,
        delta_multi_min: (1.0 - delta0_max - delta1_max).max(0.0),
        vacuum_dominated: lower.vacuum_dominated,
    })
}

/// Original and improved key rate per pulse.
///
/// `hist` is the block-length histogram of reconciling `n` bits at QBER `E_μ`.
/// The original rate charges `leaked_all / n` per bit; the improved one charges
/// only `Σ_l (|C^l|/n) min(1 − (Δ_multi^min)^l, 1)`.
pub fn skr_decoy(
    params: &DecoyParams,
    obs: &DecoyObservables,
    bounds: &DecoyBounds,
    hist: &BlockHistogram,
    n: usize,
) -> SkrBreakdown {
    let n = n as f64;
    let private = bounds.delta1_min * (1.0 - h2(bounds.e1_max)) + bounds.delta0_min;
    let delta_min = Probability::clamped(bounds.delta_multi_min);
    let leakage = LeakageBreakdown::from_histogram(hist, delta_min);
    let leaked_all = hist.total() / n;
    let leaked_useful = leaked_useful_bound(hist, delta_min) / n;
    let scale = params.q * obs.q_mu;
    SkrBreakdown {
        r_original: scale * (private - leaked_all).max(0.0),
        r_improved: scale * (private - leaked_useful).max(0.0),
        qber: obs.e_mu,
        delta_multi_min: bounds.delta_multi_min,
        leaked_all_per_bit: leaked_all,
        leaked_multi_per_bit: leakage.leaked_multi / n,
        leaked_useful_per_bit: leaked_useful,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn lossless_noiseless_gain() {
        let params = DecoyParams { d: 0.0, ..DecoyParams::reference() };
        let obs = simulate_observables(&params, 0.0);
        assert_abs_diff_eq!(obs.q_mu, 1.0 - (-0.2f64 * 0.4).exp(), epsilon = 1e-15);
    }

    #[test]
    fn reference_point_at_50_km() {
        let obs = simulate_observables(&DecoyParams::reference(), 50.0);
        assert_abs_diff_eq!(obs.eta, 0.02, epsilon = 1e-15);
        // mpmath: 1e-5 + 1 - exp(-0.008)
        assert_abs_diff_eq!(obs.q_mu, 7.978_085_162_939_37e-3, epsilon = 1e-15);
    }

    #[test]
    fn dark_count_limit() {
        let obs = simulate_observables(&DecoyParams::reference(), 5000.0);
        assert_abs_diff_eq!(obs.q_mu, 1e-5, epsilon = 1e-15);
        assert_abs_diff_eq!(obs.e_mu, 0.5, epsilon = 1e-9);
    }

    #[test]
    fn sandwich_at_50_km() {
        let params = DecoyParams::reference();
        let obs = simulate_observables(&params, 50.0);
        let truth = model_truth(&params, &obs);
        let b = estimate_bounds(&obs, &params).unwrap();
        assert!(b.y1_min <= truth.y1 && truth.y1 <= b.y1_max);
        assert!(b.y0_max >= truth.y0);
        assert!(b.delta_multi_min <= truth.delta_multi);
        assert!(b.e1_max >= truth.e1 - 1e-12);
    }

    #[test]
    fn degenerate_decoy_gains() {
        let params = DecoyParams::reference();
        let mut obs = simulate_observables(&params, 50.0);
        obs.q_nu1 = obs.q_nu2 * params.nu2.exp() / params.nu1.exp();
        assert_eq!(upper_bound_y1_delta1(&obs, &params).unwrap().0, 0.0);
        let bad = DecoyParams { nu1: 0.0007, ..params };
        assert!(upper_bound_y1_delta1(&obs, &bad).is_err());
    }

    #[test]
    fn vacuum_decoy_substitutions() {
        let params = DecoyParams { nu2: 0.0, ..DecoyParams::reference() };
        let obs = simulate_observables(&params, 30.0);
        let (y1_max, _) = upper_bound_y1_delta1(&obs, &params).unwrap();
        assert_abs_diff_eq!(y1_max, (obs.q_nu1 * params.nu1.exp() - obs.y0) / params.nu1, epsilon = 1e-15);
        let (y0_max, _) = upper_bound_y0_delta0(&obs, &params, 0.3);
        assert_eq!(y0_max, obs.q_nu2);
        let lb = lower_bounds(&obs, &params).unwrap();
        assert_abs_diff_eq!(lb.y0_min, obs.q_nu2, epsilon = 1e-18);
        let (y0_max, _) = upper_bound_y0_delta0(&obs, &DecoyParams::reference(), 0.0);
        assert_eq!(y0_max, obs.q_nu2 * 0.0007f64.exp());
    }

    #[test]
    fn error_free_limit() {
        let params = DecoyParams { d: 0.0, e_det: 0.0, ..DecoyParams::reference() };
        let obs = simulate_observables(&params, 40.0);
        let lb = lower_bounds(&obs, &params).unwrap();
        assert_eq!(lb.e1_max, 0.0);
    }

    #[test]
    fn invalid_params_rejected() {
        let obs = simulate_observables(&DecoyParams::reference(), 10.0);
        for bad in [
            DecoyParams { nu1: 0.5, ..DecoyParams::reference() },
            DecoyParams { nu2: 0.35, nu1: 0.36, ..DecoyParams::reference() },
            DecoyParams { q: 1.5, ..DecoyParams::reference() },
            DecoyParams { alpha_db_per_km: -1.0, ..DecoyParams::reference() },
        ] {
            assert!(lower_bounds(&obs, &bad).is_err());
        }
    }

    #[test]
    fn rate_collapses_without_multi_credit() {
        let params = DecoyParams::reference();
        let obs = simulate_observables(&params, 20.0);
        let mut b = estimate_bounds(&obs, &params).unwrap();
        b.delta_multi_min = 0.0;
        let hist = BlockHistogram::from_counts(1000, [(1, 50.0), (8, 100.0)]).unwrap();
        let r = skr_decoy(&params, &obs, &b, &hist, 1000);
        assert_eq!(r.r_improved, r.r_original);
        assert!(r.r_original > 0.0);
    }

    #[test]
    fn length_one_blocks_scale_by_complement() {
        let params = DecoyParams::reference();
        let obs = simulate_observables(&params, 20.0);
        let mut b = estimate_bounds(&obs, &params).unwrap();
        b.delta_multi_min = 0.3;
        let hist = BlockHistogram::from_counts(1000, [(1, 150.0)]).unwrap();
        let r = skr_decoy(&params, &obs, &b, &hist, 1000);
        assert_abs_diff_eq!(r.leaked_useful_per_bit, 0.7 * r.leaked_all_per_bit, epsilon = 1e-15);
        let private = b.delta1_min * (1.0 - h2(b.e1_max)) + b.delta0_min;
        assert_abs_diff_eq!(r.r_improved, params.q * obs.q_mu * (private - 0.7 * 0.15), epsilon = 1e-15);
    }
}
