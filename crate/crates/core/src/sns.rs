//! Sending-or-not-sending twin-field QKD.
//!
//! Alice and Bob each sit `L/2` from a central measurement station. In a Z
//! window each party sends a phase-randomized coherent pulse with probability
//! `ε` (bit value by convention) or nothing; a single click heralds a bit. X
//! windows carry decoy pulses used to bound the single-photon count rates.
//!
//! The observable model here is asymptotic: threshold detectors with dark
//! probability `d` each, so the station clicks on background with
//! `p_d = 2d(1−d)`; an arriving mean photon number `ι` clicks with
//! `1 − (1−p_d)e^{−ι}`. When both parties send, the pulses add in intensity
//! (random relative phase).

use log::debug;

use crate::cascade::BlockHistogram;
use crate::error::{invalid, Result};
use crate::leakage::LeakageBreakdown;
use crate::math::{channel_transmittance, h2, Probability};
use crate::skr::SkrBreakdown;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnsParams {
    pub pz_a: f64,
    pub pz_b: f64,
    /// Sending probabilities in Z windows.
    pub eps_a: f64,
    pub eps_b: f64,
    /// Z-window sending intensities.
    pub mu_a: f64,
    pub mu_b: f64,
    /// X-window decoy intensities, `mu_a2 > mu_a1 > 0`.
    pub mu_a1: f64,
    pub mu_a2: f64,
    pub mu_b1: f64,
    pub mu_b2: f64,
    /// X-window misalignment error.
    pub e_d: f64,
    pub alpha_db_per_km: f64,
    pub d: f64,
    pub eta_d: f64,
    /// Carried for parameter-file parity with decoy BB84; the SNS model does not use it.
    pub e_det: f64,
}

impl SnsParams {
    /// Z-window choices `P_A^Z=0.7, P_B^Z=0.8, ε_A=0.022, ε_B=0.48, μ_A=0.042,
    /// μ_B=0.425`, `e_d=5%`, 0.2 dB/km, `d=1e-10`, `η_d=50%`. Decoys default to
    /// `(μ, 2μ)` per side.
    pub fn reference() -> Self {
        let (mu_a, mu_b) = (0.042, 0.425);
        SnsParams {
            pz_a: 0.7,
            pz_b: 0.8,
            eps_a: 0.022,
            eps_b: 0.48,
            mu_a,
            mu_b,
            mu_a1: mu_a,
            mu_a2: 2.0 * mu_a,
            mu_b1: mu_b,
            mu_b2: 2.0 * mu_b,
            e_d: 0.05,
            alpha_db_per_km: 0.20,
            d: 1e-10,
            eta_d: 0.5,
            e_det: 0.033,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu_a2 > self.mu_a1 && self.mu_a1 > 0.0) {
            return Err(invalid("mu_a1/mu_a2", "require mu_a2 > mu_a1 > 0"));
        }
        if !(self.mu_b2 > self.mu_b1 && self.mu_b1 > 0.0) {
            return Err(invalid("mu_b1/mu_b2", "require mu_b2 > mu_b1 > 0"));
        }
        if !(self.mu_a > 0.0 && self.mu_b > 0.0) {
            return Err(invalid("mu_a/mu_b", "sending intensities must be > 0"));
        }
        for (name, value) in [
            ("pz_a", self.pz_a),
            ("pz_b", self.pz_b),
            ("eps_a", self.eps_a),
            ("eps_b", self.eps_b),
            ("e_d", self.e_d),
            ("d", self.d),
            ("eta_d", self.eta_d),
            ("e_det", self.e_det),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(invalid(name, format!("{value} outside [0, 1]")));
            }
        }
        if !(self.alpha_db_per_km >= 0.0 && self.alpha_db_per_km.is_finite()) {
            return Err(invalid("alpha", "channel loss must be finite and >= 0"));
        }
        Ok(())
    }

    /// Photon-number masses of a Z window, `(P_0, P_1)`.
    pub fn photon_masses(&self) -> (f64, f64) {
        let (ea, eb) = (self.eps_a, self.eps_b);
        let (ma, mb) = (self.mu_a, self.mu_b);
        let both = ma + mb;
        let p0 = ea * (1.0 - eb) * (-ma).exp()
            + eb * (1.0 - ea) * (-mb).exp()
            + ea * eb * (-both).exp()
            + (1.0 - ea) * (1.0 - eb);
        let p1 = ea * (1.0 - eb) * ma * (-ma).exp()
            + eb * (1.0 - ea) * mb * (-mb).exp()
            + ea * eb * both * (-both).exp();
        (p0, p1)
    }

    /// Weight of single-photon Z windows that yield a usable bit.
    fn single_photon_weight(&self) -> f64 {
        self.eps_a * (1.0 - self.eps_b) * self.mu_a * (-self.mu_a).exp()
            + self.eps_b * (1.0 - self.eps_a) * self.mu_b * (-self.mu_b).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnsObservables {
    /// Per-arm transmittance.
    pub eta: f64,
    pub p_dark: f64,
    pub s00: f64,
    pub s10: f64,
    pub s01: f64,
    pub s20: f64,
    pub s02: f64,
    pub sz: f64,
    pub ez: f64,
    pub s1z_true: f64,
    pub s0z_true: f64,
    pub e1_ph: f64,
}

pub fn simulate_sns_observables(params: &SnsParams, distance_km: f64) -> SnsObservables {
    let eta = channel_transmittance(
        params.alpha_db_per_km,
        distance_km.max(0.0) / 2.0,
        Probability::clamped(params.eta_d),
    )
    .get();
    let p_dark = 2.0 * params.d * (1.0 - params.d);
    // p_d + (1 − p_d)(1 − e^{−ι}); avoids cancelling p_d against 1.
    let click = |intensity: f64| Probability::clamped(p_dark - (1.0 - p_dark) * (-intensity).exp_m1()).get();
    let (ea, eb) = (params.eps_a, params.eps_b);
    let both = click((params.mu_a + params.mu_b) * eta);
    let none = (1.0 - ea) * (1.0 - eb) * p_dark;
    let sz = ea * (1.0 - eb) * click(params.mu_a * eta)
        + eb * (1.0 - ea) * click(params.mu_b * eta)
        + ea * eb * both
        + none;
    let errors = ea * eb * both + none;
    let ez = if sz > 0.0 { (errors / sz).clamp(0.0, 1.0) } else { 0.5 };
    let e1_ph = if eta + p_dark > 0.0 {
        (params.e_d + 0.5 * p_dark / (eta + p_dark)).clamp(0.0, 0.5)
    } else {
        0.5
    };
    SnsObservables {
        eta,
        p_dark,
        s00: click(0.0),
        s10: click(params.mu_a1 * eta),
        s01: click(params.mu_b1 * eta),
        s20: click(params.mu_a2 * eta),
        s02: click(params.mu_b2 * eta),
        sz: Probability::clamped(sz).get(),
        ez,
        s1z_true: Probability::clamped(p_dark + (1.0 - p_dark) * eta).get(),
        s0z_true: p_dark,
        e1_ph,
    }
}

/// Upper bounds `(s_10, s_01)` on the single-photon count rates from each side.
pub fn single_photon_upper_bounds(params: &SnsParams, obs: &SnsObservables) -> Result<(f64, f64)> {
    if params.mu_a2 == params.mu_a1 {
        return Err(invalid("mu_a1/mu_a2", "decoy intensities must differ"));
    }
    if params.mu_b2 == params.mu_b1 {
        return Err(invalid("mu_b1/mu_b2", "decoy intensities must differ"));
    }
    let s10 = (params.mu_a2.exp() * obs.s20 - params.mu_a1.exp() * obs.s10) / (params.mu_a2 - params.mu_a1);
    let s01 = (params.mu_b2.exp() * obs.s02 - params.mu_b1.exp() * obs.s01) / (params.mu_b2 - params.mu_b1);
    Ok((s10, s01))
}

/// Mixture of the two one-sided single-photon bounds, weighted by the first decoys.
pub fn single_photon_rate_upper(params: &SnsParams, obs: &SnsObservables) -> Result<f64> {
    let (s10, s01) = single_photon_upper_bounds(params, obs)?;
    let total = params.mu_a1 + params.mu_b1;
    Ok(params.mu_a1 / total * s10 + params.mu_b1 / total * s01)
}

/// Which single-photon count rate enters `Δ_multi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SinglePhotonRate {
    /// Decoy upper bound from X-window observations.
    Estimated,
    /// The channel model's own value.
    ModelTrue,
}

/// How the photon-number-resolved count rates become a multi-photon fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MultiFractionForm {
    /// `1 − P_1 s_1 − P_0 s_0`, per emitted Z window.
    #[default]
    PerWindow,
    /// `1 − (P_1 s_1 + P_0 s_0) / s_z`, per detected Z bit.
    PerDetection,
}

impl MultiFractionForm {
    pub fn as_str(&self) -> &'static str {
        match self {
            MultiFractionForm::PerWindow => "per-window",
            MultiFractionForm::PerDetection => "per-detection",
        }
    }
}

impl std::str::FromStr for MultiFractionForm {
    type Err = crate::error::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-window" => Ok(MultiFractionForm::PerWindow),
            "per-detection" => Ok(MultiFractionForm::PerDetection),
            other => Err(invalid("delta_multi_form", format!("unknown form `{other}`"))),
        }
    }
}

/// Multi-photon fraction of Z windows. With [`SinglePhotonRate::Estimated`]
/// this is the lower bound `Δ_multi^min` used by the improved rate.
pub fn delta_multi_z(
    params: &SnsParams,
    obs: &SnsObservables,
    rate: SinglePhotonRate,
    form: MultiFractionForm,
) -> Result<Probability> {
    let (p0, p1) = params.photon_masses();
    let s0 = obs.s00;
    let s1 = match rate {
        SinglePhotonRate::Estimated => single_photon_rate_upper(params, obs)?,
        SinglePhotonRate::ModelTrue => obs.s1z_true,
    };
    let known = p1 * s1 + p0 * s0;
    let value = match form {
        MultiFractionForm::PerWindow => 1.0 - known,
        MultiFractionForm::PerDetection if obs.sz > 0.0 => 1.0 - known / obs.sz,
        MultiFractionForm::PerDetection => 0.0,
    };
    let clamped = Probability::clamped(value);
    if clamped.get() != value {
        debug!("clamped SNS delta_multi from {value:e}");
    }
    Ok(clamped)
}

/// Original and improved SNS key rate per pulse.
///
/// Both charge the reconciliation leakage of the histogram (so `f_ec` is
/// whatever the histogram embodies; a histogram normalized to `n·H2(E_z)`
/// gives `f_ec = 1`), scaled by the Z-window count rate `s_z`.
pub fn skr_sns(
    params: &SnsParams,
    obs: &SnsObservables,
    delta_multi_min: Probability,
    hist: &BlockHistogram,
    n: usize,
) -> SkrBreakdown {
    let nf = n as f64;
    let private = params.single_photon_weight() * obs.s1z_true * (1.0 - h2(obs.e1_ph));
    let leakage = LeakageBreakdown::from_histogram(hist, delta_multi_min).per_bit(n);
    let leaked_all = hist.total() / nf;
    let scale = params.pz_a * params.pz_b;
    SkrBreakdown {
        r_original: scale * (private - obs.sz * leaked_all).max(0.0),
        r_improved: scale * (private - obs.sz * leakage.leaked_useful).max(0.0),
        qber: obs.ez,
        delta_multi_min: delta_multi_min.get(),
        leaked_all_per_bit: leaked_all,
        leaked_multi_per_bit: leakage.leaked_multi,
        leaked_useful_per_bit: leakage.leaked_useful,
    }
}
