//! Decoy-state BB84 secret key rate model.
//!
//! Asymptotic GLLP form with ideal decoy estimation of the single-photon
//! gain and error rate. Noise per gate is the dark count probability plus,
//! on links that share the fibre with classical data, the residual Raman
//! contribution left after receiver filtering.

use serde::{Deserialize, Serialize};

use crate::topology::LinkProfile;

/// Fraction of detections surviving basis reconciliation with a biased
/// basis choice.
pub const SIFTING_FACTOR: f64 = 0.9;
/// Error rate of a detection caused purely by noise.
const NOISE_ERROR: f64 = 0.5;
/// Links abort key generation at or above this QBER.
pub const QBER_ABORT_THRESHOLD: f64 = 0.11;
/// Scale of the finite-size deduction `Δ = C·sqrt(log2(1/ε)/n)`.
pub const FINITE_KEY_SCALE: f64 = 10.0;

/// Physical and protocol parameters of a QKD system pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QkdSystemParams {
    pub clock_rate_hz: f64,
    pub mean_photon_number: f64,
    pub detector_efficiency: f64,
    pub dark_count_prob_per_gate: f64,
    pub misalignment_error: f64,
    pub error_correction_inefficiency: f64,
    /// Residual Raman noise per gate after filtering; applied only when the
    /// link carries co-propagating data.
    pub raman_noise_per_gate: f64,
    pub failure_probability: f64,
    pub block_size_bits: u64,
    /// Storage bound for unconsumed key at each endpoint. Completed blocks
    /// that would overflow it are discarded.
    pub buffer_capacity_bytes: u64,
}

impl Default for QkdSystemParams {
    fn default() -> Self {
        QkdSystemParams {
            clock_rate_hz: 1e9,
            mean_photon_number: 0.5,
            detector_efficiency: 0.2,
            dark_count_prob_per_gate: 1e-6,
            misalignment_error: 0.01,
            error_correction_inefficiency: 1.16,
            raman_noise_per_gate: 5e-7,
            failure_probability: 1e-10,
            block_size_bits: 1_000_000,
            buffer_capacity_bytes: 1_000_000,
        }
    }
}

impl QkdSystemParams {
    pub fn validate(&self) -> Result<(), String> {
        let checks: [(bool, &str); 10] = [
            (self.clock_rate_hz.is_finite() && self.clock_rate_hz > 0.0, "clock_rate_hz must be positive"),
            (
                self.mean_photon_number.is_finite() && self.mean_photon_number > 0.0,
                "mean_photon_number must be positive",
            ),
            (
                self.detector_efficiency > 0.0 && self.detector_efficiency <= 1.0,
                "detector_efficiency must be in (0, 1]",
            ),
            (
                self.dark_count_prob_per_gate >= 0.0 && self.dark_count_prob_per_gate <= 1.0,
                "dark_count_prob_per_gate must be a probability",
            ),
            (
                self.misalignment_error >= 0.0 && self.misalignment_error < 0.5,
                "misalignment_error must be in [0, 0.5)",
            ),
            (
                self.error_correction_inefficiency >= 1.0 && self.error_correction_inefficiency.is_finite(),
                "error_correction_inefficiency must be >= 1",
            ),
            (
                self.raman_noise_per_gate >= 0.0 && self.raman_noise_per_gate <= 1.0,
                "raman_noise_per_gate must be a probability",
            ),
            (
                self.failure_probability > 0.0 && self.failure_probability < 1.0,
                "failure_probability must be in (0, 1)",
            ),
            (self.block_size_bits >= 10_000, "block_size_bits must be at least 1e4"),
            (
                self.block_size_bits % 8 == 0 && self.buffer_capacity_bytes >= self.block_size_bits / 8,
                "block_size_bits must be byte aligned and fit in buffer_capacity_bytes",
            ),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, why)) => Err((*why).to_string()),
            None => Ok(()),
        }
    }

    pub fn block_size_bytes(&self) -> usize {
        (self.block_size_bits / 8) as usize
    }
}

/// Shannon binary entropy, saturating at 1 for `x >= 0.5`.
pub fn binary_entropy(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x >= 0.5 {
        1.0
    } else {
        -x * x.log2() - (1.0 - x) * (1.0 - x).log2()
    }
}

/// Channel transmittance including detector efficiency.
pub fn transmittance(profile: &LinkProfile, params: &QkdSystemParams) -> f64 {
    10f64.powf(-profile.loss_coeff_db_per_km * profile.length_km / 10.0) * params.detector_efficiency
}

fn noise_per_gate(profile: &LinkProfile, params: &QkdSystemParams) -> f64 {
    let raman = if profile.co_propagating_data {
        params.raman_noise_per_gate
    } else {
        0.0
    };
    params.dark_count_prob_per_gate + raman
}

#[derive(Debug, Clone, Copy)]
struct Gains {
    eta: f64,
    noise: f64,
    /// Detection probability from the signal alone.
    signal: f64,
    /// Overall signal-state gain.
    gain: f64,
    qber: f64,
}

fn gains(profile: &LinkProfile, params: &QkdSystemParams) -> Gains {
    let eta = transmittance(profile, params);
    let noise = noise_per_gate(profile, params);
    let signal = 1.0 - (-params.mean_photon_number * eta).exp();
    let gain = noise + signal;
    let qber = if gain <= 0.0 {
        NOISE_ERROR
    } else {
        (params.misalignment_error * signal + NOISE_ERROR * noise) / gain
    };
    Gains {
        eta,
        noise,
        signal,
        gain,
        qber,
    }
}

/// Quantum bit error rate of the signal state.
pub fn qber(profile: &LinkProfile, params: &QkdSystemParams) -> f64 {
    gains(profile, params).qber
}

/// Asymptotic secret key rate in bits per second, floored at zero.
pub fn secret_key_rate(profile: &LinkProfile, params: &QkdSystemParams) -> f64 {
    let g = gains(profile, params);
    debug_assert!(g.signal <= g.gain);
    let mu = params.mean_photon_number;
    let single_yield = g.noise + g.eta - g.noise * g.eta;
    let single_error = if single_yield <= 0.0 {
        NOISE_ERROR
    } else {
        (NOISE_ERROR * g.noise + params.misalignment_error * g.eta) / single_yield
    };
    let single_gain = single_yield * mu * (-mu).exp();
    let per_pulse = single_gain * (1.0 - binary_entropy(single_error))
        - params.error_correction_inefficiency * g.gain * binary_entropy(g.qber);
    params.clock_rate_hz * SIFTING_FACTOR * per_pulse.max(0.0)
}

/// Fractional finite-size deduction for the configured block size and
/// failure probability.
pub fn finite_key_deduction(params: &QkdSystemParams) -> f64 {
    FINITE_KEY_SCALE * ((1.0 / params.failure_probability).log2() / params.block_size_bits as f64).sqrt()
}

/// Rate after the finite-size deduction, floored at zero.
pub fn finite_key_rate(profile: &LinkProfile, params: &QkdSystemParams) -> f64 {
    secret_key_rate(profile, params) * (1.0 - finite_key_deduction(params)).max(0.0)
}
