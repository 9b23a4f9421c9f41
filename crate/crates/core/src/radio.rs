//! Link budget: Friis received power, Shannon-Hartley rate, and the energy a
//! node spends to push one model of `S` bits to a neighbor.
//!
//! Everything here is in linear units (W, Hz, linear gain). The dB helpers at
//! the bottom are for config parsing only.

use crate::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 3.0e8;

/// Radio parameters of one directed link (sender transmit side, receiver gain).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadioParams {
    /// Transmit power, W.
    pub p_tx: f64,
    /// Allocated bandwidth, Hz.
    pub bandwidth: f64,
    /// Transmit antenna gain (linear).
    pub g_tx: f64,
    /// Receive antenna gain (linear).
    pub g_rx: f64,
    /// Carrier frequency, Hz.
    pub freq: f64,
    /// Path-loss exponent; 2 is free space.
    pub env_exp: f64,
    /// Noise power spectral density, W/Hz.
    pub noise_density: f64,
    /// Communication range, m.
    pub d_max: f64,
    /// m/s
    pub light_speed: f64,
}

impl RadioParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("transmit power", self.p_tx),
            ("bandwidth", self.bandwidth),
            ("transmit gain", self.g_tx),
            ("receive gain", self.g_rx),
            ("frequency", self.freq),
            ("noise density", self.noise_density),
            ("range", self.d_max),
            ("speed of light", self.light_speed),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, alloc::format!("must be positive, got {v}")));
            }
        }
        if !(self.env_exp >= 2.0 && self.env_exp.is_finite()) {
            return Err(Error::invalid(
                "environment exponent",
                alloc::format!("must be >= 2, got {}", self.env_exp),
            ));
        }
        Ok(())
    }

    /// `(c / 4 pi f)^2`
    fn wavelength_factor(&self) -> f64 {
        let a = self.light_speed / (4.0 * core::f64::consts::PI * self.freq);
        a * a
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkBudget {
    /// W
    pub p_rx: f64,
    /// bit/s
    pub rate: f64,
    /// J
    pub energy: f64,
    /// `energy / E_max`
    pub energy_scaled: f64,
}

fn check_distance(distance: f64) -> Result<()> {
    if distance > 0.0 && distance.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveDistance(distance))
    }
}

/// Friis: `P_t G_t G_r (c / 4 pi f)^2 d^-n`.
pub fn received_power(params: &RadioParams, distance: f64) -> Result<f64> {
    check_distance(distance)?;
    Ok(params.p_tx
        * params.g_tx
        * params.g_rx
        * params.wavelength_factor()
        * libm::pow(distance, -params.env_exp))
}

/// Channel gain in dB, `10 log10(P_r / P_t)`.
pub fn channel_gain_db(params: &RadioParams, distance: f64) -> Result<f64> {
    Ok(10.0 * libm::log10(received_power(params, distance)? / params.p_tx))
}

/// Shannon-Hartley: `B log2(1 + P_r / (N_0 B))`.
pub fn data_rate(params: &RadioParams, p_rx: f64) -> f64 {
    debug_assert!(p_rx >= 0.0);
    let snr = p_rx / (params.noise_density * params.bandwidth);
    params.bandwidth * libm::log2(1.0 + snr)
}

/// Energy to transmit `payload_bits` over `distance`: `P_t S / r`.
pub fn tx_energy(params: &RadioParams, distance: f64, payload_bits: f64) -> Result<f64> {
    let rate = data_rate(params, received_power(params, distance)?);
    Ok(params.p_tx * payload_bits / rate)
}

/// Energy to reach a receiver at the range edge.
pub fn max_energy(params: &RadioParams, payload_bits: f64) -> Result<f64> {
    tx_energy(params, params.d_max, payload_bits)
}

/// `E(d) / E(d_max)`, in `(0, 1]` for links inside the range.
pub fn scaled_energy(params: &RadioParams, distance: f64, payload_bits: f64) -> Result<f64> {
    check_distance(distance)?;
    if distance > params.d_max {
        return Err(Error::OutOfRange {
            distance,
            d_max: params.d_max,
        });
    }
    if distance == params.d_max {
        return Ok(1.0);
    }
    Ok(tx_energy(params, distance, payload_bits)? / max_energy(params, payload_bits)?)
}

pub fn link_budget(params: &RadioParams, distance: f64, payload_bits: f64) -> Result<LinkBudget> {
    let p_rx = received_power(params, distance)?;
    let rate = data_rate(params, p_rx);
    Ok(LinkBudget {
        p_rx,
        rate,
        energy: params.p_tx * payload_bits / rate,
        energy_scaled: scaled_energy(params, distance, payload_bits)?,
    })
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    libm::pow(10.0, (dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * libm::log10(watts) + 30.0
}

/// dBm/Hz to W/Hz (same law as [`dbm_to_watts`]).
pub fn dbm_per_hz_to_watts_per_hz(dbm_hz: f64) -> f64 {
    dbm_to_watts(dbm_hz)
}

/// dBi to linear gain.
pub fn db_to_linear(db: f64) -> f64 {
    libm::pow(10.0, db / 10.0)
}
