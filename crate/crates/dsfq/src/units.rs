//! Physical constants and unit conversions.
//!
//! Energies are stored as E/h in GHz and times in ns, so a propagation phase
//! is `2*pi*E*t`. Rates returned by the coherence module are in 1/ns.

/// Boltzmann constant, J/K (exact SI).
pub const K_B: f64 = 1.380_649e-23;
/// Planck constant, J s (exact SI).
pub const H_PLANCK: f64 = 6.626_070_15e-34;
/// Hertz per GHz.
pub const HZ_PER_GHZ: f64 = 1e9;
/// Nanoseconds per microsecond.
pub const NS_PER_US: f64 = 1e3;

/// k_B T / h in GHz.
pub fn thermal_frequency_ghz(temperature_k: f64) -> f64 {
    K_B * temperature_k / H_PLANCK / HZ_PER_GHZ
}

/// Angular frequency in rad/s for a frequency given in GHz.
pub fn angular_si(f_ghz: f64) -> f64 {
    2.0 * std::f64::consts::PI * f_ghz * HZ_PER_GHZ
}

/// Converts a rate in 1/s to 1/ns.
pub fn per_ns(rate_per_s: f64) -> f64 {
    rate_per_s / HZ_PER_GHZ
}
