//! Physical constants and unit conversions (CODATA 2018 where applicable).

/// Hartree in electron volts.
pub const HARTREE_EV: f64 = 27.211_386_245_988;

/// Hartree expressed as a frequency in MHz (E_h / h). Pinned value used for
/// the device energy window; do not silently update.
pub const HARTREE_MHZ: f64 = 6.579_684e9;

/// Atomic unit of time in nanoseconds (ħ / E_h).
pub const AU_TIME_NS: f64 = 2.418_884_326_585_7e-8;

/// Bohr radius in centimetres.
pub const BOHR_CM: f64 = 5.291_772_109_03e-9;

/// One a₀² in cm², for cross-section output.
pub const BOHR2_CM2: f64 = BOHR_CM * BOHR_CM;

/// Atomic mass unit in electron masses.
pub const AMU_AU: f64 = 1_822.888_486_209;
