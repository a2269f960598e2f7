//! DC electrical model of the gated APD front end.
//!
//! The APD sits in a passive bias network. Photocurrent flowing through
//! the network drops voltage across the loop resistance and erodes the
//! excess bias above breakdown: the brighter the light, the less excess
//! bias remains. Once the photocurrent reaches the blinding current
//! `I_b = V_ex0 / R_loop` the diode falls out of Geiger mode entirely —
//! no more stochastic avalanches, only a deterministic linear-mode
//! pedestal proportional to the incident power.
//!
//! The photocurrent is the root of a fixed-point equation: current
//! depends on avalanche gain, gain depends on remaining excess bias, and
//! excess bias depends on current. The right-hand side is strictly
//! decreasing in the current, so the root is unique and bracketed;
//! [`steady_state`] finds it by bisection, which converges for every
//! power level (damped direct iteration does not — the slope of the
//! right-hand side exceeds one well before the interesting regime).
//!
//! [`gate_responses`] then synthesises per-gate detector output in
//! SD-referred millivolts: in Geiger mode a truncated-normal avalanche on
//! gates that fire (photon- or dark-triggered), in either mode the
//! linear pedestal that tracks the optical envelope.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::trace::GateTrace;

/// Planck constant times speed of light, J·m.
const HC_JM: f64 = 6.62607015e-34 * 2.99792458e8;

/// Errors from the electrical front-end model.
#[derive(Debug, Error, PartialEq)]
pub enum FrontendError {
    /// The bias network must present positive series resistance.
    #[error("bias network loop resistance must be positive (got {0} ohm)")]
    NonPositiveLoopResistance(f64),
    /// The diode must start above breakdown.
    #[error("excess bias must be positive (got {0} V)")]
    NonPositiveExcessBias(f64),
    /// Optical power is a magnitude.
    #[error("optical power must be non-negative (got {0} W)")]
    NegativePower(f64),
    /// A model parameter is outside its physical range.
    #[error("invalid detector model: {0}")]
    InvalidModel(&'static str),
}

/// Passive bias network around the APD.
///
/// The loop resistance seen by the photocurrent is the bias resistor plus
/// the diode's internal series resistance plus half the sense resistor
/// (the 50 Ω sense tap is terminated at both ends, so the DC current sees
/// its two halves in parallel).
#[derive(Debug, Clone, PartialEq)]
pub struct BiasNetwork {
    /// Excess bias above breakdown with no light, volts.
    pub excess_bias_v: f64,
    /// External bias resistor, ohms.
    pub bias_resistor_ohm: f64,
    /// APD internal series resistance, ohms.
    pub apd_resistor_ohm: f64,
    /// Sense resistor (seen as two parallel halves by the DC loop), ohms.
    pub sense_resistor_ohm: f64,
}

impl BiasNetwork {
    /// Validating constructor.
    pub fn new(
        excess_bias_v: f64,
        bias_resistor_ohm: f64,
        apd_resistor_ohm: f64,
        sense_resistor_ohm: f64,
    ) -> Result<Self, FrontendError> {
        let network = BiasNetwork {
            excess_bias_v,
            bias_resistor_ohm,
            apd_resistor_ohm,
            sense_resistor_ohm,
        };
        network.validate()?;
        Ok(network)
    }

    /// Check the fields are physical.
    pub fn validate(&self) -> Result<(), FrontendError> {
        if !(self.excess_bias_v > 0.0) {
            return Err(FrontendError::NonPositiveExcessBias(self.excess_bias_v));
        }
        let loop_ohm = self.loop_resistance_ohm();
        if !(loop_ohm > 0.0) {
            return Err(FrontendError::NonPositiveLoopResistance(loop_ohm));
        }
        Ok(())
    }

    /// Total DC loop resistance, ohms.
    pub fn loop_resistance_ohm(&self) -> f64 {
        self.bias_resistor_ohm + self.apd_resistor_ohm + 0.5 * self.sense_resistor_ohm
    }

    /// Photocurrent that erodes the excess bias to exactly zero, amperes.
    ///
    /// At and above this current the diode is out of Geiger mode.
    pub fn blinding_current_a(&self) -> f64 {
        self.excess_bias_v / self.loop_resistance_ohm()
    }
}

impl Default for BiasNetwork {
    fn default() -> Self {
        BiasNetwork {
            excess_bias_v: 1.025,
            bias_resistor_ohm: 0.0,
            apd_resistor_ohm: 1000.0,
            sense_resistor_ohm: 50.0,
        }
    }
}

/// Optical and avalanche parameters of the gated APD.
///
/// Defaults are the calibrated set reproduced by
/// [`crate::calibrate::calibrate`] from the stock anchor points.
#[derive(Debug, Clone, PartialEq)]
pub struct ApdModel {
    /// Single-photon detection efficiency per gate.
    pub efficiency: f64,
    /// Dark count rate, Hz.
    pub dark_rate_hz: f64,
    /// Gate repetition rate, Hz.
    pub gate_rate_hz: f64,
    /// Operating wavelength, nanometres (sets the photon energy).
    pub wavelength_nm: f64,
    /// Linear-mode responsivity at unit internal gain, A/W.
    pub responsivity_a_per_w: f64,
    /// Residual internal gain with the excess bias fully eroded,
    /// as a fraction of the full-bias gain.
    pub linear_gain: f64,
    /// Exponent of the gain roll-off with bias ratio.
    pub gain_exponent: f64,
    /// Photocurrent saturation scale, amperes.
    pub sat_current_a: f64,
    /// Saturated linear-mode output amplitude, millivolts.
    pub v_lin_max_mv: f64,
    /// Fraction of the pedestal the self-differencer fails to cancel.
    pub residual_fraction: f64,
    /// Mean avalanche amplitude at full excess bias, millivolts.
    pub avalanche_mean_mv: f64,
    /// Avalanche amplitude spread, millivolts.
    pub avalanche_sigma_mv: f64,
}

impl Default for ApdModel {
    fn default() -> Self {
        ApdModel {
            efficiency: 0.26,
            dark_rate_hz: 23.0e3,
            gate_rate_hz: 1.0e9,
            wavelength_nm: 1550.0,
            responsivity_a_per_w: 60.0,
            linear_gain: 0.240740741,
            gain_exponent: 2.0,
            sat_current_a: 3.0e-4,
            v_lin_max_mv: 2464.04495,
            residual_fraction: 0.0114669994,
            avalanche_mean_mv: 30.0,
            avalanche_sigma_mv: 6.0,
        }
    }
}

impl ApdModel {
    /// Check the fields are physical.
    pub fn validate(&self) -> Result<(), FrontendError> {
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(FrontendError::InvalidModel("efficiency outside [0, 1]"));
        }
        if !(self.dark_rate_hz >= 0.0) {
            return Err(FrontendError::InvalidModel("negative dark rate"));
        }
        if !(self.gate_rate_hz > 0.0) {
            return Err(FrontendError::InvalidModel("gate rate must be positive"));
        }
        if !(self.wavelength_nm > 0.0) {
            return Err(FrontendError::InvalidModel("wavelength must be positive"));
        }
        if !(self.responsivity_a_per_w > 0.0) {
            return Err(FrontendError::InvalidModel("responsivity must be positive"));
        }
        if !(0.0..=1.0).contains(&self.linear_gain) {
            return Err(FrontendError::InvalidModel("linear gain outside [0, 1]"));
        }
        if !(self.gain_exponent > 0.0) {
            return Err(FrontendError::InvalidModel(
                "gain exponent must be positive",
            ));
        }
        if !(self.sat_current_a > 0.0) {
            return Err(FrontendError::InvalidModel(
                "saturation current must be positive",
            ));
        }
        if !(self.v_lin_max_mv > 0.0) {
            return Err(FrontendError::InvalidModel(
                "linear amplitude cap must be positive",
            ));
        }
        if !(0.0..1.0).contains(&self.residual_fraction) {
            return Err(FrontendError::InvalidModel(
                "residual fraction outside [0, 1)",
            ));
        }
        if !(self.avalanche_mean_mv >= 0.0) || !(self.avalanche_sigma_mv >= 0.0) {
            return Err(FrontendError::InvalidModel(
                "negative avalanche amplitude parameter",
            ));
        }
        Ok(())
    }

    /// Energy of one photon at the operating wavelength, joules.
    pub fn photon_energy_j(&self) -> f64 {
        HC_JM / (self.wavelength_nm * 1.0e-9)
    }

    /// Mean photon number arriving within one gate at the given power.
    pub fn mean_photons_per_gate(&self, power_w: f64) -> f64 {
        power_w / (self.photon_energy_j() * self.gate_rate_hz)
    }

    /// Internal gain as a fraction of the full-bias gain.
    ///
    /// `bias_ratio` is the remaining excess bias over its no-light value.
    /// The roll-off is polynomial in the ratio, with a floor at
    /// [`linear_gain`](Self::linear_gain): even with the excess bias fully
    /// eroded the diode still works as a linear photodiode, which is what
    /// keeps the photocurrent at or above the blinding current throughout
    /// the blinded regime.
    pub fn effective_gain(&self, bias_ratio: f64) -> f64 {
        let r = bias_ratio.clamp(0.0, 1.0);
        self.linear_gain + (1.0 - self.linear_gain) * r.powf(self.gain_exponent)
    }

    /// Linear-mode (pedestal) output amplitude at the given photocurrent,
    /// millivolts. Saturates smoothly at
    /// [`v_lin_max_mv`](Self::v_lin_max_mv).
    pub fn linear_voltage_mv(&self, current_a: f64) -> f64 {
        self.v_lin_max_mv * current_a / (current_a + self.sat_current_a)
    }
}

/// Steady-state operating point of the front end under constant light.
#[derive(Debug, Clone, PartialEq)]
pub struct ApdState {
    /// The constant optical power the state was solved for, watts.
    pub power_w: f64,
    /// Discriminator level the blinding predicate was evaluated at, mV.
    pub disc_level_mv: f64,
    /// Self-consistent DC photocurrent, amperes.
    pub photocurrent_a: f64,
    /// Remaining excess bias, volts. Negative values mean the operating
    /// point sits below breakdown; the value is reported unclamped.
    pub excess_bias_v: f64,
    /// Remaining excess bias over its no-light value, clamped to [0, 1].
    pub bias_ratio: f64,
    /// Linear-mode pedestal amplitude at this operating point, mV.
    pub pedestal_mv: f64,
    /// True while any excess bias remains: the diode can avalanche.
    pub geiger_active: bool,
    /// True when the detector is silent at the given discriminator level:
    /// out of Geiger mode *and* the uncancelled pedestal residual stays at
    /// or below the level. Both conditions are required — a hot enough
    /// pedestal makes even a Geiger-dead detector click every gate.
    pub blinded: bool,
}

/// Solve the photocurrent fixed point under constant illumination.
///
/// The photocurrent satisfies
/// `I = responsivity · P · effective_gain(1 − I/I_b) · sat/(I + sat)`,
/// whose right-hand side is strictly decreasing in `I`; the unique root is
/// found by bisection on `[0, responsivity · P]`.
pub fn steady_state(
    bias: &BiasNetwork,
    model: &ApdModel,
    power_w: f64,
    disc_level_mv: f64,
) -> Result<ApdState, FrontendError> {
    bias.validate()?;
    model.validate()?;
    if !(power_w >= 0.0) {
        return Err(FrontendError::NegativePower(power_w));
    }

    let i_blind = bias.blinding_current_a();
    let current = if power_w == 0.0 {
        0.0
    } else {
        let rhs = |i: f64| {
            model.responsivity_a_per_w
                * power_w
                * model.effective_gain(1.0 - i / i_blind)
                * model.sat_current_a
                / (i + model.sat_current_a)
        };
        // The gain and saturation factors are both at most one, so the
        // root is bracketed by [0, responsivity * power].
        let mut lo = 0.0_f64;
        let mut hi = model.responsivity_a_per_w * power_w;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if rhs(mid) > mid {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };

    let excess_bias_v = bias.excess_bias_v * (1.0 - current / i_blind);
    let bias_ratio = (1.0 - current / i_blind).clamp(0.0, 1.0);
    let pedestal_mv = model.linear_voltage_mv(current);
    let geiger_active = current < i_blind;
    let blinded = !geiger_active && model.residual_fraction * pedestal_mv <= disc_level_mv;

    Ok(ApdState {
        power_w,
        disc_level_mv,
        photocurrent_a: current,
        excess_bias_v,
        bias_ratio,
        pedestal_mv,
        geiger_active,
        blinded,
    })
}

/// Photocurrent the junction settles to *within one gate* at the given
/// instantaneous power, with the avalanche gain frozen at the carrier's
/// operating point, amperes.
///
/// The bias loop that erodes the excess bias is slow — it integrates the
/// average power — but the output node tracks the optical envelope gate
/// by gate. So within a gate the gain factor stays at the carrier value
/// while the junction's own saturation still applies, which reduces the
/// fixed point to one quadratic:
/// `I² + sat·I − responsivity · p · gain · sat = 0`.
///
/// At the carrier power itself this reproduces the steady-state
/// photocurrent exactly.
pub fn instantaneous_current_a(state: &ApdState, model: &ApdModel, power_w: f64) -> f64 {
    let s = model.sat_current_a;
    let gain = model.effective_gain(state.bias_ratio);
    let c = model.responsivity_a_per_w * power_w.max(0.0) * gain * s;
    0.5 * (-s + (s * s + 4.0 * c).sqrt())
}

/// Linear-mode pedestal the detector outputs during a gate at the given
/// instantaneous power, millivolts. See [`instantaneous_current_a`].
pub fn pedestal_mv_at(state: &ApdState, model: &ApdModel, power_w: f64) -> f64 {
    model.linear_voltage_mv(instantaneous_current_a(state, model, power_w))
}

/// Peak SD output in the recovery gate right after an isolated one-gate
/// intensity dip, millivolts.
///
/// The differencer subtracts the dipped gate's (quasi-static) pedestal
/// from the restored carrier pedestal:
/// `peak = pedestal − (1 − residual) · pedestal_at(transmission · carrier)`.
pub fn dip_peak_mv(state: &ApdState, model: &ApdModel, dip_transmission: f64) -> f64 {
    let dipped = pedestal_mv_at(state, model, state.power_w * dip_transmission);
    state.pedestal_mv - (1.0 - model.residual_fraction) * dipped
}

/// What triggered the avalanche in a gate, if any.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fire {
    /// No avalanche in this gate.
    None,
    /// Photon-triggered avalanche.
    Signal,
    /// Dark-carrier-triggered avalanche.
    Dark,
}

/// Per-gate detector output plus the avalanche bookkeeping behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct GateResponses {
    /// SD-referred detector output per gate, millivolts, before the
    /// self-differencing transform.
    pub trace: GateTrace,
    /// What fired in each gate.
    pub fires: Vec<Fire>,
}

/// Synthesise per-gate detector output for an optical envelope.
///
/// `state` must be the steady state of the *unmodulated carrier* behind
/// `optical`: the bias loop is slow, so the gain and the avalanche
/// machinery sit at the carrier operating point, while the pedestal in
/// each gate tracks that gate's instantaneous power quasi-statically
/// (see [`pedestal_mv_at`]). In Geiger mode each gate additionally fires
/// a truncated-normal avalanche with probability
/// `1 − exp(−efficiency · photons_per_gate)` plus the dark contribution;
/// out of Geiger mode the avalanche machinery is completely silent and
/// the output is the deterministic pedestal alone.
pub fn gate_responses(
    state: &ApdState,
    model: &ApdModel,
    optical: &GateTrace,
    rng: &mut impl Rng,
) -> Result<GateResponses, FrontendError> {
    model.validate()?;
    let gates = optical.len();
    let mut trace = Vec::with_capacity(gates);
    let mut fires = vec![Fire::None; gates];

    let p_dark = (model.dark_rate_hz / model.gate_rate_hz).min(1.0);
    let amp_mean = model.avalanche_mean_mv * state.bias_ratio;
    let amp = Normal::new(amp_mean, model.avalanche_sigma_mv)
        .map_err(|_| FrontendError::InvalidModel("avalanche amplitude distribution"))?;
    let inv_gate_energy = 1.0 / (model.photon_energy_j() * model.gate_rate_hz);

    for (gate, &power) in optical.iter().enumerate() {
        if !(power >= 0.0) {
            return Err(FrontendError::NegativePower(power));
        }
        let pedestal = pedestal_mv_at(state, model, power);

        let mut sample = pedestal;
        if state.geiger_active {
            let mu = power * inv_gate_energy;
            let p_signal = 1.0 - (-model.efficiency * mu).exp();
            let fire = if rng.gen::<f64>() < p_signal {
                Fire::Signal
            } else if rng.gen::<f64>() < p_dark {
                Fire::Dark
            } else {
                Fire::None
            };
            if fire != Fire::None {
                // Truncated normal: avalanche amplitudes are magnitudes.
                let a = loop {
                    let x = amp.sample(rng);
                    if x >= 0.0 {
                        break x;
                    }
                };
                sample += a;
                fires[gate] = fire;
            }
        }
        trace.push(sample);
    }

    Ok(GateResponses {
        trace: GateTrace(trace),
        fires,
    })
}
