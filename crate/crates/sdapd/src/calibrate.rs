//! Deterministic derivation of the electrical parameter set from
//! measurable anchor points.
//!
//! The interesting constants of the front end — the linear-mode gain
//! floor, the pedestal amplitude cap, the uncancelled residual — are not
//! independent knobs: they are pinned by a handful of externally
//! observable anchors (where the silent gap opens and closes, how loud
//! the blind must stay at the alert level, how many counts the
//! countermeasure must force). The anchors *underdetermine* the model,
//! so calibration is a derivation from engineering priors rather than a
//! blind search: given the priors (responsivity, saturation scale, gain
//! roll-off, ripple taps), the remaining three constants follow in
//! closed form plus two fixed-point solves. Every anchor is then
//! verified against the derived set — including two seeded Monte Carlo
//! probes — and any miss is reported as a named violation instead of a
//! silently degraded fit.

use std::fmt;

use thiserror::Error;

use crate::config::{parse_flat, ConfigError, Params};
use crate::frontend::{dip_peak_mv, steady_state, ApdModel, BiasNetwork, FrontendError};
use crate::modulator::ImPattern;
use crate::rng::point_rng;
use crate::sd::SdKernel;
use crate::sweep::{run_point, SweepError};

/// Externally observable requirements the calibrated set must meet.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationAnchors {
    /// Blind power where the silent gap must open, watts.
    pub gap_low_w: f64,
    /// Blind power where counts must have recovered, watts.
    pub gap_high_w: f64,
    /// Discriminator level the gap is defined at, millivolts.
    pub disc_level_mv: f64,
    /// Lower level at which the blind must stay visible, millivolts.
    pub alert_level_mv: f64,
    /// Minimum photocurrent everywhere inside the gap, amperes.
    pub min_gap_current_a: f64,
    /// Power of the weak dip-peak anchor, watts.
    pub weak_peak_power_w: f64,
    /// Minimum full-extinction dip peak at that power, millivolts.
    pub weak_peak_min_mv: f64,
    /// Power of the strong dip-peak anchor, watts.
    pub strong_peak_power_w: f64,
    /// Minimum full-extinction dip peak at that power, millivolts.
    pub strong_peak_min_mv: f64,
    /// Saturated quarter-duty count rate window, Hz (low edge).
    pub saturation_lo_hz: f64,
    /// Saturated quarter-duty count rate window, Hz (high edge).
    pub saturation_hi_hz: f64,
    /// Weakest power the count floor is demanded at, watts.
    pub floor_power_w: f64,
    /// Minimum quarter-duty count rate at and above that power, Hz.
    pub floor_min_hz: f64,
}

impl Default for CalibrationAnchors {
    fn default() -> Self {
        CalibrationAnchors {
            gap_low_w: 3.0e-4,
            gap_high_w: 3.0e-3,
            disc_level_mv: 26.0,
            alert_level_mv: 18.0,
            min_gap_current_a: 1.0e-3,
            weak_peak_power_w: 1.0e-6,
            weak_peak_min_mv: 50.0,
            strong_peak_power_w: 1.0e-3,
            strong_peak_min_mv: 300.0,
            saturation_lo_hz: 700.0e6,
            saturation_hi_hz: 800.0e6,
            floor_power_w: 1.0e-7,
            floor_min_hz: 250.0e6,
        }
    }
}

impl CalibrationAnchors {
    /// Parse an anchors file, starting from the stock values.
    pub fn from_flat_text(text: &str) -> Result<Self, ConfigError> {
        let mut anchors = CalibrationAnchors::default();
        for (key, value) in parse_flat(text)? {
            let slot = match key.as_str() {
                "anchors.gap_low_w" => &mut anchors.gap_low_w,
                "anchors.gap_high_w" => &mut anchors.gap_high_w,
                "anchors.disc_level_mv" => &mut anchors.disc_level_mv,
                "anchors.alert_level_mv" => &mut anchors.alert_level_mv,
                "anchors.min_gap_current_a" => &mut anchors.min_gap_current_a,
                "anchors.weak_peak_power_w" => &mut anchors.weak_peak_power_w,
                "anchors.weak_peak_min_mv" => &mut anchors.weak_peak_min_mv,
                "anchors.strong_peak_power_w" => &mut anchors.strong_peak_power_w,
                "anchors.strong_peak_min_mv" => &mut anchors.strong_peak_min_mv,
                "anchors.saturation_lo_hz" => &mut anchors.saturation_lo_hz,
                "anchors.saturation_hi_hz" => &mut anchors.saturation_hi_hz,
                "anchors.floor_power_w" => &mut anchors.floor_power_w,
                "anchors.floor_min_hz" => &mut anchors.floor_min_hz,
                _ => return Err(ConfigError::UnknownKey(key)),
            };
            *slot = value.parse().map_err(|_| ConfigError::BadValue {
                key: key.clone(),
                value: value.clone(),
            })?;
        }
        Ok(anchors)
    }

    /// Render to flat text that parses back identically.
    pub fn render(&self) -> String {
        let mut out = String::from("# Measurable anchor points for calibration.\n");
        let mut push = |key: &str, value: f64| {
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&value.to_string());
            out.push('\n');
        };
        push("anchors.gap_low_w", self.gap_low_w);
        push("anchors.gap_high_w", self.gap_high_w);
        push("anchors.disc_level_mv", self.disc_level_mv);
        push("anchors.alert_level_mv", self.alert_level_mv);
        push("anchors.min_gap_current_a", self.min_gap_current_a);
        push("anchors.weak_peak_power_w", self.weak_peak_power_w);
        push("anchors.weak_peak_min_mv", self.weak_peak_min_mv);
        push("anchors.strong_peak_power_w", self.strong_peak_power_w);
        push("anchors.strong_peak_min_mv", self.strong_peak_min_mv);
        push("anchors.saturation_lo_hz", self.saturation_lo_hz);
        push("anchors.saturation_hi_hz", self.saturation_hi_hz);
        push("anchors.floor_power_w", self.floor_power_w);
        push("anchors.floor_min_hz", self.floor_min_hz);
        out
    }

    fn validate(&self) -> Result<(), CalibrationError> {
        let bad = |msg: &str| Err(CalibrationError::Invalid(msg.to_string()));
        if !(self.gap_low_w > 0.0 && self.gap_high_w > self.gap_low_w) {
            return bad("gap edges must satisfy 0 < low < high");
        }
        if !(self.alert_level_mv > 0.0 && self.disc_level_mv > self.alert_level_mv) {
            return bad("levels must satisfy 0 < alert < discriminator");
        }
        if !(self.min_gap_current_a > 0.0) {
            return bad("minimum gap current must be positive");
        }
        if !(self.weak_peak_power_w > 0.0 && self.strong_peak_power_w > 0.0) {
            return bad("peak anchor powers must be positive");
        }
        if !(self.saturation_lo_hz <= self.saturation_hi_hz) {
            return bad("saturation window must be ordered");
        }
        if !(self.floor_power_w > 0.0) {
            return bad("floor power must be positive");
        }
        Ok(())
    }
}

/// Engineering priors the derivation starts from: everything the anchors
/// do not pin down.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignPriors {
    /// Bias network (assumed known hardware).
    pub bias: BiasNetwork,
    /// Unit-gain responsivity, A/W.
    pub responsivity_a_per_w: f64,
    /// Photocurrent saturation scale, A.
    pub sat_current_a: f64,
    /// Gain roll-off exponent.
    pub gain_exponent: f64,
    /// Delay-line ripple taps.
    pub ripple_taps: Vec<f64>,
    /// Full-bias avalanche amplitude, mV.
    pub avalanche_mean_mv: f64,
    /// Avalanche amplitude spread, mV.
    pub avalanche_sigma_mv: f64,
    /// Pedestal amplitude the derivation targets at the floor anchor's
    /// weakest power, mV. Must clear the discriminator by enough margin
    /// that avalanche difference noise rarely swallows a dip recovery.
    pub weak_pedestal_target_mv: f64,
    /// Gates per Monte Carlo verification probe.
    pub probe_gates: usize,
    /// Seed for the verification probes.
    pub probe_seed: u64,
}

impl Default for DesignPriors {
    fn default() -> Self {
        DesignPriors {
            bias: BiasNetwork::default(),
            responsivity_a_per_w: 60.0,
            sat_current_a: 3.0e-4,
            gain_exponent: 2.0,
            ripple_taps: vec![0.3, 0.15],
            avalanche_mean_mv: 30.0,
            avalanche_sigma_mv: 6.0,
            weak_pedestal_target_mv: 47.0,
            probe_gates: 200_000,
            probe_seed: 1234,
        }
    }
}

/// One anchor the candidate set failed to meet.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorViolation {
    /// Which anchor failed.
    pub anchor: String,
    /// The measured value and the bound it missed.
    pub detail: String,
}

impl fmt::Display for AnchorViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.anchor, self.detail)
    }
}

/// Errors from calibration.
#[derive(Debug, Error, PartialEq)]
pub enum CalibrationError {
    /// The anchor set itself is contradictory.
    #[error("anchor set is not self-consistent: {0}")]
    Invalid(String),
    /// No parameter set derivable from the priors meets the anchors.
    #[error("cannot satisfy {} anchor requirement(s)", violations.len())]
    Infeasible { violations: Vec<AnchorViolation> },
    /// The electrical model rejected the candidate set.
    #[error(transparent)]
    Frontend(#[from] FrontendError),
    /// A verification probe failed to run.
    #[error(transparent)]
    Probe(#[from] SweepError),
}

impl CalibrationError {
    /// A multi-line human-readable account of what failed.
    pub fn report(&self) -> String {
        match self {
            CalibrationError::Infeasible { violations } => {
                let mut out = String::from("calibration infeasible:\n");
                for v in violations {
                    out.push_str("  - ");
                    out.push_str(&v.to_string());
                    out.push('\n');
                }
                out
            }
            other => format!("{other}\n"),
        }
    }
}

/// Derive the parameter set that meets the anchors, or explain why none
/// does.
///
/// The derivation chain, given the priors:
///
/// 1. The gain floor comes from demanding Geiger death exactly at the
///    gap's low edge: `g = I_b(I_b + I_sat) / (R · I_sat · P_low)`.
/// 2. The pedestal cap comes from demanding the target pedestal at the
///    floor anchor's weakest power (one fixed-point solve).
/// 3. The uncancelled residual comes from demanding count recovery
///    exactly at the gap's high edge: the residual crosses the
///    discriminator level there (one more fixed-point solve).
///
/// The derived set is then checked against *every* anchor; failures are
/// returned as named violations.
pub fn calibrate(
    anchors: &CalibrationAnchors,
    priors: &DesignPriors,
) -> Result<Params, CalibrationError> {
    anchors.validate()?;
    priors
        .bias
        .validate()
        .map_err(|e| CalibrationError::Invalid(e.to_string()))?;

    let ib = priors.bias.blinding_current_a();
    let sat = priors.sat_current_a;
    let mut violations = Vec::new();

    // 1. Gain floor from the gap's low edge.
    let linear_gain = ib * (ib + sat) / (priors.responsivity_a_per_w * sat * anchors.gap_low_w);
    if !(0.0..=1.0).contains(&linear_gain) {
        violations.push(AnchorViolation {
            anchor: "silent gap opens at gap_low_w".to_string(),
            detail: format!(
                "needs a linear-mode gain fraction of {linear_gain:.3}, outside (0, 1]"
            ),
        });
        return Err(CalibrationError::Infeasible { violations });
    }

    // Provisional model: amplitude scale settled below.
    let mut apd = ApdModel {
        responsivity_a_per_w: priors.responsivity_a_per_w,
        linear_gain,
        gain_exponent: priors.gain_exponent,
        sat_current_a: sat,
        v_lin_max_mv: 1.0,
        residual_fraction: 0.0,
        avalanche_mean_mv: priors.avalanche_mean_mv,
        avalanche_sigma_mv: priors.avalanche_sigma_mv,
        ..ApdModel::default()
    };

    // 2. Pedestal cap from the weak-pedestal target.
    let weak = steady_state(
        &priors.bias,
        &apd,
        anchors.floor_power_w,
        anchors.disc_level_mv,
    )?;
    if !(weak.photocurrent_a > 0.0) {
        violations.push(AnchorViolation {
            anchor: "count floor at floor_power_w".to_string(),
            detail: "no photocurrent at the floor anchor power".to_string(),
        });
        return Err(CalibrationError::Infeasible { violations });
    }
    let v_lin_max_mv =
        priors.weak_pedestal_target_mv * (weak.photocurrent_a + sat) / weak.photocurrent_a;
    apd.v_lin_max_mv = v_lin_max_mv;

    // 3. Residual from the gap's high edge.
    let high = steady_state(
        &priors.bias,
        &apd,
        anchors.gap_high_w,
        anchors.disc_level_mv,
    )?;
    let v_high = apd.linear_voltage_mv(high.photocurrent_a);
    let residual_fraction = anchors.disc_level_mv / v_high;
    if !(0.0..1.0).contains(&residual_fraction) {
        violations.push(AnchorViolation {
            anchor: "counts recover at gap_high_w".to_string(),
            detail: format!(
                "needs an uncancelled residual fraction of {residual_fraction:.3}, outside [0, 1)"
            ),
        });
        return Err(CalibrationError::Infeasible { violations });
    }
    apd.residual_fraction = residual_fraction;

    let params = Params {
        bias: priors.bias.clone(),
        apd,
        kernel: SdKernel {
            delay_gates: 1,
            residual_fraction,
            ripple_taps: priors.ripple_taps.clone(),
        },
        ..Params::default()
    };
    params
        .validate()
        .map_err(|e| CalibrationError::Invalid(e.to_string()))?;

    let violations = verify_anchors(&params, anchors, priors.probe_gates, priors.probe_seed)?;
    if violations.is_empty() {
        Ok(params)
    } else {
        Err(CalibrationError::Infeasible { violations })
    }
}

/// Check a parameter set against every anchor; returns the violations.
pub fn verify_anchors(
    params: &Params,
    anchors: &CalibrationAnchors,
    probe_gates: usize,
    probe_seed: u64,
) -> Result<Vec<AnchorViolation>, CalibrationError> {
    anchors.validate()?;
    let mut violations = Vec::new();
    let disc = anchors.disc_level_mv;
    let state = |p: f64| steady_state(&params.bias, &params.apd, p, disc);

    // Gap low edge: Geiger mode alive just below, dead and quiet just
    // above.
    let below = state(anchors.gap_low_w * 0.999)?;
    let above = state(anchors.gap_low_w * 1.001)?;
    if !below.geiger_active || above.geiger_active || !above.blinded {
        violations.push(AnchorViolation {
            anchor: "silent gap opens at gap_low_w".to_string(),
            detail: format!(
                "just below: geiger={}, just above: geiger={} blinded={}",
                below.geiger_active, above.geiger_active, above.blinded
            ),
        });
    }

    // Gap high edge: quiet just below, residual-loud just above.
    let rec_below = state(anchors.gap_high_w * 0.999)?;
    let rec_above = state(anchors.gap_high_w * 1.001)?;
    if !rec_below.blinded || rec_above.blinded {
        violations.push(AnchorViolation {
            anchor: "counts recover at gap_high_w".to_string(),
            detail: format!(
                "just below: blinded={}, just above: blinded={}",
                rec_below.blinded, rec_above.blinded
            ),
        });
    }

    // Throughout the gap: photocurrent at or above the floor, residual
    // quiet at the discriminator but loud at the alert level.
    let probes =
        crate::sweep::power_grid(anchors.gap_low_w * 1.001, anchors.gap_high_w * 0.999, 16);
    for &p in &probes {
        let s = state(p)?;
        if s.photocurrent_a < anchors.min_gap_current_a {
            violations.push(AnchorViolation {
                anchor: "photocurrent stays high inside the gap".to_string(),
                detail: format!(
                    "{:.4e} A at {p:.4e} W, below {:.4e} A",
                    s.photocurrent_a, anchors.min_gap_current_a
                ),
            });
            break;
        }
    }
    for &p in &probes {
        let s = state(p)?;
        let residual = params.apd.residual_fraction * s.pedestal_mv;
        if !s.blinded || residual <= anchors.alert_level_mv {
            violations.push(AnchorViolation {
                anchor: "blind is quiet at the discriminator yet visible at the alert level"
                    .to_string(),
                detail: format!(
                    "residual {residual:.2} mV at {p:.4e} W (alert {} mV, disc {disc} mV, blinded={})",
                    anchors.alert_level_mv, s.blinded
                ),
            });
            break;
        }
    }

    // Dip peaks at the two peak anchors, at full extinction.
    let floor_t = params.im.floor_transmission();
    let weak_peak = dip_peak_mv(&state(anchors.weak_peak_power_w)?, &params.apd, floor_t);
    if weak_peak < anchors.weak_peak_min_mv {
        violations.push(AnchorViolation {
            anchor: "weak-power dip peak".to_string(),
            detail: format!(
                "{weak_peak:.1} mV at {:.1e} W, below {:.1} mV",
                anchors.weak_peak_power_w, anchors.weak_peak_min_mv
            ),
        });
    }
    let strong_peak = dip_peak_mv(&state(anchors.strong_peak_power_w)?, &params.apd, floor_t);
    if strong_peak < anchors.strong_peak_min_mv {
        violations.push(AnchorViolation {
            anchor: "strong-power dip peak".to_string(),
            detail: format!(
                "{strong_peak:.1} mV at {:.1e} W, below {:.1} mV",
                anchors.strong_peak_power_w, anchors.strong_peak_min_mv
            ),
        });
    }

    // Saturated quarter-duty count rate at the strong anchor power
    // (blinded regime: deterministic).
    let quarter: ImPattern = "fixed:0001".parse().expect("stock pattern");
    let mut rng = point_rng(probe_seed, "calibrate-saturation", 0);
    let sat_row = run_point(
        params,
        anchors.strong_peak_power_w,
        &quarter,
        params.im.v_pi_v,
        disc,
        probe_gates.min(8192),
        &mut rng,
    )?;
    if sat_row.count_rate_hz < anchors.saturation_lo_hz
        || sat_row.count_rate_hz > anchors.saturation_hi_hz
    {
        violations.push(AnchorViolation {
            anchor: "saturated quarter-duty count rate".to_string(),
            detail: format!(
                "{:.3e} Hz, outside [{:.3e}, {:.3e}]",
                sat_row.count_rate_hz, anchors.saturation_lo_hz, anchors.saturation_hi_hz
            ),
        });
    }

    // Count floor at the weakest demanded power (live regime: Monte
    // Carlo probe).
    let mut rng = point_rng(probe_seed, "calibrate-floor", 0);
    let floor_row = run_point(
        params,
        anchors.floor_power_w,
        &quarter,
        params.im.v_pi_v,
        disc,
        probe_gates,
        &mut rng,
    )?;
    if floor_row.count_rate_hz < anchors.floor_min_hz {
        violations.push(AnchorViolation {
            anchor: "quarter-duty count floor at floor_power_w".to_string(),
            detail: format!(
                "{:.3e} Hz, below {:.3e} Hz",
                floor_row.count_rate_hz, anchors.floor_min_hz
            ),
        });
    }

    Ok(violations)
}
