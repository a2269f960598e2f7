//! The intensity modulator and its gating patterns.
//!
//! The countermeasure hardware is a Mach–Zehnder intensity modulator in
//! front of the detector, driven gate-synchronously: in a randomly
//! chosen subset of gates the drive voltage carves a deep transmission
//! dip. To honest single-photon signal the dip is just a little extra
//! loss in a few gates; to a bright blinding carrier it is a large
//! pedestal step that the self-differencer converts into counts at
//! moments the attacker cannot predict.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::trace::GateTrace;

/// Errors from modulator configuration and patterns.
#[derive(Debug, Error, PartialEq)]
pub enum ModulatorError {
    /// The half-wave voltage sets the transmission scale.
    #[error("half-wave voltage must be positive (got {0} V)")]
    InvalidHalfWaveVoltage(f64),
    /// Extinction and insertion loss are attenuations.
    #[error("loss figure must be non-negative (got {0} dB)")]
    NegativeLoss(f64),
    /// A duty cycle is a fraction of gates.
    #[error("duty cycle must lie in [0, 1] (got {0})")]
    InvalidDuty(f64),
    /// A dip probability is a per-gate Bernoulli parameter.
    #[error("dip probability must lie in [0, 1] (got {0})")]
    InvalidProbability(f64),
    /// A gating schedule must cover the trace it modulates.
    #[error("schedule covers {schedule} gates but the trace has {trace}")]
    ScheduleLengthMismatch { schedule: usize, trace: usize },
    /// A pattern string could not be understood.
    #[error("cannot parse modulation pattern '{0}' (expected off, fixed:<bits>, fixed:1/<n>, or random:<p>)")]
    BadPattern(String),
}

/// Electro-optic parameters of the modulator.
#[derive(Debug, Clone, PartialEq)]
pub struct ImConfig {
    /// Half-wave voltage, volts: drive at which transmission reaches its
    /// first null.
    pub v_pi_v: f64,
    /// Deepest achievable dip, dB: transmission is floored at
    /// `10^(−max_extinction_db/10)`.
    pub max_extinction_db: f64,
    /// Flat insertion loss applied to every gate, dB.
    pub insertion_loss_db: f64,
}

impl Default for ImConfig {
    fn default() -> Self {
        ImConfig {
            v_pi_v: 4.0,
            max_extinction_db: 23.0,
            insertion_loss_db: 2.5,
        }
    }
}

impl ImConfig {
    /// Check the fields are physical.
    pub fn validate(&self) -> Result<(), ModulatorError> {
        if !(self.v_pi_v > 0.0) {
            return Err(ModulatorError::InvalidHalfWaveVoltage(self.v_pi_v));
        }
        if !(self.max_extinction_db >= 0.0) {
            return Err(ModulatorError::NegativeLoss(self.max_extinction_db));
        }
        if !(self.insertion_loss_db >= 0.0) {
            return Err(ModulatorError::NegativeLoss(self.insertion_loss_db));
        }
        Ok(())
    }

    /// Power transmission at the given drive voltage: the interferometric
    /// `cos²(π·v / 2·v_pi)` curve, floored by the finite extinction.
    pub fn transmission(&self, v_rf: f64) -> f64 {
        let interferometric = (std::f64::consts::PI * v_rf / (2.0 * self.v_pi_v))
            .cos()
            .powi(2);
        interferometric.max(self.floor_transmission())
    }

    /// Transmission at the extinction floor.
    pub fn floor_transmission(&self) -> f64 {
        10.0_f64.powf(-self.max_extinction_db / 10.0)
    }

    /// Dip contrast in dB at the given drive voltage.
    pub fn contrast_db(&self, v_rf: f64) -> f64 {
        // `+ 0.0` turns the negative zero at zero drive into plain zero.
        -10.0 * self.transmission(v_rf).log10() + 0.0
    }

    /// Flat power throughput from the insertion loss.
    pub fn throughput(&self) -> f64 {
        10.0_f64.powf(-self.insertion_loss_db / 10.0)
    }
}

/// Which gates the modulator dips.
#[derive(Debug, Clone, PartialEq)]
pub enum ImPattern {
    /// Modulator idle: every gate at full transmission.
    Off,
    /// Deterministic pattern: one dipped slot per period.
    Fixed { period: usize, active_slot: usize },
    /// Independent per-gate dips with the given probability.
    Random { dip_probability: f64 },
}

impl ImPattern {
    /// Fraction of gates dipped, on average.
    pub fn duty(&self) -> f64 {
        match *self {
            ImPattern::Off => 0.0,
            ImPattern::Fixed { period, .. } => 1.0 / period as f64,
            ImPattern::Random { dip_probability } => dip_probability,
        }
    }

    /// Expand the pattern into a per-gate dip schedule.
    ///
    /// Only [`ImPattern::Random`] consumes randomness; the same generator
    /// state always reproduces the same schedule.
    pub fn schedule(&self, gates: usize, rng: &mut impl Rng) -> Vec<bool> {
        match *self {
            ImPattern::Off => vec![false; gates],
            ImPattern::Fixed {
                period,
                active_slot,
            } => (0..gates).map(|i| i % period == active_slot).collect(),
            ImPattern::Random { dip_probability } => (0..gates)
                .map(|_| rng.gen::<f64>() < dip_probability)
                .collect(),
        }
    }
}

impl FromStr for ImPattern {
    type Err = ModulatorError;

    /// Parse a pattern description.
    ///
    /// * `off` — modulator idle.
    /// * `fixed:<bits>` — e.g. `fixed:0001`: a repeating bit pattern with
    ///   exactly one `1`, dipping that slot of every period.
    /// * `fixed:1/<n>` — one dip every `n` gates (the last slot of each
    ///   period, matching `fixed:0…01`).
    /// * `random:<p>` — independent dips with probability `p`.
    fn from_str(s: &str) -> Result<Self, ModulatorError> {
        let bad = || ModulatorError::BadPattern(s.to_string());
        if s == "off" {
            return Ok(ImPattern::Off);
        }
        if let Some(spec) = s.strip_prefix("fixed:") {
            if let Some(denom) = spec.strip_prefix("1/") {
                let period: usize = denom.parse().map_err(|_| bad())?;
                if period == 0 {
                    return Err(bad());
                }
                return Ok(ImPattern::Fixed {
                    period,
                    active_slot: period - 1,
                });
            }
            if !spec.is_empty() && spec.chars().all(|c| c == '0' || c == '1') {
                let ones: Vec<usize> = spec
                    .char_indices()
                    .filter(|&(_, c)| c == '1')
                    .map(|(i, _)| i)
                    .collect();
                if ones.len() != 1 {
                    return Err(bad());
                }
                return Ok(ImPattern::Fixed {
                    period: spec.len(),
                    active_slot: ones[0],
                });
            }
            return Err(bad());
        }
        if let Some(p) = s.strip_prefix("random:") {
            let dip_probability: f64 = p.parse().map_err(|_| bad())?;
            if !(0.0..=1.0).contains(&dip_probability) {
                return Err(ModulatorError::InvalidProbability(dip_probability));
            }
            return Ok(ImPattern::Random { dip_probability });
        }
        Err(bad())
    }
}

impl fmt::Display for ImPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            ImPattern::Off => write!(f, "off"),
            ImPattern::Fixed {
                period,
                active_slot,
            } => {
                write!(f, "fixed:")?;
                for i in 0..period {
                    write!(f, "{}", if i == active_slot { '1' } else { '0' })?;
                }
                Ok(())
            }
            ImPattern::Random { dip_probability } => write!(f, "random:{dip_probability}"),
        }
    }
}

/// Pass an optical trace through the modulator.
///
/// Every gate pays the insertion loss; scheduled gates are additionally
/// attenuated to the dip transmission at the given drive voltage. Output
/// power never exceeds input power in any gate.
pub fn apply(
    config: &ImConfig,
    schedule: &[bool],
    v_rf: f64,
    input: &GateTrace,
) -> Result<GateTrace, ModulatorError> {
    config.validate()?;
    if schedule.len() != input.len() {
        return Err(ModulatorError::ScheduleLengthMismatch {
            schedule: schedule.len(),
            trace: input.len(),
        });
    }
    let through = config.throughput();
    let dip = config.transmission(v_rf);
    Ok(input
        .iter()
        .zip(schedule)
        .map(|(&p, &active)| p * through * if active { dip } else { 1.0 })
        .collect())
}

/// Throughput cost of running the countermeasure.
#[derive(Debug, Clone, PartialEq)]
pub struct LossImpact {
    /// Fraction of honest detections surviving the modulator: flat
    /// insertion loss times the duty-weighted dip transmission.
    pub rate_factor: f64,
    /// Fibre length whose attenuation equals the insertion loss, km.
    pub distance_penalty_km: f64,
}

/// Quantify what the countermeasure costs an honest link.
pub fn insertion_loss_impact(
    insertion_loss_db: f64,
    duty: f64,
    dip_contrast_db: f64,
    fiber_db_per_km: f64,
) -> Result<LossImpact, ModulatorError> {
    if !(insertion_loss_db >= 0.0) || !(dip_contrast_db >= 0.0) {
        return Err(ModulatorError::NegativeLoss(
            insertion_loss_db.min(dip_contrast_db),
        ));
    }
    if !(0.0..=1.0).contains(&duty) {
        return Err(ModulatorError::InvalidDuty(duty));
    }
    if !(fiber_db_per_km > 0.0) {
        return Err(ModulatorError::NegativeLoss(fiber_db_per_km));
    }
    let through = 10.0_f64.powf(-insertion_loss_db / 10.0);
    let dip = 10.0_f64.powf(-dip_contrast_db / 10.0);
    Ok(LossImpact {
        rate_factor: through * ((1.0 - duty) + duty * dip),
        distance_penalty_km: insertion_loss_db / fiber_db_per_km,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use proptest::prelude::*;

    #[test]
    fn undriven_modulator_is_transparent() {
        let cfg = ImConfig::default();
        assert_eq!(cfg.transmission(0.0), 1.0);
        assert_eq!(cfg.contrast_db(0.0), 0.0);
    }

    #[test]
    fn full_drive_hits_the_extinction_floor() {
        let cfg = ImConfig::default();
        let floor = 10.0_f64.powf(-2.3);
        assert!((cfg.transmission(4.0) - floor).abs() < 1.0e-15);
        assert!((cfg.contrast_db(4.0) - 23.0).abs() < 1.0e-9);
    }

    #[test]
    fn weak_drive_contrast_matches_the_interferometric_curve() {
        let cfg = ImConfig::default();
        // cos²(π·0.3/8) expressed in dB.
        assert!((cfg.contrast_db(0.3) - 0.06041624956837094).abs() < 1.0e-9);
        assert!((cfg.contrast_db(0.3) - 0.060).abs() < 1.0e-3);
    }

    #[test]
    fn pattern_strings_round_trip() {
        let p: ImPattern = "fixed:0001".parse().unwrap();
        assert_eq!(
            p,
            ImPattern::Fixed {
                period: 4,
                active_slot: 3
            }
        );
        assert_eq!(p.to_string(), "fixed:0001");
        assert_eq!(p.duty(), 0.25);

        let p: ImPattern = "fixed:1/32".parse().unwrap();
        assert_eq!(
            p,
            ImPattern::Fixed {
                period: 32,
                active_slot: 31
            }
        );
        assert_eq!(p.duty(), 1.0 / 32.0);

        let p: ImPattern = "random:0.25".parse().unwrap();
        assert_eq!(
            p,
            ImPattern::Random {
                dip_probability: 0.25
            }
        );
        assert_eq!(p.to_string(), "random:0.25");

        let p: ImPattern = "off".parse().unwrap();
        assert_eq!(p, ImPattern::Off);
        assert_eq!(p.duty(), 0.0);
    }

    #[test]
    fn malformed_pattern_strings_are_rejected() {
        for s in [
            "fixed:0011",
            "fixed:0000",
            "fixed:",
            "fixed:1/0",
            "fixed:01a1",
            "nonsense",
            "random:x",
        ] {
            assert!(
                matches!(s.parse::<ImPattern>(), Err(ModulatorError::BadPattern(_))),
                "'{s}' should not parse"
            );
        }
        assert_eq!(
            "random:1.5".parse::<ImPattern>(),
            Err(ModulatorError::InvalidProbability(1.5))
        );
    }

    #[test]
    fn fixed_schedules_dip_exactly_their_slot() {
        let p: ImPattern = "fixed:0001".parse().unwrap();
        let mut rng = stream_rng(0, "im");
        let s = p.schedule(10, &mut rng);
        assert_eq!(
            s,
            vec![false, false, false, true, false, false, false, true, false, false]
        );
    }

    #[test]
    fn random_schedules_are_reproducible_and_fair() {
        let p = ImPattern::Random {
            dip_probability: 0.25,
        };
        let a = p.schedule(100_000, &mut stream_rng(5, "im"));
        let b = p.schedule(100_000, &mut stream_rng(5, "im"));
        assert_eq!(a, b);
        let dips = a.iter().filter(|&&x| x).count() as f64;
        let sigma = (100_000.0_f64 * 0.25 * 0.75).sqrt();
        assert!((dips - 25_000.0).abs() < 4.0 * sigma);
        let c = p.schedule(100_000, &mut stream_rng(6, "im"));
        assert_ne!(a, c, "different seeds must give different schedules");
    }

    #[test]
    fn applying_the_modulator_scales_scheduled_gates() {
        let cfg = ImConfig {
            insertion_loss_db: 0.0,
            ..ImConfig::default()
        };
        let input = GateTrace::constant(4, 1.0e-3);
        let schedule = vec![false, false, false, true];
        let out = apply(&cfg, &schedule, 4.0, &input).unwrap();
        let floor = 10.0_f64.powf(-2.3);
        assert_eq!(out[0], 1.0e-3);
        assert!((out[3] - 1.0e-3 * floor).abs() < 1.0e-18);
    }

    #[test]
    fn schedule_length_must_match_the_trace() {
        let cfg = ImConfig::default();
        let input = GateTrace::constant(4, 1.0e-3);
        assert!(matches!(
            apply(&cfg, &[false; 3], 0.0, &input),
            Err(ModulatorError::ScheduleLengthMismatch {
                schedule: 3,
                trace: 4
            })
        ));
    }

    #[test]
    fn loss_impact_matches_the_closed_form_examples() {
        let a = insertion_loss_impact(5.0, 0.25, 0.06, 0.2).unwrap();
        assert!((a.rate_factor - 0.3151430641149769).abs() < 1.0e-12);
        assert!((a.distance_penalty_km - 25.0).abs() < 1.0e-12);

        let b = insertion_loss_impact(3.0, 0.0, 0.0, 0.2).unwrap();
        assert!((b.rate_factor - 0.5011872336272722).abs() < 1.0e-12);
        assert!((b.distance_penalty_km - 15.0).abs() < 1.0e-12);
    }

    #[test]
    fn loss_impact_rejects_unphysical_inputs() {
        assert!(insertion_loss_impact(-1.0, 0.5, 0.0, 0.2).is_err());
        assert!(insertion_loss_impact(1.0, 1.5, 0.0, 0.2).is_err());
        assert!(insertion_loss_impact(1.0, 0.5, 0.0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn transmission_is_even_periodic_and_bounded(v in -20.0_f64..20.0) {
            let cfg = ImConfig::default();
            let t = cfg.transmission(v);
            prop_assert!(t >= cfg.floor_transmission() - 1.0e-15);
            prop_assert!(t <= 1.0 + 1.0e-15);
            prop_assert!((t - cfg.transmission(-v)).abs() < 1.0e-12);
            prop_assert!((t - cfg.transmission(v + 2.0 * cfg.v_pi_v)).abs() < 1.0e-9);
        }

        #[test]
        fn contrast_grows_monotonically_up_to_the_half_wave_voltage(
            v in 0.0_f64..3.9, dv in 0.001_f64..0.1,
        ) {
            let cfg = ImConfig::default();
            let hi = (v + dv).min(4.0);
            prop_assert!(cfg.contrast_db(v) <= cfg.contrast_db(hi) + 1.0e-12);
        }

        #[test]
        fn modulation_never_amplifies(
            powers in proptest::collection::vec(0.0_f64..1.0e-2, 1..32),
            v in 0.0_f64..8.0,
            seed in 0_u64..1000,
        ) {
            let cfg = ImConfig::default();
            let pattern = ImPattern::Random { dip_probability: 0.5 };
            let input = GateTrace(powers);
            let schedule = pattern.schedule(input.len(), &mut stream_rng(seed, "im"));
            let out = apply(&cfg, &schedule, v, &input).unwrap();
            for (a, b) in out.iter().zip(input.iter()) {
                prop_assert!(a <= b);
            }
        }
    }
}
