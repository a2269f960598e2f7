//! Attacker strategies: what arrives at the receiver's modulator.
//!
//! Each strategy expands into a per-gate optical power trace plus, for
//! faked-state variants, the attacker's measurement record (basis and bit
//! per controlled gate). A blinded detector clicks only when the
//! attacker's resent state matches the receiver's basis choice — the
//! faked-state click rule — so the attacker's record is what decides
//! which controlled gates click and with which bit value.

use std::fmt;

use rand::Rng;
use thiserror::Error;

use crate::trace::GateTrace;

/// Blinding power assumed when a strategy string does not carry one, W.
pub const DEFAULT_BLIND_POWER_W: f64 = 1.0e-3;

/// Errors from attack construction.
#[derive(Debug, Error, PartialEq)]
pub enum AttackError {
    /// Optical powers are magnitudes.
    #[error("attack power must be non-negative (got {0} W)")]
    InvalidPower(f64),
    /// Burst duty cycle is a fraction of the session.
    #[error("burst duty cycle must lie in (0, 1] (got {0})")]
    InvalidDuty(f64),
    /// A burst must span at least one gate.
    #[error("burst length must be at least one gate")]
    ZeroBurstLength,
    /// Undisturbed fraction splits the session.
    #[error("undisturbed fraction must lie in [0, 1] (got {0})")]
    InvalidFraction(f64),
    /// A strategy string could not be understood.
    #[error("cannot parse strategy '{0}' (expected honest, cw:<W>, faked:<W>, burst:<duty>:<gates>, or partial:<fraction>)")]
    BadStrategy(String),
    /// The faked-state click rule only describes a blinded detector.
    #[error("faked-state click rule invoked on a detector that is not blinded")]
    DetectorNotBlinded,
}

/// The transmitter whose signal an honest channel would deliver.
#[derive(Debug, Clone, PartialEq)]
pub struct AliceSource {
    /// Mean photon number per pulse at the receiver input.
    pub mean_photon_number: f64,
}

impl Default for AliceSource {
    fn default() -> Self {
        AliceSource {
            mean_photon_number: 0.5,
        }
    }
}

impl AliceSource {
    /// Equivalent continuous power of the pulse train, watts, given the
    /// photon energy and pulse (= gate) rate.
    pub fn mean_power_w(&self, photon_energy_j: f64, gate_rate_hz: f64) -> f64 {
        self.mean_photon_number * photon_energy_j * gate_rate_hz
    }
}

/// What the attacker does with the channel.
#[derive(Debug, Clone, PartialEq)]
pub enum EveStrategy {
    /// No attacker: the honest signal arrives untouched.
    Honest,
    /// Continuous bright blinding; no resent states, the attacker only
    /// silences the detector.
    CwBlind { power_w: f64 },
    /// Continuous blinding plus intercept-resend: the attacker measures
    /// every pulse in a random basis and resends bright faked states that
    /// click only on a basis match.
    FakedState { power_w: f64 },
    /// Blinding confined to evenly spaced bursts covering `duty` of the
    /// session, `burst_gates` gates each and centred in their share of
    /// the gates, with faked states inside the bursts and the honest
    /// signal passing between them.
    Burst {
        duty: f64,
        burst_gates: usize,
        power_w: f64,
    },
    /// Faked-state blinding over the leading part of the session, with
    /// the trailing `undisturbed_fraction` left honest.
    Partial {
        undisturbed_fraction: f64,
        power_w: f64,
    },
}

impl EveStrategy {
    /// Parse a strategy description: `honest`, `cw:<W>`, `faked:<W>`,
    /// `burst:<duty>:<gates>`, or `partial:<fraction>` (the last two at
    /// [`DEFAULT_BLIND_POWER_W`]).
    pub fn parse(s: &str) -> Result<Self, AttackError> {
        let bad = || AttackError::BadStrategy(s.to_string());
        if s == "honest" {
            return Ok(EveStrategy::Honest);
        }
        if let Some(p) = s.strip_prefix("cw:") {
            let power_w: f64 = p.parse().map_err(|_| bad())?;
            if !(power_w >= 0.0) {
                return Err(AttackError::InvalidPower(power_w));
            }
            return Ok(EveStrategy::CwBlind { power_w });
        }
        if let Some(p) = s.strip_prefix("faked:") {
            let power_w: f64 = p.parse().map_err(|_| bad())?;
            if !(power_w >= 0.0) {
                return Err(AttackError::InvalidPower(power_w));
            }
            return Ok(EveStrategy::FakedState { power_w });
        }
        if let Some(rest) = s.strip_prefix("burst:") {
            let mut parts = rest.splitn(2, ':');
            let duty: f64 = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            let burst_gates: usize = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            if !(duty > 0.0 && duty <= 1.0) {
                return Err(AttackError::InvalidDuty(duty));
            }
            if burst_gates == 0 {
                return Err(AttackError::ZeroBurstLength);
            }
            return Ok(EveStrategy::Burst {
                duty,
                burst_gates,
                power_w: DEFAULT_BLIND_POWER_W,
            });
        }
        if let Some(p) = s.strip_prefix("partial:") {
            let undisturbed_fraction: f64 = p.parse().map_err(|_| bad())?;
            if !(0.0..=1.0).contains(&undisturbed_fraction) {
                return Err(AttackError::InvalidFraction(undisturbed_fraction));
            }
            return Ok(EveStrategy::Partial {
                undisturbed_fraction,
                power_w: DEFAULT_BLIND_POWER_W,
            });
        }
        Err(bad())
    }

    /// True for strategies that resend faked states somewhere.
    pub fn resends_faked_states(&self) -> bool {
        matches!(
            self,
            EveStrategy::FakedState { .. }
                | EveStrategy::Burst { .. }
                | EveStrategy::Partial { .. }
        )
    }
}

impl fmt::Display for EveStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            EveStrategy::Honest => write!(f, "honest"),
            EveStrategy::CwBlind { power_w } => write!(f, "cw:{power_w:e}"),
            EveStrategy::FakedState { power_w } => write!(f, "faked:{power_w:e}"),
            EveStrategy::Burst {
                duty, burst_gates, ..
            } => write!(f, "burst:{duty}:{burst_gates}"),
            EveStrategy::Partial {
                undisturbed_fraction,
                ..
            } => write!(f, "partial:{undisturbed_fraction}"),
        }
    }
}

/// The attacker's output: optical power per gate plus her measurement
/// record for faked-state gates.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackTrace {
    /// Optical power arriving at the receiver's modulator, watts.
    pub power_w: GateTrace,
    /// True where the gate is under attacker control (blinded).
    pub attacked: Vec<bool>,
    /// The attacker's measurement basis per controlled gate.
    pub eve_bases: Vec<Option<bool>>,
    /// The attacker's measured bit per controlled gate.
    pub eve_bits: Vec<Option<bool>>,
}

/// Expand a strategy into its per-gate trace.
///
/// Honest gates carry the source's mean power; attacked gates carry the
/// strategy's blinding power. Faked-state gates additionally record the
/// attacker's random basis and bit. Only faked-state gates consume
/// randomness, so a given `(seed, strategy)` pair always reproduces the
/// same trace.
pub fn build_trace(
    strategy: &EveStrategy,
    source: &AliceSource,
    gates: usize,
    photon_energy_j: f64,
    gate_rate_hz: f64,
    rng: &mut impl Rng,
) -> Result<AttackTrace, AttackError> {
    if !(source.mean_photon_number >= 0.0) {
        return Err(AttackError::InvalidPower(source.mean_photon_number));
    }
    let honest_power = source.mean_power_w(photon_energy_j, gate_rate_hz);

    let mut power = vec![honest_power; gates];
    let mut attacked = vec![false; gates];
    let mut eve_bases = vec![None; gates];
    let mut eve_bits = vec![None; gates];

    let control = |range: std::ops::Range<usize>,
                   power_w: f64,
                   faked: bool,
                   power: &mut [f64],
                   attacked: &mut [bool],
                   eve_bases: &mut [Option<bool>],
                   eve_bits: &mut [Option<bool>],
                   rng: &mut dyn rand::RngCore| {
        for i in range {
            power[i] = power_w;
            attacked[i] = true;
            if faked {
                eve_bases[i] = Some(rng.gen::<bool>());
                eve_bits[i] = Some(rng.gen::<bool>());
            }
        }
    };

    match *strategy {
        EveStrategy::Honest => {}
        EveStrategy::CwBlind { power_w } => {
            if !(power_w >= 0.0) {
                return Err(AttackError::InvalidPower(power_w));
            }
            control(
                0..gates,
                power_w,
                false,
                &mut power,
                &mut attacked,
                &mut eve_bases,
                &mut eve_bits,
                rng,
            );
        }
        EveStrategy::FakedState { power_w } => {
            if !(power_w >= 0.0) {
                return Err(AttackError::InvalidPower(power_w));
            }
            control(
                0..gates,
                power_w,
                true,
                &mut power,
                &mut attacked,
                &mut eve_bases,
                &mut eve_bits,
                rng,
            );
        }
        EveStrategy::Burst {
            duty,
            burst_gates,
            power_w,
        } => {
            if !(duty > 0.0 && duty <= 1.0) {
                return Err(AttackError::InvalidDuty(duty));
            }
            if burst_gates == 0 {
                return Err(AttackError::ZeroBurstLength);
            }
            if !(power_w >= 0.0) {
                return Err(AttackError::InvalidPower(power_w));
            }
            let period = burst_gates as f64 / duty;
            let bursts = ((gates as f64 * duty) / burst_gates as f64).floor() as usize;
            for k in 0..bursts {
                // Each burst sits centred in its share of the session, so
                // every burst exposes a genuine rising edge: a burst
                // beginning on the very first gate would present no step
                // to a differencer that starts in equilibrium.
                let centre = (k as f64 + 0.5) * period;
                let start = (centre - 0.5 * burst_gates as f64).round() as usize;
                let end = (start + burst_gates).min(gates);
                control(
                    start..end,
                    power_w,
                    true,
                    &mut power,
                    &mut attacked,
                    &mut eve_bases,
                    &mut eve_bits,
                    rng,
                );
            }
        }
        EveStrategy::Partial {
            undisturbed_fraction,
            power_w,
        } => {
            if !(0.0..=1.0).contains(&undisturbed_fraction) {
                return Err(AttackError::InvalidFraction(undisturbed_fraction));
            }
            if !(power_w >= 0.0) {
                return Err(AttackError::InvalidPower(power_w));
            }
            let attacked_gates = ((1.0 - undisturbed_fraction) * gates as f64).round() as usize;
            control(
                0..attacked_gates.min(gates),
                power_w,
                true,
                &mut power,
                &mut attacked,
                &mut eve_bases,
                &mut eve_bits,
                rng,
            );
        }
    }

    Ok(AttackTrace {
        power_w: GateTrace(power),
        attacked,
        eve_bases,
        eve_bits,
    })
}

/// The faked-state click rule.
///
/// A blinded detector produces a click exactly when the attacker's resent
/// state lines up with the receiver's measurement basis; on a basis
/// mismatch the resent state splits across both detectors and neither
/// crosses threshold. The rule is only defined for a blinded detector —
/// asking it about a live one is a caller bug.
pub fn faked_state_click_rule(
    eve_basis: bool,
    bob_basis: bool,
    blinded: bool,
) -> Result<bool, AttackError> {
    if !blinded {
        return Err(AttackError::DetectorNotBlinded);
    }
    Ok(eve_basis == bob_basis)
}

/// Gates where the optical power steps from below to at-or-above the
/// threshold: the rising edges of blinding bursts.
pub fn burst_edges(power: &GateTrace, threshold_w: f64) -> Vec<usize> {
    let mut edges = Vec::new();
    for i in 0..power.len() {
        let above = power[i] >= threshold_w;
        let prev_above = i > 0 && power[i - 1] >= threshold_w;
        if above && !prev_above {
            edges.push(i);
        }
    }
    edges
}
