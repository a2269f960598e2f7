//! Flat `key = value` parameter files.
//!
//! Two kinds of file share one syntax: *params* files describing the
//! hardware (bias network, APD, differencer, modulator, source,
//! protocol), and *experiment* files describing a run (sweep grid, gate
//! counts, pattern, seed). Lines hold `section.key = value`; `#` starts
//! a comment; blank lines are ignored. Unknown keys are errors — a typo
//! silently falling back to a default is how wrong science gets
//! published. Files rendered by [`Params::render`] parse back to the
//! identical structure, bit for bit.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::attack::{AliceSource, EveStrategy};
use crate::frontend::{ApdModel, BiasNetwork};
use crate::modulator::{ImConfig, ImPattern};
use crate::protocol::KeyRateModel;
use crate::sd::SdKernel;

/// Errors from configuration parsing.
#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    /// A line is not `key = value` or a comment.
    #[error("line {line}: expected 'key = value', got '{text}'")]
    Syntax { line: usize, text: String },
    /// The same key appeared twice.
    #[error("duplicate key '{0}'")]
    DuplicateKey(String),
    /// The key does not belong to this file kind.
    #[error("unknown key '{0}'")]
    UnknownKey(String),
    /// The value does not parse as the key's type.
    #[error("key '{key}': cannot parse value '{value}'")]
    BadValue { key: String, value: String },
    /// The parsed structure failed physical validation.
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Parse flat `key = value` text into an ordered map.
pub fn parse_flat(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut map = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::Syntax {
                line: idx + 1,
                text: raw.trim().to_string(),
            });
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() {
            return Err(ConfigError::Syntax {
                line: idx + 1,
                text: raw.trim().to_string(),
            });
        }
        if map.contains_key(&key) {
            return Err(ConfigError::DuplicateKey(key));
        }
        map.insert(key, value);
    }
    Ok(map)
}

fn parse_f64(key: &str, value: &str) -> Result<f64, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
    })
}

fn parse_usize(key: &str, value: &str) -> Result<usize, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
    })
}

fn parse_u64(key: &str, value: &str) -> Result<u64, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
    })
}

fn parse_taps(key: &str, value: &str) -> Result<Vec<f64>, ConfigError> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|part| parse_f64(key, part.trim()))
        .collect()
}

fn render_taps(taps: &[f64]) -> String {
    taps.iter()
        .map(|t| t.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// The complete hardware and protocol description.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Params {
    pub bias: BiasNetwork,
    pub apd: ApdModel,
    pub kernel: SdKernel,
    pub im: ImConfig,
    pub source: AliceSource,
    pub protocol: KeyRateModel,
}

impl Params {
    /// Parse a params file, starting from defaults.
    pub fn from_flat_text(text: &str) -> Result<Self, ConfigError> {
        let mut params = Params::default();
        for (key, value) in parse_flat(text)? {
            params.apply(&key, &value)?;
        }
        params.validate()?;
        Ok(params)
    }

    /// Apply a single `section.key = value` assignment.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "bias.excess_bias_v" => self.bias.excess_bias_v = parse_f64(key, value)?,
            "bias.bias_resistor_ohm" => self.bias.bias_resistor_ohm = parse_f64(key, value)?,
            "bias.apd_resistor_ohm" => self.bias.apd_resistor_ohm = parse_f64(key, value)?,
            "bias.sense_resistor_ohm" => self.bias.sense_resistor_ohm = parse_f64(key, value)?,
            "apd.efficiency" => self.apd.efficiency = parse_f64(key, value)?,
            "apd.dark_rate_hz" => self.apd.dark_rate_hz = parse_f64(key, value)?,
            "apd.gate_rate_hz" => self.apd.gate_rate_hz = parse_f64(key, value)?,
            "apd.wavelength_nm" => self.apd.wavelength_nm = parse_f64(key, value)?,
            "apd.responsivity_a_per_w" => self.apd.responsivity_a_per_w = parse_f64(key, value)?,
            "apd.linear_gain" => self.apd.linear_gain = parse_f64(key, value)?,
            "apd.gain_exponent" => self.apd.gain_exponent = parse_f64(key, value)?,
            "apd.sat_current_a" => self.apd.sat_current_a = parse_f64(key, value)?,
            "apd.v_lin_max_mv" => self.apd.v_lin_max_mv = parse_f64(key, value)?,
            "apd.residual_fraction" => self.apd.residual_fraction = parse_f64(key, value)?,
            "apd.avalanche_mean_mv" => self.apd.avalanche_mean_mv = parse_f64(key, value)?,
            "apd.avalanche_sigma_mv" => self.apd.avalanche_sigma_mv = parse_f64(key, value)?,
            "sd.delay_gates" => self.kernel.delay_gates = parse_usize(key, value)?,
            "sd.residual_fraction" => self.kernel.residual_fraction = parse_f64(key, value)?,
            "sd.ripple_taps" => self.kernel.ripple_taps = parse_taps(key, value)?,
            "im.v_pi_v" => self.im.v_pi_v = parse_f64(key, value)?,
            "im.max_extinction_db" => self.im.max_extinction_db = parse_f64(key, value)?,
            "im.insertion_loss_db" => self.im.insertion_loss_db = parse_f64(key, value)?,
            "source.mean_photon_number" => self.source.mean_photon_number = parse_f64(key, value)?,
            "protocol.qber_tolerance" => self.protocol.qber_tolerance = parse_f64(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Check every component is physical.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.bias
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.apd
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        SdKernel::new(
            self.kernel.delay_gates,
            self.kernel.residual_fraction,
            self.kernel.ripple_taps.clone(),
        )
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.im
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(self.source.mean_photon_number >= 0.0) {
            return Err(ConfigError::Invalid(
                "mean photon number must be non-negative".to_string(),
            ));
        }
        self.protocol
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    /// Render to flat text that parses back identically.
    pub fn render(&self) -> String {
        let mut out = String::from("# Detector, modulator, source, and protocol parameters.\n");
        let mut push = |key: &str, value: String| {
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&value);
            out.push('\n');
        };
        push("bias.excess_bias_v", self.bias.excess_bias_v.to_string());
        push(
            "bias.bias_resistor_ohm",
            self.bias.bias_resistor_ohm.to_string(),
        );
        push(
            "bias.apd_resistor_ohm",
            self.bias.apd_resistor_ohm.to_string(),
        );
        push(
            "bias.sense_resistor_ohm",
            self.bias.sense_resistor_ohm.to_string(),
        );
        push("apd.efficiency", self.apd.efficiency.to_string());
        push("apd.dark_rate_hz", self.apd.dark_rate_hz.to_string());
        push("apd.gate_rate_hz", self.apd.gate_rate_hz.to_string());
        push("apd.wavelength_nm", self.apd.wavelength_nm.to_string());
        push(
            "apd.responsivity_a_per_w",
            self.apd.responsivity_a_per_w.to_string(),
        );
        push("apd.linear_gain", self.apd.linear_gain.to_string());
        push("apd.gain_exponent", self.apd.gain_exponent.to_string());
        push("apd.sat_current_a", self.apd.sat_current_a.to_string());
        push("apd.v_lin_max_mv", self.apd.v_lin_max_mv.to_string());
        push(
            "apd.residual_fraction",
            self.apd.residual_fraction.to_string(),
        );
        push(
            "apd.avalanche_mean_mv",
            self.apd.avalanche_mean_mv.to_string(),
        );
        push(
            "apd.avalanche_sigma_mv",
            self.apd.avalanche_sigma_mv.to_string(),
        );
        push("sd.delay_gates", self.kernel.delay_gates.to_string());
        push(
            "sd.residual_fraction",
            self.kernel.residual_fraction.to_string(),
        );
        push("sd.ripple_taps", render_taps(&self.kernel.ripple_taps));
        push("im.v_pi_v", self.im.v_pi_v.to_string());
        push(
            "im.max_extinction_db",
            self.im.max_extinction_db.to_string(),
        );
        push(
            "im.insertion_loss_db",
            self.im.insertion_loss_db.to_string(),
        );
        push(
            "source.mean_photon_number",
            self.source.mean_photon_number.to_string(),
        );
        push(
            "protocol.qber_tolerance",
            self.protocol.qber_tolerance.to_string(),
        );
        out
    }
}

/// Description of one count-rate-versus-power sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    /// First blind power of the logarithmic grid, watts.
    pub start_w: f64,
    /// Last blind power of the grid, watts.
    pub stop_w: f64,
    /// Number of grid points (log-spaced, endpoints included).
    pub points: usize,
    /// Monte Carlo gates simulated per grid point.
    pub gates_per_point: usize,
    /// Discriminator level, millivolts.
    pub disc_level_mv: f64,
    /// Modulation pattern applied during the sweep.
    pub pattern: ImPattern,
    /// Modulator drive voltage for dipped gates, volts.
    pub v_rf: f64,
    /// Master seed for the per-point random streams.
    pub seed: u64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            start_w: 1.0e-10,
            stop_w: 1.0e-2,
            points: 60,
            gates_per_point: 1_000_000,
            disc_level_mv: 26.0,
            pattern: ImPattern::Off,
            v_rf: 4.0,
            seed: 1,
        }
    }
}

impl SweepSpec {
    /// Parse an experiment file, starting from defaults.
    pub fn from_flat_text(text: &str) -> Result<Self, ConfigError> {
        let mut spec = SweepSpec::default();
        for (key, value) in parse_flat(text)? {
            spec.apply(&key, &value)?;
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Apply a single `sweep.key = value` assignment.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "sweep.start_w" => self.start_w = parse_f64(key, value)?,
            "sweep.stop_w" => self.stop_w = parse_f64(key, value)?,
            "sweep.points" => self.points = parse_usize(key, value)?,
            "sweep.gates_per_point" => self.gates_per_point = parse_usize(key, value)?,
            "sweep.disc_level_mv" => self.disc_level_mv = parse_f64(key, value)?,
            "sweep.pattern" => {
                self.pattern = value.parse().map_err(|_| ConfigError::BadValue {
                    key: key.to_string(),
                    value: value.to_string(),
                })?
            }
            "sweep.v_rf" => self.v_rf = parse_f64(key, value)?,
            "sweep.seed" => self.seed = parse_u64(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Check the grid makes sense.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.start_w > 0.0) || !(self.stop_w >= self.start_w) {
            return Err(ConfigError::Invalid(
                "sweep powers must satisfy 0 < start <= stop".to_string(),
            ));
        }
        if self.points == 0 {
            return Err(ConfigError::Invalid(
                "sweep needs at least one point".to_string(),
            ));
        }
        if self.gates_per_point == 0 {
            return Err(ConfigError::Invalid(
                "sweep needs at least one gate per point".to_string(),
            ));
        }
        if !(self.disc_level_mv > 0.0) {
            return Err(ConfigError::Invalid(
                "discriminator level must be positive".to_string(),
            ));
        }
        if !(self.v_rf >= 0.0) {
            return Err(ConfigError::Invalid(
                "modulator drive must be non-negative".to_string(),
            ));
        }
        Ok(())
    }

    /// Render to flat text that parses back identically.
    pub fn render(&self) -> String {
        let mut out = String::from("# Count-rate sweep description.\n");
        let mut push = |key: &str, value: String| {
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&value);
            out.push('\n');
        };
        push("sweep.start_w", self.start_w.to_string());
        push("sweep.stop_w", self.stop_w.to_string());
        push("sweep.points", self.points.to_string());
        push("sweep.gates_per_point", self.gates_per_point.to_string());
        push("sweep.disc_level_mv", self.disc_level_mv.to_string());
        push("sweep.pattern", self.pattern.to_string());
        push("sweep.v_rf", self.v_rf.to_string());
        push("sweep.seed", self.seed.to_string());
        out
    }
}

/// Description of one full protocol session under a chosen attacker.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionSpec {
    /// Gates in the session.
    pub gates: usize,
    /// What the attacker does with the channel.
    pub strategy: EveStrategy,
    /// Receiver-side modulation pattern.
    pub pattern: ImPattern,
    /// Modulator drive voltage for dipped gates, volts.
    pub v_rf: f64,
    /// Discriminator level, millivolts.
    pub disc_level_mv: f64,
    /// Master seed for the session's random streams.
    pub seed: u64,
}

impl Default for SessionSpec {
    fn default() -> Self {
        SessionSpec {
            gates: 1_000_000,
            strategy: EveStrategy::Honest,
            pattern: ImPattern::Off,
            v_rf: 4.0,
            disc_level_mv: 26.0,
            seed: 1,
        }
    }
}

impl SessionSpec {
    /// Parse a session file, starting from defaults.
    pub fn from_flat_text(text: &str) -> Result<Self, ConfigError> {
        let mut spec = SessionSpec::default();
        for (key, value) in parse_flat(text)? {
            spec.apply(&key, &value)?;
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Apply a single `session.key = value` assignment.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = || ConfigError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
        };
        match key {
            "session.gates" => self.gates = parse_usize(key, value)?,
            "session.strategy" => self.strategy = EveStrategy::parse(value).map_err(|_| bad())?,
            "session.pattern" => self.pattern = value.parse().map_err(|_| bad())?,
            "session.v_rf" => self.v_rf = parse_f64(key, value)?,
            "session.disc_level_mv" => self.disc_level_mv = parse_f64(key, value)?,
            "session.seed" => self.seed = parse_u64(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Check the session makes sense.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.gates == 0 {
            return Err(ConfigError::Invalid(
                "session needs at least one gate".to_string(),
            ));
        }
        if !(self.disc_level_mv > 0.0) {
            return Err(ConfigError::Invalid(
                "discriminator level must be positive".to_string(),
            ));
        }
        if !(self.v_rf >= 0.0) {
            return Err(ConfigError::Invalid(
                "modulator drive must be non-negative".to_string(),
            ));
        }
        Ok(())
    }

    /// Render to flat text that parses back identically.
    pub fn render(&self) -> String {
        let mut out = String::from("# Protocol session description.\n");
        let mut push = |key: &str, value: String| {
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&value);
            out.push('\n');
        };
        push("session.gates", self.gates.to_string());
        push("session.strategy", self.strategy.to_string());
        push("session.pattern", self.pattern.to_string());
        push("session.v_rf", self.v_rf.to_string());
        push("session.disc_level_mv", self.disc_level_mv.to_string());
        push("session.seed", self.seed.to_string());
        out
    }
}
