//! Desk-scale Monte Carlo model of a gigahertz-gated, self-differencing
//! avalanche photodiode (SD-APD) single-photon detector under bright-light
//! blinding, together with the countermeasure that defeats the attack:
//! random intensity modulation of the incoming light.
//!
//! A blinding attacker floods the APD with continuous bright light. The
//! photocurrent erodes the excess bias until the diode drops out of Geiger
//! mode, stochastic avalanches stop, and the self-differencing circuit
//! cancels the flat photocurrent pedestal — the detector goes silent and
//! then clicks only when the attacker wants it to. The countermeasure
//! places an intensity modulator in front of the detector and carves
//! random deep dips into whatever arrives. Single photons do not care
//! (each gate either has a photon or it does not), but a bright carrier
//! develops large pedestal steps at every dip, the self-differencer turns
//! those steps into counts the attacker cannot suppress, and the random
//! timing forces errors into the sifted key.
//!
//! The crate is organised as a pipeline:
//!
//! * [`frontend`] — DC electrical model of the biased APD: photocurrent
//!   fixed point, excess-bias erosion, Geiger/linear mode, and per-gate
//!   response synthesis (avalanches, dark counts, pedestal).
//! * [`sd`] — the self-differencing transform, ripple echoes, the
//!   discriminator, and pulse-polarity classification.
//! * [`modulator`] — the intensity modulator: transmission curve, gating
//!   patterns, and throughput/penalty accounting.
//! * [`attack`] — attacker strategies: honest transmission, continuous
//!   blinding, faked states, burst blinding, partial-session blinding.
//! * [`protocol`] — sifting, error-rate accounting, binary entropy, key
//!   rate, and the abort decision.
//! * [`calibrate`] — deterministic derivation of the electrical parameter
//!   set from measurable anchor points.
//! * [`sweep`] / [`session`] — the two top-level experiments: power sweeps
//!   of the count rate, and end-to-end key exchange sessions.
//! * [`config`] — flat `key = value` parameter files shared by the CLI.
//!
//! # Example
//!
//! A continuous 1 mW blind silences the detector; the same blind with a
//! 1-in-4 random intensity dip does not:
//!
//! ```
//! use sdapd::frontend::{ApdModel, BiasNetwork, steady_state};
//!
//! let bias = BiasNetwork::default();
//! let model = ApdModel::default();
//!
//! // 1 mW of continuous light: out of Geiger mode, below the 26 mV
//! // discriminator — silently blinded.
//! let blinded = steady_state(&bias, &model, 1.0e-3, 26.0).unwrap();
//! assert!(!blinded.geiger_active);
//! assert!(blinded.blinded);
//! assert!(blinded.photocurrent_a >= 1.0e-3);
//!
//! // Honest single-photon levels leave the detector armed.
//! let honest = steady_state(&bias, &model, 6.4e-11, 26.0).unwrap();
//! assert!(honest.geiger_active);
//! assert!(!honest.blinded);
//! ```

pub mod attack;
pub mod calibrate;
pub mod config;
pub mod frontend;
pub mod modulator;
pub mod protocol;
pub mod rng;
pub mod sd;
pub mod session;
pub mod sweep;
pub mod trace;

pub use trace::GateTrace;

#[cfg(doctest)]
mod book {
    //! Doc-tests that keep the guide in `book/` honest: every snippet in
    //! the chapters compiles and its assertions run under `cargo test`.
    #[doc = include_str!("../../../book/src/detector-model.md")]
    mod detector_model {}
    #[doc = include_str!("../../../book/src/self-differencing.md")]
    mod self_differencing {}
    #[doc = include_str!("../../../book/src/intensity-modulation.md")]
    mod intensity_modulation {}
    #[doc = include_str!("../../../book/src/attack-strategies.md")]
    mod attack_strategies {}
    #[doc = include_str!("../../../book/src/session-accounting.md")]
    mod session_accounting {}
}
