//! Self-differencing cancellation, ripple echoes, and the discriminator.
//!
//! A self-differencing detector subtracts from each gate's output the
//! output of the gate one delay earlier. Anything periodic at the gate
//! rate — the capacitive gate feedthrough, and crucially any *flat*
//! pedestal — cancels down to a small uncancelled residual, while a gate
//! that differs from its predecessor stands out at full amplitude. That
//! is what makes the detector fast, and also what a blinding attacker
//! exploits: a constant bright pedestal is precisely the signal the
//! circuit is built to erase.
//!
//! The subtraction is imperfect twice over. A fraction
//! `residual_fraction` of the pedestal survives (finite delay-line
//! matching), and the analogue delay loop rings: a sharp
//! negative-then-positive excursion that settles back to its pre-dip
//! level — the signature of an intensity dip recovering — is followed by
//! decaying positive ripples described by `ripple_taps`. An excursion
//! that ends higher than it started is a slew, not a recovery, and does
//! not ring. While the loop rings, the echo dominates the gate: the
//! small repetitive-feedthrough term is squelched beneath it, though a
//! genuine gate-to-gate change still passes. Each ripple large enough to
//! clear the discriminator is one more count the attacker never asked
//! for.

use thiserror::Error;

use crate::trace::GateTrace;

/// Errors from self-differencing configuration.
#[derive(Debug, Error, PartialEq)]
pub enum SdError {
    /// The delay must span at least one gate.
    #[error("self-differencing delay must be at least one gate")]
    ZeroDelay,
    /// The uncancelled residual is a small fraction of the pedestal.
    #[error("residual fraction must lie in [0, 1) (got {0})")]
    InvalidResidual(f64),
    /// Ripple taps are decaying echo fractions.
    #[error("ripple tap must lie in [0, 1] (got {0})")]
    InvalidTap(f64),
}

/// The self-differencing delay line and its imperfections.
#[derive(Debug, Clone, PartialEq)]
pub struct SdKernel {
    /// Cancellation delay in gates.
    pub delay_gates: usize,
    /// Fraction of a flat pedestal that survives cancellation.
    pub residual_fraction: f64,
    /// Echo amplitudes (as fractions of the triggering peak) on the
    /// gates following a dip-recovery excursion.
    pub ripple_taps: Vec<f64>,
}

impl SdKernel {
    /// Validating constructor.
    pub fn new(
        delay_gates: usize,
        residual_fraction: f64,
        ripple_taps: Vec<f64>,
    ) -> Result<Self, SdError> {
        if delay_gates == 0 {
            return Err(SdError::ZeroDelay);
        }
        if !(0.0..1.0).contains(&residual_fraction) {
            return Err(SdError::InvalidResidual(residual_fraction));
        }
        for &t in &ripple_taps {
            if !(0.0..=1.0).contains(&t) {
                return Err(SdError::InvalidTap(t));
            }
        }
        Ok(SdKernel {
            delay_gates,
            residual_fraction,
            ripple_taps,
        })
    }

    /// Perfect single-gate differencer: no residual, no ripples.
    pub fn ideal() -> Self {
        SdKernel {
            delay_gates: 1,
            residual_fraction: 0.0,
            ripple_taps: Vec::new(),
        }
    }
}

impl Default for SdKernel {
    /// The calibrated hardware: one-gate delay, the same uncancelled
    /// residual the blinded-state predicate uses, and two decaying
    /// ripple echoes.
    fn default() -> Self {
        SdKernel {
            delay_gates: 1,
            residual_fraction: 0.0114669994,
            ripple_taps: vec![0.3, 0.15],
        }
    }
}

/// Apply the self-differencing transform to a per-gate trace.
///
/// The base output is `in[i] − (1 − residual) · in[i − delay]`, with the
/// input extended edge-wise before gate zero (the circuit has been
/// running on the same level it first sees). On top of the base output,
/// every *dip-recovery* excursion rings: a positive base sample
/// immediately preceded by a negative one, with the input back at or
/// below its pre-dip level (`in[k] ≤ in[k − 1 − delay]`). Scaled echoes
/// of the recovery peak land on the following gates, one per ripple tap.
/// While a gate is ringing, the echo dominates its output: the
/// repetitive-feedthrough term that ordinary cancellation leaves behind
/// is squelched, and only a genuine gate-to-gate input difference adds
/// to the echo. Isolated positive peaks and net upward steps (ordinary
/// avalanches, rising burst edges) do not ring: an excursion that ends
/// *above* where it started is a slew, not a recovery.
pub fn sd_transform(input: &GateTrace, kernel: &SdKernel) -> GateTrace {
    let n = input.len();
    let d = kernel.delay_gates;
    let keep = 1.0 - kernel.residual_fraction;

    let edge = |i: usize, back: usize| if i >= back { input[i - back] } else { input[0] };

    let mut base = Vec::with_capacity(n);
    for i in 0..n {
        base.push(input[i] - keep * edge(i, d));
    }

    let mut out = base.clone();
    if !kernel.ripple_taps.is_empty() {
        let mut echo = vec![0.0_f64; n];
        let mut ringing = vec![false; n];
        for k in 1..n {
            if base[k] > 0.0 && base[k - 1] < 0.0 && input[k] <= edge(k, 1 + d) {
                for (j, &tap) in kernel.ripple_taps.iter().enumerate() {
                    let at = k + 1 + j;
                    if at < n {
                        echo[at] += tap * base[k];
                        ringing[at] = true;
                    }
                }
            }
        }
        for i in 0..n {
            if ringing[i] {
                out[i] = echo[i] + keep * (input[i] - edge(i, d));
            }
        }
    }

    GateTrace(out)
}

/// Shape classification of a discriminator count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    /// Positive excursion followed by a negative one: the shape of an
    /// ordinary avalanche through the differencer.
    Normal,
    /// Negative excursion followed by the positive crossing: the shape of
    /// an intensity dip recovering — the pedestal fell, then came back.
    Inverted,
    /// Neither neighbouring excursion goes below the mirror level
    /// (ripples, rising edges, residual crossings).
    Unclassified,
}

/// Discriminator counts extracted from an SD-referred trace.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionEvents {
    /// Number of gates examined.
    pub gates: usize,
    /// Gate indices whose output exceeded the level.
    pub gate_indices: Vec<usize>,
    /// Pulse-shape class of each count, aligned with `gate_indices`.
    pub polarities: Vec<Polarity>,
}

impl DetectionEvents {
    /// Total number of counts.
    pub fn count(&self) -> usize {
        self.gate_indices.len()
    }

    /// Counts per second at the given gate rate.
    pub fn count_rate_hz(&self, gate_rate_hz: f64) -> f64 {
        if self.gates == 0 {
            0.0
        } else {
            self.count() as f64 / self.gates as f64 * gate_rate_hz
        }
    }
}

/// Run the level discriminator over an SD-referred trace.
///
/// A gate counts when its output exceeds `level_mv` strictly. Each count
/// is classified by looking one delay to either side for an excursion
/// below `−level_mv`: behind means [`Polarity::Inverted`], ahead means
/// [`Polarity::Normal`], neither or both means
/// [`Polarity::Unclassified`].
pub fn discriminate(sd_out: &GateTrace, level_mv: f64, kernel: &SdKernel) -> DetectionEvents {
    let n = sd_out.len();
    let d = kernel.delay_gates;
    let mut gate_indices = Vec::new();
    let mut polarities = Vec::new();

    for i in 0..n {
        if sd_out[i] > level_mv {
            let before = (i.saturating_sub(d)..i).any(|j| sd_out[j] < -level_mv);
            let after = ((i + 1)..n.min(i + 1 + d)).any(|j| sd_out[j] < -level_mv);
            let polarity = match (before, after) {
                (true, false) => Polarity::Inverted,
                (false, true) => Polarity::Normal,
                _ => Polarity::Unclassified,
            };
            gate_indices.push(i);
            polarities.push(polarity);
        }
    }

    DetectionEvents {
        gates: n,
        gate_indices,
        polarities,
    }
}
