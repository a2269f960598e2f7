//! Sifting, error accounting, key rate, and the abort decision.
//!
//! The receiver cannot see *why* a gate clicked — only that it did, and
//! with which bit in which basis. Security rests on arithmetic done on
//! the sifted sample: the observed error rate bounds the attacker's
//! knowledge through the key-rate formula `R(Q) = max(0, 1 − 2·h₂(Q))`,
//! and any session whose error rate reaches the tolerance is aborted.
//! The danger case this module also quantifies: an attacker who blinds
//! only part of a session dilutes her errors into the honest remainder.
//! Because the key-rate formula is convex, the averaged error rate can
//! never make the key rate exceed what the undisturbed fraction alone
//! would support — averaging helps the defender, not the attacker.

use thiserror::Error;

/// Errors from protocol arithmetic.
#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    /// A probability-like argument left its domain.
    #[error("{what} must lie in [{lo}, {hi}] (got {value})")]
    Domain {
        what: &'static str,
        lo: f64,
        hi: f64,
        value: f64,
    },
    /// Mixture weights must partition the sifted sample.
    #[error("mixture weights must be non-negative and sum to 1 (sum = {0})")]
    BadWeights(f64),
}

/// Binary entropy `h₂(q) = −q·log₂ q − (1−q)·log₂(1−q)`, zero at both
/// endpoints.
pub fn binary_entropy(q: f64) -> Result<f64, ProtocolError> {
    if !(0.0..=1.0).contains(&q) {
        return Err(ProtocolError::Domain {
            what: "entropy argument",
            lo: 0.0,
            hi: 1.0,
            value: q,
        });
    }
    if q == 0.0 || q == 1.0 {
        return Ok(0.0);
    }
    Ok(-q * q.log2() - (1.0 - q) * (1.0 - q).log2())
}

/// Key-rate formula and abort threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyRateModel {
    /// Error rate at or above which the session aborts.
    pub qber_tolerance: f64,
}

impl Default for KeyRateModel {
    fn default() -> Self {
        KeyRateModel {
            qber_tolerance: 0.11,
        }
    }
}

impl KeyRateModel {
    /// Check the tolerance is a usable threshold.
    pub fn validate(&self) -> Result<(), ProtocolError> {
        if !(self.qber_tolerance > 0.0 && self.qber_tolerance <= 0.5) {
            return Err(ProtocolError::Domain {
                what: "abort tolerance",
                lo: 0.0,
                hi: 0.5,
                value: self.qber_tolerance,
            });
        }
        Ok(())
    }

    /// Asymptotic secret fraction `max(0, 1 − 2·h₂(q))`.
    pub fn key_rate(&self, qber: f64) -> Result<f64, ProtocolError> {
        Ok((1.0 - 2.0 * binary_entropy(qber)?).max(0.0))
    }

    /// True when the observed error rate mandates an abort (inclusive at
    /// the tolerance).
    pub fn aborts(&self, qber: f64) -> bool {
        qber >= self.qber_tolerance
    }
}

/// Result of checking the partial-blinding dilution bound.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexityCheck {
    /// The mixture error rate `c_b·q_b + c_u·q_u`.
    pub q_total: f64,
    /// Key rate evaluated at the mixture error rate.
    pub rate_at_total: f64,
    /// Key rate the undisturbed fraction alone would support.
    pub rate_undisturbed: f64,
    /// Whether `rate_at_total ≤ rate_undisturbed` held.
    pub bounded: bool,
}

/// Check that diluting blinded-gate errors into an honest remainder
/// cannot raise the key rate above the undisturbed fraction's own rate.
///
/// `c_blinded` and `c_undisturbed` are the sifted-sample weights of the
/// two populations and must sum to one; `q_blinded` and `q_undisturbed`
/// are their error rates.
pub fn convexity_bound(
    model: &KeyRateModel,
    c_blinded: f64,
    q_blinded: f64,
    c_undisturbed: f64,
    q_undisturbed: f64,
) -> Result<ConvexityCheck, ProtocolError> {
    if c_blinded < 0.0 || c_undisturbed < 0.0 {
        return Err(ProtocolError::BadWeights(c_blinded.min(c_undisturbed)));
    }
    let sum = c_blinded + c_undisturbed;
    if (sum - 1.0).abs() > 1.0e-9 {
        return Err(ProtocolError::BadWeights(sum));
    }
    for (what, q) in [
        ("blinded error rate", q_blinded),
        ("undisturbed error rate", q_undisturbed),
    ] {
        if !(0.0..=1.0).contains(&q) {
            return Err(ProtocolError::Domain {
                what,
                lo: 0.0,
                hi: 1.0,
                value: q,
            });
        }
    }
    let q_total = c_blinded * q_blinded + c_undisturbed * q_undisturbed;
    let rate_at_total = model.key_rate(q_total)?;
    let rate_undisturbed = model.key_rate(q_undisturbed)?;
    Ok(ConvexityCheck {
        q_total,
        rate_at_total,
        rate_undisturbed,
        bounded: rate_at_total <= rate_undisturbed + 1.0e-12,
    })
}

/// Why a gate clicked, as the simulator (not the receiver!) knows it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountOrigin {
    /// Photon-triggered Geiger avalanche.
    Avalanche,
    /// Dark-carrier-triggered avalanche.
    DarkCount,
    /// Pedestal step from an intensity-modulator dip recovering.
    ImInduced,
    /// Delay-line ripple echoing an earlier dip recovery.
    Ripple,
    /// Attacker's resent state clicking a blinded detector.
    FakedState,
    /// Rising edge of a blinding burst punching through the differencer.
    Transient,
    /// Uncancelled pedestal residual crossing the discriminator.
    Residual,
}

/// Per-origin count tallies for a session.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OriginCounts {
    pub avalanche: usize,
    pub dark: usize,
    pub im_induced: usize,
    pub ripple: usize,
    pub faked_state: usize,
    pub transient: usize,
    pub residual: usize,
}

impl OriginCounts {
    /// Record one click of the given origin.
    pub fn record(&mut self, origin: CountOrigin) {
        match origin {
            CountOrigin::Avalanche => self.avalanche += 1,
            CountOrigin::DarkCount => self.dark += 1,
            CountOrigin::ImInduced => self.im_induced += 1,
            CountOrigin::Ripple => self.ripple += 1,
            CountOrigin::FakedState => self.faked_state += 1,
            CountOrigin::Transient => self.transient += 1,
            CountOrigin::Residual => self.residual += 1,
        }
    }

    /// Total clicks across all origins.
    pub fn total(&self) -> usize {
        self.avalanche
            + self.dark
            + self.im_induced
            + self.ripple
            + self.faked_state
            + self.transient
            + self.residual
    }
}

/// One detector click, ready for sifting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClickRecord {
    /// Gate index within the session.
    pub gate: usize,
    /// Why the gate clicked (simulator-side ground truth).
    pub origin: CountOrigin,
    /// The receiver's basis choice for this gate.
    pub bob_basis: bool,
    /// The bit value the receiver registered.
    pub bob_bit: bool,
    /// Whether the gate was under attacker control.
    pub attacked: bool,
}

/// Everything the session learns after sifting.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionStats {
    /// Gates in the session.
    pub gates: usize,
    /// Clicks by origin (ground truth, for diagnostics — the protocol
    /// itself only ever sees totals, bases, and bits).
    pub origins: OriginCounts,
    /// Sifted pairs (bases matched).
    pub sifted: usize,
    /// Sifted pairs whose bits disagreed.
    pub errors: usize,
    /// Observed error rate, when any pairs sifted.
    pub qber: Option<f64>,
    /// Sifted pairs on attacker-controlled gates.
    pub sifted_attacked: usize,
    /// Errors on attacker-controlled gates.
    pub errors_attacked: usize,
    /// Sifted pairs on undisturbed gates.
    pub sifted_clean: usize,
    /// Errors on undisturbed gates.
    pub errors_clean: usize,
}

impl SessionStats {
    /// Error rate of the attacker-controlled sifted subsample.
    pub fn qber_attacked(&self) -> Option<f64> {
        (self.sifted_attacked > 0)
            .then(|| self.errors_attacked as f64 / self.sifted_attacked as f64)
    }

    /// Error rate of the undisturbed sifted subsample.
    pub fn qber_clean(&self) -> Option<f64> {
        (self.sifted_clean > 0).then(|| self.errors_clean as f64 / self.sifted_clean as f64)
    }

    /// Sifted-sample weight of the attacker-controlled subsample.
    pub fn attacked_weight(&self) -> Option<f64> {
        (self.sifted > 0).then(|| self.sifted_attacked as f64 / self.sifted as f64)
    }
}

/// Sift clicks against the transmitter's record and accumulate errors.
///
/// A click sifts when the receiver's basis matches the transmitter's for
/// that gate; a sifted pair is an error when the bits disagree.
pub fn sift_and_accumulate(
    clicks: &[ClickRecord],
    alice_bases: &[bool],
    alice_bits: &[bool],
) -> SessionStats {
    debug_assert_eq!(alice_bases.len(), alice_bits.len());
    let mut stats = SessionStats {
        gates: alice_bases.len(),
        origins: OriginCounts::default(),
        sifted: 0,
        errors: 0,
        qber: None,
        sifted_attacked: 0,
        errors_attacked: 0,
        sifted_clean: 0,
        errors_clean: 0,
    };
    for click in clicks {
        stats.origins.record(click.origin);
        if click.bob_basis != alice_bases[click.gate] {
            continue;
        }
        stats.sifted += 1;
        let error = click.bob_bit != alice_bits[click.gate];
        if error {
            stats.errors += 1;
        }
        if click.attacked {
            stats.sifted_attacked += 1;
            if error {
                stats.errors_attacked += 1;
            }
        } else {
            stats.sifted_clean += 1;
            if error {
                stats.errors_clean += 1;
            }
        }
    }
    if stats.sifted > 0 {
        stats.qber = Some(stats.errors as f64 / stats.sifted as f64);
    }
    stats
}

/// Why a session was aborted.
#[derive(Debug, Clone, PartialEq)]
pub enum AbortReason {
    /// The observed error rate reached the tolerance.
    QberAboveTolerance { qber: f64, tolerance: f64 },
    /// Nothing sifted: no counts, or no basis matches at all.
    EmptySession,
}

/// The session verdict.
#[derive(Debug, Clone, PartialEq)]
pub enum Decision {
    /// Distil key at the stated rate.
    Proceed { qber: f64, key_rate: f64 },
    /// Throw the session away.
    Abort { reason: AbortReason },
}

impl Decision {
    /// True when the verdict is an abort.
    pub fn is_abort(&self) -> bool {
        matches!(self, Decision::Abort { .. })
    }
}

/// Decide a session's fate from its sifted statistics.
///
/// An empty sifted sample aborts (nothing to certify); an error rate at
/// or above the tolerance aborts; otherwise the session proceeds at the
/// key rate of its observed error rate.
pub fn abort_decision(stats: &SessionStats, model: &KeyRateModel) -> Decision {
    let Some(qber) = stats.qber else {
        return Decision::Abort {
            reason: AbortReason::EmptySession,
        };
    };
    if model.aborts(qber) {
        return Decision::Abort {
            reason: AbortReason::QberAboveTolerance {
                qber,
                tolerance: model.qber_tolerance,
            },
        };
    }
    let key_rate = model
        .key_rate(qber)
        .expect("observed error rate is a frequency in [0, 1]");
    Decision::Proceed { qber, key_rate }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn entropy_endpoints_and_midpoint_are_exact() {
        assert_eq!(binary_entropy(0.0).unwrap(), 0.0);
        assert_eq!(binary_entropy(1.0).unwrap(), 0.0);
        assert_eq!(binary_entropy(0.5).unwrap(), 1.0);
        assert!(binary_entropy(-0.1).is_err());
        assert!(binary_entropy(1.1).is_err());
    }

    #[test]
    fn entropy_near_the_abort_threshold_matches_the_frozen_value() {
        assert!((binary_entropy(0.11).unwrap() - 0.499915958164528).abs() < 1.0e-12);
    }

    #[test]
    fn key_rate_matches_frozen_values() {
        let model = KeyRateModel::default();
        assert_eq!(model.key_rate(0.0).unwrap(), 1.0);
        assert!((model.key_rate(0.05).unwrap() - 0.4272060857680875).abs() < 1.0e-12);
        assert_eq!(model.key_rate(0.5).unwrap(), 0.0);
        assert_eq!(model.key_rate(0.25).unwrap(), 0.0);
    }

    #[test]
    fn key_rate_vanishes_within_tolerance_band_of_the_abort_threshold() {
        // The rate's zero crossing sits essentially at the 0.11 abort
        // tolerance: bisect for it and compare.
        let model = KeyRateModel::default();
        let mut lo = 0.05;
        let mut hi = 0.25;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if model.key_rate(mid).unwrap() > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let crossing = 0.5 * (lo + hi);
        assert!(
            (crossing - 0.11).abs() <= 2.0e-4,
            "zero crossing {crossing} should sit within 2e-4 of the abort tolerance"
        );
    }

    #[test]
    fn abort_is_inclusive_at_the_tolerance() {
        let model = KeyRateModel::default();
        assert!(model.aborts(0.11));
        assert!(model.aborts(0.2));
        assert!(!model.aborts(0.10999));
    }

    #[test]
    fn dilution_cannot_beat_the_undisturbed_rate() {
        let model = KeyRateModel::default();
        // A half-blinded session with the full-attack error rate on the
        // blinded part and 1% on the honest part.
        let check = convexity_bound(&model, 0.5, 1.0 / 6.0, 0.5, 0.01).unwrap();
        assert!(check.bounded);
        assert!((check.q_total - (0.5 / 6.0 + 0.005)).abs() < 1.0e-12);
        assert!(check.rate_at_total < check.rate_undisturbed);

        // Degenerate mixtures stay bounded too.
        assert!(
            convexity_bound(&model, 0.0, 0.5, 1.0, 0.03)
                .unwrap()
                .bounded
        );
        assert!(convexity_bound(&model, 1.0, 0.5, 0.0, 0.0).unwrap().bounded);
    }

    #[test]
    fn bad_mixture_weights_are_rejected() {
        let model = KeyRateModel::default();
        assert!(matches!(
            convexity_bound(&model, 0.6, 0.1, 0.6, 0.1),
            Err(ProtocolError::BadWeights(_))
        ));
        assert!(matches!(
            convexity_bound(&model, -0.1, 0.1, 1.1, 0.1),
            Err(ProtocolError::BadWeights(_))
        ));
        assert!(convexity_bound(&model, 0.5, 1.5, 0.5, 0.1).is_err());
    }

    #[test]
    fn sifting_keeps_basis_matches_and_counts_bit_disagreements() {
        let alice_bases = vec![true, false, true, false];
        let alice_bits = vec![true, true, false, false];
        let clicks = vec![
            // Basis match, bit match: sifted, no error.
            ClickRecord {
                gate: 0,
                origin: CountOrigin::Avalanche,
                bob_basis: true,
                bob_bit: true,
                attacked: false,
            },
            // Basis mismatch: dropped.
            ClickRecord {
                gate: 1,
                origin: CountOrigin::DarkCount,
                bob_basis: true,
                bob_bit: false,
                attacked: false,
            },
            // Basis match, bit flip on an attacked gate: sifted error.
            ClickRecord {
                gate: 2,
                origin: CountOrigin::ImInduced,
                bob_basis: true,
                bob_bit: true,
                attacked: true,
            },
        ];
        let stats = sift_and_accumulate(&clicks, &alice_bases, &alice_bits);
        assert_eq!(stats.sifted, 2);
        assert_eq!(stats.errors, 1);
        assert_eq!(stats.qber, Some(0.5));
        assert_eq!(stats.sifted_attacked, 1);
        assert_eq!(stats.errors_attacked, 1);
        assert_eq!(stats.sifted_clean, 1);
        assert_eq!(stats.errors_clean, 0);
        assert_eq!(stats.qber_attacked(), Some(1.0));
        assert_eq!(stats.qber_clean(), Some(0.0));
        assert_eq!(stats.attacked_weight(), Some(0.5));
        assert_eq!(stats.origins.total(), 3);
        assert_eq!(stats.origins.im_induced, 1);
    }

    #[test]
    fn empty_sessions_abort() {
        let stats = sift_and_accumulate(&[], &[true; 4], &[false; 4]);
        assert_eq!(stats.qber, None);
        let d = abort_decision(&stats, &KeyRateModel::default());
        assert_eq!(
            d,
            Decision::Abort {
                reason: AbortReason::EmptySession
            }
        );
    }

    #[test]
    fn decisions_split_at_the_tolerance() {
        let model = KeyRateModel::default();
        let mut stats = sift_and_accumulate(&[], &[], &[]);
        stats.sifted = 100;
        stats.errors = 11;
        stats.qber = Some(0.11);
        assert!(abort_decision(&stats, &model).is_abort());

        stats.errors = 2;
        stats.qber = Some(0.02);
        match abort_decision(&stats, &model) {
            Decision::Proceed { qber, key_rate } => {
                assert_eq!(qber, 0.02);
                assert!((key_rate - model.key_rate(0.02).unwrap()).abs() < 1.0e-15);
                assert!(key_rate > 0.7);
            }
            other => panic!("expected proceed, got {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn entropy_is_symmetric_and_bounded(q in 0.0_f64..=1.0) {
            let h = binary_entropy(q).unwrap();
            prop_assert!((0.0..=1.0).contains(&h));
            prop_assert!((h - binary_entropy(1.0 - q).unwrap()).abs() < 1.0e-12);
        }

        #[test]
        fn key_rate_never_increases_with_error(
            q in 0.0_f64..0.5, dq in 0.0_f64..0.1,
        ) {
            let model = KeyRateModel::default();
            let hi = (q + dq).min(0.5);
            prop_assert!(model.key_rate(hi).unwrap() <= model.key_rate(q).unwrap() + 1.0e-12);
        }

        #[test]
        fn heavy_blinded_errors_always_stay_bounded(
            c_b in 0.0_f64..=1.0,
            q_b in 0.125_f64..=0.5,
            q_u in 0.0_f64..0.5,
        ) {
            // Whenever the blinded subsample errs at 12.5% or more its
            // own key contribution is zero, so the mixture can never
            // out-rate the undisturbed part alone.
            let model = KeyRateModel::default();
            let check = convexity_bound(&model, c_b, q_b, 1.0 - c_b, q_u).unwrap();
            prop_assert!(check.bounded, "violated at c_b={c_b} q_b={q_b} q_u={q_u}");
        }
    }
}
