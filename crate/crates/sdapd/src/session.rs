//! One full receiver session: photons in, abort verdict out.
//!
//! A session wires every layer together. The transmitter draws random
//! bases and bits; the attacker either passes the attenuated signal
//! through or substitutes blinding light; the receiver's intensity
//! modulator carves its dips into whatever arrives (and charges its
//! insertion loss); the bias network settles on each stretch of carrier;
//! the detector responds gate by gate; the self-differencer cancels,
//! rings, and leaks; the discriminator fires; and the sifted record
//! either certifies a key rate or aborts.
//!
//! Two bookkeeping layers coexist deliberately. The *protocol* sees only
//! what a real receiver would: clicks, bases, bits. The *simulator*
//! additionally knows why each gate clicked — avalanche, dark count,
//! dip recovery, ripple, faked state, switch-on transient, or residual
//! leakage — so tests can assert not just that the countermeasure
//! detects blinding, but that it detects it for the right reason.
//!
//! Faked-state clicks follow an intercept-resend picture. The attacker
//! measures each transmitted pulse in a random basis, learning the true
//! bit when her basis matches the transmitter's and a coin flip
//! otherwise, and resends a trigger pulse that fires the blinded
//! detector exactly when the receiver's basis matches hers. A gate the
//! receiver's modulator dips attenuates that trigger pulse below the
//! click threshold along with everything else, so dipped gates never
//! yield faked clicks — the detector answers with a recovery transient
//! on the next gate instead, carrying a random bit. That substitution is
//! the whole countermeasure: it converts silent, perfectly correlated
//! faked clicks into loud, uncorrelated ones.

use rand::Rng;
use thiserror::Error;

use crate::attack::{build_trace, faked_state_click_rule, AttackError};
use crate::config::{Params, SessionSpec};
use crate::frontend::{gate_responses, steady_state, Fire, FrontendError};
use crate::modulator::{self, ModulatorError};
use crate::protocol::{
    abort_decision, sift_and_accumulate, AbortReason, ClickRecord, CountOrigin, Decision,
    SessionStats,
};
use crate::rng::stream_rng;
use crate::sd::{discriminate, sd_transform};
use crate::trace::GateTrace;

/// Errors from running a session.
#[derive(Debug, Error, PartialEq)]
pub enum SessionError {
    /// The detector front end rejected its operating point.
    #[error(transparent)]
    Frontend(#[from] FrontendError),
    /// The attacker description is inconsistent.
    #[error(transparent)]
    Attack(#[from] AttackError),
    /// The modulator description is inconsistent.
    #[error(transparent)]
    Modulator(#[from] ModulatorError),
}

/// Everything one session produced.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionRecord {
    /// The session description that produced this record.
    pub spec: SessionSpec,
    /// Sifted statistics and per-origin click tallies.
    pub stats: SessionStats,
    /// The verdict.
    pub decision: Decision,
}

/// Column header for [`SessionRecord::to_csv`].
pub const SESSION_CSV_HEADER: &str = "gates,strategy,pattern,v_rf_v,disc_level_mv,seed,\
clicks,avalanche,dark_count,im_induced,ripple,faked_state,transient,residual,\
sifted,errors,sifted_attacked,errors_attacked,sifted_clean,errors_clean,\
qber,key_rate,decision";

impl SessionRecord {
    /// Short label for the verdict.
    pub fn decision_label(&self) -> &'static str {
        match self.decision {
            Decision::Proceed { .. } => "proceed",
            Decision::Abort {
                reason: AbortReason::QberAboveTolerance { .. },
            } => "abort-qber",
            Decision::Abort {
                reason: AbortReason::EmptySession,
            } => "abort-empty",
        }
    }

    /// Render the record as a two-line CSV document (header plus row).
    pub fn to_csv(&self) -> String {
        let (qber, key_rate) = match self.decision {
            Decision::Proceed { qber, key_rate } => (Some(qber), Some(key_rate)),
            Decision::Abort {
                reason: AbortReason::QberAboveTolerance { qber, .. },
            } => (Some(qber), None),
            Decision::Abort {
                reason: AbortReason::EmptySession,
            } => (None, None),
        };
        let num = |v: Option<f64>| match v {
            Some(v) => format!("{v:.8e}"),
            None => "nan".to_string(),
        };
        let o = &self.stats.origins;
        let mut out = String::from(SESSION_CSV_HEADER);
        out.push('\n');
        out.push_str(&format!(
            "{},{},{},{:.8e},{:.8e},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            self.spec.gates,
            self.spec.strategy,
            self.spec.pattern,
            self.spec.v_rf,
            self.spec.disc_level_mv,
            self.spec.seed,
            o.total(),
            o.avalanche,
            o.dark,
            o.im_induced,
            o.ripple,
            o.faked_state,
            o.transient,
            o.residual,
            self.stats.sifted,
            self.stats.errors,
            self.stats.sifted_attacked,
            self.stats.errors_attacked,
            self.stats.sifted_clean,
            self.stats.errors_clean,
            num(qber),
            num(key_rate),
            self.decision_label(),
        ));
        out
    }
}

/// Run one full session and return its record.
///
/// All randomness derives from `spec.seed` through named sub-streams
/// (transmitter, receiver bases, attacker, modulator pattern, detector,
/// readout), so identical inputs reproduce the record bit for bit and
/// each party's draws are insensitive to the others' consumption.
pub fn run_session(params: &Params, spec: &SessionSpec) -> Result<SessionRecord, SessionError> {
    let gates = spec.gates;
    let mut alice_rng = stream_rng(spec.seed, "alice");
    let mut bob_rng = stream_rng(spec.seed, "bob");
    let mut eve_rng = stream_rng(spec.seed, "eve");
    let mut im_rng = stream_rng(spec.seed, "im");
    let mut apd_rng = stream_rng(spec.seed, "apd");
    let mut readout_rng = stream_rng(spec.seed, "readout");

    let mut alice_bases = Vec::with_capacity(gates);
    let mut alice_bits = Vec::with_capacity(gates);
    for _ in 0..gates {
        alice_bases.push(alice_rng.gen::<bool>());
        alice_bits.push(alice_rng.gen::<bool>());
    }
    let bob_bases: Vec<bool> = (0..gates).map(|_| bob_rng.gen::<bool>()).collect();

    let attack = build_trace(
        &spec.strategy,
        &params.source,
        gates,
        params.apd.photon_energy_j(),
        params.apd.gate_rate_hz,
        &mut eve_rng,
    )?;
    let schedule = spec.pattern.schedule(gates, &mut im_rng);
    let optical = modulator::apply(&params.im, &schedule, spec.v_rf, &attack.power_w)?;

    // Detector response, one carrier stretch at a time. The bias point
    // tracks the carrier the attacker supplies (every carrier change is
    // a change of the attacked flag), while the per-gate optical trace
    // carries the modulator's dips through that operating point.
    let throughput = params.im.throughput();
    let mut responses: Vec<f64> = Vec::with_capacity(gates);
    let mut fires: Vec<Fire> = Vec::with_capacity(gates);
    let mut blinded = vec![false; gates];
    let mut start = 0usize;
    while start < gates {
        let mut end = start + 1;
        while end < gates && attack.attacked[end] == attack.attacked[start] {
            end += 1;
        }
        let carrier_w = attack.power_w[start] * throughput;
        let state = steady_state(&params.bias, &params.apd, carrier_w, spec.disc_level_mv)?;
        let segment = GateTrace(optical.as_slice()[start..end].to_vec());
        let out = gate_responses(&state, &params.apd, &segment, &mut apd_rng)?;
        responses.extend_from_slice(out.trace.as_slice());
        fires.extend_from_slice(&out.fires);
        blinded[start..end].fill(state.blinded);
        start = end;
    }

    let sd_out = sd_transform(&GateTrace(responses), &params.kernel);
    let events = discriminate(&sd_out, spec.disc_level_mv, &params.kernel);

    let delay = params.kernel.delay_gates;
    let tap_count = params.kernel.ripple_taps.len();
    let mut clicked = vec![false; gates];
    let mut clicks: Vec<ClickRecord> = Vec::with_capacity(events.count());

    for &g in &events.gate_indices {
        clicked[g] = true;
        let origin = match fires[g] {
            Fire::Signal => CountOrigin::Avalanche,
            Fire::Dark => CountOrigin::DarkCount,
            Fire::None => {
                // The very first gate cannot present a switch-on edge:
                // the differencer starts in equilibrium with whatever
                // level it first sees.
                let edge = g > 0 && attack.attacked[g] && !attack.attacked[g - 1];
                let recovery = g >= delay && schedule[g - delay];
                let ripple =
                    (0..tap_count).any(|j| g >= delay + 1 + j && schedule[g - (delay + 1 + j)]);
                if edge {
                    CountOrigin::Transient
                } else if recovery {
                    CountOrigin::ImInduced
                } else if ripple {
                    CountOrigin::Ripple
                } else {
                    CountOrigin::Residual
                }
            }
        };
        // Only an avalanche on an undisturbed gate carries the
        // transmitter's encoding (conjugate-basis detection lands on a
        // random bit). Everything else the discriminator registers is
        // electronics, not photons: its bit is noise.
        let bob_basis = bob_bases[g];
        let faithful =
            origin == CountOrigin::Avalanche && !attack.attacked[g] && bob_basis == alice_bases[g];
        let bob_bit = if faithful {
            alice_bits[g]
        } else {
            readout_rng.gen::<bool>()
        };
        clicks.push(ClickRecord {
            gate: g,
            origin,
            bob_basis,
            bob_bit,
            attacked: attack.attacked[g],
        });
    }

    // Faked-state clicks fill the gates the electronics left silent: the
    // detector must be blinded, the modulator must not have dipped the
    // trigger pulse away, and the attacker's resend basis must match the
    // receiver's. Her registered bit is her intercept measurement — the
    // transmitter's bit when she guessed the basis right, a coin flip
    // when she did not.
    for g in 0..gates {
        if clicked[g] || !blinded[g] || schedule[g] {
            continue;
        }
        let (Some(eve_basis), Some(eve_bit)) = (attack.eve_bases[g], attack.eve_bits[g]) else {
            continue;
        };
        if faked_state_click_rule(eve_basis, bob_bases[g], true)? {
            let bob_bit = if eve_basis == alice_bases[g] {
                alice_bits[g]
            } else {
                eve_bit
            };
            clicks.push(ClickRecord {
                gate: g,
                origin: CountOrigin::FakedState,
                bob_basis: bob_bases[g],
                bob_bit,
                attacked: true,
            });
        }
    }

    let stats = sift_and_accumulate(&clicks, &alice_bases, &alice_bits);
    let decision = abort_decision(&stats, &params.protocol);
    Ok(SessionRecord {
        spec: spec.clone(),
        stats,
        decision,
    })
}
