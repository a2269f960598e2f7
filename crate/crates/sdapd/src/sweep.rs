//! Count-rate experiments: power sweeps and modulator drive scans.
//!
//! A sweep answers the question the countermeasure hinges on: *how many
//! counts per second does a given blind power produce?* Without
//! modulation the answer contains a silent gap — the blinded regime.
//! With random or patterned dips the gap must disappear. Each grid point
//! runs an independent, seeded Monte Carlo so the whole sweep is
//! reproducible bit for bit and parallelises over points without
//! changing results.

use rayon::prelude::*;
use thiserror::Error;

use crate::config::{Params, SweepSpec};
use crate::frontend::{dip_peak_mv, gate_responses, steady_state, FrontendError};
use crate::modulator::ImPattern;
use crate::rng::point_rng;
use crate::sd::{discriminate, sd_transform};
use crate::trace::GateTrace;

/// Gates simulated per pipeline chunk; bounds memory at any session
/// length.
const CHUNK_GATES: usize = 1 << 16;

/// Errors from sweep execution.
#[derive(Debug, Error, PartialEq)]
pub enum SweepError {
    /// The electrical model rejected its inputs.
    #[error(transparent)]
    Frontend(#[from] FrontendError),
}

/// One point of a count-rate sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    /// Optical carrier power at the detector, watts.
    pub power_w: f64,
    /// Discriminator count rate, Hz.
    pub count_rate_hz: f64,
    /// Steady-state photocurrent, amperes.
    pub photocurrent_a: f64,
    /// Remaining excess bias (unclamped), volts.
    pub excess_bias_v: f64,
    /// Dip peak the modulator would imprint at this point's drive, mV.
    pub peak_mv: f64,
    /// Whether the operating point is blinded at the discriminator level.
    pub blinded: bool,
}

/// Logarithmically spaced power grid, endpoints included.
pub fn power_grid(start_w: f64, stop_w: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![start_w];
    }
    let log_start = start_w.ln();
    let step = (stop_w.ln() - log_start) / (points - 1) as f64;
    (0..points)
        .map(|i| (log_start + step * i as f64).exp())
        .collect()
}

/// Count discriminator events over `gates` gates of constant carrier
/// power with the given modulation, streaming in chunks so memory stays
/// flat. Returns total counts.
///
/// The carry across chunk boundaries preserves the differencer's memory:
/// enough trailing response samples are re-fed so that cancellation,
/// polarity context, and ripple echoes all continue seamlessly.
fn count_events_chunked(
    params: &Params,
    power_w: f64,
    pattern: &ImPattern,
    v_rf: f64,
    level_mv: f64,
    gates: usize,
    rng: &mut impl rand::Rng,
) -> Result<usize, SweepError> {
    let state = steady_state(&params.bias, &params.apd, power_w, level_mv)?;
    let dip = params.im.transmission(v_rf);
    // A counted gate can be a ripple of an echo source up to
    // `ripple_taps` gates back, and judging that source reaches one
    // delay further back again (its predecessor's base sample and the
    // pre-dip input level) — so a counted gate references at most
    // `taps + 1 + delay` earlier samples, which is what the carry holds.
    let carry_len = params.kernel.delay_gates + params.kernel.ripple_taps.len() + 1;

    let mut counts = 0usize;
    let mut carry: Vec<f64> = Vec::new();
    let mut gate = 0usize;
    while gate < gates {
        let this_chunk = CHUNK_GATES.min(gates - gate);
        let mut optical = Vec::with_capacity(this_chunk);
        for i in gate..gate + this_chunk {
            let active = match *pattern {
                ImPattern::Off => false,
                ImPattern::Fixed {
                    period,
                    active_slot,
                } => i % period == active_slot,
                ImPattern::Random { dip_probability } => rng.gen::<f64>() < dip_probability,
            };
            optical.push(if active { power_w * dip } else { power_w });
        }
        let responses = gate_responses(&state, &params.apd, &GateTrace(optical), rng)?;

        let mut window = Vec::with_capacity(carry.len() + this_chunk);
        window.extend_from_slice(&carry);
        window.extend_from_slice(&responses.trace);
        let sd_out = sd_transform(&GateTrace(window.clone()), &params.kernel);
        let events = discriminate(&sd_out, level_mv, &params.kernel);
        counts += events
            .gate_indices
            .iter()
            .filter(|&&idx| idx >= carry.len())
            .count();

        let keep = carry_len.min(window.len());
        carry = window[window.len() - keep..].to_vec();
        gate += this_chunk;
    }
    Ok(counts)
}

/// Run one sweep point with its own random stream.
pub fn run_point(
    params: &Params,
    power_w: f64,
    pattern: &ImPattern,
    v_rf: f64,
    level_mv: f64,
    gates: usize,
    rng: &mut impl rand::Rng,
) -> Result<SweepRow, SweepError> {
    let state = steady_state(&params.bias, &params.apd, power_w, level_mv)?;
    let counts = count_events_chunked(params, power_w, pattern, v_rf, level_mv, gates, rng)?;
    Ok(SweepRow {
        power_w,
        count_rate_hz: counts as f64 / gates as f64 * params.apd.gate_rate_hz,
        photocurrent_a: state.photocurrent_a,
        excess_bias_v: state.excess_bias_v,
        peak_mv: dip_peak_mv(&state, &params.apd, params.im.transmission(v_rf)),
        blinded: state.blinded,
    })
}

/// Run a full sweep, one seeded stream per grid point, in parallel.
///
/// Results are ordered by grid index and independent of thread
/// scheduling: every point derives its stream from `(seed, index)`.
pub fn run_sweep(params: &Params, spec: &SweepSpec) -> Result<Vec<SweepRow>, SweepError> {
    let grid = power_grid(spec.start_w, spec.stop_w, spec.points);
    grid.par_iter()
        .enumerate()
        .map(|(idx, &power_w)| {
            let mut rng = point_rng(spec.seed, "sweep", idx as u64);
            run_point(
                params,
                power_w,
                &spec.pattern,
                spec.v_rf,
                spec.disc_level_mv,
                spec.gates_per_point,
                &mut rng,
            )
        })
        .collect()
}

/// CSV header for sweep output.
pub const SWEEP_CSV_HEADER: &str =
    "power_w,count_rate_hz,photocurrent_a,excess_bias_v,peak_mv,blinded";

/// Render sweep rows as CSV (9 significant digits, reproducible).
pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{}\n",
            r.power_w, r.count_rate_hz, r.photocurrent_a, r.excess_bias_v, r.peak_mv, r.blinded
        ));
    }
    out
}

/// One point of a modulator drive scan.
#[derive(Debug, Clone, PartialEq)]
pub struct RfScanRow {
    /// Modulator drive voltage, volts.
    pub v_rf_v: f64,
    /// Dip contrast at this drive, dB.
    pub contrast_db: f64,
    /// Discriminator counts produced by one isolated dip.
    pub counts_per_activation: f64,
    /// Dip peak amplitude, mV.
    pub peak_mv: f64,
}

/// Scan the modulator drive against a blinded carrier.
///
/// At each drive voltage a single isolated dip is carved into a constant
/// blind at `power_w` and the resulting discriminator counts are tallied.
/// The blinded regime is deterministic (no avalanche noise), so the scan
/// needs no randomness: the count staircase — 0 counts with no drive,
/// then 1, then more as ripples cross threshold — is exact.
pub fn run_rf_scan(
    params: &Params,
    power_w: f64,
    level_mv: f64,
) -> Result<Vec<RfScanRow>, SweepError> {
    let state = steady_state(&params.bias, &params.apd, power_w, level_mv)?;
    let mut rows = Vec::new();
    let steps = 80usize;
    for k in 0..=steps {
        let v_rf = params.im.v_pi_v * k as f64 / steps as f64;
        let dip = params.im.transmission(v_rf);

        // One dip, well isolated in a window long enough for every echo.
        let window = 16 + 2 * params.kernel.ripple_taps.len();
        let dip_at = window / 2;
        let mut optical = vec![power_w; window];
        optical[dip_at] = power_w * dip;
        let mut rng = point_rng(0, "rf-scan", k as u64);
        let responses = gate_responses(&state, &params.apd, &GateTrace(optical), &mut rng)?;
        let sd_out = sd_transform(&responses.trace, &params.kernel);
        let baseline = discriminate(
            &sd_transform(&GateTrace(vec![state.pedestal_mv; window]), &params.kernel),
            level_mv,
            &params.kernel,
        )
        .count();
        let events = discriminate(&sd_out, level_mv, &params.kernel);

        rows.push(RfScanRow {
            v_rf_v: v_rf,
            contrast_db: params.im.contrast_db(v_rf),
            counts_per_activation: (events.count() - baseline) as f64,
            peak_mv: dip_peak_mv(&state, &params.apd, dip),
        });
    }
    Ok(rows)
}

/// CSV header for drive-scan output.
pub const RF_SCAN_CSV_HEADER: &str = "v_rf_v,contrast_db,counts_per_activation,peak_mv";

/// Render drive-scan rows as CSV.
pub fn rf_scan_to_csv(rows: &[RfScanRow]) -> String {
    let mut out = String::from(RF_SCAN_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{:.8e},{:.8e},{:.8e},{:.8e}\n",
            r.v_rf_v, r.contrast_db, r.counts_per_activation, r.peak_mv
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn power_grid_is_log_spaced_with_exact_endpoints() {
        let g = power_grid(1.0e-10, 1.0e-2, 60);
        assert_eq!(g.len(), 60);
        assert!((g[0] - 1.0e-10).abs() / 1.0e-10 < 1.0e-12);
        assert!((g[59] - 1.0e-2).abs() / 1.0e-2 < 1.0e-12);
        let ratio = g[1] / g[0];
        for w in g.windows(2) {
            assert!((w[1] / w[0] - ratio).abs() < 1.0e-9);
        }
        assert_eq!(power_grid(1.0e-3, 1.0e-2, 1), vec![1.0e-3]);
    }

    #[test]
    fn blinded_point_with_no_modulation_is_exactly_silent() {
        let params = Params::default();
        let mut rng = stream_rng(1, "t");
        let row = run_point(
            &params,
            1.0e-3,
            &ImPattern::Off,
            4.0,
            26.0,
            20_000,
            &mut rng,
        )
        .unwrap();
        assert_eq!(row.count_rate_hz, 0.0);
        assert!(row.blinded);
        assert!(row.photocurrent_a >= 1.0e-3);
        assert!(row.excess_bias_v < 0.0);
    }

    #[test]
    fn blinded_point_with_quarter_duty_modulation_saturates() {
        let params = Params::default();
        let pattern: ImPattern = "fixed:0001".parse().unwrap();
        let mut rng = stream_rng(2, "t");
        let row = run_point(&params, 1.0e-3, &pattern, 4.0, 26.0, 20_000, &mut rng).unwrap();
        // Three counts per four-gate period: recovery peak plus two
        // ripples, every period.
        assert!(
            (row.count_rate_hz - 0.75 * params.apd.gate_rate_hz).abs()
                < 1.0e-3 * params.apd.gate_rate_hz
        );
    }

    #[test]
    fn chunking_does_not_change_counts() {
        // Sessions bigger than one chunk, compared against direct
        // un-chunked pipeline runs with identical RNG streams. The first
        // power is blinded (deterministic, exercises carry of pedestal
        // steps and ripples); the second is live (every gate draws, so
        // stream alignment across the boundary matters too).
        let params = Params::default();
        let gates = CHUNK_GATES + 1777;
        let pattern: ImPattern = "fixed:0001".parse().unwrap();

        for power in [1.0e-3, 1.0e-7] {
            let mut rng = stream_rng(3, "chunk");
            let chunked =
                count_events_chunked(&params, power, &pattern, 4.0, 26.0, gates, &mut rng).unwrap();

            let state = steady_state(&params.bias, &params.apd, power, 26.0).unwrap();
            let dip = params.im.transmission(4.0);
            let optical: Vec<f64> = (0..gates)
                .map(|i| if i % 4 == 3 { power * dip } else { power })
                .collect();
            // A fixed pattern draws nothing for its schedule, so the
            // direct path sees the same stream in the same order.
            let mut rng2 = stream_rng(3, "chunk");
            let responses =
                gate_responses(&state, &params.apd, &GateTrace(optical), &mut rng2).unwrap();
            let sd_out = sd_transform(&responses.trace, &params.kernel);
            let direct = discriminate(&sd_out, 26.0, &params.kernel).count();

            assert_eq!(chunked, direct, "chunked vs direct at {power} W");
            assert!(chunked > 0);
        }
    }

    #[test]
    fn sweep_is_deterministic_and_ordered() {
        let params = Params::default();
        let spec = SweepSpec {
            start_w: 1.0e-7,
            stop_w: 1.0e-3,
            points: 6,
            gates_per_point: 4_000,
            pattern: ImPattern::Random {
                dip_probability: 0.25,
            },
            ..SweepSpec::default()
        };
        let a = run_sweep(&params, &spec).unwrap();
        let b = run_sweep(&params, &spec).unwrap();
        assert_eq!(a, b, "same seed must reproduce the sweep bit for bit");
        assert_eq!(a.len(), 6);
        for (row, power) in a.iter().zip(power_grid(1.0e-7, 1.0e-3, 6)) {
            assert_eq!(row.power_w, power);
        }
        let c = run_sweep(
            &params,
            &SweepSpec {
                seed: 77,
                ..spec.clone()
            },
        )
        .unwrap();
        assert_ne!(a, c, "a different seed must actually change something");
    }

    #[test]
    fn sweep_csv_round_trips_the_numbers_at_nine_digits() {
        let rows = vec![SweepRow {
            power_w: 1.23456789e-4,
            count_rate_hz: 7.5e8,
            photocurrent_a: 1.9370634e-3,
            excess_bias_v: -0.96,
            peak_mv: 2258.4,
            blinded: true,
        }];
        let csv = sweep_to_csv(&rows);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(SWEEP_CSV_HEADER));
        let data = lines.next().unwrap();
        assert_eq!(
            data,
            "1.23456789e-4,7.50000000e8,1.93706340e-3,-9.60000000e-1,2.25840000e3,true"
        );
    }

    #[test]
    fn rf_scan_counts_step_up_with_drive() {
        let params = Params::default();
        let rows = run_rf_scan(&params, 1.0e-3, 26.0).unwrap();
        assert_eq!(rows.len(), 81);
        let at = |v: f64| {
            rows.iter()
                .min_by(|a, b| {
                    (a.v_rf_v - v)
                        .abs()
                        .partial_cmp(&(b.v_rf_v - v).abs())
                        .unwrap()
                })
                .unwrap()
        };
        assert_eq!(at(0.0).counts_per_activation, 0.0);
        assert_eq!(at(0.25).counts_per_activation, 0.0);
        assert_eq!(at(0.3).counts_per_activation, 1.0);
        assert!(
            at(0.3).peak_mv > 26.0,
            "the single count is the recovery peak"
        );
        assert_eq!(
            at(1.5).counts_per_activation,
            1.0,
            "at 1.5 V the first ripple still sits below the level"
        );
        assert_eq!(at(1.55).counts_per_activation, 2.0);
        assert_eq!(at(4.0).counts_per_activation, 3.0);
        assert!((at(4.0).peak_mv - 1726.0574).abs() < 1.0e-3);
        assert!((at(0.3).contrast_db - 0.0604162496).abs() < 1.0e-6);
        assert!((at(4.0).contrast_db - 23.0).abs() < 1.0e-9);
        // Counts never step down as the drive deepens the dip.
        for w in rows.windows(2) {
            assert!(w[1].counts_per_activation >= w[0].counts_per_activation);
        }
    }
}
