//! Command-line harness around the simulator library.
//!
//! Four subcommands cover the full workflow: `calibrate` turns measured
//! anchor points into a device parameter file, `sweep` maps count rate
//! and photocurrent against blinding power, `rf-scan` steps the
//! modulator drive at fixed power, and `session` runs one complete
//! protocol session under a chosen attacker and prints the verdict
//! record. Every output is plain text (parameter files or CSV) and every
//! run is a pure function of its inputs and seed, so reruns reproduce
//! output byte for byte.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 calibration
//! failure, 3 I/O failure.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sdapd::calibrate::{calibrate, CalibrationAnchors, CalibrationError, DesignPriors};
use sdapd::config::{ConfigError, Params, SessionSpec, SweepSpec};
use sdapd::session::{run_session, SessionError};
use sdapd::sweep::{rf_scan_to_csv, run_rf_scan, run_sweep, sweep_to_csv, SweepError};

#[derive(Parser)]
#[command(
    name = "sdapd",
    version,
    about = "Self-differencing gated APD under blinding attack, with an intensity-modulation countermeasure"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Derive a device parameter file from measured anchor points.
    Calibrate {
        /// Anchor measurement file (built-in bench values when omitted).
        #[arg(long)]
        anchors: Option<PathBuf>,
        /// Write the calibrated parameter file here (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep count rate and photocurrent against blinding power.
    Sweep {
        /// Device parameter file (built-in calibration when omitted).
        #[arg(long)]
        params: Option<PathBuf>,
        /// Sweep description file: grid, gates per point, pattern, seed.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write the CSV here (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Step the modulator drive voltage at fixed blinding power.
    RfScan {
        /// Device parameter file (built-in calibration when omitted).
        #[arg(long)]
        params: Option<PathBuf>,
        /// Blinding carrier power at the detector, watts.
        #[arg(long, default_value_t = 1.0e-3)]
        power: f64,
        /// Discriminator level, millivolts.
        #[arg(long, default_value_t = 26.0)]
        disc_level_mv: f64,
        /// Write the CSV here (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one full protocol session under a chosen attacker.
    Session {
        /// Device parameter file (built-in calibration when omitted).
        #[arg(long)]
        params: Option<PathBuf>,
        /// Session description file; the flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Attacker strategy: honest, cw:<W>, faked:<W>,
        /// burst:<duty>:<gates>, or partial:<fraction>.
        #[arg(long)]
        strategy: Option<String>,
        /// Probability that the modulator dips any given gate.
        #[arg(long)]
        p_im: Option<f64>,
        /// Explicit modulation pattern (off, fixed:<bits>, fixed:1/<n>,
        /// random:<p>); mutually exclusive with --p-im.
        #[arg(long, conflicts_with = "p_im")]
        pattern: Option<String>,
        /// Gates in the session.
        #[arg(long)]
        gates: Option<usize>,
        /// Master seed for the session's random streams.
        #[arg(long)]
        seed: Option<u64>,
        /// Modulator drive voltage for dipped gates, volts.
        #[arg(long)]
        v_rf: Option<f64>,
        /// Discriminator level, millivolts.
        #[arg(long)]
        disc_level_mv: Option<f64>,
        /// Write the CSV here (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// What went wrong, mapped onto the exit-code contract.
enum CliError {
    /// Bad configuration or parameter values (exit 1).
    Config(String),
    /// The calibration could not satisfy its anchors (exit 2).
    Calibration(String),
    /// A file could not be read or written (exit 3).
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Calibration(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) | CliError::Calibration(m) | CliError::Io(m) => f.write_str(m),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<CalibrationError> for CliError {
    fn from(e: CalibrationError) -> Self {
        CliError::Calibration(e.report())
    }
}

impl From<SweepError> for CliError {
    fn from(e: SweepError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<SessionError> for CliError {
    fn from(e: SessionError) -> Self {
        CliError::Config(e.to_string())
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))
}

fn load_params(path: &Option<PathBuf>) -> Result<Params, CliError> {
    match path {
        Some(p) => Ok(Params::from_flat_text(&read_text(p)?)?),
        None => Ok(Params::default()),
    }
}

fn write_output(out: &Option<PathBuf>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, text)
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display()))),
        None => {
            // A closed stdout (e.g. a downstream pipe exiting early) is
            // an I/O failure like any other, not a panic.
            std::io::stdout()
                .write_all(text.as_bytes())
                .map_err(|e| CliError::Io(format!("cannot write to stdout: {e}")))
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Calibrate { anchors, out } => {
            let anchors = match &anchors {
                Some(p) => CalibrationAnchors::from_flat_text(&read_text(p)?)?,
                None => CalibrationAnchors::default(),
            };
            let params = calibrate(&anchors, &DesignPriors::default())?;
            write_output(&out, &params.render())
        }
        Command::Sweep {
            params,
            config,
            out,
        } => {
            let params = load_params(&params)?;
            let spec = match &config {
                Some(p) => SweepSpec::from_flat_text(&read_text(p)?)?,
                None => SweepSpec::default(),
            };
            let rows = run_sweep(&params, &spec)?;
            write_output(&out, &sweep_to_csv(&rows))
        }
        Command::RfScan {
            params,
            power,
            disc_level_mv,
            out,
        } => {
            let params = load_params(&params)?;
            let rows = run_rf_scan(&params, power, disc_level_mv)?;
            write_output(&out, &rf_scan_to_csv(&rows))
        }
        Command::Session {
            params,
            config,
            strategy,
            p_im,
            pattern,
            gates,
            seed,
            v_rf,
            disc_level_mv,
            out,
        } => {
            let params = load_params(&params)?;
            let mut spec = match &config {
                Some(p) => SessionSpec::from_flat_text(&read_text(p)?)?,
                None => SessionSpec::default(),
            };
            if let Some(s) = &strategy {
                spec.apply("session.strategy", s)?;
            }
            if let Some(p) = p_im {
                spec.apply("session.pattern", &format!("random:{p}"))?;
            }
            if let Some(s) = &pattern {
                spec.apply("session.pattern", s)?;
            }
            if let Some(g) = gates {
                spec.gates = g;
            }
            if let Some(s) = seed {
                spec.seed = s;
            }
            if let Some(v) = v_rf {
                spec.v_rf = v;
            }
            if let Some(d) = disc_level_mv {
                spec.disc_level_mv = d;
            }
            spec.validate()?;
            let record = run_session(&params, &spec)?;
            eprintln!(
                "session: {} gates, {} clicks, {} sifted, {} errors -> {}",
                record.spec.gates,
                record.stats.origins.total(),
                record.stats.sifted,
                record.stats.errors,
                record.decision_label(),
            );
            write_output(&out, &record.to_csv())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders --help and --version through this path too;
            // only genuine usage errors take the failure exit code.
            let usage_error = e.use_stderr();
            let _ = e.print();
            return if usage_error {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sdapd: {e}");
            ExitCode::from(e.code())
        }
    }
}
