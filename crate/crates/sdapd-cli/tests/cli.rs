//! End-to-end checks of the command-line harness: output shapes, exit
//! codes, and byte-for-byte reproducibility of reruns.

use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn sdapd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdapd"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_str(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf-8 output")
}

#[test]
fn help_and_version_exit_cleanly() {
    for args in [
        &["--help"][..],
        &["--version"][..],
        &["session", "--help"][..],
    ] {
        let out = sdapd(args);
        assert_eq!(out.status.code(), Some(0), "{args:?}");
    }
}

#[test]
fn usage_errors_exit_one() {
    for args in [
        &["frobnicate"][..],
        &["session", "--no-such-flag"][..],
        &["session", "--p-im", "0.25", "--pattern", "off"][..],
        &[][..],
    ] {
        let out = sdapd(args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
    }
}

#[test]
fn calibrate_emits_a_parseable_parameter_file() {
    let out = sdapd(&["calibrate"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout_str(&out);
    assert!(text.contains("apd.responsivity_a_per_w"));
    assert!(text.contains("sd.ripple_taps"));

    // The emitted file feeds straight back into the other subcommands.
    let dir = TempDir::new().unwrap();
    let params = dir.path().join("device.params");
    std::fs::write(&params, &text).unwrap();
    let scan = sdapd(&["rf-scan", "--params", params.to_str().unwrap()]);
    assert_eq!(scan.status.code(), Some(0));
}

#[test]
fn contradictory_anchors_exit_two() {
    let dir = TempDir::new().unwrap();
    let anchors = dir.path().join("bad.anchors");
    // A blinding gap that closes below where it opens is unsatisfiable.
    std::fs::write(&anchors, "anchors.gap_low_w = 1e-2\n").unwrap();
    let out = sdapd(&["calibrate", "--anchors", anchors.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("anchor"), "stderr explains: {err}");
}

#[test]
fn missing_files_exit_three() {
    let out = sdapd(&["sweep", "--params", "/nonexistent/device.params"]);
    assert_eq!(out.status.code(), Some(3));
    let out = sdapd(&["calibrate", "--anchors", "/nonexistent/bench.anchors"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn malformed_config_exits_one() {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("sweep.config");
    std::fs::write(&config, "sweep.points = banana\n").unwrap();
    let out = sdapd(&["sweep", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));

    std::fs::write(&config, "sweep.wibble = 1\n").unwrap();
    let out = sdapd(&["sweep", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

fn small_sweep_config(dir: &Path) -> String {
    let config = dir.join("sweep.config");
    std::fs::write(
        &config,
        "sweep.start_w = 1e-5\nsweep.stop_w = 1e-2\nsweep.points = 5\n\
         sweep.gates_per_point = 20000\nsweep.seed = 9\n",
    )
    .unwrap();
    config.to_str().unwrap().to_string()
}

#[test]
fn sweep_writes_the_expected_csv_shape() {
    let dir = TempDir::new().unwrap();
    let config = small_sweep_config(dir.path());
    let out = sdapd(&["sweep", "--config", &config]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout_str(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "power_w,count_rate_hz,photocurrent_a,excess_bias_v,peak_mv,blinded"
    );
    assert_eq!(lines.len(), 6, "header plus five grid points");
}

#[test]
fn reruns_reproduce_csv_byte_for_byte() {
    let dir = TempDir::new().unwrap();
    let config = small_sweep_config(dir.path());

    let a = sdapd(&["sweep", "--config", &config]);
    let b = sdapd(&["sweep", "--config", &config]);
    assert_eq!(a.stdout, b.stdout);
    assert!(!a.stdout.is_empty());

    let a = sdapd(&["rf-scan", "--power", "1e-3"]);
    let b = sdapd(&["rf-scan", "--power", "1e-3"]);
    assert_eq!(a.stdout, b.stdout);

    let session_args = [
        "session",
        "--strategy",
        "faked:1e-3",
        "--p-im",
        "0.25",
        "--gates",
        "20000",
        "--seed",
        "7",
    ];
    let a = sdapd(&session_args);
    let b = sdapd(&session_args);
    assert_eq!(a.stdout, b.stdout);

    // A different seed must change the record.
    let mut reseeded = session_args;
    reseeded[8] = "8";
    let c = sdapd(&reseeded);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn session_verdicts_land_where_physics_says() {
    let honest = sdapd(&["session", "--gates", "20000", "--seed", "3"]);
    assert_eq!(honest.status.code(), Some(0));
    assert!(stdout_str(&honest).trim_end().ends_with("proceed"));

    let blinded = sdapd(&[
        "session",
        "--strategy",
        "faked:1e-3",
        "--gates",
        "20000",
        "--seed",
        "3",
    ]);
    assert!(
        stdout_str(&blinded).trim_end().ends_with("proceed"),
        "without modulation the attack stays invisible"
    );

    let caught = sdapd(&[
        "session",
        "--strategy",
        "faked:1e-3",
        "--p-im",
        "0.25",
        "--gates",
        "20000",
        "--seed",
        "3",
    ]);
    assert!(stdout_str(&caught).trim_end().ends_with("abort-qber"));
}

#[test]
fn output_files_match_stdout() {
    let dir = TempDir::new().unwrap();
    let out_path = dir.path().join("scan.csv");
    let to_file = sdapd(&["rf-scan", "--out", out_path.to_str().unwrap()]);
    assert_eq!(to_file.status.code(), Some(0));
    assert!(to_file.stdout.is_empty());
    let from_file = std::fs::read(&out_path).unwrap();
    let to_stdout = sdapd(&["rf-scan"]);
    assert_eq!(from_file, to_stdout.stdout);
}

#[test]
fn session_config_file_round_trips_through_the_flags() {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("session.config");
    std::fs::write(
        &config,
        "session.gates = 20000\nsession.strategy = faked:1e-3\n\
         session.pattern = random:0.25\nsession.seed = 7\n",
    )
    .unwrap();
    let via_file = sdapd(&["session", "--config", config.to_str().unwrap()]);
    let via_flags = sdapd(&[
        "session",
        "--strategy",
        "faked:1e-3",
        "--p-im",
        "0.25",
        "--gates",
        "20000",
        "--seed",
        "7",
    ]);
    assert_eq!(via_file.stdout, via_flags.stdout);
}
