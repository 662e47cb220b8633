//! Command-line contract: golden sweep output for the bundled figure
//! scenarios, exit codes per command, and JSON round-trip determinism.
//!
//! Set CHEMOSTAT_BLESS=1 to rewrite the golden files.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const FIGURES: [&str; 6] = ["fig4", "fig5-left", "fig5-right", "fig7", "fig8-left", "fig8-right"];

fn repo_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(format!("{name}.csv"))
}

fn scratch(name: &str, text: &str) -> PathBuf {
    let path = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn run(args: &[&str], scenario: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_chemostat"));
    cmd.args(args);
    if let Some(p) = scenario {
        cmd.arg("--scenario").arg(p);
    }
    cmd.output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("terminated by signal")
}

fn report(ok: bool, detail: &str) {
    // straight to the stream so the line survives output capture
    let line = format!("criterion 10: {} {detail}\n", if ok { "PASS" } else { "FAIL" });
    std::io::stderr().write_all(line.as_bytes()).unwrap();
    assert!(ok, "criterion 10: {detail}");
}

fn golden_mismatches() -> Vec<String> {
    let bless = std::env::var_os("CHEMOSTAT_BLESS").is_some();
    let mut bad = Vec::new();
    for name in FIGURES {
        let out = run(&["sweep", "--format", "csv"], Some(&repo_file(&format!("scenarios/{name}.toml"))));
        if code(&out) != 0 {
            bad.push(format!("{name}: exit {}", code(&out)));
            continue;
        }
        if bless {
            std::fs::write(golden(name), &out.stdout).unwrap();
        }
        let want = std::fs::read(golden(name)).unwrap();
        if want != out.stdout {
            let got = String::from_utf8_lossy(&out.stdout).into_owned();
            let want = String::from_utf8_lossy(&want).into_owned();
            let line = got.lines().zip(want.lines()).position(|(a, b)| a != b);
            bad.push(format!("{name}: differs at line {line:?}"));
        }
    }
    bad
}

fn exit_matrix() -> Vec<String> {
    let single = scratch("m_single.toml", "[dimensionless]\nconfig = \"single\"\ns_in = 3.0\n");
    let bad = scratch("m_bad.toml", "[dimensionless]\nconfig = \"single\"\ns_in = 3.0\nbeta = 2\n");
    let washout = scratch(
        "m_washout.toml",
        "[dimensionless]\nconfig = \"parallel\"\nr = 0.9\nalpha = 0.6\nd = 1.0\ns_in = 0.5\n\
         [sweep]\nparameter = \"d\"\ngrid = \"log\"\nmin = 0.01\nmax = 100.0\ncount = 9\n\
         [simulate]\nt_end = 5.0\nsamples = 6\ninitial = [0.5, 0.1, 0.5, 0.1]\n",
    );
    let traj = scratch(
        "m_traj.toml",
        "[dimensionless]\nconfig = \"serial\"\nr = 0.5\ns_in = 4.0\n\
         [simulate]\nt_end = 5.0\nsamples = 6\ninitial = [1.0, 1.0, 1.0, 1.0]\n",
    );
    let fig4 = repo_file("scenarios/fig4.toml");
    let cases: Vec<(&str, Vec<&str>, Option<&Path>, i32)> = vec![
        ("equilibrium ok", vec!["equilibrium"], Some(&single), 0),
        ("equilibrium washout", vec!["equilibrium"], Some(&washout), 2),
        ("equilibrium bad key", vec!["equilibrium"], Some(&bad), 1),
        ("equilibrium no scenario", vec!["equilibrium"], None, 1),
        ("sweep ok", vec!["sweep"], Some(&fig4), 0),
        ("sweep washout", vec!["sweep"], Some(&washout), 2),
        ("sweep without grid", vec!["sweep"], Some(&single), 1),
        ("simulate ok", vec!["simulate"], Some(&traj), 0),
        ("simulate washout", vec!["simulate"], Some(&washout), 2),
        ("simulate without block", vec!["simulate"], Some(&single), 1),
        ("compare ok", vec!["compare", "--s-in", "3"], None, 0),
        ("compare below one", vec!["compare", "--s-in", "0.5"], None, 1),
        ("thresholds ok", vec!["thresholds", "--r", "0.9", "--alpha", "0.6"], None, 0),
        ("thresholds bad split", vec!["thresholds", "--r", "1.5", "--alpha", "0.6"], None, 1),
        ("unknown flag", vec!["equilibrium", "--frobnicate"], None, 1),
        ("help", vec!["--help"], None, 0),
    ];
    let mut bad_cases = Vec::new();
    for (label, args, sc, want) in cases {
        let got = code(&run(&args, sc));
        if got != want {
            bad_cases.push(format!("{label}: exit {got}, want {want}"));
        }
    }
    bad_cases
}

/// Runs a command, feeds the echoed scenario back in as JSON, and checks
/// both the JSON result and the CSV output are reproduced exactly.
fn round_trip(command: &str, source: &Path, tag: &str) -> Option<String> {
    let first = run(&[command, "--format", "json"], Some(source));
    let first_json: Value = serde_json::from_slice(&first.stdout).unwrap();
    let echoed = serde_json::to_string_pretty(&first_json["scenario"]).unwrap();
    let reparsed = scratch(&format!("rt_{tag}.json"), &echoed);
    let second = run(&[command, "--format", "json"], Some(&reparsed));
    if code(&first) != code(&second) {
        return Some(format!("{tag}: exit {} vs {}", code(&first), code(&second)));
    }
    let second_json: Value = serde_json::from_slice(&second.stdout).unwrap();
    if first_json != second_json {
        return Some(format!("{tag}: json report differs"));
    }
    let a = run(&[command, "--format", "csv"], Some(source));
    let b = run(&[command, "--format", "csv"], Some(&reparsed));
    (a.stdout != b.stdout).then(|| format!("{tag}: csv differs"))
}

fn round_trip_failures() -> Vec<String> {
    let mut bad = Vec::new();
    for name in FIGURES {
        let src = repo_file(&format!("scenarios/{name}.toml"));
        bad.extend(round_trip("sweep", &src, name));
        bad.extend(round_trip("equilibrium", &src, &format!("{name}-eq")));
    }
    let trials = scratch(
        "rt_trials.toml",
        "[dimensionless]\nconfig = \"parallel\"\nr = 0.9\nalpha = 0.6\nd = 0.5\ns_in = 2.0\n[simulate]\ntrials = 10\n",
    );
    bad.extend(round_trip("simulate", &trials, "trials"));
    let physical = scratch(
        "rt_physical.toml",
        "[[growth]]\nkind = \"monod\"\nmu_max = 1.2\nk = 0.4\n\
         [physical]\nlayout = \"serial\"\nq = 1.0\nv = 2.0\nv1 = 1.2\ns_in = 1.0\n",
    );
    bad.extend(round_trip("equilibrium", &physical, "physical"));
    bad
}

#[test]
fn criterion_10_cli_contract() {
    let golden = golden_mismatches();
    let exits = exit_matrix();
    let trips = round_trip_failures();
    let detail = format!(
        "golden {}/{} identical, exit matrix {} mismatches, round trips {} failures {:?}",
        FIGURES.len() - golden.len(),
        FIGURES.len(),
        exits.len(),
        trips.len(),
        golden.iter().chain(&exits).chain(&trips).collect::<Vec<_>>(),
    );
    report(golden.is_empty() && exits.is_empty() && trips.is_empty(), &detail);
}
