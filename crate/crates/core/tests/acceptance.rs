//! One line per acceptance criterion, then a single assertion over all of
//! them. Training runs go through the `posecue` binary with its defaults.

use std::collections::HashMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use posecue::diagnostics::{
    confidence_oracle, gate_limit_check, gradient_outcomes, odometry_checks, pose_fit_check, shift_recovery,
    soft_argmax_oracle, CheckOutcome,
};
use posecue::feature_flow::FlowConfig;

const SEED: u64 = 7;

struct Verdict {
    criterion: u32,
    passed: bool,
    detail: String,
}

fn from_outcomes(criterion: u32, outcomes: posecue::Result<Vec<CheckOutcome>>) -> Verdict {
    match outcomes {
        Ok(list) => Verdict {
            criterion,
            passed: list.iter().all(|o| o.passed),
            detail: list.iter().map(|o| o.line()).collect::<Vec<_>>().join("; "),
        },
        Err(e) => Verdict { criterion, passed: false, detail: format!("error {e}") },
    }
}

fn posecue(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_posecue")).args(args).output().expect("binary runs")
}

fn train(out: &Path) -> Result<(HashMap<String, String>, f64), String> {
    let start = Instant::now();
    let o = posecue(&["train", "--out", out.to_str().unwrap(), "--seed", &SEED.to_string()]);
    let secs = start.elapsed().as_secs_f64();
    if !o.status.success() {
        return Err(String::from_utf8_lossy(&o.stderr).trim().to_string());
    }
    let text = std::fs::read_to_string(out.join("report.txt")).map_err(|e| e.to_string())?;
    let report = text
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    Ok((report, secs))
}

fn number(report: &HashMap<String, String>, key: &str) -> f64 {
    report.get(key).and_then(|v| v.parse().ok()).unwrap_or(f64::NAN)
}

fn end_to_end(report: &Result<(HashMap<String, String>, f64), String>) -> Verdict {
    let (report, secs) = match report {
        Ok(r) => r,
        Err(e) => return Verdict { criterion: 6, passed: false, detail: format!("train failed: {e}") },
    };
    let ratio = number(report, "photometric_ratio");
    let direction = number(report, "direction_error_median_deg");
    let steps = number(report, "steps");
    Verdict {
        criterion: 6,
        passed: steps == 2000.0 && ratio < 0.5 && direction < 15.0 && *secs < 1200.0,
        detail: format!("steps={steps} photometric_ratio={ratio:.4} direction_error_median_deg={direction:.2} seconds={secs:.0}"),
    }
}

fn determinism(first: &Path, second: &Path) -> Verdict {
    let a = posecue(&["selftest", "--seed", &SEED.to_string()]);
    let b = posecue(&["selftest", "--seed", &SEED.to_string()]);
    let selftest_same = a.stdout == b.stdout && a.status.code() == b.status.code();
    let second_run = train(second);
    let same = |name: &str| match (std::fs::read(first.join(name)), std::fs::read(second.join(name))) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    };
    let (ckpt, report) = (same("checkpoint.scpd"), same("report.txt"));
    Verdict {
        criterion: 9,
        passed: selftest_same && second_run.is_ok() && ckpt && report,
        detail: format!("selftest_stdout_identical={selftest_same} checkpoint_identical={ckpt} report_identical={report}"),
    }
}

#[test]
fn acceptance_criteria() {
    let flow = FlowConfig::default();
    let mut verdicts = vec![
        from_outcomes(1, soft_argmax_oracle(SEED, 10_000, flow.window, flow.sharpness).map(|o| vec![o])),
        from_outcomes(2, confidence_oracle(SEED, 1_000, flow.window).map(|o| vec![o])),
        from_outcomes(3, gradient_outcomes(SEED)),
        from_outcomes(4, shift_recovery(SEED, &flow).map(|o| vec![o])),
        from_outcomes(5, pose_fit_check(SEED).map(|o| vec![o])),
    ];
    let runs = tempfile::tempdir().unwrap();
    let (a, b) = (runs.path().join("a"), runs.path().join("b"));
    let trained = train(&a);
    verdicts.push(end_to_end(&trained));
    verdicts.push(from_outcomes(7, odometry_checks()));
    verdicts.push(from_outcomes(8, gate_limit_check(SEED).map(|o| vec![o])));
    verdicts.push(determinism(&a, &b));

    for v in &verdicts {
        println!("criterion {} {} {}", v.criterion, if v.passed { "PASS" } else { "FAIL" }, v.detail);
    }
    let failed: Vec<u32> = verdicts.iter().filter(|v| !v.passed).map(|v| v.criterion).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
