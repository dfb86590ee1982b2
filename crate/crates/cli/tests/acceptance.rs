//! One line per acceptance criterion; exits nonzero if any fails.

use std::process::{Command, ExitCode};
use std::time::Instant;

use scenetrack::selftest::{run_criterion, SelftestOptions, Verdict, CRITERIA};

/// Library round trips plus the command-line self-test in quick mode.
fn round_trips_and_selftest(opts: &SelftestOptions) -> Verdict {
    let mut v = run_criterion(9, opts);
    let t0 = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_scenetrack"))
        .args(["selftest", "--quick"])
        .output();
    v.seconds += t0.elapsed().as_secs_f64();
    match out {
        Ok(o) if o.status.success() => v.detail += "; selftest --quick exited 0",
        Ok(o) => {
            v.passed = false;
            v.detail += &format!(
                "; selftest --quick exited {:?}: {}",
                o.status.code(),
                String::from_utf8_lossy(&o.stdout).lines().filter(|l| l.starts_with("[FAIL]")).collect::<Vec<_>>().join(" | ")
            );
        }
        Err(e) => {
            v.passed = false;
            v.detail += &format!("; could not start selftest: {e}");
        }
    }
    v
}

fn main() -> ExitCode {
    // `cargo test -- --list` and filters come through here too
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }
    let opts = SelftestOptions::default();
    let mut failed = 0;
    for (id, _) in CRITERIA {
        let v = if id == 9 { round_trips_and_selftest(&opts) } else { run_criterion(id, &opts) };
        println!("{v}");
        if !v.passed {
            failed += 1;
        }
    }
    println!("acceptance: {} passed, {failed} failed", CRITERIA.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
