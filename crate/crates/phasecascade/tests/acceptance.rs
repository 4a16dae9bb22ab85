//! Runs every acceptance criterion, prints one PASS/FAIL line each and exits
//! nonzero if any fails.

use std::process::ExitCode;

use phasecascade::criteria::{run, Context};

fn main() -> ExitCode {
    let ctx = Context::new();
    let mut failed = Vec::new();
    for id in 1..=10 {
        let o = run(id, &ctx).expect("criterion id in range");
        println!("{}", o.line());
        if !o.passed {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all 10 criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
