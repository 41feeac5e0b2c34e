//! Runs the acceptance criteria and prints one PASS/FAIL line each.
//! `TRIGMIN_CRITERIA=3,9` restricts the run to the listed ids.

use std::process::ExitCode;

use trigmin::harness::acceptance;

fn main() -> ExitCode {
    let ids: Vec<usize> = match std::env::var("TRIGMIN_CRITERIA") {
        Ok(s) => s
            .split(',')
            .map(|v| v.trim().parse().expect("TRIGMIN_CRITERIA takes comma-separated ids"))
            .collect(),
        Err(_) => (1..=10).collect(),
    };
    let results = match acceptance::run(&ids) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::FAILURE;
        }
    };
    for r in &results {
        println!("{}", r.line());
        for s in &r.supplementary {
            println!("    {s}");
        }
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
