//! Runs every acceptance criterion and prints one PASS/FAIL line each, with
//! the measured numbers underneath. Exits nonzero if any criterion fails.

use std::panic;
use std::process::ExitCode;
use std::time::Instant;

fn main() -> ExitCode {
    let mut failed = Vec::new();
    for criterion in nhvi_verify::all() {
        let start = Instant::now();
        match panic::catch_unwind(criterion) {
            Ok(v) => {
                let status = if v.passed { "PASS" } else { "FAIL" };
                println!("{status} criterion {:>2}: {} ({:.1} s)", v.id, v.title, start.elapsed().as_secs_f64());
                for d in &v.details {
                    println!("       {d}");
                }
                if !v.passed {
                    failed.push(v.id.to_string());
                }
            }
            Err(_) => {
                println!("FAIL criterion: panicked");
                failed.push("?".into());
            }
        }
    }
    if failed.is_empty() {
        println!("\nacceptance: all criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("\nacceptance: failing criteria {}", failed.join(", "));
        ExitCode::FAILURE
    }
}
