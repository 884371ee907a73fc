//! Finite-difference check of every trained head on a two-layer, width-8
//! encoder.
//!
//! cargo run --example gradient_check

use scanner::gradsuite::{gradient_suite, STEP, TOLERANCE};

fn main() -> scanner::Result<()> {
    println!("step {STEP:e}, tolerance {TOLERANCE:e}");
    let mut ok = true;
    for c in gradient_suite()? {
        ok &= c.report.passed;
        println!(
            "{:<20} {:>6} entries  max rel error {:.2e} at {}[{}]  {}",
            c.head,
            c.report.entries_checked,
            c.report.max_relative_error,
            c.report.worst_parameter,
            c.report.worst_index,
            if c.report.passed { "ok" } else { "FAILED" }
        );
    }
    if !ok {
        std::process::exit(1);
    }
    Ok(())
}
