//! Runs the finite-difference suite over every module and prints the worst
//! relative error per op.
//!
//! `cargo run --example gradcheck [seed]`

use std::time::Instant;

use thermoseg::gradsuite::{run_all, TOLERANCE};

fn main() -> thermoseg::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let start = Instant::now();
    let checks = run_all(seed)?;
    for c in &checks {
        let verdict = if c.passed() { "ok" } else { "FAIL" };
        println!("{:<7} {:<24} {:>10.3e} {:>6} coords  {verdict}", c.module.name(), c.op, c.rel_err, c.coords);
    }
    let failed = checks.iter().filter(|c| !c.passed()).count();
    println!(
        "{} ops, {failed} above {TOLERANCE:e}, {:.1}s",
        checks.len(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
