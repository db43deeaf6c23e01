//! Finite-difference check of every layer and of the full objective.
//!
//! ```text
//! cargo run --release --example gradient_check -- [seed]
//! ```

use std::time::Instant;

use clenet::gradcheck::{run_all, Options};

fn main() -> clenet::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let start = Instant::now();
    let reports = run_all(&Options::new(seed))?;
    for r in &reports {
        println!("{r}");
    }
    let failed = reports.iter().filter(|r| !r.passed()).count();
    println!("{} checks, {failed} failed, {:.2} s", reports.len(), start.elapsed().as_secs_f64());
    Ok(())
}
