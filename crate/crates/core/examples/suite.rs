//! Runs the identity suite on the reference instance and prints one line per report.
//!
//! `cargo run -p polaron --example suite -- 0.1`

use polaron::identities::{run_suite, SuiteOptions};
use polaron::instance::Instance;
use polaron::spectral::SolverConfig;

fn main() -> polaron::Result<()> {
    let g = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0.1);
    let man = run_suite(&Instance::reference(g), &SolverConfig::default(), &SuiteOptions::default(), None)?;
    for r in &man.reports {
        let levels: Vec<String> = r.levels.iter().map(|l| format!("{}:{:.2e}", l.nmax, l.residual)).collect();
        println!("{:<18} {:<18?} {:<5} {}", r.id, r.classification, r.passed, levels.join(" "));
        for l in &r.levels {
            if !l.details.is_empty() {
                println!("{:>24} {:?}", l.nmax, l.details);
            }
        }
    }
    println!("exact_passed={} all_passed={}", man.exact_passed, man.all_passed);
    Ok(())
}
