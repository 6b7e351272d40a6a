//! Runs a small version of the two-arm simulation study and prints the
//! per-method summary.
//!
//! cargo run --release --example simulation -- [n] [replicates]

use recl::sim::{run_experiment, Scenario, ScenarioSpec, SimMethod};
use recl::tree::TreeConfig;

fn main() -> recl::Result<()> {
    let mut args = std::env::args().skip(1);
    let n = args.next().and_then(|s| s.parse().ok()).unwrap_or(400);
    let reps = args.next().and_then(|s| s.parse().ok()).unwrap_or(10);

    let mut spec = ScenarioSpec::new(Scenario::One, n, vec![2.0, 3.0], 2024);
    spec.replicates = reps;
    spec.test_size = 2000;
    let report = run_experiment(&spec, &SimMethod::ALL, &TreeConfig::default())?;

    println!("{:<12} {:>4} {:>10} {:>10}", "method", "t", "accuracy", "value");
    for row in report.summary() {
        println!(
            "{:<12} {:>4} {:>10.3} {:>10.3}",
            row.method.name(),
            row.horizon,
            row.mean_accuracy,
            row.mean_value
        );
    }
    if !report.failures.is_empty() {
        eprintln!("{} fits failed", report.failures.len());
    }
    Ok(())
}
