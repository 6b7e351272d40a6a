//! Three-arm regime: doubly robust costs, data-space expansion and the
//! weighted tree, on the multi-arm simulation scenario.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use recl::contrast::Method;
use recl::pipeline::{fit_itr, PsSource, RunConfig};
use recl::sim::{evaluate_regime, generate_cohort, Scenario, TAU};

fn main() -> recl::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cohort = generate_cohort(Scenario::Two, 800, TAU, &mut rng)?;
    let config = RunConfig::new(Method::Aipw, 3.0).with_ps(PsSource::Formula(Scenario::Two.true_ps_formula()));
    let fit = fit_itr(&cohort, &config)?;

    println!("first cost rows:");
    for line in fit.costs.to_csv().lines().take(6) {
        println!("  {line}");
    }
    println!("\n{}", fit.tree_text());

    let test = generate_cohort(Scenario::Two, 5000, TAU, &mut rng)?.covariate_rows();
    let eval = evaluate_regime(&fit.tree, &test, Scenario::Two, 3.0);
    println!("test accuracy {:.3}, value {:.3}", eval.accuracy, eval.value);
    Ok(())
}
