//! Fits the multiplicative rates outcome model to a simulated cohort and
//! compares predicted mean counts per arm.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use recl::sim::{generate_cohort, true_mean_count, Scenario, TAU};
use recl::smr::{fit_smr, SmrConfig};

fn main() -> recl::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cohort = generate_cohort(Scenario::One, 1000, TAU, &mut rng)?;
    let fit = fit_smr(&cohort, &SmrConfig::default())?;
    print!("{}", fit.summary(cohort.covariate_names()));

    let t = 3.0;
    println!("\n{:>24} {:>9} {:>9} {:>9} {:>9}", "x", "fit a=0", "true a=0", "fit a=1", "true a=1");
    for x in [[-1.5, 0.0, 0.0], [0.0, 0.0, 0.0], [1.0, -1.0, 0.0], [1.0, 1.0, 0.0]] {
        println!(
            "{:>24} {:>9.3} {:>9.3} {:>9.3} {:>9.3}",
            format!("{x:?}"),
            fit.predict_mean(&x, 0, t),
            true_mean_count(Scenario::One, &x, 0, t),
            fit.predict_mean(&x, 1, t),
            true_mean_count(Scenario::One, &x, 1, t),
        );
    }
    Ok(())
}
