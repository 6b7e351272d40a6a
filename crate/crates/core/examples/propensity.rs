//! Logistic and multinomial propensity models, including a formula with a
//! transformed regressor.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use recl::propensity::{fit_propensity, PsFormula};
use recl::sim::{generate_cohort, Scenario, TAU};

fn main() -> recl::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let two = generate_cohort(Scenario::One, 2000, TAU, &mut rng)?;
    let names = two.covariate_names().to_vec();

    for text in ["x1 + x2", "x1 + exp(x3)"] {
        let formula = PsFormula::parse(text, &names)?;
        let model = fit_propensity(&two, &formula)?;
        println!("A ~ {}", formula.render(&names));
        print!("{}", model.summary(&names));
        println!();
    }

    let three = generate_cohort(Scenario::Two, 2000, TAU, &mut rng)?;
    let model = fit_propensity(&three, &PsFormula::linear(&[0, 1]))?;
    print!("{}", model.summary(&names));
    let x = [0.5, -0.5, 0.0];
    println!("P(A | x = {x:?}) = {:?}", model.probabilities(&x));
    Ok(())
}
