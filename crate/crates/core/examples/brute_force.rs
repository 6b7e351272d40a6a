//! Exhaustive search over small threshold trees next to the greedy weighted
//! tree on the expanded data.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use recl::expansion::expand;
use recl::oracle::brute_force_regime;
use recl::tree::{fit_weighted_tree_k, TreeConfig};
use recl::verify::{random_cost_instance, run_all};

fn main() -> recl::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (cm, x, splits) = random_cost_instance(&mut rng, 8, 3)?;
    // covariates sit on a 0..3 lattice, so these six midpoints are every
    // threshold the greedy tree can choose
    let best = brute_force_regime(&cm, &x, &splits, 2)?;
    println!("searched {} depth-2 regimes, optimum {:.4}", best.searched, best.objective);
    println!("{}", best.regime.render());

    let config = TreeConfig {
        max_depth: 2,
        ..TreeConfig::default()
    };
    let tree = fit_weighted_tree_k(&expand(&cm, &x)?, cm.k(), &config)?;
    println!("greedy tree objective {:.4}", cm.objective(&tree.assign_all(&x)));
    println!("{}", tree.render());

    for check in run_all(1)? {
        println!("{}", check.line());
    }
    Ok(())
}
