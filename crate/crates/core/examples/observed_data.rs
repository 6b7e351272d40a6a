//! Workflow on a cohort CSV: parse, fit a regime without an outcome model,
//! score it against observed practice and export group curves.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use recl::cohort::{parse_cohort, CohortSchema};
use recl::contrast::Method;
use recl::crf::pseudo_observations;
use recl::evaluation::{
    concordance_split, default_horizons, empirical_value_with, export_group_crfs, uniform_grid, ValueReport,
};
use recl::pipeline::{fit_itr, PsSource, RunConfig};
use recl::propensity::PsFormula;
use recl::sim::{generate_cohort, Scenario, TAU};
use recl::tree::TreeRegime;

fn main() -> recl::Result<()> {
    // stand-in for a real export in long format: id,time,status,treatment,x1,x2,x3
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let csv = generate_cohort(Scenario::One, 500, TAU, &mut rng)?.to_csv();
    let cohort = parse_cohort(&csv, &CohortSchema::default())?;

    let horizons = default_horizons(&cohort);
    let formula = PsFormula::all(cohort.p());
    let config = RunConfig::new(Method::Ipw, horizons[0]).with_ps(PsSource::Formula(formula));
    let fit = fit_itr(&cohort, &config)?;
    let tree = TreeRegime::from_json(&fit.tree.to_json()?)?;
    println!("{}", tree.render());

    let ps = fit.nuisance.ps.as_ref().expect("IPW fits a propensity model");
    let recommended = tree.assign_all(&cohort.covariate_rows());
    let mut report = ValueReport {
        horizons: horizons.clone(),
        methods: vec!["Observed".into(), "ReCL-IPW".into()],
        values: Vec::new(),
    };
    for &t in &horizons {
        let po = pseudo_observations(&cohort, t)?;
        report.values.push(vec![
            empirical_value_with(&cohort, &cohort.treatments(), ps, &po, "Observed")?,
            empirical_value_with(&cohort, &recommended, ps, &po, "ReCL-IPW")?,
        ]);
    }
    print!("{}", report.to_csv());

    let split = concordance_split(&cohort, &recommended)?;
    let (conc, disc) = export_group_crfs(&cohort, &split, &uniform_grid(TAU, 5))?;
    println!("\nconcordant ({} subjects, unadjusted)\n{conc}", split.concordant.len());
    println!("disconcordant ({} subjects, unadjusted)\n{disc}", split.discordant.len());
    Ok(())
}
