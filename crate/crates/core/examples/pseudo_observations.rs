//! Nelson-Aalen curve and jackknife pseudo-observations of a tiny cohort.

use recl::cohort::{Cohort, Subject};
use recl::crf::{nelson_aalen, pseudo_observations, pseudo_observations_naive};

fn main() -> recl::Result<()> {
    let subjects = vec![
        Subject::new("s1", vec![0.2], 0, vec![1.0], 1.5)?,
        Subject::new("s2", vec![-0.4], 1, vec![1.0, 2.0], 4.0)?,
        Subject::new("s3", vec![1.1], 0, vec![], 4.0)?,
        Subject::new("s4", vec![0.7], 1, vec![0.5, 2.5, 3.0], 3.2)?,
    ];
    let cohort = Cohort::new(subjects, 1, 2, None)?;

    let na = nelson_aalen(&cohort)?;
    print!("{}", na.to_csv());

    let t = 2.0;
    let fast = pseudo_observations(&cohort, t)?;
    let slow = pseudo_observations_naive(&cohort, t)?;
    println!("\nt = {t}, Λ̂(t) = {:.4}", na.eval(t));
    for ((s, f), n) in cohort.subjects().iter().zip(&fast).zip(&slow) {
        println!("{}  N(t)={}  PO={f:.4}  refit={n:.4}", s.id, s.count_at(t));
    }
    Ok(())
}
