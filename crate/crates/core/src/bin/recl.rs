use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use recl::cohort::{parse_cohort, parse_covariates, Cohort, CohortSchema};
use recl::config::KvConfig;
use recl::contrast::Method;
use recl::crf::pseudo_observations;
use recl::error::{ReclError, Result};
use recl::evaluation::{
    concordance_split, default_horizons, empirical_value_with, export_group_crfs, uniform_grid, ValueReport,
};
use recl::io::{write_atomic, Manifest};
use recl::pipeline::{fit_itr, PsSource, RunConfig};
use recl::propensity::{fit_propensity, load_external_ps, PsFormula, PsModel};
use recl::sim::{run_experiment, Scenario, ScenarioSpec, SimMethod};
use recl::tree::{Regime, TreeConfig, TreeRegime};
use recl::verify;

#[derive(Parser)]
#[command(name = "recl", version, about = "Treatment regimes for recurrent events")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation scenario and write per-replicate and summary CSVs
    Simulate(SimulateArgs),
    /// Estimate a regime from a cohort CSV
    Fit(FitArgs),
    /// Apply a fitted regime to a covariate CSV
    Assign(AssignArgs),
    /// Score a regime on observed data
    Evaluate(EvaluateArgs),
    /// Run the small-instance oracle checks
    Verify(VerifyArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    scenario: Option<u8>,
    #[arg(long)]
    n: Option<usize>,
    /// comma-separated horizons
    #[arg(long)]
    t: Option<String>,
    #[arg(long)]
    reps: Option<usize>,
    /// comma-separated method names
    #[arg(long)]
    methods: Option<String>,
    #[arg(long)]
    test_size: Option<usize>,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct SchemaArgs {
    #[arg(long)]
    id_col: Option<String>,
    #[arg(long)]
    time_col: Option<String>,
    #[arg(long)]
    status_col: Option<String>,
    #[arg(long)]
    treatment_col: Option<String>,
    /// comma-separated covariate columns (default: all remaining columns)
    #[arg(long)]
    covariates: Option<String>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    t: Option<f64>,
    #[arg(long)]
    ps_formula: Option<String>,
    #[arg(long)]
    ps_file: Option<PathBuf>,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    min_leaf_weight: Option<f64>,
    #[command(flatten)]
    schema: SchemaArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AssignArgs {
    #[arg(long)]
    regime: PathBuf,
    #[arg(long)]
    covariates: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    regime: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// comma-separated horizons (default: one-third quantile and maximum of follow-up)
    #[arg(long)]
    t: Option<String>,
    #[arg(long)]
    ps_formula: Option<String>,
    #[arg(long)]
    ps_file: Option<PathBuf>,
    #[arg(long, default_value_t = 101)]
    grid_points: usize,
    #[command(flatten)]
    schema: SchemaArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| ReclError::InvalidInput(format!("{}: {e}", path.display())))
}

fn load_config(path: Option<&PathBuf>) -> Result<KvConfig> {
    match path {
        Some(p) => KvConfig::parse(&read(p)?),
        None => Ok(KvConfig::default()),
    }
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| ReclError::InvalidInput(format!("bad {what} {s:?}")))
        })
        .collect()
}

fn schema_from(cfg: &KvConfig) -> CohortSchema {
    let mut schema = CohortSchema::default();
    if let Some(v) = cfg.get("id_col") {
        schema.id = v.into();
    }
    if let Some(v) = cfg.get("time_col") {
        schema.time = v.into();
    }
    if let Some(v) = cfg.get("status_col") {
        schema.status = v.into();
    }
    if let Some(v) = cfg.get("treatment_col") {
        schema.treatment = v.into();
    }
    if let Some(v) = cfg.get("covariates") {
        schema.covariates = Some(v.split(',').map(|s| s.trim().to_string()).collect());
    }
    schema
}

fn apply_schema_flags(cfg: &mut KvConfig, s: &SchemaArgs) {
    cfg.set_opt("id_col", s.id_col.clone());
    cfg.set_opt("time_col", s.time_col.clone());
    cfg.set_opt("status_col", s.status_col.clone());
    cfg.set_opt("treatment_col", s.treatment_col.clone());
    cfg.set_opt("covariates", s.covariates.clone());
}

fn arm_map(cohort: &Cohort) -> String {
    cohort
        .arm_labels()
        .iter()
        .enumerate()
        .map(|(i, l)| format!("{i}:{l}"))
        .collect::<Vec<_>>()
        .join(",")
}

fn ps_source(cfg: &KvConfig, cohort: &Cohort) -> Result<Option<PsSource>> {
    if let Some(path) = cfg.get("ps_file") {
        return Ok(Some(PsSource::External(load_external_ps(&read(Path::new(path))?)?)));
    }
    match cfg.get("ps_formula") {
        Some(f) => Ok(Some(PsSource::Formula(PsFormula::parse(f, cohort.covariate_names())?))),
        None => Ok(None),
    }
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let mut cfg = load_config(args.config.as_ref())?;
    cfg.set("seed", args.seed.to_string());
    cfg.set_opt("scenario", args.scenario);
    cfg.set_opt("n", args.n);
    cfg.set_opt("t", args.t);
    cfg.set_opt("reps", args.reps);
    cfg.set_opt("methods", args.methods);
    cfg.set_opt("test_size", args.test_size);
    cfg.set_opt("max_depth", args.max_depth);
    cfg.set_opt("out", args.out.map(|p| p.display().to_string()));
    cfg.check_keys(&["seed", "scenario", "n", "t", "reps", "methods", "test_size", "max_depth", "out"])?;

    let scenario = Scenario::from_id(cfg.parsed("scenario")?.unwrap_or(1))?;
    let horizons = parse_list(cfg.get("t").unwrap_or("3"), "horizon")?;
    let mut spec = ScenarioSpec::new(scenario, cfg.parsed("n")?.unwrap_or(600), horizons, args.seed);
    if let Some(r) = cfg.parsed("reps")? {
        spec.replicates = r;
    }
    if let Some(s) = cfg.parsed("test_size")? {
        spec.test_size = s;
    }
    let methods: Vec<SimMethod> = match cfg.get("methods") {
        Some(m) => m.split(',').map(str::parse).collect::<Result<_>>()?,
        None => SimMethod::ALL.to_vec(),
    };
    let mut tree = TreeConfig::default();
    if let Some(d) = cfg.parsed("max_depth")? {
        tree.max_depth = d;
    }
    let out = PathBuf::from(cfg.get("out").unwrap_or("."));

    let report = run_experiment(&spec, &methods, &tree)?;
    write_atomic(&out.join("report.csv"), &report.report_csv())?;
    write_atomic(&out.join("summary.csv"), &report.summary_csv())?;
    write_atomic(&out.join("failures.csv"), &report.failures_csv())?;
    let mut manifest = Manifest::new("simulate");
    manifest
        .add("scenario", scenario.id())
        .add("n", spec.n)
        .add("horizons", cfg.get("t").unwrap_or("3"))
        .add("replicates", spec.replicates)
        .add("test_size", spec.test_size)
        .add("seed", spec.seed)
        .add("methods", methods.iter().map(|m| m.name()).collect::<Vec<_>>().join(","))
        .add("max_depth", tree.max_depth)
        .add("failures", report.failures.len());
    manifest.write(&out)?;
    print!("{}", report.summary_csv());
    Ok(())
}

fn fit(args: FitArgs) -> Result<()> {
    let mut cfg = load_config(args.config.as_ref())?;
    cfg.set_opt("data", args.data.map(|p| p.display().to_string()));
    cfg.set_opt("method", args.method);
    cfg.set_opt("t", args.t);
    cfg.set_opt("ps_formula", args.ps_formula);
    cfg.set_opt("ps_file", args.ps_file.map(|p| p.display().to_string()));
    cfg.set_opt("max_depth", args.max_depth);
    cfg.set_opt("min_leaf_weight", args.min_leaf_weight);
    cfg.set_opt("out", args.out.map(|p| p.display().to_string()));
    apply_schema_flags(&mut cfg, &args.schema);
    cfg.check_keys(&[
        "data",
        "method",
        "t",
        "ps_formula",
        "ps_file",
        "max_depth",
        "min_leaf_weight",
        "min_split_gain",
        "out",
        "id_col",
        "time_col",
        "status_col",
        "treatment_col",
        "covariates",
    ])?;

    let data: String = cfg.require("data")?;
    let cohort = parse_cohort(&read(Path::new(&data))?, &schema_from(&cfg))?;
    for w in cohort.warnings() {
        eprintln!("warning: {w}");
    }
    let method: Method = cfg.require("method")?;
    let mut config = RunConfig::new(method, cfg.require("t")?);
    config.ps = ps_source(&cfg, &cohort)?;
    if let Some(d) = cfg.parsed("max_depth")? {
        config.tree.max_depth = d;
    }
    if let Some(w) = cfg.parsed("min_leaf_weight")? {
        config.tree.min_leaf_weight = w;
    }
    if let Some(g) = cfg.parsed("min_split_gain")? {
        config.tree.min_split_gain = g;
    }
    let out = PathBuf::from(cfg.get("out").unwrap_or("."));

    let fit = fit_itr(&cohort, &config)?;
    write_atomic(&out.join("regime.json"), &fit.tree.to_json()?)?;
    write_atomic(&out.join("regime.txt"), &fit.tree_text())?;
    write_atomic(&out.join("costs.csv"), &fit.costs.to_csv())?;
    let training: Vec<(String, Vec<f64>)> =
        cohort.subjects().iter().map(|s| (s.id.clone(), s.covariates.clone())).collect();
    write_atomic(&out.join("assignments.csv"), &assignment_csv(&fit.tree, &training))?;
    if let Some(smr) = &fit.nuisance.smr {
        write_atomic(&out.join("smr_summary.txt"), &smr.summary(cohort.covariate_names()))?;
    }
    if let Some(ps) = &fit.nuisance.ps {
        write_atomic(&out.join("ps_summary.txt"), &ps.summary(cohort.covariate_names()))?;
        for w in &ps.warnings {
            eprintln!("warning: {w}");
        }
    }
    let mut manifest = Manifest::new("fit");
    manifest.add("data", &data).add("subjects", cohort.len()).add("arms", arm_map(&cohort));
    for (k, v) in cfg.entries() {
        manifest.add(&format!("config.{k}"), v);
    }
    manifest.write(&out)?;
    print!("{}", fit.tree_text());
    Ok(())
}

fn assign(args: AssignArgs) -> Result<()> {
    let tree = TreeRegime::from_json(&read(&args.regime)?)?;
    let names = if tree.meta.covariate_names.is_empty() {
        (1..=tree.p).map(|j| format!("x{j}")).collect()
    } else {
        tree.meta.covariate_names.clone()
    };
    let rows = parse_covariates(&read(&args.covariates)?, &names)?;
    write_atomic(&args.out, &assignment_csv(&tree, &rows))
}

/// `id,action,label` rows for the regime's recommendations.
fn assignment_csv(tree: &TreeRegime, rows: &[(String, Vec<f64>)]) -> String {
    let mut out = String::from("id,action,label\n");
    for (id, x) in rows {
        let a = tree.assign(x);
        let label = tree.meta.arm_labels.get(a).cloned().unwrap_or_else(|| a.to_string());
        out.push_str(&format!("{id},{a},{label}\n"));
    }
    out
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let tree = TreeRegime::from_json(&read(&args.regime)?)?;
    let mut cfg = KvConfig::default();
    apply_schema_flags(&mut cfg, &args.schema);
    if cfg.get("covariates").is_none() && !tree.meta.covariate_names.is_empty() {
        cfg.set("covariates", tree.meta.covariate_names.join(","));
    }
    let cohort = parse_cohort(&read(&args.data)?, &schema_from(&cfg))?;
    if cohort.p() != tree.p || cohort.k() != tree.k {
        return Err(ReclError::InvalidInput(format!(
            "regime expects {} covariates and {} arms, data has {} and {}",
            tree.p,
            tree.k,
            cohort.p(),
            cohort.k()
        )));
    }
    cfg.set_opt("ps_formula", args.ps_formula);
    cfg.set_opt("ps_file", args.ps_file.map(|p| p.display().to_string()));
    let ps: PsModel = match ps_source(&cfg, &cohort)? {
        Some(PsSource::External(m)) => m,
        Some(PsSource::Formula(f)) => fit_propensity(&cohort, &f)?,
        None => fit_propensity(&cohort, &PsFormula::all(cohort.p()))?,
    };
    let horizons = match &args.t {
        Some(t) => parse_list(t, "horizon")?,
        None => default_horizons(&cohort),
    };
    let observed = cohort.treatments();
    let recommended = tree.assign_all(&cohort.covariate_rows());
    let mut report = ValueReport {
        horizons: horizons.clone(),
        methods: vec!["Observed".into(), "Regime".into()],
        values: Vec::new(),
    };
    for &t in &horizons {
        let po = pseudo_observations(&cohort, t)?;
        report.values.push(vec![
            empirical_value_with(&cohort, &observed, &ps, &po, "Observed")?,
            empirical_value_with(&cohort, &recommended, &ps, &po, "Regime")?,
        ]);
    }
    let split = concordance_split(&cohort, &recommended)?;
    let end = cohort.subjects().iter().map(|s| s.censor_time()).fold(0.0, f64::max);
    let (conc, disc) = export_group_crfs(&cohort, &split, &uniform_grid(end, args.grid_points))?;
    write_atomic(&args.out.join("value_report.csv"), &report.to_csv())?;
    write_atomic(&args.out.join("crf_concordant_unadjusted.csv"), &conc)?;
    write_atomic(&args.out.join("crf_disconcordant_unadjusted.csv"), &disc)?;
    let mut manifest = Manifest::new("evaluate");
    manifest
        .add("regime", args.regime.display())
        .add("data", args.data.display())
        .add("subjects", cohort.len())
        .add("arms", arm_map(&cohort))
        .add("propensity", ps.summary(cohort.covariate_names()).lines().next().unwrap_or(""))
        .add("concordant", split.concordant.len())
        .add("disconcordant", split.discordant.len());
    manifest.write(&args.out)?;
    print!("{}", report.to_csv());
    Ok(())
}

fn run_verify(args: VerifyArgs) -> Result<bool> {
    let results = verify::run_all(args.seed)?;
    for r in &results {
        println!("{}", r.line());
    }
    Ok(results.iter().all(|r| r.passed))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a).map(|_| true),
        Command::Fit(a) => fit(a).map(|_| true),
        Command::Assign(a) => assign(a).map(|_| true),
        Command::Evaluate(a) => evaluate(a).map(|_| true),
        Command::Verify(a) => run_verify(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
