//! Subcommand implementations.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, ValueEnum};
use memiss_core::{
    conjugate_linear, fit_marginal, run_chains, simgen::naive_limit, simulate_replicate, study, ChainConfig, Density,
    EngineKind, GridConfig, JointModel, Likelihood, ModelSpec, PositivePrior, PosteriorResult, Response, SimConfig,
    StudyConfig, StudySummary,
};
use serde::Serialize;

use crate::config::FitConfig;
use crate::error::{CliError, CliResult};
use crate::ingest::ingest_csv;
use crate::output::{
    agreement, format_agreement, format_summary, latent_rows, summary_rows, write_csv_file, write_draws,
    write_json_file, AgreementRow,
};

/// Largest |Δmean| / MCSE accepted as cross-engine agreement.
pub const AGREEMENT_TOLERANCE: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EngineChoice {
    Gibbs,
    Marginal,
    Both,
}

impl EngineChoice {
    fn engines(self) -> Vec<EngineKind> {
        match self {
            EngineChoice::Gibbs => vec![EngineKind::Gibbs],
            EngineChoice::Marginal => vec![EngineKind::Marginal],
            EngineChoice::Both => vec![EngineKind::Marginal, EngineKind::Gibbs],
        }
    }
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Output(format!("{}: {e}", dir.display())))
}

/// Runs the requested engines on one compiled model.
pub fn fit_engines(
    model: &JointModel,
    engines: &[EngineKind],
    chains: &ChainConfig,
    grid: &GridConfig,
) -> CliResult<Vec<PosteriorResult>> {
    engines
        .iter()
        .map(|e| match e {
            EngineKind::Marginal => fit_marginal(model, grid).map_err(CliError::from),
            EngineKind::Gibbs => run_chains(model, chains).map_err(CliError::from),
        })
        .collect()
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// Model configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Input data (CSV with a header row).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "marginal")]
    pub engine: EngineChoice,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, default_value = "memiss-out")]
    pub out: PathBuf,
    /// Also write the retained Gibbs draws.
    #[arg(long)]
    pub draws: bool,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub results: Vec<PosteriorResult>,
    pub agreement: Option<Vec<AgreementRow>>,
    pub report: String,
}

#[derive(Serialize)]
struct EngineMeta<'a> {
    engine: EngineKind,
    elapsed_secs: f64,
    seed: Option<u64>,
    diagnostics: &'a BTreeMap<String, f64>,
    densities: &'a [Density],
}

#[derive(Serialize)]
struct FitMeta<'a> {
    command: &'static str,
    version: &'static str,
    data: String,
    n: usize,
    seed: u64,
    engine: EngineChoice,
    config: &'a FitConfig,
    results: Vec<EngineMeta<'a>>,
}

pub fn fit(args: &FitArgs) -> CliResult<FitOutcome> {
    let cfg = FitConfig::load(&args.config)?;
    let binding = cfg.columns.response_binding(cfg.likelihood.family)?;
    let data = ingest_csv(&args.data, &cfg.columns.na_token, &cfg.columns, &binding)?;
    let spec = cfg.model_spec(&data)?;
    let model = JointModel::new(&spec, &data)?;
    let chains = ChainConfig { keep_draws: args.draws, ..cfg.chain_config(args.seed) };
    let results = fit_engines(&model, &args.engine.engines(), &chains, &cfg.grid_config())?;

    ensure_dir(&args.out)?;
    let refs: Vec<&PosteriorResult> = results.iter().collect();
    let rows = summary_rows(&refs);
    write_csv_file(&args.out.join("summary.csv"), &rows)?;
    let latent = latent_rows(&refs);
    if !latent.is_empty() {
        write_csv_file(&args.out.join("latent.csv"), &latent)?;
    }
    if let Some(g) = results.iter().find(|r| r.draws.is_some()) {
        let path = args.out.join("draws.csv");
        let file = std::fs::File::create(&path).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))?;
        write_draws(std::io::BufWriter::new(file), g)?;
    }
    let meta = FitMeta {
        command: "fit",
        version: env!("CARGO_PKG_VERSION"),
        data: args.data.display().to_string(),
        n: data.n(),
        seed: args.seed,
        engine: args.engine,
        config: &cfg,
        results: results
            .iter()
            .map(|r| EngineMeta {
                engine: r.engine,
                elapsed_secs: r.elapsed_secs,
                seed: r.seed,
                diagnostics: &r.diagnostics,
                densities: &r.densities,
            })
            .collect(),
    };
    write_json_file(&args.out.join("meta.json"), &meta)?;

    let mut report = format_summary(&rows);
    let table = match (results.iter().find(|r| r.engine == EngineKind::Marginal), results.iter().find(|r| r.engine == EngineKind::Gibbs)) {
        (Some(m), Some(g)) => {
            let table = agreement(m, g);
            write_csv_file(&args.out.join("agreement.csv"), &table)?;
            report += "\ncross-engine agreement\n";
            report += &format_agreement(&table);
            Some(table)
        }
        _ => None,
    };
    for r in &results {
        report += &format!("{} engine: {:.2}s\n", r.engine, r.elapsed_secs);
    }
    Ok(FitOutcome { results, agreement: table, report })
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub replicates: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value = "memiss-sim")]
    pub out: PathBuf,
}

fn fmt_cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

/// Writes `replicate_<k>.csv` files with columns `y, w, z, x_true`.
pub fn simulate(args: &SimulateArgs) -> CliResult<Vec<PathBuf>> {
    let cfg = SimConfig { n: args.n, replicates: args.replicates, seed: args.seed, ..SimConfig::default() };
    cfg.validate()?;
    ensure_dir(&args.out)?;
    let mut paths = Vec::new();
    for k in 0..cfg.replicates {
        let rep = simulate_replicate(&cfg, k);
        let path = args.out.join(format!("replicate_{k:04}.csv"));
        let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::Output(e.to_string()))?;
        let out = |e: csv::Error| CliError::Output(e.to_string());
        w.write_record(["y", "w", "z", "x_true"]).map_err(out)?;
        let Response::Gaussian { y, .. } = &rep.data.response else { unreachable!("simulated response is Gaussian") };
        for i in 0..cfg.n {
            w.write_record([
                fmt_cell(y[i]),
                fmt_cell(rep.data.w.reps[i][0]),
                fmt_cell(rep.data.z.rows[i][0]),
                rep.oracle.x_true[i].to_string(),
            ])
            .map_err(out)?;
        }
        w.flush().map_err(|e| CliError::Output(e.to_string()))?;
        paths.push(path);
    }
    write_json_file(&args.out.join("simulate.json"), &cfg)?;
    Ok(paths)
}

#[derive(Debug, Clone, Args)]
pub struct StudyArgs {
    #[arg(long, default_value_t = 100)]
    pub replicates: usize,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 2024)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "marginal")]
    pub engine: EngineChoice,
    #[arg(long, default_value = "memiss-study")]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct StudyMeta<'a> {
    command: &'static str,
    version: &'static str,
    sim: &'a SimConfig,
    engine: EngineKind,
    naive_limit: [f64; 3],
    elapsed_secs: f64,
}

#[derive(Serialize)]
struct ReplicateRow {
    replicate: usize,
    model: study::StudyModel,
    parameter: &'static str,
    mean: f64,
    q025: f64,
    q975: f64,
}

pub fn study_config(args: &StudyArgs) -> CliResult<StudyConfig> {
    let engine = match args.engine {
        EngineChoice::Marginal => EngineKind::Marginal,
        EngineChoice::Gibbs => EngineKind::Gibbs,
        EngineChoice::Both => return Err(CliError::Config("study runs a single engine".into())),
    };
    let mut cfg = StudyConfig { engine, ..StudyConfig::default() };
    cfg.sim = SimConfig { n: args.n, replicates: args.replicates, seed: args.seed, ..cfg.sim };
    cfg.chains.seed = args.seed;
    Ok(cfg)
}

pub fn run_study_command(args: &StudyArgs) -> CliResult<(StudySummary, String)> {
    let cfg = study_config(args)?;
    let start = Instant::now();
    let (summary, fits) = study::run_study(&cfg)?;
    let elapsed = start.elapsed().as_secs_f64();
    ensure_dir(&args.out)?;
    write_csv_file(&args.out.join("study_summary.csv"), &summary.rows)?;
    let mut rows = Vec::new();
    for f in &fits {
        for (k, e) in f.estimates.iter().enumerate() {
            rows.push(ReplicateRow {
                replicate: f.replicate,
                model: f.model,
                parameter: study::STUDY_PARAMS[k],
                mean: e.mean,
                q025: e.q025,
                q975: e.q975,
            });
        }
    }
    write_csv_file(&args.out.join("study_replicates.csv"), &rows)?;
    let meta = StudyMeta {
        command: "study",
        version: env!("CARGO_PKG_VERSION"),
        sim: &cfg.sim,
        engine: cfg.engine,
        naive_limit: naive_limit(&cfg.sim),
        elapsed_secs: elapsed,
    };
    write_json_file(&args.out.join("meta.json"), &meta)?;

    let mut report = format!(
        "{:<10} {:<8} {:>7} {:>9} {:>9} {:>9} {:>9}\n",
        "model", "param", "truth", "mean", "q025", "q975", "coverage"
    );
    for r in &summary.rows {
        report += &format!(
            "{:<10} {:<8} {:>7.3} {:>9.4} {:>9.4} {:>9.4} {:>9.3}\n",
            r.model.as_str(),
            r.parameter,
            r.truth,
            r.mean,
            r.q025,
            r.q975,
            r.coverage
        );
    }
    let l = summary.naive_limit;
    report += &format!("naive large-sample limit: beta0 {:.3}, beta_w {:.3}, beta_z {:.3}\n", l[0], l[1], l[2]);
    report += &format!("elapsed: {elapsed:.1}s\n");
    Ok((summary, report))
}

#[derive(Debug, Clone, Args)]
pub struct CheckArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value = "memiss-check")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRow {
    pub check: String,
    pub parameter: String,
    pub reference: f64,
    pub estimate: f64,
    pub abs_diff: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl CheckRow {
    fn new(check: &str, parameter: &str, reference: f64, estimate: f64, tolerance: f64) -> Self {
        let abs_diff = (reference - estimate).abs();
        Self {
            check: check.to_string(),
            parameter: parameter.to_string(),
            reference,
            estimate,
            abs_diff,
            tolerance,
            pass: abs_diff <= tolerance,
        }
    }
}

/// Conjugate-oracle and cross-engine checks on simulated data.
pub fn check(args: &CheckArgs) -> CliResult<(Vec<CheckRow>, String)> {
    let mut rows = Vec::new();

    let sim = SimConfig { n: 60, miss_intercept: f64::NEG_INFINITY, seed: args.seed, ..SimConfig::default() };
    let rep = simulate_replicate(&sim, 0);
    let mut spec = ModelSpec::plain(Likelihood::GaussianLinear);
    spec.priors.tau_y = PositivePrior::Fixed(1.0);
    let exact = conjugate_linear(&rep.data, 1.0, &spec.priors)?;
    let model = JointModel::new(&spec, &rep.data)?;
    let chains = ChainConfig { iterations: 4000, burn_in: 1000, seed: args.seed, ..ChainConfig::default() };
    let fits = fit_engines(&model, &[EngineKind::Marginal, EngineKind::Gibbs], &chains, &GridConfig::default())?;
    for (k, name) in exact.names.iter().enumerate() {
        let m = fits[0].param(name).ok_or_else(|| CliError::CheckFailed(format!("missing {name}")))?;
        rows.push(CheckRow::new("conjugate_marginal_mean", name, exact.mean[k], m.mean, 1e-6));
        rows.push(CheckRow::new("conjugate_marginal_sd", name, exact.sd[k], m.sd, 1e-6));
        let g = fits[1].param(name).ok_or_else(|| CliError::CheckFailed(format!("missing {name}")))?;
        let mcse = g.mcse().unwrap_or(0.0);
        rows.push(CheckRow::new("conjugate_gibbs_mean", name, exact.mean[k], g.mean, AGREEMENT_TOLERANCE * mcse));
    }

    let sim = SimConfig { n: 200, seed: args.seed, ..SimConfig::default() };
    let rep = simulate_replicate(&sim, 0);
    let (spec, data) = study::prepare(study::StudyModel::Corrected, &rep);
    let model = JointModel::new(&spec, &data)?;
    let grid = GridConfig { latent_sites: false, ..GridConfig::default() };
    let chains = ChainConfig { iterations: 6000, burn_in: 2000, seed: args.seed, ..ChainConfig::default() };
    let fits = fit_engines(&model, &[EngineKind::Marginal, EngineKind::Gibbs], &chains, &grid)?;
    for a in agreement(&fits[0], &fits[1]) {
        let tol = AGREEMENT_TOLERANCE * a.mcse.unwrap_or(0.0);
        rows.push(CheckRow::new("cross_engine_mean", &a.parameter, a.mean_marginal, a.mean_gibbs, tol));
    }

    ensure_dir(&args.out)?;
    write_csv_file(&args.out.join("check.csv"), &rows)?;
    let mut report = format!(
        "{:<24} {:<10} {:>12} {:>12} {:>10} {:>10}  result\n",
        "check", "parameter", "reference", "estimate", "|diff|", "tolerance"
    );
    for r in &rows {
        report += &format!(
            "{:<24} {:<10} {:>12.6} {:>12.6} {:>10.2e} {:>10.2e}  {}\n",
            r.check,
            r.parameter,
            r.reference,
            r.estimate,
            r.abs_diff,
            r.tolerance,
            if r.pass { "PASS" } else { "FAIL" }
        );
    }
    let failed = rows.iter().filter(|r| !r.pass).count();
    if failed > 0 {
        return Err(CliError::CheckFailed(format!("{failed} of {} checks failed\n{report}", rows.len())));
    }
    Ok((rows, report))
}
