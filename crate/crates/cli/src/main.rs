use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use semdag::graph::{Dag, GraphFile, UGraph};
use semdag::pipeline::{
    estimate_covariance, learn, moralize_from_covariance, oracle_prune_threshold, prune_dag, run_pipeline,
    simulate, substream, CorruptionSpec, EstimateConfig, EstimateSummary, OmegaSource, Penalty,
    PipelineConfig, RunReport, SearchConfig, Threshold, DEFAULT_C0,
};
use semdag::precision::{read_matrix_csv, write_matrix_csv, CovarianceEstimate, EstimateMeta};
use semdag::scoring::{gap_report, misspec_check, Weights};
use semdag::search::SearchMethod;
use semdag::sem::{chain_dag, random_sem, random_tree_dag, DataMatrix, LinearSem, NoiseFamily, NoiseSpec, SemFile, SemStructure};
use semdag::Error;

#[derive(Parser)]
#[command(name = "semdag", version, about = "Learn linear SEM DAGs from clean or corrupted data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample data from a SEM file or a random SEM.
    Simulate(SimulateArgs),
    /// Estimate the moralized graph from data.
    Moralize(MoralizeArgs),
    /// Find the minimum-score DAG within a graph.
    Learn(LearnArgs),
    /// Drop learned edges with small regression coefficients.
    Prune(PruneArgs),
    /// Score gaps of a known SEM.
    Gap(GapArgs),
    /// Moralize, learn and optionally prune in one go.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct OutArgs {
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OmegaArgs {
    /// Homoscedastic error variance.
    #[arg(long, conflicts_with = "omega_file")]
    omega: Option<f64>,
    /// JSON error variances: one vector, or a list of candidate vectors.
    #[arg(long)]
    omega_file: Option<PathBuf>,
}

#[derive(Args)]
struct CorruptionArgs {
    /// Entries are missing independently with this probability.
    #[arg(long, conflicts_with = "sigma_w_file")]
    alpha_missing: Option<f64>,
    /// CSV of the additive noise covariance.
    #[arg(long)]
    sigma_w_file: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    corruption: CorruptionArgs,
    /// Graphical lasso penalty, or "auto".
    #[arg(long, default_value = "auto")]
    lambda: String,
    /// Support threshold on the precision estimate; automatic when absent.
    #[arg(long)]
    tau: Option<f64>,
    /// Multiplier of the automatic threshold.
    #[arg(long, default_value_t = DEFAULT_C0)]
    c0: f64,
    /// Skip column centering (for zero-mean data).
    #[arg(long)]
    no_center: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Exhaustive,
    Dp,
    Auto,
}

impl From<MethodArg> for SearchMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Exhaustive => SearchMethod::Exhaustive,
            MethodArg::Dp => SearchMethod::Dp,
            MethodArg::Auto => SearchMethod::Auto,
        }
    }
}

#[derive(Args)]
struct SearchArgs {
    /// Largest parent set scored; defaults to the graph's maximum degree, capped at 12.
    #[arg(long)]
    max_parents: Option<usize>,
    #[arg(long, value_enum, default_value = "auto")]
    method: MethodArg,
    #[arg(long, default_value_t = 8)]
    treewidth_cap: usize,
}

#[derive(Args)]
struct SimulateArgs {
    /// SEM JSON file; a random SEM is drawn when absent.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Nodes of the random SEM.
    #[arg(long, default_value_t = 10)]
    p: usize,
    /// chain, tree, density:<f> or edges:<m>.
    #[arg(long, default_value = "chain")]
    structure: String,
    /// Coefficient magnitude range of the random SEM.
    #[arg(long, num_args = 2, default_values_t = [0.5, 1.5])]
    coef_range: Vec<f64>,
    /// gaussian, uniform, laplace or rademacher-mixture, all with unit variance.
    #[arg(long, default_value = "gaussian")]
    noise: String,
    #[command(flatten)]
    omega: OmegaArgs,
    #[command(flatten)]
    corruption: CorruptionArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct MoralizeArgs {
    /// Data CSV, or a covariance CSV with --covariance.
    #[arg(long)]
    input: PathBuf,
    /// Treat the input as an exact covariance matrix (requires --tau).
    #[arg(long)]
    covariance: bool,
    #[command(flatten)]
    estimate: EstimateArgs,
    /// Only used for the automatic threshold's noise scale.
    #[command(flatten)]
    omega: OmegaArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct LearnArgs {
    /// Data CSV.
    #[arg(long)]
    input: PathBuf,
    /// Search graph JSON; estimated from the data when absent.
    #[arg(long)]
    graph: Option<PathBuf>,
    #[command(flatten)]
    estimate: EstimateArgs,
    #[command(flatten)]
    omega: OmegaArgs,
    #[command(flatten)]
    search: SearchArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct PruneArgs {
    /// Data CSV.
    #[arg(long)]
    input: PathBuf,
    /// DAG JSON to prune.
    #[arg(long)]
    dag: PathBuf,
    /// Coefficient threshold.
    #[arg(long)]
    prune_tau: Option<f64>,
    /// Ground-truth SEM; sets the threshold to a tenth of its smallest coefficient.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[command(flatten)]
    corruption: CorruptionArgs,
    #[arg(long)]
    no_center: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct GapArgs {
    /// SEM JSON file.
    #[arg(long)]
    input: PathBuf,
    /// Restrict competitors to DAGs consistent with this graph.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Misspecified error variances to compare against the true ones.
    #[command(flatten)]
    omega: OmegaArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct PipelineArgs {
    /// Data CSV.
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    estimate: EstimateArgs,
    #[command(flatten)]
    omega: OmegaArgs,
    #[command(flatten)]
    search: SearchArgs,
    /// Prune learned edges whose coefficient is below this.
    #[arg(long)]
    prune_tau: Option<f64>,
    /// Ground-truth SEM; prunes at a tenth of its smallest coefficient.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutArgs,
}

fn config_error(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::CapExceeded(_) | Error::WidthExceeded { .. } | Error::RecordOverflow { .. } => 3,
        Error::Singular { .. } | Error::NotConverged { .. } | Error::InvalidDecomposition(_) => 4,
        _ => 2,
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> semdag::Result<T> {
    let text = fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_json<T: serde::Serialize>(dir: &Path, name: &str, value: &T) -> semdag::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(dir.join(name), text)?;
    Ok(())
}

fn open(path: &Path) -> semdag::Result<fs::File> {
    fs::File::open(path).map_err(|e| config_error(format!("{}: {e}", path.display())))
}

fn out_dir(o: &OutArgs) -> semdag::Result<PathBuf> {
    fs::create_dir_all(&o.out)?;
    Ok(o.out.clone())
}

fn read_data(path: &Path) -> semdag::Result<DataMatrix> {
    DataMatrix::read_csv(open(path)?)
}

fn read_sem(path: &Path) -> semdag::Result<LinearSem> {
    LinearSem::from_file(&read_json::<SemFile>(path)?)
}

#[derive(serde::Deserialize)]
#[serde(untagged)]
enum OmegaFile {
    One(Vec<f64>),
    Many(Vec<Vec<f64>>),
}

fn omega_source(a: &OmegaArgs) -> semdag::Result<Option<OmegaSource>> {
    match (a.omega, &a.omega_file) {
        (Some(v), None) => Ok(Some(OmegaSource::Homoscedastic(v))),
        (None, Some(path)) => Ok(Some(match read_json::<OmegaFile>(path)? {
            OmegaFile::One(v) => OmegaSource::Candidates(vec![v]),
            OmegaFile::Many(v) => OmegaSource::Candidates(v),
        })),
        (None, None) => Ok(None),
        (Some(_), Some(_)) => Err(config_error("give exactly one of --omega and --omega-file")),
    }
}

fn required_omega(a: &OmegaArgs) -> semdag::Result<OmegaSource> {
    omega_source(a)?.ok_or_else(|| config_error("one of --omega or --omega-file is required"))
}

fn corruption_spec(a: &CorruptionArgs) -> semdag::Result<CorruptionSpec> {
    match (a.alpha_missing, &a.sigma_w_file) {
        (Some(alpha), None) => Ok(CorruptionSpec::Missing { alpha }),
        (None, Some(path)) => Ok(CorruptionSpec::additive(&read_matrix_csv(open(path)?)?)),
        (None, None) => Ok(CorruptionSpec::None),
        (Some(_), Some(_)) => Err(config_error("give at most one corruption mechanism")),
    }
}

fn estimate_config(a: &EstimateArgs) -> semdag::Result<EstimateConfig> {
    let lambda = if a.lambda.eq_ignore_ascii_case("auto") {
        Penalty::Auto
    } else {
        let v: f64 = a
            .lambda
            .parse()
            .map_err(|_| config_error(format!("--lambda expects a number or auto, got {}", a.lambda)))?;
        Penalty::Fixed(v)
    };
    let tau = match a.tau {
        Some(t) => Threshold::Fixed(t),
        None => Threshold::Auto { c0: a.c0 },
    };
    Ok(EstimateConfig {
        corruption: corruption_spec(&a.corruption)?,
        lambda,
        tau,
        center: !a.no_center,
        ..EstimateConfig::default()
    })
}

fn search_config(a: &SearchArgs) -> SearchConfig {
    SearchConfig {
        max_parents: a.max_parents,
        method: a.method.into(),
        treewidth_cap: a.treewidth_cap,
    }
}

fn parse_structure(s: &str, p: usize, seed: u64) -> semdag::Result<SemStructure> {
    let bad = || config_error(format!("unknown structure {s}"));
    match s.split_once(':') {
        None if s == "chain" => Ok(SemStructure::Dag(chain_dag(p))),
        None if s == "tree" => Ok(SemStructure::Dag(random_tree_dag(p, substream(seed, "tree")))),
        Some(("density", d)) => Ok(SemStructure::Density(d.parse().map_err(|_| bad())?)),
        Some(("edges", m)) => Ok(SemStructure::EdgeCount(m.parse().map_err(|_| bad())?)),
        _ => Err(bad()),
    }
}

fn write_dag(dir: &Path, stem: &str, dag: &Dag) -> semdag::Result<()> {
    write_json(dir, &format!("{stem}.json"), &GraphFile::from(dag))?;
    fs::write(dir.join(format!("{stem}.dot")), dag.to_dot())?;
    Ok(())
}

fn write_ugraph(dir: &Path, stem: &str, g: &UGraph) -> semdag::Result<()> {
    write_json(dir, &format!("{stem}.json"), &GraphFile::from(g))?;
    fs::write(dir.join(format!("{stem}.dot")), g.to_dot())?;
    Ok(())
}

fn write_csv_file(dir: &Path, name: &str, data: &DataMatrix) -> semdag::Result<()> {
    data.write_csv(fs::File::create(dir.join(name))?)
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn cmd_simulate(a: &SimulateArgs) -> semdag::Result<()> {
    let dir = out_dir(&a.out)?;
    let sem = match &a.input {
        Some(path) => read_sem(path)?,
        None => {
            let structure = parse_structure(&a.structure, a.p, a.seed)?;
            let omega_range = match omega_source(&a.omega)? {
                Some(OmegaSource::Homoscedastic(v)) => (v, v),
                Some(_) => return Err(config_error("random SEMs take a homoscedastic --omega")),
                None => (0.5, 2.0),
            };
            let (lo, hi) = (a.coef_range[0], a.coef_range[1]);
            random_sem(a.p, &structure, (lo, hi), omega_range, substream(a.seed, "sem"))?
        }
    };
    let family = NoiseFamily::parse(&a.noise)?;
    let corruption = corruption_spec(&a.corruption)?;
    let sim = simulate(&sem, a.n, &NoiseSpec::uniform_family(sem.p(), family), &corruption, a.seed)?;
    write_json(&dir, "sem.json", &sem.to_file())?;
    fs::write(dir.join("sem.dot"), sem.dag().to_dot())?;
    write_csv_file(&dir, "data.csv", &sim.observed)?;
    if corruption != CorruptionSpec::None {
        write_csv_file(&dir, "clean.csv", &sim.clean)?;
    }
    Ok(())
}

/// Covariance estimate and its source config, from a data or covariance file.
fn load_covariance(input: &Path, as_covariance: bool, cfg: &EstimateConfig) -> semdag::Result<CovarianceEstimate> {
    if as_covariance {
        if cfg.corruption != CorruptionSpec::None {
            return Err(config_error("corruption flags do not apply to a covariance input"));
        }
        CovarianceEstimate::exact(read_matrix_csv(open(input)?)?)
    } else {
        estimate_covariance(&read_data(input)?, &cfg.corruption, cfg.center)
    }
}

fn noise_scale(omega: &Option<OmegaSource>, p: usize) -> semdag::Result<Option<f64>> {
    match omega {
        Some(o) => Ok(Some(o.weights(p)?[0].max())),
        None => Ok(None),
    }
}

fn check_caps(cfg: &EstimateConfig) -> semdag::Result<()> {
    let mut probe = PipelineConfig::new(OmegaSource::Homoscedastic(1.0));
    probe.estimate = cfg.clone();
    probe.validate()
}

fn cmd_moralize(a: &MoralizeArgs) -> semdag::Result<()> {
    let cfg = estimate_config(&a.estimate)?;
    check_caps(&cfg)?;
    let omega = omega_source(&a.omega)?;
    let dir = out_dir(&a.out)?;
    let t = Instant::now();
    let cov = load_covariance(&a.input, a.covariance, &cfg)?;
    let p = cov.p();
    let n = cov.n;
    let m = moralize_from_covariance(cov, &cfg, noise_scale(&omega, p)?)?;
    let elapsed = ms(t);

    write_ugraph(&dir, "moral", &m.graph)?;
    write_matrix_csv(&m.precision.theta, fs::File::create(dir.join("theta.csv"))?)?;
    write_matrix_csv(&m.covariance.gamma, fs::File::create(dir.join("covariance.csv"))?)?;
    let meta = EstimateMeta {
        lambda: m.precision.lambda,
        tol: cfg.glasso_tol,
        iterations: m.precision.diagnostics.iterations,
        kkt_residual: m.precision.diagnostics.kkt_residual,
        source: m.covariance.source,
        method: m.precision.method,
        clipped: m.precision.diagnostics.clipped,
    };
    write_json(&dir, "estimate.json", &meta)?;

    let config = json!({
        "input": a.input,
        "covariance_input": a.covariance,
        "estimate": cfg,
        "omega": omega,
        "seed": a.seed,
    });
    let mut report = RunReport::new("moralize", config, p);
    report.n = (n > 0).then_some(n);
    report.estimate = Some(EstimateSummary::from_outcome(&m));
    report.moral_graph = Some(GraphFile::from(&m.graph));
    report.timings_ms.insert("moralize".into(), elapsed);
    write_json(&dir, "report.json", &report)
}

fn cmd_learn(a: &LearnArgs) -> semdag::Result<()> {
    let cfg = estimate_config(&a.estimate)?;
    let omega = required_omega(&a.omega)?;
    let mut pc = PipelineConfig::new(omega.clone());
    pc.estimate = cfg.clone();
    pc.search = search_config(&a.search);
    pc.seed = a.seed;
    pc.validate()?;
    let dir = out_dir(&a.out)?;

    let data = read_data(&a.input)?;
    let p = data.p();
    let weights = omega.weights(p)?;
    let mut report = RunReport::new(
        "learn",
        json!({ "input": a.input, "graph": a.graph, "config": pc }),
        p,
    );
    report.n = Some(data.n());

    let t = Instant::now();
    let (cov, graph) = match &a.graph {
        Some(path) => {
            let g = read_json::<GraphFile>(path)?.to_ugraph()?;
            if g.p() != p {
                return Err(config_error(format!("graph has {} nodes, data has {p} columns", g.p())));
            }
            (estimate_covariance(&data, &cfg.corruption, cfg.center)?, g)
        }
        None => {
            let cov = estimate_covariance(&data, &cfg.corruption, cfg.center)?;
            let m = moralize_from_covariance(cov, &cfg, Some(weights[0].max()))?;
            report.estimate = Some(EstimateSummary::from_outcome(&m));
            (m.covariance, m.graph)
        }
    };
    report.timings_ms.insert("moralize".into(), ms(t));
    report.moral_graph = Some(GraphFile::from(&graph));

    let t = Instant::now();
    let mut primary = None;
    for w in &weights {
        let out = learn(&cov, &graph, w, &pc.search)?;
        report.candidates.push(semdag::pipeline::CandidateScore {
            omega: w.as_slice().to_vec(),
            score: out.score,
            dag: GraphFile::from(&out.dag),
        });
        primary.get_or_insert(out);
    }
    let out = primary.expect("at least one omega candidate");
    report.timings_ms.insert("learn".into(), ms(t));
    report.dag = Some(GraphFile::from(&out.dag));
    report.score = Some(out.score);
    report.search = Some(out.stats.clone());
    report.check_score(&out.table)?;

    write_dag(&dir, "dag", &out.dag)?;
    write_json(&dir, "scores.json", &out.table.to_file())?;
    write_json(&dir, "report.json", &report)
}

fn prune_threshold(prune_tau: Option<f64>, truth: &Option<PathBuf>) -> semdag::Result<Option<f64>> {
    match (prune_tau, truth) {
        (Some(t), _) => Ok(Some(t)),
        (None, Some(path)) => Ok(Some(
            oracle_prune_threshold(&read_sem(path)?).unwrap_or(0.0),
        )),
        (None, None) => Ok(None),
    }
}

fn cmd_prune(a: &PruneArgs) -> semdag::Result<()> {
    let threshold = prune_threshold(a.prune_tau, &a.truth)?
        .ok_or_else(|| config_error("pruning needs --prune-tau or --truth"))?;
    if threshold.is_nan() || threshold < 0.0 {
        return Err(config_error(format!("prune threshold {threshold} must be non-negative")));
    }
    let corruption = corruption_spec(&a.corruption)?;
    let dir = out_dir(&a.out)?;
    let data = read_data(&a.input)?;
    let dag = read_json::<GraphFile>(&a.dag)?.to_dag()?;
    let t = Instant::now();
    let cov = estimate_covariance(&data, &corruption, !a.no_center)?;
    let pruned = prune_dag(&cov.gamma, &dag, threshold)?;
    write_dag(&dir, "pruned", &pruned)?;

    let config = json!({
        "input": a.input,
        "dag": a.dag,
        "truth": a.truth,
        "corruption": corruption,
        "center": !a.no_center,
        "seed": a.seed,
    });
    let mut report = RunReport::new("prune", config, dag.p());
    report.n = Some(data.n());
    report.dag = Some(GraphFile::from(&dag));
    report.prune_threshold = Some(threshold);
    report.pruned_dag = Some(GraphFile::from(&pruned));
    report.timings_ms.insert("prune".into(), ms(t));
    write_json(&dir, "report.json", &report)
}

fn cmd_gap(a: &GapArgs) -> semdag::Result<()> {
    let sem = read_sem(&a.input)?;
    let omega = omega_source(&a.omega)?;
    let graph = match &a.graph {
        Some(path) => Some(read_json::<GraphFile>(path)?.to_ugraph()?),
        None => None,
    };
    let dir = out_dir(&a.out)?;
    let sigma = sem.population_covariance();
    let w0 = Weights::new(sem.omega().to_vec())?;
    let dag0 = sem.dag();
    let report = gap_report(&sigma, &w0, &dag0, graph.as_ref())?;
    let misspec = match (&omega, report.xi.or(report.xi_restricted)) {
        (Some(o), Some(xi)) => Some(misspec_check(&w0, &o.weights(sem.p())?[0], xi, sem.p())?),
        _ => None,
    };
    write_json(
        &dir,
        "gap.json",
        &json!({
            "schema_version": semdag::pipeline::REPORT_SCHEMA_VERSION,
            "p": sem.p(),
            "gap": report,
            "misspecification": misspec,
        }),
    )
}

fn cmd_pipeline(a: &PipelineArgs) -> semdag::Result<()> {
    let mut cfg = PipelineConfig::new(required_omega(&a.omega)?);
    cfg.estimate = estimate_config(&a.estimate)?;
    cfg.search = search_config(&a.search);
    cfg.prune = prune_threshold(a.prune_tau, &a.truth)?;
    cfg.seed = a.seed;
    cfg.validate()?;
    let dir = out_dir(&a.out)?;
    let data = read_data(&a.input)?;
    let mut out = run_pipeline(&data, &cfg)?;
    out.report.config = json!({ "input": a.input, "truth": a.truth, "config": cfg });

    write_ugraph(&dir, "moral", &out.moral.graph)?;
    write_dag(&dir, "dag", &out.learned.dag)?;
    write_json(&dir, "scores.json", &out.learned.table.to_file())?;
    if let Some(pruned) = &out.pruned {
        write_dag(&dir, "pruned", pruned)?;
    }
    write_json(&dir, "report.json", &out.report)
}

fn run(cli: &Cli) -> semdag::Result<()> {
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Moralize(a) => cmd_moralize(a),
        Command::Learn(a) => cmd_learn(a),
        Command::Prune(a) => cmd_prune(a),
        Command::Gap(a) => cmd_gap(a),
        Command::Pipeline(a) => cmd_pipeline(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
