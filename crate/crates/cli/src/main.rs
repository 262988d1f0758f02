//! `hca`: command-line driver.
//!
//! Every command computes all of its outputs before touching the output
//! directory, so a failed run leaves nothing behind.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use hca_core::completion::{self, MaskPattern, NnrConfig, Solver};
use hca_core::data::{self, DomainCollection};
use hca_core::hca::{self, HcaConfig};
use hca_core::ica::{self, IcaConfig, Nonlinearity};
use hca_core::ingest::{self, LeaderboardSchema, RuleSet, ScoreScale};
use hca_core::matrix_json::MatrixJson;
use hca_core::pipeline::{self, PipelineConfig, Report};
use hca_core::scaling::{self, SigmoidFitConfig};
use hca_core::simulate::{self, SimulationConfig};
use hca_core::subspace::{self, Scaling};
use hca_core::{Error, ErrorClass, Result};

#[derive(Parser)]
#[command(name = "hca", version, about = "Hierarchical component analysis for benchmark leaderboards")]
struct Cli {
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// JSON config with one optional section per command.
    #[arg(long, global = true, env = "HCA_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic multi-domain data from random linear SCMs.
    Simulate(SimulateArgs),
    /// Parse a leaderboard CSV, attribute base models and write a domain bundle.
    Ingest(IngestArgs),
    /// Per-domain ICA on a bundle.
    Ica(IcaArgs),
    /// HCA search on precomputed unmixing matrices.
    Hca(HcaArgs),
    /// ICA, HCA, weight recovery and factor alignment on a bundle.
    Pipeline(PipelineArgs),
    /// Per-domain PCA subspaces and their pairwise distances.
    Pca(PcaArgs),
    /// Global-vs-local completion experiment on one domain.
    Complete(CompleteArgs),
    /// Sigmoid scaling-law fits and treatment effects.
    Scaling(ScalingArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Ingest(_) => "ingest",
            Command::Ica(_) => "ica",
            Command::Hca(_) => "hca",
            Command::Pipeline(_) => "pipeline",
            Command::Pca(_) => "pca",
            Command::Complete(_) => "complete",
            Command::Scaling(_) => "scaling",
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    d0: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    domains: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    /// Inject entanglement with this inexactness.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    per_domain_mixing: bool,
    #[arg(long)]
    noise_std: Option<f64>,
}

#[derive(Args)]
struct IngestArgs {
    csv: PathBuf,
    /// Rules JSON replacing the bundled knowledge base.
    #[arg(long)]
    rules: Option<PathBuf>,
    #[arg(long)]
    min_size: Option<usize>,
    #[arg(long, value_enum)]
    score_scale: Option<ScaleArg>,
    /// Boolean column marking treated (e.g. fine-tuned) models.
    #[arg(long)]
    treated_col: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Auto,
    Unit,
    Percent,
}

#[derive(Args)]
struct IcaArgs {
    data: PathBuf,
    #[arg(long)]
    d0: Option<usize>,
    #[arg(long, value_enum)]
    nonlinearity: Option<NonlinearityArg>,
    #[arg(long)]
    restarts: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum NonlinearityArg {
    Logcosh,
    Cube,
}

#[derive(Args)]
struct HcaArgs {
    /// JSON array of `{rows, cols, data}` unmixing matrices.
    unmixing: PathBuf,
    #[arg(long)]
    budget: Option<u64>,
    #[arg(long)]
    gram_schmidt: bool,
}

#[derive(Args)]
struct PipelineArgs {
    data: PathBuf,
    #[arg(long)]
    d0: Option<usize>,
    /// Comma-separated domain ids.
    #[arg(long, value_delimiter = ',')]
    domains: Option<Vec<String>>,
    #[arg(long)]
    min_size: Option<usize>,
    #[arg(long)]
    strict: bool,
    #[arg(long)]
    budget: Option<u64>,
    #[arg(long)]
    gram_schmidt: bool,
    #[arg(long)]
    per_domain_align: bool,
    #[arg(long)]
    no_align: bool,
}

#[derive(Args)]
struct PcaArgs {
    data: PathBuf,
    #[arg(long, default_value_t = 3)]
    rank: usize,
    #[arg(long)]
    zscore: bool,
}

#[derive(Args)]
struct CompleteArgs {
    data: PathBuf,
    #[arg(long)]
    target: String,
    #[arg(long, value_enum, default_value = "random")]
    pattern: PatternArg,
    #[arg(long, default_value_t = 0.8)]
    p: f64,
    /// Fully observed columns for the block pattern (0-based).
    #[arg(long, value_delimiter = ',')]
    observed_cols: Option<Vec<usize>>,
    #[arg(long, value_enum, default_value = "nnr")]
    solver: SolverArg,
    #[arg(long, default_value_t = 3)]
    rank: usize,
    /// Fixed penalty; selected on a holdout split when absent.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = 100)]
    repeats: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum PatternArg {
    Random,
    Block,
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    Nnr,
    Block,
}

#[derive(Args)]
struct ScalingArgs {
    csv: PathBuf,
    #[arg(long, default_value = "compute")]
    compute_col: String,
    #[arg(long, default_value = "treated")]
    treated_col: String,
    /// Outcome columns; defaults to the standard leaderboard benchmarks
    /// present in the file.
    #[arg(long, value_delimiter = ',')]
    benchmarks: Option<Vec<String>>,
    #[arg(long, default_value_t = 5)]
    bins: usize,
    #[arg(long, default_value_t = 50)]
    grid: usize,
}

/// Files to write, relative to the output directory.
#[derive(Default)]
struct Outputs {
    files: Vec<(PathBuf, Vec<u8>)>,
    bundle: Option<DomainCollection>,
}

impl Outputs {
    fn add(&mut self, name: impl Into<PathBuf>, bytes: impl Into<Vec<u8>>) {
        self.files.push((name.into(), bytes.into()));
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.add(name, s);
        Ok(())
    }

    fn write(self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        if let Some(b) = &self.bundle {
            data::write_bundle(dir, b)?;
        }
        for (name, bytes) in self.files {
            let path = dir.join(name);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::write(path, bytes)?;
        }
        Ok(())
    }
}

struct Context {
    seed: Option<u64>,
    config: serde_json::Value,
    started: Instant,
}

impl Context {
    fn section<T: DeserializeOwned + Default>(&self, name: &str) -> Result<T> {
        match self.config.get(name) {
            Some(v) => Ok(serde_json::from_value(v.clone())?),
            None => Ok(T::default()),
        }
    }

    fn report<T: Serialize>(&self, command: &str, seed: u64, config: &impl Serialize, result: T) -> Result<Report<T>> {
        Report::new(command, seed, config, result, self.started.elapsed().as_secs_f64())
    }
}

fn load_config(path: Option<&Path>) -> Result<serde_json::Value> {
    match path {
        None => Ok(serde_json::Value::Object(Default::default())),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Error::InvalidInput(format!("config {}: {e}", p.display())))?;
            let v: serde_json::Value = serde_json::from_str(&text)?;
            if !v.is_object() {
                return Err(Error::InvalidInput("config must be a JSON object".into()));
            }
            Ok(v)
        }
    }
}

fn simulate_cmd(ctx: &Context, a: &SimulateArgs) -> Result<Outputs> {
    let mut cfg: SimulationConfig = ctx.section("simulate")?;
    if let Some(v) = a.d0 {
        cfg.d0 = v;
    }
    if let Some(v) = a.n {
        cfg.n = v;
    }
    if let Some(v) = a.domains {
        cfg.domains = v;
    }
    if let Some(v) = a.samples {
        cfg.samples = v;
    }
    if a.alpha.is_some() {
        cfg.alpha = a.alpha;
    }
    if a.per_domain_mixing {
        cfg.per_domain_mixing = true;
    }
    if let Some(v) = a.noise_std {
        cfg.noise_std = v;
    }
    if let Some(s) = ctx.seed {
        cfg.seed = s;
    }
    let (coll, truth) = simulate::simulate(&cfg)?;
    #[derive(Serialize)]
    struct Summary {
        domains: Vec<String>,
        rows: Vec<usize>,
        benchmarks: Vec<String>,
        alpha: Vec<f64>,
    }
    let summary = Summary {
        domains: coll.domains().iter().map(|d| d.domain_id.clone()).collect(),
        rows: coll.domains().iter().map(|d| d.len()).collect(),
        benchmarks: coll.benchmarks().to_vec(),
        alpha: truth.domains.iter().map(|d| d.alpha).collect(),
    };
    let mut out = Outputs::default();
    out.json("ground_truth.json", &truth)?;
    out.json("report.json", &ctx.report("simulate", cfg.seed, &cfg, summary)?)?;
    out.bundle = Some(coll);
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct IngestConfig {
    schema: LeaderboardSchema,
    rules: Option<PathBuf>,
    min_size: usize,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            schema: LeaderboardSchema::default(),
            rules: None,
            min_size: 1,
        }
    }
}

fn ingest_cmd(ctx: &Context, a: &IngestArgs) -> Result<Outputs> {
    let mut cfg: IngestConfig = ctx.section("ingest")?;
    if a.rules.is_some() {
        cfg.rules = a.rules.clone();
    }
    if let Some(m) = a.min_size {
        cfg.min_size = m;
    }
    if let Some(s) = a.score_scale {
        cfg.schema.score_scale = match s {
            ScaleArg::Auto => ScoreScale::Auto,
            ScaleArg::Unit => ScoreScale::Unit,
            ScaleArg::Percent => ScoreScale::Percent,
        };
    }
    if a.treated_col.is_some() {
        cfg.schema.fine_tuned = a.treated_col.clone();
    }
    let rules = match &cfg.rules {
        Some(p) => RuleSet::load(p)?,
        None => RuleSet::default_rules(),
    };
    let board = ingest::parse_leaderboard(&a.csv, &cfg.schema)?;
    let attributions: Vec<_> = board.rows.iter().map(|r| ingest::attribute_base_model(r, &rules)).collect();
    let grouping = ingest::group_domains(&board, &attributions, cfg.min_size)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["model", "base_model", "tier", "params_b", "tokens_t", "compute", "treated"];
    header.extend(board.benchmarks.iter().map(String::as_str));
    w.write_record(&header)?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    let mut without_compute = 0usize;
    for (r, a) in board.rows.iter().zip(&attributions) {
        let tokens = a.as_ref().and_then(|a| rules.tokens(&a.base_model_id));
        let compute = ingest::pretraining_compute(r, &rules);
        if a.is_some() && compute.is_none() {
            without_compute += 1;
        }
        let mut rec = vec![
            r.model_name.clone(),
            a.as_ref().map(|a| a.base_model_id.clone()).unwrap_or_default(),
            a.as_ref().map(|a| a.tier.as_str().to_string()).unwrap_or_default(),
            opt(r.parameter_count),
            opt(tokens),
            compute.map(|c| format!("{c:e}")).unwrap_or_default(),
            r.fine_tuned.map(|f| if f { "1" } else { "0" }.to_string()).unwrap_or_default(),
        ];
        rec.extend(r.scores.iter().map(|s| format!("{s}")));
        w.write_record(&rec)?;
    }
    let table = w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?;

    #[derive(Serialize)]
    struct Summary {
        rows: usize,
        dropped: Vec<ingest::DroppedRow>,
        column_map: std::collections::BTreeMap<String, Option<String>>,
        score_divisor: f64,
        domains: Vec<ingest::GroupSize>,
        excluded: Vec<ingest::GroupSize>,
        unattributed: usize,
        attributed_without_compute: usize,
    }
    let summary = Summary {
        rows: board.rows.len(),
        dropped: board.dropped.clone(),
        column_map: board.column_map.clone(),
        score_divisor: board.score_divisor,
        domains: grouping.included.clone(),
        excluded: grouping.excluded.clone(),
        unattributed: grouping.unattributed.len(),
        attributed_without_compute: without_compute,
    };
    let mut out = Outputs::default();
    out.add("attribution.csv", table);
    out.json("report.json", &ctx.report("ingest", ctx.seed.unwrap_or(0), &cfg, summary)?)?;
    out.bundle = Some(grouping.collection);
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct IcaCmdConfig {
    d0: usize,
    ica: IcaConfig,
    seed: u64,
}

impl Default for IcaCmdConfig {
    fn default() -> Self {
        IcaCmdConfig {
            d0: 3,
            ica: IcaConfig::default(),
            seed: 0,
        }
    }
}

fn ica_cmd(ctx: &Context, a: &IcaArgs) -> Result<Outputs> {
    let coll = data::read_bundle(&a.data)?;
    let mut cfg: IcaCmdConfig = ctx.section("ica")?;
    if let Some(d) = a.d0 {
        cfg.d0 = d;
    }
    if let Some(nl) = a.nonlinearity {
        cfg.ica.nonlinearity = match nl {
            NonlinearityArg::Logcosh => Nonlinearity::Logcosh,
            NonlinearityArg::Cube => Nonlinearity::Cube,
        };
    }
    if let Some(r) = a.restarts {
        cfg.ica.restarts = r;
    }
    if let Some(s) = ctx.seed {
        cfg.seed = s;
    }
    #[derive(Serialize)]
    struct DomainIca {
        domain: String,
        seed: u64,
        unmixing: MatrixJson,
        whitening: ica::Whitening,
        non_gaussianity: Vec<f64>,
        convergence: ica::ConvergenceReport,
    }
    let mut results = Vec::new();
    for (k, d) in coll.domains().iter().enumerate() {
        let pc = PipelineConfig {
            seed: cfg.seed,
            ..PipelineConfig::default()
        };
        let icfg = IcaConfig {
            seed: pc.ica_seed(k),
            ..cfg.ica.clone()
        };
        let r = ica::fast_ica(&d.observations, cfg.d0, &icfg)?;
        results.push(DomainIca {
            domain: d.domain_id.clone(),
            seed: icfg.seed,
            unmixing: MatrixJson::from(&r.unmixing),
            whitening: r.whitening,
            non_gaussianity: r.non_gaussianity,
            convergence: r.convergence,
        });
    }
    let matrices: Vec<&MatrixJson> = results.iter().map(|r| &r.unmixing).collect();
    let mut out = Outputs::default();
    out.json("unmixing.json", &matrices)?;
    out.json("report.json", &ctx.report("ica", cfg.seed, &cfg, &results)?)?;
    Ok(out)
}

fn dot_name(id: &str) -> String {
    format!("graphs/{}.dot", data::file_stem(id))
}

fn hca_cmd(ctx: &Context, a: &HcaArgs) -> Result<Outputs> {
    let text = fs::read_to_string(&a.unmixing)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", a.unmixing.display())))?;
    let mats: Vec<MatrixJson> = serde_json::from_str(&text)?;
    let mats = mats
        .iter()
        .map(|m| m.to_matrix().map_err(Error::InvalidInput))
        .collect::<Result<Vec<_>>>()?;
    let mut cfg: HcaConfig = ctx.section("hca")?;
    if let Some(b) = a.budget {
        cfg.budget = b;
    }
    if a.gram_schmidt {
        cfg.orthonormalize_h = true;
    }
    if let Some(s) = ctx.seed {
        cfg.seed = s;
    }
    let sol = hca::hca_search(&mats, &cfg)?;
    let rec = hca::recover_graph_weights(&sol.b_hats)?;
    let mut out = Outputs::default();
    for (k, d) in rec.domains.iter().enumerate() {
        let id = format!("domain{}", k + 1);
        out.add(dot_name(&id), hca::to_dot(d, &id));
    }
    out.json("solution.json", &sol)?;
    #[derive(Serialize)]
    struct Result_ {
        solution: hca::HcaSolution,
        recovered: hca::RecoveredScm,
    }
    let seed = cfg.seed;
    out.json(
        "report.json",
        &ctx.report("hca", seed, &cfg, Result_ { solution: sol, recovered: rec })?,
    )?;
    Ok(out)
}

fn pipeline_cmd(ctx: &Context, a: &PipelineArgs) -> Result<Outputs> {
    let mut cfg: PipelineConfig = ctx.section("pipeline")?;
    if let Some(d) = a.d0 {
        cfg.d0 = d;
    }
    if a.domains.is_some() {
        cfg.domains.ids = a.domains.clone();
    }
    if a.min_size.is_some() {
        cfg.domains.min_size = a.min_size;
    }
    if a.strict {
        cfg.strict = true;
    }
    if let Some(b) = a.budget {
        cfg.hca.budget = b;
    }
    if a.gram_schmidt {
        cfg.hca.orthonormalize_h = true;
    }
    if a.per_domain_align {
        cfg.align.per_domain = true;
    }
    if a.no_align {
        cfg.align.enabled = false;
    }
    if let Some(s) = ctx.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let coll = data::read_bundle(&a.data)?;
    let res = pipeline::run_pipeline(&coll, &cfg)?;
    let mut out = Outputs::default();
    for (id, d) in res.domains.iter().zip(&res.recovered.domains) {
        out.add(dot_name(id), hca::to_dot(d, id));
    }
    if let Some(al) = &res.alignment {
        out.add("r2.csv", al.r2_csv()?);
    }
    out.add("summary.txt", res.summary());
    out.json("solution.json", &res.solution)?;
    out.json("report.json", &ctx.report("pipeline", cfg.seed, &cfg, &res)?)?;
    Ok(out)
}

fn pca_cmd(ctx: &Context, a: &PcaArgs) -> Result<Outputs> {
    let coll = data::read_bundle(&a.data)?;
    let scaling = if a.zscore { Scaling::Zscore } else { Scaling::Raw };
    let dm = subspace::pairwise_distance_matrix(&coll, a.rank, scaling)?;
    #[derive(Serialize)]
    struct DomainPca {
        domain: String,
        explained_variance_ratios: Vec<f64>,
        point_distances_mean: f64,
    }
    let mut per = Vec::new();
    for d in coll.domains() {
        let s = subspace::pca(&d.observations, a.rank, scaling)?;
        let dist = subspace::point_subspace_distances(&d.observations, &s)?;
        per.push(DomainPca {
            domain: d.domain_id.clone(),
            explained_variance_ratios: s.explained_variance_ratios,
            point_distances_mean: dist.iter().sum::<f64>() / dist.len() as f64,
        });
    }
    #[derive(Serialize)]
    struct Cfg {
        rank: usize,
        scaling: Scaling,
    }
    #[derive(Serialize)]
    struct PcaResult {
        domains: Vec<DomainPca>,
        distances: subspace::DistanceMatrix,
    }
    let cfg = Cfg { rank: a.rank, scaling };
    let mut out = Outputs::default();
    out.add("distances.csv", dm.to_csv()?);
    out.json("heatmap.json", &dm.heatmap_json())?;
    out.json(
        "report.json",
        &ctx.report("pca", ctx.seed.unwrap_or(0), &cfg, PcaResult { domains: per, distances: dm })?,
    )?;
    Ok(out)
}

fn complete_cmd(ctx: &Context, a: &CompleteArgs) -> Result<Outputs> {
    let coll = data::read_bundle(&a.data)?;
    let pattern = match a.pattern {
        PatternArg::Random => MaskPattern::Random { p: a.p },
        PatternArg::Block => MaskPattern::Block {
            observed_cols: a
                .observed_cols
                .clone()
                .ok_or_else(|| Error::InvalidInput("block pattern needs --observed-cols".into()))?,
            p: a.p,
        },
    };
    let solver = match a.solver {
        SolverArg::Nnr => Solver::Nnr {
            lambda: a.lambda,
            config: ctx.section::<NnrConfig>("complete")?,
        },
        SolverArg::Block => Solver::Block { rank: a.rank },
    };
    let seed = ctx.seed.unwrap_or(0);
    let rep = completion::completion_experiment(&coll, &a.target, &pattern, &solver, a.repeats, seed)?;
    let first = rep.per_repeat.first().map(|r| r.seed).unwrap_or(seed);
    let target = coll.get(&a.target).expect("validated by the experiment");
    let mask = pattern.apply(&target.observations, first)?;
    #[derive(Serialize)]
    struct Cfg<'a> {
        target: &'a str,
        pattern: &'a MaskPattern,
        solver: &'a Solver,
        repeats: usize,
    }
    let cfg = Cfg {
        target: &a.target,
        pattern: &pattern,
        solver: &solver,
        repeats: a.repeats,
    };
    let mut out = Outputs::default();
    out.add("mask.csv", mask.mask_csv());
    out.json("report.json", &ctx.report("complete", seed, &cfg, &rep)?)?;
    Ok(out)
}

fn scaling_cmd(ctx: &Context, a: &ScalingArgs) -> Result<Outputs> {
    let mut r = csv::Reader::from_path(&a.csv)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", a.csv.display())))?;
    let header: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::InvalidInput(format!("missing column {name}")))
    };
    let ci = col(&a.compute_col)?;
    let ti = col(&a.treated_col)?;
    let benches: Vec<String> = match &a.benchmarks {
        Some(b) => b.clone(),
        None => ingest::DEFAULT_BENCHMARKS
            .iter()
            .filter(|b| header.iter().any(|h| h == *b))
            .map(|b| b.to_string())
            .collect(),
    };
    if benches.is_empty() {
        return Err(Error::InvalidInput("no outcome columns; pass --benchmarks".into()));
    }
    let bi = benches.iter().map(|b| col(b)).collect::<Result<Vec<_>>>()?;
    let parse = |s: Option<&str>| s.and_then(|v| v.trim().parse::<f64>().ok());
    let mut rows: Vec<(f64, f64, Vec<Option<f64>>)> = Vec::new();
    let mut excluded = 0usize;
    for rec in r.records() {
        let rec = rec?;
        match (parse(rec.get(ci)), parse(rec.get(ti))) {
            (Some(c), Some(t)) if c > 0.0 && (t == 0.0 || t == 1.0) => {
                rows.push((c, t, bi.iter().map(|&i| parse(rec.get(i))).collect()));
            }
            _ => excluded += 1,
        }
    }
    let cfg: SigmoidFitConfig = ctx.section("scaling")?;
    #[derive(Serialize)]
    struct BenchFit {
        benchmark: String,
        points: usize,
        #[serde(skip_serializing_if = "Option::is_none")]
        skipped: Option<String>,
        fit: Option<scaling::ScalingLawFit>,
        ate: Option<scaling::AteReport>,
    }
    let mut fits = Vec::new();
    let mut sweep = Vec::new();
    for (j, b) in benches.iter().enumerate() {
        let pts: Vec<(f64, f64, f64)> = rows.iter().filter_map(|(c, t, ys)| ys[j].map(|y| (*c, *t, y))).collect();
        if pts.len() < scaling::MIN_POINTS {
            fits.push(BenchFit {
                benchmark: b.clone(),
                points: pts.len(),
                skipped: Some(format!("fewer than {} points", scaling::MIN_POINTS)),
                fit: None,
                ate: None,
            });
            continue;
        }
        let c: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let t: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let y: Vec<f64> = pts.iter().map(|p| p.2).collect();
        let fit = scaling::sigmoid_fit(&c, &t, &y, &cfg)?;
        let both_arms = t.iter().any(|&v| v == 1.0) && t.iter().any(|&v| v == 0.0);
        let ate = if both_arms {
            let x: Vec<f64> = c.iter().map(|v| v.ln()).collect();
            Some(scaling::ate_backdoor(&y, &t, &x, &fit, a.bins)?)
        } else {
            None
        };
        sweep.extend(scaling::sweep_rows(b, &fit, &c, &t, &y, a.grid));
        fits.push(BenchFit {
            benchmark: b.clone(),
            points: pts.len(),
            skipped: None,
            fit: Some(fit),
            ate,
        });
    }
    if fits.iter().all(|f| f.fit.is_none()) {
        return Err(Error::InsufficientData(format!(
            "no outcome column has {} usable rows ({} rows had compute and treatment)",
            scaling::MIN_POINTS,
            rows.len()
        )));
    }
    #[derive(Serialize)]
    struct ScalingResult {
        rows_used: usize,
        rows_excluded: usize,
        fits: Vec<BenchFit>,
    }
    let mut out = Outputs::default();
    out.add("sweep.csv", scaling::sweep_csv(&sweep)?);
    out.json(
        "report.json",
        &ctx.report(
            "scaling",
            ctx.seed.unwrap_or(0),
            &cfg,
            ScalingResult {
                rows_used: rows.len(),
                rows_excluded: excluded,
                fits,
            },
        )?,
    )?;
    Ok(out)
}

fn run(cli: &Cli) -> Result<()> {
    let ctx = Context {
        seed: cli.seed,
        config: load_config(cli.config.as_deref())?,
        started: Instant::now(),
    };
    let out = match &cli.command {
        Command::Simulate(a) => simulate_cmd(&ctx, a)?,
        Command::Ingest(a) => ingest_cmd(&ctx, a)?,
        Command::Ica(a) => ica_cmd(&ctx, a)?,
        Command::Hca(a) => hca_cmd(&ctx, a)?,
        Command::Pipeline(a) => pipeline_cmd(&ctx, a)?,
        Command::Pca(a) => pca_cmd(&ctx, a)?,
        Command::Complete(a) => complete_cmd(&ctx, a)?,
        Command::Scaling(a) => scaling_cmd(&ctx, a)?,
    };
    out.write(&cli.out)?;
    if let Command::Pipeline(_) = cli.command {
        if let Ok(s) = fs::read_to_string(cli.out.join("summary.txt")) {
            print!("{s}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hca {}: {e}", cli.command.name());
            ExitCode::from(match e.class() {
                ErrorClass::Input => 2,
                ErrorClass::Numerical => 3,
                ErrorClass::NoSolution => 4,
            })
        }
    }
}
