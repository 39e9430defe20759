//! Batch front end: graph checks, identification, estimation, refutation and simulation.

mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use burden::data::{self, ingest_csv, prepare, PreparePlan, Schema};
use burden::scm::{self, ReferenceKind, ScmSpec};
use burden::{
    identification_report, placebo_test, presets, subsample_test, CausalGraph, DiscreteDataset, Estimator, EstimatorRoles,
    FitOptions, ParentPolicy, RefutationReport,
};
use clap::{Args, Parser, Subcommand, ValueEnum};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "burden", version, about = "Causal effect estimation on discrete graphical models")]
struct Cli {
    /// Key-value configuration file; flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print the resolved configuration before running.
    #[arg(long, global = true)]
    print_config: bool,
    /// Worker threads for parallel steps. Results do not depend on it.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    jobs: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Inspect a causal graph.
    #[command(subcommand)]
    Graph(GraphCommand),
    /// Check the estimator preconditions and selection recoverability.
    Identify(GraphSource),
    /// Estimate interventional effects from a dataset.
    Estimate {
        #[arg(value_enum)]
        mode: EstimateMode,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Run a placebo or subsample robustness check.
    Refute {
        #[arg(value_enum)]
        kind: RefuteKind,
        #[command(flatten)]
        model: ModelArgs,
        /// Number of repetitions.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        n: Option<u64>,
        /// Share of rows kept per subsample.
        #[arg(long)]
        fraction: Option<f64>,
        /// Significance threshold for the exit status.
        #[arg(long)]
        alpha: Option<f64>,
        /// Random seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Sample a dataset from a reference structural model.
    Simulate {
        /// null-effect, confounded-rebound or unconfounded.
        #[arg(long)]
        kind: Option<String>,
        /// Model JSON to sample from instead of a built-in kind.
        #[arg(long)]
        scm: Option<PathBuf>,
        /// Number of rows.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        n: Option<u64>,
        /// Random seed
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Turn raw household records into a discrete dataset snapshot.
    Prepare {
        /// Raw household CSV.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Preparation plan JSON; defaults to the built-in plan.
        #[arg(long)]
        plan: Option<PathBuf>,
        /// Output directory
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum GraphCommand {
    /// Parse the graph and report its size.
    Validate(GraphSource),
    /// Count (and optionally list) paths between two nodes.
    Paths {
        #[command(flatten)]
        source: GraphSource,
        #[command(flatten)]
        edit: GraphEdit,
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
        /// Count every simple path instead of back-door paths only.
        #[arg(long)]
        all: bool,
        /// Print each path.
        #[arg(long)]
        list: bool,
    },
    /// Decide d-separation of two node sets given a third.
    Dsep {
        #[command(flatten)]
        source: GraphSource,
        #[command(flatten)]
        edit: GraphEdit,
        #[arg(long, value_delimiter = ',', required = true)]
        a: Vec<String>,
        #[arg(long, value_delimiter = ',', required = true)]
        b: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        given: Vec<String>,
    },
}

#[derive(Args, Clone)]
struct GraphSource {
    /// Built-in graph name.
    #[arg(long, conflicts_with = "graph")]
    preset: Option<String>,
    /// Graph specification file.
    #[arg(long)]
    graph: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct GraphEdit {
    /// Add a selection node with these parents.
    #[arg(long, value_delimiter = ',')]
    select: Vec<String>,
    /// `incoming:A,B` or `outgoing:A`; repeatable, applied in order.
    #[arg(long)]
    mutilate: Vec<String>,
}

#[derive(Args, Clone)]
struct ModelArgs {
    #[command(flatten)]
    source: GraphSource,
    /// Dataset snapshot CSV (with its JSON sidecar) or raw household CSV.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Pseudo-count added to every table cell.
    #[arg(long)]
    smoothing: Option<f64>,
    /// Conditioning sets: observed or district.
    #[arg(long)]
    parents: Option<String>,
    /// Fit on the whole graph instead of its projection onto the estimator variables.
    #[arg(long)]
    full_graph: bool,
    /// Evaluate exactly on a structural model JSON instead of fitting data.
    #[arg(long, conflicts_with = "data")]
    scm: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimateMode {
    Ate,
    Cate,
    Pr,
}

#[derive(Clone, Copy, ValueEnum)]
enum RefuteKind {
    Placebo,
    Subsample,
}

/// An error carrying its exit status.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        let error = e.into();
        let code = match error.downcast_ref::<burden::Error>() {
            Some(burden::Error::Precondition(_)) => 1,
            _ => 2,
        };
        Failure { code, error }
    }
}

type Outcome = std::result::Result<bool, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Outcome {
    let mut cfg = RunConfig::defaults();
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    if let Some(j) = cli.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(j as usize).build_global()?;
    }
    match &cli.command {
        Command::Graph(g) => {
            let source = match g {
                GraphCommand::Validate(s) => s,
                GraphCommand::Paths { source, .. } | GraphCommand::Dsep { source, .. } => source,
            };
            layer_source(&mut cfg, source)?;
        }
        Command::Identify(s) => layer_source(&mut cfg, s)?,
        Command::Estimate { model, .. } => layer_model(&mut cfg, model)?,
        Command::Refute { model, n, fraction, alpha, seed, .. } => {
            layer_model(&mut cfg, model)?;
            cfg.set_opt("repetitions", *n)?;
            cfg.set_opt("fraction", *fraction)?;
            cfg.set_opt("alpha", *alpha)?;
            cfg.set_opt("seed", *seed)?;
        }
        Command::Simulate { kind, scm, n, seed, out } => {
            cfg.set_opt("kind", kind.clone())?;
            cfg.set_opt("scm", scm.as_ref().map(|p| p.display().to_string()))?;
            cfg.set_opt("rows", *n)?;
            cfg.set_opt("seed", *seed)?;
            cfg.set_opt("out", out.as_ref().map(|p| p.display().to_string()))?;
        }
        Command::Prepare { data, plan, out } => {
            cfg.set_opt("data", data.as_ref().map(|p| p.display().to_string()))?;
            cfg.set_opt("plan", plan.as_ref().map(|p| p.display().to_string()))?;
            cfg.set_opt("out", out.as_ref().map(|p| p.display().to_string()))?;
        }
    }
    if cli.print_config {
        print!("{cfg}");
    }
    match cli.command {
        Command::Graph(GraphCommand::Validate(_)) => cmd_validate(&cfg),
        Command::Graph(GraphCommand::Paths { edit, from, to, all, list, .. }) => {
            let g = edited(load_graph(&cfg)?, &edit)?;
            cmd_paths(&g, &from, &to, all, list)
        }
        Command::Graph(GraphCommand::Dsep { edit, a, b, given, .. }) => {
            let g = edited(load_graph(&cfg)?, &edit)?;
            cmd_dsep(&g, &a, &b, &given)
        }
        Command::Identify(_) => cmd_identify(&cfg),
        Command::Estimate { mode, .. } => cmd_estimate(&cfg, mode),
        Command::Refute { kind, .. } => cmd_refute(&cfg, kind),
        Command::Simulate { .. } => cmd_simulate(&cfg),
        Command::Prepare { .. } => cmd_prepare(&cfg),
    }
}

fn layer_source(cfg: &mut RunConfig, s: &GraphSource) -> anyhow::Result<()> {
    cfg.set_opt("preset", s.preset.clone())?;
    cfg.set_opt("graph", s.graph.as_ref().map(|p| p.display().to_string()))
}

fn layer_model(cfg: &mut RunConfig, m: &ModelArgs) -> anyhow::Result<()> {
    layer_source(cfg, &m.source)?;
    cfg.set_opt("data", m.data.as_ref().map(|p| p.display().to_string()))?;
    cfg.set_opt("smoothing", m.smoothing)?;
    cfg.set_opt("parents", m.parents.clone())?;
    if m.full_graph {
        cfg.set("project", "false")?;
    }
    cfg.set_opt("scm", m.scm.as_ref().map(|p| p.display().to_string()))?;
    cfg.set_opt("out", m.out.as_ref().map(|p| p.display().to_string()))
}

fn load_graph(cfg: &RunConfig) -> anyhow::Result<CausalGraph> {
    if let Some(path) = cfg.path("graph")? {
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        return Ok(CausalGraph::from_spec(&text)?);
    }
    let name = cfg.get("preset").ok_or_else(|| anyhow!("no graph given"))?;
    Ok(presets::preset(name)?)
}

fn edited(mut g: CausalGraph, edit: &GraphEdit) -> anyhow::Result<CausalGraph> {
    if !edit.select.is_empty() {
        g = g.augment_selection(&edit.select)?;
    }
    for m in &edit.mutilate {
        let (side, nodes) = m
            .split_once(':')
            .ok_or_else(|| anyhow!("`--mutilate {m}`: expected incoming:NODES or outgoing:NODES"))?;
        let nodes: Vec<&str> = nodes.split(',').filter(|s| !s.is_empty()).collect();
        g = match side {
            "incoming" => g.mutilate_incoming(nodes)?,
            "outgoing" => g.mutilate_outgoing(nodes)?,
            other => bail!("`--mutilate {m}`: unknown side `{other}`"),
        };
    }
    Ok(g)
}

fn cmd_validate(cfg: &RunConfig) -> Outcome {
    let g = match load_graph(cfg) {
        Err(e) => {
            if let Some(burden::Error::Cycle(c)) = e.downcast_ref::<burden::Error>() {
                println!("acyclic: false ({})", c.join(" -> "));
                return Ok(false);
            }
            return Err(e.into());
        }
        Ok(g) => g,
    };
    let count = |k| g.nodes_of_kind(k).len();
    println!(
        "nodes: {} (observed {}, latent {}, selection {})",
        g.len(),
        count(burden::NodeKind::Observed),
        count(burden::NodeKind::Latent),
        count(burden::NodeKind::Selection)
    );
    println!("edges: {}", g.edge_count());
    println!("acyclic: true");
    Ok(true)
}

fn cmd_paths(g: &CausalGraph, from: &str, to: &str, all: bool, list: bool) -> Outcome {
    let paths = if all {
        g.enumerate_simple_paths(from, to)?
    } else {
        g.enumerate_backdoor_paths(from, to)?
    };
    println!("{}", paths.len());
    if list {
        for p in &paths {
            println!("{p}");
        }
    }
    Ok(true)
}

fn cmd_dsep(g: &CausalGraph, a: &[String], b: &[String], given: &[String]) -> Outcome {
    if g.d_separated(a, b, given)? {
        println!("true");
        Ok(true)
    } else {
        println!("false");
        if let Some(p) = g.d_connecting_path(a, b, given)? {
            println!("witness: {p}");
        }
        Ok(false)
    }
}

fn out_dir(cfg: &RunConfig) -> anyhow::Result<PathBuf> {
    let dir = PathBuf::from(cfg.get("out").unwrap_or("out"));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write_file(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn writer(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn cmd_identify(cfg: &RunConfig) -> Outcome {
    let g = load_graph(cfg)?;
    let report = identification_report(&g, &EstimatorRoles::default())?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    for c in report.claims.iter().filter(|c| !c.holds) {
        match &c.witness {
            Some(p) => eprintln!("claim `{}` fails: open path {p}", c.label),
            None => eprintln!("claim `{}` fails", c.label),
        }
    }
    Ok(report.passed())
}

fn load_data(cfg: &RunConfig) -> anyhow::Result<DiscreteDataset> {
    let path = cfg.required_path("data")?;
    if data::sidecar_path(&path).exists() {
        let (d, _) = data::read_snapshot(&path).with_context(|| format!("reading snapshot {}", path.display()))?;
        return Ok(d);
    }
    Ok(prepare_raw(cfg, &path)?.dataset)
}

fn prepare_raw(cfg: &RunConfig, path: &Path) -> anyhow::Result<data::Prepared> {
    let plan: PreparePlan = match cfg.path("plan")? {
        Some(p) => serde_json::from_str(&fs::read_to_string(&p)?).with_context(|| format!("parsing plan {}", p.display()))?,
        None => PreparePlan::default(),
    };
    let raw = ingest_csv(File::open(path)?, &Schema::households()).with_context(|| format!("reading {}", path.display()))?;
    if !raw.rejected.is_empty() {
        log::warn!("{} rows rejected while reading {}", raw.rejected.len(), path.display());
    }
    Ok(prepare(&raw, &plan, &path.display().to_string())?)
}

fn fit_options(cfg: &RunConfig) -> anyhow::Result<FitOptions> {
    Ok(FitOptions {
        smoothing: cfg.parse("smoothing")?,
        policy: cfg.parse::<ParentPolicy>("parents")?,
        project: cfg.parse("project")?,
    })
}

fn cmd_estimate(cfg: &RunConfig, mode: EstimateMode) -> Outcome {
    let roles = EstimatorRoles::default();
    let est = match cfg.path("scm")? {
        Some(p) => Estimator::new(&ScmSpec::from_json(&fs::read_to_string(&p)?)?.joint_model()?, &roles)?,
        None => {
            let g = load_graph(cfg)?;
            let opts = fit_options(cfg)?;
            Estimator::fit(&g, &load_data(cfg)?, &roles, &opts)?
        }
    };
    let dir = out_dir(cfg)?;
    match mode {
        EstimateMode::Ate => {
            let e = est.ate()?;
            write_file(&dir.join("effect.json"), &(e.to_json()? + "\n"))?;
            e.write_treated_csv(writer(&dir.join("effect_treated.csv"))?)?;
            e.write_control_csv(writer(&dir.join("effect_control.csv"))?)?;
            println!(
                "ate {:.1} (treated {:.1}, control {:.1})",
                e.delta, e.expectation_treated, e.expectation_control
            );
        }
        EstimateMode::Cate => {
            let curve = est.cate_curve()?;
            let mids = est.burden().representatives().ok();
            let pw = [est.intervention_on_w(1)?, est.intervention_on_w(0)?];
            let mut w = csv::Writer::from_writer(writer(&dir.join("cate.csv"))?);
            w.write_record([
                "stratum",
                "label",
                "midpoint",
                "expectation_treated",
                "expectation_control",
                "cate",
                "p_w_do_treated",
                "p_w_do_control",
            ])?;
            for (s, e) in curve.iter().enumerate() {
                let mid = mids.as_ref().map_or(String::new(), |m| m[s].to_string());
                let (t, c, d) = match e {
                    Some(e) => (
                        e.expectation_treated.to_string(),
                        e.expectation_control.to_string(),
                        e.delta.to_string(),
                    ),
                    None => Default::default(),
                };
                w.write_record([
                    s.to_string(),
                    est.burden().label(s).to_string(),
                    mid,
                    t,
                    c,
                    d.clone(),
                    pw[0][s].to_string(),
                    pw[1][s].to_string(),
                ])?;
                println!("{} {}", est.burden().label(s), if d.is_empty() { "empty" } else { &d });
            }
            w.flush()?;
            write_file(&dir.join("cate.json"), &(serde_json::to_string_pretty(&curve)? + "\n"))?;
        }
        EstimateMode::Pr => {
            let e = est.ate()?;
            let mut w = csv::Writer::from_writer(writer(&dir.join("pr.csv"))?);
            w.write_record(["value", "treated", "control", "pr"])?;
            for i in 0..e.treated.len() {
                w.write_record([
                    e.representatives[i].to_string(),
                    e.treated[i].to_string(),
                    e.control[i].to_string(),
                    e.pr[i].map_or(String::new(), |r| r.to_string()),
                ])?;
            }
            w.flush()?;
            let crossings: Vec<String> = e
                .pr
                .windows(2)
                .zip(e.representatives.windows(2))
                .filter_map(|(r, v)| match (r[0], r[1]) {
                    (Some(a), Some(b)) if (a - 1.0).signum() != (b - 1.0).signum() => Some(format!("{}..{}", v[0], v[1])),
                    _ => None,
                })
                .collect();
            println!("pr crosses 1 at: {}", if crossings.is_empty() { "none".into() } else { crossings.join(", ") });
        }
    }
    Ok(true)
}

fn cmd_refute(cfg: &RunConfig, kind: RefuteKind) -> Outcome {
    let g = load_graph(cfg)?;
    let opts = fit_options(cfg)?;
    let n: usize = cfg.parse("repetitions")?;
    if n == 0 {
        return Err(anyhow!("repetitions must be at least 1").into());
    }
    let seed: u64 = cfg.parse("seed")?;
    let alpha: f64 = cfg.parse("alpha")?;
    let data = load_data(cfg)?;
    let dir = out_dir(cfg)?;
    let roles = EstimatorRoles::default();
    let pipeline = |d: &DiscreteDataset| Ok(Estimator::fit(&g, d, &roles, &opts)?.ate()?.delta);
    let (report, name, ok): (RefutationReport, &str, fn(f64, f64) -> bool) = match kind {
        RefuteKind::Placebo => (
            placebo_test(&pipeline, &data, &roles.treatment, n, seed)?,
            "placebo",
            |p, a| p < a,
        ),
        RefuteKind::Subsample => {
            let fraction: f64 = cfg.parse("fraction")?;
            (subsample_test(&pipeline, &data, n, fraction, seed)?, "subsample", |p, a| p > a)
        }
    };
    write_file(&dir.join(format!("refute_{name}.json")), &(report.to_json()? + "\n"))?;
    report.write_effects_csv(writer(&dir.join(format!("refute_{name}_effects.csv")))?)?;
    println!(
        "{name}: baseline {:.1}, mean {:.1}, median {:.1}, 1%..99% [{:.1}, {:.1}], p {}",
        report.baseline_ate, report.mean, report.median, report.ci_low_1pct, report.ci_high_99pct, report.p_value
    );
    Ok(ok(report.p_value, alpha))
}

fn cmd_simulate(cfg: &RunConfig) -> Outcome {
    let model: ScmSpec = match cfg.path("scm")? {
        Some(p) => ScmSpec::from_json(&fs::read_to_string(&p)?)?,
        None => scm::fixture(cfg.parse::<ReferenceKind>("kind")?)?,
    };
    let rows: usize = cfg.parse("rows")?;
    let seed: u64 = cfg.parse("seed")?;
    let dir = out_dir(cfg)?;
    let d = model.sample_observational(rows, seed)?;
    let bins = [
        ("W".to_string(), scm::reference_burden_bins()),
        ("Y0".to_string(), scm::reference_outcome_bins()),
    ]
    .into_iter()
    .filter(|(n, _)| d.variable(n).is_ok())
    .collect();
    data::write_snapshot(&d, &bins, &dir.join("dataset.csv"))?;
    let mut f = writer(&dir.join("scm.json"))?;
    f.write_all(model.to_json()?.as_bytes())?;
    f.flush()?;
    println!("{} rows from `{}` written to {}", d.n_rows(), model.name(), dir.display());
    Ok(true)
}

fn cmd_prepare(cfg: &RunConfig) -> Outcome {
    let path = cfg.required_path("data")?;
    let prepared = prepare_raw(cfg, &path)?;
    let dir = out_dir(cfg)?;
    data::write_snapshot(&prepared.dataset, &prepared.bins, &dir.join("dataset.csv"))?;
    println!("{} rows written to {}", prepared.dataset.n_rows(), dir.join("dataset.csv").display());
    Ok(true)
}
