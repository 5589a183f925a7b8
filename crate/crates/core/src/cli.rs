//! Command-line front end: `search`, `benchmark`, `cost` and `serve`.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::arch::{ArchitectureSpec, CostReport, SparsityTargets};
use crate::benchmark::{self, ModeSummary};
use crate::error::{Error, Result};
use crate::fitness::remote::{serve, serve_tcp_once};
use crate::fitness::{
    Cached, Evaluator, NegL1Evaluator, RemoteEvaluator, RemoteOptions, SphereEvaluator,
    SurrogateEvaluator,
};
use crate::history::{write_history, RunMetadata};
use crate::ide::{self, IdeConfig, Individual, Mode};
use crate::space::{CompressedSpace, StepVector, StructureVector};

pub const OUT_DIR_ENV: &str = "CHANPRUNE_OUT";

#[derive(Debug, Parser)]
#[command(
    name = "chanprune",
    version,
    about = "Constrained evolutionary channel-pruning search"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Search for the best pruned structure under FLOPs/parameter targets.
    Search(SearchArgs),
    /// Compare IDE and DE on the 30-dimensional integer sphere problem.
    Benchmark(BenchmarkArgs),
    /// Print FLOPs, parameters and pruning rates of a structure.
    Cost(CostArgs),
    /// Host a built-in evaluator over the evaluation protocol.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvaluatorKind {
    Toy,
    Surrogate,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Ide,
    De,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Ide => Mode::Ide,
            ModeArg::De => Mode::De,
        }
    }
}

/// Evolution hyperparameters shared by `search` and `benchmark`.
#[derive(Debug, Clone, Args)]
pub struct EvolutionArgs {
    /// Population size N.
    #[arg(long, default_value_t = 10)]
    pub pop: usize,
    /// Differential weight F.
    #[arg(long = "f", default_value_t = 0.5)]
    pub f: f64,
    /// Crossover probability CR.
    #[arg(long, default_value_t = 0.8)]
    pub cr: f64,
    /// Generations without change before an individual is resampled.
    #[arg(long, default_value_t = 4)]
    pub stagnation: u32,
    /// Always inherit at least one mutant gene during crossover.
    #[arg(long)]
    pub force_mutant_gene: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SearchArgs {
    /// Architecture file, or a bundled name (t2, vgg16-cifar, resnet56-cifar).
    #[arg(long)]
    pub arch: Option<String>,
    /// Minimum FLOPs pruning rate.
    #[arg(long, default_value_t = 0.0)]
    pub rf: f64,
    /// Minimum parameter pruning rate.
    #[arg(long, default_value_t = 0.0)]
    pub rp: f64,
    #[arg(long, value_enum, default_value_t = EvaluatorKind::Surrogate)]
    pub evaluator: EvaluatorKind,
    /// Command spawning a protocol server on stdio.
    #[arg(long)]
    pub remote_cmd: Option<String>,
    /// host:port of a running protocol server.
    #[arg(long)]
    pub remote_addr: Option<String>,
    /// Per-evaluation timeout for remote evaluators, in seconds.
    #[arg(long, default_value_t = 300)]
    pub timeout: u64,
    /// Connection retries for remote evaluators.
    #[arg(long, default_value_t = 3)]
    pub retries: u32,
    /// Pipeline remote requests when the server allows it.
    #[arg(long)]
    pub pipelined: bool,
    /// Step rule: eighth | multiple:K | file:PATH
    #[arg(long, default_value = "eighth")]
    pub steps: StepRule,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of generations T.
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
    #[command(flatten)]
    pub evolution: EvolutionArgs,
    #[arg(long, value_enum, default_value_t = ModeArg::Ide)]
    pub mode: ModeArg,
    /// Output directory.
    #[arg(long, env = OUT_DIR_ENV, default_value = "chanprune-out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct BenchmarkArgs {
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2, 3, 4, 5, 6, 7, 8, 9])]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = 1000)]
    pub iters: usize,
    /// Modes to run; both when omitted.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub mode: Vec<ModeArg>,
    #[command(flatten)]
    pub evolution: EvolutionArgs,
    #[arg(long, env = OUT_DIR_ENV, default_value = "chanprune-out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct CostArgs {
    #[arg(long)]
    pub arch: String,
    /// Inline "c1,c2,..." or a path to a best-structure file.
    #[arg(long)]
    pub structure: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ServedEvaluator {
    Toy,
    Surrogate,
    NegL1,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[arg(long, value_enum)]
    pub evaluator: ServedEvaluator,
    /// Architecture for the surrogate evaluator.
    #[arg(long)]
    pub arch: Option<String>,
    /// Vector length for toy and neg-l1.
    #[arg(long, default_value_t = 30)]
    pub dims: usize,
    /// `stdio`, or an address to accept one TCP connection on.
    #[arg(long, default_value = "stdio")]
    pub listen: String,
}

/// How pruning steps are chosen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepRule {
    /// `max(1, c_i / 8)`.
    Eighth,
    /// The same step for every variable.
    Multiple(i64),
    /// JSON object mapping variable index to step; missing entries use `Eighth`.
    File(PathBuf),
}

impl FromStr for StepRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "eighth" {
            return Ok(StepRule::Eighth);
        }
        if let Some(k) = s.strip_prefix("multiple:") {
            return k
                .parse()
                .map(StepRule::Multiple)
                .map_err(|e| Error::Config(format!("bad step multiple `{k}`: {e}")));
        }
        if let Some(p) = s.strip_prefix("file:") {
            return Ok(StepRule::File(PathBuf::from(p)));
        }
        Err(Error::Config(format!(
            "unknown step rule `{s}` (eighth | multiple:K | file:PATH)"
        )))
    }
}

impl StepRule {
    pub fn resolve(&self, base: &StructureVector) -> Result<StepVector> {
        match self {
            StepRule::Eighth => Ok(StepVector::eighth(base)),
            StepRule::Multiple(k) => StepVector::uniform(*k, base),
            StepRule::File(path) => {
                let text = fs::read_to_string(path)?;
                let map: std::collections::BTreeMap<String, i64> = serde_json::from_str(&text)
                    .map_err(|e| Error::InvalidSteps(format!("{}: {e}", path.display())))?;
                let mut steps = StepVector::eighth(base).as_slice().to_vec();
                for (key, e) in map {
                    let i: usize = key
                        .parse()
                        .map_err(|_| Error::InvalidSteps(format!("bad variable index `{key}`")))?;
                    let slot = steps.get_mut(i).ok_or_else(|| {
                        Error::InvalidSteps(format!("variable index {i} out of range"))
                    })?;
                    *slot = e;
                }
                StepVector::new(steps, base)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum EvaluatorChoice {
    Toy,
    Surrogate,
    RemoteCommand(String),
    RemoteAddr(String),
}

/// A fully validated `search` request.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub arch: Option<String>,
    pub steps: StepRule,
    pub targets: SparsityTargets,
    pub evaluator: EvaluatorChoice,
    pub remote: RemoteOptions,
    pub config: IdeConfig,
    pub out_dir: PathBuf,
}

impl SearchArgs {
    pub fn into_manifest(self) -> Result<RunManifest> {
        let evaluator = match (self.evaluator, self.remote_cmd, self.remote_addr) {
            (EvaluatorKind::Toy, None, None) => EvaluatorChoice::Toy,
            (EvaluatorKind::Surrogate, None, None) => EvaluatorChoice::Surrogate,
            (EvaluatorKind::Remote, Some(cmd), None) => EvaluatorChoice::RemoteCommand(cmd),
            (EvaluatorKind::Remote, None, Some(addr)) => EvaluatorChoice::RemoteAddr(addr),
            (EvaluatorKind::Remote, None, None) => {
                return Err(Error::Config(
                    "remote evaluator needs --remote-cmd or --remote-addr".into(),
                ))
            }
            _ => {
                return Err(Error::Config(
                    "select exactly one evaluator: --remote-cmd/--remote-addr only go with --evaluator remote, and not together"
                        .into(),
                ))
            }
        };
        let targets = SparsityTargets::new(self.rf, self.rp)?;
        if evaluator == EvaluatorChoice::Toy && (targets.flops > 0.0 || targets.params > 0.0) {
            return Err(Error::Config(
                "the toy evaluator has no architecture; drop --rf/--rp".into(),
            ));
        }
        if evaluator != EvaluatorChoice::Toy && self.arch.is_none() {
            return Err(Error::Config(
                "--arch is required for this evaluator".into(),
            ));
        }
        let config = IdeConfig {
            population_size: self.evolution.pop,
            iterations: self.iters,
            differential_weight: self.evolution.f,
            crossover_prob: self.evolution.cr,
            stagnation_limit: self.evolution.stagnation,
            seed: self.seed,
            mode: self.mode.into(),
            force_mutant_gene: self.evolution.force_mutant_gene,
        };
        config.validate()?;
        Ok(RunManifest {
            arch: self.arch,
            steps: self.steps,
            targets,
            evaluator,
            remote: RemoteOptions {
                timeout: Duration::from_secs(self.timeout),
                connect_retries: self.retries,
                pipelined: self.pipelined,
                ..Default::default()
            },
            config,
            out_dir: self.out,
        })
    }
}

/// The best-structure artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestStructure {
    pub arch: Option<String>,
    pub structure: StructureVector,
    pub fitness: f64,
    pub r_f: Option<f64>,
    pub r_p: Option<f64>,
    pub flops: Option<u64>,
    pub params: Option<u64>,
    pub final_population: Vec<Individual>,
}

#[derive(Debug, Clone)]
pub struct SearchReport {
    pub best: BestStructure,
    pub evaluation_requests: u64,
    pub inner_evaluations: u64,
    pub out_dir: PathBuf,
}

impl SearchReport {
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "best structure: {}", self.best.structure);
        if let (Some(rf), Some(rp)) = (self.best.r_f, self.best.r_p) {
            let _ = writeln!(s, "r_f: {rf}");
            let _ = writeln!(s, "r_p: {rp}");
        }
        let _ = writeln!(s, "fitness: {}", self.best.fitness);
        let _ = write!(
            s,
            "evaluations: {} requested, {} computed; artifacts in {}",
            self.evaluation_requests,
            self.inner_evaluations,
            self.out_dir.display()
        );
        s
    }
}

fn build_evaluator(
    manifest: &RunManifest,
    spec: Option<&Arc<ArchitectureSpec>>,
) -> Result<Box<dyn Evaluator>> {
    Ok(match &manifest.evaluator {
        EvaluatorChoice::Toy => Box::new(SphereEvaluator::new()),
        EvaluatorChoice::Surrogate => Box::new(SurrogateEvaluator::new(
            spec.expect("surrogate needs an architecture").clone(),
        )),
        EvaluatorChoice::RemoteCommand(cmd) => {
            Box::new(RemoteEvaluator::spawn(cmd, manifest.remote.clone())?)
        }
        EvaluatorChoice::RemoteAddr(addr) => {
            Box::new(RemoteEvaluator::connect(addr, manifest.remote.clone())?)
        }
    })
}

pub fn cmd_search(manifest: &RunManifest) -> Result<SearchReport> {
    let (space, spec, steps) = match manifest.evaluator {
        EvaluatorChoice::Toy => (SphereEvaluator::new().space(), None, None),
        _ => {
            let arch = manifest.arch.as_deref().expect("validated manifest");
            let spec = Arc::new(ArchitectureSpec::load(arch)?);
            let steps = manifest.steps.resolve(spec.base_structure())?;
            let space = CompressedSpace::for_architecture(spec.clone(), &steps, manifest.targets)?;
            (space, Some(spec), Some(steps.as_slice().to_vec()))
        }
    };

    let evaluator = build_evaluator(manifest, spec.as_ref())?;
    if evaluator.descriptor().expected_vector_length != space.dim() {
        return Err(crate::error::EvalError::LengthMismatch {
            expected: space.dim(),
            got: evaluator.descriptor().expected_vector_length,
        }
        .into());
    }
    let deterministic = evaluator.descriptor().deterministic;
    let meta = RunMetadata {
        config: manifest.config.clone(),
        space_size: space.size().to_string(),
        evaluator: evaluator.descriptor().clone(),
        arch: manifest.arch.clone(),
        targets: spec.as_ref().map(|_| manifest.targets),
        steps,
    };

    fs::create_dir_all(&manifest.out_dir)?;
    let history_path = manifest.out_dir.join("history.csv");

    let (result, requests, computed) = if deterministic {
        let mut cached = Cached::new(evaluator)?;
        let result = ide::run(&space, &mut cached, &manifest.config);
        (result, cached.requests(), cached.inner_evaluations())
    } else {
        let mut plain = evaluator;
        let result = ide::run(&space, &mut plain, &manifest.config);
        let n = match &result {
            Ok(o) => o.history.last().map_or(0, |r| r.evaluations),
            Err(a) => a.history.last().map_or(0, |r| r.evaluations),
        };
        (result, n, n)
    };

    let outcome = match result {
        Ok(o) => o,
        Err(aborted) => {
            write_history(fs::File::create(&history_path)?, &meta, &aborted.history)?;
            return Err(aborted.error);
        }
    };
    write_history(
        io::BufWriter::new(fs::File::create(&history_path)?),
        &meta,
        &outcome.history,
    )?;

    let structure = outcome.best.vector.clone();
    let (rates, cost) = match &spec {
        Some(spec) => {
            let cost = spec.compute_cost(&structure)?;
            if !space.is_feasible(&structure)? {
                return Err(Error::Config(format!(
                    "search returned infeasible structure {structure}"
                )));
            }
            (Some(spec.pruning_rates(&structure)?), Some(cost))
        }
        None => (None, None),
    };
    let best = BestStructure {
        arch: manifest.arch.clone(),
        structure,
        fitness: outcome.best.fitness.expect("scored").value(),
        r_f: rates.map(|r| r.0),
        r_p: rates.map(|r| r.1),
        flops: cost.map(|c| c.flops),
        params: cost.map(|c| c.params),
        final_population: outcome.final_population.individuals,
    };
    write_json(&manifest.out_dir.join("best.json"), &best)?;
    write_json(&manifest.out_dir.join("metadata.json"), &meta)?;

    Ok(SearchReport {
        best,
        evaluation_requests: requests,
        inner_evaluations: computed,
        out_dir: manifest.out_dir.clone(),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostOutput {
    pub structure: StructureVector,
    pub cost: CostReport,
    pub base: CostReport,
    pub r_f: f64,
    pub r_p: f64,
}

impl CostOutput {
    pub fn render(&self) -> String {
        format!(
            "structure: {}\nflops: {}\nparams: {}\nr_f: {}\nr_p: {}",
            self.structure, self.cost.flops, self.cost.params, self.r_f, self.r_p
        )
    }
}

/// Reads a structure given inline or as a file (best-structure JSON or plain list).
pub fn read_structure(arg: &str) -> Result<StructureVector> {
    if let Ok(v) = arg.parse::<StructureVector>() {
        if !v.is_empty() {
            return Ok(v);
        }
    }
    let path = Path::new(arg);
    if !path.is_file() {
        return Err(Error::Config(format!(
            "`{arg}` is neither a structure list nor a readable file"
        )));
    }
    let text = fs::read_to_string(path)?;
    if let Ok(best) = serde_json::from_str::<BestStructure>(&text) {
        return Ok(best.structure);
    }
    text.parse()
}

pub fn cmd_cost(args: &CostArgs) -> Result<CostOutput> {
    let spec = ArchitectureSpec::load(&args.arch)?;
    let structure = read_structure(&args.structure)?;
    let cost = spec.compute_cost(&structure)?;
    let (r_f, r_p) = spec.pruning_rates(&structure)?;
    Ok(CostOutput {
        structure,
        cost,
        base: spec.base_cost(),
        r_f,
        r_p,
    })
}

pub fn cmd_benchmark(args: &BenchmarkArgs) -> Result<Vec<ModeSummary>> {
    if args.iters < 1 {
        return Err(Error::Config(
            "benchmark needs at least one iteration".into(),
        ));
    }
    if args.seeds.is_empty() {
        return Err(Error::Config("benchmark needs at least one seed".into()));
    }
    let modes: Vec<Mode> = if args.mode.is_empty() {
        vec![Mode::Ide, Mode::De]
    } else {
        args.mode.iter().map(|&m| m.into()).collect()
    };
    let base = IdeConfig {
        population_size: args.evolution.pop,
        iterations: args.iters,
        differential_weight: args.evolution.f,
        crossover_prob: args.evolution.cr,
        stagnation_limit: args.evolution.stagnation,
        force_mutant_gene: args.evolution.force_mutant_gene,
        ..Default::default()
    };
    base.validate()?;
    fs::create_dir_all(&args.out)?;
    let space_size = SphereEvaluator::new().space().size().to_string();
    let descriptor = SphereEvaluator::new().descriptor().clone();

    let mut summaries = Vec::new();
    for mode in modes {
        let summary = benchmark::run_mode(mode, &args.seeds, &base)?;
        for run in &summary.runs {
            let meta = RunMetadata {
                config: IdeConfig {
                    seed: run.seed,
                    mode,
                    ..base.clone()
                },
                space_size: space_size.clone(),
                evaluator: descriptor.clone(),
                arch: None,
                targets: None,
                steps: None,
            };
            let path = args.out.join(format!("{mode}-seed{}.csv", run.seed));
            write_history(
                io::BufWriter::new(fs::File::create(path)?),
                &meta,
                &run.history,
            )?;
        }
        summaries.push(summary);
    }
    fs::write(args.out.join("summary.csv"), render_summary(&summaries))?;
    Ok(summaries)
}

pub fn render_summary(summaries: &[ModeSummary]) -> String {
    let mut s =
        String::from("mode,seeds,iterations,successes,median_first_hit,mean_best_fitness\n");
    for m in summaries {
        let median = m
            .median_first_hit
            .map_or_else(|| "none".to_string(), |v| v.to_string());
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            m.mode, m.seeds, m.iterations, m.successes, median, m.mean_best_fitness
        );
    }
    s
}

pub fn cmd_serve(args: &ServeArgs) -> Result<()> {
    let mut evaluator: Box<dyn Evaluator> = match args.evaluator {
        ServedEvaluator::Toy => Box::new(SphereEvaluator::with_dims(args.dims)),
        ServedEvaluator::NegL1 => Box::new(NegL1Evaluator::new(args.dims)),
        ServedEvaluator::Surrogate => {
            let arch = args
                .arch
                .as_deref()
                .ok_or_else(|| Error::Config("--arch is required for surrogate".into()))?;
            Box::new(SurrogateEvaluator::new(Arc::new(ArchitectureSpec::load(
                arch,
            )?)))
        }
    };
    if args.listen == "stdio" {
        let stdin = io::stdin();
        let stdout = io::stdout();
        serve(&mut evaluator, stdin.lock(), stdout.lock())?;
    } else {
        let listener = TcpListener::bind(&args.listen)?;
        eprintln!("listening on {}", listener.local_addr()?);
        serve_tcp_once(&mut evaluator, &listener)?;
    }
    Ok(())
}

/// Dispatches a parsed command line, returning what to print on stdout.
pub fn dispatch(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Search(args) => Ok(cmd_search(&args.into_manifest()?)?.summary()),
        Command::Benchmark(args) => {
            let summaries = cmd_benchmark(&args)?;
            Ok(render_summary(&summaries).trim_end().to_string())
        }
        Command::Cost(args) => Ok(cmd_cost(&args)?.render()),
        Command::Serve(args) => cmd_serve(&args).map(|_| String::new()),
    }
}
