use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use graphfill::baselines::{FilterConfig, FilterInit, FilterKind};
use graphfill::client::{
    build_backend, BackendConfig, BackendKind, CompletionBackend, RecordingBackend,
    DEFAULT_CREDENTIAL_ENV, DEFAULT_ENDPOINT, DEFAULT_MODEL,
};
use graphfill::dataset::{load_bundle, parse_mask, save_bundle, write_mask, Bundle};
use graphfill::graph::{knn_graph, KnnWeights};
use graphfill::harness::{
    compare, run_online, FilterPredictor, MaskPlan, MaskPolicy, MessengerConfig,
    MessengerPredictor, Predictor, RunResult, ZeroPredictor,
};
use graphfill::messenger::{NeighborMode, PromptTemplate};
use graphfill::signal::{generate_mask, synth_bandlimited, SynthParams};

type CliResult<T> = Result<T, Box<dyn std::error::Error>>;

#[derive(Parser)]
#[command(
    name = "graphfill",
    version,
    about = "Online reconstruction of graph signals with missing nodes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic bandlimited dataset bundle.
    Synth(SynthArgs),
    /// Write a sampling mask file.
    Mask(MaskArgs),
    /// Run one predictor and write its results.
    Run(RunArgs),
    /// Merge run results into a comparison table.
    Compare(CompareArgs),
    /// Run against a live (or mock) backend and capture a replay file.
    ReplayRecord(ReplayRecordArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 50)]
    nodes: usize,
    #[arg(long, default_value_t = 60)]
    steps: usize,
    /// Nearest neighbors per node in the generated graph.
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long, default_value_t = 5)]
    bandwidth: usize,
    #[arg(long, default_value_t = 0.95)]
    rho: f64,
    #[arg(long, default_value_t = 0.3)]
    innovation: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "")]
    units: String,
    /// Output directory for the bundle.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MaskArgs {
    /// Take the node count from this manifest.
    #[arg(long, conflicts_with = "nodes", required_unless_present = "nodes")]
    manifest: Option<PathBuf>,
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long, default_value_t = 0.3, value_parser = parse_fraction)]
    fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PredictorArg {
    Glms,
    Gsign,
    Llm,
    Mock,
    Zero,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum NeighborModeArg {
    ObservedOnly,
    ObservedPlusStale,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendArg {
    Remote,
    Mock,
    Replay,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InitArg {
    Zeros,
    FirstMean,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Dataset manifest.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = PredictorArg::Mock)]
    predictor: PredictorArg,
    #[arg(long)]
    mu: Option<f64>,
    /// Filter bandwidth F; defaults to round(0.3 N).
    #[arg(long)]
    bandwidth: Option<usize>,
    #[arg(long, value_enum, default_value_t = InitArg::Zeros)]
    init: InitArg,
    /// Fraction of nodes missing, in [0, 1).
    #[arg(long, default_value_t = 0.3, value_parser = parse_fraction)]
    fraction: f64,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    runs: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Reuse one mask for every run.
    #[arg(long)]
    fixed_mask: bool,
    /// Use this mask file for every run instead of drawing masks.
    #[arg(long, conflicts_with_all = ["fixed_mask"])]
    mask: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = NeighborModeArg::ObservedPlusStale)]
    neighbor_mode: NeighborModeArg,
    /// Completion backend for `--predictor llm`.
    #[arg(long, value_enum, default_value_t = BackendArg::Remote)]
    backend: BackendArg,
    #[arg(long, default_value = DEFAULT_MODEL)]
    model: String,
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
    #[arg(long, default_value_t = 16)]
    max_tokens: u32,
    #[arg(long, default_value = DEFAULT_ENDPOINT)]
    endpoint: String,
    /// Environment variable holding the API key.
    #[arg(long, default_value = DEFAULT_CREDENTIAL_ENV)]
    credential_env: String,
    #[arg(long, default_value_t = 60.0)]
    timeout: f64,
    #[arg(long, default_value_t = 5)]
    max_retries: u32,
    #[arg(long, default_value_t = 8)]
    max_in_flight: usize,
    /// Recorded replies for `--backend replay`.
    #[arg(long)]
    replay_file: Option<PathBuf>,
    /// Weight on the previous estimate in the mock predictor.
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Send each step's node tasks as one batched request.
    #[arg(long)]
    batch: bool,
    /// Prompt template file; the bundled template is used otherwise.
    #[arg(long)]
    template: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Also write an MSE-versus-time SVG plot.
    #[arg(long)]
    svg: bool,
}

#[derive(Args)]
struct CompareArgs {
    /// RunResult JSON files.
    #[arg(required = true)]
    results: Vec<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayRecordArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Where to write the captured replay records.
    #[arg(long)]
    replay_out: PathBuf,
}

fn parse_fraction(s: &str) -> Result<f64, String> {
    let x: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if (0.0..1.0).contains(&x) {
        Ok(x)
    } else {
        Err(format!("missing fraction must lie in [0, 1), got {x}"))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let outcome = match cli.command {
        Command::Synth(a) => synth(&a),
        Command::Mask(a) => mask(&a),
        Command::Run(a) => run(&a, None),
        Command::Compare(a) => compare_cmd(&a),
        Command::ReplayRecord(a) => run(&a.run, Some(&a.replay_out)),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn synth(a: &SynthArgs) -> CliResult<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let points: Vec<Vec<f64>> = (0..a.nodes)
        .map(|_| vec![rng.random::<f64>(), rng.random::<f64>()])
        .collect();
    let graph = knn_graph(&points, a.k, KnnWeights::Unit)?;
    let params = SynthParams {
        bandwidth: a.bandwidth,
        temporal_rho: a.rho,
        innovation_std: a.innovation,
        t_len: a.steps,
        seed: a.seed,
    };
    let series = synth_bandlimited(&graph, &params, &a.units)?;
    let manifest = save_bundle(&a.out, &graph, &series, Some(&points))?;
    println!("wrote {}", manifest.display());
    Ok(())
}

fn mask(a: &MaskArgs) -> CliResult<()> {
    let n = match (&a.manifest, a.nodes) {
        (Some(m), _) => load_bundle(m)?.graph.num_nodes(),
        (None, Some(n)) => n,
        (None, None) => unreachable!("clap requires one of --manifest or --nodes"),
    };
    let m = generate_mask(n, a.fraction, a.seed)?;
    write_file(&a.out, &write_mask(&m))?;
    println!(
        "wrote {} ({} of {n} nodes missing)",
        a.out.display(),
        m.num_missing()
    );
    Ok(())
}

fn backend_config(a: &RunArgs) -> BackendConfig {
    let kind = match (a.predictor, a.backend) {
        (PredictorArg::Mock, _) | (PredictorArg::Llm, BackendArg::Mock) => BackendKind::Mock,
        (_, BackendArg::Replay) => BackendKind::Replay,
        _ => BackendKind::Remote,
    };
    BackendConfig {
        kind,
        endpoint: a.endpoint.clone(),
        credential_env: a.credential_env.clone(),
        timeout_secs: a.timeout,
        max_retries: a.max_retries,
        max_in_flight: a.max_in_flight,
        mock_alpha: a.alpha,
        replay_file: a.replay_file.clone(),
        batch: a.batch,
        ..BackendConfig::default()
    }
}

/// Backend settings recorded in the result. Holds the variable name, never the key.
fn backend_snapshot(cfg: &BackendConfig) -> serde_json::Value {
    match cfg.kind {
        BackendKind::Mock => json!({ "kind": cfg.kind, "alpha": cfg.mock_alpha }),
        BackendKind::Replay => json!({ "kind": cfg.kind, "replay_file": cfg.replay_file }),
        BackendKind::Remote => json!({
            "kind": cfg.kind,
            "endpoint": cfg.endpoint,
            "credential_env": cfg.credential_env,
            "timeout_secs": cfg.timeout_secs,
            "max_retries": cfg.max_retries,
            "max_in_flight": cfg.max_in_flight,
        }),
    }
}

fn uses_backend(p: PredictorArg) -> bool {
    matches!(p, PredictorArg::Llm | PredictorArg::Mock)
}

fn build_predictor(
    a: &RunArgs,
    bundle: &Bundle,
    backend: Option<Arc<dyn CompletionBackend>>,
    backend_cfg: &BackendConfig,
) -> CliResult<Box<dyn Predictor>> {
    let n = bundle.graph.num_nodes();
    let filter = |kind| -> CliResult<Box<dyn Predictor>> {
        let defaults = FilterConfig::default_for(n);
        let cfg = FilterConfig {
            mu: a.mu.unwrap_or(defaults.mu),
            bandwidth: a.bandwidth.unwrap_or(defaults.bandwidth),
            init: match a.init {
                InitArg::Zeros => FilterInit::Zeros,
                InitArg::FirstMean => FilterInit::FirstObservationMean,
            },
        };
        Ok(Box::new(FilterPredictor::new(kind, cfg, &bundle.graph)?))
    };
    Ok(match a.predictor {
        PredictorArg::Glms => filter(FilterKind::Glms)?,
        PredictorArg::Gsign => filter(FilterKind::Gsign)?,
        PredictorArg::Zero => Box::new(ZeroPredictor),
        PredictorArg::Llm | PredictorArg::Mock => {
            let template = match &a.template {
                Some(p) => PromptTemplate::new(
                    fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?,
                )?,
                None => PromptTemplate::default(),
            };
            let cfg = MessengerConfig {
                neighbor_mode: match a.neighbor_mode {
                    NeighborModeArg::ObservedOnly => NeighborMode::ObservedOnly,
                    NeighborModeArg::ObservedPlusStale => NeighborMode::ObservedPlusStale,
                },
                units: bundle.units.clone(),
                model: a.model.clone(),
                temperature: a.temperature,
                max_tokens: a.max_tokens,
                batch: a.batch,
            };
            let backend = backend.expect("backend built for message-passing predictors");
            let mut p = MessengerPredictor::new(cfg, template, backend)
                .with_backend_snapshot(backend_snapshot(backend_cfg));
            if backend_cfg.kind == BackendKind::Mock {
                p = p.with_label(format!("Mock(alpha={})", backend_cfg.mock_alpha));
            }
            Box::new(p)
        }
    })
}

fn run(a: &RunArgs, record_to: Option<&Path>) -> CliResult<()> {
    if record_to.is_some() && !uses_backend(a.predictor) {
        return Err("replay-record needs --predictor llm or mock".into());
    }
    let backend_cfg = backend_config(a);
    // resolves credentials and replay files before any data is touched
    let backend = if uses_backend(a.predictor) {
        Some(build_backend(&backend_cfg)?)
    } else {
        None
    };
    let recorder = match (record_to, &backend) {
        (Some(_), Some(inner)) => Some(Arc::new(RecordingBackend::new(inner.clone()))),
        _ => None,
    };
    let backend = match &recorder {
        Some(r) => Some(r.clone() as Arc<dyn CompletionBackend>),
        None => backend,
    };

    let started = Instant::now();
    let bundle = load_bundle(&a.manifest)?;
    let predictor = build_predictor(a, &bundle, backend, &backend_cfg)?;
    let plan = match &a.mask {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            MaskPlan::Explicit(parse_mask(&text, &p.display().to_string())?)
        }
        None => MaskPlan::Generated(MaskPolicy {
            missing_fraction: a.fraction,
            seed: a.seed,
            fixed: a.fixed_mask,
        }),
    };
    let mut result = run_online(
        predictor.as_ref(),
        &bundle.graph,
        &bundle.series,
        &plan,
        a.runs as usize,
    )?;
    let elapsed = started.elapsed();
    result.config["cli"] = effective_settings(a, &backend_cfg);

    fs::create_dir_all(&a.out).map_err(|e| format!("{}: {e}", a.out.display()))?;
    write_file(
        &a.out.join("result.json"),
        &(serde_json::to_string_pretty(&result)? + "\n"),
    )?;
    write_file(
        &a.out.join("estimates.csv"),
        &estimates_csv(&result, &bundle),
    )?;
    let by_time = result.mse_by_time(&bundle.series);
    write_file(&a.out.join("mse_by_time.csv"), &mse_by_time_csv(&by_time))?;
    if a.svg {
        write_file(
            &a.out.join("mse_by_time.svg"),
            &mse_svg(&by_time, &result.predictor),
        )?;
    }
    let timing = json!({ "wall_clock_secs": elapsed.as_secs_f64() });
    write_file(
        &a.out.join("timing.json"),
        &(serde_json::to_string_pretty(&timing)? + "\n"),
    )?;

    if let (Some(path), Some(rec)) = (record_to, &recorder) {
        rec.save(path)?;
        println!(
            "recorded {} replies to {}",
            rec.records().len(),
            path.display()
        );
    }
    let missing = result
        .mse
        .missing_only
        .map_or_else(|| "-".to_owned(), |m| format!("{m:.6}"));
    println!(
        "{}: mse {:.6}, missing-only mse {missing}, {} fallbacks over {} runs",
        result.predictor,
        result.mse.all_nodes,
        result.fallbacks.total,
        result.runs.len()
    );
    Ok(())
}

fn effective_settings(a: &RunArgs, backend: &BackendConfig) -> serde_json::Value {
    json!({
        "manifest": a.manifest,
        "predictor": name(&a.predictor),
        "fraction": a.fraction,
        "runs": a.runs,
        "seed": a.seed,
        "fixed_mask": a.fixed_mask,
        "mask_file": a.mask,
        "neighbor_mode": name(&a.neighbor_mode),
        "backend": uses_backend(a.predictor).then_some(backend.kind),
        "template": a.template,
    })
}

fn name<T: ValueEnum>(v: &T) -> String {
    v.to_possible_value()
        .map(|p| p.get_name().to_owned())
        .unwrap_or_default()
}

fn estimates_csv(result: &RunResult, bundle: &Bundle) -> String {
    let mut out = String::from("run,t,node,truth,estimate\n");
    for run in &result.runs {
        for t in 0..bundle.series.len() {
            for (node, row) in run.estimates.iter().enumerate() {
                out.push_str(&format!(
                    "{},{t},{node},{:?},{:?}\n",
                    run.run,
                    bundle.series.get(node, t),
                    row[t]
                ));
            }
        }
    }
    out
}

fn mse_by_time_csv(by_time: &[f64]) -> String {
    let mut out = String::from("t,mse\n");
    for (t, m) in by_time.iter().enumerate() {
        out.push_str(&format!("{t},{m:?}\n"));
    }
    out
}

fn mse_svg(by_time: &[f64], title: &str) -> String {
    let (w, h, pad) = (640.0, 320.0, 40.0);
    let max = by_time
        .iter()
        .copied()
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let span = (by_time.len().max(2) - 1) as f64;
    let points: Vec<String> = by_time
        .iter()
        .enumerate()
        .map(|(t, m)| {
            let x = pad + (w - 2.0 * pad) * t as f64 / span;
            let y = h - pad - (h - 2.0 * pad) * m / max;
            format!("{x:.2},{y:.2}")
        })
        .collect();
    let title = title.replace('&', "&amp;").replace('<', "&lt;");
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <line x1=\"{pad}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <text x=\"{pad}\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">{title}: MSE by time (max {max:.4})</text>\n\
         <polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"{}\"/>\n\
         </svg>\n",
        points.join(" "),
        b = h - pad,
        r = w - pad,
    )
}

fn compare_cmd(a: &CompareArgs) -> CliResult<()> {
    let mut loaded = Vec::with_capacity(a.results.len());
    for path in &a.results {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let result: RunResult =
            serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        loaded.push(result);
    }
    let mut labelled: Vec<(String, &RunResult)> = Vec::with_capacity(loaded.len());
    for r in &loaded {
        let dupes = labelled
            .iter()
            .filter(|(l, _)| l.starts_with(&r.predictor))
            .count();
        let label = if dupes == 0 {
            r.predictor.clone()
        } else {
            format!("{} #{}", r.predictor, dupes + 1)
        };
        labelled.push((label, r));
    }
    let table = compare(&labelled)?;
    print!("{}", table.to_text());
    if let Some(p) = &a.csv {
        write_file(p, &table.to_csv())?;
    }
    if let Some(p) = &a.json {
        write_file(p, &(table.to_json() + "\n"))?;
    }
    Ok(())
}
