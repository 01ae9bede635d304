//! `supercut`: command-line frontend for panoptic graph clustering.

mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use supercut::io::{self, PlyFormat};
use supercut::matching::bench_matching;
use supercut::metrics::panoptic_quality;
use supercut::panoptic::{grid_search, prepare_scene, run_pipeline, AgreementSource, Grid, PipelineConfig, ScoreSource, DEFAULT_SUPERPOINT_REGULARIZATION};
use supercut::scenegen::{generate_scene, SceneSpec};
use supercut::superpoints::{compute_superpoints, default_features};
use supercut::{build_knn_graph, ClassTable, ClusteringParams, Error};

use manifest::Manifest;

#[derive(Parser, Debug)]
#[command(name = "supercut", version, about = "Panoptic segmentation of point clouds by graph clustering")]
struct Cli {
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a labeled synthetic scene.
    Generate(GenerateArgs),
    /// Oversegment a point cloud into superpoints.
    Partition(PartitionArgs),
    /// Run the full clustering pipeline on a point cloud.
    Cluster(ClusterArgs),
    /// Score predicted labels against ground truth.
    Eval(EvalArgs),
    /// Grid-search the clustering parameters on labeled scenes.
    Tune(TuneArgs),
    /// Time Hungarian matching against graph clustering.
    BenchMatching(BenchArgs),
    /// Re-execute the command recorded in a manifest.
    Rerun { manifest: PathBuf },
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Scene description (JSON); defaults are used for missing keys.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Class table output; defaults to `<out>.classes.json`.
    #[arg(long)]
    classes_out: Option<PathBuf>,
    #[arg(long)]
    objects: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    ascii: bool,
}

#[derive(Args, Debug, Clone)]
struct PartitionArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    knn: usize,
    #[arg(long = "sp-reg", default_value_t = DEFAULT_SUPERPOINT_REGULARIZATION)]
    sp_reg: f64,
}

#[derive(Args, Debug, Clone, Default)]
struct SourceArgs {
    /// Per-point class scores (SCLS file).
    #[arg(long, conflicts_with = "oracle_class")]
    scores: Option<PathBuf>,
    /// Point-edge agreements (CSV `src,dst,agreement`).
    #[arg(long, conflicts_with = "oracle_agreement")]
    agreements: Option<PathBuf>,
    /// One-hot class of each superpoint's majority object.
    #[arg(long)]
    oracle_class: bool,
    /// True superpoint agreements.
    #[arg(long)]
    oracle_agreement: bool,
    /// Replace oracle agreements by uniform draws with this probability.
    #[arg(long)]
    corrupt: Option<f64>,
}

#[derive(Args, Debug, Clone, Default)]
struct ParamArgs {
    /// Pipeline configuration (JSON); flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    knn: Option<usize>,
    #[arg(long = "sp-reg")]
    sp_reg: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct ClusterArgs {
    #[arg(long)]
    input: PathBuf,
    /// Class table (JSON).
    #[arg(long)]
    classes: PathBuf,
    /// Precomputed superpoints (CSV `point_id,superpoint_id`).
    #[arg(long)]
    superpoints: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    sources: SourceArgs,
    #[command(flatten)]
    params: ParamArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Predicted labels (CSV `point_id,class,object`).
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth point cloud.
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    classes: PathBuf,
    /// Metrics output; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TuneArgs {
    /// Text file listing one PLY path per line, relative to the list.
    #[arg(long)]
    scenes: PathBuf,
    #[arg(long)]
    classes: PathBuf,
    /// Grid (JSON `{"lambda": [...], "eta": [...], "epsilon": [...]}`).
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    sources: SourceArgs,
    #[command(flatten)]
    params: ParamArgs,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// CSV with header `n_true,n_pred`.
    #[arg(long)]
    sizes: PathBuf,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Keys of the pipeline configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ConfigFile {
    lambda: f64,
    eta: f64,
    epsilon: f64,
    knn_k: usize,
    superpoint_regularization: f64,
    /// `"oracle"` or a path to an SCLS file.
    scores_source: Option<String>,
    /// `"oracle"` or a path to an agreements CSV.
    agreement_source: Option<String>,
    corruption_rate: f64,
    seed: u64,
}

impl Default for ConfigFile {
    fn default() -> Self {
        let p = ClusteringParams::default();
        Self {
            lambda: p.lambda,
            eta: p.eta,
            epsilon: p.epsilon,
            knn_k: 10,
            superpoint_regularization: DEFAULT_SUPERPOINT_REGULARIZATION,
            scores_source: None,
            agreement_source: None,
            corruption_rate: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Lib(Error::Io(e))
    }
}

type CmdResult<T> = Result<T, Failure>;

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CmdResult<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| {
        Failure::Lib(Error::Format {
            path: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CmdResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    io::atomic_write(path, |w| Ok(w.write_all(text.as_bytes())?))?;
    Ok(())
}

/// Resolves the configuration file and flags into one configuration, with
/// file-relative paths resolved against the file's directory.
fn resolve_config(params: &ParamArgs, sources: &SourceArgs, manifest: &mut Manifest) -> CmdResult<ConfigFile> {
    let mut cfg = match &params.config {
        Some(path) => {
            manifest.input(path)?;
            let mut cfg: ConfigFile = read_json(path)?;
            let base = path.parent().unwrap_or(Path::new("."));
            for src in [&mut cfg.scores_source, &mut cfg.agreement_source].into_iter().flatten() {
                if src != "oracle" {
                    *src = base.join(&*src).display().to_string();
                }
            }
            cfg
        }
        None => ConfigFile::default(),
    };
    if let Some(v) = params.lambda {
        cfg.lambda = v;
    }
    if let Some(v) = params.eta {
        cfg.eta = v;
    }
    if let Some(v) = params.epsilon {
        cfg.epsilon = v;
    }
    if let Some(v) = params.knn {
        cfg.knn_k = v;
    }
    if let Some(v) = params.sp_reg {
        cfg.superpoint_regularization = v;
    }
    if let Some(v) = params.seed {
        cfg.seed = v;
    }
    if let Some(v) = sources.corrupt {
        cfg.corruption_rate = v;
    }
    if sources.oracle_class {
        cfg.scores_source = Some("oracle".into());
    }
    if let Some(p) = &sources.scores {
        cfg.scores_source = Some(p.display().to_string());
    }
    if sources.oracle_agreement {
        cfg.agreement_source = Some("oracle".into());
    }
    if let Some(p) = &sources.agreements {
        cfg.agreement_source = Some(p.display().to_string());
    }
    if !(0.0..=1.0).contains(&cfg.corruption_rate) {
        return Err(Failure::Usage(format!("corruption rate {} outside [0, 1]", cfg.corruption_rate)));
    }
    Ok(cfg)
}

fn pipeline_config(cfg: &ConfigFile, table: &ClassTable, n_points: usize, manifest: &mut Manifest) -> CmdResult<PipelineConfig> {
    let scores = match cfg.scores_source.as_deref() {
        None => return Err(Failure::Usage("class scores needed: pass --scores or --oracle-class".into())),
        Some("oracle") => ScoreSource::Oracle { noise: 0.0 },
        Some(path) => {
            let path = Path::new(path);
            manifest.input(path)?;
            let s = io::read_scores(path)?;
            if s.rows != n_points || s.num_classes != table.num_classes() {
                return Err(Error::Structural(format!(
                    "scores are {}x{}, expected {}x{}",
                    s.rows,
                    s.num_classes,
                    n_points,
                    table.num_classes()
                ))
                .into());
            }
            ScoreSource::PerPoint(s.values)
        }
    };
    let agreements = match cfg.agreement_source.as_deref() {
        None => return Err(Failure::Usage("agreements needed: pass --agreements or --oracle-agreement".into())),
        Some("oracle") => AgreementSource::Oracle {
            corruption: cfg.corruption_rate,
            seed: cfg.seed,
        },
        Some(path) => {
            let path = Path::new(path);
            manifest.input(path)?;
            AgreementSource::PointEdges(io::read_agreements(path)?)
        }
    };
    Ok(PipelineConfig {
        params: ClusteringParams {
            lambda: cfg.lambda,
            eta: cfg.eta,
            epsilon: cfg.epsilon,
            seed: cfg.seed,
            ..Default::default()
        },
        table: table.clone(),
        knn: cfg.knn_k,
        superpoint_regularization: cfg.superpoint_regularization,
        superpoints: None,
        scores,
        agreements,
    })
}

fn cmd_generate(args: &GenerateArgs, manifest: &mut Manifest) -> CmdResult<()> {
    let mut spec = match &args.spec {
        Some(path) => {
            manifest.input(path)?;
            read_json(path)?
        }
        None => SceneSpec::default(),
    };
    if let Some(n) = args.objects {
        spec.n_objects = n;
    }
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    let cloud = generate_scene(&spec)?;
    let format = if args.ascii { PlyFormat::Ascii } else { PlyFormat::BinaryLittleEndian };
    io::write_ply(&args.out, &cloud, format)?;
    let classes = args.classes_out.clone().unwrap_or_else(|| args.out.with_extension("classes.json"));
    write_json(&classes, &spec.classes)?;
    manifest.config(&spec);
    manifest.output(&args.out);
    manifest.output(&classes);
    log::info!("generated {} points, {} objects", cloud.len(), spec.n_objects);
    Ok(())
}

fn cmd_partition(args: &PartitionArgs, manifest: &mut Manifest) -> CmdResult<()> {
    manifest.input(&args.input)?;
    let cloud = io::read_ply(&args.input)?;
    let graph = manifest.time("knn", || build_knn_graph(&cloud.positions, args.knn))?;
    let sp = manifest.time("superpoints", || {
        let (features, dim) = default_features(&cloud);
        compute_superpoints(&features, dim, &cloud.positions, &graph, args.sp_reg)
    })?;
    io::write_superpoints(&args.out, &sp.point_to_superpoint)?;
    manifest.config(&serde_json::json!({ "knn_k": args.knn, "superpoint_regularization": args.sp_reg }));
    manifest.output(&args.out);
    log::info!("{} points in {} superpoints", cloud.len(), sp.len());
    Ok(())
}

fn cmd_cluster(args: &ClusterArgs, manifest: &mut Manifest) -> CmdResult<()> {
    manifest.input(&args.input)?;
    manifest.input(&args.classes)?;
    let cloud = io::read_ply(&args.input)?;
    let table: ClassTable = read_json(&args.classes)?;
    let cfg = resolve_config(&args.params, &args.sources, manifest)?;
    let mut config = pipeline_config(&cfg, &table, cloud.len(), manifest)?;
    if let Some(path) = &args.superpoints {
        manifest.input(path)?;
        config.superpoints = Some(io::read_superpoints(path)?);
    }
    let out = run_pipeline(&cloud, &config)?;
    fs::create_dir_all(&args.out_dir)?;
    let dir = &args.out_dir;
    io::write_labels(&dir.join("labels.csv"), &out.labels)?;
    io::write_partition(&dir.join("partition.csv"), &dir.join("partition.json"), &out.partition)?;
    io::write_superpoints(&dir.join("superpoints.csv"), &out.superpoints.point_to_superpoint)?;
    io::write_edges(&dir.join("edges.csv"), &out.graph)?;
    for name in ["labels.csv", "partition.csv", "partition.json", "superpoints.csv", "edges.csv"] {
        manifest.output(&dir.join(name));
    }
    manifest.config(&cfg);
    manifest.timings(&out.timings);
    log::info!(
        "{} superpoints clustered into {} components, energy {:.6e}",
        out.superpoints.len(),
        out.partition.len(),
        out.partition.energy
    );
    Ok(())
}

fn cmd_eval(args: &EvalArgs, manifest: &mut Manifest) -> CmdResult<()> {
    for p in [&args.pred, &args.gt, &args.classes] {
        manifest.input(p)?;
    }
    let pred = io::read_labels(&args.pred)?;
    let gt = io::read_ply(&args.gt)?;
    let table: ClassTable = read_json(&args.classes)?;
    let metrics = panoptic_quality(&pred, &gt, &table)?;
    match &args.out {
        Some(path) => {
            write_json(path, &metrics)?;
            manifest.output(path);
        }
        None => {
            use std::io::Write;
            let _ = writeln!(std::io::stdout(), "{}", metrics.to_json());
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct TuneRow {
    lambda: f64,
    eta: f64,
    epsilon: f64,
    mean_pq: f64,
}

fn cmd_tune(args: &TuneArgs, manifest: &mut Manifest) -> CmdResult<()> {
    manifest.input(&args.scenes)?;
    manifest.input(&args.classes)?;
    let table: ClassTable = read_json(&args.classes)?;
    let grid: Grid = match &args.grid {
        Some(path) => {
            manifest.input(path)?;
            read_json(path)?
        }
        None => Grid::default(),
    };
    let cfg = resolve_config(&args.params, &args.sources, manifest)?;
    if cfg.scores_source.as_deref() != Some("oracle") || cfg.agreement_source.as_deref() != Some("oracle") {
        return Err(Failure::Usage("tune runs on oracle inputs: pass --oracle-class and --oracle-agreement".into()));
    }
    let base = args.scenes.parent().unwrap_or(Path::new("."));
    let list = fs::read_to_string(&args.scenes)?;
    let mut scenes = Vec::new();
    for line in list.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let path = base.join(line);
        manifest.input(&path)?;
        let cloud = io::read_ply(&path)?;
        let config = pipeline_config(&cfg, &table, cloud.len(), manifest)?;
        scenes.push(prepare_scene(&cloud, &config)?);
    }
    let base_params = ClusteringParams { seed: cfg.seed, ..Default::default() };
    let result = grid_search(&scenes, &grid, &base_params, &table)?;
    fs::create_dir_all(&args.out_dir)?;
    let best = args.out_dir.join("best.json");
    write_json(&best, &result.best)?;
    let table_path = args.out_dir.join("pq_table.csv");
    io::atomic_write(&table_path, |w| {
        let mut writer = csv::Writer::from_writer(w);
        for c in &result.table {
            writer
                .serialize(TuneRow {
                    lambda: c.lambda,
                    eta: c.eta,
                    epsilon: c.epsilon,
                    mean_pq: c.mean_pq,
                })
                .map_err(|e| Error::Io(e.into()))?;
        }
        writer.flush()?;
        Ok(())
    })?;
    manifest.config(&serde_json::json!({ "pipeline": cfg, "grid": grid }));
    manifest.output(&best);
    manifest.output(&table_path);
    Ok(())
}

#[derive(Deserialize)]
struct SizeRow {
    n_true: usize,
    n_pred: usize,
}

fn cmd_bench(args: &BenchArgs, manifest: &mut Manifest) -> CmdResult<()> {
    manifest.input(&args.sizes)?;
    let name = args.sizes.display().to_string();
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(&args.sizes).map_err(|e| csv_failure(&name, e))?;
    let sizes: Vec<(usize, usize)> = reader
        .deserialize::<SizeRow>()
        .map(|r| r.map(|s| (s.n_true, s.n_pred)).map_err(|e| csv_failure(&name, e)))
        .collect::<CmdResult<_>>()?;
    let rows = bench_matching(&sizes, args.repeats, args.seed)?;
    io::atomic_write(&args.out, |w| {
        let mut writer = csv::Writer::from_writer(w);
        for r in &rows {
            writer.serialize(r).map_err(|e| Error::Io(e.into()))?;
        }
        writer.flush()?;
        Ok(())
    })?;
    manifest.config(&serde_json::json!({ "repeats": args.repeats, "seed": args.seed }));
    manifest.output(&args.out);
    Ok(())
}

fn csv_failure(path: &str, e: csv::Error) -> Failure {
    Failure::Lib(Error::Format {
        path: path.to_string(),
        line: e.position().map_or(0, |p| p.line() as usize),
        message: e.to_string(),
    })
}

/// Where a command's manifest goes: inside the output directory, or next to
/// the primary output file.
fn manifest_path(command: &Command) -> Option<PathBuf> {
    let beside = |p: &Path| {
        let mut name = p.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        p.with_file_name(name)
    };
    match command {
        Command::Generate(a) => Some(beside(&a.out)),
        Command::Partition(a) => Some(beside(&a.out)),
        Command::Cluster(a) => Some(a.out_dir.join("manifest.json")),
        Command::Eval(a) => a.out.as_deref().map(beside),
        Command::Tune(a) => Some(a.out_dir.join("manifest.json")),
        Command::BenchMatching(a) => Some(beside(&a.out)),
        Command::Rerun { .. } => None,
    }
}

fn execute(cli: Cli, argv: Vec<String>) -> CmdResult<()> {
    if let Command::Rerun { manifest } = &cli.command {
        let recorded = Manifest::load(manifest)?;
        let cli = Cli::try_parse_from(&recorded).map_err(|e| Failure::Usage(e.to_string()))?;
        if matches!(cli.command, Command::Rerun { .. }) {
            return Err(Failure::Usage("a manifest cannot record a rerun".into()));
        }
        return execute(cli, recorded);
    }
    let mut manifest = Manifest::new(argv);
    match &cli.command {
        Command::Generate(a) => cmd_generate(a, &mut manifest)?,
        Command::Partition(a) => cmd_partition(a, &mut manifest)?,
        Command::Cluster(a) => cmd_cluster(a, &mut manifest)?,
        Command::Eval(a) => cmd_eval(a, &mut manifest)?,
        Command::Tune(a) => cmd_tune(a, &mut manifest)?,
        Command::BenchMatching(a) => cmd_bench(a, &mut manifest)?,
        Command::Rerun { .. } => unreachable!(),
    }
    if let Some(path) = manifest_path(&cli.command) {
        write_json(&path, &manifest.finish())?;
    }
    Ok(())
}

fn exit_code(failure: &Failure) -> u8 {
    match failure {
        Failure::Usage(_) | Failure::Lib(Error::Parameter(_)) => 1,
        Failure::Lib(Error::Structural(_) | Error::Format { .. } | Error::Io(_)) => 2,
        Failure::Lib(Error::Numeric(_)) => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SUPERCUT_LOG", "warn")).init();
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: cannot size the worker pool: {e}");
            return ExitCode::from(1);
        }
    }
    match execute(cli, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            match &failure {
                Failure::Usage(msg) => eprintln!("error: {msg}"),
                Failure::Lib(e) => eprintln!("error: {e}"),
            }
            ExitCode::from(exit_code(&failure))
        }
    }
}
