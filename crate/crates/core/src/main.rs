use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use scis::causal::{build_vad_scm, confounded_triple, DiscreteScm, ScmFile};
use scis::dictionary::{build_dictionary, ClusterAlgo, DictSizes, PrototypeDictionary};
use scis::harness::{
    checks_for, emit, pca_project, Experiment, ExperimentSpec, Format, ModelRef, SweepReport,
};
use scis::intervention::ScisFlags;
use scis::planner::{pretrain_baseline, train_causal_with, PlannerModel, TrainConfig};
use scis::world::{generate_split, Dataset, ScenarioConfig, Split};
use scis::{Error, Result};

#[derive(Parser)]
#[command(name = "scis", version, about = "Toy causal-intervention planner experiments")]
struct Cli {
    /// Seed for generation, training and sweeps.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Report format.
    #[arg(long, global = true, value_enum, default_value_t = OutFormat::Json)]
    format: OutFormat,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutFormat {
    Json,
    Csv,
}

impl From<OutFormat> for Format {
    fn from(f: OutFormat) -> Format {
        match f {
            OutFormat::Json => Format::Json,
            OutFormat::Csv => Format::Csv,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Exact queries on a discrete SCM.
    Scm(ScmArgs),
    /// Sample a toy driving dataset as JSON lines.
    Generate {
        /// Scenario config JSON; defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        n: usize,
        #[arg(long, value_enum, default_value_t = SplitArg::Train)]
        split: SplitArg,
    },
    /// Cluster a baseline's embeddings into a confounder dictionary.
    BuildDict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "10,3,6")]
        sizes: DictSizes,
        #[arg(long, default_value = "kmeans_pp")]
        algo: ClusterAlgo,
    },
    /// Train the plain planner.
    Pretrain {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Train a planner with SCIS modules against a frozen dictionary.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        dict: PathBuf,
        #[arg(long)]
        pdm: bool,
        #[arg(long)]
        idm: bool,
        /// Start the backbone from a baseline checkpoint instead of from scratch.
        #[arg(long)]
        warm_start: Option<PathBuf>,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Evaluate one model.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        dict: Option<PathBuf>,
        #[arg(long, default_value = "model")]
        name: String,
    },
    /// Robustness sweeps over a baseline and a causal model.
    Sweep {
        #[arg(value_enum)]
        kind: SweepKind,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        causal: PathBuf,
        #[arg(long)]
        dict: PathBuf,
        /// Grid cells, comma separated; the default grid otherwise.
        #[arg(long, value_delimiter = ',')]
        grid: Vec<String>,
        /// Exit with status 2 when the directional check fails.
        #[arg(long)]
        check: bool,
    },
    /// Train and evaluate the {PDM, IDM} grid.
    Ablate {
        #[arg(long)]
        train_data: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        dict: PathBuf,
        #[arg(long)]
        check: bool,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Causal models for several dictionary sizes.
    DictSweep {
        #[arg(long)]
        train_data: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long, default_value = "kmeans_pp")]
        algo: ClusterAlgo,
        #[arg(long, value_delimiter = ';')]
        grid: Vec<String>,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Causal models for each clustering algorithm.
    ClusterCompare {
        #[arg(long)]
        train_data: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long, default_value = "10,3,6")]
        sizes: DictSizes,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Two-component PCA of final ego-query embeddings.
    ProjectPca {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        dict: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepKind {
    EgoNoise,
    ContextNoise,
    Split,
}

#[derive(Args, Clone)]
struct TrainArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Args)]
struct ScmArgs {
    /// SCM JSON file; the built-in driving graph or the three-node fixture otherwise.
    #[arg(long)]
    file: Option<PathBuf>,
    #[command(subcommand)]
    query: ScmQuery,
}

#[derive(Subcommand)]
enum ScmQuery {
    /// Backdoor paths from S to Y.
    Backdoor {
        #[arg(long)]
        s: String,
        #[arg(long)]
        y: String,
    },
    /// Whether X and Y are d-separated given Z.
    Dsep {
        #[arg(long, value_delimiter = ',')]
        x: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        y: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        z: Vec<String>,
    },
    /// P(Y | given).
    Observational {
        #[arg(long)]
        y: String,
        /// `node=state` pairs.
        #[arg(long, value_delimiter = ',')]
        given: Vec<String>,
    },
    /// P(Y | do(assign)).
    Interventional {
        #[arg(long)]
        y: String,
        #[arg(long = "do", value_delimiter = ',')]
        assign: Vec<String>,
    },
    /// Backdoor adjustment over Z.
    Adjust {
        #[arg(long)]
        y: String,
        #[arg(long)]
        s: String,
        #[arg(long, value_delimiter = ',')]
        z: Vec<String>,
    },
}

/// Exit status for a failed directional check.
const CHECK_FAILED: u8 = 2;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(CHECK_FAILED),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("SCIS_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::Config(format!("SCIS_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))
}

fn out_path(cli_out: &Option<PathBuf>) -> Result<&Path> {
    cli_out
        .as_deref()
        .ok_or_else(|| Error::Config("--out is required".into()))
}

fn train_config(seed: u64, a: &TrainArgs, flags: ScisFlags) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        epochs: a.epochs.unwrap_or(d.epochs),
        batch_size: a.batch_size.unwrap_or(d.batch_size),
        lr: a.lr.unwrap_or(d.lr),
        seed,
        flags,
        ..d
    };
    cfg.validate()?;
    Ok(cfg)
}

fn load_dict(path: &Path) -> Result<PrototypeDictionary> {
    PrototypeDictionary::from_json(&std::fs::read_to_string(path)?)
}

fn write_report(report: &SweepReport, format: Format, out: &Path) -> Result<()> {
    for p in emit(report, format, out)? {
        eprintln!("wrote {}", p.display());
    }
    for n in &report.notes {
        eprintln!("note: {n}");
    }
    Ok(())
}

/// Prints one line per check; false when any failed.
fn report_checks(report: &SweepReport) -> Result<bool> {
    let mut ok = true;
    for c in checks_for(report)? {
        eprintln!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        ok &= c.passed;
    }
    Ok(ok)
}

fn spec(cli: &Cli, experiment: Experiment, grid: Vec<String>) -> Result<ExperimentSpec> {
    Ok(ExperimentSpec {
        experiment,
        grid: if grid.is_empty() { ExperimentSpec::default_grid(experiment) } else { grid },
        data: PathBuf::new(),
        train_data: None,
        models: Vec::new(),
        dict: None,
        out: out_path(&cli.out)?.to_path_buf(),
        format: cli.format.into(),
        seed: cli.seed.unwrap_or(0),
        train: TrainConfig {
            seed: cli.seed.unwrap_or(0),
            ..TrainConfig::default()
        },
        sizes: DictSizes::default(),
        algo: ClusterAlgo::KmeansPp,
    })
}

fn model_ref(name: &str, path: &Path) -> ModelRef {
    ModelRef {
        name: name.into(),
        path: path.to_path_buf(),
    }
}

fn run_spec(s: &ExperimentSpec, check: bool) -> Result<bool> {
    let start = std::time::Instant::now();
    let report = s.run()?;
    if let (Experiment::Eval, Some(row)) = (s.experiment, report.rows.first()) {
        let per_scene = start.elapsed().as_secs_f64() / row.report.scenes as f64;
        eprintln!("wall clock {:.1} us per scene, load included", per_scene * 1e6);
    }
    write_report(&report, s.format, &s.out)?;
    if check {
        report_checks(&report)
    } else {
        Ok(true)
    }
}

fn run(cli: Cli) -> Result<bool> {
    let seed = cli.seed.unwrap_or(0);
    match &cli.cmd {
        Cmd::Scm(a) => {
            let text = scm_query(a)?;
            match &cli.out {
                Some(p) => std::fs::write(p, text)?,
                None => print!("{text}"),
            }
        }
        Cmd::Generate { config, n, split } => {
            let mut cfg: ScenarioConfig = match config {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
                None => ScenarioConfig::default(),
            };
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Val => Split::Val,
            };
            let d = generate_split(&cfg, *n, split)?;
            let out = out_path(&cli.out)?;
            d.save(out)?;
            eprintln!("wrote {} scenes to {}", d.len(), out.display());
        }
        Cmd::BuildDict { model, data, sizes, algo } => {
            let m = PlannerModel::load(model, None)?;
            if m.is_causal() {
                return Err(Error::Misuse("build the dictionary from a baseline model".into()));
            }
            let d = Dataset::load(data)?;
            let dict = build_dictionary(&m.collect_embeddings(&d.scenes)?, *sizes, *algo, seed)?;
            let out = out_path(&cli.out)?;
            std::fs::write(out, dict.to_json()?)?;
            eprintln!("dictionary {} ({sizes}) -> {}", dict.hash, out.display());
        }
        Cmd::Pretrain { data, train } => {
            let d = Dataset::load(data)?;
            let m = pretrain_baseline(&d, &train_config(seed, train, ScisFlags::NONE)?)?;
            let out = out_path(&cli.out)?;
            m.save(out)?;
            eprintln!("final loss {:.6} -> {}", m.train_loss.last().expect("trained"), out.display());
        }
        Cmd::Train {
            data,
            dict,
            pdm,
            idm,
            warm_start,
            train,
        } => {
            let flags = ScisFlags {
                use_pdm: *pdm,
                use_idm: *idm,
            };
            let d = Dataset::load(data)?;
            let dict = load_dict(dict)?;
            let warm = warm_start.as_ref().map(|p| PlannerModel::load(p, None)).transpose()?;
            let m = train_causal_with(&d, &dict, &train_config(seed, train, flags)?, warm.as_ref())?;
            let out = out_path(&cli.out)?;
            m.save(out)?;
            eprintln!("final loss {:.6} -> {}", m.train_loss.last().expect("trained"), out.display());
        }
        Cmd::Eval { model, data, dict, name } => {
            let mut s = spec(&cli, Experiment::Eval, Vec::new())?;
            s.data = data.clone();
            s.dict = dict.clone();
            s.models = vec![model_ref(name, model)];
            return run_spec(&s, false);
        }
        Cmd::Sweep {
            kind,
            data,
            baseline,
            causal,
            dict,
            grid,
            check,
        } => {
            let e = match kind {
                SweepKind::EgoNoise => Experiment::EgoNoise,
                SweepKind::ContextNoise => Experiment::ContextNoise,
                SweepKind::Split => Experiment::ScenarioSplit,
            };
            let mut s = spec(&cli, e, grid.clone())?;
            s.data = data.clone();
            s.dict = Some(dict.clone());
            s.models = vec![model_ref("baseline", baseline), model_ref("causal", causal)];
            return run_spec(&s, *check);
        }
        Cmd::Ablate {
            train_data,
            data,
            dict,
            check,
            train,
        } => {
            let mut s = spec(&cli, Experiment::Ablation, Vec::new())?;
            s.train = train_config(seed, train, ScisFlags::NONE)?;
            s.train_data = Some(train_data.clone());
            s.data = data.clone();
            s.dict = Some(dict.clone());
            return run_spec(&s, *check);
        }
        Cmd::DictSweep {
            train_data,
            data,
            baseline,
            algo,
            grid,
            train,
        } => {
            let mut s = spec(&cli, Experiment::DictSweep, grid.clone())?;
            s.train = train_config(seed, train, ScisFlags::NONE)?;
            s.train_data = Some(train_data.clone());
            s.data = data.clone();
            s.models = vec![model_ref("baseline", baseline)];
            s.algo = *algo;
            return run_spec(&s, false);
        }
        Cmd::ClusterCompare {
            train_data,
            data,
            baseline,
            sizes,
            train,
        } => {
            let mut s = spec(&cli, Experiment::ClusterCompare, Vec::new())?;
            s.train = train_config(seed, train, ScisFlags::NONE)?;
            s.train_data = Some(train_data.clone());
            s.data = data.clone();
            s.models = vec![model_ref("baseline", baseline)];
            s.sizes = *sizes;
            return run_spec(&s, false);
        }
        Cmd::ProjectPca { model, data, dict } => {
            let dict = dict.as_deref().map(load_dict).transpose()?;
            let m = PlannerModel::load(model, dict.as_ref())?;
            let d = Dataset::load(data)?;
            let p = pca_project(&m.ego_embeddings(&d.scenes)?, 2)?;
            let mut w = csv::Writer::from_writer(Vec::new());
            let csv_err = |e: csv::Error| Error::Invalid(format!("csv: {e}"));
            w.write_record(["index", "context", "pc1", "pc2"]).map_err(csv_err)?;
            for (i, s) in d.scenes.iter().enumerate() {
                w.write_record([
                    s.index.to_string(),
                    s.context.name().to_string(),
                    p.coords.at(i, 0).to_string(),
                    p.coords.at(i, 1).to_string(),
                ])
                .map_err(csv_err)?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Invalid(format!("csv: {e}")))?;
            let out = out_path(&cli.out)?;
            std::fs::write(out, bytes)?;
            eprintln!(
                "explained variance {:.6} / {:.6} -> {}",
                p.variance[0],
                p.variance[1],
                out.display()
            );
        }
    }
    Ok(true)
}

fn strs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

fn parse_assignments(items: &[String]) -> Result<Vec<(String, usize)>> {
    items
        .iter()
        .map(|s| {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Error::Invalid(format!("expected node=state, got `{s}`")))?;
            let v = v
                .parse()
                .map_err(|_| Error::Invalid(format!("bad state in `{s}`")))?;
            Ok((k.to_string(), v))
        })
        .collect()
}

fn scm_query(a: &ScmArgs) -> Result<String> {
    let file_scm = a
        .file
        .as_ref()
        .map(|p| -> Result<DiscreteScm> {
            let f: ScmFile = serde_json::from_str(&std::fs::read_to_string(p)?)?;
            DiscreteScm::from_file(&f)
        })
        .transpose()?;
    let prob_scm = || file_scm.clone().unwrap_or_else(confounded_triple);
    let value = match &a.query {
        ScmQuery::Backdoor { s, y } => {
            let dag = file_scm.as_ref().map_or_else(build_vad_scm, |m| m.dag().clone());
            let paths: Vec<String> = dag.backdoor_paths(s, y)?.iter().map(|p| p.to_string()).collect();
            serde_json::json!({ "s": s, "y": y, "paths": paths })
        }
        ScmQuery::Dsep { x, y, z } => {
            let dag = file_scm.as_ref().map_or_else(build_vad_scm, |m| m.dag().clone());
            let sep = dag.d_separated(&strs(x), &strs(y), &strs(z))?;
            serde_json::json!({ "x": x, "y": y, "z": z, "d_separated": sep })
        }
        ScmQuery::Observational { y, given } => {
            let g = parse_assignments(given)?;
            let g: Vec<(&str, usize)> = g.iter().map(|(k, v)| (k.as_str(), *v)).collect();
            serde_json::to_value(prob_scm().observational(y, &g)?)?
        }
        ScmQuery::Interventional { y, assign } => {
            let g = parse_assignments(assign)?;
            let g: Vec<(&str, usize)> = g.iter().map(|(k, v)| (k.as_str(), *v)).collect();
            serde_json::to_value(prob_scm().interventional(y, &g)?)?
        }
        ScmQuery::Adjust { y, s, z } => {
            let s = parse_assignments(std::slice::from_ref(s))?.remove(0);
            serde_json::to_value(prob_scm().backdoor_adjust(y, (&s.0, s.1), &strs(z))?)?
        }
    };
    let mut text = serde_json::to_string_pretty(&value)?;
    text.push('\n');
    Ok(text)
}
