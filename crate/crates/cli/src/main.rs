mod config;

use std::fmt::Write as _;
use std::io::IsTerminal;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use glucal_core::acquisition::{generate_dataset, ForwardModel};
use glucal_core::clarke::{ceg_report, ceg_svg, CegReport, CegSummary};
use glucal_core::data::{cohort_summary, load_dataset, save_dataset};
use glucal_core::dnn::parse_hidden;
use glucal_core::metrics::MetricsReport;
use glucal_core::model_io::{load_model, save_model, write_json};
use glucal_core::pipeline::{
    compare_models, crossval, evaluate, predict_all, run_channel_study, stability_report, CrossValReport, ModelKind,
    ModelSpec, StabilityReport, StudyResult, STABILITY_THRESHOLD,
};
use glucal_core::table::{opt, Table};
use glucal_core::{ChannelSet, Dataset, Error, ErrorKind};
use serde::Serialize;

use config::Config;

#[derive(Parser)]
#[command(name = "glucal", version, about = "Calibrate and evaluate a three-channel NIR glucometer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset
    Simulate(SimulateArgs),
    /// Fit a calibration model
    Calibrate(CalibrateArgs),
    /// Score a saved model on a dataset
    Evaluate(EvaluateArgs),
    /// k-fold cross-validation of one model spec
    Crossval(CrossvalArgs),
    /// Channel-combination study and model comparison
    Study(StudyArgs),
    /// Deviation of a prediction series from its reference
    Stability(StabilityArgs),
    /// Clarke error grid from (ref, pred) pairs
    Ceg(CegArgs),
    /// Run the telemetry service
    Serve(ServeArgs),
}

#[derive(Args)]
struct Common {
    /// Seed for every random choice in this run
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// INI file with [acquisition], [lm] and [svr] sections
    #[arg(long)]
    config: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<Config, Error> {
        let mut cfg = match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        cfg.acquisition.seed = self.seed;
        cfg.lm.seed = self.seed;
        Ok(cfg)
    }
}

#[derive(Args)]
struct ModelChoice {
    /// mpr3, mpr4, logistic, svr or dnn
    #[arg(long)]
    model: String,
    /// rm1, rm2, rm3 or rm4
    #[arg(long, default_value = "rm4")]
    channels: String,
    /// Polynomial degree; must agree with an mpr model
    #[arg(long)]
    degree: Option<u8>,
    /// Hidden layer widths for dnn, e.g. "10" or "10,10"
    #[arg(long)]
    layers: Option<String>,
}

impl ModelChoice {
    fn spec(&self, cfg: &Config) -> Result<ModelSpec, Error> {
        let kind: ModelKind = self.model.parse().map_err(Error::InvalidArgument)?;
        let channels = parse_channels(&self.channels)?;
        if let Some(d) = self.degree {
            match kind.degree() {
                Some(k) if k == d => {}
                Some(_) => {
                    return Err(Error::InvalidArgument(format!(
                        "--degree {d} conflicts with --model {}",
                        self.model
                    )))
                }
                None => {
                    return Err(Error::InvalidArgument(format!(
                        "--degree only applies to mpr models, not --model {}",
                        self.model
                    )))
                }
            }
        }
        let mut spec = ModelSpec::new(kind, channels);
        spec.lm = cfg.lm.clone();
        spec.svr = cfg.svr;
        if let Some(layers) = &self.layers {
            if kind != ModelKind::Dnn {
                return Err(Error::InvalidArgument(format!(
                    "--layers only applies to --model dnn, not --model {}",
                    self.model
                )));
            }
            spec.hidden = parse_hidden(layers)?;
        }
        Ok(spec)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    choice: ModelChoice,
    #[arg(long)]
    train: PathBuf,
    /// Model JSON to write
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Model JSON written by calibrate
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    ceg_svg: Option<PathBuf>,
}

#[derive(Args)]
struct CrossvalArgs {
    #[command(flatten)]
    choice: ModelChoice,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long)]
    report: Option<PathBuf>,
    /// CSV of pooled out-of-fold predictions
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    ceg_svg: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct StudyArgs {
    #[arg(long)]
    train: PathBuf,
    /// Validation dataset
    #[arg(long)]
    data: PathBuf,
    /// Restrict the channel study to one degree (default: 3 and 4)
    #[arg(long)]
    degree: Option<u8>,
    /// Channel set used for the model comparison
    #[arg(long, default_value = "rm4")]
    channels: String,
    /// Hidden layer widths for the dnn in the comparison
    #[arg(long)]
    layers: Option<String>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct StabilityArgs {
    /// Either a timestamp,ref,pred CSV, or a dataset when --model is given
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct CegArgs {
    /// Either a CSV with ref and pred columns, or a dataset when --model is given
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    ceg_svg: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: String,
    /// Append-only NDJSON store
    #[arg(long)]
    store: PathBuf,
}

struct Failure {
    kind: ErrorKind,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

impl From<glucal_service::ServiceError> for Failure {
    fn from(e: glucal_service::ServiceError) -> Self {
        Failure {
            kind: ErrorKind::Io,
            message: e.to_string(),
        }
    }
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Usage => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numeric => 4,
        ErrorKind::Io => 5,
    }
}

fn kind_name(kind: ErrorKind) -> &'static str {
    match kind {
        ErrorKind::Usage => "usage",
        ErrorKind::Data => "data",
        ErrorKind::Numeric => "numeric",
        ErrorKind::Io => "io",
    }
}

fn fail(kind: ErrorKind, message: &str) -> ExitCode {
    let one_line = message.lines().map(str::trim).filter(|l| !l.is_empty()).collect::<Vec<_>>().join(" ");
    eprintln!("error[{}]: {one_line}", kind_name(kind));
    ExitCode::from(exit_code(kind))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            return fail(ErrorKind::Usage, first.trim_start_matches("error: "));
        }
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_target(false)
        .with_ansi(std::io::stderr().is_terminal())
        .without_time()
        .init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => fail(f.kind, &f.message),
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Simulate(a) => simulate(a)?,
        Command::Calibrate(a) => calibrate(a)?,
        Command::Evaluate(a) => evaluate_cmd(a)?,
        Command::Crossval(a) => crossval_cmd(a)?,
        Command::Study(a) => study(a)?,
        Command::Stability(a) => stability(a)?,
        Command::Ceg(a) => ceg(a)?,
        Command::Serve(a) => serve(a)?,
    }
    Ok(())
}

fn parse_channels(s: &str) -> Result<ChannelSet, Error> {
    s.parse().map_err(Error::InvalidArgument)
}

fn load(path: &Path) -> Result<Dataset, Error> {
    let loaded = load_dataset(path, true)?;
    tracing::info!("loaded {} records from {}", loaded.dataset.len(), path.display());
    Ok(loaded.dataset)
}

fn dataset_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn simulate(a: SimulateArgs) -> Result<(), Error> {
    let cfg = a.common.load()?;
    let ds = generate_dataset(a.n, &cfg.mix.cohort_mix(), &cfg.acquisition, &ForwardModel::SYNTHETIC)?;
    save_dataset(&ds, &a.out)?;
    tracing::info!("wrote {} records to {}", ds.len(), a.out.display());
    print!("{}", summary_table(&ds));
    Ok(())
}

fn summary_table(ds: &Dataset) -> Table {
    use glucal_core::{Cohort, Sex};
    let s = cohort_summary(ds);
    let mut t = Table::new(["cohort", "male", "female", "total"]);
    for c in Cohort::ALL {
        t.row([
            c.to_string(),
            s.count(*c, Sex::Male).to_string(),
            s.count(*c, Sex::Female).to_string(),
            s.by_cohort(*c).to_string(),
        ]);
    }
    t.row([
        "all".to_string(),
        s.by_sex(Sex::Male).to_string(),
        s.by_sex(Sex::Female).to_string(),
        s.total().to_string(),
    ]);
    t
}

fn calibrate(a: CalibrateArgs) -> Result<(), Error> {
    let cfg = a.common.load()?;
    let spec = a.choice.spec(&cfg)?;
    let train = load(&a.train)?;
    tracing::info!("fitting {} on {}", spec.kind.as_str(), spec.channels.as_str());
    let model = spec.fit(&train)?;
    save_model(&model, &a.out)?;
    tracing::info!("wrote model {} to {}", model.model_id(), a.out.display());
    let eval = evaluate(&model, &train)?;
    print!("{}", metrics_table("training", &eval.metrics, &eval.ceg.summary()));
    Ok(())
}

fn metrics_table(label: &str, m: &MetricsReport, ceg: &CegSummary) -> Table {
    let mut t = Table::new(["set", "n", "R2", "mARD%", "AvgE%", "MAD", "RMSE", "CEG A+B%"]);
    t.row([
        label.to_string(),
        m.n.to_string(),
        opt(m.r_squared, 3),
        format!("{:.2}", m.mard),
        format!("{:.2}", m.avge),
        format!("{:.2}", m.mad),
        format!("{:.2}", m.rmse),
        format!("{:.1}", ceg.percent_ab),
    ]);
    t
}

#[derive(Serialize)]
struct EvaluationReport<'a> {
    model: String,
    data: String,
    metrics: &'a MetricsReport,
    ceg: CegSummary,
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<(), Error> {
    let model = load_model(&a.model)?;
    let ds = load(&a.data)?;
    let eval = evaluate(&model, &ds)?;
    let summary = eval.ceg.summary();
    if let Some(path) = &a.report {
        let report = EvaluationReport {
            model: model.model_id(),
            data: dataset_id(&a.data),
            metrics: &eval.metrics,
            ceg: summary.clone(),
        };
        write_json(&report, path)?;
        tracing::info!("wrote report to {}", path.display());
    }
    if let Some(path) = &a.ceg_svg {
        ceg_svg(&eval.ceg, path)?;
        tracing::info!("wrote error grid to {}", path.display());
    }
    print!("{}", metrics_table(&dataset_id(&a.data), &eval.metrics, &summary));
    Ok(())
}

fn pooled_csv(report: &CrossValReport) -> String {
    let mut s = String::from("sample_id,ref,pred\n");
    for p in &report.predictions {
        let _ = writeln!(s, "{},{},{}", p.sample_id, p.reference, p.predicted);
    }
    s
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Error> {
    std::fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn crossval_cmd(a: CrossvalArgs) -> Result<(), Error> {
    let cfg = a.common.load()?;
    let spec = a.choice.spec(&cfg)?;
    let ds = load(&a.data)?;
    tracing::info!("{}-fold cross-validation of {}", a.folds, spec.kind.as_str());
    let report = crossval(&ds, &spec, a.folds, a.common.seed)?;
    for f in report.folds.iter().filter(|f| f.error.is_some()) {
        tracing::warn!("fold {} failed: {}", f.fold, f.error.as_deref().unwrap_or(""));
    }
    if let Some(path) = &a.report {
        write_json(&report, path)?;
    }
    if let Some(path) = &a.out {
        write_file(path, pooled_csv(&report).as_bytes())?;
    }
    if let Some(path) = &a.ceg_svg {
        let (r, p): (Vec<f64>, Vec<f64>) = report.predictions.iter().map(|p| (p.reference, p.predicted)).unzip();
        ceg_svg(&ceg_report(&r, &p)?, path)?;
    }
    print!("{}", report.table());
    if report.pooled.is_none() {
        return Err(Error::Numeric("every fold failed".into()));
    }
    Ok(())
}

#[derive(Serialize)]
struct StudyReport {
    channel_study: StudyResult,
    comparison: StudyResult,
}

fn study(a: StudyArgs) -> Result<(), Error> {
    let cfg = a.common.load()?;
    let degrees = match a.degree {
        None => vec![3, 4],
        Some(d @ (3 | 4)) => vec![d],
        Some(d) => return Err(Error::InvalidArgument(format!("--degree must be 3 or 4, got {d}"))),
    };
    let train = load(&a.train)?;
    let val = load(&a.data)?;
    let ids = (dataset_id(&a.train), dataset_id(&a.data));
    let ids = (ids.0.as_str(), ids.1.as_str());

    tracing::info!("channel study, degrees {degrees:?}");
    let channel_study = run_channel_study(&train, &val, &degrees, ids)?;

    let choice = ModelChoice {
        model: "mpr3".into(),
        channels: a.channels.clone(),
        degree: None,
        layers: None,
    };
    let mut base = choice.spec(&cfg)?;
    if let Some(layers) = &a.layers {
        base.hidden = parse_hidden(layers)?;
    }
    tracing::info!("model comparison on {}", base.channels.as_str());
    let comparison = compare_models(&train, &val, &base, ids)?;

    println!("channel study");
    print!("{}", channel_study.table());
    println!();
    println!("model comparison");
    print!("{}", comparison.table());
    if let Some(path) = &a.report {
        write_json(
            &StudyReport {
                channel_study,
                comparison,
            },
            path,
        )?;
    }
    Ok(())
}

// rows of the named columns, in header order of `names`
fn read_columns(path: &Path, names: &[&[&str]]) -> Result<Vec<Vec<String>>, Error> {
    let io = |e: std::io::Error| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.to_path_buf())
        } else {
            Error::Io {
                path: path.to_path_buf(),
                source: e,
            }
        }
    };
    let file = std::fs::File::open(path).map_err(io)?;
    let mut rdr = csv::Reader::from_reader(file);
    let header = rdr
        .headers()
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?
        .clone();
    let mut idx = Vec::new();
    for aliases in names {
        let i = header
            .iter()
            .position(|h| aliases.contains(&h.trim()))
            .ok_or_else(|| Error::InvalidInput(format!("{}: missing column {}", path.display(), aliases[0])))?;
        idx.push(i);
    }
    let mut rows = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::MalformedRow {
            line: n as u64 + 2,
            reason: e.to_string(),
        })?;
        rows.push(idx.iter().map(|&i| rec.get(i).unwrap_or("").trim().to_string()).collect());
    }
    Ok(rows)
}

fn field<T: std::str::FromStr>(v: &str, line: usize, what: &str) -> Result<T, Error> {
    v.parse().map_err(|_| Error::MalformedRow {
        line: line as u64 + 2,
        reason: format!("{what} {v:?} is not a number"),
    })
}

const REF: &[&str] = &["ref", "reference", "ref_glucose"];
const PRED: &[&str] = &["pred", "predicted"];

fn stability(a: StabilityArgs) -> Result<(), Error> {
    let series: Vec<(i64, f64, f64)> = match &a.model {
        Some(model_path) => {
            let model = load_model(model_path)?;
            let mut ds = load(&a.data)?;
            ds.records.sort_by_key(|r| r.timestamp);
            let pred = predict_all(&model, &ds)?;
            ds.records.iter().zip(pred).map(|(r, p)| (r.timestamp, r.ref_glucose, p)).collect()
        }
        None => read_columns(&a.data, &[&["timestamp"], REF, PRED])?
            .iter()
            .enumerate()
            .map(|(i, row)| {
                Ok((
                    field(&row[0], i, "timestamp")?,
                    field(&row[1], i, "ref")?,
                    field(&row[2], i, "pred")?,
                ))
            })
            .collect::<Result<_, Error>>()?,
    };
    let report = stability_report(&series, STABILITY_THRESHOLD)?;
    print!("{}", stability_table(&report));
    if let Some(path) = &a.report {
        write_json(&report, path)?;
    }
    Ok(())
}

fn stability_table(r: &StabilityReport) -> String {
    let mut t = Table::new(["timestamp", "ref", "pred", "|dev|", "delta pred"]);
    for p in &r.points {
        t.row([
            p.timestamp.to_string(),
            format!("{:.1}", p.reference),
            format!("{:.1}", p.predicted),
            format!("{:.2}", p.deviation),
            opt(p.delta_pred, 2),
        ]);
    }
    format!(
        "{t}mean |dev| {:.2} mg/dl, max {:.2} mg/dl, reference drift {:+.1} mg/dl: {} (threshold {} mg/dl)\n",
        r.mean_abs_deviation,
        r.max_abs_deviation,
        r.reference_drift,
        if r.stable { "stable" } else { "unstable" },
        r.threshold
    )
}

fn ceg(a: CegArgs) -> Result<(), Error> {
    let (reference, predicted): (Vec<f64>, Vec<f64>) = match &a.model {
        Some(model_path) => {
            let model = load_model(model_path)?;
            let ds = load(&a.data)?;
            (ds.targets(), predict_all(&model, &ds)?)
        }
        None => {
            let rows = read_columns(&a.data, &[REF, PRED])?;
            let mut r = Vec::with_capacity(rows.len());
            let mut p = Vec::with_capacity(rows.len());
            for (i, row) in rows.iter().enumerate() {
                r.push(field(&row[0], i, "ref")?);
                p.push(field(&row[1], i, "pred")?);
            }
            (r, p)
        }
    };
    let report: CegReport = ceg_report(&reference, &predicted)?;
    let s = report.summary();
    let mut t = Table::new(["zone", "count", "percent"]);
    for (zone, count) in ["A", "B", "C", "D", "E"].iter().zip(s.counts) {
        let pct = if s.n == 0 { 0.0 } else { 100.0 * count as f64 / s.n as f64 };
        t.row([zone.to_string(), count.to_string(), format!("{pct:.1}")]);
    }
    t.row(["A+B".to_string(), (s.counts[0] + s.counts[1]).to_string(), format!("{:.1}", s.percent_ab)]);
    print!("{t}");
    if let Some(path) = &a.ceg_svg {
        ceg_svg(&report, path)?;
    }
    if let Some(path) = &a.report {
        write_json(&report, path)?;
    }
    Ok(())
}

fn serve(a: ServeArgs) -> Result<(), Failure> {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Failure {
            kind: ErrorKind::Io,
            message: format!("cannot start runtime: {e}"),
        })?;
    rt.block_on(glucal_service::serve(&a.addr, &a.store))?;
    Ok(())
}
