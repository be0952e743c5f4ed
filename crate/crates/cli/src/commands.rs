use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sslt_core::checkpoint::Checkpoint;
use sslt_core::datagen::{DatasetManifest, LabeledSet, SplitSpec, UnlabeledSet};
use sslt_core::evalreport::{self, parse_report, render_report, Provenance, ReportFormat, ReportRow};
use sslt_core::fsutil;
use sslt_core::netcore::{Head, ModelState};
use sslt_core::trainer::{self, InitRecord, LoopRecord, LoopTrace, Monitor, RunOutcome, TrainObserver, Variant};

use crate::config::RunConfig;
use crate::CliError;

pub const TRACE_FORMAT: &str = "sslt-trace";

pub enum RunKind {
    Alternate,
    Baseline,
    Ablation(Variant),
}

impl RunKind {
    fn command(&self) -> &'static str {
        match self {
            RunKind::Alternate => "train",
            RunKind::Baseline => "baseline",
            RunKind::Ablation(_) => "ablate",
        }
    }

    /// Name used in report rows.
    fn run_name(&self) -> &'static str {
        match self {
            RunKind::Alternate => "alternate",
            RunKind::Baseline => "pseudo-label",
            RunKind::Ablation(v) => v.name(),
        }
    }
}

pub struct TrainOptions {
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub data: Option<PathBuf>,
    pub format: ReportFormat,
}

fn load_config(path: &Option<PathBuf>, seed: Option<u64>) -> Result<RunConfig, CliError> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    Ok(cfg)
}

fn out_dir(out: Option<PathBuf>, command: &str, hash: &str) -> PathBuf {
    out.unwrap_or_else(|| {
        let root = std::env::var_os("SSLT_OUT_ROOT").map_or_else(|| PathBuf::from("runs"), PathBuf::from);
        root.join(format!("{command}-{hash}"))
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> sslt_core::Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fsutil::write_atomic(path, s.as_bytes())
}

fn report_name(format: ReportFormat) -> &'static str {
    match format {
        ReportFormat::Rows => "report.tsv",
        ReportFormat::Structured => "report.json",
    }
}

/// Everything a training command consumes.
struct Task {
    labeled: LabeledSet,
    unlabeled: UnlabeledSet,
    test: LabeledSet,
    splits: SplitSpec,
}

fn load_data_dir(dir: &Path) -> Result<Task, CliError> {
    let manifest = DatasetManifest::load(&dir.join("manifest.json"))?;
    for (name, expected) in &manifest.files {
        let path = dir.join(name);
        let bytes = std::fs::read(&path).map_err(|e| sslt_core::Error::Io { path: path.clone(), source: e })?;
        let actual = fsutil::content_hash(&bytes);
        if &actual != expected {
            return Err(sslt_core::Error::Data(format!(
                "{} has hash {actual}, manifest records {expected}",
                path.display()
            ))
            .into());
        }
    }
    Ok(Task {
        labeled: LabeledSet::load(&dir.join("labeled.json"))?,
        unlabeled: UnlabeledSet::load(&dir.join("unlabeled.json"))?,
        test: LabeledSet::load(&dir.join("test.json"))?,
        splits: manifest.splits,
    })
}

fn build_task(cfg: &RunConfig, data: &Option<PathBuf>) -> Result<Task, CliError> {
    if let Some(dir) = data {
        return load_data_dir(dir);
    }
    let t = cfg.build_task()?;
    Ok(Task {
        labeled: t.labeled,
        unlabeled: t.unlabeled,
        test: t.test,
        splits: t.splits,
    })
}

pub fn gen_data(config: &Option<PathBuf>, out: Option<PathBuf>, seed: Option<u64>) -> Result<(), CliError> {
    let cfg = load_config(config, seed)?;
    let hash = cfg.hash();
    let dir = out_dir(out, "gen-data", &hash);
    let task = cfg.build_task()?;
    let c = cfg.classes;
    fsutil::write_atomic(&dir.join("config.toml"), cfg.to_toml().as_bytes())?;
    task.labeled.save_tagged(&dir.join("labeled.json"), Some(&hash))?;
    task.unlabeled.save_tagged(&dir.join("unlabeled.json"), c, Some(&hash))?;
    task.test.save_tagged(&dir.join("test.json"), Some(&hash))?;
    let mut files = BTreeMap::new();
    for name in ["labeled.json", "unlabeled.json", "test.json"] {
        let path = dir.join(name);
        let bytes = std::fs::read(&path).map_err(|e| sslt_core::Error::Io { path, source: e })?;
        files.insert(name.to_string(), fsutil::content_hash(&bytes));
    }
    let manifest = DatasetManifest {
        format_version: DatasetManifest::FORMAT_VERSION,
        config_hash: hash,
        seed: cfg.train.seed,
        num_classes: c,
        feature_dim: task.labeled.feature_dim().unwrap_or(0),
        profile: cfg.class_profile()?,
        labeled_counts: task.labeled.class_counts().to_vec(),
        unlabeled_counts: task.unlabeled.class_counts(c),
        test_counts: task.test.class_counts().to_vec(),
        splits: task.splits,
        files,
    };
    manifest.save(&dir.join("manifest.json"))?;
    println!("{}", dir.display());
    Ok(())
}

#[derive(Serialize)]
struct TraceFile<'a> {
    format: &'static str,
    config_hash: &'a str,
    command: &'a str,
    variant: &'a str,
    status: &'a str,
    trace: &'a LoopTrace,
}

/// Writes checkpoints and the partial trace as training progresses.
struct RunWriter<'a> {
    dir: &'a Path,
    hash: &'a str,
    command: &'a str,
    trace: LoopTrace,
}

impl RunWriter<'_> {
    fn write_trace(&self, status: &str) -> sslt_core::Result<()> {
        write_json(
            &self.dir.join("trace.json"),
            &TraceFile {
                format: TRACE_FORMAT,
                config_hash: self.hash,
                command: self.command,
                variant: &self.trace.variant,
                status,
                trace: &self.trace,
            },
        )
    }
}

impl TrainObserver for RunWriter<'_> {
    fn init_finished(&mut self, model: &ModelState, record: &InitRecord) -> sslt_core::Result<()> {
        Checkpoint::new(model.clone(), self.hash, None).save(&self.dir.join("checkpoints").join("init.json"))?;
        self.trace.init = record.clone();
        self.write_trace("running")
    }

    fn loop_finished(&mut self, model: &ModelState, record: &LoopRecord) -> sslt_core::Result<()> {
        let name = format!("loop-{}.json", record.loop_index);
        Checkpoint::new(model.clone(), self.hash, Some(record.loop_index)).save(&self.dir.join("checkpoints").join(name))?;
        self.trace.loops.push(record.clone());
        self.write_trace("running")
    }
}

fn report_rows(trace: &LoopTrace, run_name: &str) -> Vec<ReportRow> {
    let init = trace.init.test.iter().map(|m| ReportRow::from_metrics("init", m));
    let loops = trace
        .loops
        .iter()
        .filter_map(|l| l.test.as_ref())
        .map(|m| ReportRow::from_metrics(run_name, m));
    init.chain(loops).collect()
}

pub fn train(kind: RunKind, opts: TrainOptions) -> Result<(), CliError> {
    let cfg = load_config(&opts.config, opts.seed)?;
    let hash = cfg.hash();
    let command = kind.command();
    let default_name = match &kind {
        RunKind::Ablation(v) => format!("{command}-{}", v.name()),
        _ => command.to_string(),
    };
    let dir = out_dir(opts.out, &default_name, &hash);
    let result = train_in(&kind, &cfg, &hash, &dir, &opts.data, opts.format);
    if let Err(e) = &result {
        let doc = serde_json::json!({
            "status": "failed",
            "command": command,
            "config_hash": hash,
            "exit_code": e.exit_code(),
            "error": e.to_string(),
        });
        if let Err(w) = write_json(&dir.join("error.json"), &doc) {
            log::warn!("could not record the failure: {w}");
        }
    }
    result
}

fn train_in(
    kind: &RunKind,
    cfg: &RunConfig,
    hash: &str,
    dir: &Path,
    data: &Option<PathBuf>,
    format: ReportFormat,
) -> Result<(), CliError> {
    fsutil::write_atomic(&dir.join("config.toml"), cfg.to_toml().as_bytes())?;
    let task = build_task(cfg, data)?;
    let monitor = Monitor {
        test: Some(&task.test),
        unlabeled_truth: Some(&task.unlabeled),
        splits: &task.splits,
        config_hash: hash,
    };
    let variant = match kind {
        RunKind::Ablation(v) => *v,
        _ => Variant::RandomBalanced,
    };
    let mut writer = RunWriter {
        dir,
        hash,
        command: kind.command(),
        trace: LoopTrace {
            variant: match kind {
                RunKind::Baseline => "pseudo-label".into(),
                _ => variant.name().into(),
            },
            ..LoopTrace::default()
        },
    };
    let pool = task.unlabeled.pool();
    let RunOutcome { model, trace } = match kind {
        RunKind::Baseline => trainer::baseline_pseudo_label(&task.labeled, pool, &cfg.train, &monitor, &mut writer)?,
        _ => trainer::ablation_variant(&task.labeled, pool, &cfg.train, variant, &monitor, &mut writer)?,
    };
    writer.trace = trace;
    writer.write_trace("complete")?;
    let last = writer.trace.loops.last().map(|l| l.loop_index);
    Checkpoint::new(model, hash, last).save(&dir.join("checkpoint.json"))?;
    let rows = report_rows(&writer.trace, kind.run_name());
    let cfg_json = serde_json::to_value(cfg).map_err(sslt_core::Error::from)?;
    evalreport::emit_report(&rows, &dir.join(report_name(format)), format, Some(&cfg_json))?;
    if let Some(m) = writer.trace.final_test() {
        println!(
            "{}: overall {:.4} many {} medium {} few {}",
            dir.display(),
            m.overall,
            fmt_opt(m.splits.many),
            fmt_opt(m.splits.medium),
            fmt_opt(m.splits.few)
        );
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

fn locate_config(checkpoint: &Path) -> Option<PathBuf> {
    let parent = checkpoint.parent()?;
    [Some(parent), parent.parent()]
        .into_iter()
        .flatten()
        .map(|d| d.join("config.toml"))
        .find(|p| p.is_file())
}

fn print_or_write(text: &str, out: Option<PathBuf>) -> Result<(), CliError> {
    match out {
        Some(p) => fsutil::write_atomic(&p, text.as_bytes())?,
        None => print!("{text}"),
    }
    Ok(())
}

pub fn eval(
    checkpoint: &Path,
    config: Option<PathBuf>,
    data: Option<PathBuf>,
    out: Option<PathBuf>,
    format: ReportFormat,
) -> Result<(), CliError> {
    let ck = Checkpoint::load(checkpoint)?;
    let config = config.or_else(|| locate_config(checkpoint));
    let cfg = load_config(&config, None)?;
    if config.is_some() && cfg.hash() != ck.config_hash {
        log::warn!(
            "checkpoint was trained under config {} but evaluation uses {}",
            ck.config_hash,
            cfg.hash()
        );
    }
    let task = build_task(&cfg, &data)?;
    let m = evalreport::evaluate(&ck.model, Head::Balanced, &task.test, &task.splits)?.with_provenance(Provenance {
        config_hash: ck.config_hash.clone(),
        seed: cfg.train.seed,
        loop_index: ck.loop_index,
    });
    let row = ReportRow::from_metrics("eval", &m);
    print_or_write(&render_report(&[row], format, None)?, out)
}

fn read_run_report(dir: &Path) -> Result<Vec<ReportRow>, CliError> {
    for format in [ReportFormat::Rows, ReportFormat::Structured] {
        let path = dir.join(report_name(format));
        if path.is_file() {
            return Ok(parse_report(&fsutil::read_to_string(&path)?, format)?);
        }
    }
    Err(sslt_core::Error::Data(format!("{} holds no report.tsv or report.json", dir.display())).into())
}

pub fn report(run_dirs: &[PathBuf], out: Option<PathBuf>, format: ReportFormat) -> Result<(), CliError> {
    let mut rows = Vec::new();
    for d in run_dirs {
        rows.extend(read_run_report(d)?);
    }
    print_or_write(&render_report(&rows, format, None)?, out)
}
