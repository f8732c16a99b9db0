//! The `canvolve` command-line front end.
//!
//! Exit codes: 0 success (including `--help`), 1 usage, 2 I/O or file
//! format, 3 shape or configuration contract, 4 non-finite numbers.

mod config;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use config::{Precision, RunConfig};

use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::model::{count_parameters, load_checkpoint, receptive_field_table, save_checkpoint, ModelConfig, Network};
use crate::postproc::postprocess_labels;
use crate::tensor::Real;
use crate::trainer::{
    predict, write_epochs_csv, write_history_csv, TrainConfig, Trainer,
};
use crate::volio::{
    load_dataset, read_nifti1, read_vol3d, write_labels, write_phantom_set, LabelMap, VolFile,
    Volume, MANIFEST_FILE,
};

/// Name of the echoed effective configuration in a training directory.
pub const CONFIG_ECHO: &str = "config.txt";

#[derive(Debug, Parser)]
#[command(name = "canvolve", version, about = "Compact 3D segmentation network: data, training, evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write synthetic phantom image/label pairs and a checksummed manifest.
    Synth(SynthArgs),
    /// Train a network on a phantom or manifest directory.
    Train(TrainArgs),
    /// Segment a volume (VOL3D or NIfTI-1) or every case of a dataset directory.
    Predict(PredictArgs),
    /// Score predictions against ground truth (DSC, MSD, HD per class).
    Evaluate(EvaluateArgs),
    /// Print the parameter ledger and receptive-field table of a configuration.
    Audit(AuditArgs),
    /// Largest-component extraction and hole filling on a label map.
    Postprocess(PostprocessArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    count: usize,
    /// Cubic extent in voxels (at least 16).
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Run configuration; defaults apply to every missing key.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory; overrides `[data] dir`.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Run configuration; defaults to `config.txt` beside the checkpoint.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Volume file or dataset directory.
    #[arg(long = "in")]
    input: PathBuf,
    /// Label file, or a directory when `--in` is a directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    postprocess: bool,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Predicted label file, or directory of `<case>_pred.vol3d`.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth label file, or dataset directory with a manifest.
    #[arg(long)]
    truth: PathBuf,
    /// Metrics CSV.
    #[arg(long)]
    out: PathBuf,
    /// Class count; defaults to the larger of the two label maps' counts.
    #[arg(long)]
    classes: Option<usize>,
}

#[derive(Debug, Args)]
struct AuditArgs {
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PostprocessArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    classes: Option<usize>,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    match crate::threads::configure_threads().and_then(|_| dispatch(cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Audit(a) => cmd_audit(a),
        Command::Postprocess(a) => cmd_postprocess(a),
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::from(e).with_path(path))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::from(e).with_path(path))
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let entries = write_phantom_set(&a.out, a.seed, a.count, [a.size; 3], a.classes)?;
    println!("wrote {} phantom pairs to {}", entries.len(), a.out.display());
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(dir) = a.data {
        cfg.data_dir = Some(dir);
    }
    let data_dir = cfg
        .data_dir
        .clone()
        .ok_or_else(|| Error::config("no dataset: pass --data or set [data] dir"))?;
    let dataset = load_dataset(&data_dir)?;
    if dataset.classes() != cfg.train.model.num_classes {
        log::warn!(
            "dataset labels declare {} classes but the model predicts {}; set [model] num_classes",
            dataset.classes(),
            cfg.train.model.num_classes
        );
    }
    create_dir(&a.out)?;
    write_text(&a.out.join(CONFIG_ECHO), &cfg.render())?;
    let folds = cfg.train.folds.max(1);
    for fold in 0..folds {
        let out = if folds > 1 { a.out.join(format!("fold_{fold}")) } else { a.out.clone() };
        create_dir(&out)?;
        if folds > 1 {
            write_text(&out.join(CONFIG_ECHO), &cfg.render())?;
        }
        let train = TrainConfig { fold, ..cfg.train.clone() };
        let resume = a.resume.as_deref().filter(|_| folds == 1);
        match cfg.precision {
            Precision::F32 => train_into::<f32>(train, &dataset, &out, resume)?,
            Precision::F64 => train_into::<f64>(train, &dataset, &out, resume)?,
        }
    }
    Ok(())
}

fn train_into<T: Real>(
    config: TrainConfig,
    dataset: &crate::volio::Dataset,
    out: &Path,
    resume: Option<&Path>,
) -> Result<()> {
    let mut trainer = match resume {
        Some(ckpt) => Trainer::<T>::resume(config, dataset, ckpt)?,
        None => Trainer::<T>::new(config, dataset)?,
    };
    let last = out.join("last.ckpt");
    while !trainer.is_finished() {
        trainer.run_epoch()?;
        trainer.save(&last)?;
        write_history_csv(out.join("history.csv"), &trainer.state().history)?;
        write_epochs_csv(out.join("epochs.csv"), &trainer.state().epochs)?;
    }
    save_checkpoint(trainer.network(), None, out.join("final.ckpt"))?;
    if let Some(best) = trainer.best_network()? {
        save_checkpoint(&best, None, out.join("best.ckpt"))?;
    }
    println!(
        "trained {} steps; checkpoints in {}",
        trainer.state().step,
        out.display()
    );
    Ok(())
}

fn is_vol3d(path: &Path) -> Result<bool> {
    let bytes = fs::read(path).map_err(|e| Error::from(e).with_path(path))?;
    Ok(bytes.starts_with(crate::volio::VOL3D_MAGIC))
}

/// Intensity volume from a VOL3D or NIfTI-1 file.
fn read_any_volume(path: &Path) -> Result<Volume> {
    if !is_vol3d(path)? {
        return Ok(read_nifti1(path)?.volume);
    }
    match read_vol3d(path)? {
        VolFile::Volume(v) => Ok(v),
        VolFile::Labels(l) => Volume::new(l.dims(), l.spacing(), l.data().iter().map(|&v| v as f32).collect()),
    }
}

/// Label map from a VOL3D or NIfTI-1 file.
fn read_any_labels(path: &Path) -> Result<LabelMap> {
    let volume = if is_vol3d(path)? {
        match read_vol3d(path)? {
            VolFile::Labels(l) => return Ok(l),
            VolFile::Volume(v) => v,
        }
    } else {
        read_nifti1(path)?.volume
    };
    volume.to_labels(None).map_err(|e| e.with_path(path))
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    if !a.ckpt.is_file() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            "checkpoint not found",
        ))
        .with_path(&a.ckpt));
    }
    let config_path = a.config.clone().unwrap_or_else(|| {
        a.ckpt.parent().unwrap_or(Path::new(".")).join(CONFIG_ECHO)
    });
    let cfg = RunConfig::from_file(&config_path)?;
    match cfg.precision {
        Precision::F32 => predict_with::<f32>(&cfg.train.model, &a),
        Precision::F64 => predict_with::<f64>(&cfg.train.model, &a),
    }
}

fn predict_with<T: Real>(model: &ModelConfig, a: &PredictArgs) -> Result<()> {
    let net: Network<T> = load_checkpoint::<T>(model, &a.ckpt)?.network;
    let segment = |volume: &Volume| -> Result<LabelMap> {
        let labels = predict(&net, volume)?;
        Ok(if a.postprocess {
            postprocess_labels(&labels, model.num_classes)
        } else {
            labels
        })
    };
    if a.input.is_dir() {
        let dataset = load_dataset(&a.input)?;
        create_dir(&a.out)?;
        for case in &dataset.cases {
            let labels = segment(&case.volume).map_err(|e| e.with_path(a.input.join(&case.id)))?;
            write_labels(&labels, a.out.join(format!("{}_pred.vol3d", case.id)))?;
        }
        println!("wrote {} predictions to {}", dataset.len(), a.out.display());
    } else {
        let volume = read_any_volume(&a.input)?;
        let labels = segment(&volume).map_err(|e| e.with_path(&a.input))?;
        write_labels(&labels, &a.out)?;
        println!("wrote {}", a.out.display());
    }
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let mut pairs: Vec<(String, LabelMap, LabelMap)> = Vec::new();
    if a.truth.is_dir() {
        if !a.truth.join(MANIFEST_FILE).is_file() {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                "truth directory has no manifest",
            ))
            .with_path(&a.truth));
        }
        let truth = load_dataset(&a.truth)?;
        for case in truth.cases {
            let pred = read_any_labels(&a.pred.join(format!("{}_pred.vol3d", case.id)))?;
            pairs.push((case.id, pred, case.labels));
        }
    } else {
        let id = a
            .truth
            .file_stem()
            .map_or_else(|| "case".into(), |s| s.to_string_lossy().into_owned());
        pairs.push((id, read_any_labels(&a.pred)?, read_any_labels(&a.truth)?));
    }
    let mut report = MetricsReport::default();
    for (id, pred, truth) in pairs {
        let classes = a.classes.unwrap_or(pred.classes().max(truth.classes()));
        let spacing = truth.spacing().map(f64::from);
        let metrics = crate::metrics::evaluate_case(&pred, &truth, spacing, classes)
            .map_err(|e| Error::config(format!("case {id}: {e}")))?;
        report.push(id, metrics);
    }
    report.write_csv(&a.out)?;
    for s in report.summary() {
        let show = |v: Option<crate::metrics::Stat>| v.map_or("NA".to_string(), |s| s.to_string());
        println!(
            "class {}: DSC {}  MSD {} mm  HD {} mm",
            s.class,
            show(s.dsc),
            show(s.msd_mm),
            show(s.hd_mm)
        );
    }
    Ok(())
}

/// Parameter ledger and receptive-field table as printed by `audit`.
pub fn audit_report(model: &ModelConfig) -> Result<String> {
    use std::fmt::Write as _;
    let audit = count_parameters(model)?;
    let mut s = String::new();
    let _ = writeln!(s, "{:<16} {:<9} {:>9} {:>7} {:>6} {:>9}", "layer", "role", "weights", "biases", "adain", "total");
    for l in &audit.layers {
        let _ = writeln!(
            s,
            "{:<16} {:<9} {:>9} {:>7} {:>6} {:>9}",
            l.name,
            l.role.as_str(),
            l.weights,
            l.biases,
            l.adain,
            l.total()
        );
    }
    let total = audit.total();
    let _ = writeln!(s, "total parameters: {total} ({:.3} M)", total as f64 / 1e6);
    let _ = writeln!(s, "\n{:<16} {:>8} {:>6} {:>5} {:>4}", "layer", "extent", "stride", "jump", "rf");
    for step in receptive_field_table(model)? {
        let _ = writeln!(
            s,
            "{:<16} {:>8} {:>6} {:>5} {:>4}",
            step.layer, step.dilated_extent, step.stride, step.jump, step.receptive_field
        );
    }
    let _ = writeln!(s, "receptive field at CAM output: {}", crate::model::receptive_field(model)?);
    Ok(s)
}

fn cmd_audit(a: AuditArgs) -> Result<()> {
    let cfg = match &a.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    print!("{}", audit_report(&cfg.train.model)?);
    Ok(())
}

fn cmd_postprocess(a: PostprocessArgs) -> Result<()> {
    let labels = read_any_labels(&a.input)?;
    let classes = a.classes.unwrap_or(labels.classes());
    let cleaned = postprocess_labels(&labels, classes);
    write_labels(&cleaned, &a.out)?;
    println!("wrote {}", a.out.display());
    Ok(())
}
