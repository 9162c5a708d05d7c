//! Command-line pipeline: `inspect`, `gen-phantoms`, `train`, `eval`,
//! `predict`.
//!
//! Flags are `--key value`; a flat `key=value` config file may supply
//! defaults for `train`, with flags taking precedence and unknown keys
//! rejected before any work starts. Exit codes: 0 success, 1 usage,
//! 2 data/parse, 3 numeric failure. Outputs are written to a temporary
//! file and renamed, so failures never leave partial files.

use crate::error::{Error, Result};
use crate::model::{
    count_params, infer_shapes, load_checkpoint, model_spec_by_id, peek_checkpoint_header,
    save_checkpoint, LayerKind, Model, MODEL_IDS,
};
use crate::niftio::{
    gen_phantom_with, normalize_intensity, read_nifti, resample, write_nifti, AgeClass,
    DatasetManifest, ManifestRow, ResampleMethod, Split, Volume, PHANTOM_NOISE_SIGMA,
};
use crate::rngutil::derive_seed;
use crate::tensor::Tensor;
use crate::train::{
    epochs_to_csv, evaluate, split_dataset, train, Dataset, Sample, SplitMode, TrainConfig,
};
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};

#[derive(Parser, Debug)]
#[command(
    name = "vcnn",
    about = "Volumetric CNN engine for brain developmental age classification",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print a model's layer table (output shapes and parameter counts)
    Inspect {
        /// Model name: cnn2d, cnn3d, or cnn3d-small
        model: String,
    },
    /// Generate synthetic phantom volumes plus a manifest CSV
    GenPhantoms {
        /// Phantoms per age class
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        /// Gaussian noise sigma
        #[arg(long, default_value_t = PHANTOM_NOISE_SIGMA)]
        noise_sigma: f64,
    },
    /// Train a model from a manifest; writes checkpoint, epoch CSV, metrics
    Train(TrainArgs),
    /// Evaluate a checkpoint against a manifest
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Expected model name; fails if the checkpoint differs
        #[arg(long)]
        model: Option<String>,
        /// Directory for metrics.csv and confusion.txt (reports always print)
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Classify a single NIfTI file
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Expected model name; fails if the checkpoint differs
        #[arg(long)]
        model: Option<String>,
        /// Input volume (.nii or .nii.gz)
        #[arg(long)]
        input: PathBuf,
    },
}

#[derive(Args, Debug, Default)]
struct TrainArgs {
    /// Flat key=value file supplying defaults; flags override
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Model name: cnn2d, cnn3d, or cnn3d-small
    #[arg(long)]
    model: Option<String>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    split_fraction: Option<f64>,
    /// scan (published protocol) or subject (no subject leakage)
    #[arg(long)]
    split_mode: Option<String>,
    /// Cube side the volumes are resampled to; must match the model input
    #[arg(long)]
    input_size: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
}

/// Fully resolved training options.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: String,
    pub manifest: PathBuf,
    pub out_dir: PathBuf,
    pub input_size: usize,
    pub threads: Option<usize>,
    pub train: TrainConfig,
}

fn parse_split_mode(s: &str) -> Result<SplitMode> {
    match s {
        "scan" => Ok(SplitMode::Scan),
        "subject" => Ok(SplitMode::Subject),
        other => Err(Error::Argument(format!(
            "split_mode must be scan or subject, got \"{other}\""
        ))),
    }
}

impl TrainArgs {
    /// Merges config-file defaults under the flags and validates everything.
    fn resolve(mut self) -> Result<RunConfig> {
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)?;
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    Error::Argument(format!(
                        "{}:{}: expected key=value, got \"{line}\"",
                        path.display(),
                        lineno + 1
                    ))
                })?;
                let (key, value) = (key.trim(), value.trim());
                let bad = |e: String| Error::Argument(format!("{}:{}: {e}", path.display(), lineno + 1));
                let parse_num = |v: &str| v.parse::<f64>().map_err(|e| bad(e.to_string()));
                let parse_int = |v: &str| v.parse::<usize>().map_err(|e| bad(e.to_string()));
                match key {
                    "manifest" => {
                        self.manifest.get_or_insert_with(|| PathBuf::from(value));
                    }
                    "model" => {
                        self.model.get_or_insert_with(|| value.to_string());
                    }
                    "out" => {
                        self.out.get_or_insert_with(|| PathBuf::from(value));
                    }
                    "epochs" => {
                        let v = parse_int(value)?;
                        self.epochs.get_or_insert(v);
                    }
                    "seed" => {
                        let v = value.parse::<u64>().map_err(|e| bad(e.to_string()))?;
                        self.seed.get_or_insert(v);
                    }
                    "batch_size" => {
                        let v = parse_int(value)?;
                        self.batch_size.get_or_insert(v);
                    }
                    "learning_rate" => {
                        let v = parse_num(value)?;
                        self.learning_rate.get_or_insert(v);
                    }
                    "rho" => {
                        let v = parse_num(value)?;
                        self.rho.get_or_insert(v);
                    }
                    "epsilon" => {
                        let v = parse_num(value)?;
                        self.epsilon.get_or_insert(v);
                    }
                    "split_fraction" => {
                        let v = parse_num(value)?;
                        self.split_fraction.get_or_insert(v);
                    }
                    "split_mode" => {
                        parse_split_mode(value)?;
                        self.split_mode.get_or_insert_with(|| value.to_string());
                    }
                    "input_size" => {
                        let v = parse_int(value)?;
                        self.input_size.get_or_insert(v);
                    }
                    "threads" => {
                        let v = parse_int(value)?;
                        self.threads.get_or_insert(v);
                    }
                    other => {
                        return Err(bad(format!("unknown config key \"{other}\"")));
                    }
                }
            }
        }

        let model = self
            .model
            .ok_or_else(|| Error::Argument("--model is required (or set model= in the config)".into()))?;
        let (model_input, _) = model_spec_by_id(&model).ok_or_else(|| {
            Error::Argument(format!(
                "unknown model \"{model}\" (expected one of {MODEL_IDS:?})"
            ))
        })?;
        let manifest = self
            .manifest
            .ok_or_else(|| Error::Argument("--manifest is required".into()))?;
        let out_dir = self
            .out
            .ok_or_else(|| Error::Argument("--out is required".into()))?;

        let epochs = self.epochs.unwrap_or(14);
        if epochs == 0 {
            return Err(Error::Argument("epochs must be >= 1".into()));
        }

        let default_size = model_input[0];
        let input_size = self.input_size.unwrap_or(default_size);
        if input_size != default_size {
            return Err(Error::Argument(format!(
                "input_size {input_size} does not match the {default_size}^3 input of model \"{model}\""
            )));
        }

        let train = TrainConfig {
            learning_rate: self.learning_rate.unwrap_or(1e-4),
            rmsprop_rho: self.rho.unwrap_or(0.9),
            rmsprop_epsilon: self.epsilon.unwrap_or(1e-7),
            batch_size: self.batch_size.unwrap_or(4),
            epochs,
            seed: self.seed.unwrap_or(0),
            split_fraction: self.split_fraction.unwrap_or(0.8),
            split_mode: parse_split_mode(self.split_mode.as_deref().unwrap_or("scan"))?,
        };
        train.validate()?;

        Ok(RunConfig {
            model,
            manifest,
            out_dir,
            input_size,
            threads: self.threads,
            train,
        })
    }
}

fn thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    out
}

fn kind_label(kind: &LayerKind) -> &'static str {
    match kind {
        LayerKind::Conv2d { .. } => "Conv2D",
        LayerKind::Conv3d { .. } => "Conv3D",
        LayerKind::BatchNorm => "Batch Normalization",
        LayerKind::MaxPool { pool, .. } => {
            if pool.len() == 3 {
                "MaxPooling3D"
            } else {
                "MaxPooling2D"
            }
        }
        LayerKind::Dropout { .. } => "Dropout",
        LayerKind::Relu => "ReLU",
        LayerKind::Flatten => "Flatten",
        LayerKind::Dense { .. } => "Dense",
    }
}

fn shape_cell(shape: &[usize]) -> String {
    let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
    format!("(None, {})", dims.join(", "))
}

/// Renders the layer table for a model id.
pub fn layer_table(model: &str) -> Result<String> {
    let (input, layers) = model_spec_by_id(model).ok_or_else(|| {
        Error::Argument(format!(
            "unknown model \"{model}\" (expected one of {MODEL_IDS:?})"
        ))
    })?;
    let shapes = infer_shapes(&input, &layers)?;
    let counts = count_params(&input, &layers)?;

    let mut out = String::new();
    out.push_str(&format!("model: {model}\ninput shape: {}\n\n", shape_cell(&input)));
    out.push_str(&format!(
        "{:<42} {:<28} {:>12}\n",
        "Layer (type)", "Output Shape", "Param #"
    ));
    out.push_str(&format!("{}\n", "=".repeat(84)));
    for (layer, (name, shape)) in layers.iter().zip(&shapes) {
        let count = counts.for_layer(name).unwrap_or(0);
        out.push_str(&format!(
            "{:<42} {:<28} {:>12}\n",
            format!("{} ({})", name, kind_label(&layer.kind)),
            shape_cell(shape),
            thousands(count),
        ));
    }
    out.push_str(&format!("{}\n", "=".repeat(84)));
    out.push_str(&format!("Total params: {}\n", thousands(counts.total())));
    out.push_str(&format!("Trainable params: {}\n", thousands(counts.trainable)));
    out.push_str(&format!(
        "Non-trainable params: {}\n",
        thousands(counts.non_trainable)
    ));
    Ok(out)
}

fn cmd_inspect(model: &str) -> Result<()> {
    print!("{}", layer_table(model)?);
    Ok(())
}

fn cmd_gen_phantoms(count: usize, seed: u64, out: &Path, noise_sigma: f64) -> Result<()> {
    if count == 0 {
        return Err(Error::Argument("count must be >= 1".into()));
    }
    std::fs::create_dir_all(out)?;
    let mut rows = Vec::with_capacity(count * 3);
    for class in AgeClass::ALL {
        for i in 0..count {
            let subject_seed = derive_seed(seed, &[class.index() as u64, i as u64]);
            let vol = gen_phantom_with(class, subject_seed, crate::niftio::PHANTOM_SIZE, noise_sigma);
            let file = format!("phantom_{}_{i:03}.nii.gz", class.label());
            write_nifti(&out.join(&file), &vol)?;
            rows.push(ManifestRow {
                path: file,
                subject_id: vol.subject_id.clone(),
                modality: vol.modality,
                age_class: class,
                split: None,
            });
        }
    }
    let manifest = DatasetManifest::new(rows)?;
    manifest.write(&out.join("manifest.csv"))?;
    println!(
        "wrote {} phantoms and manifest.csv to {}",
        count * 3,
        out.display()
    );
    Ok(())
}

fn resolve_row_path(manifest_path: &Path, row_path: &str) -> PathBuf {
    let p = PathBuf::from(row_path);
    if p.is_absolute() {
        p
    } else {
        manifest_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(p)
    }
}

/// Preprocesses one volume into a model input tensor: resample to the
/// model's grid, min-max normalize, add the channel axis for 3D models.
/// 2D models read the resampled cube as [h, w, slices-as-channels], which
/// is a plain reinterpretation of the same row-major data.
fn volume_to_input(vol: &Volume, model_input: &[usize]) -> Result<Tensor<f32>> {
    let target = [model_input[0], model_input[1], model_input[2]];
    let resampled = if vol.shape() == target {
        vol.clone()
    } else {
        resample(vol, target, ResampleMethod::Trilinear)?
    };
    let normalized = normalize_intensity(&resampled);
    normalized.voxels.reshape(model_input)
}

/// Loads every manifest row into a labeled sample. Reading a scan is the
/// fail-fast preflight: any unreadable file aborts before training starts.
fn load_dataset(
    manifest_path: &Path,
    manifest: &DatasetManifest,
    model_input: &[usize],
) -> Result<Dataset<f32>> {
    let mut data = Vec::with_capacity(manifest.len());
    for row in manifest.rows() {
        let path = resolve_row_path(manifest_path, &row.path);
        let mut vol = read_nifti(&path)?;
        vol.modality = row.modality;
        vol.subject_id = row.subject_id.clone();
        vol.age_class = Some(row.age_class);
        data.push(Sample {
            input: volume_to_input(&vol, model_input)?,
            label: row.age_class.index(),
        });
    }
    Ok(data)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    crate::fsutil::write_atomic(path, text.as_bytes())
}

fn metrics_outputs(true_labels: &[usize], predictions: &[usize]) -> Result<(String, String)> {
    let cm = crate::metrics::confusion(true_labels, predictions)?;
    let report = crate::metrics::per_class(&cm)?;
    let csv = crate::metrics::report_csv(&report);
    let block = match crate::metrics::normalized_block(&cm) {
        Ok(b) => b,
        // A cohort can be absent from a small validation split; the raw
        // counts are still meaningful.
        Err(e) => format!("normalized confusion matrix unavailable: {e}\nraw counts: {:?}\n", cm.counts()),
    };
    Ok((csv, block))
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let manifest = DatasetManifest::load(&cfg.manifest)?;
    let (model_input, _) = model_spec_by_id(&cfg.model).expect("validated in resolve");

    // Honor a pre-assigned split if the manifest carries one for every row;
    // otherwise split here and record the assignment.
    let has_full_split = manifest.rows().iter().all(|r| r.split.is_some());
    let (train_manifest, val_manifest, warnings) = if has_full_split {
        let train_rows: Vec<ManifestRow> = manifest
            .rows()
            .iter()
            .filter(|r| r.split == Some(Split::Train))
            .cloned()
            .collect();
        let val_rows: Vec<ManifestRow> = manifest
            .rows()
            .iter()
            .filter(|r| r.split == Some(Split::Val))
            .cloned()
            .collect();
        if train_rows.is_empty() || val_rows.is_empty() {
            return Err(Error::Argument(
                "manifest split column leaves train or validation empty".into(),
            ));
        }
        println!("using the split column from {}", cfg.manifest.display());
        (
            DatasetManifest::new(train_rows)?,
            DatasetManifest::new(val_rows)?,
            Vec::new(),
        )
    } else {
        split_dataset(&manifest, &cfg.train)?
    };
    for w in &warnings {
        eprintln!("warning: {w}");
    }

    std::fs::create_dir_all(&cfg.out_dir)?;

    let train_data = load_dataset(&cfg.manifest, &train_manifest, &model_input)?;
    let val_data = load_dataset(&cfg.manifest, &val_manifest, &model_input)?;
    println!(
        "training {} on {} scans, validating on {}",
        cfg.model,
        train_data.len(),
        val_data.len()
    );

    let mut model: Model<f32> = {
        let (input, layers) = model_spec_by_id(&cfg.model).expect("validated in resolve");
        Model::new(cfg.model.clone(), input, layers)?
    };
    model.init_params(cfg.train.seed);

    let records = train(&mut model, &train_data, &val_data, &cfg.train, |r| {
        println!(
            "epoch {:>3}: train loss {:.4} acc {:.3} | val loss {:.4} acc {:.3}",
            r.epoch, r.train_loss, r.train_accuracy, r.val_loss, r.val_accuracy
        );
    })?;

    // Record the split actually used, then the training artifacts.
    let mut split_rows = train_manifest.rows().to_vec();
    split_rows.extend_from_slice(val_manifest.rows());
    DatasetManifest::new(split_rows)?.write(&cfg.out_dir.join("split.csv"))?;
    write_text(&cfg.out_dir.join("epochs.csv"), &epochs_to_csv(&records))?;

    let val_eval = evaluate(&model, &val_data)?;
    let truth: Vec<usize> = val_data.iter().map(|s| s.label).collect();
    let (metrics_csv, block) = metrics_outputs(&truth, &val_eval.predictions)?;
    write_text(&cfg.out_dir.join("metrics.csv"), &metrics_csv)?;
    write_text(&cfg.out_dir.join("confusion.txt"), &block)?;
    save_checkpoint(&model, &cfg.out_dir.join("checkpoint.vcnn"))?;

    println!("{block}");
    println!(
        "final validation accuracy {:.4}; artifacts in {}",
        val_eval.accuracy,
        cfg.out_dir.display()
    );
    Ok(())
}

fn check_model_flag(expected: &Option<String>, checkpoint: &Path) -> Result<()> {
    if let Some(expected) = expected {
        let header = peek_checkpoint_header(checkpoint)?;
        if &header.model != expected {
            return Err(crate::error::CheckpointError::ArchitectureMismatch(format!(
                "checkpoint holds \"{}\" but \"{expected}\" was requested",
                header.model
            ))
            .into());
        }
    }
    Ok(())
}

fn cmd_eval(
    checkpoint: &Path,
    manifest_path: &Path,
    model_flag: &Option<String>,
    out: &Option<PathBuf>,
) -> Result<()> {
    check_model_flag(model_flag, checkpoint)?;
    let model = load_checkpoint::<f32>(checkpoint)?;
    let manifest = DatasetManifest::load(manifest_path)?;
    let data = load_dataset(manifest_path, &manifest, model.input_shape())?;
    let result = evaluate(&model, &data)?;
    let truth: Vec<usize> = data.iter().map(|s| s.label).collect();
    let (metrics_csv, block) = metrics_outputs(&truth, &result.predictions)?;

    println!("{metrics_csv}");
    println!("{block}");
    println!("loss {:.6} accuracy {:.6}", result.loss, result.accuracy);
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        write_text(&dir.join("metrics.csv"), &metrics_csv)?;
        write_text(&dir.join("confusion.txt"), &block)?;
    }
    Ok(())
}

fn cmd_predict(checkpoint: &Path, model_flag: &Option<String>, input: &Path) -> Result<()> {
    check_model_flag(model_flag, checkpoint)?;
    let model = load_checkpoint::<f32>(checkpoint)?;
    let vol = read_nifti(input)?;
    let x = volume_to_input(&vol, model.input_shape())?;
    let (class, probs) = model.predict_proba(&x)?;
    println!("{}", model.class_names()[class]);
    for (name, p) in model.class_names().iter().zip(probs.data()) {
        println!("{name} {p:.6}");
    }
    Ok(())
}

fn with_threads<F: FnOnce() -> Result<()> + Send>(threads: Option<usize>, f: F) -> Result<()> {
    match threads {
        None => f(),
        Some(n) => {
            if n == 0 {
                return Err(Error::Argument("threads must be >= 1".into()));
            }
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Argument(format!("thread pool: {e}")))?;
            pool.install(f)
        }
    }
}

/// Runs one command from argv-style arguments (excluding the binary name is
/// fine; include it for parity with `main`). Library-level entry used by
/// both the binary and the tests.
pub fn run<I, S>(args: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Argument(e.to_string()))?;
    match cli.command {
        Command::Inspect { model } => cmd_inspect(&model),
        Command::GenPhantoms {
            count,
            seed,
            out,
            noise_sigma,
        } => cmd_gen_phantoms(count, seed, &out, noise_sigma),
        Command::Train(args) => {
            let cfg = args.resolve()?;
            with_threads(cfg.threads, || cmd_train(&cfg))
        }
        Command::Eval {
            checkpoint,
            manifest,
            model,
            out,
            threads,
        } => with_threads(threads, || cmd_eval(&checkpoint, &manifest, &model, &out)),
        Command::Predict {
            checkpoint,
            model,
            input,
        } => cmd_predict(&checkpoint, &model, &input),
    }
}

/// Maps errors onto the documented exit codes.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Argument(_) => 1,
        Error::NonFiniteLoss { .. } => 3,
        _ => 2,
    }
}

/// Binary entry point: returns the process exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    match run(args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
