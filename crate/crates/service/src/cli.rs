use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use persona_core::features::{write_embedding_file, FeatureError, FeatureRegistry, FeatureType};
use persona_core::model::{Labels, ModelError, EMOTIONS, GENDERS};
use persona_core::store::{ModelFile, StoreError};
use persona_core::training::{
    load_manifest, resolve_features, run_cross_validation, LabeledExample, TrainConfig, TrainingError,
};
use thiserror::Error;

use crate::api::{bind, router, serve, AppState};
use crate::predict::{PredictError, Predictor};

#[derive(Debug, Parser)]
#[command(name = "persona", version, about = "Emotion, gender and age estimation from speech")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute MFCC vectors for every clip in a manifest and write PERS files.
    Extract {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "mfcc")]
        feature: FeatureType,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run k-fold cross-validation and save the best fold's model.
    Train(TrainArgs),
    /// Score a saved model on a labelled manifest.
    Eval {
        #[arg(long, env = "PERSONA_MODEL")]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Predict one clip and print the response JSON.
    Predict {
        #[arg(long, env = "PERSONA_MODEL")]
        model: PathBuf,
        #[arg(long)]
        audio: Option<PathBuf>,
        #[arg(long)]
        embedding: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, env = "PERSONA_MODEL")]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Directory of static UI assets served at `/`.
        #[arg(long)]
        ui_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub feature: FeatureType,
    #[arg(long, default_value = "cnn")]
    pub arch: String,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Exit status: 1 for problems with the user's input, 2 for everything else.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    User(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::User(_) => 1,
            Self::Internal(_) => 2,
        }
    }
}

impl From<TrainingError> for CliError {
    fn from(e: TrainingError) -> Self {
        match e {
            TrainingError::Model(ModelError::NonFiniteLoss(_)) | TrainingError::Model(ModelError::Nn(_)) => {
                Self::Internal(e.to_string())
            }
            other => Self::User(other.to_string()),
        }
    }
}

impl From<PredictError> for CliError {
    fn from(e: PredictError) -> Self {
        match e {
            PredictError::Internal(_) => Self::Internal(e.to_string()),
            other => Self::User(other.to_string()),
        }
    }
}

fn load_model(path: &Path) -> Result<ModelFile, CliError> {
    ModelFile::load(path).map_err(|e| match e {
        StoreError::Io { .. } => CliError::User(e.to_string()),
        other => CliError::User(format!("{}: {other}", path.display())),
    })
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Internal(format!("{}: {e}", path.display())))
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::User(format!("{}: {e}", path.display())))
}

/// Parses `argv` and runs the command, returning the process exit code.
pub fn main_with_args(argv: impl IntoIterator<Item = String>) -> u8 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("persona: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Extract {
            manifest,
            feature,
            out_dir,
        } => extract(&manifest, feature, &out_dir),
        Command::Train(args) => train(args),
        Command::Eval { model, manifest } => eval(&model, &manifest),
        Command::Predict { model, audio, embedding } => {
            let predictor = Predictor::new(load_model(&model)?)?;
            let audio = audio.as_deref().map(read).transpose()?;
            let embedding = embedding.as_deref().map(read).transpose()?;
            let response = predictor.predict(audio.as_deref(), embedding.as_deref(), "cli")?;
            println!("{}", serde_json::to_string_pretty(&response).expect("response serializes"));
            Ok(())
        }
        Command::Serve {
            model,
            port,
            host,
            ui_dir,
        } => serve_cmd(model.as_deref(), &host, port, ui_dir),
    }
}

fn extract(manifest: &Path, feature: FeatureType, out_dir: &Path) -> Result<(), CliError> {
    if feature != FeatureType::Mfcc {
        return Err(CliError::User(format!(
            "{feature} vectors come from an external encoder; only mfcc can be extracted from audio"
        )));
    }
    let examples = load_manifest(manifest)?;
    let samples = resolve_features(&examples, &FeatureRegistry::builtin(), feature)?;
    fs::create_dir_all(out_dir).map_err(|e| CliError::Internal(format!("{}: {e}", out_dir.display())))?;
    let mut rows = csv_header();
    for (ex, s) in examples.iter().zip(&samples) {
        let file = format!("{}.pers", ex.clip_id);
        let vec = persona_core::features::FeatureVector::new(s.features.clone(), feature, &ex.clip_id)
            .map_err(|e| CliError::Internal(e.to_string()))?;
        write_embedding_file(&vec, out_dir.join(&file)).map_err(|e: FeatureError| CliError::Internal(e.to_string()))?;
        rows.push_str(&csv_row(ex, &file));
    }
    write(&out_dir.join("manifest.csv"), rows)?;
    eprintln!("wrote {} {feature} vectors to {}", samples.len(), out_dir.display());
    Ok(())
}

fn csv_header() -> String {
    "clip_id,audio_path,embedding_path,emotion,gender,age,speaker_id\n".to_string()
}

fn csv_row(ex: &LabeledExample, embedding: &str) -> String {
    let Labels { emotion, gender, age_years } = ex.labels;
    format!(
        "{},,{},{},{},{},{}\n",
        ex.clip_id, embedding, EMOTIONS[emotion], GENDERS[gender], age_years as u64, ex.speaker_id
    )
}

fn train(args: TrainArgs) -> Result<(), CliError> {
    let config = TrainConfig {
        folds: args.folds,
        epochs: args.epochs,
        lr: args.lr,
        batch: args.batch,
        seed: args.seed,
        ..Default::default()
    };
    config.validate()?;
    let examples = load_manifest(&args.manifest)?;
    let samples = resolve_features(&examples, &FeatureRegistry::builtin(), args.feature)?;
    let outcome = run_cross_validation(&samples, &config, &args.arch, args.feature)?;
    fs::create_dir_all(&args.out).map_err(|e| CliError::Internal(format!("{}: {e}", args.out.display())))?;

    let report = &outcome.report;
    let json = serde_json::to_string_pretty(report).map_err(|e| CliError::Internal(e.to_string()))?;
    write(&args.out.join("cv_report.json"), json + "\n")?;
    write(&args.out.join("cv_table.txt"), report.table())?;
    let mean = report.mean;
    let file = ModelFile::new(outcome.into_best_model(), Some(mean), Some(config));
    let model_path = args.out.join("model.persmodl");
    file.save(&model_path).map_err(|e| CliError::Internal(e.to_string()))?;
    print!("{}", fs::read_to_string(args.out.join("cv_table.txt")).unwrap_or_default());
    eprintln!("saved {} (model id {})", model_path.display(), file.model_id());
    Ok(())
}

fn eval(model: &Path, manifest: &Path) -> Result<(), CliError> {
    let file = load_model(model)?;
    let ft = file.model.config().feature_type;
    let examples = load_manifest(manifest)?;
    let samples = resolve_features(&examples, &FeatureRegistry::builtin(), ft)?;
    let pairs: Vec<(&[f32], Labels)> = samples.iter().map(|s| (s.features.as_slice(), s.labels)).collect();
    let report = file.model.evaluate(&pairs).map_err(|e| CliError::User(e.to_string()))?;
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    Ok(())
}

fn serve_cmd(model: Option<&Path>, host: &str, port: u16, ui_dir: Option<PathBuf>) -> Result<(), CliError> {
    let predictor = model.map(|p| Predictor::new(load_model(p)?).map_err(CliError::from)).transpose()?;
    if let Some(dir) = &ui_dir {
        if !dir.is_dir() {
            return Err(CliError::User(format!("--ui-dir {} is not a directory", dir.display())));
        }
    }
    if predictor.is_none() {
        eprintln!("persona: no model given; /api/v1/predict will answer 503");
    }
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Internal(e.to_string()))?;
    runtime.block_on(async {
        let listener = bind(host, port)
            .await
            .map_err(|e| CliError::User(format!("cannot listen on {host}:{port}: {e}")))?;
        eprintln!("listening on http://{}", listener.local_addr().map_err(|e| CliError::Internal(e.to_string()))?);
        let app = router(AppState::new(predictor), ui_dir);
        serve(listener, app, shutdown_signal())
            .await
            .map_err(|e| CliError::Internal(e.to_string()))
    })
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}
