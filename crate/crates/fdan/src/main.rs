//! Command-line surface: synthetic data generation, training, evaluation,
//! and 2-D projection export.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical
//! divergence.

use clap::{Args, Parser, Subcommand, ValueEnum};
use fdan::data::{
    concat_domains, load_feature_csv, load_feature_file, save_feature_file, stratified_split,
    synth_domains, write_atomic, FeatureDomain, Modality, SynthSpec,
};
use fdan::model::{load_checkpoint, save_checkpoint, ModelConfig};
use fdan::train::{evaluate, final_layer_activations, train, Ablation, TrainConfig};
use fdan::Error;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "fdan",
    about = "Cross-modal feature distribution alignment trainer",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a paired synthetic visual/acoustic task from a JSON spec.
    Synth(SynthArgs),
    /// Train on all visual samples plus a stratified split of the acoustic
    /// domain; write a checkpoint and a per-epoch JSONL history.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a feature file through one modality stream.
    Eval(EvalArgs),
    /// Export 2-D projections of final-layer activations as CSV.
    Project(ProjectArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// JSON file describing the synthetic task.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out_visual: PathBuf,
    #[arg(long)]
    out_acoustic: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum AblationArg {
    Full,
    NoAttention,
    NoLmmd,
}

impl From<AblationArg> for Ablation {
    fn from(a: AblationArg) -> Self {
        match a {
            AblationArg::Full => Ablation::Full,
            AblationArg::NoAttention => Ablation::NoAttention,
            AblationArg::NoLmmd => Ablation::NoLmmd,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ModalityArg {
    V,
    A,
}

impl From<ModalityArg> for Modality {
    fn from(m: ModalityArg) -> Self {
        match m {
            ModalityArg::V => Modality::Visual,
            ModalityArg::A => Modality::Acoustic,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Source-domain feature file(s); several concatenate into one source.
    #[arg(long, required = true)]
    visual: Vec<PathBuf>,
    /// Target-domain feature file.
    #[arg(long)]
    acoustic: PathBuf,
    #[arg(long, default_value_t = 1e-3)]
    alpha: f64,
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
    #[arg(long, default_value_t = 0.99)]
    momentum: f64,
    #[arg(long, default_value_t = 1e-4)]
    decay: f64,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 300)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, value_enum, default_value_t = AblationArg::Full)]
    ablation: AblationArg,
    /// Fraction of each acoustic class kept for training; the rest is the
    /// test split.
    #[arg(long, default_value_t = 0.8)]
    split: f64,
    #[arg(long)]
    out_model: PathBuf,
    /// Per-epoch JSONL history output.
    #[arg(long)]
    history: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    modality: ModalityArg,
    /// Metrics report JSON output.
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct ProjectArgs {
    #[arg(long)]
    model: PathBuf,
    /// Feature files to project (binary format; carries the modality tag).
    #[arg(long, required = true)]
    data: Vec<PathBuf>,
    /// CSV output with header `modality,class,x,y`.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version requests are not errors.
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprintln!("usage error: {}", first_line(&e.to_string()));
            return ExitCode::from(1);
        }
    };
    let result = match cli.command {
        Command::Synth(args) => run_synth(args),
        Command::Train(args) => run_train(args),
        Command::Eval(args) => run_eval(args),
        Command::Project(args) => run_project(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", first_line(&e.to_string()));
            match e {
                Error::Divergence { .. } => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn first_line(s: &str) -> &str {
    s.lines().next().unwrap_or(s)
}

fn run_synth(args: SynthArgs) -> fdan::Result<()> {
    let text = std::fs::read_to_string(&args.spec)?;
    let spec: SynthSpec =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("synth spec: {e}")))?;
    let (visual, acoustic) = synth_domains(&spec)?;
    save_feature_file(&visual, &args.out_visual)?;
    save_feature_file(&acoustic, &args.out_acoustic)?;
    println!(
        "wrote {} visual and {} acoustic samples ({} classes, width {})",
        visual.len(),
        acoustic.len(),
        spec.classes,
        spec.d_in
    );
    Ok(())
}

/// Loads a feature file, accepting the binary format always and CSV when the
/// expected modality is known from the flag context.
fn load_domain(path: &Path, expected: Option<Modality>) -> fdan::Result<FeatureDomain> {
    let is_csv = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let domain = if is_csv {
        let modality = expected.ok_or_else(|| {
            Error::Format(format!(
                "{}: CSV input needs a modality implied by the flag it is passed to",
                path.display()
            ))
        })?;
        load_feature_csv(path, modality)?
    } else {
        load_feature_file(path)?
    };
    if let Some(m) = expected {
        if domain.modality != m {
            return Err(Error::Config(format!(
                "{}: file is tagged {}, expected {}",
                path.display(),
                domain.modality.label(),
                m.label()
            )));
        }
    }
    Ok(domain)
}

fn run_train(args: TrainArgs) -> fdan::Result<()> {
    let sources: Vec<FeatureDomain> = args
        .visual
        .iter()
        .map(|p| load_domain(p, Some(Modality::Visual)))
        .collect::<fdan::Result<_>>()?;
    let source = concat_domains(&sources)?;
    let acoustic = load_domain(&args.acoustic, Some(Modality::Acoustic))?;
    if source.class_count() != acoustic.class_count() {
        return Err(Error::Config(format!(
            "visual domain has {} classes, acoustic has {}",
            source.class_count(),
            acoustic.class_count()
        )));
    }
    let (target_train, target_test) = stratified_split(&acoustic, args.split, args.seed)?;

    let arch = ModelConfig::new(
        source.feature_width(),
        acoustic.feature_width(),
        source.class_count(),
    )
    .with_dims(args.dim, 2 * args.dim, args.layers);
    let config = TrainConfig {
        alpha: args.alpha,
        momentum: args.momentum,
        weight_decay: args.decay,
        learning_rate: args.lr,
        batch_size: args.batch,
        epochs: args.epochs,
        seed: args.seed,
        ablation: args.ablation.into(),
        kernel: Default::default(),
    };

    let (params, history) = train(&config, &source, &target_train, &target_test, &arch)?;

    save_checkpoint(&params, &args.out_model)?;
    let mut lines = String::new();
    for record in &history {
        lines.push_str(
            &serde_json::to_string(record)
                .map_err(|e| Error::Format(format!("history serialization: {e}")))?,
        );
        lines.push('\n');
    }
    write_atomic(&args.history, lines.as_bytes())?;

    let last = history.last().expect("at least one epoch");
    println!(
        "trained {} epochs; final target-test WAR {:.4}, UAR {:.4}, w-F1 {:.4}",
        history.len(),
        last.war,
        last.uar,
        last.w_f1
    );
    Ok(())
}

fn run_eval(args: EvalArgs) -> fdan::Result<()> {
    let params = load_checkpoint(&args.model)?;
    let modality: Modality = args.modality.into();
    let domain = load_domain(&args.data, Some(modality))?;
    let report = evaluate(&params, &domain, modality)?;
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Format(format!("report serialization: {e}")))?;
    write_atomic(&args.report, json.as_bytes())?;
    println!(
        "WAR {:.4}, UAR {:.4}, w-F1 {:.4} over {} samples",
        report.war,
        report.uar,
        report.w_f1,
        domain.len()
    );
    Ok(())
}

fn run_project(args: ProjectArgs) -> fdan::Result<()> {
    let params = load_checkpoint(&args.model)?;
    let mut activation_blocks = Vec::new();
    let mut row_tags: Vec<(Modality, String)> = Vec::new();
    for path in &args.data {
        let domain = load_domain(path, None)?;
        let activations = final_layer_activations(&params, &domain)?;
        let labels = domain.label_indices();
        for &c in &labels {
            row_tags.push((domain.modality, domain.class_names[c].clone()));
        }
        activation_blocks.push(activations);
    }
    let refs: Vec<&fdan::Matrix> = activation_blocks.iter().collect();
    let pooled = fdan::Matrix::vstack(&refs)?;
    let coords = fdan::pca::pca_project(&pooled, 2)?;

    let mut csv = String::from("modality,class,x,y\n");
    for (i, (modality, class)) in row_tags.iter().enumerate() {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            modality.label(),
            class,
            coords.get(i, 0),
            coords.get(i, 1)
        ));
    }
    write_atomic(&args.out, csv.as_bytes())?;
    println!(
        "projected {} samples from {} files",
        coords.rows(),
        args.data.len()
    );
    Ok(())
}
