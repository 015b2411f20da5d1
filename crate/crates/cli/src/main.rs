use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};

use inspecta::harness::{
    evaluate_saved_model, render_roc_svg, run_ablation, run_matrix, train_model, write_report, AblationConfig,
    DatasetRef, MatrixConfig, RowOutcome, TrainingSpec,
};
use inspecta::learner::{save_model, Aggregation, ModelKind};
use inspecta::syngen::{gen_dataset, GenConfig};
use inspecta::{load_manifest, par, Split};

const THREADS_VAR: &str = "INSPECTA_THREADS";

#[derive(Parser)]
#[command(name = "inspecta", version, about = "Synthetic defect-inspection benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset from a generator config.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on the train split of a manifest.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        kind: ModelKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score one split with a saved model and write a report.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        split: Split,
        #[arg(long, default_value = "max")]
        aggregation: Aggregation,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a batch of experiments and write a summary CSV.
    Matrix {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cluster a train split and retrain without each cluster.
    Ablate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        kind: ModelKind,
        /// Test set as `<manifest>:<split>`.
        #[arg(long)]
        test: DatasetRef,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plot the ROC curves of one or more reports.
    PlotRoc {
        #[arg(long, value_delimiter = ',', required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Bad input (exit 2) versus a failed run (exit 1).
enum Failure {
    Config(anyhow::Error),
    Run(anyhow::Error),
}

type Outcome = Result<ExitCode, Failure>;

trait Classify<T> {
    fn config(self) -> Result<T, Failure>;
    fn run(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn config(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Config(e.into()))
    }

    fn run(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Run(e.into()))
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn init_threads() -> Result<(), Failure> {
    match std::env::var(THREADS_VAR) {
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| Failure::Config(anyhow!("{THREADS_VAR} must be a positive integer, got {v:?}")))?;
            par::init_threads(n);
            Ok(())
        }
        Err(_) => Ok(()),
    }
}

fn gen(config: &Path, out: &Path) -> Outcome {
    let cfg: GenConfig = read_json(config).config()?;
    cfg.validate().config()?;
    let (manifest, path) = gen_dataset(&cfg, out).run()?;
    println!("{} samples -> {}", manifest.samples.len(), path.display());
    Ok(ExitCode::SUCCESS)
}

fn train(manifest: &Path, kind: ModelKind, seed: u64, out: &Path) -> Outcome {
    let m = load_manifest(manifest).config()?;
    let samples = m.load_split(Split::Train).run()?;
    let params = train_model(&samples, &TrainingSpec::default_for(kind, seed)).run()?;
    save_model(&params, out).run()?;
    println!(
        "{kind} trained on {} images, final loss {:.6} -> {}",
        samples.len(),
        params.final_train_loss,
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn eval(model: &Path, manifest: &Path, split: Split, aggregation: Aggregation, threshold: f64, out: &Path) -> Outcome {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Failure::Config(anyhow!("threshold {threshold} outside [0, 1]")));
    }
    let test = DatasetRef::new(manifest, split);
    let (report, evaluation) = evaluate_saved_model(model, &test, aggregation, threshold).run()?;
    write_report(&report, &evaluation, out).run()?;
    let ap = report.ap.map(|v| format!(" ap {v:.4}")).unwrap_or_default();
    println!("{} auc {:.4}{ap} -> {}", report.test, report.auc, out.display());
    Ok(ExitCode::SUCCESS)
}

fn matrix(config: &Path, out: &Path) -> Outcome {
    let cfg: MatrixConfig = read_json(config).config()?;
    let base = config.parent().unwrap_or(Path::new(""));
    let rows = cfg.expand(base);
    for r in &rows {
        r.validate().config()?;
    }
    let summary = run_matrix(&rows, out).run()?;
    for row in &summary.rows {
        match &row.outcome {
            RowOutcome::Done(r) => println!("{} {} {} -> {}: auc {:.4}", row.experiment_id, row.kind, row.train, row.test, r.auc),
            RowOutcome::Failed(e) => eprintln!("{} failed: {e}", row.experiment_id),
        }
    }
    println!("summary -> {}", out.join("summary.csv").display());
    Ok(if summary.failures() > 0 {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    })
}

fn ablate(manifest: &Path, kind: ModelKind, test: DatasetRef, seed: u64, out: &Path) -> Outcome {
    let cfg = AblationConfig::new(manifest, kind, test, seed);
    let report = run_ablation(&cfg, out).run()?;
    println!("k = {}, baseline auc {:.4}", report.clusters.chosen_k, report.baseline.auc);
    for e in &report.entries {
        println!(
            "excl-{}: {} images ({:.1}%) removed, auc {:.4} ({:+.4})",
            e.cluster,
            e.excluded,
            100.0 * e.excluded_fraction,
            e.report.auc,
            e.auc_delta
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn plot_roc(reports: &[PathBuf], out: &Path) -> Outcome {
    let mut curves = Vec::with_capacity(reports.len());
    for path in reports {
        let report = inspecta::harness::ExperimentReport::load(path).config()?;
        let roc = report.roc().run()?;
        curves.push((format!("{} ({})", report.experiment_id, report.test), roc));
    }
    render_roc_svg(&curves, out).run()?;
    println!("{} curves -> {}", curves.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = init_threads().and_then(|()| match cli.command {
        Command::Gen { config, out } => gen(&config, &out),
        Command::Train {
            manifest,
            kind,
            seed,
            out,
        } => train(&manifest, kind, seed, &out),
        Command::Eval {
            model,
            manifest,
            split,
            aggregation,
            threshold,
            out,
        } => eval(&model, &manifest, split, aggregation, threshold, &out),
        Command::Matrix { config, out } => matrix(&config, &out),
        Command::Ablate {
            manifest,
            kind,
            test,
            seed,
            out,
        } => ablate(&manifest, kind, test, seed, &out),
        Command::PlotRoc { reports, out } => plot_roc(&reports, &out),
    });
    match result {
        Ok(code) => code,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
