use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::PipelineConfig;
use crate::error::CliError;
use crate::pipeline::{self, PREDICTIONS_FILE, REPORT_JSON};
use crate::review::ReviewStore;
use crate::server;

#[derive(Debug, Parser)]
#[command(name = "txncat", version, about = "Categorise SME bank transactions")]
pub struct Cli {
    /// Pipeline config (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the configured dataset path.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GeneratorArgs {
    /// Use the lexicon-based generator instead of the remote service.
    #[arg(long)]
    pub offline: bool,
    /// Lexicon TOML for the offline generator.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Clean descriptions into the work directory.
    Clean,
    /// Group equivalent cleaned descriptions.
    Group,
    /// Generate synthetic examples for under-represented categories.
    Augment(GeneratorArgs),
    /// Train the classifier bundle.
    Train {
        /// Include the synthetic rows from `augment`.
        #[arg(long)]
        synthetic: bool,
    },
    /// Fit temperature and bias on the calibration split.
    Calibrate,
    /// Stratified k-fold evaluation of the whole pipeline.
    Evaluate {
        #[arg(long)]
        k: Option<usize>,
        /// Run folds over this company's rows only.
        #[arg(long)]
        holdout_company: Option<String>,
        /// Augment each training fold.
        #[arg(long)]
        augment: bool,
        #[command(flatten)]
        generator: GeneratorArgs,
        /// Report directory; defaults to paths.reports.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score transactions with a bundle.
    Predict {
        #[arg(long)]
        model: Option<PathBuf>,
        /// Defaults to the dataset.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Defaults to predictions.csv in the work directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Serve the review API.
    Serve,
    /// Export reviewed labels as an ingest-format dataset.
    Export {
        #[arg(long)]
        labels: PathBuf,
    },
}

fn apply_generator_args(config: &mut PipelineConfig, args: &GeneratorArgs) {
    if args.offline {
        config.augment.offline = true;
    }
    if let Some(l) = &args.lexicon {
        config.paths.lexicon = Some(std::path::absolute(l).unwrap_or_else(|_| l.clone()));
    }
}

fn absolute(p: &std::path::Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

pub fn run(cli: Cli) -> Result<String, CliError> {
    let mut config = PipelineConfig::load_or_default(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(data) = &cli.data {
        config.paths.dataset = Some(absolute(data));
    }
    match cli.command {
        Command::Clean => pipeline::cmd_clean(&config),
        Command::Group => pipeline::cmd_group(&config),
        Command::Augment(args) => {
            apply_generator_args(&mut config, &args);
            let offline = config.augment.offline;
            pipeline::cmd_augment(&config, offline)
        }
        Command::Train { synthetic } => {
            if synthetic {
                config.augment.enabled = true;
            }
            pipeline::cmd_train(&config)
        }
        Command::Calibrate => pipeline::cmd_calibrate(&config),
        Command::Evaluate {
            k,
            holdout_company,
            augment,
            generator,
            out,
        } => {
            if let Some(k) = k {
                config.evaluate.k = k;
            }
            if holdout_company.is_some() {
                config.evaluate.holdout_company = holdout_company;
            }
            if augment {
                config.augment.enabled = true;
            }
            apply_generator_args(&mut config, &generator);
            if let Some(out) = out {
                config.paths.reports = absolute(&out);
            }
            let (outcome, dir) = pipeline::cmd_evaluate(&config)?;
            for w in &outcome.report.warnings {
                log::warn!("{w}");
            }
            Ok(format!("{}report written to {}", outcome.report.to_table(), dir.join(REPORT_JSON).display()))
        }
        Command::Predict { model, input, output } => {
            let model = model.map(|m| absolute(&m)).unwrap_or_else(|| config.resolve(&config.paths.bundle));
            let input = match input {
                Some(i) => absolute(&i),
                None => config.dataset()?,
            };
            let output = output.map(|o| absolute(&o)).unwrap_or_else(|| config.work_file(PREDICTIONS_FILE));
            pipeline::cmd_predict(&model, &input, &output)
        }
        Command::Serve => server::serve(config).map(|_| "server stopped".to_string()),
        Command::Export { labels } => {
            let state = server::load_state(config, std::sync::Arc::new(server::retrain_pipeline))?;
            let store = state.store.lock().unwrap_or_else(|p| p.into_inner());
            let bytes = server::labels_csv(&store)?;
            pipeline::write_atomic(&labels, &bytes)?;
            Ok(export_summary(&store, &labels))
        }
    }
}

fn export_summary(store: &ReviewStore, path: &std::path::Path) -> String {
    format!("exported {} reviewed labels to {}", store.reviewed_labels().len(), path.display())
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{}", summary.trim_end());
            0
        }
        Err(e) => {
            eprintln!("txncat: {e}");
            e.exit_code()
        }
    }
}
