use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use hfe::commands::{cmd_eval, cmd_gen_synth, cmd_mine_debug, cmd_project, cmd_train, CHECKPOINT_FILE};
use hfe::config::RunConfig;
use hfe::CliError;

#[derive(Parser)]
#[command(name = "hfe", version, about = "Hierarchical feature embedding for attribute recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic hierarchical dataset as CSV.
    GenSynth {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        synth: SynthArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write config, log and checkpoint to the output directory.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        synth: SynthArgs,
    },
    /// Report metrics and embedding diagnostics of a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Export a 2-D PCA projection of one attribute's embeddings.
    Project {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 0)]
        attr: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dump the quintuplets mined from one sampled batch.
    MineDebug {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Identities per batch (defaults to the checkpoint's).
        #[arg(long)]
        num_ids: Option<usize>,
        /// Samples per identity (defaults to the checkpoint's).
        #[arg(long)]
        imgs_per_id: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. `--set alpha3=2.5` or `--set synth.seed=4`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

macro_rules! override_args {
    ($name:ident, { $($field:ident : $ty:ty),* $(,)? }) => {
        #[derive(Args)]
        struct $name {
            $(
                #[arg(long)]
                $field: Option<$ty>,
            )*
        }

        impl $name {
            fn overrides(&self) -> Vec<String> {
                let mut out = Vec::new();
                $(
                    if let Some(v) = &self.$field {
                        out.push(format!("{}={}", stringify!($field), toml_literal(v)));
                    }
                )*
                out
            }
        }
    };
}

trait TomlLiteral {
    fn literal(&self) -> String;
}

macro_rules! plain_literal {
    ($($t:ty),*) => { $(impl TomlLiteral for $t { fn literal(&self) -> String { self.to_string() } })* };
}
plain_literal!(u64, usize, bool);

impl TomlLiteral for f64 {
    fn literal(&self) -> String {
        format!("{self:?}")
    }
}

impl TomlLiteral for String {
    fn literal(&self) -> String {
        format!("{self:?}")
    }
}

impl TomlLiteral for PathBuf {
    fn literal(&self) -> String {
        format!("{:?}", self.display().to_string())
    }
}

fn toml_literal<T: TomlLiteral>(v: &T) -> String {
    v.literal()
}

override_args!(RunArgs, {
    dataset: PathBuf,
    out_dir: PathBuf,
    epochs: u64,
    log_every: u64,
    log_format: String,
    alpha1: f64,
    alpha2: f64,
    alpha3: f64,
    w0: f64,
    embed_dim: usize,
    num_ids: usize,
    imgs_per_id: usize,
    learning_rate: f64,
    weight_decay: f64,
    seed: u64,
    use_inter: bool,
    use_intra: bool,
    use_abr: bool,
    use_dynamic_weight: bool,
    use_pairwise_intra: bool,
});

override_args!(SynthArgs, {
    synth_num_ids: usize,
    synth_samples_per_id: usize,
    synth_num_attrs: usize,
    synth_feature_dim: usize,
    synth_attr_sep: f64,
    synth_id_sep: f64,
    synth_id_class_sep: f64,
    synth_noise: f64,
    synth_hard_frac: f64,
    synth_seed: u64,
});

fn load_config(config: &ConfigArgs, extra: Vec<String>) -> Result<RunConfig, CliError> {
    // Explicit flags win over `--set`, which wins over the file.
    let mut all = config.overrides.clone();
    all.extend(extra);
    RunConfig::load(config.config.as_deref(), &all)
}

fn synth_overrides(synth: &SynthArgs) -> Vec<String> {
    synth
        .overrides()
        .into_iter()
        .map(|o| o.replacen("synth_", "synth.", 1))
        .collect()
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::GenSynth { config, synth, out } => {
            let cfg = load_config(&config, synth_overrides(&synth))?;
            let n = cmd_gen_synth(&cfg.synth, &out)?;
            println!("wrote {n} samples to {}", out.display());
        }
        Command::Train { config, run, synth } => {
            let mut extra = synth_overrides(&synth);
            extra.extend(run.overrides());
            let cfg = load_config(&config, extra)?;
            let outcome = cmd_train(&cfg)?;
            if let Some(r) = outcome.last {
                println!("step {}: ce {} hfe {} total {}", outcome.steps - 1, r.ce, r.hfe, r.total);
            }
            println!(
                "trained {} steps; checkpoint {}",
                outcome.steps,
                outcome.out_dir.join(CHECKPOINT_FILE).display()
            );
        }
        Command::Eval {
            checkpoint,
            dataset,
            json,
        } => {
            let report = cmd_eval(&checkpoint, &dataset)?;
            print!("{}", report.table());
            if let Some(path) = json {
                std::fs::write(&path, report.to_json()).map_err(|e| CliError::io(&path, e))?;
            }
        }
        Command::Project {
            checkpoint,
            dataset,
            attr,
            out,
        } => {
            let n = cmd_project(&checkpoint, &dataset, attr, &out)?;
            println!("wrote {n} projected rows to {}", out.display());
        }
        Command::MineDebug {
            checkpoint,
            dataset,
            seed,
            num_ids,
            imgs_per_id,
            out,
        } => {
            let n = cmd_mine_debug(&checkpoint, &dataset, seed, num_ids, imgs_per_id, &out)?;
            println!("wrote {n} quintuplets to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
