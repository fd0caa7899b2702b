use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};

use crs::ablation::{self, AblationConfig};
use crs::config::{config_keys, Config, SEED_ENV};
use crs::trainer::{self, DatasetEntry};
use crs::volume::{read_volume, write_volume, Grid};
use crs::{ConsistencyMode, Error, Network, Result};

#[derive(Parser, Debug)]
#[command(name = "crs", version, about = "Recurrent mask propagation through image volumes")]
struct Cli {
    /// JSON config file; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice; overrides the config and CRS_SEED.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Log level (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic volume/label pairs.
    Synth {
        /// JSON synth spec; defaults to the config's `synth` section.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Number of pairs; pair i uses seed + i.
        #[arg(long, default_value_t = 1)]
        count: usize,
    },
    /// Train a network.
    Train {
        /// JSON list of {volume, labels} entries; replaces train.dataset.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Segment a volume with a trained checkpoint.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        volume: PathBuf,
        /// Label volume whose first slice seeds the objects; watershed if absent.
        #[arg(long)]
        seed_labels: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Fail unless the checkpoint was trained in this mode.
        #[arg(long)]
        mode: Option<ConsistencyMode>,
    },
    /// Adapted Rand error of a prediction against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// CSV the result is appended to.
        #[arg(long, default_value = "eval.csv")]
        report: PathBuf,
    },
    /// Train and evaluate each consistency mode per seed.
    Ablate {
        /// Comma-separated modes; defaults to ablate.modes.
        #[arg(long, value_delimiter = ',')]
        modes: Option<Vec<ConsistencyMode>>,
        /// Comma-separated seeds; defaults to ablate.seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render SVG charts from an ablation report.
    Plot {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn help_keys() -> String {
    let mut s = String::from("Config keys (JSON, dotted path = default):\n");
    for (k, v) in config_keys() {
        s.push_str(&format!("  {k} = {v}\n"));
    }
    s.push_str(&format!(
        "\nEnvironment:\n  {SEED_ENV}  overrides `seed` from the config file\n"
    ));
    s
}

fn load_config(cli: &Cli) -> Result<Config> {
    let cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let mut cfg = cfg.resolve()?;
    if let Some(seed) = cli.seed {
        cfg.apply_seed(seed);
    }
    Ok(cfg)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Storage {
        path: path.to_path_buf(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line() as u64,
        message: format!("{}: {e}", path.display()),
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Storage {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Synth { spec, out, count } => {
            let mut spec = match spec {
                Some(p) => read_json(&p)?,
                None => cfg.synth.clone(),
            };
            if cli.seed.is_some() || std::env::var(SEED_ENV).is_ok() {
                spec.seed = cfg.seed;
            }
            create_dir(&out)?;
            let base = spec.seed;
            let mut entries = Vec::with_capacity(count);
            for i in 0..count {
                spec.seed = base.wrapping_add(i as u64);
                let (v, l) = crs::generate(&spec)?;
                let entry = DatasetEntry {
                    volume: out.join(format!("volume_{i:03}.vol1")),
                    labels: out.join(format!("labels_{i:03}.vol1")),
                };
                write_volume(&entry.volume, &Grid::F32(v))?;
                write_volume(&entry.labels, &Grid::Labels(l))?;
                println!("{} {}", entry.volume.display(), entry.labels.display());
                entries.push(entry);
            }
            let manifest = serde_json::to_vec_pretty(&entries).map_err(|e| Error::Encoding(e.to_string()))?;
            crs::volume::write_atomic(&out.join("dataset.json"), &manifest)?;
        }
        Command::Train {
            dataset,
            epochs,
            learning_rate,
            output_dir,
        } => {
            let mut train = cfg.train.clone();
            if let Some(p) = dataset {
                train.dataset = read_json(&p)?;
            }
            if let Some(e) = epochs {
                train.epochs = e;
                train.teacher_forced_epochs = train.teacher_forced_epochs.min(e);
            }
            if let Some(lr) = learning_rate {
                train.learning_rate = lr;
            }
            if let Some(d) = output_dir {
                train.output_dir = d;
            }
            let last = trainer::train(&cfg.model, &train, &cfg.infer)?;
            println!("{}", last.display());
        }
        Command::Infer {
            checkpoint,
            volume,
            seed_labels,
            out,
            mode,
        } => {
            let net = Network::<f32>::load(&checkpoint)?;
            if let Some(m) = mode {
                if m != net.mode() {
                    return Err(Error::Mode(format!(
                        "checkpoint {} was trained as {}, not {m}",
                        checkpoint.display(),
                        net.mode()
                    )));
                }
            }
            let v = read_volume(&volume)?.into_volume()?;
            let seed = match seed_labels {
                Some(p) => Some(read_volume(&p)?.into_labels()?.slice(0)?),
                None => None,
            };
            let pred = crs::infer_volume(&v, seed.as_ref(), &net, &cfg.infer)?;
            write_volume(&out, &Grid::Labels(pred.labels))?;
            println!("{}", out.display());
        }
        Command::Eval { pred, gt, report } => {
            let p = read_volume(&pred)?.into_labels()?;
            let g = read_volume(&gt)?.into_labels()?;
            let ari = crs::adapted_rand_error(&p, &g)?;
            println!("{ari}");
            let fresh = !report.exists();
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&report)
                .map_err(|e| Error::Storage {
                    path: report.clone(),
                    source: e,
                })?;
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
            if fresh {
                w.write_record(["pred", "gt", "ari"])
                    .map_err(|e| Error::Encoding(e.to_string()))?;
            }
            w.write_record([pred.display().to_string(), gt.display().to_string(), ari.to_string()])
                .map_err(|e| Error::Encoding(e.to_string()))?;
            let bytes = w.into_inner().map_err(|e| Error::Encoding(e.to_string()))?;
            f.write_all(&bytes).map_err(|e| Error::Storage {
                path: report,
                source: e,
            })?;
        }
        Command::Ablate { modes, seeds, out } => {
            let mut ab: AblationConfig = cfg.ablate.clone();
            if let Some(o) = out {
                ab.output_dir = o;
            }
            let modes = modes.unwrap_or_else(|| ab.modes.clone());
            let seeds = seeds.unwrap_or_else(|| ab.seeds.clone());
            let cells = ablation::ablate(&cfg.train, &cfg.infer, &ab, &modes, &seeds)?;
            create_dir(&ab.output_dir)?;
            let rows: Vec<_> = cells.iter().map(Into::into).collect();
            let report = ab.output_dir.join("report.csv");
            ablation::write_report(&report, &rows)?;
            ablation::write_identity(&ab.output_dir.join("identity.csv"), &cells)?;
            for path in ablation::plot(&rows, &ab.output_dir)? {
                println!("{}", path.display());
            }
            println!("{}", report.display());
        }
        Command::Plot { report, out } => {
            let rows = ablation::read_report(&report)?;
            for path in ablation::plot(&rows, &out)? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let matches = Cli::command().after_long_help(help_keys()).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(&cli.log)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::FAILURE
        }
    }
}
