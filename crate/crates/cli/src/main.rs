use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use braintorrent::data::{generate_dataset, read_dataset, write_dataset};
use braintorrent::experiments::{
    report, rerun_manifest, run_experiment1, run_experiment2, run_tcp_node, run_to_dir, ExperimentConfig, Mode,
    NodeOptions, Seeds, TransportConfig,
};
use braintorrent::transport::PeerAddress;
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

#[derive(Parser)]
#[command(name = "braintorrent", version, about = "Federated and peer-to-peer training experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and write metrics, weights and a manifest.
    Run(RunArgs),
    /// Generate or inspect a synthetic dataset file.
    Dataset {
        #[command(subcommand)]
        command: DatasetCommand,
    },
    /// Summarise every run below a directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Client-count sweep with pooled and only-client baselines.
    Experiment1(SweepArgs),
    /// Cohort split with FLS, BrainTorrent and pooled training.
    Experiment2(SweepArgs),
}

#[derive(Subcommand)]
enum DatasetCommand {
    Gen {
        #[command(flatten)]
        base: BaseArgs,
        #[arg(long)]
        out: PathBuf,
    },
    Dump {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TransportKind {
    Sim,
    Tcp,
}

#[derive(Args)]
struct BaseArgs {
    /// JSON experiment config; unknown keys are rejected.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Derive all four seeds from one number.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    seed_data: Option<u64>,
    #[arg(long)]
    seed_init: Option<u64>,
    #[arg(long)]
    seed_shuffle: Option<u64>,
    #[arg(long)]
    seed_initiator: Option<u64>,
}

impl BaseArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                ExperimentConfig::from_json(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => ExperimentConfig::default(),
        };
        self.apply_seeds(&mut cfg);
        Ok(cfg)
    }

    fn apply_seeds(&self, cfg: &mut ExperimentConfig) {
        if let Some(base) = self.seed {
            cfg.seeds = Seeds::from_base(base);
        }
        let s = &mut cfg.seeds;
        s.data = self.seed_data.unwrap_or(s.data);
        s.init = self.seed_init.unwrap_or(s.init);
        s.shuffle = self.seed_shuffle.unwrap_or(s.shuffle);
        s.initiator = self.seed_initiator.unwrap_or(s.initiator);
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    base: BaseArgs,
    /// Re-run the config recorded in a manifest.
    #[arg(long, conflicts_with = "config")]
    manifest: Option<PathBuf>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    #[arg(long)]
    clients: Option<usize>,
    /// Server rounds; BrainTorrent gets the same number of fine-tunes.
    #[arg(long)]
    rounds: Option<u64>,
    #[arg(long, default_value = "run")]
    out: PathBuf,
    #[arg(long, value_enum)]
    transport: Option<TransportKind>,
    /// JSON list of `{"client_index": i, "endpoint": "host:port"}`.
    #[arg(long)]
    peers: Option<PathBuf>,
    /// Which client this process plays in a tcp run.
    #[arg(long)]
    client_index: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    base: BaseArgs,
    #[arg(long)]
    rounds: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: braintorrent::ExperimentError| e.to_string())
}

fn read_peers(path: &Path) -> Result<Vec<PeerAddress>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing peer table {}", path.display()))
}

fn run(args: RunArgs) -> Result<()> {
    if let Some(manifest) = &args.manifest {
        if args.mode.is_some() || args.clients.is_some() || args.rounds.is_some() || args.transport.is_some() {
            bail!("--manifest reproduces a run exactly; it cannot be combined with overrides");
        }
        let (m, _) = rerun_manifest(manifest, &args.out)?;
        println!("re-ran {} into {}", m.config.mode.as_str(), args.out.display());
        return Ok(());
    }
    let mut cfg = args.base.load()?;
    if let Some(mode) = args.mode {
        cfg.mode = mode;
    }
    if let Some(n) = args.clients {
        cfg.n_clients = n;
    }
    if let Some(r) = args.rounds {
        cfg.rounds_fls = r;
    }
    match args.transport {
        Some(TransportKind::Sim) => cfg.transport = TransportConfig::Sim,
        Some(TransportKind::Tcp) => {
            let Some(path) = &args.peers else {
                bail!("--transport tcp needs --peers");
            };
            cfg.transport = TransportConfig::Tcp {
                peers: read_peers(path)?,
            };
        }
        None => {
            if let Some(path) = &args.peers {
                cfg.transport = TransportConfig::Tcp {
                    peers: read_peers(path)?,
                };
            }
        }
    }
    cfg.validate()?;

    if let TransportConfig::Tcp { .. } = cfg.transport {
        let Some(index) = args.client_index else {
            bail!("a tcp run needs --client-index");
        };
        std::fs::create_dir_all(&args.out)?;
        std::fs::write(args.out.join("config.json"), cfg.to_json() + "\n")?;
        let out = run_tcp_node(&cfg, index, Some(&args.out), NodeOptions::default())?;
        println!(
            "client {index}: {} own updates, {} rounds initiated, final dice {:.4}",
            out.summary.own_update_count, out.summary.rounds_initiated, out.summary.final_dice
        );
        return Ok(());
    }

    let (manifest, output) = run_to_dir(&cfg, &args.out)?;
    let last = output.records.last();
    println!(
        "{} with {} client(s): avg client dice {:.4}, aggregated dice {:.4}, {} bytes; written to {}",
        manifest.config.mode.as_str(),
        manifest.shard_sizes.len(),
        last.map_or(f64::NAN, |r| r.avg_client_dice),
        last.map_or(f64::NAN, |r| r.aggregated_model_dice),
        last.map_or(0, |r| r.bytes_transferred),
        args.out.display()
    );
    Ok(())
}

fn dataset(command: DatasetCommand) -> Result<()> {
    match command {
        DatasetCommand::Gen { base, out } => {
            let cfg = base.load()?;
            let ds = generate_dataset(&cfg.gen_config())?;
            let mut w = BufWriter::new(File::create(&out).with_context(|| format!("creating {}", out.display()))?);
            write_dataset(&ds, &mut w)?;
            w.flush()?;
            println!("wrote {} train and {} test images to {}", ds.train.len(), ds.test.len(), out.display());
        }
        DatasetCommand::Dump { input } => {
            let f = File::open(&input).with_context(|| format!("opening {}", input.display()))?;
            let ds = read_dataset(BufReader::new(f))?;
            println!("classes: {}", ds.num_classes);
            println!("split  index  size    cohort  class pixels");
            for (split, images) in [("train", &ds.train), ("test", &ds.test)] {
                for (i, img) in images.iter().enumerate() {
                    let mut hist = vec![0usize; ds.num_classes];
                    img.labels.iter().for_each(|&l| hist[l] += 1);
                    println!("{split:<5}  {i:>5}  {}x{}  {:>8.3}  {hist:?}", img.height, img.width, img.cohort);
                }
            }
        }
    }
    Ok(())
}

fn sweep_config(args: &SweepArgs) -> Result<ExperimentConfig> {
    let mut cfg = args.base.load()?;
    if let Some(r) = args.rounds {
        cfg.rounds_fls = r;
    }
    cfg.transport = TransportConfig::Sim;
    Ok(cfg)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run(args) => run(args),
        Command::Dataset { command } => dataset(command),
        Command::Report { input } => {
            print!("{}", report(&input)?);
            Ok(())
        }
        Command::Experiment1(args) => {
            let cfg = sweep_config(&args)?;
            std::fs::create_dir_all(&args.out)?;
            let exp = run_experiment1(&cfg, Some(&args.out))?;
            info!("{} sweep runs finished", exp.runs.len());
            print!("{}\n{}", exp.summary.render(), exp.per_client.render());
            Ok(())
        }
        Command::Experiment2(args) => {
            let cfg = sweep_config(&args)?;
            std::fs::create_dir_all(&args.out)?;
            let exp = run_experiment2(&cfg, Some(&args.out))?;
            println!("shard sizes {:?}", exp.shard_sizes);
            print!("{}", exp.table.render());
            println!("braintorrent - fls average client dice: {:+.4}", exp.bt_minus_fls);
            Ok(())
        }
    }
}

