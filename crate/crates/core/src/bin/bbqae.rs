use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{info, LevelFilter};
use serde_json::json;

use bbqae::channels::NoisyDataset;
use bbqae::experiments::{
    evaluate_channels, run_cross_test, run_dataset_stats, run_entropy_flow, run_impedance_table,
    run_tolerance_sweep, train_on, training_set, write_csv, ConfigFile, ExperimentConfig, ExperimentKind, Manifest,
};
use bbqae::network::{output_fidelities, QuantumMap};
use bbqae::states::{make_ghz, mean_and_std};
use bbqae::{Error, Result};

/// Brainbox quantum autoencoder experiments.
#[derive(Parser, Debug)]
#[command(name = "bbqae", version, about)]
struct Cli {
    /// Config file (`key = value`, `[section]` headers).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Base seed; runs use seed, seed + 1, ...
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_name = "FILE")]
    checkpoint_in: Option<PathBuf>,
    #[arg(long, global = true, value_name = "FILE")]
    checkpoint_out: Option<PathBuf>,
    #[arg(long, global = true, value_name = "FILE")]
    dataset_in: Option<PathBuf>,
    #[arg(long, global = true, value_name = "FILE")]
    dataset_out: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Test fidelity against noise level; noise-tolerance thresholds.
    Sweep,
    /// Training impedance per network and noise level.
    Impedance,
    /// Train on one channel, score reconstruction error on all channels.
    Crosstest,
    /// Ideal-state frequency in bit-flip training sets.
    Datastats,
    /// Layer entropies during training.
    Entropy,
    /// Train one network; writes trace and checkpoint.
    Train,
    /// Score a checkpoint on test channels or a dataset.
    Test,
}

impl Command {
    fn kind(self) -> ExperimentKind {
        match self {
            Command::Sweep => ExperimentKind::ToleranceSweep,
            Command::Impedance => ExperimentKind::Impedance,
            Command::Crosstest => ExperimentKind::CrossTest,
            Command::Datastats => ExperimentKind::DatasetStats,
            Command::Entropy => ExperimentKind::EntropyFlow,
            Command::Train => ExperimentKind::Train,
            Command::Test => ExperimentKind::Test,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => LevelFilter::Warn,
        1 => LevelFilter::Info,
        _ => LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 2 } else { 1 })
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot set up {n} threads: {e}")))?;
    }
    let config = resolve_config(cli)?;
    let dir = config.out_dir.clone();
    let mut manifest = Manifest::new(&config);
    match cli.command {
        Command::Sweep => {
            let r = run_tolerance_sweep(&config)?;
            manifest.outputs = r.write(&dir)?;
            manifest.summary = r.summary();
        }
        Command::Impedance => {
            let r = run_impedance_table(&config)?;
            manifest.outputs = r.write(&dir)?;
            manifest.summary = r.summary();
        }
        Command::Crosstest => {
            let map = cli.checkpoint_in.as_deref().map(read_checkpoint).transpose()?;
            let r = run_cross_test(&config, map.as_ref())?;
            manifest.outputs = r.write(&dir)?;
            manifest.summary = r.summary();
        }
        Command::Datastats => {
            let r = run_dataset_stats(&config)?;
            manifest.outputs = r.write(&dir)?;
            manifest.summary = r.summary();
        }
        Command::Entropy => {
            let r = run_entropy_flow(&config)?;
            manifest.outputs = r.write(&dir)?;
            manifest.summary = r.summary();
        }
        Command::Train => train_command(cli, &config, &mut manifest)?,
        Command::Test => test_command(cli, &config, &mut manifest)?,
    }
    let path = manifest.write(&dir)?;
    println!("{}", serde_json::to_string_pretty(&manifest.summary).unwrap_or_default());
    info!("manifest written to {}", path.display());
    Ok(())
}

fn resolve_config(cli: &Cli) -> Result<ExperimentConfig> {
    let kind = cli.command.kind();
    let mut config = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read config file {}: {e}", path.display())))?;
            ConfigFile::parse(&text)?.resolve(kind)?
        }
        None => ExperimentConfig::for_kind(kind),
    };
    for item in &cli.overrides {
        let (key, value) =
            item.split_once('=').ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{item}`")))?;
        config.set(key.trim(), value.trim())?;
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(dir) = &cli.out_dir {
        config.out_dir = dir.clone();
    }
    Ok(config)
}

fn read_checkpoint(path: &Path) -> Result<QuantumMap> {
    let mut input = BufReader::new(File::open(path)?);
    Ok(QuantumMap::read_checkpoint(&mut input)?.0)
}

fn read_dataset(path: &Path) -> Result<NoisyDataset> {
    NoisyDataset::read_text(BufReader::new(File::open(path)?))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn train_command(cli: &Cli, config: &ExperimentConfig, manifest: &mut Manifest) -> Result<()> {
    config.validate()?;
    let topology = config.topologies()?.swap_remove(0);
    let dataset = match &cli.dataset_in {
        Some(path) => read_dataset(path)?,
        None => training_set(&make_ghz(topology.input_size())?, config.noise, config.p_train, config.n_data, config.seed)?,
    };
    if dataset.target.n_qubits() != topology.input_size() {
        return Err(Error::Config(format!("dataset has {} qubits, network {topology} expects {}", dataset.target.n_qubits(), topology.input_size())));
    }
    let mut config = config.clone();
    if config.trainer.checkpoint_every > 0 {
        config.trainer.checkpoint_dir = Some(config.out_dir.join("checkpoints"));
    }
    let run = train_on(&config, &topology, dataset, config.seed)?;
    let dir = &config.out_dir;
    fs::create_dir_all(dir)?;
    let mut trace = create(&dir.join("trace.csv"))?;
    run.trace.write_csv(&mut trace, topology.n_layers(), false)?;
    trace.flush()?;
    manifest.outputs.push("trace.csv".into());

    let checkpoint = cli.checkpoint_out.clone().unwrap_or_else(|| dir.join("checkpoint.bbqc"));
    let mut out = create(&checkpoint)?;
    run.map.write_checkpoint(&mut out, config.trainer.n_iterations as u64)?;
    out.flush()?;
    manifest.outputs.push(checkpoint.display().to_string());
    if let Some(path) = &cli.dataset_out {
        let mut out = create(path)?;
        run.dataset.write_text(&mut out)?;
        out.flush()?;
        manifest.outputs.push(path.display().to_string());
    }
    let target = config.trainer.fidelity_target;
    manifest.summary = json!({
        "topology": topology.to_string(),
        "p": run.p,
        "final_fidelity": run.trace.final_fidelity(),
        "first_hit": run.trace.first_hit(target),
        "impedance": bbqae::trainer::training_impedance(&run.trace, target, config.trainer.n_iterations),
    });
    Ok(())
}

fn test_command(cli: &Cli, config: &ExperimentConfig, manifest: &mut Manifest) -> Result<()> {
    let path = cli.checkpoint_in.as_deref().ok_or_else(|| Error::Config("test needs --checkpoint-in".into()))?;
    let map = read_checkpoint(path)?;
    let dir = &config.out_dir;
    let header = ["channel", "p_test", "mean_fidelity", "fidelity_std", "r"];
    let rows: Vec<Vec<String>> = match &cli.dataset_in {
        Some(path) => {
            let dataset = read_dataset(path)?;
            let (mean, std) = mean_and_std(&output_fidelities(&map, &dataset)?);
            vec![vec![
                dataset.spec.kind.to_string(),
                dataset.spec.p.to_string(),
                mean.to_string(),
                std.to_string(),
                (1.0 - mean).clamp(0.0, 1.0).to_string(),
            ]]
        }
        None => {
            config.validate()?;
            evaluate_channels(&map, config, config.seed)?
                .iter()
                .map(|s| {
                    vec![
                        s.channel.to_string(),
                        s.p_test.to_string(),
                        (1.0 - s.r).to_string(),
                        s.fidelity_std.to_string(),
                        s.r.to_string(),
                    ]
                })
                .collect()
        }
    };
    manifest.outputs.push(write_csv(dir, "test.csv", &header, &rows)?);
    manifest.summary = json!({
        "topology": map.topology().to_string(),
        "max_r": rows.iter().filter_map(|r| r[4].parse::<f64>().ok()).fold(0.0, f64::max),
    });
    Ok(())
}
