use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use overlap_ad_core::bench::{self, load_configs, parse_grouping, prepare_run, read_records, run_suite, train};
use overlap_ad_core::synth::{self, AnomalyType, SynthSpec};

#[derive(Parser)]
#[command(name = "overlap-ad", version, about = "Overlap-loss anomaly detection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configuration in a JSON file and append records as JSON lines.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Results file; defaults to the config's `output`, else stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic dataset as CSV.
    Synth {
        #[arg(long = "type")]
        anomaly_type: AnomalyType,
        /// CSV whose normal rows are fitted, or `builtin:2d`.
        #[arg(long, default_value = synth::BUILTIN_2D)]
        source: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long, default_value_t = 0.05)]
        ratio: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 950)]
        n_normals: usize,
    },
    /// Aggregate a results file.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "loss,dataset,gamma_l")]
        group: String,
        #[arg(long, default_value = "overlap")]
        baseline: String,
    },
    /// Representation-layer outputs for each test row of the first repeat.
    DumpEmbeddings {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(config: PathBuf, out: Option<PathBuf>) -> Result<bool> {
    let configs = load_configs(&config).with_context(|| format!("reading {}", config.display()))?;
    let target = out.or_else(|| configs[0].output.clone());
    let mut sink: Box<dyn Write> = match &target {
        Some(p) => Box::new(BufWriter::new(
            File::options().create(true).append(true).open(p).with_context(|| format!("opening {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    };
    let mut all_ok = true;
    for (i, cfg) in configs.iter().enumerate() {
        match run_suite(cfg, Some(&mut *sink)) {
            Ok(records) => all_ok &= records.iter().all(|r| r.is_ok()),
            Err(e) => {
                log::error!("run {i}: {e}");
                all_ok = false;
            }
        }
    }
    sink.flush()?;
    Ok(all_ok)
}

fn synth_cmd(
    anomaly_type: AnomalyType,
    source: String,
    out: PathBuf,
    alpha: Option<f64>,
    ratio: f64,
    seed: u64,
    n_normals: usize,
) -> Result<()> {
    let spec = SynthSpec {
        alpha,
        anomaly_ratio: ratio,
        n_normals,
        ..SynthSpec::new(anomaly_type, seed)
    };
    spec.validate()?;
    let src = bench::DatasetSource::Synth(bench::SynthSource { source, spec });
    src.load()?.write_csv(&out)?;
    Ok(())
}

fn report_cmd(input: PathBuf, group: String, baseline: String) -> Result<()> {
    let records = read_records(BufReader::new(
        File::open(&input).with_context(|| format!("opening {}", input.display()))?,
    ))?;
    if records.is_empty() {
        bail!("{} holds no records", input.display());
    }
    let table = bench::report(&records, &parse_grouping(&group)?, &baseline)?;
    print!("{}", table.render());
    Ok(())
}

fn dump_embeddings(config: PathBuf, out: PathBuf) -> Result<()> {
    let cfg = load_configs(&config)?.swap_remove(0);
    let dataset = cfg.dataset.load()?;
    let run = prepare_run(&cfg, &dataset, cfg.base_seed)?;
    let model = train(&cfg, &run.train, cfg.base_seed)?;
    let emb = model.embed(run.test.features())?;
    let mut w = csv::Writer::from_path(&out)?;
    let mut header: Vec<String> = (0..emb.cols()).map(|j| format!("h{j}")).collect();
    header.push("label".into());
    w.write_record(&header)?;
    for (row, &label) in emb.row_iter().zip(run.test.labels()) {
        let mut fields: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        fields.push(u8::from(label).to_string());
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let result = match Cli::parse().command {
        Command::Run { config, out } => run(config, out),
        Command::Synth {
            anomaly_type,
            source,
            out,
            alpha,
            ratio,
            seed,
            n_normals,
        } => synth_cmd(anomaly_type, source, out, alpha, ratio, seed, n_normals).map(|_| true),
        Command::Report { input, group, baseline } => report_cmd(input, group, baseline).map(|_| true),
        Command::DumpEmbeddings { config, out } => dump_embeddings(config, out).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("one or more runs failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
