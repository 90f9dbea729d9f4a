use std::fs::File;
use std::io::{self, Write};
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use fusekit_bench::{
    bench_datasize, bench_datatype, bench_hf, bench_ipo, bench_vf, bench_vf_hf, report_memory,
    write_csv, write_memory_csv, BenchConfig, BenchError, DATATYPE_PAIRS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Experiment {
    Vf,
    Hf,
    VfHf,
    Ipo,
    Datasize,
    Datatype,
    Memory,
}

/// Fused versus unfused pipeline benchmarks, written as CSV.
#[derive(Debug, Parser)]
#[command(name = "bench", version)]
struct Cli {
    #[arg(value_enum)]
    experiment: Experiment,
    /// Timed repetitions per data point (at least 3).
    #[arg(long, default_value_t = 30)]
    repeats: usize,
    /// Untimed repetitions run before the timed ones.
    #[arg(long, default_value_t = 2)]
    warmup: usize,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Adjacent elements processed per step: 1, 2, 4, 8 or 16.
    #[arg(long, default_value_t = 16)]
    coarsen: usize,
    /// Also write the CSV to this file.
    #[arg(long)]
    csv: Option<String>,
    /// Seed for the random inputs.
    #[arg(long, default_value_t = 0x5eed)]
    seed: u64,
}

fn emit(cli: &Cli, write: impl Fn(&mut dyn Write) -> Result<(), BenchError>) -> Result<(), BenchError> {
    write(&mut io::stdout().lock())?;
    if let Some(path) = &cli.csv {
        write(&mut File::create(path)?)?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), BenchError> {
    let cfg = BenchConfig::new(cli.repeats, cli.warmup, cli.threads, cli.coarsen, cli.seed)?;
    eprintln!(
        "# threads={} coarsen={} chunk_rows={} repeats={} warmup={} seed={}",
        cli.threads, cli.coarsen, cfg.exec.chunk_rows, cli.repeats, cli.warmup, cli.seed
    );
    let records = match cli.experiment {
        Experiment::Vf => bench_vf(&cfg, &[2, 102, 202], (4096, 2160))?,
        Experiment::Hf => bench_hf(&cfg, &[10, 50, 150, 600], (60, 120))?,
        Experiment::VfHf => bench_vf_hf(&cfg, &[2, 100, 1000, 10000], 50, (60, 120))?,
        Experiment::Ipo => {
            let per_op: Vec<usize> = (1..=496).step_by(5).collect();
            bench_ipo(&cfg, 500, &per_op, (1024, 1024))?
        }
        Experiment::Datasize => bench_datasize(&cfg, &[100, 10_000, 1_000_000, 16_654_030])?,
        Experiment::Datatype => bench_datatype(&cfg, &DATATYPE_PAIRS, 50, (60, 120))?,
        Experiment::Memory => {
            let records = report_memory()?;
            return emit(cli, |w| write_memory_csv(&records, w));
        }
    };
    emit(cli, |w| write_csv(&records, w))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ BenchError::Gate { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
