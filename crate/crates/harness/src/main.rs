use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::process::ExitCode;

use clap::Parser;
use clup_harness::cli::{Cli, Format};
use clup_harness::experiments::run;
use clup_harness::records::{write_csv, write_json};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match cli.into_config() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let records = run(&config);
    let sink: Box<dyn Write> = match &config.output_path {
        Some(path) => match File::create(path) {
            Ok(f) => Box::new(BufWriter::new(f)),
            Err(e) => {
                eprintln!("error: cannot create {}: {e}", path.display());
                return ExitCode::from(1);
            }
        },
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    let name = config.task.name();
    let written = match config.format {
        Format::Csv => write_csv(sink, name, &records),
        Format::Json => write_json(sink, name, &records),
    };
    if let Err(e) = written {
        eprintln!("error: writing records: {e}");
        return ExitCode::from(1);
    }
    let failed = records.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        eprintln!("{failed} of {} rows failed", records.len());
        return ExitCode::from(1);
    }
    ExitCode::SUCCESS
}
