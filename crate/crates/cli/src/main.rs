use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gibbslab_cli::config::ExperimentConfig;
use gibbslab_cli::run::{execute, Paths, RunError};
use gibbslab_cli::{archive, exit, report, thread_count};

#[derive(Parser)]
#[command(name = "gibbslab", version, about = "Gibbs ensembles for truncated dispersive PDEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment config and write its JSON and CSV reports.
    Run { config: PathBuf },
    /// Print an ensemble archive's header and basic statistics.
    Inspect { archive: PathBuf },
    /// Summarize every report in a directory.
    Report { dir: PathBuf },
}

fn code(c: i32) -> ExitCode {
    ExitCode::from(c as u8)
}

fn run(path: &Path) -> i32 {
    let (cfg, text) = match ExperimentConfig::load(path) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {}: {e}", path.display());
            return exit::INVALID;
        }
    };
    let name = cfg.name.clone().unwrap_or_else(|| {
        path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "report".into())
    });
    let paths = Paths::for_config(&cfg, path);
    let rep = match execute(&cfg, &text, &name, &paths) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return match e {
                RunError::Input(_) | RunError::Archive(_) => exit::INVALID,
                RunError::Numerical(gibbslab::Error::Parameter(_)) => exit::INVALID,
                _ => exit::NUMERICAL,
            };
        }
    };
    match rep.write(&paths.report_dir) {
        Ok((json, csv)) => println!("wrote {} and {}", json.display(), csv.display()),
        Err(e) => {
            eprintln!("error: writing reports: {e}");
            return exit::NUMERICAL;
        }
    }
    match rep.pass {
        Some(true) => println!("PASS {name}"),
        Some(false) => println!("FAIL {name}"),
        None => println!("DONE {name}"),
    }
    if rep.pass == Some(false) {
        exit::FAIL
    } else {
        exit::OK
    }
}

fn inspect(path: &Path) -> i32 {
    match archive::read(path) {
        Ok((header, samples)) => {
            println!("{}", serde_json::to_string_pretty(&header).unwrap_or_default());
            let masses: Vec<f64> = samples.iter().map(|u| u.mass()).collect();
            if !masses.is_empty() {
                let m = gibbslab::Estimate::of_mean(&masses);
                println!("mean mass {} ± {}", m.value, m.stderr);
            }
            exit::OK
        }
        Err(e) => {
            eprintln!("error: {}: {e}", path.display());
            exit::INVALID
        }
    }
}

fn summarize(dir: &Path) -> i32 {
    let reports = match report::collect(dir) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return exit::INVALID;
        }
    };
    let table = report::summary_table(&reports);
    println!("{}", table.columns.join("\t"));
    for r in &table.rows {
        println!("{}", r.join("\t"));
    }
    let out = dir.join("summary.csv");
    let written = csv::Writer::from_path(&out).and_then(|mut w| {
        w.write_record(&table.columns)?;
        for r in &table.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    });
    if let Err(e) = written {
        eprintln!("error: {}: {e}", out.display());
        return exit::NUMERICAL;
    }
    if reports.iter().any(|(_, r)| r.pass == Some(false)) {
        exit::FAIL
    } else {
        exit::OK
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(thread_count()).build_global() {
        eprintln!("warning: {e}");
    }
    code(match cli.command {
        Command::Run { config } => run(&config),
        Command::Inspect { archive } => inspect(&archive),
        Command::Report { dir } => summarize(&dir),
    })
}
