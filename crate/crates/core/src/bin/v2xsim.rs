use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use v2xsim::link::{McsTable, MiCurves};
use v2xsim::report::{self, MatrixSpec};
use v2xsim::{ConfigError, Error, SimConfig, Technology};

#[derive(Debug, Parser)]
#[command(name = "v2xsim", version, about = "Network-sliced C-V2X highway simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one configuration.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Also write per-TTI debug CSVs.
        #[arg(long)]
        trace: bool,
        /// Extra `key=value` overrides applied after the config file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run the cross product of scenarios, technologies, sigmas and seeds.
    Matrix {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        scenarios: Vec<u8>,
        #[arg(long, value_delimiter = ',', default_value = "rsu,ns,ns_relay")]
        tech: Vec<Technology>,
        #[arg(long, value_delimiter = ',', default_value = "5,50")]
        sigmas: Vec<f64>,
        /// Number of seeds, counting up from the config's seed.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Print the fully resolved configuration.
    Config {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Regenerate the MCS table and MI curves into a directory.
    Tables {
        #[arg(long, default_value = "tables")]
        out: PathBuf,
    },
}

fn load_config(path: &Path, overrides: &[String]) -> Result<SimConfig, Error> {
    let mut config = SimConfig::from_path(path)?;
    for o in overrides {
        let (key, value) = o.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: 0,
            text: o.clone(),
        })?;
        let key = key.trim();
        if key == "scenario" {
            let s = value.trim().parse().map_err(|e: std::num::ParseIntError| ConfigError::BadValue {
                key: key.into(),
                value: value.into(),
                reason: e.to_string(),
            })?;
            config.set_scenario(s)?;
        } else {
            config.set(key, value.trim())?;
        }
    }
    config.validate()?;
    Ok(config)
}

fn finish(out: &Path, result: Result<report::MatrixResult, Error>) -> Result<(), Error> {
    let written = result.and_then(|r| {
        print!("{}", report::prr_table_csv(&r));
        report::write_outputs(out, &r)
    });
    match written {
        Ok(files) => {
            eprintln!("wrote {} files to {}", files.len(), out.display());
            Ok(())
        }
        Err(e) => {
            report::remove_outputs(out);
            Err(e)
        }
    }
}

fn execute(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run {
            config,
            seed,
            out,
            trace,
            overrides,
        } => {
            let mut config = load_config(&config, &overrides)?;
            if let Some(s) = seed {
                config.seed = s;
            }
            let tables = report::load_tables(&config)?;
            finish(&out, report::run_single(&config, &tables, trace))
        }
        Command::Matrix {
            config,
            scenarios,
            tech,
            sigmas,
            seeds,
            out,
            overrides,
        } => {
            let base = load_config(&config, &overrides)?;
            let spec = MatrixSpec {
                scenarios,
                technologies: tech,
                sigmas_m: sigmas,
                seeds: (0..seeds).map(|i| base.seed + i).collect(),
            };
            let tables = report::load_tables(&base)?;
            finish(&out, report::run_matrix(&base, &spec, &tables))
        }
        Command::Config { config } => {
            let config = match config {
                Some(p) => SimConfig::from_path(&p)?,
                None => SimConfig::default(),
            };
            print!("{}", config.echo());
            Ok(())
        }
        Command::Tables { out } => {
            std::fs::create_dir_all(&out).map_err(|e| Error::Io {
                path: out.clone(),
                source: e,
            })?;
            for (name, text) in [
                ("mcs_table_v1.csv", McsTable::standard().to_csv()),
                ("mi_curves_v1.csv", MiCurves::generate().to_csv()),
            ] {
                let path = out.join(name);
                std::fs::write(&path, &text).map_err(|e| Error::Io {
                    path: path.clone(),
                    source: e,
                })?;
                println!("{name} sha256={}", report::sha256_hex(text.as_bytes()));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
