use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use pimip::analysis::{AnalyzerRegistry, Params, TaskStatus};
use pimip::annotation::GapPolicy;
use pimip::config::Config;
use pimip::platform::{ErrorClass, Platform, PlatformError};
use pimip::store::{ReportSource, StoreError};

/// Exit codes. Usage errors exit with 64.
mod exit {
    pub const FAILURE: u8 = 1;
    pub const PARSE: u8 = 2;
    pub const DUPLICATE: u8 = 3;
    pub const UNKNOWN_ANALYZER: u8 = 4;
    pub const NOT_FOUND: u8 = 5;
    pub const CONFLICT: u8 = 6;
    pub const USAGE: u8 = 64;
}

#[derive(Parser, Debug)]
#[command(name = "pimip", version, about = "Whole-slide image platform")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Folder holding the database and slide folders.
    #[arg(long, env = "PIMIP_DATA_DIR", default_value = "pimip-data", global = true)]
    data_dir: PathBuf,
    /// Deep Zoom tile size served to viewers.
    #[arg(long, env = "PIMIP_TILE_SIZE", default_value_t = 254, global = true)]
    tile_size: u32,
    /// Pen-lift time threshold for stroke gap closing, in ms.
    #[arg(long, env = "PIMIP_GAP_TAU_MS", default_value_t = GapPolicy::default().tau_ms, global = true)]
    gap_tau_ms: f64,
    /// Pen-lift distance threshold in viewport pixels.
    #[arg(long, env = "PIMIP_GAP_DELTA_PX", default_value_t = GapPolicy::default().delta_px, global = true)]
    gap_delta_px: f64,
    /// Analysis worker threads.
    #[arg(long, env = "PIMIP_WORKERS", default_value_t = 2, global = true)]
    workers: usize,
    /// Log filter, e.g. `info` or `pimip=debug`.
    #[arg(long, env = "PIMIP_LOG_LEVEL", default_value = "warn", global = true)]
    log_level: String,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Register a slide, build its pyramid and thumbnail; prints the slide id.
    Ingest {
        file: PathBuf,
        /// Slide id to use instead of a generated one.
        #[arg(long)]
        name: Option<String>,
        /// Scan magnification for files that do not declare `AppMag`.
        #[arg(long)]
        magnification: Option<f64>,
    },
    /// Run the HTTP server until interrupted; prints the listening URL.
    Serve {
        #[arg(long, env = "PIMIP_PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, env = "PIMIP_HOST", default_value = "127.0.0.1")]
        host: String,
    },
    /// Run an analyzer synchronously; prints the result folder.
    Analyze {
        slide: String,
        #[arg(long)]
        model: String,
        /// Analyzer parameter as `key=value`; repeatable.
        #[arg(long = "param", value_name = "KEY=VALUE")]
        params: Vec<String>,
    },
    /// Write a slide bundle; prints the bundle path.
    Export {
        slide: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Load a slide bundle; prints the slide id.
    Import { bundle: PathBuf },
    /// Print the registered slide ids.
    List,
    /// Structured reports.
    Report {
        #[command(subcommand)]
        command: ReportCommand,
    },
}

#[derive(Subcommand, Debug)]
enum ReportCommand {
    /// Attach a sectioned or CSV report to a slide; prints the slide id.
    Import {
        slide: String,
        file: PathBuf,
        /// tcga_import, manual or hospital_import.
        #[arg(long, default_value = "manual")]
        source: String,
    },
}

fn analyzer_help() -> String {
    let mut s = String::from("Analyzers:\n");
    for d in AnalyzerRegistry::with_builtins().list() {
        let params: Vec<String> = d.params_schema.iter().map(|p| format!("{}={}", p.name, p.default)).collect();
        s.push_str(&format!("  {:<18} {}\n", d.name, params.join(" ")));
    }
    s
}

struct Failure {
    code: u8,
    message: String,
}

impl From<PlatformError> for Failure {
    fn from(e: PlatformError) -> Self {
        let code = match (&e, e.class()) {
            (PlatformError::Store(StoreError::DuplicateSlideId(_)), _) => exit::DUPLICATE,
            (_, _) if e.code() == "UnknownAnalyzer" => exit::UNKNOWN_ANALYZER,
            (_, _) if e.slide_error().is_some() => exit::PARSE,
            (_, ErrorClass::NotFound) => exit::NOT_FOUND,
            (_, ErrorClass::Conflict) => exit::CONFLICT,
            _ => exit::FAILURE,
        };
        Failure {
            code,
            message: format!("{}: {e}", e.code()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure {
            code: exit::FAILURE,
            message: format!("IoFailure: {e}"),
        }
    }
}

fn config(g: &Global) -> Config {
    let mut c = Config::with_data_dir(&g.data_dir);
    c.tile_size = g.tile_size;
    c.gap = GapPolicy {
        tau_ms: g.gap_tau_ms,
        delta_px: g.gap_delta_px,
    };
    c.workers = g.workers;
    c.log_level = g.log_level.clone();
    c
}

fn parse_params(p: &Platform, model: &str, raw: &[String]) -> Result<Params, PlatformError> {
    let d = p.registry().descriptor(model)?;
    let mut params = Params::new();
    for kv in raw {
        let (k, v) = kv.split_once('=').ok_or_else(|| {
            PlatformError::InvalidRequest(format!("parameter `{kv}` is not key=value"))
        })?;
        let spec = d
            .spec(k)
            .ok_or_else(|| PlatformError::InvalidRequest(format!("`{model}` has no parameter `{k}`")))?;
        params.insert(k.to_owned(), spec.parse_text(v)?);
    }
    Ok(params)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = config(&cli.global);
    if let Command::Serve { port, host } = &cli.command {
        let cfg = Config { port: *port, ..cfg };
        let platform = Platform::open(cfg)?;
        let rt = tokio::runtime::Runtime::new()?;
        return rt.block_on(async {
            let listener = tokio::net::TcpListener::bind((host.as_str(), *port)).await?;
            println!("http://{}", listener.local_addr()?);
            pimip::api::serve(platform, listener).await?;
            Ok(())
        });
    }
    let platform = Platform::open(cfg)?;
    match cli.command {
        Command::Serve { .. } => unreachable!("handled above"),
        Command::Ingest { file, name, magnification } => {
            let row = platform.ingest_with(&file, name.as_deref(), magnification)?;
            println!("{}", row.slide_id);
        }
        Command::Analyze { slide, model, params } => {
            let params = parse_params(&platform, &model, &params)?;
            let task = platform.run_task_sync(&slide, &model, params)?;
            match (task.status, platform.result_dir(&task)) {
                (TaskStatus::Done, Some(dir)) => println!("{}", dir.display()),
                _ => {
                    return Err(Failure {
                        code: exit::FAILURE,
                        message: task.error_message.unwrap_or_else(|| "analysis failed".into()),
                    })
                }
            }
        }
        Command::Export { slide, out } => {
            let path = platform.export_bundle(&slide, &out)?;
            println!("{}", path.display());
        }
        Command::Import { bundle } => {
            let row = platform.import_bundle(&bundle)?;
            println!("{}", row.slide_id);
        }
        Command::List => {
            for s in platform.store().list_slides().map_err(PlatformError::from)? {
                println!("{}", s.slide_id);
            }
        }
        Command::Report {
            command: ReportCommand::Import { slide, file, source },
        } => {
            let source = ReportSource::parse(&source)
                .ok_or_else(|| PlatformError::InvalidRequest(format!("unknown report source `{source}`")))?;
            let text = std::fs::read_to_string(&file)?;
            let report = platform.import_report(&slide, &text, source)?;
            println!("{}", report.slide_id);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let matches = Cli::command().after_help(analyzer_help()).try_get_matches();
    let cli = match matches.and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(exit::USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(&cli.global.log_level));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
