//! The `nbcollab` command line. Exit codes: 0 success, 1 a scenario
//! expectation failed, 2 usage or I/O error.

use std::collections::BTreeSet;
use std::io::Write;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use nbcollab::model;
use nbcollab::report::analyze_notebook;
use nbcollab::scenario::{run_scenario, ScenarioScript};

use crate::server::{Server, ServerConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "nbcollab",
    version,
    about = "Collaborative notebook sessions with cell and variable locks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Host a session over TCP and WebSocket.
    Serve {
        #[arg(long)]
        port: u16,
        #[arg(long, default_value_t = IpAddr::V4(Ipv4Addr::LOCALHOST))]
        bind: IpAddr,
        #[arg(long)]
        notebook: Option<PathBuf>,
        #[arg(long)]
        fixtures: Option<PathBuf>,
        /// Users who become hosts when they join.
        #[arg(long = "host", num_args = 1..)]
        hosts: Vec<String>,
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
        #[arg(long, default_value_t = nbcollab::protocol::DEFAULT_MAX_PARTICIPANTS)]
        max_participants: usize,
    },
    /// Run scenario scripts and check their expectations.
    Replay {
        #[arg(required = true)]
        scripts: Vec<PathBuf>,
        /// Write the step-by-step transcript as JSON lines.
        #[arg(long)]
        transcript: Option<PathBuf>,
    },
    /// Report each code cell's effects on variables.
    Analyze {
        file: PathBuf,
        #[arg(long, value_delimiter = ',')]
        protected: Vec<String>,
    },
    /// Rewrite a notebook file in canonical form.
    Fmt {
        file: PathBuf,
        /// Only report whether the file is already canonical.
        #[arg(long)]
        check: bool,
    },
}

/// Runs the CLI with explicit output streams and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(err, "{text}")
            } else {
                write!(out, "{text}")
            };
            return code;
        }
    };
    match cli.command {
        Command::Serve {
            port,
            bind,
            notebook,
            fixtures,
            hosts,
            log,
            static_dir,
            max_participants,
        } => {
            let config = ServerConfig {
                addr: SocketAddr::new(bind, port),
                notebook,
                fixtures,
                hosts,
                log,
                static_dir,
                max_participants,
            };
            serve(config, err)
        }
        Command::Replay { scripts, transcript } => replay(&scripts, transcript, out, err),
        Command::Analyze { file, protected } => {
            let nb = match read_notebook(&file) {
                Ok(nb) => nb,
                Err(e) => return usage(err, e),
            };
            let protected: BTreeSet<String> = protected.into_iter().filter(|p| !p.is_empty()).collect();
            let _ = write!(out, "{}", analyze_notebook(&nb, &protected));
            EXIT_OK
        }
        Command::Fmt { file, check } => {
            let nb = match read_notebook(&file) {
                Ok(nb) => nb,
                Err(e) => return usage(err, e),
            };
            let canonical = model::save(&nb);
            if check {
                let current = std::fs::read(&file).unwrap_or_default();
                if current != canonical {
                    let _ = writeln!(out, "{} is not canonical", file.display());
                    return EXIT_FAILED;
                }
                return EXIT_OK;
            }
            match std::fs::write(&file, canonical) {
                Ok(()) => EXIT_OK,
                Err(e) => usage(err, format!("{}: {e}", file.display())),
            }
        }
    }
}

fn usage(err: &mut dyn Write, message: impl std::fmt::Display) -> i32 {
    let _ = writeln!(err, "error: {message}");
    EXIT_USAGE
}

fn read_notebook(path: &std::path::Path) -> Result<model::Notebook, String> {
    let bytes = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    model::load(&bytes).map_err(|e| format!("{}: {e}", path.display()))
}

fn replay(scripts: &[PathBuf], transcript: Option<PathBuf>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let mut all_ok = true;
    let mut lines = String::new();
    for path in scripts {
        let report = match ScenarioScript::load(path).and_then(|s| run_scenario(&s)) {
            Ok(r) => r,
            Err(e) => return usage(err, format!("{}: {e}", path.display())),
        };
        let verdict = if report.ok() { "PASS" } else { "FAIL" };
        let _ = write!(out, "{verdict} {}", report.summary());
        all_ok &= report.ok();
        lines.push_str(&report.transcript_ndjson());
    }
    if let Some(path) = transcript {
        if let Err(e) = std::fs::write(&path, lines) {
            return usage(err, format!("{}: {e}", path.display()));
        }
    }
    if all_ok {
        EXIT_OK
    } else {
        EXIT_FAILED
    }
}

fn serve(config: ServerConfig, err: &mut dyn Write) -> i32 {
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(r) => r,
        Err(e) => return usage(err, e),
    };
    runtime.block_on(async {
        let server = match Server::bind(config).await {
            Ok(s) => s,
            Err(e) => return usage(err, e),
        };
        tracing::info!("listening on {}", server.local_addr());
        server
            .run(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await;
        EXIT_OK
    })
}
