//! `txforge` subcommands. Exit codes: 0 success, 1 domain error (JSON on
//! stderr), 2 usage error.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value as Json};

use txforge_core::runtime::Engine;

use crate::error::GatewayError;
use crate::session::{self, FaultRequest, Session};
use crate::views;

#[derive(Debug, Parser)]
#[command(
    name = "txforge",
    version,
    about = "Compile BPMN models to nested transactions and run them"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kind {
    Exception,
    PrepareNo,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compile a model and scenario into a deployment bundle.
    Compile {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// List the single-entry/single-exit regions of a bundle's model.
    Regions {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Select regions as named transactions and recompile.
    Select {
        #[arg(long)]
        bundle: PathBuf,
        /// Comma-separated `name=RegionId` pairs.
        #[arg(long)]
        tx: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a bundle until it finishes or waits for repair.
    Run {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    Step {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(short = 'n', default_value_t = 1)]
        n: usize,
    },
    /// Inject a fault into a session.
    Fault {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        task: String,
        #[arg(long)]
        attempt: u32,
        #[arg(long, value_enum)]
        kind: Option<Kind>,
        #[arg(long)]
        participant: Option<String>,
        #[arg(long)]
        message: String,
    },
    /// Export the live repair ticket.
    Ticket {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        fragment_out: PathBuf,
        #[arg(long)]
        sidecar_out: PathBuf,
    },
    /// Submit a replacement fragment for the live ticket.
    Repair {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        fragment: PathBuf,
        #[arg(long)]
        sidecar: PathBuf,
    },
    Resume {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    Report {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Serve a session over HTTP with a server-sent event feed.
    Serve {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        port: u16,
    },
}

enum Output {
    Json(Json),
    Text(String),
}

fn pretty(v: &Json) -> String {
    serde_json::to_string_pretty(v).expect("value serializes")
}

/// Load, mutate, save.
fn with_session(
    path: &Path,
    f: impl FnOnce(&mut Session) -> Result<Json, GatewayError>,
) -> Result<Output, GatewayError> {
    let mut s = Session::load(path)?;
    let out = f(&mut s)?;
    s.save()?;
    Ok(Output::Json(out))
}

fn execute(command: Command) -> Result<Output, GatewayError> {
    match command {
        Command::Compile { model, scenario, out } => {
            let bundle = session::compile_files(&session::read_file(&model)?, &session::read_file(&scenario)?)?;
            session::write_file(&out, &bundle.to_json())?;
            let regions = views::regions(&session::bound_of(&bundle)?)?;
            Ok(Output::Json(json!({
                "out": out,
                "modelHash": bundle.model_hash,
                "scenarioHash": bundle.scenario_hash,
                "regions": regions.len(),
            })))
        }
        Command::Regions { bundle, format } => {
            let bundle = session::read_bundle(&bundle)?;
            let rows = views::regions(&session::bound_of(&bundle)?)?;
            Ok(match format {
                Format::Json => Output::Json(serde_json::to_value(rows).expect("rows serialize")),
                Format::Table => Output::Text(views::regions_table(&rows)),
            })
        }
        Command::Select { bundle, tx, out } => {
            let bundle = session::read_bundle(&bundle)?;
            let picks = session::parse_tx_list(&tx)?;
            let selected = session::select_bundle(&bundle, &picks)?;
            session::write_file(&out, &selected.to_json())?;
            Ok(Output::Json(json!({ "out": out, "plan": selected.plan })))
        }
        Command::Run { bundle, checkpoint } => {
            let bundle = session::read_bundle(&bundle)?;
            let mut s = Session::new(Engine::start(bundle)?, checkpoint);
            let out = s.run()?;
            s.save()?;
            Ok(Output::Json(out))
        }
        Command::Step { checkpoint, n } => with_session(&checkpoint, |s| s.step(n)),
        Command::Fault {
            checkpoint,
            task,
            attempt,
            kind,
            participant,
            message,
        } => {
            let req = FaultRequest {
                task,
                attempt,
                kind: kind.map(|k| match k {
                    Kind::Exception => "exception".to_string(),
                    Kind::PrepareNo => "prepare-no".to_string(),
                }),
                participant,
                message,
            };
            with_session(&checkpoint, |s| s.fault(&req))
        }
        Command::Ticket {
            checkpoint,
            fragment_out,
            sidecar_out,
        } => {
            let s = Session::load(&checkpoint)?;
            let (xml, sidecar) = s.ticket()?;
            session::write_file(&fragment_out, &xml)?;
            session::write_file(&sidecar_out, &sidecar)?;
            let t = s.engine.ticket().expect("ticket exported");
            Ok(Output::Json(json!({
                "ticketId": t.ticket_id,
                "logicalName": t.logical_name,
                "fragment": fragment_out,
                "sidecar": sidecar_out,
            })))
        }
        Command::Repair {
            checkpoint,
            fragment,
            sidecar,
        } => {
            let xml = session::read_file(&fragment)?;
            let side = session::read_file(&sidecar)?;
            with_session(&checkpoint, |s| {
                Ok(serde_json::to_value(s.repair(&xml, &side)?).expect("verdict serializes"))
            })
        }
        Command::Resume { checkpoint } => with_session(&checkpoint, Session::resume),
        Command::Report { checkpoint } => {
            let s = Session::load(&checkpoint)?;
            Ok(Output::Json(views::report(&s.engine)))
        }
        Command::Serve { checkpoint, port } => {
            let s = Session::load(&checkpoint)?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| GatewayError::new("IoError", e.to_string()))?;
            rt.block_on(crate::http::serve(s, port))?;
            Ok(Output::Text(String::new()))
        }
    }
}

/// Run one command line. `args` includes the program name.
pub fn dispatch<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            if code == 0 {
                let _ = write!(out, "{}", e.render());
                return 0;
            }
            let _ = write!(err, "{}", e.render());
            return 2;
        }
    };
    match execute(cli.command) {
        Ok(Output::Json(v)) => {
            let _ = writeln!(out, "{}", pretty(&v));
            0
        }
        Ok(Output::Text(t)) => {
            let _ = write!(out, "{t}");
            0
        }
        Err(e) => {
            let _ = writeln!(err, "{}", e.to_json());
            1
        }
    }
}
