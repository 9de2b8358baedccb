use std::fs::File;
use std::io::{self, BufRead, BufWriter};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::{CommandFactory, Parser, ValueEnum};
use liveseq_core::backend::{LogOutput, NullOutput, Output, SmfOutput};
use liveseq_core::engine::EngineHandle;
use liveseq_core::scheduler::{Action, Clock, Mode, Session, SessionConfig, SystemClock, VirtualClock};
use liveseq_core::store::{ProgramStore, StoreError};
use liveseq_server::{snapshot_channel, App};
use tracing_subscriber::EnvFilter;

const STACK_SIZE: usize = 256 * 1024 * 1024;

/// Plays a directory of modules as a MIDI stream, optionally serving it to
/// participants over HTTP.
#[derive(Parser, Debug)]
#[command(name = "liveseq", version)]
struct Cli {
    /// Directory of `.hs` module files.
    #[arg(long)]
    dir: PathBuf,
    /// Start term as Module.function.
    #[arg(long, default_value = "Main.main")]
    entry: String,
    #[arg(long, value_enum, default_value_t = ModeArg::Realtime)]
    mode: ModeArg,
    /// Lookahead window in milliseconds.
    #[arg(long, default_value_t = 100)]
    latency: u64,
    /// Pause between items in slow mode, in milliseconds.
    #[arg(long, default_value_t = 500)]
    step_pause: u64,
    #[arg(long, value_enum, default_value_t = SinkArg::Log)]
    sink: SinkArg,
    /// Output file; the log sink writes to stdout without it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Serve the HTTP interface on this address.
    #[arg(long, value_name = "ADDR:PORT")]
    serve: Option<SocketAddr>,
    /// Stop after this many MIDI events.
    #[arg(long, value_name = "N")]
    max_items: Option<u64>,
    /// Reserved.
    #[arg(long)]
    seed: Option<u64>,
    /// Run on a simulated clock that jumps straight to the next due time.
    #[arg(long)]
    virtual_clock: bool,
    /// Write accepted edits back to the module files.
    #[arg(long)]
    persist: bool,
    /// Directory served under /ui/.
    #[arg(long)]
    ui_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Realtime,
    Slow,
    Step,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SinkArg {
    Log,
    Smf,
    Null,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(io::stderr)
        .init();

    let Some((entry_module, entry_function)) = cli.entry.rsplit_once('.') else {
        Cli::command()
            .error(clap::error::ErrorKind::ValueValidation, "--entry must have the form Module.function")
            .exit();
    };
    if matches!(cli.sink, SinkArg::Smf) && cli.out.is_none() {
        Cli::command()
            .error(clap::error::ErrorKind::MissingRequiredArgument, "--sink smf needs --out")
            .exit();
    }

    let config = SessionConfig {
        entry_module: entry_module.to_string(),
        entry_function: entry_function.to_string(),
        latency_ms: cli.latency,
        mode: match cli.mode {
            ModeArg::Realtime => Mode::RealTime,
            ModeArg::Slow => Mode::SlowMotion {
                step_pause_ms: cli.step_pause,
            },
            ModeArg::Step => Mode::SingleStep,
        },
        event_limit: cli.max_items,
        ..SessionConfig::default()
    };

    match run(&cli, config) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: &Cli, config: SessionConfig) -> anyhow::Result<()> {
    let mut store = ProgramStore::load_directory(&cli.dir).map_err(|e| match e {
        StoreError::Load(diags) => {
            for d in &diags {
                eprintln!("{d}");
            }
            anyhow!("could not load modules from {}", cli.dir.display())
        }
        other => anyhow!(other),
    })?;
    store.set_persist(cli.persist);

    let output = open_sink(cli)?;
    let session = Session::new(store.program().clone(), config, output).context("cannot start")?;
    if let Some(seed) = cli.seed {
        tracing::debug!(seed, "--seed is reserved and has no effect");
    }
    let virtual_clock = cli.virtual_clock.then(|| VirtualClock::new(0));
    let clock: Arc<dyn Clock> = match &virtual_clock {
        Some(v) => Arc::new(v.clone()),
        None => Arc::new(SystemClock::new()),
    };

    match cli.serve {
        Some(addr) => serve(addr, store, session, clock, cli.ui_dir.clone()),
        None => std::thread::Builder::new()
            .name("liveseq-headless".into())
            .stack_size(STACK_SIZE)
            .spawn(move || headless(session, clock, virtual_clock))?
            .join()
            .map_err(|_| anyhow!("the player thread panicked"))?,
    }
}

fn open_sink(cli: &Cli) -> anyhow::Result<Box<dyn Output>> {
    Ok(match (cli.sink, &cli.out) {
        (SinkArg::Log, None) => Box::new(LogOutput::new(io::stdout())),
        (SinkArg::Log, Some(path)) => {
            let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
            Box::new(LogOutput::new(BufWriter::new(file)))
        }
        (SinkArg::Smf, Some(path)) => Box::new(SmfOutput::new(path)),
        (SinkArg::Smf, None) => unreachable!("checked while parsing arguments"),
        (SinkArg::Null, _) => Box::new(NullOutput),
    })
}

fn headless(mut session: Session, clock: Arc<dyn Clock>, virtual_clock: Option<VirtualClock>) -> anyhow::Result<()> {
    let jump = |t: u64| match &virtual_clock {
        Some(v) => v.set(t),
        None => std::thread::sleep(Duration::from_millis(t.saturating_sub(clock.now()))),
    };

    if session.mode() == Mode::SingleStep {
        let stdin = io::stdin();
        let mut lines = stdin.lock().lines();
        while !session.is_finished() {
            if lines.next().transpose()?.is_none() {
                break;
            }
            session
                .step(clock.now())
                .map_err(|e| anyhow!("{e}"))?;
            session.tick(clock.now());
        }
    } else {
        session.play(clock.now()).map_err(|e| anyhow!("{e}"))?;
        while !session.is_finished() {
            let now = clock.now();
            match session.next_wake(now) {
                Some(t) if t > now => jump(t),
                Some(_) => {}
                None => break,
            }
            session.tick(clock.now());
        }
    }

    session.stop(clock.now());
    session.finish_output().context("cannot finish output")?;
    match session.last_error() {
        Some(e) => Err(anyhow!("{e}")),
        None => Ok(()),
    }
}

fn serve(
    addr: SocketAddr,
    store: ProgramStore,
    session: Session,
    clock: Arc<dyn Clock>,
    ui_dir: Option<PathBuf>,
) -> anyhow::Result<()> {
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .with_context(|| format!("cannot listen on {addr}"))?;
        let local = listener.local_addr()?;
        let autoplay = session.mode() != Mode::SingleStep;
        let (observer, snapshots) = snapshot_channel(&session);
        let engine = EngineHandle::spawn(session, clock, Duration::from_millis(10), observer);
        if autoplay {
            engine.transport(Some(Action::Play), None)?;
        }
        let app = App::new(store, engine, snapshots, ui_dir);
        eprintln!("listening on {local}");
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        liveseq_server::serve(listener, &app, shutdown).await?;
        let session = tokio::task::spawn_blocking(move || app.shutdown()).await?;
        match session.as_ref().and_then(|s| s.last_error()) {
            Some(e) => Err(anyhow!("{e}")),
            None => Ok(()),
        }
    })
}
