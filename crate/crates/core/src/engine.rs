//! Runs a [`Session`] on its own thread. Transport commands and program
//! swaps arrive over a channel and are applied between ticks, so only this
//! thread ever touches the session.

use std::sync::mpsc::{self, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use crate::program::Program;
use crate::scheduler::{Action, Clock, IllegalTransport, Mode, Phase, Session};
use crate::stream::StreamItem;
use crate::syntax::{render_term, SourceSpan};

/// Depth to which the current term is rendered in views.
pub const VIEW_DEPTH: usize = 32;

const ENGINE_STACK: usize = 256 * 1024 * 1024;

/// Published copy of the observable session state.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SessionView {
    pub generation: u64,
    pub phase: Phase,
    pub mode: Mode,
    pub current_term: String,
    pub highlights: Vec<SourceSpan>,
    pub last_item: Option<StreamItem>,
    pub error: Option<String>,
    pub items: u64,
    pub events: u64,
    /// Changes with every observable change of the session.
    pub revision: u64,
}

impl SessionView {
    pub fn of(session: &Session) -> Self {
        SessionView {
            generation: session.program().generation(),
            phase: session.phase(),
            mode: session.mode(),
            current_term: render_term(session.term(), Some(VIEW_DEPTH)),
            highlights: session.last_highlights().iter().cloned().collect(),
            last_item: session.last_item(),
            error: session.last_error().map(str::to_string),
            items: session.items_extracted(),
            events: session.events_extracted(),
            revision: session.revision(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Transport(#[from] IllegalTransport),
    #[error("the engine has shut down")]
    Gone,
}

enum Command {
    Transport {
        action: Option<Action>,
        mode: Option<Mode>,
        reply: Sender<Result<SessionView, IllegalTransport>>,
    },
    Swap {
        program: Arc<Program>,
        reply: Sender<SessionView>,
    },
    View {
        reply: Sender<SessionView>,
    },
    Shutdown,
}

pub type Observer = Box<dyn FnMut(&SessionView) + Send>;

pub struct EngineHandle {
    tx: Sender<Command>,
    thread: Option<JoinHandle<Session>>,
}

impl EngineHandle {
    /// Starts the runner. `poll` bounds how long it sleeps before looking at
    /// the clock again, which matters for clocks that jump. `observer` sees
    /// every new state.
    pub fn spawn(session: Session, clock: Arc<dyn Clock>, poll: Duration, observer: Observer) -> Self {
        let (tx, rx) = mpsc::channel();
        let thread = thread::Builder::new()
            .name("liveseq-engine".into())
            .stack_size(ENGINE_STACK)
            .spawn(move || run(session, clock, poll, observer, rx))
            .expect("spawn engine thread");
        EngineHandle {
            tx,
            thread: Some(thread),
        }
    }

    fn call<T>(&self, make: impl FnOnce(Sender<T>) -> Command) -> Result<T, EngineError> {
        let (reply, rx) = mpsc::channel();
        self.tx.send(make(reply)).map_err(|_| EngineError::Gone)?;
        rx.recv().map_err(|_| EngineError::Gone)
    }

    /// Optionally switches mode, then optionally applies `action`.
    pub fn transport(&self, action: Option<Action>, mode: Option<Mode>) -> Result<SessionView, EngineError> {
        Ok(self.call(|reply| Command::Transport { action, mode, reply })??)
    }

    /// Installs `program`; returns once the session uses it.
    pub fn swap(&self, program: Arc<Program>) -> Result<SessionView, EngineError> {
        self.call(|reply| Command::Swap { program, reply })
    }

    pub fn view(&self) -> Result<SessionView, EngineError> {
        self.call(|reply| Command::View { reply })
    }

    /// Stops the runner and hands back the session with its output finished.
    pub fn shutdown(mut self) -> Option<Session> {
        let _ = self.tx.send(Command::Shutdown);
        self.thread.take().and_then(|t| t.join().ok())
    }
}

impl Drop for EngineHandle {
    fn drop(&mut self) {
        if let Some(t) = self.thread.take() {
            let _ = self.tx.send(Command::Shutdown);
            let _ = t.join();
        }
    }
}

fn run(
    mut session: Session,
    clock: Arc<dyn Clock>,
    poll: Duration,
    mut observer: Observer,
    rx: mpsc::Receiver<Command>,
) -> Session {
    let mut published = None;
    let mut publish = |session: &Session, observer: &mut Observer| {
        if published != Some((session.revision(), session.phase())) {
            published = Some((session.revision(), session.phase()));
            observer(&SessionView::of(session));
        }
    };
    publish(&session, &mut observer);
    loop {
        let now = clock.now();
        session.tick(now);
        publish(&session, &mut observer);
        let wait = match session.next_wake(now) {
            Some(w) => Duration::from_millis(w.saturating_sub(now)).min(poll),
            None => poll,
        };
        let cmd = match rx.recv_timeout(wait) {
            Ok(cmd) => cmd,
            Err(RecvTimeoutError::Timeout) => continue,
            Err(RecvTimeoutError::Disconnected) => break,
        };
        let now = clock.now();
        session.tick(now);
        match cmd {
            Command::Transport { action, mode, reply } => {
                if let Some(m) = mode {
                    session.set_mode(m, now);
                }
                let result = match action {
                    Some(a) => session.apply(a, now),
                    None => Ok(()),
                };
                publish(&session, &mut observer);
                let _ = reply.send(result.map(|_| SessionView::of(&session)));
            }
            Command::Swap { program, reply } => {
                session.set_program(program);
                publish(&session, &mut observer);
                let _ = reply.send(SessionView::of(&session));
            }
            Command::View { reply } => {
                let _ = reply.send(SessionView::of(&session));
            }
            Command::Shutdown => break,
        }
    }
    session.stop(clock.now());
    if let Err(e) = session.finish_output() {
        tracing::error!("finishing output failed: {e}");
    }
    session
}
