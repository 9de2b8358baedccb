//! Transport and timing: turns extracted stream items into queued messages
//! that are computed a fixed latency ahead of the queue clock.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use crate::backend::{Output, ScheduledMessage, Sequencer};
use crate::eval::Budget;
use crate::program::{LoadError, Program};
use crate::stream::{next_item, StreamItem};
use crate::syntax::SourceSpan;
use crate::term::Term;

pub const DEFAULT_LATENCY_MS: u64 = 100;
pub const DEFAULT_STEP_PAUSE_MS: u64 = 500;

/// Items extracted by one pump before it yields to the command loop.
const MAX_ITEMS_PER_PUMP: usize = 100_000;

/// Milliseconds on some monotone time line.
pub trait Clock: Send + Sync {
    fn now(&self) -> u64;
}

pub struct SystemClock {
    start: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        SystemClock { start: Instant::now() }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now(&self) -> u64 {
        self.start.elapsed().as_millis() as u64
    }
}

/// Clock that only moves when told to. Clones share the same time.
#[derive(Clone, Default)]
pub struct VirtualClock(Arc<AtomicU64>);

impl VirtualClock {
    pub fn new(start: u64) -> Self {
        VirtualClock(Arc::new(AtomicU64::new(start)))
    }

    /// Moves the clock to `t`; earlier times are ignored.
    pub fn set(&self, t: u64) {
        self.0.fetch_max(t, Ordering::SeqCst);
    }

    pub fn advance(&self, by: u64) {
        self.0.fetch_add(by, Ordering::SeqCst);
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Playing,
    Paused,
    Stopped,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Playing => "playing",
            Phase::Paused => "paused",
            Phase::Stopped => "stopped",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    RealTime,
    SlowMotion { step_pause_ms: u64 },
    SingleStep,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::RealTime => "realtime",
            Mode::SlowMotion { .. } => "slow",
            Mode::SingleStep => "step",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Action {
    Play,
    Pause,
    Continue,
    Stop,
    Step,
}

impl Action {
    pub fn parse(s: &str) -> Option<Action> {
        Some(match s {
            "play" => Action::Play,
            "pause" => Action::Pause,
            "continue" => Action::Continue,
            "stop" => Action::Stop,
            "step" => Action::Step,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("cannot {action:?} while {phase}")]
pub struct IllegalTransport {
    pub action: Action,
    pub phase: Phase,
}

#[derive(Clone, Debug)]
pub struct SessionConfig {
    pub entry_module: String,
    pub entry_function: String,
    pub latency_ms: u64,
    pub mode: Mode,
    pub budget: Budget,
    /// Treat the stream as ended after this many MIDI events.
    pub event_limit: Option<u64>,
    /// Keep every extracted item in [`Session::trace`].
    pub record_items: bool,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            entry_module: "Main".into(),
            entry_function: "main".into(),
            latency_ms: DEFAULT_LATENCY_MS,
            mode: Mode::RealTime,
            budget: Budget::default(),
            event_limit: None,
            record_items: false,
        }
    }
}

/// The running performance: program, current term and transport state.
pub struct Session {
    config: SessionConfig,
    program: Arc<Program>,
    term: Term,
    phase: Phase,
    mode: Mode,
    sequencer: Sequencer,
    /// Queue time of the next item to schedule.
    stream_time: u64,
    ended: bool,
    needs_reset: bool,
    next_step_at: u64,
    paused_at: Option<u64>,
    last_highlights: BTreeSet<SourceSpan>,
    last_item: Option<StreamItem>,
    last_error: Option<String>,
    items: u64,
    events: u64,
    trace: Vec<StreamItem>,
    revision: u64,
}

impl Session {
    pub fn new(program: Arc<Program>, config: SessionConfig, output: Box<dyn Output>) -> Result<Self, LoadError> {
        let term = program.entry_term(&config.entry_module, &config.entry_function)?;
        Ok(Session {
            mode: config.mode,
            config,
            program,
            term,
            phase: Phase::Stopped,
            sequencer: Sequencer::new(output),
            stream_time: 0,
            ended: false,
            needs_reset: false,
            next_step_at: 0,
            paused_at: None,
            last_highlights: BTreeSet::new(),
            last_item: None,
            last_error: None,
            items: 0,
            events: 0,
            trace: Vec::new(),
            revision: 0,
        })
    }

    pub fn program(&self) -> &Arc<Program> {
        &self.program
    }

    /// Installs a new program. The current term is kept as is.
    pub fn set_program(&mut self, program: Arc<Program>) {
        self.program = program;
        self.revision += 1;
    }

    pub fn term(&self) -> &Term {
        &self.term
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn latency(&self) -> u64 {
        self.config.latency_ms
    }

    pub fn set_mode(&mut self, mode: Mode, now: u64) {
        if mode != self.mode {
            self.mode = mode;
            self.next_step_at = now;
            if self.phase == Phase::Playing && mode == Mode::RealTime {
                self.stream_time = self.stream_time.max(self.sequencer.queue_time(now));
            }
            self.revision += 1;
        }
    }

    pub fn stream_time(&self) -> u64 {
        self.stream_time
    }

    pub fn sequencer(&self) -> &Sequencer {
        &self.sequencer
    }

    pub fn last_highlights(&self) -> &BTreeSet<SourceSpan> {
        &self.last_highlights
    }

    pub fn last_item(&self) -> Option<StreamItem> {
        self.last_item
    }

    pub fn last_error(&self) -> Option<&str> {
        self.last_error.as_deref()
    }

    pub fn items_extracted(&self) -> u64 {
        self.items
    }

    pub fn events_extracted(&self) -> u64 {
        self.events
    }

    pub fn trace(&self) -> &[StreamItem] {
        &self.trace
    }

    /// Changes whenever anything observable about the session changes.
    pub fn revision(&self) -> u64 {
        self.revision
    }

    /// True once the stream has ended and every message has been delivered.
    pub fn is_finished(&self) -> bool {
        self.phase == Phase::Stopped && (self.ended || self.last_error.is_some())
    }

    pub fn apply(&mut self, action: Action, now: u64) -> Result<(), IllegalTransport> {
        match action {
            Action::Play => self.play(now),
            Action::Pause => self.pause(now),
            Action::Continue => self.resume(now),
            Action::Stop => {
                self.stop(now);
                Ok(())
            }
            Action::Step => self.step(now).map(|_| ()),
        }
    }

    fn illegal(&self, action: Action) -> IllegalTransport {
        IllegalTransport {
            action,
            phase: self.phase,
        }
    }

    /// Starts playing. After a stop or an error the term restarts from the
    /// entry point.
    pub fn play(&mut self, now: u64) -> Result<(), IllegalTransport> {
        if self.phase != Phase::Stopped {
            return Err(self.illegal(Action::Play));
        }
        if self.needs_reset {
            match self
                .program
                .entry_term(&self.config.entry_module, &self.config.entry_function)
            {
                Ok(t) => self.term = t,
                Err(e) => {
                    self.last_error = Some(e.to_string());
                    self.revision += 1;
                    return Ok(());
                }
            }
            self.needs_reset = false;
        }
        self.ended = false;
        self.last_error = None;
        self.items = 0;
        self.events = 0;
        self.trace.clear();
        self.last_highlights.clear();
        self.last_item = None;
        self.stream_time = self.sequencer.queue_time(now);
        self.next_step_at = now;
        self.phase = Phase::Playing;
        self.revision += 1;
        self.tick(now);
        Ok(())
    }

    pub fn pause(&mut self, now: u64) -> Result<(), IllegalTransport> {
        if self.phase != Phase::Playing {
            return Err(self.illegal(Action::Pause));
        }
        self.tick(now);
        if self.phase != Phase::Playing {
            return Err(self.illegal(Action::Pause));
        }
        self.sequencer.halt_clock(now);
        self.paused_at = Some(now);
        self.phase = Phase::Paused;
        self.revision += 1;
        Ok(())
    }

    pub fn resume(&mut self, now: u64) -> Result<(), IllegalTransport> {
        if self.phase != Phase::Paused {
            return Err(self.illegal(Action::Continue));
        }
        self.sequencer.resume_clock(now);
        if let Some(p) = self.paused_at.take() {
            self.next_step_at += now.saturating_sub(p);
        }
        self.phase = Phase::Playing;
        self.revision += 1;
        self.tick(now);
        Ok(())
    }

    /// Flushes the queue by advancing its clock one latency window. Stopping
    /// a stopped session does nothing.
    pub fn stop(&mut self, now: u64) {
        if self.phase == Phase::Stopped {
            return;
        }
        if self.phase == Phase::Paused {
            self.sequencer.resume_clock(now);
            self.paused_at = None;
        }
        self.sequencer.advance_clock(self.config.latency_ms, now);
        let flushed = self.sequencer.drain(now).and_then(|_| self.sequencer.flush_all(now));
        if let Err(e) = flushed {
            self.last_error = Some(format!("output failed: {e}"));
        }
        self.phase = Phase::Stopped;
        self.needs_reset = true;
        self.revision += 1;
    }

    /// Extracts and sends one item. Starts the session first if stopped.
    pub fn step(&mut self, now: u64) -> Result<Option<StreamItem>, IllegalTransport> {
        if self.mode != Mode::SingleStep || self.phase == Phase::Paused {
            return Err(self.illegal(Action::Step));
        }
        if self.phase == Phase::Stopped {
            self.play(now)?;
            if self.phase != Phase::Playing {
                return Ok(None);
            }
        }
        Ok(self.step_once(now))
    }

    /// Delivers due messages and extracts whatever the mode calls for.
    pub fn tick(&mut self, now: u64) {
        if let Err(e) = self.sequencer.drain(now) {
            self.fail(format!("output failed: {e}"), now);
            return;
        }
        if self.phase == Phase::Playing {
            match self.mode {
                Mode::RealTime => self.pump(now),
                Mode::SlowMotion { step_pause_ms } => {
                    while self.phase == Phase::Playing && !self.ended && now >= self.next_step_at {
                        self.step_once(now);
                        self.next_step_at += step_pause_ms.max(1);
                    }
                }
                Mode::SingleStep => {}
            }
        }
        if self.phase == Phase::Playing && self.ended && self.sequencer.pending_len() == 0 {
            self.phase = Phase::Stopped;
            self.needs_reset = true;
            self.revision += 1;
        }
    }

    /// Wall time at which [`Session::tick`] has something to do next.
    pub fn next_wake(&self, now: u64) -> Option<u64> {
        if self.phase != Phase::Playing {
            return None;
        }
        let delivery = self.sequencer.next_due();
        let work = match self.mode {
            Mode::RealTime if !self.ended => {
                let q = self.sequencer.queue_time(now);
                let due_in = self.stream_time.saturating_sub(q + self.config.latency_ms);
                Some(now + due_in)
            }
            Mode::SlowMotion { .. } if !self.ended => Some(self.next_step_at.max(now)),
            _ => None,
        };
        match (delivery, work) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    /// Extracts items while the next one lies within the latency window.
    pub fn pump(&mut self, now: u64) {
        let horizon = self.sequencer.queue_time(now) + self.config.latency_ms;
        let mut extracted = 0;
        while self.phase == Phase::Playing && !self.ended && self.stream_time <= horizon {
            if extracted == MAX_ITEMS_PER_PUMP {
                break;
            }
            extracted += 1;
            match self.extract(now) {
                Some(StreamItem::Wait(n)) => self.stream_time += n,
                Some(StreamItem::Event(e)) => self
                    .sequencer
                    .schedule(ScheduledMessage::new(self.stream_time, &e)),
                None => {}
            }
        }
        if let Err(e) = self.sequencer.drain(now) {
            self.fail(format!("output failed: {e}"), now);
        }
    }

    fn step_once(&mut self, now: u64) -> Option<StreamItem> {
        let item = self.extract(now)?;
        if let StreamItem::Event(e) = item {
            let msg = ScheduledMessage::new(self.sequencer.queue_time(now), &e);
            if let Err(err) = self.sequencer.send_now(msg, now) {
                self.fail(format!("output failed: {err}"), now);
            }
        }
        if self.ended {
            self.tick(now);
        }
        Some(item)
    }

    fn extract(&mut self, now: u64) -> Option<StreamItem> {
        if self.config.event_limit.is_some_and(|limit| self.events >= limit) {
            self.ended = true;
            return None;
        }
        match next_item(&self.program, &mut self.term, self.config.budget) {
            Ok(Some(x)) => {
                self.items += 1;
                if matches!(x.item, StreamItem::Event(_)) {
                    self.events += 1;
                }
                if self.config.record_items {
                    self.trace.push(x.item);
                }
                self.last_highlights = x.highlights;
                self.last_item = Some(x.item);
                self.revision += 1;
                if self.config.event_limit.is_some_and(|limit| self.events >= limit) {
                    self.ended = true;
                }
                Some(x.item)
            }
            Ok(None) => {
                self.ended = true;
                self.revision += 1;
                None
            }
            Err(e) => {
                self.fail(e.to_string(), now);
                None
            }
        }
    }

    /// Stops after an error. The failing term stays in place for inspection.
    fn fail(&mut self, message: String, now: u64) {
        tracing::error!("{message}");
        self.last_error = Some(message);
        if self.phase != Phase::Stopped {
            self.sequencer.resume_clock(now);
            self.sequencer.advance_clock(self.config.latency_ms, now);
            let _ = self.sequencer.flush_all(now);
        }
        self.phase = Phase::Stopped;
        self.needs_reset = true;
        self.revision += 1;
    }

    pub fn finish_output(&mut self) -> std::io::Result<()> {
        self.sequencer.finish()
    }
}
