//! Output side: a message queue with a haltable clock, and the sinks that
//! receive delivered messages (text log, Standard MIDI File, nothing).

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use crate::stream::{split_channel, EventData, MidiEvent};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ScheduledMessage {
    pub timestamp: u64,
    pub port: u32,
    pub channel: u8,
    pub data: EventData,
}

impl ScheduledMessage {
    pub fn new(timestamp: u64, event: &MidiEvent) -> Self {
        let (port, channel) = split_channel(event.channel);
        ScheduledMessage {
            timestamp,
            port,
            channel,
            data: event.data,
        }
    }
}

/// A message together with the wall time it left the queue.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Delivered {
    pub message: ScheduledMessage,
    pub delivered_at: u64,
}

/// Text form of a message, without the line terminator.
pub fn log_line(m: &ScheduledMessage) -> String {
    let body = match m.data {
        EventData::NoteOn { pitch, velocity } => format!("ON pitch={pitch} vel={velocity}"),
        EventData::NoteOff { pitch, velocity } => format!("OFF pitch={pitch} vel={velocity}"),
        EventData::ProgramChange { program } => format!("PGM prog={program}"),
        EventData::Controller { controller, value } => format!("CC cc={controller} val={value}"),
    };
    format!("t={} port={} ch={} {body}", m.timestamp, m.port, m.channel)
}

/// Inverse of [`log_line`]. Accepts exactly the produced format.
pub fn parse_log_line(line: &str) -> Option<ScheduledMessage> {
    let mut parts = line.strip_suffix('\n').unwrap_or(line).split(' ');
    fn field<'a>(part: Option<&'a str>, key: &str) -> Option<&'a str> {
        part?.strip_prefix(key)?.strip_prefix('=')
    }
    fn number<T: std::str::FromStr>(s: &str) -> Option<T> {
        if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) || (s.len() > 1 && s.starts_with('0')) {
            return None;
        }
        s.parse().ok()
    }
    let timestamp = number(field(parts.next(), "t")?)?;
    let port = number(field(parts.next(), "port")?)?;
    let channel: u8 = number(field(parts.next(), "ch")?)?;
    let seven = |s: &str| number::<u8>(s).filter(|v| *v < 128);
    let data = match parts.next()? {
        "ON" => EventData::NoteOn {
            pitch: seven(field(parts.next(), "pitch")?)?,
            velocity: seven(field(parts.next(), "vel")?)?,
        },
        "OFF" => EventData::NoteOff {
            pitch: seven(field(parts.next(), "pitch")?)?,
            velocity: seven(field(parts.next(), "vel")?)?,
        },
        "PGM" => EventData::ProgramChange {
            program: seven(field(parts.next(), "prog")?)?,
        },
        "CC" => EventData::Controller {
            controller: seven(field(parts.next(), "cc")?)?,
            value: seven(field(parts.next(), "val")?)?,
        },
        _ => return None,
    };
    if parts.next().is_some() || channel > 15 {
        return None;
    }
    Some(ScheduledMessage {
        timestamp,
        port,
        channel,
        data,
    })
}

#[derive(Debug, thiserror::Error)]
pub enum SmfError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("message {index} has timestamp {timestamp}, earlier than its predecessor")]
    NonMonotoneTimestamps { index: usize, timestamp: u64 },
    #[error("gap of {delta} ms before message {index} does not fit a variable-length quantity")]
    DeltaTooLarge { index: usize, delta: u64 },
}

const MAX_VLQ: u64 = (1 << 28) - 1;

fn push_vlq(out: &mut Vec<u8>, mut v: u64) {
    let mut buf = [0u8; 4];
    let mut i = 3;
    buf[i] = (v & 0x7f) as u8;
    v >>= 7;
    while v > 0 {
        i -= 1;
        buf[i] = 0x80 | (v & 0x7f) as u8;
        v >>= 7;
    }
    out.extend_from_slice(&buf[i..]);
}

/// Encodes messages as a format 0 file where one tick is one millisecond.
pub fn encode_smf(messages: &[ScheduledMessage]) -> Result<Vec<u8>, SmfError> {
    if messages.iter().any(|m| m.port > 0) {
        tracing::warn!("MIDI file output has no ports; messages for ports above 0 are merged into port 0");
    }
    let mut track = Vec::new();
    // 1,000,000 microseconds per quarter note
    track.extend_from_slice(&[0x00, 0xff, 0x51, 0x03, 0x0f, 0x42, 0x40]);
    let mut prev = 0u64;
    for (index, m) in messages.iter().enumerate() {
        if m.timestamp < prev {
            return Err(SmfError::NonMonotoneTimestamps {
                index,
                timestamp: m.timestamp,
            });
        }
        let delta = m.timestamp - prev;
        if delta > MAX_VLQ {
            return Err(SmfError::DeltaTooLarge { index, delta });
        }
        push_vlq(&mut track, delta);
        prev = m.timestamp;
        let ch = m.channel & 0x0f;
        match m.data {
            EventData::NoteOn { pitch, velocity } => track.extend_from_slice(&[0x90 | ch, pitch, velocity]),
            EventData::NoteOff { pitch, velocity } => track.extend_from_slice(&[0x80 | ch, pitch, velocity]),
            EventData::ProgramChange { program } => track.extend_from_slice(&[0xc0 | ch, program]),
            EventData::Controller { controller, value } => track.extend_from_slice(&[0xb0 | ch, controller, value]),
        }
    }
    track.extend_from_slice(&[0x00, 0xff, 0x2f, 0x00]);

    let mut out = Vec::with_capacity(22 + track.len());
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&0u16.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&1000u16.to_be_bytes());
    out.extend_from_slice(b"MTrk");
    out.extend_from_slice(&(track.len() as u32).to_be_bytes());
    out.extend_from_slice(&track);
    Ok(out)
}

pub fn write_smf(messages: &[ScheduledMessage], path: impl AsRef<std::path::Path>) -> Result<usize, SmfError> {
    let bytes = encode_smf(messages)?;
    fs::write(path, &bytes)?;
    Ok(bytes.len())
}

/// Receiver of delivered messages.
pub trait Output: Send {
    fn deliver(&mut self, delivered: &Delivered) -> io::Result<()>;

    fn finish(&mut self) -> io::Result<()> {
        Ok(())
    }
}

/// Writes one log line per delivered message.
pub struct LogOutput<W: Write + Send> {
    writer: W,
}

impl<W: Write + Send> LogOutput<W> {
    pub fn new(writer: W) -> Self {
        LogOutput { writer }
    }
}

impl<W: Write + Send> Output for LogOutput<W> {
    fn deliver(&mut self, d: &Delivered) -> io::Result<()> {
        writeln!(self.writer, "{}", log_line(&d.message))?;
        self.writer.flush()
    }

    fn finish(&mut self) -> io::Result<()> {
        self.writer.flush()
    }
}

/// Collects messages and writes a MIDI file when finished.
pub struct SmfOutput {
    path: PathBuf,
    messages: Vec<ScheduledMessage>,
}

impl SmfOutput {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        SmfOutput {
            path: path.into(),
            messages: Vec::new(),
        }
    }
}

impl Output for SmfOutput {
    fn deliver(&mut self, d: &Delivered) -> io::Result<()> {
        self.messages.push(d.message);
        Ok(())
    }

    fn finish(&mut self) -> io::Result<()> {
        // delivery order can step back in time only across a stop and restart
        let mut last = 0;
        for m in &mut self.messages {
            m.timestamp = m.timestamp.max(last);
            last = m.timestamp;
        }
        write_smf(&self.messages, &self.path).map_err(|e| match e {
            SmfError::Io(e) => e,
            other => io::Error::new(io::ErrorKind::InvalidData, other.to_string()),
        })?;
        Ok(())
    }
}

pub struct NullOutput;

impl Output for NullOutput {
    fn deliver(&mut self, _: &Delivered) -> io::Result<()> {
        Ok(())
    }
}

/// Keeps deliveries in memory, shared with whoever holds a clone.
#[derive(Clone, Default)]
pub struct MemoryOutput {
    pub delivered: Arc<Mutex<Vec<Delivered>>>,
}

impl MemoryOutput {
    pub fn take(&self) -> Vec<Delivered> {
        std::mem::take(&mut *self.delivered.lock().unwrap())
    }

    pub fn snapshot(&self) -> Vec<Delivered> {
        self.delivered.lock().unwrap().clone()
    }
}

impl Output for MemoryOutput {
    fn deliver(&mut self, d: &Delivered) -> io::Result<()> {
        self.delivered.lock().unwrap().push(*d);
        Ok(())
    }
}

/// Message queue driven by its own clock. Queue time runs with wall time
/// except while halted; advancing moves it forward without waiting.
pub struct Sequencer {
    queue: BTreeMap<(u64, u64), ScheduledMessage>,
    next_seq: u64,
    /// Wall time minus queue time while running.
    offset: i64,
    halted_at: Option<u64>,
    /// Earliest wall time a delivery can be reported at; moves on every
    /// discontinuity of the queue clock.
    floor: u64,
    output: Box<dyn Output>,
}

impl Sequencer {
    pub fn new(output: Box<dyn Output>) -> Self {
        Sequencer {
            queue: BTreeMap::new(),
            next_seq: 0,
            offset: 0,
            halted_at: None,
            floor: 0,
            output,
        }
    }

    pub fn queue_time(&self, wall: u64) -> u64 {
        match self.halted_at {
            Some(q) => q,
            None => (wall as i64 - self.offset).max(0) as u64,
        }
    }

    pub fn is_halted(&self) -> bool {
        self.halted_at.is_some()
    }

    pub fn schedule(&mut self, msg: ScheduledMessage) {
        self.queue.insert((msg.timestamp, self.next_seq), msg);
        self.next_seq += 1;
    }

    pub fn pending(&self) -> impl Iterator<Item = &ScheduledMessage> {
        self.queue.values()
    }

    pub fn pending_len(&self) -> usize {
        self.queue.len()
    }

    /// Wall time at which the earliest pending message falls due.
    pub fn next_due(&self) -> Option<u64> {
        if self.halted_at.is_some() {
            return None;
        }
        let (ts, _) = self.queue.keys().next()?;
        Some(((*ts as i64 + self.offset).max(0) as u64).max(self.floor))
    }

    pub fn halt_clock(&mut self, wall: u64) {
        if self.halted_at.is_none() {
            self.halted_at = Some(self.queue_time(wall));
        }
    }

    pub fn resume_clock(&mut self, wall: u64) {
        if let Some(q) = self.halted_at.take() {
            self.offset = wall as i64 - q as i64;
            self.floor = self.floor.max(wall);
        }
    }

    pub fn advance_clock(&mut self, by: u64, wall: u64) {
        match &mut self.halted_at {
            Some(q) => *q += by,
            None => self.offset -= by as i64,
        }
        self.floor = self.floor.max(wall);
    }

    /// Delivers every message whose timestamp has been reached.
    pub fn drain(&mut self, wall: u64) -> io::Result<usize> {
        let now_q = self.queue_time(wall);
        let mut n = 0;
        while let Some(entry) = self.queue.first_entry() {
            if entry.key().0 > now_q {
                break;
            }
            let msg = entry.remove();
            let due = ((msg.timestamp as i64 + self.offset).max(0) as u64).max(self.floor);
            self.output.deliver(&Delivered {
                message: msg,
                delivered_at: due.min(wall),
            })?;
            n += 1;
        }
        Ok(n)
    }

    /// Delivers everything still queued, at `wall`.
    pub fn flush_all(&mut self, wall: u64) -> io::Result<usize> {
        let mut n = 0;
        while let Some((_, msg)) = self.queue.pop_first() {
            self.output.deliver(&Delivered {
                message: msg,
                delivered_at: wall,
            })?;
            n += 1;
        }
        Ok(n)
    }

    /// Sends a message straight to the output, bypassing the queue.
    pub fn send_now(&mut self, msg: ScheduledMessage, wall: u64) -> io::Result<()> {
        self.output.deliver(&Delivered {
            message: msg,
            delivered_at: wall,
        })
    }

    pub fn finish(&mut self) -> io::Result<()> {
        self.output.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn on(ts: u64, pitch: u8) -> ScheduledMessage {
        ScheduledMessage::new(ts, &MidiEvent::note_on(0, pitch, 64))
    }

    #[test]
    fn log_examples() {
        assert_eq!(log_line(&on(0, 60)), "t=0 port=0 ch=0 ON pitch=60 vel=64");
        let off = ScheduledMessage::new(1200, &MidiEvent::note_off(40, 67, 64));
        assert_eq!(log_line(&off), "t=1200 port=2 ch=8 OFF pitch=67 vel=64");
        let cc = ScheduledMessage::new(
            0,
            &MidiEvent {
                channel: 0,
                data: EventData::Controller { controller: 7, value: 0 },
            },
        );
        assert_eq!(log_line(&cc), "t=0 port=0 ch=0 CC cc=7 val=0");
        assert_eq!(parse_log_line(&log_line(&off)), Some(off));
    }

    #[test]
    fn log_parser_rejects_variants() {
        for bad in [
            "t=0 port=0 ch=0 ON pitch=60",
            "t=00 port=0 ch=0 ON pitch=60 vel=64",
            "t=0 port=0 ch=16 ON pitch=60 vel=64",
            "t=0 port=0 ch=0 ON pitch=128 vel=64",
            "t=0 port=0 ch=0 ON vel=64 pitch=60",
            "t=0  port=0 ch=0 ON pitch=60 vel=64",
            "t=0 port=0 ch=0 NOTE pitch=60 vel=64",
        ] {
            assert_eq!(parse_log_line(bad), None, "{bad}");
        }
    }

    #[test]
    fn vlq_encoding() {
        for (v, bytes) in [
            (0u64, vec![0x00]),
            (0x7f, vec![0x7f]),
            (0x80, vec![0x81, 0x00]),
            (0x2000, vec![0xc0, 0x00]),
            (0x0fff_ffff, vec![0xff, 0xff, 0xff, 0x7f]),
        ] {
            let mut out = Vec::new();
            push_vlq(&mut out, v);
            assert_eq!(out, bytes, "{v:#x}");
        }
    }

    #[test]
    fn empty_file_layout() {
        let bytes = encode_smf(&[]).unwrap();
        assert_eq!(
            bytes,
            [
                b"MThd".as_slice(),
                &[0, 0, 0, 6, 0, 0, 0, 1, 0x03, 0xe8],
                b"MTrk",
                &[0, 0, 0, 11],
                &[0x00, 0xff, 0x51, 0x03, 0x0f, 0x42, 0x40, 0x00, 0xff, 0x2f, 0x00],
            ]
            .concat()
        );
    }

    #[test]
    fn non_monotone_rejected() {
        assert!(matches!(
            encode_smf(&[on(5, 1), on(4, 2)]),
            Err(SmfError::NonMonotoneTimestamps { index: 1, .. })
        ));
    }

    #[test]
    fn queue_orders_by_time_then_schedule_order() {
        let out = MemoryOutput::default();
        let mut s = Sequencer::new(Box::new(out.clone()));
        s.schedule(on(10, 1));
        s.schedule(on(5, 2));
        s.schedule(on(10, 3));
        s.drain(9).unwrap();
        s.drain(10).unwrap();
        let got: Vec<_> = out.take().iter().map(|d| (d.message.timestamp, d.delivered_at)).collect();
        assert_eq!(got, vec![(5, 5), (10, 10), (10, 10)]);
    }

    #[test]
    fn halt_and_resume_shift_deliveries() {
        let out = MemoryOutput::default();
        let mut s = Sequencer::new(Box::new(out.clone()));
        s.schedule(on(200, 1));
        s.schedule(on(400, 2));
        s.halt_clock(150);
        assert_eq!(s.drain(10_000).unwrap(), 0);
        s.resume_clock(500);
        assert_eq!(s.next_due(), Some(550));
        s.drain(550).unwrap();
        s.drain(750).unwrap();
        let got: Vec<_> = out.take().iter().map(|d| (d.message.timestamp, d.delivered_at)).collect();
        assert_eq!(got, vec![(200, 550), (400, 750)]);
    }

    #[test]
    fn advance_flushes_lookahead() {
        let out = MemoryOutput::default();
        let mut s = Sequencer::new(Box::new(out.clone()));
        s.schedule(on(200, 1));
        s.advance_clock(100, 150);
        s.drain(150).unwrap();
        let got = out.take();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].delivered_at, 150);
        assert_eq!(got[0].message.timestamp, 200);
    }
}
