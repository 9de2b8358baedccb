//! Turning the current term into stream items: waits and MIDI events.

use std::collections::BTreeSet;
use std::fmt;
use std::mem;

use crate::eval::{Budget, EvalError, Evaluator, ReductionStep};
use crate::program::Program;
use crate::syntax::{render_term, SourceSpan};
use crate::term::{term_node_count, Branch, Term};

const ACCEPTED_SHAPES: &str = "expected `Wait n`, `Event (On pitch velocity)`, `Event (Off pitch velocity)`, \
`Event (PgmChange program)`, `Event (Controller controller value)`, optionally as `Event (Channel n e)`";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EventData {
    NoteOn { pitch: u8, velocity: u8 },
    NoteOff { pitch: u8, velocity: u8 },
    ProgramChange { program: u8 },
    Controller { controller: u8, value: u8 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MidiEvent {
    /// Virtual channel; see [`split_channel`].
    pub channel: u32,
    pub data: EventData,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StreamItem {
    Wait(u64),
    Event(MidiEvent),
}

impl MidiEvent {
    pub fn note_on(channel: u32, pitch: u8, velocity: u8) -> Self {
        MidiEvent {
            channel,
            data: EventData::NoteOn { pitch, velocity },
        }
    }

    pub fn note_off(channel: u32, pitch: u8, velocity: u8) -> Self {
        MidiEvent {
            channel,
            data: EventData::NoteOff { pitch, velocity },
        }
    }

    pub fn to_term(&self) -> Term {
        let int = |v: u8| Term::Int(v.into());
        let inner = match self.data {
            EventData::NoteOn { pitch, velocity } => Term::apply_all(Term::con("On"), [int(pitch), int(velocity)]),
            EventData::NoteOff { pitch, velocity } => Term::apply_all(Term::con("Off"), [int(pitch), int(velocity)]),
            EventData::ProgramChange { program } => Term::apply(Term::con("PgmChange"), int(program)),
            EventData::Controller { controller, value } => {
                Term::apply_all(Term::con("Controller"), [int(controller), int(value)])
            }
        };
        if self.channel == 0 {
            inner
        } else {
            Term::apply_all(Term::con("Channel"), [Term::Int(self.channel.into()), inner])
        }
    }
}

impl StreamItem {
    pub fn to_term(&self) -> Term {
        match self {
            StreamItem::Wait(n) => Term::apply(Term::con("Wait"), Term::Int(*n as i64)),
            StreamItem::Event(e) => Term::apply(Term::con("Event"), e.to_term()),
        }
    }

    pub fn wait_ms(&self) -> u64 {
        match self {
            StreamItem::Wait(n) => *n,
            StreamItem::Event(_) => 0,
        }
    }
}

impl fmt::Display for StreamItem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_term())
    }
}

/// Splits a virtual channel into output port and MIDI channel.
pub fn split_channel(virtual_channel: u32) -> (u32, u8) {
    (virtual_channel / 16, (virtual_channel % 16) as u8)
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum StreamError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("the stream is not a list: its head reduces to `{0}`")]
    IllFormedStream(String),
    #[error("ill-formed stream element `{term}`: {hint}")]
    IllFormedEvent { term: String, hint: String },
}

fn ill_formed(t: &Term) -> StreamError {
    StreamError::IllFormedEvent {
        term: render_term(t, Some(8)),
        hint: ACCEPTED_SHAPES.to_string(),
    }
}

fn seven_bit(t: &Term) -> Option<u8> {
    match t {
        Term::Int(n) if (0..=127).contains(n) => Some(*n as u8),
        _ => None,
    }
}

fn decode_midi(t: &Term, channel: u32, allow_channel: bool) -> Option<MidiEvent> {
    let (head, _) = t.spine();
    let Term::Constructor(name) = head else { return None };
    let args = t.spine_args();
    let data = match (&**name, args.as_slice()) {
        ("On", [p, v]) => EventData::NoteOn {
            pitch: seven_bit(p)?,
            velocity: seven_bit(v)?,
        },
        ("Off", [p, v]) => EventData::NoteOff {
            pitch: seven_bit(p)?,
            velocity: seven_bit(v)?,
        },
        ("PgmChange", [p]) => EventData::ProgramChange { program: seven_bit(p)? },
        ("Controller", [c, v]) => EventData::Controller {
            controller: seven_bit(c)?,
            value: seven_bit(v)?,
        },
        ("Channel", [Term::Int(ch), e]) if allow_channel => {
            let ch = u32::try_from(*ch).ok()?;
            return decode_midi(e, ch, false);
        }
        _ => return None,
    };
    Some(MidiEvent { channel, data })
}

/// Decodes a fully forced list element.
pub fn decode_event(value: &Term) -> Result<StreamItem, StreamError> {
    if let Some([n]) = value.as_constructor("Wait", 1).as_deref() {
        return match n {
            Term::Int(n) if *n >= 0 => Ok(StreamItem::Wait(*n as u64)),
            _ => Err(ill_formed(value)),
        };
    }
    if let Some([e]) = value.as_constructor("Event", 1).as_deref() {
        return decode_midi(e, 0, true).map(StreamItem::Event).ok_or_else(|| ill_formed(value));
    }
    Err(ill_formed(value))
}

/// One element taken off the front of a list term.
#[derive(Clone, Debug)]
pub struct Element {
    pub value: Term,
    pub steps: Vec<ReductionStep>,
    pub steps_used: u64,
}

impl Element {
    /// Source spans of every rule applied while producing the element.
    pub fn highlights(&self) -> BTreeSet<SourceSpan> {
        self.steps.iter().map(|s| s.rule_span.clone()).collect()
    }
}

#[derive(Clone, Debug)]
pub struct Extraction {
    pub item: StreamItem,
    pub highlights: BTreeSet<SourceSpan>,
    pub steps: Vec<ReductionStep>,
    pub steps_used: u64,
}

/// Reduces `term` to a list cell and fully forces its head. On success the
/// head is returned and `term` becomes the (unevaluated) tail; `None` means
/// the list is empty. On error `term` keeps whatever reduction happened.
pub fn next_element(program: &Program, term: &mut Term, budget: Budget) -> Result<Option<Element>, StreamError> {
    let mut ev = Evaluator::new(program, budget, term_node_count(term));
    ev.whnf(term)?;
    match term.spine() {
        (Term::Constructor(c), 0) if &**c == "[]" => return Ok(None),
        (Term::Constructor(c), 2) if &**c == ":" => {}
        (head, _) => {
            let shown = if matches!(head, Term::Constructor(_)) { term } else { head };
            return Err(StreamError::IllFormedStream(render_term(shown, Some(4))));
        }
    }
    {
        let Term::Apply(cell, _) = &mut *term else { unreachable!() };
        let Term::Apply(_, head) = &mut **cell else { unreachable!() };
        ev.force_at(&[Branch::Function, Branch::Argument], head)?;
    }
    let (_, mut args) = mem::replace(term, Term::nil()).into_spine();
    *term = args.pop().expect("cons tail");
    let value = args.pop().expect("cons head");
    let steps_used = ev.steps_used();
    Ok(Some(Element {
        value,
        steps: ev.into_steps(),
        steps_used,
    }))
}

/// Extracts the next stream item from `term`, leaving the rest in place.
pub fn next_item(program: &Program, term: &mut Term, budget: Budget) -> Result<Option<Extraction>, StreamError> {
    let Some(el) = next_element(program, term, budget)? else {
        return Ok(None);
    };
    let item = decode_event(&el.value)?;
    Ok(Some(Extraction {
        item,
        highlights: el.highlights(),
        steps: el.steps,
        steps_used: el.steps_used,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::{parse_expr, parse_module};
    use crate::term::desugar;

    fn d(src: &str) -> Term {
        desugar(&parse_expr(src).unwrap())
    }

    #[test]
    fn split_examples() {
        assert_eq!(split_channel(40), (2, 8));
        assert_eq!(split_channel(0), (0, 0));
        assert_eq!(split_channel(15), (0, 15));
        assert_eq!(split_channel(16), (1, 0));
    }

    #[test]
    fn decode_shapes() {
        assert_eq!(
            decode_event(&d("Event (On 60 64)")).unwrap(),
            StreamItem::Event(MidiEvent::note_on(0, 60, 64))
        );
        assert_eq!(
            decode_event(&d("Event (Channel 40 (On 60 64))")).unwrap(),
            StreamItem::Event(MidiEvent::note_on(40, 60, 64))
        );
        assert_eq!(decode_event(&d("Wait 0")).unwrap(), StreamItem::Wait(0));
        for bad in [
            "Event (On 200 64)",
            "Wait (-1)",
            "Event (On 60)",
            "Event (Channel 1 (Channel 2 (On 1 1)))",
            "Event (Channel (-1) (On 1 1))",
            "Wait \"x\"",
            "5",
        ] {
            assert!(matches!(decode_event(&d(bad)), Err(StreamError::IllFormedEvent { .. })), "{bad}");
        }
    }

    #[test]
    fn first_program_first_item() {
        let src = "main =\n   [ Event (On c5 normalVelocity)\n   , Wait 100\n   , Event (Off c5 normalVelocity)\n   ] ;\n\nc5 = 60 ;\nnormalVelocity = 64 ;\n";
        let p = Program::with_prelude(vec![parse_module(src, "Main").unwrap()]).unwrap();
        let mut t = p.entry_term("Main", "main").unwrap();
        let x = next_item(&p, &mut t, Budget::default()).unwrap().unwrap();
        assert_eq!(x.item, StreamItem::Event(MidiEvent::note_on(0, 60, 64)));
        assert_eq!(x.highlights.len(), 3);
        assert_eq!(t.to_string(), "Wait 100 : Event (Off c5 normalVelocity) : []");
        let w = next_item(&p, &mut t, Budget::default()).unwrap().unwrap();
        assert_eq!(w.item, StreamItem::Wait(100));
        assert!(w.highlights.is_empty());
        next_item(&p, &mut t, Budget::default()).unwrap().unwrap();
        assert!(next_item(&p, &mut t, Budget::default()).unwrap().is_none());
    }

    #[test]
    fn non_list_stream() {
        let p = Program::with_prelude(vec![parse_module("main = 5 ;", "Main").unwrap()]).unwrap();
        let mut t = p.entry_term("Main", "main").unwrap();
        assert_eq!(
            next_item(&p, &mut t, Budget::default()).unwrap_err(),
            StreamError::IllFormedStream("5".into())
        );
    }

    #[test]
    fn redex_paths_are_relative_to_root() {
        let p = Program::with_prelude(vec![parse_module("main = [x] ; x = Wait 1 ;", "Main").unwrap()]).unwrap();
        let mut t = p.entry_term("Main", "main").unwrap();
        let x = next_item(&p, &mut t, Budget::default()).unwrap().unwrap();
        assert_eq!(x.steps[0].redex_path, Vec::<Branch>::new());
        assert_eq!(x.steps[1].redex_path, vec![Branch::Function, Branch::Argument]);
    }
}
