//! Interpreter core for a live-coded, lazily evaluated music language.
//!
//! A program is a set of rewrite rules over a small Haskell-like syntax.
//! Evaluating the entry term lazily yields a stream of waits and MIDI events,
//! which the scheduler turns into timestamped output. Modules can be swapped
//! while a stream plays; already expanded parts keep their old meaning.

pub mod backend;
pub mod engine;
pub mod eval;
pub mod prelude;
pub mod program;
pub mod scheduler;
pub mod store;
pub mod stream;
pub mod syntax;
pub mod term;

pub use eval::{force, whnf, Budget, EvalError, Evaluator, ReductionStep};
pub use program::{LoadError, Program};
pub use stream::{decode_event, next_element, next_item, split_channel, EventData, Extraction, MidiEvent, StreamError, StreamItem};
pub use syntax::{parse_expr, parse_module, render_term, render_term_unlimited, SourceSpan, Span, SyntaxError};
pub use term::{term_node_count, Branch, Name, Term};
