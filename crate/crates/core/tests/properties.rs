use std::sync::Arc;

use liveseq_core::backend::{log_line, parse_log_line, MemoryOutput, ScheduledMessage};
use liveseq_core::scheduler::{Mode, Session, SessionConfig};
use liveseq_core::store::ProgramStore;
use liveseq_core::*;
use proptest::prelude::*;

fn leaf() -> impl Strategy<Value = Term> {
    prop_oneof![
        prop::sample::select(vec!["f", "xs", "note", "++", "+", "-", "*", "<", "&&", "$", "=:=", "div"]).prop_map(Term::var),
        prop::sample::select(vec!["Wait", "Event", "On", ":", "[]", "True"]).prop_map(Term::con),
        (-300i64..300).prop_map(Term::Int),
        "[a-z\"\\\\ \n]{0,4}".prop_map(|s| Term::Str(s.as_str().into())),
    ]
}

fn term() -> impl Strategy<Value = Term> {
    leaf().prop_recursive(6, 48, 2, |inner| (inner.clone(), inner).prop_map(|(f, x)| Term::apply(f, x)))
}

fn desugared(src: &str) -> Term {
    liveseq_core::term::desugar(&parse_expr(src).unwrap_or_else(|e| panic!("{src:?}: {e}")))
}

fn event_data() -> impl Strategy<Value = EventData> {
    prop_oneof![
        (0u8..128, 0u8..128).prop_map(|(pitch, velocity)| EventData::NoteOn { pitch, velocity }),
        (0u8..128, 0u8..128).prop_map(|(pitch, velocity)| EventData::NoteOff { pitch, velocity }),
        (0u8..128).prop_map(|program| EventData::ProgramChange { program }),
        (0u8..128, 0u8..128).prop_map(|(controller, value)| EventData::Controller { controller, value }),
    ]
}

fn item() -> impl Strategy<Value = StreamItem> {
    prop_oneof![
        (0u64..100_000).prop_map(StreamItem::Wait),
        (0u32..1000, event_data()).prop_map(|(channel, data)| StreamItem::Event(MidiEvent { channel, data })),
    ]
}

proptest! {
    #[test]
    fn render_parses_back(t in term()) {
        let text = render_term_unlimited(&t);
        prop_assert_eq!(desugared(&text), t, "{}", text);
    }

    #[test]
    fn split_channel_is_a_bijection(v in any::<u32>()) {
        let (port, ch) = split_channel(v);
        prop_assert!(ch < 16);
        prop_assert_eq!(port * 16 + ch as u32, v);
    }

    #[test]
    fn log_lines_round_trip(ts in any::<u64>(), channel in any::<u32>(), data in event_data()) {
        let m = ScheduledMessage::new(ts, &MidiEvent { channel, data });
        let line = log_line(&m);
        prop_assert!(!line.contains('\n'));
        prop_assert_eq!(parse_log_line(&line), Some(m));
    }

    #[test]
    fn decode_inverts_item_rendering(it in item()) {
        let text = render_term_unlimited(&it.to_term());
        prop_assert_eq!(decode_event(&desugared(&text)).unwrap(), it);
    }
}

const COUNTING: &str = "count n = Wait n : count (n + 1) ;\nsum [] = 0 ;\nsum (x : xs) = x + sum xs ;\nupto n = uptoFrom 1 n ;\nuptoFrom a b = go (a > b) a b ;\ngo True _a _b = [] ;\ngo False a b = a : uptoFrom (a + 1) b ;\n";

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn larger_budgets_give_identical_results(n in 0i64..40, steps in 1u64..400, extra in 0u64..1000) {
        let p = Program::load(vec![parse_module(COUNTING, "Main").unwrap()]).unwrap();
        let src = format!("sum (upto {n})");
        let small = Budget { max_steps: steps, ..Budget::default() };
        let large = Budget { max_steps: steps + extra, ..Budget::default() };
        let mut a = p.parse_term("Main", &src).unwrap();
        if let Ok(steps_a) = force(&p, &mut a, small) {
            let mut b = p.parse_term("Main", &src).unwrap();
            let steps_b = force(&p, &mut b, large).unwrap();
            prop_assert_eq!(a, b);
            prop_assert_eq!(steps_a, steps_b);
        }
    }

    #[test]
    fn cycle_matches_its_unfolding(waits in prop::collection::vec(0u64..20, 1..6), n in 1usize..100) {
        let list = format!("[{}]", waits.iter().map(|w| format!("Wait {w}")).collect::<Vec<_>>().join(", "));
        let p = Program::with_prelude(vec![parse_module("x = 1 ;", "Main").unwrap()]).unwrap();
        let mut a = p.parse_term("Main", &format!("cycle {list}")).unwrap();
        let mut b = p.parse_term("Main", &format!("{list} ++ cycle {list}")).unwrap();
        for _ in 0..n {
            let ia = next_item(&p, &mut a, Budget::default()).unwrap().unwrap().item;
            let ib = next_item(&p, &mut b, Budget::default()).unwrap().unwrap().item;
            prop_assert_eq!(ia, ib);
        }
    }

    #[test]
    fn failed_swaps_leave_the_program_untouched(body in "[a-z ()\\[\\]+:;0-9=]{0,24}") {
        let p = Program::with_prelude(vec![parse_module("main = [] ;", "Main").unwrap()]).unwrap();
        let before = p.fingerprint();
        let src = format!("main = {body}");
        if let Ok(m) = parse_module(&src, "Main") {
            if let Ok(q) = p.swap_module(m) {
                prop_assert_eq!(q.generation(), 1);
            }
        }
        prop_assert_eq!(p.fingerprint(), before);
        prop_assert_eq!(p.generation(), 0);
    }

    #[test]
    fn store_matches_fresh_compile(edits in prop::collection::vec("(main = \\[Wait [0-9]\\] ;|main = \\[\\] ;|main = ;|main = \\[x\\] ;|\\-\\- EDITABLE)\n", 1..8)) {
        let header = "module Main where\nx = Wait 1 ;\n-- EDITABLE\n";
        let mut store = ProgramStore::from_sources([("Main", format!("{header}main = [] ;\n"))]).unwrap();
        for e in edits {
            let before = (store.content_hash(), store.generation());
            match store.submit_edit("Main", &e, None) {
                Ok(g) => prop_assert_eq!(g, before.1 + 1),
                Err(_) => prop_assert_eq!((store.content_hash(), store.generation()), before),
            }
            prop_assert!(store.view("Main").unwrap().header == header);
            prop_assert_eq!(store.reparse().unwrap().fingerprint(), store.program().fingerprint());
        }
    }
}

fn timing_session(latency_ms: u64) -> (Session, MemoryOutput) {
    timing_session_with(SessionConfig {
        latency_ms,
        ..SessionConfig::default()
    })
}

fn timing_session_with(config: SessionConfig) -> (Session, MemoryOutput) {
    let src = "main = note 130 c ++ note 70 e ++ [Wait 0] ++ note 210 g ++ main ;\nnote d p = [Event (On p 64), Wait d, Event (Off p 64)] ;\nc = 60 ; e = 64 ; g = 67 ;\n";
    let p = Program::with_prelude(vec![parse_module(src, "Main").unwrap()]).unwrap();
    let out = MemoryOutput::default();
    (Session::new(Arc::new(p), config, Box::new(out.clone())).unwrap(), out)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lookahead_bound_holds(latency in 1u64..400, ticks in prop::collection::vec(1u64..90, 1..60)) {
        let (mut s, out) = timing_session(latency);
        s.play(0).unwrap();
        let mut now = 0;
        for dt in ticks {
            now += dt;
            s.tick(now);
            for m in s.sequencer().pending() {
                prop_assert!(m.timestamp <= now + latency);
            }
            for d in out.take() {
                prop_assert!(d.delivered_at >= d.message.timestamp);
                prop_assert!(d.delivered_at <= now);
            }
        }
    }

    #[test]
    fn pause_shifts_later_deliveries(pause_at in 0u64..2000, pause_for in 0u64..5000) {
        let (mut reference, ref_out) = timing_session(100);
        reference.play(0).unwrap();
        let mut now = 0;
        while now < 6000 {
            now += 1;
            reference.tick(now);
        }
        let expected: Vec<_> = ref_out.take();

        let (mut s, out) = timing_session(100);
        s.play(0).unwrap();
        let mut now = 0;
        while now < pause_at {
            now += 1;
            s.tick(now);
        }
        s.pause(now).unwrap();
        now += pause_for;
        s.tick(now);
        s.resume(now).unwrap();
        while now < 6000 + pause_for {
            now += 1;
            s.tick(now);
        }
        let got = out.take();
        prop_assert_eq!(got.len(), expected.len());
        for (g, e) in got.iter().zip(&expected) {
            prop_assert_eq!(g.message, e.message);
            let shift = if e.delivered_at <= pause_at { 0 } else { pause_for };
            prop_assert_eq!(g.delivered_at, e.delivered_at + shift);
        }
    }

    #[test]
    fn modes_extract_the_same_items(n in 1u64..60) {
        let mut traces = Vec::new();
        for mode in [Mode::RealTime, Mode::SlowMotion { step_pause_ms: 7 }, Mode::SingleStep] {
            let (mut s, _) = timing_session_with(SessionConfig {
                mode,
                record_items: true,
                event_limit: Some(n),
                ..SessionConfig::default()
            });
            let mut now = 0;
            if mode == Mode::SingleStep {
                while !s.is_finished() {
                    s.step(now).unwrap();
                }
            } else {
                s.play(0).unwrap();
                while !s.is_finished() {
                    now += 1;
                    s.tick(now);
                }
            }
            traces.push(s.trace().to_vec());
        }
        prop_assert_eq!(&traces[0], &traces[1]);
        prop_assert_eq!(&traces[0], &traces[2]);
    }
}
