//! Library modules written in the interpreted language and bundled as text.

use crate::syntax::{parse_module, ParsedModule};

pub const PRELUDE: &[(&str, &str)] = &[
    ("List", include_str!("../prelude/List.hs")),
    ("Midi", include_str!("../prelude/Midi.hs")),
];

pub fn prelude_sources() -> impl Iterator<Item = (&'static str, &'static str)> {
    PRELUDE.iter().copied()
}

pub fn is_prelude_module(name: &str) -> bool {
    PRELUDE.iter().any(|(n, _)| *n == name)
}

/// Parsed prelude modules. The sources are fixed, so a parse failure is a bug.
pub fn parsed_prelude() -> Vec<ParsedModule> {
    PRELUDE
        .iter()
        .map(|(name, src)| parse_module(src, name).unwrap_or_else(|e| panic!("prelude module {name}: {e}")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{force, Budget};
    use crate::program::Program;

    fn eval(src: &str) -> String {
        let main = parse_module("import Midi ; x = 1 ;", "Main").unwrap();
        let p = Program::with_prelude(vec![main]).unwrap();
        let mut t = p.parse_term("Main", src).unwrap();
        force(&p, &mut t, Budget::default()).unwrap();
        t.to_string()
    }

    #[test]
    fn prelude_loads() {
        assert_eq!(parsed_prelude().len(), 2);
        Program::with_prelude(vec![]).unwrap();
    }

    #[test]
    fn note_expands_to_three_items() {
        assert_eq!(
            eval("note 200 60"),
            "Event (On 60 64) : Wait 200 : Event (Off 60 64) : []"
        );
    }

    #[test]
    fn merge_examples() {
        assert_eq!(eval("(Wait 4 : []) =:= (Wait 4 : [])"), "Wait 4 : []");
        assert_eq!(eval("[] =:= (Wait 7 : [])"), "Wait 7 : []");
        assert_eq!(eval("[Wait 3] =:= [Wait 5]"), "Wait 5 : []");
        assert_eq!(eval("[Wait 5] =:= [Wait 3]"), "Wait 5 : []");
        assert_eq!(
            eval("[Wait 100, Event (On 1 1)] =:= [Wait 50, Event (On 2 2)]"),
            "Wait 50 : Event (On 2 2) : Wait 50 : Event (On 1 1) : []"
        );
        assert_eq!(eval("[Event (On 1 1)] =:= [Event (On 2 2)]"), "Event (On 1 1) : Event (On 2 2) : []");
        assert_eq!(eval("[Wait 3, Event (On 1 1)] =:= [Wait 5]"), "Wait 3 : Event (On 1 1) : Wait 2 : []");
    }

    #[test]
    fn list_functions() {
        assert_eq!(eval("map negate [1, 2]"), "(-1) : (-2) : []");
        assert_eq!(eval("concat [[1], [], [2, 3]]"), "1 : 2 : 3 : []");
        assert_eq!(eval("replicate 3 7"), "7 : 7 : 7 : []");
        assert_eq!(eval("replicate 0 7"), "[]");
        assert_eq!(eval("zipWith (+) [1, 2, 3] [10, 20]"), "11 : 22 : []");
        assert_eq!(eval("tail [1, 2]"), "2 : []");
    }
}
