//! Workloads shared by the interpreter benchmarks.

use liveseq_core::{parse_module, Program};

pub const LOOPED_MELODY: &str = "main = note qn c ++ note qn d ++ note qn e ++ note qn f ++ note hn g ++ note hn g ++ main ;
note duration pitch = [Event (On pitch normalVelocity), Wait duration, Event (Off pitch normalVelocity)] ;
qn = 200 ;
hn = 2*qn ;
c = 60 ; d = 62 ; e = 64 ; f = 65 ; g = 67 ;
normalVelocity = 64 ;
";

pub const FIBONACCI: &str = "main = fix fibs ;
fibs x = 0 : 1 : zipWith (+) x (tail x) ;
fix f = f (fix f) ;
";

/// Two voices of `n` notes each, merged with `=:=`.
pub fn merge_source(n: usize) -> String {
    format!(
        "module Main where\nimport Midi ;\nmain = voice {n} 60 200 =:= voice {n} 72 300 ;\n\
voice n p d = voiceCheck (n <= 0) n p d ;\n\
voiceCheck True _n _p _d = [] ;\n\
voiceCheck False n p d = note d p ++ voice (n - 1) (p + 1) d ;\n"
    )
}

pub fn load(source: &str) -> Program {
    Program::with_prelude(vec![parse_module(source, "Main").expect("benchmark source parses")]).expect("benchmark program loads")
}

#[cfg(test)]
mod tests {
    use super::*;
    use liveseq_core::{next_item, Budget, StreamItem};

    #[test]
    fn merge_workload_is_finite() {
        let p = load(&merge_source(3));
        let mut t = p.entry_term("Main", "main").unwrap();
        let mut waits = 0;
        while let Some(x) = next_item(&p, &mut t, Budget::default()).unwrap() {
            if let StreamItem::Wait(ms) = x.item {
                waits += ms;
            }
        }
        assert_eq!(waits, 900);
    }
}
