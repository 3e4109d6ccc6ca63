//! Deterministic arithmetic word problems with eight scripted rationale
//! styles, used as an offline stand-in for teacher generation.

use rand::Rng;

use super::{extract_answer, ReasoningSample, NUM_PERSPECTIVES};
use crate::error::{Error, Result};
use crate::numeric::seeded_rng;

const NAMES: [&str; 10] = [
    "ava", "ben", "cara", "dan", "eli", "fay", "gus", "hana", "ivan", "jade",
];
const ITEMS: [&str; 8] = [
    "apples", "pens", "books", "coins", "shells", "cards", "stamps", "marbles",
];
/// Inclusive range of the larger operand for difficulty levels 1..=5.
const LEVEL_BOUNDS: [(u32, u32); 5] = [(1, 5), (6, 10), (11, 20), (21, 40), (41, 80)];

#[derive(Debug, Clone, Copy)]
enum Op {
    Add,
    Sub,
    Mul,
}

struct Problem {
    name: &'static str,
    items: &'static str,
    op: Op,
    a: u32,
    b: u32,
}

impl Problem {
    fn result(&self) -> i64 {
        let (a, b) = (self.a as i64, self.b as i64);
        match self.op {
            Op::Add => a + b,
            Op::Sub => a - b,
            Op::Mul => a * b,
        }
    }

    fn question(&self) -> String {
        let Problem { name, items, a, b, .. } = self;
        match self.op {
            Op::Add => format!(
                "{name} has {a} {items} and gets {b} more {items} . how many {items} does {name} have now ?"
            ),
            Op::Sub => format!(
                "{name} has {a} {items} and gives away {b} {items} . how many {items} does {name} have left ?"
            ),
            Op::Mul => format!(
                "{name} buys {a} boxes with {b} {items} in each box . how many {items} does {name} buy ?"
            ),
        }
    }

    fn subject(&self) -> &'static str {
        match self.op {
            Op::Add => "addition",
            Op::Sub => "subtraction",
            Op::Mul => "multiplication",
        }
    }

    /// (verb, symbol, word) for the operation.
    fn words(&self) -> (&'static str, &'static str, &'static str) {
        match self.op {
            Op::Add => ("add", "+", "plus"),
            Op::Sub => ("subtract", "-", "minus"),
            Op::Mul => ("multiply", "*", "times"),
        }
    }

    fn rationale(&self, style: usize) -> String {
        let Problem { name, items, a, b, .. } = self;
        let r = self.result();
        let (verb, sym, word) = self.words();
        match style {
            0 => format!("let x = {a} {sym} {b} . then x = {r} . #### {r}"),
            1 => format!(
                "think of it simply : we start from {a} {items} and {word} {b} gives {r} {items} . #### {r}"
            ),
            2 => format!(
                "step 1 : the first amount is {a} . step 2 : the second amount is {b} . step 3 : {a} {sym} {b} = {r} . #### {r}"
            ),
            3 => format!(
                "plan : find both amounts then {verb} them . execution : {a} {sym} {b} = {r} . answer : {r} . #### {r}"
            ),
            4 => format!(
                "this is like counting coins : {a} coins {word} {b} coins makes {r} coins , so {name} ends with {r} {items} . #### {r}"
            ),
            5 => format!(
                "what is known ? {a} and {b} . what follows ? we {verb} them . so {a} {sym} {b} = {r} . #### {r}"
            ),
            6 => format!(
                "option a is {} and option b is {r} . checking {a} {sym} {b} gives {r} , so option b wins . #### {r}",
                r + 1
            ),
            7 => format!(
                "if {name} had {} instead the result would differ . with the actual {a} and {b} we get {a} {sym} {b} = {r} . #### {r}",
                a + 1
            ),
            _ => unreachable!("only {NUM_PERSPECTIVES} styles"),
        }
    }
}

fn level_of(larger: u32) -> u8 {
    LEVEL_BOUNDS
        .iter()
        .position(|&(lo, hi)| (lo..=hi).contains(&larger))
        .map(|i| i as u8 + 1)
        .unwrap_or(5)
}

pub fn make_synthetic_corpus(n_questions: usize, seed: u64) -> Result<Vec<ReasoningSample>> {
    if n_questions == 0 {
        return Err(Error::Domain("n_questions must be at least 1".into()));
    }
    let mut rng = seeded_rng(seed, 0x5e7);
    let mut out = Vec::with_capacity(n_questions);
    for i in 0..n_questions {
        let level_idx = rng.random_range(0..LEVEL_BOUNDS.len());
        let (lo, hi) = LEVEL_BOUNDS[level_idx];
        let larger = rng.random_range(lo..=hi);
        let op = match rng.random_range(0..3) {
            0 => Op::Add,
            1 => Op::Sub,
            _ => Op::Mul,
        };
        let smaller = match op {
            Op::Mul => rng.random_range(2..=5),
            _ => rng.random_range(1..=larger),
        };
        let problem = Problem {
            name: NAMES[rng.random_range(0..NAMES.len())],
            items: ITEMS[rng.random_range(0..ITEMS.len())],
            op,
            a: larger,
            b: smaller,
        };
        let rationales: std::collections::BTreeMap<usize, String> = (0..NUM_PERSPECTIVES)
            .map(|k| (k, problem.rationale(k)))
            .collect();
        let predictions = rationales
            .iter()
            .map(|(&k, r)| (k, extract_answer(r)))
            .collect();
        out.push(ReasoningSample {
            sample_id: format!("syn{seed}-{i:04}"),
            question: problem.question(),
            gold_answer: problem.result().to_string(),
            rationales,
            predictions,
            difficulty_level: level_of(larger),
            subject: problem.subject().to_string(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{filter_sample, FilterConfig};
    use std::collections::BTreeSet;

    #[test]
    fn same_seed_same_corpus() {
        assert_eq!(
            make_synthetic_corpus(4, 7).unwrap(),
            make_synthetic_corpus(4, 7).unwrap()
        );
        assert_ne!(
            make_synthetic_corpus(4, 7).unwrap(),
            make_synthetic_corpus(4, 8).unwrap()
        );
    }

    #[test]
    fn every_sample_survives_filtering() {
        for s in make_synthetic_corpus(50, 2).unwrap() {
            let out = filter_sample(&s, &FilterConfig::default());
            assert_eq!(out.sample, s);
        }
    }

    #[test]
    fn rationale_count_is_eight_per_question() {
        let corpus = make_synthetic_corpus(64, 1).unwrap();
        let total: usize = corpus.iter().map(|s| s.rationales.len()).sum();
        assert_eq!(total, 64 * 8);
    }

    #[test]
    fn styles_are_distinct_and_levels_cover_range() {
        let corpus = make_synthetic_corpus(64, 1).unwrap();
        for s in &corpus {
            let texts: BTreeSet<_> = s.rationales.values().collect();
            assert_eq!(texts.len(), 8);
        }
        let levels: BTreeSet<u8> = corpus.iter().map(|s| s.difficulty_level).collect();
        assert_eq!(levels, (1..=5).collect());
    }

    #[test]
    fn empty_request_is_rejected() {
        assert!(make_synthetic_corpus(0, 1).is_err());
    }
}
