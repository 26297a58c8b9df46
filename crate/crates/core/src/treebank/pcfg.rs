use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Tree, Treebank};
use crate::error::{Error, Result};

/// Sentences longer than this are rejected and resampled.
pub const MAX_SENTENCE_LEN: usize = 40;

/// Consecutive rejections tolerated before a grammar is declared non-terminating.
pub const MAX_RESAMPLES: usize = 10_000;

const MAX_RECURSION: usize = 4 * MAX_SENTENCE_LEN;

#[derive(Clone, Debug, PartialEq)]
pub struct Rule {
    pub lhs: String,
    pub rhs: Vec<String>,
    pub weight: f64,
}

/// A weighted context-free grammar. Symbols containing no uppercase letters
/// are terminals; the left-hand side of the first rule is the start symbol.
#[derive(Clone, Debug)]
pub struct Grammar {
    start: String,
    // lhs -> (rhs, normalized probability)
    rules: HashMap<String, Vec<(Vec<String>, f64)>>,
}

fn is_terminal(sym: &str) -> bool {
    !sym.chars().any(char::is_uppercase)
}

impl Grammar {
    /// Parses `LHS -> RHS... : weight` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Grammar> {
        let mut parsed = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse { line: i + 1, msg };
            let (lhs, rest) = line
                .split_once("->")
                .ok_or_else(|| err("missing '->'".into()))?;
            let (rhs, weight) = rest
                .rsplit_once(':')
                .ok_or_else(|| err("missing ': weight'".into()))?;
            let lhs = lhs.trim();
            if lhs.is_empty() || lhs.contains(char::is_whitespace) {
                return Err(err(format!("bad left-hand side '{lhs}'")));
            }
            if is_terminal(lhs) {
                return Err(err(format!("terminal '{lhs}' cannot be rewritten")));
            }
            let rhs: Vec<String> = rhs.split_whitespace().map(str::to_owned).collect();
            if rhs.is_empty() {
                return Err(err("empty right-hand side".into()));
            }
            if let Some(bad) = rhs.iter().find(|s| s.contains(['(', ')'])) {
                return Err(err(format!("symbol '{bad}' contains a parenthesis")));
            }
            let weight: f64 = weight
                .trim()
                .parse()
                .map_err(|_| err(format!("bad weight '{}'", weight.trim())))?;
            parsed.push(Rule {
                lhs: lhs.to_owned(),
                rhs,
                weight,
            });
        }
        Grammar::from_rules(parsed)
    }

    pub fn from_rules(rules: Vec<Rule>) -> Result<Grammar> {
        let start = rules
            .first()
            .map(|r| r.lhs.clone())
            .ok_or_else(|| Error::Grammar("no rules".into()))?;
        let mut by_lhs: HashMap<String, Vec<(Vec<String>, f64)>> = HashMap::new();
        for r in rules {
            if !(r.weight.is_finite() && r.weight > 0.0) {
                return Err(Error::Grammar(format!(
                    "rule {} -> {} has non-positive or non-finite weight {}",
                    r.lhs,
                    r.rhs.join(" "),
                    r.weight
                )));
            }
            by_lhs.entry(r.lhs).or_default().push((r.rhs, r.weight));
        }
        for (lhs, alts) in by_lhs.iter_mut() {
            let total: f64 = alts.iter().map(|(_, w)| w).sum();
            if !(total.is_finite() && total > 0.0) {
                return Err(Error::Grammar(format!("weights for {lhs} cannot be normalized")));
            }
            alts.iter_mut().for_each(|(_, w)| *w /= total);
        }
        for alts in by_lhs.values() {
            for (rhs, _) in alts {
                if let Some(sym) = rhs.iter().find(|s| !is_terminal(s) && !by_lhs.contains_key(*s)) {
                    return Err(Error::Grammar(format!("nonterminal '{sym}' has no rules")));
                }
            }
        }
        Ok(Grammar {
            start,
            rules: by_lhs,
        })
    }

    pub fn start(&self) -> &str {
        &self.start
    }

    /// Samples `n` trees top-down. Output depends only on (grammar, n, seed).
    pub fn generate(&self, n: usize, seed: u64) -> Result<Treebank> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.sample_sentence(&mut rng)?);
        }
        Treebank::new(out, format!("synthetic(seed={seed})"))
    }

    pub fn sample_sentence<R: Rng>(&self, rng: &mut R) -> Result<Tree> {
        for _ in 0..MAX_RESAMPLES {
            let mut budget = MAX_SENTENCE_LEN;
            if let Some(t) = self.expand(&self.start, rng, &mut budget, 0) {
                return Ok(t);
            }
        }
        Err(Error::Grammar(format!(
            "no derivation of at most {MAX_SENTENCE_LEN} words after {MAX_RESAMPLES} attempts"
        )))
    }

    // None when the word budget or recursion bound is exhausted.
    fn expand<R: Rng>(&self, sym: &str, rng: &mut R, budget: &mut usize, level: usize) -> Option<Tree> {
        if is_terminal(sym) {
            if *budget == 0 {
                return None;
            }
            *budget -= 1;
            return Some(Tree::Leaf(sym.to_owned()));
        }
        if level > MAX_RECURSION {
            return None;
        }
        let alts = &self.rules[sym];
        let mut u: f64 = rng.gen();
        let mut choice = &alts[alts.len() - 1].0;
        for (rhs, p) in alts {
            if u < *p {
                choice = rhs;
                break;
            }
            u -= p;
        }
        let mut children = Vec::with_capacity(choice.len());
        for s in choice {
            children.push(self.expand(s, rng, budget, level + 1)?);
        }
        // A nonterminal over a single word is a preterminal and is dropped.
        if children.len() == 1 && children[0].is_leaf() {
            return children.pop();
        }
        Some(Tree::Node {
            label: Some(sym.to_owned()),
            children,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_terminal_grammar() {
        let g = Grammar::parse("S -> a : 1.0").unwrap();
        let tb = g.generate(3, 0).unwrap();
        assert_eq!(tb.len(), 3);
        assert!(tb.iter().all(|t| *t == Tree::leaf("a")));
    }

    #[test]
    fn generation_is_deterministic() {
        let g = Grammar::parse(
            "S -> NP VP : 1\nNP -> the N : 1\nN -> cat : 1\nN -> dog : 2\nVP -> sat : 1\nVP -> saw NP : 1",
        )
        .unwrap();
        assert_eq!(g.generate(20, 9).unwrap(), g.generate(20, 9).unwrap());
        assert_ne!(g.generate(20, 9).unwrap(), g.generate(20, 10).unwrap());
    }

    #[test]
    fn right_branching_grammar_depth_tracks_length() {
        let g = Grammar::parse("# chain\nS -> a S : 0.5\nS -> a : 0.5").unwrap();
        let tb = g.generate(500, 3).unwrap();
        let n = tb.len() as f64;
        let mean_len = tb.iter().map(|t| t.leaf_count() as f64).sum::<f64>() / n;
        let mean_depth = tb.iter().map(|t| t.depth() as f64).sum::<f64>() / n;
        assert!((mean_depth - (mean_len - 1.0)).abs() < 1e-12);
        assert!(mean_len > 1.5);
    }

    #[test]
    fn rejects_bad_weights() {
        assert!(matches!(Grammar::parse("S -> a : 0"), Err(Error::Grammar(_))));
        assert!(matches!(Grammar::parse("S -> a : -1"), Err(Error::Grammar(_))));
        assert!(matches!(Grammar::parse("S -> a : nan"), Err(Error::Grammar(_))));
        assert!(matches!(Grammar::parse("S -> a : x"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn detects_non_terminating_grammar() {
        let g = Grammar::parse("S -> S S : 1\nS -> a : 0.0001").unwrap();
        assert!(matches!(g.sample_sentence(&mut ChaCha8Rng::seed_from_u64(1)), Err(Error::Grammar(_))));
    }

    #[test]
    fn undefined_nonterminal_is_an_error() {
        assert!(matches!(Grammar::parse("S -> NP v : 1"), Err(Error::Grammar(_))));
    }
}
