//! Bracket scoring and the agreement analyses.
//!
//! Scores are per-sentence F1 on a 0..100 scale, macro-averaged over a
//! corpus. By default the whole-sentence span counts as a bracket and
//! single-word spans never do.

use std::collections::BTreeSet;
use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::treebank::{base_label, Tree, Treebank};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub label: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct BracketSet {
    pub spans: BTreeSet<Span>,
}

impl BracketSet {
    pub fn len(&self) -> usize {
        self.spans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    pub fn matched(&self, other: &BracketSet) -> usize {
        self.spans.intersection(&other.spans).count()
    }
}

/// Scoring convention.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct EvalOptions {
    pub include_full_span: bool,
    pub labeled: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            include_full_span: true,
            labeled: false,
        }
    }
}

/// One span per internal node covering at least two words.
pub fn brackets(t: &Tree, opts: EvalOptions) -> BracketSet {
    let n = t.leaf_count();
    let mut set = BracketSet::default();
    collect_spans(t, 0, opts.labeled, &mut set);
    if !opts.include_full_span {
        set.spans.retain(|s| !(s.start == 0 && s.end == n));
    }
    set
}

fn collect_spans(t: &Tree, start: usize, labeled: bool, out: &mut BracketSet) -> usize {
    match t {
        Tree::Leaf(_) => 1,
        Tree::Node { label, children } => {
            let mut width = 0;
            for c in children {
                width += collect_spans(c, start + width, labeled, out);
            }
            if width >= 2 {
                let label = if labeled {
                    label.as_deref().map(|l| base_label(l).to_owned())
                } else {
                    None
                };
                out.spans.insert(Span {
                    start,
                    end: start + width,
                    label,
                });
            }
            width
        }
    }
}

/// F1 between two bracket sets; 100 when both are empty, 0 when only one is.
pub fn bracket_f1(pred: &BracketSet, gold: &BracketSet) -> f64 {
    match (pred.is_empty(), gold.is_empty()) {
        (true, true) => return 100.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let hit = pred.matched(gold) as f64;
    if hit == 0.0 {
        return 0.0;
    }
    let p = hit / pred.len() as f64;
    let r = hit / gold.len() as f64;
    200.0 * p * r / (p + r)
}

fn check_same_leaves(pred: &Tree, gold: &Tree, index: usize) -> Result<()> {
    if pred.leaves() != gold.leaves() {
        return Err(Error::TokenMismatch {
            index,
            msg: format!(
                "predicted leaves '{}' differ from gold '{}'",
                pred.leaves().join(" "),
                gold.leaves().join(" ")
            ),
        });
    }
    Ok(())
}

pub fn sentence_f1(pred: &Tree, gold: &Tree, opts: EvalOptions) -> Result<f64> {
    check_same_leaves(pred, gold, 0)?;
    Ok(bracket_f1(&brackets(pred, opts), &brackets(gold, opts)))
}

/// Sentence-length buckets used by the length breakdowns.
pub const LENGTH_BUCKETS: [(&str, usize, usize); 5] = [
    ("0-10", 0, 10),
    ("10-20", 11, 20),
    ("20-30", 21, 30),
    ("30-40", 31, 40),
    (">40", 41, usize::MAX),
];

pub fn bucket_of(length: usize) -> usize {
    LENGTH_BUCKETS
        .iter()
        .position(|(_, lo, hi)| (*lo..=*hi).contains(&length))
        .expect("buckets cover all lengths")
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BucketStat {
    pub range: String,
    pub count: usize,
    pub avg_f1: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub per_sentence_f1: Vec<f64>,
    pub macro_f1: f64,
    pub labeled_f1: Option<f64>,
    pub buckets: Vec<BucketStat>,
    pub options: EvalOptions,
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Macro-averaged unlabeled F1 over aligned treebanks. With `opts.labeled`
/// the labeled score is reported alongside.
pub fn corpus_eval(pred: &Treebank, gold: &Treebank, opts: EvalOptions) -> Result<EvalReport> {
    if pred.len() != gold.len() {
        return Err(Error::Alignment(format!(
            "{} predicted trees for {} gold trees",
            pred.len(),
            gold.len()
        )));
    }
    let unlabeled = EvalOptions {
        labeled: false,
        ..opts
    };
    let mut per_sentence = Vec::with_capacity(gold.len());
    let mut labeled = Vec::new();
    let mut by_bucket = vec![Vec::new(); LENGTH_BUCKETS.len()];
    for (i, (p, g)) in pred.iter().zip(gold.iter()).enumerate() {
        check_same_leaves(p, g, i)?;
        let f1 = bracket_f1(&brackets(p, unlabeled), &brackets(g, unlabeled));
        per_sentence.push(f1);
        by_bucket[bucket_of(g.leaf_count())].push(f1);
        if opts.labeled {
            labeled.push(bracket_f1(&brackets(p, opts), &brackets(g, opts)));
        }
    }
    let buckets = LENGTH_BUCKETS
        .iter()
        .zip(&by_bucket)
        .map(|((name, _, _), v)| BucketStat {
            range: (*name).to_owned(),
            count: v.len(),
            avg_f1: mean(v),
        })
        .collect();
    Ok(EvalReport {
        macro_f1: mean(&per_sentence),
        per_sentence_f1: per_sentence,
        labeled_f1: opts.labeled.then(|| mean(&labeled)),
        buckets,
        options: opts,
    })
}

/// Groups parses of one sentence by unlabeled bracket identity and returns
/// the largest group's first member with the group size. Equal-size groups
/// resolve to the one seen first.
pub fn agreement_groups(parses: &[Tree]) -> Result<(Tree, usize)> {
    let first = parses
        .first()
        .ok_or_else(|| Error::Empty("no parses to group".into()))?;
    let opts = EvalOptions::default();
    let mut groups: Vec<(BracketSet, usize, usize)> = Vec::new();
    for (i, p) in parses.iter().enumerate() {
        check_same_leaves(p, first, i)?;
        let b = brackets(p, opts);
        match groups.iter_mut().find(|(g, _, _)| *g == b) {
            Some(entry) => entry.2 += 1,
            None => groups.push((b, i, 1)),
        }
    }
    let mut best = 0;
    for (gi, g) in groups.iter().enumerate() {
        if g.2 > groups[best].2 {
            best = gi;
        }
    }
    let (_, rep, count) = &groups[best];
    Ok((parses[*rep].clone(), *count))
}

/// One row per agreement count.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AgreementRow {
    pub n_agree: usize,
    pub count: usize,
    /// Modal parse against gold; empty when no gold trees were supplied.
    pub avg_f1: Option<f64>,
    pub avg_len: f64,
    pub avg_depth: f64,
}

/// Agreement count against modal-parse quality, length and depth, for every
/// count from 1 to the ensemble size. `parses[i]` holds the members' parses
/// of sentence `i`; length and depth are those of the modal parse.
pub fn agreement_report(
    parses: &[Vec<Tree>],
    gold: Option<&Treebank>,
    opts: EvalOptions,
) -> Result<Vec<AgreementRow>> {
    if let Some(g) = gold {
        if parses.len() != g.len() {
            return Err(Error::Alignment(format!(
                "{} ensemble entries for {} gold trees",
                parses.len(),
                g.len()
            )));
        }
    }
    let n_c = parses.first().map_or(0, Vec::len);
    let mut acc = vec![(0usize, 0.0, 0.0, 0.0); n_c];
    for (i, members) in parses.iter().enumerate() {
        if members.len() != n_c {
            return Err(Error::Alignment(format!(
                "sentence {i} has {} parses, expected {n_c}",
                members.len()
            )));
        }
        let (modal, n_a) = agreement_groups(members)?;
        let f1 = match gold {
            Some(g) => {
                let g = &g.sentences[i];
                check_same_leaves(&modal, g, i)?;
                bracket_f1(&brackets(&modal, opts), &brackets(g, opts))
            }
            None => 0.0,
        };
        let stats = modal.stats();
        let slot = &mut acc[n_a - 1];
        slot.0 += 1;
        slot.1 += f1;
        slot.2 += stats.length as f64;
        slot.3 += stats.depth as f64;
    }
    Ok(acc
        .into_iter()
        .enumerate()
        .map(|(i, (count, f1, len, depth))| {
            let c = count.max(1) as f64;
            AgreementRow {
                n_agree: i + 1,
                count,
                avg_f1: gold.map(|_| f1 / c),
                avg_len: len / c,
                avg_depth: depth / c,
            }
        })
        .collect())
}

/// Per-bucket share of sentences where one prediction beats another.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImprovementRow {
    pub range: String,
    pub count: usize,
    pub avg_f1: f64,
    pub pct_improved: f64,
}

/// Compares `candidate` to `baseline` sentence by sentence against `gold`;
/// `avg_f1` is the candidate's mean score in the bucket.
pub fn improvement_table(
    baseline: &Treebank,
    candidate: &Treebank,
    gold: &Treebank,
    opts: EvalOptions,
) -> Result<Vec<ImprovementRow>> {
    let base = corpus_eval(baseline, gold, opts)?;
    let cand = corpus_eval(candidate, gold, opts)?;
    let mut rows: Vec<(usize, f64, usize)> = vec![(0, 0.0, 0); LENGTH_BUCKETS.len()];
    for ((g, b), c) in gold.iter().zip(&base.per_sentence_f1).zip(&cand.per_sentence_f1) {
        let slot = &mut rows[bucket_of(g.leaf_count())];
        slot.0 += 1;
        slot.1 += c;
        if c > b {
            slot.2 += 1;
        }
    }
    Ok(LENGTH_BUCKETS
        .iter()
        .zip(rows)
        .map(|((name, _, _), (count, f1, improved))| ImprovementRow {
            range: (*name).to_owned(),
            count,
            avg_f1: if count == 0 { 0.0 } else { f1 / count as f64 },
            pct_improved: if count == 0 {
                0.0
            } else {
                100.0 * improved as f64 / count as f64
            },
        })
        .collect())
}

/// Serializes rows with a header line.
pub fn write_csv<W: Write, T: Serialize>(w: W, rows: &[T]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r).map_err(|e| Error::Model(format!("csv: {e}")))?;
    }
    wtr.flush().map_err(|e| Error::io("writing csv", e))
}

/// Trivial baselines used to sanity-check the scoring convention.
pub fn left_branching(tokens: &[String]) -> Tree {
    let mut it = tokens.iter();
    let mut t = Tree::Leaf(it.next().expect("non-empty sentence").clone());
    for tok in it {
        t = Tree::pair(t, Tree::Leaf(tok.clone()));
    }
    t
}

pub fn right_branching(tokens: &[String]) -> Tree {
    let mut it = tokens.iter().rev();
    let mut t = Tree::Leaf(it.next().expect("non-empty sentence").clone());
    for tok in it {
        t = Tree::pair(Tree::Leaf(tok.clone()), t);
    }
    t
}

/// Uniform random split points, recursively.
pub fn random_tree<R: rand::Rng>(tokens: &[String], rng: &mut R) -> Tree {
    if tokens.len() == 1 {
        return Tree::Leaf(tokens[0].clone());
    }
    let k = rng.gen_range(1..tokens.len());
    Tree::pair(random_tree(&tokens[..k], rng), random_tree(&tokens[k..], rng))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> Tree {
        s.parse().unwrap()
    }

    fn spans(pairs: &[(usize, usize)]) -> BTreeSet<Span> {
        pairs
            .iter()
            .map(|&(start, end)| Span { start, end, label: None })
            .collect()
    }

    #[test]
    fn brackets_enumerate_internal_nodes() {
        let b = t("(_ (_ a b) (_ c d))");
        assert_eq!(brackets(&b, EvalOptions::default()).spans, spans(&[(0, 2), (2, 4), (0, 4)]));
        let no_full = EvalOptions {
            include_full_span: false,
            ..Default::default()
        };
        assert_eq!(brackets(&b, no_full).spans, spans(&[(0, 2), (2, 4)]));
        assert!(brackets(&Tree::leaf("a"), EvalOptions::default()).is_empty());
    }

    #[test]
    fn labeled_brackets_drop_binarization_marks() {
        let b = t("(S a (S| b c))");
        let opts = EvalOptions {
            labeled: true,
            ..Default::default()
        };
        let labels: Vec<_> = brackets(&b, opts).spans.into_iter().map(|s| s.label).collect();
        assert_eq!(labels, vec![Some("S".to_owned()), Some("S".to_owned())]);
    }

    #[test]
    fn worked_f1_example() {
        let pred = t("(_ (_ a b) (_ c d))");
        let gold = t("(_ a (_ b (_ c d)))");
        let f1 = sentence_f1(&pred, &gold, EvalOptions::default()).unwrap();
        assert!((f1 - 200.0 / 3.0).abs() < 1e-9);
        assert_eq!(sentence_f1(&gold, &gold, EvalOptions::default()).unwrap(), 100.0);
    }

    #[test]
    fn two_word_sentences_always_agree() {
        let a = t("(X a b)");
        let b = t("(_ a b)");
        assert_eq!(sentence_f1(&a, &b, EvalOptions::default()).unwrap(), 100.0);
    }

    #[test]
    fn empty_vs_nonempty_scores_zero() {
        let no_full = EvalOptions {
            include_full_span: false,
            ..Default::default()
        };
        let two = t("(_ a b)");
        let three = t("(_ a (_ b c))");
        assert_eq!(sentence_f1(&two, &two, no_full).unwrap(), 100.0);
        assert_eq!(bracket_f1(&brackets(&two, no_full), &brackets(&three, no_full)), 0.0);
    }

    #[test]
    fn f1_requires_same_leaves() {
        assert!(matches!(
            sentence_f1(&t("(_ a b)"), &t("(_ a c)"), EvalOptions::default()),
            Err(Error::TokenMismatch { .. })
        ));
    }

    #[test]
    fn agreement_picks_largest_group() {
        let a = t("(_ a (_ b c))");
        let b = t("(_ (_ a b) c)");
        let mut parses = vec![b.clone(); 6];
        parses.extend(vec![a.clone(); 9]);
        assert_eq!(agreement_groups(&parses).unwrap(), (a.clone(), 9));
    }

    #[test]
    fn agreement_all_distinct_returns_first() {
        let ps = vec![
            t("(_ a (_ b (_ c d)))"),
            t("(_ (_ a b) (_ c d))"),
            t("(_ (_ (_ a b) c) d)"),
        ];
        assert_eq!(agreement_groups(&ps).unwrap(), (ps[0].clone(), 1));
    }

    #[test]
    fn agreement_ties_go_to_first_group() {
        // All five binary trees over four words.
        let shapes = [
            t("(_ a (_ b (_ c d)))"),
            t("(_ a (_ (_ b c) d))"),
            t("(_ (_ a b) (_ c d))"),
            t("(_ (_ a (_ b c)) d)"),
            t("(_ (_ (_ a b) c) d)"),
        ];
        // Groups of 5, 5, 2, 2, 1; shape 3 shows up before shape 1.
        let order = [4, 3, 1, 3, 1, 3, 1, 0, 3, 1, 0, 3, 1, 2, 2];
        let ps: Vec<Tree> = order.iter().map(|&i| shapes[i].clone()).collect();
        assert_eq!(ps.len(), 15);
        assert_eq!(agreement_groups(&ps).unwrap(), (shapes[3].clone(), 5));
    }

    #[test]
    fn agreement_groups_ignore_labels() {
        let ps = vec![t("(X a (Y b c))"), t("(_ a (_ b c))")];
        assert_eq!(agreement_groups(&ps).unwrap().1, 2);
    }

    #[test]
    fn perfect_ensemble_report_has_single_row() {
        let gold = Treebank::new(vec![t("(_ a (_ b c))"), t("(_ (_ a b) (_ c d))")], "g").unwrap();
        let parses: Vec<Vec<Tree>> = gold.iter().map(|g| vec![g.clone(); 3]).collect();
        let rows = agreement_report(&parses, Some(&gold), EvalOptions::default()).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[2].count, 2);
        assert_eq!(rows[2].avg_f1, Some(100.0));
        assert_eq!(rows.iter().map(|r| r.count).sum::<usize>(), 2);
    }

    #[test]
    fn corpus_eval_macro_average_and_buckets() {
        let gold = Treebank::new(vec![t("(_ a (_ b (_ c d)))"), t("(_ a b)")], "g").unwrap();
        let pred = Treebank::new(vec![t("(_ (_ a b) (_ c d))"), t("(_ a b)")], "p").unwrap();
        let r = corpus_eval(&pred, &gold, EvalOptions::default()).unwrap();
        assert!((r.macro_f1 - (200.0 / 3.0 + 100.0) / 2.0).abs() < 1e-12);
        assert_eq!(r.buckets[0].count, 2);
        assert!(r.labeled_f1.is_none());
        let short = Treebank::new(vec![t("(_ a b)")], "s").unwrap();
        assert!(matches!(corpus_eval(&short, &gold, EvalOptions::default()), Err(Error::Alignment(_))));
    }

    #[test]
    fn bucket_edges() {
        assert_eq!(bucket_of(1), 0);
        assert_eq!(bucket_of(10), 0);
        assert_eq!(bucket_of(11), 1);
        assert_eq!(bucket_of(40), 3);
        assert_eq!(bucket_of(41), 4);
    }

    #[test]
    fn trivial_baselines() {
        let toks: Vec<String> = "a b c".split(' ').map(String::from).collect();
        assert_eq!(left_branching(&toks), t("(_ (_ a b) c)"));
        assert_eq!(right_branching(&toks), t("(_ a (_ b c))"));
    }
}
