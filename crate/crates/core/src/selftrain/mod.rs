//! Ensemble-consensus self-training.
//!
//! An ensemble parses every unlabeled sentence; sentences whose modal parse
//! is shared by enough members become silver training examples, stored as
//! both distance encodings; a fresh predictor is then trained on the silver
//! set, optionally mixed with gold trees.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::distance::DistanceRecord;
use crate::error::{Error, Result};
use crate::metrics::{
    agreement_groups, agreement_report, bracket_f1, brackets, improvement_table, AgreementRow, EvalOptions,
    ImprovementRow,
};
use crate::predictor::{Model, TrainingConfig};
use crate::treebank::{binarize, read_trees, Direction, Tree, Treebank};

mod simulate;

pub use simulate::{rotate_noise, simulate_ensemble};

/// Where ensemble parses come from.
#[derive(Clone, Debug)]
pub enum EnsembleSource {
    /// `member_<k>.trees` files, each aligned line by line with the sentences.
    Directory(PathBuf),
    /// Member treebanks already in memory, one per member.
    Members(Vec<Treebank>),
    /// Predictors trained from `recipe`, one per seed.
    Internal { seeds: Vec<u64>, recipe: Recipe },
}

/// Bootstrap training data for internally trained ensemble members.
#[derive(Clone, Debug, Default)]
pub struct Recipe {
    pub gold: Vec<Tree>,
    pub silver: Vec<DistanceRecord>,
    pub config: TrainingConfig,
}

impl EnsembleSource {
    pub fn describe(&self) -> String {
        match self {
            EnsembleSource::Directory(p) => format!("directory {}", p.display()),
            EnsembleSource::Members(m) => format!("{} in-memory members", m.len()),
            EnsembleSource::Internal { seeds, recipe } => format!(
                "{} internal predictors (seeds {:?}) on {} gold / {} silver",
                seeds.len(),
                seeds,
                recipe.gold.len(),
                recipe.silver.len()
            ),
        }
    }
}

/// Reads one whitespace-tokenized sentence per non-blank line.
pub fn read_sentences(text: &str) -> Result<Vec<Vec<String>>> {
    let out: Vec<Vec<String>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split_whitespace().map(str::to_owned).collect())
        .collect();
    if out.is_empty() {
        return Err(Error::Empty("no sentences".into()));
    }
    Ok(out)
}

/// Lists `member_<k>.trees` files in ascending `k`.
pub fn member_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(format!("listing {}", dir.display()), e))?;
    let mut found = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io("listing ensemble directory", e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if let Some(k) = name
            .strip_prefix("member_")
            .and_then(|r| r.strip_suffix(".trees"))
            .and_then(|k| k.parse::<usize>().ok())
        {
            found.push((k, path));
        }
    }
    if found.is_empty() {
        return Err(Error::Alignment(format!("no member_<k>.trees files in {}", dir.display())));
    }
    found.sort();
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

fn check_member(member: usize, trees: Vec<Tree>, sentences: &[Vec<String>]) -> Result<Vec<Tree>> {
    if trees.len() != sentences.len() {
        let line = trees.len().min(sentences.len()) + 1;
        return Err(Error::Alignment(format!(
            "member {member}: {} parses for {} sentences (first unmatched line {line})",
            trees.len(),
            sentences.len()
        )));
    }
    trees
        .into_iter()
        .zip(sentences)
        .enumerate()
        .map(|(i, (t, s))| {
            if t.leaves() != s.iter().map(String::as_str).collect::<Vec<_>>() {
                return Err(Error::TokenMismatch {
                    index: i,
                    msg: format!("member {member} parse does not cover the sentence tokens"),
                });
            }
            Ok(binarize(&t, Direction::Right).strip_labels())
        })
        .collect()
}

/// Gathers every member's parse of every sentence. `result[i][k]` is member
/// `k`'s parse of sentence `i`.
pub fn collect_ensemble(source: &EnsembleSource, sentences: &[Vec<String>]) -> Result<Vec<Vec<Tree>>> {
    let members: Vec<Vec<Tree>> = match source {
        EnsembleSource::Directory(dir) => member_files(dir)?
            .iter()
            .enumerate()
            .map(|(k, path)| {
                let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
                let trees = if text.trim().is_empty() {
                    Vec::new()
                } else {
                    read_trees(&text)?.sentences
                };
                check_member(k, trees, sentences)
            })
            .collect::<Result<_>>()?,
        EnsembleSource::Members(tbs) => tbs
            .iter()
            .enumerate()
            .map(|(k, tb)| check_member(k, tb.sentences.clone(), sentences))
            .collect::<Result<_>>()?,
        EnsembleSource::Internal { seeds, recipe } => seeds
            .iter()
            .map(|&seed| {
                let cfg = TrainingConfig {
                    seed,
                    ..recipe.config.clone()
                };
                let (model, _) = Model::fit(&recipe.gold, &recipe.silver, &cfg)?;
                sentences
                    .iter()
                    .map(|s| model.predict(s, cfg.head, cfg.ties, false))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?,
    };
    if members.is_empty() {
        return Err(Error::Config("ensemble has no members".into()));
    }
    Ok(transpose(members, sentences.len()))
}

fn transpose(members: Vec<Vec<Tree>>, n: usize) -> Vec<Vec<Tree>> {
    let mut out: Vec<Vec<Tree>> = (0..n).map(|_| Vec::with_capacity(members.len())).collect();
    for member in members {
        for (slot, t) in out.iter_mut().zip(member) {
            slot.push(t);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SelfTrainConfig {
    pub n_c: usize,
    pub mu: f64,
    pub max_depth: u32,
    pub rounds: usize,
    /// Require strictly more than `mu · n_c` agreeing members.
    pub strict: bool,
    pub training: TrainingConfig,
}

impl Default for SelfTrainConfig {
    fn default() -> Self {
        SelfTrainConfig {
            n_c: 15,
            mu: 0.6,
            max_depth: crate::distance::DEFAULT_MAX_DEPTH,
            rounds: 1,
            strict: false,
            training: TrainingConfig::default(),
        }
    }
}

impl SelfTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu <= 1.0) {
            return Err(Error::Config(format!("mu {} outside (0, 1]", self.mu)));
        }
        if self.n_c == 0 {
            return Err(Error::Config("n_c must be at least 1".into()));
        }
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be at least 1".into()));
        }
        self.training.validate()
    }
}

/// Smallest agreement count admitted for an ensemble of `n_c` members.
pub fn admission_threshold(mu: f64, n_c: usize, strict: bool) -> usize {
    // Guard against 0.6 * 15 landing a hair above or below 9.
    let bound = mu * n_c as f64;
    let nearest = bound.round();
    let bound = if (bound - nearest).abs() < 1e-9 { nearest } else { bound };
    if strict {
        bound.floor() as usize + 1
    } else {
        (bound.ceil() as usize).max(1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SilverExample {
    /// Position of the sentence in the unlabeled input.
    pub index: usize,
    pub tree: Tree,
    pub record: DistanceRecord,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Provenance {
    pub n_c: usize,
    pub mu: f64,
    pub strict: bool,
    pub threshold: usize,
    pub source: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SilverSet {
    pub examples: Vec<SilverExample>,
    pub provenance: Provenance,
}

impl SilverSet {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn records(&self) -> Vec<DistanceRecord> {
        self.examples.iter().map(|e| e.record.clone()).collect()
    }
}

/// Admits every sentence of length ≥ 2 whose modal parse reaches the
/// agreement threshold.
pub fn build_silver(
    parses: &[Vec<Tree>],
    mu: f64,
    max_depth: u32,
    strict: bool,
    source: &str,
) -> Result<SilverSet> {
    let n_c = parses.first().map_or(0, Vec::len);
    let threshold = admission_threshold(mu, n_c, strict);
    let mut examples = Vec::new();
    for (index, members) in parses.iter().enumerate() {
        if members.len() != n_c {
            return Err(Error::Alignment(format!(
                "sentence {index} has {} parses, expected {n_c}",
                members.len()
            )));
        }
        let (modal, n_a) = agreement_groups(members)?;
        if n_a < threshold || modal.leaf_count() < 2 {
            continue;
        }
        let tree = modal.strip_labels();
        let record = DistanceRecord::from_tree(&tree, max_depth, Some(n_a))?;
        examples.push(SilverExample { index, tree, record });
    }
    Ok(SilverSet {
        examples,
        provenance: Provenance {
            n_c,
            mu,
            strict,
            threshold,
            source: source.to_owned(),
        },
    })
}

/// Summary row of a silver set.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SilverStats {
    pub name: String,
    pub avg_length: f64,
    pub avg_depth: f64,
    /// Against gold, when gold trees for the unlabeled sentences are known.
    pub avg_f1: Option<f64>,
    pub sentences: usize,
}

pub fn silver_stats(name: &str, silver: &SilverSet, reference: Option<&Treebank>) -> Result<SilverStats> {
    let n = silver.len().max(1) as f64;
    let avg_length = silver.examples.iter().map(|e| e.tree.leaf_count() as f64).sum::<f64>() / n;
    let avg_depth = silver.examples.iter().map(|e| e.tree.depth() as f64).sum::<f64>() / n;
    let avg_f1 = match reference {
        None => None,
        Some(gold) => {
            let mut total = 0.0;
            for e in &silver.examples {
                let g = gold.sentences.get(e.index).ok_or_else(|| {
                    Error::Alignment(format!("no reference tree for sentence {}", e.index))
                })?;
                total += bracket_f1(&brackets(&e.tree, EvalOptions::default()), &brackets(g, EvalOptions::default()));
            }
            Some(total / n)
        }
    };
    Ok(SilverStats {
        name: name.to_owned(),
        avg_length,
        avg_depth,
        avg_f1,
        sentences: silver.len(),
    })
}

#[derive(Clone, Debug)]
pub struct SelfTrainOutcome {
    pub model: Model,
    pub silver: SilverSet,
    pub loss_trace: Vec<f64>,
    /// Final ensemble pool, per sentence.
    pub parses: Vec<Vec<Tree>>,
    pub agreement: Vec<AgreementRow>,
    pub stats: SilverStats,
}

/// Collects the ensemble, builds the silver set and trains on it (plus any
/// gold trees). With `rounds > 1`, the freshly trained model parses the
/// sentences again and joins the ensemble pool before the next round.
/// `reference` holds gold trees for the unlabeled sentences, used only for
/// reports.
pub fn self_train(
    sentences: &[Vec<String>],
    source: &EnsembleSource,
    gold: &[Tree],
    cfg: &SelfTrainConfig,
    reference: Option<&Treebank>,
) -> Result<SelfTrainOutcome> {
    cfg.validate()?;
    if sentences.is_empty() {
        return Err(Error::Empty("no unlabeled sentences".into()));
    }
    let mut parses = collect_ensemble(source, sentences)?;
    let members = parses[0].len();
    if members != cfg.n_c {
        return Err(Error::Config(format!(
            "ensemble has {members} members but n_c is {}",
            cfg.n_c
        )));
    }
    let gold: Vec<Tree> = gold.iter().map(|t| binarize(t, Direction::Right)).collect();
    let description = source.describe();
    let mut last = None;
    for round in 0..cfg.rounds {
        let silver = build_silver(&parses, cfg.mu, cfg.max_depth, cfg.strict, &description)?;
        if silver.is_empty() && gold.is_empty() {
            return Err(Error::Empty(format!(
                "round {}: no sentence reached {} of {} agreeing members and no gold trees were given",
                round + 1,
                silver.provenance.threshold,
                silver.provenance.n_c
            )));
        }
        let training = TrainingConfig {
            seed: cfg.training.seed.wrapping_add(round as u64),
            ..cfg.training.clone()
        };
        let (model, trace) = Model::fit(&gold, &silver.records(), &training)?;
        if round + 1 < cfg.rounds {
            for (s, pool) in sentences.iter().zip(parses.iter_mut()) {
                pool.push(model.predict(s, training.head, training.ties, false)?);
            }
        }
        last = Some((model, silver, trace));
    }
    let (model, silver, loss_trace) = last.expect("at least one round");
    let agreement = agreement_report(&parses, reference, EvalOptions::default())?;
    let stats = silver_stats("self-training", &silver, reference)?;
    Ok(SelfTrainOutcome {
        model,
        silver,
        loss_trace,
        parses,
        agreement,
        stats,
    })
}

/// Per length bucket, how often the self-trained parse beats the baseline.
pub fn compare_runs(
    baseline: &Treebank,
    selftrained: &Treebank,
    gold: &Treebank,
    opts: EvalOptions,
) -> Result<Vec<ImprovementRow>> {
    improvement_table(baseline, selftrained, gold, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> Tree {
        s.parse().unwrap()
    }

    #[test]
    fn default_threshold_is_nine_of_fifteen() {
        assert_eq!(admission_threshold(0.6, 15, false), 9);
        assert_eq!(admission_threshold(0.6, 15, true), 10);
        assert_eq!(admission_threshold(1.0, 15, false), 15);
        assert_eq!(admission_threshold(0.5, 3, false), 2);
        assert_eq!(admission_threshold(0.01, 3, false), 1);
    }

    #[test]
    fn disagreeing_ensemble_gives_empty_silver() {
        let shapes = [
            t("(_ a (_ b (_ c d)))"),
            t("(_ a (_ (_ b c) d))"),
            t("(_ (_ a b) (_ c d))"),
        ];
        let parses = vec![shapes.to_vec(); 4];
        let s = build_silver(&parses, 0.6, 100, false, "test").unwrap();
        assert!(s.is_empty());
        assert_eq!(s.provenance.threshold, 2);
    }

    #[test]
    fn short_sentences_never_admitted() {
        let parses = vec![vec![Tree::leaf("a"); 3]];
        assert!(build_silver(&parses, 0.5, 100, false, "test").unwrap().is_empty());
    }

    #[test]
    fn silver_records_encode_consensus_tree() {
        let good = t("(_ (_ a b) (_ c d))");
        let bad = t("(_ a (_ b (_ c d)))");
        let parses = vec![vec![good.clone(), good.clone(), bad]];
        let s = build_silver(&parses, 0.6, 100, false, "test").unwrap();
        assert_eq!(s.len(), 1);
        let rec = &s.examples[0].record;
        assert_eq!(rec.agreement, Some(2));
        assert_eq!(rec.dl.0, vec![1.0, 99.0, 100.0, 99.0]);
        assert_eq!(rec.dg.0, vec![1.0, 2.0, 1.0]);
    }

    #[test]
    fn sentences_reader() {
        let s = read_sentences("the cat sat\n\n a dog \n").unwrap();
        assert_eq!(s, vec![vec!["the", "cat", "sat"], vec!["a", "dog"]]);
        assert!(read_sentences("\n \n").is_err());
    }

    #[test]
    fn member_length_mismatch_is_reported() {
        let sentences: Vec<Vec<String>> = (0..10).map(|_| vec!["a".into(), "b".into()]).collect();
        let short = Treebank::new(vec![t("(_ a b)"); 9], "m").unwrap();
        let err = collect_ensemble(&EnsembleSource::Members(vec![short]), &sentences).unwrap_err();
        assert!(err.to_string().contains("line 10"), "{err}");
    }

    #[test]
    fn member_token_mismatch_names_sentence() {
        let sentences = vec![vec!["a".to_owned(), "b".to_owned()], vec!["c".to_owned(), "d".to_owned()]];
        let member = Treebank::new(vec![t("(_ a b)"), t("(_ c e)")], "m").unwrap();
        match collect_ensemble(&EnsembleSource::Members(vec![member]), &sentences) {
            Err(Error::TokenMismatch { index: 1, .. }) => {}
            other => panic!("expected token mismatch at 1, got {other:?}"),
        }
    }
}
