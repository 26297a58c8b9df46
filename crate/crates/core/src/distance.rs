//! Syntactic distances: the per-word latent formulation and the per-gap
//! supervised formulation, plus the top-down decoders that turn either back
//! into a binary tree.
//!
//! In both formulations a larger value means a higher split. Only the
//! relative order of the values matters to the decoders.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::treebank::Tree;

pub const DEFAULT_MAX_DEPTH: u32 = 100;

/// One value per word. Position `k` holds the height of the split whose right
/// half opens at word `k`; position 0 is never a split point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LatentDistances(pub Vec<f64>);

/// One value per adjacent-word gap; the value at gap `g` is the height of the
/// lowest common ancestor of words `g` and `g + 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GapDistances(pub Vec<f64>);

impl LatentDistances {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl GapDistances {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Which of several equal maxima becomes the split point.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TiePolicy {
    #[default]
    Leftmost,
    Rightmost,
}

impl FromStr for TiePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "leftmost" => Ok(TiePolicy::Leftmost),
            "rightmost" => Ok(TiePolicy::Rightmost),
            other => Err(Error::Config(format!("unknown tie policy '{other}'"))),
        }
    }
}

impl fmt::Display for TiePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TiePolicy::Leftmost => "leftmost",
            TiePolicy::Rightmost => "rightmost",
        })
    }
}

fn binary_children(t: &Tree) -> Result<Option<(&Tree, &Tree)>> {
    match t {
        Tree::Leaf(_) => Ok(None),
        Tree::Node { children, .. } if children.len() == 2 => Ok(Some((&children[0], &children[1]))),
        Tree::Node { children, .. } => Err(Error::NotBinary(children.len())),
    }
}

/// Encodes a binary tree as latent distances.
///
/// The first word gets 1. Every internal node reached with value `m` (the root
/// with `max_depth`) writes `m` at the first word of its right subtree, and
/// both children recurse with `m - 1`.
pub fn tree_to_dl(t: &Tree, max_depth: u32) -> Result<LatentDistances> {
    let depth = t.depth();
    if depth >= max_depth as usize {
        return Err(Error::TooDeep { depth, max_depth });
    }
    let mut d = vec![1.0; t.leaf_count()];
    fill_dl(t, 0, max_depth, &mut d)?;
    Ok(LatentDistances(d))
}

fn fill_dl(t: &Tree, offset: usize, m: u32, d: &mut [f64]) -> Result<()> {
    if let Some((l, r)) = binary_children(t)? {
        let split = offset + l.leaf_count();
        d[split] = f64::from(m);
        fill_dl(l, offset, m - 1, d)?;
        fill_dl(r, split, m - 1, d)?;
    }
    Ok(())
}

/// Encodes a binary tree as gap distances (lowest-common-ancestor heights).
pub fn tree_to_dg(t: &Tree) -> Result<GapDistances> {
    let mut out = Vec::with_capacity(t.leaf_count().saturating_sub(1));
    fill_dg(t, &mut out)?;
    Ok(GapDistances(out))
}

// Returns the height of `t`.
fn fill_dg(t: &Tree, out: &mut Vec<f64>) -> Result<usize> {
    match binary_children(t)? {
        None => Ok(0),
        Some((l, r)) => {
            let at = out.len();
            let hl = fill_dg(l, out)?;
            out.push(0.0);
            let hr = fill_dg(r, out)?;
            let h = hl.max(hr) + 1;
            out[at + l.leaf_count() - 1] = h as f64;
            Ok(h)
        }
    }
}

fn argmax(values: &[f64], ties: TiePolicy) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        let better = match ties {
            TiePolicy::Leftmost => *v > values[best],
            TiePolicy::Rightmost => *v >= values[best],
        };
        if better {
            best = i;
        }
    }
    best
}

fn check_finite(values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("distance vector".into()))
    }
}

/// Decodes per-word distances: split `[i, j)` at the largest value among
/// positions `i+1..j`, the winning word opening the right subtree.
pub fn dl_to_tree(d: &[f64], tokens: &[String], ties: TiePolicy) -> Result<Tree> {
    if d.len() != tokens.len() || tokens.is_empty() {
        return Err(Error::LengthMismatch(format!(
            "{} latent distances for {} tokens",
            d.len(),
            tokens.len()
        )));
    }
    check_finite(d)?;
    Ok(decode_dl(d, tokens, 0, tokens.len(), ties))
}

fn decode_dl(d: &[f64], tokens: &[String], i: usize, j: usize, ties: TiePolicy) -> Tree {
    if j - i == 1 {
        return Tree::Leaf(tokens[i].clone());
    }
    let k = i + 1 + argmax(&d[i + 1..j], ties);
    Tree::pair(decode_dl(d, tokens, i, k, ties), decode_dl(d, tokens, k, j, ties))
}

/// Decodes per-gap distances: split at the largest gap and recurse.
pub fn dg_to_tree(d: &[f64], tokens: &[String], ties: TiePolicy) -> Result<Tree> {
    if tokens.is_empty() || d.len() + 1 != tokens.len() {
        return Err(Error::LengthMismatch(format!(
            "{} gap distances for {} tokens",
            d.len(),
            tokens.len()
        )));
    }
    check_finite(d)?;
    Ok(decode_dg(d, tokens, 0, tokens.len(), ties))
}

// Gap g sits between tokens g and g+1; the span [i, j) owns gaps i..j-1.
fn decode_dg(d: &[f64], tokens: &[String], i: usize, j: usize, ties: TiePolicy) -> Tree {
    if j - i == 1 {
        return Tree::Leaf(tokens[i].clone());
    }
    let g = i + argmax(&d[i..j - 1], ties);
    Tree::pair(decode_dg(d, tokens, i, g + 1, ties), decode_dg(d, tokens, g + 1, j, ties))
}

/// A sentence with both distance encodings, as stored in silver-set files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceRecord {
    pub tokens: Vec<String>,
    pub dl: LatentDistances,
    pub dg: GapDistances,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agreement: Option<usize>,
}

impl DistanceRecord {
    pub fn from_tree(t: &Tree, max_depth: u32, agreement: Option<usize>) -> Result<Self> {
        Ok(DistanceRecord {
            tokens: t.tokens(),
            dl: tree_to_dl(t, max_depth)?,
            dg: tree_to_dg(t)?,
            agreement,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.tokens.len();
        if n == 0 || self.dl.len() != n || self.dg.len() + 1 != n {
            return Err(Error::LengthMismatch(format!(
                "record has {} tokens, {} dl values, {} dg values",
                n,
                self.dl.len(),
                self.dg.len()
            )));
        }
        check_finite(&self.dl.0)?;
        check_finite(&self.dg.0)
    }
}

/// Writes one JSON object per line.
pub fn write_records<W: Write>(mut w: W, records: &[DistanceRecord]) -> Result<()> {
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Model(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io("writing records", e))?;
    }
    Ok(())
}

pub fn records_to_string(records: &[DistanceRecord]) -> String {
    let mut buf = Vec::new();
    write_records(&mut buf, records).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

/// Reads JSON-lines records; blank lines are skipped.
pub fn read_records<R: BufRead>(r: R) -> Result<Vec<DistanceRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::io("reading records", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DistanceRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        rec.validate().map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_owned).collect()
    }

    fn balanced4() -> Tree {
        "(_ (_ a b) (_ c d))".parse().unwrap()
    }

    // Explicit lowest-common-ancestor height per gap, independent of the
    // recursive encoder.
    fn lca_heights(t: &Tree) -> Vec<f64> {
        fn walk(t: &Tree, offset: usize, spans: &mut Vec<(usize, usize, usize)>) -> usize {
            match t {
                Tree::Leaf(_) => 0,
                Tree::Node { children, .. } => {
                    let mut off = offset;
                    let mut h = 0;
                    for c in children {
                        h = h.max(walk(c, off, spans));
                        off += c.leaf_count();
                    }
                    spans.push((offset, off, h + 1));
                    h + 1
                }
            }
        }
        let mut spans = Vec::new();
        walk(t, 0, &mut spans);
        let n = t.leaf_count();
        (0..n - 1)
            .map(|g| {
                spans
                    .iter()
                    .filter(|(s, e, _)| *s <= g && g + 1 < *e)
                    .map(|(_, _, h)| *h)
                    .min()
                    .unwrap() as f64
            })
            .collect()
    }

    #[test]
    fn dl_of_leaf_is_initial_value() {
        assert_eq!(tree_to_dl(&Tree::leaf("a"), 100).unwrap().0, vec![1.0]);
    }

    #[test]
    fn dl_balanced_and_right_branching() {
        assert_eq!(tree_to_dl(&balanced4(), 100).unwrap().0, vec![1.0, 99.0, 100.0, 99.0]);
        let rb: Tree = "(_ a (_ b c))".parse().unwrap();
        assert_eq!(tree_to_dl(&rb, 100).unwrap().0, vec![1.0, 100.0, 99.0]);
    }

    #[test]
    fn dl_rejects_deep_and_nonbinary_trees() {
        let rb: Tree = "(_ a (_ b c))".parse().unwrap();
        assert!(matches!(tree_to_dl(&rb, 2), Err(Error::TooDeep { .. })));
        let wide: Tree = "(_ a b c)".parse().unwrap();
        assert!(matches!(tree_to_dl(&wide, 100), Err(Error::NotBinary(3))));
        assert!(matches!(tree_to_dg(&wide), Err(Error::NotBinary(3))));
    }

    #[test]
    fn dg_matches_lca_oracle() {
        assert_eq!(tree_to_dg(&Tree::leaf("a")).unwrap().0, Vec::<f64>::new());
        let b = balanced4();
        assert_eq!(lca_heights(&b), vec![1.0, 2.0, 1.0]);
        assert_eq!(tree_to_dg(&b).unwrap().0, lca_heights(&b));
        let rb: Tree = "(_ a (_ b (_ c d)))".parse().unwrap();
        assert_eq!(lca_heights(&rb), vec![3.0, 2.0, 1.0]);
        assert_eq!(tree_to_dg(&rb).unwrap().0, lca_heights(&rb));
    }

    #[test]
    fn decoders_invert_worked_examples() {
        let t = dl_to_tree(&[1.0, 99.0, 100.0, 99.0], &toks("a b c d"), TiePolicy::Leftmost).unwrap();
        assert_eq!(t, balanced4());
        let t = dg_to_tree(&[1.0, 2.0, 1.0], &toks("a b c d"), TiePolicy::Leftmost).unwrap();
        assert_eq!(t, balanced4());
        assert_eq!(dl_to_tree(&[7.0], &toks("a"), TiePolicy::Leftmost).unwrap(), Tree::leaf("a"));
        assert_eq!(dg_to_tree(&[], &toks("a"), TiePolicy::Leftmost).unwrap(), Tree::leaf("a"));
    }

    #[test]
    fn ties_follow_policy() {
        let rb: Tree = "(_ a (_ b (_ c d)))".parse().unwrap();
        let lb: Tree = "(_ (_ (_ a b) c) d)".parse().unwrap();
        let d = [1.0, 5.0, 5.0, 5.0];
        assert_eq!(dl_to_tree(&d, &toks("a b c d"), TiePolicy::Leftmost).unwrap(), rb);
        assert_eq!(dl_to_tree(&d, &toks("a b c d"), TiePolicy::Rightmost).unwrap(), lb);
        assert_eq!(dg_to_tree(&[2.0, 2.0, 2.0], &toks("a b c d"), TiePolicy::Leftmost).unwrap(), rb);
        assert_eq!(dg_to_tree(&[2.0, 2.0, 2.0], &toks("a b c d"), TiePolicy::Rightmost).unwrap(), lb);
    }

    #[test]
    fn decoders_check_lengths() {
        assert!(matches!(dl_to_tree(&[1.0], &toks("a b"), TiePolicy::Leftmost), Err(Error::LengthMismatch(_))));
        assert!(matches!(dg_to_tree(&[1.0, 1.0], &toks("a b"), TiePolicy::Leftmost), Err(Error::LengthMismatch(_))));
        assert!(matches!(dl_to_tree(&[], &[], TiePolicy::Leftmost), Err(Error::LengthMismatch(_))));
        assert!(matches!(dg_to_tree(&[f64::NAN], &toks("a b"), TiePolicy::Leftmost), Err(Error::NonFinite(_))));
    }

    #[test]
    fn record_line_round_trip() {
        let rec = DistanceRecord::from_tree(&balanced4(), 100, Some(9)).unwrap();
        let text = records_to_string(std::slice::from_ref(&rec));
        assert_eq!(text.lines().count(), 1);
        assert_eq!(read_records(text.as_bytes()).unwrap(), vec![rec]);
    }

    #[test]
    fn record_missing_dg_is_an_error() {
        let text = "{\"tokens\":[\"a\",\"b\"],\"dl\":[1,100],\"dg\":[1]}\n{\"tokens\":[\"a\"],\"dl\":[1]}\n";
        match read_records(text.as_bytes()) {
            Err(Error::Parse { line: 2, .. }) => {}
            other => panic!("expected error on line 2, got {other:?}"),
        }
        let bad_len = "{\"tokens\":[\"a\",\"b\"],\"dl\":[1],\"dg\":[1]}";
        assert!(matches!(read_records(bad_len.as_bytes()), Err(Error::Parse { line: 1, .. })));
    }
}
