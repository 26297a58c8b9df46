//! Constituency trees: bracketed I/O, binarization, statistics and a
//! synthetic treebank generator.
//!
//! Trees are read from one S-expression per line. Preterminals (a label
//! wrapping a single token, `(DT the)`) are dropped at read time, so the
//! token becomes a [`Tree::Leaf`] directly under its phrasal parent.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

mod pcfg;

pub use pcfg::{Grammar, Rule, MAX_RESAMPLES, MAX_SENTENCE_LEN};

/// Label written for nodes that carry no label.
pub const NO_LABEL: &str = "_";

/// Marker appended to labels introduced by binarization.
pub const BINARIZED_MARK: char = '|';

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Tree {
    Leaf(String),
    Node {
        label: Option<String>,
        children: Vec<Tree>,
    },
}

impl Tree {
    pub fn leaf(token: impl Into<String>) -> Self {
        Tree::Leaf(token.into())
    }

    pub fn node(label: Option<&str>, children: Vec<Tree>) -> Self {
        Tree::Node {
            label: label.map(str::to_owned),
            children,
        }
    }

    /// Unlabeled binary node.
    pub fn pair(left: Tree, right: Tree) -> Self {
        Tree::Node {
            label: None,
            children: vec![left, right],
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Tree::Leaf(_))
    }

    pub fn label(&self) -> Option<&str> {
        match self {
            Tree::Leaf(_) => None,
            Tree::Node { label, .. } => label.as_deref(),
        }
    }

    pub fn children(&self) -> &[Tree] {
        match self {
            Tree::Leaf(_) => &[],
            Tree::Node { children, .. } => children,
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            Tree::Leaf(_) => 1,
            Tree::Node { children, .. } => children.iter().map(Tree::leaf_count).sum(),
        }
    }

    /// Tokens in left-to-right order.
    pub fn leaves(&self) -> Vec<&str> {
        let mut out = Vec::with_capacity(self.leaf_count());
        self.collect_leaves(&mut out);
        out
    }

    pub fn tokens(&self) -> Vec<String> {
        self.leaves().into_iter().map(str::to_owned).collect()
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Tree::Leaf(tok) => out.push(tok),
            Tree::Node { children, .. } => children.iter().for_each(|c| c.collect_leaves(out)),
        }
    }

    /// Longest root-to-leaf path, counted in edges.
    pub fn depth(&self) -> usize {
        match self {
            Tree::Leaf(_) => 0,
            Tree::Node { children, .. } => {
                1 + children.iter().map(Tree::depth).max().unwrap_or(0)
            }
        }
    }

    pub fn is_binary(&self) -> bool {
        match self {
            Tree::Leaf(_) => true,
            Tree::Node { children, .. } => {
                children.len() == 2 && children.iter().all(Tree::is_binary)
            }
        }
    }

    /// Copy of the tree with every node label removed.
    pub fn strip_labels(&self) -> Tree {
        match self {
            Tree::Leaf(tok) => Tree::Leaf(tok.clone()),
            Tree::Node { children, .. } => Tree::Node {
                label: None,
                children: children.iter().map(Tree::strip_labels).collect(),
            },
        }
    }

    pub fn stats(&self) -> TreeStats {
        tree_stats(self)
    }
}

impl fmt::Display for Tree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_tree(self, f, true)
    }
}

// A bare token is only unambiguous when it has a sibling; sole children and
// top-level leaves are wrapped as `(_ tok)`, which reads back as a leaf.
fn write_tree(t: &Tree, f: &mut fmt::Formatter<'_>, wrap_leaf: bool) -> fmt::Result {
    match t {
        Tree::Leaf(tok) if wrap_leaf => write!(f, "({} {})", NO_LABEL, tok),
        Tree::Leaf(tok) => f.write_str(tok),
        Tree::Node { label, children } => {
            write!(f, "({}", label.as_deref().unwrap_or(NO_LABEL))?;
            let sole = children.len() == 1;
            for c in children {
                f.write_str(" ")?;
                write_tree(c, f, sole)?;
            }
            f.write_str(")")
        }
    }
}

impl FromStr for Tree {
    type Err = Error;

    fn from_str(s: &str) -> Result<Tree> {
        parse_line(s, 1)
    }
}

/// An ordered collection of trees read from one source.
#[derive(Clone, Debug, PartialEq)]
pub struct Treebank {
    pub sentences: Vec<Tree>,
    pub source: String,
}

impl Treebank {
    pub fn new(sentences: Vec<Tree>, source: impl Into<String>) -> Result<Self> {
        if sentences.is_empty() {
            return Err(Error::Empty("treebank has no sentences".into()));
        }
        Ok(Treebank {
            sentences,
            source: source.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Tree> {
        self.sentences.iter()
    }

    pub fn binarized(&self, direction: Direction) -> Treebank {
        Treebank {
            sentences: self.sentences.iter().map(|t| binarize(t, direction)).collect(),
            source: self.source.clone(),
        }
    }
}

impl<'a> IntoIterator for &'a Treebank {
    type Item = &'a Tree;
    type IntoIter = std::slice::Iter<'a, Tree>;

    fn into_iter(self) -> Self::IntoIter {
        self.sentences.iter()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TreeStats {
    pub length: usize,
    pub depth: usize,
}

pub fn tree_stats(t: &Tree) -> TreeStats {
    TreeStats {
        length: t.leaf_count(),
        depth: t.depth(),
    }
}

/// Reads one bracketed tree per non-empty line.
pub fn read_trees(text: &str) -> Result<Treebank> {
    let mut sentences = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        sentences.push(parse_line(line, i + 1)?);
    }
    Treebank::new(sentences, "<text>")
}

pub fn write_trees(tb: &Treebank) -> Result<String> {
    if tb.is_empty() {
        return Err(Error::Empty("cannot write an empty treebank".into()));
    }
    let mut out = String::new();
    for t in tb {
        out.push_str(&t.to_string());
        out.push('\n');
    }
    Ok(out)
}

#[derive(Debug, PartialEq)]
enum Token<'a> {
    Open,
    Close,
    Atom(&'a str),
}

fn tokenize(line: &str) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in line.char_indices() {
        let delim = c == '(' || c == ')' || c.is_whitespace();
        if delim {
            if let Some(s) = start.take() {
                out.push(Token::Atom(&line[s..i]));
            }
            match c {
                '(' => out.push(Token::Open),
                ')' => out.push(Token::Close),
                _ => {}
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push(Token::Atom(&line[s..]));
    }
    out
}

fn parse_line(line: &str, lineno: usize) -> Result<Tree> {
    let toks = tokenize(line);
    let err = |msg: &str| Error::Parse {
        line: lineno,
        msg: msg.to_owned(),
    };
    let mut pos = 0;
    let tree = parse_node(&toks, &mut pos).map_err(|m| err(&m))?;
    if pos != toks.len() {
        return Err(err("unbalanced parentheses: trailing input after tree"));
    }
    Ok(tree)
}

fn parse_node(toks: &[Token<'_>], pos: &mut usize) -> std::result::Result<Tree, String> {
    match toks.get(*pos) {
        Some(Token::Open) => *pos += 1,
        Some(Token::Atom(a)) => return Err(format!("expected '(' but found '{a}'")),
        Some(Token::Close) => return Err("unbalanced parentheses: unexpected ')'".into()),
        None => return Err("empty line".into()),
    }
    let label = match toks.get(*pos) {
        Some(Token::Atom(a)) => {
            *pos += 1;
            Some(*a)
        }
        _ => None,
    };
    let mut children = Vec::new();
    let mut bare_atoms = 0;
    loop {
        match toks.get(*pos) {
            Some(Token::Close) => {
                *pos += 1;
                break;
            }
            Some(Token::Open) => children.push(parse_node(toks, pos)?),
            Some(Token::Atom(a)) => {
                children.push(Tree::Leaf((*a).to_owned()));
                bare_atoms += 1;
                *pos += 1;
            }
            None => return Err("unbalanced parentheses: missing ')'".into()),
        }
    }
    if children.is_empty() {
        return match label {
            None => Err("empty node '()'".into()),
            Some(l) => Err(format!("node '{l}' has no children")),
        };
    }
    // Preterminal: `(TAG token)` collapses to the token.
    if children.len() == 1 && bare_atoms == 1 {
        return Ok(children.pop().unwrap());
    }
    let label = label.filter(|l| *l != NO_LABEL).map(str::to_owned);
    Ok(Tree::Node { label, children })
}

/// Side on which binarization nests the extra children.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Direction {
    Left,
    #[default]
    Right,
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" => Ok(Direction::Left),
            "right" => Ok(Direction::Right),
            other => Err(Error::Config(format!("unknown binarization direction '{other}'"))),
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Left => "left",
            Direction::Right => "right",
        })
    }
}

fn intermediate_label(label: &Option<String>) -> Option<String> {
    label.as_ref().map(|l| {
        if l.ends_with(BINARIZED_MARK) {
            l.clone()
        } else {
            format!("{l}{BINARIZED_MARK}")
        }
    })
}

/// Strips the binarization marker from a label.
pub fn base_label(label: &str) -> &str {
    label.trim_end_matches(BINARIZED_MARK)
}

/// Converts an n-ary tree into a strictly binary one with the same leaves.
///
/// Unary chains are spliced out: the topmost label of the chain is kept and
/// takes over the children of the lowest node in the chain. A chain ending in
/// a leaf collapses to that leaf.
pub fn binarize(t: &Tree, direction: Direction) -> Tree {
    match t {
        Tree::Leaf(tok) => Tree::Leaf(tok.clone()),
        Tree::Node { label, children } => {
            let mut kids = children;
            while kids.len() == 1 {
                match &kids[0] {
                    Tree::Leaf(tok) => return Tree::Leaf(tok.clone()),
                    Tree::Node { children, .. } => kids = children,
                }
            }
            binarize_children(label.clone(), kids, direction)
        }
    }
}

fn binarize_children(label: Option<String>, kids: &[Tree], direction: Direction) -> Tree {
    debug_assert!(kids.len() >= 2);
    if kids.len() == 2 {
        return Tree::Node {
            label,
            children: vec![binarize(&kids[0], direction), binarize(&kids[1], direction)],
        };
    }
    let inner = intermediate_label(&label);
    let children = match direction {
        Direction::Right => vec![
            binarize(&kids[0], direction),
            binarize_children(inner, &kids[1..], direction),
        ],
        Direction::Left => {
            let last = kids.len() - 1;
            vec![
                binarize_children(inner, &kids[..last], direction),
                binarize(&kids[last], direction),
            ]
        }
    };
    Tree::Node { label, children }
}

/// True for tokens made only of punctuation characters, plus the Penn
/// Treebank bracket escapes such as `-LRB-`.
pub fn is_punctuation(token: &str) -> bool {
    matches!(token, "-LRB-" | "-RRB-" | "-LCB-" | "-RCB-" | "-LSB-" | "-RSB-")
        || (!token.is_empty() && token.chars().all(|c| !c.is_alphanumeric()))
}

/// Removes punctuation leaves, dropping nodes left without children.
/// Returns `None` when nothing remains.
pub fn strip_punctuation(t: &Tree) -> Option<Tree> {
    match t {
        Tree::Leaf(tok) if is_punctuation(tok) => None,
        Tree::Leaf(tok) => Some(Tree::Leaf(tok.clone())),
        Tree::Node { label, children } => {
            let kept: Vec<Tree> = children.iter().filter_map(strip_punctuation).collect();
            (!kept.is_empty()).then(|| Tree::Node {
                label: label.clone(),
                children: kept,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> Tree {
        s.parse().unwrap()
    }

    #[test]
    fn reads_bracketed_tree_and_drops_preterminals() {
        assert_eq!(
            t("(X (A a) (B b))"),
            Tree::node(Some("X"), vec![Tree::leaf("a"), Tree::leaf("b")])
        );
        assert_eq!(
            t("(S (NP (DT the) (NN cat)) (VP (VBD sat)))"),
            Tree::node(
                Some("S"),
                vec![
                    Tree::node(Some("NP"), vec![Tree::leaf("the"), Tree::leaf("cat")]),
                    Tree::node(Some("VP"), vec![Tree::leaf("sat")]),
                ]
            )
        );
    }

    #[test]
    fn unary_chain_kept_until_binarize() {
        assert_eq!(
            t("(X (A a))"),
            Tree::node(Some("X"), vec![Tree::leaf("a")])
        );
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        match read_trees("((A a) (B b)") {
            Err(Error::Parse { line: 1, .. }) => {}
            other => panic!("expected parse error on line 1, got {other:?}"),
        }
        match read_trees("(X a b)\n\n(X a))") {
            Err(Error::Parse { line: 3, .. }) => {}
            other => panic!("expected parse error on line 3, got {other:?}"),
        }
        assert!(matches!(read_trees("(X ())"), Err(Error::Parse { .. })));
        assert!(matches!(read_trees("()"), Err(Error::Parse { .. })));
        assert!(matches!(read_trees("\n\n"), Err(Error::Empty(_))));
    }

    #[test]
    fn binarize_right_branches_wide_nodes() {
        let got = binarize(&t("(X a b c)"), Direction::Right);
        let want = Tree::node(
            Some("X"),
            vec![
                Tree::leaf("a"),
                Tree::node(Some("X|"), vec![Tree::leaf("b"), Tree::leaf("c")]),
            ],
        );
        assert_eq!(got, want);

        let got = binarize(&t("(X a b c d)"), Direction::Left);
        assert_eq!(got.to_string(), "(X (X| (X| a b) c) d)");
    }

    #[test]
    fn binarize_identity_on_binary() {
        let tree = t("(S (NP a b) (VP c (PP d e)))");
        assert!(tree.is_binary());
        assert_eq!(binarize(&tree, Direction::Right), tree);
    }

    #[test]
    fn binarize_collapses_unary_chains() {
        let x = Tree::node(
            Some("X"),
            vec![Tree::node(Some("Y"), vec![Tree::leaf("a")])],
        );
        assert_eq!(binarize(&x, Direction::Right), Tree::leaf("a"));

        let x = Tree::node(
            Some("A"),
            vec![Tree::node(Some("B"), vec![Tree::leaf("p"), Tree::leaf("q")])],
        );
        assert_eq!(binarize(&x, Direction::Right).to_string(), "(A p q)");
    }

    #[test]
    fn stats_of_small_trees() {
        assert_eq!(tree_stats(&Tree::leaf("a")), TreeStats { length: 1, depth: 0 });
        assert_eq!(tree_stats(&t("(X a b)")), TreeStats { length: 2, depth: 1 });
        assert_eq!(
            tree_stats(&t("(_ (_ (_ a b) (_ c d)) (_ (_ e f) (_ g h)))")),
            TreeStats { length: 8, depth: 3 }
        );
    }

    #[test]
    fn writer_round_trips_awkward_shapes() {
        let cases = [
            Tree::leaf("a"),
            Tree::node(Some("X"), vec![Tree::leaf("a")]),
            Tree::node(None, vec![Tree::leaf("a"), Tree::leaf("b"), Tree::leaf("c")]),
            Tree::pair(Tree::pair(Tree::leaf("a"), Tree::leaf("b")), Tree::leaf("c")),
        ];
        for c in cases {
            assert_eq!(t(&c.to_string()), c, "round trip of {c}");
        }
    }

    #[test]
    fn empty_treebank_cannot_be_written() {
        let tb = Treebank {
            sentences: vec![],
            source: "x".into(),
        };
        assert!(write_trees(&tb).is_err());
    }

    #[test]
    fn strips_punctuation_leaves() {
        let s = strip_punctuation(&t("(S (NP a b) (, ,) (VP c (-LRB- -LRB-) d) (. .))")).unwrap();
        assert_eq!(binarize(&s, Direction::Right), t("(S (NP a b) (VP c d))"));
        assert_eq!(strip_punctuation(&t("(S (. .) (, ,))")), None);
        assert!(is_punctuation("``") && is_punctuation("--") && !is_punctuation("U.S."));
    }
}
