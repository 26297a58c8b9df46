//! Constituency parsing with syntactic distances.
//!
//! * [`treebank`]: bracketed tree I/O, binarization, synthetic treebanks.
//! * [`distance`]: tree ⇄ distance conversions and top-down decoding.
//! * [`metrics`]: bracket F1, ensemble agreement and length breakdowns.
//! * [`predictor`]: the convolutional distance predictor and its training.
//! * [`selftrain`]: consensus filtering of ensemble parses and retraining.
//! * [`cli`]: the `distparse` command line.
//!
//! ```
//! use distparse::distance::{dl_to_tree, tree_to_dl, TiePolicy};
//! use distparse::treebank::Tree;
//!
//! let tree: Tree = "(S (NP the cat) (VP sat down))".parse().unwrap();
//! let dl = tree_to_dl(&tree, 100).unwrap();
//! assert_eq!(dl.0, vec![1.0, 99.0, 100.0, 99.0]);
//! let back = dl_to_tree(&dl.0, &tree.tokens(), TiePolicy::Leftmost).unwrap();
//! assert_eq!(back, tree.strip_labels());
//! ```

pub mod cli;
pub mod distance;
mod error;
pub mod metrics;
pub mod predictor;
pub mod selftrain;
pub mod treebank;

pub use error::{Error, Result};

// Compile the guide's code blocks as doctests so the book cannot drift from
// the API.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/trees.md")]
    mod trees {}
    #[doc = include_str!("../../../book/src/distances.md")]
    mod distances {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/predictor.md")]
    mod predictor {}
    #[doc = include_str!("../../../book/src/self-training.md")]
    mod self_training {}
}
